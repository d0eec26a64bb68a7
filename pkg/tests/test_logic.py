import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dproflog import (
    Atom,
    Const,
    Goal,
    Struct,
    Subst,
    SymbolTable,
    Var,
    parse_program,
    parse_query,
    rename_apart,
    unify,
)
from dproflog.logic import (
    EMPTY_SUBST,
    FreshVars,
    UnificationCycleError,
    programs_equal,
)
from dproflog.parser import ArityError, ParseError, program_to_text


def test_parse_two_facts():
    p = parse_program("p(a). p(b).")
    assert len(p.clauses) == 2
    assert all(c.is_fact for c in p.clauses)
    pred = p.symbols.lookup("p")
    assert p.clauses_for(pred) == (0, 1)


def test_program_index_complete(region_program):
    covered = [cid for _pred, ids in region_program.index_items() for cid in ids]
    assert sorted(covered) == list(range(len(region_program.clauses)))


def test_parse_rule_shape():
    p = parse_program("locIn(X,Y) :- neighOf(X,Z), locIn(Z,Y).")
    (c,) = p.clauses
    assert p.symbols.name(c.head.pred) == "locIn"
    assert len(c.head.args) == 2
    assert len(c.body) == 2
    # X is shared between head and first body atom
    assert c.head.args[0] == c.body[0].args[0]


def test_parse_arity_conflict():
    with pytest.raises(ArityError) as err:
        parse_program("p(a, b). p(c).")
    assert "p" in str(err.value)


def test_parse_syntax_error_position():
    with pytest.raises(ParseError) as err:
        parse_program("p(a).\nq(b")
    assert err.value.line == 2


def test_parse_comments_and_integers():
    p = parse_program("% a comment\nf(3). f(-2).")
    assert len(p.clauses) == 2
    names = {p.symbols.name(c.head.args[0].sym) for c in p.clauses}
    assert names == {"3", "-2"}


def test_parse_query_examples(region_program):
    q = parse_query("locIn(it, eu)", region_program)
    assert len(q.atoms) == 1
    assert q.var_count == 0

    empty = parse_query("", region_program)
    assert empty.is_true

    q2 = parse_query("neighOf(it, Y), locIn(Y, eu)", region_program)
    assert len(q2.atoms) == 2
    assert q2.atoms[0].args[1] == q2.atoms[1].args[0] == Var(0)


def test_parse_query_new_predicate_allowed(region_program):
    q = parse_query("unheardOf(it)", region_program)
    assert len(q.atoms) == 1


def test_unify_paper_example():
    symbols = SymbolTable()
    locatedIn = symbols.intern("locatedIn")
    italy, europe = Const(symbols.intern("italy")), Const(symbols.intern("europe"))
    a1 = Atom(locatedIn, (Var(0), europe))
    a2 = Atom(locatedIn, (italy, Var(1)))
    theta = unify(a1, a2)
    assert theta is not None
    assert theta.apply_atom(a1) == theta.apply_atom(a2) == Atom(locatedIn, (italy, europe))
    assert dict(theta.items()) == {0: italy, 1: europe}


def test_unify_identical_and_clash():
    symbols = SymbolTable()
    p, q, a = symbols.intern("p"), symbols.intern("q"), Const(symbols.intern("a"))
    assert unify(Atom(p, (a,)), Atom(p, (a,))) == EMPTY_SUBST
    assert unify(Atom(p, (a,)), Atom(q, (a,))) is None
    assert unify(Atom(p, (a,)), Atom(p, (a, a))) is None


def test_unify_occurs_check():
    symbols = SymbolTable()
    p, f = symbols.intern("p"), symbols.intern("f")
    a1 = Atom(p, (Var(0),))
    a2 = Atom(p, (Struct(f, (Var(0),)),))
    assert unify(a1, a2, occurs_check=True) is None
    with pytest.raises(UnificationCycleError):
        unify(a1, a2)


def test_apply_substitution():
    symbols = SymbolTable()
    located = symbols.intern("locatedIn")
    italy, europe = Const(symbols.intern("italy")), Const(symbols.intern("europe"))
    theta = Subst({0: italy})
    atom = Atom(located, (Var(0), europe))
    assert theta.apply_atom(atom) == Atom(located, (italy, europe))
    assert EMPTY_SUBST.apply_atom(atom) == atom
    f = symbols.intern("f")
    p = symbols.intern("p")
    theta2 = Subst({0: Struct(f, (Var(1),))})
    assert theta2.apply_atom(Atom(p, (Var(0), Var(1)))) == \
        Atom(p, (Struct(f, (Var(1),)), Var(1)))


def test_apply_subst_goal_level(region_program):
    from dproflog.logic import apply_subst

    goal = parse_query("neighOf(it, Y), locIn(Y, eu)", region_program)
    fr = Const(region_program.symbols.intern("fr"))
    bound = apply_subst(goal, Subst({0: fr}))
    assert bound == parse_query("neighOf(it, fr), locIn(fr, eu)", region_program)
    atom = goal.atoms[0]
    assert apply_subst(atom, Subst({0: fr})).args[1] == fr
    with pytest.raises(TypeError):
        apply_subst("not a goal", Subst({}))


def test_mgu_generality_exhaustive_enumeration():
    """Every unifier found by enumerating a small constant pool factors
    through the MGU."""
    import itertools

    from dproflog.logic import atom_vars

    p = parse_program("t(f(X, Y), X, Z). t(f(W, b), Q, Q).")
    a1 = p.clauses[0].head
    a2 = rename_apart(p.clauses[1], FreshVars(10)).head
    mgu = unify(a1, a2)
    assert mgu is not None
    consts = [Const(p.symbols.intern(n)) for n in "ab"]
    variables = atom_vars(a1, atom_vars(a2))
    found = 0
    for values in itertools.product(consts, repeat=len(variables)):
        sigma = Subst(dict(zip(variables, values)))
        if sigma.apply_atom(a1) != sigma.apply_atom(a2):
            continue
        found += 1
        delta = unify(mgu.apply_atom(a1), sigma.apply_atom(a1))
        assert delta is not None
        for v in variables:
            assert delta.apply_term(mgu.apply_term(Var(v))) == sigma.apply_term(Var(v))
    assert found > 0


def test_compose():
    symbols = SymbolTable()
    a = Const(symbols.intern("a"))
    s1 = Subst({0: Var(1)})
    s2 = Subst({1: a})
    composed = s1.compose(s2)
    assert dict(composed.items()) == {0: a, 1: a}
    theta = Subst({0: a})
    assert EMPTY_SUBST.compose(theta) == theta
    assert theta.compose(EMPTY_SUBST) == theta


def test_compose_postcondition_random(rng):
    symbols = SymbolTable()
    consts = [Const(symbols.intern(n)) for n in "abc"]
    f = symbols.intern("f")

    def random_term(depth=0):
        r = rng.random()
        if r < 0.4:
            return consts[rng.integers(3)]
        if r < 0.75 or depth >= 2:
            return Var(int(rng.integers(4)))
        return Struct(f, (random_term(depth + 1),))

    for _ in range(100):
        s1 = Subst({int(v): random_term() for v in rng.integers(0, 4, size=2)})
        s2 = Subst({int(v): random_term() for v in rng.integers(0, 4, size=2)})
        t = random_term()
        assert s1.compose(s2).apply_term(t) == s2.apply_term(s1.apply_term(t))


def test_substitution_idempotent_after_unify():
    p = parse_program("q(f(X, g(Y)), Y). q(f(a, Z), b).")
    clause = p.clauses[0]
    other = rename_apart(p.clauses[1], FreshVars(10))
    theta = unify(clause.head, other.head)
    assert theta is not None
    once = theta.apply_atom(clause.head)
    assert theta.apply_atom(once) == once


def test_rename_apart():
    p = parse_program("p(X) :- q(X).")
    clause = p.clauses[0]
    ctr = FreshVars(100)
    renamed = rename_apart(clause, ctr)
    assert renamed.id == clause.id
    assert renamed.head.args[0] == Var(100)
    assert renamed.body[0].args[0] == Var(100)
    again = rename_apart(clause, ctr)
    assert again.head.args[0] == Var(101)

    fact = parse_program("p(a).").clauses[0]
    assert rename_apart(fact, FreshVars(5)) is fact


def test_goal_canonical_hash_renaming(region_program):
    g1 = parse_query("neighOf(A, B), locIn(B, C)", region_program)
    g2 = parse_query("neighOf(Q, R), locIn(R, S)", region_program)
    assert g1 == g2
    assert hash(g1) == hash(g2)
    g3 = parse_query("neighOf(A, B), locIn(A, C)", region_program)
    assert g1 != g3


def test_goal_terminals():
    assert Goal.make([]).is_true
    from dproflog.logic import FALSE_GOAL, TRUE_GOAL

    assert TRUE_GOAL.is_true and TRUE_GOAL.is_terminal
    assert FALSE_GOAL.is_false and FALSE_GOAL.is_terminal


RECURSIVE_ADDITION_PROGRAM = """\
mnist_addition([], [], [], 0).
mnist_addition([], [], [1], 1).
mnist_addition([HN1 | TN1], [HN2 | TN2], [HSUM | TSUM], CarryIn) :- Sum is HN1 + HN2 + CarryIn, HSUM is Sum mod 10, CarryOut is Sum // 10, mnist_addition(TN1, TN2, TSUM, CarryOut).
"""


def test_parse_print_round_trip():
    for text in (
        "p(a). p(b). q(X) :- p(X).",
        RECURSIVE_ADDITION_PROGRAM,
        "r(f(g(X), 3), [a, b | T]) :- s(X, T), X < 3 + 1.",
    ):
        program = parse_program(text)
        printed = program_to_text(program)
        assert programs_equal(program, parse_program(printed)), printed


@st.composite
def template_atoms(draw):
    """A shared template instantiated two ways, guaranteeing unifiability.

    Each template slot is filled with a term on at most one side; the other
    side keeps a dedicated fresh variable, so an MGU always exists.
    """
    symbols = SymbolTable()
    pred = symbols.intern("r")
    f = symbols.intern("f")
    consts = [Const(symbols.intern(n)) for n in "abc"]

    def instantiate(pool_base, depth):
        kind = draw(st.integers(0, 3 if depth < 2 else 1))
        if kind == 0:
            return consts[draw(st.integers(0, 2))]
        if kind == 1:
            return Var(pool_base + draw(st.integers(0, 3)))
        return Struct(f, (instantiate(pool_base, depth + 1),))

    def template(depth):
        kind = draw(st.integers(0, 2 if depth < 2 else 1))
        if kind == 0:
            return ("slot", draw(st.integers(0, 5)))
        if kind == 1:
            return ("const", draw(st.integers(0, 2)))
        return ("f", template(depth + 1))

    shape = [template(0) for _ in range(draw(st.integers(1, 3)))]
    filler_side = {s: draw(st.sampled_from(["a", "b", "none"])) for s in range(6)}
    fills: dict[tuple[str, int], "object"] = {}

    def realize(node, side, pool_base, slot_base):
        kind = node[0]
        if kind == "const":
            return consts[node[1]]
        if kind == "f":
            return Struct(f, (realize(node[1], side, pool_base, slot_base),))
        slot = node[1]
        if filler_side[slot] == side:
            key = (side, slot)
            if key not in fills:
                fills[key] = instantiate(pool_base, 0)
            return fills[key]
        return Var(slot_base + slot)

    a1 = Atom(pred, tuple(realize(n, "a", 0, 20) for n in shape))
    a2 = Atom(pred, tuple(realize(n, "b", 50, 70) for n in shape))
    return symbols, a1, a2


@settings(max_examples=150, deadline=None)
@given(template_atoms())
def test_mgu_property(case):
    _symbols, a1, a2 = case
    theta = unify(a1, a2)
    assert theta is not None, (a1, a2)
    assert theta.apply_atom(a1) == theta.apply_atom(a2)


@settings(max_examples=60, deadline=None)
@given(template_atoms(), st.integers(0, 2 ** 31 - 1))
def test_mgu_generality(case, seed):
    """Any ground unifier factors through the MGU."""
    symbols, a1, a2 = case
    mgu = unify(a1, a2)
    assert mgu is not None
    consts = [Const(symbols.intern(n)) for n in "abc"]
    rng = np.random.Generator(np.random.PCG64(seed))
    from dproflog.logic import atom_vars

    all_vars = atom_vars(a1, atom_vars(a2))
    sigma = Subst({v: consts[int(rng.integers(3))] for v in all_vars})
    if sigma.apply_atom(a1) != sigma.apply_atom(a2):
        return  # not a unifier; nothing to check
    delta = unify(mgu.apply_atom(a1), sigma.apply_atom(a1))
    assert delta is not None
    for v in all_vars:
        assert delta.apply_term(mgu.apply_term(Var(v))) == sigma.apply_term(Var(v))
