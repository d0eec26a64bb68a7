"""Symbolic core: terms, atoms, clauses, substitutions, goals, programs.

Everything here is an immutable value after construction, with one
exception: `SymbolTable` is an append-only intern pool shared by a
program and its queries, so arithmetic evaluation may intern fresh
number symbols mid-derivation without copying the program.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Optional


class SymbolTable:
    """Append-only bidirectional mapping between symbol names and dense ids."""

    def __init__(self) -> None:
        self._names: list[str] = []
        self._ids: dict[str, int] = {}

    def intern(self, name: str) -> int:
        sym = self._ids.get(name)
        if sym is None:
            sym = len(self._names)
            self._names.append(name)
            self._ids[name] = sym
        return sym

    def lookup(self, name: str) -> Optional[int]:
        return self._ids.get(name)

    def name(self, sym: int) -> str:
        return self._names[sym]

    def __len__(self) -> int:
        return len(self._names)

    def names(self) -> tuple[str, ...]:
        return tuple(self._names)


class Term:
    """Base class for terms; concrete kinds are Const, Var, Struct, Payload."""

    __slots__ = ()


@dataclass(frozen=True, slots=True)
class Const(Term):
    sym: int


@dataclass(frozen=True, slots=True)
class Var(Term):
    idx: int


@dataclass(frozen=True, slots=True)
class Struct(Term):
    functor: int
    args: tuple[Term, ...]


@dataclass(frozen=True, slots=True)
class Payload(Term):
    """Opaque reference into a feature store; unifies only with variables
    or with an identical reference."""

    ref: str


@dataclass(frozen=True, slots=True)
class Atom:
    pred: int
    args: tuple[Term, ...]


@dataclass(frozen=True, slots=True)
class Clause:
    id: int
    head: Atom
    body: tuple[Atom, ...]

    @property
    def is_fact(self) -> bool:
        return not self.body


def int_const(symbols: SymbolTable, value: int) -> Const:
    """Integers are ordinary constants whose name is the decimal string."""
    return Const(symbols.intern(str(value)))


def const_int_value(symbols: SymbolTable, term: Term) -> Optional[int]:
    if not isinstance(term, Const):
        return None
    name = symbols.name(term.sym)
    if name and (name.isdigit() or (name[0] == "-" and name[1:].isdigit())):
        return int(name)
    return None


def term_vars(term: Term, out: Optional[list[int]] = None) -> list[int]:
    """Variable indices in first-occurrence order."""
    if out is None:
        out = []
    if isinstance(term, Var):
        if term.idx not in out:
            out.append(term.idx)
    elif isinstance(term, Struct):
        for a in term.args:
            term_vars(a, out)
    return out


def atom_vars(atom: Atom, out: Optional[list[int]] = None) -> list[int]:
    if out is None:
        out = []
    for t in atom.args:
        term_vars(t, out)
    return out


class Subst:
    """Idempotent mapping from variable indices to terms.

    Treated as immutable: `compose` and friends return fresh objects.
    """

    __slots__ = ("_b",)

    def __init__(self, bindings: Optional[dict[int, Term]] = None) -> None:
        self._b = dict(bindings) if bindings else {}

    def __len__(self) -> int:
        return len(self._b)

    def __bool__(self) -> bool:
        return bool(self._b)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Subst) and self._b == other._b

    def __hash__(self) -> int:
        return hash(frozenset(self._b.items()))

    def __repr__(self) -> str:
        inner = ", ".join(f"V{v}/{t!r}" for v, t in sorted(self._b.items()))
        return "{" + inner + "}"

    def items(self) -> Iterator[tuple[int, Term]]:
        return iter(self._b.items())

    def lookup(self, idx: int) -> Optional[Term]:
        return self._b.get(idx)

    def apply_term(self, term: Term) -> Term:
        if isinstance(term, Var):
            bound = self._b.get(term.idx)
            return term if bound is None else bound
        if isinstance(term, Struct):
            new_args = tuple(self.apply_term(a) for a in term.args)
            return term if new_args == term.args else Struct(term.functor, new_args)
        return term

    def apply_atom(self, atom: Atom) -> Atom:
        new_args = tuple(self.apply_term(a) for a in atom.args)
        return atom if new_args == atom.args else Atom(atom.pred, new_args)

    def compose(self, other: "Subst") -> "Subst":
        """Substitution such that applying it equals applying self, then other."""
        out: dict[int, Term] = {}
        for v, t in self._b.items():
            t2 = other.apply_term(t)
            if not (isinstance(t2, Var) and t2.idx == v):
                out[v] = t2
        for v, t in other._b.items():
            if v not in self._b:
                out[v] = t
        return Subst(out)


EMPTY_SUBST = Subst()


def apply_subst(target, theta: Subst):
    """Apply a substitution to an Atom or a Goal (goals re-canonicalize)."""
    if isinstance(target, Atom):
        return theta.apply_atom(target)
    if isinstance(target, Goal):
        if target.is_terminal:
            return target
        return Goal.make(theta.apply_atom(a) for a in target.atoms)
    raise TypeError(f"cannot apply a substitution to {type(target).__name__}")


class UnificationCycleError(RuntimeError):
    """Raised when a cyclic binding materializes with the occurs check disabled."""


def _walk(term: Term, bindings: dict[int, Term]) -> Term:
    while isinstance(term, Var):
        nxt = bindings.get(term.idx)
        if nxt is None:
            return term
        term = nxt
    return term


def _occurs(idx: int, term: Term, bindings: dict[int, Term]) -> bool:
    term = _walk(term, bindings)
    if isinstance(term, Var):
        return term.idx == idx
    if isinstance(term, Struct):
        return any(_occurs(idx, a, bindings) for a in term.args)
    return False


def _unify_terms(t1: Term, t2: Term, bindings: dict[int, Term], occurs_check: bool) -> bool:
    t1 = _walk(t1, bindings)
    t2 = _walk(t2, bindings)
    if isinstance(t1, Var):
        if isinstance(t2, Var) and t2.idx == t1.idx:
            return True
        if occurs_check and _occurs(t1.idx, t2, bindings):
            return False
        bindings[t1.idx] = t2
        return True
    if isinstance(t2, Var):
        if occurs_check and _occurs(t2.idx, t1, bindings):
            return False
        bindings[t2.idx] = t1
        return True
    if isinstance(t1, Const) and isinstance(t2, Const):
        return t1.sym == t2.sym
    if isinstance(t1, Payload) and isinstance(t2, Payload):
        return t1.ref == t2.ref
    if isinstance(t1, Struct) and isinstance(t2, Struct):
        if t1.functor != t2.functor or len(t1.args) != len(t2.args):
            return False
        return all(_unify_terms(a, b, bindings, occurs_check) for a, b in zip(t1.args, t2.args))
    return False


def _resolve_bindings(bindings: dict[int, Term]) -> dict[int, Term]:
    """Turn a triangular binding set into an idempotent one."""
    memo: dict[int, Term] = {}
    in_progress: set[int] = set()

    def res_var(idx: int) -> Term:
        if idx in memo:
            return memo[idx]
        if idx in in_progress:
            raise UnificationCycleError(
                f"cyclic binding through V{idx}; enable the occurs check to reject it"
            )
        in_progress.add(idx)
        out = res_term(bindings[idx])
        in_progress.discard(idx)
        memo[idx] = out
        return out

    def res_term(term: Term) -> Term:
        if isinstance(term, Var):
            return res_var(term.idx) if term.idx in bindings else term
        if isinstance(term, Struct):
            return Struct(term.functor, tuple(res_term(a) for a in term.args))
        return term

    out: dict[int, Term] = {}
    for v in bindings:
        t = res_var(v)
        if not (isinstance(t, Var) and t.idx == v):
            out[v] = t
    return out


def unify(a1: Atom, a2: Atom, occurs_check: bool = False) -> Optional[Subst]:
    """Most general unifier of two atoms, or None on clash."""
    if a1.pred != a2.pred or len(a1.args) != len(a2.args):
        return None
    bindings: dict[int, Term] = {}
    for x, y in zip(a1.args, a2.args):
        if not _unify_terms(x, y, bindings, occurs_check):
            return None
    return Subst(_resolve_bindings(bindings))


class Goal:
    """An ordered atom sequence in canonical variable form, or the False terminal.

    Canonical form renumbers variables 0,1,2,... by first occurrence left to
    right, so structurally equal goals hash equal regardless of the variable
    names they arrived with.
    """

    __slots__ = ("atoms", "var_count", "_hash")

    atoms: Optional[tuple[Atom, ...]]  # None encodes the False terminal

    def __init__(self, atoms: Optional[tuple[Atom, ...]], var_count: int) -> None:
        self.atoms = atoms
        self.var_count = var_count
        self._hash = hash(atoms)

    @staticmethod
    def make(atoms: Iterable[Atom]) -> "Goal":
        atoms = tuple(atoms)
        mapping: dict[int, int] = {}

        def canon_term(t: Term) -> Term:
            if isinstance(t, Var):
                slot = mapping.get(t.idx)
                if slot is None:
                    slot = len(mapping)
                    mapping[t.idx] = slot
                return t if t.idx == slot else Var(slot)
            if isinstance(t, Struct):
                new = tuple(canon_term(a) for a in t.args)
                return t if new == t.args else Struct(t.functor, new)
            return t

        canon = tuple(Atom(a.pred, tuple(canon_term(t) for t in a.args)) for a in atoms)
        return Goal(canon, len(mapping))

    @property
    def is_false(self) -> bool:
        return self.atoms is None

    @property
    def is_true(self) -> bool:
        return self.atoms == ()

    @property
    def is_terminal(self) -> bool:
        return self.atoms is None or self.atoms == ()

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Goal) and self.atoms == other.atoms

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        if self.is_false:
            return "Goal<False>"
        if self.is_true:
            return "Goal<True>"
        return f"Goal<{len(self.atoms)} atoms>"


TRUE_GOAL = Goal((), 0)
FALSE_GOAL = Goal(None, 0)


class FreshVars:
    """Monotone variable-index source, owned by a single derivation step."""

    __slots__ = ("next",)

    def __init__(self, start: int) -> None:
        self.next = start

    def take(self) -> int:
        idx = self.next
        self.next += 1
        return idx


def rename_apart(clause: Clause, counter: FreshVars) -> Clause:
    """Copy of `clause` whose variables are fresh per `counter`; id preserved."""
    mapping: dict[int, int] = {}

    def ren_term(t: Term) -> Term:
        if isinstance(t, Var):
            idx = mapping.get(t.idx)
            if idx is None:
                idx = counter.take()
                mapping[t.idx] = idx
            return Var(idx)
        if isinstance(t, Struct):
            return Struct(t.functor, tuple(ren_term(a) for a in t.args))
        return t

    def ren_atom(a: Atom) -> Atom:
        return Atom(a.pred, tuple(ren_term(t) for t in a.args))

    head = ren_atom(clause.head)
    body = tuple(ren_atom(a) for a in clause.body)
    if not mapping:
        return clause
    return Clause(clause.id, head, body)


class Program:
    """Definite logic program: clauses with dense ids plus a per-predicate index.

    `occurs_check` makes every unification during resolution reject cyclic
    bindings; off by default, matching usual prover practice.
    """

    __slots__ = ("clauses", "symbols", "pred_arity", "functor_arity", "_index",
                 "max_arity", "occurs_check")

    def __init__(self, clauses: Iterable[Clause], symbols: SymbolTable,
                 pred_arity: Optional[dict[int, int]] = None,
                 functor_arity: Optional[dict[int, int]] = None,
                 occurs_check: bool = False) -> None:
        self.clauses = tuple(clauses)
        self.symbols = symbols
        self.occurs_check = occurs_check
        self.pred_arity = dict(pred_arity) if pred_arity else {}
        self.functor_arity = dict(functor_arity) if functor_arity else {}
        index: dict[int, list[int]] = {}
        max_arity = 0
        for i, c in enumerate(self.clauses):
            if c.id != i:
                raise ValueError(f"clause ids must be dense in order; got {c.id} at {i}")
            index.setdefault(c.head.pred, []).append(c.id)
            for a in (c.head, *c.body):
                max_arity = max(max_arity, len(a.args))
                self.pred_arity.setdefault(a.pred, len(a.args))
        self._index = {p: tuple(ids) for p, ids in index.items()}
        self.max_arity = max_arity

    def clauses_for(self, pred: int) -> tuple[int, ...]:
        return self._index.get(pred, ())

    def index_items(self) -> Iterator[tuple[int, tuple[int, ...]]]:
        return iter(self._index.items())

    def __len__(self) -> int:
        return len(self.clauses)


def _term_signature(t: Term, symbols: SymbolTable):
    if isinstance(t, Const):
        return ("c", symbols.name(t.sym))
    if isinstance(t, Var):
        return ("v", t.idx)
    if isinstance(t, Payload):
        return ("p", t.ref)
    assert isinstance(t, Struct)
    return ("f", symbols.name(t.functor), tuple(_term_signature(a, symbols) for a in t.args))


def atom_signature(a: Atom, symbols: SymbolTable):
    return (symbols.name(a.pred), tuple(_term_signature(t, symbols) for t in a.args))


def programs_equal(p1: Program, p2: Program) -> bool:
    """Structural equality under symbol-name correspondence (ids may differ)."""
    if len(p1) != len(p2):
        return False
    for c1, c2 in zip(p1.clauses, p2.clauses):
        if c1.id != c2.id:
            return False
        if atom_signature(c1.head, p1.symbols) != atom_signature(c2.head, p2.symbols):
            return False
        if len(c1.body) != len(c2.body):
            return False
        for b1, b2 in zip(c1.body, c2.body):
            if atom_signature(b1, p1.symbols) != atom_signature(b2, p2.symbols):
                return False
    return True
