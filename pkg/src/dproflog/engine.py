"""SLD resolution over the leftmost atom.

Provides candidate successor enumeration (the support of the transition
softmax), deterministic reduction of arithmetic evaluables, bounded
depth-first derivation enumeration (the brute-force oracle used across the
test suite), and derivation/success probabilities.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .logic import (
    Atom,
    Clause,
    FALSE_GOAL,
    FreshVars,
    Goal,
    Program,
    Struct,
    Subst,
    SymbolTable,
    Term,
    TRUE_GOAL,
    Var,
    const_int_value,
    int_const,
    rename_apart,
    unify,
)

BUILTIN_CLAUSE_ID = -1
FALSE_CLAUSE_ID = -2


class EvalError(ValueError):
    """Ill-typed or insufficiently instantiated arithmetic."""


class ResourceLimitError(RuntimeError):
    """Enumeration exceeded its derivation cap."""


class UndefinedTransitionError(ValueError):
    """A derivation step is not in the candidate set of its goal."""


def eval_arith(term: Term, symbols: SymbolTable) -> int:
    value = const_int_value(symbols, term)
    if value is not None:
        return value
    if isinstance(term, Struct) and len(term.args) == 2:
        name = symbols.name(term.functor)
        if name in ("+", "-", "*", "//", "mod"):
            a = eval_arith(term.args[0], symbols)
            b = eval_arith(term.args[1], symbols)
            if name == "+":
                return a + b
            if name == "-":
                return a - b
            if name == "*":
                return a * b
            if b == 0:
                raise EvalError("division by zero")
            return a // b if name == "//" else a % b
    raise EvalError(f"cannot evaluate term as integer arithmetic: {term!r}")


def _reduce_builtin(atom: Atom, symbols: SymbolTable) -> Optional[Subst]:
    """Deterministic reduction of an evaluable atom.

    Returns the binding substitution on success (empty for pure checks),
    None when the check fails, and raises EvalError on ill-typed input.
    """
    name = symbols.name(atom.pred)
    if name == "is" and len(atom.args) == 2:
        value = eval_arith(atom.args[1], symbols)
        lhs = atom.args[0]
        if isinstance(lhs, Var):
            return Subst({lhs.idx: int_const(symbols, value)})
        got = const_int_value(symbols, lhs)
        if got is None:
            raise EvalError(f"'is' result position must be a variable or integer")
        return Subst() if got == value else None
    if name in ("=:=", "=\\=", "<", ">", "=<", ">=") and len(atom.args) == 2:
        a = eval_arith(atom.args[0], symbols)
        b = eval_arith(atom.args[1], symbols)
        ok = {
            "=:=": a == b,
            "=\\=": a != b,
            "<": a < b,
            ">": a > b,
            "=<": a <= b,
            ">=": a >= b,
        }[name]
        return Subst() if ok else None
    if name == "between" and len(atom.args) == 3:
        lo = eval_arith(atom.args[0], symbols)
        hi = eval_arith(atom.args[1], symbols)
        x = eval_arith(atom.args[2], symbols)  # check-only; unbound raises
        return Subst() if lo <= x <= hi else None
    return _not_builtin()


def _not_builtin():
    raise AssertionError("atom is not an evaluable predicate")


def is_evaluable(atom: Atom, symbols: SymbolTable) -> bool:
    name = symbols.name(atom.pred)
    return (name, len(atom.args)) in {
        ("is", 2), ("=:=", 2), ("=\\=", 2), ("<", 2), (">", 2), ("=<", 2), (">=", 2),
        ("between", 3),
    }


@dataclass(frozen=True)
class Candidate:
    clause_id: int
    theta: Subst
    next_goal: Goal


@dataclass(frozen=True)
class CandidateSet:
    """Ordered clause candidates for a goal, optionally closed by False.

    Ordering is ascending clause id. When `deterministic` is set the single
    entry is an evaluable reduction taken with probability 1 and excluded
    from the softmax support.
    """

    goal: Goal
    entries: tuple[Candidate, ...]
    include_false: bool
    deterministic: bool = False

    @property
    def support_size(self) -> int:
        return len(self.entries) + (1 if self.include_false else 0)

    def support_goals(self) -> list[Goal]:
        goals = [c.next_goal for c in self.entries]
        if self.include_false:
            goals.append(FALSE_GOAL)
        return goals

    def false_index(self) -> Optional[int]:
        return len(self.entries) if self.include_false else None


def resolve_step(goal: Goal, clause: Clause, theta: Subst) -> Goal:
    """res(G, C, theta): replace the leftmost atom by the clause body, apply
    theta to everything, and re-canonicalize.

    `theta` must be expressed over the goal's canonical variables and the
    clause's variables renamed from base `goal.var_count` (the convention
    used by candidate generation); violating that is a programming error.
    """
    if goal.is_terminal:
        raise ValueError("cannot resolve a terminal goal")
    renamed = rename_apart(clause, FreshVars(goal.var_count))
    leftmost = goal.atoms[0]
    if theta.apply_atom(renamed.head) != theta.apply_atom(leftmost):
        raise ValueError("theta does not unify the clause head with the leftmost atom")
    atoms = tuple(theta.apply_atom(a) for a in (*renamed.body, *goal.atoms[1:]))
    return Goal.make(atoms)


def candidate_next_goals(goal: Goal, program: Program, include_false: bool = True) -> CandidateSet:
    """All one-step successors of `goal` by resolving its leftmost atom.

    Evaluable leftmost atoms yield exactly one deterministic candidate (or
    none, leaving only False); evaluation errors count as zero candidates.
    """
    if goal.is_terminal:
        raise ValueError("candidate enumeration needs a non-terminal goal")
    leftmost = goal.atoms[0]
    rest = goal.atoms[1:]
    symbols = program.symbols
    if is_evaluable(leftmost, symbols):
        try:
            theta = _reduce_builtin(leftmost, symbols)
        except EvalError:
            theta = None
        if theta is None:
            return CandidateSet(goal, (), include_false)
        next_goal = Goal.make(theta.apply_atom(a) for a in rest)
        return CandidateSet(goal, (Candidate(BUILTIN_CLAUSE_ID, theta, next_goal),),
                            include_false=False, deterministic=True)
    entries = []
    for cid in program.clauses_for(leftmost.pred):
        clause = program.clauses[cid]
        renamed = rename_apart(clause, FreshVars(goal.var_count))
        theta = unify(leftmost, renamed.head, occurs_check=program.occurs_check)
        if theta is None:
            continue
        atoms = tuple(theta.apply_atom(a) for a in (*renamed.body, *rest))
        entries.append(Candidate(cid, theta, Goal.make(atoms)))
    return CandidateSet(goal, tuple(entries), include_false)


def legal_candidates(goal: Goal, visited: frozenset[Goal], program: Program,
                     include_false: bool = True, use_memory: bool = True) -> CandidateSet:
    """Candidate set with the visited-goal memory rule applied.

    Candidates leading back to an already-visited goal are dropped; the
    False action survives unconditionally.
    """
    cands = candidate_next_goals(goal, program, include_false)
    if not use_memory or cands.deterministic:
        if use_memory and cands.deterministic and cands.entries[0].next_goal in visited:
            return CandidateSet(goal, (), include_false)
        return cands
    kept = tuple(c for c in cands.entries if c.next_goal not in visited)
    if len(kept) == len(cands.entries):
        return cands
    return CandidateSet(goal, kept, cands.include_false)


class TransitionModel(Protocol):
    """Probability distribution over a candidate set's support (False last)."""

    def probabilities(self, cands: CandidateSet) -> np.ndarray: ...


class UniformModel:
    """Uniform mass over the support; deterministic sets get probability 1."""

    def probabilities(self, cands: CandidateSet) -> np.ndarray:
        n = cands.support_size
        if n == 0:
            return np.zeros(0)
        if cands.deterministic:
            return np.ones(1)
        return np.full(n, 1.0 / n)


@dataclass(frozen=True)
class ResolutionStep:
    goal: Goal
    clause_id: int  # BUILTIN_CLAUSE_ID or FALSE_CLAUSE_ID for synthetic steps
    theta: Subst
    next_goal: Goal
    prob: Optional[float] = None


OUTCOME_TRUE = "True"
OUTCOME_FALSE = "False"
OUTCOME_DEPTH = "DepthExceeded"


@dataclass(frozen=True)
class Derivation:
    steps: tuple[ResolutionStep, ...]
    outcome: str

    @property
    def successful(self) -> bool:
        return self.outcome == OUTCOME_TRUE

    def final_goal(self) -> Goal:
        return self.steps[-1].next_goal if self.steps else TRUE_GOAL


@dataclass
class EnumerationOptions:
    include_false: bool = True
    use_memory: bool = True
    max_derivations: int = 10 ** 6


def enumerate_derivations(query: Goal, program: Program, max_depth: int,
                          opts: Optional[EnumerationOptions] = None) -> list[Derivation]:
    """Depth-first, clause-id-ordered enumeration of all derivations.

    Derivations that still hold a non-terminal goal at `max_depth` steps are
    tagged DepthExceeded. This is the brute-force oracle the rest of the
    system is validated against; it never memoizes.
    """
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    opts = opts or EnumerationOptions()
    out: list[Derivation] = []

    def emit(derivation: Derivation) -> None:
        out.append(derivation)
        if len(out) > opts.max_derivations:
            raise ResourceLimitError(
                f"more than {opts.max_derivations} derivations; raise the cap to proceed"
            )

    def walk(goal: Goal, visited: frozenset[Goal], depth: int,
             steps: tuple[ResolutionStep, ...]) -> None:
        if goal.is_true:
            emit(Derivation(steps, OUTCOME_TRUE))
            return
        if goal.is_false:
            emit(Derivation(steps, OUTCOME_FALSE))
            return
        if depth >= max_depth:
            emit(Derivation(steps, OUTCOME_DEPTH))
            return
        cands = legal_candidates(goal, visited, program,
                                 include_false=opts.include_false,
                                 use_memory=opts.use_memory)
        if cands.support_size == 0:
            emit(Derivation(steps, OUTCOME_FALSE))
            return
        for cand in cands.entries:
            step = ResolutionStep(goal, cand.clause_id, cand.theta, cand.next_goal)
            walk(cand.next_goal, visited | {cand.next_goal}, depth + 1, steps + (step,))
        if cands.include_false:
            step = ResolutionStep(goal, FALSE_CLAUSE_ID, Subst(), FALSE_GOAL)
            emit(Derivation(steps + (step,), OUTCOME_FALSE))

    if query.is_true:
        return [Derivation((), OUTCOME_TRUE)]
    if query.is_false:
        return [Derivation((), OUTCOME_FALSE)]
    walk(query, frozenset((query,)), 0, ())
    return out


def derivation_probability(derivation: Derivation, program: Program,
                           model: TransitionModel,
                           opts: Optional[EnumerationOptions] = None) -> float:
    """Product of per-step transition probabilities under `model`."""
    opts = opts or EnumerationOptions()
    prob = 1.0
    visited: frozenset[Goal] = frozenset()
    for k, step in enumerate(derivation.steps):
        if k == 0:
            visited = frozenset((step.goal,))
        cands = legal_candidates(step.goal, visited, program,
                                 include_false=opts.include_false,
                                 use_memory=opts.use_memory)
        probs = model.probabilities(cands)
        if step.clause_id == FALSE_CLAUSE_ID:
            idx = cands.false_index()
            if idx is None:
                raise UndefinedTransitionError("False action outside the candidate set")
        else:
            idx = next((i for i, c in enumerate(cands.entries)
                        if c.clause_id == step.clause_id and c.next_goal == step.next_goal),
                       None)
            if idx is None:
                raise UndefinedTransitionError(
                    f"step via clause {step.clause_id} not in the candidate set"
                )
        prob *= float(probs[idx])
        visited = visited | {step.next_goal}
    return prob


def success_probability_bruteforce(query: Goal, program: Program, model: TransitionModel,
                                   max_depth: int,
                                   opts: Optional[EnumerationOptions] = None) -> float:
    """Def-by-enumeration success probability: sum over successful derivations."""
    opts = opts or EnumerationOptions()
    total = 0.0
    for d in enumerate_derivations(query, program, max_depth, opts):
        if d.successful:
            total += derivation_probability(d, program, model, opts)
    return total
