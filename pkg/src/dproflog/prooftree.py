"""Proof-tree construction, export, and replay.

A successful derivation linearizes a proof tree by leftmost expansion; this
module rebuilds the tree, renders it as indented text and as a JSON
document, and replays exported clause sequences through the resolution
engine to revalidate them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

from .engine import (
    BUILTIN_CLAUSE_ID,
    Derivation,
    EnumerationOptions,
    FALSE_CLAUSE_ID,
    ResolutionStep,
    TransitionModel,
    _reduce_builtin,
    candidate_next_goals,
    derivation_probability,
    enumerate_derivations,
    is_evaluable,
    legal_candidates,
)
from .logic import Atom, FreshVars, Goal, Program, Subst, rename_apart, unify
from .parser import atom_to_text


@dataclass
class ProofNode:
    atom_text: str
    clause_id: int  # BUILTIN_CLAUSE_ID for evaluable reductions
    children: list["ProofNode"] = field(default_factory=list)


class _PendingNode:
    __slots__ = ("atom", "clause_id", "children")

    def __init__(self, atom: Atom) -> None:
        self.atom = atom
        self.clause_id: Optional[int] = None
        self.children: list["_PendingNode"] = []


def build_proof_tree(query: Goal, derivation: Derivation, program: Program) -> list[ProofNode]:
    """Rebuild the proof tree of a successful derivation.

    Replays the derivation's clause sequence on the un-canonicalized query
    so bindings discovered later in the proof propagate back into every
    displayed atom.
    """
    if not derivation.successful:
        raise ValueError("only successful derivations export as proof trees")
    if query.is_terminal:
        raise ValueError("terminal queries have no proof tree")
    counter = FreshVars(1_000_000)
    symbols = program.symbols
    roots = [_PendingNode(a) for a in query.atoms]
    all_nodes = roots[:]
    open_list = roots[:]

    def apply_everywhere(theta: Subst) -> None:
        for n in all_nodes:
            n.atom = theta.apply_atom(n.atom)

    for step in derivation.steps:
        if step.clause_id == FALSE_CLAUSE_ID:
            raise ValueError("successful derivations cannot take the False action")
        if not open_list:
            raise ValueError("derivation has more steps than open proof obligations")
        slot = open_list.pop(0)
        if step.clause_id == BUILTIN_CLAUSE_ID:
            theta = _reduce_builtin(slot.atom, symbols)
            if theta is None:
                raise ValueError(f"evaluable atom failed during replay: {slot.atom!r}")
            slot.clause_id = BUILTIN_CLAUSE_ID
            apply_everywhere(theta)
            continue
        clause = rename_apart(program.clauses[step.clause_id], counter)
        theta = unify(slot.atom, clause.head)
        if theta is None:
            raise ValueError(
                f"clause {step.clause_id} does not unify with {slot.atom!r} during replay"
            )
        slot.clause_id = step.clause_id
        slot.children = [_PendingNode(b) for b in clause.body]
        all_nodes.extend(slot.children)
        apply_everywhere(theta)
        open_list[0:0] = slot.children
    if open_list:
        raise ValueError("derivation ended with open proof obligations")

    def finish(p: _PendingNode) -> ProofNode:
        assert p.clause_id is not None
        return ProofNode(atom_to_text(p.atom, symbols), p.clause_id,
                         [finish(c) for c in p.children])

    return [finish(r) for r in roots]


def render_text(roots: list[ProofNode], indent: str = "  ") -> str:
    lines: list[str] = []

    def walk(node: ProofNode, depth: int) -> None:
        if node.clause_id == BUILTIN_CLAUSE_ID:
            label = f"{node.atom_text}   [evaluable]"
        elif node.children:
            label = f"{node.atom_text}   [clause {node.clause_id}]"
        else:
            label = f"{node.atom_text}   [fact {node.clause_id}]"
        lines.append(indent * depth + label)
        for child in node.children:
            walk(child, depth + 1)

    for root in roots:
        walk(root, 0)
    return "\n".join(lines) + "\n"


def to_document(roots: list[ProofNode]) -> str:
    def as_dict(node: ProofNode) -> dict:
        return {
            "atom": node.atom_text,
            "clause": node.clause_id,
            "children": [as_dict(c) for c in node.children],
        }

    return json.dumps({"proof": [as_dict(r) for r in roots]}, indent=2)


def from_document(text: str) -> list[ProofNode]:
    def from_dict(d: dict) -> ProofNode:
        return ProofNode(d["atom"], d["clause"], [from_dict(c) for c in d["children"]])

    payload = json.loads(text)
    return [from_dict(d) for d in payload["proof"]]


def clause_sequence(roots: list[ProofNode]) -> list[int]:
    """Preorder clause ids: exactly the derivation's leftmost expansion order."""
    out: list[int] = []

    def walk(node: ProofNode) -> None:
        out.append(node.clause_id)
        for child in node.children:
            walk(child)

    for root in roots:
        walk(root)
    return out


def replay_clause_sequence(query: Goal, program: Program, clause_ids: list[int]) -> Goal:
    """Re-execute a clause-id sequence through resolution; returns the final goal."""
    goal = query
    symbols = program.symbols
    for cid in clause_ids:
        if goal.is_terminal:
            raise ValueError("sequence continues past a terminal goal")
        leftmost = goal.atoms[0]
        if cid == BUILTIN_CLAUSE_ID:
            if not is_evaluable(leftmost, symbols):
                raise ValueError("evaluable step recorded at a non-evaluable atom")
            theta = _reduce_builtin(leftmost, symbols)
            if theta is None:
                raise ValueError("evaluable step failed during replay")
            goal = Goal.make(theta.apply_atom(a) for a in goal.atoms[1:])
            continue
        cands = candidate_next_goals(goal, program, include_false=False)
        match = next((c for c in cands.entries if c.clause_id == cid), None)
        if match is None:
            raise ValueError(f"clause {cid} not applicable during replay")
        goal = match.next_goal
    return goal


def find_best_proof(query: Goal, program: Program, model: TransitionModel,
                    max_depth: int, beam_width: int = 8,
                    exhaustive_fallback: bool = True) -> Optional[Derivation]:
    """Highest-probability successful derivation via beam search over the policy.

    Falls back to exhaustive enumeration (same depth bound) when the beam
    misses every proof but one might exist.
    """
    counter = 0
    frontier: list = [(0.0, counter, query, frozenset((query,)), ())]
    best: Optional[tuple[float, Derivation]] = None
    for _depth in range(max_depth):
        expansions: list = []
        for neg_lp, _tb, goal, visited, steps in frontier:
            cands = legal_candidates(goal, visited, program, include_false=True)
            if cands.support_size == 0:
                continue
            probs = model.probabilities(cands)
            for k, cand in enumerate(cands.entries):
                p = float(probs[k])
                if p <= 0.0:
                    continue
                counter += 1
                step = ResolutionStep(goal, cand.clause_id, cand.theta, cand.next_goal, p)
                item = (neg_lp - math.log(p), counter, cand.next_goal,
                        visited | {cand.next_goal}, steps + (step,))
                if cand.next_goal.is_true:
                    score = -item[0]
                    if best is None or score > best[0]:
                        best = (score, Derivation(item[4], "True"))
                elif not cand.next_goal.is_false:
                    expansions.append(item)
        expansions.sort(key=lambda it: (it[0], it[1]))
        frontier = expansions[:beam_width]
        if not frontier:
            break
    if best is not None:
        return best[1]
    if exhaustive_fallback:
        opts = EnumerationOptions(include_false=True, use_memory=True)
        succ = [d for d in enumerate_derivations(query, program, max_depth, opts) if d.successful]
        if succ:
            return max(succ, key=lambda d: derivation_probability(d, program, model, opts))
    return None
