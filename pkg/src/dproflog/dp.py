"""Exact inference and training over the proof-space MDP.

The value of a non-terminal goal is the policy-weighted sum of its
successors' values, with boundary values +1/-1 at True (by query label) and
0 at False or at the depth cutoff. Success probabilities and their exact
parameter gradients come from one forward pass over the memoized goal graph
plus one reverse (adjoint) sweep.

Digit-sequence addition bypasses the generic goal graph: the probability
that two latent digit sequences sum to a target is computed position-wise
with carry-state tables, linear in the sequence length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import (
    CandidateSet,
    TransitionModel,
    candidate_next_goals,
    legal_candidates,
)
from .logic import Goal, Program
from .optim import check_finite
from .scorer import GoalEmbedder


class GoalSpaceError(RuntimeError):
    def __init__(self, n_states: int) -> None:
        super().__init__(
            f"reachable goal space exceeded {n_states} states; "
            "exact DP is intractable here - use the policy-gradient trainer instead"
        )


@dataclass
class DpOptions:
    include_false: bool = True
    use_memory: bool = True
    max_states: int = 10 ** 6


class ScorerModel:
    """TransitionModel backed by the learned goal scorer."""

    def __init__(self, embedder: GoalEmbedder) -> None:
        self.embedder = embedder

    def probabilities(self, cands: CandidateSet) -> np.ndarray:
        return self.embedder.transition_distribution(cands.goal, cands).probs

    def weighted_grad(self, cands: CandidateSet, coeffs: np.ndarray,
                      grads: dict[str, np.ndarray], scale: float) -> None:
        self.embedder.distribution_weighted_grad(cands.goal, cands, coeffs, grads, scale)


@dataclass
class _Node:
    cands: CandidateSet
    probs: np.ndarray
    child_keys: list
    child_values: np.ndarray
    value: float = 0.0


@dataclass
class ValueGraph:
    """Memoized goal graph for one query: success mass plus per-node data."""

    root_key: object
    nodes: dict
    order: list  # post-order; children precede parents
    mode: str  # 'depth' or 'fingerprint' memoization keys

    @property
    def n_states(self) -> int:
        return len(self.nodes)

    def success_mass(self) -> float:
        if self.root_key is None:
            return 1.0  # query already True
        return self.nodes[self.root_key].value


def _is_cyclic(query: Goal, program: Program, max_depth: int, opts: DpOptions) -> bool:
    """Conservative cycle test over the depth-bounded reachable goal graph.

    Every node expandable within the depth budget is expanded once (edges
    from nodes first reached at depth < max_depth cover every walk the
    memory rule could see); a back edge anywhere forces path-dependent
    values, so the caller falls back to visited-set memo keys.
    """
    if query.is_terminal:
        return False
    edges: dict[Goal, tuple[Goal, ...]] = {}
    min_depth: dict[Goal, int] = {query: 0}
    frontier = [query]
    depth = 0
    while frontier and depth < max_depth:
        nxt: list[Goal] = []
        for goal in frontier:
            cands = candidate_next_goals(goal, program, include_false=opts.include_false)
            succ = tuple(c.next_goal for c in cands.entries if not c.next_goal.is_terminal)
            edges[goal] = succ
            for child in succ:
                if child not in min_depth:
                    if len(min_depth) > opts.max_states:
                        raise GoalSpaceError(opts.max_states)
                    min_depth[child] = depth + 1
                    if depth + 1 < max_depth:
                        nxt.append(child)
        frontier = nxt
        depth += 1

    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[Goal, int] = {}
    for start in edges:
        if color.get(start, WHITE) != WHITE:
            continue
        stack: list[tuple[Goal, int]] = [(start, 0)]
        color[start] = GRAY
        while stack:
            node, i = stack[-1]
            succ = edges.get(node, ())
            if i < len(succ):
                stack[-1] = (node, i + 1)
                child = succ[i]
                c = color.get(child, WHITE)
                if c == GRAY:
                    return True
                if c == WHITE and child in edges:
                    color[child] = GRAY
                    stack.append((child, 0))
            else:
                color[node] = BLACK
                stack.pop()
    return False


def solve_value_graph(query: Goal, program: Program, model: TransitionModel,
                      max_depth: int, opts: Optional[DpOptions] = None) -> ValueGraph:
    """Forward pass: memoized success mass for every reachable decision point.

    Memoizes on (goal, remaining depth) unless the memory rule can actually
    fire (a cycle within the depth horizon), in which case the visited set
    joins the key.
    """
    opts = opts or DpOptions()
    if query.is_true:
        return ValueGraph(None, {}, [], "depth")
    if query.is_false:
        graph = ValueGraph("false-root", {}, [], "depth")
        graph.nodes["false-root"] = _Node(
            CandidateSet(query, (), False), np.zeros(0), [], np.zeros(0), 0.0)
        graph.order.append("false-root")
        return graph
    cyclic = opts.use_memory and _is_cyclic(query, program, max_depth, opts)
    mode = "fingerprint" if cyclic else "depth"
    nodes: dict = {}
    order: list = []

    def key_of(goal: Goal, visited: frozenset[Goal], remaining: int):
        if mode == "fingerprint":
            return (goal, visited)
        return (goal, remaining)

    def solve(goal: Goal, visited: frozenset[Goal], remaining: int) -> float:
        if goal.is_true:
            return 1.0
        if goal.is_false:
            return 0.0
        if remaining <= 0:
            return 0.0
        key = key_of(goal, visited, remaining)
        node = nodes.get(key)
        if node is not None:
            return node.value
        if len(nodes) >= opts.max_states:
            raise GoalSpaceError(opts.max_states)
        cands = legal_candidates(goal, visited, program,
                                 include_false=opts.include_false,
                                 use_memory=opts.use_memory)
        if cands.support_size == 0:
            node = _Node(cands, np.zeros(0), [], np.zeros(0), 0.0)
            nodes[key] = node
            order.append(key)
            return 0.0
        node = _Node(cands, np.zeros(0), [], np.zeros(0))
        nodes[key] = node
        child_values = []
        child_keys = []
        for child in cands.support_goals():
            v = solve(child, visited | {child}, remaining - 1)
            child_values.append(v)
            if child.is_terminal or remaining - 1 <= 0:
                child_keys.append(None)
            else:
                child_keys.append(key_of(child, visited | {child}, remaining - 1))
        node.probs = model.probabilities(cands)
        node.child_values = np.array(child_values)
        node.child_keys = child_keys
        node.value = float(np.dot(node.probs, node.child_values))
        order.append(key)
        return node.value

    root_value = solve(query, frozenset((query,)), max_depth)
    root_key = key_of(query, frozenset((query,)), max_depth)
    graph = ValueGraph(root_key, nodes, order, mode)
    assert abs(graph.success_mass() - root_value) < 1e-15
    return graph


def success_probability_dp(query: Goal, program: Program, model: TransitionModel,
                           max_depth: int, opts: Optional[DpOptions] = None) -> float:
    return solve_value_graph(query, program, model, max_depth, opts).success_mass()


def value(query: Goal, y: int, program: Program, model: TransitionModel,
          max_depth: int, opts: Optional[DpOptions] = None) -> float:
    """V(query, y) = (2y - 1) * success probability."""
    if query.is_true:
        return 2.0 * y - 1.0
    if query.is_false:
        return 0.0
    return (2.0 * y - 1.0) * success_probability_dp(query, program, model, max_depth, opts)


def success_gradient(graph: ValueGraph, model: ScorerModel,
                     grads: dict[str, np.ndarray], scale: float = 1.0) -> None:
    """Adjoint sweep: accumulate scale * d(success mass)/d(params).

    Each node contributes sum_k w(node) * V(child_k) * d(prob_k); the adjoint
    w flows down edges weighted by the transition probabilities.
    """
    if graph.root_key is None or graph.root_key == "false-root":
        return
    weight: dict = {graph.root_key: scale}
    for key in reversed(graph.order):
        w = weight.get(key, 0.0)
        if w == 0.0:
            continue
        node = graph.nodes[key]
        if node.cands.support_size == 0:
            continue
        model.weighted_grad(node.cands, node.child_values, grads, w)
        for k, child_key in enumerate(node.child_keys):
            if child_key is not None:
                weight[child_key] = weight.get(child_key, 0.0) + w * float(node.probs[k])


@dataclass
class DpEpochStats:
    loss: float
    objective: float
    mean_p_positive: float
    mean_p_negative: float
    grad_norm: float
    n_states: int


def dp_train_epoch(dataset: list[tuple[Goal, int]], program: Program,
                   embedder: GoalEmbedder, optimizer, max_depth: int,
                   opts: Optional[DpOptions] = None) -> DpEpochStats:
    """One exact-gradient ascent step on the summed signed success probability.

    Maximizes J = sum (2y-1) p_success and reports the linear loss L = -J.
    The optimizer must be configured for ascent (maximize=True).
    """
    opts = opts or DpOptions()
    model = ScorerModel(embedder)
    grads = embedder.params.zero_grads()
    loss = 0.0
    p_pos: list[float] = []
    p_neg: list[float] = []
    total_states = 0
    for query, y in dataset:
        graph = solve_value_graph(query, program, model, max_depth, opts)
        p = graph.success_mass()
        total_states += graph.n_states
        (p_pos if y == 1 else p_neg).append(p)
        loss += (1.0 - 2.0 * y) * p
        success_gradient(graph, model, grads, scale=2.0 * y - 1.0)
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite epoch loss {loss}; p_success values: pos={p_pos} neg={p_neg}"
        )
    check_finite(grads)
    gn = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    optimizer.step(embedder.params, grads)
    embedder.clear_cache()
    return DpEpochStats(
        loss=loss,
        objective=-loss,
        mean_p_positive=float(np.mean(p_pos)) if p_pos else float("nan"),
        mean_p_negative=float(np.mean(p_neg)) if p_neg else float("nan"),
        grad_norm=gn,
        n_states=total_states,
    )


# --- carry-propagation DP for digit-sequence addition ---

def _pair_maps() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """For carry-in c and digit pair (d1, d2): emitted sum digit and carry out."""
    d1 = np.repeat(np.arange(10), 10)
    d2 = np.tile(np.arange(10), 10)
    sum_digit = np.zeros((2, 100), dtype=np.int64)
    carry_out = np.zeros((2, 100), dtype=np.int64)
    scatter = np.zeros((2, 100, 20))
    for c in (0, 1):
        total = d1 + d2 + c
        sum_digit[c] = total % 10
        carry_out[c] = total // 10
        scatter[c, np.arange(100), sum_digit[c] * 2 + carry_out[c]] = 1.0
    return scatter, sum_digit, carry_out


_SCATTER, _SUM_DIGIT, _CARRY_OUT = _pair_maps()


def target_digits(target: int, seq_len: int) -> tuple[np.ndarray, int]:
    """Least-significant-first digits of the target plus its leading carry digit."""
    if not 0 <= target < 2 * 10 ** seq_len:
        raise ValueError(f"target {target} outside [0, 2*10^{seq_len})")
    digits = np.array([(target // 10 ** i) % 10 for i in range(seq_len)], dtype=np.int64)
    return digits, target // 10 ** seq_len


@dataclass
class CarryTables:
    """Per-position joint mass over (sum digit, carry out), plus carry margins.

    `joint[i, s, c]` is the probability mass of latent digit pairs at
    position i emitting sum digit s with carry-out c, given the mass that
    arrived at position i; summing joint[i] recovers that incoming mass.
    """

    joint: np.ndarray    # (N, 10, 2)
    carry_in: np.ndarray  # (N + 1, 2); carry_in[0] = [1, 0]

    @property
    def seq_len(self) -> int:
        return self.joint.shape[0]


def _check_distributions(dist: np.ndarray, seq_len: int, name: str) -> np.ndarray:
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (seq_len, 10):
        raise ValueError(f"{name} must have shape ({seq_len}, 10), got {dist.shape}")
    if np.any(dist < -1e-12) or np.any(np.abs(dist.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError(f"{name} rows must be probability distributions over digits")
    return dist


def carry_tables(dist1: np.ndarray, dist2: np.ndarray, target: int) -> CarryTables:
    """Forward carry DP for P(latent sequences sum to target)."""
    seq_len = np.asarray(dist1).shape[0]
    dist1 = _check_distributions(dist1, seq_len, "dist1")
    dist2 = _check_distributions(dist2, seq_len, "dist2")
    digits, _leading = target_digits(target, seq_len)
    joint = np.zeros((seq_len, 10, 2))
    carry_in = np.zeros((seq_len + 1, 2))
    carry_in[0, 0] = 1.0
    for i in range(seq_len):
        pair = np.outer(dist1[i], dist2[i]).ravel()
        j = (carry_in[i, 0] * (pair @ _SCATTER[0])
             + carry_in[i, 1] * (pair @ _SCATTER[1])).reshape(10, 2)
        joint[i] = j
        carry_in[i + 1] = j[digits[i]]
    return CarryTables(joint, carry_in)


def mnist_sum_probability(dist1: np.ndarray, dist2: np.ndarray, target: int) -> float:
    """Probability that the two latent digit sequences add up to `target`.

    Runs in O(N * 100 * 2); equals the exhaustive sum over all 100^N joint
    digit assignments consistent with the target.
    """
    seq_len = np.asarray(dist1).shape[0]
    _digits, leading = target_digits(target, seq_len)
    tables = carry_tables(dist1, dist2, target)
    return float(tables.carry_in[seq_len, leading])


def mnist_sum_gradient(dist1: np.ndarray, dist2: np.ndarray,
                       target: int) -> tuple[float, np.ndarray, np.ndarray]:
    """Probability plus its exact gradients w.r.t. both digit distributions."""
    seq_len = np.asarray(dist1).shape[0]
    dist1 = _check_distributions(dist1, seq_len, "dist1")
    dist2 = _check_distributions(dist2, seq_len, "dist2")
    digits, leading = target_digits(target, seq_len)
    tables = carry_tables(dist1, dist2, target)
    fwd = tables.carry_in

    # Backward mass: probability of completing the remaining positions given
    # the carry entering position i.
    back = np.zeros((seq_len + 1, 2))
    back[seq_len, leading] = 1.0
    sel = np.zeros((seq_len, 2, 100))
    for i in range(seq_len - 1, -1, -1):
        for c in (0, 1):
            match = _SUM_DIGIT[c] == digits[i]
            sel[i, c] = np.where(match, back[i + 1, _CARRY_OUT[c]], 0.0)
        pair = np.outer(dist1[i], dist2[i]).ravel()
        back[i, 0] = float(pair @ sel[i, 0])
        back[i, 1] = float(pair @ sel[i, 1])

    g1 = np.zeros((seq_len, 10))
    g2 = np.zeros((seq_len, 10))
    for i in range(seq_len):
        weighted = (fwd[i, 0] * sel[i, 0] + fwd[i, 1] * sel[i, 1]).reshape(10, 10)
        g1[i] = weighted @ dist2[i]
        g2[i] = dist1[i] @ weighted
    p = float(fwd[seq_len, leading])
    return p, g1, g2


def batched_sum_probability(dist1: np.ndarray, dist2: np.ndarray,
                            targets: np.ndarray) -> np.ndarray:
    """Vectorized carry DP over a batch: dist* are (B, N, 10), targets (B,)."""
    b, seq_len, _ = dist1.shape
    digits = np.stack([(targets // 10 ** i) % 10 for i in range(seq_len)], axis=1)
    leading = targets // 10 ** seq_len
    carry = np.zeros((b, 2))
    carry[:, 0] = 1.0
    for i in range(seq_len):
        pair = (dist1[:, i, :, None] * dist2[:, i, None, :]).reshape(b, 100)
        j = (carry[:, 0:1] * (pair @ _SCATTER[0])
             + carry[:, 1:2] * (pair @ _SCATTER[1])).reshape(b, 10, 2)
        carry = j[np.arange(b), digits[:, i]]
    return carry[np.arange(b), leading]


def batched_sum_gradient(dist1: np.ndarray, dist2: np.ndarray, targets: np.ndarray
                         ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized probability and gradients for a batch of samples."""
    b, seq_len, _ = dist1.shape
    digits = np.stack([(targets // 10 ** i) % 10 for i in range(seq_len)], axis=1)
    leading = targets // 10 ** seq_len

    fwd = np.zeros((b, seq_len + 1, 2))
    fwd[:, 0, 0] = 1.0
    for i in range(seq_len):
        pair = (dist1[:, i, :, None] * dist2[:, i, None, :]).reshape(b, 100)
        j = (fwd[:, i, 0:1] * (pair @ _SCATTER[0])
             + fwd[:, i, 1:2] * (pair @ _SCATTER[1])).reshape(b, 10, 2)
        fwd[:, i + 1] = j[np.arange(b), digits[:, i]]

    back = np.zeros((b, seq_len + 1, 2))
    back[np.arange(b), seq_len, leading] = 1.0
    g1 = np.zeros_like(dist1)
    g2 = np.zeros_like(dist2)
    sel = np.zeros((b, 2, 100))
    for i in range(seq_len - 1, -1, -1):
        for c in (0, 1):
            match = _SUM_DIGIT[c][None, :] == digits[:, i][:, None]  # (b, 100)
            sel[:, c] = np.where(match, back[:, i + 1][:, _CARRY_OUT[c]], 0.0)
        pair = (dist1[:, i, :, None] * dist2[:, i, None, :]).reshape(b, 100)
        back[:, i, 0] = np.einsum("bp,bp->b", pair, sel[:, 0])
        back[:, i, 1] = np.einsum("bp,bp->b", pair, sel[:, 1])
        weighted = (fwd[:, i, 0:1] * sel[:, 0] + fwd[:, i, 1:2] * sel[:, 1]).reshape(b, 10, 10)
        g1[:, i] = np.einsum("bde,be->bd", weighted, dist2[:, i])
        g2[:, i] = np.einsum("bde,bd->be", weighted, dist1[:, i])
    p = fwd[np.arange(b), seq_len, leading]
    return p, g1, g2
