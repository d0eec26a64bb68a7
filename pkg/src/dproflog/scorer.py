"""Learned goal-compatibility scorer.

The parameter vector holds one embedding row per interned symbol, a pool of
canonical variable-slot embeddings, dedicated True/False goal vectors, an
atom composer (one affine layer + tanh over the predicate and position-
tagged argument embeddings), an optional learned aggregator, and an optional
affine projection for subsymbolic feature vectors. All gradients are
computed analytically here; finite differences are only ever used as the
independent check in tests.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import CandidateSet
from .logic import Atom, Const, Goal, Payload, Struct, Term, Var

AGGREGATORS = ("mean", "sum", "affine")


class MissingPayloadError(KeyError):
    pass


class SubsymbolicFeatureStore:
    """Maps payload references to raw feature vectors of a fixed dimension."""

    def __init__(self, feature_dim: int, name: str = "features") -> None:
        self.feature_dim = feature_dim
        self.name = name
        self._vecs: dict[str, np.ndarray] = {}

    def put(self, ref: str, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.feature_dim,):
            raise ValueError(f"feature vector for {ref!r} must have shape ({self.feature_dim},)")
        self._vecs[ref] = vec

    def vec(self, ref: str) -> np.ndarray:
        try:
            return self._vecs[ref]
        except KeyError:
            raise MissingPayloadError(f"payload {ref!r} not present in store {self.name!r}")

    def refs(self) -> list[str]:
        return list(self._vecs)

    def __len__(self) -> int:
        return len(self._vecs)

    def __contains__(self, ref: str) -> bool:
        return ref in self._vecs


class ParamSet:
    """Ordered, named float64 arrays with flatten/unflatten for gradient checks."""

    def __init__(self, blocks: dict[str, np.ndarray]) -> None:
        self._blocks: dict[str, np.ndarray] = {
            name: np.asarray(arr, dtype=np.float64) for name, arr in blocks.items()
        }

    def __getitem__(self, name: str) -> np.ndarray:
        return self._blocks[name]

    def __contains__(self, name: str) -> bool:
        return name in self._blocks

    def names(self) -> list[str]:
        return list(self._blocks)

    def blocks(self) -> dict[str, np.ndarray]:
        return self._blocks

    def add_block(self, name: str, arr: np.ndarray) -> None:
        if name in self._blocks:
            raise ValueError(f"parameter block {name!r} already exists")
        self._blocks[name] = np.asarray(arr, dtype=np.float64)

    @property
    def size(self) -> int:
        return sum(b.size for b in self._blocks.values())

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(arr) for name, arr in self._blocks.items()}

    def flatten(self) -> np.ndarray:
        return np.concatenate([b.ravel() for b in self._blocks.values()]) if self._blocks else np.zeros(0)

    @staticmethod
    def flatten_grads(params: "ParamSet", grads: dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([grads[name].ravel() for name in params._blocks])

    def load_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {self.size}")
        offset = 0
        for arr in self._blocks.values():
            arr[...] = vec[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self._blocks.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, arr in self._blocks.items():
            arr[...] = snap[name]

    def all_finite(self) -> bool:
        return all(np.isfinite(b).all() for b in self._blocks.values())


class ScorerParams(ParamSet):
    """Full scorer parameterization; see module docstring for the block map."""

    def __init__(self, blocks: dict[str, np.ndarray], *, dim: int, k_var: int,
                 max_arity: int, aggregator: str, n_symbols: int,
                 feature_dim: Optional[int]) -> None:
        super().__init__(blocks)
        self.dim = dim
        self.k_var = k_var
        self.max_arity = max_arity
        self.aggregator = aggregator
        self.n_symbols = n_symbols
        self.feature_dim = feature_dim

    @staticmethod
    def create(rng: np.random.Generator, n_symbols: int, dim: int, max_arity: int,
               k_var: int = 16, aggregator: str = "mean",
               feature_dim: Optional[int] = None, init_std: float = 0.1) -> "ScorerParams":
        if aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if dim < 1 or max_arity < 0 or k_var < 1:
            raise ValueError("invalid scorer dimensions")

        def g(*shape: int) -> np.ndarray:
            return rng.normal(0.0, init_std, size=shape)

        blocks: dict[str, np.ndarray] = {
            "sym_emb": g(max(n_symbols, 1), dim),
            "var_emb": g(k_var, dim),
            "true_emb": g(dim),
            "false_emb": g(dim),
            "comp_W": g(dim, (1 + max_arity) * dim),
            "comp_b": g(dim),
        }
        if aggregator == "affine":
            blocks["agg_W"] = g(dim, dim)
            blocks["agg_b"] = g(dim)
        if feature_dim is not None:
            blocks["proj_W"] = g(dim, feature_dim)
            blocks["proj_b"] = g(dim)
        return ScorerParams(blocks, dim=dim, k_var=k_var, max_arity=max_arity,
                            aggregator=aggregator, n_symbols=n_symbols,
                            feature_dim=feature_dim)

    def spawn_like(self, rng: np.random.Generator, init_std: float = 0.1) -> "ScorerParams":
        """Fresh parameters of the same architecture (used for the critic)."""
        return ScorerParams.create(rng, self.n_symbols, self.dim, self.max_arity,
                                   k_var=self.k_var, aggregator=self.aggregator,
                                   feature_dim=self.feature_dim, init_std=init_std)

    def ensure_symbol_capacity(self, n_symbols: int) -> None:
        """Grow the embedding table with zero rows for late-interned symbols."""
        table = self._blocks["sym_emb"]
        if n_symbols <= table.shape[0]:
            return
        extra = np.zeros((n_symbols - table.shape[0], self.dim))
        self._blocks["sym_emb"] = np.concatenate([table, extra], axis=0)
        self.n_symbols = n_symbols

    def meta(self) -> dict:
        return {
            "dim": self.dim,
            "k_var": self.k_var,
            "max_arity": self.max_arity,
            "aggregator": self.aggregator,
            "n_symbols": self.n_symbols,
            "feature_dim": self.feature_dim,
        }

    @staticmethod
    def from_meta(meta: dict, blocks: dict[str, np.ndarray]) -> "ScorerParams":
        return ScorerParams(blocks, dim=int(meta["dim"]), k_var=int(meta["k_var"]),
                            max_arity=int(meta["max_arity"]), aggregator=meta["aggregator"],
                            n_symbols=int(meta["n_symbols"]),
                            feature_dim=meta.get("feature_dim"))


@dataclass
class TransitionDistribution:
    goal: Goal
    support: CandidateSet
    probs: np.ndarray
    log_probs: np.ndarray

    def entropy(self) -> float:
        return float(-np.sum(self.probs * self.log_probs))


def compatibility(v1: np.ndarray, v2: np.ndarray) -> float:
    """Scalar-product compatibility of two goal embeddings."""
    if v1.shape != v2.shape:
        raise ValueError(f"dimension mismatch: {v1.shape} vs {v2.shape}")
    return float(np.dot(v1, v2))


def stable_softmax(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    shifted = scores - np.max(scores)
    exps = np.exp(shifted)
    total = exps.sum()
    probs = exps / total
    log_probs = shifted - np.log(total)
    return probs, log_probs


class GoalEmbedder:
    """Forward/backward evaluation of goal embeddings under one parameter snapshot.

    Caches term/atom/goal vectors; call `clear_cache` (or build a fresh
    embedder) after every parameter update.
    """

    def __init__(self, params: ScorerParams, store: Optional[SubsymbolicFeatureStore] = None) -> None:
        self.params = params
        self.store = store
        self._term_cache: dict[Term, np.ndarray] = {}
        self._atom_cache: dict[Atom, np.ndarray] = {}
        self._goal_cache: dict[Goal, np.ndarray] = {}

    def clear_cache(self) -> None:
        self._term_cache.clear()
        self._atom_cache.clear()
        self._goal_cache.clear()

    # --- forward ---

    def _compose(self, head_vec: np.ndarray, arg_vecs: Sequence[np.ndarray]) -> np.ndarray:
        p = self.params
        if len(arg_vecs) > p.max_arity:
            raise ValueError(f"arity {len(arg_vecs)} exceeds composer capacity {p.max_arity}")
        x = np.zeros((1 + p.max_arity) * p.dim)
        x[:p.dim] = head_vec
        for i, v in enumerate(arg_vecs):
            x[(1 + i) * p.dim:(2 + i) * p.dim] = v
        return np.tanh(p["comp_W"] @ x + p["comp_b"])

    def embed_term(self, term: Term) -> np.ndarray:
        cached = self._term_cache.get(term)
        if cached is not None:
            return cached
        p = self.params
        if isinstance(term, Const):
            if term.sym >= p["sym_emb"].shape[0]:
                raise ValueError(
                    f"symbol id {term.sym} outside the embedding table; "
                    "rebuild the scorer after interning new symbols"
                )
            vec = p["sym_emb"][term.sym]
        elif isinstance(term, Var):
            vec = p["var_emb"][term.idx % p.k_var]
        elif isinstance(term, Payload):
            if self.store is None or "proj_W" not in p:
                raise MissingPayloadError("no feature store / projection configured")
            vec = p["proj_W"] @ self.store.vec(term.ref) + p["proj_b"]
        else:
            assert isinstance(term, Struct)
            vec = self._compose(p["sym_emb"][term.functor],
                                [self.embed_term(a) for a in term.args])
        self._term_cache[term] = vec
        return vec

    def embed_atom(self, atom: Atom) -> np.ndarray:
        cached = self._atom_cache.get(atom)
        if cached is not None:
            return cached
        vec = self._compose(self.params["sym_emb"][atom.pred],
                            [self.embed_term(a) for a in atom.args])
        self._atom_cache[atom] = vec
        return vec

    def embed_goal(self, goal: Goal) -> np.ndarray:
        cached = self._goal_cache.get(goal)
        if cached is not None:
            return cached
        p = self.params
        if goal.is_false:
            vec = p["false_emb"]
        elif goal.is_true:
            vec = p["true_emb"]
        else:
            atom_vecs = np.stack([self.embed_atom(a) for a in goal.atoms])
            if p.aggregator == "sum":
                vec = atom_vecs.sum(axis=0)
            else:
                vec = atom_vecs.mean(axis=0)
                if p.aggregator == "affine":
                    vec = p["agg_W"] @ vec + p["agg_b"]
        self._goal_cache[goal] = vec
        return vec

    # --- backward ---

    def backward_term(self, term: Term, d_vec: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        p = self.params
        if isinstance(term, Const):
            grads["sym_emb"][term.sym] += d_vec
        elif isinstance(term, Var):
            grads["var_emb"][term.idx % p.k_var] += d_vec
        elif isinstance(term, Payload):
            x = self.store.vec(term.ref)
            grads["proj_W"] += np.outer(d_vec, x)
            grads["proj_b"] += d_vec
        else:
            assert isinstance(term, Struct)
            self._backward_compose(self.embed_term(term), p["sym_emb"][term.functor],
                                   term.functor, list(term.args), d_vec, grads)

    def _backward_compose(self, out_vec: np.ndarray, head_vec: np.ndarray, head_sym: int,
                          args: list[Term], d_vec: np.ndarray,
                          grads: dict[str, np.ndarray]) -> None:
        p = self.params
        d_pre = d_vec * (1.0 - out_vec * out_vec)
        x = np.zeros((1 + p.max_arity) * p.dim)
        x[:p.dim] = head_vec
        for i, a in enumerate(args):
            x[(1 + i) * p.dim:(2 + i) * p.dim] = self.embed_term(a)
        grads["comp_W"] += np.outer(d_pre, x)
        grads["comp_b"] += d_pre
        d_x = p["comp_W"].T @ d_pre
        grads["sym_emb"][head_sym] += d_x[:p.dim]
        for i, a in enumerate(args):
            self.backward_term(a, d_x[(1 + i) * p.dim:(2 + i) * p.dim], grads)

    def backward_atom(self, atom: Atom, d_vec: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        self._backward_compose(self.embed_atom(atom), self.params["sym_emb"][atom.pred],
                               atom.pred, list(atom.args), d_vec, grads)

    def backward_goal(self, goal: Goal, d_vec: np.ndarray, grads: dict[str, np.ndarray]) -> None:
        p = self.params
        if goal.is_false:
            grads["false_emb"] += d_vec
            return
        if goal.is_true:
            grads["true_emb"] += d_vec
            return
        n = len(goal.atoms)
        if p.aggregator == "affine":
            mean = np.stack([self.embed_atom(a) for a in goal.atoms]).mean(axis=0)
            grads["agg_W"] += np.outer(d_vec, mean)
            grads["agg_b"] += d_vec
            d_vec = p["agg_W"].T @ d_vec
        if p.aggregator != "sum":
            d_vec = d_vec / n
        for a in goal.atoms:
            self.backward_atom(a, d_vec, grads)

    # --- transition distributions ---

    def transition_distribution(self, goal: Goal, cands: CandidateSet) -> TransitionDistribution:
        """Softmax over compatibility(goal, successor) for the candidate support."""
        n = cands.support_size
        if n == 0:
            raise ValueError("cannot build a distribution over an empty support")
        if cands.deterministic:
            return TransitionDistribution(goal, cands, np.ones(1), np.zeros(1))
        g = self.embed_goal(goal)
        scores = np.array([compatibility(g, self.embed_goal(h)) for h in cands.support_goals()])
        probs, log_probs = stable_softmax(scores)
        return TransitionDistribution(goal, cands, probs, log_probs)

    def _accumulate_score_grads(self, goal: Goal, cands: CandidateSet, b: np.ndarray,
                                grads: dict[str, np.ndarray]) -> None:
        """Accumulate sum_k b_k * d(score_k)/d(params), score_k = e_G . e_{G_k}."""
        g = self.embed_goal(goal)
        support = cands.support_goals()
        d_g = np.zeros_like(g)
        for k, h_goal in enumerate(support):
            if b[k] == 0.0:
                continue
            h = self.embed_goal(h_goal)
            d_g += b[k] * h
            self.backward_goal(h_goal, b[k] * g, grads)
        self.backward_goal(goal, d_g, grads)

    def distribution_weighted_grad(self, goal: Goal, cands: CandidateSet,
                                   coeffs: np.ndarray, grads: dict[str, np.ndarray],
                                   scale: float = 1.0) -> None:
        """Accumulate scale * sum_k coeffs_k * d(prob_k)/d(params)."""
        if cands.deterministic:
            return
        dist = self.transition_distribution(goal, cands)
        pi = dist.probs
        b = scale * pi * (coeffs - float(np.dot(coeffs, pi)))
        self._accumulate_score_grads(goal, cands, b, grads)

    def logprob_and_grad(self, goal: Goal, chosen_index: int, cands: CandidateSet,
                         grads: Optional[dict[str, np.ndarray]] = None,
                         scale: float = 1.0) -> float:
        """log p(chosen | goal) and (optionally) its scaled parameter gradient."""
        if chosen_index < 0 or chosen_index >= cands.support_size:
            raise IndexError(f"chosen index {chosen_index} outside support of size {cands.support_size}")
        dist = self.transition_distribution(goal, cands)
        if cands.deterministic:
            return 0.0
        if grads is not None:
            b = -scale * dist.probs
            b[chosen_index] += scale
            self._accumulate_score_grads(goal, cands, b, grads)
        return float(dist.log_probs[chosen_index])

    def entropy_and_grad(self, goal: Goal, cands: CandidateSet,
                         grads: Optional[dict[str, np.ndarray]] = None,
                         scale: float = 1.0) -> float:
        """Shannon entropy of the transition distribution, with gradient."""
        dist = self.transition_distribution(goal, cands)
        if cands.deterministic:
            return 0.0
        if grads is not None:
            coeffs = -(dist.log_probs + 1.0)
            self.distribution_weighted_grad(goal, cands, coeffs, grads, scale)
        return dist.entropy()


# --- constructive universal approximation over a derivation tree ---

@dataclass(frozen=True)
class TargetTree:
    """A derivation tree with a target transition distribution on its edges.

    Node 0 is the root; `parents[i] < i` for every other node i, and
    `edge_probs[i]` is the target probability of the edge parents[i] -> i
    (entry 0 is ignored). Sibling probabilities must sum to 1 for the
    reproduced softmax to be exact.
    """

    parents: tuple[Optional[int], ...]
    edge_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.parents or self.parents[0] is not None:
            raise ValueError("node 0 must be the root (parent None)")
        for i, p in enumerate(self.parents[1:], start=1):
            if p is None or not 0 <= p < i:
                raise ValueError("nodes must be listed parent-before-child")
            if not 0.0 < self.edge_probs[i] <= 1.0:
                raise ValueError("edge probabilities must lie in (0, 1]")

    @property
    def n_nodes(self) -> int:
        return len(self.parents)

    def children(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for i, p in enumerate(self.parents[1:], start=1):
            out.setdefault(p, []).append(i)
        return out


def construct_universal_embeddings(tree: TargetTree, dim: Optional[int] = None) -> np.ndarray:
    """Embeddings whose induced softmax reproduces the tree's edge distribution.

    Assigns each node an orthonormal basis vector b_i and sets
    e_root = b_root, e_child = log(p_edge) * b_parent + b_child, so that
    e_child . e_parent recovers log(p_edge) exactly.
    """
    n = tree.n_nodes
    dim = n if dim is None else dim
    if dim < n:
        raise ValueError(f"embedding dimension {dim} is smaller than the node count {n}")
    emb = np.zeros((n, dim))
    emb[0, 0] = 1.0
    for i in range(1, n):
        parent = tree.parents[i]
        emb[i] = np.log(tree.edge_probs[i]) * _basis(parent, dim) + _basis(i, dim)
    return emb


def _basis(i: int, dim: int) -> np.ndarray:
    v = np.zeros(dim)
    v[i] = 1.0
    return v


def tree_softmax_probabilities(tree: TargetTree, emb: np.ndarray) -> np.ndarray:
    """Per-node probability from its parent under the induced softmax."""
    out = np.zeros(tree.n_nodes)
    out[0] = 1.0
    for parent, kids in tree.children().items():
        scores = np.array([compatibility(emb[k], emb[parent]) for k in kids])
        probs, _ = stable_softmax(scores)
        for k, p in zip(kids, probs):
            out[k] = p
    return out
