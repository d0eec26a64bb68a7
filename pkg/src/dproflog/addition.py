"""Multi-digit addition with synthetic perception.

Two hidden digit sequences are observed only through per-digit feature
vectors (fixed random class means plus Gaussian noise); supervision is the
integer sum alone. Exact training runs the carry-propagation DP end to end;
approximate training samples sum-consistent rollouts from a masked policy
and corrects the mismatch with importance weights.

Digits inside a sample are stored most-significant first (the printed
order); carry computations index least-significant first internally.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dp import batched_sum_gradient, batched_sum_probability
from .optim import Adam, check_finite
from .pg import MovingBaseline, Trajectory, TrajectoryStep, reinforce_update
from .scorer import ParamSet, SubsymbolicFeatureStore


@dataclass(frozen=True)
class AdditionSample:
    seq1: tuple[str, ...]  # payload refs, most significant digit first
    seq2: tuple[str, ...]
    target: int
    digits1: tuple[int, ...]  # ground truth, diagnostics only
    digits2: tuple[int, ...]


def generate_addition_dataset(count: int, seq_len: int, feature_dim: int,
                              noise_sigma: float, seed: int,
                              tag: str = "train") -> tuple[list[AdditionSample], SubsymbolicFeatureStore]:
    """Samples plus the feature store holding one vector per digit image.

    Each digit class has a fixed random mean vector (shared across tags via
    the seed); a payload is its class mean plus N(0, sigma^2) noise. Only
    the sum is meant to be used as supervision.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    means_rng = np.random.Generator(np.random.PCG64(seed))
    class_means = means_rng.normal(0.0, 1.0, size=(10, feature_dim))
    rng = np.random.Generator(np.random.PCG64([seed, zlib.crc32(tag.encode())]))
    store = SubsymbolicFeatureStore(feature_dim, name=f"digits-{tag}")
    samples: list[AdditionSample] = []
    for i in range(count):
        d1 = rng.integers(0, 10, size=seq_len)
        d2 = rng.integers(0, 10, size=seq_len)
        refs1 = []
        refs2 = []
        for pos in range(seq_len):
            for which, digits, refs in ((1, d1, refs1), (2, d2, refs2)):
                ref = f"{tag}_{i}_{which}_{pos}"
                vec = class_means[digits[pos]] + noise_sigma * rng.normal(size=feature_dim)
                store.put(ref, vec)
                refs.append(ref)
        n1 = int("".join(map(str, d1)))
        n2 = int("".join(map(str, d2)))
        samples.append(AdditionSample(tuple(refs1), tuple(refs2), n1 + n2,
                                      tuple(int(x) for x in d1), tuple(int(x) for x in d2)))
    return samples, store


def digit_separability(samples: Sequence[AdditionSample],
                       store: SubsymbolicFeatureStore) -> float:
    """Nearest-class-mean accuracy of the features against ground-truth digits."""
    feats = []
    labels = []
    for s in samples:
        for refs, digits in ((s.seq1, s.digits1), (s.seq2, s.digits2)):
            for ref, d in zip(refs, digits):
                feats.append(store.vec(ref))
                labels.append(d)
    x = np.stack(feats)
    y = np.array(labels)
    means = np.stack([x[y == d].mean(axis=0) for d in range(10)])
    dists = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float((dists.argmin(axis=1) == y).mean())


# --- digit classifier: feature -> projection -> per-digit readout ---

class DigitClassifier:
    """Affine projection into the embedding space plus a 10-way readout."""

    def __init__(self, params: ParamSet, store: SubsymbolicFeatureStore) -> None:
        self.params = params
        self.store = store

    @staticmethod
    def create(rng: np.random.Generator, feature_dim: int, dim: int,
               store: SubsymbolicFeatureStore, init_std: float = 0.1) -> "DigitClassifier":
        params = ParamSet({
            "proj_W": rng.normal(0.0, init_std, size=(dim, feature_dim)),
            "proj_b": np.zeros(dim),
            "read_W": rng.normal(0.0, init_std, size=(10, dim)),
            "read_b": np.zeros(10),
        })
        return DigitClassifier(params, store)

    def dist_batch(self, refs: Sequence[str]) -> np.ndarray:
        x = np.stack([self.store.vec(r) for r in refs])
        h = x @ self.params["proj_W"].T + self.params["proj_b"]
        logits = h @ self.params["read_W"].T + self.params["read_b"]
        logits -= logits.max(axis=1, keepdims=True)
        exps = np.exp(logits)
        return exps / exps.sum(axis=1, keepdims=True)

    def backward_batch(self, refs: Sequence[str], d_dist: np.ndarray,
                       grads: dict[str, np.ndarray]) -> None:
        """Accumulate parameter gradients given dLoss/dDistribution rows."""
        x = np.stack([self.store.vec(r) for r in refs])
        h = x @ self.params["proj_W"].T + self.params["proj_b"]
        logits = h @ self.params["read_W"].T + self.params["read_b"]
        logits -= logits.max(axis=1, keepdims=True)
        exps = np.exp(logits)
        p = exps / exps.sum(axis=1, keepdims=True)
        d_logit = p * (d_dist - (d_dist * p).sum(axis=1, keepdims=True))
        grads["read_W"] += d_logit.T @ h
        grads["read_b"] += d_logit.sum(axis=0)
        d_h = d_logit @ self.params["read_W"]
        grads["proj_W"] += d_h.T @ x
        grads["proj_b"] += d_h.sum(axis=0)

    # PolicySource interface: obs is a payload ref, support is digits 0..9.

    def distribution(self, obs: str) -> np.ndarray:
        return self.dist_batch([obs])[0]

    def logprob_and_grad(self, obs: str, chosen: int,
                         grads: Optional[dict[str, np.ndarray]] = None,
                         scale: float = 1.0) -> float:
        p = self.distribution(obs)
        if grads is not None:
            d_dist = np.zeros(10)
            d_dist[chosen] = scale / p[chosen]
            self.backward_batch([obs], d_dist[None, :], grads)
        return float(np.log(p[chosen]))

    def entropy_and_grad(self, obs: str,
                         grads: Optional[dict[str, np.ndarray]] = None,
                         scale: float = 1.0) -> float:
        p = self.distribution(obs)
        logp = np.log(p)
        if grads is not None:
            self.backward_batch([obs], (-scale * (logp + 1.0))[None, :], grads)
        return float(-(p * logp).sum())

    def refresh(self) -> None:
        pass  # stateless forward; nothing cached


# --- the valid-digit constraint mask ---

def _max_pair_total(n_pairs: int) -> int:
    return 2 * (10 ** n_pairs - 1) if n_pairs > 0 else 0


def digit_mask(pos: int, seq_len: int, sum_digit: int, full_sum: int,
               curr_no: int, prev: Optional[int]) -> np.ndarray:
    """Boolean mask over digits 0..9 that can still complete to the target.

    Positions are processed least significant first; `full_sum` is the
    residual target still owed by positions pos..seq_len-1 after already
    chosen pairs were folded away (so `sum_digit` = residual mod 10).
    curr_no 0 picks the first number's digit, curr_no 1 the second's given
    `prev`. Exactly matches exhaustive enumeration of the remaining digits.
    """
    if not 0 <= pos < seq_len:
        raise ValueError(f"pos {pos} outside [0, {seq_len})")
    if not 0 <= sum_digit <= 9:
        raise ValueError(f"sum_digit {sum_digit} outside [0, 9]")
    if curr_no not in (0, 1):
        raise ValueError("curr_no must be 0 or 1")
    if full_sum < 0:
        raise ValueError("residual sum cannot be negative")
    if full_sum % 10 != sum_digit:
        raise ValueError(f"sum_digit {sum_digit} inconsistent with residual {full_sum}")
    if curr_no == 1 and not (prev is not None and 0 <= prev <= 9):
        raise ValueError("curr_no 1 requires the first number's digit in [0, 9]")
    remaining_pairs = seq_len - pos - 1
    mask = np.zeros(10, dtype=bool)
    for d in range(10):
        if curr_no == 0:
            ok = any(_pair_feasible(d, b, full_sum, remaining_pairs) for b in range(10))
        else:
            ok = _pair_feasible(prev, d, full_sum, remaining_pairs)
        mask[d] = ok
    return mask


def _pair_feasible(a: int, b: int, residual: int, remaining_pairs: int) -> bool:
    if (a + b) % 10 != residual % 10:
        return False
    rest = residual - a - b
    if rest < 0 or rest % 10 != 0:
        return False
    return 0 <= rest // 10 <= _max_pair_total(remaining_pairs)


def sample_masked_rollout(sample: AdditionSample, classifier: DigitClassifier,
                          rng: np.random.Generator, query_id: int = 0,
                          explore_eps: float = 0.0) -> Trajectory:
    """Sum-consistent rollout: per position draw digit 1 then digit 2 from the
    classifier renormalized over the valid-digit mask.

    Behavior log-probs are the masked ones, target log-probs the unmasked
    ones. `explore_eps` mixes the masked policy with a uniform distribution
    over the mask (behavior log-probs account for the mixture), keeping
    exploration alive as the policy sharpens. The mask guarantees the
    rollout hits the target, so the return is +1.
    """
    seq_len = len(sample.seq1)
    residual = sample.target
    steps: list[TrajectoryStep] = []
    dead_end = False
    for pos in range(seq_len):
        # least-significant position first: ref index from the right
        ref1 = sample.seq1[seq_len - 1 - pos]
        ref2 = sample.seq2[seq_len - 1 - pos]
        mask1 = digit_mask(pos, seq_len, residual % 10, residual, 0, None)
        d1, s1 = _draw_masked(classifier, ref1, mask1, rng, explore_eps)
        steps.append(s1)
        if d1 is None:
            dead_end = True
            break
        mask2 = digit_mask(pos, seq_len, residual % 10, residual, 1, d1)
        d2, s2 = _draw_masked(classifier, ref2, mask2, rng, explore_eps)
        steps.append(s2)
        if d2 is None:
            dead_end = True
            break
        residual = (residual - d1 - d2) // 10
    success = not dead_end and residual == 0
    return Trajectory(query_id, 1, steps, 1.0 if success else 0.0,
                      "True" if success else "False", mask_dead_end=dead_end)


def _draw_masked(classifier: DigitClassifier, ref: str, mask: np.ndarray,
                 rng: np.random.Generator,
                 explore_eps: float) -> tuple[Optional[int], TrajectoryStep]:
    probs = classifier.distribution(ref)
    masked = np.where(mask, probs, 0.0)
    total = masked.sum()
    if total <= 0.0:
        return None, TrajectoryStep(ref, 0, 0.0, float(np.log(probs[0])))
    behavior = masked / total
    if explore_eps > 0.0:
        uniform = mask / mask.sum()
        behavior = (1.0 - explore_eps) * behavior + explore_eps * uniform
    d = int(rng.choice(10, p=behavior))
    return d, TrajectoryStep(ref, d, float(np.log(behavior[d])), float(np.log(probs[d])))


# --- training and evaluation ---

def sample_distributions(samples: Sequence[AdditionSample],
                         classifier: DigitClassifier) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample digit distributions, least-significant position first:
    returns (B, N, 10) arrays for the two sequences."""
    seq_len = len(samples[0].seq1)
    refs1 = [r for s in samples for r in reversed(s.seq1)]
    refs2 = [r for s in samples for r in reversed(s.seq2)]
    d1 = classifier.dist_batch(refs1).reshape(len(samples), seq_len, 10)
    d2 = classifier.dist_batch(refs2).reshape(len(samples), seq_len, 10)
    return d1, d2


def sum_accuracy(samples: Sequence[AdditionSample], classifier: DigitClassifier
                 ) -> tuple[float, float]:
    """Argmax-over-targets accuracy plus mean probability of the true sum."""
    seq_len = len(samples[0].seq1)
    d1, d2 = sample_distributions(samples, classifier)
    targets = np.array([s.target for s in samples])
    n_targets = 2 * 10 ** seq_len
    all_p = np.zeros((len(samples), n_targets))
    for t in range(n_targets):
        all_p[:, t] = batched_sum_probability(d1, d2, np.full(len(samples), t))
    predicted = all_p.argmax(axis=1)
    true_p = all_p[np.arange(len(samples)), targets]
    return float((predicted == targets).mean()), float(true_p.mean())


PROBABILITY_FLOOR = 1e-30


def train_addition_dp(train: Sequence[AdditionSample], classifier: DigitClassifier,
                      epochs: int, batch_size: int, lr: float, seed: int,
                      test: Optional[Sequence[AdditionSample]] = None,
                      eval_every: int = 10, target_accuracy: Optional[float] = None,
                      on_epoch=None) -> list[dict]:
    """Exact-mode training: ascend the mean log-probability of the observed
    sums through the carry DP.

    All supervision here is positive, so maximizing the signed success
    probability and minimizing cross-entropy push in the same per-sample
    direction; the log form reweights each sample by 1/p, which keeps
    low-probability samples learning instead of stalling.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    opt = Adam(lr, maximize=True)
    rows: list[dict] = []
    n = len(train)
    for epoch in range(epochs):
        order = rng.permutation(n)
        epoch_p = 0.0
        epoch_logp = 0.0
        for start in range(0, n, batch_size):
            batch = [train[i] for i in order[start:start + batch_size]]
            d1, d2 = sample_distributions(batch, classifier)
            targets = np.array([s.target for s in batch])
            p, g1, g2 = batched_sum_gradient(d1, d2, targets)
            epoch_p += float(p.sum())
            p_safe = np.maximum(p, PROBABILITY_FLOOR)
            epoch_logp += float(np.log(p_safe).sum())
            scale = (1.0 / p_safe)[:, None, None] / len(batch)
            grads = classifier.params.zero_grads()
            refs1 = [r for s in batch for r in reversed(s.seq1)]
            refs2 = [r for s in batch for r in reversed(s.seq2)]
            classifier.backward_batch(refs1, (g1 * scale).reshape(-1, 10), grads)
            classifier.backward_batch(refs2, (g2 * scale).reshape(-1, 10), grads)
            check_finite(grads)
            opt.step(classifier.params, grads)
        row = {"epoch": epoch, "loss": -epoch_logp / n, "objective": epoch_p / n}
        if test is not None and (epoch % eval_every == eval_every - 1 or epoch == epochs - 1):
            acc, mean_p = sum_accuracy(test, classifier)
            row["test_accuracy"] = acc
            row["test_mean_p"] = mean_p
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if target_accuracy is not None and row.get("test_accuracy", 0.0) >= target_accuracy:
            break
    return rows


def train_addition_pg(train: Sequence[AdditionSample], classifier: DigitClassifier,
                      iterations: int, batch_size: int, lr: float, seed: int,
                      w_max: float = 10.0, use_baseline: bool = False,
                      explore_eps: float = 0.1, rollouts_per_sample: int = 2,
                      test: Optional[Sequence[AdditionSample]] = None,
                      eval_every: int = 50, target_accuracy: Optional[float] = None,
                      on_iteration=None) -> list[dict]:
    """Masked off-policy REINFORCE: rollouts satisfy the observed sum by
    construction; importance weights re-target the unmasked policy.

    Weights are self-normalized per batch: early in training every rollout
    has tiny unmasked probability, and the relative weighting is what
    carries the learning signal.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    opt = Adam(lr, maximize=True)
    baseline = MovingBaseline() if use_baseline else None
    rows: list[dict] = []
    n = len(train)
    for it in range(iterations):
        picked = rng.choice(n, size=min(batch_size, n), replace=False)
        batch = [sample_masked_rollout(train[int(i)], classifier, rng, int(i),
                                       explore_eps=explore_eps)
                 for i in picked for _ in range(rollouts_per_sample)]
        stats = reinforce_update(batch, classifier, opt, w_max=w_max,
                                 baseline=baseline, normalize_weights=True)
        row = {"iteration": it, "mean_return": stats.mean_return,
               "mean_weight": stats.mean_weight, "grad_norm": stats.grad_norm}
        if test is not None and (it % eval_every == eval_every - 1 or it == iterations - 1):
            acc, mean_p = sum_accuracy(test, classifier)
            row["test_accuracy"] = acc
            row["test_mean_p"] = mean_p
        rows.append(row)
        if on_iteration is not None:
            on_iteration(row)
        if target_accuracy is not None and row.get("test_accuracy", 0.0) >= target_accuracy:
            break
    return rows
