"""Approximate learning from sampled derivations.

Covers episode sampling (optionally under a constraint mask, recording both
the masked behavior log-probs and the unmasked target log-probs), clipped
importance weights, off-policy REINFORCE, and PPO with a clipped surrogate
plus a value critic that reuses the goal-embedding architecture.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .engine import CandidateSet
from .env import EnvState, ResolutionEnv, trace_record
from .logic import Goal
from .optim import check_finite, grad_norm
from .scorer import GoalEmbedder, ParamSet, ScorerParams


@dataclass(frozen=True)
class TrajectoryStep:
    obs: object
    chosen: int
    behavior_logprob: float
    target_logprob: float
    goal: Optional[Goal] = None  # state goal, for critics


@dataclass
class Trajectory:
    query_id: int
    label: int
    steps: list[TrajectoryStep]
    ret: float
    outcome: Optional[str]
    mask_dead_end: bool = False  # a mask eliminated every action at some step

    def behavior_logprob(self) -> float:
        return sum(s.behavior_logprob for s in self.steps)

    def target_logprob(self) -> float:
        return sum(s.target_logprob for s in self.steps)


class PolicySource(Protocol):
    """A differentiable distribution over per-observation action supports."""

    params: ParamSet

    def distribution(self, obs) -> np.ndarray: ...

    def logprob_and_grad(self, obs, chosen: int,
                         grads: Optional[dict[str, np.ndarray]] = None,
                         scale: float = 1.0) -> float: ...

    def entropy_and_grad(self, obs,
                         grads: Optional[dict[str, np.ndarray]] = None,
                         scale: float = 1.0) -> float: ...

    def refresh(self) -> None: ...


class SldPolicy:
    """Goal-scorer policy over SLD candidate sets; obs = (goal, candidates)."""

    def __init__(self, embedder: GoalEmbedder) -> None:
        self.embedder = embedder

    @property
    def params(self) -> ScorerParams:
        return self.embedder.params

    def distribution(self, obs: tuple[Goal, CandidateSet]) -> np.ndarray:
        goal, cands = obs
        return self.embedder.transition_distribution(goal, cands).probs

    def logprob_and_grad(self, obs, chosen, grads=None, scale=1.0) -> float:
        goal, cands = obs
        return self.embedder.logprob_and_grad(goal, chosen, cands, grads, scale)

    def entropy_and_grad(self, obs, grads=None, scale=1.0) -> float:
        goal, cands = obs
        return self.embedder.entropy_and_grad(goal, cands, grads, scale)

    def refresh(self) -> None:
        self.embedder.clear_cache()


MaskProvider = Callable[[EnvState, CandidateSet], np.ndarray]


def sample_episode(env: ResolutionEnv, state: EnvState, policy: PolicySource,
                   rng: np.random.Generator,
                   mask_provider: Optional[MaskProvider] = None,
                   trace: Optional[list[str]] = None) -> Trajectory:
    """Roll out one episode from a freshly reset state.

    With a mask provider, actions are drawn from the policy renormalized
    over mask-allowed entries; both the masked (behavior) and unmasked
    (target) log-probs are recorded per step so importance weights can
    correct the mismatch. A mask that eliminates every action forces the
    False action and flags the trajectory. Pass `trace` to collect the
    line-oriented episode record.
    """
    steps: list[TrajectoryStep] = []
    ret = 0.0
    outcome = None
    dead_end = False
    while True:
        cands = env.legal_actions(state)
        obs = (state.goal, cands)
        probs = policy.distribution(obs)
        if mask_provider is not None and not cands.deterministic:
            mask = np.asarray(mask_provider(state, cands), dtype=bool)
            masked = np.where(mask, probs, 0.0)
            total = masked.sum()
            if total <= 0.0:
                false_idx = cands.false_index()
                if false_idx is None:
                    raise RuntimeError("mask eliminated all actions and False is unavailable")
                idx = false_idx
                blp = 0.0
                dead_end = True
            else:
                behavior = masked / total
                idx = int(rng.choice(len(behavior), p=behavior))
                blp = float(np.log(behavior[idx]))
        else:
            idx = int(rng.choice(len(probs), p=probs)) if len(probs) > 1 else 0
            blp = float(np.log(probs[idx]))
        tlp = float(np.log(probs[idx]))
        steps.append(TrajectoryStep(obs, idx, blp, tlp, goal=state.goal))
        result = env.step_support(state, cands, idx)
        if trace is not None:
            trace.append(trace_record(state, idx, result.reward))
        ret += result.reward
        state = result.next_state
        if result.done:
            outcome = result.outcome
            break
    return Trajectory(state.query_id, state.label, steps, ret, outcome,
                      mask_dead_end=dead_end)


def importance_weight(traj: Trajectory, w_max: float = 10.0) -> float:
    """exp(sum target - sum behavior), clipped to [0, w_max]."""
    w = float(np.exp(traj.target_logprob() - traj.behavior_logprob()))
    return min(w, w_max)


class MovingBaseline:
    """Exponential moving average of batch returns, off by default."""

    def __init__(self, beta: float = 0.9) -> None:
        self.beta = beta
        self.value = 0.0
        self._initialized = False

    def update(self, mean_return: float) -> None:
        if not self._initialized:
            self.value = mean_return
            self._initialized = True
        else:
            self.value = self.beta * self.value + (1.0 - self.beta) * mean_return


@dataclass
class ReinforceStats:
    mean_return: float
    mean_weight: float
    grad_norm: float


def reinforce_update(batch: Sequence[Trajectory], policy: PolicySource, optimizer,
                     w_max: float = 10.0,
                     baseline: Optional[MovingBaseline] = None,
                     normalize_weights: bool = False) -> ReinforceStats:
    """One off-policy REINFORCE ascent step on the expected return.

    Gradient estimate: mean over trajectories of
    w(t) * (return(t) - baseline) * sum_steps grad log p(chosen | state).
    With `normalize_weights` the importance weights are self-normalized to
    mean 1 within the batch (a no-op on on-policy batches, where every
    weight is already 1).
    """
    if not batch:
        raise ValueError("empty trajectory batch")
    grads = policy.params.zero_grads()
    base = baseline.value if baseline is not None else 0.0
    weights = [importance_weight(traj, w_max) for traj in batch]
    returns = [traj.ret for traj in batch]
    scaling = 1.0
    if normalize_weights:
        mean_w = float(np.mean(weights))
        if mean_w > 0.0:
            scaling = 1.0 / mean_w
    for traj, w in zip(batch, weights):
        coef = scaling * w * (traj.ret - base) / len(batch)
        if coef == 0.0:
            continue
        for step in traj.steps:
            policy.logprob_and_grad(step.obs, step.chosen, grads, scale=coef)
    check_finite(grads)
    gn = grad_norm(grads)
    optimizer.step(policy.params, grads)
    policy.refresh()
    if baseline is not None:
        baseline.update(float(np.mean(returns)))
    return ReinforceStats(float(np.mean(returns)), float(np.mean(weights)), gn)


class Critic:
    """Scalar affine readout of the goal embedding, with its own parameters."""

    def __init__(self, params: ScorerParams, store=None) -> None:
        if "value_w" not in params:
            raise ValueError("critic params need 'value_w'/'value_b' blocks")
        self.params = params
        self.embedder = GoalEmbedder(params, store)

    @staticmethod
    def create(rng: np.random.Generator, like: ScorerParams, store=None,
               init_std: float = 0.1) -> "Critic":
        params = like.spawn_like(rng, init_std)
        params.add_block("value_w", rng.normal(0.0, init_std, size=like.dim))
        params.add_block("value_b", np.zeros(1))
        return Critic(params, store)

    def value(self, goal: Goal) -> float:
        g = self.embedder.embed_goal(goal)
        return float(np.dot(self.params["value_w"], g) + self.params["value_b"][0])

    def value_and_grad(self, goal: Goal, grads: dict[str, np.ndarray],
                       scale: float = 1.0) -> float:
        g = self.embedder.embed_goal(goal)
        v = float(np.dot(self.params["value_w"], g) + self.params["value_b"][0])
        grads["value_w"] += scale * g
        grads["value_b"] += scale
        self.embedder.backward_goal(goal, scale * self.params["value_w"], grads)
        return v

    def refresh(self) -> None:
        self.embedder.clear_cache()


@dataclass
class PPOConfig:
    clip_range: float = 0.2
    entropy_coef: float = 0.2
    critic_weight: float = 0.5
    epochs: int = 4
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    rollouts_per_query: int = 4
    kl_stop: float = 0.0  # 0 disables the early-stop guard
    advantage_normalization_min: int = 8
    w_max: float = 10.0

    def __post_init__(self) -> None:
        if not 0.0 < self.clip_range < 1.0:
            raise ValueError("clip_range must lie in (0, 1)")
        if self.entropy_coef < 0 or self.critic_weight < 0:
            raise ValueError("coefficients must be >= 0")


@dataclass
class PPOStats:
    mean_return: float
    clip_fraction: float
    approx_kl: float
    entropy: float
    critic_loss: float
    epochs_run: int


def ppo_update(batch: Sequence[Trajectory], policy: PolicySource, critic: Critic,
               cfg: PPOConfig, policy_opt, critic_opt,
               rng: np.random.Generator) -> PPOStats:
    """Clipped-surrogate PPO step with Monte-Carlo advantages.

    Advantage = episode return - critic(goal); per minibatch epoch the
    ratio between current and behavior log-probs is clipped at 1 +- clip
    range, an entropy bonus is added, and the critic regresses to returns.
    """
    flat: list[tuple[object, int, float, Goal, float]] = []
    for traj in batch:
        for step in traj.steps:
            if isinstance(step.obs, tuple) and step.obs[1].deterministic:
                continue  # forced reductions carry no policy signal
            flat.append((step.obs, step.chosen, step.behavior_logprob, step.goal, traj.ret))
    if not flat:
        raise ValueError("batch contains no policy-controlled steps")

    returns = np.array([s[4] for s in flat])
    critic.refresh()
    values = np.array([critic.value(s[3]) for s in flat])
    adv = returns - values
    if len(flat) >= cfg.advantage_normalization_min:
        std = float(adv.std())
        adv = (adv - adv.mean()) / (std + 1e-8)

    n = len(flat)
    clip_hits = 0
    clip_total = 0
    kl_sum = 0.0
    ent_sum = 0.0
    ent_n = 0
    closs_sum = 0.0
    epochs_run = 0
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_kl = []
        for start in range(0, n, cfg.minibatch_size):
            mb = order[start:start + cfg.minibatch_size]
            grads_p = policy.params.zero_grads()
            grads_c = critic.params.zero_grads()
            for i in mb:
                obs, chosen, blp, goal, ret = flat[i]
                a = float(adv[i])
                lp = policy.logprob_and_grad(obs, chosen, None)
                ratio = float(np.exp(lp - blp))
                clipped = ratio < 1.0 - cfg.clip_range or ratio > 1.0 + cfg.clip_range
                clip_hits += int(clipped)
                clip_total += 1
                epoch_kl.append(blp - lp)
                unclipped_active = (a >= 0 and ratio <= 1.0 + cfg.clip_range) or \
                                   (a < 0 and ratio >= 1.0 - cfg.clip_range)
                if unclipped_active and a != 0.0:
                    policy.logprob_and_grad(obs, chosen, grads_p, scale=ratio * a / len(mb))
                ent = policy.entropy_and_grad(obs, grads_p, scale=cfg.entropy_coef / len(mb))
                ent_sum += ent
                ent_n += 1
                v = critic.value(goal)
                closs_sum += (v - ret) ** 2
                critic.value_and_grad(
                    goal, grads_c,
                    scale=2.0 * (v - ret) * cfg.critic_weight / len(mb))
            check_finite(grads_p)
            check_finite(grads_c)
            policy_opt.step(policy.params, grads_p)
            critic_opt.step(critic.params, grads_c)
            policy.refresh()
            critic.refresh()
        epochs_run += 1
        kl = float(np.mean(epoch_kl))
        kl_sum += kl
        if cfg.kl_stop > 0.0 and kl > cfg.kl_stop:
            break

    return PPOStats(
        mean_return=float(np.mean([t.ret for t in batch])),
        clip_fraction=clip_hits / max(clip_total, 1),
        approx_kl=kl_sum / max(epochs_run, 1),
        entropy=ent_sum / max(ent_n, 1),
        critic_loss=closs_sum / max(clip_total, 1),
        epochs_run=epochs_run,
    )


def run_ppo_training(env: ResolutionEnv, queries: Sequence[tuple[Goal, int, int]],
                     policy: SldPolicy, critic: Critic, cfg: PPOConfig,
                     iterations: int, rng: np.random.Generator,
                     queries_per_iteration: Optional[int] = None,
                     on_iteration=None) -> list[dict]:
    """Iterate rollout collection and PPO updates over labeled SLD queries.

    Returns one log record per iteration with return/success statistics by
    label plus the PPO diagnostics.
    """
    policy_opt_cls = _ppo_optimizers(cfg)
    policy_opt, critic_opt = policy_opt_cls
    rows: list[dict] = []
    n_queries = len(queries)
    for it in range(iterations):
        if queries_per_iteration is not None and queries_per_iteration < n_queries:
            picked = rng.choice(n_queries, size=queries_per_iteration, replace=False)
            batch_queries = [queries[int(i)] for i in picked]
        else:
            batch_queries = list(queries)
        batch: list[Trajectory] = []
        for goal, label, qid in batch_queries:
            for _ in range(cfg.rollouts_per_query):
                state = env.reset(goal, label, qid)
                batch.append(sample_episode(env, state, policy, rng))
        stats = ppo_update(batch, policy, critic, cfg, policy_opt, critic_opt, rng)
        pos = [t.ret for t in batch if t.label == 1]
        neg = [t.ret for t in batch if t.label == 0]
        row = {
            "iteration": it,
            "mean_return": stats.mean_return,
            "mean_return_positive": float(np.mean(pos)) if pos else float("nan"),
            "mean_return_negative": float(np.mean(neg)) if neg else float("nan"),
            "success_rate": float(np.mean([t.outcome == "True" for t in batch])),
            "entropy": stats.entropy,
            "clip_fraction": stats.clip_fraction,
            "approx_kl": stats.approx_kl,
            "critic_loss": stats.critic_loss,
        }
        rows.append(row)
        if on_iteration is not None:
            on_iteration(row)
    return rows


def _ppo_optimizers(cfg: PPOConfig):
    from .optim import Adam

    return Adam(cfg.learning_rate, maximize=True), Adam(cfg.learning_rate)
