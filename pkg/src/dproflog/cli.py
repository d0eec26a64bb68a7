"""Command-line entry point.

    dproflog {dp-train|pg-train|eval|prove|oracle-check} --config <path>
             [--override key=value]... [query]

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 resource cap.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from typing import Optional

import numpy as np

from . import addition as addition_task
from . import kg as kg_task
from .checkpoint import (
    CheckpointMismatchError,
    load_paramset,
    load_scorer_params,
    save_checkpoint,
)
from .config import ConfigError, RunConfig, load_config, require_paths
from .dp import DpOptions, GoalSpaceError, ScorerModel, dp_train_epoch, success_probability_dp
from .engine import ResourceLimitError
from .env import ResolutionEnv
from .kg import KGDataError
from .logic import Goal, Program, UnificationCycleError
from .optim import NonFiniteGradientError, make_optimizer
from .parser import ArityError, ParseError, goal_to_text, parse_program, parse_query
from .pg import Critic, PPOConfig, SldPolicy, run_ppo_training, sample_episode
from .prooftree import build_proof_tree, find_best_proof, render_text, to_document
from .randprog import oracle_check
from .report import (
    render_probability_histogram,
    render_rank_histogram,
    render_training_curves,
    write_metrics,
    write_tsv_log,
)
from .scorer import GoalEmbedder, ScorerParams

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RESOURCE = 3


def _load_labeled_queries(path: str, program: Program) -> list[tuple[Goal, int, int]]:
    queries: list[tuple[Goal, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("%"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or parts[1] not in ("0", "1"):
                raise ConfigError(f"{path}:{lineno}: expected goal<TAB>label with label 0/1")
            queries.append((parse_query(parts[0], program), int(parts[1]), lineno))
    if not queries:
        raise ConfigError(f"{path}: no queries found")
    return queries


def _load_priors(path: str, program: Program) -> dict[str, float]:
    """goal<TAB>score lines, keyed by the goal's canonical rendering."""
    priors: dict[str, float] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected goal<TAB>score")
            try:
                score = float(parts[1])
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: score must be a number")
            goal = parse_query(parts[0], program)
            priors[kg_task.goal_key(goal, program)] = score
    return priors


def _load_aligned_params(checkpoint: str, program: Program) -> ScorerParams:
    """Load a checkpoint and realign the symbol table with its saved names;
    callers grow capacity after interning any further query symbols."""
    params, saved = load_scorer_params(checkpoint, list(program.symbols.names()))
    for name in saved:
        program.symbols.intern(name)
    params.ensure_symbol_capacity(len(program.symbols))
    return params


def _scorer_for_program(cfg: RunConfig, program: Program,
                        rng: np.random.Generator) -> ScorerParams:
    if cfg.checkpoint:
        return _load_aligned_params(cfg.checkpoint, program)
    return ScorerParams.create(rng, len(program.symbols), cfg.embedding_dim,
                               max_arity=max(program.max_arity, 1),
                               k_var=cfg.k_var_slots, aggregator=cfg.aggregator,
                               init_std=cfg.init_std)


def _program_meta(program: Program) -> dict:
    return {"symbols": list(program.symbols.names())}


# --- dp-train ---

def cmd_dp_train(cfg: RunConfig) -> int:
    if cfg.task == "addition":
        return _dp_train_addition(cfg)
    return _dp_train_queries(cfg)


def _dp_train_queries(cfg: RunConfig) -> int:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if cfg.task == "kg":
        require_paths(cfg, "train", "test", "rules")
        dataset = kg_task.load_kg(cfg.train, cfg.valid, cfg.test, cfg.rules)
        for entity in dataset.entities:
            dataset.program.symbols.intern(entity)
        program = dataset.program
        queries = kg_task.training_queries(dataset, cfg.negatives_train, cfg.seed,
                                           cfg.corruption_mode)
    else:
        require_paths(cfg, "program", "queries")
        with open(cfg.program, "r", encoding="utf-8") as fh:
            program = parse_program(fh.read(), occurs_check=cfg.occurs_check)
        queries = _load_labeled_queries(cfg.queries, program)
    params = _scorer_for_program(cfg, program, rng)
    embedder = GoalEmbedder(params)
    optimizer = make_optimizer(cfg.optimizer, cfg.learning_rate, maximize=True)
    opts = DpOptions(max_states=cfg.goal_space_cap)
    dataset_pairs = [(goal, label) for goal, label, _qid in queries]
    rows = []
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.npz")
    for epoch in range(cfg.epochs):
        started = time.monotonic()
        stats = dp_train_epoch(dataset_pairs, program, embedder, optimizer,
                               cfg.max_depth, opts)
        rows.append({
            "epoch": epoch,
            "loss": stats.loss,
            "objective": stats.objective,
            "mean_p_positive": stats.mean_p_positive,
            "mean_p_negative": stats.mean_p_negative,
            "grad_norm": stats.grad_norm,
            "wall_s": time.monotonic() - started,
        })
        save_checkpoint(ckpt_path, params, _program_meta(program))
    write_tsv_log(os.path.join(cfg.out_dir, "train_log.tsv"), rows)
    if cfg.figures:
        render_training_curves(rows, ["loss", "mean_p_positive", "mean_p_negative"],
                               os.path.join(cfg.out_dir, "training_curves.png"),
                               title="exact training")
    final = rows[-1]
    metrics = {
        "mode": "dp-train",
        "task": cfg.task,
        "seed": cfg.seed,
        "epochs_run": len(rows),
        "final_loss": final["loss"],
        "final_objective": final["objective"],
        "final_mean_p_positive": final["mean_p_positive"],
        "final_mean_p_negative": final["mean_p_negative"],
    }
    text = write_metrics(os.path.join(cfg.out_dir, "metrics.txt"), metrics)
    sys.stdout.write(text)
    return EXIT_OK


def _addition_data(cfg: RunConfig):
    train, train_store = addition_task.generate_addition_dataset(
        cfg.train_samples, cfg.seq_len, cfg.feature_dim, cfg.noise_sigma,
        cfg.seed, tag="train")
    test, test_store = addition_task.generate_addition_dataset(
        cfg.test_samples, cfg.seq_len, cfg.feature_dim, cfg.noise_sigma,
        cfg.seed, tag="test")
    # one store so a single classifier serves both splits
    for ref in test_store.refs():
        train_store.put(ref, test_store.vec(ref))
    return train, test, train_store


def _addition_classifier(cfg: RunConfig, store, rng) -> addition_task.DigitClassifier:
    if cfg.checkpoint:
        params, _meta = load_paramset(cfg.checkpoint)
        return addition_task.DigitClassifier(params, store)
    return addition_task.DigitClassifier.create(rng, cfg.feature_dim,
                                                cfg.embedding_dim, store,
                                                init_std=cfg.init_std)


def _dp_train_addition(cfg: RunConfig) -> int:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    train, test, store = _addition_data(cfg)
    classifier = _addition_classifier(cfg, store, rng)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.npz")
    ckpt_meta = {"kind": "digit_classifier", "feature_dim": cfg.feature_dim,
                 "dim": cfg.embedding_dim, "seq_len": cfg.seq_len}
    timer = {"last": time.monotonic()}

    def stamp(row):
        now = time.monotonic()
        row["wall_s"] = now - timer["last"]
        timer["last"] = now
        save_checkpoint(ckpt_path, classifier.params, ckpt_meta)

    rows = addition_task.train_addition_dp(
        train, classifier, cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed,
        test=test, eval_every=cfg.eval_every,
        target_accuracy=cfg.target_accuracy or None, on_epoch=stamp)
    accuracy, mean_p = addition_task.sum_accuracy(test, classifier)
    save_checkpoint(ckpt_path, classifier.params, ckpt_meta)
    write_tsv_log(os.path.join(cfg.out_dir, "train_log.tsv"), rows)
    if cfg.figures:
        render_training_curves(rows, ["loss", "test_accuracy"],
                               os.path.join(cfg.out_dir, "training_curves.png"),
                               title="addition, exact mode")
    metrics = {
        "mode": "dp-train",
        "task": "addition",
        "seed": cfg.seed,
        "seq_len": cfg.seq_len,
        "epochs_run": len(rows),
        "test_sum_accuracy": accuracy,
        "test_mean_p_target": mean_p,
        "digit_separability": addition_task.digit_separability(train, store),
    }
    text = write_metrics(os.path.join(cfg.out_dir, "metrics.txt"), metrics)
    sys.stdout.write(text)
    return EXIT_OK


# --- pg-train ---

def cmd_pg_train(cfg: RunConfig) -> int:
    if cfg.task == "addition":
        return _pg_train_addition(cfg)
    return _pg_train_queries(cfg)


def _pg_train_addition(cfg: RunConfig) -> int:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    train, test, store = _addition_data(cfg)
    classifier = _addition_classifier(cfg, store, rng)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.npz")
    ckpt_meta = {"kind": "digit_classifier", "feature_dim": cfg.feature_dim,
                 "dim": cfg.embedding_dim, "seq_len": cfg.seq_len}
    timer = {"last": time.monotonic()}

    def stamp(row):
        now = time.monotonic()
        row["wall_s"] = now - timer["last"]
        timer["last"] = now
        if row["iteration"] % max(cfg.eval_every, 1) == 0:
            save_checkpoint(ckpt_path, classifier.params, ckpt_meta)

    rows = addition_task.train_addition_pg(
        train, classifier, cfg.iterations, cfg.batch_size, cfg.learning_rate,
        cfg.seed, w_max=cfg.importance_weight_max, use_baseline=cfg.use_baseline,
        test=test, eval_every=cfg.eval_every,
        target_accuracy=cfg.target_accuracy or None, on_iteration=stamp)
    accuracy, mean_p = addition_task.sum_accuracy(test, classifier)
    save_checkpoint(ckpt_path, classifier.params, ckpt_meta)
    write_tsv_log(os.path.join(cfg.out_dir, "train_log.tsv"), rows)
    if cfg.figures:
        render_training_curves(rows, ["mean_weight", "test_accuracy"],
                               os.path.join(cfg.out_dir, "training_curves.png"),
                               title="addition, masked policy gradient")
    metrics = {
        "mode": "pg-train",
        "task": "addition",
        "seed": cfg.seed,
        "seq_len": cfg.seq_len,
        "iterations_run": len(rows),
        "test_sum_accuracy": accuracy,
        "test_mean_p_target": mean_p,
    }
    text = write_metrics(os.path.join(cfg.out_dir, "metrics.txt"), metrics)
    sys.stdout.write(text)
    return EXIT_OK


def _pg_train_queries(cfg: RunConfig) -> int:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    if cfg.task == "kg":
        require_paths(cfg, "train", "test", "rules")
        dataset = kg_task.load_kg(cfg.train, cfg.valid, cfg.test, cfg.rules)
        for entity in dataset.entities:
            dataset.program.symbols.intern(entity)
        program = dataset.program
        queries = kg_task.training_queries(dataset, cfg.negatives_train, cfg.seed,
                                           cfg.corruption_mode)
    else:
        require_paths(cfg, "program", "queries")
        with open(cfg.program, "r", encoding="utf-8") as fh:
            program = parse_program(fh.read(), occurs_check=cfg.occurs_check)
        queries = _load_labeled_queries(cfg.queries, program)
    params = _scorer_for_program(cfg, program, rng)
    policy = SldPolicy(GoalEmbedder(params))
    critic = Critic.create(rng, params)
    ppo_cfg = PPOConfig(clip_range=cfg.clip_range, entropy_coef=cfg.entropy_coef,
                        critic_weight=cfg.critic_weight, epochs=cfg.ppo_epochs,
                        minibatch_size=cfg.minibatch_size,
                        learning_rate=cfg.learning_rate,
                        rollouts_per_query=cfg.rollouts_per_query,
                        kl_stop=cfg.kl_stop, w_max=cfg.importance_weight_max)
    env = ResolutionEnv(program, cfg.max_depth)
    os.makedirs(cfg.out_dir, exist_ok=True)
    ckpt_path = os.path.join(cfg.out_dir, "checkpoint.npz")
    timer = {"last": time.monotonic()}

    def stamp(row):
        now = time.monotonic()
        row["wall_s"] = now - timer["last"]
        timer["last"] = now
        save_checkpoint(ckpt_path, params, _program_meta(program))

    rows = run_ppo_training(env, queries, policy, critic, ppo_cfg, cfg.iterations,
                            rng,
                            queries_per_iteration=cfg.queries_per_iteration or None,
                            on_iteration=stamp)
    save_checkpoint(ckpt_path, params, _program_meta(program))
    write_tsv_log(os.path.join(cfg.out_dir, "train_log.tsv"), rows)
    if cfg.figures:
        render_training_curves(rows,
                               ["mean_return_positive", "mean_return_negative",
                                "entropy", "critic_loss"],
                               os.path.join(cfg.out_dir, "training_curves.png"),
                               title="policy gradient (PPO)")
    final = rows[-1]
    metrics = {
        "mode": "pg-train",
        "task": cfg.task,
        "seed": cfg.seed,
        "iterations_run": len(rows),
        "final_mean_return": final["mean_return"],
        "final_success_rate": final["success_rate"],
    }
    text = write_metrics(os.path.join(cfg.out_dir, "metrics.txt"), metrics)
    sys.stdout.write(text)
    return EXIT_OK


# --- eval ---

def cmd_eval(cfg: RunConfig) -> int:
    if cfg.task == "addition":
        return _eval_addition(cfg)
    if cfg.task == "kg":
        return _eval_kg(cfg)
    return _eval_program(cfg)


def _eval_addition(cfg: RunConfig) -> int:
    require_paths(cfg, "checkpoint")
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    _train, test, store = _addition_data(cfg)
    classifier = _addition_classifier(cfg, store, rng)
    accuracy, mean_p = addition_task.sum_accuracy(test, classifier)
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.figures:
        d1, d2 = addition_task.sample_distributions(test, classifier)
        from .dp import batched_sum_probability

        targets = np.array([s.target for s in test])
        ps = batched_sum_probability(d1, d2, targets)
        render_probability_histogram(ps, os.path.join(cfg.out_dir, "target_probability.png"),
                                     title="p(target sum)")
    metrics = {
        "mode": "eval",
        "task": "addition",
        "seed": cfg.seed,
        "test_sum_accuracy": accuracy,
        "test_mean_p_target": mean_p,
    }
    text = write_metrics(os.path.join(cfg.out_dir, "metrics.txt"), metrics)
    sys.stdout.write(text)
    return EXIT_OK


def _eval_kg(cfg: RunConfig) -> int:
    require_paths(cfg, "train", "test", "rules", "checkpoint")
    dataset = kg_task.load_kg(cfg.train, cfg.valid, cfg.test, cfg.rules)
    for entity in dataset.entities:
        dataset.program.symbols.intern(entity)
    params = _load_aligned_params(cfg.checkpoint, dataset.program)
    priors = None
    if cfg.priors:
        require_paths(cfg, "priors")
        priors = _load_priors(cfg.priors, dataset.program)
    params.ensure_symbol_capacity(len(dataset.program.symbols))
    embedder = GoalEmbedder(params)
    result = kg_task.evaluate_kg(dataset, embedder, cfg.max_depth, cfg.negatives,
                                 cfg.seed, cfg.corruption_mode, priors,
                                 cfg.prior_weight,
                                 dp_opts=DpOptions(max_states=cfg.goal_space_cap))
    os.makedirs(cfg.out_dir, exist_ok=True)
    proof_dir = os.path.join(cfg.out_dir, "proofs")
    os.makedirs(proof_dir, exist_ok=True)
    index_lines = []
    for i, (triple, doc) in enumerate(sorted(result.proofs.items())):
        fname = f"proof_{i:04d}.json"
        with open(os.path.join(proof_dir, fname), "w", encoding="utf-8") as fh:
            fh.write(doc)
        index_lines.append("\t".join((*triple, fname)))
    with open(os.path.join(proof_dir, "index.tsv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(index_lines) + ("\n" if index_lines else ""))
    if cfg.figures:
        render_rank_histogram([r.rank for r in result.results],
                              os.path.join(cfg.out_dir, "rank_histogram.png"))
    metrics = {
        "mode": "eval",
        "task": "kg",
        "seed": cfg.seed,
        "test_queries": len(result.results),
        "negatives_per_query": cfg.negatives,
        "mrr": result.mrr,
        "mean_p_positive": result.mean_p_positive,
        "proofs_exported": len(result.proofs),
    }
    for n, v in sorted(result.hits.items()):
        metrics[f"hits_at_{n}"] = v
    text = write_metrics(os.path.join(cfg.out_dir, "metrics.txt"), metrics)
    sys.stdout.write(text)
    return EXIT_OK


def _eval_program(cfg: RunConfig) -> int:
    require_paths(cfg, "program", "queries", "checkpoint")
    with open(cfg.program, "r", encoding="utf-8") as fh:
        program = parse_program(fh.read(), occurs_check=cfg.occurs_check)
    params = _load_aligned_params(cfg.checkpoint, program)
    queries = _load_labeled_queries(cfg.queries, program)
    params.ensure_symbol_capacity(len(program.symbols))
    embedder = GoalEmbedder(params)
    model = ScorerModel(embedder)
    opts = DpOptions(max_states=cfg.goal_space_cap)
    p_pos, p_neg = [], []
    for goal, label, _qid in queries:
        p = success_probability_dp(goal, program, model, cfg.max_depth, opts)
        (p_pos if label == 1 else p_neg).append(p)
    os.makedirs(cfg.out_dir, exist_ok=True)
    if cfg.figures:
        render_probability_histogram(p_pos + p_neg,
                                     os.path.join(cfg.out_dir, "success_probability.png"))
    metrics = {
        "mode": "eval",
        "task": "program",
        "seed": cfg.seed,
        "queries": len(queries),
        "mean_p_positive": float(np.mean(p_pos)) if p_pos else float("nan"),
        "mean_p_negative": float(np.mean(p_neg)) if p_neg else float("nan"),
    }
    text = write_metrics(os.path.join(cfg.out_dir, "metrics.txt"), metrics)
    sys.stdout.write(text)
    return EXIT_OK


# --- prove ---

def cmd_prove(cfg: RunConfig, query_text: str) -> int:
    require_paths(cfg, "program", "checkpoint")
    with open(cfg.program, "r", encoding="utf-8") as fh:
        program = parse_program(fh.read(), occurs_check=cfg.occurs_check)
    params = _load_aligned_params(cfg.checkpoint, program)
    query = parse_query(query_text, program)
    if query.is_terminal:
        raise ConfigError("query is already terminal")
    params.ensure_symbol_capacity(len(program.symbols))
    embedder = GoalEmbedder(params)
    model = ScorerModel(embedder)
    mc_stderr = None
    try:
        p = success_probability_dp(query, program, model, cfg.max_depth,
                                   DpOptions(max_states=cfg.goal_space_cap))
        method = "dp"
    except GoalSpaceError:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        env = ResolutionEnv(program, cfg.max_depth)
        policy = SldPolicy(embedder)
        wins = 0
        for _ in range(cfg.mc_samples):
            traj = sample_episode(env, env.reset(query, 1), policy, rng)
            wins += int(traj.outcome == "True")
        p = wins / cfg.mc_samples
        mc_stderr = float(np.sqrt(max(p * (1 - p), 1e-12) / cfg.mc_samples))
        method = "monte-carlo"
    proof = find_best_proof(query, program, model, cfg.max_depth,
                            beam_width=cfg.beam_width)
    os.makedirs(cfg.out_dir, exist_ok=True)
    lines = [f"query: {goal_to_text(query, program.symbols)}",
             f"success_probability: {p:.12g} ({method})"]
    if mc_stderr is not None:
        lines.append(f"standard_error: {mc_stderr:.3g}")
    if proof is None:
        lines.append("proof: none found within depth")
        sys.stdout.write("\n".join(lines) + "\n")
        return EXIT_OK
    roots = build_proof_tree(query, proof, program)
    tree_text = render_text(roots)
    with open(os.path.join(cfg.out_dir, "proof.txt"), "w", encoding="utf-8") as fh:
        fh.write(tree_text)
    with open(os.path.join(cfg.out_dir, "proof.json"), "w", encoding="utf-8") as fh:
        fh.write(to_document(roots))
    sys.stdout.write("\n".join(lines) + "\nproof:\n" + tree_text)
    return EXIT_OK


# --- oracle-check ---

def cmd_oracle_check(cfg: RunConfig) -> int:
    results = oracle_check(cfg.seed, n_programs=cfg.oracle_programs,
                           max_depth=min(cfg.max_depth, 8))
    worst = 0.0
    for r in results:
        worst = max(worst, r.abs_diff)
        sys.stdout.write(
            f"seed={r.seed} memory={'on' if r.use_memory else 'off'} "
            f"goals={r.n_goals} dp={r.p_dp:.15f} bruteforce={r.p_bruteforce:.15f} "
            f"diff={r.abs_diff:.3e}\n")
    ok = worst <= cfg.oracle_tolerance
    sys.stdout.write(f"max_abs_diff={worst:.3e} tolerance={cfg.oracle_tolerance:.0e} "
                     f"{'PASS' if ok else 'FAIL'}\n")
    return EXIT_OK if ok else EXIT_DATA


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="dproflog",
        description="Goal-conditioned stochastic SLD resolution: training, "
                    "evaluation, and proof explanation.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in ("dp-train", "pg-train", "eval", "prove", "oracle-check"):
        p = sub.add_parser(mode)
        p.add_argument("--config", default="", help="key = value configuration file")
        p.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")
        if mode == "prove":
            p.add_argument("query", help="goal source text, e.g. 'locIn(it, eu)'")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config or None, args.override)
        cfg.mode = args.mode
        if args.mode == "dp-train":
            return cmd_dp_train(cfg)
        if args.mode == "pg-train":
            return cmd_pg_train(cfg)
        if args.mode == "eval":
            return cmd_eval(cfg)
        if args.mode == "prove":
            return cmd_prove(cfg, args.query)
        return cmd_oracle_check(cfg)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_USAGE
    except (ParseError, ArityError, KGDataError, CheckpointMismatchError,
            UnificationCycleError, NonFiniteGradientError, FloatingPointError,
            KeyError, ValueError) as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except (GoalSpaceError, ResourceLimitError) as exc:
        sys.stderr.write(f"resource cap: {exc}\n")
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
