"""Seeded random definite programs for oracle-equivalence checking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dp import DpOptions, ScorerModel, success_probability_dp
from .engine import EnumerationOptions, candidate_next_goals, success_probability_bruteforce
from .logic import Goal, Program
from .parser import parse_program, parse_query
from .scorer import GoalEmbedder, ScorerParams


def random_program_text(rng: np.random.Generator, n_preds: int = 4, n_consts: int = 3,
                        n_clauses: int = 7, max_body: int = 2) -> str:
    """Unary-predicate program mixing ground facts and chain/conjunction rules."""
    lines = []
    for _ in range(n_clauses):
        head_pred = f"p{rng.integers(n_preds)}"
        if rng.random() < 0.45:
            lines.append(f"{head_pred}(c{rng.integers(n_consts)}).")
        else:
            body_len = int(rng.integers(1, max_body + 1))
            body = []
            for _ in range(body_len):
                pred = f"p{rng.integers(n_preds)}"
                if rng.random() < 0.25:
                    body.append(f"{pred}(c{rng.integers(n_consts)})")
                else:
                    body.append(f"{pred}(X)")
            lines.append(f"{head_pred}(X) :- {', '.join(body)}.")
    return "\n".join(lines) + "\n"


def reachable_goal_count(query: Goal, program: Program, max_depth: int,
                         include_false: bool = True, cap: int = 10000) -> int:
    """Distinct non-terminal goals reachable within the depth budget."""
    seen = {query}
    frontier = [query]
    depth = 0
    while frontier and depth < max_depth:
        nxt = []
        for goal in frontier:
            cands = candidate_next_goals(goal, program, include_false=include_false)
            for cand in cands.entries:
                child = cand.next_goal
                if not child.is_terminal and child not in seen:
                    seen.add(child)
                    nxt.append(child)
                    if len(seen) > cap:
                        return len(seen)
        frontier = nxt
        depth += 1
    return len(seen)


def random_program_and_query(rng: np.random.Generator, max_depth: int = 8,
                             max_goals: int = 50, min_goals: int = 2,
                             require_provable: bool = False
                             ) -> tuple[Program, Goal]:
    """Sample programs until the query's reachable goal space fits the bound."""
    from .engine import enumerate_derivations

    while True:
        text = random_program_text(rng)
        program = parse_program(text)
        query = parse_query(f"p{rng.integers(4)}(c{rng.integers(3)})", program)
        count = reachable_goal_count(query, program, max_depth, cap=max_goals + 1)
        if not min_goals <= count <= max_goals:
            continue
        if require_provable:
            ds = enumerate_derivations(query, program, max_depth)
            if not any(d.successful for d in ds):
                continue
        return program, query


@dataclass
class OracleCheckResult:
    seed: int
    use_memory: bool
    p_dp: float
    p_bruteforce: float
    n_goals: int

    @property
    def abs_diff(self) -> float:
        return abs(self.p_dp - self.p_bruteforce)


def oracle_check(seed: int, n_programs: int = 20, max_depth: int = 8,
                 dim: int = 8) -> list[OracleCheckResult]:
    """DP vs brute-force success probability on random programs with random
    scorer parameters, alternating the visited-goal memory rule."""
    results = []
    for k in range(n_programs):
        rng = np.random.Generator(np.random.PCG64(seed + k))
        program, query = random_program_and_query(rng, max_depth=max_depth)
        params = ScorerParams.create(rng, len(program.symbols), dim,
                                     max_arity=max(program.max_arity, 1))
        embedder = GoalEmbedder(params)
        model = ScorerModel(embedder)
        use_memory = k % 2 == 0
        p_dp = success_probability_dp(
            query, program, model, max_depth,
            DpOptions(include_false=True, use_memory=use_memory))
        p_bf = success_probability_bruteforce(
            query, program, model, max_depth,
            EnumerationOptions(include_false=True, use_memory=use_memory))
        results.append(OracleCheckResult(
            seed + k, use_memory, p_dp, p_bf,
            reachable_goal_count(query, program, max_depth)))
    return results
