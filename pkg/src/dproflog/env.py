"""Episodic environment over SLD resolution.

States carry the current goal plus that episode's visited-goal memory;
transitions are deterministic resolution steps; the reward is terminal-only
(+1 / -1 for proving a positive / negative query, 0 otherwise). Labels are
held by the environment for reward computation and never reach the policy.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

from .engine import (
    CandidateSet,
    OUTCOME_DEPTH,
    OUTCOME_FALSE,
    OUTCOME_TRUE,
    legal_candidates,
)
from .logic import FALSE_GOAL, Goal, Program


@dataclass(frozen=True)
class EnvState:
    goal: Goal
    visited: frozenset[Goal]
    depth: int
    label: int
    query_id: int = 0


@dataclass(frozen=True)
class ClauseChoice:
    index: int  # position within the candidate set's clause entries


class _FalseAction:
    __slots__ = ()

    def __repr__(self) -> str:
        return "FalseAction"


FALSE_ACTION = _FalseAction()
Action = Union[ClauseChoice, _FalseAction]


@dataclass(frozen=True)
class StepResult:
    next_state: EnvState
    reward: float
    done: bool
    outcome: Optional[str]


class IllegalActionError(ValueError):
    pass


def trace_record(state: EnvState, support_index: int, reward: float) -> str:
    """One line of the optional episode trace: query, step, action, goal, reward."""
    return (f"{state.query_id}\t{state.depth}\t{support_index}\t"
            f"{hash(state.goal):x}\t{reward:g}")


class ResolutionEnv:
    """One environment per program; episodes are independent given a reset."""

    def __init__(self, program: Program, max_depth: int) -> None:
        if max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        self.program = program
        self.max_depth = max_depth

    def reset(self, query: Goal, label: int, query_id: int = 0) -> EnvState:
        if query.is_terminal:
            raise ValueError("cannot start an episode at a terminal goal")
        if label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        return EnvState(query, frozenset((query,)), 0, label, query_id)

    def legal_actions(self, state: EnvState) -> CandidateSet:
        """Memory-filtered candidates; the False action is always available
        (an empty clause set still leaves False)."""
        return legal_candidates(state.goal, state.visited, self.program,
                                include_false=True, use_memory=True)

    def action_index(self, cands: CandidateSet, action: Action) -> int:
        if isinstance(action, ClauseChoice):
            if not 0 <= action.index < len(cands.entries):
                raise IllegalActionError(f"clause choice {action.index} out of range")
            return action.index
        if cands.false_index() is None:
            raise IllegalActionError("False action unavailable")
        return cands.false_index()

    def step(self, state: EnvState, action: Action) -> StepResult:
        cands = self.legal_actions(state)
        if isinstance(action, ClauseChoice):
            idx = self.action_index(cands, action)
            next_goal = cands.entries[idx].next_goal
        else:
            self.action_index(cands, action)  # validates availability
            next_goal = FALSE_GOAL
        return self._finish(state, next_goal)

    def step_support(self, state: EnvState, cands: CandidateSet, support_index: int) -> StepResult:
        """Step by index into the support vector (False is the last slot)."""
        goals = cands.support_goals()
        if not 0 <= support_index < len(goals):
            raise IllegalActionError(f"support index {support_index} out of range")
        return self._finish(state, goals[support_index])

    def _finish(self, state: EnvState, next_goal: Goal) -> StepResult:
        depth = state.depth + 1
        if next_goal.is_true:
            reward = 2.0 * state.label - 1.0
            nxt = EnvState(next_goal, state.visited, depth, state.label, state.query_id)
            return StepResult(nxt, reward, True, OUTCOME_TRUE)
        if next_goal.is_false:
            nxt = EnvState(next_goal, state.visited, depth, state.label, state.query_id)
            return StepResult(nxt, 0.0, True, OUTCOME_FALSE)
        nxt = EnvState(next_goal, state.visited | {next_goal}, depth, state.label, state.query_id)
        if depth >= self.max_depth:
            return StepResult(nxt, 0.0, True, OUTCOME_DEPTH)
        return StepResult(nxt, 0.0, False, None)
