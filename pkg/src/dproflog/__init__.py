"""Goal-conditioned stochastic SLD resolution.

A definite-logic-program prover whose per-step clause choices follow a
learned softmax policy over goal embeddings, trained either exactly by
dynamic programming over the proof-space MDP or approximately by policy
gradients, with bundled digit-addition and knowledge-graph benchmarks.
"""

__version__ = "0.1.0"

from .engine import (
    CandidateSet,
    Derivation,
    UniformModel,
    candidate_next_goals,
    enumerate_derivations,
    derivation_probability,
    resolve_step,
    success_probability_bruteforce,
)
from .env import FALSE_ACTION, ClauseChoice, ResolutionEnv
from .dp import (
    DpOptions,
    ScorerModel,
    dp_train_epoch,
    mnist_sum_probability,
    success_probability_dp,
    value,
)
from .logic import (
    Atom,
    Clause,
    Const,
    Goal,
    Payload,
    Program,
    Struct,
    Subst,
    SymbolTable,
    Var,
    rename_apart,
    unify,
)
from .parser import parse_program, parse_query, program_to_text
from .pg import PPOConfig, importance_weight, ppo_update, reinforce_update, sample_episode
from .scorer import (
    GoalEmbedder,
    ScorerParams,
    SubsymbolicFeatureStore,
    TargetTree,
    construct_universal_embeddings,
    tree_softmax_probabilities,
)

__all__ = [
    "Atom", "CandidateSet", "Clause", "ClauseChoice", "Const", "Derivation",
    "DpOptions", "FALSE_ACTION", "Goal", "GoalEmbedder", "PPOConfig", "Payload",
    "Program", "ResolutionEnv", "ScorerModel", "ScorerParams", "Struct", "Subst",
    "SubsymbolicFeatureStore", "SymbolTable", "TargetTree", "UniformModel", "Var",
    "candidate_next_goals", "construct_universal_embeddings", "derivation_probability",
    "dp_train_epoch", "enumerate_derivations", "importance_weight",
    "mnist_sum_probability", "parse_program", "parse_query", "ppo_update",
    "program_to_text", "reinforce_update", "rename_apart", "resolve_step",
    "sample_episode", "success_probability_bruteforce", "success_probability_dp",
    "tree_softmax_probabilities", "unify", "value",
]
