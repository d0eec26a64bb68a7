"""Knowledge-graph completion over a rule program plus fact triples.

Training triples become unit clauses appended after the relational rules;
test triples are scored by their exact success probability under the
learned policy, ranked against sampled corruptions, and explained by their
best proof tree.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dp import DpOptions, ScorerModel, success_probability_dp
from .engine import EnumerationOptions, enumerate_derivations
from .logic import Atom, Clause, Const, Goal, Program
from .parser import parse_program
from .prooftree import build_proof_tree, find_best_proof, to_document
from .scorer import GoalEmbedder

Triple = tuple[str, str, str]


class KGDataError(ValueError):
    pass


@dataclass
class KGDataset:
    entities: list[str]
    relations: list[str]
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    program: Program  # rules first, then train triples as facts
    n_rules: int

    def known_triples(self) -> set[Triple]:
        return set(self.train) | set(self.valid) | set(self.test)


def _read_triples(path: str) -> list[Triple]:
    triples: list[Triple] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise KGDataError(f"{path}:{lineno}: expected head<TAB>relation<TAB>tail")
            triples.append((parts[0], parts[1], parts[2]))
    return triples


def build_program(rules_text: str, facts: Sequence[Triple]) -> tuple[Program, int]:
    """Rules parsed from source, train triples appended as ground facts."""
    rules_program = parse_program(rules_text)
    symbols = rules_program.symbols
    clauses = list(rules_program.clauses)
    for h, r, t in facts:
        pred = symbols.intern(r)
        head = Atom(pred, (Const(symbols.intern(h)), Const(symbols.intern(t))))
        clauses.append(Clause(len(clauses), head, ()))
    program = Program(clauses, symbols,
                      dict(rules_program.pred_arity), dict(rules_program.functor_arity))
    return program, len(rules_program.clauses)


def load_kg(train_path: str, valid_path: str, test_path: str, rules_path: str) -> KGDataset:
    train = _read_triples(train_path)
    valid = _read_triples(valid_path) if valid_path else []
    test = _read_triples(test_path)
    train_set = set(train)
    for name, triples in (("valid", valid), ("test", test)):
        overlap = [t for t in triples if t in train_set]
        if overlap:
            raise KGDataError(f"{name} triples present in the training facts: {overlap[:3]}")
    with open(rules_path, "r", encoding="utf-8") as fh:
        rules_text = fh.read()
    program, n_rules = build_program(rules_text, train)
    entities = sorted({e for h, _r, t in train + valid + test for e in (h, t)})
    relations = sorted({r for _h, r, _t in train + valid + test})
    return KGDataset(entities, relations, train, valid, test, program, n_rules)


def triple_goal(triple: Triple, program: Program) -> Goal:
    h, r, t = triple
    symbols = program.symbols
    return Goal.make([Atom(symbols.intern(r),
                           (Const(symbols.intern(h)), Const(symbols.intern(t))))])


def sample_negatives(triple: Triple, k: int, entities: Sequence[str], mode: str,
                     rng: np.random.Generator,
                     known: Optional[set[Triple]] = None) -> list[Triple]:
    """k uniform corruptions of one slot, excluding known true triples."""
    if k > len(entities) - 1:
        raise ValueError(f"cannot sample {k} corruptions from {len(entities)} entities")
    if mode not in ("head", "tail", "both"):
        raise ValueError("mode must be head, tail, or both")
    known = known or set()
    h, r, t = triple
    out: list[Triple] = []
    seen: set[Triple] = set()
    guard = 0
    while len(out) < k:
        guard += 1
        if guard > 1000 * k:
            raise ValueError("could not sample enough filtered corruptions")
        slot = mode if mode != "both" else ("head" if rng.random() < 0.5 else "tail")
        e = entities[int(rng.integers(len(entities)))]
        cand = (e, r, t) if slot == "head" else (h, r, e)
        if cand == triple or cand in known or cand in seen:
            continue
        seen.add(cand)
        out.append(cand)
    return out


@dataclass
class RankResult:
    query: Triple
    true_score: float
    corruption_scores: np.ndarray
    rank: int  # 1-based, pessimistic ties

    @staticmethod
    def from_scores(query: Triple, true_score: float,
                    corruption_scores: np.ndarray) -> "RankResult":
        higher = int(np.sum(corruption_scores > true_score))
        ties = int(np.sum(corruption_scores == true_score))
        return RankResult(query, true_score, corruption_scores, 1 + higher + ties)


def rank_metrics(results: Sequence[RankResult],
                 ns: Sequence[int] = (1, 3, 10)) -> tuple[float, dict[int, float]]:
    if not results:
        raise ValueError("no rank results")
    ranks = np.array([r.rank for r in results], dtype=np.float64)
    mrr = float(np.mean(1.0 / ranks))
    hits = {n: float(np.mean(ranks <= n)) for n in ns}
    return mrr, hits


SCORE_FLOOR = 1e-300


def query_score(goal: Goal, program: Program, embedder: GoalEmbedder, max_depth: int,
                opts: Optional[DpOptions] = None, prior: Optional[float] = None,
                prior_weight: float = 1.0) -> tuple[float, float]:
    """(p_success, ranking score); priors combine additively in log space."""
    p = success_probability_dp(goal, program, ScorerModel(embedder), max_depth,
                               opts or DpOptions())
    score = float(np.log(max(p, SCORE_FLOOR)))
    if prior is not None:
        score += prior_weight * prior
    return p, score


def goal_key(goal: Goal, program: Program) -> str:
    """Canonical goal text used to look up per-query prior scores."""
    from .parser import goal_to_text

    return goal_to_text(goal, program.symbols)


# --- synthetic kinship benchmark ---

@dataclass
class KinshipSpec:
    n_couples: int = 7
    children_range: tuple[int, int] = (2, 4)
    extra_singles: int = 2
    target_entities: int = 50
    train_uncle_fraction: float = 0.55
    test_uncle_count: int = 20
    parent_drop: float = 0.1
    max_depth: int = 12


KINSHIP_RULES = """\
% brother-of-parent base case and sibling-hop recursion
uncle(X, Y) :- brother(X, Z), parent(Z, Y).
uncle(X, Y) :- brother(Z, Y), uncle(X, Z).
uncle(X, Y) :- sister(Z, Y), uncle(X, Z).
"""


def generate_kinship(seed: int, spec: Optional[KinshipSpec] = None) -> KGDataset:
    """Random two-generation family forest with provable held-out uncle triples.

    Sibling (brother/sister) and parent links become training facts; the
    uncle relation is split between training facts and held-out queries,
    keeping only held-outs provable from the rules plus training facts.
    """
    spec = spec or KinshipSpec()
    rng = np.random.Generator(np.random.PCG64(seed))
    people: list[str] = []
    male: dict[str, bool] = {}

    def new_person() -> str:
        name = f"p{len(people)}"
        people.append(name)
        male[name] = bool(rng.random() < 0.5)
        return name

    sibling_groups: list[list[str]] = []
    for _ in range(spec.n_couples):
        group = [new_person() for _ in range(int(rng.integers(*spec.children_range)))]
        sibling_groups.append(group)
    for _ in range(spec.extra_singles):
        sibling_groups.append([new_person()])

    adults = [p for g in sibling_groups for p in g]
    parent_facts: list[Triple] = []
    child_groups: list[list[str]] = []
    n_families = max(2, len(adults) // 2)
    for _ in range(n_families):
        a, b = rng.choice(len(adults), size=2, replace=False)
        mother, father = adults[int(a)], adults[int(b)]
        kids = [new_person() for _ in range(int(rng.integers(1, 4)))]
        child_groups.append(kids)
        for kid in kids:
            parent_facts.append((mother, "parent", kid))
            parent_facts.append((father, "parent", kid))

    while len(people) < spec.target_entities:
        new_person()  # lone individuals pad the corruption pool

    sibling_facts: list[Triple] = []
    for group in sibling_groups + child_groups:
        for x in group:
            for y in group:
                if x != y:
                    sibling_facts.append((x, "brother" if male[x] else "sister", y))

    # ground-truth uncle closure over the full relation graph
    parents: dict[str, set[str]] = {}
    for p, _r, c in parent_facts:
        parents.setdefault(c, set()).add(p)
    brothers_of: dict[str, set[str]] = {}
    siblings_of: dict[str, set[str]] = {}
    for x, r, y in sibling_facts:
        siblings_of.setdefault(y, set()).add(x)
        if r == "brother":
            brothers_of.setdefault(y, set()).add(x)
    uncle: set[tuple[str, str]] = set()
    for child, ps in parents.items():
        for p in ps:
            for b in brothers_of.get(p, ()):
                uncle.add((b, child))
    changed = True
    while changed:
        changed = False
        for y, sibs in siblings_of.items():
            for z in sibs:
                for x, z2 in list(uncle):
                    if z2 == z and (x, y) not in uncle:
                        uncle.add((x, y))
                        changed = True

    uncle_sorted = sorted(uncle)
    uncle_list = [uncle_sorted[int(i)] for i in rng.permutation(len(uncle_sorted))]
    n_train_uncles = int(len(uncle_list) * spec.train_uncle_fraction)
    train_uncles = [(x, "uncle", y) for x, y in uncle_list[:n_train_uncles]]
    holdout = [(x, "uncle", y) for x, y in uncle_list[n_train_uncles:]]

    kept_parent = [t for t in parent_facts if rng.random() > spec.parent_drop]
    train = sibling_facts + kept_parent + train_uncles
    program, n_rules = build_program(KINSHIP_RULES, train)

    provable: list[Triple] = []
    for t in holdout:
        goal = triple_goal(t, program)
        ds = enumerate_derivations(goal, program, spec.max_depth,
                                   EnumerationOptions(include_false=False, use_memory=True,
                                                      max_derivations=200000))
        if any(d.successful for d in ds):
            provable.append(t)
    provable = [provable[int(i)] for i in rng.permutation(len(provable))]
    test = provable[:spec.test_uncle_count]
    valid = provable[spec.test_uncle_count:spec.test_uncle_count + 5]

    entities = sorted({e for h, _r, t in train for e in (h, t)} | set(people))
    return KGDataset(entities, ["brother", "parent", "sister", "uncle"],
                     train, valid, test, program, n_rules)


def write_kg_files(dataset: KGDataset, out_dir: str) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, triples in (("train", dataset.train), ("valid", dataset.valid),
                          ("test", dataset.test)):
        path = os.path.join(out_dir, f"{name}.tsv")
        with open(path, "w", encoding="utf-8") as fh:
            for h, r, t in triples:
                fh.write(f"{h}\t{r}\t{t}\n")
        paths[name] = path
    rules_path = os.path.join(out_dir, "rules.dpl")
    with open(rules_path, "w", encoding="utf-8") as fh:
        fh.write(KINSHIP_RULES)
    paths["rules"] = rules_path
    return paths


@dataclass
class KGEvalResult:
    mrr: float
    hits: dict[int, float]
    results: list[RankResult]
    proofs: dict[Triple, str]  # JSON proof documents for positives with p > 0
    mean_p_positive: float


def evaluate_kg(dataset: KGDataset, embedder: GoalEmbedder, max_depth: int,
                n_negatives: int, seed: int, mode: str = "tail",
                priors: Optional[dict[str, float]] = None,
                prior_weight: float = 1.0, export_proofs: bool = True,
                dp_opts: Optional[DpOptions] = None) -> KGEvalResult:
    """Rank every test triple against sampled corruptions; export proofs.

    `priors` maps canonical goal text (see goal_key) to a prior score that
    is added in log space with weight `prior_weight`.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    known = dataset.known_triples()
    opts = dp_opts or DpOptions()
    results: list[RankResult] = []
    proofs: dict[Triple, str] = {}
    p_values: list[float] = []
    model = ScorerModel(embedder)
    for triple in dataset.test:
        goal = triple_goal(triple, dataset.program)
        prior = priors.get(goal_key(goal, dataset.program)) if priors else None
        p_true, s_true = query_score(goal, dataset.program, embedder, max_depth, opts,
                                     prior, prior_weight)
        p_values.append(p_true)
        negatives = sample_negatives(triple, n_negatives, dataset.entities, mode, rng, known)
        scores = np.zeros(len(negatives))
        for i, neg in enumerate(negatives):
            neg_goal = triple_goal(neg, dataset.program)
            neg_prior = priors.get(goal_key(neg_goal, dataset.program)) if priors else None
            _p, scores[i] = query_score(neg_goal, dataset.program, embedder, max_depth,
                                        opts, neg_prior, prior_weight)
        results.append(RankResult.from_scores(triple, s_true, scores))
        if export_proofs and p_true > 0.0:
            proof = find_best_proof(goal, dataset.program, model, max_depth)
            if proof is None:
                raise RuntimeError(f"query {triple} has p_success > 0 but no proof was found")
            proofs[triple] = to_document(build_proof_tree(goal, proof, dataset.program))
    mrr, hits = rank_metrics(results)
    return KGEvalResult(mrr, hits, results, proofs,
                        float(np.mean(p_values)) if p_values else 0.0)


def training_queries(dataset: KGDataset, negatives_per_positive: int, seed: int,
                     mode: str = "tail") -> list[tuple[Goal, int, int]]:
    """Labeled PPO queries: train triples of the test relations plus corruptions."""
    rng = np.random.Generator(np.random.PCG64(seed))
    known = dataset.known_triples()
    test_relations = {r for _h, r, _t in dataset.test}
    positives = [t for t in dataset.train if t[1] in test_relations]
    queries: list[tuple[Goal, int, int]] = []
    qid = 0
    for triple in positives:
        queries.append((triple_goal(triple, dataset.program), 1, qid))
        qid += 1
        for neg in sample_negatives(triple, negatives_per_positive, dataset.entities,
                                    mode, rng, known):
            queries.append((triple_goal(neg, dataset.program), 0, qid))
            qid += 1
    return queries
