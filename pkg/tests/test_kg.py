import numpy as np
import pytest

from dproflog import GoalEmbedder, ScorerParams, UniformModel, parse_program, parse_query
from dproflog.dp import ScorerModel
from dproflog.engine import enumerate_derivations
from dproflog.kg import (
    KGDataError,
    KGDataset,
    KinshipSpec,
    RankResult,
    build_program,
    evaluate_kg,
    generate_kinship,
    load_kg,
    rank_metrics,
    sample_negatives,
    training_queries,
    triple_goal,
    write_kg_files,
)
from dproflog.prooftree import (
    build_proof_tree,
    clause_sequence,
    find_best_proof,
    from_document,
    render_text,
    replay_clause_sequence,
    to_document,
)


def test_load_kg_round_trip(tmp_path):
    dataset = generate_kinship(seed=5, spec=KinshipSpec(n_couples=4, test_uncle_count=6))
    paths = write_kg_files(dataset, str(tmp_path))
    loaded = load_kg(paths["train"], paths["valid"], paths["test"], paths["rules"])
    assert loaded.train == dataset.train
    assert loaded.test == dataset.test
    assert loaded.n_rules == 3
    assert len(loaded.program) == loaded.n_rules + len(loaded.train)


def test_load_kg_three_triples(tmp_path):
    train = tmp_path / "train.tsv"
    train.write_text("a\tr\tb\nb\tr\tc\na\tr\tc\n")
    test = tmp_path / "test.tsv"
    test.write_text("c\tr\ta\n")
    rules = tmp_path / "rules.dpl"
    rules.write_text("r(X, Y) :- r(X, Z), r(Z, Y).\n")
    ds = load_kg(str(train), "", str(test), str(rules))
    assert len(ds.train) == 3
    assert ds.entities == ["a", "b", "c"]
    assert ds.relations == ["r"]


def test_load_kg_test_in_train_error(tmp_path):
    train = tmp_path / "train.tsv"
    train.write_text("a\tr\tb\n")
    test = tmp_path / "test.tsv"
    test.write_text("a\tr\tb\n")
    rules = tmp_path / "rules.dpl"
    rules.write_text("r(X, Y) :- r(Y, X).\n")
    with pytest.raises(KGDataError):
        load_kg(str(train), "", str(test), str(rules))


def test_load_kg_malformed_line(tmp_path):
    train = tmp_path / "train.tsv"
    train.write_text("a\tr\n")
    with pytest.raises(KGDataError) as err:
        load_kg(str(train), "", str(train), str(train))
    assert ":1:" in str(err.value)


def test_recursive_uncle_rule_parses():
    program = parse_program("uncle(X, Y) :- brother(Z, Y), uncle(X, Z).")
    (clause,) = program.clauses
    assert program.symbols.name(clause.head.pred) == "uncle"
    assert [program.symbols.name(b.pred) for b in clause.body] == ["brother", "uncle"]


def test_sample_negatives_basics(rng):
    entities = ["a", "b"]
    negs = sample_negatives(("a", "r", "b"), 1, entities, "tail", rng)
    assert negs == [("a", "r", "a")]
    with pytest.raises(ValueError):
        sample_negatives(("a", "r", "b"), 5, entities, "tail", rng)


def test_sample_negatives_filtered(rng):
    entities = [f"e{i}" for i in range(10)]
    known = {("e0", "r", f"e{i}") for i in range(1, 9)}
    negs = sample_negatives(("e0", "r", "e9"), 1, entities, "tail", rng, known)
    assert negs[0] == ("e0", "r", "e0")  # the only unfiltered corruption
    for neg in sample_negatives(("e0", "r", "e9"), 1, entities, "both", rng, known):
        assert neg not in known and neg != ("e0", "r", "e9")


def test_sample_negatives_deterministic():
    entities = [f"e{i}" for i in range(30)]
    a = sample_negatives(("e0", "r", "e1"), 5, entities, "tail",
                         np.random.Generator(np.random.PCG64(3)))
    b = sample_negatives(("e0", "r", "e1"), 5, entities, "tail",
                         np.random.Generator(np.random.PCG64(3)))
    assert a == b


def test_rank_metrics_examples():
    def rank_result(rank):
        return RankResult(("a", "r", "b"), 0.0, np.zeros(1), rank)

    mrr, hits = rank_metrics([rank_result(1)])
    assert mrr == 1.0 and hits[1] == 1.0

    mrr, hits = rank_metrics([rank_result(r) for r in (1, 2, 4)])
    assert mrr == pytest.approx(7 / 12)
    assert hits[1] == pytest.approx(1 / 3)
    assert hits[3] == pytest.approx(2 / 3)
    assert hits[10] == 1.0


def test_rank_pessimistic_ties():
    scores = np.array([0.5, 0.5, 0.1])
    r = RankResult.from_scores(("a", "r", "b"), 0.5, scores)
    assert r.rank == 3  # below both equal-scoring corruptions


def test_kinship_dataset_properties():
    dataset = generate_kinship(seed=11)
    train_set = set(dataset.train)
    assert not any(t in train_set for t in dataset.test)
    assert len(dataset.entities) >= 40
    # every test triple is provable from rules + training facts
    for triple in dataset.test:
        goal = triple_goal(triple, dataset.program)
        ds = enumerate_derivations(goal, dataset.program, 12)
        assert any(d.successful for d in ds), triple


def test_training_queries_labels():
    dataset = generate_kinship(seed=11, spec=KinshipSpec(n_couples=4, test_uncle_count=5))
    queries = training_queries(dataset, negatives_per_positive=2, seed=0)
    labels = [label for _goal, label, _qid in queries]
    assert labels.count(1) * 2 == labels.count(0)


def test_evaluate_kg_uniform_policy(rng):
    dataset = generate_kinship(seed=7, spec=KinshipSpec(n_couples=5, test_uncle_count=8))
    for entity in dataset.entities:
        dataset.program.symbols.intern(entity)
    params = ScorerParams.create(rng, len(dataset.program.symbols), dim=8,
                                 max_arity=max(dataset.program.max_arity, 1))
    result = evaluate_kg(dataset, GoalEmbedder(params), max_depth=10,
                         n_negatives=10, seed=0)
    assert 0.0 < result.mrr <= 1.0
    assert set(result.hits) == {1, 3, 10}
    assert result.mean_p_positive > 0.0
    # positives scored > 0 must carry replayable proofs
    for triple, doc in result.proofs.items():
        roots = from_document(doc)
        goal = triple_goal(triple, dataset.program)
        final = replay_clause_sequence(goal, dataset.program, clause_sequence(roots))
        assert final.is_true


def test_evaluate_kg_priors_shift_ranking(rng):
    dataset = generate_kinship(seed=7, spec=KinshipSpec(n_couples=5, test_uncle_count=4))
    for entity in dataset.entities:
        dataset.program.symbols.intern(entity)
    params = ScorerParams.create(rng, len(dataset.program.symbols), dim=8,
                                 max_arity=max(dataset.program.max_arity, 1))
    base = evaluate_kg(dataset, GoalEmbedder(params), 10, 10, seed=0,
                       export_proofs=False)
    # a huge prior on every corruption of the first test triple tanks its rank
    from dproflog.kg import goal_key

    target = dataset.test[0]
    corruptions = sample_negatives(target, 10, dataset.entities, "tail",
                                   np.random.Generator(np.random.PCG64(0)),
                                   dataset.known_triples())
    priors = {goal_key(triple_goal(t, dataset.program), dataset.program): 1e4
              for t in corruptions}
    priors[goal_key(triple_goal(target, dataset.program), dataset.program)] = 0.0
    shifted = evaluate_kg(dataset, GoalEmbedder(params), 10, 10, seed=0,
                          priors=priors, export_proofs=False)
    rank_before = next(r.rank for r in base.results if r.query == target)
    rank_after = next(r.rank for r in shifted.results if r.query == target)
    assert rank_after > rank_before


def test_untrained_dense_kg_matches_uniform_ranking(rng):
    """When every candidate is provable, a freshly initialized scorer ranks
    the true answer uniformly at random among the 21 candidates."""
    entities = [f"e{i:02d}" for i in range(45)]
    facts = [(e, "node", e) for e in entities]
    rules = "r(X, Y) :- node(X, X), node(Y, Y).\n"
    program, _n = build_program(rules, facts)
    rng2 = np.random.Generator(np.random.PCG64(17))
    test = []
    for head in rng2.permutation(len(entities))[:40]:
        tail = int(rng2.integers(len(entities)))
        test.append((entities[int(head)], "r", entities[tail]))
    test = sorted(set(test))
    dataset = KGDataset(entities, ["node", "r"], facts, [], test, program, 1)
    for e in entities:
        program.symbols.intern(e)
    params = ScorerParams.create(rng, len(program.symbols), dim=16,
                                 max_arity=max(program.max_arity, 1))
    result = evaluate_kg(dataset, GoalEmbedder(params), max_depth=6,
                         n_negatives=20, seed=0, export_proofs=False)
    expectation = float(np.mean(1.0 / np.arange(1, 22)))
    ranks = np.arange(1, 22)
    sigma = float(np.std(1.0 / ranks)) / np.sqrt(len(test))
    assert abs(result.mrr - expectation) <= 3 * sigma, (result.mrr, expectation, sigma)


def test_ppo_kinship_returns_increase_across_checkpoints(rng):
    from dproflog.env import ResolutionEnv
    from dproflog.pg import Critic, PPOConfig, SldPolicy, run_ppo_training

    dataset = generate_kinship(seed=7)
    for e in dataset.entities:
        dataset.program.symbols.intern(e)
    params = ScorerParams.create(rng, len(dataset.program.symbols), dim=32,
                                 max_arity=max(dataset.program.max_arity, 1))
    policy = SldPolicy(GoalEmbedder(params))
    critic = Critic.create(rng, params)
    queries = training_queries(dataset, 1, seed=0)
    env = ResolutionEnv(dataset.program, 12)
    cfg = PPOConfig(learning_rate=3e-4, rollouts_per_query=4)
    rows = run_ppo_training(env, queries, policy, critic, cfg, 25, rng,
                            queries_per_iteration=20)
    window = 5
    checkpoints = [float(np.mean([r["mean_return_positive"]
                                  for r in rows[i * window:(i + 1) * window]]))
                   for i in range(5)]
    assert all(b >= a for a, b in zip(checkpoints, checkpoints[1:])), checkpoints
    assert checkpoints[-1] > checkpoints[0]


# --- proof trees ---

TABLE_STYLE_PROGRAM = """\
uncle(X, Y) :- brother(Z, Y), uncle(X, Z).
uncle(X, Y) :- sister(Z, Y), uncle(X, Z).
brother(2260, 2252).
sister(2262, 2260).
uncle(2266, 2262).
"""


def test_fact_proof_single_leaf():
    program = parse_program("p(a).")
    goal = parse_query("p(a)", program)
    d = next(x for x in enumerate_derivations(goal, program, 4) if x.successful)
    roots = build_proof_tree(goal, d, program)
    assert len(roots) == 1
    assert roots[0].atom_text == "p(a)"
    assert roots[0].children == []


def test_uncle_proof_tree_nesting():
    program = parse_program(TABLE_STYLE_PROGRAM)
    goal = parse_query("uncle(2266, 2252)", program)
    succ = [d for d in enumerate_derivations(goal, program, 8) if d.successful]
    assert len(succ) == 1
    roots = build_proof_tree(goal, succ[0], program)
    (root,) = roots
    assert root.atom_text == "uncle(2266, 2252)"
    assert [c.atom_text for c in root.children] == ["brother(2260, 2252)", "uncle(2266, 2260)"]
    inner = root.children[1]
    assert [c.atom_text for c in inner.children] == ["sister(2262, 2260)", "uncle(2266, 2262)"]
    assert inner.children[1].children == []  # closes at the uncle fact
    text = render_text(roots)
    assert "uncle(2266, 2262)" in text


def test_proof_document_round_trip():
    program = parse_program(TABLE_STYLE_PROGRAM)
    goal = parse_query("uncle(2266, 2252)", program)
    d = next(x for x in enumerate_derivations(goal, program, 8) if x.successful)
    roots = build_proof_tree(goal, d, program)
    doc = to_document(roots)
    parsed = from_document(doc)
    assert clause_sequence(parsed) == [s.clause_id for s in d.steps]
    final = replay_clause_sequence(goal, program, clause_sequence(parsed))
    assert final.is_true


def test_export_failed_derivation_rejected():
    program = parse_program("p(a).")
    goal = parse_query("p(b)", program)
    d = enumerate_derivations(goal, program, 4)[0]
    assert not d.successful
    with pytest.raises(ValueError):
        build_proof_tree(goal, d, program)


def test_proof_tree_with_builtins():
    program = parse_program("double(X, Y) :- Y is X + X. ok(X) :- double(X, S), S < 10.")
    goal = parse_query("ok(3)", program)
    d = next(x for x in enumerate_derivations(goal, program, 8) if x.successful)
    roots = build_proof_tree(goal, d, program)
    final = replay_clause_sequence(goal, program, clause_sequence(roots))
    assert final.is_true


def test_find_best_proof_prefers_high_probability(rng):
    program = parse_program("p :- q. p :- r. q. r.")
    goal = parse_query("p", program)
    params = ScorerParams.create(rng, len(program.symbols), dim=6,
                                 max_arity=max(program.max_arity, 1))
    model = ScorerModel(GoalEmbedder(params))
    best = find_best_proof(goal, program, model, 6, beam_width=4)
    assert best is not None and best.successful
    from dproflog.engine import derivation_probability

    succ = [d for d in enumerate_derivations(goal, program, 6) if d.successful]
    probs = [derivation_probability(d, program, model) for d in succ]
    best_prob = derivation_probability(best, program, model)
    assert best_prob == pytest.approx(max(probs))


def test_find_best_proof_none_for_unprovable():
    program = parse_program("p :- q.")
    goal = parse_query("p", program)
    assert find_best_proof(goal, program, UniformModel(), 6) is None
