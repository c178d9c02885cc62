import math

import numpy as np
import pytest

from modabric.compute.rng import RngState
from modabric.data import load_catalogue, load_interactions, temporal_split
from modabric.data.catalogue import MetaVocab
from modabric.data.interactions import InteractionLog
from modabric.errors import ColdUserError, DegenerateVectorError, SamplingError, ValidationError
from modabric.recsys import (
    RecTrainConfig,
    build_item_features,
    build_rec_model,
    evaluate_ranking,
    normalize_features,
    popularity_ranking,
    train_rec,
)
from modabric.recsys.features import ItemFeatures
from modabric.recsys.model import WMRB_EPS
from modabric.recsys.train import SKIP, CustomerTimeline, sample_negatives, sample_training_instance

EXACT = 1e-12


def _model(n_items=20, n_feat=6, k=4, mode="hybrid", seed=0, hidden=0):
    rng = np.random.default_rng(seed)
    m = build_rec_model([f"p{i}" for i in range(n_items)], n_feat, k, mode, seed=seed, content_hidden=hidden)
    m.store["rec/cf"][...] = rng.normal(size=(n_items, k))
    m.store["rec/content/b"][...] = rng.normal(size=k)
    return m, rng.normal(size=(n_items, n_feat))


# -- features -------------------------------------------------------------------


def test_normalise_examples():
    assert np.allclose(normalize_features(np.array([[3.0, 4.0]])), [[2 ** -0.5, 2 ** -0.5]], atol=EXACT)
    assert np.array_equal(normalize_features(np.zeros((3, 2))), np.zeros((3, 2)))
    with pytest.raises(Exception):
        normalize_features(np.array([[np.nan]]))


def test_normalise_row_norms():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(200, 30)) * (rng.random((200, 30)) < 0.3)
    m[5] = 0.0
    m[:, 7] = 0.0
    out = normalize_features(m)
    norms = np.linalg.norm(out, axis=1)
    assert np.all((np.abs(norms - 1) <= 1e-9) | (norms == 0)) and norms[5] == 0


def test_features_round_trip(tmp_path, small_synth):
    _, _, paths = small_synth
    entries, _ = load_catalogue(paths["catalogue"])
    feats = build_item_features(entries, MetaVocab.build(entries))
    feats.save(tmp_path / "f")
    back = ItemFeatures.load(tmp_path / "f")
    assert np.array_equal(back.matrix, feats.matrix) and back.blocks == feats.blocks
    assert back.product_ids == [e.product_id for e in entries]


# -- vectors and scores ---------------------------------------------------------------


@pytest.mark.parametrize("hidden", [0, 5])
def test_hybrid_decomposition(hidden):
    m, f = _model(hidden=hidden)
    h, c, t = (m.item_vectors(f, mode=x) for x in ("hybrid", "cf_only", "content_only"))
    assert np.max(np.abs(h - (c + t))) <= EXACT


def test_zeroed_parts():
    m, f = _model()
    m.store["rec/content/W"][...] = 0
    m.store["rec/content/b"][...] = 0
    assert np.array_equal(m.item_vectors(f), m.item_vectors(f, mode="cf_only"))
    m, f = _model()
    m.store["rec/cf"][3] = 0
    assert np.array_equal(m.item_vector(3, f), m.item_vector(3, f, "content_only"))


def test_user_vector_and_score_oracles():
    m, f = _model()
    items = [1, 4, 4, 9, 11, 2, 0]
    vecs = [m.item_vector(i, f) for i in items]
    total = np.zeros(m.k)
    for v in vecs:
        total = total + v
    vu = m.user_vector(items, f)
    assert np.max(np.abs(vu - total / len(items))) <= EXACT
    assert np.array_equal(m.user_vector([3], f), m.item_vector(3, f))
    for i in range(m.n_items):
        vi = m.item_vector(i, f)
        assert abs(m.score(vu, i, f) - sum(a * b for a, b in zip(vu, vi))) <= EXACT
    with pytest.raises(ColdUserError):
        m.user_vector([], f)
    with pytest.raises(IndexError):
        m.item_vector(20, f)


# -- WMRB spot checks -----------------------------------------------------------------


def test_wmrb_equal_scores_and_floor():
    m, f = _model(n_items=8)
    m.store["rec/cf"][...] = 0
    m.store["rec/content/W"][...] = 0
    m.store["rec/content/b"][...] = 0
    loss, _ = m.wmrb_loss([0, 1], 2, [3, 4, 5], f)
    assert abs(loss - math.log(3 + WMRB_EPS)) <= EXACT
    # positive scored far above every negative: all hinges are zero
    m.store["rec/cf"][[0, 1, 2], 0] = 5.0
    loss, grads = m.wmrb_loss([0, 1], 2, [3, 4, 5], f)
    assert abs(loss - math.log(WMRB_EPS)) <= EXACT
    assert all(not np.any(g) for g in grads.values())


def test_wmrb_rejects_positive_among_negatives():
    m, f = _model()
    with pytest.raises(SamplingError):
        m.wmrb_loss([0, 1], 2, [2, 3], f)


# -- sampling ---------------------------------------------------------------------


def test_instance_sampling_threshold():
    rng = np.random.default_rng(0)
    tl = CustomerTimeline(0, np.array([10, 11, 12, 13, 14, 15]), np.arange(6))
    c, inputs, pos = sample_training_instance(tl, 15, 5, 5, rng)
    assert sorted(inputs.tolist()) == [10, 11, 12, 13, 14] and pos == 15
    short = CustomerTimeline(0, np.array([10, 11, 12, 13, 14]), np.arange(5))
    assert sample_training_instance(short, 14, 4, 5, rng) is SKIP


def test_inputs_precede_positive():
    rng = np.random.default_rng(1)
    for _ in range(300):
        n = int(rng.integers(6, 20))
        ts = np.sort(rng.integers(0, 10, size=n))
        tl = CustomerTimeline(0, np.arange(n), ts)
        j = int(rng.integers(0, n))
        drawn = sample_training_instance(tl, j, int(ts[j]), 5, rng)
        if drawn is SKIP:
            assert (ts < ts[j]).sum() < 5
            continue
        assert np.all(ts[drawn[1]] < ts[j]) and len(set(drawn[1].tolist())) == 5


def test_negatives_pool_exact_and_disjoint():
    rng = np.random.default_rng(2)
    pool = np.arange(10)
    got = sample_negatives(pool, [2, 5, 7], 7, rng)
    assert sorted(got.tolist()) == [0, 1, 3, 4, 6, 8, 9]
    for _ in range(200):
        seen = rng.choice(30, size=int(rng.integers(0, 10)), replace=False)
        z = sample_negatives(np.arange(30), seen, 8, rng)
        assert len(set(z.tolist())) == 8 and not set(z.tolist()) & set(seen.tolist())
    with pytest.raises(SamplingError, match="smaller z"):
        sample_negatives(pool, [2, 5, 7], 8, rng)


def test_negatives_uniform():
    rng = RngState(0).stream("chi")
    draws = 100_000
    counts = np.zeros(20)
    for _ in range(draws // 4):
        counts[sample_negatives(np.arange(20), [], 4, rng)] += 1
    p = 1 / 20
    n = draws
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)
    chi2 = float(((counts - n * p) ** 2 / (n * p)).sum())
    assert chi2 < 43.8  # 99.9th percentile of chi-square with 19 dof


# -- ranking ------------------------------------------------------------------------


def test_recommend_matches_full_sort():
    rng = np.random.default_rng(3)
    m, f = _model(n_items=100, seed=3)
    m.store["rec/cf"][40] = m.store["rec/cf"][41]
    f[40] = f[41]  # exact tie between 40 and 41
    for _ in range(20):
        hist = rng.choice(100, size=5).tolist()
        excl = set(rng.choice(100, size=10, replace=False).tolist())
        vu = m.user_vector(hist, f)
        oracle = sorted((i for i in range(100) if i not in excl), key=lambda i: (-m.score(vu, i, f), i))[:10]
        got = m.recommend(hist, f, 10, exclusions=excl)
        assert [s.index for s in got] == oracle
        assert all(abs(s.score - m.score(vu, s.index, f)) <= EXACT for s in got)
    assert len(m.recommend([1], f, 500)) == 100
    with pytest.raises(ValidationError):
        m.recommend([1], f, 0)
    fallback = m.recommend([], f, 3, exclusions=[5], popularity=np.array([5, 2, 9, 1]))
    assert [s.index for s in fallback] == [2, 9, 1]


def test_similar_items_oracle_and_edge_cases():
    m, f = _model(n_items=50, seed=4)
    V = m.item_vectors(f)
    for seed_item in range(0, 50, 7):
        cos = [(float(V[seed_item] @ V[j] / (np.linalg.norm(V[seed_item]) * np.linalg.norm(V[j]))), j)
               for j in range(50) if j != seed_item]
        oracle = [j for _, j in sorted(cos, key=lambda t: (-t[0], t[1]))[:3]]
        assert [s.index for s in m.similar_items(seed_item, f)] == oracle
    m.store["rec/cf"][30] = m.store["rec/cf"][10]
    f[30] = f[10]
    top = m.similar_items(10, f)[0]
    assert top.index == 30 and abs(top.score - 1.0) < 1e-12


def test_similar_items_negated_and_degenerate():
    m = build_rec_model(["a", "b", "c"], 1, 2, "cf_only")
    m.store["rec/cf"][...] = [[1.0, 0.0], [-1.0, 0.0], [1.0, 1.0]]
    f = np.zeros((3, 1))
    got = m.similar_items(0, f, n=2)
    assert [s.index for s in got] == [2, 1] and got[-1].score == pytest.approx(-1.0)
    scaled = build_rec_model(["a", "b", "c"], 1, 2, "cf_only")
    scaled.store["rec/cf"][...] = m.store["rec/cf"] * 3.5
    assert [s.index for s in scaled.similar_items(0, f, n=2)] == [2, 1]
    m.store["rec/cf"][0] = 0
    with pytest.raises(DegenerateVectorError):
        m.similar_items(0, f)


def _log(items, customers=None):
    items = np.asarray(items)
    n = items.size
    customers = np.zeros(n, dtype=np.int64) if customers is None else np.asarray(customers)
    return InteractionLog(customers, items, np.arange(n, dtype=np.int64), np.full(n, 2, dtype=np.int8),
                          ["c"] * (int(customers.max()) + 1), ["a", "b", "c", "d"][: int(items.max()) + 1])


def test_popularity_ranking():
    assert popularity_ranking(_log([0, 0, 0, 1, 2, 2])).tolist() == [0, 2, 1]
    assert popularity_ranking(_log([2, 1, 0])).tolist() == [0, 1, 2]
    rng = np.random.default_rng(5)
    for _ in range(50):
        items = rng.integers(0, 4, size=30)
        counts = {}
        for i in items.tolist():
            counts[i] = counts.get(i, 0) + 1
        oracle = sorted(range(int(items.max()) + 1), key=lambda i: (-counts.get(i, 0), i))
        assert popularity_ranking(_log(items)).tolist() == oracle


# -- training -----------------------------------------------------------------------


@pytest.fixture(scope="module")
def rec_data(small_synth):
    spec, _, paths = small_synth
    entries, _ = load_catalogue(paths["catalogue"])
    ev, _ = load_interactions(paths["interactions"], [e.product_id for e in entries])
    split = temporal_split(ev, spec.windows())
    feats = normalize_features(build_item_features(entries, MetaVocab.build(entries), split))
    return split, feats


CFG = dict(k=8, z=10, batch_size=64, max_epochs=6, learning_rate=0.3, clip_norm=1.0, seed=1)


def test_cf_only_leaves_content_untouched(rec_data):
    split, feats = rec_data
    init = build_rec_model(feats.product_ids, feats.dim, 8, "cf_only", RngState(1).child_seed("init"))
    model, _ = train_rec(split, feats, RecTrainConfig(**CFG), "cf_only")
    for name in ("rec/content/W", "rec/content/b"):
        assert np.array_equal(model.store[name], init.store[name])
    assert not np.array_equal(model.store["rec/cf"], init.store["rec/cf"])
    content, _ = train_rec(split, feats, RecTrainConfig(**CFG), "content_only")
    assert np.array_equal(content.store["rec/cf"], init.store["rec/cf"])


def test_training_loss_decreases_and_is_deterministic(rec_data):
    split, feats = rec_data
    m1, h1 = train_rec(split, feats, RecTrainConfig(**CFG), "hybrid")
    m2, h2 = train_rec(split, feats, RecTrainConfig(**CFG), "hybrid")
    assert h1.epoch_loss[-1] < h1.epoch_loss[0]
    assert h1.epoch_loss == h2.epoch_loss and h1.val_precision == h2.val_precision
    assert all(np.array_equal(m1.store[n], m2.store[n]) for n in m1.store)
    assert len(h1.val_precision) == CFG["max_epochs"] and h1.best_epoch == 1 + int(np.argmax(h1.val_precision))


def test_cold_items_score_through_content(rec_data):
    split, feats = rec_data
    model, _ = train_rec(split, feats, RecTrainConfig(**CFG), "hybrid")
    cold = split.cold_items()
    assert cold.size
    content = model.item_vectors(feats, cold, "content_only")
    assert np.all(np.linalg.norm(content, axis=1) > 0)


def test_evaluate_ranking_runs_for_every_method(rec_data):
    split, feats = rec_data
    pop = evaluate_ranking(None, split, None)
    model, _ = train_rec(split, feats, RecTrainConfig(**CFG), "hybrid")
    hyb = evaluate_ranking(model, split, feats)
    assert pop.n_customers == hyb.n_customers > 0
    assert 0 <= pop.precision <= 1 and 0 <= hyb.recall <= 1


def test_model_save_load(rec_data, tmp_path):
    split, feats = rec_data
    model, _ = train_rec(split, feats, RecTrainConfig(**{**CFG, "max_epochs": 1}), "hybrid")
    model.save(tmp_path)
    back = type(model).load(tmp_path)
    assert back.product_ids == model.product_ids and back.mode == "hybrid"
    assert np.array_equal(back.item_vectors(feats), model.item_vectors(feats))
