import numpy as np
import pytest

from modabric.attr import AttrModelConfig, TrainPlan, build_task_datasets, evaluate, run_protocol, train
from modabric.attr.model import build_attr_model, class_weights_from_counts, expected_parameter_count
from modabric.attr.trainer import DroppedTaskWarning, product_split
from modabric.compute.params import sgd_step
from modabric.data import SynthSpec, generate_synthetic
from modabric.data.catalogue import CatalogueArrays, MetaVocab, ProductRecord, TaskDef, encode_records
from modabric.data.vocab import build_lookup
from modabric.errors import ApplicabilityError, ValidationError

SMALL = AttrModelConfig(word_embed_dim=8, conv_filters=8, text_dense_units=8, meta_embed_dim=4,
                        image_fusion_units=8, shared_dense_units=16, max_seq_len=12)


@pytest.fixture(scope="module")
def setup():
    spec = SynthSpec(n_products=600, n_customers=1, image_dim=6, seed=5, mask_rate=0.5)
    data = generate_synthetic(spec)
    entries = data.entries()
    mv = MetaVocab.build(entries)
    return encode_records(entries, mv, SMALL.max_seq_len), data.taxonomy, mv


def _datasets(setup, **kw):
    records, taxonomy, mv = setup
    kw.setdefault("min_support", 5)
    return build_task_datasets(records, taxonomy, mv.product_types, **kw)


def _model(setup, datasets, seed=0, drop=None):
    records, _, mv = setup
    return build_attr_model(SMALL, [d.task for d in datasets], mv.sizes(), records[0].image_shot_features.shape[1],
                            seed=seed, drop=drop)


def test_split_fraction_counts():
    assert product_split(1000, 0.9, 0).sum() == 900
    assert product_split(1000, 0.9, 0).tolist() == product_split(1000, 0.9, 0).tolist()
    assert product_split(1000, 0.9, 0).tolist() != product_split(1000, 0.9, 1).tolist()


def test_round_robin_step_counts(setup):
    ds = _datasets(setup)
    model = _model(setup, ds)
    hist = train(model, ds, TrainPlan(cycles=7, eval_every=7, batch_size=4, learning_rate=0.05), eval_splits=("test",))
    assert hist.steps == {d.task.name: 7 for d in ds}
    assert sum(len(v) for v in hist.losses.values()) == 7 * len(ds)
    assert hist.cycles() == [1, 7]


def _record(pid, ptype, label):
    return ProductRecord(pid, ptype, 1, 1, np.zeros(12, dtype=np.int64), np.zeros((4, 3)), {"colour": label})


def test_min_support_boundary_and_dropped_task():
    types = build_lookup(["dress", "top"])
    dress, top = types.id("dress"), types.id("top")
    recs = [_record(f"p{i}", dress, lab) for i, lab in enumerate(["red"] * 5 + ["blue"] * 4 + ["green"] * 5)]
    recs += [_record("q", top, "red"), _record("m", dress, None)]
    ds = build_task_datasets(recs, [TaskDef("colour", ("dress",))], types, min_support=5)
    assert ds[0].task.label_vocab == ["green", "red"]  # blue has 4 < 5
    assert ds[0].index.size == 10  # the top and the unlabelled dress are excluded
    with pytest.warns(DroppedTaskWarning, match="colour"):
        out = build_task_datasets(recs, [TaskDef("colour", ("dress",), min_support=6)], types)
    assert out == []


def test_split_is_per_product(setup):
    ds = _datasets(setup, seed=3)
    side = {}
    for d in ds:
        for i, t in zip(d.index.tolist(), d.is_train.tolist()):
            assert side.setdefault(i, t) == t
    assert len(side) > len(ds[0].index)


def test_missing_label_isolation(setup):
    """A step on one task leaves every other head bit-identical."""
    ds = _datasets(setup)
    model = _model(setup, ds)
    a = ds[0]
    others = {n: model.store[n].copy() for n in model.store if n.startswith("head/") and not n.startswith(f"head/{a.task.name}/")}
    shared = {n: model.store[n].copy() for n in model.store if n.startswith("shared/")}
    idx, labels = a.split("train")
    model.loss_and_grad(a.arrays.take(idx[:16]), a.task.name, labels[:16])
    sgd_step(model.store, 0.1)
    assert others and all(np.array_equal(model.store[n], v) for n, v in others.items())
    assert any(not np.array_equal(model.store[n], v) for n, v in shared.items())


def test_training_is_deterministic(setup):
    ds = _datasets(setup)
    plan = TrainPlan(cycles=5, eval_every=5, batch_size=8, learning_rate=0.05)
    m1, m2 = _model(setup, ds), _model(setup, ds)
    train(m1, ds, plan, eval_splits=())
    train(m2, ds, plan, eval_splits=())
    assert all(np.array_equal(m1.store[n], m2.store[n]) for n in m1.store)


def test_training_improves_train_f1(setup):
    ds = _datasets(setup)
    model = _model(setup, ds)
    hist = train(model, ds, TrainPlan(cycles=150, eval_every=150, batch_size=32, learning_rate=0.1),
                 eval_splits=("train",))
    assert hist.mean_f1(150, "train") > hist.mean_f1(1, "train") + 0.1


def test_evaluate_perfect_and_constant(setup, monkeypatch):
    ds = _datasets(setup)
    model = _model(setup, ds)
    truth = {d.task.name: d.split("test")[1] for d in ds}

    def perfect(batch, task, chunk=1024):
        lab = truth[task]
        return np.eye(model.tasks[task].n_classes)[lab]

    monkeypatch.setattr(model, "predict_proba", perfect)
    for m in evaluate(model, ds).values():
        assert m.weighted_f1 == 1.0 and m.accuracy == 1.0
        assert np.trace(m.confusion_matrix.counts) == m.n_samples

    def constant(batch, task, chunk=1024):
        p = np.zeros((len(batch), model.tasks[task].n_classes))
        p[:, int(np.bincount(truth[task]).argmax())] = 1.0
        return p

    monkeypatch.setattr(model, "predict_proba", constant)
    for m in evaluate(model, ds).values():
        assert m.accuracy == pytest.approx(m.baseline_accuracy)


@pytest.mark.parametrize("drop", [None, "text", "images", "metadata"])
def test_drop_removes_parameters(setup, drop):
    records, _, mv = setup
    ds = _datasets(setup)
    model = _model(setup, ds, drop=drop)
    expected = expected_parameter_count(SMALL, [d.task.n_classes for d in ds], mv.sizes(),
                                        records[0].image_shot_features.shape[1], drop)
    assert model.store.n_values() == expected
    prefix = {"text": "shared/text/", "images": "shared/image/", "metadata": "shared/meta/"}.get(drop)
    if prefix:
        assert not [n for n in model.store if n.startswith(prefix)]


def test_class_weights_clipped():
    w = class_weights_from_counts([1000, 10, 0])
    assert w[0] == pytest.approx(1010 / 3000) and w[1] == 10.0 and w[2] == 10.0


def test_predict_respects_applicability(setup, tmp_path):
    records, taxonomy, mv = setup
    res = run_protocol(records, taxonomy, mv.product_types, mv.sizes(), SMALL,
                       TrainPlan(cycles=2, eval_every=1, min_support=5, batch_size=4, learning_rate=0.05))
    model = res.model
    task = next(t for t in model.tasks.values() if any(not t.applies_to(r.product_type_id) for r in records))
    outside = next(r for r in records if not task.applies_to(r.product_type_id))
    with pytest.raises(ApplicabilityError):
        model.predict_attribute(outside, task.name)
    assert task.name not in model.predict_all(outside)
    p = model.predict_attribute(next(r for r in records if task.applies_to(r.product_type_id)), task)
    assert p.shape == (task.n_classes,) and abs(p.sum() - 1) < 1e-12
    model.save(tmp_path)
    back = type(model).load(tmp_path)
    arrays = CatalogueArrays.from_records(records[:20])
    assert np.array_equal(back.predict_proba(arrays.take(np.arange(20)), task.name),
                          model.predict_proba(arrays.take(np.arange(20)), task.name))


def test_plan_validation():
    with pytest.raises(ValidationError):
        TrainPlan(cycles=5, eval_every=10)
    with pytest.raises(ValidationError):
        TrainPlan.from_dict({"cyles": 3})
