import csv
import json

import pytest

from modabric.cli import main
from conftest import TINY_CONFIG, run_cli_pipeline


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    return root, run_cli_pipeline(root)


def _rows(data: bytes):
    return list(csv.DictReader(data.decode().splitlines()))


def test_pipeline_writes_expected_files(pipeline):
    _, files = pipeline
    for name in ("data/catalogue.jsonl", "data/synth_spec.json", "attr/attr_model.bin", "attr/resolved_config.json",
                 "attr/history.csv", "eval/metrics.csv", "rec/rec_model.bin", "rec/registry.json",
                 "receval/ranking_all.csv", "receval/runs.csv", "similar.csv", "recs.csv"):
        assert name in files, name
    metrics = _rows(files["eval/metrics.csv"])
    assert list(metrics[0]) == ["attribute", "n_samples", "n_classes", "weighted_f1", "accuracy", "baseline_accuracy"]
    for m in metrics:
        assert f"eval/confusion_{m['attribute']}.csv" in files


def test_ablation_has_four_rows_per_attribute(pipeline):
    _, files = pipeline
    rows = _rows(files["ablate/ablation.csv"])
    by_attr = {}
    for r in rows:
        by_attr.setdefault(r["attribute"], []).append(r["drop"])
    assert by_attr and all(sorted(v) == ["images", "metadata", "none", "text"] for v in by_attr.values())


def test_rec_eval_tables(pipeline):
    _, files = pipeline
    table = _rows(files["receval/ranking_all.csv"])
    assert [r["model"] for r in table] == ["popularity", "cf", "content", "hybrid"]
    assert all(r["runs"] == "2" for r in table)
    assert len(_rows(files["receval/runs.csv"])) == 2 * 4 * 2


def test_predictions_and_recommendations(pipeline):
    _, files = pipeline
    lines = files["pred.jsonl"].decode().splitlines()
    first = json.loads(lines[0])
    assert set(first) == {"product_id", "attributes"}
    for pred in first["attributes"].values():
        assert set(pred) == {"label", "probability"} and 0 < pred["probability"] <= 1
    recs = _rows(files["recs.csv"])
    per_customer = {}
    for r in recs:
        per_customer.setdefault(r["customer_id"], []).append(int(r["rank"]))
    assert per_customer and all(v == [1, 2, 3, 4, 5] for v in per_customer.values())


def test_rec_similar_returns_n(pipeline, capsys):
    root, files = pipeline
    rows = _rows(files["similar.csv"])
    assert len(rows) == 2 * 3 * 3  # two seeds, three modes, n=3
    assert main(["rec-similar", "--model", str(root / "rec"), "--items", "P000001", "-n", "4", "--modes", "cf"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 1 + 4 and all(line.split(",")[2] != "P000001" for line in out[1:])


def test_synth_gen_is_byte_deterministic(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"n_products": 50, "n_customers": 40, "image_dim": 4, "events_per_customer": 8.0}))
    assert main(["synth-gen", "--spec", str(spec), "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
    assert main(["synth-gen", "--spec", str(spec), "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    for p in sorted((tmp_path / "a").iterdir()):
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes(), p.name


@pytest.mark.parametrize("argv", [
    ["rec-similar", "--model", "{root}/rec", "--items", "P000001", "--modes", "bogus"],
    ["rec-similar", "--model", "{root}/nowhere", "--items", "P000001"],
    ["rec-similar", "--model", "{root}/rec", "--items", "NOPE"],
    ["attr-eval", "--model", "{root}/nowhere", "--catalogue", "{root}/data/catalogue.jsonl",
     "--taxonomy", "{root}/data/taxonomy.json", "--out", "{root}/x"],
    ["attr-train", "--catalogue", "{root}/data/catalogue.jsonl", "--taxonomy", "{root}/data/taxonomy.json",
     "--out", "{root}/x", "--config", "{root}/cfg.json", "--set", "attr_plan.bogus=1"],
    ["rec-train", "--catalogue", "{root}/data/catalogue.jsonl", "--interactions", "{root}/data/interactions.csv",
     "--mode", "sideways", "--out", "{root}/x"],
])
def test_usage_errors_exit_2(pipeline, argv, capsys):
    root, _ = pipeline
    assert main([a.format(root=root) for a in argv]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_config_key_exit_2(tmp_path, pipeline):
    root, _ = pipeline
    bad = dict(TINY_CONFIG, attr_model={**TINY_CONFIG["attr_model"], "wings": 2})
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["attr-train", "--catalogue", str(root / "data/catalogue.jsonl"), "--taxonomy",
                 str(root / "data/taxonomy.json"), "--out", str(tmp_path / "x"), "--config", str(tmp_path / "bad.json")]) == 2


def test_invalid_spec_key_exit_2(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"n_products": 10, "bogus": 1}))
    assert main(["synth-gen", "--spec", str(tmp_path / "s.json"), "--out", str(tmp_path / "o")]) == 2


def test_argparse_errors_are_nonzero():
    assert main(["attr-train"]) == 2
    assert main([]) == 2


def test_attr_eval_perfect_on_memorisable_toy(tmp_path):
    rows = []
    for i in range(80):
        colour = ["red", "blue"][i % 2]
        rows.append({"product_id": f"t{i}", "product_type": "dress", "brand": f"b{i % 4}", "division": "d",
                     "title": f"{colour} dress", "description": "", "image_features": [[0.0] * 3] * 4,
                     "attributes": {"colour": colour}})
    (tmp_path / "cat.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    (tmp_path / "tax.json").write_text(json.dumps([{"name": "colour", "applicable_product_types": ["dress"]}]))
    cfg = dict(TINY_CONFIG, attr_plan={"cycles": 100, "eval_every": 100, "min_support": 1})
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    common = ["--catalogue", str(tmp_path / "cat.jsonl"), "--taxonomy", str(tmp_path / "tax.json")]
    assert main(["attr-train", *common, "--out", str(tmp_path / "m"), "--config", str(tmp_path / "cfg.json")]) == 0
    for split in ("train", "test"):
        assert main(["attr-eval", "--model", str(tmp_path / "m"), *common, "--out", str(tmp_path / split),
                     "--split", split]) == 0
        table = _rows((tmp_path / split / "metrics.csv").read_bytes())
        assert [float(r["weighted_f1"]) for r in table] == [1.0]


def test_missing_taxonomy_exit_2(pipeline, tmp_path):
    root, _ = pipeline
    assert main(["attr-train", "--catalogue", str(root / "data/catalogue.jsonl"), "--taxonomy",
                 str(tmp_path / "absent.json"), "--out", str(tmp_path / "x")]) == 2


def test_shipped_configs_load():
    from pathlib import Path

    from modabric.config import load_run_config, read_mapping
    from modabric.data import SynthSpec

    root = Path(__file__).parent.parent / "configs"
    cfg = load_run_config(root / "desk.yaml")
    assert cfg.rec_config().z == 100 and cfg.train_plan().learning_rate == 0.1
    SynthSpec.from_dict(read_mapping(root / "synth_small.yaml"))
