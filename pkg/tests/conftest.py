import numpy as np
import pytest

from modabric.data import SynthSpec, generate_synthetic, write_synthetic

FD_STEP = 1e-5
N_INSTANCES = 100


def numeric_grad(f, x, h=FD_STEP, coords=None):
    """Central differences of scalar ``f()`` w.r.t. ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(len(coords))
    for j, i in enumerate(coords):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        out[j] = (up - down) / (2 * h)
    return out


def rel_error(analytic, numeric):
    a, n = np.ravel(analytic), np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A tiny synthetic dataset on disk, shared by loader and CLI tests."""
    spec = SynthSpec(n_products=300, n_customers=200, image_dim=8, events_per_customer=15.0, seed=3)
    data = generate_synthetic(spec)
    out = tmp_path_factory.mktemp("synth")
    paths = write_synthetic(data, out)
    return spec, data, paths


TINY_SPEC = {"n_products": 240, "n_customers": 240, "image_dim": 6, "events_per_customer": 15.0, "seed": 4}
TINY_CONFIG = {
    "seed": 1,
    "attr_model": {"word_embed_dim": 8, "conv_filters": 8, "text_dense_units": 8, "meta_embed_dim": 4,
                   "image_fusion_units": 8, "shared_dense_units": 16, "max_seq_len": 16,
                   "learning_rate": 0.1, "batch_size": 32},
    "attr_plan": {"cycles": 10, "eval_every": 5, "min_support": 5},
    "rec": {"k": 8, "z": 10, "batch_size": 64, "max_epochs": 2, "learning_rate": 0.3, "clip_norm": 1.0},
}


def run_cli_pipeline(root):
    """Every CLI command once on tiny synthetic data; returns {relative path: bytes} of all outputs."""
    import json
    from pathlib import Path

    from modabric.cli import main

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "spec.json").write_text(json.dumps(TINY_SPEC))
    (root / "cfg.json").write_text(json.dumps(TINY_CONFIG))
    d, cfg = root / "data", str(root / "cfg.json")
    cat, tax, inter = str(d / "catalogue.jsonl"), str(d / "taxonomy.json"), str(d / "interactions.csv")
    steps = [
        ["synth-gen", "--spec", str(root / "spec.json"), "--out", str(d)],
        ["attr-train", "--catalogue", cat, "--taxonomy", tax, "--out", str(root / "attr"), "--config", cfg],
        ["attr-eval", "--model", str(root / "attr"), "--catalogue", cat, "--taxonomy", tax, "--out", str(root / "eval")],
        ["attr-predict", "--model", str(root / "attr"), "--catalogue", cat, "--out", str(root / "pred.jsonl")],
        ["attr-ablate", "--catalogue", cat, "--taxonomy", tax, "--out", str(root / "ablate"), "--config", cfg],
        ["rec-train", "--catalogue", cat, "--interactions", inter, "--windows", str(d / "windows.json"),
         "--predictions", str(root / "pred.jsonl"), "--mode", "hybrid", "--out", str(root / "rec"), "--config", cfg],
        ["rec-eval", "--catalogue", cat, "--interactions", inter, "--windows", str(d / "windows.json"),
         "--out", str(root / "receval"), "--config", cfg, "--runs", "2"],
        ["rec-similar", "--model", str(root / "rec"), "--items", "P000001,P000002", "--out", str(root / "similar.csv")],
        ["rec-recommend", "--model", str(root / "rec"), "--interactions", inter, "--out", str(root / "recs.csv"), "-n", "5"],
    ]
    for argv in steps:
        code = main(argv)
        assert code == 0, (argv[0], code)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
