import csv
import io
import json

import numpy as np
import pytest

from swavdesk.checkpoint import load_checkpoint, save_checkpoint, state_to_checkpoint
from swavdesk.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from swavdesk.config import SCHEMA, format_config, parse_config
from swavdesk.data import Dataset, SyntheticConfig, generate_synthetic, save_dataset
from swavdesk.numerics import ConfigError, Rng
from swavdesk.training import TrainConfig, init_state

TINY = """\
epochs = 3
batch_size = 32
k_prototypes = 6
hidden_dims = 16
repr_dim = 8
proj_hidden_dim = 8
embed_dim = 6
data.n_classes = 3
data.raw_dim = 10
data.n_samples = 128
checkpoint_every = 1
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def json_lines(path):
    lines = [line for line in path.read_text().splitlines() if line.strip()]
    return [json.loads(line) for line in lines]


def test_config_roundtrip_and_unknown_key():
    cfg = parse_config(TINY)
    assert cfg.train.hidden_dims == (16,) and cfg.data.raw_dim == 10
    assert parse_config(format_config(cfg)) == cfg
    with pytest.raises(ConfigError, match="bogus"):
        parse_config("bogus = 1\n")
    with pytest.raises(ConfigError, match="epochs"):
        parse_config("epochs = many\n")


def test_help_lists_every_default(capsys):
    with pytest.raises(SystemExit):
        main(["train", "--help"])
    out = capsys.readouterr().out
    for key in SCHEMA:
        assert key in out
    assert "k_prototypes" in out and "default 32" in out


def test_train_writes_metrics_and_checkpoints(tmp_path, capsys, tiny_config):
    code, out, _ = run(capsys, "train", tiny_config, "--out-dir", tmp_path / "r", "--threads", 1)
    assert code == EXIT_OK
    summary = json.loads(out)
    assert summary["epochs"] == 3
    rows = json_lines(tmp_path / "r" / "metrics.jsonl")
    assert [r["epoch"] for r in rows] == [0, 1, 2]
    for r in rows:
        assert {"epoch", "method", "loss", "lr", "code_mean_entropy"} <= set(r)
    timing = json_lines(tmp_path / "r" / "timing.jsonl")
    assert all(t["wall_seconds"] > 0 for t in timing)
    for e in range(3):
        assert (tmp_path / "r" / f"ckpt_epoch{e:04d}.swck").exists()
    assert load_checkpoint(tmp_path / "r" / "final.swck").epoch == 2
    assert (tmp_path / "r" / "training_curves.png").stat().st_size > 0


def test_train_is_deterministic(tmp_path, capsys, tiny_config):
    for name in ("a", "b"):
        assert run(capsys, "train", tiny_config, "--out-dir", tmp_path / name, "--no-plots")[0] == EXIT_OK
    for f in ("metrics.jsonl", "final.swck", "ckpt_epoch0001.swck"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_resume_matches_uninterrupted(tmp_path, capsys, tiny_config):
    assert run(capsys, "train", tiny_config, "--out-dir", tmp_path / "full", "--no-plots")[0] == EXIT_OK
    part = tmp_path / "part"
    assert run(capsys, "train", tiny_config, "--out-dir", part, "--no-plots")[0] == EXIT_OK
    code, _, _ = run(capsys, "train", tiny_config, "--out-dir", part, "--no-plots",
                     "--resume", part / "ckpt_epoch0000.swck")
    assert code == EXIT_OK
    assert (part / "metrics.jsonl").read_bytes() == (tmp_path / "full" / "metrics.jsonl").read_bytes()
    assert (part / "final.swck").read_bytes() == (tmp_path / "full" / "final.swck").read_bytes()


def test_resume_rejects_other_config(tmp_path, capsys, tiny_config):
    assert run(capsys, "train", tiny_config, "--out-dir", tmp_path / "r", "--no-plots")[0] == EXIT_OK
    other = tmp_path / "other.cfg"
    other.write_text(TINY.replace("k_prototypes = 6", "k_prototypes = 7"))
    code, _, err = run(capsys, "train", other, "--out-dir", tmp_path / "r2", "--resume", tmp_path / "r" / "final.swck")
    assert code == EXIT_CONFIG and "different config" in err


def test_train_error_exit_codes(tmp_path, capsys, tiny_config):
    code, _, err = run(capsys, "train", tmp_path / "nope.cfg")
    assert code == EXIT_CONFIG and "nope.cfg" in err
    bad = tmp_path / "bad.cfg"
    bad.write_text("k_protos = 4\n")
    code, _, err = run(capsys, "train", bad)
    assert code == EXIT_CONFIG and "k_protos" in err
    # scores / eps far beyond the float64 exp range: numeric failure
    hot = tmp_path / "hot.cfg"
    hot.write_text(TINY + "eps = 0.0001\n")
    code, _, err = run(capsys, "train", hot, "--out-dir", tmp_path / "h", "--no-plots")
    assert code == EXIT_NUMERIC and "numeric" in err


@pytest.fixture
def trained(tmp_path, capsys, tiny_config):
    assert run(capsys, "train", tiny_config, "--out-dir", tmp_path / "r", "--no-plots")[0] == EXIT_OK
    cfg = parse_config(TINY)
    ds = generate_synthetic(cfg.data.synthetic(), Rng(5, "eval"))
    save_dataset(tmp_path / "eval.ssld", ds)
    return tmp_path / "r" / "final.swck", tmp_path / "eval.ssld"


def test_eval_default_and_multiple_k(capsys, trained):
    ckpt, ds = trained
    code, out, _ = run(capsys, "eval", ckpt, ds)
    rep = json.loads(out)
    assert code == EXIT_OK and list(rep["knn_acc"]) == ["20"]
    code, out, _ = run(capsys, "eval", ckpt, ds, "--knn", 20, 64, "--linear")
    rep = json.loads(out)
    assert set(rep["knn_acc"]) == {"20", "64"}
    assert 0.0 <= rep["linear_acc"] <= 1.0 and 0.0 <= rep["nmi"] <= 1.0


def test_eval_200_nn(tmp_path, capsys, trained):
    ckpt, _ = trained
    big = generate_synthetic(SyntheticConfig(n_classes=3, raw_dim=10, n_samples=400), Rng(1))
    save_dataset(tmp_path / "big.ssld", big)
    code, out, _ = run(capsys, "eval", ckpt, tmp_path / "big.ssld", "--knn", 200)
    assert code == EXIT_OK and "200" in json.loads(out)["knn_acc"]


def test_eval_dimension_mismatch(tmp_path, capsys, trained):
    ckpt, _ = trained
    save_dataset(tmp_path / "wide.ssld", Dataset(np.ones((40, 11)), np.arange(40) % 2))
    code, _, err = run(capsys, "eval", ckpt, tmp_path / "wide.ssld")
    assert code == EXIT_CONFIG and "11" in err


def test_eval_constant_features_flag_collapse(tmp_path, capsys):
    ds = generate_synthetic(SyntheticConfig(n_classes=3, raw_dim=10, n_samples=80), Rng(0))
    state = init_state(TrainConfig(k_prototypes=6, hidden_dims=(16,), repr_dim=8, proj_hidden_dim=8, embed_dim=6), ds)
    state.encoder.layers = [(np.zeros_like(w), b) for w, b in state.encoder.layers]
    save_checkpoint(tmp_path / "const.swck", state_to_checkpoint(state, 0))
    save_dataset(tmp_path / "d.ssld", ds)
    code, out, _ = run(capsys, "eval", tmp_path / "const.swck", tmp_path / "d.ssld")
    rep = json.loads(out)
    assert code == EXIT_OK and rep["collapse_flag"] is True and rep["feature_std"] < 1e-12


def test_ablate_csv_shape(tmp_path, capsys, tiny_config):
    code, out, _ = run(capsys, "ablate", "sinkhorn_iters", tiny_config, "--out-dir", tmp_path / "ab")
    assert code == EXIT_OK
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0][:3] == ["suite", "variant", "overrides"]
    assert len({len(r) for r in rows}) == 1 and len(rows) == 5
    assert [r[2] for r in rows[1:]] == [f"sinkhorn_iters={n}" for n in (1, 3, 10, 30)]
    assert (tmp_path / "ab" / "ablation_sinkhorn_iters.csv").read_text() == out
    assert (tmp_path / "ab" / "ablation_sinkhorn_iters.png").stat().st_size > 0


def test_ablate_unknown_suite(tmp_path, capsys, tiny_config):
    code, _, err = run(capsys, "ablate", "nonsense", tiny_config)
    assert code == EXIT_CONFIG and "nonsense" in err


def test_bench_contract(capsys):
    code, out, _ = run(capsys, "sinkhorn-bench", 1, 1, 1, 1)
    rep = json.loads(out)
    assert code == EXIT_OK and rep["median_ms"] > 0
    code, out, _ = run(capsys, "sinkhorn-bench", 32, 8, 3, 5)
    rep = json.loads(out)
    assert len(rep["samples_ms"]) == 5 and rep["min_ms"] <= rep["median_ms"]
    assert run(capsys, "sinkhorn-bench", 0, 8, 3, 5)[0] == EXIT_CONFIG
