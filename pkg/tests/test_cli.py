import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from mgino import cli
from mgino.bundle import load_bundle, read_csv

pytestmark = pytest.mark.filterwarnings("ignore::mgino.autodiff.UnreachableGradientWarning")

SMALL = {
    "problem": "burgers", "n_instances": 2, "n_x": 16, "n_t": 5, "epochs": 4,
    "checkpoint_every": 2,
    "model": {"n_x": 16, "n_t": 8, "width": 4, "modes": [3, 3], "n_layers": 1,
              "kernel_hidden": [6], "decoder_channels": 3},
    "loss": {"lam": 1.0, "collocation": 20},
}


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.json").write_text(json.dumps(SMALL))
    assert cli.main(["generate", "--config", str(d / "small.json"), "--out", str(d / "ds")]) == 0
    return d


def run(workdir, *args):
    return cli.main([args[0], "--config", str(workdir / "small.json"), *args[1:]])


def test_generate_is_deterministic(workdir):
    first = tree_bytes(workdir / "ds")
    assert run(workdir, "generate", "--out", str(workdir / "ds")) == 0
    assert tree_bytes(workdir / "ds") == first
    b = load_bundle(workdir / "ds")
    assert b.arrays["u"].shape == (2, 16, 5) and b.seed == 0


def test_train_is_byte_identical(workdir):
    out = workdir / "det"
    assert run(workdir, "train", "--dataset", str(workdir / "ds"), "--out", str(out)) == 0
    first = tree_bytes(out)
    shutil.rmtree(out)
    assert run(workdir, "train", "--dataset", str(workdir / "ds"), "--out", str(out)) == 0
    assert tree_bytes(out) == first
    assert {"checkpoint/manifest.json", "best/manifest.json", "metrics.csv"} <= set(first)


def test_resume_matches_uninterrupted(workdir):
    ds = str(workdir / "ds")
    assert run(workdir, "train", "--dataset", ds, "--out", str(workdir / "full")) == 0
    part = str(workdir / "part")
    assert run(workdir, "train", "--dataset", ds, "--out", part, "--epochs", "2") == 0
    assert run(workdir, "train", "--dataset", ds, "--out", part, "--resume") == 0
    _, full = read_csv(workdir / "full" / "metrics.csv")
    _, resumed = read_csv(workdir / "part" / "metrics.csv")
    assert len(full) == len(resumed) == 4
    for a, b in zip(full, resumed):
        assert abs(float(a[-1]) - float(b[-1])) <= 1e-10


def test_flags_override_config_file(workdir):
    out = workdir / "override"
    assert run(workdir, "train", "--dataset", str(workdir / "ds"), "--out", str(out),
               "--epochs", "1", "--set", "optim.lr=0.01") == 0
    header, rows = read_csv(out / "metrics.csv")
    assert header == list(cli.TRAIN_HEADER) and len(rows) == 1
    assert float(rows[0][1]) == 0.01


def test_eval_writes_report(workdir):
    ds = str(workdir / "ds")
    out = workdir / "ev"
    assert run(workdir, "train", "--dataset", ds, "--out", str(out), "--epochs", "1") == 0
    assert run(workdir, "eval", "--dataset", ds, "--out", str(out)) == 0
    header, rows = read_csv(out / "eval.csv")
    assert header == list(cli.BURGERS_EVAL_HEADER) and len(rows) == 2
    assert all(np.isfinite(float(v)) for r in rows for v in r)
    raw = (out / "eval.csv").read_bytes()
    assert b"\r" not in raw and raw.decode("utf-8").endswith("\n")


def test_sweep(workdir):
    cfg = dict(SMALL, epochs=1, sweep={"loss.lam": [0.0, 1.0]}, dataset=str(workdir / "ds"))
    cfg["loss"] = {"collocation": 10, "lam": 1.0}
    (workdir / "sweep.json").write_text(json.dumps(cfg))
    out = workdir / "sw"
    assert cli.main(["sweep", "--config", str(workdir / "sweep.json"), "--out", str(out)]) == 0
    header, rows = read_csv(out / "sweep.csv")
    assert header[:2] == ["run", "loss.lam"] and [r[1] for r in rows] == ["0.0", "1.0"]
    assert (out / "run_001" / "eval.csv").exists()


@pytest.mark.parametrize("args", [
    ["--set", "bogus=1"],
    ["--set", "model.radius_spacings=0"],
    ["--seed", "-1"],
    ["--dataset", "/nonexistent/ds"],
    ["--set", "loss.lam=-1"],
])
def test_config_errors_exit_2(workdir, args, capsys):
    assert run(workdir, "train", *args) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_bad_config_file_exit_2(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    assert cli.main(["train", "--config", str(tmp_path / "bad.json")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--config", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG


def test_problem_mismatch_exit_2(workdir):
    assert run(workdir, "train", "--dataset", str(workdir / "ds"), "--problem", "poisson",
               "--out", str(workdir / "mm")) == cli.EXIT_CONFIG


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_abort_exit_3(workdir):
    assert run(workdir, "train", "--dataset", str(workdir / "ds"), "--out", str(workdir / "nan"),
               "--lr", "1e300", "--epochs", "3") == cli.EXIT_NONFINITE


def test_io_error_exit_4(workdir):
    blocker = workdir / "blocker"
    blocker.write_text("file, not a directory")
    assert run(workdir, "train", "--dataset", str(workdir / "ds"),
               "--out", str(blocker / "sub")) == cli.EXIT_IO
    (workdir / "broken").mkdir()
    (workdir / "broken" / "manifest.json").write_text("{}")
    assert run(workdir, "train", "--dataset", str(workdir / "broken"),
               "--out", str(workdir / "x")) == cli.EXIT_IO


def test_derivative_bench_command(tmp_path):
    cfg = {"problem": "derivative-bench",
           "bench": {"n_train": 60, "resolutions": [16, 96], "n_eval": 50, "n_latent": 8,
                     "width": 4, "modes": [3, 3], "n_layers": 1, "kernel_hidden": [6],
                     "epochs": 1}}
    (tmp_path / "b.json").write_text(json.dumps(cfg))
    assert cli.main(["derivative-bench", "--config", str(tmp_path / "b.json"),
                     "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "derivative_bench.csv")
    assert header == ["backend", "resolution", "n_points", "rel_l2", "status"]
    assert float(rows[0][3]) <= 1e-10
    assert cli.main(["derivative-bench", "--set", "bench.bogus=1",
                     "--out", str(tmp_path)]) == cli.EXIT_CONFIG


def test_poisson_inverse_toy(tmp_path):
    cfg = {"problem": "poisson", "n_instances": 1, "n_interior": 120, "n_boundary": 40,
           "manufactured": "quadratic", "epochs": 1, "loss": {"lam": 1.0},
           "model": {"n_latent": 10, "width": 4, "modes": [3, 3], "n_layers": 1,
                     "encoder_channels": 3, "kernel_hidden": [6], "decoder_channels": 3},
           "inverse": {"steps": 3, "lr": 0.01}}
    (tmp_path / "p.json").write_text(json.dumps(cfg))
    base = ["--config", str(tmp_path / "p.json")]
    assert cli.main(["generate", *base, "--out", str(tmp_path / "ds")]) == 0
    ds = str(tmp_path / "ds")
    assert cli.main(["train", *base, "--dataset", ds, "--out", str(tmp_path / "run")]) == 0
    assert cli.main(["eval", *base, "--dataset", ds, "--out", str(tmp_path / "run"),
                     "--eval-points", "50"]) == 0
    header, rows = read_csv(tmp_path / "run" / "eval.csv")
    assert header == list(cli.POISSON_EVAL_HEADER) and rows[0][3] == "50"
    ck = str(tmp_path / "run" / "checkpoint")
    assert cli.main(["inverse-toy", *base, "--dataset", ds, "--checkpoint", ck,
                     "--out", str(tmp_path / "inv")]) == 0
    header, rows = read_csv(tmp_path / "inv" / "inverse_trace.csv")
    assert header[:3] == ["step", "J", "grad_norm"] and len(rows) == 4
    _, check = read_csv(tmp_path / "inv" / "inverse_check.csv")
    assert float(dict(check)["fd_rel_err"]) <= 1e-4
    assert cli.main(["inverse-toy", *base, "--dataset", ds,
                     "--out", str(tmp_path / "inv")]) == cli.EXIT_CONFIG
