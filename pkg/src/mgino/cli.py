"""Command-line entry points: generate, train, eval, derivative-bench, inverse-toy, sweep.

Configuration precedence: built-in defaults < ``--config`` JSON file < flags.
Exit codes: 0 success, 2 configuration error, 3 non-finite abort, 4 I/O error.
"""

from __future__ import annotations

import argparse
import copy
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .bundle import Bundle, BundleError, load_bundle, provenance, save_bundle, write_csv
from .mollified import PointCloud
from .physics import LossSpec, inject_noise
from .problems import (NU, BurgersInstance, PoissonInstance, _draw_shape, exact_solution,
                       instance_rng, make_burgers_instance, make_manufactured_poisson,
                       make_poisson_instance)
from .studies import (BENCH_HEADER, TRACE_HEADER, BenchConfig, InverseProblem,
                      derivative_bench, fd_gradient, inverse_descent)
from .training import (BurgersModelConfig, OptimConfig, PoissonModelConfig, TrainState,
                       build_burgers_model, build_poisson_model, evaluate_burgers,
                       evaluate_poisson, heldout_points, train_burgers, train_poisson)

log = logging.getLogger("mgino")

EXIT_OK, EXIT_CONFIG, EXIT_NONFINITE, EXIT_IO = 0, 2, 3, 4
PROBLEMS = ("burgers", "poisson", "derivative-bench", "inverse-toy")
TRAIN_HEADER = ("epoch", "lr", "data", "pde", "constraint", "total")
BURGERS_EVAL_HEADER = ("instance", "rel_l2", "rel_l2_target", "pde")
POISSON_EVAL_HEADER = ("instance", "rel_l2", "pde", "n_points")
NOISE_STREAM = 1 << 20


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass
class RunConfig:
    problem: str = "burgers"
    seed: int = 0
    n_instances: int = 20
    n_x: int = 128
    n_t: int = 26
    n_interior: int = 1000
    n_boundary: int = 100
    r0: float = 1.0
    manufactured: str | None = None
    positive_exponent: bool = False
    model: dict = field(default_factory=dict)
    loss: dict = field(default_factory=dict)
    optim: dict = field(default_factory=dict)
    epochs: int = 50
    checkpoint_every: int = 10
    horizon_ramp: float = 0.0
    noise: float = 0.0
    eval_points: int = 500
    dataset: str | None = None
    checkpoint: str | None = None
    out: str = "mgino-out"
    resume: bool = False
    bench: dict = field(default_factory=dict)
    inverse: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


# -- configuration -------------------------------------------------------------

def _set_dotted(d: dict, key: str, value: Any) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
        if not isinstance(d, dict):
            raise ConfigError(f"cannot set {key!r}: {p!r} is not a section")
    d[parts[-1]] = value


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def merge_config(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "sweep":
            out[k] = merge_config(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def build_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the config file, then flag overrides; validated."""
    merged = merge_config(RunConfig().to_dict(), file_values or {})
    merged = merge_config(merged, overrides or {})
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig(**merged)
    validate_config(cfg)
    return cfg


def load_config_file(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def model_config(cfg: RunConfig) -> BurgersModelConfig | PoissonModelConfig:
    cls = PoissonModelConfig if cfg.problem in ("poisson", "inverse-toy") else BurgersModelConfig
    try:
        return cls(**{"seed": cfg.seed, **cfg.model})
    except TypeError as exc:
        raise ConfigError(f"bad model section: {exc}") from exc


def loss_spec(cfg: RunConfig) -> LossSpec:
    try:
        return LossSpec(**cfg.loss)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad loss section: {exc}") from exc


def optim_config(cfg: RunConfig) -> OptimConfig:
    try:
        return OptimConfig(**cfg.optim)
    except TypeError as exc:
        raise ConfigError(f"bad optim section: {exc}") from exc


def bench_config(cfg: RunConfig) -> BenchConfig:
    try:
        values = {k: tuple(v) if isinstance(v, list) else v for k, v in cfg.bench.items()}
        return BenchConfig(**{"seed": cfg.seed, **values})
    except TypeError as exc:
        raise ConfigError(f"bad bench section: {exc}") from exc


def validate_config(cfg: RunConfig) -> None:
    if cfg.problem not in PROBLEMS:
        raise ConfigError(f"problem must be one of {PROBLEMS}, got {cfg.problem!r}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    for name in ("n_instances", "n_x", "n_t", "n_interior", "epochs", "checkpoint_every",
                 "eval_points", "workers"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or v < (0 if name == "epochs" else 1):
            raise ConfigError(f"{name} must be a positive integer")
    if cfg.noise < 0:
        raise ConfigError("noise must be non-negative")
    if not 0.0 <= cfg.horizon_ramp <= 1.0:
        raise ConfigError("horizon_ramp must lie in [0, 1]")
    if cfg.manufactured is not None:
        try:
            exact_solution(cfg.manufactured)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    mc = model_config(cfg)
    for name in ("radius_spacings", "encoder_radius_spacings", "decoder_radius_spacings"):
        if hasattr(mc, name) and not getattr(mc, name) > 0:
            raise ConfigError(f"model.{name} must be positive (radius > 0)")
    loss_spec(cfg)
    optim_config(cfg)
    for path in (cfg.dataset, cfg.checkpoint):
        if path is not None and not Path(path).exists():
            raise ConfigError(f"path does not exist: {path}")
    for key in cfg.sweep:
        head = key.split(".")[0]
        if head not in {f.name for f in fields(RunConfig)}:
            raise ConfigError(f"sweep key {key!r} does not name a config field")
        if not isinstance(cfg.sweep[key], list) or not cfg.sweep[key]:
            raise ConfigError(f"sweep values for {key!r} must be a non-empty list")


# -- datasets ------------------------------------------------------------------

def cmd_generate(cfg: RunConfig) -> Path:
    """Write ``n_instances`` instances, each from its own seeded stream."""
    n = cfg.n_instances
    arrays: dict[str, np.ndarray] = {"instance_seed": np.array([cfg.seed ^ i for i in range(n)])}
    meta: dict[str, Any] = {"problem": cfg.problem}
    if cfg.problem == "burgers":
        u0, u = [], []
        for i in range(n):
            inst = make_burgers_instance(instance_rng(cfg.seed, i), cfg.n_x, cfg.n_t,
                                         seed=cfg.seed ^ i)
            if not (np.all(np.isfinite(inst.u)) and np.all(np.isfinite(inst.u0))):
                raise ConfigError(f"instance {i}: non-finite reference solution")
            u0.append(inst.u0)
            u.append(inst.u)
        arrays.update(u0=np.stack(u0), u=np.stack(u))
        meta["nu"] = NU
    elif cfg.problem in ("poisson", "inverse-toy"):
        insts = []
        for i in range(n):
            rng = instance_rng(cfg.seed, i)
            try:
                if cfg.manufactured is not None:
                    c1, c2 = _draw_shape(rng)
                    inst = make_manufactured_poisson(cfg.manufactured, rng, c1, c2, cfg.r0,
                                                     cfg.n_interior, cfg.n_boundary)
                else:
                    inst = make_poisson_instance(rng, cfg.n_interior, cfg.n_boundary, cfg.r0,
                                                 cfg.positive_exponent)
            except ValueError as exc:
                raise ConfigError(f"instance {i}: {exc}") from exc
            insts.append(inst)
        arrays.update(
            coords=np.stack([p.cloud.coords for p in insts]),
            weights=np.stack([p.cloud.weights for p in insts]),
            boundary=np.stack([p.cloud.boundary for p in insts]),
            sdf=np.stack([p.cloud.sdf for p in insts]),
            f=np.stack([p.f for p in insts]),
            b=np.stack([p.b for p in insts]),
            shape=np.array([[p.c1, p.c2, p.r0] for p in insts]),
            beta=np.stack([p.beta for p in insts]),
            mu=np.stack([p.mu for p in insts]),
            b_coef=np.stack([p.b_coef for p in insts]))
        meta.update(problem="poisson", manufactured=cfg.manufactured,
                    positive_exponent=cfg.positive_exponent)
    else:
        raise ConfigError(f"generate does not apply to problem {cfg.problem!r}")
    path = save_bundle(cfg.out, Bundle("dataset", arrays, cfg.to_dict(), cfg.seed, meta))
    log.info("wrote %d %s instances to %s", n, meta["problem"], path)
    return path


def load_instances(bundle: Bundle) -> list:
    problem = bundle.meta.get("problem")
    a = bundle.arrays
    seeds = a.get("instance_seed", np.zeros(0, dtype=np.int64))
    if problem == "burgers":
        nu = float(bundle.meta.get("nu", NU))
        return [BurgersInstance(a["u0"][i], a["u"][i], nu, int(seeds[i]) if len(seeds) else 0)
                for i in range(a["u0"].shape[0])]
    if problem == "poisson":
        choice = bundle.meta.get("manufactured")
        out = []
        for i in range(a["coords"].shape[0]):
            c1, c2, r0 = a["shape"][i]
            cloud = PointCloud(a["coords"][i], a["weights"][i], a["boundary"][i], a["sdf"][i])
            out.append(PoissonInstance(float(c1), float(c2), float(r0), cloud, a["f"][i],
                                       a["b"][i], a["beta"][i], a["mu"][i], a["b_coef"][i],
                                       bool(bundle.meta.get("positive_exponent", False)),
                                       exact_solution(choice) if choice else None))
        return out
    raise BundleError(f"bundle holds unknown problem {problem!r}")


def _dataset(cfg: RunConfig, problem: str) -> tuple[Bundle, list]:
    if cfg.dataset is None:
        raise ConfigError("a dataset path is required")
    bundle = load_bundle(cfg.dataset)
    if bundle.kind != "dataset":
        raise ConfigError(f"{cfg.dataset} is not a dataset bundle")
    if bundle.meta.get("problem") != problem:
        raise ConfigError(f"dataset problem {bundle.meta.get('problem')!r} does not match "
                          f"config problem {problem!r}")
    return bundle, load_instances(bundle)


def noisy_targets(cfg: RunConfig, instances: Sequence[BurgersInstance]) -> list[np.ndarray] | None:
    if cfg.noise == 0:
        return None
    return [inject_noise(inst.u, cfg.noise, instance_rng(cfg.seed, NOISE_STREAM + i))
            for i, inst in enumerate(instances)]


# -- training ------------------------------------------------------------------

def build_model(cfg: RunConfig):
    mc = model_config(cfg)
    if isinstance(mc, PoissonModelConfig):
        return build_poisson_model(mc)
    return build_burgers_model(mc)


def _checkpoint_bundle(cfg: RunConfig, model, state: TrainState) -> Bundle:
    return Bundle("checkpoint", state.arrays(model), cfg.to_dict(), cfg.seed,
                  {"problem": cfg.problem, **state.meta()})


def _history_rows(history: list[dict]) -> list[tuple]:
    return [(h["epoch"], h["lr"], h.get("data", 0.0), h.get("pde", 0.0),
             h.get("ic", h.get("bc", 0.0)), h["total"]) for h in history]


def load_checkpoint(path: str | Path) -> tuple[RunConfig, Any, TrainState]:
    bundle = load_bundle(path)
    if bundle.kind != "checkpoint":
        raise ConfigError(f"{path} is not a checkpoint")
    values = dict(bundle.config)
    values["dataset"] = values["checkpoint"] = None
    cfg = build_config(values)
    model = build_model(cfg)
    state = TrainState.restore(model, bundle.arrays, bundle.meta)
    return cfg, model, state


def cmd_train(cfg: RunConfig) -> Path:
    """Train per the loss spec; checkpoints every K epochs and at the best epoch loss."""
    if cfg.problem not in ("burgers", "poisson"):
        raise ConfigError(f"train does not apply to problem {cfg.problem!r}")
    _, instances = _dataset(cfg, cfg.problem)
    out = Path(cfg.out)
    spec, optim = loss_spec(cfg), optim_config(cfg)
    model = build_model(cfg)
    ckpt = out / "checkpoint"
    if cfg.resume and ckpt.exists():
        _, model, state = load_checkpoint(ckpt)
        log.info("resumed from %s at epoch %d", ckpt, state.epoch)
    else:
        state = TrainState.fresh(optim, cfg.seed)
    prov = provenance(cfg.to_dict(), cfg.seed)

    def on_epoch(s: TrainState) -> None:
        h = s.history[-1]
        log.info("epoch %d total %.6g pde %.6g", s.epoch, h["total"], h["pde"])
        if h["total"] <= s.best:
            save_bundle(out / "best", _checkpoint_bundle(cfg, model, s))
        if s.epoch % cfg.checkpoint_every == 0 or s.epoch == cfg.epochs:
            save_bundle(ckpt, _checkpoint_bundle(cfg, model, s))
            write_csv(out / "metrics.csv", TRAIN_HEADER, _history_rows(s.history), prov)

    if cfg.problem == "burgers":
        train_burgers(model, instances, spec, optim, cfg.epochs, state,
                      noisy_targets(cfg, instances), on_epoch, cfg.horizon_ramp)
    else:
        train_poisson(model, instances, spec, optim, cfg.epochs, state, on_epoch)
    if state.epoch == 0 or not ckpt.exists():
        save_bundle(ckpt, _checkpoint_bundle(cfg, model, state))
    write_csv(out / "metrics.csv", TRAIN_HEADER, _history_rows(state.history), prov)
    return ckpt


def evaluate(cfg: RunConfig, model, instances: list) -> tuple[tuple[str, ...], list[tuple]]:
    if cfg.problem == "burgers":
        targets = noisy_targets(cfg, instances)
        rows = []
        for i, inst in enumerate(instances):
            m = evaluate_burgers(model, [inst], None if targets is None else [targets[i]])
            rows.append((i, m["rel_l2"], m.get("rel_l2_target", m["rel_l2"]), m["pde"]))
        return BURGERS_EVAL_HEADER, rows
    rows = []
    for i, inst in enumerate(instances):
        m = evaluate_poisson(model, inst, heldout_points(inst, cfg.eval_points, cfg.seed + 1 + i))
        rows.append((i, m.get("rel_l2", float("nan")), m["pde"], m["n"]))
    return POISSON_EVAL_HEADER, rows


def cmd_eval(cfg: RunConfig) -> dict:
    """Per-instance errors of a checkpoint on a dataset; returns the means."""
    path = cfg.checkpoint or str(Path(cfg.out) / "checkpoint")
    ck_cfg, model, _ = load_checkpoint(path)
    run_cfg = copy.deepcopy(ck_cfg)
    run_cfg.dataset, run_cfg.noise, run_cfg.eval_points = cfg.dataset, cfg.noise, cfg.eval_points
    _, instances = _dataset(run_cfg, ck_cfg.problem)
    header, rows = evaluate(run_cfg, model, instances)
    write_csv(Path(cfg.out) / "eval.csv", header, rows, provenance(cfg.to_dict(), cfg.seed))
    summary = {h: float(np.mean([r[k] for r in rows])) for k, h in enumerate(header) if k > 0}
    log.info("eval %s", summary)
    return summary


# -- studies ---------------------------------------------------------------------

def cmd_derivative_bench(cfg: RunConfig) -> Path:
    rows = derivative_bench(bench_config(cfg))
    path = write_csv(Path(cfg.out) / "derivative_bench.csv", BENCH_HEADER, rows,
                     provenance(cfg.to_dict(), cfg.seed))
    for r in rows:
        log.info("%s", r)
    return path


def cmd_inverse_toy(cfg: RunConfig) -> dict:
    """Gradient descent on 4 radial controls of a trained Poisson operator."""
    if cfg.checkpoint is None:
        raise ConfigError("inverse-toy needs a checkpoint")
    ck_cfg, model, _ = load_checkpoint(cfg.checkpoint)
    if ck_cfg.problem != "poisson":
        raise ConfigError("inverse-toy needs a Poisson checkpoint")
    _, instances = _dataset(cfg, "poisson")
    opts = {"steps": 10, "lr": 0.1, "objective": "mean", "theta0": [0.0] * 4, "instance": 0,
            "fd_step": 1e-5, **cfg.inverse}
    unknown = set(opts) - {"steps", "lr", "objective", "theta0", "instance", "fd_step"}
    if unknown:
        raise ConfigError(f"unknown inverse options: {sorted(unknown)}")
    if len(opts["theta0"]) != 4:
        raise ConfigError("theta0 must hold 4 radial control values")
    try:
        problem = InverseProblem(model, instances[int(opts["instance"])], opts["objective"],
                                 seed=cfg.seed)
    except (ValueError, IndexError) as exc:
        raise ConfigError(str(exc)) from exc
    thetas, js, norms = inverse_descent(problem, opts["theta0"], int(opts["steps"]),
                                        float(opts["lr"]))
    g_fd = fd_gradient(problem.value, thetas[0], float(opts["fd_step"]))
    g_ad = problem.gradient(thetas[0])
    fd_err = float(np.linalg.norm(g_ad - g_fd) / max(np.linalg.norm(g_fd), 1e-300))
    rows = [(i, js[i], norms[i], *thetas[i]) for i in range(len(js))]
    prov = provenance(cfg.to_dict(), cfg.seed)
    write_csv(Path(cfg.out) / "inverse_trace.csv", TRACE_HEADER, rows, prov)
    write_csv(Path(cfg.out) / "inverse_check.csv", ("quantity", "value"),
              [("fd_rel_err", fd_err), ("J0", js[0]), ("J_final", js[-1])], prov)
    log.info("inverse toy: J %.6g -> %.6g, gradient FD check %.3g", js[0], js[-1], fd_err)
    return {"theta": thetas, "J": js, "grad_norm": norms, "fd_rel_err": fd_err}


# -- sweeps ------------------------------------------------------------------------

def sweep_configs(cfg: RunConfig) -> list[tuple[dict, RunConfig]]:
    keys = sorted(cfg.sweep)
    runs = []
    base = cfg.to_dict()
    base["sweep"] = {}
    for i, combo in enumerate(itertools.product(*(cfg.sweep[k] for k in keys))):
        values = copy.deepcopy(base)
        point = dict(zip(keys, combo))
        for k, v in point.items():
            _set_dotted(values, k, v)
        values["out"] = str(Path(cfg.out) / f"run_{i:03d}")
        runs.append((point, build_config(values)))
    return runs


def _sweep_one(values: dict) -> dict:
    cfg = build_config(values)
    cmd_train(cfg)
    _, instances = _dataset(cfg, cfg.problem)
    _, model, state = load_checkpoint(Path(cfg.out) / "checkpoint")
    header, rows = evaluate(cfg, model, instances)
    write_csv(Path(cfg.out) / "eval.csv", header, rows, provenance(cfg.to_dict(), cfg.seed))
    out = {h: float(np.mean([r[k] for r in rows])) for k, h in enumerate(header) if k > 0}
    out["final_total"] = state.history[-1]["total"] if state.history else float("nan")
    return out


def cmd_sweep(cfg: RunConfig) -> Path:
    """Cartesian product over config fields; one train + eval per point."""
    if not cfg.sweep:
        raise ConfigError("sweep needs a non-empty 'sweep' section")
    runs = sweep_configs(cfg)
    payload = [r.to_dict() for _, r in runs]
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_one, payload))
    else:
        results = [_sweep_one(p) for p in payload]
    keys = sorted(cfg.sweep)
    metric_names = sorted(results[0])
    rows = [(i, *(json.dumps(point[k]) for k in keys), *(res[m] for m in metric_names))
            for i, ((point, _), res) in enumerate(zip(runs, results))]
    return write_csv(Path(cfg.out) / "sweep.csv", ("run", *keys, *metric_names), rows,
                     provenance(cfg.to_dict(), cfg.seed))


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "derivative-bench": cmd_derivative_bench,
    "inverse-toy": cmd_inverse_toy,
    "sweep": cmd_sweep,
}

COMMAND_HELP = {
    "generate": "write a dataset bundle of generated instances",
    "train": "train an operator on a dataset bundle",
    "eval": "per-instance errors of a checkpoint on a dataset",
    "derivative-bench": "second-derivative accuracy of each back-end on sin(4 pi x y)",
    "inverse-toy": "gradient descent on radial domain controls through a trained operator",
    "sweep": "train and evaluate over a cartesian product of config values",
}

# flag -> dotted config key
FLAG_KEYS = {
    "problem": "problem", "seed": "seed", "n_instances": "n_instances", "n_x": "n_x",
    "n_t": "n_t", "n_interior": "n_interior", "n_boundary": "n_boundary",
    "manufactured": "manufactured", "epochs": "epochs", "checkpoint_every": "checkpoint_every",
    "horizon_ramp": "horizon_ramp", "noise": "noise", "eval_points": "eval_points",
    "dataset": "dataset", "checkpoint": "checkpoint", "out": "out", "workers": "workers",
    "lam": "loss.lam", "alpha": "loss.alpha", "data_weight": "loss.data_weight",
    "backend": "loss.backend", "collocation": "loss.collocation", "lr": "optim.lr",
    "weight": "model.weight", "aggregation": "model.aggregation",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config field by dotted key (JSON value)")
    common.add_argument("--problem", choices=PROBLEMS)
    common.add_argument("--seed", type=int)
    common.add_argument("--n-instances", type=int)
    common.add_argument("--n-x", type=int)
    common.add_argument("--n-t", type=int)
    common.add_argument("--n-interior", type=int)
    common.add_argument("--n-boundary", type=int)
    common.add_argument("--manufactured", choices=("quadratic", "sinusoidal", "zero"))
    common.add_argument("--epochs", type=int)
    common.add_argument("--checkpoint-every", type=int)
    common.add_argument("--horizon-ramp", type=float)
    common.add_argument("--noise", type=float)
    common.add_argument("--eval-points", type=int)
    common.add_argument("--dataset")
    common.add_argument("--checkpoint")
    common.add_argument("--out")
    common.add_argument("--workers", type=int)
    common.add_argument("--lam", type=float)
    common.add_argument("--alpha", type=float)
    common.add_argument("--data-weight", type=float)
    common.add_argument("--backend")
    common.add_argument("--collocation", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--weight")
    common.add_argument("--aggregation")
    common.add_argument("--resume", action="store_true", default=None)
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="mgino", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mgino {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=COMMAND_HELP[name])
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides: dict = {}
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            _set_dotted(overrides, key, v)
    if args.resume:
        overrides["resume"] = True
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        _set_dotted(overrides, k.strip(), _parse_value(v))
    return build_config(file_values, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
