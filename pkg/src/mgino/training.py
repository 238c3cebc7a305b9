"""Training and evaluation loops for the Burgers and Poisson operators."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .mollified import BurgersModel, GinoModel, gino_grid
from .neural import AdamState, Module, PlateauScheduler, adam_step, scheduler_step
from .physics import (LossSpec, Residual, burgers_residual, grid_points, metrics,
                      poisson_residual)
from .problems import BurgersInstance, PoissonInstance, sample_interior


@dataclass
class OptimConfig:
    lr: float = 2e-3
    weight_decay: float = 1e-6
    factor: float = 0.9
    patience: int = 50
    min_lr: float = 0.0


@dataclass
class TrainState:
    """Everything needed to resume training bit-identically."""

    adam: AdamState
    sched: PlateauScheduler
    rng: np.random.Generator
    epoch: int = 0
    history: list[dict] = field(default_factory=list)
    best: float = math.inf

    @classmethod
    def fresh(cls, optim: OptimConfig, seed: int) -> "TrainState":
        return cls(AdamState(lr=optim.lr, weight_decay=optim.weight_decay),
                   PlateauScheduler(optim.lr, optim.factor, optim.patience, min_lr=optim.min_lr),
                   np.random.default_rng(seed))

    def arrays(self, model: Module) -> dict[str, np.ndarray]:
        out = {f"param.{k}": v for k, v in model.state_dict().items()}
        for i, (m, v) in enumerate(zip(self.adam.m, self.adam.v)):
            out[f"adam.m.{i:04d}"] = m
            out[f"adam.v.{i:04d}"] = v
        return out

    def meta(self) -> dict:
        sched = asdict(self.sched)
        return {"epoch": self.epoch, "best": _finite(self.best),
                "adam": {"lr": self.adam.lr, "step": self.adam.step,
                         "beta1": self.adam.beta1, "beta2": self.adam.beta2,
                         "eps": self.adam.eps, "weight_decay": self.adam.weight_decay},
                "scheduler": {k: _finite(v) for k, v in sched.items()},
                "rng": json.loads(json.dumps(self.rng.bit_generator.state)),
                "history": self.history}

    @classmethod
    def restore(cls, model: Module, arrays: dict[str, np.ndarray], meta: dict) -> "TrainState":
        model.load_state_dict({k[len("param."):]: v for k, v in arrays.items()
                               if k.startswith("param.")})
        a = meta["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"],
                         weight_decay=a["weight_decay"], step=a["step"])
        ms = sorted(k for k in arrays if k.startswith("adam.m."))
        adam.m = [arrays[k].copy() for k in ms]
        adam.v = [arrays[k.replace("adam.m.", "adam.v.")].copy() for k in ms]
        s = {k: (math.inf if v is None else v) for k, v in meta["scheduler"].items()}
        sched = PlateauScheduler(**s)
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng"]
        best = math.inf if meta["best"] is None else meta["best"]
        return cls(adam, sched, rng, meta["epoch"], list(meta["history"]), best)


def _finite(v):
    return None if isinstance(v, float) and not math.isfinite(v) else v


def optimizer_step(model: Module, loss: ad.Tensor, state: TrainState) -> None:
    ad.check_finite(loss.data, "loss")
    params = model.parameters()
    grads = ad.grad(loss, params)
    adam_step(state.adam, params, grads)


# -- Burgers -------------------------------------------------------------------

@dataclass
class BurgersModelConfig:
    n_x: int = 32
    n_t: int = 32
    width: int = 16
    modes: tuple[int, int] = (8, 8)
    n_layers: int = 3
    radius_spacings: float = 2.5
    weight: str = "half_cos"
    aggregation: str = "sum"
    kernel_hidden: tuple[int, ...] = (16, 16)
    decoder_channels: int = 8
    seed: int = 0


def build_burgers_model(cfg: BurgersModelConfig) -> BurgersModel:
    radius = cfg.radius_spacings * max(1.0 / cfg.n_x, 1.0 / cfg.n_t)
    return BurgersModel(n_x=cfg.n_x, n_t=cfg.n_t, width=cfg.width, modes=tuple(cfg.modes),
                        n_layers=cfg.n_layers, radius=radius, weight=cfg.weight,
                        aggregation=cfg.aggregation, kernel_hidden=tuple(cfg.kernel_hidden),
                        decoder_channels=cfg.decoder_channels, seed=cfg.seed)


def burgers_collocation(rng: np.random.Generator, inst: BurgersInstance,
                        count: int | None, t_max: float = 1.0) -> np.ndarray:
    """Reference grid points with 0 < t <= t_max, or ``count`` uniform points in [0, 1] x (0, t_max]."""
    if count is None:
        pts = inst.grid_points()
        # the first time row after t = 0 is always kept
        horizon = max(t_max * inst.t[-1], inst.t[1])
        keep = (pts[:, 1] > 0) & (pts[:, 1] <= horizon + 1e-12)
        return pts[keep]
    x = rng.uniform(0.0, 1.0, count)
    t = t_max * (1.0 - rng.uniform(0.0, 1.0, count))
    return np.stack([x, t], axis=1)


def time_horizon(epoch: int, epochs: int, ramp: float, start: float = 0.05) -> float:
    """Collocation time horizon: grows linearly from ``start`` to 1 over ``ramp * epochs`` epochs."""
    if ramp <= 0.0:
        return 1.0
    return min(1.0, start + (1.0 - start) * epoch / max(1.0, ramp * epochs))


def burgers_loss(model: BurgersModel, inst: BurgersInstance, spec: LossSpec,
                 rng: np.random.Generator, target: np.ndarray | None = None,
                 t_max: float = 1.0):
    latent = model.latent(model.grid_input(inst.u0))
    decode = lambda q: model.decode(latent, q)  # noqa: E731
    data = ad.constant(0.0)
    if spec.data_weight:
        tgt = inst.u if target is None else target
        pred = decode(inst.grid_points())[:, 0]
        diff = pred - tgt.ravel()
        data = ad.mean(diff * diff)
    phys = ad.constant(0.0)
    res: Residual | None = None
    if spec.lam:
        alpha = spec.alpha_for("burgers")
        if spec.backend == "autograd" or spec.backend == "fd_pointcloud":
            pts = burgers_collocation(rng, inst, spec.collocation, t_max)
            res = burgers_residual(decode, inst.u0, inst.nu, spec.backend, points=pts, alpha=alpha)
        else:
            grid = (inst.x, inst.t)
            res = burgers_residual(decode, inst.u0, inst.nu, spec.backend, grid=grid, alpha=alpha)
        phys = res.loss
    total = spec.data_weight * data + spec.lam * phys
    comps = {"data": float(data.data), "pde": float(res.pde.data) if res else 0.0,
             "ic": float(res.constraint.data) if res else 0.0, "total": float(total.data)}
    return total, comps


# collocation sets larger than this are differentiated in chunks to bound memory
RESIDUAL_CHUNK = 1024


def burgers_chunked_step(model: BurgersModel, inst: BurgersInstance, spec: LossSpec,
                         pts: np.ndarray, state: TrainState, target: np.ndarray | None = None,
                         chunk: int = RESIDUAL_CHUNK) -> dict:
    """Same gradient as ``burgers_loss`` on ``pts``, accumulated chunk by chunk.

    Decoder gradients flow into a detached copy of the latent grid; its
    accumulated cotangent is then pulled back through the encoder once.
    """
    params = model.parameters()
    latent = model.latent(model.grid_input(inst.u0))
    leaf = ad.tensor(latent.data, requires_grad=True)
    decode = lambda q: model.decode(leaf, q)  # noqa: E731
    wrt = params + [leaf]
    grads = [np.zeros_like(p.data) for p in wrt]

    def accumulate(loss: ad.Tensor) -> None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ad.UnreachableGradientWarning)
            for acc, g in zip(grads, ad.grad(loss, wrt)):
                acc += g

    alpha = spec.alpha_for("burgers")
    data = 0.0
    if spec.data_weight:
        tgt = inst.u if target is None else target
        diff = decode(inst.grid_points())[:, 0] - tgt.ravel()
        loss = spec.data_weight * ad.mean(diff * diff)
        data = float(loss.data) / spec.data_weight
        accumulate(loss)
    sq = 0.0
    for s in range(0, pts.shape[0], chunk):
        res = burgers_residual(decode, inst.u0, inst.nu, "autograd", points=pts[s:s + chunk],
                               alpha=alpha if s == 0 else 0.0)
        r = res.residual
        loss = (spec.lam / pts.shape[0]) * ad.sum(r * r) + spec.lam * alpha * res.constraint
        sq += float(np.sum(r.data ** 2))
        if s == 0:
            ic = float(res.constraint.data)
        accumulate(loss)
    pde = sq / pts.shape[0]
    total = spec.data_weight * data + spec.lam * (pde + alpha * ic)
    ad.check_finite(np.array(total), "loss")
    enc = ad.grad(latent, params, seed=grads[-1])
    adam_step(state.adam, params, [g + e for g, e in zip(grads[:-1], enc)])
    return {"data": data, "pde": pde, "ic": ic, "total": total}


def train_burgers(model: BurgersModel, instances: Sequence[BurgersInstance], spec: LossSpec,
                  optim: OptimConfig, epochs: int, state: TrainState,
                  targets: Sequence[np.ndarray] | None = None,
                  on_epoch: Callable[[TrainState], None] | None = None,
                  horizon_ramp: float = 0.0) -> TrainState:
    """One optimizer step per instance; instances visited in a seeded shuffle.

    With ``horizon_ramp > 0`` collocation points are drawn from a time window
    that widens to the full interval over that fraction of the epochs.
    """
    while state.epoch < epochs:
        order = state.rng.permutation(len(instances))
        t_max = time_horizon(state.epoch, epochs, horizon_ramp)
        sums: dict[str, float] = {}
        for i in order:
            target = None if targets is None else targets[i]
            pts = None
            if spec.lam and spec.backend == "autograd" and spec.collocation is None:
                pts = burgers_collocation(state.rng, instances[i], None, t_max)
            if pts is not None and pts.shape[0] > RESIDUAL_CHUNK:
                comps = burgers_chunked_step(model, instances[i], spec, pts, state, target)
            else:
                loss, comps = burgers_loss(model, instances[i], spec, state.rng, target, t_max)
                optimizer_step(model, loss, state)
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v / len(instances)
        state.adam.lr = scheduler_step(state.sched, sums["total"])
        state.epoch += 1
        state.history.append({"epoch": state.epoch, "lr": state.adam.lr, **sums})
        state.best = min(state.best, sums["total"])
        if on_epoch is not None:
            on_epoch(state)
    return state


def evaluate_burgers(model: BurgersModel, instances: Sequence[BurgersInstance],
                     targets: Sequence[np.ndarray] | None = None, chunk: int = 1024) -> dict:
    """Mean PDE residual (autograd, reference grid with t > 0) and relative L2 errors."""
    pde, rel, rel_t = [], [], []
    for j, inst in enumerate(instances):
        latent = model.latent(model.grid_input(inst.u0))
        latent = ad.constant(latent.data)
        decode = lambda q: model.decode(latent, q)  # noqa: E731
        pts = inst.grid_points()
        with ad.no_grad():
            pred = decode(pts).data[:, 0]
        sq = 0.0
        inner = pts[pts[:, 1] > 0]
        for s in range(0, inner.shape[0], chunk):
            r = burgers_residual(decode, inst.u0, inst.nu, "autograd", points=inner[s:s + chunk],
                                 alpha=0.0, create_graph=False)
            sq += float(np.sum(r.residual.data ** 2))
        pde.append(sq / inner.shape[0])
        rel.append(metrics(pred, inst.u).relative_l2)
        if targets is not None:
            rel_t.append(metrics(pred, targets[j]).relative_l2)
    out = {"pde": float(np.mean(pde)), "rel_l2": float(np.mean(rel))}
    if targets is not None:
        out["rel_l2_target"] = float(np.mean(rel_t))
    return out


# -- Poisson -------------------------------------------------------------------

@dataclass
class PoissonModelConfig:
    n_latent: int = 32
    width: int = 16
    modes: tuple[int, int] = (8, 8)
    n_layers: int = 3
    encoder_radius_spacings: float = 2.0
    decoder_radius_spacings: float = 2.5
    encoder_channels: int = 8
    weight: str = "half_cos"
    encoder_weight: str = "half_cos"
    aggregation: str = "sum"
    kernel_hidden: tuple[int, ...] = (16, 16)
    decoder_channels: int = 8
    use_sdf: bool = True
    extent: float = 1.4
    seed: int = 0


def build_poisson_model(cfg: PoissonModelConfig) -> GinoModel:
    """Latent grid over [-extent, extent]^2 inflated by the decoder radius."""
    span = 2.0 * cfg.extent
    h_est = span / (cfg.n_latent - 1)
    r_dec = cfg.decoder_radius_spacings * h_est
    grid = gino_grid((-cfg.extent, -cfg.extent), (cfg.extent, cfg.extent), cfg.n_latent, r_dec)
    h = max(grid.spacing)
    return GinoModel(grid, in_features=3, encoder_channels=cfg.encoder_channels,
                     width=cfg.width, modes=tuple(cfg.modes), n_layers=cfg.n_layers,
                     encoder_radius=cfg.encoder_radius_spacings * h,
                     decoder_radius=r_dec, encoder_weight=cfg.encoder_weight,
                     decoder_weight=cfg.weight, aggregation=cfg.aggregation,
                     kernel_hidden=tuple(cfg.kernel_hidden),
                     decoder_channels=cfg.decoder_channels, use_sdf=cfg.use_sdf, seed=cfg.seed)


def poisson_latent(model: GinoModel, inst: PoissonInstance):
    sdf = inst.sdf_at(model._nodes) if model.use_sdf else None
    cloud = inst.cloud
    return model.encode(cloud.coords, inst.features(), cloud.weights, sdf)


def poisson_loss(model: GinoModel, inst: PoissonInstance, spec: LossSpec,
                 rng: np.random.Generator, latent_sdf: np.ndarray | None = None):
    cloud = inst.cloud
    latent = model.encode(cloud.coords, inst.features(), cloud.weights, latent_sdf)
    decode = lambda q: model.decode(latent, q)  # noqa: E731
    idx_in, idx_b = cloud.interior_index, cloud.boundary_index
    data = ad.constant(0.0)
    if spec.data_weight:
        if inst.exact is None:
            raise ValueError("data term requested but the instance has no reference solution")
        pts = cloud.coords
        diff = decode(pts)[:, 0] - inst.exact.value(pts)
        data = ad.mean(diff * diff)
    res = None
    phys = ad.constant(0.0)
    if spec.lam:
        alpha = spec.alpha_for("poisson")
        if spec.backend == "autograd":
            sel = idx_in if spec.collocation is None or spec.collocation >= len(idx_in) \
                else np.sort(rng.choice(idx_in, spec.collocation, replace=False))
            res = poisson_residual(decode, cloud.coords[sel], inst.f[sel], cloud.coords[idx_b],
                                   inst.b[idx_b], "autograd", alpha)
        else:
            res = poisson_residual(decode, cloud.coords[idx_in], inst.f[idx_in],
                                   cloud.coords[idx_b], inst.b[idx_b], spec.backend, alpha)
        phys = res.loss
    total = spec.data_weight * data + spec.lam * phys
    comps = {"data": float(data.data), "pde": float(res.pde.data) if res else 0.0,
             "bc": float(res.constraint.data) if res else 0.0, "total": float(total.data)}
    return total, comps


def train_poisson(model: GinoModel, instances: Sequence[PoissonInstance], spec: LossSpec,
                  optim: OptimConfig, epochs: int, state: TrainState,
                  on_epoch: Callable[[TrainState], None] | None = None) -> TrainState:
    sdfs = [inst.sdf_at(model._nodes) if model.use_sdf else None for inst in instances]
    while state.epoch < epochs:
        order = state.rng.permutation(len(instances))
        sums: dict[str, float] = {}
        for i in order:
            loss, comps = poisson_loss(model, instances[i], spec, state.rng, sdfs[i])
            optimizer_step(model, loss, state)
            for k, v in comps.items():
                sums[k] = sums.get(k, 0.0) + v / len(instances)
        state.adam.lr = scheduler_step(state.sched, sums["total"])
        state.epoch += 1
        state.history.append({"epoch": state.epoch, "lr": state.adam.lr, **sums})
        state.best = min(state.best, sums["total"])
        if on_epoch is not None:
            on_epoch(state)
    return state


def evaluate_poisson(model: GinoModel, inst: PoissonInstance, points: np.ndarray) -> dict:
    latent = poisson_latent(model, inst)
    latent = ad.constant(latent.data)
    with ad.no_grad():
        pred = model.decode(latent, points).data[:, 0]
    out = {"n": int(points.shape[0])}
    if inst.exact is not None:
        out["rel_l2"] = metrics(pred, inst.exact.value(points)).relative_l2
    r = poisson_residual(lambda q: model.decode(latent, q), points, inst.source_at(points),
                         alpha=0.0, create_graph=False)
    out["pde"] = float(np.mean(r.residual.data ** 2))
    return out


def heldout_points(inst: PoissonInstance, n: int, seed: int) -> np.ndarray:
    return sample_interior(np.random.default_rng(seed), n, inst.c1, inst.c2, inst.r0)
