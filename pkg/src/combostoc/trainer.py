"""Optimization loop tying datasets, interpolant targets and the regressor.

One decoupled-weight-decay adaptive-moment stream (canonical constants
0.9 / 0.999 / 1e-8, weight decay 0) at a fixed learning rate. Evaluation
draws 2048 synchronized samples and scores energy distance against
held-out data.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .data_metrics import (StructuredSpec, ToyDataset, energy_distance,
                           make_2d_dataset, make_structured_dataset)
from .errors import NonFiniteLoss
from .interpolant import GridLayout, StructuredLayout, UnsyncConfig, make_batch
from .regressor import (EmbedSpec, ModelParams, init_params, load_checkpoint,
                        loss_and_grad, save_checkpoint)
from .sampler import SamplerConfig, sample_sync
from .tensor_core import RandomSource, Tensor, save_tensor_csv

BETA1, BETA2, ADAM_EPS, WEIGHT_DECAY = 0.9, 0.999, 1e-8, 0.0


@dataclass(frozen=True)
class TrainConfig:
    unsync: UnsyncConfig
    dataset: dict
    prediction_kind: str = "velocity"
    compensate: bool = True
    learning_rate: float = 1e-4
    batch_size: int = 256
    steps: int = 5000
    seed: int = 0
    eval_every: int = 500
    n_classes: int = 1
    hidden: tuple = (128, 128, 128)
    embed: EmbedSpec = field(default_factory=EmbedSpec)
    eval_samples: int = 2048
    eval_K: int = 250

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise ValueError("steps >= 0, batch_size >= 1, eval_every >= 1 required")


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    eval_steps: list = field(default_factory=list)
    eval_values: list = field(default_factory=list)
    step_seconds: list = field(default_factory=list)

    def save(self, path) -> None:
        evals = dict(zip(self.eval_steps, self.eval_values))
        with open(path, "w") as f:
            f.write("step,loss,metric\n")
            for i, loss in enumerate(self.losses):
                step = i + 1
                metric = repr(evals[step]) if step in evals else ""
                f.write(f"{step},{repr(loss)},{metric}\n")


def build_dataset(spec: dict, source: RandomSource) -> ToyDataset:
    """Materialize the dataset named by a config dict {kind, n, ...}."""
    spec = dict(spec)
    kind = spec.pop("kind")
    n = spec.pop("n")
    if kind == "structured":
        sspec = StructuredSpec(**spec.pop("spec", {}))
        return make_structured_dataset(sspec, spec.pop("class_label", 0), n,
                                       source, **spec)
    return make_2d_dataset(kind, n, source, **spec)


def layout_for(ds: ToyDataset):
    if ds.kind == "structured":
        return StructuredLayout(parts=ds.spec.parts, seg_widths=ds.spec.seg_widths)
    return GridLayout(channels=ds.samples.shape[1])


def records_of(ds: ToyDataset, layout) -> Tensor:
    return ds.samples.reshape((len(ds.samples),) + layout.record_shape)


@dataclass
class TrainState:
    """Everything one optimization step touches, checkpointable."""

    params: ModelParams
    m: np.ndarray
    v: np.ndarray
    step: int
    data: Tensor
    labels: np.ndarray
    batch_source: RandomSource


def init_state(cfg: TrainConfig, ds: ToyDataset = None) -> TrainState:
    root = RandomSource(cfg.seed)
    if ds is None:
        ds = build_dataset(cfg.dataset, root.child(1))
    layout = layout_for(ds)
    params = init_params(layout, root.child(2), cfg.embed, cfg.n_classes,
                         cfg.hidden, cfg.prediction_kind)
    labels = (ds.class_labels if ds.class_labels is not None
              else np.zeros(len(ds.samples), dtype=np.int64))
    return TrainState(params=params, m=np.zeros(params.size), v=np.zeros(params.size),
                      step=0, data=records_of(ds, layout), labels=labels,
                      batch_source=root.child(3))


def train_step(state: TrainState, cfg: TrainConfig, source: RandomSource = None,
               dump_dir: str = "."):
    """One batch draw, loss/gradient and optimizer update; returns (params, loss)."""
    src = source if source is not None else state.batch_source
    idx = src.integers(0, len(state.data), (cfg.batch_size,))
    x1 = state.data[idx]
    z = src.normal(x1.shape)
    batch = make_batch(cfg.unsync, z, x1, state.labels[idx],
                       cfg.prediction_kind, cfg.compensate, src)
    loss, grad = loss_and_grad(state.params, batch)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        dump = os.path.join(dump_dir, f"nonfinite_batch_step{state.step + 1}")
        save_tensor_csv(dump + "_z.csv", batch.z)
        save_tensor_csv(dump + "_x1.csv", batch.x1)
        save_tensor_csv(dump + "_t.csv", np.asarray(batch.t, dtype=np.float64))
        raise NonFiniteLoss(f"non-finite loss at step {state.step + 1}", dump)
    state.step += 1
    state.m *= BETA1
    state.m += (1.0 - BETA1) * grad
    state.v *= BETA2
    state.v += (1.0 - BETA2) * grad * grad
    m_hat = state.m / (1.0 - BETA1 ** state.step)
    v_hat = state.v / (1.0 - BETA2 ** state.step)
    state.params.vector -= cfg.learning_rate * (
        m_hat / (np.sqrt(v_hat) + ADAM_EPS) + WEIGHT_DECAY * state.params.vector)
    return state.params, loss


def evaluate(state: TrainState, cfg: TrainConfig, holdout: Tensor) -> float:
    """Energy distance between synchronized samples and held-out records."""
    eval_src = RandomSource(cfg.seed).child(1_000_000 + state.step)
    n = min(cfg.eval_samples, len(holdout))
    labels = np.arange(n) % cfg.n_classes
    samples = sample_sync(state.params, n, SamplerConfig(K=cfg.eval_K),
                          labels, eval_src)
    return energy_distance(samples, holdout[:n])


def train_run(cfg: TrainConfig, out_dir: str = None):
    """Full optimization run; returns (params, TrainLog).

    Held-out evaluation data is drawn independently of the training set.
    If out_dir is given, writes checkpoint, loss/metric CSV and a config echo.
    """
    root = RandomSource(cfg.seed)
    ds = build_dataset(cfg.dataset, root.child(1))
    state = init_state(cfg, ds)
    layout = layout_for(ds)
    holdout_spec = dict(cfg.dataset)
    holdout_spec["n"] = max(cfg.eval_samples, 1)
    holdout = records_of(build_dataset(holdout_spec, root.child(5)), layout)
    log = TrainLog()
    for _ in range(cfg.steps):
        t0 = time.perf_counter()
        _, loss = train_step(state, cfg, dump_dir=out_dir or ".")
        log.step_seconds.append(time.perf_counter() - t0)
        log.losses.append(loss)
        if state.step % cfg.eval_every == 0 or state.step == cfg.steps:
            log.eval_steps.append(state.step)
            log.eval_values.append(evaluate(state, cfg, holdout))
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        save_state(os.path.join(out_dir, "checkpoint"), state, cfg)
        log.save(os.path.join(out_dir, "log.csv"))
        with open(os.path.join(out_dir, "config.json"), "w") as f:
            json.dump(config_to_dict(cfg), f, indent=2)
    return state.params, log


def save_state(path_prefix, state: TrainState, cfg: TrainConfig) -> None:
    """Checkpoint: model weights plus optimizer moments and RNG position."""
    save_checkpoint(path_prefix, state.params, seed=cfg.seed, step=state.step)
    with open(str(path_prefix) + "_opt.csv", "w") as f:
        f.write("m,v\n")
        for mi, vi in zip(state.m, state.v):
            f.write(f"{repr(float(mi))},{repr(float(vi))}\n")
    with open(str(path_prefix) + "_state.json", "w") as f:
        json.dump({"step": state.step,
                   "batch_seed": state.batch_source.seed,
                   "batch_counter": state.batch_source.counter}, f)


def load_state(path_prefix, cfg: TrainConfig) -> TrainState:
    """Rebuild a TrainState that continues bit-identically to the saved run."""
    params = load_checkpoint(path_prefix)
    with open(str(path_prefix) + "_opt.csv") as f:
        next(f)
        rows = [line.strip().split(",") for line in f if line.strip()]
    m = np.array([float(r[0]) for r in rows])
    v = np.array([float(r[1]) for r in rows])
    with open(str(path_prefix) + "_state.json") as f:
        meta = json.load(f)
    ds = build_dataset(cfg.dataset, RandomSource(cfg.seed).child(1))
    layout = layout_for(ds)
    labels = (ds.class_labels if ds.class_labels is not None
              else np.zeros(len(ds.samples), dtype=np.int64))
    return TrainState(params=params, m=m, v=v, step=meta["step"],
                      data=records_of(ds, layout), labels=labels,
                      batch_source=RandomSource(meta["batch_seed"],
                                                meta["batch_counter"]))


def _layout_to_dict(layout) -> dict:
    if layout.kind == "grid":
        return {"kind": "grid", "channels": layout.channels,
                "height": layout.height, "width": layout.width}
    return {"kind": "structured", "parts": layout.parts,
            "seg_widths": list(layout.seg_widths)}


def _layout_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "grid":
        return GridLayout(**d)
    return StructuredLayout(parts=d["parts"], seg_widths=tuple(d["seg_widths"]))


def config_to_dict(cfg: TrainConfig) -> dict:
    return {
        "unsync": {"mode": cfg.unsync.mode,
                   "layout": _layout_to_dict(cfg.unsync.layout),
                   "mix_fraction": cfg.unsync.mix_fraction,
                   "sync_blend": cfg.unsync.sync_blend},
        "dataset": cfg.dataset,
        "prediction_kind": cfg.prediction_kind,
        "compensate": cfg.compensate,
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "steps": cfg.steps,
        "seed": cfg.seed,
        "eval_every": cfg.eval_every,
        "n_classes": cfg.n_classes,
        "hidden": list(cfg.hidden),
        "embed": {"n_freq": cfg.embed.n_freq,
                  "compressed_dim": cfg.embed.compressed_dim},
        "eval_samples": cfg.eval_samples,
        "eval_K": cfg.eval_K,
    }


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    u = dict(d.pop("unsync"))
    unsync = UnsyncConfig(mode=u["mode"], layout=_layout_from_dict(u["layout"]),
                          mix_fraction=u.get("mix_fraction", 0.0),
                          sync_blend=u.get("sync_blend", 0.0))
    embed = EmbedSpec(**d.pop("embed", {}))
    d["hidden"] = tuple(d.get("hidden", (128, 128, 128)))
    return TrainConfig(unsync=unsync, embed=embed, **d)
