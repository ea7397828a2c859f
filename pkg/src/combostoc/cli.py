"""Command-line entry point.

One executable exposes the experiment surface: path-space density maps,
particle simulations, training (single run or mode sweep), synchronized
sampling, graded control and structured assembly. Every run writes a
resolved-config echo so it can be reproduced byte-for-byte.

Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 missing artifact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import pathspace, sampler, trainer
from .data_metrics import energy_distance
from .errors import (CombostocError, MissingCheckpoint, NonFiniteLoss,
                     UnknownKind)
from .regressor import load_checkpoint
from .tensor_core import RandomSource, load_tensor_csv, save_tensor_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_MISSING = 0, 2, 3, 4


class ConfigError(Exception):
    pass


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def _apply_overrides(config: dict, overrides) -> dict:
    """Dotted key=value pairs; flags win over the config file."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = config
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-object")
        node[parts[-1]] = _parse_value(raw)
    return config


def _require(config: dict, field: str):
    if field not in config:
        raise ConfigError(f"config is missing required field {field!r}")
    return config[field]


def _echo_config(config: dict, out: str) -> None:
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config_echo.json"), "w") as f:
        json.dump(config, f, indent=2, sort_keys=True)


def _grid_from_config(config: dict) -> pathspace.Grid2D:
    g = config.get("grid", {})
    if isinstance(g, str):  # shorthand like "8x8"
        nx, ny = (int(v) for v in g.lower().split("x"))
        g = {"nx": nx, "ny": ny}
    bounds = g.get("bounds", [-3.0, 3.0, -3.0, 3.0])
    return pathspace.Grid2D.from_bounds(bounds[0], bounds[1], bounds[2], bounds[3],
                                        int(g.get("nx", 60)), int(g.get("ny", 60)))


def _annulus_mean(dm: pathspace.DensityMap, center, r_in, r_out) -> float:
    xs, ys = dm.grid.centers()
    cx, cy = np.meshgrid(xs, ys, indexing="ij")
    r = np.hypot(cx - center[0], cy - center[1])
    sel = (r >= r_in) & (r <= r_out)
    return float(dm.values[sel].mean()) if np.any(sel) else 0.0


def cmd_density(config: dict, out: str) -> int:
    x1 = np.asarray(_require(config, "x1"), dtype=np.float64)
    grid = _grid_from_config(config)
    n_pairs = int(config.get("n_pairs", 200_000))
    seed = int(config.get("seed", 0))
    src_spec = config.get("source", "normal")
    if isinstance(src_spec, list):
        src_spec = np.asarray(src_spec, dtype=np.float64)
    report = {"seed": seed, "n_pairs": n_pairs}
    for mode in ("fm", "combostoc"):
        dm = pathspace.density_grid(src_spec, x1, grid, mode, n_pairs,
                                    RandomSource(seed))
        pathspace.save_density_csv(os.path.join(out, f"density_{mode}.csv"), dm)
        dm.to_pgm(os.path.join(out, f"density_{mode}.pgm"))
        report[f"near_target_{mode}"] = _annulus_mean(dm, x1, 0.05, 0.2)
        mid = 0.5 * x1
        report[f"span_center_{mode}"] = _annulus_mean(dm, mid, 0.05, 0.2)
    report["fm_target_to_center_ratio"] = (
        report["near_target_fm"] / max(report["span_center_fm"], 1e-30))
    report["fm_concentrates_at_target"] = report["fm_target_to_center_ratio"] >= 2.0
    z = np.zeros(2)
    rng = RandomSource(seed + 1)
    with open(os.path.join(out, "gradient_residuals.csv"), "w") as f:
        f.write("x,y,residual\n")
        worst = 0.0
        for _ in range(int(config.get("n_identity_points", 20))):
            pt = 0.1 + 0.8 * rng.uniform((2,))
            pt = z + pt * (x1 - z)
            res = pathspace.gradient_identity_residual(pt, z, x1)
            worst = max(worst, res)
            f.write(f"{pt[0]!r},{pt[1]!r},{res!r}\n")
    report["max_identity_residual"] = worst
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(report, f, indent=2)
    return EXIT_OK


def cmd_particles(config: dict, out: str) -> int:
    grid = _grid_from_config(config)
    seed = int(config.get("seed", 0))
    if "pairs" in config:
        pairs = [(np.asarray(z, dtype=np.float64), np.asarray(x, dtype=np.float64))
                 for z, x in config["pairs"]]
    else:
        # fixture: normal sources paired with cycling targets
        targets_spec = np.asarray(_require(config, "targets"), dtype=np.float64)
        n_pairs = int(config.get("n_pairs", 40))
        zs = RandomSource(seed).normal((n_pairs, 2))
        pairs = [(zs[i], targets_spec[i % len(targets_spec)])
                 for i in range(n_pairs)]
    n = int(config.get("n_particles", 500))
    steps = int(config.get("steps", 100))
    n_interp = int(config.get("n_interp", 100))
    radius = float(config.get("outlier_radius", 0.15))
    targets = np.asarray(config.get("targets", [list(x) for _, x in pairs]))
    summary = {"seed": seed, "n_particles": n, "steps": steps,
               "n_interp": n_interp, "outlier_radius": radius}
    for mode in ("fm", "combostoc"):
        field = pathspace.marginal_velocity_field(pairs, grid, mode, n_interp,
                                                  RandomSource(seed))
        particles = pathspace.simulate_particles(field, n, steps,
                                                 RandomSource(seed + 1))
        pathspace.save_trajectories_csv(
            os.path.join(out, f"trajectories_{mode}.csv"), particles)
        summary[f"outliers_{mode}"] = pathspace.outlier_count(particles, targets,
                                                              radius)
    summary["combostoc_not_worse"] = (summary["outliers_combostoc"]
                                      <= summary["outliers_fm"])
    summary["strict_decrease"] = (summary["outliers_combostoc"]
                                  < summary["outliers_fm"])
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2)
    return EXIT_OK


def _save_curve_svg(path, series, width=640, height=360) -> None:
    """Minimal multi-series line plot; series is {label: [(x, y), ...]}."""
    pts_all = [p for pts in series.values() for p in pts]
    if not pts_all:
        return
    xs = [p[0] for p in pts_all]
    ys = [p[1] for p in pts_all]
    x0, x1 = min(xs), max(xs) or 1
    y0, y1 = min(ys), max(ys)
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 40
    sx = lambda x: pad + (x - x0) / max(x1 - x0, 1e-30) * (width - 2 * pad)
    sy = lambda y: height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    for i, (label, pts) in enumerate(series.items()):
        d = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in pts)
        color = colors[i % len(colors)]
        lines.append(f'<polyline fill="none" stroke="{color}" points="{d}"/>')
        lines.append(f'<text x="{pad}" y="{pad + 14 * i}" fill="{color}" '
                     f'font-size="12">{label}</text>')
    lines.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(lines))


def _split_null_tau(tcfg_dict: dict) -> float:
    """Convergence threshold: twice the energy distance between the two
    halves of the training dataset (the same-distribution null)."""
    seed = int(tcfg_dict.get("seed", 0))
    ds = trainer.build_dataset(tcfg_dict["dataset"], RandomSource(seed).child(1))
    half = len(ds.samples) // 2
    if half < 1:
        return float("nan")
    return 2.0 * energy_distance(ds.samples[:half], ds.samples[half:])


def cmd_train(config: dict, out: str) -> int:
    tcfg_dict = _require(config, "trainer")
    sweep = config.get("sweep_modes")
    modes = sweep if sweep else [tcfg_dict["unsync"]["mode"]]
    curves = {}
    final = {"tau": _split_null_tau(tcfg_dict), "final": {}}
    for mode in modes:
        d = json.loads(json.dumps(tcfg_dict))
        d["unsync"]["mode"] = mode
        cfg = trainer.config_from_dict(d)
        run_dir = os.path.join(out, mode) if sweep else out
        _, log = trainer.train_run(cfg, out_dir=run_dir)
        curves[mode] = list(zip(log.eval_steps, log.eval_values))
        final["final"][mode] = log.eval_values[-1] if log.eval_values else None
    _save_curve_svg(os.path.join(out, "metric_curves.svg"), curves)
    loss_curves = {}
    for mode in modes:
        run_dir = os.path.join(out, mode) if sweep else out
        with open(os.path.join(run_dir, "log.csv")) as f:
            next(f)
            rows = [line.split(",") for line in f if line.strip()]
        loss_curves[mode] = [(int(r[0]), float(r[1])) for r in rows[::10]]
    _save_curve_svg(os.path.join(out, "loss_curves.svg"), loss_curves)
    with open(os.path.join(out, "final_metrics.json"), "w") as f:
        json.dump(final, f, indent=2)
    return EXIT_OK


def _load_model(config: dict):
    prefix = _require(config, "checkpoint")
    if not os.path.exists(str(prefix) + ".json"):
        raise MissingCheckpoint(f"no checkpoint at {prefix!r}")
    return load_checkpoint(prefix)


def _sampler_config(config: dict) -> sampler.SamplerConfig:
    s = config.get("sampler", {})
    return sampler.SamplerConfig(K=int(s.get("K", 250)),
                                 integrator=s.get("integrator", "ode_euler"),
                                 scheme=s.get("scheme", "uniform_step_number"),
                                 sde_noise_scale=float(s.get("sde_noise_scale", 0.0)))


def _write_samples(path, samples, seed, scfg, mask_digest="none") -> None:
    flat = samples.reshape(len(samples), -1)
    with open(path, "w") as f:
        f.write(f"# seed={seed} K={scfg.K} scheme={scfg.scheme} "
                f"mask={mask_digest}\n")
        f.write("shape=" + "x".join(str(d) for d in samples.shape) + "\n")
        for row in flat:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_sample(config: dict, out: str) -> int:
    params = _load_model(config)
    scfg = _sampler_config(config)
    seed = int(config.get("seed", 0))
    n = int(config.get("n", 2048))
    label = int(config.get("class_label", 0))
    samples = sampler.sample_sync(params, n, scfg, label, RandomSource(seed))
    _write_samples(os.path.join(out, "samples.csv"), samples, seed, scfg)
    report = {"seed": seed, "n": n, "K": scfg.K}
    if "dataset" in config:
        ref = trainer.build_dataset(config["dataset"], RandomSource(seed + 1))
        ref_records = trainer.records_of(ref, params.layout)
        report["energy_distance"] = energy_distance(samples, ref_records)
    with open(os.path.join(out, "report.json"), "w") as f:
        json.dump(report, f, indent=2)
    return EXIT_OK


def cmd_graded(config: dict, out: str) -> int:
    params = _load_model(config)
    scfg = _sampler_config(config)
    seed = int(config.get("seed", 0))
    reference = load_tensor_csv(_require(config, "reference"))
    mask = sampler.GradedMask(load_tensor_csv(_require(config, "mask")))
    label = int(config.get("class_label", 0))
    result = sampler.sample_graded(params, reference, mask, scfg, label,
                                   RandomSource(seed))
    digest = f"mean{float(np.mean(mask.m)):.6f}"
    _write_samples(os.path.join(out, "graded.csv"),
                   result if result.ndim > len(params.layout.record_shape)
                   else result[None], seed, scfg, digest)
    save_tensor_csv(os.path.join(out, "graded_tensor.csv"), result)
    return EXIT_OK


def cmd_assemble(config: dict, out: str) -> int:
    params = _load_model(config)
    scfg = _sampler_config(config)
    seed = int(config.get("seed", 0))
    parts = sampler.load_parts_json(_require(config, "parts"), params.layout)
    freeze = tuple(config.get("freeze", ["shape_code", "bbox_size"]))
    weight = float(config.get("preserve_weight", 0.9))
    result = sampler.assemble_parts(params, parts, freeze, scfg,
                                    int(config.get("class_label", 0)),
                                    RandomSource(seed), weight)
    sampler.save_parts_json(os.path.join(out, "assembled.json"), result,
                            params.layout)
    return EXIT_OK


COMMANDS = {
    "density": cmd_density,
    "particles": cmd_particles,
    "train": cmd_train,
    "sample": cmd_sample,
    "graded": cmd_graded,
    "assemble": cmd_assemble,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="combostoc",
        description="Vectorized-timestep diffusion experiments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="out")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker threads of the numeric backend")
    try:
        args, overrides = parser.parse_known_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        with open(args.config) as f:
            config = json.load(f)
        if not isinstance(config, dict):
            raise ConfigError("config root must be a JSON object")
        config = _apply_overrides(config, overrides)
        if args.seed is not None:
            config["seed"] = args.seed
            if "trainer" in config:
                config["trainer"]["seed"] = args.seed
        os.makedirs(args.out, exist_ok=True)
        _echo_config(config, args.out)
        return COMMANDS[args.command](config, args.out)
    except (ConfigError, UnknownKind, json.JSONDecodeError, FileNotFoundError,
            KeyError, TypeError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingCheckpoint as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_MISSING
    except (NonFiniteLoss, CombostocError, FloatingPointError,
            np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
