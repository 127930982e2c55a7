"""Command-line surface: gen-data, train, sample, eval, bench-memory, demo-checkerboard.

Configuration precedence is command-line flags > --config file > built-in
defaults (with per-dataset default overlays).  Exit codes: 0 success,
1 runtime or numeric failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from . import bench, checkpoint, data as data_mod, flow, metrics as metrics_mod, mmdflow, store


class CliError(Exception):
    """Usage or configuration problem; maps to exit code 2."""


DEFAULTS = {
    "dataset": {
        "name": "sines",
        "n": 10000,
        "seed": 0,
        "scale": 4.5,
        "channels": 5,
        "length": 24,
        "path": None,
        "window": 24,
        "stride": 1,
        "drop": 0.0,
        "irregular": None,  # None | "interpolate" | "intervals"
        "normalize": None,  # None | "minmax01" | "zscore"
    },
    "model": {
        "num_layers": 4,
        "d_h": 64,
        "d_h_prime": 64,
        "d_r": 0,
        "pe_dim": 256,
        "r_min": 0.0,
        "r_max": 1.0,
        "seed": 0,
    },
    "train": {
        "learning_rate": 8e-4,
        "batch_size": 128,
        "steps": 1000,
        "warmup_steps": 500,
        "grad_clip": 1.0,
        "plateau_factor": 0.5,
        "plateau_patience": 2000,
        "ema_decay": 0.995,
        "ema_interval": 10,
        "betas": [0.9, 0.96],
        "seed": 0,
        "stability_weight": 0.0,
    },
    "ot": {"sigma_min": 1e-5},
    "sampler": {"steps": 500},
    "metrics": {
        "seed": 0,
        "repeats": 1,
        "epochs": 20,
        "batch_size": 128,
        "learning_rate": 1e-3,
        "hidden_multiplier": 2,
        "num_layers": 2,
        "train_frac": 0.8,
        "minmax_inputs": True,
    },
}

DATASET_DEFAULTS = {
    "sines": {
        "model": {"num_layers": 10, "d_h": 64, "d_h_prime": 64},
        "train": {"batch_size": 256, "steps": 12000},
        "sampler": {"steps": 500},
    },
    "checkerboard": {
        "model": {"num_layers": 4, "d_h": 128, "d_h_prime": 128},
        "train": {
            "batch_size": 10000,
            "steps": 20000,
            "learning_rate": 1e-3,
            "warmup_steps": 1000,
            "betas": [0.9, 0.999],
        },
        "sampler": {"steps": 100},
    },
    "pendulum": {
        "model": {"num_layers": 1, "d_h": 32, "d_h_prime": 32, "d_r": 4},
        "train": {"batch_size": 64, "steps": 3000, "learning_rate": 7e-4},
        "sampler": {"steps": 100},
    },
    "csv": {},
}

GENERATED_DATASETS = ("sines", "checkerboard", "pendulum")


def _deep_update(base: dict, overlay: dict) -> dict:
    for key, val in overlay.items():
        if isinstance(val, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], val)
        else:
            base[key] = val
    return base


def _parse_override(text: str):
    if "=" not in text:
        raise CliError(f"--set expects KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _apply_override(cfg: dict, key: str, value):
    parts = key.split(".")
    node = cfg
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise CliError(f"unknown config section {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise CliError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def build_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    file_cfg = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        with path.open() as fh:
            try:
                file_cfg = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CliError(f"bad config file {path}: {exc}")
    dataset_name = (
        getattr(args, "dataset", None)
        or file_cfg.get("dataset", {}).get("name")
        or cfg["dataset"]["name"]
    )
    if dataset_name not in DATASET_DEFAULTS:
        raise CliError(
            f"unknown dataset {dataset_name!r}; choose from {sorted(DATASET_DEFAULTS)}"
        )
    _deep_update(cfg, copy.deepcopy(DATASET_DEFAULTS[dataset_name]))
    _deep_update(cfg, file_cfg)
    cfg["dataset"]["name"] = dataset_name
    for text in getattr(args, "set", None) or []:
        key, value = _parse_override(text)
        _apply_override(cfg, key, value)
    if getattr(args, "seed", None) is not None:
        cfg["dataset"]["seed"] = args.seed
        cfg["model"]["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
    if getattr(args, "n", None) is not None:
        cfg["dataset"]["n"] = args.n
    if getattr(args, "steps", None) is not None:
        cfg["sampler"]["steps"] = args.steps
    return cfg


def _typed_configs(cfg: dict):
    try:
        model_cfg_kwargs = dict(cfg["model"])
        tcfg = flow.TrainConfig(**{**cfg["train"], "betas": tuple(cfg["train"]["betas"])})
        ot_cfg = flow.OTPathConfig(**cfg["ot"])
        scfg = flow.SamplerConfig(steps=cfg["sampler"]["steps"])
        proto = metrics_mod.MetricProtocol(**cfg["metrics"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}")
    return model_cfg_kwargs, tcfg, ot_cfg, scfg, proto


# ---------------------------------------------------------------------------
# dataset generation

def _generate_batch(dcfg: dict) -> data_mod.SequenceBatch:
    rng = np.random.default_rng(dcfg["seed"])
    name = dcfg["name"]
    if name == "sines":
        batch = data_mod.gen_sines(dcfg["n"], channels=dcfg["channels"], length=dcfg["length"], rng=rng)
    elif name == "checkerboard":
        points = data_mod.gen_checkerboard(dcfg["n"], scale=dcfg["scale"], rng=rng)
        batch = data_mod.checkerboard_as_sequences(points)
    elif name == "pendulum":
        batch = data_mod.gen_pendulum(dcfg["n"], rng=rng)
    elif name == "csv":
        if not dcfg["path"]:
            raise CliError("csv dataset needs dataset.path")
        if not Path(dcfg["path"]).exists():
            raise CliError(f"csv file not found: {dcfg['path']}")
        batch = data_mod.load_delimited(dcfg["path"], window=dcfg["window"], stride=dcfg["stride"])
    else:
        raise CliError(f"unknown dataset {name!r}")
    if dcfg.get("normalize") and name != "csv":
        batch, _ = data_mod.normalize(batch, dcfg["normalize"])
    if dcfg.get("drop"):
        batch = data_mod.drop_irregular(batch, dcfg["drop"], rng=rng)
        mode = dcfg.get("irregular")
        if mode == "interpolate":
            batch = data_mod.interpolate_missing(batch)
        elif mode == "intervals":
            batch = data_mod.intervals_as_channel(batch)
        elif mode is not None:
            raise CliError(f"unknown irregular mode {mode!r}")
    return batch


def _save_dataset(out_dir, batch: data_mod.SequenceBatch, dcfg: dict) -> dict:
    arrays = {"values": batch.values.astype(np.float32)}
    if batch.mask is not None:
        arrays["mask"] = batch.mask.astype(np.uint8)
    if batch.intervals is not None:
        arrays["intervals"] = batch.intervals.astype(np.float32)
    extra = {"kind": "dataset", "dataset": dcfg}
    if batch.norm is not None:
        extra["normalization"] = batch.norm.to_jsonable()
    return store.save_arrays(out_dir, arrays, extra)


def _load_values_artifact(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise CliError(f"artifact not found: {path}")
    try:
        arrays, manifest = store.load_arrays(path)
    except FileNotFoundError as exc:
        raise CliError(str(exc))
    if "values" not in arrays:
        raise CliError(f"artifact at {path} has no 'values' array")
    return arrays["values"], manifest


def cmd_gen_data(args) -> int:
    cfg = build_config(args)
    if not args.out:
        raise CliError("gen-data needs --out")
    batch = _generate_batch(cfg["dataset"])
    _save_dataset(args.out, batch, cfg["dataset"])
    print(f"wrote dataset {tuple(batch.values.shape)} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# training

def _append_loss_log(path: Path, start_step: int, losses, lrs):
    new_file = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["step", "loss", "lr"])
        for i, (loss, lr) in enumerate(zip(losses, lrs)):
            writer.writerow([start_step + i, f"{loss:.8e}", f"{lr:.8e}"])


def cmd_train(args) -> int:
    cfg = build_config(args)
    model_kwargs, tcfg, ot_cfg, scfg, _ = _typed_configs(cfg)
    values, data_manifest = _load_values_artifact(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoint"

    if ckpt_dir.exists():
        model, _, trainer, manifest = checkpoint.load_checkpoint(ckpt_dir, with_trainer=True)
        # continue under the stored schedule; only the step target may grow
        trainer.tcfg = dataclasses.replace(trainer.tcfg, steps=max(trainer.tcfg.steps, tcfg.steps))
        tcfg = trainer.tcfg
        print(f"resuming from step {trainer.step}")
    else:
        try:
            model_cfg = flow.FlowModelConfig(d_in=values.shape[2], **model_kwargs)
        except (TypeError, ValueError) as exc:
            raise CliError(f"bad model config: {exc}")
        model = flow.build_flow_model(model_cfg)
        trainer = flow.Trainer(model, tcfg, ot_cfg)

    if values.shape[2] != model.config.d_in:
        raise CliError(
            f"dataset has {values.shape[2]} channels but model expects {model.config.d_in}"
        )
    remaining = tcfg.steps - trainer.step
    if remaining <= 0:
        print(f"checkpoint already at step {trainer.step}; nothing to do")
        return 0

    tensor = torch.as_tensor(values, dtype=model.dtype)
    start = trainer.step + 1
    trainer.run(tensor, remaining, log_every=args.log_every, log_fn=print)
    _append_loss_log(out / "losses.csv", start, trainer.losses[-remaining:], trainer.lrs[-remaining:])
    checkpoint.save_checkpoint(
        ckpt_dir, model,
        ema_shadow=trainer.ema.shadow, trainer=trainer, tcfg=tcfg, ot_cfg=ot_cfg,
        extra={
            "dataset_manifest": data_manifest.get("extra", {}),
            "data_shape": list(values.shape),
            "sampler_config": asdict(scfg),
        },
    )
    with (out / "config.json").open("w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained to step {trainer.step}; final loss {trainer.losses[-1]:.6f}")
    return 0


# ---------------------------------------------------------------------------
# sampling

def cmd_sample(args) -> int:
    ckpt_dir = Path(args.ckpt)
    if not ckpt_dir.exists():
        raise CliError(f"checkpoint not found: {ckpt_dir}")
    model, ema_model, _, manifest = checkpoint.load_checkpoint(ckpt_dir)
    extra = manifest["extra"]
    use = model if args.raw_params or ema_model is None else ema_model
    shape = extra.get("data_shape")
    if shape is None:
        raise CliError("checkpoint manifest lacks data_shape")
    n_steps = args.steps or extra.get("sampler_config", {}).get("steps", 500)
    try:
        scfg = flow.SamplerConfig(steps=n_steps)
        ot_cfg = flow.OTPathConfig(**extra.get("ot_config", {}))
    except ValueError as exc:
        raise CliError(str(exc))
    gen = torch.Generator().manual_seed(args.seed if args.seed is not None else 0)
    samples = flow.sample(use, args.n, shape[1], shape[2], scfg, ot_cfg, gen,
                          chunk_size=2048).numpy()
    norm_info = extra.get("dataset_manifest", {}).get("normalization")
    if norm_info is not None:
        record = data_mod.NormalizationRecord.from_jsonable(norm_info)
        if record.offset.shape[0] in (1, samples.shape[0]):
            samples = data_mod.denormalize(samples, record)
    store.save_arrays(
        args.out,
        {"values": samples.astype(np.float32)},
        {
            "kind": "samples",
            "provenance": {
                "checkpoint": str(ckpt_dir),
                "step": extra.get("trainer", {}).get("step"),
                "sampler_steps": n_steps,
                "seed": args.seed if args.seed is not None else 0,
                "ema": use is ema_model,
                "n": args.n,
            },
        },
    )
    print(f"wrote {args.n} samples of shape {tuple(samples.shape[1:])} to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# evaluation

METRIC_NAMES = ("marginal", "correlational", "discriminative", "predictive", "mmd")


def cmd_eval(args) -> int:
    cfg = build_config(args)
    _, _, _, _, proto = _typed_configs(cfg)
    real, _ = _load_values_artifact(args.real)
    gen, _ = _load_values_artifact(args.gen)
    names = [n.strip() for n in args.metrics.split(",") if n.strip()]
    for name in names:
        if name not in METRIC_NAMES:
            raise CliError(f"unknown metric {name!r}; choose from {METRIC_NAMES}")
    reports = []
    for name in names:
        if name == "marginal":
            reports.append(metrics_mod.MetricReport("marginal", metrics_mod.marginal_score(real, gen), 0.0,
                                                    {"bins": 50}))
        elif name == "correlational":
            reports.append(metrics_mod.MetricReport("correlational",
                                                    metrics_mod.correlational_score(real, gen), 0.0, {}))
        elif name == "discriminative":
            reports.append(metrics_mod.discriminative_score(real, gen, proto))
        elif name == "predictive":
            reports.append(metrics_mod.predictive_score(real, gen, proto))
        elif name == "mmd":
            reports.append(metrics_mod.MetricReport("mmd", metrics_mod.mmd_report(real, gen, args.sigma),
                                                    0.0, {"sigma": args.sigma}))
    log_path = Path(args.out) if args.out else None
    print(f"{'metric':<16}{'value':>12}{'std':>12}")
    for report in reports:
        print(f"{report.name:<16}{report.value:>12.6f}{report.std:>12.6f}")
        if log_path:
            metrics_mod.write_report(log_path, report)
    return 0


# ---------------------------------------------------------------------------
# memory benchmark

def cmd_bench_memory(args) -> int:
    lengths = tuple(int(x) for x in args.N.split(","))
    modes = tuple(m.strip() for m in args.mode.split(","))
    for mode in modes:
        if mode not in (bench.TN, bench.BRUTE):
            raise CliError(f"unknown mode {mode!r}")
    rows = bench.run_memory_benchmark(d=args.d, lengths=lengths, modes=modes, seed=args.seed or 0)
    print(f"{'N':>6} {'mode':<6} {'feasible':<9} {'peak_bytes':>12} {'seconds':>9} method")
    for row in rows:
        peak = "-" if row.peak_bytes is None else str(row.peak_bytes)
        secs = "-" if row.wall_seconds is None else f"{row.wall_seconds:.3f}"
        print(f"{row.length:>6} {row.mode:<6} {str(row.feasible):<9} {peak:>12} {secs:>9} {row.method}")
    tn_rows = [r for r in rows if r.mode == bench.TN and r.feasible]
    if len(tn_rows) >= 2:
        slope = bench.loglog_slope([r.length for r in tn_rows], [r.peak_bytes for r in tn_rows])
        print(f"tn log-log slope: {slope:.3f}")
    if args.out:
        with Path(args.out).open("w") as fh:
            json.dump([asdict(r) for r in rows], fh, indent=2)
            fh.write("\n")
    return 0


# ---------------------------------------------------------------------------
# checkerboard demo

def _flow_mmd_curve(model, target2d, n_particles, flow_steps, seed, record_at):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(n_particles, 2, 1, generator=gen)
    history = {}
    if 0 in record_at:
        history[0] = mmdflow.mmd2(x.numpy().reshape(-1, 2), target2d, 1.0)
    h = 1.0 / flow_steps
    with torch.no_grad():
        for k in range(flow_steps):
            t = k * h
            x_mid = x + 0.5 * h * flow.vector_field(x, t, model)
            x = x + h * flow.vector_field(x_mid, t + 0.5 * h, model)
            if not torch.isfinite(x).all():
                raise RuntimeError(f"non-finite sampler state at step {k + 1}")
            if k + 1 in record_at:
                history[k + 1] = mmdflow.mmd2(x.numpy().reshape(-1, 2), target2d, 1.0)
    return x.numpy().reshape(-1, 2), history


def cmd_demo_checkerboard(args) -> int:
    cfg = build_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else 0

    rng = np.random.default_rng(seed)
    train_points = data_mod.gen_checkerboard(args.train_n, rng=rng)
    target = data_mod.gen_checkerboard(args.particles, rng=np.random.default_rng(seed + 1))

    try:
        model_cfg = flow.FlowModelConfig(
            d_in=1, num_layers=args.num_layers, d_h=args.d_h, d_h_prime=args.d_h,
            seed=seed,
        )
        tcfg = flow.TrainConfig(
            learning_rate=args.lr, batch_size=args.batch, steps=args.train_steps,
            warmup_steps=args.warmup, betas=(0.9, 0.999), seed=seed,
            plateau_patience=max(200, args.train_steps // 5),
        )
        ot_cfg = flow.OTPathConfig(**cfg["ot"])
    except ValueError as exc:
        raise CliError(str(exc))

    print(f"training spectral flow on checkerboard: {args.train_steps} steps, batch {args.batch}")
    model = flow.build_flow_model(model_cfg)
    result = flow.train(train_points[:, :, None], model, tcfg, ot_cfg, log_every=args.log_every)

    record_at = sorted({0, 10, 50, 100, args.flow_steps} | set(range(0, args.flow_steps + 1, args.record_every)))
    record_at = [s for s in record_at if s <= args.flow_steps]

    print("sampling trained flow and evaluating distance curve")
    ours_pts, ours_hist = _flow_mmd_curve(
        result.ema_model, target, args.particles, args.flow_steps, seed + 2, set(record_at)
    )

    init = np.random.default_rng(seed + 3).standard_normal((args.particles, 2))
    curves = {"ours": ours_hist}
    finals = {"ours": ours_pts}
    for label, spec in (
        ("static", mmdflow.KernelSpec(kind=mmdflow.STATIC_RBF, sigma=1.0)),
        ("time_dependent", mmdflow.KernelSpec(kind=mmdflow.TIME_RBF, sigma0=1.0, sigma1=0.1)),
    ):
        print(f"running {label} particle descent baseline")
        cloud, hist = mmdflow.run_mmd_flow(
            init, target, spec, num_steps=100, step_size=args.step_size, record_at=set(record_at) | {0, 10, 50, 100},
        )
        curves[label] = hist
        finals[label] = cloud.positions

    table_path = out / "mmd_curves.csv"
    steps_union = sorted(set().union(*[set(h) for h in curves.values()]))
    with table_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + list(curves))
        for s in steps_union:
            writer.writerow([s] + [f"{curves[c][s]:.6e}" if s in curves[c] else "" for c in curves])

    summary = _demo_summary(curves)
    with (out / "summary.json").open("w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    _demo_plots(out, target, finals, curves)
    checkpoint.save_checkpoint(out / "checkpoint", result.model,
                               ema_shadow=result.trainer.ema.shadow, trainer=result.trainer,
                               tcfg=tcfg, ot_cfg=ot_cfg,
                               extra={"data_shape": [args.train_n, 2, 1]})

    print(json.dumps(summary, indent=2))
    return 0


def _demo_summary(curves: dict) -> dict:
    summary = {}
    for label, hist in curves.items():
        last = max(hist)
        summary[label] = {"terminal_mmd2": hist[last], "steps": last}
    for label in ("static", "time_dependent"):
        hist = curves[label]
        early = hist[0] - hist[10]
        late = hist[50] - hist[100]
        summary[label]["early_decrease"] = early
        summary[label]["late_decrease"] = late
        summary[label]["stagnated"] = bool(late < 0.1 * early)
    ours = summary["ours"]["terminal_mmd2"]
    summary["ours"]["ratio_vs_static"] = ours / summary["static"]["terminal_mmd2"]
    summary["ours"]["ratio_vs_time_dependent"] = ours / summary["time_dependent"]["terminal_mmd2"]
    return summary


def _demo_plots(out: Path, target, finals: dict, curves: dict):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 1 + len(finals), figsize=(4 * (1 + len(finals)), 4))
    axes[0].scatter(target[:, 0], target[:, 1], s=1, alpha=0.3)
    axes[0].set_title("target")
    for ax, (label, pts) in zip(axes[1:], finals.items()):
        ax.scatter(pts[:, 0], pts[:, 1], s=1, alpha=0.3)
        ax.set_title(label)
    for ax in axes:
        ax.set_xlim(-6, 6)
        ax.set_ylim(-6, 6)
    fig.tight_layout()
    fig.savefig(out / "samples.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(6, 4))
    for label, hist in curves.items():
        steps = sorted(hist)
        ax.semilogy(steps, [hist[s] for s in steps], marker="o", ms=3, label=label)
    ax.set_xlabel("sampling step")
    ax.set_ylabel("MMD$^2$ to target (RBF $\\sigma$=1)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "mmd_curves.png", dpi=120)
    plt.close(fig)


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(parser, *, dataset=False):
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. --set train.steps=500")
    parser.add_argument("--seed", type=int, default=None)
    if dataset:
        parser.add_argument("--dataset", choices=sorted(DATASET_DEFAULTS), default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specflow", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate or ingest a dataset artifact")
    _add_common(p, dataset=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a flow model on a dataset artifact")
    _add_common(p, dataset=True)
    p.add_argument("--data", required=True, help="dataset artifact directory")
    p.add_argument("--out", required=True, help="run directory (checkpoint + logs)")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw sequences from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--steps", type=int, default=None, help="ODE steps (default: from checkpoint)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--raw-params", action="store_true", help="sample with raw instead of EMA weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="score a generated artifact against a real one")
    _add_common(p)
    p.add_argument("--real", required=True)
    p.add_argument("--gen", required=True)
    p.add_argument("--metrics", default="marginal,correlational")
    p.add_argument("--sigma", type=float, default=1.0, help="bandwidth for the mmd metric")
    p.add_argument("--out", default=None, help="results log to append to")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench-memory", help="peak memory of contraction vs materialization")
    p.add_argument("--d", type=int, default=32)
    p.add_argument("--N", default="4,16,64,256")
    p.add_argument("--mode", default="tn,brute")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_bench_memory)

    p = sub.add_parser("demo-checkerboard", help="train on the checkerboard and compare to particle descent")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--train-n", type=int, default=50000)
    p.add_argument("--train-steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=1024)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--num-layers", type=int, default=4)
    p.add_argument("--d-h", type=int, default=64)
    p.add_argument("--particles", type=int, default=10000)
    p.add_argument("--flow-steps", type=int, default=100)
    p.add_argument("--step-size", type=float, default=1.0)
    p.add_argument("--record-every", type=int, default=5)
    p.add_argument("--log-every", type=int, default=500)
    p.set_defaults(func=cmd_demo_checkerboard)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime/numeric failures
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
