"""Command-line entry point for the inertia-estimation workbench.

Subcommands: ``gen-data``, ``train``, ``eval``, ``select-features``,
``compare-windows``, ``compare-models``, ``compare-snr``, ``inspect``.
Configuration is layered: profile defaults, then an optional JSON config
file, then repeatable ``--set key=value`` overrides; the fully resolved
configuration is echoed into the run manifest.  Exit codes: 0 success,
2 I/O failure, 3 validation failure, 4 checkpoint/config mismatch,
5 training divergence.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import struct
import sys
from dataclasses import replace
from pathlib import Path

from . import plots
from .dynamics import PMU_RECORD_MAGIC, ProbingSignal, SimConfig
from .experiments import (
    DatasetBuilder,
    DatasetSpec,
    GenerationError,
    TrainingDivergedError,
    compare_models,
    compare_time_windows,
    desk_amplitude_grid,
    default_h_grid,
    metrics_from_predictions,
    paper_amplitude_grid,
    predict,
    sha256_hex,
    snr_robustness_study,
    split,
    train,
    wrapper_feature_selection,
)
from .grid import CaseParseError, CaseValidationError, load_case, load_default_case
from .nn.model import MODEL_MAGIC, LrcnConfig, load_model
from .signals import DATASET_MAGIC, Dataset, FeatureSet

EXIT_IO = 2
EXIT_VALIDATION = 3
EXIT_MISMATCH = 4
EXIT_DIVERGED = 5


class CheckpointMismatchError(RuntimeError):
    """Model checkpoint is incompatible with the supplied data or config."""


def _profile_defaults(profile):
    base = {
        "profile": profile,
        "case": None,
        "out": "out",
        "seed": 0,
        "dataset": {
            "h_values": list(default_h_grid()),
            "amplitudes": list(paper_amplitude_grid()),
            "window": [0.0, 1.0],
            "snr_db": 60.0,
            "features": ["speed", "rocof"],
            "base_seed": None,
            "target_rate": 200.0,
            "probe": {
                "kind": "step_pulse",
                "amplitude": 0.001,
                "injection_bus": None,
                "start": 0.0,
                "duration": 0.5,
                "prbs_chip": 0.02,
                "seed": 0,
            },
            "sim": {
                "t_end": 1.5,
                "integrator_step": 1.0 / 5760.0,
                "pmu_rate": 2880.0,
            },
        },
        "model": {
            "conv1_channels": 10,
            "conv2_channels": 20,
            "kernel_size": 3,
            "lstm_units": 32,
            "head_sizes": [64, 16],
            "batch_size": 32,
            "seed": None,
            "learning_rate": 0.02,
            "lr_factor": 0.5,
            "lr_patience": 10,
            "lr_min": 1e-6,
            "lr_threshold": 1e-8,
            "sequence_stride": 1,
        },
        "train": {
            "epochs": 200,
            "arch": "lrcn",
            "train_fraction": 0.8,
            "split_seed": None,
            "train_seed": None,
            "snr_levels": [60.0, 45.0],
            "cnn_learning_rate": 1e-4,
        },
        "paths": {"dataset": None, "model": None},
    }
    if profile == "desk":
        base["dataset"]["amplitudes"] = list(desk_amplitude_grid())
        base["model"]["sequence_stride"] = 8
        base["train"]["epochs"] = 60
    elif profile != "paper":
        raise ValueError(f"unknown profile {profile!r}")
    return base


def _deep_update(dst, src):
    for key, value in src.items():
        if isinstance(value, dict) and isinstance(dst.get(key), dict):
            _deep_update(dst[key], value)
        else:
            dst[key] = value
    return dst


def _apply_set(cfg, assignment):
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ValueError(f"--set needs key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        if part not in node or not isinstance(node[part], dict):
            raise ValueError(f"unknown config group {part!r} in {key!r}")
        node = node[part]
    if parts[-1] not in node:
        raise ValueError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def resolve_config(args):
    """Layer profile defaults, config file and --set overrides."""
    profile = args.profile
    if profile is None and args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            profile = json.load(fh).get("profile")
    cfg = _profile_defaults(profile or "desk")
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            _deep_update(cfg, json.load(fh))
    for assignment in args.set or []:
        _apply_set(cfg, assignment)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if getattr(args, "data", None):
        cfg["paths"]["dataset"] = args.data
    if getattr(args, "model", None):
        cfg["paths"]["model"] = args.model
    # unset seeds inherit the run seed
    seed = int(cfg["seed"])
    if cfg["dataset"]["base_seed"] is None:
        cfg["dataset"]["base_seed"] = seed
    if cfg["model"]["seed"] is None:
        cfg["model"]["seed"] = seed
    if cfg["train"]["split_seed"] is None:
        cfg["train"]["split_seed"] = seed
    if cfg["train"]["train_seed"] is None:
        cfg["train"]["train_seed"] = seed
    return cfg


def _build_grid(cfg):
    if cfg["case"]:
        return load_case(cfg["case"])
    return load_default_case()


def _build_spec(cfg):
    d = cfg["dataset"]
    probe = ProbingSignal(
        kind=d["probe"]["kind"],
        amplitude=float(d["probe"]["amplitude"]),
        injection_bus=d["probe"]["injection_bus"],
        start=float(d["probe"]["start"]),
        duration=float(d["probe"]["duration"]),
        prbs_chip=float(d["probe"]["prbs_chip"]),
        seed=int(d["probe"]["seed"]),
    )
    sim = SimConfig(
        t_end=float(d["sim"]["t_end"]),
        integrator_step=float(d["sim"]["integrator_step"]),
        pmu_rate=float(d["sim"]["pmu_rate"]),
    )
    return DatasetSpec(
        h_values=tuple(float(h) for h in d["h_values"]),
        amplitudes=tuple(float(a) for a in d["amplitudes"]),
        window=tuple(d["window"]),
        snr_db=float(d["snr_db"]),
        features=FeatureSet(d["features"]),
        base_seed=int(d["base_seed"]),
        target_rate=float(d["target_rate"]),
        probe=probe,
        sim=sim,
    )


def _arch_configs(cfg, config):
    return {
        "lrcn": config,
        "cnn": replace(config, learning_rate=float(cfg["train"]["cnn_learning_rate"])),
    }


def _model_config(cfg, input_len):
    m = cfg["model"]
    return LrcnConfig(
        input_len=input_len,
        conv1_channels=int(m["conv1_channels"]),
        conv2_channels=int(m["conv2_channels"]),
        kernel_size=int(m["kernel_size"]),
        lstm_units=int(m["lstm_units"]),
        head_sizes=tuple(int(s) for s in m["head_sizes"]),
        batch_size=int(m["batch_size"]),
        seed=int(m["seed"]),
        learning_rate=float(m["learning_rate"]),
        lr_factor=float(m["lr_factor"]),
        lr_patience=int(m["lr_patience"]),
        lr_min=float(m["lr_min"]),
        lr_threshold=float(m["lr_threshold"]),
        sequence_stride=int(m["sequence_stride"]),
    )


def _spec_tensor_len(spec, grid):
    window_samples = round(spec.target_rate * (spec.window[1] - spec.window[0]))
    return window_samples * len(spec.features) * len(grid.monitored_buses)


def run_fingerprint(cfg):
    """Digest of the semantic configuration (artifact location excluded)."""
    semantic = {k: v for k, v in cfg.items() if k != "out"}
    return sha256_hex(json.dumps(semantic, sort_keys=True).encode())


@contextlib.contextmanager
def _output_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".inertialab.lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OSError(
            f"output directory {out} is locked by another run "
            f"(remove {lock} if stale)"
        ) from None
    try:
        os.close(fd)
        yield out
    finally:
        with contextlib.suppress(OSError):
            os.unlink(lock)


def _write_manifest(out, cfg, extra):
    payload = {"config": cfg, "config_fingerprint": run_fingerprint(cfg)}
    payload.update(extra)
    text = json.dumps(payload, indent=2, sort_keys=True)
    (out / "manifest.json").write_text(text + "\n", encoding="utf-8")
    return payload


def _summary(**fields):
    print(json.dumps(fields, sort_keys=True))


def _csv_with_fingerprint(path, header, rows, fingerprint):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_fingerprint {fingerprint}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(
                    repr(float(v)) if isinstance(v, float) else str(v) for v in row
                )
            )
            fh.write("\n")


def _load_or_generate_dataset(cfg, grid, spec, out):
    path = cfg["paths"]["dataset"]
    if path:
        return Dataset.load(path)
    dataset = DatasetBuilder(grid, spec).build()
    dataset.save(out / "dataset.bin")
    return dataset


def cmd_gen_data(cfg):
    with _output_dir(cfg) as out:
        grid = _build_grid(cfg)
        spec = _build_spec(cfg)
        dataset = DatasetBuilder(grid, spec).build()
        blob = dataset.to_bytes()
        (out / "dataset.bin").write_bytes(blob)
        case_text = (
            Path(cfg["case"]).read_bytes()
            if cfg["case"]
            else b"<bundled ieee24.case>"
        )
        _write_manifest(
            out,
            cfg,
            {
                "command": "gen-data",
                "samples": len(dataset),
                "tensor_length": dataset.tensor_length,
                "dataset_sha256": sha256_hex(blob),
                "grid_sha256": sha256_hex(case_text),
            },
        )
        _summary(
            command="gen-data",
            out=str(out),
            samples=len(dataset),
            dataset_sha256=sha256_hex(blob),
        )
    return 0


def _emit_train_artifacts(out, cfg, report, model, val_set, prefix=""):
    fingerprint = run_fingerprint(cfg)
    stamp = f"config_fingerprint {fingerprint}"
    report.save(out / f"{prefix}report.txt")
    plots.write_learning_curve_csv(
        out / f"{prefix}learning_curve.csv", report, comment=stamp
    )
    epochs = list(range(1, len(report.train_curve) + 1))
    plots.write_line_svg(
        out / f"{prefix}learning_curve.svg",
        {
            "train": (epochs, list(report.train_curve)),
            "validation": (epochs, list(report.val_curve)),
        },
        title="MSE loss vs epoch",
        xlabel="epoch",
        ylabel="mse",
        comment=stamp,
    )
    predictions = predict(model, val_set)
    plots.write_scatter_csv(
        out / f"{prefix}scatter.csv", val_set.labels, predictions, comment=stamp
    )
    plots.write_scatter_svg(
        out / f"{prefix}scatter.svg",
        val_set.labels,
        predictions,
        title="inertia estimate vs label",
        comment=stamp,
    )
    metrics = report.metrics
    _csv_with_fingerprint(
        out / f"{prefix}metrics.csv",
        ("model", "accuracy", "r2", "mse"),
        [(report.arch, metrics.acc10, metrics.r2, metrics.mse)],
        fingerprint,
    )


def cmd_train(cfg):
    with _output_dir(cfg) as out:
        grid = _build_grid(cfg)
        spec = _build_spec(cfg)
        dataset = _load_or_generate_dataset(cfg, grid, spec, out)
        config = _model_config(cfg, dataset.tensor_length)
        arch = cfg["train"]["arch"]
        config = _arch_configs(cfg, config)[arch]
        train_set, val_set = split(
            dataset, cfg["train"]["train_fraction"], cfg["train"]["split_seed"]
        )
        model, report = train(
            config,
            train_set,
            val_set,
            epochs=int(cfg["train"]["epochs"]),
            seed=int(cfg["train"]["train_seed"]),
            arch=arch,
        )
        model.save(out / "model.bin")
        _emit_train_artifacts(out, cfg, report, model, val_set)
        _write_manifest(
            out,
            cfg,
            {
                "command": "train",
                "epochs": report.epochs,
                "best_epoch": report.best_epoch,
                "metrics": vars(report.metrics),
            },
        )
        _summary(
            command="train",
            out=str(out),
            best_epoch=report.best_epoch,
            mse=report.metrics.mse,
            r2=report.metrics.r2,
            acc10=report.metrics.acc10,
        )
    return 0


def cmd_eval(cfg):
    model_path = cfg["paths"]["model"]
    if not model_path:
        raise ValueError("eval requires a model checkpoint (--model or paths.model)")
    with _output_dir(cfg) as out:
        model = load_model(model_path)
        grid = _build_grid(cfg)
        spec = _build_spec(cfg)
        dataset = _load_or_generate_dataset(cfg, grid, spec, out)
        if dataset.tensor_length != model.config.input_len:
            raise CheckpointMismatchError(
                f"checkpoint expects input length {model.config.input_len}, "
                f"dataset provides {dataset.tensor_length}"
            )
        _, val_set = split(
            dataset, cfg["train"]["train_fraction"], cfg["train"]["split_seed"]
        )
        predictions = predict(model, val_set)
        metrics = metrics_from_predictions(val_set.labels, predictions)
        fingerprint = run_fingerprint(cfg)
        stamp = f"config_fingerprint {fingerprint}"
        plots.write_scatter_csv(
            out / "scatter.csv", val_set.labels, predictions, comment=stamp
        )
        plots.write_scatter_svg(
            out / "scatter.svg", val_set.labels, predictions,
            title="inertia estimate vs label", comment=stamp,
        )
        _csv_with_fingerprint(
            out / "metrics.csv",
            ("model", "accuracy", "r2", "mse"),
            [(model.arch, metrics.acc10, metrics.r2, metrics.mse)],
            fingerprint,
        )
        _write_manifest(out, cfg, {"command": "eval", "metrics": vars(metrics)})
        _summary(
            command="eval",
            out=str(out),
            samples=len(val_set),
            mse=metrics.mse,
            r2=metrics.r2,
            acc10=metrics.acc10,
        )
    return 0


def cmd_select_features(cfg):
    with _output_dir(cfg) as out:
        grid = _build_grid(cfg)
        spec = _build_spec(cfg)
        builder = DatasetBuilder(grid, spec)
        config = _model_config(cfg, _spec_tensor_len(spec, grid))
        result = wrapper_feature_selection(
            builder,
            config,
            epochs=int(cfg["train"]["epochs"]),
            split_seed=int(cfg["train"]["split_seed"]),
            train_seed=int(cfg["train"]["train_seed"]),
        )
        fingerprint = run_fingerprint(cfg)
        rows = []
        for round_no, scores in enumerate(result.rounds, start=1):
            for name, value in scores.items():
                rows.append((round_no, name, value))
        _csv_with_fingerprint(
            out / "selection.csv", ("round", "candidate", "acc10"), rows, fingerprint
        )
        series = {}
        for round_no, scores in enumerate(result.rounds, start=1):
            for name, value in scores.items():
                series.setdefault(name, ([], []))
                series[name][0].append(round_no)
                series[name][1].append(value)
        if series:
            plots.write_line_svg(
                out / "selection.svg", series,
                title="candidate-set accuracy by selection round",
                xlabel="round", ylabel="acc10",
                comment=f"config_fingerprint {fingerprint}",
            )
        _write_manifest(
            out,
            cfg,
            {"command": "select-features", "selected": list(result.selected.names())},
        )
        _summary(command="select-features", out=str(out),
                 selected="+".join(result.selected.names()))
    return 0


def cmd_compare_windows(cfg):
    with _output_dir(cfg) as out:
        grid = _build_grid(cfg)
        spec = _build_spec(cfg)
        config = _model_config(cfg, _spec_tensor_len(spec, grid))
        comparison = compare_time_windows(
            grid,
            spec,
            config,
            epochs=int(cfg["train"]["epochs"]),
            split_seed=int(cfg["train"]["split_seed"]),
            train_seed=int(cfg["train"]["train_seed"]),
            arch=cfg["train"]["arch"],
        )
        fingerprint = run_fingerprint(cfg)
        rows = [
            (f"{w[0]}-{w[1]}", r.metrics.acc10, r.metrics.r2, r.metrics.mse)
            for w, r in comparison.reports.items()
        ]
        _csv_with_fingerprint(
            out / "window_comparison.csv",
            ("window", "accuracy", "r2", "mse"),
            rows,
            fingerprint,
        )
        series = {}
        for window, report in comparison.reports.items():
            epochs = list(range(1, len(report.val_curve) + 1))
            series[f"val {window[0]}-{window[1]}"] = (epochs, list(report.val_curve))
            report.save(out / f"report_window_{window[0]}-{window[1]}.txt")
        plots.write_line_svg(
            out / "window_comparison.svg", series,
            title="validation MSE by feature window", xlabel="epoch", ylabel="mse",
            comment=f"config_fingerprint {fingerprint}",
        )
        _write_manifest(out, cfg, {"command": "compare-windows",
                                   "clean_fingerprint": comparison.clean_fingerprint})
        _summary(command="compare-windows", out=str(out),
                 acc10={f"{w[0]}-{w[1]}": r.metrics.acc10
                        for w, r in comparison.reports.items()})
    return 0


def cmd_compare_models(cfg):
    with _output_dir(cfg) as out:
        grid = _build_grid(cfg)
        spec = _build_spec(cfg)
        config = _model_config(cfg, _spec_tensor_len(spec, grid))
        comparison = compare_models(
            grid,
            spec,
            config,
            epochs=int(cfg["train"]["epochs"]),
            split_seed=int(cfg["train"]["split_seed"]),
            train_seed=int(cfg["train"]["train_seed"]),
            arch_configs=_arch_configs(cfg, config),
        )
        fingerprint = run_fingerprint(cfg)
        rows = [
            (arch, r.metrics.acc10, r.metrics.r2, r.metrics.mse)
            for arch, r in comparison.reports.items()
        ]
        _csv_with_fingerprint(
            out / "model_comparison.csv",
            ("model", "accuracy", "r2", "mse"),
            rows,
            fingerprint,
        )
        series = {}
        for arch, report in comparison.reports.items():
            epochs = list(range(1, len(report.val_curve) + 1))
            series[f"val {arch}"] = (epochs, list(report.val_curve))
            report.save(out / f"report_{arch}.txt")
        plots.write_line_svg(
            out / "model_comparison.svg", series,
            title="validation MSE by architecture", xlabel="epoch", ylabel="mse",
            comment=f"config_fingerprint {fingerprint}",
        )
        _write_manifest(out, cfg, {"command": "compare-models",
                                   "dataset_fingerprint": comparison.dataset_fingerprint})
        _summary(command="compare-models", out=str(out),
                 r2={arch: r.metrics.r2 for arch, r in comparison.reports.items()})
    return 0


def cmd_compare_snr(cfg):
    with _output_dir(cfg) as out:
        grid = _build_grid(cfg)
        spec = _build_spec(cfg)
        config = _model_config(cfg, _spec_tensor_len(spec, grid))
        study = snr_robustness_study(
            grid,
            spec,
            config,
            epochs=int(cfg["train"]["epochs"]),
            snr_levels=tuple(float(s) for s in cfg["train"]["snr_levels"]),
            split_seed=int(cfg["train"]["split_seed"]),
            train_seed=int(cfg["train"]["train_seed"]),
            arch_configs=_arch_configs(cfg, config),
        )
        fingerprint = run_fingerprint(cfg)
        rows = [
            (snr, arch, m.acc10, m.r2, m.mse) for snr, arch, m, _ in study.rows
        ]
        _csv_with_fingerprint(
            out / "snr_comparison.csv",
            ("snr_db", "model", "accuracy", "r2", "mse"),
            rows,
            fingerprint,
        )
        _write_manifest(out, cfg, {"command": "compare-snr",
                                   "clean_fingerprint": study.clean_fingerprint})
        _summary(command="compare-snr", out=str(out),
                 rows=[[snr, arch, m.acc10] for snr, arch, m, _ in study.rows])
    return 0


def _inspect_payload(path):
    blob = Path(path).read_bytes()
    if blob.startswith(DATASET_MAGIC):
        info = Dataset.header_from_bytes(blob)
        info["kind"] = "dataset"
        return info
    if blob.startswith(MODEL_MAGIC):
        off = len(MODEL_MAGIC)
        (header_len,) = struct.unpack_from("<Q", blob, off)
        header = json.loads(blob[off + 8 : off + 8 + header_len].decode())
        header["kind"] = "model"
        return header
    if blob.startswith(PMU_RECORD_MAGIC):
        fmt = "<dIQddq"
        rate, n_buses, n_samples, h_sys, p_e, seed = struct.unpack_from(
            fmt, blob, len(PMU_RECORD_MAGIC)
        )
        return {
            "kind": "pmu-record",
            "rate": rate,
            "n_buses": n_buses,
            "n_samples": n_samples,
            "h_sys": h_sys,
            "probe_amplitude": p_e,
            "seed": seed,
        }
    raise ValueError(f"unrecognized file magic in {path}")


def cmd_inspect(cfg, path):
    print(json.dumps(_inspect_payload(path), sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="inertialab",
        description="Synthetic PMU workbench for inertia estimation studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": "simulate the corpus and write the dataset file",
        "train": "train a model on a dataset (generated if absent)",
        "eval": "evaluate a checkpoint on the validation split",
        "select-features": "greedy forward wrapper feature selection",
        "compare-windows": "train on both standard feature windows",
        "compare-models": "train recurrent and flatten baselines",
        "compare-snr": "noise robustness study",
        "inspect": "dump the header of a dataset/model/record file",
    }
    for name, help_text in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--profile", choices=("desk", "paper"))
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--set", action="append", metavar="KEY=VALUE")
        if name in ("train", "eval"):
            p.add_argument("--data", help="dataset file (INRDSET1)")
        if name == "eval":
            p.add_argument("--model", help="model checkpoint (LRCNMDL1)")
        if name == "inspect":
            p.add_argument("path", help="file to inspect")
    return parser


_HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "select-features": cmd_select_features,
    "compare-windows": cmd_compare_windows,
    "compare-models": cmd_compare_models,
    "compare-snr": cmd_compare_snr,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "inspect":
            return cmd_inspect(cfg, args.path)
        return _HANDLERS[args.command](cfg)
    except CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (CaseParseError, CaseValidationError, GenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
