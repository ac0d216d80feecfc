"""Command-line entry point: parse, encode, synth, train, eval, gradcheck.

Every command is deterministic given (config file, seed); the fully
resolved configuration is echoed into the output directory so a run can
be reproduced from its artifacts alone. Exit codes: 0 success, 1 usage,
2 data error, 3 verification failure.

Dataset directories hold one ANGK1 tensor per clip plus a manifest.tsv
with tab-separated columns: file, label ('-' when unlabeled),
valid_frames, source.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import report
from .angnet import (
    AngNet,
    AngNetConfig,
    CheckpointError,
    CheckpointMeta,
    load_checkpoint,
    save_checkpoint,
)
from .core_types import SchemaError, SkeletonTopology, kinect25, load_schema
from .encoders import FEATURE_SETS, STREAMS, encode_features
from .ntu_io import (
    ParseError,
    TensorFormatError,
    clip_to_tensor,
    normalize_clip,
    parse_skeleton_file,
    read_tensor,
    tensor_to_clip,
    write_tensor,
)
from .training import (
    TrainConfig,
    TrainingError,
    confusable_pair_spec,
    evaluate,
    generate_synthetic,
    train,
)
from .verify import full_suite

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_VERIFY = 3

MANIFEST_NAME = "manifest.tsv"
MANIFEST_HEADER = "# angkit manifest v1: file\tlabel\tvalid_frames\tsource"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


# ---------------------------------------------------------------------------
# Run configuration: defaults <- config file <- command line
# ---------------------------------------------------------------------------

_DEFAULTS = {
    "run": {
        "seed": "0",
        "schema": "",
        "stream": "static",
        "features": "joint,bone,angular",
        "frames": "300",
        "max_persons": "2",
    },
    "train": {
        "epochs": "40",
        "lr": "0.05",
        "momentum": "0.9",
        "decay_epochs": "20,30",
        "decay_factor": "0.1",
        "batch_size": "8",
    },
    "synth": {
        "n_per_class": "64",
        "noise_sigma": "0.01",
        "scale_min": "0.8",
        "scale_max": "1.2",
    },
}


def resolve_config(args: argparse.Namespace) -> dict[str, dict[str, str]]:
    resolved = {section: dict(values) for section, values in _DEFAULTS.items()}
    config_path = getattr(args, "config", None)
    if config_path:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise UsageError(f"config file not found: {config_path}")
        for section in parser.sections():
            if section not in resolved:
                raise UsageError(f"unknown config section [{section}]")
            for key, value in parser.items(section):
                if key not in resolved[section]:
                    raise UsageError(f"unknown config key '{key}' in [{section}]")
                resolved[section][key] = value
    overrides = {
        ("run", "seed"): getattr(args, "seed", None),
        ("run", "schema"): getattr(args, "schema", None),
        ("run", "stream"): getattr(args, "stream", None),
        ("run", "features"): getattr(args, "features", None),
        ("run", "frames"): getattr(args, "frames", None),
        ("run", "max_persons"): getattr(args, "max_persons", None),
        ("train", "epochs"): getattr(args, "epochs", None),
        ("train", "lr"): getattr(args, "lr", None),
        ("train", "batch_size"): getattr(args, "batch_size", None),
        ("synth", "n_per_class"): getattr(args, "n_per_class", None),
        ("synth", "noise_sigma"): getattr(args, "noise_sigma", None),
    }
    for (section, key), value in overrides.items():
        if value is not None:
            resolved[section][key] = str(value)
    return resolved


def echo_config(resolved: dict[str, dict[str, str]], out_dir: Path) -> None:
    parser = configparser.ConfigParser()
    for section, values in resolved.items():
        parser[section] = values
    with open(out_dir / "resolved.cfg", "w", encoding="utf-8") as sink:
        parser.write(sink)


def _load_topology(resolved: dict[str, dict[str, str]]) -> SkeletonTopology:
    schema = resolved["run"]["schema"]
    return load_schema(schema) if schema else kinect25()


def _feature_list(resolved: dict[str, dict[str, str]]) -> tuple[str, ...]:
    names = tuple(f.strip() for f in resolved["run"]["features"].split(",") if f.strip())
    for name in names:
        if name not in FEATURE_SETS:
            raise UsageError(f"unknown feature '{name}'; choose from {FEATURE_SETS}")
    if not names:
        raise UsageError("feature selection is empty")
    return names


def _train_config(resolved: dict[str, dict[str, str]]) -> TrainConfig:
    run, tr = resolved["run"], resolved["train"]
    decay = tuple(int(e) for e in tr["decay_epochs"].split(",") if e.strip())
    return TrainConfig(
        base_lr=float(tr["lr"]),
        momentum=float(tr["momentum"]),
        epochs=int(tr["epochs"]),
        decay_epochs=decay,
        decay_factor=float(tr["decay_factor"]),
        batch_size=int(tr["batch_size"]),
        seed=int(run["seed"]),
        stream=run["stream"],
        features=_feature_list(resolved),
    )


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------


def _write_manifest(out_dir: Path, rows: list[tuple[str, int | None, int, str]]) -> None:
    lines = [MANIFEST_HEADER]
    for name, label, valid_frames, source in rows:
        lines.append(f"{name}\t{'-' if label is None else label}\t{valid_frames}\t{source}")
    (out_dir / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_manifest(data_dir: Path) -> list[tuple[str, int | None, int, str]]:
    path = data_dir / MANIFEST_NAME
    if not path.exists():
        raise UsageError(f"no {MANIFEST_NAME} in {data_dir}")
    rows = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise TensorFormatError(f"malformed manifest row: {line!r}")
        name, label, valid_frames, source = fields
        rows.append((name, None if label == "-" else int(label), int(valid_frames), source))
    return rows


def _encoder_threads() -> int:
    cap = os.environ.get("ANGKIT_THREADS")
    if cap:
        try:
            return max(1, int(cap))
        except ValueError:
            raise UsageError(f"ANGKIT_THREADS must be an integer, got {cap!r}") from None
    return min(4, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_parse(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    topology = _load_topology(resolved)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = int(resolved["run"]["frames"])
    max_persons = int(resolved["run"]["max_persons"])
    rows = []
    failures = 0
    for input_path in args.inputs:
        source = Path(input_path)
        try:
            raw = parse_skeleton_file(source.read_bytes(), topology)
            clip = normalize_clip(raw, topology, target_frames=frames, max_persons=max_persons)
        except (OSError, ParseError, ValueError) as exc:
            print(f"error: {source}: {exc}", file=sys.stderr)
            failures += 1
            continue
        name = source.stem + ".angk"
        with open(out_dir / name, "wb") as sink:
            write_tensor(clip_to_tensor(clip), sink)
        rows.append((name, None, clip.valid_frames, str(source)))
    _write_manifest(out_dir, rows)
    echo_config(resolved, out_dir)
    print(f"parsed {len(rows)} clip(s), {failures} failure(s) -> {out_dir}")
    return EXIT_DATA if failures else EXIT_OK


def cmd_encode(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    topology = _load_topology(resolved)
    features = _feature_list(resolved)
    stream = resolved["run"]["stream"]
    if stream not in STREAMS:
        raise UsageError(f"unknown stream '{stream}'; choose from {STREAMS}")
    data_dir = Path(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_manifest(data_dir)

    def encode_row(row: tuple[str, int | None, int, str]) -> tuple[str, int | None, int, str]:
        name, label, valid_frames, _ = row
        with open(data_dir / name, "rb") as fh:
            clip = tensor_to_clip(read_tensor(fh), valid_frames, label)
        fused = encode_features(clip, topology, features, stream)
        with open(out_dir / name, "wb") as sink:
            write_tensor(fused, sink)
        return (name, label, valid_frames, str(data_dir / name))

    with ThreadPoolExecutor(max_workers=_encoder_threads()) as pool:
        out_rows = list(pool.map(encode_row, rows))
    _write_manifest(out_dir, out_rows)
    echo_config(resolved, out_dir)
    print(f"encoded {len(out_rows)} clip(s) ({','.join(features)}; {stream}) -> {out_dir}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    sy = resolved["synth"]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = confusable_pair_spec(
        frames=int(resolved["run"]["frames"]),
        noise_sigma=float(sy["noise_sigma"]),
        scale_range=(float(sy["scale_min"]), float(sy["scale_max"])),
    )
    clips = generate_synthetic(spec, int(sy["n_per_class"]), int(resolved["run"]["seed"]))
    rows = []
    for i, clip in enumerate(clips):
        name = f"synth{i:04d}.angk"
        with open(out_dir / name, "wb") as sink:
            write_tensor(clip_to_tensor(clip), sink)
        rows.append((name, clip.label, clip.valid_frames, spec.classes[clip.label].name))
    _write_manifest(out_dir, rows)
    echo_config(resolved, out_dir)
    print(f"generated {len(rows)} clip(s) over {len(spec.classes)} classes -> {out_dir}")
    return EXIT_OK


def _load_dataset(data_dir: Path) -> list[tuple[np.ndarray, int]]:
    dataset = []
    for name, label, _, _ in _read_manifest(data_dir):
        if label is None:
            raise UsageError(f"clip {name} is unlabeled; train/eval need labels")
        with open(data_dir / name, "rb") as fh:
            dataset.append((read_tensor(fh).data, label))
    if not dataset:
        raise UsageError(f"no clips listed in {data_dir / MANIFEST_NAME}")
    return dataset


def cmd_train(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    topology = _load_topology(resolved)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = _load_dataset(Path(args.data))
    cfg = _train_config(resolved)
    num_classes = max(label for _, label in dataset) + 1
    model = AngNet(AngNetConfig(
        in_channels=dataset[0][0].shape[0],
        num_classes=max(2, num_classes),
        topology=topology,
        seed=cfg.seed,
    ))
    history = train(model, dataset, cfg)
    save_checkpoint(model, out_dir / "model.angm",
                    CheckpointMeta(epoch=cfg.epochs, seed=cfg.seed, history=history))
    with open(out_dir / "metrics.txt", "w", encoding="utf-8") as sink:
        sink.write("# epoch\tlr\tloss\taccuracy\n")
        for h in history:
            sink.write(f"{h['epoch']}\t{h['lr']:.10g}\t{h['loss']:.10g}\t{h['accuracy']:.6f}\n")
    if history:
        report.save_training_curves(history, out_dir / "training_curves.png")
    echo_config(resolved, out_dir)
    final = history[-1] if history else {"loss": float("nan"), "accuracy": float("nan")}
    print(f"trained {cfg.epochs} epoch(s): loss {final['loss']:.4f}, "
          f"accuracy {final['accuracy']:.3f} -> {out_dir}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model, _ = load_checkpoint(args.model)
    dataset = _load_dataset(Path(args.data))
    result = evaluate(model, dataset)
    with open(out_dir / "eval.txt", "w", encoding="utf-8") as sink:
        sink.write(f"accuracy\t{result.accuracy:.6f}\n")
        for i, acc in enumerate(result.per_class):
            sink.write(f"class{i}_accuracy\t{acc:.6f}\n")
    np.savetxt(out_dir / "confusion.txt", result.confusion, fmt="%d")
    report.save_confusion_heatmap(result.confusion, out_dir / "confusion.png")
    echo_config(resolved, out_dir)
    print(f"accuracy {result.accuracy:.4f} on {int(result.confusion.sum())} samples -> {out_dir}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    resolved = resolve_config(args)
    seed = int(resolved["run"]["seed"])
    results = full_suite(seeds=(seed,))
    worst = max(results, key=lambda r: r.max_rel_error / r.tolerance)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {r.name:28s} max rel error {r.max_rel_error:.3e} "
              f"(tolerance {r.tolerance:g})")
    print(f"worst: {worst.name} at {worst.max_rel_error:.3e}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="angkit", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_required: bool = True) -> None:
        p.add_argument("--config", help="config file (key = value with sections)")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--schema", help="skeleton schema file (default: bundled kinect25)")
        if out_required:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("parse", help="capture files -> normalized clip archive")
    p.add_argument("inputs", nargs="+", help="skeleton capture text files")
    p.add_argument("--frames", type=int, help="pad/truncate clips to this many frames")
    p.add_argument("--max-persons", type=int, dest="max_persons")
    common(p)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("encode", help="clip archive -> fused feature tensors")
    p.add_argument("--data", required=True, help="clip archive directory")
    p.add_argument("--features", help=f"comma list from {FEATURE_SETS}")
    p.add_argument("--stream", choices=STREAMS)
    common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("synth", help="generate the synthetic confusable-pair dataset")
    p.add_argument("--n-per-class", type=int, dest="n_per_class")
    p.add_argument("--noise-sigma", type=float, dest="noise_sigma")
    p.add_argument("--frames", type=int)
    common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on encoded features")
    p.add_argument("--data", required=True, help="encoded feature directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on encoded features")
    p.add_argument("--model", required=True, help="ANGM1 checkpoint path")
    p.add_argument("--data", required=True, help="encoded feature directory")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p, out_required=False)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:  # argparse exits (usage errors, --help)
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, TensorFormatError, CheckpointError, SchemaError,
            TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
