"""Command-line entry point: generate, train, eval, bench, export-viz.

Configuration is a line-based ``key = value`` file with dotted section
prefixes (``world.``, ``noise.``, ``train.``, ``data.``, ``bench.``, plus
the bare ``model`` key); ``--set key=value`` overrides individual entries.
Unknown keys are rejected before any work happens.  Every run writes a
``run.meta`` JSON next to its outputs with the fully resolved configuration
and sha256 hashes of the deterministic artifacts (timing logs are listed
but not hashed, since wall-clock columns differ between runs).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from .boids import WorldConfig, simulate_objects, with_seed
from .convgru import CONVGRU_MAGIC, ConvGruBaseline
from .dataio import (
    build_sequence,
    export_frames,
    export_gray_frames,
    peek_magic,
    read_ogsq,
    write_ogsq,
)
from .errors import ConfigError, DataFormatError, GridcastError
from .evaluation import (
    bench_csv,
    bench_latency,
    bench_text,
    condition_table_csv,
    condition_table_text,
    naive_baselines,
    run_condition_table,
)
from .kga import KGA_MAGIC, KalmanGruArray
from .noise import NoiseConfig
from .training import TrainConfig, evaluate, train


@dataclass(frozen=True)
class DataConfig:
    n_sequences: int = 8
    n_frames: int = 200
    fps: int = 30

    def __post_init__(self):
        if self.n_sequences < 1 or self.n_frames < 1 or self.fps < 1:
            raise ConfigError("data.* values must be positive")


@dataclass(frozen=True)
class BenchConfig:
    frames: int = 1000
    warmup: int = 100

    def __post_init__(self):
        if self.frames < 1 or self.warmup < 0:
            raise ConfigError("bench.frames >= 1 and bench.warmup >= 0 required")


_SECTIONS = {
    "world": WorldConfig,
    "noise": NoiseConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "bench": BenchConfig,
}
_TOP_LEVEL = {"model": ("kga", {"kga", "convgru"})}


def _known_keys() -> dict:
    keys = {}
    for section, cls in _SECTIONS.items():
        for f in dataclasses.fields(cls):
            keys[f"{section}.{f.name}"] = (section, f.name, f.type)
    return keys


@dataclass
class RunConfig:
    world: WorldConfig
    noise: NoiseConfig
    train: TrainConfig
    data: DataConfig
    bench: BenchConfig
    model: str

    def flat(self) -> dict:
        out = {"model": self.model}
        for section in _SECTIONS:
            cfg = getattr(self, section)
            for f in dataclasses.fields(cfg):
                out[f"{section}.{f.name}"] = getattr(cfg, f.name)
        return dict(sorted(out.items()))


def parse_config_lines(lines, source=None) -> dict:
    """Raw ``key = value`` pairs; blank lines and ``#`` comments allowed."""
    raw = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = stripped.partition("=")
        raw[key.strip()] = value.strip()
    return raw


def _coerce(key: str, value: str, typename: str):
    base = {"int": int, "float": float, "str": str}.get(typename)
    if base is None:
        raise ConfigError(f"{key}: unsupported config type {typename}")
    try:
        return base(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r} as {typename}") from None


def resolve_config(config_path=None, overrides=()) -> RunConfig:
    """Merge file values and ``--set`` overrides over the defaults."""
    raw = {}
    if config_path is not None:
        text = Path(config_path).read_text(encoding="utf-8")
        raw.update(parse_config_lines(text.splitlines(), source=str(config_path)))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, value = item.partition("=")
        raw[key.strip()] = value.strip()

    known = _known_keys()
    section_values = {name: {} for name in _SECTIONS}
    top = {name: default for name, (default, _) in _TOP_LEVEL.items()}
    for key, value in raw.items():
        if key in _TOP_LEVEL:
            default, allowed = _TOP_LEVEL[key]
            if value not in allowed:
                raise ConfigError(f"{key}: {value!r} not in {sorted(allowed)}")
            top[key] = value
            continue
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        section, fname, typename = known[key]
        section_values[section][fname] = _coerce(key, value, typename)

    return RunConfig(
        world=WorldConfig(**section_values["world"]),
        noise=NoiseConfig(**section_values["noise"]),
        train=TrainConfig(**section_values["train"]),
        data=DataConfig(**section_values["data"]),
        bench=BenchConfig(**section_values["bench"]),
        model=top["model"],
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_run_meta(out_dir: Path, command: str, config: RunConfig, artifacts, logs=()):
    meta = {
        "command": command,
        "config": {k: v for k, v in config.flat().items()},
        "artifacts": {name: _sha256(out_dir / name) for name in sorted(artifacts)},
        "logs": sorted(logs),
    }
    (out_dir / "run.meta").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _prepare_out_dir(path, force: bool, command: str) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(
            f"{command}: output directory {out} is not empty (use --force)"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_checkpoint(path):
    magic = peek_magic(path)
    if magic == KGA_MAGIC:
        return KalmanGruArray.load(path)
    if magic == CONVGRU_MAGIC:
        return ConvGruBaseline.load(path)
    raise DataFormatError(f"unrecognized checkpoint magic {magic!r}", offset=0, source=str(path))


def _fresh_model(name: str, seed: int):
    if name == "kga":
        return KalmanGruArray.init(seed)
    return ConvGruBaseline.init(seed)


def _load_dataset(data_dir) -> list:
    paths = sorted(Path(data_dir).glob("*.ogsq"))
    if not paths:
        raise ConfigError(f"no .ogsq files in {data_dir}")
    return [read_ogsq(p) for p in paths]


def _generate_tracks(config: RunConfig):
    """One object video per sequence; seeds advance per sequence index."""
    tracks = []
    for i in range(config.data.n_sequences):
        world = with_seed(config.world, config.world.seed + i)
        tracks.append(simulate_objects(world, config.data.n_frames))
    return tracks


# --- subcommands -------------------------------------------------------------


def cmd_generate(args) -> int:
    config = resolve_config(args.config, args.set)
    out = _prepare_out_dir(args.out, args.force, "generate")
    names = []
    for i, frames in enumerate(_generate_tracks(config)):
        noise = dataclasses.replace(config.noise, seed=config.noise.seed + i)
        record = build_sequence(
            frames, config.world.height, config.world.width, noise, fps=config.data.fps
        )
        name = f"seq_{i:04d}.ogsq"
        write_ogsq(record, out / name)
        names.append(name)
    write_run_meta(out, "generate", config, names)
    print(
        f"generate: wrote {len(names)} sequences of {config.data.n_frames} frames "
        f"({config.world.height}x{config.world.width}, {config.data.fps} fps) to {out}"
    )
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args.config, args.set)
    records = _load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = _fresh_model(config.model, config.train.seed)
    report = train(model, records, config.train)
    checkpoint = f"{config.model}.ckpt"
    model.save(out / checkpoint)
    (out / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    write_run_meta(out, "train", config, [checkpoint], logs=["report.csv"])
    sys.stdout.write(report.to_csv())
    print(
        f"train: best validation bce {report.best_val_bce:.6f} at epoch "
        f"{report.best_epoch}; checkpoint {out / checkpoint}"
    )
    return 0


def cmd_eval(args) -> int:
    config = resolve_config(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.conditions:
        if not (args.kga and args.convgru):
            raise ConfigError("eval --conditions needs --kga and --convgru checkpoints")
        models = [load_checkpoint(args.kga), load_checkpoint(args.convgru)]
        tracks = _generate_tracks(config)
        results = run_condition_table(
            models,
            tracks,
            config.noise,
            config.world.height,
            config.world.width,
            fps=config.data.fps,
        )
        both_records = [
            build_sequence(
                frames, config.world.height, config.world.width, config.noise, fps=config.data.fps
            )
            for frames in tracks
        ]
        baselines = naive_baselines(both_records)
        (out / "conditions.csv").write_text(condition_table_csv(results), encoding="utf-8")
        text = condition_table_text(results, baselines)
        (out / "conditions.txt").write_text(text, encoding="utf-8")
        write_run_meta(out, "eval", config, ["conditions.csv", "conditions.txt"])
        sys.stdout.write(text)
        return 0

    if not args.checkpoint:
        raise ConfigError("eval needs at least one --checkpoint (or --conditions)")
    records = _load_dataset(args.data)
    n_pairs = sum(len(r.frames) - 1 for r in records)
    lines = ["model,bce,n_predictions"]
    for path in args.checkpoint:
        model = load_checkpoint(path)
        lines.append(f"{model.name},{evaluate(model, records)!r},{n_pairs}")
    for name, bce in naive_baselines(records).items():
        lines.append(f"{name},{bce!r},{n_pairs}")
    table = "\n".join(lines) + "\n"
    (out / "eval.csv").write_text(table, encoding="utf-8")
    write_run_meta(out, "eval", config, ["eval.csv"])
    sys.stdout.write(table)
    return 0


def cmd_bench(args) -> int:
    config = resolve_config(args.config, args.set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.checkpoint:
        models = [load_checkpoint(p) for p in args.checkpoint]
    elif args.model == "both":
        models = [KalmanGruArray.init(0), ConvGruBaseline.init(0)]
    else:
        models = [_fresh_model(args.model, 0)]
    results = [
        bench_latency(
            m,
            height=config.world.height,
            width=config.world.width,
            n_frames=config.bench.frames,
            warmup=config.bench.warmup,
        )
        for m in models
    ]
    (out / "bench.csv").write_text(bench_csv(results), encoding="utf-8")
    text = bench_text(results)
    (out / "bench.txt").write_text(text, encoding="utf-8")
    write_run_meta(out, "bench", config, ["bench.csv"], logs=["bench.txt"])
    sys.stdout.write(text)
    return 0


def cmd_export_viz(args) -> int:
    config = resolve_config(args.config, args.set)
    record = read_ogsq(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = [p.name for p in export_frames(record, out)]
    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
        if args.hidden:
            probs, hiddens = model.rollout(record.measurements(), collect_hidden=True)
        else:
            probs, hiddens = model.rollout(record.measurements()), None
        written += [
            p.name for p in export_gray_frames([p.values for p in probs], out, "prob")
        ]
        if hiddens is not None:
            for c in range(hiddens[0].shape[2]):
                written += [
                    p.name
                    for p in export_gray_frames(
                        [h[:, :, c] for h in hiddens], out, f"state{c:02d}"
                    )
                ]
    write_run_meta(out, "export-viz", config, written)
    print(f"export-viz: wrote {len(written)} images to {out}")
    return 0


# --- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcast",
        description="occupancy-grid anticipation: data generation, training, evaluation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value configuration file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one configuration entry (repeatable)",
        )
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="simulate sequences and write .ogsq files")
    common(p)
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model on a directory of .ogsq files")
    common(p)
    p.add_argument("--data", required=True, help="directory of .ogsq files")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints (BCE) or the condition table")
    common(p)
    p.add_argument("--data", help="directory of .ogsq files")
    p.add_argument("--checkpoint", action="append", default=[], help="checkpoint file")
    p.add_argument("--conditions", action="store_true", help="run the noise-condition table")
    p.add_argument("--kga", help="trained GRU-array checkpoint for --conditions")
    p.add_argument("--convgru", help="trained baseline checkpoint for --conditions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="single-threaded per-frame latency")
    common(p)
    p.add_argument("--model", choices=["kga", "convgru", "both"], default="both")
    p.add_argument("--checkpoint", action="append", default=[], help="bench these checkpoints")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-viz", help="export frames (and predictions) as PGM images")
    common(p)
    p.add_argument("--data", required=True, help="one .ogsq file")
    p.add_argument("--checkpoint", help="roll this model over the measurements")
    p.add_argument("--hidden", action="store_true", help="also export hidden-state channels")
    p.set_defaults(func=cmd_export_viz)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GridcastError as e:
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
