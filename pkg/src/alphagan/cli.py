"""Command-line front end: ``alphagan train|eval|sample|gradcheck``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(a training run aborted on non-finite values, or a failed gradient check).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, TrainingConfig
from .data import Dataset, IdxError, make_dataset
from .evaluation import ALL_METRICS, METRICS_HEADER, CriticConfig, evaluate_model, matrix_csv
from .trainers import METRIC_COLUMNS, TrainedModel, TrainingAborted, format_value, make_trainer, rows_to_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2
SEED_ENV = "ALPHAGAN_SEED"
RUN_KEYS = ("dataset", "out_dir", "keep_checkpoints", "sample_count")
REQUIRED_KEYS = ("algorithm", "dataset")


class UsageError(Exception):
    """Bad arguments or configuration; reported on stderr with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- run configuration -----------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class RunConfig:
    training: TrainingConfig
    dataset: dict
    out_dir: str | None = None
    keep_checkpoints: int = 2
    sample_count: int = 64


def _env_seed() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def parse_run_config(document: dict, seed_override: int | None = None) -> RunConfig:
    """Validate a run configuration document.

    Seed priority: explicit override, then the document, then ALPHAGAN_SEED.
    """
    if not isinstance(document, dict):
        raise UsageError("configuration must be a JSON object")
    known = {f.name for f in dataclasses.fields(TrainingConfig)} | set(RUN_KEYS)
    unknown = sorted(set(document) - known)
    if unknown:
        raise UsageError(f"unknown configuration key(s): {', '.join(unknown)}")
    missing = [k for k in REQUIRED_KEYS if k not in document]
    if missing:
        raise UsageError(f"missing required configuration key(s): {', '.join(missing)}")
    training = {k: v for k, v in document.items() if k not in RUN_KEYS}
    if seed_override is not None:
        training["seed"] = seed_override
    elif "seed" not in training:
        env = _env_seed()
        if env is not None:
            training["seed"] = env
    try:
        config = TrainingConfig.from_dict(training)
    except ConfigError as exc:
        raise UsageError(f"invalid configuration key '{exc.key}': {exc}") from exc
    except TypeError as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc
    keep = document.get("keep_checkpoints", 2)
    count = document.get("sample_count", 64)
    if not isinstance(keep, int) or keep < 1:
        raise UsageError("invalid configuration key 'keep_checkpoints': must be an integer >= 1")
    if not isinstance(count, int) or count < 1:
        raise UsageError("invalid configuration key 'sample_count': must be an integer >= 1")
    if not isinstance(document["dataset"], dict):
        raise UsageError("invalid configuration key 'dataset': must be an object with a 'name'")
    return RunConfig(config, document["dataset"], document.get("out_dir"), keep, count)


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _build_dataset(spec: dict) -> Dataset:
    try:
        return make_dataset(spec)
    except FileNotFoundError as exc:
        raise UsageError(f"dataset file not found: {exc}") from exc
    except (IdxError, ValueError) as exc:
        raise UsageError(f"invalid dataset: {exc}") from exc


# -- artifacts ---------------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def to_bytes(images: np.ndarray) -> np.ndarray:
    """Map values in [-1, 1] to bytes: -1 -> 0, +1 -> 255."""
    scaled = np.rint((np.clip(images, -1.0, 1.0) + 1.0) * 127.5)
    return scaled.astype(np.uint8)


def image_grid(images: np.ndarray, image_shape, cols: int, rows: int) -> np.ndarray:
    """Tile ``[N, H*W]`` images row-major into a ``[rows*H, cols*W]`` canvas (unused cells at -1)."""
    h, w = image_shape
    if images.shape[0] > cols * rows:
        raise UsageError(f"{images.shape[0]} images do not fit a {cols}x{rows} grid")
    canvas = np.full((rows * h, cols * w), -1.0)
    for k, img in enumerate(images.reshape(-1, h, w)):
        r, c = divmod(k, cols)
        canvas[r * h : (r + 1) * h, c * w : (c + 1) * w] = img
    return canvas


def ppm_bytes(canvas: np.ndarray) -> bytes:
    """Binary PPM (P6, maxval 255); grayscale is replicated to RGB."""
    gray = to_bytes(canvas)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    header = f"P6\n{gray.shape[1]} {gray.shape[0]}\n255\n".encode("ascii")
    return header + rgb.tobytes()


def points_csv(points: np.ndarray, columns=("x", "y")) -> str:
    lines = [",".join(columns)]
    lines += [",".join(repr(float(v)) for v in row) for row in points]
    return "\n".join(lines) + "\n"


def _write_samples(path_stem: Path, model: TrainedModel, dataset: Dataset, n: int, seed: int) -> Path:
    samples = model.sample(n, np.random.default_rng(seed))
    if dataset.kind == "images":
        side = int(np.ceil(np.sqrt(n)))
        path = path_stem.with_suffix(".ppm")
        path.write_bytes(ppm_bytes(image_grid(samples, dataset.image_shape, side, int(np.ceil(n / side)))))
    else:
        path = path_stem.with_suffix(".csv")
        _write_text(path, points_csv(samples))
    return path


# -- commands ------------------------------------------------------------------------

def cmd_train(args) -> int:
    document = _read_json(args.config)
    run = parse_run_config(document, args.seed)
    dataset = _build_dataset(run.dataset)
    out = Path(args.out or run.out_dir or "run")
    out.mkdir(parents=True, exist_ok=True)
    config = run.training
    kept: list[Path] = []

    def on_eval(model: TrainedModel, row: dict) -> None:
        path = out / f"checkpoint_{model.iteration:08d}.agan"
        save_checkpoint(path, model, run.dataset, dataset.image_shape)
        kept.append(path)
        while len(kept) > run.keep_checkpoints:
            kept.pop(0).unlink(missing_ok=True)
        _write_samples(out / f"samples_{model.iteration:08d}", model, dataset, run.sample_count, config.seed)

    trainer = make_trainer(config, dataset)
    try:
        result = trainer.run(on_eval=on_eval)
    except TrainingAborted as exc:
        _write_text(out / "metrics.csv", rows_to_csv(exc.rows))
        save_checkpoint(out / "checkpoint_last_good.agan", exc.last_good, run.dataset, dataset.image_shape)
        print(f"training aborted: {exc.cause}", file=sys.stderr)
        return EXIT_NUMERIC
    if result.model.iteration % config.eval_every:
        on_eval(result.model, {})
    save_checkpoint(out / "final.agan", result.model, run.dataset, dataset.image_shape)
    _write_text(out / "metrics.csv", rows_to_csv(result.rows, METRIC_COLUMNS))
    print(f"trained {config.algorithm} for {result.model.iteration} iterations; outputs in {out}")
    return EXIT_OK


def _load(path) -> tuple[TrainedModel, dict]:
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except (CheckpointError, ConfigError) as exc:
        raise UsageError(f"cannot read checkpoint {path}: {exc}") from exc


def _dataset_for(args, header: dict) -> Dataset:
    if args.dataset:
        spec = _read_json(args.dataset) if Path(args.dataset).is_file() else _parse_inline(args.dataset)
    else:
        spec = header.get("dataset")
        if spec is None:
            raise UsageError("checkpoint has no dataset spec; pass --dataset")
    return _build_dataset(spec)


def _parse_inline(text: str) -> dict:
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        return {"name": text}
    if not isinstance(value, dict):
        raise UsageError("--dataset must be a JSON object, a JSON file or a dataset name")
    return value


def cmd_eval(args) -> int:
    model, header = _load(args.checkpoint)
    dataset = _dataset_for(args, header)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()] if args.metrics else list(ALL_METRICS)
    unknown = sorted(set(metrics) - set(ALL_METRICS))
    if unknown:
        raise UsageError(f"unknown metric(s): {', '.join(unknown)}; choose from {', '.join(ALL_METRICS)}")
    critic = CriticConfig(steps=args.critic_steps, seed=args.seed)
    report = evaluate_model(model, dataset, metrics, args.n, args.seed, critic_config=critic)
    row = report.row(model.iteration)
    text = ",".join(METRICS_HEADER) + "\n" + ",".join(format_value(row[c]) for c in METRICS_HEADER) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_text(out, text)
        if report.latent_means is not None:
            _write_text(out.with_name(out.stem + "_latent_means.csv"), matrix_csv(report.latent_means))
            _write_text(out.with_name(out.stem + "_latent_covariance.csv"), matrix_csv(report.latent_covariance))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        cols, rows = (int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--grid must look like WxH, got {text!r}") from exc
    if cols < 1 or rows < 1:
        raise UsageError("--grid dimensions must be positive")
    return cols, rows


def cmd_sample(args) -> int:
    model, header = _load(args.checkpoint)
    if args.recon and not model.has_encoder:
        print(f"error: {model.algorithm} has no encoder; reconstructions need an encoder", file=sys.stderr)
        return EXIT_USAGE
    if args.n < 1:
        raise UsageError("--n must be positive")
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.recon:
        dataset = _dataset_for(args, header)
        pool = dataset.test
        x = pool[rng.choice(pool.shape[0], size=min(args.n, pool.shape[0]), replace=False)]
        x_hat = model.reconstruct(x, rng)
        if model.dataset_kind == "images":
            cols, rows = _parse_grid(args.grid) if args.grid else (int(np.ceil(np.sqrt(len(x)))),) * 2
            left = image_grid(x, dataset.image_shape, cols, rows)
            right = image_grid(x_hat, dataset.image_shape, cols, rows)
            out.write_bytes(ppm_bytes(np.concatenate([left, right], axis=1)))
        else:
            _write_text(out, points_csv(np.concatenate([x, x_hat], axis=1), ("x", "y", "x_hat", "y_hat")))
        return EXIT_OK
    samples = model.sample(args.n, rng)
    if model.dataset_kind == "images":
        side = int(round(np.sqrt(samples.shape[1])))
        shape = tuple(header.get("image_shape") or (side, side))
        if shape[0] * shape[1] != samples.shape[1]:
            raise UsageError("cannot infer the image shape from the checkpoint")
        cols, rows = _parse_grid(args.grid) if args.grid else (int(np.ceil(np.sqrt(args.n))),) * 2
        out.write_bytes(ppm_bytes(image_grid(samples, shape, cols, rows)))
    else:
        _write_text(out, points_csv(samples))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    reports = gradcheck.run_suite(gradcheck.default_cases(), n_points=args.points, seed=args.seed)
    width = max(len(r.name) for r in reports)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  {r.kind:<9}  max_rel_err={r.max_error:.3e}  tol={r.tol:.0e}  {status}")
    failed = [r.name for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="alphagan", description="Train and evaluate alpha-GAN and baseline generative models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run configuration")
    p.add_argument("config", help="path to the JSON run configuration")
    p.add_argument("--out", help="output directory (overrides out_dir in the config)")
    p.add_argument("--seed", type=int, help="seed (overrides the config and ALPHAGAN_SEED)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and write one metrics CSV row")
    p.add_argument("checkpoint")
    p.add_argument("--dataset", help="dataset JSON, JSON file or name (default: the checkpoint's dataset)")
    p.add_argument("--metrics", help=f"comma-separated subset of {','.join(ALL_METRICS)}")
    p.add_argument("--n", type=int, default=2000, help="number of generated samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--critic-steps", type=int, default=CriticConfig.steps)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="write samples or reconstructions")
    p.add_argument("checkpoint")
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--grid", help="grid layout WxH for image models")
    p.add_argument("--recon", action="store_true", help="pair test inputs with their reconstructions")
    p.add_argument("--dataset", help="dataset for --recon (default: the checkpoint's dataset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output .ppm (images) or .csv (points) path")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gradcheck", help="run the gradient-check suite")
    p.add_argument("--points", type=int, default=100, help="random points per check")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())
