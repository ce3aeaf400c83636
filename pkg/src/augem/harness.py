"""Experiment runner: config handling, training loops, metrics emission.

A run is described by a flat key=value config (file keys overridden by
CLI flags, both overriding built-in defaults).  ``run_experiment`` wires
the per-iteration pipeline — baseline preprocessing, method-specific
augmentation, optional trailing cutout, one optimizer step — and records
per-iteration metrics plus per-epoch test accuracy.  ``run_ablation_grid``
repeats runs over a parameter grid and several seeds.

Outputs per run: ``metrics.csv``, ``summary.json``, ``pi_final.txt``, SVG
charts, and a ``timing.txt`` (the only file whose bytes depend on wall
clock; everything else is a pure function of config and seed).
"""

from __future__ import annotations

import itertools
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import data, latentem, nn, svgplot
from . import policy as pol
from .imgcore import cutout

EM_METHODS = ("latent", "ubs_limit", "uniform_limit")
BASELINE_METHODS = ("random_policy_baseline", "no_augment")
METHODS = EM_METHODS + BASELINE_METHODS

METRICS_HEADER = "iter,expected_loss,marginal_loss,lr,pi_entropy"

# relative output paths are rooted here when the variable is set
OUT_ROOT_ENV = "AUGEM_OUT_ROOT"

# substream tags for the per-run seed (kept stable for reproducibility)
_STREAM_INIT = 1
_STREAM_PREPROCESS = 2
_STREAM_TRAIN = 3


class ConfigError(ValueError):
    """A run configuration failed validation."""


@dataclass(frozen=True)
class RunConfig:
    """Everything a single experiment needs; defaults follow the desk
    recipe (10k-sample subset, 2x128 MLP, K=6, sigma=1, window 10)."""

    dataset: str = "shapes:n=10000"
    model: str = "mlp:128,128"
    method: str = "latent"
    k: int = 6
    sigma: float = 1.0
    fixed_pi: bool = False
    window: int = 10
    lr0: float = 0.1
    weight_decay: float = 1e-4
    momentum: float = 0.0
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0
    subset_n: int = 10000
    out_dir: str = "runs/latest"
    final_op: str = "cutout"

    def validate(self) -> "RunConfig":
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; "
                              f"choose from {METHODS}")
        if self.k < 1:
            raise ConfigError(f"K must be >= 1, got {self.k}")
        if not (self.sigma >= 0.0):
            raise ConfigError(f"sigma must be >= 0, got {self.sigma}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if self.lr0 <= 0.0:
            raise ConfigError(f"lr0 must be > 0, got {self.lr0}")
        if self.weight_decay < 0.0:
            raise ConfigError("weight_decay must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.subset_n < 1:
            raise ConfigError("subset_n must be >= 1")
        if self.final_op not in ("cutout", "none"):
            raise ConfigError(f"final_op must be cutout or none, "
                              f"got {self.final_op!r}")
        _parse_dataset_spec(self.dataset)
        _parse_model_spec(self.model)
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_BOOL_KEYS = ("fixed_pi",)
_INT_KEYS = ("k", "window", "batch_size", "epochs", "seed", "subset_n")
_FLOAT_KEYS = ("sigma", "lr0", "weight_decay", "momentum")


def _coerce(key: str, value: str):
    value = value.strip()
    if key in _BOOL_KEYS:
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)   # accepts "inf" for sigma
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return value


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    valid = {f.name for f in fields(RunConfig)}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, "
                                  f"got {line!r}")
            key, value = line.split("=", 1)
            key = key.strip()
            if key not in valid:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def build_config(file_values: dict | None = None,
                 cli_values: dict | None = None) -> RunConfig:
    """Defaults < config file < CLI flags, then validation."""
    merged = {}
    merged.update(file_values or {})
    merged.update(cli_values or {})
    valid = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - valid
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged).validate()


def _parse_kv_list(body: str) -> dict:
    out = {}
    if not body:
        return out
    for part in body.split(","):
        if "=" not in part:
            raise ConfigError(f"expected key=value in dataset spec, "
                              f"got {part!r}")
        key, value = part.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _parse_dataset_spec(spec: str):
    kind, _, body = spec.partition(":")
    kind = kind.strip()
    kv = _parse_kv_list(body)
    if kind == "shapes":
        return ("shapes", {"n": int(kv.get("n", 10000)),
                           "test_n": int(kv.get("test_n", 2000)),
                           "side": int(kv.get("side", 28))})
    if kind == "blobs":
        return ("blobs", {"n": int(kv.get("n", 1000)),
                          "test_n": int(kv.get("test_n", 200)),
                          "c": int(kv.get("c", 10)),
                          "dim": int(kv.get("dim", 16)),
                          "spread": float(kv.get("spread", 0.3))})
    if kind == "mnist":
        needed = ("train_images", "train_labels", "test_images",
                  "test_labels")
        missing = [key for key in needed if key not in kv]
        if missing:
            raise ConfigError(f"mnist spec needs {missing}")
        return ("mnist", kv)
    if kind == "cifar":
        if "train" not in kv or "test" not in kv:
            raise ConfigError("cifar spec needs train= and test= paths")
        return ("cifar", kv)
    raise ConfigError(f"unknown dataset kind {kind!r}")


def _load_dataset(cfg: RunConfig):
    """Returns (train, test, preprocess_kind)."""
    kind, kv = _parse_dataset_spec(cfg.dataset)
    if kind == "shapes":
        train = data.gen_shapes(kv["n"], cfg.seed, "train", kv["side"])
        test = data.gen_shapes(kv["test_n"], cfg.seed, "test", kv["side"])
        pp = "mnist"
    elif kind == "blobs":
        train = data.gen_blobs(kv["n"], kv["c"], kv["dim"], kv["spread"],
                               cfg.seed, "train")
        test = data.gen_blobs(kv["test_n"], kv["c"], kv["dim"],
                              kv["spread"], cfg.seed, "test")
        pp = "blobs"
    elif kind == "mnist":
        train = data.load_mnist_idx(kv["train_images"], kv["train_labels"],
                                    "train")
        test = data.load_mnist_idx(kv["test_images"], kv["test_labels"],
                                   "test")
        pp = "mnist"
    else:
        train = data.load_cifar10_bin(kv["train"].split(";"), "train")
        test = data.load_cifar10_bin(kv["test"].split(";"), "test")
        pp = "cifar"
    if len(train) > cfg.subset_n:
        train = data.Dataset(images=train.images[:cfg.subset_n],
                             labels=train.labels[:cfg.subset_n],
                             n_classes=train.n_classes, split=train.split)
    return train, test, pp


def _parse_model_spec(spec: str):
    kind, _, body = spec.partition(":")
    kind = kind.strip()
    if kind == "softmax":
        return ("softmax", ())
    if kind in ("mlp", "convnet"):
        try:
            widths = tuple(int(tok) for tok in body.split(",") if tok.strip())
        except ValueError as exc:
            raise ConfigError(f"bad model spec {spec!r}: {exc}") from exc
        if kind == "mlp" and not widths:
            widths = (128, 128)
        if kind == "convnet" and len(widths) not in (0, 2):
            raise ConfigError("convnet spec takes exactly two channel "
                              "counts")
        return (kind, widths or ((8, 16) if kind == "convnet" else ()))
    raise ConfigError(f"unknown model kind {kind!r}")


def _model_spec(cfg: RunConfig, train: data.Dataset) -> nn.ModelSpec:
    kind, widths = _parse_model_spec(cfg.model)
    shape = train.images.shape[1:]
    if kind == "softmax":
        return nn.softmax_spec(shape, train.n_classes)
    if kind == "mlp":
        return nn.mlp_spec(shape, train.n_classes, widths)
    return nn.conv_spec(shape, train.n_classes, widths)


def _final_side_frac(pp_kind: str) -> float:
    # cutout patch covers about half the side for CIFAR-like inputs and
    # about 20/28 of it for MNIST-like ones
    return 0.5 if pp_kind == "cifar" else 0.71


@dataclass
class RunReport:
    config: dict
    metrics: list
    epoch_accuracies: list
    final_pi: np.ndarray
    wall_clock: float = 0.0
    backend: str = ""

    @property
    def iterations(self) -> int:
        return len(self.metrics)

    @property
    def final_accuracy(self) -> float:
        return self.epoch_accuracies[-1] if self.epoch_accuracies else 0.0


def _preprocess_batch(images, pp_kind, rng):
    return np.stack([data.baseline_preprocess(img, pp_kind, rng)
                     for img in images])


def _baseline_step(params, images, labels_1h, method, policy_set, cfg,
                   pp_kind, train_rng, lr, velocity):
    """Single-view training step for the two non-EM baselines."""
    if method == "random_policy_baseline":
        step_seed = int(train_rng.integers(np.iinfo(np.int64).max))
        out_images = np.empty_like(images)
        out_labels = np.empty_like(labels_1h)
        for i in range(len(images)):
            sample_rng = np.random.default_rng([step_seed, i])
            source = latentem._partner_source(images, labels_1h, i)
            policy = policy_set[int(sample_rng.integers(len(policy_set)))]
            img, lab = pol.apply_policy(images[i], labels_1h[i], policy,
                                        sample_rng, partner_source=source)
            if cfg.final_op == "cutout":
                img = cutout(img, _final_side_frac(pp_kind), sample_rng)
            out_images[i] = img
            out_labels[i] = lab
        images, labels_1h = out_images, out_labels
    loss, grads = nn.weighted_loss_and_grad(params, images, labels_1h,
                                            np.ones(len(images)))
    if cfg.momentum > 0.0:
        params, velocity = nn.sgd_momentum_update(
            params, grads, lr, cfg.weight_decay, cfg.momentum, velocity)
    else:
        params = nn.sgd_update(params, grads, lr, cfg.weight_decay)
    return params, velocity, loss


def run_experiment(cfg: RunConfig) -> RunReport:
    """Full training run; deterministic given (config, seed)."""
    cfg.validate()
    started = time.monotonic()
    train, test, pp_kind = _load_dataset(cfg)
    spec = _model_spec(cfg, train)
    params = nn.init_params(spec, np.random.default_rng([cfg.seed,
                                                         _STREAM_INIT]))
    policy_set = pol.build_policy_set()
    pi_state = pol.init_pi(len(policy_set), cfg.window)

    n = len(train)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    schedule = nn.LrSchedule(cfg.lr0, total_steps)
    plan = data.BatchPlan(cfg.batch_size, cfg.seed, cfg.epochs)

    final_op = cfg.final_op if pp_kind != "blobs" else "none"
    em_cfg = latentem.EmConfig(
        k=cfg.k, sigma=cfg.sigma,
        mode=cfg.method if cfg.method in EM_METHODS else latentem.MODE_LATENT,
        window=cfg.window, fixed_pi=cfg.fixed_pi,
        weight_decay=cfg.weight_decay, momentum=cfg.momentum,
        final_op=final_op, final_side_frac=_final_side_frac(pp_kind))

    pre_rng = np.random.default_rng([cfg.seed, _STREAM_PREPROCESS])
    train_rng = np.random.default_rng([cfg.seed, _STREAM_TRAIN])
    uniform_entropy = pol.pi_entropy(pi_state.pi)

    metrics = []
    epoch_accuracies = []
    velocity = None
    it = 0
    for epoch in range(cfg.epochs):
        for idx in data.batches(n, plan, epoch):
            lr = nn.cosine_lr(it, schedule)
            images = _preprocess_batch(train.images[idx], pp_kind, pre_rng)
            labels_1h = data.one_hot(train.labels[idx], train.n_classes)
            if cfg.method in EM_METHODS:
                res = latentem.em_step(params, (images, labels_1h),
                                       pi_state, policy_set, em_cfg,
                                       train_rng, lr, velocity,
                                       iteration=it)
                params, pi_state = res.params, res.pi_state
                velocity = res.velocity
                metrics.append(res.metrics)
            else:
                params, velocity, loss = _baseline_step(
                    params, images, labels_1h, cfg.method, policy_set,
                    cfg, pp_kind, train_rng, lr, velocity)
                metrics.append(latentem.StepMetrics(
                    iteration=it, expected_loss=loss, marginal_loss=loss,
                    lr=lr, pi_entropy=uniform_entropy, top_policies=()))
            it += 1
        epoch_accuracies.append(nn.accuracy(params, test.images,
                                            test.labels))

    from .kernels import BACKEND
    return RunReport(config=cfg.to_dict(), metrics=metrics,
                     epoch_accuracies=epoch_accuracies,
                     final_pi=pi_state.pi.copy(),
                     wall_clock=time.monotonic() - started,
                     backend=BACKEND)


@dataclass
class GridCell:
    params: dict
    seeds: list
    accuracies: list
    reports: list = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))


@dataclass
class GridReport:
    base_config: dict
    axes: dict
    cells: list = field(default_factory=list)


def run_ablation_grid(base_cfg: RunConfig, grid: dict, seeds,
                      keep_reports: bool = False) -> GridReport:
    """One run per grid cell per seed; reports mean/std test accuracy.

    ``grid`` maps RunConfig field names to value lists, e.g.
    ``{"sigma": [0.0, 1.0], "fixed_pi": [False, True]}``.
    """
    if not grid:
        raise ConfigError("ablation grid is empty")
    valid = {f.name for f in fields(RunConfig)}
    unknown = set(grid) - valid
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    seeds = list(seeds)
    if not seeds:
        raise ConfigError("need at least one seed")
    report = GridReport(base_config=base_cfg.to_dict(),
                        axes={k: list(v) for k, v in grid.items()})
    keys = sorted(grid)
    for combo in itertools.product(*(grid[k] for k in keys)):
        cell_params = dict(zip(keys, combo))
        cell = GridCell(params=cell_params, seeds=seeds, accuracies=[])
        for seed in seeds:
            cfg = replace(base_cfg, seed=seed, **cell_params)
            run = run_experiment(cfg)
            cell.accuracies.append(run.final_accuracy)
            if keep_reports:
                cell.reports.append(run)
        report.cells.append(cell)
    return report


def resolve_out_dir(out_dir: str) -> str:
    root = os.environ.get(OUT_ROOT_ENV)
    if root and not os.path.isabs(out_dir):
        return os.path.join(root, out_dir)
    return out_dir


def cell_dir_name(params: dict) -> str:
    def fmt(value):
        return str(value).lower() if isinstance(value, bool) else str(value)

    return "_".join(f"{key}={fmt(params[key])}" for key in sorted(params))


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def metrics_csv_text(report: RunReport) -> str:
    lines = [METRICS_HEADER]
    for m in report.metrics:
        lines.append(f"{m.iteration},{m.expected_loss!r},"
                     f"{m.marginal_loss!r},{m.lr!r},{m.pi_entropy!r}")
    return "\n".join(lines) + "\n"


def emit_metrics(report: RunReport, out_dir) -> list:
    """Write metrics.csv, summary.json, pi_final.txt, timing.txt."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    csv_path = os.path.join(out_dir, "metrics.csv")
    _atomic_write(csv_path, metrics_csv_text(report))
    paths.append(csv_path)

    summary = {
        "config": report.config,
        "iterations": report.iterations,
        "epoch_accuracies": report.epoch_accuracies,
        "final_accuracy": report.final_accuracy,
        "final_expected_loss": (report.metrics[-1].expected_loss
                                if report.metrics else None),
        "final_pi_entropy": (report.metrics[-1].pi_entropy
                             if report.metrics else None),
    }
    summary_path = os.path.join(out_dir, "summary.json")
    _atomic_write(summary_path, json.dumps(summary, indent=2,
                                           sort_keys=True) + "\n")
    paths.append(summary_path)

    pi_path = os.path.join(out_dir, "pi_final.txt")
    pol.save_pi(report.final_pi, pi_path)
    paths.append(pi_path)

    timing_path = os.path.join(out_dir, "timing.txt")
    _atomic_write(timing_path,
                  f"wall_clock_seconds={report.wall_clock:.3f}\n"
                  f"backend={report.backend}\n")
    paths.append(timing_path)
    return paths


def emit_plots(report, out_dir) -> list:
    """SVG charts for a run (loss curves) or a grid (accuracy curves)."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    if isinstance(report, RunReport):
        if not report.metrics:
            raise ValueError("cannot plot an empty report")
        iters = [m.iteration for m in report.metrics]
        svg = svgplot.line_chart(
            [("expected loss", iters,
              [m.expected_loss for m in report.metrics]),
             ("marginal loss", iters,
              [m.marginal_loss for m in report.metrics])],
            title="training loss", xlabel="iteration", ylabel="loss")
        path = os.path.join(out_dir, "loss_vs_iteration.svg")
        _atomic_write(path, svg)
        paths.append(path)
        if report.epoch_accuracies:
            svg = svgplot.line_chart(
                [("test accuracy",
                  list(range(1, len(report.epoch_accuracies) + 1)),
                  report.epoch_accuracies)],
                title="test accuracy", xlabel="epoch", ylabel="accuracy")
            path = os.path.join(out_dir, "accuracy_vs_epoch.svg")
            _atomic_write(path, svg)
            paths.append(path)
        return paths

    if not report.cells:
        raise ValueError("cannot plot an empty grid")
    for axis in report.axes:
        if axis not in ("k", "sigma"):
            continue
        other_keys = [k for k in report.axes if k != axis]
        series = {}
        for cell in report.cells:
            tag = ", ".join(f"{k}={cell.params[k]}" for k in other_keys) \
                or "accuracy"
            series.setdefault(tag, []).append(
                (float(cell.params[axis]), cell.mean))
        chart = []
        for label, points in sorted(series.items()):
            points.sort()
            chart.append((label, [p[0] for p in points],
                          [p[1] for p in points]))
        svg = svgplot.line_chart(chart, title=f"accuracy vs {axis}",
                                 xlabel=axis, ylabel="mean test accuracy")
        path = os.path.join(out_dir, f"accuracy_vs_{axis}.svg")
        _atomic_write(path, svg)
        paths.append(path)
    return paths


def emit_grid_summary(report: GridReport, out_dir) -> str:
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "base_config": report.base_config,
        "axes": report.axes,
        "cells": [{"params": c.params, "seeds": c.seeds,
                   "accuracies": c.accuracies, "mean": c.mean,
                   "std": c.std} for c in report.cells],
    }
    path = os.path.join(out_dir, "grid_summary.json")
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
