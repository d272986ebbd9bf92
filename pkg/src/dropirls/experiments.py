"""Experiment drivers behind the CLI: training, grid-search CV, the
test-time deletion curve and the explicit-vs-marginalized comparison.

Every driver returns plain dict records (see :data:`RECORD_SCHEMA`) so the
CLI can write them as JSON lines.  Wall-clock timings live under the
``timing`` key and are the only nondeterministic field.
"""
from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .baseline import train_explicit
from .data import Dataset, OneVsAllModel, Task, delete_features, kfold, metrics, one_vs_all_train
from .latent import LatentModel, predict_latent, train_latent
from .linear import TRAINERS, LinearModel, Loss, ReweightMode, TrainConfig
from .noise import NoiseKind, NoiseModel

SCHEMA_NAME = "dropirls.result"
SCHEMA_VERSION = 1
THREADS_ENV = "DROPIRLS_THREADS"

DEFAULT_Q_GRID = tuple(round(0.1 * i, 1) for i in range(10))
DEFAULT_C_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)

RECORD_SCHEMA = {
    "type": "object",
    "required": ["schema", "version", "command", "record", "config", "timing"],
    "properties": {
        "schema": {"const": SCHEMA_NAME},
        "version": {"const": SCHEMA_VERSION},
        "command": {"enum": ["train", "predict", "cv", "nightmare", "compare-explicit"]},
        "record": {"type": "string"},
        "config": {"type": "object"},
        "seed": {"type": ["integer", "null"]},
        "metrics": {"type": "object"},
        "selected": {"type": "object"},
        "timing": {"type": "object"},
    },
}


@dataclass
class ExperimentConfig:
    """Everything a command needs; mirrors the CLI flags one-to-one."""

    task: str | None = None
    arch: str = "linear"
    loss: str = "hinge"
    noise: str = "dropout"
    q: float = 0.0
    c: float = 1.0
    q_grid: list = field(default_factory=lambda: list(DEFAULT_Q_GRID))
    c_grid: list = field(default_factory=lambda: list(DEFAULT_C_GRID))
    ell: float = 1.0
    epsilon: float = 0.0
    K: int = 10
    K_grid: list = field(default_factory=list)
    alpha_reg: float = 1.0
    alpha_reg_grid: list = field(default_factory=list)
    reweight_mode: str = "adaptive"
    max_irls_iters: int = 100
    irls_tol: float = 1e-5
    folds: int = 5
    seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    deletion_grid: list = field(default_factory=lambda: [0.0, 0.1, 0.3, 0.5, 0.7, 0.9])
    validation_fraction: float = 0.2
    M_grid: list = field(default_factory=lambda: [1, 4, 16, 64, 256])
    train: str | None = None
    test: str | None = None
    model_path: str | None = None
    out: str | None = None

    def __post_init__(self):
        for name in ("q_grid", "c_grid", "seeds", "deletion_grid", "M_grid"):
            if not list(getattr(self, name)):
                raise ValueError(f"{name} must not be empty")
        if self.arch not in ("linear", "latent"):
            raise ValueError(f"arch must be 'linear' or 'latent', got {self.arch!r}")
        Loss(self.loss)
        ReweightMode(self.reweight_mode)
        NoiseKind(self.noise)
        if self.folds < 2:
            raise ValueError("folds must be >= 2")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def snapshot(self) -> dict:
        out = asdict(self)
        for key in ("train", "test", "model_path", "out"):
            if out[key] is not None:
                out[key] = os.path.basename(out[key])
        return out

    def noise_model(self, q: float | None = None) -> NoiseModel:
        level = self.q if q is None else q
        if NoiseKind(self.noise) in (NoiseKind.POISSON, NoiseKind.NONE):
            return NoiseModel(self.noise, 0.0)
        return NoiseModel(self.noise, level)

    def train_config(self, c: float | None = None, q: float | None = None) -> TrainConfig:
        return TrainConfig(c=self.c if c is None else c, ell=self.ell, epsilon=self.epsilon,
                           noise=self.noise_model(q), max_irls_iters=self.max_irls_iters,
                           irls_tol=self.irls_tol, reweight_mode=ReweightMode(self.reweight_mode))


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _pool_map(fn, items):
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def record(command: str, kind: str, cfg: ExperimentConfig, seed=None, timing=None, **payload) -> dict:
    rec = {"schema": SCHEMA_NAME, "version": SCHEMA_VERSION, "command": command, "record": kind,
           "config": cfg.snapshot(), "seed": seed}
    rec.update(payload)
    rec["timing"] = dict(timing or {})
    return rec


# ---------------------------------------------------------------------------
# Training and scoring for any model kind.


def fit(data: Dataset, exp: ExperimentConfig, cfg: TrainConfig, K=None, alpha_reg=None, seed=None):
    """Train the configured engine; multiclass data goes through one-vs-all."""
    loss = Loss(exp.loss)
    seed = exp.seed if seed is None else seed
    if exp.arch == "latent":
        def engine(d, c):
            return train_latent(d, c, K or exp.K, alpha_reg or exp.alpha_reg, seed=seed, loss=loss)
    else:
        engine = TRAINERS[loss]
    if data.task is Task.MULTICLASS:
        return one_vs_all_train(data, engine, cfg)
    return engine(data, cfg)


def scores(model, X) -> np.ndarray:
    if isinstance(model, OneVsAllModel):
        return model.scores(X)
    if isinstance(model, LatentModel):
        return np.atleast_1d(predict_latent(model, X))
    return model.decision_function(X)


def predictions(model, X, task: Task) -> np.ndarray:
    s = scores(model, X)
    if task is Task.MULTICLASS:
        return np.argmax(s, axis=1).astype(float)
    if task is Task.BINARY:
        return np.where(s >= 0, 1.0, -1.0)
    return s


def evaluate(model, data: Dataset) -> dict:
    return metrics(predictions(model, data.X, data.task), data.y, data.task).as_dict()


def _validation_loss(model, data: Dataset) -> float:
    pred = predictions(model, data.X, data.task)
    if data.task is Task.REGRESSION:
        return float(np.mean((pred - data.y) ** 2))
    return float(np.mean(pred != data.y))


# ---------------------------------------------------------------------------
# Commands.


def run_train(exp: ExperimentConfig, train: Dataset, test: Dataset | None = None):
    t0 = time.perf_counter()
    model = fit(train, exp, exp.train_config())
    elapsed = time.perf_counter() - t0
    m = {"train": evaluate(model, train)}
    if test is not None:
        m["test"] = evaluate(model, test)
    return model, record("train", "train", exp, seed=exp.seed, metrics=m, timing={"train_s": elapsed})


def _grid(exp: ExperimentConfig):
    latent = exp.arch == "latent"
    Ks = (exp.K_grid or [exp.K]) if latent else [None]
    regs = (exp.alpha_reg_grid or [exp.alpha_reg]) if latent else [None]
    qs = sorted(exp.q_grid) if NoiseKind(exp.noise) not in (NoiseKind.POISSON, NoiseKind.NONE) else [0.0]
    return [dict(q=q, c=c, K=K, alpha_reg=r) for q, c, K, r in itertools.product(qs, sorted(exp.c_grid), Ks, regs)]


def _selection_key(point: dict, mean_loss: float):
    # ties: smaller q, then smaller c, then smaller K / alpha_reg
    return (mean_loss, point["q"], point["c"], point["K"] or 0, point["alpha_reg"] or 0)


def run_cv(exp: ExperimentConfig, train: Dataset):
    """Grid search by k-fold CV, then retrain the winner on all of ``train``."""
    folds = kfold(train, exp.folds, exp.seed)
    grid = _grid(exp)

    def one(point):
        t0 = time.perf_counter()
        cfg = exp.train_config(c=point["c"], q=point["q"])
        losses = []
        for tr, va in folds:
            model = fit(train.subset(tr), exp, cfg, point["K"], point["alpha_reg"])
            losses.append(_validation_loss(model, train.subset(va)))
        return point, losses, time.perf_counter() - t0

    results = _pool_map(one, grid)
    records = []
    best = None
    for point, losses, elapsed in results:
        mean = float(np.mean(losses))
        records.append(record("cv", "cv_point", exp, seed=exp.seed, selected=point,
                              metrics={"fold_losses": losses, "mean_loss": mean}, timing={"cv_s": elapsed}))
        key = _selection_key(point, mean)
        if best is None or key < best[0]:
            best = (key, point, mean)
    _, point, mean = best
    t0 = time.perf_counter()
    model = fit(train, exp, exp.train_config(c=point["c"], q=point["q"]), point["K"], point["alpha_reg"])
    records.append(record("cv", "cv_result", exp, seed=exp.seed, selected=point,
                          metrics={"mean_loss": mean, "train": evaluate(model, train)},
                          timing={"retrain_s": time.perf_counter() - t0}))
    return model, point, records


def _split(data: Dataset, fraction: float, seed):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(data))
    n_val = max(1, int(round(fraction * len(data))))
    return data.subset(np.sort(perm[n_val:])), data.subset(np.sort(perm[:n_val]))


def run_nightmare(exp: ExperimentConfig, train: Dataset, test: Dataset):
    """Error as a function of the fraction of test features deleted.

    Models for every (q, c) grid point are trained once on the training split.
    For each deletion fraction the point with the lowest error on an equally
    deleted validation split is selected and its error on the deleted test
    set reported.  Each seed redraws the validation split and deletion masks.
    """
    records = []
    grid = _grid(exp)
    for seed in exp.seeds:
        fit_part, val = _split(train, exp.validation_fraction, [seed, 1])

        def one(point):
            t0 = time.perf_counter()
            cfg = exp.train_config(c=point["c"], q=point["q"])
            return fit(fit_part, exp, cfg, point["K"], point["alpha_reg"], seed=seed), time.perf_counter() - t0

        trained = _pool_map(one, grid)
        for i, frac in enumerate(exp.deletion_grid):
            val_d = delete_features(val, frac, [seed, 2, i])
            test_d = delete_features(test, frac, [seed, 3, i])
            rows = []
            for point, (model, _) in zip(grid, trained):
                rows.append(dict(point, val_loss=_validation_loss(model, val_d),
                                 test_error=_validation_loss(model, test_d)))
            best = min(rows, key=lambda r: _selection_key(r, r["val_loss"]))
            records.append(record("nightmare", "deletion_point", exp, seed=seed,
                                  selected={k: best[k] for k in ("q", "c", "K", "alpha_reg")},
                                  metrics={"deletion": frac, "test_error": best["test_error"], "grid": rows},
                                  timing={"train_s": sum(t for _, t in trained)}))
    return records


def run_nightmare_fixed(exp: ExperimentConfig, model, test: Dataset):
    """Deletion curve of an already trained model (no per-fraction selection)."""
    records = []
    for seed in exp.seeds:
        for i, frac in enumerate(exp.deletion_grid):
            test_d = delete_features(test, frac, [seed, 3, i])
            records.append(record("nightmare", "deletion_point", exp, seed=seed, selected={},
                                  metrics={"deletion": frac, "test_error": _validation_loss(model, test_d)}))
    return records


def run_compare_explicit(exp: ExperimentConfig, train: Dataset, test: Dataset):
    """Explicit corruption with M copies versus the marginalized trainer."""
    if exp.arch != "linear":
        raise ValueError("compare-explicit supports linear models only")
    cfg = exp.train_config()
    loss = Loss(exp.loss)
    records = []
    for seed in exp.seeds:
        def one(M):
            t0 = time.perf_counter()
            model = train_explicit(train, cfg, M, seed, loss)
            return M, model, time.perf_counter() - t0

        for M, model, elapsed in _pool_map(one, exp.M_grid):
            records.append(record("compare-explicit", "explicit", exp, seed=seed, selected={"M": int(M)},
                                  metrics={"test": evaluate(model, test)}, timing={"train_s": elapsed}))
        t0 = time.perf_counter()
        model = TRAINERS[loss](train, cfg)
        records.append(record("compare-explicit", "marginalized", exp, seed=seed, selected={"M": None},
                              metrics={"test": evaluate(model, test)},
                              timing={"train_s": time.perf_counter() - t0}))
    return records


def strip_timing(rec: dict) -> dict:
    return {k: v for k, v in rec.items() if k != "timing"}


def with_overrides(exp: ExperimentConfig, **changes) -> ExperimentConfig:
    return replace(exp, **changes)
