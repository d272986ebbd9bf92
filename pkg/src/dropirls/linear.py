"""Linear IRLS engines: dropout SVM (hinge), logistic regression, and SVR.

Each engine alternates a closed-form E-step (see :mod:`dropirls.reweight`)
with an M-step that minimizes an expected re-weighted quadratic loss

    ||w||^2 + sum_n a_n E_p[(w'x~_n + b - t_n)^2]

where the per-example weight ``a_n`` and pseudo-target ``t_n`` depend on the
loss.  The offset ``b`` is never regularized or corrupted.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
import scipy.sparse as sp

from . import reweight
from .noise import CorruptionMoments, FeatureVariance, NoiseModel, batch_variance
from .solver import DENSE_THRESHOLD, QuadraticProblem, SmoothObjective, minimize_lbfgs, solve_normal_equations

log = logging.getLogger(__name__)

_LOG2 = float(np.log(2.0))


class Loss(str, enum.Enum):
    HINGE = "hinge"
    LOGISTIC = "logistic"
    EPS_INSENSITIVE = "eps_insensitive"


class ReweightMode(str, enum.Enum):
    ADAPTIVE = "adaptive"
    FIXED_QUADRATIC = "fixed_quadratic"


class TrainingError(ValueError):
    """Raised for data that cannot be trained on (e.g. an empty dataset)."""


@dataclass(frozen=True)
class TrainConfig:
    c: float = 1.0
    ell: float = 1.0
    epsilon: float = 0.0
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    max_irls_iters: int = 100
    irls_tol: float = 1e-5
    reweight_mode: ReweightMode = ReweightMode.ADAPTIVE
    lbfgs_tol: float = 1e-5
    lbfgs_max_iter: int = 200
    dense_threshold: int = DENSE_THRESHOLD

    def __post_init__(self):
        object.__setattr__(self, "reweight_mode", ReweightMode(self.reweight_mode))
        if not self.c > 0:
            raise ValueError(f"c must be positive, got {self.c}")
        if not self.ell >= 1:
            raise ValueError(f"margin ell must be >= 1, got {self.ell}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.max_irls_iters < 1 or not self.irls_tol > 0:
            raise ValueError("max_irls_iters must be >= 1 and irls_tol > 0")

    @property
    def fixed(self) -> bool:
        return self.reweight_mode is ReweightMode.FIXED_QUADRATIC

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class LinearModel:
    w: np.ndarray
    b: float
    loss: Loss
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    objective_trace: tuple = field(default=(), compare=False, repr=False)

    @property
    def dim(self) -> int:
        return self.w.shape[0]

    @property
    def augmented(self) -> np.ndarray:
        return np.append(self.w, self.b)

    def decision_function(self, X) -> np.ndarray:
        X = _as_csr(X)
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {X.shape[1]}")
        return np.asarray(X @ self.w).ravel() + self.b


@dataclass(frozen=True)
class PerExampleStats:
    zeta_mean: float
    zeta_sq: float


def predict(model: LinearModel, x) -> float | np.ndarray:
    """Raw score w'x + b; a matrix of rows gives a vector of scores."""
    if sp.issparse(x) and x.shape[0] != 1 or (not sp.issparse(x) and np.ndim(x) == 2):
        return model.decision_function(x)
    x = _as_csr(np.asarray(x.toarray() if sp.issparse(x) else x, dtype=float).reshape(1, -1))
    return float(model.decision_function(x)[0])


def second_moment_hinge(w, x, y: float, ell: float, moments: CorruptionMoments) -> PerExampleStats:
    """E[zeta] and E[zeta^2] for zeta = ell - y w'x~ under the given moments.

    ``w`` is the augmented weight vector (offset last).  Moments of length D
    get the deterministic offset coordinate appended.
    """
    w = np.asarray(w, dtype=float)
    mean, var = np.asarray(moments.mean, dtype=float), np.asarray(moments.var, dtype=float)
    if mean.shape[0] == w.shape[0] - 1:
        mean, var = np.append(mean, 1.0), np.append(var, 0.0)
    if mean.shape[0] != w.shape[0]:
        raise ValueError(f"dimension mismatch: w has {w.shape[0]}, moments have {mean.shape[0]}")
    score = w @ mean
    zeta_sq = score**2 + np.sum(w * w * var) - 2 * ell * y * score + ell**2
    return PerExampleStats(zeta_mean=float(ell - y * score), zeta_sq=float(zeta_sq))


# ---------------------------------------------------------------------------
# Blocks of examples.  The in-memory engines use one block; the explicit
# corruption baseline streams many.


@dataclass
class DataBlock:
    X: sp.csr_matrix
    y: np.ndarray
    var: FeatureVariance
    cscale: np.ndarray | None = None

    def c_of(self, c: float) -> np.ndarray | float:
        return c if self.cscale is None else c * self.cscale


def make_block(X, y, noise: NoiseModel, sample_weight=None) -> DataBlock:
    X = _as_csr(X)
    cscale = None if sample_weight is None else np.asarray(sample_weight, dtype=float)
    return DataBlock(X, np.asarray(y, dtype=float), batch_variance(X, noise), cscale)


def _as_csr(X) -> sp.csr_matrix:
    if sp.issparse(X):
        return sp.csr_matrix(X, dtype=float)
    return sp.csr_matrix(np.atleast_2d(np.asarray(X, dtype=float)))


# ---------------------------------------------------------------------------
# Per-loss pieces.  Each works on vectors of scores m = w'mu + b and
# corruption variances v = sum_d var_d w_d^2.


def _moment_pairs(loss: Loss, m, v, y, cfg: TrainConfig, ell: float):
    """Second moments that feed the E-step."""
    if loss is Loss.HINGE:
        e = ell - y * m
        return (e, e * e + v)
    if loss is Loss.LOGISTIC:
        return (m, m * m + v)
    eps = cfg.epsilon
    r = y - m
    return ((r - eps) ** 2 + v, (r + eps) ** 2 + v)


def _bound_at_optimum(loss: Loss, m, v, y, c, cfg: TrainConfig) -> np.ndarray:
    """Per-example variational bound after minimizing over q."""
    if loss is Loss.HINGE:
        e, s = _moment_pairs(loss, m, v, y, cfg, cfg.ell)
        return c * (e + np.sqrt(s))
    if loss is Loss.LOGISTIC:
        z = np.sqrt(m * m + v)
        return c * (_LOG2 + reweight.log_cosh_half(z)) - 0.5 * c * y * m
    s_minus, s_plus = _moment_pairs(loss, m, v, y, cfg, cfg.ell)
    return c * (np.sqrt(s_minus) + np.sqrt(s_plus) - 2 * cfg.epsilon)


def _estep(loss: Loss, m, v, y, c, cfg: TrainConfig) -> reweight.Reweights:
    if loss is Loss.HINGE:
        _, s = _moment_pairs(loss, m, v, y, cfg, cfg.ell)
        return reweight.Reweights(np.broadcast_to(reweight.gamma_hinge(c, s), m.shape).copy())
    if loss is Loss.LOGISTIC:
        g = reweight.gamma_logistic(c, m * m + v)
        return reweight.Reweights(np.broadcast_to(g, m.shape).copy())
    s_minus, s_plus = _moment_pairs(loss, m, v, y, cfg, cfg.ell)
    g, d = reweight.gamma_delta_svr(c, s_minus, s_plus)
    return reweight.Reweights(np.broadcast_to(g, m.shape).copy(), np.broadcast_to(d, m.shape).copy())


def _fixed_reweights(loss: Loss, c, n: int) -> reweight.Reweights:
    c = np.broadcast_to(np.asarray(c, dtype=float), (n,))
    if loss is Loss.LOGISTIC:
        return reweight.Reweights(c / 2.0)
    if loss is Loss.HINGE:
        return reweight.Reweights(1.0 / c)
    return reweight.Reweights(1.0 / c, 1.0 / c)


def _weights_targets(loss: Loss, rw: reweight.Reweights, y, c, cfg: TrainConfig, ell: float, eps: float):
    """M-step weights a_n and re-weighted labels t_n."""
    g = rw.gamma
    if loss is Loss.HINGE:
        return 0.5 * c * c * g, (ell + 1.0 / (c * g)) * y
    if loss is Loss.LOGISTIC:
        return 0.5 * g, c * y / (2.0 * g)
    d = rw.delta
    return 0.5 * c * c * (g + d), y + (d - g) / (d + g) * eps


def _variational_terms(loss: Loss, m, v, y, c, cfg: TrainConfig, rw: reweight.Reweights) -> np.ndarray:
    """Per-example bound at arbitrary (not necessarily optimal) reweights."""
    g = rw.gamma
    if loss is Loss.HINGE:
        e, s = _moment_pairs(loss, m, v, y, cfg, cfg.ell)
        return 0.5 / g + c * e + 0.5 * c * c * g * s
    if loss is Loss.LOGISTIC:
        s = m * m + v
        cvec = np.broadcast_to(np.asarray(c, dtype=float), m.shape)
        t = reweight.pg_tilt_from_mean(cvec, g)
        return (0.5 * g * (s - t * t) + cvec * (_LOG2 + reweight.log_cosh_half(t)) - 0.5 * cvec * y * m)
    s_minus, s_plus = _moment_pairs(loss, m, v, y, cfg, cfg.ell)
    d = rw.delta
    return 0.5 / g + 0.5 / d + 0.5 * c * c * (g * s_minus + d * s_plus) - 2 * c * cfg.epsilon


# ---------------------------------------------------------------------------
# Core IRLS loop.


@dataclass
class _Accumulator:
    dim: int
    dense: bool
    gram: np.ndarray | None = None
    rhs: np.ndarray | None = None
    parts: list = field(default_factory=list)

    def __post_init__(self):
        if self.dense:
            self.gram = np.zeros((self.dim + 1, self.dim + 1))
            self.rhs = np.zeros(self.dim + 1)

    def add(self, block: DataBlock, a: np.ndarray, t: np.ndarray):
        if not self.dense:
            self.parts.append((a, t))
            return
        D = self.dim
        X = block.X
        Xa = X.multiply(a[:, None]).tocsr() if X.nnz else X
        self.gram[:D, :D] += (X.T @ Xa).toarray()
        self.gram[np.arange(D), np.arange(D)] += block.var.weighted_column_sums(a, D)
        col = np.asarray(X.T @ a).ravel()
        self.gram[:D, D] += col
        self.gram[D, :D] += col
        self.gram[D, D] += a.sum()
        self.rhs[:D] += np.asarray(X.T @ (a * t)).ravel()
        self.rhs[D] += (a * t).sum()


def _quadratic_objective(blocks: Iterable[DataBlock], parts, dim: int) -> SmoothObjective:
    """||w||^2 + sum a E[(w'x~ + b - t)^2] and its gradient, factored per example."""

    def fun(wa):
        w, b = wa[:dim], wa[dim]
        val = w @ w
        grad = np.zeros(dim + 1)
        grad[:dim] = 2 * w
        for block, (a, t) in zip(blocks, parts):
            r = np.asarray(block.X @ w).ravel() + b - t
            v = block.var.dot_squared(w)
            val += np.sum(a * (r * r + v))
            ar = a * r
            grad[:dim] += 2 * np.asarray(block.X.T @ ar).ravel() + 2 * w * block.var.weighted_column_sums(a, dim)
            grad[dim] += 2 * ar.sum()
        return val, grad

    return SmoothObjective(fun, dim + 1)


def _scores(block: DataBlock, wa: np.ndarray, dim: int):
    w = wa[:dim]
    return np.asarray(block.X @ w).ravel() + wa[dim], block.var.dot_squared(w)


@dataclass
class FitResult:
    w_aug: np.ndarray
    trace: list
    n_iter: int
    converged: bool


def fit_blocks(blocks: Iterable[DataBlock], dim: int, cfg: TrainConfig, loss: Loss,
               w0: np.ndarray | None = None) -> FitResult:
    """Run IRLS over the blocks.

    ``blocks`` is iterated once per sweep (and once per objective evaluation
    on the L-BFGS path), so it must yield the same blocks in the same order
    every time; a list or a seeded regenerating stream both qualify.
    """
    loss = Loss(loss)
    wa = np.zeros(dim + 1) if w0 is None else np.array(w0, dtype=float)
    dense = dim <= cfg.dense_threshold
    fixed = cfg.fixed
    ell = 0.0 if (fixed and loss is Loss.HINGE) else cfg.ell
    eps = 0.0 if (fixed and loss is Loss.EPS_INSENSITIVE) else cfg.epsilon
    trace: list[float] = []
    iters = 1 if fixed else cfg.max_irls_iters
    converged = False
    n_iter = 0
    for it in range(iters + 1):
        acc = _Accumulator(dim, dense)
        objective = wa[:dim] @ wa[:dim]
        n_seen = 0
        for block in blocks:
            m, v = _scores(block, wa, dim)
            c = block.c_of(cfg.c)
            n_seen += m.shape[0]
            if fixed:
                rw = _fixed_reweights(loss, c, m.shape[0])
                a, t = _weights_targets(loss, rw, block.y, c, cfg, ell, eps)
                objective += np.sum(a * ((m - t) ** 2 + v))
            else:
                objective += _bound_at_optimum(loss, m, v, block.y, c, cfg).sum()
                rw = _estep(loss, m, v, block.y, c, cfg)
                a, t = _weights_targets(loss, rw, block.y, c, cfg, ell, eps)
            acc.add(block, a, t)
        if n_seen == 0:
            raise TrainingError("cannot train on an empty dataset")
        trace.append(float(objective))
        if it == iters:
            break
        if len(trace) > 1 and abs(trace[-2] - trace[-1]) <= cfg.irls_tol * max(abs(trace[-1]), 1e-300):
            converged = True
            break
        wa = _mstep(acc, blocks, dim, wa, cfg, loss)
        n_iter += 1
    if fixed:
        converged = True
        trace = trace[1:]
    return FitResult(wa, trace, n_iter, converged)


def _ridge(loss: Loss, c: float) -> float:
    # normal equations in the form (ridge*I' + sum gamma E[xx']) w = ...
    return 2.0 if loss is Loss.LOGISTIC else 2.0 / (c * c)


def _mstep(acc: _Accumulator, blocks, dim, wa, cfg: TrainConfig, loss: Loss) -> np.ndarray:
    if acc.dense:
        k = _ridge(loss, cfg.c)
        problem = QuadraticProblem(acc.gram * k, acc.rhs * k, ridge=k, unpenalized=(dim,))
        return solve_normal_equations(problem)
    obj = _quadratic_objective(blocks, acc.parts, dim)
    x, _ = minimize_lbfgs(obj, wa, tol=cfg.lbfgs_tol, max_iter=cfg.lbfgs_max_iter)
    return x


def _check_labels(data, loss: Loss):
    y = np.asarray(data.y, dtype=float)
    if y.shape[0] == 0:
        raise TrainingError("cannot train on an empty dataset")
    if loss is not Loss.EPS_INSENSITIVE and not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingError("binary engines need labels in {+1, -1}")
    if not np.all(np.isfinite(y)):
        raise TrainingError("responses must be finite")
    return y


def _train(data, cfg: TrainConfig, loss: Loss, sample_weight=None) -> LinearModel:
    y = _check_labels(data, loss)
    block = make_block(data.X, y, cfg.noise, sample_weight)
    res = fit_blocks([block], data.X.shape[1], cfg, loss)
    log.debug("%s IRLS: %d iterations, converged=%s, objective=%.10g",
              loss.value, res.n_iter, res.converged, res.trace[-1])
    return LinearModel(res.w_aug[:-1].copy(), float(res.w_aug[-1]), loss, cfg.noise, tuple(res.trace))


def train_hinge(data, cfg: TrainConfig, sample_weight=None) -> LinearModel:
    """Dropout SVM: expected hinge loss under ``cfg.noise``."""
    return _train(data, cfg, Loss.HINGE, sample_weight)


def train_logistic(data, cfg: TrainConfig, sample_weight=None) -> LinearModel:
    """Dropout logistic regression via Polya-Gamma reweighting."""
    return _train(data, cfg, Loss.LOGISTIC, sample_weight)


def train_svr(data, cfg: TrainConfig, sample_weight=None) -> LinearModel:
    """Dropout support vector regression with the epsilon-insensitive loss."""
    return _train(data, cfg, Loss.EPS_INSENSITIVE, sample_weight)


TRAINERS = {Loss.HINGE: train_hinge, Loss.LOGISTIC: train_logistic, Loss.EPS_INSENSITIVE: train_svr}


# ---------------------------------------------------------------------------
# Objective evaluation for tests, traces and diagnostics.


def _single_block(model: LinearModel, data, cfg: TrainConfig, sample_weight=None):
    block = make_block(data.X, np.asarray(data.y, dtype=float), cfg.noise, sample_weight)
    m, v = _scores(block, model.augmented, model.dim)
    return block, m, v


def estep(model: LinearModel, data, cfg: TrainConfig, sample_weight=None) -> reweight.Reweights:
    """Closed-form optimal reweights for the current model."""
    block, m, v = _single_block(model, data, cfg, sample_weight)
    c = block.c_of(cfg.c)
    if cfg.fixed:
        return _fixed_reweights(model.loss, c, m.shape[0])
    return _estep(model.loss, m, v, block.y, c, cfg)


def variational_objective(model: LinearModel, data, cfg: TrainConfig,
                          reweights: reweight.Reweights | None = None, sample_weight=None) -> float:
    """Regularized variational bound, up to constants independent of (w, q).

    Without ``reweights`` the bound is evaluated at the optimal q, where at
    zero corruption it equals the exact regularized loss
    ||w||^2 + 2c sum max(0, zeta_n) (hinge), c sum log(1 + exp(-y f)) (logistic)
    or 2c sum max(0, |Delta_n| - eps) (SVR).
    """
    block, m, v = _single_block(model, data, cfg, sample_weight)
    c = block.c_of(cfg.c)
    reg = float(model.w @ model.w)
    if reweights is None:
        return reg + float(_bound_at_optimum(model.loss, m, v, block.y, c, cfg).sum())
    return reg + float(_variational_terms(model.loss, m, v, block.y, c, cfg, reweights).sum())


def mstep_objective(model: LinearModel, data, cfg: TrainConfig, reweights: reweight.Reweights,
                    sample_weight=None) -> float:
    """||w||^2 + sum a_n E_p[(w'x~_n + b - t_n)^2] at fixed reweights."""
    block, m, v = _single_block(model, data, cfg, sample_weight)
    c = block.c_of(cfg.c)
    fixed = cfg.fixed
    ell = 0.0 if (fixed and model.loss is Loss.HINGE) else cfg.ell
    eps = 0.0 if (fixed and model.loss is Loss.EPS_INSENSITIVE) else cfg.epsilon
    a, t = _weights_targets(model.loss, reweights, block.y, c, cfg, ell, eps)
    return float(model.w @ model.w + np.sum(a * ((m - t) ** 2 + v)))


def mstep_weights_targets(model: LinearModel, data, cfg: TrainConfig, reweights: reweight.Reweights,
                          sample_weight=None):
    """The per-example weights and re-weighted labels of the M-step."""
    c = cfg.c if sample_weight is None else cfg.c * np.asarray(sample_weight, dtype=float)
    fixed = cfg.fixed
    ell = 0.0 if (fixed and model.loss is Loss.HINGE) else cfg.ell
    eps = 0.0 if (fixed and model.loss is Loss.EPS_INSENSITIVE) else cfg.epsilon
    return _weights_targets(model.loss, reweights, np.asarray(data.y, dtype=float), c, cfg, ell, eps)
