"""One-hidden-layer dropout classifiers (sigmoid features, hinge or logistic loss).

The corrupted hidden layer g(x~) is replaced by its first-order Taylor
expansion around the clean input, so its mean is g(x) and its covariance is
J' diag(var) J with J[d, k] = g_k (1 - g_k) alpha[d, k].  Training cycles an
E-step on that linearized second moment, an L-BFGS step on (w, b), and a few
backtracking gradient steps on alpha.

Gradients below are derived directly from the linearized objective and are
checked against central differences in the test suite.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import reweight
from .linear import Loss, PerExampleStats, TrainConfig, TrainingError, _as_csr
from .noise import FeatureVariance, NoiseModel, batch_variance, moments
from .solver import SmoothObjective, minimize_lbfgs

log = logging.getLogger(__name__)

_LOG2 = float(np.log(2.0))


@dataclass(frozen=True)
class LatentModel:
    alpha: np.ndarray
    w: np.ndarray
    b: float
    loss: Loss
    noise: NoiseModel = field(default_factory=NoiseModel.none)
    objective_trace: tuple = field(default=(), compare=False, repr=False)

    @property
    def K(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.alpha.shape[0]


@dataclass(frozen=True)
class TaylorMoments:
    g_mu: np.ndarray
    jac: np.ndarray
    var: np.ndarray


def taylor_moments(x, alpha, noise: NoiseModel) -> TaylorMoments:
    """Hidden-layer value and Jacobian at the (unbiased) mean input."""
    cm = moments(x, noise)
    alpha = np.asarray(alpha, dtype=float)
    g = expit(cm.mean @ alpha)
    jac = alpha * (g * (1.0 - g))[None, :]
    return TaylorMoments(g_mu=g, jac=jac, var=cm.var)


def latent_second_moment(w, tm: TaylorMoments, y: float, ell: float, loss: Loss | str,
                         b: float = 0.0) -> PerExampleStats:
    """First and second moments of zeta under the linearized hidden layer."""
    w = np.asarray(w, dtype=float)
    h = tm.jac @ w
    spread = float(np.sum(tm.var * h * h))
    score = float(w @ tm.g_mu + b)
    if Loss(loss) is Loss.HINGE:
        e = ell - y * score
        return PerExampleStats(zeta_mean=e, zeta_sq=e * e + spread)
    return PerExampleStats(zeta_mean=score, zeta_sq=score * score + spread)


def predict_latent(model: LatentModel, x) -> float | np.ndarray:
    """w' g(x; alpha) + b; rows of a matrix give a vector of scores."""
    single = not sp.issparse(x) and np.ndim(x) == 1
    X = _as_csr(x)
    if X.shape[1] != model.dim:
        raise ValueError(f"expected {model.dim} features, got {X.shape[1]}")
    out = expit(np.asarray(X @ model.alpha)) @ model.w + model.b
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Batched linearized objective.


@dataclass
class _Forward:
    G: np.ndarray
    H: np.ndarray
    m: np.ndarray
    Q: np.ndarray
    VH: sp.csr_matrix | None
    HW: np.ndarray


class _Problem:
    def __init__(self, X, y, var: FeatureVariance, c: float, ell: float, loss: Loss):
        self.X = _as_csr(X)
        self.y = np.asarray(y, dtype=float)
        self.var = var
        self.c, self.ell, self.loss = c, ell, Loss(loss)
        if var.matrix is not None:
            coo = var.matrix.tocoo()
            self.rows, self.cols, self.vals = coo.row, coo.col, coo.data
        else:
            self.rows = None

    @property
    def shape(self):
        return self.X.shape

    def forward(self, w, b, alpha) -> _Forward:
        N, D = self.X.shape
        G = expit(np.asarray(self.X @ alpha))
        H = G * (1.0 - G)
        HW = H * w
        m = G @ w + b
        Q = np.zeros(N)
        VH = None
        if self.rows is not None:
            hv = np.einsum("ik,ik->i", HW[self.rows], alpha[self.cols])
            Q += np.bincount(self.rows, self.vals * hv * hv, minlength=N)
            VH = sp.csr_matrix((self.vals * hv, (self.rows, self.cols)), shape=(N, D))
        if self.var.constant:
            Q += self.var.constant * np.einsum("nk,kl,nl->n", HW, alpha.T @ alpha, HW)
        return _Forward(G, H, m, Q, VH, HW)

    def bound(self, fw: _Forward) -> np.ndarray:
        """Per-example bound at the optimal reweights."""
        c = self.c
        if self.loss is Loss.HINGE:
            e = self.ell - self.y * fw.m
            return c * (e + np.sqrt(e * e + fw.Q))
        z = np.sqrt(fw.m * fw.m + fw.Q)
        return c * (_LOG2 + reweight.log_cosh_half(z)) - 0.5 * c * self.y * fw.m

    def estep(self, fw: _Forward) -> np.ndarray:
        if self.loss is Loss.HINGE:
            e = self.ell - self.y * fw.m
            return reweight.gamma_hinge(self.c, e * e + fw.Q)
        return reweight.gamma_logistic(self.c, fw.m * fw.m + fw.Q)

    def terms(self, fw: _Forward, gamma):
        """Per-example objective at fixed gamma, plus dT/dm and dT/dQ."""
        c, y = self.c, self.y
        if self.loss is Loss.HINGE:
            e = self.ell - y * fw.m
            T = c * e + 0.5 * c * c * gamma * (e * e + fw.Q)
            return T, -y * (c + c * c * gamma * e), 0.5 * c * c * gamma
        T = 0.5 * gamma * (fw.m * fw.m + fw.Q) - 0.5 * c * y * fw.m
        return T, gamma * fw.m - 0.5 * c * y, 0.5 * gamma

    def _P(self, fw: _Forward, alpha):
        # P[n, k] = sum_d var[n, d] h[n, d] alpha[d, k]
        P = np.zeros_like(fw.G)
        if fw.VH is not None:
            P += np.asarray(fw.VH @ alpha)
        if self.var.constant:
            P += self.var.constant * fw.HW @ (alpha.T @ alpha)
        return P

    def grad_wb(self, fw: _Forward, alpha, r, beta):
        P = self._P(fw, alpha)
        gw = fw.G.T @ r + np.sum(2.0 * beta[:, None] * fw.H * P, axis=0)
        return gw, r.sum()

    def grad_alpha(self, fw: _Forward, w, alpha, r, beta):
        P = self._P(fw, alpha)
        WH = w * fw.H
        B = 2.0 * beta[:, None] * WH
        out = np.asarray(self.X.T @ (r[:, None] * WH + B * (1.0 - 2.0 * fw.G) * P))
        if fw.VH is not None:
            out += np.asarray(fw.VH.T @ B)
        if self.var.constant:
            out += self.var.constant * alpha @ (fw.HW.T @ B)
        return out


def _gamma_vec(gamma, n):
    return np.broadcast_to(np.asarray(gamma, dtype=float), (n,))


def w_objective(problem: _Problem, alpha, gamma) -> SmoothObjective:
    """||w||^2 + sum_n T_n over the stacked vector (w, b), alpha and gamma fixed."""
    K = alpha.shape[1]
    gamma = _gamma_vec(gamma, problem.shape[0])

    def fun(wb):
        w, b = wb[:K], wb[K]
        fw = problem.forward(w, b, alpha)
        T, r, beta = problem.terms(fw, gamma)
        gw, gb = problem.grad_wb(fw, alpha, r, beta)
        return float(w @ w + T.sum()), np.append(2.0 * w + gw, gb)

    return SmoothObjective(fun, K + 1)


def alpha_objective(problem: _Problem, w, b, gamma, alpha_reg: float, shape) -> SmoothObjective:
    """alpha_reg ||alpha||^2 + sum_n T_n over flattened alpha, (w, b, gamma) fixed."""
    gamma = _gamma_vec(gamma, problem.shape[0])

    def fun(flat):
        alpha = flat.reshape(shape)
        fw = problem.forward(w, b, alpha)
        T, r, beta = problem.terms(fw, gamma)
        g = problem.grad_alpha(fw, w, alpha, r, beta)
        return float(alpha_reg * np.sum(alpha * alpha) + T.sum()), (2.0 * alpha_reg * alpha + g).ravel()

    return SmoothObjective(fun, int(np.prod(shape)))


def make_problem(data, cfg: TrainConfig, loss: Loss | str = Loss.HINGE) -> _Problem:
    X = _as_csr(data.X)
    return _Problem(X, data.y, batch_variance(X, cfg.noise), cfg.c, cfg.ell, Loss(loss))


def _gradient_steps(obj: SmoothObjective, x, steps: int, step_size: float):
    """Backtracking (Armijo) gradient descent; returns (x, f, next step size)."""
    f, g = obj(x)
    for _ in range(steps):
        gg = g @ g
        if gg == 0.0:
            break
        t = step_size
        while True:
            x_new = x - t * g
            f_new, g_new = obj(x_new)
            if f_new <= f - 1e-4 * t * gg:
                break
            t *= 0.5
            if t < 1e-20:
                return x, f, step_size
        x, f, g = x_new, f_new, g_new
        step_size = min(t * 2.0, 1e6)
    return x, f, step_size


def train_latent(data, cfg: TrainConfig, K: int, alpha_reg: float = 1.0, seed=0,
                 loss: Loss | str = Loss.HINGE, alpha_steps: int = 5, train_alpha: bool = True,
                 alpha0=None) -> LatentModel:
    """Alternate E-step, (w, b) L-BFGS step and alpha gradient steps."""
    loss = Loss(loss)
    if loss is Loss.EPS_INSENSITIVE:
        raise ValueError("latent models support hinge and logistic losses only")
    if K < 1 or not alpha_reg > 0:
        raise ValueError("K must be >= 1 and alpha_reg > 0")
    y = np.asarray(data.y, dtype=float)
    if y.shape[0] == 0:
        raise TrainingError("cannot train on an empty dataset")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise TrainingError("latent engines need labels in {+1, -1}")
    problem = make_problem(data, cfg, loss)
    D = problem.shape[1]
    if alpha0 is None:
        # Glorot-uniform; a near-zero start leaves w = 0 a stationary point
        limit = np.sqrt(6.0 / (D + K))
        alpha = np.random.default_rng(seed).uniform(-limit, limit, size=(D, K))
    else:
        alpha = np.array(alpha0, dtype=float).reshape(D, K)
    w, b = np.zeros(K), 0.0
    step = 1.0
    trace: list[float] = []
    for it in range(cfg.max_irls_iters + 1):
        fw = problem.forward(w, b, alpha)
        F = float(w @ w + alpha_reg * np.sum(alpha * alpha) + problem.bound(fw).sum())
        trace.append(F)
        if it == cfg.max_irls_iters:
            break
        if len(trace) > 1 and abs(trace[-2] - F) <= cfg.irls_tol * max(abs(F), 1e-300):
            break
        gamma = problem.estep(fw)
        wb, _ = minimize_lbfgs(w_objective(problem, alpha, gamma), np.append(w, b),
                               tol=cfg.lbfgs_tol, max_iter=cfg.lbfgs_max_iter)
        w, b = wb[:K], float(wb[K])
        if train_alpha and alpha_steps > 0:
            obj = alpha_objective(problem, w, b, gamma, alpha_reg, alpha.shape)
            flat, _, step = _gradient_steps(obj, alpha.ravel(), alpha_steps, step)
            alpha = flat.reshape(D, K)
    log.debug("latent %s: %d outer iterations, objective=%.10g", loss.value, len(trace) - 1, trace[-1])
    return LatentModel(alpha, w, b, loss, cfg.noise, tuple(trace))


def latent_objective(model: LatentModel, data, cfg: TrainConfig, alpha_reg: float = 1.0) -> float:
    """Linearized bound at the optimal reweights (the quantity training descends)."""
    problem = make_problem(data, cfg, model.loss)
    fw = problem.forward(model.w, model.b, model.alpha)
    return float(model.w @ model.w + alpha_reg * np.sum(model.alpha**2) + problem.bound(fw).sum())
