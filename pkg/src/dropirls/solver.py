"""Optimization back-ends shared by the engines."""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

#: Problems up to this dimension are solved through the normal equations.
DENSE_THRESHOLD = 2000


class SolverWarning(RuntimeWarning):
    """A solve finished without meeting its contract (fallback or stall)."""


@dataclass
class QuadraticProblem:
    """Minimize 1/2 w'(gram + ridge*I')w - rhs'w, with I' zero on ``unpenalized``."""

    gram: np.ndarray
    rhs: np.ndarray
    ridge: float
    unpenalized: tuple = ()

    def __post_init__(self):
        self.gram = np.asarray(self.gram, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        d = self.rhs.shape[0]
        if self.gram.shape != (d, d):
            raise ValueError(f"gram shape {self.gram.shape} does not match rhs length {d}")
        if not self.ridge > 0:
            raise ValueError("ridge must be positive")

    @property
    def dim(self) -> int:
        return self.rhs.shape[0]

    def ridge_diagonal(self) -> np.ndarray:
        diag = np.full(self.dim, float(self.ridge))
        diag[list(self.unpenalized)] = 0.0
        return diag

    def system_matrix(self) -> np.ndarray:
        A = self.gram.copy()
        A[np.diag_indices_from(A)] += self.ridge_diagonal()
        return A

    def as_objective(self) -> "SmoothObjective":
        A = self.system_matrix()
        b = self.rhs

        def fun(w):
            Aw = A @ w
            return 0.5 * w @ Aw - b @ w, Aw - b

        return SmoothObjective(fun, self.dim)


@dataclass
class SmoothObjective:
    """``fun(x)`` returns ``(value, gradient)``."""

    fun: Callable[[np.ndarray], tuple]
    dim: int

    def __call__(self, x):
        return self.fun(x)


def solve_normal_equations(problem: QuadraticProblem) -> np.ndarray:
    """Solve (gram + ridge*I') w = rhs with a Cholesky factorization.

    Falls back to L-BFGS (with a :class:`SolverWarning`) if the factorization
    fails, which can only happen through round-off on a near-singular gram.
    """
    A = problem.system_matrix()
    A = 0.5 * (A + A.T)
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(problem.rhs))):
        raise FloatingPointError("normal equations contain non-finite entries")
    try:
        factor = scipy.linalg.cho_factor(A, lower=True, check_finite=True)
        return scipy.linalg.cho_solve(factor, problem.rhs)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        warnings.warn("Cholesky factorization failed; falling back to L-BFGS", SolverWarning, stacklevel=2)
        x, _ = minimize_lbfgs(problem.as_objective(), np.zeros(problem.dim), tol=1e-10, max_iter=10 * problem.dim + 100)
        return x


def minimize_lbfgs(
    obj: SmoothObjective,
    x0: np.ndarray,
    tol: float = 1e-5,
    max_iter: int = 200,
    memory: int = 10,
) -> tuple[np.ndarray, float]:
    """Limited-memory BFGS with an Armijo backtracking line search.

    Stops once the infinity norm of the gradient is at most ``tol``.  Every
    accepted step satisfies sufficient decrease, so the returned value never
    exceeds f(x0).  A failed line search returns the best iterate and emits a
    :class:`SolverWarning`.
    """
    x = np.array(x0, dtype=float)
    f, g = obj(x)
    history: deque = deque(maxlen=memory)
    for _ in range(max_iter):
        if np.max(np.abs(g), initial=0.0) <= tol:
            return x, f
        d = -_two_loop(g, history)
        slope = g @ d
        if not slope < 0:
            history.clear()
            d = -g
            slope = g @ d
        step = 1.0 if history else min(1.0, 1.0 / np.max(np.abs(g)))
        accepted = False
        for _ in range(60):
            x_new = x + step * d
            f_new, g_new = obj(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            warnings.warn("line search failed; returning best iterate", SolverWarning, stacklevel=2)
            return x, f
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * np.sqrt((s @ s) * (y @ y)):
            history.append((s, y, 1.0 / (s @ y)))
        x, f, g = x_new, f_new, g_new
    if np.max(np.abs(g), initial=0.0) > tol:
        warnings.warn(f"L-BFGS stopped at max_iter={max_iter} with |grad|_inf={np.max(np.abs(g)):.3g}",
                      SolverWarning, stacklevel=2)
    return x, f


def _two_loop(g, history):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if history:
        s, y, _ = history[-1]
        q *= (s @ y) / (y @ y)
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def check_gradient(obj, x, h: float = 1e-6) -> float:
    """Largest coordinate-wise relative error of the analytic gradient.

    Central differences with step ``h``; the denominator is
    max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-7, 1e-3]")
    x = np.array(x, dtype=float)
    _, grad = obj(x)
    grad = np.asarray(grad, dtype=float).ravel()
    flat = x.ravel()
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp, _ = obj(x)
        flat[i] = orig - h
        fm, _ = obj(x)
        flat[i] = orig
        numeric = (fp - fm) / (2 * h)
        denom = max(abs(grad[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(grad[i] - numeric) / denom)
    return worst
