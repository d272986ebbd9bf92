"""Independent numerical oracles: GIG quadrature, Polya-Gamma mean, reference solvers."""
import numpy as np
from scipy import integrate


def gig_inverse_mean(c, second_moment):
    """E[1/lambda] for lambda ~ GIG(1/2, 1, c^2 s), by quadrature in log-space."""
    root_b = c * np.sqrt(second_moment)
    upper = np.arccosh(1.0 + 750.0 / root_b)

    # lambda = root_b * e^u ; common factors cancel in the ratio
    def weight(u):
        return np.exp(-root_b * (np.cosh(u) - 1.0))

    num, _ = integrate.quad(lambda u: weight(u) * np.exp(-0.5 * u), -upper, upper, points=[0.0],
                            epsabs=0, epsrel=1e-12, limit=400)
    den, _ = integrate.quad(lambda u: weight(u) * np.exp(0.5 * u), -upper, upper, points=[0.0],
                            epsabs=0, epsrel=1e-12, limit=400)
    return num / den / root_b


def pg_mean(b, z, terms=20000):
    """Mean of PG(b, z) from its representation as an infinite weighted sum of gammas."""
    k = np.arange(1, terms + 1)
    a = z / (2.0 * np.pi)
    head = np.sum(1.0 / ((k - 0.5) ** 2 + a * a))
    # integral tail of the remaining terms (midpoint rule on a smooth decreasing summand)
    tail = (np.pi / 2 - np.arctan(terms / a)) / a if a > 0 else 1.0 / terms
    return b / (2.0 * np.pi**2) * (head + tail)


def pg_sample(b, z, size, rng, terms=200):
    """Truncated-sum Polya-Gamma sampler with a mean-matching remainder."""
    k = np.arange(1, terms + 1)
    denom = (k - 0.5) ** 2 + z * z / (4.0 * np.pi**2)
    g = rng.gamma(b, 1.0, size=(size, terms))
    draws = (g / denom).sum(axis=1) / (2.0 * np.pi**2)
    return draws + pg_mean(b, z) - b / (2.0 * np.pi**2) * np.sum(1.0 / denom)


def subgradient_svm(X, y, c, iters=200_000, seed=0):
    """min ||w||^2 + 2c sum max(0, 1 - y(w'x + b)) by normalized subgradient descent.

    Returns the best iterate seen.
    """
    N, D = X.shape
    Xa = np.hstack([X, np.ones((N, 1))])
    w = np.zeros(D + 1)
    reg = np.r_[np.ones(D), 0.0]

    def obj(v):
        return v[:D] @ v[:D] + 2 * c * np.maximum(0.0, 1.0 - y * (Xa @ v)).sum()

    best, best_f = w.copy(), obj(w)
    for k in range(1, iters + 1):
        active = 1.0 - y * (Xa @ w) > 0
        g = 2 * reg * w - 2 * c * (Xa[active] * y[active, None]).sum(axis=0)
        w = w - 0.5 / np.sqrt(k) * g / max(1.0, np.linalg.norm(g))
        f = obj(w)
        if f < best_f:
            best, best_f = w.copy(), f
    return best[:D], best[D], best_f


def gradient_logistic(X, y, c, iters=20_000):
    """min ||w||^2 + c sum log(1 + exp(-y(w'x + b))) by fixed-step gradient descent."""
    N, D = X.shape
    Xa = np.hstack([X, np.ones((N, 1))])
    reg = np.r_[np.ones(D), 0.0]
    L = 2.0 + c * 0.25 * np.linalg.norm(Xa, 2) ** 2
    w = np.zeros(D + 1)
    for _ in range(iters):
        m = y * (Xa @ w)
        g = 2 * reg * w - c * Xa.T @ (y / (1.0 + np.exp(m)))
        w -= g / L
    f = w[:D] @ w[:D] + c * np.logaddexp(0.0, -y * (Xa @ w)).sum()
    return w[:D], w[D], f


def expected_ridge(X, target, var, a):
    """argmin ||w||^2 + a sum_n E[(w'x~_n + b - t_n)^2] in closed form (b unpenalized).

    ``var`` holds the per-entry corruption variances of X.
    """
    N, D = X.shape
    Xa = np.hstack([X, np.ones((N, 1))])
    A = Xa.T @ Xa + np.diag(np.r_[var.sum(axis=0), 0.0])
    reg = np.diag(np.r_[np.ones(D), 0.0])
    sol = np.linalg.solve(reg + a * A, a * Xa.T @ target)
    return sol[:D], sol[D]
