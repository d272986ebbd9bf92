"""Synthetic datasets shared by the unit and acceptance tests."""
import numpy as np

from dropirls import from_dense


def planted_overfit(seed, n_train=100, n_test=2000, dim=100, relevant=5, density=0.3):
    """Few examples, many irrelevant sparse nonnegative features, noisy labels."""
    rng = np.random.default_rng(seed)
    w = np.zeros(dim)
    w[:relevant] = rng.choice([-1.0, 1.0], relevant)

    def draw(n):
        X = rng.exponential(1.0, (n, dim)) * (rng.random((n, dim)) < density)
        y = np.where(X @ w + 0.3 * rng.normal(size=n) > 0, 1.0, -1.0)
        return from_dense(X, y)

    return draw(n_train), draw(n_test)


def linear_regression(seed, n_train=200, n_test=1000, dim=20, outlier_rate=0.0, outlier_size=20.0):
    """y = Xw + small noise; optional sparse large outliers in training responses."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=dim)

    def draw(n, corrupt):
        X = rng.normal(size=(n, dim))
        y = X @ w + 0.1 * rng.normal(size=n)
        if corrupt:
            hit = rng.random(n) < outlier_rate
            y[hit] += rng.choice([-1.0, 1.0], hit.sum()) * outlier_size
        return from_dense(X, y, "regression")

    return draw(n_train, True), draw(n_test, False)


def blobs(seed, n=200, dim=2, spread=1.0):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(2.0, spread, (n // 2, dim)), rng.normal(-2.0, spread, (n - n // 2, dim))])
    y = np.r_[np.ones(n // 2), -np.ones(n - n // 2)]
    return from_dense(X, y)


XOR_X = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
XOR_Y = np.array([-1.0, 1.0, 1.0, -1.0])


def xor():
    return from_dense(XOR_X, XOR_Y)


def r2(pred, truth):
    return 1.0 - np.sum((truth - pred) ** 2) / np.sum((truth - truth.mean()) ** 2)
