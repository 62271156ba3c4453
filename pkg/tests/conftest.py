import numpy as np
import pytest

from mirrorselect.estimation import Dataset


def gauss_solve(a, b):
    """Independent linear solver: plain Gaussian elimination with pivoting."""
    a = np.array(a, dtype=float)
    b = np.array(b, dtype=float)
    k = a.shape[0]
    for col in range(k):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        if abs(a[piv, col]) < 1e-14:
            raise ZeroDivisionError("singular system")
        if piv != col:
            a[[col, piv]] = a[[piv, col]]
            b[[col, piv]] = b[[piv, col]]
        for row in range(col + 1, k):
            f = a[row, col] / a[col, col]
            a[row, col:] -= f * a[col, col:]
            b[row] -= f * b[col]
    x = np.zeros(k)
    for col in range(k - 1, -1, -1):
        x[col] = (b[col] - a[col, col + 1 :] @ x[col + 1 :]) / a[col, col]
    return x


def ols_oracle(design, y):
    """Normal-equation solution via the elimination oracle."""
    return gauss_solve(design.T @ design, design.T @ y)


def make_gaussian_data(n=120, p=4, tau=0.8, beta=None, alpha=None, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    alpha = np.zeros(p) if alpha is None else np.asarray(alpha, float)
    beta = np.zeros(p) if beta is None else np.asarray(beta, float)
    a = (rng.random(n) < 1.0 / (1.0 + np.exp(-(x @ alpha)))).astype(float)
    y = tau * a + x @ beta + rng.standard_normal(n)
    return Dataset(y=y, a=a, x=x, family="gaussian")


def make_binomial_data(n=200, p=4, tau=0.5, beta=None, alpha=None, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    alpha = np.zeros(p) if alpha is None else np.asarray(alpha, float)
    beta = np.zeros(p) if beta is None else np.asarray(beta, float)
    a = (rng.random(n) < 1.0 / (1.0 + np.exp(-(x @ alpha)))).astype(float)
    eta = tau * a + x @ beta
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-eta))).astype(float)
    return Dataset(y=y, a=a, x=x, family="binomial")


@pytest.fixture
def toy_csv(tmp_path):
    rng = np.random.default_rng(7)
    n = 250
    x = rng.standard_normal((n, 4))
    a = (rng.random(n) < 1.0 / (1.0 + np.exp(-0.8 * x[:, 0]))).astype(int)
    y = 0.6 * a + 0.9 * x[:, 0] + 0.5 * x[:, 1] + rng.standard_normal(n)
    path = tmp_path / "toy.csv"
    header = "y,a,x1,x2,x3,x4"
    rows = [",".join(f"{v:.10g}" for v in [y[i], a[i], *x[i]]) for i in range(n)]
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path
