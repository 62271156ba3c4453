"""Coordinate-descent lasso engine with per-coordinate penalty factors.

Solves, for a fixed weight vector ``w`` and standardized columns ``X``,

    (1/2n) sum_i w_i (z_i - b0 - x_i . beta)^2 + lam * sum_j pf_j |beta_j|

with an explicit unpenalized intercept (``pf_j = 0`` marks further
unpenalized coordinates, e.g. a treatment column). Binomial fits wrap the
same kernel in an outer reweighting loop on the working response. All
solvers report the worst Karush-Kuhn-Tucker residual actually achieved, in
gradient units on the standardized scale.
"""

import numba
import numpy as np

# sweep budget per call; active-set passes are cheap so this is generous
MAX_SWEEPS = 20_000


@numba.njit(cache=True, nogil=True)
def _sweeps_active(X, XW, w, r, coef, b0, thr, col_ss, idxs, tol, max_sweeps):
    """Gauss-Seidel passes over ``idxs`` until the at-visit stationarity
    residual (per-n gradient units) of every visited coordinate is below
    ``tol``; each visit solves its coordinate exactly, so the residual is
    measured just before the update."""
    n = X.shape[0]
    sum_w = 0.0
    for i in range(n):
        sum_w += w[i]
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        maxv = 0.0
        # intercept first: keeps sum_i w_i r_i = 0 within the pass
        s = 0.0
        for i in range(n):
            s += w[i] * r[i]
        if abs(s) / n > maxv:
            maxv = abs(s) / n
        db = s / sum_w
        if db != 0.0:
            b0 += db
            for i in range(n):
                r[i] -= db
        for k in range(idxs.shape[0]):
            j = idxs[k]
            ssj = col_ss[j]
            if ssj <= 0.0:
                continue
            g = 0.0
            for i in range(n):
                g += XW[i, j] * r[i]
            t = thr[j]
            cj = coef[j]
            if cj != 0.0:
                v = abs(g - t * (1.0 if cj > 0 else -1.0)) / n
            else:
                v = (abs(g) - t) / n
            if v > maxv:
                maxv = v
            rho = g + cj * ssj
            if rho > t:
                new = (rho - t) / ssj
            elif rho < -t:
                new = (rho + t) / ssj
            else:
                new = 0.0
            d = new - cj
            if d != 0.0:
                coef[j] = new
                for i in range(n):
                    r[i] -= d * X[i, j]
        if maxv < tol:
            break
    return b0, sweeps


@numba.njit(cache=True, nogil=True)
def _grad_all(XW, r):
    n, m = XW.shape
    g = np.zeros(m)
    for j in range(m):
        s = 0.0
        for i in range(n):
            s += XW[i, j] * r[i]
        g[j] = s
    return g


def _kkt_violations(grad, coef, thr, n):
    """Per-coordinate KKT residual in (1/n)-gradient units."""
    viol = np.abs(grad) - thr
    np.maximum(viol, 0.0, out=viol)
    active = coef != 0
    viol[active] = np.abs(grad[active] - thr[active] * np.sign(coef[active]))
    return viol / n


def _exact_active_solve(X, w, z, thr, coef, b0):
    """Solve the stationarity system on the current nonzero support.

    With the sign pattern fixed, the lasso optimum solves a linear system
    in (intercept, active coefficients); this jumps straight to it, which
    rescues coordinate descent from its slow zigzag on ill-conditioned
    (e.g. interpolating) supports. Returns None when the solved signs
    contradict the assumed pattern.
    """
    nz = np.flatnonzero(coef)
    s = np.sign(coef[nz])
    design = np.column_stack([np.ones(X.shape[0]), X[:, nz]])
    wd = design if np.all(w == 1.0) else design * w[:, None]
    gram = wd.T @ design
    rhs = wd.T @ z - np.r_[0.0, thr[nz] * s]
    try:
        sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    beta = sol[1:]
    if np.any(np.sign(beta) * s < 0):
        return None
    out = np.zeros_like(coef)
    out[nz] = beta
    return float(sol[0]), out


def cd_solve(X, z, w, thr, coef, b0, kkt_tol=5e-7, max_sweeps=MAX_SWEEPS):
    """Run active-set coordinate descent to KKT stationarity.

    ``coef`` is used as a warm start and not modified; returns
    ``(coef, b0, kkt, sweeps)`` where ``kkt`` is the achieved residual.
    """
    n, m = X.shape
    coef = coef.copy()
    XW = X if np.all(w == 1.0) else X * w[:, None]
    col_ss = np.einsum("ij,ij->j", X, XW)
    r = z - b0 - X @ coef
    active = (coef != 0) | (thr <= 0.0)
    inner_tol = max(kkt_tol * 0.9, 1e-12)
    sweeps_left = max_sweeps
    kkt = np.inf
    solves_left = 3
    while sweeps_left > 0:
        idxs = np.flatnonzero(active)
        chunk = min(sweeps_left, 100)
        b0, used = _sweeps_active(X, XW, w, r, coef, b0, thr, col_ss, idxs, inner_tol, chunk)
        sweeps_left -= used
        grad = _grad_all(XW, r)
        viol = _kkt_violations(grad, coef, thr, n)
        kkt = max(float(viol.max()) if m else 0.0, abs(float(w @ r)) / n)
        if kkt <= kkt_tol:
            break
        grown = active | (viol > kkt_tol)
        if grown.sum() > active.sum():
            active = grown
            continue
        if used == chunk and solves_left > 0 and coef.any():
            # the pass stalled on a fixed support: jump to its exact optimum
            solves_left -= 1
            solved = _exact_active_solve(X, w, z, thr, coef, b0)
            if solved is not None:
                b0, coef = solved
                r = z - b0 - X @ coef
                continue
        inner_tol /= 4.0
    return coef, b0, kkt, max_sweeps - sweeps_left


def gaussian_base_fit(y, w, unpen_cols):
    """Weighted least squares on the unpenalized block (intercept + extras)."""
    n = y.shape[0]
    design = np.column_stack([np.ones(n)] + [c for c in unpen_cols])
    wd = design * w[:, None]
    beta = np.linalg.lstsq(wd.T @ design, wd.T @ y, rcond=None)[0]
    return beta[0], beta[1:], y - design @ beta


def lambda_max(X, resid, w, pf):
    """Smallest penalty that zeroes every penalized coordinate."""
    grad = np.abs((X * w[:, None]).T @ resid)
    pen = pf > 0
    if not pen.any():
        return 1.0
    n = X.shape[0]
    return float(np.max(grad[pen] / (n * pf[pen])))


def lambda_grid(lam_max, n_lambdas=100, min_ratio=1e-3):
    """Descending geometric grid from ``lam_max`` to ``min_ratio * lam_max``."""
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambdas)


def gaussian_path(X, y, pf, lambdas, kkt_tol=5e-7):
    """Lasso path for squared error; returns (coefs, b0s, max KKT residual)."""
    n, m = X.shape
    w = np.ones(n)
    unpen = np.flatnonzero(pf == 0)
    b0, extra, _ = gaussian_base_fit(y, w, [X[:, j] for j in unpen])
    coef = np.zeros(m)
    coef[unpen] = extra
    coefs = np.zeros((len(lambdas), m))
    b0s = np.zeros(len(lambdas))
    worst = 0.0
    for li, lam in enumerate(lambdas):
        thr = n * lam * pf
        coef, b0, kkt, _ = cd_solve(X, y, w, thr, coef, b0, kkt_tol)
        coefs[li] = coef
        b0s[li] = b0
        worst = max(worst, kkt)
    return coefs, b0s, worst


def _expit(eta):
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    ex = np.exp(eta[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def binomial_deviance(y, mu):
    mu = np.clip(mu, 1e-12, 1 - 1e-12)
    return -2.0 * float(np.sum(y * np.log(mu) + (1 - y) * np.log(1 - mu)))


_COEF_CAP = 30.0  # standardized scale; beyond this the fit is treated as separated


def logistic_cd(X, y, pf, lam, coef0, b00, kkt_tol=5e-7, max_outer=100):
    """Penalized logistic fit by outer reweighting around the CD kernel.

    Returns ``(coef, b0, kkt, saturated)``; ``kkt`` is measured on the true
    logistic gradient, and ``saturated`` flags runaway coefficients.
    """
    n, m = X.shape
    coef, b0 = coef0.copy(), float(b00)
    thr = n * lam * pf

    def objective(c, dev):
        # glmnet-style penalized objective: deviance/(2n) + lam * sum pf|c|
        return dev / (2 * n) + lam * float(pf @ np.abs(c))

    dev = binomial_deviance(y, _expit(b0 + X @ coef))
    obj = objective(coef, dev)
    kkt = np.inf
    saturated = False
    for _ in range(max_outer):
        eta = b0 + X @ coef
        mu = _expit(eta)
        wv = np.clip(mu * (1 - mu), 1e-5, None)
        z = eta + (y - mu) / wv
        new_coef, new_b0, _, _ = cd_solve(X, z, wv, thr, coef, b0, kkt_tol / 4)
        if np.max(np.abs(new_coef)) > _COEF_CAP:
            saturated = True
            coef, b0 = new_coef, new_b0
            break
        new_dev = binomial_deviance(y, _expit(new_b0 + X @ new_coef))
        new_obj = objective(new_coef, new_dev)
        # step-halving toward the previous iterate if the penalized objective worsens
        halvings = 0
        while new_obj > obj + 1e-12 and halvings < 12:
            new_coef = 0.5 * (new_coef + coef)
            new_b0 = 0.5 * (new_b0 + b0)
            new_dev = binomial_deviance(y, _expit(new_b0 + X @ new_coef))
            new_obj = objective(new_coef, new_dev)
            halvings += 1
        coef, b0 = new_coef, new_b0
        mu = _expit(b0 + X @ coef)
        grad = X.T @ (y - mu)
        viol = _kkt_violations(grad, coef, thr, n)
        viol = np.append(viol, abs(np.sum(y - mu)) / n)
        kkt = float(viol.max())
        if kkt <= kkt_tol:
            break
        obj = new_obj
    return coef, b0, kkt, saturated


def logistic_path(X, y, pf, lambdas, kkt_tol=5e-7):
    """Penalized logistic path; returns (coefs, b0s, max KKT, any saturation)."""
    n, m = X.shape
    unpen = np.flatnonzero(pf == 0)
    coef = np.zeros(m)
    b0, extra, _, _ = logistic_base_fit(y, [X[:, j] for j in unpen])
    coef[unpen] = extra
    coefs = np.zeros((len(lambdas), m))
    b0s = np.zeros(len(lambdas))
    worst = 0.0
    any_sat = False
    for li, lam in enumerate(lambdas):
        coef, b0, kkt, sat = logistic_cd(X, y, pf, lam, coef, b0, kkt_tol)
        coefs[li] = coef
        b0s[li] = b0
        any_sat = any_sat or sat
        if not sat:
            worst = max(worst, kkt)
    return coefs, b0s, worst, any_sat


def logistic_base_fit(y, unpen_cols, max_iter=50):
    """Unpenalized logistic fit on intercept + extra columns via Newton."""
    n = y.shape[0]
    design = np.column_stack([np.ones(n)] + [c for c in unpen_cols])
    beta = np.zeros(design.shape[1])
    dev = np.inf
    for _ in range(max_iter):
        eta = design @ beta
        mu = _expit(eta)
        wv = np.clip(mu * (1 - mu), 1e-10, None)
        z = eta + (y - mu) / wv
        wd = design * wv[:, None]
        beta_new = np.linalg.lstsq(wd.T @ design, wd.T @ z, rcond=None)[0]
        new_dev = binomial_deviance(y, _expit(design @ beta_new))
        if not np.isfinite(new_dev):
            break
        beta = beta_new
        if abs(dev - new_dev) < 1e-10:
            dev = new_dev
            break
        dev = new_dev
    resid = y - _expit(design @ beta)
    return beta[0], beta[1:], resid, _expit(design @ beta)
