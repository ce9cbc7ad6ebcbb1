"""Independent reference computations used by the tests (no package internals)."""
import numpy as np
from scipy.optimize import linprog


def lp_dip(sample) -> float:
    """Dip by brute force: for every mode knot, a linear program over unimodal piecewise-linear CDFs.

    Knots are the distinct sample points; the CDF may jump at the mode.
    """
    x = np.sort(np.asarray(sample, float))
    u, counts = np.unique(x, return_counts=True)
    if u.size == 1:
        return 0.0
    F = np.cumsum(counts) / x.size
    Fl = np.r_[0, F[:-1]]
    K = u.size
    h = np.diff(u)
    best = np.inf
    for mode in range(K):
        nv = K + 2
        Li, ti = K, K + 1

        def left(i):
            return Li if i == mode else i

        A, b = [], []

        def add(coefs, rhs):
            r = np.zeros(nv)
            for k, v in coefs:
                r[k] += v
            A.append(r)
            b.append(rhs)

        for i in range(K):
            add([(left(i), 1), (ti, -1)], Fl[i])
            add([(left(i), -1), (ti, -1)], -Fl[i])
            add([(i, 1), (ti, -1)], F[i])
            add([(i, -1), (ti, -1)], -F[i])
        add([(Li, 1), (mode, -1)], 0)
        for i in range(K - 1):
            add([(i, 1), (left(i + 1), -1)], 0)
        for i in range(1, K - 1):
            s_in = [(left(i), 1 / h[i - 1]), (i - 1, -1 / h[i - 1])]
            s_out = [(left(i + 1), 1 / h[i]), (i, -1 / h[i])]
            if i < mode:
                add(s_in + [(k, -v) for k, v in s_out], 0)
            elif i > mode:
                add(s_out + [(k, -v) for k, v in s_in], 0)
        c = np.zeros(nv)
        c[ti] = 1
        res = linprog(c, A_ub=np.array(A), b_ub=np.array(b), bounds=[(0, 1)] * nv, method="highs")
        if res.status == 0:
            best = min(best, res.fun)
    return float(best)


def wls_solve(phi, x, w):
    """Normal equations solved directly (no factorization shared with the package)."""
    W = np.diag(w)
    return np.linalg.solve(phi.T @ W @ phi, phi.T @ W @ x)


def monomials(window, basis):
    return np.array([np.prod([v ** e for v, e in zip(window, exps)]) for exps in basis])


def joint_log_density(*, x, initial, theta, basis, p, lambdas, alloc, levels, priors,
                      y=None, tau=None, rho=None):
    """Unnormalized log of the augmented posterior, written out term by term.

    ``alloc`` and ``levels`` are 1-based. Returns -inf off the support d_i <= N_i.
    """
    x = np.asarray(x, float)
    d = len(initial)
    full = np.r_[np.asarray(initial, float)[::-1], x]
    r = np.array([x[i] - theta @ monomials(full[i:i + d][::-1], basis) for i in range(x.size)])
    if np.any(np.asarray(alloc) > np.asarray(levels)) or p <= 0 or p >= 1 or np.any(lambdas <= 0):
        return -np.inf
    a1, a2 = priors.p_shape
    b1, b2 = priors.lambda_shape_rate
    out = (a1 - 1) * np.log(p) + (a2 - 1) * np.log1p(-p)
    out += np.sum((b1 - 1) * np.log(lambdas) - b2 * lambdas)
    for i in range(x.size):
        lam = lambdas[alloc[i] - 1]
        out += 2 * np.log(p) + (levels[i] - 1) * np.log1p(-p) + 0.5 * np.log(lam) - 0.5 * lam * r[i] ** 2
    if y is not None:
        g1, g2 = priors.tau_shape_rate
        fy = np.r_[np.asarray(initial, float)[::-1], np.asarray(y, float)]
        ry = np.array([y[i] - theta @ monomials(fy[i:i + d][::-1], basis) for i in range(len(y))])
        out += (g1 - 1 + 0.5 * len(y)) * np.log(tau) - g2 * tau - 0.5 * tau * np.sum(ry ** 2)
        out += -0.5 * rho * np.sum((x - np.asarray(y)) ** 2)
    return float(out)


def total_variation(p, q) -> float:
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def binned_tv(draws, log_density, bins: int = 30, grid_points: int = 6001) -> float:
    """TV between the draw histogram and the grid-normalized density over the same bins.

    Bin edges split the empirical 0.05%..99.95% range evenly, plus two open tail
    bins; the density is normalized by trapezoid quadrature on a grid reaching
    well past the draws (clipped at ``support_lo``).
    """
    draws = np.asarray(draws, float)
    lo, hi = np.quantile(draws, [0.0005, 0.9995])
    span = hi - lo
    inner = np.linspace(lo, hi, bins + 1)
    a, b = getattr(log_density, "support", (-np.inf, np.inf))
    grid = np.linspace(max(lo - 2 * span, a), min(hi + 2 * span, b), grid_points)
    logf = np.array([log_density(v) for v in grid])
    f = np.exp(logf - np.max(logf))
    cdf = np.concatenate([[0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    edges = np.interp(inner, grid, cdf)
    q = np.r_[edges[0], np.diff(edges), 1 - edges[-1]]
    counts = np.histogram(draws, bins=np.r_[-np.inf, inner, np.inf])[0]
    return total_variation(counts / draws.size, q)
