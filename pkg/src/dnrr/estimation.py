"""Point estimates and diagnostics from posterior draws.

Per-site estimates of the shadow trajectory use the sample mean unless the
Hartigan dip test rejects unimodality, in which case the KDE mode is used.
"""
from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass

import numba
import numpy as np
from scipy import optimize, signal

ALPHA = 0.05
CALIBRATION_DRAWS = 1000
CALIBRATION_SEED = 20_240_917
KDE_GRID = 512


# dip statistic ---------------------------------------------------------------

@numba.njit(cache=True)
def _dip_sorted(x):
    """Dip of the empirical distribution of sorted ``x`` (Hartigan & Hartigan, AS 217)."""
    n = x.size
    if n < 2 or x[0] == x[n - 1]:
        return 0.0
    # mn / mj: predecessors on the convex minorant / successors on the concave majorant
    mn = np.zeros(n, dtype=np.int64)
    for j in range(1, n):
        mn[j] = j - 1
        while True:
            a = mn[j]
            b = mn[a]
            if a == 0 or (x[j] - x[a]) * (a - b) < (x[a] - x[b]) * (j - a):
                break
            mn[j] = b
    mj = np.zeros(n, dtype=np.int64)
    mj[n - 1] = n - 1
    for k in range(n - 2, -1, -1):
        mj[k] = k + 1
        while True:
            a = mj[k]
            b = mj[a]
            if a == n - 1 or (x[k] - x[a]) * (a - b) < (x[a] - x[b]) * (k - a):
                break
            mj[k] = b

    gcm = np.zeros(n + 1, dtype=np.int64)
    lcm = np.zeros(n + 1, dtype=np.int64)
    low, high = 0, n - 1
    dip = 1.0
    while True:
        gcm[0] = high
        i = 0
        while gcm[i] > low:
            gcm[i + 1] = mn[gcm[i]]
            i += 1
        l_gcm = i
        ig = l_gcm
        ix = ig - 1

        lcm[0] = low
        i = 0
        while lcm[i] < high:
            lcm[i + 1] = mj[lcm[i]]
            i += 1
        l_lcm = i
        ih = l_lcm
        iv = 1

        d = 0.0
        if l_gcm != 1 or l_lcm != 1:
            while True:
                gx = gcm[ix]
                lv = lcm[iv]
                if gx > lv:
                    gl = gcm[ix + 1]
                    dx = (lv - gl + 1) - (x[lv] - x[gl]) * (gx - gl) / (x[gx] - x[gl])
                    iv += 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv - 1
                else:
                    lp = lcm[iv - 1]
                    dx = (x[gx] - x[lp]) * (lv - lp) / (x[lv] - x[lp]) - (gx - lp - 1)
                    ix -= 1
                    if dx >= d:
                        d = dx
                        ig = ix + 1
                        ih = iv
                if ix < 0:
                    ix = 0
                if iv > l_lcm:
                    iv = l_lcm
                if gcm[ix] == lcm[iv]:
                    break
        if d < dip:
            break

        dip_l = 0.0
        for j in range(ig, l_gcm):
            best = 1.0
            jb = gcm[j + 1]
            je = gcm[j]
            if je - jb > 1 and x[je] != x[jb]:
                c = (je - jb) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    t = (jj - jb + 1) - (x[jj] - x[jb]) * c
                    if t > best:
                        best = t
            if best > dip_l:
                dip_l = best
        dip_u = 0.0
        for j in range(ih, l_lcm):
            best = 1.0
            jb = lcm[j]
            je = lcm[j + 1]
            if je - jb > 1 and x[je] != x[jb]:
                c = (je - jb) / (x[je] - x[jb])
                for jj in range(jb, je + 1):
                    t = (x[jj] - x[jb]) * c - (jj - jb - 1)
                    if t > best:
                        best = t
            if best > dip_u:
                dip_u = best
        new = max(dip_l, dip_u)
        if new > dip:
            dip = new
        if low == gcm[ig] and high == lcm[ih]:
            break
        low = gcm[ig]
        high = lcm[ih]
    return dip / (2.0 * n)


def dip_statistic(sample) -> float:
    """Largest distance between the empirical CDF and its closest unimodal CDF."""
    x = np.sort(np.asarray(sample, dtype=float))
    return float(_dip_sorted(x))


@functools.lru_cache(maxsize=32)
def _null_dips(size: int, draws: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, size])
    return np.sort([_dip_sorted(np.sort(rng.uniform(size=size))) for _ in range(draws)])


def dip_test(sample, calibration_draws: int = CALIBRATION_DRAWS, rng=None):
    """Dip statistic and Monte Carlo p-value against uniform samples of the same size.

    Without ``rng`` the uniform reference draws come from a fixed seed and are
    cached per sample size, so repeated tests share one null distribution.
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 4:
        raise ValueError("dip test needs at least 4 observations")
    dip = dip_statistic(x)
    if rng is None:
        null = _null_dips(x.size, calibration_draws, CALIBRATION_SEED)
    else:
        null = np.array([_dip_sorted(np.sort(rng.uniform(size=x.size)))
                         for _ in range(calibration_draws)])
    exceed = int(np.sum(null >= dip - 1e-12))
    return dip, (1 + exceed) / (1 + calibration_draws)


# kernel density ----------------------------------------------------------------

def silverman_bandwidth(sample) -> float:
    """0.9 * min(sd, IQR/1.34) * n**(-1/5); zero for a point mass."""
    x = np.asarray(sample, dtype=float)
    n = x.size
    sd = float(np.std(x, ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * n ** (-0.2)


def kde(sample, grid, bandwidth: float | None = None, chunk: int = 2048) -> np.ndarray:
    """Gaussian kernel density estimate of ``sample`` evaluated at ``grid``."""
    x = np.asarray(sample, dtype=float)
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    h = silverman_bandwidth(x) if bandwidth is None else bandwidth
    if h <= 0:
        raise ValueError("bandwidth is zero (degenerate sample)")
    out = np.zeros(grid.size)
    for s in range(0, x.size, chunk):
        u = (grid[:, None] - x[None, s:s + chunk]) / h
        out += np.exp(-0.5 * u * u).sum(axis=1)
    return out / (x.size * h * math.sqrt(2 * math.pi))


def map_estimate(sample, grid_size: int = KDE_GRID) -> float:
    """Mode of the Silverman-bandwidth Gaussian KDE.

    Grid search over the sample range, then bounded Brent refinement (golden-section
    steps with parabolic interpolation) between the neighbours of the best grid point.
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    h = silverman_bandwidth(x)
    if h <= 0:
        # point mass, or >75% of the draws tied: the tie value is the mode
        vals, counts = np.unique(x, return_counts=True)
        return float(vals[np.argmax(counts)])
    grid = np.linspace(x.min(), x.max(), grid_size)
    dens = kde(x, grid, h)
    k = int(np.argmax(dens))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid_size - 1)]
    res = optimize.minimize_scalar(lambda v: -kde(x, [v], h)[0], bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-10 * max(1.0, abs(grid[k]))})
    best = float(res.x)
    return best if -res.fun >= dens[k] else float(grid[k])


def hpd_interval(sample, mass: float = 0.95):
    """Shortest interval holding ``ceil(mass * n)`` of the sorted draws (first one on ties)."""
    x = np.sort(np.asarray(sample, dtype=float))
    if not 0 < mass < 1:
        raise ValueError("mass must lie in (0, 1)")
    if x.size < 20:
        raise ValueError("HPD interval needs at least 20 draws")
    k = int(math.ceil(mass * x.size))
    widths = x[k - 1:] - x[: x.size - k + 1]
    i = int(np.argmin(widths))
    return float(x[i]), float(x[i + k - 1])


# forecastability -----------------------------------------------------------

def forecastability(sample, segments: int = 8) -> float:
    """Spectral-entropy forecastability in [0, 1]: 0 for white noise, 1 for a pure tone.

    The spectrum is Bartlett's averaged periodogram (non-overlapping,
    rectangular, mean-removed segments), normalized over its positive
    frequencies; the index is ``1 - H / log(m)`` for ``m`` positive frequencies.
    A constant input has a zero-entropy spectrum by convention (index 1).
    """
    x = np.asarray(sample, dtype=float)
    if x.size < 64:
        raise ValueError("forecastability needs at least 64 observations")
    if np.ptp(x) == 0:
        return 1.0
    nperseg = max(32, x.size // segments)
    _, pxx = signal.welch(x, window="boxcar", nperseg=nperseg, noverlap=0, detrend="constant",
                          scaling="spectrum")
    pxx = pxx[1:]
    total = pxx.sum()
    if total <= 0:
        return 1.0
    s = pxx / total
    nz = s > 0
    h = -float(np.sum(s[nz] * np.log(s[nz])))
    return float(np.clip(1.0 - h / math.log(s.size), 0.0, 1.0))


# per-site selection -------------------------------------------------------

@dataclass
class MarginalSummary:
    site: int
    mean: float
    map_estimate: float
    dip_statistic: float
    dip_pvalue: float
    multimodal: bool
    omega: float
    chosen: float

    def to_dict(self) -> dict:
        return asdict(self)


def choose_estimate(mean: float, mode: float, pvalue: float, alpha: float = ALPHA) -> float:
    return mode if pvalue < alpha else mean


def select_estimates(chain, alpha: float = ALPHA, calibration_draws: int = CALIBRATION_DRAWS):
    """Per-site point estimates of ``y`` and the two multimodality site sets.

    Returns ``(y_point, summaries, m_ht, omega_ht)``: ``m_ht`` are sites whose
    draws reject unimodality; ``omega_ht`` the ``ceil(0.01 n)`` sites with the
    largest forecastability index (above its 99th percentile).
    """
    draws = chain.y_draws if hasattr(chain, "y_draws") else np.asarray(chain)
    if draws is None:
        raise ValueError("chain holds no y draws")
    draws = np.asarray(draws, dtype=float)
    k, n = draws.shape
    means = draws.mean(axis=0)
    summaries, point = [], np.empty(n)
    for j in range(n):
        col = draws[:, j]
        dip, pval = dip_test(col, calibration_draws) if k >= 4 else (0.0, 1.0)
        multimodal = pval < alpha
        mode = map_estimate(col) if multimodal else float(means[j])
        omega = forecastability(col) if k >= 64 else float("nan")
        chosen = choose_estimate(float(means[j]), mode, pval, alpha)
        point[j] = chosen
        summaries.append(MarginalSummary(j, float(means[j]), mode, dip, pval, multimodal, omega,
                                         chosen))
    m_ht = np.array([s.site for s in summaries if s.multimodal], dtype=np.int64)
    omegas = np.array([s.omega for s in summaries])
    omega_ht = top_percentile_sites(omegas, 0.99)
    return point, summaries, m_ht, omega_ht


def top_percentile_sites(values, q: float = 0.99) -> np.ndarray:
    """Indices of the ``ceil((1 - q) n)`` largest finite values, ascending by index."""
    v = np.asarray(values, dtype=float)
    finite = np.flatnonzero(np.isfinite(v))
    if finite.size == 0:
        return np.array([], dtype=np.int64)
    count = int(math.ceil(round((1 - q) * finite.size, 9)))
    order = finite[np.argsort(-v[finite], kind="stable")]
    return np.sort(order[:count])


def noise_density_estimate(chain, grid) -> np.ndarray:
    """KDE of the predictive noise draws on ``grid``."""
    draws = getattr(chain, "noise_predictive_draws", chain)
    draws = np.asarray(draws, dtype=float)
    if draws.size == 0:
        raise ValueError("no predictive noise draws")
    return kde(draws, grid)


def density_grid(draws, points: int = 2 * KDE_GRID, pad: float = 4.0) -> np.ndarray:
    """Grid over the full range of the draws padded by ``pad`` bandwidths."""
    d = np.asarray(draws, float)
    h = silverman_bandwidth(d)
    return np.linspace(d.min() - pad * h, d.max() + pad * h, points)
