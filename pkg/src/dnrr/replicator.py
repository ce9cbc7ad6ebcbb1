"""Noise-reduction stage: Metropolis-within-Gibbs sampling of the shadow trajectory ``y``.

Site ``j`` (0-based, i.e. ``y[j]`` is the (j+1)-th point) has the local cost

    C(y_j) = tau * sum_{i=j}^{min(j+d, n-1)} (y_i - g(y_{i-1}, ..., y_{i-d}))**2
             + rho * (y_j - x_j)**2

where windows reaching before ``y[0]`` read the pinned initial block, which
always equals the current initial block of the observed series. The target is
``exp(-C / 2)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .dynamics import DEFAULT_GUARD, PolynomialMap, Trajectory, residuals

ACCEPT_LOW, ACCEPT_HIGH = 0.25, 0.35
NU_FACTOR = 1.1


@dataclass
class ReplicaState:
    y: np.ndarray
    y_initial: np.ndarray
    tau: float
    rho: float
    nu: float

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).copy()
        self.y_initial = np.asarray(self.y_initial, dtype=float).copy()
        if not (self.tau > 0 and self.rho > 0 and self.nu > 0):
            raise ValueError("tau, rho and nu must be strictly positive")


def proximity_probability(x, y, rho: float) -> float:
    """P(|x_i - y_i| < gamma_i for all i) when gamma_i**2 ~ Exponential(rate rho/2)."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    return float(np.exp(-0.5 * rho * np.sum((x - y) ** 2)))


def proximity_probability_box(x, y, half_widths) -> float:
    """Deterministic-radius variant: 1 if every ``|x_i - y_i| < gamma_i`` else 0."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape:
        raise ValueError("x and y must have equal length")
    return float(np.all(np.abs(x - y) < np.asarray(half_widths, float)))


def cost(j: int, y_candidate: float, state: ReplicaState, pmap: PolynomialMap,
         x: Trajectory) -> float:
    """Local cost of putting ``y_candidate`` at site ``j`` with every other site held fixed."""
    n, d = state.y.size, pmap.lag
    if not 0 <= j < n:
        raise IndexError(f"site {j} out of range for n={n}")
    y = state.y.copy()
    y[j] = y_candidate
    hi = min(j + d, n - 1)
    # residuals of terms j..hi only need y up to hi
    r = residuals(pmap, y[: hi + 1], state.y_initial)[j:]
    return float(state.tau * np.sum(r**2) + state.rho * (y_candidate - x.values[j]) ** 2)


@numba.njit(cache=True)
def _g(z, t, coef, exps):
    # g at the window (z[t-1], ..., z[t-d])
    out = 0.0
    for m in range(coef.size):
        term = coef[m]
        for k in range(exps.shape[1]):
            e = exps[m, k]
            if e:
                v = z[t - 1 - k]
                p = v
                for _ in range(e - 1):
                    p *= v
                term *= p
        out += term
    return out


@numba.njit(cache=True)
def _local_cost(z, t, last, xj, coef, exps, tau, rho, d):
    s = 0.0
    stop = min(t + d, last)
    for i in range(t, stop + 1):
        r = z[i] - _g(z, i, coef, exps)
        s += r * r
    dx = z[t] - xj
    return tau * s + rho * dx * dx


@numba.njit(cache=True)
def _mh_sweep(z, x, coef, exps, tau, rho, nu, guard, normals, uniforms, accepted):
    d = exps.shape[1]
    last = z.size - 1
    n = x.size
    total = 0
    for j in range(n):
        t = j + d
        cur = z[t]
        prop = cur + nu * normals[j]
        if not abs(prop) <= guard:
            continue
        c_old = _local_cost(z, t, last, x[j], coef, exps, tau, rho, d)
        z[t] = prop
        c_new = _local_cost(z, t, last, x[j], coef, exps, tau, rho, d)
        if c_new <= c_old or np.log(uniforms[j]) < -0.5 * (c_new - c_old):
            accepted[j] += 1
            total += 1
        else:
            z[t] = cur
    return total


def mh_sweep(state: ReplicaState, pmap: PolynomialMap, x: Trajectory, rng: np.random.Generator,
             guard: float = DEFAULT_GUARD, accepted: np.ndarray | None = None) -> np.ndarray:
    """One ascending sweep of single-site random-walk Metropolis updates over ``y``.

    ``accepted`` (length n, int) is incremented in place per accepted site.
    """
    n = state.y.size
    normals = rng.standard_normal(n)
    uniforms = rng.uniform(size=n)
    z = np.concatenate([state.y_initial[::-1], state.y])
    if accepted is None:
        accepted = np.zeros(n, dtype=np.int64)
    _mh_sweep(z, x.values, pmap.coefficients, pmap.exponents, float(state.tau), float(state.rho),
              float(state.nu), float(guard), normals, uniforms, accepted)
    state.y = z[pmap.lag:].copy()
    return state.y


@numba.njit(cache=True)
def _residual_ss(z, d, coef, exps):
    s = 0.0
    for t in range(d, z.size):
        r = z[t] - _g(z, t, coef, exps)
        s += r * r
    return s


def update_tau(state: ReplicaState, pmap: PolynomialMap, tau_shape_rate: tuple[float, float],
               rng: np.random.Generator) -> float:
    """Conjugate gamma draw: shape g1 + n/2, rate g2 + sum of squared y-residuals / 2."""
    g1, g2 = tau_shape_rate
    n = state.y.size
    z = np.concatenate([state.y_initial[::-1], state.y])
    ss = _residual_ss(z, pmap.lag, pmap.coefficients, pmap.exponents) if n else 0.0
    state.tau = float(rng.gamma(g1 + 0.5 * n, 1.0 / (g2 + 0.5 * ss)))
    return state.tau


def adapt_nu(nu: float, rate: float, low: float = ACCEPT_LOW, high: float = ACCEPT_HIGH,
             factor: float = NU_FACTOR) -> float:
    """Multiplicative step-size correction toward the acceptance band [low, high]."""
    if rate > high:
        return nu * factor
    if rate < low:
        return nu / factor
    return nu
