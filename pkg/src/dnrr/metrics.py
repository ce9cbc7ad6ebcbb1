"""Scalar measures comparing trajectories, maps and noise processes."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dynamics import MixtureNoise, PolynomialMap, Trajectory, residuals

LOG10_FLOOR = -16.0
ZERO_EPS = 1e-12


def avg_correction(x, y) -> float:
    """Root-mean-square distance between two equal-length series."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.shape != y.shape:
        raise ValueError("series must have equal length")
    if x.size == 0:
        raise ValueError("series must be non-empty")
    return float(np.sqrt(np.mean((x - y) ** 2)))


def avg_dynamical_error(z: Trajectory, pmap: PolynomialMap) -> float:
    """Root-mean-square one-step residual of ``z`` against ``pmap``, using ``z``'s initial block."""
    if z.initial.size != pmap.lag:
        raise ValueError(f"trajectory needs an initial block of length {pmap.lag}")
    if z.n == 0:
        raise ValueError("empty trajectory")
    return float(np.sqrt(np.mean(residuals(pmap, z.values, z.initial) ** 2)))


def relative_reduction(edyn_y: float, edyn_x: float) -> float:
    if edyn_x == 0:
        raise ZeroDivisionError("dynamical error of the reference series is zero")
    return 1.0 - edyn_y / edyn_x


def noise_level(noise_sd, series) -> float:
    """Noise level in percent of the series' sample standard deviation.

    ``noise_sd`` may be a number or a :class:`MixtureNoise`.
    """
    if isinstance(noise_sd, MixtureNoise):
        noise_sd = noise_sd.sd
    series = np.asarray(series, float)
    sd = float(np.std(series, ddof=1)) if series.size > 1 else 0.0
    if sd == 0:
        raise ValueError("series is constant; noise level undefined")
    return 100.0 * float(noise_sd) / sd


def tail_flatness(noise: MixtureNoise) -> float:
    """E|Z| / sd(Z) for a zero-mean Gaussian mixture, in closed form."""
    return float(np.sqrt(2 / np.pi) * (noise.weights @ np.sqrt(noise.variances)) / noise.sd)


def pare(theta_hat, theta_true, zero_eps: float = ZERO_EPS):
    """Percentage absolute relative errors, their mean and the l2 distance.

    Where the true coefficient is (numerically) zero the entry is 100 times
    the absolute error instead; the returned mask flags those entries.
    """
    th, tt = np.asarray(theta_hat, float), np.asarray(theta_true, float)
    if th.shape != tt.shape:
        raise ValueError("coefficient vectors must have equal length")
    err = np.abs(th - tt)
    zero = np.abs(tt) <= zero_eps
    per = 100.0 * np.where(zero, err, err / np.where(zero, 1.0, np.abs(tt)))
    return per, float(per.mean()), float(np.linalg.norm(th - tt)), zero


def indeterminism_trace(z: Trajectory, pmap: PolynomialMap, floor: float = LOG10_FLOOR) -> np.ndarray:
    """Per-site log10 absolute one-step residual; exact zeros map to ``floor``."""
    r = np.abs(residuals(pmap, z.values, z.initial))
    out = np.full(r.shape, floor)
    nz = r > 0
    out[nz] = np.maximum(np.log10(r[nz]), floor)
    return out


@dataclass
class NoiseReductionReport:
    e0: float
    edyn_x: float
    edyn_y: float
    rdyn: float
    eta: float | None
    pare_x: list | None
    pare_y: list | None
    pare_mean_x: float | None
    pare_mean_y: float | None
    l2_x: float | None
    l2_y: float | None
    indeterminism_trace_x: list
    indeterminism_trace_y: list

    def to_dict(self, traces: bool = True) -> dict:
        out = asdict(self)
        if not traces:
            out.pop("indeterminism_trace_x")
            out.pop("indeterminism_trace_y")
        return out


def noise_reduction_report(x: Trajectory, y: Trajectory, g_hat: PolynomialMap,
                           theta_true=None, theta_hat_y=None, noise_sd=None) -> NoiseReductionReport:
    """Compare observed ``x`` and noise-reduced ``y`` under the estimated map ``g_hat``."""
    edyn_x = avg_dynamical_error(x, g_hat)
    edyn_y = avg_dynamical_error(y, g_hat)
    pare_x = pare_y = None
    pmx = pmy = l2x = l2y = None
    if theta_true is not None:
        pare_x, pmx, l2x, _ = pare(g_hat.coefficients, theta_true)
        pare_x = pare_x.tolist()
        if theta_hat_y is not None:
            pare_y, pmy, l2y, _ = pare(theta_hat_y, theta_true)
            pare_y = pare_y.tolist()
    eta = noise_level(noise_sd, x.values) if noise_sd is not None else None
    return NoiseReductionReport(
        e0=avg_correction(x.values, y.values), edyn_x=edyn_x, edyn_y=edyn_y,
        rdyn=relative_reduction(edyn_y, edyn_x), eta=eta,
        pare_x=pare_x, pare_y=pare_y, pare_mean_x=pmx, pare_mean_y=pmy, l2_x=l2x, l2_y=l2y,
        indeterminism_trace_x=indeterminism_trace(x, g_hat).tolist(),
        indeterminism_trace_y=indeterminism_trace(y, g_hat).tolist())
