"""Polynomial delay maps, zero-mean Gaussian-mixture noise and trajectory simulation.

A map of lag ``d`` acts on the window ``(x[i-1], ..., x[i-d])``. Initial
conditions are stored newest-first, ``(x[0], x[-1], ..., x[1-d])``, so that the
first window of a trajectory is exactly its initial block.
"""
from __future__ import annotations

import functools
import itertools
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

DEFAULT_GUARD = 1e3
DEFAULT_MAX_RETRIES = 100


class SimulationError(RuntimeError):
    """No bounded (or on-target) realization within the retry budget."""


def monomial_basis(lag: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """Exponent vectors of all monomials of total degree <= ``degree``.

    Ordered by total degree; within a degree, monomials with the smaller
    largest exponent come first (cross terms before pure powers) and ties go
    to the earlier lag. For lag 2, degree 2 this gives
    ``1, x1, x2, x1*x2, x1**2, x2**2``.
    """
    if lag < 1 or degree < 0:
        raise ValueError("lag must be >= 1 and degree >= 0")
    exps = [e for e in itertools.product(range(degree + 1), repeat=lag) if sum(e) <= degree]
    exps.sort(key=lambda e: (sum(e), max(e), tuple(-k for k in e)))
    return tuple(exps)


@functools.lru_cache(maxsize=64)
def _exponent_array(basis, lag):
    arr = np.array(basis, dtype=np.int64).reshape(len(basis), lag)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PolynomialMap:
    lag: int
    degree: int
    coefficients: np.ndarray
    basis: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self):
        basis = self.basis or monomial_basis(self.lag, self.degree)
        basis = tuple(tuple(int(k) for k in e) for e in basis)
        if len(set(basis)) != len(basis):
            raise ValueError("basis entries must be distinct")
        if any(len(e) != self.lag for e in basis):
            raise ValueError("basis exponent vectors must have length lag")
        coef = np.asarray(self.coefficients, dtype=float).reshape(-1)
        if coef.size != len(basis):
            raise ValueError(f"expected {len(basis)} coefficients, got {coef.size}")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "coefficients", coef)

    @property
    def exponents(self) -> np.ndarray:
        return _exponent_array(self.basis, self.lag)

    @property
    def n_coef(self) -> int:
        return len(self.basis)

    def with_coefficients(self, coefficients) -> "PolynomialMap":
        return PolynomialMap(self.lag, self.degree, np.asarray(coefficients, float), self.basis)

    @classmethod
    def zeros(cls, lag: int, degree: int) -> "PolynomialMap":
        return cls(lag, degree, np.zeros(len(monomial_basis(lag, degree))))


def henon_map(a: float = 1.38, b: float = 0.27) -> PolynomialMap:
    """x[i] = a - x[i-1]**2 + b*x[i-2] in the full-quadratic lag-2 basis."""
    return PolynomialMap(2, 2, np.array([a, 0.0, b, 0.0, -1.0, 0.0]))


def cubic_map(theta: float = 2.55, degree: int = 5) -> PolynomialMap:
    """Bistable x[i] = 0.05 + theta*x[i-1] - 0.99*x[i-1]**3, embedded in a degree-``degree`` basis."""
    coef = np.zeros(degree + 1)
    coef[:4] = [0.05, theta, 0.0, -0.99]
    return PolynomialMap(1, degree, coef)


def eval_basis(pmap: PolynomialMap, window) -> np.ndarray:
    """Monomials of ``pmap.basis`` at one window, or row-wise at an ``(n, lag)`` array."""
    w = np.asarray(window, dtype=float)
    if w.shape[-1] != pmap.lag:
        raise ValueError(f"window length {w.shape[-1]} does not match lag {pmap.lag}")
    exps = pmap.exponents
    powers = w[..., :, None] ** np.arange(int(exps.max()) + 1)
    out = powers[..., 0, exps[:, 0]]
    for k in range(1, pmap.lag):
        out = out * powers[..., k, exps[:, k]]
    return out


def eval_map(pmap: PolynomialMap, window) -> np.ndarray | float:
    out = eval_basis(pmap, window) @ pmap.coefficients
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class MixtureNoise:
    weights: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        v = np.atleast_1d(np.asarray(self.variances, dtype=float))
        if w.shape != v.shape or w.ndim != 1 or w.size == 0:
            raise ValueError("weights and variances must be non-empty vectors of equal length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be a probability vector")
        if np.any(v <= 0):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "variances", v)

    @property
    def variance(self) -> float:
        return float(self.weights @ self.variances)

    @property
    def sd(self) -> float:
        return float(np.sqrt(self.variance))

    def pdf(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)[..., None]
        v = self.variances
        return np.sum(self.weights * np.exp(-0.5 * z**2 / v) / np.sqrt(2 * np.pi * v), axis=-1)

    def describe(self) -> str:
        parts = ", ".join(f"{w:g}*N(0,{v:g})" for w, v in zip(self.weights, self.variances))
        return f"mixture[{parts}]"


def gaussian_noise(variance: float) -> MixtureNoise:
    return MixtureNoise(np.array([1.0]), np.array([variance]))


def two_scale_noise(level: int, variance: float) -> MixtureNoise:
    """(5+l)/10 N(0, s2) + (5-l)/10 N(0, 100 s2) for l = 1..4."""
    if not 1 <= level <= 4:
        raise ValueError("level must be in 1..4")
    return MixtureNoise(np.array([(5 + level) / 10, (5 - level) / 10]),
                        np.array([variance, 100 * variance]))


def sample_noise(noise: MixtureNoise, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 0:
        raise ValueError("count must be non-negative")
    comp = rng.choice(noise.weights.size, size=count, p=noise.weights)
    return rng.standard_normal(count) * np.sqrt(noise.variances[comp])


@dataclass
class Trajectory:
    values: np.ndarray
    initial: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(-1)
        self.initial = np.asarray(self.initial, dtype=float).reshape(-1)
        if self.initial.size < 1:
            raise ValueError("initial block must hold at least one value")

    @property
    def lag(self) -> int:
        return self.initial.size

    @property
    def n(self) -> int:
        return self.values.size

    def windows(self) -> np.ndarray:
        return lagged_windows(self.values, self.initial)

    def with_values(self, values) -> "Trajectory":
        return Trajectory(np.asarray(values, float), self.initial.copy(), dict(self.meta))


def lagged_windows(values, initial) -> np.ndarray:
    """``(n, d)`` array whose row ``i`` is ``(x[i-1], ..., x[i-d])`` for ``i = 1..n``."""
    values = np.asarray(values, dtype=float)
    initial = np.asarray(initial, dtype=float)
    d, n = initial.size, values.size
    full = np.concatenate([initial[::-1], values])
    return np.stack([full[d - 1 - k: d - 1 - k + n] for k in range(d)], axis=1)


def residuals(pmap: PolynomialMap, values, initial) -> np.ndarray:
    """One-step residuals ``x[i] - g(x[i-1..i-d])``."""
    return np.asarray(values, float) - eval_basis(pmap, lagged_windows(values, initial)) @ pmap.coefficients


def _iterate(pmap, initial, noise_draws, guard):
    d = pmap.lag
    exps = pmap.exponents
    coef = pmap.coefficients
    window = np.array(initial, dtype=float)
    out = np.empty(noise_draws.size)
    for i, e in enumerate(noise_draws):
        x = float(coef @ np.prod(window ** exps, axis=1)) + e
        if not abs(x) <= guard:
            return None
        out[i] = x
        if d > 1:
            window[1:] = window[:-1]
        window[0] = x
    return out


def simulate(pmap: PolynomialMap, noise: MixtureNoise, n: int, initial, rng: np.random.Generator,
             guard: float = DEFAULT_GUARD, target_eta: Optional[tuple[float, float]] = None,
             max_retries: int = DEFAULT_MAX_RETRIES) -> Trajectory:
    """Iterate ``x[i] = g(x[i-1..i-d]) + e[i]``.

    Realizations leaving ``[-guard, guard]`` are discarded and redrawn. With
    ``target_eta=(eta, tol)`` realizations are also redrawn until the noise
    level ``100 * sd(noise) / sd(x)`` lies in ``[eta - tol, eta + tol]``.
    """
    initial = np.asarray(initial, dtype=float).reshape(-1)
    if initial.size != pmap.lag:
        raise ValueError(f"initial block has length {initial.size}, map lag is {pmap.lag}")
    if guard <= 0:
        raise ValueError("guard must be positive")
    escapes = misses = 0
    eta = None
    for _ in range(max_retries + 1):
        values = _iterate(pmap, initial, sample_noise(noise, n, rng), guard)
        if values is None:
            escapes += 1
            continue
        if n >= 2 and np.std(values, ddof=1) > 0:
            eta = 100.0 * noise.sd / float(np.std(values, ddof=1))
        if target_eta is not None:
            centre, tol = target_eta
            if eta is None or abs(eta - centre) > tol:
                misses += 1
                continue
        meta = {"map": {"lag": pmap.lag, "degree": pmap.degree,
                        "coefficients": pmap.coefficients.tolist()},
                "noise": {"weights": noise.weights.tolist(), "variances": noise.variances.tolist()},
                "eta": eta, "escapes": escapes, "eta_rejections": misses}
        return Trajectory(values, initial.copy(), meta)
    raise SimulationError(
        f"no bounded realization at this noise level after {max_retries + 1} attempts "
        f"({escapes} escapes, {misses} off-target noise levels)")
