"""Reconstruction stage: Gibbs updates for the map and the geometric-weights noise mixture.

Given the observed series only, these updates sample the geometric
probability ``p``, the component precisions, the allocation and truncation
variables, the map coefficients and the unknown initial block. Allocation
and level indices are 1-based (``1 <= allocations[i] <= levels[i]``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .dynamics import PolynomialMap, Trajectory, eval_basis, lagged_windows

# smallest/largest precision kept; prior draws with shape 1e-3 underflow to 0
LAMBDA_FLOOR = 1e-300
LAMBDA_CEIL = 1e300


class RankDeficiencyError(np.linalg.LinAlgError):
    """The weighted design matrix of the map coefficients is singular."""


@dataclass(frozen=True)
class Priors:
    p_shape: tuple[float, float] = (0.5, 0.5)
    lambda_shape_rate: tuple[float, float] = (1e-3, 1e-3)
    tau_shape_rate: tuple[float, float] = (1e4, 1e-2)

    def __post_init__(self):
        for name in ("p_shape", "lambda_shape_rate", "tau_shape_rate"):
            a, b = getattr(self, name)
            if not (a > 0 and b > 0):
                raise ValueError(f"{name} entries must be strictly positive")
            object.__setattr__(self, name, (float(a), float(b)))


@dataclass
class ReconState:
    p: float
    lambdas: np.ndarray
    allocations: np.ndarray
    levels: np.ndarray
    theta: np.ndarray
    initial: np.ndarray
    initial_accepted: int = field(default=0, repr=False)
    initial_proposed: int = field(default=0, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def nstar(self) -> int:
        return int(self.levels.max()) if self.levels.size else 1

    def design(self, x: Trajectory, pmap: PolynomialMap) -> np.ndarray:
        """Basis evaluated at every window of ``x`` under the current initial block."""
        key = (id(x), x.n, pmap.basis)
        if self._cache.get("key") != key:
            self._cache.clear()
            self._cache["key"] = key
            self._cache["phi"] = eval_basis(pmap, lagged_windows(x.values, self.initial))
            self._cache["initial"] = self.initial.tobytes()
        elif self._cache["initial"] != self.initial.tobytes():
            # only the first d windows reach into the initial block
            d = self.initial.size
            phi = self._cache["phi"].copy()
            phi[:d] = eval_basis(pmap, lagged_windows(x.values[:d], self.initial))
            self._cache["phi"] = phi
            self._cache["initial"] = self.initial.tobytes()
        return self._cache["phi"]

    def residuals(self, x: Trajectory, pmap: PolynomialMap) -> np.ndarray:
        return x.values - self.design(x, pmap) @ self.theta

    def copy(self) -> "ReconState":
        return ReconState(self.p, self.lambdas.copy(), self.allocations.copy(), self.levels.copy(),
                          self.theta.copy(), self.initial.copy(),
                          self.initial_accepted, self.initial_proposed)


def geometric_weights(p: float, count: int) -> np.ndarray:
    return p * (1.0 - p) ** np.arange(count)


def _gamma(shape, rate, rng):
    return np.clip(rng.gamma(shape, 1.0 / np.asarray(rate)), LAMBDA_FLOOR, LAMBDA_CEIL)


def wls_fit(x: Trajectory, pmap: PolynomialMap, weights=None, initial=None) -> np.ndarray:
    """Weighted least-squares coefficients of ``pmap``'s basis on ``x``."""
    init = x.initial if initial is None else initial
    phi = eval_basis(pmap, lagged_windows(x.values, init))
    w = np.ones(x.n) if weights is None else np.asarray(weights, float)
    sw = np.sqrt(w)
    coef, _, rank, _ = np.linalg.lstsq(phi * sw[:, None], x.values * sw, rcond=None)
    if rank < pmap.n_coef:
        raise RankDeficiencyError(f"design matrix has rank {rank} < {pmap.n_coef}")
    return coef


def initial_state(x: Trajectory, pmap: PolynomialMap, groups: int = 3) -> ReconState:
    """Unit-weight least-squares map and ``p = 0.5``.

    Sites are split into ``groups`` components by the rank of their absolute
    least-squares residual (smallest residuals in component 1), each component
    starting at its own empirical precision. Starting from a single component
    is nearly absorbing: a fresh component drawn from a vague precision prior
    almost never attracts data.
    """
    theta = wls_fit(x, pmap)
    r = x.values - eval_basis(pmap, x.windows()) @ theta
    groups = max(1, min(groups, x.n))
    order = np.argsort(np.abs(r), kind="stable")
    alloc = np.empty(x.n, dtype=np.int64)
    alloc[order] = np.minimum(np.arange(x.n) * groups // max(x.n, 1), groups - 1) + 1
    lam = np.empty(groups)
    for j in range(groups):
        ms = float(np.mean(r[alloc == j + 1] ** 2)) if np.any(alloc == j + 1) else 0.0
        lam[j] = 1.0 / ms if ms > 0 else 1.0
    lam = np.clip(lam, LAMBDA_FLOOR, LAMBDA_CEIL)
    return ReconState(p=0.5, lambdas=lam, allocations=alloc, levels=alloc.copy(), theta=theta,
                      initial=x.initial.copy())


def ensure_lambdas(state: ReconState, priors: Priors, rng: np.random.Generator) -> np.ndarray:
    """Extend the precision list with prior draws up to ``N*`` entries."""
    missing = state.nstar - state.lambdas.size
    if missing > 0:
        b1, b2 = priors.lambda_shape_rate
        state.lambdas = np.concatenate([state.lambdas, _gamma(b1, np.full(missing, b2), rng)])
    return state.lambdas


def update_levels(state: ReconState, rng: np.random.Generator) -> np.ndarray:
    """N_i = d_i + G_i with G_i geometric on {0, 1, ...} of success probability p."""
    extra = rng.geometric(state.p, size=state.allocations.size) - 1
    state.levels = state.allocations + extra
    return state.levels


def update_allocations(state: ReconState, x: Trajectory, pmap: PolynomialMap, priors: Priors,
                       rng: np.random.Generator) -> np.ndarray:
    """d_i over {1..N_i} with mass proportional to sqrt(lam_j) exp(-lam_j r_i^2 / 2)."""
    lam = ensure_lambdas(state, priors, rng)[: state.nstar]
    r2 = state.residuals(x, pmap) ** 2
    logw = 0.5 * np.log(lam)[None, :] - 0.5 * lam[None, :] * r2[:, None]
    logw[np.arange(lam.size)[None, :] >= state.levels[:, None]] = -np.inf
    # Gumbel-max: exact categorical draw from unnormalized log-weights
    g = rng.gumbel(size=logw.shape)
    state.allocations = np.argmax(logw + g, axis=1).astype(np.int64) + 1
    return state.allocations


def update_lambdas(state: ReconState, x: Trajectory, pmap: PolynomialMap, priors: Priors,
                   rng: np.random.Generator) -> np.ndarray:
    """Conjugate gamma draw for lam_1..lam_{N*}; empty components come from the prior."""
    nstar = state.nstar
    b1, b2 = priors.lambda_shape_rate
    r2 = state.residuals(x, pmap) ** 2
    idx = state.allocations - 1
    counts = np.bincount(idx, minlength=nstar)[:nstar]
    ss = np.bincount(idx, weights=r2, minlength=nstar)[:nstar]
    state.lambdas = _gamma(b1 + 0.5 * counts, b2 + 0.5 * ss, rng)
    return state.lambdas


def update_p(state: ReconState, priors: Priors, rng: np.random.Generator) -> float:
    a1, a2 = priors.p_shape
    n = state.levels.size
    state.p = float(rng.beta(a1 + 2 * n, a2 + float(np.sum(state.levels - 1))))
    return state.p


def theta_conditional(state: ReconState, x: Trajectory, pmap: PolynomialMap):
    """Mean and Cholesky factor (lower) of the precision of the Gaussian theta conditional."""
    phi = state.design(x, pmap)
    w = state.lambdas[state.allocations - 1]
    a = (phi * w[:, None]).T @ phi
    b = phi.T @ (w * x.values)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("theta precision matrix is not positive definite "
                                  "(degenerate design, e.g. constant trajectory)") from exc
    diag = np.diag(chol)
    if diag.min() <= 1e-7 * diag.max():
        raise RankDeficiencyError("theta precision matrix is numerically singular")
    mean = linalg.cho_solve((chol, True), b)
    return mean, chol


def update_theta(state: ReconState, x: Trajectory, pmap: PolynomialMap,
                 rng: np.random.Generator) -> np.ndarray:
    mean, chol = theta_conditional(state, x, pmap)
    z = rng.standard_normal(mean.size)
    state.theta = mean + linalg.solve_triangular(chol.T, z, lower=False)
    return state.theta


def _initial_log_target(initial, state, x, pmap):
    d = initial.size
    head = x.values[:d]
    r = head - eval_basis(pmap, lagged_windows(head, initial)) @ state.theta
    lam = state.lambdas[state.allocations[:d] - 1]
    return -0.5 * float(np.sum(lam * r**2))


def update_initial(state: ReconState, x: Trajectory, pmap: PolynomialMap, rng: np.random.Generator,
                   step: float = 0.05) -> np.ndarray:
    """Random-walk Metropolis, one coordinate of the initial block at a time.

    Only the first ``d`` residuals of the observed series involve the initial
    block; the flat prior contributes nothing.
    """
    cur = state.initial.copy()
    logp = _initial_log_target(cur, state, x, pmap)
    for k in range(cur.size):
        prop = cur.copy()
        prop[k] += step * rng.standard_normal()
        logq = _initial_log_target(prop, state, x, pmap)
        state.initial_proposed += 1
        if np.log(rng.uniform()) < logq - logp:
            cur, logp = prop, logq
            state.initial_accepted += 1
    state.initial = cur
    return state.initial


def predictive_weights(p: float, nstar: int) -> np.ndarray:
    """Geometric weights up to ``N*`` with the leftover tail mass lumped into the last."""
    w = geometric_weights(p, nstar)
    w[-1] += (1.0 - p) ** nstar
    return w


def sample_noise_predictive(state: ReconState, rng: np.random.Generator) -> float:
    lam = state.lambdas[: state.nstar]
    w = predictive_weights(state.p, lam.size)
    j = rng.choice(lam.size, p=w / w.sum())
    return float(rng.standard_normal() / np.sqrt(lam[j]))


def reconstruction_sweep(state: ReconState, x: Trajectory, pmap: PolynomialMap, priors: Priors,
                         rng: np.random.Generator, init_step: float = 0.05) -> float:
    """One pass over the reconstruction group, returning the predictive noise draw."""
    update_levels(state, rng)
    update_allocations(state, x, pmap, priors, rng)
    update_lambdas(state, x, pmap, priors, rng)
    update_initial(state, x, pmap, rng, init_step)
    update_theta(state, x, pmap, rng)
    update_p(state, priors, rng)
    return sample_noise_predictive(state, rng)
