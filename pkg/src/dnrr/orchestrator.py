"""Blocked Gibbs driver: reconstruction group given x, then (tau, y) given the reconstruction."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import gsbr, replicator
from .dynamics import DEFAULT_GUARD, PolynomialMap, Trajectory
from .io import read_matrix_csv, write_matrix_csv

log = logging.getLogger(__name__)


class ChainError(RuntimeError):
    pass


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 250_000
    burn_in: int = 50_000
    thin: int = 10
    seed: int = 0
    rho: float = 1e2
    priors: gsbr.Priors = field(default_factory=gsbr.Priors)
    adaptation_window: int = 100
    nu0: float = 1e-3
    init_step: float = 0.05
    guard: float = DEFAULT_GUARD
    store_y: bool = True

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1 or self.adaptation_window < 1:
            raise ValueError("thin and adaptation_window must be >= 1")
        if not (self.rho > 0 and self.nu0 > 0 and self.init_step > 0):
            raise ValueError("rho, nu0 and init_step must be positive")

    @property
    def n_stored(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def to_dict(self) -> dict:
        out = asdict(self)
        out["priors"] = {k: list(v) for k, v in asdict(self.priors).items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ChainConfig":
        data = dict(data)
        if "priors" in data and not isinstance(data["priors"], gsbr.Priors):
            data["priors"] = gsbr.Priors(**{k: tuple(v) for k, v in data["priors"].items()})
        return cls(**data)


DESK_CONFIG = ChainConfig(iterations=30_000, burn_in=10_000)


@dataclass(frozen=True)
class PosteriorChain:
    theta_draws: np.ndarray
    tau_draws: np.ndarray
    p_draws: np.ndarray
    noise_predictive_draws: np.ndarray
    initial_draws: np.ndarray
    y_draws: Optional[np.ndarray]
    nstar_trace: np.ndarray
    active_trace: np.ndarray
    site_acceptance: np.ndarray
    acceptance_rate: float
    nu: float
    config: ChainConfig
    info: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.tau_draws.size

    @property
    def delta_draws(self) -> np.ndarray:
        return 1.0 / self.tau_draws

    def theta_mean(self) -> np.ndarray:
        return self.theta_draws.mean(axis=0)

    def initial_mean(self) -> np.ndarray:
        return self.initial_draws.mean(axis=0)


def run_chain(x: Trajectory, model: PolynomialMap, config: ChainConfig) -> PosteriorChain:
    """Run the blocked sampler on ``x`` under the polynomial model space of ``model``.

    Per sweep: levels, allocations, precisions, initial block, theta, p,
    predictive noise draw (reconstruction group, reads x only), then the y
    sweep and tau (reads the reconstruction group, never writes it).
    """
    if x.lag != model.lag:
        raise ValueError(f"trajectory lag {x.lag} does not match model lag {model.lag}")
    rng = np.random.default_rng(config.seed)
    priors = config.priors
    n, m, d = x.n, model.n_coef, model.lag

    rec = gsbr.initial_state(x, model)
    g1, g2 = priors.tau_shape_rate
    rep = replicator.ReplicaState(y=x.values, y_initial=rec.initial, tau=g1 / g2,
                                  rho=config.rho, nu=config.nu0)
    info = {"init_theta": rec.theta.tolist(), "init_tau": rep.tau, "init_p": rec.p,
            "init_lambda": rec.lambdas.tolist()}

    k = config.n_stored
    theta_draws = np.empty((k, m))
    tau_draws = np.empty(k)
    p_draws = np.empty(k)
    z_draws = np.empty(k)
    init_draws = np.empty((k, d))
    y_draws = np.empty((k, n)) if config.store_y else None
    nstar = np.empty(k, dtype=np.int64)
    active = np.empty(k, dtype=np.int64)

    window_acc = np.zeros(n, dtype=np.int64)
    site_acc = np.zeros(n, dtype=np.int64)
    window_len = 0
    nu_history = []
    s = 0
    for t in range(1, config.iterations + 1):
        z = gsbr.reconstruction_sweep(rec, x, model, priors, rng, config.init_step)

        g = model.with_coefficients(rec.theta)
        rep.y_initial = rec.initial.copy()
        burning = t <= config.burn_in
        replicator.mh_sweep(rep, g, x, rng, config.guard, window_acc if burning else site_acc)
        replicator.update_tau(rep, g, priors.tau_shape_rate, rng)

        if burning:
            window_len += 1
            if window_len == config.adaptation_window:
                rate = window_acc.sum() / (window_len * max(n, 1))
                rep.nu = replicator.adapt_nu(rep.nu, rate)
                nu_history.append(rep.nu)
                window_acc[:] = 0
                window_len = 0
            continue
        if (t - config.burn_in) % config.thin == 0:
            theta_draws[s] = rec.theta
            tau_draws[s] = rep.tau
            p_draws[s] = rec.p
            z_draws[s] = z
            init_draws[s] = rec.initial
            nstar[s] = rec.nstar
            active[s] = np.unique(rec.allocations).size
            if y_draws is not None:
                y_draws[s] = rep.y
            s += 1

    post = config.iterations - config.burn_in
    site_rate = site_acc / post
    rate = float(site_rate.mean()) if n else 0.0
    if n and rate == 0.0:
        raise ChainError("no y proposal accepted after burn-in; the y-chain is stuck at the guard")
    info["nu_history"] = nu_history[-20:]
    info["initial_acceptance"] = rec.initial_accepted / max(rec.initial_proposed, 1)
    return PosteriorChain(theta_draws, tau_draws, p_draws, z_draws, init_draws, y_draws, nstar,
                          active, site_rate, rate, rep.nu, config, info)


@dataclass
class ReplicateResult:
    rho: float
    seed: int
    chain: Optional[PosteriorChain]
    error: Optional[str] = None


def _run_one(args):
    x, model, config = args
    try:
        return ReplicateResult(config.rho, config.seed, run_chain(x, model, config))
    except Exception as exc:  # isolate per-chain failures
        log.warning("chain rho=%g seed=%d failed: %s", config.rho, config.seed, exc)
        return ReplicateResult(config.rho, config.seed, None, f"{type(exc).__name__}: {exc}")


def run_replicated(x: Trajectory, model: PolynomialMap, configs, jobs: int = 1) -> list[ReplicateResult]:
    """Independent chains on the same data, one per config, in input order."""
    tasks = [(x, model, c) for c in configs]
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_one(a) for a in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks))


def rho_grid_configs(base: ChainConfig, rhos) -> list[ChainConfig]:
    return [replace(base, rho=float(r)) for r in rhos]


@dataclass(frozen=True)
class ReconstructionDraws:
    theta_draws: np.ndarray
    noise_predictive_draws: np.ndarray
    p_draws: np.ndarray

    def theta_mean(self) -> np.ndarray:
        return self.theta_draws.mean(axis=0)


def run_reconstruction(z: Trajectory, model: PolynomialMap, config: ChainConfig) -> ReconstructionDraws:
    """Reconstruction group only (no y, no tau) on a fixed series, e.g. a noise-reduced one."""
    if z.lag != model.lag:
        raise ValueError(f"trajectory lag {z.lag} does not match model lag {model.lag}")
    rng = np.random.default_rng(config.seed)
    rec = gsbr.initial_state(z, model)
    k = config.n_stored
    theta = np.empty((k, model.n_coef))
    zp = np.empty(k)
    p = np.empty(k)
    s = 0
    for t in range(1, config.iterations + 1):
        draw = gsbr.reconstruction_sweep(rec, z, model, config.priors, rng, config.init_step)
        if t > config.burn_in and (t - config.burn_in) % config.thin == 0:
            theta[s], zp[s], p[s] = rec.theta, draw, rec.p
            s += 1
    return ReconstructionDraws(theta, zp, p)


# persistence ---------------------------------------------------------------

def save_chain(chain: PosteriorChain, directory, extra: Optional[dict] = None) -> Path:
    """Columnar CSVs plus ``manifest.json`` with config, seed and a content hash."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    m = chain.theta_draws.shape[1]
    d = chain.initial_draws.shape[1]
    files = {
        "theta.csv": (chain.theta_draws, [f"theta_{k}" for k in range(m)]),
        "initial.csv": (chain.initial_draws, [f"x_init_{k}" for k in range(d)]),
        "scalars.csv": (np.column_stack([chain.tau_draws, chain.delta_draws, chain.p_draws,
                                         chain.noise_predictive_draws, chain.nstar_trace,
                                         chain.active_trace]),
                        ["tau", "delta", "p", "z_pred", "nstar", "active"]),
        "acceptance.csv": (chain.site_acceptance[:, None], ["acceptance"]),
    }
    if chain.y_draws is not None:
        files["y_draws.csv"] = (chain.y_draws, [f"y_{k}" for k in range(chain.y_draws.shape[1])])
    digest = hashlib.sha256()
    for name, (arr, header) in sorted(files.items()):
        write_matrix_csv(out / name, arr, header)
        digest.update(name.encode())
        digest.update((out / name).read_bytes())
    manifest = {
        "config": chain.config.to_dict(),
        "seed": chain.config.seed,
        "n_draws": chain.n_draws,
        "acceptance_rate": chain.acceptance_rate,
        "nu": chain.nu,
        "info": chain.info,
        "files": sorted(files),
        "content_sha256": digest.hexdigest(),
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out


def load_chain(directory) -> PosteriorChain:
    src = Path(directory)
    manifest_path = src / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no chain found in {src} (missing manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    for name in manifest["files"]:
        if not (src / name).exists():
            raise FileNotFoundError(f"chain file missing: {src / name}")
    theta, _ = read_matrix_csv(src / "theta.csv")
    init, _ = read_matrix_csv(src / "initial.csv")
    scal, _ = read_matrix_csv(src / "scalars.csv")
    acc, _ = read_matrix_csv(src / "acceptance.csv")
    y = read_matrix_csv(src / "y_draws.csv")[0] if (src / "y_draws.csv").exists() else None
    cfg = ChainConfig.from_dict(manifest["config"])
    k = manifest["n_draws"]
    theta = theta.reshape(k, -1)
    init = init.reshape(k, -1)
    scal = scal.reshape(k, 6)
    if y is not None:
        y = y.reshape(k, -1)
    return PosteriorChain(theta, scal[:, 0], scal[:, 2], scal[:, 3], init, y,
                          scal[:, 4].astype(np.int64), scal[:, 5].astype(np.int64),
                          acc.reshape(-1), manifest["acceptance_rate"], manifest["nu"], cfg,
                          manifest.get("info", {}))
