"""Experiment configs, named presets and the simulate / denoise / sweep / report pipelines.

A config is a nested mapping (YAML on disk)::

    map:    {kind: henon, a: 1.38, b: 0.27}        # or cubic / polynomial
    model:  {lag: 2, degree: 2}                    # model space used for inference
    noise:  {kind: two_scale, level: 1, variance: 0.21e-4}
    n: 1000
    initial: [0.5, 0.5]
    target_eta: [3.0, 0.3]                         # optional
    seed: 1
    chain:  {iterations: 30000, burn_in: 10000, thin: 10, rho: 100.0}
    rho_grid: [1.0e4, 5.0e4]                       # rho-sweep only
"""
from __future__ import annotations

import copy
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy import stats

from . import estimation, metrics
from .dynamics import (MixtureNoise, PolynomialMap, Trajectory, cubic_map, gaussian_noise, henon_map,
                       simulate, two_scale_noise)
from .gsbr import Priors
from .io import read_matrix_csv, read_trajectory, write_matrix_csv, write_records_csv, write_trajectory
from .orchestrator import ChainConfig, load_chain, run_chain, run_reconstruction, save_chain

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# presets -------------------------------------------------------------------

FULL_CHAIN = {"iterations": 250_000, "burn_in": 50_000, "thin": 10, "rho": 1e2}
DESK_CHAIN = {"iterations": 30_000, "burn_in": 10_000, "thin": 10, "rho": 1e2}
DESK_N = 500

HENON_F2L_VARIANCE = {1: 0.21e-4, 2: 0.29e-4, 3: 0.40e-4, 4: 0.77e-4}
CUBIC_VARIANCE = {"3.5": 0.33e-4, "4.5": 0.55e-4, "5.5": 0.59e-4, "6.5": 0.67e-4, "7.5": 1.00e-4}
ETA_TOL = 0.3


def _henon(level: int, variance: float) -> dict:
    return {"map": {"kind": "henon", "a": 1.38, "b": 0.27},
            "model": {"lag": 2, "degree": 2},
            "noise": {"kind": "two_scale", "level": level, "variance": variance},
            "n": 1000, "initial": [0.5, 0.5], "target_eta": [3.0, ETA_TOL], "seed": 1,
            "chain": dict(FULL_CHAIN)}


def _cubic(eta: str) -> dict:
    return {"map": {"kind": "cubic", "theta": 2.55, "degree": 5},
            "model": {"lag": 1, "degree": 5},
            "noise": {"kind": "two_scale", "level": 1, "variance": CUBIC_VARIANCE[eta]},
            "n": 200, "initial": [0.0], "target_eta": [float(eta), ETA_TOL], "seed": 1,
            "chain": dict(FULL_CHAIN)}


def preset_names() -> list[str]:
    base = ["henon-3pct"] + [f"henon-f2l-{l}" for l in HENON_F2L_VARIANCE] + ["henon-f2l-all"]
    base += [f"cubic-{e}pct" for e in CUBIC_VARIANCE]
    return base + [f"{b}-desk" for b in base]


def preset(name: str) -> dict:
    """Config mapping of a named preset; a ``-desk`` suffix selects the CI-scale chain (n <= 500)."""
    desk = name.endswith("-desk")
    stem = name[: -len("-desk")] if desk else name
    if stem == "henon-3pct":
        cfg = _henon(1, HENON_F2L_VARIANCE[1])
    elif stem == "henon-f2l-all":
        cfg = _henon(1, HENON_F2L_VARIANCE[1])
        cfg["batch"] = [f"henon-f2l-{l}" + ("-desk" if desk else "") for l in HENON_F2L_VARIANCE]
    elif stem.startswith("henon-f2l-") and stem[len("henon-f2l-"):].isdigit() \
            and int(stem[len("henon-f2l-"):]) in HENON_F2L_VARIANCE:
        level = int(stem[len("henon-f2l-"):])
        cfg = _henon(level, HENON_F2L_VARIANCE[level])
    elif stem.startswith("cubic-") and stem.endswith("pct") and stem[6:-3] in CUBIC_VARIANCE:
        cfg = _cubic(stem[6:-3])
    else:
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(preset_names())}")
    if desk:
        cfg["chain"] = dict(DESK_CHAIN)
        cfg["n"] = min(cfg["n"], DESK_N)
    cfg["preset"] = name
    return cfg


# config --------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    map: dict
    model: dict
    noise: dict
    n: int = 1000
    initial: list = field(default_factory=lambda: [0.5, 0.5])
    target_eta: Optional[list] = None
    seed: int = 1
    chain: dict = field(default_factory=lambda: dict(DESK_CHAIN))
    rho_grid: list = field(default_factory=list)
    trajectory: Optional[str] = None
    preset: Optional[str] = None
    batch: list = field(default_factory=list)

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for key in ("map", "noise"):
            if key not in data:
                raise ConfigError(f"config needs a {key!r} section")
        data = dict(data)
        data.setdefault("model", _default_model(data["map"]))
        cfg = cls(**data)
        cfg.validate()
        return cfg

    def to_mapping(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def validate(self):
        if int(self.n) != self.n or self.n < 0:
            raise ConfigError("n must be a non-negative integer")
        pmap = self.true_map()
        if len(self.initial) != pmap.lag:
            raise ConfigError(f"initial block needs {pmap.lag} values")
        self.noise_process()
        self.model_map()
        self.chain_config()
        if self.target_eta is not None and len(self.target_eta) != 2:
            raise ConfigError("target_eta must be [centre, tolerance]")
        if any(not float(r) > 0 for r in self.rho_grid):
            raise ConfigError("rho grid entries must be positive")

    def true_map(self) -> PolynomialMap:
        spec = dict(self.map)
        kind = spec.pop("kind", "polynomial")
        try:
            if kind == "henon":
                return henon_map(**spec)
            if kind == "cubic":
                return cubic_map(**spec)
            if kind == "polynomial":
                return PolynomialMap(int(spec["lag"]), int(spec["degree"]),
                                     np.asarray(spec["coefficients"], float))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad map spec: {exc}") from None
        raise ConfigError(f"unknown map kind {kind!r}")

    def model_map(self) -> PolynomialMap:
        try:
            return PolynomialMap.zeros(int(self.model["lag"]), int(self.model["degree"]))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad model spec: {exc}") from None

    def noise_process(self) -> MixtureNoise:
        spec = dict(self.noise)
        kind = spec.pop("kind", "gaussian")
        try:
            if kind == "two_scale":
                return two_scale_noise(int(spec["level"]), float(spec["variance"]))
            if kind == "gaussian":
                return gaussian_noise(float(spec["variance"]))
            if kind == "mixture":
                return MixtureNoise(np.asarray(spec["weights"], float),
                                    np.asarray(spec["variances"], float))
        except (TypeError, KeyError, ValueError) as exc:
            raise ConfigError(f"bad noise spec: {exc}") from None
        raise ConfigError(f"unknown noise kind {kind!r}")

    def chain_config(self, **overrides) -> ChainConfig:
        spec = dict(self.chain)
        spec.setdefault("seed", self.seed)
        spec.update(overrides)
        if "priors" in spec and isinstance(spec["priors"], dict):
            try:
                spec["priors"] = Priors(**{k: tuple(v) for k, v in spec["priors"].items()})
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad priors: {exc}") from None
        try:
            return ChainConfig(**spec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad chain spec: {exc}") from None


def _default_model(map_spec: dict) -> dict:
    kind = map_spec.get("kind", "polynomial")
    if kind == "henon":
        return {"lag": 2, "degree": 2}
    if kind == "cubic":
        return {"lag": 1, "degree": map_spec.get("degree", 5)}
    return {"lag": map_spec.get("lag", 1), "degree": map_spec.get("degree", 1)}


def load_config(path=None, preset_name=None, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Preset (if any), then the YAML file (if any), then explicit overrides."""
    data: dict = preset(preset_name) if preset_name else {}
    if path is not None:
        try:
            loaded = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = _merge(data, loaded)
    if overrides:
        data = _merge(data, overrides)
    if not data:
        raise ConfigError("no configuration: give --preset or --config")
    return ExperimentConfig.from_mapping(data)


# pipelines -----------------------------------------------------------------

def simulate_series(cfg: ExperimentConfig) -> Trajectory:
    rng = np.random.default_rng([cfg.seed, 1])
    target = tuple(cfg.target_eta) if cfg.target_eta is not None and cfg.n >= 2 else None
    traj = simulate(cfg.true_map(), cfg.noise_process(), int(cfg.n), cfg.initial, rng,
                    target_eta=target)
    traj.meta["seed"] = cfg.seed
    if cfg.preset:
        traj.meta["preset"] = cfg.preset
    return traj


def cmd_simulate(cfg: ExperimentConfig, out) -> tuple[Path, Trajectory]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    traj = simulate_series(cfg)
    path = write_trajectory(out / "trajectory.csv", traj)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_mapping(), sort_keys=True))
    return path, traj


def input_series(cfg: ExperimentConfig) -> Trajectory:
    if cfg.trajectory:
        traj = read_trajectory(cfg.trajectory, lag=cfg.model_map().lag)
        if traj.lag != cfg.model_map().lag:
            raise ConfigError(f"trajectory lag {traj.lag} does not match model lag")
        return traj
    return simulate_series(cfg)


def y_pass_config(chain_cfg: ChainConfig) -> ChainConfig:
    return replace(chain_cfg, seed=chain_cfg.seed + 1_000_003)


def denoise_series(x: Trajectory, cfg: ExperimentConfig, out, chain_cfg: Optional[ChainConfig] = None
                   ) -> dict:
    """Run the sampler on ``x``, persist every chain file, then build the report from disk."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = cfg.model_map()
    chain_cfg = chain_cfg or cfg.chain_config()
    write_trajectory(out / "trajectory.csv", x)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_mapping(), sort_keys=True))
    chain = run_chain(x, model, chain_cfg)
    save_chain(chain, out, extra={"model": {"lag": model.lag, "degree": model.degree}})

    y_point = estimation.select_estimates(chain)[0]
    y = Trajectory(y_point, chain.initial_mean())
    # weaker-noise check: reconstruction group only, on the noise-reduced series
    ypass = run_reconstruction(y, model, y_pass_config(chain_cfg))
    write_matrix_csv(out / "ypass_theta.csv", ypass.theta_draws,
                     [f"theta_{k}" for k in range(model.n_coef)])
    write_matrix_csv(out / "ypass_noise.csv", ypass.noise_predictive_draws, ["z_pred"])
    return build_report(out)


def cmd_denoise(cfg: ExperimentConfig, out, jobs: int = 1) -> list[dict]:
    if cfg.batch:
        return run_batch(cfg, out, jobs)
    return [denoise_series(input_series(cfg), cfg, out)]


def _batch_one(args):
    name, base, out = args
    cfg = load_config(preset_name=name, overrides={"seed": base.seed})
    return denoise_series(input_series(cfg), cfg, Path(out) / name)


def run_batch(cfg: ExperimentConfig, out, jobs: int = 1) -> list[dict]:
    tasks = [(name, cfg, out) for name in cfg.batch]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_batch_one, tasks))
    else:
        reports = [_batch_one(t) for t in tasks]
    build_report(out)
    return reports


def dedupe_grid(rhos) -> list[float]:
    seen, grid = set(), []
    for r in rhos:
        r = float(r)
        if r in seen:
            log.warning("duplicate rho %g dropped from the grid", r)
            continue
        seen.add(r)
        grid.append(r)
    if not grid:
        raise ConfigError("rho grid is empty")
    return grid


def _sweep_one(args):
    x, cfg, rho, out = args
    sub = Path(out) / f"rho_{rho:.6g}"
    try:
        rep = denoise_series(x, cfg, sub, cfg.chain_config(rho=rho))
        return {"rho": rho, "e0": rep["e0"], "edyn_x": rep["edyn_x"], "edyn_y": rep["edyn_y"],
                "rdyn": rep["rdyn"], "error": ""}
    except Exception as exc:  # per-rho failures are recorded, the sweep continues
        log.warning("rho=%g failed: %s", rho, exc)
        nan = float("nan")
        return {"rho": rho, "e0": nan, "edyn_x": nan, "edyn_y": nan, "rdyn": nan,
                "error": f"{type(exc).__name__}: {exc}"}


def trend_statistics(rows: list[dict]) -> dict:
    ok = [r for r in rows if not r["error"]]
    out = {}
    for key in ("e0", "edyn_y"):
        if len(ok) >= 3:
            res = stats.spearmanr([r["rho"] for r in ok], [r[key] for r in ok])
            out[f"spearman_rho_{key}"] = float(res.statistic)
            out[f"spearman_p_{key}"] = float(res.pvalue)
        else:
            out[f"spearman_rho_{key}"] = out[f"spearman_p_{key}"] = float("nan")
    return out


def cmd_rho_sweep(cfg: ExperimentConfig, out, jobs: int = 1) -> tuple[list[dict], dict]:
    grid = dedupe_grid(cfg.rho_grid or [cfg.chain.get("rho", 1e2)])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    x = input_series(cfg)
    write_trajectory(out / "trajectory.csv", x)
    tasks = [(x, cfg, r, out) for r in grid]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, tasks))
    else:
        rows = [_sweep_one(t) for t in tasks]
    trend = trend_statistics(rows)
    write_records_csv(out / "sweep.csv", rows)
    (out / "sweep.json").write_text(json.dumps({"rows": rows, "trend": trend}, indent=2,
                                               default=_json_default) + "\n")
    return rows, trend


# report --------------------------------------------------------------------

def _json_default(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _true_noise(meta: dict) -> Optional[MixtureNoise]:
    noise = meta.get("noise")
    if not noise:
        return None
    return MixtureNoise(np.asarray(noise["weights"]), np.asarray(noise["variances"]))


def build_report(directory) -> dict:
    """Recompute every reported number from the files in ``directory`` and write the bundle.

    A directory of per-preset subdirectories gets an aggregate table instead.
    """
    src = Path(directory)
    if not (src / "manifest.json").exists():
        subs = sorted(p for p in src.glob("*/manifest.json")) if src.is_dir() else []
        if not subs:
            raise FileNotFoundError(f"no chain found in {src}")
        rows = [build_report(p.parent) | {"run": p.parent.name} for p in subs]
        _write_aggregate(src, rows)
        return {"runs": rows}

    manifest = json.loads((src / "manifest.json").read_text())
    chain = load_chain(src)
    mspec = manifest.get("model") or {}
    model = PolynomialMap.zeros(int(mspec.get("lag", chain.initial_draws.shape[1])),
                                int(mspec.get("degree", 2)))
    x_raw = read_trajectory(src / "trajectory.csv", lag=model.lag)
    init = chain.initial_mean()
    g_hat = model.with_coefficients(chain.theta_mean())

    y_point, summaries, m_ht, omega_ht = estimation.select_estimates(chain)
    x = Trajectory(x_raw.values, init)
    y = Trajectory(y_point, init)

    theta_true = None
    if "map" in x_raw.meta:
        mm = x_raw.meta["map"]
        if mm["lag"] == model.lag and len(mm["coefficients"]) == model.n_coef:
            theta_true = np.asarray(mm["coefficients"])
    theta_y = None
    if (src / "ypass_theta.csv").exists():
        theta_y = read_matrix_csv(src / "ypass_theta.csv")[0].mean(axis=0)
    noise = _true_noise(x_raw.meta)
    rep = metrics.noise_reduction_report(x, y, g_hat, theta_true, theta_y,
                                         noise.sd if noise is not None else None)

    delta = chain.delta_draws
    report = rep.to_dict(traces=False)
    report.update({
        "rho": chain.config.rho, "seed": chain.config.seed, "n": x.n, "n_draws": chain.n_draws,
        "acceptance_rate": chain.acceptance_rate, "nu": chain.nu,
        "theta_hat_x": g_hat.coefficients.tolist(),
        "theta_hat_y": None if theta_y is None else theta_y.tolist(),
        "theta_true": None if theta_true is None else theta_true.tolist(),
        "theta_hpd95": [list(estimation.hpd_interval(c)) for c in chain.theta_draws.T]
        if chain.n_draws >= 20 else None,
        "delta_mean": float(delta.mean()),
        "delta_hpd95": list(estimation.hpd_interval(delta)) if delta.size >= 20 else None,
        "p_mean": float(chain.p_draws.mean()),
        "m_ht": m_ht.tolist(), "omega_ht": omega_ht.tolist(),
        "tail_flatness_true": None if noise is None else metrics.tail_flatness(noise),
    })
    (src / "report.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")

    # plot data
    write_trajectory(src / "y.csv", y)
    write_records_csv(src / "summaries.csv", [s.to_dict() for s in summaries])
    lagged = np.column_stack([np.r_[init[0], x.values[:-1]], x.values,
                              np.r_[init[0], y.values[:-1]], y.values]) if x.n else np.empty((0, 4))
    write_matrix_csv(src / "delay_plot.csv", lagged, ["x_prev", "x", "y_prev", "y"])
    for name, sites in (("m_ht_sites.csv", m_ht), ("omega_ht_sites.csv", omega_ht)):
        rows = np.column_stack([sites, lagged[sites, 2], lagged[sites, 3]]) if sites.size \
            else np.empty((0, 3))
        write_matrix_csv(src / name, rows, ["site", "y_prev", "y"])
    traces = np.column_stack([np.arange(1, x.n + 1), rep.indeterminism_trace_x,
                              rep.indeterminism_trace_y, np.abs(x.values - y.values)])
    write_matrix_csv(src / "traces.csv", traces, ["i", "log10_edyn_x", "log10_edyn_y", "abs_x_minus_y"])
    grid = estimation.density_grid(chain.noise_predictive_draws)
    cols, header = [grid], ["z"]
    if noise is not None:
        cols.append(noise.pdf(grid))
        header.append("f_true")
    cols.append(estimation.noise_density_estimate(chain, grid))
    header.append("f_hat_x")
    if (src / "ypass_noise.csv").exists():
        cols.append(estimation.kde(read_matrix_csv(src / "ypass_noise.csv")[0].ravel(), grid))
        header.append("f_hat_y")
    write_matrix_csv(src / "densities.csv", np.column_stack(cols), header)
    (src / "summary.md").write_text(_markdown(report))
    return report


def _fmt_cell(v, spec=".5g"):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "-"
    return format(v, spec)


def _markdown(r: dict) -> str:
    lines = ["# Noise reduction summary", "",
             "| rho | E0 | E_dyn(x) | E_dyn(y) | R_dyn | eta % | mean PARE x | mean PARE y |",
             "|---|---|---|---|---|---|---|---|",
             "| " + " | ".join(_fmt_cell(r.get(k)) for k in
                              ("rho", "e0", "edyn_x", "edyn_y", "rdyn", "eta", "pare_mean_x",
                               "pare_mean_y")) + " |", ""]
    if r.get("delta_hpd95"):
        lo, hi = r["delta_hpd95"]
        lines.append(f"- delta = 1/tau: mean {r['delta_mean']:.4g}, 95% HPD [{lo:.4g}, {hi:.4g}]")
    lines.append(f"- y-sweep acceptance {r['acceptance_rate']:.3f}, step {r['nu']:.4g}")
    lines.append(f"- multimodal sites (dip test): {len(r['m_ht'])}; "
                 f"top-forecastability sites: {len(r['omega_ht'])}")
    if r.get("theta_true") is not None:
        lines += ["", "| k | theta | theta_hat_x | theta_hat_y |", "|---|---|---|---|"]
        ty = r.get("theta_hat_y") or [None] * len(r["theta_true"])
        for k, (t, a, b) in enumerate(zip(r["theta_true"], r["theta_hat_x"], ty)):
            lines.append(f"| {k} | {t:.6g} | {a:.6g} | {_fmt_cell(b, '.6g')} |")
    return "\n".join(lines) + "\n"


def _write_aggregate(dst: Path, rows: list[dict]):
    keys = ["run", "eta", "e0", "edyn_x", "edyn_y", "rdyn", "pare_mean_x", "pare_mean_y"]
    write_records_csv(dst / "table.csv", [{k: r.get(k) for k in keys} for r in rows])
    lines = ["# Batch summary", "", "| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
    for r in rows:
        lines.append("| " + " | ".join([r["run"]] + [_fmt_cell(r.get(k)) for k in keys[1:]]) + " |")
    (dst / "summary.md").write_text("\n".join(lines) + "\n")
