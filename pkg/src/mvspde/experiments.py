"""Batch studies over simulation configs, plus flat-file persistence.

Four curve-producing studies live here: the strong-convergence rate scan
over the timescale ratio, the slow-path increment regularity scan over
block lengths, the frozen-equation mixing-rate scan over probe inputs,
and the fixed-point contraction trace.  Each returns an
:class:`ExperimentResult` whose grid is a list of (parameter, error,
stderr) points; power-law studies also carry a weighted log-log fit.

Determinism contract: a study is a pure function of (config, master
seed).  The Monte Carlo budget splits into ``n_replicas`` chunks; replica
r of grid point i draws from stream replica coordinate
``i * n_replicas + r`` under the single master seed, and pooling combines
replica moments by exact sum-of-squares in fixed (grid, replica) order.
Worker count therefore never changes a single bit of output.  Wall time
is recorded only in the manifest, never in hashed or persisted content.
"""

from __future__ import annotations

import hashlib
import json
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coefficients import BuiltinFamily, CoefficientSet, effective_constants
from .multiscale import (
    AveragedDrift,
    FrozenInput,
    MultiscaleConfig,
    StrongErrorStats,
    ergodicity_decay,
    estimate_fbar,
    simulate_auxiliary,
    simulate_slow_fast,
    slow_snapshots,
    strong_error_stats,
)
from .noise import CH_FROZEN, RngStream
from .solver import SimConfig, picard_law_iteration, moment_bound_check, simulate_mkv
from .spectral import OperatorSpec

__all__ = [
    "GridPoint",
    "ExperimentResult",
    "FitReport",
    "fit_loglog",
    "config_digest",
    "rate_study",
    "hoelder_study",
    "aux_gap_study",
    "ergodicity_study",
    "picard_study",
    "simulate_study",
    "persist",
    "load_result",
]


# --------------------------------------------------------------------------
# result container and fitting


@dataclass(frozen=True)
class GridPoint:
    """One point of a study curve: abscissa, error estimate, MC stderr."""

    param: float
    error: float
    stderr: float


@dataclass(frozen=True)
class ExperimentResult:
    """A finished study: the curve, its fit, and enough to reproduce it.

    ``flags`` maps a grid index (as a string) or the literal key ``fit``
    to a diagnostic tag such as ``noise-floor`` or ``degenerate``.
    ``runtime_s`` is informational only and excluded from hashed content.
    """

    kind: str
    grid: tuple[GridPoint, ...]
    fitted_slope: float | None
    slope_stderr: float | None
    fit_r2: float | None
    config: dict
    config_hash: str
    seeds: tuple[int, ...]
    runtime_s: float
    flags: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


@dataclass(frozen=True)
class FitReport:
    slope: float
    intercept: float
    slope_stderr: float
    r2: float
    used: tuple[int, ...]


def _plain(obj):
    """Recursively convert numpy scalars/arrays so json round-trips evenly."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_digest(config: dict) -> str:
    """Short stable digest of a config dict (sha256 of canonical JSON)."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()[:12]


def fit_loglog(grid, exclude=()) -> FitReport:
    """Weighted least-squares slope of log10(error) against log10(param).

    Weights are inverse squared *relative* stderr (the MC stderr mapped to
    log space), floored to keep zero-stderr points finite.  Points with
    nonpositive param or error, plus any index in ``exclude``, are
    dropped.  The slope standard error is the chi-square-rescaled WLS one,
    which stays honest when the per-point error bars are misestimated;
    it needs at least three points, below that it is reported as nan.
    """
    exclude = set(exclude)
    xs, ys, ws, used = [], [], [], []
    for i, pt in enumerate(grid):
        if i in exclude or not (pt.param > 0 and pt.error > 0):
            continue
        if not (math.isfinite(pt.param) and math.isfinite(pt.error)):
            continue
        rel = max(pt.stderr / pt.error, 1e-9)
        xs.append(math.log10(pt.param))
        ys.append(math.log10(pt.error))
        ws.append(1.0 / rel)
        used.append(i)
    if len(xs) < 2:
        raise ValueError(
            f"need at least 2 usable grid points for a log-log fit, have {len(xs)}"
        )
    x = np.array(xs)
    y = np.array(ys)
    w = np.array(ws)
    slope, intercept = np.polyfit(x, y, 1, w=w)
    if len(xs) >= 3:
        cov = np.polyfit(x, y, 1, w=w, cov=True)[1]
        slope_stderr = float(np.sqrt(cov[0, 0]))
    else:
        slope_stderr = float("nan")
    resid = y - (slope * x + intercept)
    ss_res = float(np.sum((w * resid) ** 2))
    ybar = float(np.sum(w**2 * y) / np.sum(w**2))
    ss_tot = float(np.sum((w * (y - ybar)) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return FitReport(
        slope=float(slope),
        intercept=float(intercept),
        slope_stderr=slope_stderr,
        r2=float(r2),
        used=tuple(used),
    )


# --------------------------------------------------------------------------
# replica decomposition helpers


def _split_counts(total: int, n_chunks: int):
    """Split ``total`` particles into chunk (offset, count) pairs."""
    if total < n_chunks:
        raise ValueError(f"cannot split M={total} particles into {n_chunks} replicas")
    base, extra = divmod(total, n_chunks)
    out, offset = [], 0
    for r in range(n_chunks):
        count = base + (1 if r < extra else 0)
        out.append((offset, count))
        offset += count
    return out


def _pool_moments(parts):
    """Combine per-replica (mean, var, n) by exact sums of squares."""
    n_tot = sum(n for _, _, n in parts)
    mean = sum(n * m for m, _, n in parts) / n_tot
    ss = sum(v * (n - 1) + n * m * m for m, v, n in parts)
    var = (ss - n_tot * mean * mean) / (n_tot - 1) if n_tot > 1 else 0.0
    return float(mean), float(max(var, 0.0)), int(n_tot)


def _run_tasks(fn, payloads, n_workers: int):
    if n_workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    try:
        ctx = multiprocessing.get_context("fork")
    except ValueError:  # pragma: no cover - non-posix fallback
        ctx = multiprocessing.get_context("spawn")
    with ProcessPoolExecutor(max_workers=n_workers, mp_context=ctx) as pool:
        return list(pool.map(fn, payloads, chunksize=1))


def _spec_dict(spec: OperatorSpec) -> dict:
    return {
        "n_modes": spec.n_modes,
        "a": spec.a,
        "b": spec.b,
        "g": spec.g,
        "c_lambda": spec.c_lambda,
        "c_beta": spec.c_beta,
        "c_gamma": spec.c_gamma,
        "alpha": spec.alpha,
        "theta": spec.theta,
        "p": spec.p,
    }


def _rebuild_pair(payload):
    spec = OperatorSpec(**payload["spec"])
    if payload.get("family") is not None:
        coeffs = payload["family"].build(spec)
    else:
        coeffs = payload["coeffs"]
    return spec, coeffs


def _resolve_coeffs(base: SimConfig, family, n_workers: int) -> CoefficientSet:
    if family is not None:
        return family.build(base.spec)
    if n_workers > 1:
        raise ValueError(
            "parallel studies need a BuiltinFamily recipe: coefficient closures "
            "cannot cross process boundaries"
        )
    return base.coeffs


def _default_drift(coeffs: CoefficientSet) -> AveragedDrift:
    if coeffs.variant == "linear_test":
        return AveragedDrift(mode="analytic_linear")
    if coeffs.fbar_factory is not None:
        return AveragedDrift(mode="stationary_quadrature")
    return AveragedDrift(mode="ergodic_estimate")


# --------------------------------------------------------------------------
# rate study: strong coupling error against the timescale ratio


def _rate_task(payload):
    spec, coeffs = _rebuild_pair(payload)
    base = SimConfig(
        spec=spec,
        coeffs=coeffs,
        T=payload["T"],
        h=payload["h"],
        M=payload["count"],
        seed=payload["seed"],
        xi=np.asarray(payload["xi"]),
    )
    cfg = MultiscaleConfig(
        base=base,
        epsilon=payload["epsilon"],
        h_fast=payload["h_fast"],
        eta=payload["eta"],
    )
    stats = strong_error_stats(
        cfg,
        payload["drift"],
        m=payload["m"],
        particle_ids=range(payload["offset"], payload["offset"] + payload["count"]),
        replica=payload["replica"],
    )
    return stats.mean_pow, stats.var_pow, stats.n


def rate_study(
    base: SimConfig,
    eps_grid,
    m: float = 1.0,
    *,
    family: BuiltinFamily | None = None,
    drift: AveragedDrift | None = None,
    eta=0.0,
    h_fast_ratio: float = 1.0 / 16,
    n_replicas: int = 8,
    n_workers: int = 1,
    config_extra: dict | None = None,
) -> ExperimentResult:
    """Strong error sup_t |X^eps - Xbar| in L^m against the scale ratio.

    Runs the coupled two-scale / averaged pair at every epsilon on the
    grid (fast step ``eps * h_fast_ratio``) and fits the log-log slope of
    the error curve, to be compared against the theoretical order
    theta / (2 (1 + theta)).  Points indistinguishable from the coupling
    noise floor (error within 3 stderr of the exact-coupling zero
    baseline) are flagged and excluded from the fit.
    """
    t0 = time.perf_counter()
    eps = [float(e) for e in eps_grid]
    if len(eps) < 4:
        raise ValueError(f"rate study needs >= 4 grid points, got {len(eps)}")
    if any(e <= 0 for e in eps) or any(b <= a for a, b in zip(eps[1:], eps)):
        raise ValueError("eps grid must be positive and strictly decreasing")
    spec = base.spec
    coeffs = _resolve_coeffs(base, family, n_workers)
    if drift is None:
        drift = _default_drift(coeffs)
    if coeffs.fbar_factory is not None:
        coeffs.fbar_factory(spec)  # warm shared tables before any fork
    # validate every grid point up front; MultiscaleConfig rejects bad steps
    deltas, h_fasts = [], []
    for e in eps:
        probe_cfg = MultiscaleConfig(
            base=SimConfig(
                spec=spec, coeffs=coeffs, T=base.T, h=base.h, M=base.M,
                seed=base.seed, xi=base.xi,
            ),
            epsilon=e,
            h_fast=e * h_fast_ratio,
            eta=eta,
        )
        deltas.append(probe_cfg.delta_resolved)
        h_fasts.append(probe_cfg.h_fast)

    chunks = _split_counts(base.M, n_replicas)
    xi_list = [float(v) for v in base.xi]
    eta_field = spec.as_field(eta)
    payloads = []
    for gi, e in enumerate(eps):
        for r, (offset, count) in enumerate(chunks):
            payloads.append({
                "spec": _spec_dict(spec),
                "family": family,
                "coeffs": None if family is not None else coeffs,
                "T": base.T,
                "h": base.h,
                "seed": base.seed,
                "xi": xi_list,
                "eta": eta_field,
                "epsilon": e,
                "h_fast": h_fasts[gi],
                "m": m,
                "drift": drift,
                "offset": offset,
                "count": count,
                "replica": gi * n_replicas + r,
            })
    raw = _run_tasks(_rate_task, payloads, n_workers)

    grid, flags = [], {}
    for gi, e in enumerate(eps):
        parts = raw[gi * n_replicas:(gi + 1) * n_replicas]
        mean, var, n = _pool_moments(parts)
        pooled = StrongErrorStats(
            mean_pow=mean, var_pow=var, n=n, m=m, epsilon=e, delta=deltas[gi]
        )
        err, se = pooled.error, pooled.stderr
        # coupling-zero baseline is exactly 0, so the floor test is 3 sigma
        if err <= 3.0 * se:
            flags[str(gi)] = "noise-floor"
        grid.append(GridPoint(param=e, error=err, stderr=se))

    slope = slope_se = r2 = None
    if len(grid) >= 3:
        try:
            fit = fit_loglog(grid, exclude={int(k) for k in flags})
            slope, slope_se, r2 = fit.slope, fit.slope_stderr, fit.r2
        except ValueError:
            flags["fit"] = "degenerate"
    theta = spec.theta
    config = config_extra if config_extra is not None else {
        "operator": _spec_dict(spec),
        "coefficients": {"variant": coeffs.variant},
        "sim": {"T": base.T, "h": base.h, "M": base.M, "seed": base.seed,
                "xi": xi_list},
        "study": {"kind": "rate", "grid": eps, "m": m,
                  "h_fast_ratio": h_fast_ratio, "n_replicas": n_replicas,
                  "drift_mode": drift.mode},
    }
    seeds = (base.seed,) + tuple(range(len(eps) * n_replicas))
    return ExperimentResult(
        kind="rate",
        grid=tuple(grid),
        fitted_slope=slope,
        slope_stderr=slope_se,
        fit_r2=r2,
        config=_plain(config),
        config_hash=config_digest(config),
        seeds=seeds,
        runtime_s=time.perf_counter() - t0,
        flags=flags,
        meta=_plain({
            "theory_slope": theta / (2.0 * (1.0 + theta)),
            "m": m,
            "delta": deltas,
            "h_fast": h_fasts,
            "error_kind": "sup-coupling",
        }),
    )


# --------------------------------------------------------------------------
# slow-path increment regularity against the block length


def _increment_rows(x, h_fast, delta_grid):
    """Per-particle time-averaged |path - block-frozen path| for each delta.

    The integral over (t_j, t_{j+1}] is approximated at its right endpoint
    against the block active on that interval, so the block starts (where
    the raw integrand vanishes) do not anchor spurious zeros; with
    delta = h_fast this reduces to the mean single-step displacement.
    """
    n_rec = x.shape[1]
    j = np.arange(1, n_rec)
    rows = []
    for d in delta_grid:
        s = int(round(d / h_fast))
        idx = ((j - 1) // s) * s
        gap = np.linalg.norm(x[:, j] - x[:, idx], axis=2)  # (M, n_rec-1)
        a = gap.mean(axis=1)
        rows.append((float(a.mean()), float(a.var(ddof=1)) if a.size > 1 else 0.0,
                     int(a.size)))
    return rows


def _path_task(payload):
    spec, coeffs = _rebuild_pair(payload)
    base = SimConfig(
        spec=spec, coeffs=coeffs, T=payload["T"], h=payload["h"],
        M=payload["count"], seed=payload["seed"], xi=np.asarray(payload["xi"]),
    )
    cfg = MultiscaleConfig(
        base=base, epsilon=payload["epsilon"], h_fast=payload["h_fast"],
        eta=payload["eta"],
    )
    ids = range(payload["offset"], payload["offset"] + payload["count"])
    sf = simulate_slow_fast(cfg, particle_ids=ids, replica=payload["replica"])
    if payload["arm"] == "slow":
        return _increment_rows(sf.slow.paths, cfg.h_fast, payload["delta_grid"])
    rows = []
    for d in payload["delta_grid"]:
        snaps = slow_snapshots(sf.slow, d)
        aux = simulate_auxiliary(cfg, snaps, particle_ids=ids,
                                 replica=payload["replica"])
        gap = np.linalg.norm(sf.fast.paths - aux.paths, axis=2)
        a = gap.mean(axis=1)
        rows.append((float(a.mean()), float(a.var(ddof=1)) if a.size > 1 else 0.0,
                     int(a.size)))
    return rows


def _increment_study(cfg, delta_grid, kind, arm, family, n_replicas, n_workers,
                     config_extra, theory_slope):
    t0 = time.perf_counter()
    deltas = [float(d) for d in delta_grid]
    if len(deltas) < 2:
        raise ValueError("delta grid needs at least 2 points")
    for d in deltas:
        s = d / cfg.h_fast
        if d <= 0 or d > cfg.base.T or abs(s - round(s)) > 1e-9 * max(1.0, s):
            raise ValueError(
                f"delta={d:.6g} must be a positive multiple of h_fast={cfg.h_fast:.6g} "
                f"and at most T={cfg.base.T:.6g}"
            )
    base = cfg.base
    spec = base.spec
    coeffs = _resolve_coeffs(base, family, n_workers)
    chunks = _split_counts(base.M, n_replicas)
    xi_list = [float(v) for v in base.xi]
    payloads = [{
        "spec": _spec_dict(spec),
        "family": family,
        "coeffs": None if family is not None else coeffs,
        "T": base.T,
        "h": base.h,
        "seed": base.seed,
        "xi": xi_list,
        "eta": cfg.eta,
        "epsilon": cfg.epsilon,
        "h_fast": cfg.h_fast,
        "delta_grid": deltas,
        "arm": arm,
        "offset": offset,
        "count": count,
        "replica": r,
    } for r, (offset, count) in enumerate(chunks)]
    raw = _run_tasks(_path_task, payloads, n_workers)

    grid, flags = [], {}
    for di, d in enumerate(deltas):
        mean, var, n = _pool_moments([rows[di] for rows in raw])
        se = math.sqrt(var / n)
        if mean <= 3.0 * se:
            flags[str(di)] = "noise-floor"
        grid.append(GridPoint(param=d, error=mean, stderr=se))

    slope = slope_se = r2 = None
    if len(grid) >= 3:
        try:
            fit = fit_loglog(grid, exclude={int(k) for k in flags})
            slope, slope_se, r2 = fit.slope, fit.slope_stderr, fit.r2
        except ValueError:
            flags["fit"] = "degenerate"
    # the rate is an upper bound; a markedly steeper fit means another term
    # (typically the deterministic drift increment, slope 1) dominates
    if slope is not None and slope > max(0.85, theory_slope + 0.2):
        flags["fit"] = "above-envelope"
    config = config_extra if config_extra is not None else {
        "operator": _spec_dict(spec),
        "coefficients": {"variant": coeffs.variant},
        "sim": {"T": base.T, "h": base.h, "M": base.M, "seed": base.seed,
                "xi": xi_list, "h_fast": cfg.h_fast, "epsilon": cfg.epsilon},
        "study": {"kind": kind, "grid": deltas, "n_replicas": n_replicas},
    }
    return ExperimentResult(
        kind=kind,
        grid=tuple(grid),
        fitted_slope=slope,
        slope_stderr=slope_se,
        fit_r2=r2,
        config=_plain(config),
        config_hash=config_digest(config),
        seeds=(base.seed,) + tuple(range(n_replicas)),
        runtime_s=time.perf_counter() - t0,
        flags=flags,
        meta=_plain({"theory_slope": theory_slope, "epsilon": cfg.epsilon,
                     "m": 1.0, "error_kind": arm}),
    )


def hoelder_study(
    cfg: MultiscaleConfig,
    delta_grid,
    *,
    family: BuiltinFamily | None = None,
    n_replicas: int = 4,
    n_workers: int = 1,
    config_extra: dict | None = None,
) -> ExperimentResult:
    """Time-averaged slow increment (1/T) int E|X_t - X_{t(delta)}| dt vs delta.

    All block lengths are evaluated on the same trajectories (the grid is
    pure post-processing), so there is no fresh-noise jitter between grid
    points.  The fitted slope is compared against theta/2 from below;
    deterministic drift-dominated regimes come out near slope 1 and are
    flagged ``above-envelope``.
    """
    return _increment_study(
        cfg, delta_grid, kind="hoelder", arm="slow", family=family,
        n_replicas=n_replicas, n_workers=n_workers, config_extra=config_extra,
        theory_slope=cfg.base.spec.theta / 2.0,
    )


def aux_gap_study(
    cfg: MultiscaleConfig,
    delta_grid,
    *,
    family: BuiltinFamily | None = None,
    n_replicas: int = 4,
    n_workers: int = 1,
    config_extra: dict | None = None,
) -> ExperimentResult:
    """Time-averaged gap between the fast path and its block-frozen twin.

    The auxiliary path re-reads the slow input only at block starts while
    sharing every noise increment with the true fast path, so the gap is
    driven purely by slow displacement over one block and shrinks with
    delta at the slow path's regularity order.
    """
    return _increment_study(
        cfg, delta_grid, kind="aux-gap", arm="aux", family=family,
        n_replicas=n_replicas, n_workers=n_workers, config_extra=config_extra,
        theory_slope=cfg.base.spec.theta / 2.0,
    )


# --------------------------------------------------------------------------
# frozen-equation mixing rates over a probe grid


def ergodicity_study(
    probes,
    spec: OperatorSpec,
    coeffs: CoefficientSet,
    t_grid,
    *,
    ensemble: int = 4000,
    seed: int = 0,
    h_step: float = 0.01,
    drift: AveragedDrift | None = None,
    config_extra: dict | None = None,
) -> ExperimentResult:
    """Fitted mixing rate of the frozen fast equation at each probe input.

    Probe i runs under stream replica coordinate i; its grid row is
    (i + 1, fitted rate, rate stderr).  Probes whose decay curve never
    rises above the Monte Carlo floor (e.g. started at the stationary
    mean) are flagged ``no-signal`` and reported as nan.
    """
    t0 = time.perf_counter()
    probes = list(probes)
    if not probes:
        raise ValueError("need at least one probe input")
    if drift is None:
        drift = _default_drift(coeffs)
    eff = effective_constants(coeffs, spec)
    grid, flags, reports = [], {}, []
    for i, probe in enumerate(probes):
        rng = RngStream(seed, replica=i, channel=CH_FROZEN)
        fbar_ref = estimate_fbar(drift, probe, spec, coeffs)
        try:
            rep = ergodicity_decay(
                probe, spec, coeffs, np.asarray(t_grid, dtype=float),
                ensemble, rng, h_step=h_step, fbar_ref=fbar_ref,
            )
        except ValueError as exc:
            if "MC floor" not in str(exc):
                raise
            flags[str(i)] = "no-signal"
            grid.append(GridPoint(param=float(i + 1), error=float("nan"),
                                  stderr=float("nan")))
            reports.append({"kept": 0, "envelope_ok": None})
            continue
        grid.append(GridPoint(param=float(i + 1), error=rep.fitted_rate,
                              stderr=rep.rate_stderr))
        reports.append({"kept": int(np.sum(rep.kept)),
                        "envelope_ok": bool(rep.envelope_ok)})
    config = config_extra if config_extra is not None else {
        "operator": _spec_dict(spec),
        "coefficients": {"variant": coeffs.variant},
        "study": {"kind": "ergodicity", "t_grid": [float(t) for t in t_grid],
                  "ensemble": ensemble, "seed": seed, "h_step": h_step,
                  "n_probes": len(probes)},
    }
    return ExperimentResult(
        kind="ergodicity",
        grid=tuple(grid),
        fitted_slope=None,
        slope_stderr=None,
        fit_r2=None,
        config=_plain(config),
        config_hash=config_digest(config),
        seeds=(seed,) + tuple(range(len(probes))),
        runtime_s=time.perf_counter() - t0,
        flags=flags,
        meta=_plain({"theory_rate": eff.gap, "probes": reports,
                     "error_kind": "mixing-rate"}),
    )


# --------------------------------------------------------------------------
# contraction trace and plain moment curves (CLI-facing wrappers)


def picard_study(
    cfg: SimConfig,
    *,
    n_iters: int = 8,
    lambda_weight: float | None = None,
    config_extra: dict | None = None,
) -> ExperimentResult:
    """Successive-approximation distances d_n as a study curve.

    Grid rows are (iteration, flow distance to the previous iterate, 0);
    iterations at or past the Monte Carlo floor are flagged.
    """
    t0 = time.perf_counter()
    rep = picard_law_iteration(cfg, n_iters=n_iters, lambda_weight=lambda_weight)
    grid = tuple(
        GridPoint(param=float(n + 1), error=float(d), stderr=0.0)
        for n, d in enumerate(rep.distances)
    )
    flags = {}
    if rep.noise_floor_iter is not None:
        for i in range(rep.noise_floor_iter, len(grid)):
            flags[str(i)] = "noise-floor"
    config = config_extra if config_extra is not None else {
        "operator": _spec_dict(cfg.spec),
        "coefficients": {"variant": cfg.coeffs.variant},
        "sim": {"T": cfg.T, "h": cfg.h, "M": cfg.M, "seed": cfg.seed,
                "xi": [float(v) for v in cfg.xi]},
        "study": {"kind": "picard", "n_iters": n_iters,
                  "lambda_weight": rep.lambda_weight},
    }
    return ExperimentResult(
        kind="picard",
        grid=grid,
        fitted_slope=None,
        slope_stderr=None,
        fit_r2=None,
        config=_plain(config),
        config_hash=config_digest(config),
        seeds=(cfg.seed,),
        runtime_s=time.perf_counter() - t0,
        flags=flags,
        meta=_plain({
            "ratios": list(rep.ratios),
            "contracting": bool(rep.contracting),
            "lambda_weight": rep.lambda_weight,
            "noise_floor_iter": rep.noise_floor_iter,
            "error_kind": "flow-distance",
        }),
    )


def simulate_study(
    cfg: SimConfig,
    *,
    m: float | None = None,
    config_extra: dict | None = None,
) -> ExperimentResult:
    """Single interacting-system run, reported as the p-moment curve.

    Grid rows are (t_j, empirical p-moment, delta-method stderr); the meta
    block carries the a-priori moment stability check at order ``m``.
    """
    t0 = time.perf_counter()
    ens = simulate_mkv(cfg)
    p = cfg.spec.p
    grid = []
    for j, t in enumerate(ens.times):
        v = np.linalg.norm(ens.paths[:, j, :], axis=1) ** p
        mean_v = float(v.mean())
        se_v = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
        stat = mean_v ** (1.0 / p)
        se = se_v / p * mean_v ** (1.0 / p - 1.0) if mean_v > 0 else 0.0
        grid.append(GridPoint(param=float(t), error=stat, stderr=float(se)))
    check = moment_bound_check(ens, m=m if m is not None else p)
    config = config_extra if config_extra is not None else {
        "operator": _spec_dict(cfg.spec),
        "coefficients": {"variant": cfg.coeffs.variant},
        "sim": {"T": cfg.T, "h": cfg.h, "M": cfg.M, "seed": cfg.seed,
                "xi": [float(v) for v in cfg.xi]},
        "study": {"kind": "simulate", "m": m},
    }
    return ExperimentResult(
        kind="simulate",
        grid=tuple(grid),
        fitted_slope=None,
        slope_stderr=None,
        fit_r2=None,
        config=_plain(config),
        config_hash=config_digest(config),
        seeds=(cfg.seed,),
        runtime_s=time.perf_counter() - t0,
        flags={},
        meta=_plain({
            "sup_moment": check.sup_moment,
            "trend_slope": check.trend_slope,
            "trend_stderr": check.trend_stderr,
            "stable": bool(check.stable),
            "moment_order": m if m is not None else p,
            "error_kind": "p-moment",
        }),
    )


# --------------------------------------------------------------------------
# persistence: CSV curve, JSON metadata, gnuplot .dat, digest manifest


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def persist(result: ExperimentResult, out_dir) -> Path:
    """Write a result under out_dir/<kind>/<config_hash>/ and return the manifest.

    Emits result.csv (param,error,stderr rows), meta.json (config, seeds,
    fit, flags — stable key order, no timestamps), loglog.dat (log10
    columns for plotting) and manifest.json listing the files with sha256
    digests.  Identical (config, seeds) runs produce byte-identical
    csv/json/dat; only the manifest's runtime_s field varies.
    """
    if not result.grid:
        raise ValueError("refusing to persist a result with an empty grid")
    root = Path(out_dir) / result.kind / result.config_hash
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create result directory {root}: {exc}") from exc

    lines = ["param,error,stderr"]
    lines += [f"{pt.param!r},{pt.error!r},{pt.stderr!r}" for pt in result.grid]
    csv_path = root / "result.csv"
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    meta_payload = {
        "kind": result.kind,
        "config": result.config,
        "config_hash": result.config_hash,
        "seeds": list(result.seeds),
        "fitted_slope": result.fitted_slope,
        "slope_stderr": result.slope_stderr,
        "fit_r2": result.fit_r2,
        "flags": result.flags,
        "meta": result.meta,
    }
    meta_path = root / "meta.json"
    meta_path.write_text(
        json.dumps(meta_payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )

    dat_rows = ["# log10_param log10_error dlog10_error"]
    for pt in result.grid:
        if pt.param > 0 and pt.error > 0 and math.isfinite(pt.error):
            dlog = pt.stderr / (pt.error * math.log(10.0))
            dat_rows.append(
                f"{math.log10(pt.param)!r} {math.log10(pt.error)!r} {dlog!r}"
            )
    dat_path = root / "loglog.dat"
    dat_path.write_text("\n".join(dat_rows) + "\n", encoding="utf-8")

    manifest = {
        "kind": result.kind,
        "config_hash": result.config_hash,
        "files": {p.name: _sha256(p) for p in (csv_path, meta_path, dat_path)},
        "runtime_s": result.runtime_s,
    }
    manifest_path = root / "manifest.json"
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest_path


def load_result(manifest_path) -> ExperimentResult:
    """Rebuild an ExperimentResult from a persisted manifest, verifying digests."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    root = manifest_path.parent
    for name, digest in manifest["files"].items():
        path = root / name
        if not path.exists():
            raise FileNotFoundError(f"manifest lists missing file {path}")
        actual = _sha256(path)
        if actual != digest:
            raise ValueError(f"digest mismatch for {path}: {actual} != {digest}")
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    grid = []
    csv_lines = (root / "result.csv").read_text(encoding="utf-8").strip().splitlines()
    for line in csv_lines[1:]:
        param, error, stderr = (float(tok) for tok in line.split(","))
        grid.append(GridPoint(param=param, error=error, stderr=stderr))
    return ExperimentResult(
        kind=meta["kind"],
        grid=tuple(grid),
        fitted_slope=meta["fitted_slope"],
        slope_stderr=meta["slope_stderr"],
        fit_r2=meta["fit_r2"],
        config=meta["config"],
        config_hash=meta["config_hash"],
        seeds=tuple(meta["seeds"]),
        runtime_s=manifest["runtime_s"],
        flags=meta["flags"],
        meta=meta["meta"],
    )
