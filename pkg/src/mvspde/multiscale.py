"""Slow-fast dynamics, the frozen equation, the averaged equation, and errors.

The two-scale system advances a slow component X and an accelerated fast
component Y on a shared grid of step ``h_fast`` (in slow time units):

    dX = (A X + F(X, law(X), Y)) dt + dL
    dY = (1/eps) (A Y + G(X, law(X), Y)) dt + eps^{-1/alpha} dZ

Exponential Euler treats each linear part exactly on its own clock — the
fast damping factor is exp(-lambda_k h/eps) — and both noise terms are
exact convolution increments (the fast one with the window h/eps on the
unit clock, which is the same law as the accelerated integral).  The law
argument of both F and G is the *slow* ensemble's empirical statistic.

Supporting objects:

* the *frozen equation*: the fast dynamics at scale one with the slow
  arguments (x, mu_stat) held fixed.  Strong dissipativity
  (lambda_1 - L_G > 0) makes it exponentially ergodic; its invariant
  measure defines the averaged drift Fbar(x, mu) = int F(x, mu, y) d(inv).
* the *auxiliary process*: the fast component re-driven with slow inputs
  frozen at the starts of blocks of length delta, sharing the true fast
  component's noise streams bitwise.  It interpolates between the coupled
  system and the frozen equation and is the measurable face of the
  averaging argument.
* the *averaged equation*: the slow equation with F replaced by Fbar,
  driven by the *same* slow noise streams (synchronous coupling), so that
  sup-in-time strong errors can be measured per particle.

``strong_error`` fuses all three advances in one streaming loop so that no
trajectory storage is needed at production sizes.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .spectral import OperatorSpec
from .coefficients import CoefficientSet, effective_constants
from .solver import SimConfig, PathEnsemble, BLOCK_STEPS, _empirical_mu_stat
from .noise import (
    RngStream,
    StableNoiseBank,
    convolution_scales,
    _cms,
    CH_SLOW,
    CH_FAST,
    CH_FROZEN,
)

__all__ = [
    "MultiscaleConfig",
    "FrozenInput",
    "SlowFastPaths",
    "simulate_slow_fast",
    "SlowSnapshots",
    "slow_snapshots",
    "simulate_auxiliary",
    "simulate_frozen",
    "AveragedDrift",
    "estimate_fbar",
    "ergodic_fbar",
    "DecayReport",
    "ergodicity_decay",
    "simulate_averaged",
    "strong_error",
    "StrongErrorStats",
    "strong_error_stats",
]


@dataclass(frozen=True)
class MultiscaleConfig:
    """Two-scale setup on top of a single-scale :class:`SimConfig`.

    ``h_fast`` is the shared integrator step in slow time units and must
    resolve the fast relaxation: h_fast <= epsilon / 10.  ``delta`` is the
    block length of the auxiliary construction; when omitted it defaults to
    the balancing choice epsilon**(1/(1+theta)) snapped to the fast grid.
    """

    base: SimConfig
    epsilon: float
    h_fast: float
    eta: np.ndarray = 0.0
    delta: float | None = None

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.h_fast <= 0:
            raise ValueError(f"h_fast must be positive, got {self.h_fast}")
        if self.h_fast > self.epsilon / 10.0 + 1e-12:
            raise ValueError(
                f"h_fast = {self.h_fast} too coarse: need h_fast <= epsilon/10 "
                f"= {self.epsilon / 10.0}"
            )
        n = self.base.T / self.h_fast
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ValueError(f"T/h_fast = {n} is not a positive integer step count")
        eff = effective_constants(self.base.coeffs, self.base.spec)
        if not eff.strongly_dissipative:
            raise ValueError(
                f"dissipativity gap lambda_1 - L_G = {eff.gap:.6g} <= 0: "
                "the frozen equation does not mix"
            )
        if self.delta is not None:
            d = self.delta
            if not (self.h_fast < d <= self.base.T + 1e-12):
                raise ValueError(
                    f"delta = {d} outside (h_fast, T] = ({self.h_fast}, {self.base.T}]"
                )
            ratio = d / self.h_fast
            if abs(ratio - round(ratio)) > 1e-6:
                raise ValueError(
                    f"delta = {d} is not aligned to the fast grid (delta/h_fast = {ratio})"
                )
        object.__setattr__(self, "eta", self.base.spec.as_field(self.eta))

    @property
    def n_steps(self) -> int:
        return round(self.base.T / self.h_fast)

    @property
    def times(self) -> np.ndarray:
        return self.h_fast * np.arange(self.n_steps + 1)

    @property
    def delta_resolved(self) -> float:
        """Explicit delta, or the balancing default snapped to the fast grid."""
        if self.delta is not None:
            return self.delta
        theta = self.base.spec.theta
        raw = self.epsilon ** (1.0 / (1.0 + theta))
        steps = max(2, round(raw / self.h_fast))
        return min(steps * self.h_fast, self.base.T)


@dataclass(frozen=True)
class FrozenInput:
    """Slow arguments held fixed in the frozen equation, plus a start point."""

    x: np.ndarray
    mu_stat: float
    y0: np.ndarray

    def __post_init__(self):
        if self.mu_stat < 0:
            raise ValueError(f"mu_stat must be >= 0, got {self.mu_stat}")
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y0", np.asarray(self.y0, dtype=float))


@dataclass(frozen=True)
class SlowFastPaths:
    slow: PathEnsemble
    fast: PathEnsemble


def _fast_weights(spec: OperatorSpec, h: float, epsilon: float):
    """Fast-component decay / drift-weight / noise-scale triple for one step."""
    lam = spec.eigenvalues
    decay = np.exp(-lam * h / epsilon)
    wdrift = -np.expm1(-lam * h / epsilon) / lam
    sig = convolution_scales(spec, h, "fast", epsilon)
    return decay, wdrift, sig


def _slow_weights(spec: OperatorSpec, h: float):
    lam = spec.eigenvalues
    decay = np.exp(-lam * h)
    wdrift = -np.expm1(-lam * h) / lam
    sig = convolution_scales(spec, h, "slow")
    return decay, wdrift, sig


def simulate_slow_fast(
    cfg: MultiscaleConfig,
    particle_ids=None,
    replica: int = 0,
    record_every: int = 1,
    block_steps: int = BLOCK_STEPS,
) -> SlowFastPaths:
    """Advance the coupled system; record both components every ``record_every`` steps.

    The two components share the step grid; the fast one gets the
    epsilon-rescaled exponents.  Slow and fast noise live on disjoint
    channels of the same per-particle streams, so reruns (and the paired
    auxiliary / averaged runs) can reproduce either component bitwise.
    """
    base, spec, coeffs = cfg.base, cfg.base.spec, cfg.base.coeffs
    J = cfg.n_steps
    if J % record_every != 0:
        raise ValueError(f"record_every = {record_every} does not divide {J} steps")
    dec_s, w_s, sig_s = _slow_weights(spec, cfg.h_fast)
    dec_f, w_f, sig_f = _fast_weights(spec, cfg.h_fast, cfg.epsilon)
    bank_s = StableNoiseBank(base.seed, spec.alpha, base.M, spec.n_modes, CH_SLOW,
                             replica=replica, particle_ids=particle_ids)
    bank_f = StableNoiseBank(base.seed, spec.alpha, base.M, spec.n_modes, CH_FAST,
                             replica=replica, particle_ids=particle_ids)

    x = np.tile(base.xi, (base.M, 1))
    y = np.tile(cfg.eta, (base.M, 1))
    n_rec = J // record_every + 1
    xs = np.empty((base.M, n_rec, spec.n_modes))
    ys = np.empty_like(xs)
    mu_track = np.empty(n_rec)
    xs[:, 0], ys[:, 0] = x, y
    mu_track[0] = _empirical_mu_stat(x, spec.p)

    for j0 in range(0, J, block_steps):
        bs = min(block_steps, J - j0)
        noise_s = bank_s.draw(bs) * sig_s
        noise_f = bank_f.draw(bs) * sig_f
        for jj in range(bs):
            j = j0 + jj
            m = _empirical_mu_stat(x, spec.p)
            fd = coeffs.F(x, m, y)
            gd = coeffs.G(x, m, y)
            x = dec_s * x + w_s * fd + noise_s[:, jj]
            y = dec_f * y + w_f * gd + noise_f[:, jj]
            if (j + 1) % record_every == 0:
                r = (j + 1) // record_every
                xs[:, r], ys[:, r] = x, y
                mu_track[r] = _empirical_mu_stat(x, spec.p)

    times = cfg.times[::record_every]
    slow = PathEnsemble(times=times, paths=xs, spec=spec, mu_stat=mu_track)
    fast = PathEnsemble(times=times, paths=ys, spec=spec, mu_stat=mu_track)
    return SlowFastPaths(slow=slow, fast=fast)


@dataclass(frozen=True)
class SlowSnapshots:
    """Slow states and moment statistics at auxiliary block starts l*delta."""

    delta: float
    times: np.ndarray      # (n_blocks,) block start times
    x: np.ndarray          # (n_blocks, M, n_modes)
    mu_stat: np.ndarray    # (n_blocks,)


def slow_snapshots(slow: PathEnsemble, delta: float) -> SlowSnapshots:
    """Extract block-start snapshots from a recorded slow ensemble.

    Requires every block start l*delta (l = 0, 1, ...) strictly below the
    final time to be present on the ensemble's recorded grid, and the
    moment track to have been recorded alongside.
    """
    if slow.mu_stat is None:
        raise ValueError("slow ensemble lacks the recorded moment track")
    t_end = slow.times[-1]
    n_blocks = int(np.ceil(t_end / delta - 1e-9))
    starts = delta * np.arange(n_blocks)
    idx = np.searchsorted(slow.times, starts - 1e-9)
    if np.any(np.abs(slow.times[idx] - starts) > 1e-9):
        missing = starts[np.abs(slow.times[idx] - starts) > 1e-9]
        raise ValueError(
            f"block starts not on the recorded grid (delta = {delta}): e.g. t = {missing[0]}"
        )
    return SlowSnapshots(
        delta=delta,
        times=starts,
        x=slow.paths[:, idx].swapaxes(0, 1).copy(),
        mu_stat=slow.mu_stat[idx].copy(),
    )


def simulate_auxiliary(
    cfg: MultiscaleConfig,
    snapshots: SlowSnapshots,
    particle_ids=None,
    replica: int = 0,
    record_every: int = 1,
    block_steps: int = BLOCK_STEPS,
) -> PathEnsemble:
    """Fast component with slow inputs frozen at block starts (same noise).

    Between times l*delta and (l+1)*delta the drift G sees the slow state
    and moment statistic sampled at l*delta.  The noise streams are the
    ones the true fast component uses, so when G ignores its slow
    arguments the result coincides with the true fast path bitwise.
    """
    base, spec, coeffs = cfg.base, cfg.base.spec, cfg.base.coeffs
    J = cfg.n_steps
    if J % record_every != 0:
        raise ValueError(f"record_every = {record_every} does not divide {J} steps")
    steps_per_block = snapshots.delta / cfg.h_fast
    if abs(steps_per_block - round(steps_per_block)) > 1e-6:
        raise ValueError(
            f"delta = {snapshots.delta} not aligned to the fast grid "
            f"(delta/h_fast = {steps_per_block})"
        )
    steps_per_block = round(steps_per_block)
    n_needed = int(np.ceil(J / steps_per_block))
    if snapshots.x.shape[0] < n_needed:
        raise ValueError(
            f"need {n_needed} block snapshots to cover {J} steps, got {snapshots.x.shape[0]}"
        )
    dec_f, w_f, sig_f = _fast_weights(spec, cfg.h_fast, cfg.epsilon)
    bank_f = StableNoiseBank(base.seed, spec.alpha, base.M, spec.n_modes, CH_FAST,
                             replica=replica, particle_ids=particle_ids)

    y = np.tile(cfg.eta, (base.M, 1))
    n_rec = J // record_every + 1
    ys = np.empty((base.M, n_rec, spec.n_modes))
    ys[:, 0] = y

    for j0 in range(0, J, block_steps):
        bs = min(block_steps, J - j0)
        noise_f = bank_f.draw(bs) * sig_f
        for jj in range(bs):
            j = j0 + jj
            blk = j // steps_per_block
            gd = coeffs.G(snapshots.x[blk], snapshots.mu_stat[blk], y)
            y = dec_f * y + w_f * gd + noise_f[:, jj]
            if (j + 1) % record_every == 0:
                ys[:, (j + 1) // record_every] = y

    return PathEnsemble(times=cfg.times[::record_every], paths=ys, spec=spec)


def simulate_frozen(
    frozen: FrozenInput,
    T_end: float,
    h_fast: float,
    spec: OperatorSpec,
    coeffs: CoefficientSet,
    rng: RngStream,
    n_particles: int = 1,
    record_every: int = 1,
    block_steps: int = BLOCK_STEPS,
) -> PathEnsemble:
    """Frozen equation at scale one: fast dynamics with (x, mu_stat) pinned.

    Requires a positive dissipativity gap (the equation mixes at rate
    lambda_1 - L_G).  Noise uses the fast amplitudes gamma_k at unit clock
    rate on a dedicated channel of ``rng``'s address; particle i of the
    ensemble uses particle id rng.particle + i.
    """
    eff = effective_constants(coeffs, spec)
    if not eff.strongly_dissipative:
        raise ValueError(
            f"dissipativity gap lambda_1 - L_G = {eff.gap:.6g} <= 0: frozen equation "
            "has no invariant regime to sample"
        )
    J = T_end / h_fast
    if abs(J - round(J)) > 1e-9 or round(J) < 1:
        raise ValueError(f"T_end/h_fast = {J} is not a positive integer step count")
    J = round(J)
    if J % record_every != 0:
        raise ValueError(f"record_every = {record_every} does not divide {J} steps")
    dec, w, sig = _fast_weights(spec, h_fast, 1.0)
    bank = StableNoiseBank(
        rng.seed, spec.alpha, n_particles, spec.n_modes, CH_FROZEN,
        replica=rng.replica,
        particle_ids=[rng.particle + i for i in range(n_particles)],
    )
    x_row = frozen.x[None, :]
    y = np.tile(frozen.y0, (n_particles, 1))
    n_rec = J // record_every + 1
    ys = np.empty((n_particles, n_rec, spec.n_modes))
    ys[:, 0] = y
    for j0 in range(0, J, block_steps):
        bs = min(block_steps, J - j0)
        noise = bank.draw(bs) * sig
        for jj in range(bs):
            gd = coeffs.G(x_row, frozen.mu_stat, y)
            y = dec * y + w * gd + noise[:, jj]
            j = j0 + jj
            if (j + 1) % record_every == 0:
                ys[:, (j + 1) // record_every] = y
    times = h_fast * record_every * np.arange(n_rec)
    return PathEnsemble(times=times, paths=ys, spec=spec)


@dataclass
class AveragedDrift:
    """How to evaluate the averaged slow drift Fbar.

    modes
    -----
    ``analytic_linear``      closed form; only valid for the linear oracle family
    ``stationary_quadrature`` exact integration of F against the frozen
                             equation's stationary law (available when the
                             family exposes it; exact up to quadrature tables)
    ``ergodic_estimate``     long-path time average after burn-in, cached by
                             quantized (x, mu_stat); the estimator the
                             averaging principle itself suggests

    ``relax_time`` / ``avg_time`` default to 8 and 64 relaxation times
    1/(lambda_1 - L_G).  Ergodic estimates are reproducible: the stream for
    a cache key is derived from ``seed`` and a hash of the quantized key,
    so results do not depend on evaluation order.
    """

    mode: str = "stationary_quadrature"
    relax_time: float | None = None
    avg_time: float | None = None
    h_step: float = 0.005
    cache_resolution: float = 1e-3
    n_batches: int = 16
    seed: int = 2**20
    cache: dict = field(default_factory=dict)

    _MODES = ("analytic_linear", "stationary_quadrature", "ergodic_estimate")

    def __post_init__(self):
        if self.mode not in self._MODES:
            raise ValueError(f"mode must be one of {self._MODES}, got {self.mode!r}")

    def windows(self, spec: OperatorSpec, coeffs: CoefficientSet) -> tuple[float, float]:
        gap = effective_constants(coeffs, spec).gap
        if gap <= 0:
            raise ValueError(f"dissipativity gap {gap:.6g} <= 0")
        t_b = 8.0 / gap if self.relax_time is None else self.relax_time
        t_a = 64.0 / gap if self.avg_time is None else self.avg_time
        return t_b, t_a


def _cache_key(x: np.ndarray, mu_stat: float, resolution: float) -> tuple:
    scale = max(1.0, float(np.max(np.abs(x))), abs(mu_stat))
    q = resolution * scale
    return tuple(np.round(np.asarray(x, dtype=float) / q).astype(np.int64)) + (
        int(round(mu_stat / q)),
    )


def ergodic_fbar(
    drift: AveragedDrift,
    frozen: FrozenInput,
    spec: OperatorSpec,
    coeffs: CoefficientSet,
    rng: RngStream | None = None,
) -> tuple[np.ndarray, float]:
    """Time-average F along one long frozen path; returns (field, stderr).

    Burn-in ``relax_time``, then average F(x, mu, Y_s) over ``avg_time``.
    The standard error comes from batch means (``n_batches`` equal
    sub-windows), which absorbs the path's autocorrelation.  Results are
    cached by quantized (x, mu_stat); the noise stream is derived from the
    cache key so a cache hit and a recomputation agree.
    """
    key = _cache_key(frozen.x, frozen.mu_stat, drift.cache_resolution)
    if key in drift.cache:
        return drift.cache[key]
    t_b, t_a = drift.windows(spec, coeffs)
    key_hash = zlib.crc32(repr(key).encode()) & 0x7FFFFFFF
    base = rng if rng is not None else RngStream(drift.seed)
    stream = base.derived(particle=key_hash, channel=CH_FROZEN)

    n_relax = int(np.ceil(t_b / drift.h_step))
    n_avg = int(np.ceil(t_a / drift.h_step))
    n_avg -= n_avg % drift.n_batches  # equal batches
    dec, w, sig = _fast_weights(spec, drift.h_step, 1.0)
    gu, gw = stream.pair()
    x_row = frozen.x[None, :]
    y = frozen.y0[None, :].copy()

    def _advance(n_steps, accumulate):
        nonlocal y
        sums = np.zeros((drift.n_batches, spec.n_modes)) if accumulate else None
        per_batch = n_steps // drift.n_batches if accumulate else n_steps
        done = 0
        while done < n_steps:
            bs = min(4096, n_steps - done)
            u = gu.uniform(-np.pi / 2, np.pi / 2, (bs, spec.n_modes))
            wexp = gw.standard_exponential((bs, spec.n_modes))
            noise = sig * _cms(u, wexp, spec.alpha)
            for jj in range(bs):
                if accumulate:
                    sums[(done + jj) // per_batch] += coeffs.F(x_row, frozen.mu_stat, y)[0]
                y = dec * y + w * coeffs.G(x_row, frozen.mu_stat, y) + noise[jj]
            done += bs
        return sums

    _advance(n_relax, accumulate=False)
    sums = _advance(n_avg, accumulate=True)
    batch_means = sums / (n_avg // drift.n_batches)
    est = batch_means.mean(axis=0)
    stderr_vec = batch_means.std(axis=0, ddof=1) / np.sqrt(drift.n_batches)
    stderr = float(np.linalg.norm(stderr_vec))
    drift.cache[key] = (est, stderr)
    return est, stderr


def estimate_fbar(
    drift: AveragedDrift,
    frozen: FrozenInput,
    spec: OperatorSpec,
    coeffs: CoefficientSet,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Averaged slow drift at a frozen input, by the drift's chosen mode."""
    if drift.mode == "analytic_linear":
        if coeffs.variant != "linear_test":
            raise ValueError(
                f"analytic_linear is only valid for the linear oracle family, "
                f"coefficients are '{coeffs.variant}'"
            )
        return coeffs.fbar_factory(spec)(frozen.x, frozen.mu_stat)
    if drift.mode == "stationary_quadrature":
        if coeffs.fbar_factory is None:
            raise ValueError(
                f"family '{coeffs.variant}' exposes no stationary-law quadrature"
            )
        return coeffs.fbar_factory(spec)(frozen.x, frozen.mu_stat)
    est, _ = ergodic_fbar(drift, frozen, spec, coeffs, rng)
    return est


def averaged_drift_evaluator(drift: AveragedDrift, spec: OperatorSpec, coeffs: CoefficientSet):
    """Vectorised (x, mu_stat) -> Fbar evaluator for the averaged solver.

    Closed-form modes vectorise over particles directly; the ergodic mode
    falls back to a per-particle loop through the cache and is only meant
    for small ensembles.
    """
    if drift.mode in ("analytic_linear", "stationary_quadrature"):
        if drift.mode == "analytic_linear" and coeffs.variant != "linear_test":
            raise ValueError("analytic_linear is only valid for the linear oracle family")
        if coeffs.fbar_factory is None:
            raise ValueError(f"family '{coeffs.variant}' exposes no closed-form Fbar")
        fbar = coeffs.fbar_factory(spec)

        def evaluate(x, mu_stat):
            return fbar(x, mu_stat)

        return evaluate

    def evaluate(x, mu_stat):
        x = np.atleast_2d(x)
        out = np.empty_like(x)
        for i in range(x.shape[0]):
            out[i] = estimate_fbar(
                drift, FrozenInput(x=x[i], mu_stat=mu_stat, y0=np.zeros(spec.n_modes)),
                spec, coeffs,
            )
        return out

    return evaluate


@dataclass(frozen=True)
class DecayReport:
    """Gap |E F(x,mu,Y_t) - Fbar| against the exponential envelope."""

    t_grid: np.ndarray
    gaps: np.ndarray
    floor_levels: np.ndarray   # MC stderr of the gap at each time
    kept: np.ndarray           # mask of points above the floor, used in the fit
    fitted_rate: float
    rate_stderr: float
    theory_rate: float
    envelope_const: float      # prefactor fitted at the theoretical rate
    envelope_ok: bool          # no kept point exceeds 1.5x the fitted envelope


def ergodicity_decay(
    frozen: FrozenInput,
    spec: OperatorSpec,
    coeffs: CoefficientSet,
    t_grid: np.ndarray,
    n_replicas: int,
    rng: RngStream,
    h_step: float = 0.01,
    fbar_ref: np.ndarray | None = None,
) -> DecayReport:
    """Measure the frozen equation's mixing rate toward the averaged drift.

    Runs ``n_replicas`` frozen paths from the same start, estimates
    E F(x, mu, Y_t) at the grid times, and fits log|gap| ~ -rate * t on the
    points that sit above 3x their Monte Carlo floor.  The theoretical
    envelope decays at rate lambda_1 - L_G.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size < 2 or np.any(t_grid < 0):
        raise ValueError("t_grid must be 1-d, nonnegative, with at least 2 points")
    eff = effective_constants(coeffs, spec)
    if not eff.strongly_dissipative:
        raise ValueError(f"dissipativity gap {eff.gap:.6g} <= 0")
    if fbar_ref is None:
        if coeffs.fbar_factory is None:
            raise ValueError("no closed-form Fbar available; pass fbar_ref explicitly")
        fbar_ref = coeffs.fbar_factory(spec)(frozen.x, frozen.mu_stat)

    # snap grid times onto the step grid
    idx = np.round(t_grid / h_step).astype(int)
    if np.any(np.abs(idx * h_step - t_grid) > 1e-9):
        raise ValueError(f"t_grid must lie on the h_step = {h_step} grid")
    T_end = float(idx.max() * h_step)
    ens = simulate_frozen(
        frozen, T_end, h_step, spec, coeffs, rng, n_particles=n_replicas
    )
    gaps = np.empty(t_grid.size)
    floors = np.empty(t_grid.size)
    for i, j in enumerate(idx):
        fvals = coeffs.F(frozen.x[None, :], frozen.mu_stat, ens.paths[:, j])
        mean_f = fvals.mean(axis=0)
        gaps[i] = np.linalg.norm(mean_f - fbar_ref)
        floors[i] = np.linalg.norm(fvals.std(axis=0, ddof=1) / np.sqrt(n_replicas))

    kept = gaps > 3.0 * floors
    if kept.sum() < 2:
        raise ValueError("fewer than 2 points above the MC floor; shrink t_grid or add replicas")
    t_k, g_k = t_grid[kept], np.log(gaps[kept])
    design = np.vstack([t_k, np.ones_like(t_k)]).T
    coef, res, *_ = np.linalg.lstsq(design, g_k, rcond=None)
    rate = -float(coef[0])
    dof = max(t_k.size - 2, 1)
    resid_var = float(res[0]) / dof if res.size else 0.0
    t_center = t_k - t_k.mean()
    denom = float(np.sum(t_center**2))
    rate_stderr = float(np.sqrt(resid_var / denom)) if denom > 0 else np.inf

    # prefactor at the theoretical rate; envelope check with 50% headroom
    log_c = float(np.mean(g_k + eff.gap * t_k))
    env_c = float(np.exp(log_c))
    envelope_ok = bool(np.all(gaps[kept] <= 1.5 * env_c * np.exp(-eff.gap * t_grid[kept])))
    return DecayReport(
        t_grid=t_grid,
        gaps=gaps,
        floor_levels=floors,
        kept=kept,
        fitted_rate=rate,
        rate_stderr=rate_stderr,
        theory_rate=float(eff.gap),
        envelope_const=env_c,
        envelope_ok=envelope_ok,
    )


def simulate_averaged(
    cfg: MultiscaleConfig,
    drift: AveragedDrift,
    particle_ids=None,
    replica: int = 0,
    record_every: int = 1,
    block_steps: int = BLOCK_STEPS,
) -> PathEnsemble:
    """Averaged slow equation driven by the *same* slow noise as the paired run.

    This is the single-scale solver with B replaced by Fbar, stepped on the
    fast grid and fed from the slow channel of the same (seed, replica,
    particle) streams that :func:`simulate_slow_fast` uses — synchronous
    coupling by construction.
    """
    base, spec, coeffs = cfg.base, cfg.base.spec, cfg.base.coeffs
    J = cfg.n_steps
    if J % record_every != 0:
        raise ValueError(f"record_every = {record_every} does not divide {J} steps")
    fbar = averaged_drift_evaluator(drift, spec, coeffs)
    dec_s, w_s, sig_s = _slow_weights(spec, cfg.h_fast)
    bank_s = StableNoiseBank(base.seed, spec.alpha, base.M, spec.n_modes, CH_SLOW,
                             replica=replica, particle_ids=particle_ids)
    x = np.tile(base.xi, (base.M, 1))
    n_rec = J // record_every + 1
    xs = np.empty((base.M, n_rec, spec.n_modes))
    xs[:, 0] = x
    mu_track = np.empty(n_rec)
    mu_track[0] = _empirical_mu_stat(x, spec.p)
    for j0 in range(0, J, block_steps):
        bs = min(block_steps, J - j0)
        noise_s = bank_s.draw(bs) * sig_s
        for jj in range(bs):
            j = j0 + jj
            m = _empirical_mu_stat(x, spec.p)
            x = dec_s * x + w_s * fbar(x, m) + noise_s[:, jj]
            if (j + 1) % record_every == 0:
                r = (j + 1) // record_every
                xs[:, r] = x
                mu_track[r] = _empirical_mu_stat(x, spec.p)
    times = cfg.times[::record_every]
    return PathEnsemble(times=times, paths=xs, spec=spec, mu_stat=mu_track)


@dataclass(frozen=True)
class StrongErrorStats:
    """Moments of per-particle sup-in-time coupling errors.

    ``mean_pow`` and ``var_pow`` describe sup|X - Xbar|^m across particles;
    ``error`` is mean_pow**(1/m) and ``stderr`` its delta-method standard
    error.  ``delta`` records the block length the auxiliary construction
    would use at this epsilon (the estimator itself couples through the
    exact averaged drift and does not depend on it).
    """

    mean_pow: float
    var_pow: float
    n: int
    m: float
    epsilon: float
    delta: float

    @property
    def error(self) -> float:
        return float(self.mean_pow ** (1.0 / self.m))

    @property
    def stderr(self) -> float:
        if self.mean_pow <= 0:
            return 0.0
        se_mean = np.sqrt(self.var_pow / self.n)
        return float(se_mean / self.m * self.mean_pow ** (1.0 / self.m - 1.0))


def strong_error_stats(
    cfg: MultiscaleConfig,
    drift: AveragedDrift,
    m: float | None = None,
    particle_ids=None,
    replica: int = 0,
    block_steps: int = BLOCK_STEPS,
) -> StrongErrorStats:
    """Streaming synchronous-coupling error between slow-fast and averaged runs.

    Advances the coupled pair (X, Y) and the averaged equation Xbar in one
    loop on the fast grid, with the slow noise increments shared per
    particle, and tracks max over grid times of |X - Xbar| per particle.
    Nothing is stored along the way, so production sizes stream in O(M)
    memory.

    Requires p <= m < alpha (heavy tails: higher moments of the sup do not
    exist) and a coefficient family with bounded slow drift — with
    unbounded F the sup of the error has uncontrolled tails and the
    estimator is meaningless.
    """
    base, spec, coeffs = cfg.base, cfg.base.spec, cfg.base.coeffs
    if m is None:
        m = spec.p
    if not (spec.p <= m < spec.alpha):
        raise ValueError(f"moment order must lie in [p, alpha) = [{spec.p}, {spec.alpha}), got {m}")
    if not coeffs.F_bounded:
        raise ValueError(
            f"family '{coeffs.variant}' has unbounded slow drift: sup-error tails "
            "are uncontrolled; use a bounded family"
        )
    fbar = averaged_drift_evaluator(drift, spec, coeffs)
    J = cfg.n_steps
    dec_s, w_s, sig_s = _slow_weights(spec, cfg.h_fast)
    dec_f, w_f, sig_f = _fast_weights(spec, cfg.h_fast, cfg.epsilon)
    bank_s = StableNoiseBank(base.seed, spec.alpha, base.M, spec.n_modes, CH_SLOW,
                             replica=replica, particle_ids=particle_ids)
    bank_f = StableNoiseBank(base.seed, spec.alpha, base.M, spec.n_modes, CH_FAST,
                             replica=replica, particle_ids=particle_ids)

    x = np.tile(base.xi, (base.M, 1))
    xb = x.copy()
    y = np.tile(cfg.eta, (base.M, 1))
    sup = np.zeros(base.M)
    for j0 in range(0, J, block_steps):
        bs = min(block_steps, J - j0)
        noise_s = bank_s.draw(bs) * sig_s
        noise_f = bank_f.draw(bs) * sig_f
        for jj in range(bs):
            m_x = _empirical_mu_stat(x, spec.p)
            m_b = _empirical_mu_stat(xb, spec.p)
            fd = coeffs.F(x, m_x, y)
            gd = coeffs.G(x, m_x, y)
            fb = fbar(xb, m_b)
            x = dec_s * x + w_s * fd + noise_s[:, jj]
            y = dec_f * y + w_f * gd + noise_f[:, jj]
            xb = dec_s * xb + w_s * fb + noise_s[:, jj]
            np.maximum(sup, np.linalg.norm(x - xb, axis=1), out=sup)
    pw = sup**m
    return StrongErrorStats(
        mean_pow=float(pw.mean()),
        var_pow=float(pw.var(ddof=1)) if base.M > 1 else 0.0,
        n=base.M,
        m=float(m),
        epsilon=cfg.epsilon,
        delta=cfg.delta_resolved,
    )


def strong_error(
    cfg: MultiscaleConfig,
    drift: AveragedDrift,
    m: float | None = None,
    **kwargs,
) -> float:
    """((1/M) sum_i max_t |X_t^(i) - Xbar_t^(i)|^m)^(1/m) under synchronous coupling."""
    return strong_error_stats(cfg, drift, m, **kwargs).error
