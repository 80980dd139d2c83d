"""Empirical measures on mode space and Wasserstein-type distances.

An empirical measure is a uniform average of M point masses in R^N (N =
number of retained modes).  Distances:

* ``wasserstein_exact`` solves the optimal assignment between two
  equal-size clouds (Hungarian algorithm on the cost matrix |x_i - y_j|^p)
  and is the reference implementation, used up to M = 256.
* ``wasserstein_sliced`` averages one-dimensional transport costs of random
  projections; the 1-d cost is closed-form (sorted samples matched in
  order).  It is a biased-low surrogate that scales to large M.
* ``dT_metric`` compares two time-indexed flows of measures through
  sup_j exp(-lambda * t_j) * W_p(mu_{t_j}, nu_{t_j}), the exponentially
  weighted distance under which the law map of the mean-field equation is
  a contraction.

Throughout, W_p of two uniform clouds of equal size M reduces to a minimum
over permutations of ((1/M) sum |x_i - y_pi(i)|^p)^(1/p), which is what the
assignment solver computes.
"""

from __future__ import annotations

from dataclasses import dataclass
import json

import numpy as np
from scipy.optimize import linear_sum_assignment

from .noise import RngStream

__all__ = [
    "EmpiricalMeasure",
    "LawFlow",
    "p_moment",
    "wasserstein_exact",
    "wasserstein_sliced",
    "dT_metric",
    "save_measure",
    "load_measure",
    "EXACT_ASSIGNMENT_LIMIT",
]

# Hungarian assignment is O(M^3); past this size callers should slice.
EXACT_ASSIGNMENT_LIMIT = 256


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Uniform empirical measure: rows of ``particles`` are the atoms."""

    particles: np.ndarray  # shape (M, n_modes)

    def __post_init__(self):
        pts = np.asarray(self.particles, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise ValueError(f"particles must be (M, n_modes) with M >= 1, got {pts.shape}")
        object.__setattr__(self, "particles", pts)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def n_modes(self) -> int:
        return self.particles.shape[1]

    def moment(self, p: float) -> float:
        return p_moment(self, p)


def p_moment(mu: EmpiricalMeasure, p: float) -> float:
    """((1/M) sum_i |x_i|^p)^(1/p), the p-th moment statistic of the cloud."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    norms = np.linalg.norm(mu.particles, axis=1)
    return float(np.mean(norms**p) ** (1.0 / p))


def wasserstein_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure, p: float) -> float:
    """Exact W_p between equal-size uniform clouds via optimal assignment."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if mu.size != nu.size:
        raise ValueError(f"cloud sizes differ: {mu.size} vs {nu.size}")
    if mu.n_modes != nu.n_modes:
        raise ValueError(f"mode counts differ: {mu.n_modes} vs {nu.n_modes}")
    if mu.size > EXACT_ASSIGNMENT_LIMIT:
        raise ValueError(
            f"exact assignment limited to M <= {EXACT_ASSIGNMENT_LIMIT}, got {mu.size}; "
            "use wasserstein_sliced"
        )
    diff = mu.particles[:, None, :] - nu.particles[None, :, :]
    cost = np.linalg.norm(diff, axis=2) ** p
    rows, cols = linear_sum_assignment(cost)
    return float(np.mean(cost[rows, cols]) ** (1.0 / p))


def _wasserstein_1d(x: np.ndarray, y: np.ndarray, p: float) -> float:
    """W_p on the line for equal-size samples: sort and match in order."""
    xs = np.sort(x)
    ys = np.sort(y)
    return float(np.mean(np.abs(xs - ys) ** p) ** (1.0 / p))


def wasserstein_sliced(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    p: float,
    n_projections: int = 64,
    rng=None,
    directions: np.ndarray | None = None,
) -> float:
    """Sliced W_p: average 1-d transport cost over random unit directions.

    ((1/L) sum_l W_p(proj_l mu, proj_l nu)^p)^(1/p).  Directions are drawn
    isotropically from ``rng`` unless given explicitly.  This estimator is
    a lower bound on W_p in distribution but shares its contraction and
    convergence behaviour, which is what the flow diagnostics need.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if mu.size != nu.size:
        raise ValueError(f"cloud sizes differ: {mu.size} vs {nu.size}")
    if directions is None:
        if rng is None:
            raise ValueError("need rng or explicit directions")
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        directions = gen.standard_normal((n_projections, mu.n_modes))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    else:
        directions = np.asarray(directions, dtype=float)
    proj_mu = mu.particles @ directions.T  # (M, L)
    proj_nu = nu.particles @ directions.T
    costs = [
        _wasserstein_1d(proj_mu[:, ell], proj_nu[:, ell], p) ** p
        for ell in range(directions.shape[0])
    ]
    return float(np.mean(costs) ** (1.0 / p))


@dataclass(frozen=True)
class LawFlow:
    """A time-indexed flow of empirical measures on a shared grid.

    ``clouds`` has shape (n_times, M, n_modes); time j's measure is the
    uniform law of clouds[j].
    """

    times: np.ndarray    # (n_times,)
    clouds: np.ndarray   # (n_times, M, n_modes)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        c = np.asarray(self.clouds, dtype=float)
        if c.ndim != 3 or t.ndim != 1 or c.shape[0] != t.size:
            raise ValueError(f"shape mismatch: times {t.shape}, clouds {c.shape}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "clouds", c)

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def size(self) -> int:
        return self.clouds.shape[1]

    def measure_at(self, j: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.clouds[j])

    def moment_curve(self, p: float) -> np.ndarray:
        norms = np.linalg.norm(self.clouds, axis=2)  # (n_times, M)
        return np.mean(norms**p, axis=1) ** (1.0 / p)


def dT_metric(
    mu_flow: LawFlow,
    nu_flow: LawFlow,
    lambda_weight: float,
    p: float,
    n_projections: int = 64,
    rng=None,
) -> float:
    """sup over grid times of exp(-lambda t_j) * W_p(mu_{t_j}, nu_{t_j}).

    Uses the exact assignment distance when the clouds fit under the
    assignment limit, the sliced surrogate otherwise (then ``rng`` is
    required to draw projection directions, shared across times).
    """
    if lambda_weight < 0:
        raise ValueError(f"lambda_weight must be >= 0, got {lambda_weight}")
    if mu_flow.n_times != nu_flow.n_times or not np.allclose(
        mu_flow.times, nu_flow.times
    ):
        raise ValueError("flows must share the same time grid")
    if mu_flow.size != nu_flow.size:
        raise ValueError(f"flow cloud sizes differ: {mu_flow.size} vs {nu_flow.size}")

    use_exact = mu_flow.size <= EXACT_ASSIGNMENT_LIMIT
    directions = None
    if not use_exact:
        if rng is None:
            raise ValueError(
                f"M = {mu_flow.size} > {EXACT_ASSIGNMENT_LIMIT}: sliced distance "
                "needs an rng for projection directions"
            )
        gen = rng.generator() if isinstance(rng, RngStream) else rng
        n_modes = mu_flow.clouds.shape[2]
        directions = gen.standard_normal((n_projections, n_modes))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    best = 0.0
    for j in range(mu_flow.n_times):
        mu_j = mu_flow.measure_at(j)
        nu_j = nu_flow.measure_at(j)
        if use_exact:
            w = wasserstein_exact(mu_j, nu_j, p)
        else:
            w = wasserstein_sliced(mu_j, nu_j, p, directions=directions)
        best = max(best, float(np.exp(-lambda_weight * mu_flow.times[j])) * w)
    return best


def save_measure(mu: EmpiricalMeasure, path, header: dict | None = None) -> None:
    """Persist a cloud with a JSON header (npz container)."""
    np.savez_compressed(
        path,
        particles=mu.particles,
        header=np.array(json.dumps(header or {}, sort_keys=True)),
    )


def load_measure(path) -> tuple[EmpiricalMeasure, dict]:
    with np.load(path, allow_pickle=False) as data:
        mu = EmpiricalMeasure(data["particles"])
        header = json.loads(str(data["header"]))
    return mu, header
