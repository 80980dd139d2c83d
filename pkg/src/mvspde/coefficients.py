"""Drift coefficient families and their effective constants.

A :class:`CoefficientSet` bundles the three drift maps of the model:

    B(x, mu_stat)        single-scale mean-field drift
    F(x, mu_stat, y)     slow drift of the two-scale system
    G(x, mu_stat, y)     fast drift of the two-scale system

All three are vectorised over leading axes: ``x`` and ``y`` are arrays whose
last axis is the mode axis, and the measure argument enters only through the
scalar statistic ``mu_stat`` = (mu |.|^p)^(1/p) of the current empirical law.
Routing the measure dependence through a 1-Lipschitz scalar functional keeps
the advertised Lipschitz constants exact: |mu_stat - nu_stat| <= W_p(mu, nu)
for any pair of laws, by coupling.

Two families ship with the package:

* ``bounded_smooth`` — saturating drifts built from tanh.  Satisfies every
  standing assumption (bounded F, global Lipschitz, strong dissipativity
  for |c| < lambda_1) and is the default for simulations and rate studies.
* ``linear_test`` — F(x, mu, y) = y, G = a x + c y, B = a x.  Linear, so the
  frozen (fast-variable) equation and the averaged drift have closed forms;
  used as the analytic oracle.  F is unbounded, so estimators that need
  bounded test functions refuse it.

Where the fast drift is affine in y with slope c, the frozen equation is an
alpha-stable Ornstein-Uhlenbeck system: mode k relaxes at rate
``lambda_k - c`` toward ``G_k(x, mu, 0) / (lambda_k - c)`` and its stationary
law is that point shifted by ``gamma_k / (alpha (lambda_k - c))**(1/alpha)``
times a standard alpha-stable variable.  Each family exposes the resulting
exact averaged drift through ``fbar_factory``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .spectral import OperatorSpec, AssumptionCheck, ValidationReport, validate_spec
from .noise import RngStream, CH_PROBE, stable_quadrature_rule
from .measures import EmpiricalMeasure, wasserstein_exact

__all__ = [
    "CoefficientSet",
    "BuiltinFamily",
    "bounded_smooth",
    "linear_test",
    "build_family",
    "ProbeReport",
    "probe_lipschitz",
    "EffectiveConstants",
    "effective_constants",
    "assumption_report",
]


@dataclass(frozen=True)
class CoefficientSet:
    """Drift maps plus their declared analytic constants.

    ``lip_C`` bounds B and F in every argument slot (state, measure,
    fast variable) and G in its state and measure slots; ``lip_G_y`` is
    G's Lipschitz constant in the fast variable alone — the number that
    competes with the spectral gap in the dissipativity condition.
    ``p`` is the moment order of the measure statistic the maps consume;
    it must match the operator spec the set is used with.

    ``fbar_factory(spec)``, when present, returns the exact averaged slow
    drift ``(x, mu_stat) -> field`` obtained by integrating F against the
    stationary law of the frozen equation.
    """

    variant: str
    B: Callable
    F: Callable
    G: Callable
    lip_C: float
    lip_G_y: float
    p: float
    F_bounded: bool
    bound_const: float
    fbar_factory: Callable | None = None
    # slope of G in y when affine (frozen equation is then exactly soluble)
    g_y_slope: float | None = None


def bounded_smooth(
    spec: OperatorSpec,
    a: float = 1.0,
    b_mu: float = 0.5,
    c: float = 0.5,
    n_active: int | None = None,
) -> CoefficientSet:
    """Saturating tanh drifts on the first ``n_active`` modes.

        F_k(x, mu, y) = a tanh(x_k + y_k) [k <= K] + b_mu min(1, mu_stat) [k = 1]
        G_k(x, mu, y) = a tanh(x_k) [k <= K] + c y_k
        B = F(., ., 0)

    K defaults to min(4, n_modes).  F is bounded by a sqrt(K) + b_mu; the
    joint Lipschitz constant is max(a, b_mu) (tanh is 1-Lipschitz and the
    measure statistic enters through min(1, .)); G is Lipschitz with
    constant max(a, |c|) and its y-slope is exactly c.
    """
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}")
    if b_mu < 0:
        raise ValueError(f"b_mu must be >= 0, got {b_mu}")
    k_act = min(4, spec.n_modes) if n_active is None else int(n_active)
    if not (1 <= k_act <= spec.n_modes):
        raise ValueError(f"n_active must lie in [1, {spec.n_modes}], got {n_active}")
    active = np.zeros(spec.n_modes)
    active[:k_act] = 1.0
    e1 = np.zeros(spec.n_modes)
    e1[0] = 1.0

    def F(x, mu_stat, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return a * np.tanh(x + y) * active + (b_mu * min(1.0, float(mu_stat))) * e1

    def G(x, mu_stat, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return a * np.tanh(x) * active + c * y

    def B(x, mu_stat):
        return F(x, mu_stat, 0.0)

    def fbar_factory(op_spec: OperatorSpec):
        return _tanh_fbar(op_spec, a=a, b_mu=b_mu, c=c, k_act=k_act)

    return CoefficientSet(
        variant="bounded_smooth",
        B=B,
        F=F,
        G=G,
        lip_C=max(a, b_mu),
        lip_G_y=abs(c),
        p=spec.p,
        F_bounded=True,
        bound_const=a * np.sqrt(k_act) + b_mu,
        fbar_factory=fbar_factory,
        g_y_slope=c,
    )


def linear_test(spec: OperatorSpec, a: float = 1.0, c: float = 0.5) -> CoefficientSet:
    """Linear oracle family: F = y, G = a x + c y, B = a x.

    Everything about the frozen and averaged dynamics is closed-form here:
    frozen mode k relaxes at rate lambda_k - c toward a x_k / (lambda_k - c),
    and since F just reads off the fast variable, the averaged drift is that
    fixed point.  F is unbounded, so this family is for oracle tests, not
    for heavy-tail-sensitive estimators.
    """

    def F(x, mu_stat, y):
        y = np.asarray(y, dtype=float)
        return y + np.zeros_like(np.asarray(x, dtype=float))

    def G(x, mu_stat, y):
        return a * np.asarray(x, dtype=float) + c * np.asarray(y, dtype=float)

    def B(x, mu_stat):
        return a * np.asarray(x, dtype=float)

    def fbar_factory(op_spec: OperatorSpec):
        kappa = op_spec.eigenvalues - c
        if np.any(kappa <= 0):
            raise ValueError(
                f"frozen relaxation rates must be positive; min(lambda_k) - c = "
                f"{op_spec.lambda_1 - c:.6g}"
            )

        def fbar(x, mu_stat):
            return a * np.asarray(x, dtype=float) / kappa

        return fbar

    return CoefficientSet(
        variant="linear_test",
        B=B,
        F=F,
        G=G,
        lip_C=max(1.0, abs(a)),
        lip_G_y=abs(c),
        p=spec.p,
        F_bounded=False,
        bound_const=np.inf,
        fbar_factory=fbar_factory,
        g_y_slope=c,
    )


# fbar evaluators keyed by (spectrum, family) parameters: building the
# quadrature tables costs ~a second, and forked workers inherit warm entries
_FBAR_TABLE_CACHE: dict = {}


def _tanh_fbar(spec: OperatorSpec, a: float, b_mu: float, c: float, k_act: int):
    """Exact averaged drift for the tanh family via stable quadrature tables.

    With G affine in y (slope c), frozen mode k is stationary at
    m_k = a tanh(x_k) / (lambda_k - c) shifted by zeta_k S, where
    zeta_k = gamma_k / (alpha (lambda_k - c))**(1/alpha).  Averaging the
    slow drift over that law needs Phi_zeta(u) = E[tanh(u + zeta S)], which
    is precomputed on a grid per distinct zeta and linearly interpolated.
    Outside the grid Phi is clamped to its end values; the clamp error is
    bounded by the stable tail mass beyond the grid edge, ~ (zeta/40)^alpha.
    """
    cache_key = (
        spec.n_modes, spec.a, spec.g, spec.c_lambda, spec.c_gamma, spec.alpha,
        a, b_mu, c, k_act,
    )
    if cache_key in _FBAR_TABLE_CACHE:
        return _FBAR_TABLE_CACHE[cache_key]
    lam = spec.eigenvalues
    kappa = lam - c
    if np.any(kappa[:k_act] <= 0):
        raise ValueError(
            f"frozen relaxation rates must be positive on active modes; "
            f"lambda_1 - c = {spec.lambda_1 - c:.6g}"
        )
    zeta = spec.fast_amplitudes / (spec.alpha * np.abs(kappa)) ** (1.0 / spec.alpha)
    nodes, weights = stable_quadrature_rule(spec.alpha)
    u_grid = np.arange(-40.0, 40.0 + 1e-12, 0.02)
    tables = {}
    for k in range(k_act):
        z = round(float(zeta[k]), 12)
        if z not in tables:
            # Phi(u) = sum_i w_i tanh(u + z s_i); rows are u, columns nodes
            tables[z] = np.tanh(u_grid[:, None] + z * nodes[None, :]) @ weights
    e1 = np.zeros(spec.n_modes)
    e1[0] = 1.0
    zeta_keys = [round(float(zeta[k]), 12) for k in range(k_act)]

    def fbar(x, mu_stat):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for k in range(k_act):
            u = x[..., k] + a * np.tanh(x[..., k]) / kappa[k]
            out[..., k] = a * np.interp(u, u_grid, tables[zeta_keys[k]])
        return out + (b_mu * min(1.0, float(mu_stat))) * e1

    _FBAR_TABLE_CACHE[cache_key] = fbar
    return fbar


@dataclass(frozen=True)
class BuiltinFamily:
    """Picklable recipe for a built-in coefficient family.

    Workers rebuild coefficient sets from this instead of shipping closures
    across process boundaries.
    """

    variant: str
    a: float = 1.0
    b_mu: float = 0.5
    c: float = 0.5
    n_active: int | None = None

    def build(self, spec: OperatorSpec) -> CoefficientSet:
        return build_family(
            self.variant, spec, a=self.a, b_mu=self.b_mu, c=self.c, n_active=self.n_active
        )


def build_family(variant: str, spec: OperatorSpec, **params) -> CoefficientSet:
    """Construct a built-in family by name (config-file entry point)."""
    if variant == "bounded_smooth":
        kw = {k: v for k, v in params.items() if v is not None}
        return bounded_smooth(spec, **kw)
    if variant == "linear_test":
        kw = {k: params[k] for k in ("a", "c") if params.get(k) is not None}
        return linear_test(spec, **kw)
    raise ValueError(
        f"unknown coefficient variant {variant!r}; "
        "built-ins are 'bounded_smooth' and 'linear_test'"
    )


@dataclass(frozen=True)
class ProbeReport:
    n_probes: int
    worst_ratio: dict  # coefficient name -> max observed (increment / declared bound)
    passed: bool


def probe_lipschitz(
    coeffs: CoefficientSet,
    spec: OperatorSpec,
    n_probes: int = 200,
    rng: RngStream | None = None,
    cloud_size: int = 8,
    scale: float = 2.0,
) -> ProbeReport:
    """Empirically probe the declared Lipschitz constants.

    Draws random argument pairs (fields at the given scale, small particle
    clouds for the measure slot) and compares each coefficient's increment
    against its declared bound times the argument displacement, where the
    measure displacement is the exact W_p between the probe clouds.  The
    report's ``passed`` says no probe exceeded its bound (tolerance 1e-9
    for rounding).
    """
    if rng is None:
        rng = RngStream(0, channel=CH_PROBE)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    n = spec.n_modes
    worst = {"B": 0.0, "F": 0.0, "G": 0.0}
    for _ in range(n_probes):
        x1, x2, y1, y2 = scale * gen.standard_normal((4, n))
        c1 = EmpiricalMeasure(gen.standard_normal((cloud_size, n)))
        c2 = EmpiricalMeasure(gen.standard_normal((cloud_size, n)))
        w = wasserstein_exact(c1, c2, spec.p)
        m1, m2 = c1.moment(spec.p), c2.moment(spec.p)
        dx = np.linalg.norm(x1 - x2)
        dy = np.linalg.norm(y1 - y2)

        num_b = np.linalg.norm(coeffs.B(x1, m1) - coeffs.B(x2, m2))
        den_b = coeffs.lip_C * (dx + w)
        if den_b > 1e-12:
            worst["B"] = max(worst["B"], num_b / den_b)

        num_f = np.linalg.norm(coeffs.F(x1, m1, y1) - coeffs.F(x2, m2, y2))
        den_f = coeffs.lip_C * (dx + w + dy)
        if den_f > 1e-12:
            worst["F"] = max(worst["F"], num_f / den_f)

        num_g = np.linalg.norm(coeffs.G(x1, m1, y1) - coeffs.G(x2, m2, y2))
        den_g = coeffs.lip_C * (dx + w) + coeffs.lip_G_y * dy
        if den_g > 1e-12:
            worst["G"] = max(worst["G"], num_g / den_g)

    passed = all(v <= 1.0 + 1e-9 for v in worst.values())
    return ProbeReport(n_probes=n_probes, worst_ratio=worst, passed=passed)


@dataclass(frozen=True)
class EffectiveConstants:
    lip_C: float
    lip_G_y: float
    gap: float                 # lambda_1 - lip_G_y
    strongly_dissipative: bool
    fbar_lip: float            # Lipschitz bound for the averaged drift
    contraction_lambda: float  # weight making the law map a strict contraction


def effective_constants(coeffs: CoefficientSet, spec: OperatorSpec) -> EffectiveConstants:
    """Derived constants controlling well-posedness and averaging.

    The spectral gap net of the fast drift's y-slope, lambda_1 - lip_G_y,
    must be positive for the frozen equation to mix.  The frozen fixed
    point then moves by at most lip_C/gap per unit displacement of (x, mu),
    so the averaged drift inherits Lipschitz constant
    lip_C * (1 + lip_C / gap) in (x, mu).  A weight lambda > 2 lip_C makes
    the law map a contraction in the weighted flow metric; we report
    4 lip_C as a comfortable default.
    """
    gap = spec.lambda_1 - coeffs.lip_G_y
    fbar_lip = coeffs.lip_C * (1.0 + coeffs.lip_C / gap) if gap > 0 else np.inf
    return EffectiveConstants(
        lip_C=coeffs.lip_C,
        lip_G_y=coeffs.lip_G_y,
        gap=gap,
        strongly_dissipative=gap > 0,
        fbar_lip=float(fbar_lip),
        contraction_lambda=4.0 * coeffs.lip_C,
    )


def assumption_report(spec: OperatorSpec, coeffs: CoefficientSet) -> ValidationReport:
    """Full admissibility report: spectrum checks plus coefficient checks.

    Extends :func:`mvspde.spectral.validate_spec` with

    * B1 — regularity of the coefficient maps (structural for the built-in
      families: compositions of affine maps, tanh and min are jointly
      continuous and Lipschitz);
    * B3 — strong dissipativity, lambda_1 - L_G > 0 with L_G the fast
      drift's Lipschitz constant in the fast variable, plus boundedness of
      the slow drift where declared.
    """
    base = validate_spec(spec)
    eff = effective_constants(coeffs, spec)
    checks = list(base.checks)
    checks.insert(2, AssumptionCheck(
        "B1", True,
        f"variant '{coeffs.variant}': continuous Lipschitz maps "
        f"(lip_C={coeffs.lip_C:.6g}, L_G={coeffs.lip_G_y:.6g})",
    ))
    b3_detail = (
        f"lambda_1 - L_G = {spec.lambda_1:.6g} - {coeffs.lip_G_y:.6g} "
        f"= {eff.gap:.6g}"
    )
    if not eff.strongly_dissipative:
        b3_detail += " <= 0"
    if coeffs.F_bounded:
        b3_detail += f"; |F| <= {coeffs.bound_const:.6g}"
    else:
        b3_detail += "; F unbounded (oracle family)"
    checks.append(AssumptionCheck("B3", eff.strongly_dissipative, b3_detail))
    return ValidationReport(tuple(checks))
