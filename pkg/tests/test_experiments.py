import json
import math

import numpy as np
import pytest

from mvspde import experiments as ex
from mvspde.coefficients import BuiltinFamily, CoefficientSet
from mvspde.experiments import (
    ExperimentResult,
    GridPoint,
    aux_gap_study,
    config_digest,
    ergodicity_study,
    fit_loglog,
    hoelder_study,
    load_result,
    persist,
    picard_study,
    rate_study,
    simulate_study,
)
from mvspde.multiscale import FrozenInput, MultiscaleConfig
from mvspde.solver import SimConfig
from mvspde.spectral import OperatorSpec


def law_blind_f_coeffs(n):
    f = lambda x, s: 0.5 * np.tanh(x)
    return CoefficientSet(
        variant="custom",
        B=lambda x, s: f(x, s),
        F=lambda x, s, y: f(x, s),
        G=lambda x, s, y: 0.3 * np.tanh(x) + 0.2 * y,
        lip_C=0.5, lip_G_y=0.2, p=1.0, F_bounded=True,
        bound_const=0.5 * np.sqrt(n),
        fbar_factory=lambda spec: (lambda x, s: f(x, s)),
        g_y_slope=0.2,
    )


EPS_GRID = (2**-4, 2**-5, 2**-6, 2**-7)


@pytest.fixture(scope="module")
def small_rate(spec4):
    fam = BuiltinFamily("bounded_smooth")
    base = SimConfig(spec=spec4, coeffs=fam.build(spec4), T=0.25, h=0.125,
                     M=16, seed=303, xi=0.3)
    return rate_study(base, EPS_GRID, family=fam, n_replicas=2), base, fam


class TestFitLoglog:
    def _grid(self, slope, stderr=0.01, n=5, c=2.0):
        return [GridPoint(param=0.5**i, error=c * (0.5**i) ** slope,
                          stderr=stderr * c * (0.5**i) ** slope)
                for i in range(n)]

    def test_recovers_exact_power_law(self):
        fit = fit_loglog(self._grid(0.7))
        assert fit.slope == pytest.approx(0.7, abs=1e-12)
        assert fit.intercept == pytest.approx(math.log10(2.0), abs=1e-12)
        assert fit.r2 == pytest.approx(1.0, abs=1e-12)
        assert fit.slope_stderr == pytest.approx(0.0, abs=1e-9)

    def test_huge_stderr_point_carries_no_weight(self):
        grid = self._grid(0.5) + [GridPoint(param=2.0, error=50.0,
                                            stderr=50.0 * 1e6)]
        fit = fit_loglog(grid)
        assert fit.slope == pytest.approx(0.5, abs=1e-3)

    def test_exclusions_honored(self):
        grid = self._grid(0.5) + [GridPoint(param=2.0, error=50.0,
                                            stderr=50.0 * 0.01)]
        polluted = fit_loglog(grid).slope
        clean = fit_loglog(grid, exclude={5}).slope
        assert abs(polluted - 0.5) > 0.1
        assert clean == pytest.approx(0.5, abs=1e-12)

    def test_two_points_have_no_slope_error_bar(self):
        fit = fit_loglog(self._grid(0.5, n=2))
        assert fit.slope == pytest.approx(0.5, abs=1e-12)
        assert math.isnan(fit.slope_stderr)

    def test_underdetermined_rejected(self):
        with pytest.raises(ValueError):
            fit_loglog(self._grid(0.5, n=1))


class TestPoolingHelpers:
    def test_split_counts_partition(self):
        for total, r in ((10, 3), (16, 4), (7, 7), (5, 2)):
            chunks = ex._split_counts(total, r)
            assert sum(c for _, c in chunks) == total
            sizes = [c for _, c in chunks]
            assert max(sizes) - min(sizes) <= 1
            offsets = [o for o, _ in chunks]
            assert offsets == sorted(offsets)
            assert offsets[0] == 0
        with pytest.raises(ValueError):
            ex._split_counts(3, 4)

    def test_pool_moments_matches_concatenation(self, rng):
        arrays = [rng.normal(size=n) ** 2 for n in (5, 11, 3)]
        parts = [(float(a.mean()), float(a.var(ddof=1)), a.size)
                 for a in arrays]
        mean, var, n = ex._pool_moments(parts)
        whole = np.concatenate(arrays)
        assert n == whole.size
        assert mean == pytest.approx(whole.mean(), rel=1e-12)
        assert var == pytest.approx(whole.var(ddof=1), rel=1e-12)


class TestConfigDigest:
    def test_key_order_irrelevant(self):
        a = {"x": 1, "y": {"b": 2.5, "a": [1, 2]}}
        b = {"y": {"a": [1, 2], "b": 2.5}, "x": 1}
        assert config_digest(a) == config_digest(b)
        assert len(config_digest(a)) == 12

    def test_value_sensitivity(self):
        assert config_digest({"x": 1.0}) != config_digest({"x": 1.0000001})


class TestIncrementRows:
    def test_hand_values(self):
        x = np.array([[0.0, 1.0, 3.0, 6.0, 10.0]]).reshape(1, 5, 1)
        rows = ex._increment_rows(x, 1.0, [1.0, 2.0])
        # one-step blocks: mean of |1|,|2|,|3|,|4|
        assert rows[0][0] == pytest.approx(2.5)
        # two-step blocks: |1-0|,|3-0|,|6-3|,|10-3|
        assert rows[1][0] == pytest.approx(3.5)
        assert rows[0][2] == 1


class TestRateStudy:
    def test_shape_and_metadata(self, small_rate):
        res, base, _ = small_rate
        assert res.kind == "rate"
        assert [g.param for g in res.grid] == [pytest.approx(e) for e in EPS_GRID]
        assert all(g.error > 0 for g in res.grid)
        assert res.meta["theory_slope"] == pytest.approx(0.25)  # theta = 1
        assert res.seeds == (303,) + tuple(range(8))
        assert res.runtime_s > 0
        assert res.fitted_slope is not None

    def test_bitwise_rerun(self, small_rate, spec4):
        res, base, fam = small_rate
        again = rate_study(base, EPS_GRID, family=fam, n_replicas=2)
        assert again.grid == res.grid
        assert again.config_hash == res.config_hash
        assert again.seeds == res.seeds

    def test_worker_count_invisible_in_results(self, small_rate):
        res, base, fam = small_rate
        forked = rate_study(base, EPS_GRID, family=fam, n_replicas=2,
                            n_workers=2)
        assert forked.grid == res.grid

    def test_theta_four_thirds_theory_slope(self):
        spec = OperatorSpec(n_modes=2, a=2.0, b=1.0, g=1.0, alpha=1.5,
                            theta=4.0 / 3.0, p=1.0)
        fam = BuiltinFamily("bounded_smooth", n_active=2)
        base = SimConfig(spec=spec, coeffs=fam.build(spec), T=0.25, h=0.125,
                         M=4, seed=1, xi=0.2)
        res = rate_study(base, EPS_GRID, family=fam, n_replicas=1)
        assert res.meta["theory_slope"] == pytest.approx(2.0 / 7.0)

    def test_grid_validation(self, small_rate):
        _, base, fam = small_rate
        with pytest.raises(ValueError):
            rate_study(base, EPS_GRID[:3], family=fam)        # too short
        with pytest.raises(ValueError):
            rate_study(base, EPS_GRID[::-1], family=fam)      # increasing
        with pytest.raises(ValueError):
            rate_study(base, EPS_GRID, family=None, n_workers=2)

    def test_y_blind_drift_hits_noise_floor(self, spec4):
        base = SimConfig(spec=spec4, coeffs=law_blind_f_coeffs(4), T=0.25,
                         h=0.125, M=8, seed=5, xi=0.3)
        res = rate_study(base, EPS_GRID, family=None, n_replicas=2)
        assert all(g.error == 0.0 for g in res.grid)
        assert all(res.flags[str(i)] == "noise-floor" for i in range(4))
        assert res.flags["fit"] == "degenerate"
        assert res.fitted_slope is None


class TestIncrementStudies:
    def _cfg(self, spec, coeffs, M=8, T=0.25, h_fast=2**-9, seed=29,
             epsilon=2**-5):
        base = SimConfig(spec=spec, coeffs=coeffs, T=T, h=T / 2, M=M,
                         seed=seed, xi=0.3)
        return MultiscaleConfig(base=base, epsilon=epsilon, h_fast=h_fast,
                                eta=0.1)

    def test_hoelder_shape(self, spec4, coeffs4):
        cfg = self._cfg(spec4, coeffs4)
        deltas = (2**-6, 2**-5, 2**-4, 2**-3)
        res = hoelder_study(cfg, deltas, n_replicas=2)
        assert res.kind == "hoelder"
        assert res.meta["theory_slope"] == pytest.approx(0.5)
        assert [g.param for g in res.grid] == list(deltas)
        assert all(g.error > 0 for g in res.grid)
        assert res.fitted_slope is not None

    def test_grid_is_postprocessing_only(self, spec4, coeffs4):
        cfg = self._cfg(spec4, coeffs4)
        fwd = hoelder_study(cfg, (2**-6, 2**-5, 2**-4), n_replicas=2)
        rev = hoelder_study(cfg, (2**-4, 2**-5, 2**-6), n_replicas=2)
        by_param = {g.param: g.error for g in rev.grid}
        for g in fwd.grid:
            assert by_param[g.param] == g.error

    def test_drift_dominated_regime_flagged(self):
        spec = OperatorSpec(n_modes=2, a=2.0, b=1.0, g=1.0, c_beta=1e-300,
                            c_gamma=1e-300, alpha=1.5, theta=1.0, p=1.0)
        lin = CoefficientSet(
            variant="custom", B=lambda x, s: 0.8 * x,
            F=lambda x, s, y: 0.8 * x, G=lambda x, s, y: np.zeros(2),
            lip_C=0.8, lip_G_y=0.0, p=1.0, F_bounded=False,
            bound_const=np.inf, fbar_factory=None, g_y_slope=0.0,
        )
        cfg = self._cfg(spec, lin, M=1, T=0.5, h_fast=2**-8, epsilon=2**-4)
        res = hoelder_study(cfg, (2**-6, 2**-5, 2**-4, 2**-3), n_replicas=1)
        assert res.fitted_slope == pytest.approx(1.0, abs=0.1)
        assert res.flags.get("fit") == "above-envelope"

    def test_delta_validation(self, spec4, coeffs4):
        cfg = self._cfg(spec4, coeffs4)
        with pytest.raises(ValueError, match="multiple"):
            hoelder_study(cfg, (0.1, 0.2), n_replicas=2)
        with pytest.raises(ValueError, match="at least 2"):
            hoelder_study(cfg, (2**-5,), n_replicas=2)

    def test_aux_gap_zero_when_g_ignores_slow(self, spec4):
        blind = CoefficientSet(
            variant="custom", B=lambda x, s: np.zeros(4),
            F=lambda x, s, y: 0.5 * np.tanh(y),
            G=lambda x, s, y: 0.4 * np.tanh(y),
            lip_C=0.5, lip_G_y=0.4, p=1.0, F_bounded=True, bound_const=1.0,
            fbar_factory=None, g_y_slope=0.4,
        )
        cfg = self._cfg(spec4, blind)
        res = aux_gap_study(cfg, (2**-6, 2**-5, 2**-4), n_replicas=2)
        assert res.kind == "aux-gap"
        assert all(g.error == 0.0 for g in res.grid)
        assert res.flags["fit"] == "degenerate"

    def test_aux_gap_positive_and_shrinking(self, spec4, coeffs4):
        cfg = self._cfg(spec4, coeffs4, M=16)
        res = aux_gap_study(cfg, (2**-6, 2**-4), n_replicas=2)
        errs = {g.param: g.error for g in res.grid}
        assert errs[2**-6] > 0
        assert errs[2**-6] < errs[2**-4]


class TestErgodicityStudy:
    def test_linear_rates_and_no_signal_probe(self, spec2, linear2):
        probes = [
            FrozenInput(x=np.array([2.0, 0.0]), mu_stat=2.0, y0=np.zeros(2)),
            FrozenInput(x=np.array([2.0, 0.0]), mu_stat=2.0,
                        y0=np.array([4.0, 0.0])),   # stationary mean
        ]
        res = ergodicity_study(probes, spec2, linear2,
                               np.arange(0.5, 4.01, 0.5), ensemble=2500,
                               seed=14)
        assert res.kind == "ergodicity"
        assert res.meta["theory_rate"] == pytest.approx(0.5)
        assert abs(res.grid[0].error - 0.5) < 0.075
        assert res.flags.get("1") == "no-signal"
        assert math.isnan(res.grid[1].error)
        assert res.fitted_slope is None

    def test_stiff_gap(self):
        spec = OperatorSpec(n_modes=2, a=2.0, b=1.0, g=1.0, c_lambda=4.0,
                            alpha=1.5, theta=1.0, p=1.0)
        from mvspde.coefficients import build_family
        co = build_family("linear_test", spec, a=1.0, c=0.5)
        # start well away from the stationary mean (~0.571) so the decay
        # curve towers over the MC floor across the whole window
        probes = [FrozenInput(x=np.array([2.0, 0.0]), mu_stat=2.0,
                              y0=np.array([4.0, 0.0]))]
        res = ergodicity_study(probes, spec, co,
                               np.arange(0.1, 0.81, 0.1), ensemble=4000,
                               seed=15)
        assert res.meta["theory_rate"] == pytest.approx(3.5)
        assert abs(res.grid[0].error - 3.5) < 0.5

    def test_empty_probe_list_rejected(self, spec2, linear2):
        with pytest.raises(ValueError):
            ergodicity_study([], spec2, linear2, np.arange(0.5, 2.01, 0.5))


class TestStudyWrappers:
    def test_picard_study_trace(self, spec4, coeffs4):
        cfg = SimConfig(spec=spec4, coeffs=coeffs4, T=0.5, h=1 / 16, M=32,
                        seed=23, xi=0.3)
        res = picard_study(cfg, n_iters=5)
        assert res.kind == "picard"
        assert [g.param for g in res.grid] == [1.0, 2.0, 3.0, 4.0, 5.0]
        assert res.meta["contracting"] is True
        assert res.meta["lambda_weight"] == pytest.approx(4.0 * coeffs4.lip_C)
        floor = res.meta["noise_floor_iter"]
        upto = len(res.grid) if floor is None else floor
        for i in range(1, upto):
            assert res.grid[i].error < res.grid[i - 1].error
        if floor is not None:
            assert res.flags[str(floor)] == "noise-floor"

    def test_simulate_study_curve(self, spec4, coeffs4):
        cfg = SimConfig(spec=spec4, coeffs=coeffs4, T=0.5, h=1 / 16, M=64,
                        seed=2, xi=0.4)
        res = simulate_study(cfg)
        assert res.kind == "simulate"
        assert res.grid[0].param == 0.0
        assert res.grid[0].error == pytest.approx(np.linalg.norm(cfg.xi))
        assert res.grid[0].stderr == pytest.approx(0.0, abs=1e-15)
        assert len(res.grid) == 9
        assert res.meta["stable"] in (True, False)
        assert res.meta["sup_moment"] >= max(g.error for g in res.grid) - 1e-12


class TestPersistence:
    def test_round_trip(self, small_rate, tmp_path):
        res, _, _ = small_rate
        manifest = persist(res, tmp_path)
        assert manifest.name == "manifest.json"
        loaded = load_result(manifest)
        assert loaded.kind == res.kind
        assert loaded.grid == res.grid
        assert loaded.fitted_slope == res.fitted_slope
        assert loaded.slope_stderr == res.slope_stderr
        assert loaded.fit_r2 == res.fit_r2
        assert loaded.config == res.config
        assert loaded.config_hash == res.config_hash
        assert loaded.seeds == res.seeds
        assert loaded.flags == res.flags
        assert loaded.meta == res.meta

    def test_reruns_byte_identical(self, small_rate, tmp_path):
        res, base, fam = small_rate
        again = rate_study(base, EPS_GRID, family=fam, n_replicas=2)
        p1 = persist(res, tmp_path / "a").parent
        p2 = persist(again, tmp_path / "b").parent
        for name in ("result.csv", "meta.json", "loglog.dat"):
            assert (p1 / name).read_bytes() == (p2 / name).read_bytes()

    def test_empty_grid_refused_before_writing(self, small_rate, tmp_path):
        res, _, _ = small_rate
        import dataclasses
        hollow = dataclasses.replace(res, grid=())
        out = tmp_path / "nothing"
        with pytest.raises(ValueError, match="empty"):
            persist(hollow, out)
        assert not out.exists()

    def test_digest_mismatch_detected(self, small_rate, tmp_path):
        res, _, _ = small_rate
        manifest = persist(res, tmp_path)
        csv = manifest.parent / "result.csv"
        csv.write_text(csv.read_text().replace("0", "1", 1))
        with pytest.raises(ValueError, match="digest"):
            load_result(manifest)

    def test_csv_and_dat_layout(self, small_rate, tmp_path):
        res, _, _ = small_rate
        manifest = persist(res, tmp_path)
        lines = (manifest.parent / "result.csv").read_text().splitlines()
        assert lines[0] == "param,error,stderr"
        assert len(lines) == 1 + len(res.grid)
        first = lines[1].split(",")
        assert float(first[0]) == res.grid[0].param
        assert float(first[1]) == res.grid[0].error  # repr round-trip
        dat = (manifest.parent / "loglog.dat").read_text().splitlines()
        assert dat[0].startswith("#")
        cols = dat[1].split()
        assert float(cols[0]) == pytest.approx(math.log10(res.grid[0].param))
        assert float(cols[1]) == pytest.approx(math.log10(res.grid[0].error))
        meta = json.loads((manifest.parent / "meta.json").read_text())
        assert "runtime_s" not in meta  # timings live in the manifest only
        man = json.loads(manifest.read_text())
        assert man["runtime_s"] > 0
