import copy
import json
from pathlib import Path

import pytest

from mvspde.cli import run
from mvspde.config import (
    ConfigError,
    build_coeffs,
    build_multiscale,
    build_sim,
    build_spec,
    load_config,
)

REPO = Path(__file__).resolve().parents[1]

BASE_CFG = {
    "operator": {"n_modes": 4, "a": 2.0, "b": 1.0, "g": 1.0, "alpha": 1.5,
                 "theta": 1.0, "p": 1.0},
    "coefficients": {"variant": "bounded_smooth", "K": 4},
    "sim": {"T": 0.25, "h": 0.0625, "M": 16, "seed": 5,
            "xi": [0.5, -0.3, 0.2, 0.0]},
    "study": {"kind": "rate", "grid": [0.125, 0.0625, 0.03125, 0.015625],
              "m": 1.0, "h_fast_ratio": 0.0625, "n_replicas": 2,
              "out_dir": "out"},
}


def write_cfg(tmp_path, name="cfg.json", **section_overrides):
    cfg = copy.deepcopy(BASE_CFG)
    for section, changes in section_overrides.items():
        if changes is None:
            cfg.pop(section, None)
        else:
            cfg[section].update(changes)
            for k in [k for k, v in changes.items() if v is None]:
                del cfg[section][k]
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def manifest_of(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    path = Path(out[-1])
    assert path.name == "manifest.json" and path.exists()
    return path


class TestValidate:
    def test_shipped_default_config_passes(self, capsys):
        code = run(["validate", "--config", str(REPO / "configs/default.json")])
        out = capsys.readouterr().out.splitlines()
        assert code == 0
        names = [line.split()[0].rstrip(":") for line in out]
        assert names == ["A1", "A3", "B1", "B2-slow", "B2-fast", "B3"]
        assert all("pass" in line for line in out)

    def test_vanishing_gap_names_dissipativity(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, coefficients={"c": 1.0})
        code = run(["validate", "--config", cfg])
        captured = capsys.readouterr()
        assert code == 2
        assert "B3" in captured.err
        assert "lambda_1 - L_G" in captured.out + captured.err

    def test_unknown_key_rejected_with_pointer(self, tmp_path, capsys):
        raw = copy.deepcopy(BASE_CFG)
        raw["operator"]["n_mode"] = 4
        path = tmp_path / "typo.json"
        path.write_text(json.dumps(raw))
        assert run(["validate", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "/operator" in err and "n_mode" in err

    def test_out_of_range_alpha_pointer(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, operator={"alpha": 2.0})
        assert run(["validate", "--config", cfg]) == 2
        assert "/operator/alpha" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        assert run(["validate", "--config", str(tmp_path / "nope.json")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_unparseable_file(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert run(["validate", "--config", str(bad)]) == 2


class TestComputeGuards:
    def test_failed_assumption_blocks_compute(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, coefficients={"c": 1.0})
        assert run(["simulate", "--config", cfg]) == 2
        assert "B3" in capsys.readouterr().err

    def test_kind_mismatch_guard(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)  # study.kind = rate
        assert run(["simulate", "--config", cfg]) == 2
        assert "/study/kind" in capsys.readouterr().err

    def test_missing_grid(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, study={"grid": None})
        assert run(["rate-study", "--config", cfg]) == 2
        assert "/study/grid" in capsys.readouterr().err

    def test_hoelder_needs_fast_step(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, study={"kind": "hoelder",
                                         "grid": [0.125, 0.0625]})
        assert run(["hoelder-study", "--config", cfg]) == 2
        assert "/sim/h_fast" in capsys.readouterr().err

    def test_unwritable_output_is_runtime_error(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        blocker = tmp_path / "blocked"
        blocker.write_text("")
        code = run(["rate-study", "--config", cfg, "--out", str(blocker)])
        assert code == 1
        assert "runtime error" in capsys.readouterr().err


class TestSmokeRuns:
    def test_shipped_smoke_rate_study(self, tmp_path, capsys):
        code = run(["rate-study", "--config", str(REPO / "configs/smoke.json"),
                    "--out", str(tmp_path)])
        assert code == 0
        manifest = manifest_of(capsys)
        rows = (manifest.parent / "result.csv").read_text().splitlines()
        assert len(rows) == 1 + 4

    def test_simulate(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, study={"kind": "simulate", "grid": None,
                                         "h_fast_ratio": None,
                                         "n_replicas": None})
        code = run(["simulate", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 0
        manifest = manifest_of(capsys)
        meta = json.loads((manifest.parent / "meta.json").read_text())
        assert meta["kind"] == "simulate"

    def test_picard(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, sim={"M": 128},
                        study={"kind": "picard", "grid": None, "n_iters": 4,
                               "h_fast_ratio": None, "n_replicas": None})
        assert run(["picard", "--config", cfg, "--out",
                    str(tmp_path / "o")]) == 0
        meta = json.loads((manifest_of(capsys).parent / "meta.json").read_text())
        assert meta["meta"]["contracting"] is True

    def test_ergodicity(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path,
            operator={"n_modes": 2},
            coefficients={"variant": "linear_test", "a": 1.0, "c": 0.5,
                          "K": None},
            sim={"xi": [2.0, 0.0], "M": 16},
            study={"kind": "ergodicity", "grid": [0.5, 1.0, 1.5, 2.0, 2.5, 3.0],
                   "ensemble": 1500, "h_fast_ratio": None, "n_replicas": None,
                   "m": None},
        )
        assert run(["ergodicity", "--config", cfg, "--out",
                    str(tmp_path / "o")]) == 0
        manifest = manifest_of(capsys)
        meta = json.loads((manifest.parent / "meta.json").read_text())
        assert meta["meta"]["theory_rate"] == pytest.approx(0.5)
        rates = [row.split(",")[1] for row in
                 (manifest.parent / "result.csv").read_text().splitlines()[1:]]
        assert all(abs(float(r) - 0.5) < 0.15 for r in rates)

    def test_hoelder(self, tmp_path, capsys):
        cfg = write_cfg(
            tmp_path,
            sim={"T": 0.5, "h": 0.03125, "M": 32, "h_fast": 2**-9},
            study={"kind": "hoelder", "grid": [0.125, 0.0625, 0.03125, 0.015625],
                   "epsilon": 0.03125, "h_fast_ratio": None, "n_replicas": 2,
                   "m": None},
        )
        assert run(["hoelder-study", "--config", cfg, "--out",
                    str(tmp_path / "o")]) == 0
        out = capsys.readouterr().out
        assert "fitted slope" in out


class TestDeterminismFlags:
    def test_threads_do_not_change_results(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert run(["rate-study", "--config", cfg, "--out",
                    str(tmp_path / "t1")]) == 0
        m1 = manifest_of(capsys)
        assert run(["rate-study", "--config", cfg, "--threads", "2", "--out",
                    str(tmp_path / "t2")]) == 0
        m2 = manifest_of(capsys)
        for name in ("result.csv", "meta.json", "loglog.dat"):
            assert (m1.parent / name).read_bytes() == \
                (m2.parent / name).read_bytes()

    def test_seed_override_changes_hash_reproducibly(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert run(["rate-study", "--config", cfg, "--seed", "99", "--out",
                    str(tmp_path / "s1")]) == 0
        m1 = manifest_of(capsys)
        assert run(["rate-study", "--config", cfg, "--seed", "99", "--out",
                    str(tmp_path / "s2")]) == 0
        m2 = manifest_of(capsys)
        assert m1.parent.name == m2.parent.name  # same overridden config hash
        assert (m1.parent / "result.csv").read_bytes() == \
            (m2.parent / "result.csv").read_bytes()
        assert run(["rate-study", "--config", cfg, "--out",
                    str(tmp_path / "s3")]) == 0
        m3 = manifest_of(capsys)
        assert m3.parent.name != m1.parent.name
        assert (m3.parent / "result.csv").read_bytes() != \
            (m1.parent / "result.csv").read_bytes()


class TestConfigBuilders:
    def test_load_and_build_round(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path))
        spec = build_spec(cfg)
        assert spec.n_modes == 4
        coeffs = build_coeffs(cfg, spec)
        assert coeffs.variant == "bounded_smooth"
        base = build_sim(cfg, spec, coeffs)
        assert base.M == 16 and base.seed == 5
        assert base.xi[0] == 0.5

    def test_seed_override_plumbed(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path))
        spec = build_spec(cfg)
        coeffs = build_coeffs(cfg, spec)
        base = build_sim(cfg, spec, coeffs, seed_override=77)
        assert base.seed == 77

    def test_multiscale_pointer_errors(self, tmp_path):
        cfg = load_config(write_cfg(tmp_path))
        spec = build_spec(cfg)
        coeffs = build_coeffs(cfg, spec)
        base = build_sim(cfg, spec, coeffs)
        with pytest.raises(ConfigError) as exc:
            build_multiscale(cfg, base)
        assert exc.value.pointer == "/sim/h_fast"
        cfg["sim"]["h_fast"] = 2**-9
        with pytest.raises(ConfigError) as exc:
            build_multiscale(cfg, base)
        assert exc.value.pointer == "/study/epsilon"
        cfg["study"]["epsilon"] = 2**-5
        ms = build_multiscale(cfg, base)
        assert ms.epsilon == 2**-5 and ms.h_fast == 2**-9

    def test_schema_reports_first_error_by_path(self, tmp_path):
        raw = copy.deepcopy(BASE_CFG)
        raw["operator"]["alpha"] = 2.5
        raw["study"]["kind"] = "nonsense"
        path = tmp_path / "multi.json"
        path.write_text(json.dumps(raw))
        with pytest.raises(ConfigError) as exc:
            load_config(str(path))
        assert exc.value.pointer == "/operator/alpha"
