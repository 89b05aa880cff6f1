import io
import json
import math
import shutil
from pathlib import Path

import numpy as np
import pytest

from impstab.cache import CACHE_ENV, cache_dir, load_stages, store_stages
from impstab.cli import EXIT_ERROR, EXIT_INFEASIBLE, EXIT_OK, main
from impstab.config import load_config, parse_config
from impstab.errors import CacheMissError, ConfigError
from impstab.probe import probe_map
from impstab.spectrum import eigendata

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue()


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    """Copies of the shipped configs, with the cache kept inside the temp dir."""
    for path in CONFIGS.glob("*.json"):
        shutil.copy(path, tmp_path / path.name)
    monkeypatch.delenv(CACHE_ENV, raising=False)
    return tmp_path


def minimal(**overrides):
    data = {
        "system": {"a0": [[1.0]], "a1": [[0.0]], "tau": 1.0},
        "control": {"basis": "explicit", "matrices": [[[1.0]]]},
        "synthesis": {"h": 1.0, "gamma": -0.2},
        "spectrum": {"N": 10, "eig_lower": 0.0},
    }
    for dotted, value in overrides.items():
        node = data
        keys = dotted.split("__")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value
    return data


class TestConfig:
    @pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
    def test_shipped_configs_roundtrip(self, name):
        cfg = load_config(CONFIGS / name)
        again = parse_config(json.loads(cfg.to_json()))
        assert again.canonical == cfg.canonical
        assert again.config_hash() == cfg.config_hash()
        cfg.system()
        cfg.control_space()
        cfg.problem()

    def test_defaults(self):
        c = parse_config(minimal()).canonical
        assert c["flags"]["refining"] is False
        assert c["spectrum"]["eig_upper"] == "inf"
        assert c["synthesis"]["solver"]["budget"] == 100_000

    def test_fraction_string(self):
        cfg = parse_config(minimal(synthesis__h="2/11"))
        assert cfg.h == pytest.approx(2 / 11, rel=1e-15)

    def test_hash_ignores_key_order(self):
        a = parse_config(minimal())
        b = parse_config(json.loads(json.dumps(minimal(), sort_keys=True)))
        assert a.config_hash() == b.config_hash()

    def test_cache_key_ignores_gamma(self):
        a = parse_config(minimal())
        b = parse_config(minimal(synthesis__gamma=-0.5))
        assert a.cache_key() == b.cache_key() and a.config_hash() != b.config_hash()

    @pytest.mark.parametrize(
        "overrides, path",
        [
            ({"system__tau": -1.0}, "system.tau"),
            ({"system__a1": [[0.0, 1.0]]}, "system.a1"),
            ({"system__bogus": 1}, "system.bogus"),
            ({"synthesis__h": "abc"}, "synthesis.h"),
            ({"synthesis__gamma": True}, "synthesis.gamma"),
            ({"synthesis__guess": [1.0, 2.0]}, "synthesis.guess"),
            ({"synthesis__cost_weight": [1.0, 2.0]}, "synthesis.cost_weight"),
            ({"synthesis__cost_general": {"type": "l1"}}, "synthesis.cost_general.type"),
            ({"control__basis": "random"}, "control.basis"),
            ({"control__constraint": {"type": "box", "lower": 1, "upper": 0}}, "control.constraint"),
            ({"control__constraint": {"type": "box_columnsum"}}, "control.constraint.type"),
            ({"spectrum__N": 1}, "spectrum.N"),
            ({"flags__refining": "yes"}, "flags.refining"),
        ],
    )
    def test_field_path_errors(self, overrides, path):
        with pytest.raises(ConfigError) as info:
            parse_config(minimal(**overrides))
        assert info.value.path == path
        assert str(info.value).startswith(f"{path}:")

    def test_missing_section(self):
        data = minimal()
        del data["synthesis"]
        with pytest.raises(ConfigError) as info:
            parse_config(data)
        assert info.value.path == "synthesis"

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  \"system\": ,\n}")
        with pytest.raises(ConfigError, match="line 2"):
            load_config(path)

    def test_null_lower_means_unset(self):
        cfg = parse_config(minimal(spectrum__eig_lower=None))
        assert cfg.window() is None
        cfg = parse_config(minimal(spectrum__eig_lower="-inf"))
        assert cfg.window().lower == -math.inf


class TestCache:
    def test_roundtrip_exact(self, tmp_path, planar_sys):
        cfg = load_config(CONFIGS / "planar_delay.json")
        spectral = eigendata(planar_sys, 10, cfg.window())
        probe = probe_map(spectral, cfg.h, cfg.control_space())
        store_stages(tmp_path, "k", spectral, probe)
        s2, p2 = load_stages(tmp_path, "k")
        np.testing.assert_array_equal(s2.gamma, spectral.gamma)
        np.testing.assert_array_equal(p2.m0_vectorized, probe.m0_vectorized)
        assert s2.retained == spectral.retained

    def test_miss_and_stale(self, tmp_path):
        with pytest.raises(CacheMissError, match="refining disabled"):
            load_stages(tmp_path, "nothing")
        (tmp_path / "x.json").write_text("{not json")
        with pytest.raises(CacheMissError, match="corrupt"):
            load_stages(tmp_path, "x")
        (tmp_path / "y.json").write_text(json.dumps({"format": 1, "key": "other"}))
        with pytest.raises(CacheMissError, match="stale"):
            load_stages(tmp_path, "y")

    def test_env_override(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CACHE_ENV, str(tmp_path / "elsewhere"))
        assert cache_dir(Path("/some/config.json")) == tmp_path / "elsewhere"
        monkeypatch.delenv(CACHE_ENV)
        assert cache_dir(tmp_path / "c.json") == tmp_path / ".impstab-cache"


class TestSpectrumCommand:
    def test_planar_delay_table(self, workdir):
        code, out = run("spectrum", workdir / "planar_delay.json")
        assert code == EXIT_OK
        art = json.loads((workdir / "planar_delay.spectrum.json").read_text())
        refined = [complex(*z) for z in art["refined"] if z is not None]
        np.testing.assert_allclose([z.real for z in refined[:3]], [1.2160, -1.7915, -9.8122], atol=5e-3)
        assert "Found 1 eigenvalues with real part at least -0.000000" in out
        assert "spurious" in out and "retained" in out

    def test_diagonal_ode_message(self, workdir):
        code, out = run("spectrum", workdir / "diagonal_ode.json")
        assert code == EXIT_OK
        assert "Found 1 eigenvalues with real part at least -0.000000 for the input DDE" in out

    def test_no_delay_matches_a0(self, workdir):
        code, _ = run("spectrum", workdir / "diagonal_ode.json", "--out", workdir / "s.json")
        art = json.loads((workdir / "s.json").read_text())
        refined = sorted(complex(*z).real for z in art["refined"] if z is not None)
        np.testing.assert_allclose(refined, [-1.0, 1.0], atol=1e-8)

    def test_two_phase(self, workdir):
        code, out = run("spectrum", workdir / "planar_delay_explore.json")
        assert code == EXIT_OK
        assert "No eigenvalue window set" in out


class TestSynthesizeCommand:
    def test_scalar_ode(self, workdir):
        code, out = run("synthesize", workdir / "scalar_ode.json")
        assert code == EXIT_OK
        art = json.loads((workdir / "scalar_ode.artifacts.json").read_text())
        assert art["controller"]["coords"][0] == pytest.approx(-0.69881, abs=1e-5)
        assert art["controller"]["cost"] == pytest.approx(0.48833, abs=1e-5)
        assert art["controller"]["feasible"] is True
        assert "Performing optimization in probe space" in out
        assert "Local minimum found that satisfies the constraints." in out

    def test_infeasible_exit(self, workdir):
        code, out = run("synthesize", workdir / "scalar_dde_h_half.json")
        assert code == EXIT_INFEASIBLE
        assert "M0 of deficient rank; unconstrained problem might be infeasible" in out
        assert "Converged to an infeasible point." in out
        assert "rank(M0) = 1 < d^2 = 4" in out

    def test_refine_reuses_cache(self, workdir):
        cfg = workdir / "scalar_ode.json"
        cold_out = workdir / "cold.json"
        warm_out = workdir / "warm.json"
        assert run("synthesize", cfg, "--out", cold_out)[0] == EXIT_OK
        code, out = run("synthesize", cfg, "--refine", "--out", warm_out)
        assert code == EXIT_OK
        assert "stages skipped: spectrum, probe" in out
        cold, warm = json.loads(cold_out.read_text()), json.loads(warm_out.read_text())
        for art in (cold, warm):
            for stamp in ("started", "finished"):
                art["provenance"].pop(stamp)
        assert json.dumps(cold, sort_keys=True) == json.dumps(warm, sort_keys=True)

    def test_refining_flag_in_config(self, workdir):
        cfg = workdir / "scalar_ode.json"
        data = json.loads(cfg.read_text())
        data["flags"] = {"refining": True}
        warm = workdir / "warm_cfg.json"
        warm.write_text(json.dumps(data))
        # nothing cached yet for this directory
        code, _ = run("synthesize", warm)
        assert code == EXIT_ERROR
        assert run("synthesize", cfg)[0] == EXIT_OK
        code, out = run("synthesize", warm)
        assert code == EXIT_OK and "stages skipped" in out

    def test_cache_env(self, workdir, tmp_path_factory, monkeypatch):
        target = tmp_path_factory.mktemp("cache")
        monkeypatch.setenv(CACHE_ENV, str(target))
        assert run("synthesize", workdir / "scalar_ode.json")[0] == EXIT_OK
        assert any(target.glob("*.json"))
        assert not (workdir / ".impstab-cache").exists()

    def test_cache_miss_message(self, workdir, capsys):
        code, _ = run("synthesize", workdir / "scalar_ode.json", "--refine")
        assert code == EXIT_ERROR
        assert "run once with refining disabled" in capsys.readouterr().err

    def test_config_error_exit(self, workdir, capsys):
        bad = workdir / "bad.json"
        bad.write_text(json.dumps(minimal(system__tau=0)))
        assert run("synthesize", bad)[0] == EXIT_ERROR
        assert "system.tau" in capsys.readouterr().err

    def test_usage_error(self):
        assert run("synthesize")[0] == EXIT_ERROR
        assert run("bogus")[0] == EXIT_ERROR


class TestSimulateAndRate:
    def _controller(self, workdir, matrix):
        path = workdir / "ctrl.json"
        path.write_text(json.dumps({"matrix": matrix}))
        return path

    def test_diagonal_ode_contracts(self, workdir):
        ctrl = self._controller(workdir, [[-0.7128, 0], [0, 1.1219]])
        csv_path = workdir / "t.csv"
        code, out = run("simulate", workdir / "diagonal_ode.json", "--controller", ctrl, "--pulses", 20, "--out", csv_path)
        assert code == EXIT_OK
        assert "decaying" in out and "non-decaying" not in out
        lines = csv_path.read_text().splitlines()
        assert lines[0] == "t,x1,x2"
        final = np.array([float(v) for v in lines[-1].split(",")[1:]])
        assert np.linalg.norm(final) <= 1e-2 * math.sqrt(2)

    def test_diagonal_ode_first_run_flagged(self, workdir):
        ctrl = self._controller(workdir, [[-0.4512, 0], [0, 0.9024]])
        code, out = run("simulate", workdir / "diagonal_ode.json", "--controller", ctrl, "--pulses", 20)
        assert code == EXIT_OK
        assert "non-decaying" in out

    def test_zero_hurwitz(self, workdir):
        cfg = workdir / "hurwitz.json"
        cfg.write_text(json.dumps(minimal(system__a0=[[-1.0]])))
        code, out = run("simulate", cfg, "--zero", "--pulses", 5)
        assert code == EXIT_OK and "decaying" in out and "non-decaying" not in out

    def test_artifact_controller(self, workdir):
        assert run("synthesize", workdir / "scalar_ode.json")[0] == EXIT_OK
        code, out = run(
            "simulate", workdir / "scalar_ode.json", "--controller", workdir / "scalar_ode.artifacts.json", "--pulses", 10
        )
        assert code == EXIT_OK
        assert "per-period contraction" in out

    def test_dimension_mismatch(self, workdir, capsys):
        ctrl = self._controller(workdir, [[1.0]])
        code, _ = run("simulate", workdir / "diagonal_ode.json", "--controller", ctrl, "--pulses", 2)
        assert code == EXIT_ERROR
        assert "n=2" in capsys.readouterr().err

    def test_rate_on_exponential(self, workdir):
        csv_path = workdir / "exp.csv"
        t = np.linspace(0, 10, 51)
        rows = ["t,x1"] + [f"{float(ti)!r},{math.exp(-0.5 * ti)!r}" for ti in t]
        csv_path.write_text("\n".join(rows) + "\n")
        code, out = run("rate", csv_path)
        assert code == EXIT_OK
        slope = float(out.split()[1])
        assert slope == pytest.approx(-0.5, abs=1e-6)

    def test_rate_planar_delay(self, workdir):
        cfg = workdir / "planar_delay.json"
        ctrl = self._controller(workdir, [[-0.3189, 0], [0, -0.5453]])
        csv_path = workdir / "p.csv"
        assert run("simulate", cfg, "--controller", ctrl, "--pulses", 400, "--out", csv_path)[0] == EXIT_OK
        code, out = run("rate", csv_path, "--discard", 0.2)
        assert code == EXIT_OK
        assert float(out.split()[1]) == pytest.approx(-0.062, abs=0.02)

    def test_rate_parse_error(self, workdir, capsys):
        csv_path = workdir / "broken.csv"
        csv_path.write_text("t,x1\n0,1\n1,oops\n")
        assert run("rate", csv_path)[0] == EXIT_ERROR
        assert "line 3" in capsys.readouterr().err
