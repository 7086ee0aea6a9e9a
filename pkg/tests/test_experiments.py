import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from migdyn.cli import main
from migdyn.experiments import (ConfigError, StageError, build_spec, conditions, get, names,
                                parse_config, registry, run)
from migdyn.experiments.waves import neumann_laplacian, profile

EXPECTED = {"hbf-reduction", "tikhonov-selection", "fast-eps-anti", "coupled-oscillators",
            "neumann-waves-1d", "dictionary-roundtrip", "affine-rescale"}


def test_registry_contents():
    assert set(names()) == EXPECTED
    with pytest.raises(KeyError):
        get("nope")


@pytest.mark.parametrize("name", sorted(EXPECTED))
def test_config_round_trip(name):
    cfg = get(name)
    assert parse_config(cfg.serialize()) == cfg
    assert build_spec(cfg).digest() == build_spec(parse_config(cfg.serialize())).digest()


@settings(max_examples=25, deadline=None)
@given(name=st.sampled_from(sorted(EXPECTED - {"neumann-waves-1d"})),
       horizon=st.floats(1.0, 1e5), seed=st.integers(0, 2**31 - 1))
def test_config_round_trip_with_overrides(name, horizon, seed):
    cfg = get(name).with_overrides(horizon=horizon, seed=seed)
    assert parse_config(cfg.serialize()) == cfg


def test_malformed_configs_name_the_key():
    text = get("tikhonov-selection").serialize()
    with pytest.raises(ConfigError, match="alpha"):
        parse_config(text.replace("alpha = 0.75", "alpha = fast"))
    with pytest.raises(ConfigError, match="bogus"):
        parse_config(text.replace("[schedule]", "[schedule]\nbogus = 1"))
    with pytest.raises(ConfigError, match="name"):
        parse_config("[problem]\ngamma = 1\n")
    with pytest.raises(ConfigError, match="schedule"):
        build_spec(get("tikhonov-selection").with_overrides(alpha=-1.0))


def test_invalid_problem_is_a_usage_error():
    cfg = get("hbf-reduction")
    bad = cfg.replace(problem={**cfg.problem, "gamma": -1.0})
    with pytest.raises(StageError) as info:
        run(bad)
    assert info.value.code == 2 and info.value.stage == "build"


def test_waves_helpers():
    L = neumann_laplacian(8)
    np.testing.assert_allclose(np.asarray(L.sum(axis=1)).ravel(), 0.0)
    for name in ("sin", "cos"):
        assert abs(profile(name, 64).sum()) < 1e-12


def test_conditions_only():
    s = conditions(get("tikhonov-selection"))
    assert s.conditions["h1.holds"] and s.conditions["h2.holds"] and s.conditions["h3.holds"]
    s = conditions(get("fast-eps-anti"))
    assert not s.conditions["h1.holds"]


def test_run_writes_artifacts_and_is_reproducible(tmp_path):
    cfg = get("hbf-reduction")
    a = run(cfg, out_dir=tmp_path / "a")
    b = run(cfg, out_dir=tmp_path / "b")
    assert a.passed and a.exit_code == 0
    assert a.lines() == b.lines()
    for name in ("summary.txt", "trajectory.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).exists()
    text = (tmp_path / "a" / "summary.txt").read_text()
    assert "status = pass" in text and "conditions.h2.method = trivial" in text


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--experiment", "hbf-reduction", "--out", str(tmp_path)]) == 0
    assert "status = pass" in capsys.readouterr().out
    assert main(["run", "--experiment", "no-such-thing"]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 2
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(get("tikhonov-selection").serialize().replace("kind = power", "kind = wobbly"))
    assert main(["run", "--config", str(cfg)]) == 2
    assert "kind" in capsys.readouterr().err


def test_cli_check_conditions(tmp_path, capsys):
    cfg = tmp_path / "t.cfg"
    cfg.write_text(get("tikhonov-selection").serialize())
    assert main(["check-conditions", "--config", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "conditions.h1.holds = true" in out


@pytest.mark.slow
def test_cli_reports_a_failed_check(capsys):
    # a fast-decaying eps defeats selection, so the distance check fails
    assert main(["run", "--experiment", "tikhonov-selection", "--alpha", "2"]) == 1
    assert "check.x_distance = fail" in capsys.readouterr().out
