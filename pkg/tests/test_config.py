import textwrap

import pytest

from langevin_entropy.config import (ENV_OUTPUT, bundled_scenarios, load_config, output_dir,
                                     parse_config)
from langevin_entropy.errors import ConfigError

BASE = """\
scenario: demo
seed: 1
potential: {kind: quadratic, kappa: 1.0}
initial: {kind: gaussian, mean: 0.0, var: 0.25}
dt: 0.01
T: 1.0
"""


def parse(extra=""):
    return parse_config(BASE + textwrap.dedent(extra), "demo.yaml")


def test_minimal_defaults():
    cfg = parse()
    assert cfg.dimension == 1 and cfg.t0 == 0.0 and cfg.checks == ()
    assert cfg.half_width == pytest.approx(6 / 2 ** 0.5)
    assert cfg.grid_spec().cells == (512,)
    assert cfg.perturbation_spec() is None


def test_all_bundled_scenarios_parse():
    names = bundled_scenarios()
    assert len(names) == 14
    for n in names:
        assert load_config(n).scenario == n


def test_unknown_top_level_key_reports_line():
    with pytest.raises(ConfigError, match=r"demo.yaml:7: field 'colour': unknown key"):
        parse("colour: red\n")


def test_unknown_nested_key():
    text = BASE.replace("kappa: 1.0", "kappa: 1.0, sigma: 2")
    with pytest.raises(ConfigError, match=r"demo.yaml:3: field 'potential.sigma'"):
        parse_config(text, "demo.yaml")


def test_missing_required_key():
    with pytest.raises(ConfigError, match="'T': required key missing"):
        parse_config(BASE.replace("T: 1.0\n", ""), "demo.yaml")


def test_wrong_type():
    with pytest.raises(ConfigError, match="field 'seed': expected an integer"):
        parse_config(BASE.replace("seed: 1", "seed: 1.5"), "demo.yaml")
    with pytest.raises(ConfigError, match="expected a number"):
        parse_config(BASE.replace("dt: 0.01", "dt: fast"), "demo.yaml")


def test_dt_exceeding_horizon():
    with pytest.raises(ConfigError, match=r"demo.yaml:5: field 'dt': time step 2.0 exceeds"):
        parse_config(BASE.replace("dt: 0.01", "dt: 2.0"), "demo.yaml")


def test_horizon_not_multiple_of_dt():
    with pytest.raises(ConfigError, match="integer multiple"):
        parse_config(BASE.replace("dt: 0.01", "dt: 0.3"), "demo.yaml")


def test_invalid_values():
    with pytest.raises(ConfigError, match="kappa > 0"):
        parse_config(BASE.replace("kappa: 1.0", "kappa: -1.0"), "demo.yaml")
    with pytest.raises(ConfigError, match="variance must be positive"):
        parse_config(BASE.replace("var: 0.25", "var: 0"), "demo.yaml")
    with pytest.raises(ConfigError, match="t0"):
        parse("t0: 1.0\n")


def test_malformed_yaml():
    with pytest.raises(ConfigError, match="malformed YAML"):
        parse_config("scenario: [unclosed\n", "bad.yaml")
    with pytest.raises(ConfigError, match="empty"):
        parse_config("", "bad.yaml")


def test_checks_validation():
    cfg = parse("checks:\n  - de_bruijn\n  - name: hwi\n    tol: 1.0e-6\n")
    assert [c.name for c in cfg.checks] == ["de_bruijn", "hwi"]
    assert cfg.checks[1].tol == 1e-6
    with pytest.raises(ConfigError, match="unknown check 'nope'"):
        parse("checks: [nope]\n")
    with pytest.raises(ConfigError, match="duplicate check"):
        parse("checks: [hwi, hwi]\n")
    with pytest.raises(ConfigError, match="field 'checks.0.params.bogus'"):
        parse("checks:\n  - name: de_bruijn\n    params: {bogus: 1}\n")
    with pytest.raises(ConfigError, match="needs a perturbation"):
        parse("checks: [perturbed_derivative]\n")


def test_perturbation_section():
    cfg = parse("perturbation: {amplitude: 0.5, support_radius: 1.0}\n")
    spec = cfg.perturbation_spec()
    assert spec.center == (0.0,) and spec.activation_time == 0.0
    with pytest.raises(ConfigError, match="expected 1 components"):
        parse("perturbation: {center: [0.0, 1.0]}\n")
    with pytest.raises(ConfigError, match="support_radius"):
        parse("perturbation: {support_radius: 0}\n")


def test_missing_initial_file(tmp_path):
    text = BASE.replace("{kind: gaussian, mean: 0.0, var: 0.25}", "{kind: file, path: nope.bin}")
    with pytest.raises(ConfigError, match="file not found"):
        parse_config(text, str(tmp_path / "c.yaml"))


def test_unreadable_path():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/dir/cfg.yaml")


def test_overrides_and_digest():
    cfg = parse()
    other = cfg.with_overrides(seed=2)
    assert other.seed == 2 and cfg.seed == 1
    assert cfg.digest() != other.digest()
    assert cfg.digest() == parse().digest()
    # output location and source path do not enter the digest
    assert cfg.with_overrides(output_dir="x", source="y").digest() == cfg.digest()
    assert len(cfg.digest()) == 32


def test_output_dir_env(monkeypatch, tmp_path):
    cfg = parse()
    monkeypatch.delenv(ENV_OUTPUT, raising=False)
    assert str(output_dir(cfg)) == "runs/demo"
    monkeypatch.setenv(ENV_OUTPUT, str(tmp_path))
    assert output_dir(cfg) == tmp_path / "demo"
