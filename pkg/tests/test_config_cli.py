import json

import numpy as np
import pytest

from pgsim import __version__
from pgsim.cli import main, resolve_threads
from pgsim.config import DEFAULT_CONFIG, ConfigError, config_from_dict, load_config
from pgsim.effective import resonance_shift_coefficients
from pgsim.io import read_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

BASE = DEFAULT_CONFIG.read_text()
SMALL_HILBERT = "levels_q1 = 2\nlevels_q2 = 2\nlevels_c = 2"


def _raw():
    with open(DEFAULT_CONFIG, "rb") as fh:
        return tomllib.load(fh)


def _write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _replace_section(text, section, body):
    """Swap one ``[section]`` block of the default file for ``body``."""
    lines = text.splitlines()
    start = lines.index(f"[{section}]")
    end = next((k for k in range(start + 1, len(lines)) if lines[k].startswith("[")), len(lines))
    return "\n".join(lines[:start] + [f"[{section}]", body.strip(), ""] + lines[end:]) + "\n"


def test_default_config_loads():
    cfg = load_config()
    assert cfg.device().q1.frequency == 4.422
    assert cfg.theta == -0.108
    assert cfg.seed == 0
    assert any(line.startswith("device.coupler.t2 = ") for line in cfg.lines())


def test_unknown_key_rejected():
    raw = _raw()
    raw["device"]["q1"]["freq"] = 4.4
    with pytest.raises(ConfigError, match=r"device\.q1\.freq: unknown key"):
        config_from_dict(raw)


def test_missing_required_key():
    raw = _raw()
    del raw["pulse"]["theta"]
    with pytest.raises(ConfigError, match=r"pulse\.theta"):
        config_from_dict(raw)


def test_wrong_type():
    raw = _raw()
    raw["chevron"]["points"] = "many"
    with pytest.raises(ConfigError, match=r"chevron\.points"):
        config_from_dict(raw)


def test_unphysical_t2():
    raw = _raw()
    raw["device"]["q2"]["t2"] = 200.0
    with pytest.raises(ConfigError, match="unphysical T2"):
        config_from_dict(raw)


def test_overrides_applied():
    cfg = config_from_dict(_raw(), overrides={"seed": 9})
    assert cfg.seed == 9


def test_resolve_threads(monkeypatch):
    monkeypatch.setenv("PGSIM_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    monkeypatch.setenv("PGSIM_THREADS", "zero")
    with pytest.raises(ConfigError):
        resolve_threads(None)
    monkeypatch.delenv("PGSIM_THREADS")
    assert resolve_threads(None) >= 1
    with pytest.raises(ConfigError):
        resolve_threads(0)


def test_cli_invalid_inputs(tmp_path, capsys):
    assert main(["chevron", "--config", str(tmp_path / "missing.toml")]) == 1
    bad = _write(tmp_path, BASE.replace("t2 = 32.0", "t2 = 300.0"))
    assert main(["fidelity", "--config", bad, "--out", str(tmp_path)]) == 1
    assert "unphysical T2" in capsys.readouterr().err
    empty = _write(tmp_path, BASE.replace("points = 41", "points = 0"), "empty.toml")
    assert main(["chevron", "--config", empty, "--out", str(tmp_path)]) == 1
    two = _write(tmp_path, BASE.replace("pairs = []", "pairs = [[1.0, 1e-4], [2.0, 4e-4]]"), "two.toml")
    assert main(["calibrate", "--config", two, "--out", str(tmp_path)]) == 1


def test_cli_numerical_failure_exit_code(tmp_path, monkeypatch):
    import pgsim.cli as cli

    def boom(run):
        raise np.linalg.LinAlgError("singular")

    monkeypatch.setitem(cli.HANDLERS, "strengths", boom)
    cfg = _write(tmp_path, BASE)
    assert main(["strengths", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_cli_strengths_reproducible(tmp_path):
    text = _replace_section(BASE, "strengths", "deltas = [0.0, 0.03, 0.06]\nn_periods = 40")
    cfg = _write(tmp_path, text)
    assert main(["strengths", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["strengths", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "strengths.csv").read_bytes()
    assert a == (tmp_path / "b" / "strengths.csv").read_bytes()
    header, cols, data = read_csv(tmp_path / "a" / "strengths.csv")
    assert header[0] == f"pgsim {__version__}"
    assert any(h.startswith("strengths.deltas = ") for h in header)
    assert cols[:4] == ["delta_phi0", "iswap_GHz", "bswap_GHz", "adiabatic_GHz"]
    np.testing.assert_array_equal(data[0, 1:], 0.0)
    assert np.all(np.diff(data[:, 1]) > 0) and np.all(np.diff(np.abs(data[:, 2])) > 0)


def test_cli_chevron_flat_at_zero_delta(tmp_path):
    text = _replace_section(BASE, "chevron", 'gate = "iswap"\ndelta = 0.0\npoints = 3\nduration = 200.0\ntimes = 21')
    cfg = _write(tmp_path, _replace_section(text, "hilbert", SMALL_HILBERT))
    assert main(["chevron", "--config", cfg, "--out", str(tmp_path)]) == 0
    _, cols, data = read_csv(tmp_path / "chevron_iswap.csv")
    assert cols[0] == "time_ns" and data.shape == (21, 4)
    # no modulation: every frequency column is the same static evolution
    assert np.max(np.ptp(data[:, 1:], axis=1)) < 1e-12
    _, _, prof = read_csv(tmp_path / "chevron_iswap_profile.csv")
    # no resonance: the fitted frequency does not depend on the modulation frequency
    assert np.ptp(prof[:, 1]) < 1e-9


def test_cli_chevron_deterministic_across_threads(tmp_path):
    text = _replace_section(BASE, "chevron", 'gate = "iswap"\ndelta = 0.065\npoints = 3\nduration = 200.0\ntimes = 21')
    cfg = _write(tmp_path, _replace_section(text, "hilbert", SMALL_HILBERT))
    assert main(["chevron", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "2"]) == 0
    assert main(["chevron", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "2"]) == 0
    name = "chevron_iswap.csv"
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_cli_leakage_impossible_threshold(tmp_path):
    text = _replace_section(BASE, "leakage", "delta = 0.065\nomega_min = 0.5\nomega_max = 0.6\npoints = 2\n"
                                             "threshold = 1.1\nduration = 100.0\nsamples = 32")
    cfg = _write(tmp_path, _replace_section(text, "hilbert", SMALL_HILBERT))
    assert main(["leakage", "--config", cfg, "--out", str(tmp_path)]) == 0
    header, cols, data = read_csv(tmp_path / "leakage.csv")
    assert cols == ["omega_phi_GHz", "frequency_GHz", "max_leakage", "label"]
    assert "lines = 0" in header and data.size == 0


def test_cli_calibrate_exact_pairs(tmp_path):
    _, c2 = resonance_shift_coefficients(load_config().device(), -0.108, "iswap")
    pairs = [[a, 2e-4 + c2 * (0.02 * a) ** 2] for a in (1.0, 2.0, 3.0, 4.0)]
    text = BASE.replace("pairs = []", f"pairs = {json.dumps(pairs)}")
    cfg = _write(tmp_path, text)
    assert main(["calibrate", "--config", cfg, "--out", str(tmp_path), "--seed", "4"]) == 0
    doc = json.loads((tmp_path / "delta_scale_iswap.json").read_text())
    assert doc["scale"] == pytest.approx(0.02, rel=1e-9)
    assert doc["offset"] == pytest.approx(2e-4, rel=1e-6)
    assert doc["version"] == __version__
