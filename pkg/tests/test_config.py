import math

import pytest
from hypothesis import given, settings, strategies as st

from siapm.config import Config, ConfigError, dumps, load, loads
from siapm.constants import CA40


def test_defaults():
    cfg = Config()
    assert cfg.axial_frequency_hz == 2.05e6
    assert cfg.n0 == 0.01
    assert cfg.step_duration_s == 24.6e-6
    assert cfg.d_state_decay_rate == 1.2
    assert cfg.species.mass == pytest.approx(CA40.mass, rel=1e-9)
    assert cfg.trap.omega0 == pytest.approx(2 * math.pi * 2.05e6)


def test_round_trip_defaults():
    cfg = Config()
    assert loads(dumps(cfg)) == cfg
    assert dumps(loads(dumps(cfg))) == dumps(cfg)


@settings(max_examples=40)
@given(st.floats(1e5, 1e7), st.floats(0, 0.5), st.lists(st.integers(1, 5000), min_size=1, max_size=8),
       st.sampled_from(["one-ion", "two-ion"]), st.booleans(), st.floats(0, 100))
def test_round_trip_arbitrary(freq, spam, lengths, targets, phases, n0):
    cfg = Config(axial_frequency_hz=freq, spam_error=spam, rb_lengths=tuple(lengths),
                 rb_targets=targets, use_crystal_phases=phases, n0=n0)
    assert loads(dumps(cfg)) == cfg


def test_comments_and_blank_lines():
    cfg = loads("# header\n\nseed = 7   # trailing\neta = 0.05\nrb_lengths = 1, 2, 3\n")
    assert cfg.seed == 7
    assert cfg.eta == "0.05"
    assert cfg.rb_lengths == (1, 2, 3)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError, match="line 2: unknown key 'sead'"):
        loads("seed = 1\nsead = 2\n")


def test_bad_value_reports_line():
    with pytest.raises(ConfigError, match="line 1: seed"):
        loads("seed = abc\n")
    with pytest.raises(ConfigError, match="line 1: expected 'key = value'"):
        loads("seed 4\n")
    with pytest.raises(ConfigError, match="true/false"):
        loads("use_crystal_phases = maybe\n")


def test_field_level_diagnostics_are_collected():
    with pytest.raises(ConfigError) as info:
        Config(spam_error=0.7, rb_targets="three", chain_ions=4, eta="fast")
    msg = str(info.value)
    for name in ("spam_error", "rb_targets", "chain_ions", "eta"):
        assert name in msg


def test_overrides_revalidate():
    cfg = Config().with_overrides(seed=5)
    assert cfg.seed == 5
    with pytest.raises(ConfigError):
        Config().with_overrides(rb_shots=0)


def test_load_from_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("delta_n = 0.5\n", encoding="utf-8")
    assert load(path).delta_n == 0.5
