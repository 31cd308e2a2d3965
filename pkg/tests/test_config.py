import pytest
from hypothesis import given, strategies as st

from roap.config import ConfigError, RunConfig, dump_config, load_config, parse_config
from roap.tt_prior import CORD_BINS, FUNSD_BINS


def test_defaults():
    cfg = load_config()
    assert cfg == RunConfig()
    s = cfg.sim
    assert s.ro_gate_init == (-3.0, -2.0) and s.tt_gate_init == (-2.0, -1.0)
    assert s.tt.tolerance == 0.1 and s.tt.bins == FUNSD_BINS and s.tt.pool_K == 64
    assert s.ro_layers == tuple(range(6)) and s.tt_layers == tuple(range(4, 12))
    assert (cfg.axg.alpha, cfg.axg.beta, cfg.axg.gamma) == (0.5, 0.25, 0.3)


def test_empty_text_gives_defaults():
    assert parse_config("") == RunConfig()


def test_default_round_trip():
    cfg = RunConfig()
    assert parse_config(dump_config(cfg)) == cfg


def test_partial_file_and_presets(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[tt_prior]\nbins = cord\nt_max = 288\n\n[attention_sim]\nnum_layers = 4\n\n[axg]\ngamma = 0.99\n")
    cfg = load_config(p)
    assert cfg.sim.tt.bins == CORD_BINS and cfg.sim.t_max == 288
    assert cfg.sim.ro_layers == (0, 1, 2, 3) and cfg.sim.tt_layers == (0, 1, 2, 3)
    assert cfg.axg.gamma == 0.99
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text,match", [
    ("[axg]\nalpah = 1\n", "unknown keys"),
    ("[model]\nx = 1\n", "unknown sections"),
    ("[axg]\ngamma = 0\n", "gamma"),
    ("[ro_rpb]\nenabled = maybe\n", "boolean"),
    ("[ro_rpb]\nnum_buckets = 31\n", "even"),
    ("[tt_prior]\nbins = 64,32\n", "bins"),
    ("[attention_sim]\nd_model = 9\n", "d_model"),
    ("[attention_sim]\nnum_layers = 2\n[tt_prior]\nlayers = 5\n", "tt_layers"),
    ("no section header\n", "header"),
])
def test_invalid_configs(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(text)


@given(
    st.floats(0, 2), st.floats(0, 2), st.floats(0.01, 1), st.integers(16, 4096), st.booleans(),
    st.sampled_from(["sigmoid", "raw"]), st.floats(0.01, 0.99), st.integers(1, 2048),
    st.lists(st.integers(0, 5), unique=True), st.booleans(), st.booleans(),
)
def test_round_trip_property(alpha, beta, gamma, max_bins, deskew, mode, tol, t_max, ro_layers, use_ro, use_tt):
    text = (f"[axg]\nalpha={alpha!r}\nbeta={beta!r}\ngamma={gamma!r}\nmax_bins={max_bins}\n"
            f"deskew_enabled={deskew}\n[attention_sim]\nnum_layers=6\ngate_mode={mode}\n"
            f"[tt_prior]\ntolerance={tol!r}\nt_max={t_max}\nenabled={use_tt}\n"
            f"[ro_rpb]\nlayers={','.join(map(str, ro_layers))}\nenabled={use_ro}\n")
    cfg = parse_config(text)
    assert parse_config(dump_config(cfg)) == cfg
    assert cfg.axg.alpha == alpha and cfg.sim.tt.tolerance == tol and cfg.sim.ro_layers == tuple(sorted(ro_layers))


def test_inline_comments():
    cfg = parse_config("[tt_prior]\nbins = cord   ; receipts\n[attention_sim]\ngate_mode = raw ; ungated\n")
    assert cfg.sim.tt.bins == CORD_BINS and cfg.sim.gate_mode == "raw"
