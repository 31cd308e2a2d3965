"""Run configuration: one INI-style file with a section per module."""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .attention_sim import SimConfig, first_layers, last_layers
from .geometry import AxgParams
from .ro_rpb import RoBucketConfig
from .tt_prior import CORD_BINS, FUNSD_BINS, TTRoutingConfig

FIXTURE_DIR = Path(__file__).parent / "fixtures"
BIN_PRESETS = {"funsd": FUNSD_BINS, "cord": CORD_BINS}


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    funsd: str = str(FIXTURE_DIR / "funsd")
    cord: str = str(FIXTURE_DIR / "cord")
    out: str = "out"


@dataclass
class RunConfig:
    axg: AxgParams = field(default_factory=AxgParams)
    sim: SimConfig = field(default_factory=SimConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


def _ints(text: str) -> tuple[int, ...]:
    text = text.strip()
    return tuple(int(v) for v in text.split(",") if v.strip()) if text else ()


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _take(section, allowed: set[str], name: str) -> dict[str, str]:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    return dict(section)


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"axg", "ro_rpb", "tt_prior", "attention_sim", "paths"}
    unknown = set(cp.sections()) - known
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    sec = {name: (cp[name] if cp.has_section(name) else {}) for name in known}

    try:
        a = _take(sec["axg"], {f.name for f in fields(AxgParams)}, "axg")
        axg = AxgParams(
            alpha=float(a.get("alpha", 0.5)),
            beta=float(a.get("beta", 0.25)),
            gamma=float(a.get("gamma", 0.3)),
            max_bins=int(a.get("max_bins", 1024)),
            deskew_enabled=_bool(a.get("deskew_enabled", "true")),
            deskew_range_deg=float(a.get("deskew_range_deg", 5.0)),
        )

        s = _take(sec["attention_sim"], {"num_layers", "num_heads", "d_model", "d_k", "num_visual_tokens",
                                          "seed", "gate_mode"}, "attention_sim")
        num_layers = int(s.get("num_layers", 12))

        r = _take(sec["ro_rpb"], {"enabled", "num_buckets", "exact_span", "max_distance", "layers",
                                   "gate_init_low", "gate_init_high", "init_scale"}, "ro_rpb")
        ro = RoBucketConfig(int(r.get("num_buckets", 32)), int(r.get("exact_span", 8)), int(r.get("max_distance", 1024)))

        t = _take(sec["tt_prior"], {"enabled", "tolerance", "t_max", "bins", "pool_K", "layers",
                                     "gate_init_low", "gate_init_high"}, "tt_prior")
        bins_text = t.get("bins", "funsd").strip()
        bins = BIN_PRESETS[bins_text] if bins_text in BIN_PRESETS else _ints(bins_text)
        tt = TTRoutingConfig(float(t.get("tolerance", 0.1)), int(t.get("t_max", 512)), bins, int(t.get("pool_K", 64)))

        sim = SimConfig(
            num_layers=num_layers,
            num_heads=int(s.get("num_heads", 2)),
            d_model=int(s.get("d_model", 8)),
            d_k=int(s.get("d_k", 4)),
            num_visual_tokens=int(s.get("num_visual_tokens", 4)),
            seed=int(s.get("seed", 0)),
            gate_mode=s.get("gate_mode", "sigmoid").strip(),
            ro_layers=_ints(r["layers"]) if "layers" in r else first_layers(6, num_layers),
            tt_layers=_ints(t["layers"]) if "layers" in t else last_layers(8, num_layers),
            use_ro=_bool(r.get("enabled", "true")),
            use_tt=_bool(t.get("enabled", "true")),
            ro_gate_init=(float(r.get("gate_init_low", -3.0)), float(r.get("gate_init_high", -2.0))),
            tt_gate_init=(float(t.get("gate_init_low", -2.0)), float(t.get("gate_init_high", -1.0))),
            ro_init_scale=float(r.get("init_scale", 0.02)),
            ro=ro,
            tt=tt,
        )
        p = _take(sec["paths"], {f.name for f in fields(PathsConfig)}, "paths")
        paths = replace(PathsConfig(), **p)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration value: {exc}") from exc
    return RunConfig(axg, sim, paths)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


def _join(values) -> str:
    return ",".join(str(v) for v in values)


def dump_config(cfg: RunConfig) -> str:
    """Serialize every effective value; parse_config(dump_config(c)) reproduces c."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    a, s = cfg.axg, cfg.sim
    cp["axg"] = {
        "alpha": repr(a.alpha), "beta": repr(a.beta), "gamma": repr(a.gamma),
        "max_bins": str(a.max_bins), "deskew_enabled": str(a.deskew_enabled).lower(),
        "deskew_range_deg": repr(a.deskew_range_deg),
    }
    cp["ro_rpb"] = {
        "enabled": str(s.use_ro).lower(), "num_buckets": str(s.ro.num_buckets),
        "exact_span": str(s.ro.exact_span), "max_distance": str(s.ro.max_distance),
        "layers": _join(s.ro_layers), "gate_init_low": repr(s.ro_gate_init[0]),
        "gate_init_high": repr(s.ro_gate_init[1]), "init_scale": repr(s.ro_init_scale),
    }
    cp["tt_prior"] = {
        "enabled": str(s.use_tt).lower(), "tolerance": repr(s.tt.tolerance), "t_max": str(s.tt.t_max),
        "bins": _join(s.tt.bins), "pool_K": str(s.tt.pool_K), "layers": _join(s.tt_layers),
        "gate_init_low": repr(s.tt_gate_init[0]), "gate_init_high": repr(s.tt_gate_init[1]),
    }
    cp["attention_sim"] = {
        "num_layers": str(s.num_layers), "num_heads": str(s.num_heads), "d_model": str(s.d_model),
        "d_k": str(s.d_k), "num_visual_tokens": str(s.num_visual_tokens), "seed": str(s.seed),
        "gate_mode": s.gate_mode,
    }
    cp["paths"] = {"funsd": cfg.paths.funsd, "cord": cfg.paths.cord, "out": cfg.paths.out}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()
