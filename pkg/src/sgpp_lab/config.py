"""Strict INI configuration for experiments and verification runs.

Every section and key is declared in :data:`SCHEMA`; anything else is an
error.  Parsed values are held in :class:`ExperimentConfig`, whose
:meth:`~ExperimentConfig.to_ini` output parses back to an equal config.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

__all__ = ["SCHEMA", "ExperimentConfig", "parse_config", "load_config", "METHODS"]

METHODS = ("sgpp_descent", "posterior_ode", "sgpp_sde", "dps", "rf_inversion")


def _float(s):
    return float(s)


def _int(s):
    return int(s, 0)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(v) for v in s.replace(",", " ").split())


def _strs(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _points(s):
    """``"x0 y0; x1 y1"`` -> ((x0, y0), (x1, y1))."""
    return tuple(_floats(row) for row in s.split(";") if row.strip())


def _str(s):
    return s.strip()


# section -> key -> (parser, default); default None means "unset"
SCHEMA = {
    "manifold": {
        "kind": (_str, "circle"),
        "radius": (_float, 1.0),
        "center": (_floats, (0.0, 0.0)),
        "start": (_floats, (-1.0, 0.0)),
        "end": (_floats, (1.0, 0.0)),
        "offset": (_floats, (1.0, 0.5)),
        "density": (_str, "uniform"),
        "concentration": (_float, 1.0),
        "mode": (_float, 0.0),
        "atom_count": (_int, 512),
        "atoms": (_points, None),
        "weights": (_floats, None),
    },
    "guidance": {
        "sigma_p": (_floats, (0.2,)),
        "eta": (_float, 0.0),
        "t_stop": (_float, 0.0),
        "use_mixture": (_bool, False),
        "x_ref": (_floats, (0.0, 1.0)),
        "likelihood": (_str, "gaussian"),
    },
    "sampler": {
        "method": (_str, "sgpp_descent"),
        "t_start": (_float, 0.9),
        "t_end": (_float, 1e-3),
        "steps": (_int, 60),
        "steps_per_t": (_int, 1),
        "step_rule": (_str, "fraction:0.5"),
        "spacing": (_str, "uniform"),
        "ensemble_count": (_int, 16),
        "record_every": (_int, 1),
    },
    "baseline": {
        "dps_sigma_list": (_floats, (1.0, 0.5, 0.1, 0.05)),
        "dps_step_scale": (_float, 1.0),
        "rf_inv_gamma": (_float, 0.5),
    },
    "output": {
        "name": (_str, None),
        "directory": (_str, None),
        "emit_svg": (_bool, True),
    },
    "seed": {
        "master_seed": (_int, 0),
    },
    "assert": {
        "max_terminal_normal_distance": (_float, None),
        "max_diverged_fraction": (_float, None),
        "min_off_manifold_fraction": (_float, None),
        "max_mean_distance_to_ref": (_float, None),
        "min_mean_distance_to_ref": (_float, None),
    },
    "verify": {
        "checks": (_strs, None),
        "step_fraction": (_float, 0.5),
        "contraction_sigma_p": (_float, 0.2),
        "posterior_likelihood": (_strs, ("gaussian", "exact")),
        "posterior_count": (_int, 2000),
    },
}


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(" ".join(repr(v) for v in row) for row in value)
        if value and isinstance(value[0], str):
            return ", ".join(value)
        return ", ".join(repr(v) for v in value)
    return str(value)


@dataclass
class ExperimentConfig:
    """Parsed configuration; ``sections[name][key]`` holds typed values."""

    sections: dict
    present: frozenset = field(default_factory=frozenset)
    source: str | None = None

    def __getitem__(self, section):
        return self.sections[section]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.sections == other.sections

    def has(self, section):
        return section in self.present

    @property
    def name(self):
        if self["output"]["name"]:
            return self["output"]["name"]
        if self.source:
            return Path(self.source).stem
        return "experiment"

    def to_ini(self):
        """Canonical text of the sections present in the source."""
        cp = configparser.ConfigParser(interpolation=None)
        for sec in SCHEMA:
            if sec not in self.present:
                continue
            cp.add_section(sec)
            for key, val in self.sections[sec].items():
                if val is not None:
                    cp.set(sec, key, _format(val))
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def as_dict(self):
        return {sec: {k: v for k, v in vals.items()} for sec, vals in self.sections.items()
                if sec in self.present}


def _validate(cfg: ExperimentConfig):
    g, s, m, b, v = cfg["guidance"], cfg["sampler"], cfg["manifold"], cfg["baseline"], cfg["verify"]

    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(m["kind"] in ("circle", "segment", "two_moons", "atoms"), f"unknown manifold kind {m['kind']!r}")
    need(m["density"] in ("uniform", "vonmises"), f"unknown density {m['density']!r}")
    need(m["radius"] > 0, "manifold.radius must be > 0")
    need(m["concentration"] >= 0, "manifold.concentration must be >= 0")
    need(m["atom_count"] >= 3, "manifold.atom_count must be >= 3")
    if m["kind"] == "atoms":
        need(m["atoms"] is not None and len(m["atoms"]) >= 1, "kind = atoms needs an atoms list")
        need(len({len(a) for a in m["atoms"]}) == 1, "atoms must share one dimension")
        if m["weights"] is not None:
            need(len(m["weights"]) == len(m["atoms"]), "one weight per atom")
            need(all(w >= 0 for w in m["weights"]) and abs(sum(m["weights"]) - 1) <= 1e-12,
                 "weights must be non-negative and sum to 1")
    need(len(g["sigma_p"]) >= 1 and all(x > 0 for x in g["sigma_p"]), "guidance.sigma_p must be > 0")
    need(0 <= g["eta"] <= 1, "guidance.eta must lie in [0, 1]")
    need(0 <= g["t_stop"] < 1, "guidance.t_stop must lie in [0, 1)")
    need(g["likelihood"] in ("gaussian", "exact"), f"unknown likelihood {g['likelihood']!r}")
    dim = len(m["atoms"][0]) if m["kind"] == "atoms" else 2
    need(len(g["x_ref"]) == dim, f"guidance.x_ref must have {dim} coordinates")
    need(s["method"] in METHODS, f"unknown method {s['method']!r}")
    need(0 < s["t_end"] < s["t_start"] < 1, "need 0 < t_end < t_start < 1")
    need(s["steps"] >= 1, "sampler.steps must be >= 1")
    need(s["steps_per_t"] >= 1, "sampler.steps_per_t must be >= 1")
    need(s["ensemble_count"] >= 1, "sampler.ensemble_count must be >= 1")
    need(s["record_every"] >= 1, "sampler.record_every must be >= 1")
    need(s["spacing"] in ("uniform", "geometric"), f"unknown spacing {s['spacing']!r}")
    kind, _, val = s["step_rule"].partition(":")
    need(kind in ("fixed", "fraction"), f"unknown step rule {s['step_rule']!r}")
    try:
        need(float(val or 0.5) > 0, "step rule value must be > 0")
    except ValueError:
        raise ConfigError(f"bad step rule value in {s['step_rule']!r}") from None
    need(len(b["dps_sigma_list"]) >= 1 and all(x > 0 for x in b["dps_sigma_list"]),
         "baseline.dps_sigma_list must be > 0")
    need(b["dps_step_scale"] > 0, "baseline.dps_step_scale must be > 0")
    need(0 <= b["rf_inv_gamma"] <= 1, "baseline.rf_inv_gamma must lie in [0, 1]")
    need(cfg["seed"]["master_seed"] >= 0 and cfg["seed"]["master_seed"] < 2 ** 64,
         "seed.master_seed must be an unsigned 64-bit integer")
    need(v["step_fraction"] > 0, "verify.step_fraction must be > 0")
    need(v["contraction_sigma_p"] > 0, "verify.contraction_sigma_p must be > 0")
    need(all(x in ("gaussian", "exact") for x in v["posterior_likelihood"]),
         "verify.posterior_likelihood entries must be gaussian or exact")
    need(v["posterior_count"] >= 1, "verify.posterior_count must be >= 1")


def parse_config(text, source=None) -> ExperimentConfig:
    """Parse and validate configuration text; raises :class:`ConfigError`."""
    cp = configparser.ConfigParser(interpolation=None, strict=True, empty_lines_in_values=False)
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    unknown = [s for s in cp.sections() if s not in SCHEMA]
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    sections = {}
    for sec, keys in SCHEMA.items():
        vals = {k: d for k, (_, d) in keys.items()}
        if cp.has_section(sec):
            for key, raw in cp.items(sec):
                if key not in keys:
                    raise ConfigError(f"unknown key {sec}.{key}")
                try:
                    vals[key] = keys[key][0](raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {sec}.{key}: {exc}") from None
        sections[sec] = vals
    cfg = ExperimentConfig(sections, frozenset(cp.sections()), source)
    _validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))
