"""Scenario configuration and its INI-style file format.

Every section maps flat keys onto :class:`ScenarioConfig` fields; unknown
sections or keys are rejected so typos cannot silently fall back to defaults.

    [scenario]
    n_regions = 16
    attacked_regions = 3, 11
    seed = 7
"""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError

TOPOLOGIES = ("ring", "grid", "geometric", "complete")


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int | None = None
    n_regions: int = 16
    epochs: int = 200
    attacked_regions: tuple = ()
    attack_start: int = 50
    attack_end: int | None = None
    magnitude: float = 20.0
    detection_threshold: float = 0.9
    # topology
    topology: str = "grid"
    grid_rows: int = 0
    geometric_radius: float = 0.0
    # detector
    alpha_target: float = 0.005
    window_len: int = 50
    prior1: float = 0.01
    calibration_runs: int = 100_000
    beta_runs: int = 20_000
    calibration_file: str = ""
    # ledger
    D: int = 10**6
    block_interval: float = 1.0
    # gossip
    gamma: float = 0.5
    gossip_rounds_per_epoch: int = 50
    trials_bg: int = 100
    # plant
    generators: int = 4
    coupling: float = 0.05
    dt: float = 0.1
    stiffness: float = 1.0
    damping: float = 0.5
    process_noise: float = 0.01
    measurement_noise: float = 0.01
    state_cost: float = 1.0
    control_cost: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "attacked_regions", tuple(sorted(int(i) for i in self.attacked_regions)))
        if self.attack_end is None:
            object.__setattr__(self, "attack_end", self.epochs)
        self.validate()

    def validate(self):
        if self.seed is None:
            raise ConfigurationError("seed is mandatory")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.n_regions < 1 or self.epochs < 1:
            raise ConfigurationError("n_regions and epochs must be positive")
        if len(set(self.attacked_regions)) != len(self.attacked_regions):
            raise ConfigurationError("attacked_regions contains duplicates")
        if any(not 1 <= i <= self.n_regions for i in self.attacked_regions):
            raise ConfigurationError(f"attacked_regions must lie in [1, {self.n_regions}]")
        if self.attacked_regions and not 1 <= self.attack_start < self.attack_end <= self.epochs:
            raise ConfigurationError("attack window must satisfy 1 <= start < end <= epochs")
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(f"topology must be one of {TOPOLOGIES}")
        if not 0.0 < self.detection_threshold <= 1.0:
            raise ConfigurationError("detection_threshold must lie in (0, 1]")
        if self.gossip_rounds_per_epoch < 0 or self.trials_bg < 1:
            raise ConfigurationError("gossip rounds must be >= 0 and trials >= 1")

    def with_(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return asdict(self)


SECTIONS = {
    "scenario": {
        "seed": "seed", "n_regions": "n_regions", "epochs": "epochs",
        "attacked_regions": "attacked_regions", "attack_start": "attack_start",
        "attack_end": "attack_end", "magnitude": "magnitude",
        "detection_threshold": "detection_threshold",
    },
    "topology": {"kind": "topology", "grid_rows": "grid_rows", "radius": "geometric_radius"},
    "detector": {
        "alpha": "alpha_target", "window_len": "window_len", "prior1": "prior1",
        "calibration_runs": "calibration_runs", "beta_runs": "beta_runs",
        "calibration_file": "calibration_file",
    },
    "ledger": {"D": "D", "block_interval": "block_interval"},
    "gossip": {"gamma": "gamma", "rounds_per_epoch": "gossip_rounds_per_epoch", "trials": "trials_bg"},
    "plant": {
        "generators": "generators", "coupling": "coupling", "dt": "dt", "stiffness": "stiffness",
        "damping": "damping", "process_noise": "process_noise",
        "measurement_noise": "measurement_noise", "state_cost": "state_cost",
        "control_cost": "control_cost",
    },
}

_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _convert(name, raw):
    kind = _TYPES[name]
    raw = raw.strip()
    try:
        if name == "attacked_regions":
            return tuple(int(tok) for tok in raw.replace(",", " ").split())
        if name == "attack_end":
            return None if raw.lower() in ("", "none") else int(raw)
        if name == "seed":
            return int(raw, 0)
        if name == "D":
            return int(float(raw)) if "e" in raw.lower() else int(raw)
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"cannot parse {name} = {raw!r}") from None


def parse_config(text, source="<string>", **overrides):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigurationError(f"{source}: unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigurationError(f"{source}: unknown key {key!r} in [{section}]")
            name = SECTIONS[section][key]
            values[name] = _convert(name, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ScenarioConfig(**values)


def load_config(path, **overrides):
    """Parse a config file; non-None keyword overrides win over file values."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, source=str(path), **overrides)


def dump_config(config):
    """Render a config back to the file format (round-trips through parse_config)."""
    out = []
    for section, keys in SECTIONS.items():
        out.append(f"[{section}]")
        for key, name in keys.items():
            value = getattr(config, name)
            if name == "attacked_regions":
                value = ", ".join(str(i) for i in value)
            out.append(f"{key} = {value}")
        out.append("")
    return "\n".join(out)
