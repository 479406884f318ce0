"""Experiment configuration: a flat INI-style file parsed strictly.

Every section and key is declared in a schema; unknown names are hard
errors, because a silently ignored typo corrupts a whole sweep.  All
validation runs before any work starts, and a canonical serialization
of the parsed config is hashed so every run record can be traced back
to the exact settings that produced it.
"""

from __future__ import annotations

import configparser
import hashlib
import io
from dataclasses import dataclass, fields, replace

from .pipeline import Variant
from .power import PHASE_MODES, SCALING_MODES

_INT = "int"
_FLOAT = "float"
_STR = "str"
_BOOL = "bool"
_INTS = "int_list"
_FLOATS = "float_list"
_PAIR = "pair"
_QUAD = "quad"

# section -> key -> (type, default); None default means required.
SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "system": {
        "n_tx": (_INT, 2),
        "n_rx": (_INT, 2),
        "n_ms": (_INT, 16),
        "sim_layers": (_INT, 1),
        "noise_dbm": (_FLOAT, -90.0),
        "power_dbm": (_FLOAT, 30.0),
        "ms_spacing": (_FLOAT, 5.0),
        "ms_pitch": (_FLOAT, 0.5),
    },
    "channel": {
        "fading": (_STR, "sv"),
        "scatterers": (_INT, 10),
        "k_factors_db": (_FLOATS, (13.0, 7.0, 3.0)),
        "pool": (_STR, "static"),
        "tx_position": (_PAIR, (0.0, 0.0)),
        "rx_position": (_PAIR, (5.0, 1.0)),
        "ms_position": (_PAIR, (2.0, 3.0)),
        "arena": (_QUAD, (3.0, 6.0, -1.0, 1.0)),
    },
    "variant": {
        "csi_mode": (_STR, "agnostic"),
        "ms_mode": (_STR, "static"),
        "ms_type": (_STR, "ris"),
    },
    "model": {
        "encoder_hidden": (_INTS, (64, 32)),
        "decoder_hidden": (_INTS, (64, 32)),
        "controller_hidden": (_INTS, (64,)),
        "csi_branch_hidden": (_INT, 32),
        "csi_feature_width": (_INT, 16),
    },
    "training": {
        "optimizer": (_STR, "adam"),
        "learning_rate": (_FLOAT, 1e-3),
        "beta1": (_FLOAT, 0.9),
        "beta2": (_FLOAT, 0.999),
        "epochs": (_INT, 50),
        "batch_size": (_INT, 16),
        "seeds": (_INTS, (1, 2, 3)),
        "eval_repeats": (_INT, 1),
    },
    "data": {
        "kind": (_STR, "blobs"),
        "train_limit": (_INT, 10_000),
        "test_limit": (_INT, 2_000),
        "classes": (_INT, 10),
        "dim": (_INT, 16),
        "per_class": (_INT, 100),
        "separation": (_FLOAT, 0.5),
        "train_fraction": (_FLOAT, 0.8),
        "data_seed": (_INT, 1234),
    },
    "power": {
        "gamma": (_FLOAT, 0.0),
        "warmup": (_INT, 30),
        "scaling": (_STR, "amplitude"),
        "p_max_dbm": (_FLOAT, 30.0),
        "ceiling_dbm": (_FLOAT, 40.0),
        "phase_mode": (_STR, "arctan"),
        "power_hidden": (_INTS, (16,)),
        "trainable": (_BOOL, True),
    },
}

SWEEP_AXES = ("snr", "elements", "layers", "gamma", "n_t")


@dataclass(frozen=True)
class ExperimentConfig:
    # system
    n_tx: int = 2
    n_rx: int = 2
    n_ms: int = 16
    sim_layers: int = 1
    noise_dbm: float = -90.0
    power_dbm: float = 30.0
    ms_spacing: float = 5.0
    ms_pitch: float = 0.5
    # channel
    fading: str = "sv"
    scatterers: int = 10
    k_factors_db: tuple = (13.0, 7.0, 3.0)
    pool: str = "static"
    tx_position: tuple = (0.0, 0.0)
    rx_position: tuple = (5.0, 1.0)
    ms_position: tuple = (2.0, 3.0)
    arena: tuple = (3.0, 6.0, -1.0, 1.0)
    # variant
    csi_mode: str = "agnostic"
    ms_mode: str = "static"
    ms_type: str = "ris"
    # model
    encoder_hidden: tuple = (64, 32)
    decoder_hidden: tuple = (64, 32)
    controller_hidden: tuple = (64,)
    csi_branch_hidden: int = 32
    csi_feature_width: int = 16
    # training
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 50
    batch_size: int = 16
    seeds: tuple = (1, 2, 3)
    eval_repeats: int = 1
    # data
    kind: str = "blobs"
    train_limit: int = 10_000
    test_limit: int = 2_000
    classes: int = 10
    dim: int = 16
    per_class: int = 100
    separation: float = 0.5
    train_fraction: float = 0.8
    data_seed: int = 1234
    # power control (active iff the config file has a [power] section)
    power_control: bool = False
    gamma: float = 0.0
    warmup: int = 30
    scaling: str = "amplitude"
    p_max_dbm: float = 30.0
    ceiling_dbm: float = 40.0
    phase_mode: str = "arctan"
    power_hidden: tuple = (16,)
    trainable: bool = True

    @property
    def noise_var(self) -> float:
        return 10.0 ** ((self.noise_dbm - 30.0) / 10.0)

    @property
    def power_watt(self) -> float:
        return 10.0 ** ((self.power_dbm - 30.0) / 10.0)

    @property
    def variant(self) -> Variant:
        return Variant(self.csi_mode, self.ms_mode, self.ms_type)

    def canonical_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name}={getattr(self, f.name)!r}")
        return "\n".join(lines)

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()[:16]


class ConfigError(ValueError):
    pass


def _parse_value(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == _INT:
            return int(raw)
        if kind == _FLOAT:
            return float(raw)
        if kind == _STR:
            return raw
        if kind == _BOOL:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        parts = [p for p in raw.replace(",", " ").split() if p]
        if kind == _INTS:
            return tuple(int(p) for p in parts)
        if kind == _FLOATS:
            return tuple(float(p) for p in parts)
        if kind == _PAIR:
            vals = tuple(float(p) for p in parts)
            if len(vals) != 2:
                raise ValueError(f"expected 2 values, got {len(vals)}")
            return vals
        if kind == _QUAD:
            vals = tuple(float(p) for p in parts)
            if len(vals) != 4:
                raise ValueError(f"expected 4 values, got {len(vals)}")
            return vals
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    raise AssertionError(f"unknown schema kind {kind}")


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from None
    values: dict[str, object] = {}
    problems: list[str] = []
    for section in parser.sections():
        if section not in SCHEMA:
            problems.append(f"unknown section [{section}] (known: {', '.join(SCHEMA)})")
            continue
        for key, raw in parser[section].items():
            if key not in SCHEMA[section]:
                problems.append(f"unknown key {key!r} in [{section}] (known: {', '.join(SCHEMA[section])})")
                continue
            kind, _default = SCHEMA[section][key]
            values[key] = _parse_value(kind, raw, f"[{section}] {key}")
    if problems:
        raise ConfigError("; ".join(problems))
    values["power_control"] = parser.has_section("power")
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def validate_config(cfg: ExperimentConfig) -> None:
    problems: list[str] = []
    if min(cfg.n_tx, cfg.n_rx, cfg.n_ms) < 1:
        problems.append("antenna/element counts must be >= 1")
    if cfg.sim_layers < 1:
        problems.append("sim_layers must be >= 1")
    try:
        variant = cfg.variant
        if variant.ms_type == "ris" and cfg.sim_layers != 1:
            problems.append("ms_type ris requires sim_layers = 1")
        if variant.ms_mode == "controllable" and not cfg.controller_hidden:
            problems.append("controllable surface needs nonempty controller_hidden widths")
    except ValueError as exc:
        problems.append(str(exc))
    if cfg.fading not in ("sv", "ricean"):
        problems.append(f"fading must be sv or ricean, got {cfg.fading!r}")
    if cfg.fading == "sv" and cfg.scatterers < 1:
        problems.append("sv fading needs scatterers >= 1")
    if cfg.fading == "ricean" and len(cfg.k_factors_db) != 3:
        problems.append("ricean fading needs three K-factors (TX-MS, MS-RX, TX-RX)")
    if cfg.pool not in ("static", "dynamic"):
        problems.append(f"pool must be static or dynamic, got {cfg.pool!r}")
    if cfg.optimizer not in ("sgd", "adam"):
        problems.append(f"optimizer must be sgd or adam, got {cfg.optimizer!r}")
    if cfg.learning_rate < 0:
        problems.append("learning_rate must be nonnegative")
    if cfg.epochs < 0:
        problems.append("epochs must be >= 0")
    if cfg.batch_size < 1:
        problems.append("batch_size must be >= 1")
    if not cfg.seeds:
        problems.append("seeds must be nonempty")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        problems.append("seeds must be distinct")
    if cfg.eval_repeats < 1:
        problems.append("eval_repeats must be >= 1")
    if cfg.kind not in ("mnist", "blobs"):
        problems.append(f"data kind must be mnist or blobs, got {cfg.kind!r}")
    if cfg.kind == "blobs":
        if cfg.classes < 2 or cfg.dim < 1 or cfg.per_class < 1:
            problems.append("blobs need classes >= 2, dim >= 1, per_class >= 1")
        if cfg.separation <= 0:
            problems.append("blobs separation must be positive")
        if not 0.0 < cfg.train_fraction < 1.0:
            problems.append("train_fraction must be in (0, 1)")
    if cfg.power_control:
        if cfg.gamma < 0:
            problems.append("gamma must be nonnegative")
        if cfg.warmup < 0 or (cfg.epochs > 0 and cfg.warmup > cfg.epochs):
            problems.append(f"warmup ({cfg.warmup}) must lie in [0, epochs]")
        if cfg.scaling not in SCALING_MODES:
            problems.append(f"scaling must be one of {SCALING_MODES}")
        if cfg.phase_mode not in PHASE_MODES:
            problems.append(f"phase_mode must be one of {PHASE_MODES}")
        x0, x1, y0, y1 = cfg.arena
        if x1 <= x0 or y1 <= y0:
            problems.append("arena must be a proper rectangle (x0 x1 y0 y1)")
        if cfg.fading != "sv":
            problems.append("power control runs on the geometric (sv) channel")
    if problems:
        raise ConfigError("; ".join(problems))


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    """One sweep point: a config with the axis value substituted."""
    if axis == "snr":
        if cfg.power_control:
            raise ConfigError("snr axis conflicts with a learned power policy; sweep gamma instead")
        out = replace(cfg, power_dbm=cfg.noise_dbm + float(value))
    elif axis == "elements":
        out = replace(cfg, n_ms=int(value))
    elif axis == "layers":
        if cfg.ms_type != "sim":
            raise ConfigError("layers axis requires ms_type sim")
        out = replace(cfg, sim_layers=int(value))
    elif axis == "gamma":
        if not cfg.power_control:
            raise ConfigError("gamma axis requires a [power] section")
        out = replace(cfg, gamma=float(value))
    elif axis == "n_t":
        out = replace(cfg, n_tx=int(value))
    else:
        raise ConfigError(f"unknown sweep axis {axis!r} (valid: {', '.join(SWEEP_AXES)})")
    validate_config(out)
    return out


def config_to_text(cfg: ExperimentConfig) -> str:
    """Round-trippable INI rendering of a config (power section included
    only when power control is active)."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, keys in SCHEMA.items():
        if section == "power" and not cfg.power_control:
            continue
        parser[section] = {}
        for key in keys:
            val = getattr(cfg, key)
            if isinstance(val, tuple):
                parser[section][key] = ",".join(str(v) for v in val)
            else:
                parser[section][key] = str(val)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
