"""Plain-text ``key = value`` run configurations.

Lines starting with ``#`` are comments. Keys are flat or dotted::

    seed = 7
    source.network = circular
    source.group_velocity = 5.0
    train.batch_size = 5
    damage.D9 = 65, 195

``sensor.*`` and ``damage.*`` entries override the coordinate tables of
both domains. Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .pipeline import ExperimentConfig, derive_seed
from .signal_lab import DAMAGES, NETWORKS, SENSORS, PlateScenario
from .neural_net import TrainConfig


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(p) for p in text.split(","))


_TOP = {
    "case_id": str, "seed": int, "q_percent": float, "copies": int, "paper_split": _bool,
    "n_bins": int, "snr_min_db": float, "snr_max_db": float, "out": str,
    "source_split": _floats, "target_split": _floats,
}
_DOMAIN = {
    "network": str, "material": str, "group_velocity": float, "attenuation_coeff": float,
    "scatter_amplitude": float, "boundary_reflection": float, "noise_level": float,
    "repeats": int, "seed": int, "bundle": str,
}
_TYPES = {"float": float, "int": int, "bool": _bool}
_TRAIN = {f.name: _TYPES[f.type] for f in dataclasses.fields(TrainConfig) if f.name != "seed"}
_SECTIONS = {"source": _DOMAIN, "target": _DOMAIN, "train": _TRAIN, "mpca_train": _TRAIN, "finetune": _TRAIN}
REQUIRED = ("seed", "source.network", "target.network")


@dataclass(frozen=True)
class DomainConfig:
    network: str
    scenario: PlateScenario
    bundle: str | None = None


@dataclass(frozen=True)
class RunConfig:
    source: DomainConfig
    target: DomainConfig
    experiment: ExperimentConfig
    snr_range: tuple[float, float] = (20.0, 40.0)
    out: str = "runs/out"
    raw: dict = field(default_factory=dict, compare=False)

    def domain(self, which: str) -> DomainConfig:
        if which not in ("source", "target"):
            raise ConfigError(f"domain must be 'source' or 'target', got {which!r}")
        return getattr(self, which)

    def with_overrides(self, seed=None, q=None, copies=None, out=None, paper_split=None) -> "RunConfig":
        """Apply command-line overrides by re-resolving the raw key table."""
        raw = dict(self.raw)
        for key, val in (("seed", seed), ("q_percent", q), ("copies", copies), ("out", out)):
            if val is not None:
                raw[key] = str(val)
        if paper_split:
            raw["paper_split"] = "true"
        return _resolve(raw)


def parse_text(text: str) -> RunConfig:
    raw: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, val = (p.strip() for p in line.split("=", 1))
        if key in raw:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        raw[key] = val
    return _resolve(raw)


def load(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_text(p.read_text())


def _convert(key: str, conv, text: str):
    try:
        return conv(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from None


def _resolve(raw: dict[str, str]) -> RunConfig:
    for key in REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    top: dict = {}
    sections: dict[str, dict] = {s: {} for s in _SECTIONS}
    sensors, damages = dict(SENSORS), dict(DAMAGES)
    for key, text in raw.items():
        head, _, rest = key.partition(".")
        if not rest:
            if key not in _TOP:
                raise ConfigError(f"unknown key {key!r}")
            top[key] = _convert(key, _TOP[key], text)
        elif head in ("sensor", "damage"):
            xy = _convert(key, _floats, text)
            if len(xy) != 2:
                raise ConfigError(f"{key}: expected 'x, y'")
            (sensors if head == "sensor" else damages)[rest] = xy
        elif head in _SECTIONS and rest in _SECTIONS[head]:
            sections[head][rest] = _convert(key, _SECTIONS[head][rest], text)
        else:
            raise ConfigError(f"unknown key {key!r}")

    seed = top["seed"]
    domains = {}
    for name in ("source", "target"):
        d = dict(sections[name])
        network = d.pop("network")
        if network not in NETWORKS:
            raise ConfigError(f"{name}.network: unknown network tag {network!r} (circular or rectangular)")
        bundle = d.pop("bundle", None)
        d["rng_seed"] = d.pop("seed", derive_seed(seed, f"synth.{name}"))
        d.setdefault("material", name)
        try:
            scenario = PlateScenario(sensors=sensors, damage_sites=damages, **d)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None
        domains[name] = DomainConfig(network, scenario, bundle)

    trains = {}
    for name in ("train", "mpca_train", "finetune"):
        try:
            trains[name] = TrainConfig(**sections[name])
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from None

    snr = (top.pop("snr_min_db", 20.0), top.pop("snr_max_db", 40.0))
    if not 0 < snr[0] <= snr[1]:
        raise ConfigError("snr_min_db/snr_max_db: need 0 < min <= max")
    out = top.pop("out", "runs/out")
    top.setdefault("case_id", f"{domains['source'].scenario.material}-{domains['source'].network}"
                              f"->{domains['target'].scenario.material}-{domains['target'].network}")
    try:
        experiment = ExperimentConfig(**top, **trains)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(domains["source"], domains["target"], experiment, snr, out, dict(raw))
