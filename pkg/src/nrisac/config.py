"""
JSON experiment configuration.

A file may hold two optional objects::

    {
      "scenario": {"vehicle_start": [25, 40, 1], "slot_count": 8000,
                   "scatterers": [{"position": [-15, 55, 6], "rcs_db": -10}],
                   "blockage": {"start_slot": 800, "duration_slots": 400}},
      "link": {"radar_subcarriers": 256, "gnb_array": [8, 8], "measurement_mode": "model"}
    }

Omitted keys keep their defaults. When ``slot_count`` is given without
``duration`` the duration follows from the slot length.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .array import ArrayGeometry
from .errors import ConfigError
from .protocols.common import LinkSetup
from .scenario import Blockage, ScenarioConfig, Scatterer

_LINK_ARRAYS = {"gnb_array": "tx_geom", "vehicle_array": "rx_geom"}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    link: LinkSetup = field(default_factory=LinkSetup)

    def to_dict(self) -> dict:
        return {"scenario": scenario_to_dict(self.scenario), "link": link_to_dict(self.link)}

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; equal configs give equal digests."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["scatterers"] = [{"position": list(s.position), "rcs_db": s.rcs_db} for s in cfg.scatterers]
    for key in ("gnb_position", "vehicle_start", "direction"):
        d[key] = list(d[key])
    return d


def link_to_dict(link: LinkSetup) -> dict:
    d = {f.name: getattr(link, f.name) for f in fields(link) if f.name not in _LINK_ARRAYS.values()}
    d["gnb_array"] = [link.tx_geom.n_x, link.tx_geom.n_y]
    d["vehicle_array"] = [link.rx_geom.n_x, link.rx_geom.n_y]
    return d


def _unknown(section: str, given: dict, allowed) -> None:
    extra = sorted(set(given) - set(allowed))
    if extra:
        raise ConfigError(f"unknown {section} keys: {', '.join(extra)}")


def scenario_from_dict(data: dict) -> ScenarioConfig:
    allowed = {f.name for f in fields(ScenarioConfig)}
    _unknown("scenario", data, allowed)
    kw = dict(data)
    for key in ("gnb_position", "vehicle_start", "direction"):
        if key in kw:
            kw[key] = tuple(float(v) for v in kw[key])
    if "scatterers" in kw:
        kw["scatterers"] = tuple(Scatterer(tuple(float(v) for v in s["position"]), float(s.get("rcs_db", -10.0)))
                                 for s in kw["scatterers"])
    if kw.get("blockage") is not None:
        kw["blockage"] = Blockage(**kw["blockage"])
    if "slot_count" in kw and "duration" not in kw:
        kw["duration"] = int(kw["slot_count"]) * float(kw.get("slot_duration", ScenarioConfig.slot_duration))
    return ScenarioConfig(**kw)


def link_from_dict(data: dict) -> LinkSetup:
    allowed = ({f.name for f in fields(LinkSetup)} - set(_LINK_ARRAYS.values())) | set(_LINK_ARRAYS)
    _unknown("link", data, allowed)
    kw = {k: v for k, v in data.items() if k not in _LINK_ARRAYS}
    for key, attr in _LINK_ARRAYS.items():
        if key in data:
            kw[attr] = ArrayGeometry(*(int(v) for v in data[key]))
    return LinkSetup(**kw)


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    _unknown("top-level", data, ("scenario", "link"))
    try:
        return ExperimentConfig(scenario_from_dict(data.get("scenario", {})), link_from_dict(data.get("link", {})))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    """Read and validate a JSON configuration; errors name the offending path."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    try:
        return config_from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def with_overrides(cfg: ExperimentConfig, slots: int | None = None, subband: int | None = None) -> ExperimentConfig:
    scenario, link = cfg.scenario, cfg.link
    if slots is not None:
        if slots < 1:
            raise ConfigError("slot count must be positive")
        scenario = scenario.with_slots(slots)
    if subband is not None:
        try:
            link = replace(link, radar_subcarriers=int(subband))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return ExperimentConfig(scenario, link)
