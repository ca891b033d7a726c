"""Scenario configuration: TOML text validated into frozen models.

A config names one scheme and carries exactly the matching parameter
section, a node roster (count per traffic profile) and, optionally, a
railway situation with its track and vehicles.
"""
from __future__ import annotations

from pathlib import Path
from typing import Literal

import tomli
import tomli_w
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from .backoff_queue import Tier
from .params import ChannelParams, CsmaParams, DcfParams, LplParams, MacParams
from .railway import (
    DEFAULT_PROFILES,
    SENSOR_CLASSES,
    Segment,
    Sensor,
    SensorProfile,
    SituationPolicy,
    Topology,
    TrackMap,
    Vehicle,
)
from . import workload

SCHEMES = ("backoff_queue", "csma154", "bmac", "dcf")


class ConfigError(Exception):
    """Every problem found in a config, one message per entry."""

    def __init__(self, errors: list[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


class _Cfg(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


TrafficKind = Literal[
    "periodic_a", "periodic_b", "random_c", "voip", "video_phone", "av_streaming",
    "periodic", "uniform", "rate",
]


class NodeGroup(_Cfg):
    group: str
    traffic: TrafficKind
    count: PositiveInt
    access_class: Literal["voice", "video", "best_effort"] = "best_effort"
    payload_bytes: PositiveInt | None = None
    period_us: PositiveInt | None = None
    min_interval_us: PositiveInt | None = None
    max_interval_us: PositiveInt | None = None
    rate_min_bps: PositiveFloat | None = None
    rate_max_bps: PositiveFloat | None = None
    rate_draw: Literal["uniform", "log_uniform"] | None = None

    @model_validator(mode="after")
    def _complete(self):
        self.profile()
        return self

    def profile(self) -> workload.TrafficProfile:
        named = {
            "periodic_a": workload.periodic_a,
            "periodic_b": workload.periodic_b,
            "random_c": workload.random_c,
            "voip": workload.voip,
            "video_phone": workload.video_phone,
            "av_streaming": workload.av_streaming,
        }
        overrides = {
            k: v for k, v in {
                "payload_bytes": self.payload_bytes,
                "period_us": self.period_us,
                "min_interval_us": self.min_interval_us,
                "max_interval_us": self.max_interval_us,
                "rate_min_bps": self.rate_min_bps,
                "rate_max_bps": self.rate_max_bps,
                "rate_draw": self.rate_draw,
            }.items() if v is not None
        }
        if self.traffic in named:
            base = named[self.traffic]()
            fields = {**base.__dict__, **overrides}
        else:
            fields = {"kind": self.traffic, **overrides}
        try:
            return workload.TrafficProfile(**fields)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"traffic {self.traffic!r}: {exc}") from None


class TraceConfig(_Cfg):
    protocol: bool = False
    events: bool = False


class SegmentConfig(_Cfg):
    length_m: PositiveFloat
    curved: bool = False
    radius_m: PositiveFloat | None = None


class TrackConfig(_Cfg):
    segments: list[SegmentConfig] = Field(min_length=1)
    tags: list[NonNegativeFloat] = []

    def build(self) -> TrackMap:
        return TrackMap(
            tuple(Segment(s.length_m, s.curved, s.radius_m) for s in self.segments),
            tuple(self.tags),
        )


class SensorConfig(_Cfg):
    id: str
    kind: Literal[SENSOR_CLASSES]  # type: ignore[valid-type]
    healthy: bool = True


class VehicleConfig(_Cfg):
    id: str
    sensors: list[SensorConfig] = Field(min_length=1)
    cluster_head: str | None = None


class ProfileConfig(_Cfg):
    base_period_us: PositiveInt
    min_period_us: PositiveInt
    alpha: NonNegativeFloat = 0.0
    beta: NonNegativeFloat = 0.0
    tier: Tier = Tier.REGULAR


class SituationConfig(_Cfg):
    initial_speed_mps: NonNegativeFloat = 40.0
    acceleration_mps2: float = 0.5
    max_speed_mps: PositiveFloat | None = 83.3
    tick_us: PositiveInt = 100_000
    v_ref_mps: PositiveFloat = 100.0
    lookahead_m: NonNegativeFloat = 2000.0
    speed_threshold_mps: NonNegativeFloat = 55.6
    speed_band_mps: PositiveFloat = 10.0
    hop_latency_us: NonNegativeInt = 2000
    payload_bytes: PositiveInt = workload.LOW_RATE_PAYLOAD
    safety_gateway: bool = False
    safety_gateway_service_us: PositiveInt = 1000
    track: TrackConfig
    vehicles: list[VehicleConfig] = Field(min_length=1)
    profiles: dict[str, ProfileConfig] = {}

    @model_validator(mode="after")
    def _consistent(self):
        unknown = sorted(set(self.profiles) - set(SENSOR_CLASSES))
        if unknown:
            raise ValueError(f"profiles for unknown sensor classes: {unknown}")
        self.topology()
        self.track.build()
        self.sensor_profiles()
        return self

    def policy(self) -> SituationPolicy:
        return SituationPolicy(
            self.v_ref_mps, self.lookahead_m, self.speed_threshold_mps, self.hop_latency_us,
            self.speed_band_mps,
        )

    def topology(self) -> Topology:
        vehicles = tuple(
            Vehicle(
                v.id, v.cluster_head or f"{v.id}.head",
                tuple(Sensor(s.id, s.kind, s.healthy) for s in v.sensors),
            )
            for v in self.vehicles
        )
        return Topology(vehicles, safety_gateway=self.safety_gateway)

    def sensor_profiles(self) -> dict[str, SensorProfile]:
        out = dict(DEFAULT_PROFILES)
        for cls, p in self.profiles.items():
            out[cls] = SensorProfile(cls, p.base_period_us, p.min_period_us, p.alpha, p.beta, p.tier)
        return out


class ScenarioConfig(_Cfg):
    name: str = "scenario"
    scheme: Literal["backoff_queue", "csma154", "bmac", "dcf"]
    seed: int = 1
    horizon_us: PositiveInt
    warmup_us: NonNegativeInt = 5_000_000
    buffer_frames: PositiveInt = 64
    roster_order: Literal["grouped", "interleaved"] = "grouped"
    channel: ChannelParams = ChannelParams()
    backoff_queue: MacParams | None = None
    csma154: CsmaParams | None = None
    bmac: LplParams | None = None
    dcf: DcfParams | None = None
    nodes: list[NodeGroup] = []
    situation: SituationConfig | None = None
    trace: TraceConfig = TraceConfig()

    @model_validator(mode="after")
    def _shape(self):
        problems = []
        present = [s for s in SCHEMES if getattr(self, s) is not None]
        if present != [self.scheme]:
            extra = [s for s in present if s != self.scheme]
            if extra:
                problems.append(f"sections {extra} do not match scheme {self.scheme!r}")
            if self.scheme not in present:
                problems.append(f"scheme {self.scheme!r} needs a [{self.scheme}] section")
        if self.horizon_us <= self.warmup_us:
            problems.append(
                f"horizon_us ({self.horizon_us}) must exceed warmup_us ({self.warmup_us})"
            )
        sensors = sum(len(v.sensors) for v in self.situation.vehicles) if self.situation else 0
        if sum(g.count for g in self.nodes) + sensors == 0:
            problems.append("node count must be positive: give [[nodes]] or a situation")
        if self.situation is not None and self.scheme != "backoff_queue":
            problems.append("a situation needs scheme 'backoff_queue'")
        groups = [g.group for g in self.nodes]
        if len(set(groups)) != len(groups):
            problems.append("node group names must be unique")
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def mac_params(self):
        return getattr(self, self.scheme)

    def replace(self, **changes) -> "ScenarioConfig":
        data = self.model_dump()
        data.update(changes)
        return ScenarioConfig.model_validate(data)


def _format(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        msg = err["msg"]
        if msg.startswith("Value error, "):
            msg = msg[len("Value error, "):]
        out.append(f"{loc}: {msg}")
    return out


def parse_config(text: str) -> ScenarioConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    return config_from_dict(data)


def config_from_dict(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc)) from None


def load_config(path: str | Path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror}"]) from None
    return parse_config(text)


def dump_config(config: ScenarioConfig) -> str:
    return tomli_w.dumps(config.model_dump(mode="json", exclude_none=True))
