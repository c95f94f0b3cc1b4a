from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ValidationError, validator

from app.core.exceptions import ConfigError

LinkName = Literal["h_k1", "h_k2", "D", "N1", "N2"]
LINK_NAMES: Tuple[str, ...] = ("h_k1", "h_k2", "D", "N1", "N2")


class LinkSpec(BaseModel):
    """Statistics of one constituent link: Rician factor, distance and path-loss exponent"""
    rician_factor: float = 0.0
    distance: float = 10.0
    pathloss_exponent: float = 2.0
    # (departure, arrival) angles of the LoS steering vectors, radians
    los_angles: Tuple[float, float] = (0.0, 0.0)

    @validator("rician_factor")
    def validate_rician_factor(cls, v):
        if v < 0:
            raise ValueError("rician_factor must be >= 0")
        return v

    @validator("distance", "pathloss_exponent")
    def validate_positive(cls, v, field):
        if v <= 0:
            raise ValueError(f"{field.name} must be > 0")
        return v

    class Config:
        allow_mutation = False


def _default_links() -> Dict[str, LinkSpec]:
    return {
        "h_k1": LinkSpec(rician_factor=0.0, distance=16.0, pathloss_exponent=2.0, los_angles=(0.0, 0.52)),
        "h_k2": LinkSpec(rician_factor=10.0, distance=90.0, pathloss_exponent=2.3, los_angles=(0.0, -0.35)),
        "D": LinkSpec(rician_factor=10.0, distance=80.0, pathloss_exponent=2.3, los_angles=(0.6, -0.6)),
        "N1": LinkSpec(rician_factor=10.0, distance=90.0, pathloss_exponent=2.3, los_angles=(0.25, -0.8)),
        "N2": LinkSpec(rician_factor=0.0, distance=16.0, pathloss_exponent=2.0, los_angles=(0.9, 0.1)),
    }


class SystemConfig(BaseModel):
    """Array sizes, reference path loss and the five constituent link specs"""
    M: int = 64
    N: int = 32
    K: int = 1
    beta0_db: float = -15.0
    d0: float = 10.0
    links: Dict[LinkName, LinkSpec] = None  # type: ignore[assignment]

    @validator("M", "N", "K")
    def validate_counts(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("d0")
    def validate_d0(cls, v):
        if v <= 0:
            raise ValueError("d0 must be > 0")
        return v

    @validator("links", pre=True, always=True)
    def fill_links(cls, v):
        links = _default_links()
        for name, spec in (v or {}).items():
            if name not in LINK_NAMES:
                raise ValueError(f"unknown link '{name}', expected one of {LINK_NAMES}")
            links[name] = spec if isinstance(spec, LinkSpec) else LinkSpec(**spec)
        return links

    def link_shape(self, link_id: int) -> Tuple[int, int]:
        """Spatial extents (M_t, N_t) of the cascaded matrix estimated on a link"""
        if link_id in (1, 2):
            return self.M, self.N
        if link_id == 3:
            return self.N, self.N
        raise ConfigError(f"link_id must be 1, 2 or 3, got {link_id}")


class ScheduleConfig(BaseModel):
    """Pilot training parameters"""
    # Pilot slots I of the single-reflection phases; None means I = N
    pilot_slots: Optional[int] = None
    pilot_power: float = 1.0

    @validator("pilot_slots")
    def validate_pilot_slots(cls, v):
        if v is not None and v < 1:
            raise ValueError("pilot_slots must be >= 1")
        return v

    @validator("pilot_power")
    def validate_pilot_power(cls, v):
        if v <= 0:
            raise ValueError("pilot_power must be > 0")
        return v


class NetConfig(BaseModel):
    """SC-attention architecture"""
    channels: int = 128
    blocks: int = 4
    skip_connection: bool = True
    post_concat_channels: int = 256
    # projection: C2 conv then 1x1 conv to 2 channels; direct: one 3x3 conv to 2 channels
    final_stage: Literal["projection", "direct"] = "projection"
    spatial: Optional[Tuple[int, int]] = None

    @validator("channels", "post_concat_channels")
    def validate_channels(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("blocks")
    def validate_blocks(cls, v):
        if v < 0:
            raise ValueError("blocks must be >= 0")
        return v


class TrainConfig(BaseModel):
    """Optimizer and schedule of one training run"""
    epochs: int = 100
    lr: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 64
    seed: int = 0

    @validator("epochs", "batch_size")
    def validate_positive(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("lr", "weight_decay")
    def validate_non_negative(cls, v, field):
        if v < 0:
            raise ValueError(f"{field.name} must be >= 0")
        return v


DEFAULT_SNR_GRID_DB: List[float] = [-10.0, -5.0, 0.0, 5.0, 10.0, 15.0]


class ExperimentConfig(BaseModel):
    """Everything one experiment run needs, serialized as the JSON experiment config"""
    system: SystemConfig = SystemConfig()
    schedule: ScheduleConfig = ScheduleConfig()
    snr_grid_db: List[float] = DEFAULT_SNR_GRID_DB
    snr_mode: Literal["transmit", "receive"] = "transmit"
    calibration_draws: int = 1000
    correlation_samples: int = 10000
    samples: int = 120000
    split_fraction: float = 0.8
    links: List[int] = [1, 2, 3]
    net: NetConfig = NetConfig()
    train: TrainConfig = TrainConfig()
    seed: int = 2023
    output_dir: str = "runs"

    @validator("snr_grid_db")
    def validate_snr_grid(cls, v):
        if not v:
            raise ValueError("snr_grid_db must not be empty")
        return v

    @validator("samples")
    def validate_samples(cls, v):
        if v < 10:
            raise ValueError("samples must be >= 10")
        return v

    @validator("split_fraction")
    def validate_split(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("split_fraction must lie in (0, 1)")
        return v

    @validator("calibration_draws", "correlation_samples")
    def validate_draws(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("links", each_item=True)
    def validate_links(cls, v):
        if v not in (1, 2, 3):
            raise ValueError("links must be drawn from {1, 2, 3}")
        return v

    @property
    def pilot_slots(self) -> int:
        return self.schedule.pilot_slots or self.system.N

    def net_for_link(self, link_id: int, **overrides) -> NetConfig:
        """NetConfig with the spatial extents of the given link"""
        return self.net.copy(update={"spatial": self.system.link_shape(link_id), **overrides})

    @classmethod
    def desk(cls, **overrides) -> "ExperimentConfig":
        """CPU-sized profile used for acceptance runs"""
        base = cls(
            system=SystemConfig(M=16, N=8),
            snr_mode="receive",
            samples=4000,
            net=NetConfig(channels=32, blocks=2, post_concat_channels=64),
            train=TrainConfig(epochs=30),
        )
        return base.copy(update=overrides)

    @classmethod
    def paper(cls, **overrides) -> "ExperimentConfig":
        """Full-size profile: M=64, N=32, C=128, B=4, T=120000, 100 epochs"""
        return cls().copy(update=overrides)


PROFILES = {"desk": ExperimentConfig.desk, "paper": ExperimentConfig.paper}


def load_experiment_config(
    path: Optional[Union[str, Path]] = None,
    profile: str = "desk",
    seed: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    """Load a JSON experiment config (or a named profile) and apply CLI overrides"""
    try:
        if path is not None:
            cfg = ExperimentConfig.parse_file(path)
        elif profile in PROFILES:
            cfg = PROFILES[profile]()
        else:
            raise ConfigError(f"unknown profile '{profile}', expected one of {sorted(PROFILES)}")
    except ValidationError as e:
        raise ConfigError(f"malformed config {path}: {e}")
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read config {path}: {e}")

    update = {}
    if seed is not None:
        update["seed"] = seed
    if output_dir is not None:
        update["output_dir"] = output_dir
    return cfg.copy(update=update) if update else cfg
