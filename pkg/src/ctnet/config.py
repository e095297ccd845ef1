"""Model and training configurations, plus the ``desk`` and ``full`` presets."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    renum_ct: int = 8
    image_size: int = 32
    stage_channels: tuple[int, ...] = (16, 32, 64)
    se_reduction: int = 4
    tokens: int = 4
    heads: int = 4
    mlp_ratio: float = 2.0
    classes: int = 2
    norm_groups: int = 4

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(int(c) for c in self.stage_channels))
        if self.renum_ct < 1 or self.image_size < 1:
            raise ConfigError("renum_ct and image_size must be >= 1")
        if not self.stage_channels or min(self.stage_channels) < 1:
            raise ConfigError("stage_channels must be a non-empty list of positive ints")
        if self.classes != 2:
            raise ConfigError(f"classes must be 2, got {self.classes}")
        for c in self.stage_channels:
            if c % self.norm_groups:
                raise ConfigError(f"norm_groups {self.norm_groups} must divide stage width {c}")
            if c % self.se_reduction:
                raise ConfigError(f"se_reduction {self.se_reduction} must divide stage width {c}")
        n = self.stage_channels[-1]
        if self.tokens < 1 or n % self.tokens:
            raise ConfigError(f"tokens {self.tokens} must divide last stage width N={n}")
        if self.heads < 1 or self.token_width % self.heads:
            raise ConfigError(f"heads {self.heads} must divide token width d={self.token_width}")
        if self.mlp_hidden < 1:
            raise ConfigError("mlp_ratio too small")

    @property
    def feature_width(self) -> int:
        return self.stage_channels[-1]

    @property
    def token_width(self) -> int:
        return self.stage_channels[-1] // self.tokens

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.mlp_ratio * self.token_width))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stage_channels"] = list(self.stage_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 0.01
    momentum: float = 0.9
    epochs: int = 200
    step_epochs: tuple[int, ...] = (100, 150)
    lr_decay: float = 0.1
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "step_epochs", tuple(int(s) for s in self.step_epochs))
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        s = self.step_epochs
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ConfigError(f"step_epochs must be strictly increasing: {s}")
        if s and (s[0] < 0 or s[-1] >= self.epochs):
            raise ConfigError(f"step_epochs {s} must lie in [0, epochs={self.epochs})")


DESK_MODEL = ModelConfig()
FULL_MODEL = ModelConfig(
    renum_ct=32, image_size=224, stage_channels=(64, 128, 256, 512),
    se_reduction=16, tokens=8, heads=8,
)

PRESETS = {
    "desk": TrainConfig(model=DESK_MODEL),
    "full": TrainConfig(
        model=FULL_MODEL, lr=0.01, epochs=120, step_epochs=(50, 100), batch_size=32,
    ),
}

# tiny network used by the gradient-check suite
TINY_MODEL = ModelConfig(
    renum_ct=2, image_size=8, stage_channels=(4, 8), se_reduction=4, tokens=2, heads=1,
)
