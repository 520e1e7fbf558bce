from pathlib import Path
from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

FeaturePolicy = Literal["mean", "top-k", "off"]
ConfidenceScale = Literal["r-star", "radius"]


class NoveltyConfig(BaseModel):
    """Knobs of the confidence-drop detector and the outlier buffer."""

    m: float = Field(default=3.0, gt=0, description="Sigma multiplier of the drop rule")
    kappa_min_support: int = Field(
        default=10, ge=2, description="Co-located outliers needed to found a class"
    )
    buffer_expiry: int = Field(
        default=1000, ge=1, description="Max buffered samples before eviction"
    )


class ClassifierConfig(BaseModel):
    novelty: NoveltyConfig = Field(default_factory=NoveltyConfig)
    feature_policy: FeaturePolicy = "mean"
    top_k: int = Field(default=1, ge=1)
    shared_mask: bool = False
    freeze_stats: bool = False
    strict: bool = False
    confidence_scale: ConfidenceScale = "r-star"


class Settings(BaseSettings):
    """
    Application settings loaded from environment variables and .env files.
    """

    m_sigma: float = Field(default=3.0, gt=0)
    kappa: int = Field(default=10, ge=2)
    buffer_expiry: int = Field(default=1000, ge=1)
    feature_policy: FeaturePolicy = "mean"
    top_k: int = Field(default=1, ge=1)
    shared_mask: bool = False
    freeze_stats: bool = False
    strict: bool = False
    confidence_scale: ConfidenceScale = "r-star"
    seed: int = 7
    log_level: str = "WARNING"

    config_dir: Path = Field(
        default=Path.home() / ".config" / "cloudclass",
        description="Directory for local config and the default model file",
    )

    model_config = SettingsConfigDict(
        env_prefix="CLOUDCLASS_",
        env_file=[".env", str(Path.home() / ".config" / "cloudclass" / ".env")],
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @field_validator("log_level")
    @classmethod
    def _upper_level(cls, value: str) -> str:
        return value.upper()

    @property
    def model_path(self) -> Path:
        return self.config_dir / "model.cloud"

    def ensure_config_dir(self):
        self.config_dir.mkdir(parents=True, exist_ok=True)

    def classifier_config(self, **overrides: Optional[object]) -> ClassifierConfig:
        """Build the algorithm config, letting non-None overrides win."""
        values: dict[str, Any] = {
            "m": self.m_sigma,
            "kappa": self.kappa,
            "buffer_expiry": self.buffer_expiry,
            "feature_policy": self.feature_policy,
            "top_k": self.top_k,
            "shared_mask": self.shared_mask,
            "freeze_stats": self.freeze_stats,
            "strict": self.strict,
            "confidence_scale": self.confidence_scale,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return merge_config(ClassifierConfig(), **values)


def merge_config(base: ClassifierConfig, **overrides: Optional[object]) -> ClassifierConfig:
    """
    Copy of `base` with the non-None overrides applied. Keys m, kappa and
    buffer_expiry address the novelty block.
    """
    novelty_keys = {"m": "m", "kappa": "kappa_min_support", "buffer_expiry": "buffer_expiry"}
    novelty = base.novelty.model_dump()
    top = base.model_dump(exclude={"novelty"})
    for key, value in overrides.items():
        if value is None:
            continue
        if key in novelty_keys:
            novelty[novelty_keys[key]] = value
        elif key in top:
            top[key] = value
        else:
            raise KeyError(f"Unknown config key '{key}'")
    return ClassifierConfig(novelty=NoveltyConfig(**novelty), **top)


# Global settings instance
settings = Settings()
