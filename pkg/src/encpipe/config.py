"""JSON run configuration.

Every section rejects unknown keys. Relative paths are resolved against
the directory of the config file. Only the fields a subcommand needs are
required; :meth:`PipelineConfig.require` checks them and that the files
exist.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .regress import DEFAULT_LAMBDA_GRID


class ConfigError(Exception):
    """Invalid configuration or a missing input file (exit code 2)."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=False)


class DataPaths(_Strict):
    train_layers: Optional[Path] = None
    train_responses: Optional[Path] = None
    train_clips: Optional[Path] = None
    train_labels: Optional[Path] = None
    # stimuli for the label stage when they differ from train_layers
    label_layers: Optional[Path] = None
    label_clips: Optional[Path] = None
    test_layers: Optional[Path] = None
    test_responses: Optional[Path] = None
    test_labels: Optional[Path] = None
    test_clips: Optional[Path] = None


class ArtifactPaths(_Strict):
    encoder: Optional[Path] = None
    vox2vox: Optional[Path] = None
    voxel_pca: Optional[Path] = None
    bundle: Optional[Path] = None
    estimate: Optional[Path] = None
    sweep: Optional[Path] = None
    variability: Optional[Path] = None


def _delays(v):
    if not v:
        raise ValueError("delay list must be non-empty")
    if list(v) != sorted(set(v)):
        raise ValueError("delays must be strictly increasing")
    return v


class ModelConfig(_Strict):
    method: Literal["btl", "tl-single", "tl-multi", "bd"] = "btl"
    n_components: int = Field(1000, ge=1)
    encoder_delays: list[int] = [3, 4, 5, 6]
    use_vox2vox: bool = True
    n_select: int = Field(2000, ge=1)
    vox2vox_delays: list[int] = [1, 2, 3]
    leads: list[int] = [3, 4, 5]
    voxel_pca: Optional[int] = Field(None, ge=1)
    voxel_pca_select: int = Field(10, ge=1)
    decoder_pca: Optional[int] = Field(None, ge=1)
    lambda_grid: list[float] = list(DEFAULT_LAMBDA_GRID)
    n_folds: int = Field(10, ge=2)
    tie_tolerance: Union[Literal["se"], float] = "se"

    _check_delays = field_validator("encoder_delays", "vox2vox_delays", "leads")(_delays)

    @field_validator("lambda_grid")
    @classmethod
    def _grid(cls, v):
        if not v or any(x <= 0 for x in v) or list(v) != sorted(v):
            raise ValueError("lambda_grid must be a non-empty ascending list of positive values")
        return v


class PreprocessConfig(_Strict):
    zscore_responses: bool = True
    detrend_window: Optional[int] = Field(None, ge=1)
    label_oversample: int = Field(1, ge=1)
    label_order: Literal["oversample_then_zscore", "zscore_then_oversample"] = "oversample_then_zscore"
    log_labels: bool = False


class EvalConfig(_Strict):
    n_boot: int = Field(1000, ge=100)
    unit: Literal["timepoint", "clip"] = "timepoint"
    trim_boundary: bool = False


class VariabilityConfig(_Strict):
    sources_a: list[Path] = []
    sources_b: list[Path] = []
    window: int = Field(2, ge=2)
    step: int = Field(1, ge=1)


class SweepConfig(_Strict):
    sizes: list[int] = []
    n_seeds: int = Field(10, ge=1)
    trainer: Literal["vox2lab", "tl-single", "tl-multi"] = "vox2lab"


class PipelineConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: Optional[Path] = None
    data: DataPaths = DataPaths()
    artifacts: ArtifactPaths = ArtifactPaths()
    model: ModelConfig = ModelConfig()
    preprocess: PreprocessConfig = PreprocessConfig()
    eval: EvalConfig = EvalConfig()
    variability: VariabilityConfig = VariabilityConfig()
    sweep: SweepConfig = SweepConfig()
    synth: dict = {}

    def resolved(self, base: Path) -> "PipelineConfig":
        """Copy with every relative path made absolute against ``base``."""
        def fix(p):
            return None if p is None else (p if p.is_absolute() else (base / p).resolve())

        d = self.model_copy(deep=True)
        for sec in (d.data, d.artifacts):
            for name in type(sec).model_fields:
                setattr(sec, name, fix(getattr(sec, name)))
        d.variability.sources_a = [fix(p) for p in d.variability.sources_a]
        d.variability.sources_b = [fix(p) for p in d.variability.sources_b]
        d.output_dir = fix(d.output_dir)
        return d

    def require(self, *fields: str) -> list[Path]:
        """Check that dotted fields (e.g. ``"data.train_layers"``) are set and exist."""
        out = []
        for f in fields:
            sec, name = f.split(".")
            p = getattr(getattr(self, sec), name)
            if p is None:
                raise ConfigError(f"{f}: required for this command")
            if not Path(p).exists():
                raise ConfigError(f"{f}: file not found: {p}")
            out.append(Path(p))
        return out

    def snapshot(self) -> dict:
        return json.loads(self.model_dump_json())


def _format_validation(e: ValidationError) -> str:
    lines = []
    for err in e.errors():
        loc = ".".join(str(x) for x in err["loc"]) or "<root>"
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(obj: dict, base: Path | None = None) -> PipelineConfig:
    try:
        cfg = PipelineConfig.model_validate(obj)
    except ValidationError as e:
        raise ConfigError(f"invalid config: {_format_validation(e)}") from None
    return cfg.resolved(base or Path.cwd())


def load_config(path: Path | None) -> PipelineConfig:
    if path is None:
        return parse_config({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(obj, path.parent.resolve())
