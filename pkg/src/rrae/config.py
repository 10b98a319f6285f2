"""Experiment configuration: one YAML document, validated before any work starts."""

from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import data, models
from .nn import LrSchedule
from .train import TrainConfig

# desk-scale latent length; the reference runs used 4500 (1-D) / 2800 (2-D)
DEFAULT_LATENT = 512


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class StairSection(_Strict):
    ph0: float = 0.875
    amp0: float = 1.0
    kappa: float = 2.286
    y0: float = 2.3
    w: float = 6.283185307179586


class DataSection(_Strict):
    T: int = Field(200, ge=2)
    grid: tuple[float, float] | None = None
    train_counts: list[int] | None = None
    test_count: int | None = Field(None, ge=1)
    seeds: list[int] | None = None
    stair: StairSection = StairSection()


class ModelSection(_Strict):
    variant: Literal["vanilla", "diabolo", "rrae_strong", "rrae_weak", "irmae", "lorae"] = "rrae_strong"
    latent_dim: int | None = Field(None, ge=1)
    k_max: int | None = Field(None, ge=1)
    inner_layers: int = Field(2, ge=0)
    nuclear_weight: float = Field(0.001, gt=0)
    inner_bias: bool = False
    width: int = Field(64, ge=1)
    encoder_depth: int = Field(1, ge=1)
    decoder_depth: int = Field(6, ge=1)
    activation: Literal["softplus", "relu"] = "softplus"


class ScheduleSection(_Strict):
    initial_rate: float = 1e-3
    decay_factor: float = 10.0
    floor_rate: float = 1e-5
    batches_per_stage: int = Field(2000, ge=1)
    stagnation_window: int = Field(500, ge=1)
    stagnation_rel_tol: float = 1e-5
    stagnation_smoothing: int = Field(50, ge=1)


class TrainSection(_Strict):
    batch_size: int = Field(20, ge=1)
    kappa_w: float | None = Field(None, gt=0)
    kappa_w_on_u: bool = False
    weak_init: Literal["svd", "random"] = "svd"
    seed: int = 0
    shuffle: bool = True
    restarts: int = Field(1, ge=1)
    schedule: ScheduleSection = ScheduleSection()


class EvalSection(_Strict):
    tau: float = Field(1e-6, gt=0)
    error_metric: Literal["global", "columns"] = "global"
    pairs: int = Field(3, ge=1)
    steps: int = Field(5, ge=1)
    seed: int = 0


class ExperimentConfig(_Strict):
    family: Literal["shift", "stair", "freqs", "gauss"] = "shift"
    data: DataSection = DataSection()
    model: ModelSection = ModelSection()
    train: TrainSection = TrainSection()
    eval: EvalSection = EvalSection()
    output: str = "runs/experiment"

    @model_validator(mode="after")
    def _check(self):
        # surfaces ModelSpec / TrainConfig invariant violations at load time
        self.model_spec()
        self.train_config()
        return self

    def family_defaults(self):
        return data.FAMILIES[self.family]

    def data_config(self):
        d = self.data
        return data.DataConfig(
            self.family, d.T, d.grid,
            tuple(d.train_counts) if d.train_counts else None,
            d.test_count,
            tuple(d.seeds) if d.seeds else None,
            data.StairParams(**d.stair.model_dump()),
        )

    def model_spec(self):
        m = self.model
        fam = self.family_defaults()
        latent = m.latent_dim
        if latent is None:
            latent = fam.dims if m.variant == "diabolo" else DEFAULT_LATENT
        k_max = m.k_max if m.k_max is not None else fam.k_max
        return models.ModelSpec(
            variant=m.variant,
            input_dim=self.data.T,
            latent_dim=latent,
            k_max=k_max if m.variant in ("rrae_strong", "rrae_weak") else None,
            inner_layers=m.inner_layers if m.variant == "irmae" else 0,
            nuclear_weight=m.nuclear_weight,
            inner_bias=m.inner_bias,
            width=m.width,
            encoder_depth=m.encoder_depth,
            decoder_depth=m.decoder_depth,
            activation=m.activation,
            param_count=fam.dims,
        )

    def train_config(self, seed=None):
        t = self.train
        kw = t.kappa_w if t.kappa_w is not None else (self.family_defaults().kappa_w or 1.0)
        return TrainConfig(
            model=self.model_spec(),
            batch_size=t.batch_size,
            schedule=LrSchedule(**t.schedule.model_dump()),
            kappa_w=kw,
            kappa_w_on_u=t.kappa_w_on_u,
            weak_init=t.weak_init,
            seed=t.seed if seed is None else seed,
            shuffle=t.shuffle,
            restarts=t.restarts,
        )


def load_config(path=None, overrides=None):
    raw = {}
    if path is not None:
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    for dotted, value in (overrides or {}).items():
        node = raw
        *parents, leaf = dotted.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value
    return ExperimentConfig.model_validate(raw)


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True))
