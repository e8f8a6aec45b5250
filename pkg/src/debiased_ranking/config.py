"""
Debiased Ranking - Run Configuration.

Flat key=value run configuration read with python-dotenv, resolved against
defaults and CLI overrides, and snapshotted into every run directory.
"""

import logging
import math
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union, get_type_hints

from dotenv import dotenv_values, set_key

from .evaluation import EvalConfig
from .loopsim import DEFAULT_SIM_LR, SimConfig
from .model import (
    DEFAULT_ALPHA,
    DEFAULT_BATCH_SIZE,
    DEFAULT_BETA,
    DEFAULT_DIM,
    DEFAULT_EPOCHS,
    DEFAULT_L2,
    DEFAULT_LR,
    DEFAULT_NEGATIVES,
    DEFAULT_PATIENCE,
    Hyperparams,
)
from .sampler import DEFAULT_POOL_SIZE, SamplerConfig

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT_ROOT = "runs"
SNAPSHOT_NAME = "config.env"
ARGS_NAME = "args.env"
VALIDATION_K = 5

_TRUE = {"true", "1", "yes", "on"}
_FALSE = {"false", "0", "no", "off"}


def default_output_root() -> str:
    return os.getenv("RANKING_OUTPUT_ROOT", DEFAULT_OUTPUT_ROOT)


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run under one flat namespace."""

    # model and training
    dim: int = DEFAULT_DIM
    lr: float = DEFAULT_LR
    l2: float = DEFAULT_L2
    batch_size: int = DEFAULT_BATCH_SIZE
    negatives: int = DEFAULT_NEGATIVES
    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    epochs: int = DEFAULT_EPOCHS
    seed: int = 0
    loss: str = "dpr"
    ufn: bool = True
    patience: int = DEFAULT_PATIENCE
    gamma_source: str = "normalized"
    propensity_exponent: float = 0.5
    propensity_floor: float = 0.01

    # sampler
    neg_strategy: str = "uniform"
    resample: bool = True
    pool_size: int = DEFAULT_POOL_SIZE

    # evaluation
    k: int = 5
    protocol: str = "full_rank"
    exclude_train: bool = True
    eval_seed: int = 0

    # simulation
    sim_users: int = 200
    sim_items: int = 500
    sim_items_per_user: int = 20
    sim_users_per_item: int = 20
    accept_k: int = 2
    rec_top: int = 10
    metric_k: int = 30
    loops: int = 50
    epochs_per_loop: int = 10
    sim_lr: float = DEFAULT_SIM_LR

    # paths
    dataset_dir: Optional[str] = None
    out_dir: Optional[str] = None

    @classmethod
    def keys(cls):
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any], base: Optional["RunConfig"] = None):
        """Coerce string or typed values onto `base` (defaults when omitted)."""
        unknown = sorted(set(values) - set(cls.keys()))
        if unknown:
            raise ValueError(f"Unknown config keys: {', '.join(unknown)}")
        hints = get_type_hints(cls)
        coerced = {name: _coerce(name, hints[name], value) for name, value in values.items()}
        return replace(base or cls(), **coerced)

    @classmethod
    def from_file(cls, path: Union[str, Path], base: Optional["RunConfig"] = None):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"Config file {path} does not exist")
        values = dotenv_values(path, interpolate=False)
        logger.debug(f"Loaded {len(values)} config keys from {path}")
        return cls.from_mapping(values, base)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Apply CLI overrides; None means "not given"."""
        return RunConfig.from_mapping(
            {key: value for key, value in overrides.items() if value is not None}, self
        )

    @property
    def output_root(self) -> Path:
        return Path(self.out_dir or default_output_root())

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            dim=self.dim,
            lr=self.lr,
            l2=self.l2,
            batch_size=self.batch_size,
            num_negatives=self.negatives,
            alpha=self.alpha,
            beta=self.beta,
            epochs=self.epochs,
            seed=self.seed,
            loss_kind=self.loss,
            use_ufn=self.ufn,
            patience=self.patience,
            gamma_source=self.gamma_source,
            propensity_exponent=self.propensity_exponent,
            propensity_floor=self.propensity_floor,
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(
            num_negatives=self.negatives,
            resample_each_epoch=self.resample,
            strategy=self.neg_strategy,
            seed=self.seed,
            pool_size=self.pool_size,
            batch_size=self.batch_size,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig(
            k=self.k,
            protocol=self.protocol,
            exclude_train=self.exclude_train,
            seed=self.eval_seed,
        )

    def validation_config(self) -> EvalConfig:
        """Early stopping tracks full-rank NDCG@VALIDATION_K on validation."""
        return EvalConfig(
            k=VALIDATION_K,
            protocol="full_rank",
            exclude_train=self.exclude_train,
            seed=self.eval_seed,
        )

    def sim_config(self) -> SimConfig:
        return SimConfig(
            num_users=self.sim_users,
            num_items=self.sim_items,
            init_items_per_user=self.sim_items_per_user,
            init_users_per_item=self.sim_users_per_item,
            accept_k=self.accept_k,
            rec_top=self.rec_top,
            metric_k=self.metric_k,
            loops=self.loops,
            epochs_per_loop=self.epochs_per_loop,
            seed=self.seed,
            hp=replace(self.hyperparams(), lr=self.sim_lr, epochs=self.epochs_per_loop),
        )

    def to_strings(self) -> Dict[str, str]:
        return {key: _render(value) for key, value in sorted(asdict(self).items())}

    def write_snapshot(self, directory: Union[str, Path]) -> Path:
        """Write the resolved config as sorted key=value lines; reloadable via from_file."""
        path = Path(directory) / SNAPSHOT_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("")
        for key, value in self.to_strings().items():
            set_key(path, key, value, quote_mode="always")
        return path


def _render(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def _coerce(name: str, hint: Any, value: Any) -> Any:
    optional = hint == Optional[str]
    if value is None or (optional and value == ""):
        if optional:
            return None
        raise ValueError(f"Config key {name} needs a value")
    if optional or hint is str:
        return str(value)
    if hint is bool:
        if isinstance(value, bool):
            return value
        text = str(value).strip().lower()
        if text in _TRUE:
            return True
        if text in _FALSE:
            return False
        raise ValueError(f"Invalid boolean for {name}: {value!r}")
    try:
        if hint is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(str(value).strip()) if not isinstance(value, (int, float)) else int(value)
        number = float(value)
    except (TypeError, ValueError):
        raise ValueError(f"Invalid {hint.__name__} for {name}: {value!r}") from None
    if not math.isfinite(number):
        raise ValueError(f"Config key {name} must be finite, got {value!r}")
    return number


def write_args(
    directory: Union[str, Path], command: str, arguments: Mapping[str, Any]
) -> Path:
    """
    Record the command and its own arguments next to the config snapshot.

    Lists are written comma-joined, the way the CLI reads them back.
    """
    path = Path(directory) / ARGS_NAME
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("")
    set_key(path, "command", command, quote_mode="always")
    for key, value in sorted(arguments.items()):
        if isinstance(value, (list, tuple)):
            value = ",".join(_render(v) for v in value)
        set_key(path, key, _render(value), quote_mode="always")
    return path
