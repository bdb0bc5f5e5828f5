"""Flat key=value run configuration.

One `key=value` per line, `#` starts a comment, keys match TrainConfig
field names plus run-level settings (paths, formats, strategy switches,
and the prune-study grid). The effective config written next to a run's
outputs reloads to an identical run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .cellgraph import LAPLACIAN_KINDS
from .curriculum import LOCAL_MODES, PRUNE_STRATEGIES
from .ingest import FORMATS
from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    train: TrainConfig
    input: str | None = None
    input_format: str = "csv"
    labels: str | None = None
    outdir: str = "out"
    laplacian_kind: str = "sym_normalized"
    prune_strategy: str = "hard"
    local_mode: str = "literal"
    # prune-study grid
    strategies: list[str] = field(default_factory=lambda: ["hard"])
    alphas: list[float] = field(default_factory=lambda: [0.11])
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.input_format not in FORMATS:
            raise ConfigError(f"input_format must be one of {FORMATS}, got {self.input_format!r}")
        if self.laplacian_kind not in LAPLACIAN_KINDS:
            raise ConfigError(
                f"laplacian_kind must be one of {LAPLACIAN_KINDS}, got {self.laplacian_kind!r}"
            )
        if self.prune_strategy not in PRUNE_STRATEGIES:
            raise ConfigError(
                f"prune_strategy must be one of {PRUNE_STRATEGIES}, got {self.prune_strategy!r}"
            )
        if self.local_mode not in LOCAL_MODES:
            raise ConfigError(f"local_mode must be one of {LOCAL_MODES}, got {self.local_mode!r}")
        for strategy in self.strategies:
            if strategy not in PRUNE_STRATEGIES:
                raise ConfigError(f"unknown strategy {strategy!r} in strategies")


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_RUN_FIELDS = {
    "input": str,
    "input_format": str,
    "labels": str,
    "outdir": str,
    "laplacian_kind": str,
    "prune_strategy": str,
    "local_mode": str,
}
_LIST_FIELDS = {"strategies": str, "alphas": float, "seeds": int}


def _parse_train_value(name: str, raw: str):
    if name in ("loss_weights",):
        parts = [float(p) for p in raw.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"{name} needs 3 comma-separated values, got {raw!r}")
        return tuple(parts)
    if name == "zinb_dims":
        parts = [int(p) for p in raw.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"{name} needs 3 comma-separated values, got {raw!r}")
        return tuple(parts)
    if name == "t_hat":
        return None if raw.lower() in ("", "none") else int(raw)
    if name in (
        "n_clusters", "t1", "t2", "k_neighbors", "n_hvg", "latent_dim",
        "hidden_dim", "cheb_order", "target_update_interval", "seed",
    ):
        return int(raw)
    return float(raw)


def parse_config(path) -> RunConfig:
    text = Path(path).read_text()
    train_kwargs: dict = {}
    run_kwargs: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        try:
            if key in _TRAIN_FIELDS:
                train_kwargs[key] = _parse_train_value(key, raw)
            elif key in _RUN_FIELDS:
                run_kwargs[key] = raw
            elif key in _LIST_FIELDS:
                cast = _LIST_FIELDS[key]
                run_kwargs[key] = [cast(p.strip()) for p in raw.split(",") if p.strip()]
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ConfigError:
            raise
        except ValueError as err:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {err}") from None
    if "n_clusters" not in train_kwargs:
        raise ConfigError(f"{path}: n_clusters is required")
    try:
        train = TrainConfig(**train_kwargs)
        return RunConfig(train=train, **run_kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from None


def write_config(cfg: RunConfig, path) -> None:
    """Echo the fully resolved configuration, one key per line."""
    train = cfg.train
    lines = []
    for name in _TRAIN_FIELDS:
        value = getattr(train, name)
        if name == "t_hat":
            value = train.effective_t_hat
        if isinstance(value, tuple):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name}={value}")
    for name in _RUN_FIELDS:
        value = getattr(cfg, name)
        if value is not None:
            lines.append(f"{name}={value}")
    lines.append("strategies=" + ",".join(cfg.strategies))
    lines.append("alphas=" + ",".join(repr(a) for a in cfg.alphas))
    lines.append("seeds=" + ",".join(str(s) for s in cfg.seeds))
    Path(path).write_text("\n".join(lines) + "\n")
