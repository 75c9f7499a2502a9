"""
Helpers shared by the subcommands: label schemas from the run config, flag to
config-key mapping, io path checks, output directories and the
resolved-config dump.
"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

from src.core.errors import ConfigError
from src.models.config import RunConfig, dump_config
from src.models.domain import LabelSchema, ModelParams

logger = logging.getLogger(__name__)

CONFIG_DUMP = "config.resolved.txt"


def label_schema(cfg: RunConfig) -> LabelSchema:
    """LabelSchema for the configured tasks"""
    if cfg.task.kind == "classification":
        return LabelSchema(
            id_column=cfg.corpus.id_column,
            class_columns={name: cfg.task.class_map(name) for name in cfg.task.names},
        )
    return LabelSchema(
        id_column=cfg.corpus.id_column,
        target_column=cfg.corpus.target_column,
        target_rate_hz=cfg.corpus.target_rate_hz,
    )


def flag_overrides(flags: Dict[str, Any]) -> List[str]:
    """
    `key=value` overrides for the command flags that were given.

    Args:
        flags: Config key -> flag value; None, False and empty lists are skipped

    Returns:
        Override strings ranked like --set; lists are comma-joined
    """
    overrides: List[str] = []
    for key, value in flags.items():
        if value is None or value is False or value == []:
            continue
        if value is True:
            value = "true"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        overrides.append(f"{key}={value}")
    return overrides


def require_path(value: Optional[str], flag: str) -> Path:
    if not value:
        raise ConfigError(f"{flag} is required (or its io.* config key)")
    return Path(value)


def single_path(values: List[str], flag: str) -> Path:
    if len(values) != 1:
        raise ConfigError(f"Expected exactly one {flag}, got {len(values)}")
    return Path(values[0])


def ensure_dir(path: Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_config_dump(cfg: RunConfig, out_dir: Path) -> Path:
    """Write config.resolved.txt with io paths relative to `out_dir`"""
    path = Path(out_dir) / CONFIG_DUMP
    path.write_text(dump_config(cfg, base_dir=out_dir), encoding="utf-8")
    return path


def class_names_for(cfg: RunConfig, params: ModelParams) -> Dict[str, List[str]]:
    """Configured class names for each classification head whose class count matches"""
    names: Dict[str, List[str]] = {}
    for head in params.arch.heads:
        if head.kind != "classification":
            continue
        configured: Optional[List[str]] = cfg.task.classes.get(head.name)
        if configured and len(configured) == head.n_classes:
            names[head.name] = list(configured)
        else:
            logger.warning(
                f"No matching class names configured for head {head.name!r}; using class_<i> columns"
            )
    return names
