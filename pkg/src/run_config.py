import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from datetime import datetime
from typing import get_type_hints

import numpy as np
import pandas as pd
from dotenv import dotenv_values

import src

logger = logging.getLogger(__name__)

ENV_KEYS = {
    "PERMNET_OUTPUT_DIR": "output_dir",
    "PERMNET_WIDTH_CAP": "width_cap",
    "PERMNET_WORKERS": "workers",
    "PERMNET_DB_PATH": "db_path",
    "PERMNET_LOG_LEVEL": "log_level",
}

# Fields that do not change results and stay out of the config hash.
UNHASHED_FIELDS = ("workers", "log_level", "db_path", "output_dir")

COMMANDS = ("construct", "train", "sweep", "rate", "trace")
THEOREMS = ("1", "2", "random")


class ConfigError(ValueError):
    """Raised for malformed or inconsistent run configuration."""


@dataclass
class RunConfig:
    """Every option of every subcommand; unset per-dimension values resolve from the target."""
    command: str = "construct"
    # construct
    target: str = "sin2pi"
    eps: float = 0.25
    theorem: str = "1"
    delta: float = 0.2
    max_retries: int = 10
    width_cap: int = 5_000_000
    proved_widths: bool = False
    # train / sweep / trace
    strategy: str = "equidistant"
    n: int = 40
    seed: int = 2022
    targets: tuple[str, ...] = ("sin1d",)
    strategies: tuple[str, ...] = ("equidistant",)
    n_list: tuple[int, ...] = (10, 20, 40, 80, 160, 320)
    seeds: int | None = None
    k_list: tuple[int, ...] = ()
    with_baseline: bool = False
    epochs: int | None = None
    lr: float = 1e-3
    k: float | None = None
    k_growth: float = 1.002 ** (1 / 10)
    lr_decay: float = 0.998
    batch_size: int | None = None
    granularity: str = "epoch"
    adaptive_k: bool = False
    freeze_affine: bool = False
    activation: str = "relu"
    leaky_slope: float = 0.01
    t_b: float | None = None
    n_train: int | None = None
    n_test: int | None = None
    desk_scale: float = 1.0
    full_scale: bool = False
    events: int = 400
    window: int = 10
    # rate
    source: str = "closed-form"
    results: str = ""
    # environment
    output_dir: str = "results"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    db_path: str = "data/sweep_progress/sweeps.db"
    log_level: str = "DEBUG"

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"Unknown command '{self.command}'. Valid commands: {', '.join(COMMANDS)}.")
        if self.eps <= 0:
            raise ConfigError(f"eps must be positive, got {self.eps}.")
        if self.theorem not in THEOREMS:
            raise ConfigError(f"Unknown theorem '{self.theorem}'. Valid choices: {', '.join(THEOREMS)}.")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}.")
        if self.width_cap < 2 or self.max_retries < 0:
            raise ConfigError("width_cap must be at least 2 and max_retries nonnegative.")
        if self.n < 2 or any(n < 2 for n in self.n_list):
            raise ConfigError("Every width n must be at least 2.")
        if (self.seeds is not None and self.seeds < 1) or (self.epochs is not None and self.epochs < 0) \
                or self.events < 1 or self.window < 1:
            raise ConfigError("seeds, events and window must be positive and epochs nonnegative.")
        if self.lr <= 0 or self.k_growth <= 0 or self.lr_decay <= 0:
            raise ConfigError("lr, k_growth and lr_decay must be positive.")
        if self.k is not None and self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}.")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}.")
        if self.granularity not in ("epoch", "batch"):
            raise ConfigError(f"granularity must be 'epoch' or 'batch', got '{self.granularity}'.")
        if self.activation not in ("relu", "leaky"):
            raise ConfigError(f"activation must be 'relu' or 'leaky', got '{self.activation}'.")
        if not 0 < self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must lie in (0, 1), got {self.leaky_slope}.")
        if self.t_b is not None and self.t_b < 0:
            raise ConfigError(f"t_b must be nonnegative, got {self.t_b}.")
        if self.desk_scale <= 0:
            raise ConfigError(f"desk_scale must be positive, got {self.desk_scale}.")
        if self.source not in ("closed-form", "sweep"):
            raise ConfigError(f"source must be 'closed-form' or 'sweep', got '{self.source}'.")
        if self.source == "sweep" and self.command == "rate" and not self.results:
            raise ConfigError("rate --source sweep needs --results pointing at a sweep_results.csv.")
        if self.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.workers}.")
        return self

    def hashable_dict(self) -> dict:
        data = asdict(self)
        for key in UNHASHED_FIELDS:
            data.pop(key, None)
        return data

    def config_hash(self) -> str:
        canonical = json.dumps(self.hashable_dict(), sort_keys=True, default=list)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def _coerce(value, annotation):
    """Convert a string (or JSON value) to the annotated RunConfig field type."""
    args = getattr(annotation, "__args__", None)
    origin = getattr(annotation, "__origin__", None)
    if value is None:
        return None
    if origin is tuple:
        item_type = args[0]
        items = value if isinstance(value, (list, tuple)) else [v for v in str(value).split(",") if v.strip()]
        return tuple(item_type(str(v).strip()) if item_type is not str else str(v).strip() for v in items)
    if args and type(None) in args:
        if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
            return None
        inner = next(t for t in args if t is not type(None))
        return _coerce(value, inner)
    if annotation is bool:
        if isinstance(value, bool):
            return value
        lowered = str(value).strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"Cannot read '{value}' as a boolean.")
    if annotation is int:
        return int(float(value)) if isinstance(value, str) and "e" in value.lower() else int(value)
    if annotation is float:
        return float(value)
    return str(value)


def coerce_values(raw: dict, source: str) -> dict:
    hints = get_type_hints(RunConfig)
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for key, value in raw.items():
        name = key.strip().lower().replace("-", "_")
        if name not in known:
            raise ConfigError(f"Unknown option '{key}' in {source}.")
        try:
            out[name] = _coerce(value, hints[name])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"Invalid value '{value}' for '{key}' in {source}: {e}") from e
    return out


def environment_values() -> dict:
    """Options set through PERMNET_* environment variables (config/.env is loaded by the CLI)."""
    raw = {field_name: os.environ[key] for key, field_name in ENV_KEYS.items() if os.environ.get(key)}
    return coerce_values(raw, "environment")


def load_config_file(path: str) -> dict:
    """Read a JSON file or key=value lines; values are coerced to RunConfig field types."""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    if path.endswith(".json"):
        with open(path) as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object.")
    else:
        raw = {k: v for k, v in dotenv_values(path).items() if v is not None}
    return coerce_values(raw, path)


def resolve_config(command: str, cli_values: dict, config_path: str | None = None,
                   defaults: dict | None = None) -> RunConfig:
    """Defaults (field defaults, then per-command ones), then environment, then the config file, then CLI flags."""
    merged: dict = dict(defaults or {})
    merged.update(environment_values())
    if config_path:
        merged.update(load_config_file(config_path))
    merged.update(coerce_values({k: v for k, v in cli_values.items() if v is not None}, "command line"))
    merged["command"] = command
    return RunConfig(**merged).validate()


def write_versioned_csv(frame: pd.DataFrame, path: str, name: str, version: int) -> None:
    """CSV whose first line is '# schema: <name> v<version>'."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {name} v{version}\n")
        frame.to_csv(f, index=False)


def read_versioned_csv(path: str) -> tuple[pd.DataFrame, str, int]:
    with open(path) as f:
        header = f.readline().strip()
    if not header.startswith("# schema:"):
        raise ConfigError(f"{path} has no schema header line.")
    name, version = header[len("# schema:"):].split()
    return pd.read_csv(path, skiprows=1), name, int(version.lstrip("v"))


def write_manifest(out_dir: str, cfg: RunConfig, started: float, argv: list[str] | None = None,
                   extra: dict | None = None) -> str:
    """manifest.json with config, hash, code version, wall time and interpreter versions."""
    os.makedirs(out_dir, exist_ok=True)
    finished = time.time()
    manifest = {
        "config": asdict(cfg),
        "config_hash": cfg.config_hash(),
        "code_version": src.__version__,
        "command_line": list(sys.argv if argv is None else argv),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": datetime.fromtimestamp(started).isoformat(timespec="seconds"),
        "finished": datetime.fromtimestamp(finished).isoformat(timespec="seconds"),
        "wall_time": finished - started,
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, default=list)
    logger.debug(f"Wrote manifest {path} (config hash {manifest['config_hash']}).")
    return path
