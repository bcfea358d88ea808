"""Environment defaults and versioned JSON configuration loading."""

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TypeVar

from dotenv import load_dotenv
from pydantic import BaseModel, ValidationError

from src.exceptions import ConfigError
from src.models import RunConfig, TransferFunctionSpec
from src.raster_io import load_tensors

load_dotenv()

SCHEMA_VERSION = 1

ModelT = TypeVar("ModelT", bound=BaseModel)


@dataclass(frozen=True)
class EnvDefaults:
    """Process-wide defaults read from the environment (or a .env file)."""

    threads: int = 1
    deterministic: bool = False


def _env_bool(name: str, default: bool) -> bool:
    raw = os.environ.get(name)
    if raw is None:
        return default
    return raw.strip().lower() in ("1", "true", "yes", "on")


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None:
        return default
    try:
        value = int(raw)
    except ValueError as e:
        raise ConfigError(name, f"expected an integer, got '{raw}'") from e
    if value < 1:
        raise ConfigError(name, f"must be at least 1, got {value}")
    return value


def env_defaults() -> EnvDefaults:
    return EnvDefaults(
        threads=_env_int("MERLIN_THREADS", 1),
        deterministic=_env_bool("MERLIN_DETERMINISTIC", False),
    )


def _read_json(path: str | Path) -> dict[str, Any]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(str(path), f"not valid JSON ({e.msg} at line {e.lineno})") from e
    if not isinstance(payload, dict):
        raise ConfigError(str(path), "top-level JSON value must be an object")
    return payload


def _validate(model: type[ModelT], payload: dict[str, Any], source: str) -> ModelT:
    try:
        return model.model_validate(payload)
    except ValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigError(source, problems) from e


def load_run_config(path: str | Path) -> RunConfig:
    """Load a training run configuration; `schema_version` must be 1 and unknown keys are rejected."""
    payload = _read_json(path)
    version = payload.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(str(path), f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
    return _validate(RunConfig, payload, str(path))


def parse_transfer_spec(value: str) -> TransferFunctionSpec:
    """Resolve a transfer function argument: the literal 'identity' or a JSON spec file."""
    if value == "identity":
        return TransferFunctionSpec.identity()
    payload = _read_json(value)
    payload.pop("schema_version", None)
    spec = _validate(TransferFunctionSpec, payload, value)
    if spec.kind == "explicit_frequency_grid" and spec.grid_file is not None:
        grid_path = Path(spec.grid_file)
        if not grid_path.is_absolute():
            grid_path = Path(value).parent / grid_path
        tensors = load_tensors(grid_path).to_dict()
        if "re" not in tensors or "im" not in tensors:
            raise ConfigError(value, "grid_file must hold 're' and 'im' entries")
        spec.attach_grid(tensors["re"].astype("float64") + 1j * tensors["im"].astype("float64"))
    elif spec.kind == "explicit_frequency_grid":
        raise ConfigError(value, "explicit_frequency_grid requires grid_file")
    return spec


def write_config(model: BaseModel, path: str | Path) -> None:
    payload = model.model_dump(mode="json")
    Path(path).write_text(json.dumps(payload, indent=2), encoding="utf-8")
