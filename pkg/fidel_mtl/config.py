"""Runtime settings from the environment and JSON experiment configs."""

from __future__ import annotations

from dataclasses import asdict, fields
import json
import os
from pathlib import Path
from typing import Any

from dotenv import load_dotenv as load_env_file

from fidel_mtl.errors import ValidationError
from fidel_mtl.types import ModelConfig, Settings, TrainConfig


OPTIMIZERS = ("adam", "sgd")


def _get_int(name: str, default: int) -> int:
    raw = os.getenv(name, "").strip()
    if not raw:
        return default
    try:
        return int(raw)
    except ValueError:
        return default


def _get_bool(name: str, default: bool) -> bool:
    raw = os.getenv(name, "").strip().lower()
    if not raw:
        return default
    if raw in {"1", "true", "t", "yes", "y", "on"}:
        return True
    if raw in {"0", "false", "f", "no", "n", "off"}:
        return False
    return default


def env_file_path() -> Path:
    override = os.getenv("FIDEL_ENV_FILE", "").strip()
    return Path(override) if override else Path.cwd() / ".env"


def load_settings(load_dotenv: bool = True) -> Settings:
    if load_dotenv:
        load_env_file(dotenv_path=env_file_path(), override=False)

    return Settings(
        data_dir=os.getenv("FIDEL_DATA_DIR", "data").strip() or "data",
        log_level=os.getenv("FIDEL_LOG_LEVEL", "INFO").strip().upper() or "INFO",
        deterministic=_get_bool("FIDEL_DETERMINISTIC", False),
        workers=max(1, _get_int("FIDEL_WORKERS", 1)),
    )


def parse_alphas(text: str) -> tuple[float, float, float]:
    parts = [item.strip() for item in text.split(",") if item.strip()]
    if len(parts) != 3:
        raise ValidationError(f"alphas must be three comma-separated numbers, got '{text}'")
    try:
        alphas = tuple(float(item) for item in parts)
    except ValueError as exc:
        raise ValidationError(f"alphas must be numeric, got '{text}'") from exc
    validate_alphas(alphas)  # type: ignore[arg-type]
    return alphas  # type: ignore[return-value]


def validate_alphas(alphas: tuple[float, float, float]) -> None:
    if len(alphas) != 3:
        raise ValidationError(f"expected three alphas, got {len(alphas)}")
    if any(alpha < 0 for alpha in alphas):
        raise ValidationError(f"alphas must be non-negative, got {alphas}")
    if alphas[0] <= 0:
        raise ValidationError("alpha1 must be positive; the label task is always optimized")


def validate_train_config(config: TrainConfig) -> None:
    validate_alphas(config.alphas)
    if config.batch_size < 1:
        raise ValidationError(f"batch_size must be >= 1, got {config.batch_size}")
    if config.learning_rate < 0:
        raise ValidationError(f"learning_rate must be >= 0, got {config.learning_rate}")
    if config.l2_lambda < 0:
        raise ValidationError(f"l2_lambda must be >= 0, got {config.l2_lambda}")
    if not 0.0 < config.keep_prob <= 1.0:
        raise ValidationError(f"keep_prob must be in (0, 1], got {config.keep_prob}")
    if config.max_epochs < 1:
        raise ValidationError(f"max_epochs must be >= 1, got {config.max_epochs}")
    if config.early_stop_patience < 1:
        raise ValidationError(f"early_stop_patience must be >= 1, got {config.early_stop_patience}")
    if config.optimizer not in OPTIMIZERS:
        raise ValidationError(f"optimizer must be one of {OPTIMIZERS}, got '{config.optimizer}'")


def _build(cls, payload: dict[str, Any], section: str):
    known = {item.name for item in fields(cls)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ValidationError(f"unknown {section} config keys: {', '.join(unknown)}")
    return cls(**payload)


def model_config_from_dict(payload: dict[str, Any]) -> ModelConfig:
    data = dict(payload)
    if "conv_stages" in data:
        data["conv_stages"] = tuple((int(size), int(count)) for size, count in data["conv_stages"])
    return _build(ModelConfig, data, "model")


def train_config_from_dict(payload: dict[str, Any]) -> TrainConfig:
    data = dict(payload)
    if "alphas" in data:
        data["alphas"] = tuple(float(alpha) for alpha in data["alphas"])
    config = _build(TrainConfig, data, "train")
    validate_train_config(config)
    return config


def model_config_to_dict(config: ModelConfig) -> dict[str, Any]:
    payload = asdict(config)
    payload["conv_stages"] = [list(stage) for stage in config.conv_stages]
    return payload


def train_config_to_dict(config: TrainConfig) -> dict[str, Any]:
    payload = asdict(config)
    payload["alphas"] = list(config.alphas)
    return payload


def _read_json(path: Path) -> dict[str, Any]:
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    return payload


def load_model_config(path: Path) -> ModelConfig:
    return model_config_from_dict(_read_json(path))


def load_train_config(path: Path) -> TrainConfig:
    return train_config_from_dict(_read_json(path))


def load_experiment_config(path: Path | None) -> tuple[ModelConfig, TrainConfig]:
    """Read a document with optional "model" and "train" sections."""
    if path is None:
        return ModelConfig(), TrainConfig()
    payload = _read_json(path)
    unknown = sorted(set(payload) - {"model", "train"})
    if unknown:
        raise ValidationError(f"unknown experiment config sections: {', '.join(unknown)}")
    model_section, train_section = dict(payload.get("model", {})), dict(payload.get("train", {}))
    if "keep_prob" in model_section and "keep_prob" in train_section:
        if float(model_section["keep_prob"]) != float(train_section["keep_prob"]):
            raise ValidationError(
                f"{path}: model keep_prob {model_section['keep_prob']} disagrees with train keep_prob {train_section['keep_prob']}"
            )
    # dropout reads the train value; one section alone sets both
    for section, other in ((model_section, train_section), (train_section, model_section)):
        if "keep_prob" in section:
            other.setdefault("keep_prob", section["keep_prob"])
    return model_config_from_dict(model_section), train_config_from_dict(train_section)


def dump_json(payload: dict[str, Any]) -> str:
    return json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n"
