"""Experiment configuration: strict JSON with a documented schema.

Parsing is deliberately unforgiving: unknown keys, missing required keys,
wrong types, and dangling file paths all abort before any computation, so an
experiment record always describes exactly what ran.  See README.md for the
full schema and an example.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .datasets import (
    AppearanceShift,
    ClassificationDomainSpec,
    KIND_CLASSIFICATION,
    KIND_SEGMENTATION,
    SegmentationDomainSpec,
)
from .errors import ConfigError, MaxSquareError
from .training import TrainConfig


@dataclass(frozen=True)
class DatasetPaths:
    source: str
    target: str
    target_eval: str | None = None


@dataclass(frozen=True)
class ModelConfig:
    # Classification
    hidden_dims: tuple = (16,)
    # Segmentation
    trunk_channels: int = 8
    trunk_depth: int = 3
    tap_depth: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str
    out_dir: str
    repeat_seeds: tuple
    train: TrainConfig
    model: ModelConfig
    dataset: object  # generator spec or DatasetPaths


def _section(raw, name, required, optional=()):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    allowed = set(required) | set(optional)
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section {name!r}")
    for key in required:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r} in section {name!r}")
    return raw


def _classification_spec(raw) -> ClassificationDomainSpec:
    _section(
        raw, "dataset.generator",
        required=("num_classes", "samples_per_class", "means", "cov_scale"),
        optional=("target_shift", "target_noise", "seed"),
    )
    try:
        return ClassificationDomainSpec(**raw)
    except (TypeError, MaxSquareError) as exc:
        raise ConfigError(f"invalid classification generator spec: {exc}") from exc


def _segmentation_spec(raw) -> SegmentationDomainSpec:
    _section(
        raw, "dataset.generator",
        required=(
            "image_size", "num_classes", "class_frequency_weights",
            "shapes_per_image", "num_images",
        ),
        optional=("appearance_shift", "seed"),
    )
    raw = dict(raw)
    shift_raw = raw.pop("appearance_shift", {})
    _section(
        shift_raw, "dataset.generator.appearance_shift",
        required=(), optional=("brightness_delta", "channel_gain", "noise_sigma"),
    )
    try:
        return SegmentationDomainSpec(
            appearance_shift=AppearanceShift(**shift_raw), **raw
        )
    except (TypeError, MaxSquareError) as exc:
        raise ConfigError(f"invalid segmentation generator spec: {exc}") from exc


_TRAIN_KEYS = (
    "loss", "lambda_t", "alpha", "gamma", "delta", "lambda_low", "multi_level",
    "lr0", "momentum", "weight_decay", "schedule", "poly_power",
    "anneal_alpha", "anneal_beta", "pretrain_iter", "max_iter", "batch_size",
)

_MODEL_KEYS = ("hidden_dims", "trunk_channels", "trunk_depth", "tap_depth")


def _train_config(raw) -> TrainConfig:
    _section(raw, "train", required=(), optional=_TRAIN_KEYS)
    try:
        return TrainConfig(**raw)
    except (TypeError, MaxSquareError) as exc:
        raise ConfigError(f"invalid train section: {exc}") from exc


def _model_config(raw) -> ModelConfig:
    _section(raw, "model", required=(), optional=_MODEL_KEYS)
    if "hidden_dims" in raw:
        raw = dict(raw, hidden_dims=tuple(raw["hidden_dims"]))
    try:
        return ModelConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"invalid model section: {exc}") from exc


def parse_experiment(raw: dict, base_dir: str = ".") -> ExperimentConfig:
    _section(
        raw, "<root>",
        required=("kind", "dataset"),
        optional=("out_dir", "repeat_seeds", "train", "model"),
    )
    kind = raw["kind"]
    if kind not in (KIND_CLASSIFICATION, KIND_SEGMENTATION):
        raise ConfigError(f"kind must be classification or segmentation, got {kind!r}")

    ds_raw = _section(raw["dataset"], "dataset", required=(), optional=("generator", "paths"))
    if ("generator" in ds_raw) == ("paths" in ds_raw):
        raise ConfigError("dataset must contain exactly one of 'generator' or 'paths'")
    if "generator" in ds_raw:
        dataset = (
            _classification_spec(ds_raw["generator"])
            if kind == KIND_CLASSIFICATION
            else _segmentation_spec(ds_raw["generator"])
        )
    else:
        paths = _section(ds_raw["paths"], "dataset.paths",
                         required=("source", "target"), optional=("target_eval",))
        resolved = {
            k: os.path.join(base_dir, v) if not os.path.isabs(v) else v
            for k, v in paths.items()
        }
        for key, p in resolved.items():
            if not os.path.exists(p):
                raise ConfigError(f"dataset path {key!r} does not exist: {p}")
        dataset = DatasetPaths(**resolved)

    seeds = raw.get("repeat_seeds", [0])
    if (not isinstance(seeds, list) or not seeds
            or any(not isinstance(s, int) or s < 0 for s in seeds)):
        raise ConfigError("repeat_seeds must be a non-empty list of nonnegative ints")

    return ExperimentConfig(
        kind=kind,
        out_dir=raw.get("out_dir", "runs"),
        repeat_seeds=tuple(seeds),
        train=_train_config(raw.get("train", {})),
        model=_model_config(raw.get("model", {})),
        dataset=dataset,
    )


def load_experiment(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    return parse_experiment(raw, base_dir=os.path.dirname(os.path.abspath(path)))
