"""Run configuration: every pipeline tunable in one flat namespace.

Config files are plain `key = value` lines (a flat TOML subset): values
are Python literals (numbers, lists, quoted strings), `#` starts a
comment, unknown keys are rejected. Command-line flags override file
values, which override the defaults below.
"""

from __future__ import annotations

import ast
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass

from .encode import KernelMapConfig
from .errors import DataError
from .phow import PhowParams


@dataclass(frozen=True)
class RunConfig:
    threshold: float = 0.31  # metal-candidate intensity cutoff
    min_area: float | None = None  # None: one thousandth of the image area
    phow_step: int = 4
    phow_scales: tuple[int, ...] = (4, 6, 8, 10)
    phow_magnif: float = 6.0
    vocab_size: int = 1000
    vocab_restarts: int = 10
    kernel_order: int = 2
    kernel_gamma: float = 1.0
    kernel_period: float = 0.6
    svm_lambda: float = 10.0
    svm_max_epochs: int = 500
    svm_tol: float = 1e-6
    ss_k: float = 100.0
    ss_sigma: float = 0.8
    ss_min_size: int = 50
    label_overlap: float = 0.4
    pascal_threshold: float = 0.4
    outlier_mad_factor: float = 2.5
    max_side: int = 0  # 0 disables downscaling
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "phow_scales", tuple(int(s) for s in self.phow_scales))
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must be in [0, 1], got {self.threshold}")
        if self.min_area is not None and self.min_area < 0:
            raise ValueError(f"min_area must be non-negative, got {self.min_area}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.vocab_restarts < 1:
            raise ValueError(f"vocab_restarts must be >= 1, got {self.vocab_restarts}")
        if self.svm_lambda <= 0:
            raise ValueError(f"svm_lambda must be positive, got {self.svm_lambda}")
        if self.svm_max_epochs < 1:
            raise ValueError(f"svm_max_epochs must be >= 1, got {self.svm_max_epochs}")
        if not 0.0 < self.label_overlap <= 1.0:
            raise ValueError(f"label_overlap must be in (0, 1], got {self.label_overlap}")
        if not 0.0 < self.pascal_threshold <= 1.0:
            raise ValueError(
                f"pascal_threshold must be in (0, 1], got {self.pascal_threshold}"
            )
        if self.outlier_mad_factor <= 0:
            raise ValueError(
                f"outlier_mad_factor must be positive, got {self.outlier_mad_factor}"
            )
        if self.max_side < 0:
            raise ValueError(f"max_side must be >= 0, got {self.max_side}")
        # constructor validation of the composed parameter objects
        self.phow_params()
        self.kernel_config()

    def phow_params(self) -> PhowParams:
        return PhowParams(
            step=self.phow_step, scales=self.phow_scales, magnif=self.phow_magnif
        )

    def kernel_config(self) -> KernelMapConfig:
        return KernelMapConfig(
            order=self.kernel_order,
            gamma=self.kernel_gamma,
            sampling_period=self.kernel_period,
        )

    def to_dict(self) -> dict:
        raw = dataclasses.asdict(self)
        raw["phow_scales"] = list(raw["phow_scales"])
        return raw

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:16]

    def replaced(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def _parse_value(raw: str, path: str, line_no: int):
    raw = raw.strip()
    try:
        return ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        pass
    if "#" in raw:  # trailing comment
        return _parse_value(raw.split("#", 1)[0], path, line_no)
    if raw in ("true", "false"):
        return raw == "true"
    if raw.isidentifier():
        return raw  # bare-word string
    raise DataError(f"{path}:{line_no}: cannot parse value {raw!r}")


def load_config_values(path: str | os.PathLike) -> dict:
    """Parse a flat key = value config file into a dict of overrides."""
    values: dict = {}
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.readlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    for line_no, line in enumerate(lines, 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, eq, raw = stripped.partition("=")
        key = key.strip()
        if not eq or not key:
            raise DataError(f"{path}:{line_no}: expected `key = value`")
        if key not in _FIELD_NAMES:
            raise DataError(f"{path}:{line_no}: unknown config key {key!r}")
        values[key] = _parse_value(raw, os.fspath(path), line_no)
    return values


def make_config(
    path: str | os.PathLike | None = None, **overrides
) -> RunConfig:
    """Defaults, then file values, then keyword overrides (Nones skipped)."""
    values: dict = {}
    if path is not None:
        values.update(load_config_values(path))
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - _FIELD_NAMES
    if unknown:
        raise DataError(f"unknown config keys {sorted(unknown)}")
    if "phow_scales" in values:
        values["phow_scales"] = tuple(values["phow_scales"])
    try:
        return RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise DataError(f"bad config: {exc}") from exc
