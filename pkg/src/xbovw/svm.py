"""Linear classifier trained as ridge regression on +/-1 labels.

The training objective is

    E(w, b) = lambda / 2 * ||w||^2 + mean_i (y_i - (<w, x_i> + b))^2

with the bias left unregularized. Minimization is deterministic
full-batch gradient descent with Armijo backtracking, so identical
inputs and seed reproduce the model bit for bit. The quadratic problem
also has a closed normal-equations solution, which tests use as an
independent optimality oracle.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .encode import KernelMapConfig
from .errors import ArtifactMismatchError, DataError

_MODEL_MAGIC = b"XBWM"
_MODEL_VERSION = 1

_ARMIJO_C = 1e-4
_ARMIJO_SHRINK = 0.5
_ARMIJO_GROW = 2.0
_MAX_HALVINGS = 60


@dataclass
class LabeledSet:
    x: np.ndarray  # (n, dim) float64
    y: np.ndarray  # (n,) float64 in {-1, +1}

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.x.ndim != 2 or self.y.ndim != 1 or self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"bad shapes x{self.x.shape} y{self.y.shape}")
        if self.x.shape[0] == 0:
            raise ValueError("empty labeled set")
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def dim(self) -> int:
        return int(self.x.shape[1])


@dataclass
class SvmModel:
    w: np.ndarray
    b: float
    lam: float
    threshold: float = 0.0
    kernel: KernelMapConfig | None = None
    vocab_sha256: str | None = None
    meta: dict | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return int(self.w.shape[0])


def svm_objective(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, lam: float
) -> float:
    residual = x @ w + b - y
    return float(0.5 * lam * (w @ w) + (residual @ residual) / y.shape[0])


def svm_gradient(
    w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray, lam: float
) -> tuple[np.ndarray, float]:
    residual = x @ w + b - y
    n = y.shape[0]
    grad_w = lam * w + (2.0 / n) * (x.T @ residual)
    grad_b = float(2.0 / n * residual.sum())
    return grad_w, grad_b


def svm_train(
    data: LabeledSet,
    lam: float,
    max_epochs: int = 500,
    tol: float = 1e-6,
    seed: int = 0,
) -> SvmModel:
    """Minimize the ridge objective by backtracking gradient descent.

    Stops when the gradient infinity norm (over w and b jointly) falls
    to tol, or after max_epochs accepted steps. Weights start at a small
    seeded Gaussian so distinct seeds cover distinct descent paths; the
    objective is convex, so they meet at the same minimum.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if not (np.any(data.y > 0) and np.any(data.y < 0)):
        raise ValueError("training set needs at least one example of each class")
    rng = np.random.RandomState(seed)
    w = rng.normal(0.0, 1e-3, data.dim)
    b = 0.0
    x, y = data.x, data.y
    value = svm_objective(w, b, x, y, lam)
    step = 1.0
    for _ in range(max_epochs):
        grad_w, grad_b = svm_gradient(w, b, x, y, lam)
        grad_norm = max(float(np.max(np.abs(grad_w))) if w.size else 0.0, abs(grad_b))
        if grad_norm <= tol:
            break
        slope = float(grad_w @ grad_w) + grad_b * grad_b
        accepted = False
        for _ in range(_MAX_HALVINGS):
            cand_w = w - step * grad_w
            cand_b = b - step * grad_b
            cand_value = svm_objective(cand_w, cand_b, x, y, lam)
            if cand_value <= value - _ARMIJO_C * step * slope:
                accepted = True
                break
            step *= _ARMIJO_SHRINK
        if not accepted:
            break  # step underflow: gradient noise floor reached
        w, b, value = cand_w, cand_b, cand_value
        step *= _ARMIJO_GROW
    return SvmModel(w=w, b=float(b), lam=float(lam))


def svm_solve_exact(data: LabeledSet, lam: float) -> tuple[np.ndarray, float]:
    """Closed-form minimizer via the normal equations (bias unregularized)."""
    n, dim = data.x.shape
    aug = np.hstack([data.x, np.ones((n, 1))])
    gram = (2.0 / n) * (aug.T @ aug)
    reg = np.zeros((dim + 1, dim + 1))
    reg[:dim, :dim] = lam * np.eye(dim)
    rhs = (2.0 / n) * (aug.T @ data.y)
    sol = np.linalg.solve(gram + reg, rhs)
    return sol[:dim], float(sol[dim])


def svm_score(model: SvmModel, x: np.ndarray) -> np.ndarray | float:
    """Raw decision value <w, x> + b for a vector or a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != model.dim:
            raise ValueError(f"feature dim {x.shape[0]} != model dim {model.dim}")
        return float(x @ model.w + model.b)
    if x.ndim != 2 or x.shape[1] != model.dim:
        raise ValueError(f"feature dim {x.shape} != model dim {model.dim}")
    return x @ model.w + model.b


def svm_classify(model: SvmModel, x: np.ndarray, threshold: float | None = None) -> np.ndarray | int:
    """+1 where score strictly exceeds the threshold, else -1.

    threshold defaults to the model's stored decision threshold.
    """
    th = model.threshold if threshold is None else threshold
    score = svm_score(model, x)
    if np.isscalar(score):
        return 1 if score > th else -1
    return np.where(score > th, 1, -1).astype(np.int8)


def save_model(path: str | os.PathLike, model: SvmModel, meta: dict | None = None) -> None:
    """Versioned binary with the kernel config and vocabulary hash attached."""
    w = np.ascontiguousarray(model.w, dtype="<f4")
    kernel = model.kernel if model.kernel is not None else KernelMapConfig()
    vocab_hash = (model.vocab_sha256 or "").encode()
    merged = dict(model.meta or {})
    if meta:
        merged.update(meta)
    blob = json.dumps(merged, sort_keys=True).encode() if merged else b""
    with open(path, "wb") as handle:
        handle.write(_MODEL_MAGIC)
        handle.write(struct.pack("<II", _MODEL_VERSION, w.shape[0]))
        handle.write(struct.pack("<ddd", model.lam, model.b, model.threshold))
        handle.write(w.tobytes())
        handle.write(
            struct.pack("<Idd", kernel.order, kernel.gamma, kernel.sampling_period)
        )
        handle.write(struct.pack("<I", len(vocab_hash)))
        handle.write(vocab_hash)
        handle.write(struct.pack("<I", len(blob)))
        handle.write(blob)


def load_model(path: str | os.PathLike) -> SvmModel:
    with open(path, "rb") as handle:
        blob = handle.read()
    if blob[:4] != _MODEL_MAGIC:
        raise DataError(f"not a model file: {path}")
    try:
        version, dim = struct.unpack_from("<II", blob, 4)
        if version != _MODEL_VERSION:
            raise DataError(f"unsupported model version {version} in {path}")
        lam, b, threshold = struct.unpack_from("<ddd", blob, 12)
        offset = 36
        need = offset + 4 * dim + 20 + 4
        if len(blob) < need:
            raise DataError(f"truncated model file: {path}")
        w = np.frombuffer(blob, dtype="<f4", offset=offset, count=dim).astype(
            np.float64
        )
        offset += 4 * dim
        order, gamma, period = struct.unpack_from("<Idd", blob, offset)
        offset += 20
        (hash_len,) = struct.unpack_from("<I", blob, offset)
        offset += 4
    except struct.error as exc:
        raise DataError(f"truncated model file: {path}") from exc
    vocab_hash = blob[offset : offset + hash_len].decode() or None
    offset += hash_len
    meta = None
    if len(blob) >= offset + 4:
        (meta_len,) = struct.unpack_from("<I", blob, offset)
        if meta_len and len(blob) >= offset + 4 + meta_len:
            meta = json.loads(blob[offset + 4 : offset + 4 + meta_len])
    return SvmModel(
        w=w,
        b=float(b),
        lam=float(lam),
        threshold=float(threshold),
        kernel=KernelMapConfig(int(order), float(gamma), float(period)),
        vocab_sha256=vocab_hash,
        meta=meta,
    )


def check_compatibility(
    model: SvmModel,
    vocab_sha256: str | None,
    kernel: KernelMapConfig,
    feature_dim: int,
) -> None:
    """Raise ArtifactMismatchError when saved artifacts disagree."""
    if model.kernel is not None and model.kernel != kernel:
        raise ArtifactMismatchError(
            f"model kernel {model.kernel} != requested {kernel}"
        )
    if (
        model.vocab_sha256 is not None
        and vocab_sha256 is not None
        and model.vocab_sha256 != vocab_sha256
    ):
        raise ArtifactMismatchError("model was trained against a different vocabulary")
    if model.dim != feature_dim:
        raise ArtifactMismatchError(
            f"model dim {model.dim} != feature dim {feature_dim}"
        )


def model_sha256(path: str | os.PathLike) -> str:
    with open(path, "rb") as handle:
        return hashlib.sha256(handle.read()).hexdigest()
