"""Differentiable models with hand-written gradients.

Three flat-parameter model families over a batch ``(X, y)``:

* ``linear``   -- multi-output linear regression, mean squared error
* ``logistic`` -- softmax regression, mean cross-entropy
* ``mlp``      -- one tanh hidden layer + softmax, mean cross-entropy

Parameters are flattened in a fixed order (layer-major, row-major:
``W1, b1, W2, b2`` with each weight matrix in C order) so the codec and the
analyzers agree on coordinate indices.  Cross-entropy is stabilised with
log-sum-exp.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError
from .vectors import ParamVector

MODEL_KINDS = ("linear", "logistic", "mlp")


@dataclass(frozen=True)
class ModelArch:
    """Shape of a model; ``d`` is the exact flat parameter count."""

    kind: str
    input_dim: int
    num_classes: int
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be >= 1")
        if self.kind == "mlp":
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise ValueError("mlp requires hidden_dim >= 1")
        elif self.hidden_dim is not None:
            raise ValueError(f"{self.kind} takes no hidden_dim")

    @property
    def d(self) -> int:
        if self.kind == "mlp":
            h = self.hidden_dim
            return h * self.input_dim + h + self.num_classes * h + self.num_classes
        return self.num_classes * self.input_dim + self.num_classes

    def header(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "hidden_dim": self.hidden_dim,
        }


def _unpack(arch: ModelArch, params: ParamVector):
    if len(params) != arch.d:
        raise ShapeError(f"params length {len(params)} != arch.d {arch.d}")
    v = params.data
    if arch.kind == "mlp":
        h, i, k = arch.hidden_dim, arch.input_dim, arch.num_classes
        o = 0
        W1 = v[o : o + h * i].reshape(h, i); o += h * i
        b1 = v[o : o + h]; o += h
        W2 = v[o : o + k * h].reshape(k, h); o += k * h
        b2 = v[o : o + k]
        return W1, b1, W2, b2
    k, i = arch.num_classes, arch.input_dim
    W = v[: k * i].reshape(k, i)
    b = v[k * i :]
    return W, b


def _check_batch(arch: ModelArch, batch) -> tuple[np.ndarray, np.ndarray]:
    X, y = batch
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ShapeError(f"batch features must be (B, input_dim), got {X.shape}")
    if X.shape[1] != arch.input_dim:
        raise ShapeError(f"feature dim {X.shape[1]} != input_dim {arch.input_dim}")
    y = np.asarray(y)
    if len(y) != X.shape[0]:
        raise ShapeError("features/targets batch size mismatch")
    return X, y


def _targets(arch: ModelArch, y: np.ndarray) -> np.ndarray:
    """Regression targets as (B, K); integer labels become one-hot rows."""
    if np.issubdtype(y.dtype, np.integer):
        T = np.zeros((len(y), arch.num_classes))
        T[np.arange(len(y)), y] = 1.0
        return T
    T = np.asarray(y, dtype=np.float64)
    if T.ndim == 1:
        T = T[:, None]
    if T.shape[1] != arch.num_classes:
        raise ShapeError(f"target dim {T.shape[1]} != num_classes {arch.num_classes}")
    return T


def _log_softmax(Z: np.ndarray) -> np.ndarray:
    m = Z.max(axis=1, keepdims=True)
    return Z - m - np.log(np.exp(Z - m).sum(axis=1, keepdims=True))


def _forward(arch: ModelArch, params: ParamVector, X: np.ndarray):
    if arch.kind == "mlp":
        W1, b1, W2, b2 = _unpack(arch, params)
        H = np.tanh(X @ W1.T + b1)
        return H @ W2.T + b2, H
    W, b = _unpack(arch, params)
    return X @ W.T + b, None


def loss(arch: ModelArch, params: ParamVector, batch) -> float:
    """Mean cross-entropy (logistic/mlp) or mean squared error (linear)."""
    X, y = _check_batch(arch, batch)
    Z, _ = _forward(arch, params, X)
    if arch.kind == "linear":
        return float(np.mean((Z - _targets(arch, y)) ** 2))
    if not np.issubdtype(y.dtype, np.integer):
        raise ShapeError(f"{arch.kind} expects integer labels")
    logp = _log_softmax(Z)
    return float(-np.mean(logp[np.arange(len(y)), y]))


def grad(arch: ModelArch, params: ParamVector, batch) -> ParamVector:
    """Exact analytic gradient of :func:`loss` at ``params``."""
    X, y = _check_batch(arch, batch)
    B = X.shape[0]
    Z, H = _forward(arch, params, X)
    if arch.kind == "linear":
        T = _targets(arch, y)
        dZ = 2.0 * (Z - T) / T.size
    else:
        if not np.issubdtype(y.dtype, np.integer):
            raise ShapeError(f"{arch.kind} expects integer labels")
        P = np.exp(_log_softmax(Z))
        P[np.arange(B), y] -= 1.0
        dZ = P / B
    if arch.kind == "mlp":
        W1, b1, W2, b2 = _unpack(arch, params)
        gW2 = dZ.T @ H
        gb2 = dZ.sum(axis=0)
        dA = (dZ @ W2) * (1.0 - H * H)
        gW1 = dA.T @ X
        gb1 = dA.sum(axis=0)
        flat = np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])
    else:
        gW = dZ.T @ X
        gb = dZ.sum(axis=0)
        flat = np.concatenate([gW.ravel(), gb])
    return ParamVector(flat)


def init_params(arch: ModelArch, rng: np.random.Generator) -> ParamVector:
    """Glorot-uniform weights, zero biases."""

    def glorot(fan_out, fan_in):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_out, fan_in))

    if arch.kind == "mlp":
        W1 = glorot(arch.hidden_dim, arch.input_dim)
        W2 = glorot(arch.num_classes, arch.hidden_dim)
        flat = np.concatenate(
            [W1.ravel(), np.zeros(arch.hidden_dim), W2.ravel(), np.zeros(arch.num_classes)]
        )
    else:
        W = glorot(arch.num_classes, arch.input_dim)
        flat = np.concatenate([W.ravel(), np.zeros(arch.num_classes)])
    return ParamVector(flat)


# -- checkpoints --------------------------------------------------------------
#
# File layout: one line of UTF-8 JSON ({"arch": ..., "d": ..., "seed": ...}),
# then d raw little-endian float64 values.

def save_checkpoint(path: str | Path, header: dict, params: ParamVector) -> None:
    header = dict(header)
    header["d"] = len(params)
    blob = params.data.astype("<f8").tobytes()
    with Path(path).open("wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path: str | Path) -> tuple[dict, ParamVector]:
    with Path(path).open("rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        d = int(header["d"])
        blob = fh.read()
    if len(blob) != 8 * d:
        raise ValueError(f"{path}: expected {8 * d} parameter bytes, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f8", count=d)
    return header, ParamVector(values)
