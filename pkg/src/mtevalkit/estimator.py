"""Learned quality-score regressor over frozen sentence embeddings.

Each text side (source, translation, optional reference) is embedded,
mean-pooled into a sentence vector, and the sides are combined into a
feature vector (concatenation of the vectors, their element-wise products,
and absolute differences). A feed-forward network with tanh hidden layers
maps features to a scalar score and is trained by plain minibatch gradient
descent on mean squared error against min-max-scaled human scores. The
encoder never trains here; only the regressor parameters do.

Three modes:

- ``stl_ref``: one head over <src, mt, ref> features.
- ``stl_qe``: one head over <src, mt> features; the reference never enters
  the computation.
- ``mtl``: three heads (<src, mt>, <mt, ref>, <src, mt, ref>) share one
  trunk behind per-head linear input adapters; the full-mode score is the
  uniform mean of the three head scores, and QE-style inference returns
  the <src, mt> head alone.

Parameters are kept on the float32 grid whenever a model is at rest (after
construction, training, or loading), so the float32 checkpoint format
round-trips to bit-identical scores.
"""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import stats
from .corpus import TranslationTriple
from .embeddings import EmbeddingProvider
from .errors import (
    CheckpointError,
    DegenerateVarianceError,
    MtevalError,
    ValidationError,
)

STL_REF = "stl_ref"
STL_QE = "stl_qe"
MTL = "mtl"
MODES = (STL_REF, STL_QE, MTL)

LAYOUT_FULL = "src_mt_ref"
LAYOUT_SRC_MT = "src_mt"
LAYOUT_MT_REF = "mt_ref"
LAYOUT_WIDTH_FACTOR = {LAYOUT_FULL: 7, LAYOUT_SRC_MT: 4, LAYOUT_MT_REF: 4}
LAYOUT_VERSION = "v1"

HEADS_BY_MODE = {
    STL_REF: (LAYOUT_FULL,),
    STL_QE: (LAYOUT_SRC_MT,),
    MTL: (LAYOUT_SRC_MT, LAYOUT_MT_REF, LAYOUT_FULL),
}

_MAGIC = b"MTEV"
_CHECKPOINT_VERSION = 1


def pool(matrix) -> np.ndarray:
    """Mean over token rows -> sentence embedding."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValidationError("pooling needs a matrix with at least one row")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("embedding matrix contains non-finite entries")
    return arr.mean(axis=0)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: str


def _features(layout: str, h_src, h_mt, h_ref) -> np.ndarray:
    if layout == LAYOUT_FULL:
        parts = (
            h_mt,
            h_src,
            h_ref,
            h_mt * h_src,
            h_mt * h_ref,
            np.abs(h_mt - h_src),
            np.abs(h_mt - h_ref),
        )
    elif layout == LAYOUT_SRC_MT:
        parts = (h_mt, h_src, h_mt * h_src, np.abs(h_mt - h_src))
    elif layout == LAYOUT_MT_REF:
        parts = (h_mt, h_ref, h_mt * h_ref, np.abs(h_mt - h_ref))
    else:
        raise ValidationError(f"unknown feature layout {layout!r}")
    return np.concatenate(parts)


def combine(h_src, h_mt, h_ref=None) -> FeatureVector:
    """Build the feature vector; the reference-based layout is used iff a
    reference embedding is supplied."""
    h_src = np.asarray(h_src, dtype=np.float64)
    h_mt = np.asarray(h_mt, dtype=np.float64)
    if h_src.shape != h_mt.shape or h_src.ndim != 1:
        raise ValidationError(f"embedding dim mismatch: {h_src.shape} vs {h_mt.shape}")
    if h_ref is None:
        return FeatureVector(_features(LAYOUT_SRC_MT, h_src, h_mt, None), LAYOUT_SRC_MT)
    h_ref = np.asarray(h_ref, dtype=np.float64)
    if h_ref.shape != h_mt.shape:
        raise ValidationError(f"embedding dim mismatch: {h_ref.shape} vs {h_mt.shape}")
    return FeatureVector(_features(LAYOUT_FULL, h_src, h_mt, h_ref), LAYOUT_FULL)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    grad_accumulation: int = 2
    learning_rate: float = 1e-3
    epochs: int = 10
    rng_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.grad_accumulation < 1:
            raise ValidationError("grad_accumulation must be >= 1")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    train_mse: float
    val_spearman: Optional[float]


@dataclass
class ScoreResult:
    final: float
    descaled: float
    heads: dict[str, float]


def _round_to_f32_grid(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32).astype(np.float64)


class EstimatorModel:
    """Feed-forward scoring head(s) over combined sentence embeddings."""

    def __init__(
        self,
        mode: str,
        dim: int,
        hidden: Sequence[int] = (2048, 1024),
        trunk_in: Optional[int] = None,
        seed: int = 0,
        scale: tuple[float, float] = (0.0, 1.0),
        provider_identity: Optional[str] = None,
        _init_params: bool = True,
    ):
        if mode not in MODES:
            raise ValidationError(f"unknown mode {mode!r}")
        if dim < 1:
            raise ValidationError("dim must be >= 1")
        hidden = tuple(int(h) for h in hidden)
        if any(h < 1 for h in hidden):
            raise ValidationError("hidden widths must be >= 1")
        if scale[1] < scale[0]:
            raise ValidationError(f"scale pair out of order: {scale}")
        self.mode = mode
        self.dim = dim
        self.hidden = hidden
        self.heads = HEADS_BY_MODE[mode]
        self.scale = (float(scale[0]), float(scale[1]))
        self.provider_identity = provider_identity
        self.seed = seed

        if mode == MTL:
            self.trunk_in = int(trunk_in) if trunk_in else 4 * dim
        else:
            # Single-task models feed features straight into the trunk.
            self.trunk_in = LAYOUT_WIDTH_FACTOR[self.heads[0]] * dim
        self.adapters: dict[str, list[np.ndarray]] = {}
        self.trunk: list[list[np.ndarray]] = []
        if _init_params:
            self._init_parameters(seed)

    def layout_width(self, layout: str) -> int:
        return LAYOUT_WIDTH_FACTOR[layout] * self.dim

    def _init_parameters(self, seed: int) -> None:
        rng = np.random.default_rng(seed)

        def init_layer(fan_out: int, fan_in: int) -> list[np.ndarray]:
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            return [_round_to_f32_grid(w), _round_to_f32_grid(b)]

        if self.mode == MTL:
            for layout in self.heads:
                self.adapters[layout] = init_layer(self.trunk_in, self.layout_width(layout))
        widths = [self.trunk_in, *self.hidden, 1]
        self.trunk = [
            init_layer(widths[i + 1], widths[i]) for i in range(len(widths) - 1)
        ]

    # -- parameter plumbing ------------------------------------------------

    def _param_arrays(self) -> list[np.ndarray]:
        arrays = []
        for layout in self.heads:
            if layout in self.adapters:
                arrays.extend(self.adapters[layout])
        for layer in self.trunk:
            arrays.extend(layer)
        return arrays

    def copy_params(self) -> list[np.ndarray]:
        return [a.copy() for a in self._param_arrays()]

    def set_params(self, arrays: Sequence[np.ndarray]) -> None:
        own = self._param_arrays()
        if len(own) != len(arrays):
            raise ValidationError("parameter structure mismatch")
        for dst, src in zip(own, arrays):
            if dst.shape != src.shape:
                raise ValidationError("parameter shape mismatch")
            dst[...] = src

    def round_params_to_f32(self) -> None:
        for arr in self._param_arrays():
            arr[...] = _round_to_f32_grid(arr)

    # -- forward -----------------------------------------------------------

    def _check_provider(self, provider: EmbeddingProvider) -> None:
        if provider.descriptor.dim != self.dim:
            raise ValidationError(
                f"provider dim {provider.descriptor.dim} != model dim {self.dim}"
            )

    def _head_forward(self, layout: str, x: np.ndarray) -> float:
        h = x
        if layout in self.adapters:
            w, b = self.adapters[layout]
            h = w @ h + b
        last = len(self.trunk) - 1
        for i, (w, b) in enumerate(self.trunk):
            h = w @ h + b
            if i < last:
                h = np.tanh(h)
        return float(h[0])

    def _embed(self, provider: EmbeddingProvider, text: str) -> np.ndarray:
        return pool(provider.embed(text))

    def score(
        self,
        provider: EmbeddingProvider,
        src: str,
        mt: str,
        ref: Optional[str] = None,
        qe: bool = False,
    ) -> ScoreResult:
        """Score one segment. ``qe`` forces the <src, mt> pathway; modes
        that need a reference raise when it is absent."""
        self._check_provider(provider)
        if self.mode == STL_QE:
            qe = True
        if self.mode == STL_REF and qe:
            raise ValidationError("a reference-based single-task model cannot score in QE mode")
        needs_ref = not qe and self.mode in (STL_REF, MTL)
        if needs_ref and not ref:
            raise ValidationError(f"mode {self.mode} requires a reference translation")

        h_src = self._embed(provider, src)
        h_mt = self._embed(provider, mt)
        h_ref = self._embed(provider, ref) if needs_ref else None

        if qe or self.mode == STL_QE:
            value = self._head_forward(
                LAYOUT_SRC_MT, _features(LAYOUT_SRC_MT, h_src, h_mt, None)
            )
            heads = {LAYOUT_SRC_MT: value}
            final = value
        elif self.mode == STL_REF:
            value = self._head_forward(
                LAYOUT_FULL, _features(LAYOUT_FULL, h_src, h_mt, h_ref)
            )
            heads = {LAYOUT_FULL: value}
            final = value
        else:
            heads = {
                layout: self._head_forward(layout, _features(layout, h_src, h_mt, h_ref))
                for layout in self.heads
            }
            final = sum(heads[layout] for layout in self.heads) / len(self.heads)
        lo, hi = self.scale
        return ScoreResult(final=final, descaled=final * (hi - lo) + lo, heads=heads)

    def score_triple(
        self, provider: EmbeddingProvider, triple: TranslationTriple, qe: bool = False
    ) -> ScoreResult:
        return self.score(provider, triple.src, triple.mt, triple.ref, qe=qe)


def forward(
    model: EstimatorModel,
    provider: EmbeddingProvider,
    src: str,
    mt: str,
    ref: Optional[str] = None,
    qe: bool = False,
) -> ScoreResult:
    return model.score(provider, src, mt, ref, qe=qe)


# -- training ---------------------------------------------------------------


def prepare_features(
    model: EstimatorModel,
    provider: EmbeddingProvider,
    examples: Sequence[tuple[TranslationTriple, float]],
) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Embed and combine every example once (the encoder is frozen)."""
    model._check_provider(provider)
    if not examples:
        raise ValidationError("empty example set")
    needs_ref = model.mode in (STL_REF, MTL)
    y = np.empty(len(examples), dtype=np.float64)
    X_by_head = {
        layout: np.empty((len(examples), model.layout_width(layout)), dtype=np.float64)
        for layout in model.heads
    }
    for i, (triple, target) in enumerate(examples):
        target = float(target)
        if not np.isfinite(target) or not (0.0 <= target <= 1.0):
            raise ValidationError(
                f"segment {triple.segment_id!r}: target {target} outside [0, 1]; min-max scale first"
            )
        if needs_ref and not triple.ref:
            raise ValidationError(f"segment {triple.segment_id!r} lacks a reference")
        h_src = pool(provider.embed(triple.src))
        h_mt = pool(provider.embed(triple.mt))
        h_ref = pool(provider.embed(triple.ref)) if needs_ref else None
        for layout in model.heads:
            X_by_head[layout][i] = _features(layout, h_src, h_mt, h_ref)
        y[i] = target
    return X_by_head, y


def _forward_batch(model, layout, X):
    """Returns (scores, cache) where cache carries activations for backprop."""
    h = X
    adapter_out = None
    if layout in model.adapters:
        w, b = model.adapters[layout]
        adapter_out = X @ w.T + b
        h = adapter_out
    activations = [h]
    last = len(model.trunk) - 1
    for i, (w, b) in enumerate(model.trunk):
        z = activations[-1] @ w.T + b
        activations.append(np.tanh(z) if i < last else z)
    scores = activations[-1][:, 0]
    return scores, (X, adapter_out, activations)


def _zero_grads(model):
    return {
        "adapters": {
            layout: [np.zeros_like(w), np.zeros_like(b)]
            for layout, (w, b) in model.adapters.items()
        },
        "trunk": [[np.zeros_like(w), np.zeros_like(b)] for w, b in model.trunk],
    }


def _loss_and_grads(model, X_by_head, y):
    """Mean squared error over the batch (uniformly averaged over heads)
    and its gradient with respect to every parameter."""
    n = y.size
    k = len(model.heads)
    grads = _zero_grads(model)
    loss = 0.0
    for layout in model.heads:
        scores, (X, _, activations) = _forward_batch(model, layout, X_by_head[layout])
        diff = scores - y
        loss += float(diff @ diff) / (n * k)
        # d loss / d score, shaped (n, 1)
        delta = (2.0 * diff / (n * k))[:, np.newaxis]
        for i in range(len(model.trunk) - 1, -1, -1):
            w, _ = model.trunk[i]
            a_in = activations[i]
            grads["trunk"][i][0] += delta.T @ a_in
            grads["trunk"][i][1] += delta.sum(axis=0)
            if i > 0:
                delta = (delta @ w) * (1.0 - activations[i] ** 2)
            else:
                delta = delta @ w
        if layout in model.adapters:
            grads["adapters"][layout][0] += delta.T @ X
            grads["adapters"][layout][1] += delta.sum(axis=0)
    return loss, grads


def _grad_arrays(model, grads) -> list[np.ndarray]:
    arrays = []
    for layout in model.heads:
        if layout in grads["adapters"]:
            arrays.extend(grads["adapters"][layout])
    for layer in grads["trunk"]:
        arrays.extend(layer)
    return arrays


def _apply_update(model, grads, lr: float) -> None:
    for param, grad in zip(model._param_arrays(), _grad_arrays(model, grads)):
        param -= lr * grad


def batch_mse(model, X_by_head, y) -> float:
    n = y.size
    k = len(model.heads)
    loss = 0.0
    for layout in model.heads:
        scores, _ = _forward_batch(model, layout, X_by_head[layout])
        diff = scores - y
        loss += float(diff @ diff) / (n * k)
    return loss


def dataset_mse(model, provider, examples) -> float:
    X_by_head, y = prepare_features(model, provider, examples)
    return batch_mse(model, X_by_head, y)


def gradient_step(model, X_by_head, y, lr: float) -> float:
    """One descent step on one batch; returns the pre-step loss."""
    loss, grads = _loss_and_grads(model, X_by_head, y)
    _apply_update(model, grads, lr)
    return loss


def _predict_final(model, X_by_head) -> np.ndarray:
    head_scores = [
        _forward_batch(model, layout, X_by_head[layout])[0] for layout in model.heads
    ]
    return np.mean(head_scores, axis=0)


def _slice_features(X_by_head, indices):
    return {layout: X[indices] for layout, X in X_by_head.items()}


def train(
    model: EstimatorModel,
    provider: EmbeddingProvider,
    train_set: Sequence[tuple[TranslationTriple, float]],
    config: TrainConfig,
    val_set: Sequence[tuple[TranslationTriple, float]] = (),
) -> tuple[EstimatorModel, list[EpochStats]]:
    """Minibatch gradient descent on MSE with gradient accumulation.

    Per accumulation group the update uses the mean of the member batches'
    gradients, matching a single combined batch when batch sizes are equal.
    Validation Spearman (of the final score against targets) is recorded
    per epoch and the best-epoch parameters are returned. Deterministic
    for a fixed config seed.
    """
    X_train, y_train = prepare_features(model, provider, train_set)
    have_val = len(val_set) > 0
    if have_val:
        X_val, y_val = prepare_features(model, provider, val_set)

    rng = np.random.default_rng(config.rng_seed)
    history: list[EpochStats] = []
    best: Optional[tuple[float, list[np.ndarray], int]] = None
    n = y_train.size

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        batches = [
            order[start : start + config.batch_size]
            for start in range(0, n, config.batch_size)
        ]
        for group_start in range(0, len(batches), config.grad_accumulation):
            group = batches[group_start : group_start + config.grad_accumulation]
            accumulated = None
            group_loss = 0.0
            for batch in group:
                loss, grads = _loss_and_grads(
                    model, _slice_features(X_train, batch), y_train[batch]
                )
                group_loss += loss
                arrays = _grad_arrays(model, grads)
                if accumulated is None:
                    accumulated = arrays
                else:
                    for acc, arr in zip(accumulated, arrays):
                        acc += arr
            if not np.isfinite(group_loss):
                raise MtevalError(
                    f"non-finite loss at epoch {epoch}: {group_loss}; "
                    "reduce the learning rate or check the targets"
                )
            scale = config.learning_rate / len(group)
            for param, grad in zip(model._param_arrays(), accumulated):
                param -= scale * grad

        train_mse = batch_mse(model, X_train, y_train)
        val_spearman: Optional[float] = None
        if have_val:
            try:
                val_spearman = stats.spearman(_predict_final(model, X_val), y_val)
            except (DegenerateVarianceError, ValidationError):
                val_spearman = None
        history.append(EpochStats(epoch, train_mse, val_spearman))
        if val_spearman is not None and (best is None or val_spearman > best[0]):
            best = (val_spearman, model.copy_params(), epoch)

    if best is not None:
        model.set_params(best[1])
    model.round_params_to_f32()
    return model, history


def grad_check(
    model: EstimatorModel,
    provider: EmbeddingProvider,
    examples: Sequence[tuple[TranslationTriple, float]],
    epsilon: float = 1e-5,
) -> float:
    """Max relative error between the analytic gradient and central finite
    differences, elementwise over every parameter (floor denominator 1)."""
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    X_by_head, y = prepare_features(model, provider, examples)
    _, grads = _loss_and_grads(model, X_by_head, y)
    analytic = _grad_arrays(model, grads)
    worst = 0.0
    for param, grad in zip(model._param_arrays(), analytic):
        flat_param = param.reshape(-1)
        flat_grad = grad.reshape(-1)
        for idx in range(flat_param.size):
            original = flat_param[idx]
            flat_param[idx] = original + epsilon
            loss_plus = batch_mse(model, X_by_head, y)
            flat_param[idx] = original - epsilon
            loss_minus = batch_mse(model, X_by_head, y)
            flat_param[idx] = original
            numeric = (loss_plus - loss_minus) / (2.0 * epsilon)
            denom = max(1.0, abs(flat_grad[idx]), abs(numeric))
            worst = max(worst, abs(flat_grad[idx] - numeric) / denom)
    return worst


# -- checkpoints --------------------------------------------------------------


def save_model(model: EstimatorModel, path) -> None:
    """Binary checkpoint: header JSON, float32 little-endian parameters in
    canonical order, trailing CRC-32."""
    header = {
        "format_version": _CHECKPOINT_VERSION,
        "mode": model.mode,
        "dim": model.dim,
        "hidden": list(model.hidden),
        "trunk_in": model.trunk_in,
        "layouts": list(model.heads),
        "layout_version": LAYOUT_VERSION,
        "scale": [model.scale[0], model.scale[1]],
        "provider_identity": model.provider_identity,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<I", _CHECKPOINT_VERSION)
    blob += struct.pack("<I", len(header_bytes))
    blob += header_bytes
    for arr in model._param_arrays():
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes(order="C")
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_model(path) -> EstimatorModel:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except FileNotFoundError:
        raise CheckpointError(f"no such checkpoint: {path}") from None
    if len(blob) < len(_MAGIC) + 12 or blob[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(f"not a model checkpoint: {path}")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"checksum mismatch in {path}: file is truncated or corrupt"
        )
    offset = len(_MAGIC)
    (version,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    if version != _CHECKPOINT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} != supported {_CHECKPOINT_VERSION}"
        )
    (header_len,) = struct.unpack_from("<I", blob, offset)
    offset += 4
    header = json.loads(blob[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    if header.get("layout_version") != LAYOUT_VERSION:
        raise CheckpointError(
            f"unsupported feature layout version {header.get('layout_version')!r}"
        )

    model = EstimatorModel(
        mode=header["mode"],
        dim=header["dim"],
        hidden=header["hidden"],
        trunk_in=header["trunk_in"],
        scale=tuple(header["scale"]),
        provider_identity=header.get("provider_identity"),
        _init_params=False,
    )
    if model.mode == MTL:
        for layout in model.heads:
            model.adapters[layout] = [
                np.empty((model.trunk_in, model.layout_width(layout))),
                np.empty(model.trunk_in),
            ]
    widths = [model.trunk_in, *model.hidden, 1]
    model.trunk = [
        [np.empty((widths[i + 1], widths[i])), np.empty(widths[i + 1])]
        for i in range(len(widths) - 1)
    ]

    payload = blob[offset:-4]
    consumed = 0
    for arr in model._param_arrays():
        nbytes = arr.size * 4
        if consumed + nbytes > len(payload):
            raise CheckpointError(f"parameter payload too short in {path}")
        values = np.frombuffer(payload, dtype="<f4", count=arr.size, offset=consumed)
        arr[...] = values.reshape(arr.shape).astype(np.float64)
        consumed += nbytes
    if consumed != len(payload):
        raise CheckpointError(f"trailing bytes in parameter payload of {path}")
    return model
