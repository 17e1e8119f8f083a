"""Desk-scale expression classifier with two-stage SAM fine-tuning.

The model is a small ReLU MLP: a backbone of affine+ReLU layers and a
single affine classification head with softmax output. It exists to
exercise the training mechanics - head-only then full fine-tuning,
sharpness-aware updates, inverse-frequency class weighting, early
stopping, and fold-pooled cross-validation - with gradients simple
enough to verify against finite differences.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .dataset import EmotionLabel, FoldPlan, Manifest
from .errors import MissingArtifactError, TrainingDivergedError
from .image import read_png

_LOG_FLOOR = 1e-15

CONDITIONS = ("full", "top", "bottom")
CONDITION_SUFFIX = {"full": "_norm", "top": "_norm_top", "bottom": "_norm_bottom"}


@dataclass
class Layer:
    weights: np.ndarray  # (out, in), float64
    bias: np.ndarray     # (out,), float64


@dataclass
class ModelParams:
    backbone: list[Layer]
    head: Layer

    @property
    def input_dim(self) -> int:
        first = self.backbone[0] if self.backbone else self.head
        return first.weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.head.weights.shape[0]

    def clone(self) -> "ModelParams":
        return ModelParams(
            backbone=[Layer(l.weights.copy(), l.bias.copy()) for l in self.backbone],
            head=Layer(self.head.weights.copy(), self.head.bias.copy()),
        )

    def layers(self) -> list[Layer]:
        return [*self.backbone, self.head]

    def backbone_bytes(self) -> bytes:
        return b"".join(l.weights.tobytes() + l.bias.tobytes() for l in self.backbone)


def init_params(input_dim: int, n_classes: int, hidden_sizes=(128, 64), seed: int = 0) -> ModelParams:
    """Glorot-uniform initialization from a seeded generator."""
    rng = np.random.default_rng(seed)
    dims = [input_dim, *hidden_sizes, n_classes]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
        layers.append(Layer(w, np.zeros(fan_out)))
    return ModelParams(backbone=layers[:-1], head=layers[-1])


# --- forward / loss / gradient ---------------------------------------------

def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cached(params: ModelParams, X: np.ndarray):
    """Batch forward pass keeping pre/post activations for backprop.

    Overflow is silenced here; divergence is detected downstream by the
    explicit finiteness checks on losses and gradients.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        pre = []
        post = [X]
        h = X
        for layer in params.backbone:
            z = h @ layer.weights.T + layer.bias
            pre.append(z)
            h = np.maximum(z, 0.0)
            post.append(h)
        logits = h @ params.head.weights.T + params.head.bias
        return pre, post, _softmax(logits)


def forward(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probability vector for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (params.input_dim,):
        raise ValueError(f"expected feature vector of length {params.input_dim}, got {x.shape}")
    _, _, probs = _forward_cached(params, x[None, :])
    return probs[0]


def predict(params: ModelParams, x: np.ndarray) -> int:
    """Most probable class index; ties break toward the lowest index."""
    return int(np.argmax(forward(params, x)))


def _batch_weights(y: np.ndarray, class_weights: np.ndarray) -> np.ndarray:
    w = class_weights[y]
    total = w.sum()
    if total <= 0:
        raise ValueError("batch has zero total class weight")
    return w / total


def loss(params: ModelParams, X: np.ndarray, y: np.ndarray, class_weights: np.ndarray) -> float:
    """Class-weighted mean cross-entropy over the batch."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("batch is empty")
    _, _, probs = _forward_cached(params, X)
    w = _batch_weights(y, np.asarray(class_weights, dtype=np.float64))
    picked = np.clip(probs[np.arange(len(y)), y], _LOG_FLOOR, None)
    return float(np.sum(w * -np.log(picked)))


def grad(params: ModelParams, X: np.ndarray, y: np.ndarray, class_weights: np.ndarray) -> ModelParams:
    """Analytic gradient of `loss`, shaped like the parameters."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("batch is empty")
    pre, post, probs = _forward_cached(params, X)
    w = _batch_weights(y, np.asarray(class_weights, dtype=np.float64))

    with np.errstate(over="ignore", invalid="ignore"):
        delta = probs.copy()
        delta[np.arange(len(y)), y] -= 1.0
        delta *= w[:, None]

        g_head = Layer(delta.T @ post[-1], delta.sum(axis=0))
        g_backbone: list[Layer] = []
        upstream = delta @ params.head.weights
        for idx in range(len(params.backbone) - 1, -1, -1):
            dz = upstream * (pre[idx] > 0)
            g_backbone.append(Layer(dz.T @ post[idx], dz.sum(axis=0)))
            if idx > 0:
                upstream = dz @ params.backbone[idx].weights
        g_backbone.reverse()
    return ModelParams(backbone=g_backbone, head=g_head)


# --- flat-vector plumbing ---------------------------------------------------

def flatten_params(params: ModelParams) -> np.ndarray:
    parts = []
    for layer in params.layers():
        parts.append(layer.weights.ravel())
        parts.append(layer.bias)
    return np.concatenate(parts)


def unflatten_params(template: ModelParams, flat: np.ndarray) -> ModelParams:
    layers = []
    pos = 0
    for layer in template.layers():
        n_w = layer.weights.size
        w = flat[pos:pos + n_w].reshape(layer.weights.shape).copy()
        pos += n_w
        b = flat[pos:pos + layer.bias.size].copy()
        pos += layer.bias.size
        layers.append(Layer(w, b))
    return ModelParams(backbone=layers[:-1], head=layers[-1])


def head_mask(params: ModelParams) -> np.ndarray:
    """Boolean mask over the flat vector selecting head parameters."""
    mask = np.zeros(flatten_params(params).shape, dtype=bool)
    head_size = params.head.weights.size + params.head.bias.size
    mask[-head_size:] = True
    return mask


# --- SAM update --------------------------------------------------------------

def sam_perturbation(g: np.ndarray, rho: float) -> np.ndarray:
    """Ascent offset of norm rho along g; zero when g is zero."""
    norm = float(np.linalg.norm(g))
    if norm == 0.0:
        return np.zeros_like(g)
    return (rho / norm) * g


def sam_step(w: np.ndarray, grad_fn, rho: float, lr: float) -> np.ndarray:
    """One sharpness-aware step: re-evaluate the gradient at w + eps.

    eps is the norm-rho ascent offset along grad_fn(w); the update itself
    is a plain gradient step with the re-evaluated gradient.
    """
    g = grad_fn(w)
    if not np.all(np.isfinite(g)):
        raise TrainingDivergedError("non-finite gradient")
    g2 = grad_fn(w + sam_perturbation(g, rho))
    if not np.all(np.isfinite(g2)):
        raise TrainingDivergedError("non-finite gradient at perturbed parameters")
    return w - lr * g2


def sam_update(
    params: ModelParams,
    X: np.ndarray,
    y: np.ndarray,
    class_weights: np.ndarray,
    rho: float,
    lr: float,
    head_only: bool = False,
) -> ModelParams:
    """Sharpness-aware parameter update on one batch.

    With head_only=True the backbone is frozen: its gradient entries are
    zeroed before both the perturbation and the step, so its bytes never
    change.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if lr <= 0:
        raise ValueError("lr must be > 0")
    mask = head_mask(params) if head_only else None

    def grad_fn(flat: np.ndarray) -> np.ndarray:
        g = flatten_params(grad(unflatten_params(params, flat), X, y, class_weights))
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return g

    new_flat = sam_step(flatten_params(params), grad_fn, rho, lr)
    updated = unflatten_params(params, new_flat)
    if head_only:
        # Freezing must be exact, not merely numerically zero.
        updated = ModelParams(
            backbone=[Layer(l.weights.copy(), l.bias.copy()) for l in params.backbone],
            head=updated.head,
        )
    return updated


# --- two-stage training -------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    stage_a_epochs: int = 20
    stage_b_epochs: int = 50
    learning_rate: float = 0.05
    sam_rho: float = 0.05
    class_weighting: str = "inverse_frequency"  # or "none"
    early_stop_patience: int = 5
    early_stop_stage_a: bool = False
    seed: int = 0
    input_edge: int = 64
    hidden_sizes: tuple[int, ...] = (128, 64)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.stage_a_epochs < 0 or self.stage_b_epochs < 0:
            raise ValueError("epoch counts must be >= 0")
        if self.sam_rho < 0:
            raise ValueError("sam_rho must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.class_weighting not in ("none", "inverse_frequency"):
            raise ValueError(f"unknown class_weighting {self.class_weighting!r}")


@dataclass(frozen=True)
class EpochRecord:
    stage: str
    epoch: int
    train_loss: float
    val_loss: float | None
    val_accuracy: float | None


def class_weight_vector(y: np.ndarray, n_classes: int, mode: str) -> np.ndarray:
    """Per-class loss weights; inverse_frequency uses w_c = N / (K * n_c)."""
    if mode == "none":
        return np.ones(n_classes)
    counts = np.bincount(np.asarray(y, dtype=np.int64), minlength=n_classes).astype(np.float64)
    present = counts > 0
    weights = np.zeros(n_classes)
    weights[present] = len(y) / (n_classes * counts[present])
    return weights


def _evaluate(params: ModelParams, X: np.ndarray, y: np.ndarray, weights: np.ndarray):
    val_loss = loss(params, X, y, weights)
    _, _, probs = _forward_cached(params, X)
    acc = float(np.mean(np.argmax(probs, axis=1) == y))
    return val_loss, acc


def train_two_stage(
    init: ModelParams,
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray] | None,
    cfg: TrainConfig,
) -> tuple[ModelParams, list[EpochRecord]]:
    """Stage A trains the head with the backbone frozen; stage B trains all.

    Validation loss is evaluated after every epoch; a stage stops early
    after `early_stop_patience` consecutive epochs without improvement and
    restores that stage's best parameters (stage A only when
    early_stop_stage_a is set). With no validation data, early stopping is
    disabled and the final parameters are kept. Deterministic given cfg.seed.
    """
    cfg.validate()
    X, y = np.asarray(train[0], dtype=np.float64), np.asarray(train[1], dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("training set is empty")
    has_val = val is not None and len(val[1]) > 0
    if has_val:
        Xv, yv = np.asarray(val[0], dtype=np.float64), np.asarray(val[1], dtype=np.int64)

    weights = class_weight_vector(y, init.n_classes, cfg.class_weighting)
    rng = np.random.default_rng(cfg.seed)
    params = init.clone()
    history: list[EpochRecord] = []

    stages = (
        ("A", cfg.stage_a_epochs, True, cfg.early_stop_stage_a),
        ("B", cfg.stage_b_epochs, False, True),
    )
    for stage_name, n_epochs, head_only, es_enabled in stages:
        stopping = has_val and es_enabled and cfg.early_stop_patience > 0
        best_loss = np.inf
        best_params = None
        bad_epochs = 0
        for epoch in range(1, n_epochs + 1):
            order = rng.permutation(len(y))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                params = sam_update(
                    params, X[idx], y[idx], weights,
                    cfg.sam_rho, cfg.learning_rate, head_only=head_only,
                )
            train_loss = loss(params, X, y, weights)
            if not np.isfinite(train_loss):
                raise TrainingDivergedError(f"stage {stage_name} epoch {epoch}: loss {train_loss}")
            val_loss = val_acc = None
            if has_val:
                val_loss, val_acc = _evaluate(params, Xv, yv, weights)
            history.append(EpochRecord(stage_name, epoch, train_loss, val_loss, val_acc))
            if stopping:
                if val_loss < best_loss:
                    best_loss = val_loss
                    best_params = params.clone()
                    bad_epochs = 0
                else:
                    bad_epochs += 1
                    if bad_epochs >= cfg.early_stop_patience:
                        break
        if stopping and best_params is not None:
            params = best_params
    return params, history


# --- cross-validation ---------------------------------------------------------

def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed % 2**63, fold]).generate_state(1, np.uint64)[0])


def features_from_image(img: np.ndarray) -> np.ndarray:
    """Flatten an (H, W, 3) uint8 image to float64 values in [0, 1]."""
    return img.astype(np.float64).reshape(-1) / 255.0


def normalized_image_path(images_dir, image_path: str, condition: str) -> Path:
    stem = Path(image_path).stem
    return Path(images_dir) / f"{stem}{CONDITION_SUFFIX[condition]}.png"


def load_condition_features(m: Manifest, images_dir, condition: str, input_edge: int):
    """Feature matrix for every manifest record, in record order."""
    if condition not in CONDITIONS:
        raise ValueError(f"condition must be one of {CONDITIONS}, got {condition!r}")
    paths = [normalized_image_path(images_dir, rec.image_path, condition) for rec in m.records]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise MissingArtifactError(
            f"{len(missing)} normalized image(s) missing for condition {condition!r}, "
            f"first: {missing[0]}"
        )
    rows = []
    for p in paths:
        img = read_png(p)
        if img.shape[0] != input_edge or img.shape[1] != input_edge:
            raise MissingArtifactError(
                f"{p}: expected {input_edge}x{input_edge} image, got {img.shape[1]}x{img.shape[0]}"
            )
        rows.append(features_from_image(img))
    return np.stack(rows)


def run_cv(
    m: Manifest,
    folds: FoldPlan,
    cfg: TrainConfig,
    condition: str,
    images_dir,
) -> tuple[list[tuple[EmotionLabel, EmotionLabel]], list[list[EpochRecord]]]:
    """Train one model per fold and pool held-out predictions.

    Returns (predicted, true) pairs in manifest record order - every
    record predicted exactly once by the model that never saw it - plus
    each fold's training history. Early stopping is off inside CV (no
    validation split is carved from the training folds).
    """
    classes = m.ordered_classes()
    class_index = {label: i for i, label in enumerate(classes)}
    X = load_condition_features(m, images_dir, condition, cfg.input_edge)
    y = np.array([class_index[rec.single_label] for rec in m.records], dtype=np.int64)
    fold_of = np.array([folds.assignment[rec.id] for rec in m.records], dtype=np.int64)

    predictions: dict[int, int] = {}
    histories: list[list[EpochRecord]] = []
    for fold in range(folds.k):
        test_idx = np.flatnonzero(fold_of == fold)
        train_idx = np.flatnonzero(fold_of != fold)
        seed = _fold_seed(cfg.seed, fold)
        fold_cfg = replace(cfg, seed=seed)
        init = init_params(X.shape[1], len(classes), cfg.hidden_sizes, seed=seed)
        params, history = train_two_stage(init, (X[train_idx], y[train_idx]), None, fold_cfg)
        histories.append(history)
        _, _, probs = _forward_cached(params, X[test_idx])
        for local, sample in enumerate(test_idx):
            predictions[int(sample)] = int(np.argmax(probs[local]))

    pairs = [(classes[predictions[i]], classes[int(y[i])]) for i in range(len(m.records))]
    return pairs, histories


# --- serialization -------------------------------------------------------------

_MAGIC = b"FPMD"
_VERSION = 1


def params_to_bytes(params: ModelParams) -> bytes:
    """Flat little-endian binary: magic, version, layer count, then per
    layer rows, cols, row-major f64 weights, f64 biases."""
    buf = io.BytesIO()
    layers = params.layers()
    buf.write(_MAGIC)
    buf.write(struct.pack("<II", _VERSION, len(layers)))
    for layer in layers:
        rows, cols = layer.weights.shape
        buf.write(struct.pack("<II", rows, cols))
        buf.write(np.ascontiguousarray(layer.weights, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())
    return buf.getvalue()


def params_from_bytes(data: bytes) -> ModelParams:
    buf = io.BytesIO(data)
    if buf.read(4) != _MAGIC:
        raise ValueError("not a model parameter file (bad magic)")
    version, n_layers = struct.unpack("<II", buf.read(8))
    if version != _VERSION:
        raise ValueError(f"unsupported model file version {version}")
    if n_layers < 1:
        raise ValueError("model file has no layers")
    layers = []
    for _ in range(n_layers):
        rows, cols = struct.unpack("<II", buf.read(8))
        w = np.frombuffer(buf.read(rows * cols * 8), dtype="<f8").reshape(rows, cols).copy()
        b = np.frombuffer(buf.read(rows * 8), dtype="<f8").copy()
        layers.append(Layer(w, b))
    return ModelParams(backbone=layers[:-1], head=layers[-1])


def save_params(params: ModelParams, path) -> None:
    Path(path).write_bytes(params_to_bytes(params))


def load_params(path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())


def history_to_csv(history: list[EpochRecord]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["stage", "epoch", "train_loss", "val_loss", "val_accuracy"])
    for rec in history:
        writer.writerow([
            rec.stage, rec.epoch, repr(rec.train_loss),
            "" if rec.val_loss is None else repr(rec.val_loss),
            "" if rec.val_accuracy is None else repr(rec.val_accuracy),
        ])
    return out.getvalue()
