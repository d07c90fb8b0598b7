"""Two-phase training demo: convolution phase, exact transfer, attention phase.

Both classifier variants share the head
    features -> global average pool -> linear -> softmax cross-entropy
and all gradients are derived by hand (the test suite checks every one of
them against central finite differences).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from ._arrays import frozen_array
from .attention import MhsaWeights, RelativeBiasTable
from .construction import (
    BOUNDARY_MODES,
    BOUNDARY_PHANTOM,
    DEFAULT_BIAS_SCALE,
    conv_to_mhsa,
)
from .convolution import ConvKernel
from .errors import DimensionError, InvalidArgumentError, NumericError
from .patches import PatchGeometry, interior_token_indices
from .toydata import ToyDataset, generate_toy_dataset

CONV_MASK_NAMES = frozenset({"kernel", "classifier"})
ATTN_MASK_NAMES = frozenset({"w_q", "w_k", "w_v", "w_o", "bias", "classifier"})

_MASK_TO_PARAMS = {
    "kernel": ("kernel",),
    "w_q": ("w_q",),
    "w_k": ("w_k",),
    "w_v": ("w_v",),
    "w_o": ("w_o",),
    "bias": ("bias",),
    "classifier": ("cls_w", "cls_b"),
}


@dataclass(frozen=True)
class TrainConfig:
    """Plain SGD-with-momentum settings for one training phase."""

    epochs: int
    learning_rate: float
    momentum: float
    batch_size: int
    seed: int
    trainable: frozenset[str]

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise InvalidArgumentError(f"epochs must be >= 0, got {self.epochs}")
        if not np.isfinite(self.learning_rate) or self.learning_rate < 0:
            raise InvalidArgumentError(
                f"learning rate must be finite and >= 0, got {self.learning_rate}"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            raise InvalidArgumentError(f"batch size must be >= 1, got {self.batch_size}")
        unknown = frozenset(self.trainable) - (CONV_MASK_NAMES | ATTN_MASK_NAMES)
        if unknown:
            raise InvalidArgumentError(f"unknown trainable parameter names: {sorted(unknown)}")
        object.__setattr__(self, "trainable", frozenset(self.trainable))


@dataclass(frozen=True)
class ConvClassifier:
    """One convolution layer, pooled, plus a linear class head."""

    kernel: ConvKernel
    cls_w: np.ndarray
    cls_b: np.ndarray

    def __post_init__(self) -> None:
        w = frozen_array(self.cls_w, name="classifier weights")
        b = frozen_array(self.cls_b, name="classifier bias")
        if w.ndim != 2 or w.shape[0] != self.kernel.channels_out:
            raise DimensionError(
                f"classifier weights must be ({self.kernel.channels_out}, classes), "
                f"got shape {w.shape}"
            )
        if b.shape != (w.shape[1],):
            raise DimensionError(
                f"classifier bias must have shape ({w.shape[1]},), got {b.shape}"
            )
        object.__setattr__(self, "cls_w", w)
        object.__setattr__(self, "cls_b", b)

    @property
    def num_classes(self) -> int:
        return self.cls_w.shape[1]

    @property
    def mask_names(self) -> frozenset[str]:
        return CONV_MASK_NAMES

    def params(self) -> dict[str, np.ndarray]:
        return {"kernel": self.kernel.weights, "cls_w": self.cls_w, "cls_b": self.cls_b}

    def replace_params(self, params: dict[str, np.ndarray]) -> "ConvClassifier":
        return ConvClassifier(
            kernel=ConvKernel(weights=params["kernel"]),
            cls_w=params["cls_w"],
            cls_b=params["cls_b"],
        )


@dataclass(frozen=True)
class AttnClassifier:
    """One attention layer, pooled, plus a linear class head.

    `rings` zero-token rings are added around the grid before the forward
    pass (phantom boundary handling); bias tables must cover the padded
    grid of the images this classifier is trained on.
    """

    mhsa: MhsaWeights
    cls_w: np.ndarray
    cls_b: np.ndarray
    patch: int
    boundary: str
    rings: int

    def __post_init__(self) -> None:
        if self.boundary not in BOUNDARY_MODES:
            raise InvalidArgumentError(
                f"boundary mode must be one of {BOUNDARY_MODES}, got {self.boundary!r}"
            )
        if self.rings < 0:
            raise InvalidArgumentError(f"rings must be >= 0, got {self.rings}")
        if self.patch < 1:
            raise InvalidArgumentError(f"patch resolution must be >= 1, got {self.patch}")
        p2 = self.patch * self.patch
        if self.mhsa.dim % p2 or self.mhsa.d_out % p2:
            raise DimensionError(
                f"attention dims {self.mhsa.dim} -> {self.mhsa.d_out} are not multiples "
                f"of patch area {p2}"
            )
        w = frozen_array(self.cls_w, name="classifier weights")
        b = frozen_array(self.cls_b, name="classifier bias")
        if w.ndim != 2 or w.shape[0] != self.mhsa.d_out // p2:
            raise DimensionError(
                f"classifier weights must be ({self.mhsa.d_out // p2}, classes), "
                f"got shape {w.shape}"
            )
        if b.shape != (w.shape[1],):
            raise DimensionError(
                f"classifier bias must have shape ({w.shape[1]},), got {b.shape}"
            )
        object.__setattr__(self, "cls_w", w)
        object.__setattr__(self, "cls_b", b)

    @property
    def num_classes(self) -> int:
        return self.cls_w.shape[1]

    @property
    def feature_channels(self) -> int:
        return self.mhsa.d_out // (self.patch * self.patch)

    @property
    def mask_names(self) -> frozenset[str]:
        return ATTN_MASK_NAMES

    def params(self) -> dict[str, np.ndarray]:
        return {
            "w_q": self.mhsa.w_q,
            "w_k": self.mhsa.w_k,
            "w_v": self.mhsa.w_v,
            "w_o": self.mhsa.w_o,
            "bias": np.stack([t.values for t in self.mhsa.bias]),
            "cls_w": self.cls_w,
            "cls_b": self.cls_b,
        }

    def replace_params(self, params: dict[str, np.ndarray]) -> "AttnClassifier":
        rows, cols = self.mhsa.grid
        tables = tuple(
            RelativeBiasTable(grid_rows=rows, grid_cols=cols, values=v)
            for v in params["bias"]
        )
        weights = MhsaWeights(
            w_q=params["w_q"],
            w_k=params["w_k"],
            w_v=params["w_v"],
            w_o=params["w_o"],
            bias=tables,
        )
        return replace(self, mhsa=weights, cls_w=params["cls_w"], cls_b=params["cls_b"])


# ---------------------------------------------------------------------------
# batched primitives


def _check_batch(images: np.ndarray, labels: np.ndarray, num_classes: int) -> None:
    if images.ndim != 4:
        raise DimensionError(f"batch images must be (B, H, W, C), got shape {images.shape}")
    if labels.shape != (images.shape[0],):
        raise DimensionError("batch labels must have one entry per image")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidArgumentError("batch labels outside the class range")


def _patchify_batch(images: np.ndarray, patch: int) -> np.ndarray:
    b, h, w, c = images.shape
    gh, gw = h // patch, w // patch
    x = images.reshape(b, gh, patch, gw, patch, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, patch * patch * c)


def _unpatchify_batch(tokens: np.ndarray, gh: int, gw: int, patch: int, c: int) -> np.ndarray:
    b = tokens.shape[0]
    x = tokens.reshape(b, gh, gw, patch, patch, c)
    return x.transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * patch, gw * patch, c)


def _softmax_cross_entropy(
    logits: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy; returns (loss, probabilities, dloss/dlogits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = float(-log_probs[np.arange(n), labels].mean())
    probs = np.exp(log_probs)
    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, probs, dlogits


def _conv_features(weights: np.ndarray, images: np.ndarray) -> np.ndarray:
    k = weights.shape[0]
    half = k // 2
    b, h, w, _ = images.shape
    out = np.zeros((b, h, w, weights.shape[3]), dtype=np.result_type(images, weights))
    for d1 in range(-half, half + 1):
        for d2 in range(-half, half + 1):
            dst_r = slice(max(0, -d1), min(h, h - d1))
            dst_c = slice(max(0, -d2), min(w, w - d2))
            if dst_r.start >= dst_r.stop or dst_c.start >= dst_c.stop:
                continue
            src_r = slice(dst_r.start + d1, dst_r.stop + d1)
            src_c = slice(dst_c.start + d2, dst_c.stop + d2)
            out[:, dst_r, dst_c] += images[:, src_r, src_c] @ weights[d1 + half, d2 + half]
    return out


def _conv_kernel_grad(
    kernel_shape: tuple[int, ...], images: np.ndarray, dfeat: np.ndarray
) -> np.ndarray:
    k = kernel_shape[0]
    half = k // 2
    _, h, w, _ = images.shape
    grad = np.zeros(kernel_shape, dtype=np.float64)
    for d1 in range(-half, half + 1):
        for d2 in range(-half, half + 1):
            dst_r = slice(max(0, -d1), min(h, h - d1))
            dst_c = slice(max(0, -d2), min(w, w - d2))
            if dst_r.start >= dst_r.stop or dst_c.start >= dst_c.stop:
                continue
            src_r = slice(dst_r.start + d1, dst_r.stop + d1)
            src_c = slice(dst_c.start + d2, dst_c.stop + d2)
            grad[d1 + half, d2 + half] = np.einsum(
                "bijc,bijo->co", images[:, src_r, src_c], dfeat[:, dst_r, dst_c]
            )
    return grad


def _bias_index_map(rows: int, cols: int) -> np.ndarray:
    """Flat index into a (2*rows-1, 2*cols-1) table for every token pair."""
    idx = np.arange(rows * cols)
    r, c = np.divmod(idx, cols)
    dr = r[:, None] - r[None, :] + rows - 1
    dc = c[:, None] - c[None, :] + cols - 1
    return dr * (2 * cols - 1) + dc


def _stable_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _attn_geometry(model: AttnClassifier, images: np.ndarray) -> tuple[int, int, np.ndarray]:
    _, h, w, c = images.shape
    p = model.patch
    if h % p or w % p:
        raise DimensionError(f"patch {p} must divide image size {h} x {w}")
    if p * p * c != model.mhsa.dim:
        raise DimensionError(
            f"images with {c} channels give token dim {p * p * c}, layer expects "
            f"{model.mhsa.dim}"
        )
    gh, gw = h // p, w // p
    padded = (gh + 2 * model.rings, gw + 2 * model.rings)
    if model.mhsa.grid != padded:
        raise DimensionError(
            f"bias tables cover grid {model.mhsa.grid} but these images need {padded}"
        )
    return gh, gw, interior_token_indices(gh, gw, model.rings)


def _attn_forward(model: AttnClassifier, images: np.ndarray) -> tuple[np.ndarray, dict]:
    gh, gw, interior = _attn_geometry(model, images)
    b, h, w, _ = images.shape
    mhsa = model.mhsa
    rows, cols = mhsa.grid
    grid = PatchGeometry(patch=model.patch, grid_rows=rows, grid_cols=cols)

    tokens = _patchify_batch(images, model.patch)
    x = np.zeros((b, rows * cols, mhsa.dim), dtype=tokens.dtype)
    x[:, interior] = tokens

    bias_full = np.stack([t.expand(grid) for t in mhsa.bias])
    scale = 1.0 / math.sqrt(mhsa.dim)
    q = np.einsum("bnd,hde->bhne", x, mhsa.w_q)
    k = np.einsum("bnd,hde->bhne", x, mhsa.w_k)
    v = np.einsum("bnd,hde->bhne", x, mhsa.w_v)
    scores = np.einsum("bhne,bhme->bhnm", q, k) * scale + bias_full[None]
    if not np.all(np.isfinite(scores)):
        raise NumericError("non-finite attention scores")
    attn = _stable_softmax(scores)
    gathered = np.einsum("bhnm,bhme->bhne", attn, v)
    concat = gathered.transpose(0, 2, 1, 3).reshape(b, rows * cols, -1)
    y = concat @ mhsa.w_o

    feat = _unpatchify_batch(y[:, interior], gh, gw, model.patch, model.feature_channels)
    gap = feat.mean(axis=(1, 2))
    logits = gap @ model.cls_w + model.cls_b
    cache = {
        "x": x,
        "q": q,
        "k": k,
        "v": v,
        "attn": attn,
        "concat": concat,
        "gap": gap,
        "interior": interior,
        "gh": gh,
        "gw": gw,
        "scale": scale,
        "grid": (rows, cols),
    }
    return logits, cache


def _attn_backward(
    model: AttnClassifier, cache: dict, dlogits: np.ndarray, h: int, w: int
) -> dict[str, np.ndarray]:
    mhsa = model.mhsa
    gh, gw = cache["gh"], cache["gw"]
    interior = cache["interior"]
    rows, cols = cache["grid"]
    b = dlogits.shape[0]

    grads: dict[str, np.ndarray] = {}
    grads["cls_w"] = cache["gap"].T @ dlogits
    grads["cls_b"] = dlogits.sum(axis=0)
    dgap = dlogits @ model.cls_w.T
    dfeat = np.broadcast_to(
        dgap[:, None, None, :] / (h * w), (b, h, w, model.feature_channels)
    )
    dyc = _patchify_batch(np.ascontiguousarray(dfeat), model.patch)
    dy = np.zeros((b, rows * cols, mhsa.d_out), dtype=dyc.dtype)
    dy[:, interior] = dyc

    grads["w_o"] = np.einsum("bnf,bno->fo", cache["concat"], dy)
    dconcat = dy @ mhsa.w_o.T
    dgathered = dconcat.reshape(b, rows * cols, mhsa.n_heads, mhsa.d_head).transpose(
        0, 2, 1, 3
    )
    attn, v, q, k, x = cache["attn"], cache["v"], cache["q"], cache["k"], cache["x"]
    dattn = np.einsum("bhne,bhme->bhnm", dgathered, v)
    dv = np.einsum("bhnm,bhne->bhme", attn, dgathered)
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = np.einsum("bhnm,bhme->bhne", dscores, k) * cache["scale"]
    dk = np.einsum("bhnm,bhne->bhme", dscores, q) * cache["scale"]
    grads["w_q"] = np.einsum("bnd,bhne->hde", x, dq)
    grads["w_k"] = np.einsum("bmd,bhme->hde", x, dk)
    grads["w_v"] = np.einsum("bmd,bhme->hde", x, dv)

    dbias_full = dscores.sum(axis=0)
    table_shape = (2 * rows - 1, 2 * cols - 1)
    flat_map = _bias_index_map(rows, cols).reshape(-1)
    dbias = np.zeros((mhsa.n_heads,) + table_shape, dtype=np.float64)
    for head in range(mhsa.n_heads):
        np.add.at(dbias[head].reshape(-1), flat_map, dbias_full[head].reshape(-1))
    grads["bias"] = dbias
    return grads


# ---------------------------------------------------------------------------
# public operations


def forward_loss(
    model: ConvClassifier | AttnClassifier, images: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy loss and logits for a batch."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    _check_batch(images, labels, model.num_classes)
    if isinstance(model, ConvClassifier):
        if images.shape[3] != model.kernel.channels_in:
            raise DimensionError(
                f"batch has {images.shape[3]} channels, kernel expects "
                f"{model.kernel.channels_in}"
            )
        feat = _conv_features(model.kernel.weights, images)
        gap = feat.mean(axis=(1, 2))
        logits = gap @ model.cls_w + model.cls_b
    else:
        logits, _ = _attn_forward(model, images)
    loss, _, _ = _softmax_cross_entropy(logits, labels)
    return loss, logits


def backward(
    model: ConvClassifier | AttnClassifier,
    images: np.ndarray,
    labels: np.ndarray,
    trainable: frozenset[str] | set[str] | None = None,
) -> tuple[float, np.ndarray, dict[str, np.ndarray]]:
    """Loss, logits, and gradients for every parameter in the trainable mask.

    Gradients are keyed by parameter name ("kernel", "w_q", ..., "cls_w",
    "cls_b"); parameters outside the mask are absent.
    """
    images = np.asarray(images)
    labels = np.asarray(labels)
    _check_batch(images, labels, model.num_classes)
    mask = model.mask_names if trainable is None else frozenset(trainable)
    unknown = mask - model.mask_names
    if unknown:
        raise InvalidArgumentError(
            f"parameters {sorted(unknown)} are not part of this model"
        )
    wanted: set[str] = set()
    for name in mask:
        wanted.update(_MASK_TO_PARAMS[name])

    if isinstance(model, ConvClassifier):
        feat = _conv_features(model.kernel.weights, images)
        b, h, w, _ = images.shape
        gap = feat.mean(axis=(1, 2))
        logits = gap @ model.cls_w + model.cls_b
        loss, _, dlogits = _softmax_cross_entropy(logits, labels)
        grads: dict[str, np.ndarray] = {}
        if "cls_w" in wanted:
            grads["cls_w"] = gap.T @ dlogits
            grads["cls_b"] = dlogits.sum(axis=0)
        if "kernel" in wanted:
            dgap = dlogits @ model.cls_w.T
            dfeat = np.broadcast_to(
                dgap[:, None, None, :] / (h * w), (b, h, w, model.kernel.channels_out)
            )
            grads["kernel"] = _conv_kernel_grad(
                model.kernel.weights.shape, images, np.ascontiguousarray(dfeat)
            )
    else:
        logits, cache = _attn_forward(model, images)
        loss, _, dlogits = _softmax_cross_entropy(logits, labels)
        all_grads = _attn_backward(model, cache, dlogits, images.shape[1], images.shape[2])
        grads = {name: g for name, g in all_grads.items() if name in wanted}
    return loss, logits, grads


def evaluate(
    model: ConvClassifier | AttnClassifier, images: np.ndarray, labels: np.ndarray
) -> tuple[float, float]:
    """Mean loss and accuracy over a full split."""
    loss, logits = forward_loss(model, images, labels)
    accuracy = float((logits.argmax(axis=1) == np.asarray(labels)).mean())
    return loss, accuracy


def _epoch_metrics(
    model, epoch: int, train_loss: float, dataset: ToyDataset
) -> dict[str, float]:
    val_loss, val_acc = evaluate(model, dataset.val_images, dataset.val_labels)
    return {
        "epoch": epoch,
        "trainLoss": train_loss,
        "valLoss": val_loss,
        "valAcc": val_acc,
    }


def train_phase(
    model: ConvClassifier | AttnClassifier, dataset: ToyDataset, cfg: TrainConfig
) -> tuple[ConvClassifier | AttnClassifier, list[dict[str, float]]]:
    """SGD with momentum over shuffled minibatches; deterministic per seed.

    The metric log starts with an epoch-0 entry for the untrained model,
    then one entry per epoch. Aborts with a diagnostic on non-finite loss.
    """
    bad = cfg.trainable - model.mask_names
    if bad:
        raise InvalidArgumentError(f"parameters {sorted(bad)} are not part of this model")
    rng = np.random.default_rng(cfg.seed)
    train_images = dataset.train_images
    train_labels = dataset.train_labels

    initial_loss, _ = forward_loss(model, train_images, train_labels)
    metrics = [_epoch_metrics(model, 0, initial_loss, dataset)]

    params = {name: np.array(value) for name, value in model.params().items()}
    velocity: dict[str, np.ndarray] = {}
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_images.shape[0])
        batch_losses = []
        for start in range(0, order.size, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, _, grads = backward(model, train_images[idx], train_labels[idx], cfg.trainable)
            if not np.isfinite(loss):
                raise NumericError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch {start // cfg.batch_size}"
                )
            batch_losses.append(loss)
            for name, grad in grads.items():
                vel = velocity.get(name)
                if vel is None:
                    vel = np.zeros_like(grad)
                vel = cfg.momentum * vel + grad
                velocity[name] = vel
                params[name] = params[name] - cfg.learning_rate * vel
            model = model.replace_params(params)
        metrics.append(_epoch_metrics(model, epoch, float(np.mean(batch_losses)), dataset))
    return model, metrics


def transfer(
    conv: ConvClassifier,
    patch: int,
    bias_scale: float = DEFAULT_BIAS_SCALE,
    boundary: str = BOUNDARY_PHANTOM,
    height: int | None = None,
    width: int | None = None,
) -> AttnClassifier:
    """Initialize an attention classifier from a trained convolutional one.

    The attention layer is the exact conversion of the convolution kernel,
    the class head is copied verbatim, so both models compute the same
    logits on every input. Bias tables are sized for images of the given
    height and width.
    """
    if height is None or width is None:
        raise InvalidArgumentError("transfer needs the target image height and width")
    geom = PatchGeometry.for_image(height, width, patch)
    converted = conv_to_mhsa(conv.kernel, patch, bias_scale=bias_scale, boundary=boundary)
    rings = converted.offsets.radius if boundary == BOUNDARY_PHANTOM else 0
    padded = PatchGeometry(
        patch=patch,
        grid_rows=geom.grid_rows + 2 * rings,
        grid_cols=geom.grid_cols + 2 * rings,
    )
    return AttnClassifier(
        mhsa=converted.weights_for_grid(padded),
        cls_w=conv.cls_w,
        cls_b=conv.cls_b,
        patch=patch,
        boundary=boundary,
        rings=rings,
    )


@dataclass(frozen=True)
class DatasetConfig:
    seed: int
    samples: int
    height: int
    width: int
    channels: int
    num_classes: int

    def generate(self) -> ToyDataset:
        return generate_toy_dataset(
            seed=self.seed,
            samples=self.samples,
            height=self.height,
            width=self.width,
            channels=self.channels,
            num_classes=self.num_classes,
        )


@dataclass(frozen=True)
class TransferCheck:
    max_logit_diff: float
    val_loss_diff: float
    ok: bool


@dataclass(frozen=True)
class TwoPhaseReport:
    phase1_metrics: list[dict[str, float]]
    phase2_metrics: list[dict[str, float]]
    transfer_check: TransferCheck
    conv_model: ConvClassifier
    attn_model: AttnClassifier


TRANSFER_TOLERANCE = 1e-4


def run_two_phase(
    phase1: TrainConfig,
    phase2: TrainConfig,
    dataset_cfg: DatasetConfig,
    kernel_size: int = 3,
    feature_channels: int = 6,
    patch: int = 2,
    bias_scale: float = DEFAULT_BIAS_SCALE,
    boundary: str = BOUNDARY_PHANTOM,
    init_seed: int = 0,
    init_scale: float = 0.3,
) -> TwoPhaseReport:
    """Convolution phase, exact transfer, attention phase.

    The transfer check records the largest logit difference between the
    trained convolutional classifier and its transferred attention twin
    over the validation split.
    """
    dataset = dataset_cfg.generate()
    rng = np.random.default_rng(init_seed)
    kernel = ConvKernel(
        weights=rng.normal(
            0.0,
            init_scale,
            size=(kernel_size, kernel_size, dataset_cfg.channels, feature_channels),
        )
    )
    conv_model = ConvClassifier(
        kernel=kernel,
        cls_w=np.zeros((feature_channels, dataset_cfg.num_classes)),
        cls_b=np.zeros(dataset_cfg.num_classes),
    )
    conv_model, phase1_metrics = train_phase(conv_model, dataset, phase1)

    attn_model = transfer(
        conv_model,
        patch,
        bias_scale=bias_scale,
        boundary=boundary,
        height=dataset_cfg.height,
        width=dataset_cfg.width,
    )
    _, conv_logits = forward_loss(conv_model, dataset.val_images, dataset.val_labels)
    _, attn_logits = forward_loss(attn_model, dataset.val_images, dataset.val_labels)
    max_diff = float(np.abs(conv_logits - attn_logits).max())
    val_loss_conv, _ = evaluate(conv_model, dataset.val_images, dataset.val_labels)
    val_loss_attn, _ = evaluate(attn_model, dataset.val_images, dataset.val_labels)
    check = TransferCheck(
        max_logit_diff=max_diff,
        val_loss_diff=abs(val_loss_conv - val_loss_attn),
        ok=max_diff <= TRANSFER_TOLERANCE,
    )

    attn_model, phase2_metrics = train_phase(attn_model, dataset, phase2)
    return TwoPhaseReport(
        phase1_metrics=phase1_metrics,
        phase2_metrics=phase2_metrics,
        transfer_check=check,
        conv_model=conv_model,
        attn_model=attn_model,
    )
