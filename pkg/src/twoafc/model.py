"""Embedding network, triplet loss, analytic gradients, and the training loop.

The network is a small fixed-vocabulary CNN (convolution, ReLU, max-pool,
flatten, fully-connected) with hand-derived backpropagation on top of numpy.
Inputs are H x W x C float tensors in [0, 1]; the output is a d-dimensional
embedding, L2-normalized onto the unit hypersphere by default.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateEmbeddingError, InputError, UnknownIdError

CONV = "convolution"
RELU = "relu"
MAXPOOL = "max-pool"
FLATTEN = "flatten"
DENSE = "fully-connected"

_KINDS = (CONV, RELU, MAXPOOL, FLATTEN, DENSE)


@dataclass(frozen=True)
class LayerSpec:
    """Shape declaration for one layer.

    conv: kernel, in_channels, out_channels, stride; max-pool: pool window
    (stride equals the window); fully-connected: in_features, out_features.
    relu and flatten carry no parameters.
    """

    kind: str
    kernel: int = 0
    in_channels: int = 0
    out_channels: int = 0
    stride: int = 1
    pool: int = 0
    in_features: int = 0
    out_features: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise InputError(f"unknown layer kind {self.kind!r}")
        if self.kind == CONV and min(self.kernel, self.in_channels, self.out_channels, self.stride) < 1:
            raise InputError("convolution needs positive kernel, channels, stride")
        if self.kind == MAXPOOL and self.pool < 1:
            raise InputError("max-pool needs a positive window")
        if self.kind == DENSE and min(self.in_features, self.out_features) < 1:
            raise InputError("fully-connected needs positive feature counts")

    def param_shapes(self) -> list[tuple[int, ...]]:
        if self.kind == CONV:
            k, ci, co = self.kernel, self.in_channels, self.out_channels
            return [(k, k, ci, co), (co,)]
        if self.kind == DENSE:
            return [(self.in_features, self.out_features), (self.out_features,)]
        return []

    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in self.param_shapes())

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        """Shape after this layer, raising InputError on incompatibility."""
        if self.kind == CONV:
            if len(shape) != 3 or shape[2] != self.in_channels:
                raise InputError(f"convolution expects HxWx{self.in_channels}, got {shape}")
            h = (shape[0] - self.kernel) // self.stride + 1
            w = (shape[1] - self.kernel) // self.stride + 1
            if shape[0] < self.kernel or shape[1] < self.kernel:
                raise InputError(f"kernel {self.kernel} exceeds input {shape[:2]}")
            return (h, w, self.out_channels)
        if self.kind == MAXPOOL:
            if len(shape) != 3:
                raise InputError(f"max-pool expects a HxWxC input, got {shape}")
            h, w = shape[0] // self.pool, shape[1] // self.pool
            if h < 1 or w < 1:
                raise InputError(f"pool window {self.pool} exceeds input {shape[:2]}")
            return (h, w, shape[2])
        if self.kind == FLATTEN:
            return (int(np.prod(shape)),)
        if self.kind == DENSE:
            if shape != (self.in_features,):
                raise InputError(f"fully-connected expects ({self.in_features},), got {shape}")
            return (self.out_features,)
        return shape

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        for key in ("kernel", "in_channels", "out_channels", "pool", "in_features", "out_features"):
            v = getattr(self, key)
            if v:
                d[key] = v
        if self.kind == CONV:
            d["stride"] = self.stride
        return d

    @classmethod
    def from_json(cls, d: dict) -> "LayerSpec":
        return cls(**d)


@dataclass(frozen=True)
class Triplet:
    anchor_id: str
    positive_id: str
    negative_id: str

    def __post_init__(self):
        if len({self.anchor_id, self.positive_id, self.negative_id}) != 3:
            raise InputError(f"triplet ids must be pairwise distinct: {self}")


@dataclass(frozen=True)
class TrainingConfig:
    margin: float = 0.2
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs_per_round: int = 10
    batch_size: int = 64
    seed: int = 0
    reinitialize_per_round: bool = False

    def __post_init__(self):
        if self.margin < 0:
            raise InputError("margin must be nonnegative")
        if self.learning_rate < 0:
            raise InputError("learning_rate must be nonnegative")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must lie in [0, 1)")
        if self.epochs_per_round < 1 or self.batch_size < 1:
            raise InputError("epochs_per_round and batch_size must be positive")


def default_architecture(input_shape: tuple[int, int, int], embedding_dim: int = 8) -> list[LayerSpec]:
    """conv 3x3x8 / relu / pool 2 / conv 3x3x16 / relu / pool 2 / flatten / dense."""
    h, w, c = input_shape
    specs = [
        LayerSpec(CONV, kernel=3, in_channels=c, out_channels=8),
        LayerSpec(RELU),
        LayerSpec(MAXPOOL, pool=2),
        LayerSpec(CONV, kernel=3, in_channels=8, out_channels=16),
        LayerSpec(RELU),
        LayerSpec(MAXPOOL, pool=2),
        LayerSpec(FLATTEN),
    ]
    shape = input_shape
    for spec in specs:
        shape = spec.output_shape(shape)
    specs.append(LayerSpec(DENSE, in_features=shape[0], out_features=embedding_dim))
    return specs


def _fan_in_out(spec: LayerSpec) -> tuple[int, int]:
    if spec.kind == CONV:
        rf = spec.kernel * spec.kernel
        return spec.in_channels * rf, spec.out_channels * rf
    return spec.in_features, spec.out_features


@dataclass
class EmbeddingModel:
    """The shared-weight embedding network M applied to each triplet member."""

    layers: list[LayerSpec]
    input_shape: tuple[int, int, int]
    parameters: list[np.ndarray] = field(default_factory=list)
    embedding_dim: int = 8
    normalize_output: bool = True
    dtype: np.dtype = np.dtype(np.float32)

    def __post_init__(self):
        shape = tuple(self.input_shape)
        for spec in self.layers:
            shape = spec.output_shape(shape)
        if shape != (self.embedding_dim,):
            raise InputError(f"layers produce shape {shape}, expected ({self.embedding_dim},)")
        if not self.parameters:
            self.parameters = [np.zeros(spec.param_count(), dtype=self.dtype) for spec in self.layers]
        if len(self.parameters) != len(self.layers):
            raise InputError("one parameter array per layer required")
        for spec, p in zip(self.layers, self.parameters):
            if p.shape != (spec.param_count(),):
                raise InputError(f"{spec.kind} expects {spec.param_count()} parameters, got {p.shape}")

    @classmethod
    def initialize(cls, layers: list[LayerSpec], input_shape: tuple[int, int, int],
                   embedding_dim: int = 8, normalize_output: bool = True,
                   seed: int = 0, dtype=np.float32) -> "EmbeddingModel":
        """Seeded init: weights uniform in [-s, s], s = sqrt(6/(fan_in+fan_out)); zero biases."""
        rng = np.random.default_rng(seed)
        params = []
        for spec in layers:
            shapes = spec.param_shapes()
            if not shapes:
                params.append(np.zeros(0, dtype=dtype))
                continue
            fan_in, fan_out = _fan_in_out(spec)
            s = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-s, s, size=shapes[0]).astype(dtype)
            b = np.zeros(shapes[1], dtype=dtype)
            params.append(np.concatenate([w.ravel(), b.ravel()]))
        return cls(layers=list(layers), input_shape=tuple(input_shape), parameters=params,
                   embedding_dim=embedding_dim, normalize_output=normalize_output,
                   dtype=np.dtype(dtype))

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters)

    def copy(self) -> "EmbeddingModel":
        return replace(self, parameters=[p.copy() for p in self.parameters])

    def quantized(self) -> "EmbeddingModel":
        """Round-trip parameters through float32, matching the checkpoint wire format."""
        params = [p.astype(np.float32).astype(self.dtype) for p in self.parameters]
        return replace(self, parameters=params)

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p for p in self.parameters]) if self.parameters else np.zeros(0, self.dtype)

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        if flat.size != self.param_count():
            raise InputError(f"expected {self.param_count()} parameters, got {flat.size}")
        offset = 0
        for i, p in enumerate(self.parameters):
            self.parameters[i] = flat[offset:offset + p.size].astype(self.dtype)
            offset += p.size

    def _layer_params(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        spec = self.layers[i]
        shapes = spec.param_shapes()
        w_size = int(np.prod(shapes[0]))
        flat = self.parameters[i]
        return flat[:w_size].reshape(shapes[0]), flat[w_size:].reshape(shapes[1])


def _im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N,H,W,C) -> (N, oh*ow, kernel*kernel*C) patch matrix."""
    n, h, w, c = x.shape
    win = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (N, oh, ow, C, k, k)
    win = win.transpose(0, 1, 2, 4, 5, 3)  # (N, oh, ow, k, k, C)
    oh, ow = win.shape[1], win.shape[2]
    return np.ascontiguousarray(win).reshape(n, oh * ow, kernel * kernel * c)


def _col2im(dcols: np.ndarray, x_shape: tuple, kernel: int, stride: int) -> np.ndarray:
    """Scatter-add patch gradients back to the input tensor."""
    n, h, w, c = x_shape
    oh = (h - kernel) // stride + 1
    ow = (w - kernel) // stride + 1
    dcols = dcols.reshape(n, oh, ow, kernel, kernel, c)
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    for i in range(kernel):
        for j in range(kernel):
            dx[:, i:i + oh * stride:stride, j:j + ow * stride:stride, :] += dcols[:, :, :, i, j, :]
    return dx


def forward_batch(model: EmbeddingModel, batch: np.ndarray | None, want_cache: bool = False,
                  first_cols: np.ndarray | None = None, batch_count: int | None = None):
    """Run the network on a (N,H,W,C) batch; optionally keep the backward cache.

    When the first layer is a convolution, its im2col patch matrix depends
    only on the input, so callers that embed the same images repeatedly may
    pass it precomputed as first_cols (with batch_count) and omit the batch.
    """
    if batch is not None:
        if batch.shape[1:] != tuple(model.input_shape):
            raise InputError(f"input shape {batch.shape[1:]} does not match model {model.input_shape}")
        x = batch.astype(model.dtype, copy=False)
        count = batch.shape[0]
    else:
        if first_cols is None or batch_count is None or model.layers[0].kind != CONV:
            raise InputError("omitting the batch requires first_cols for a leading convolution")
        x = None
        count = batch_count
    cache = []
    for i, spec in enumerate(model.layers):
        if spec.kind == CONV:
            if i == 0 and first_cols is not None:
                cols = first_cols
                x_shape = (count,) + tuple(model.input_shape)
            else:
                cols = _im2col(x, spec.kernel, spec.stride)
                x_shape = x.shape
            w, b = model._layer_params(i)
            w2 = w.reshape(-1, spec.out_channels)
            y = cols @ w2 + b
            oh = (x_shape[1] - spec.kernel) // spec.stride + 1
            ow = (x_shape[2] - spec.kernel) // spec.stride + 1
            if want_cache:
                cache.append((spec, x_shape, cols))
            x = y.reshape(count, oh, ow, spec.out_channels)
        elif spec.kind == RELU:
            if want_cache:
                cache.append((spec, x > 0, None))
            x = np.maximum(x, 0)
        elif spec.kind == MAXPOOL:
            p = spec.pool
            n, h, w_, c = x.shape
            oh, ow = h // p, w_ // p
            windows = x[:, :oh * p, :ow * p, :].reshape(n, oh, p, ow, p, c)
            pooled = windows.max(axis=(2, 4))
            if want_cache:
                cache.append((spec, (x.shape, x, pooled), None))
            x = pooled
        elif spec.kind == FLATTEN:
            if want_cache:
                cache.append((spec, x.shape, None))
            x = x.reshape(x.shape[0], -1)
        elif spec.kind == DENSE:
            w, b = model._layer_params(i)
            if want_cache:
                cache.append((spec, x, None))
            x = x @ w + b
    pre_norm = x
    if model.normalize_output:
        norms = np.linalg.norm(pre_norm, axis=1)
        if np.any(norms == 0):
            raise DegenerateEmbeddingError("all-zero embedding cannot be normalized")
        x = pre_norm / norms[:, None]
        if want_cache:
            return x, (cache, pre_norm, norms)
        return x
    if want_cache:
        return x, (cache, None, None)
    return x


def backward_batch(model: EmbeddingModel, cache, d_out: np.ndarray) -> list[np.ndarray]:
    """Backpropagate embedding-space gradients to per-layer flat parameter gradients."""
    layer_cache, pre_norm, norms = cache
    grads = [np.zeros_like(p) for p in model.parameters]
    if model.normalize_output:
        u = pre_norm / norms[:, None]
        d = (d_out - u * np.sum(u * d_out, axis=1, keepdims=True)) / norms[:, None]
    else:
        d = d_out
    for i in range(len(model.layers) - 1, -1, -1):
        spec, saved, extra = layer_cache[i]
        if spec.kind == DENSE:
            x_in = saved
            w, _ = model._layer_params(i)
            grads[i] = np.concatenate([(x_in.T @ d).ravel(), d.sum(axis=0)])
            d = d @ w.T
        elif spec.kind == FLATTEN:
            d = d.reshape(saved)
        elif spec.kind == MAXPOOL:
            # Route the gradient to window maxima by equality mask. Exact
            # positive ties inside a window double-route, a measure-zero
            # event for continuous activations; all-zero ReLU windows route
            # everywhere but the ReLU mask below kills those paths.
            x_shape, x_in, pooled = saved
            p = spec.pool
            n, h, w_, c = x_shape
            oh, ow = h // p, w_ // p
            windows = x_in[:, :oh * p, :ow * p, :].reshape(n, oh, p, ow, p, c)
            mask = windows == pooled[:, :, None, :, None, :]
            dwin = mask * d[:, :, None, :, None, :]
            dx = np.zeros(x_shape, dtype=d.dtype)
            dx[:, :oh * p, :ow * p, :] = dwin.reshape(n, oh * p, ow * p, c)
            d = dx
        elif spec.kind == RELU:
            d = d * saved
        elif spec.kind == CONV:
            x_shape, cols = saved, extra
            w, _ = model._layer_params(i)
            w2 = w.reshape(-1, spec.out_channels)
            d2 = d.reshape(d.shape[0], -1, spec.out_channels)
            k = cols.shape[-1]
            dw = cols.reshape(-1, k).T @ d2.reshape(-1, spec.out_channels)
            db = d2.sum(axis=(0, 1))
            grads[i] = np.concatenate([dw.ravel(), db])
            if i > 0:  # nothing below the first layer consumes its input gradient
                d = _col2im(d2 @ w2.T, x_shape, spec.kernel, spec.stride)
    return grads


def forward(model: EmbeddingModel, image: np.ndarray) -> np.ndarray:
    """Embed a single H x W x C image."""
    if image.shape != tuple(model.input_shape):
        raise InputError(f"image shape {image.shape} does not match model {model.input_shape}")
    return forward_batch(model, image[None])[0]


def embed_all(model: EmbeddingModel, images: dict[str, np.ndarray], batch_size: int = 64) -> dict[str, np.ndarray]:
    """Embed every image in the map; returns id -> embedding."""
    ids = sorted(images)
    out: dict[str, np.ndarray] = {}
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        batch = np.stack([images[i] for i in chunk])
        emb = forward_batch(model, batch)
        for cid, e in zip(chunk, emb):
            out[cid] = e
    return out


def sq_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance between two embedding vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"length mismatch: {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


def triplet_loss(d_pos: float, d_neg: float, margin: float) -> float:
    """Hinge loss max(d_pos - d_neg + margin, 0)."""
    return max(d_pos - d_neg + margin, 0.0)


def _resolve(images: dict[str, np.ndarray], image_id: str) -> np.ndarray:
    try:
        return images[image_id]
    except KeyError:
        raise UnknownIdError(f"unknown image id {image_id!r}") from None


def loss_and_gradient(model: EmbeddingModel, triplet: Triplet, images: dict[str, np.ndarray],
                      margin: float) -> tuple[float, np.ndarray]:
    """Triplet loss and its analytic gradient as one flat array over all parameters."""
    batch = np.stack([_resolve(images, i) for i in (triplet.anchor_id, triplet.positive_id, triplet.negative_id)])
    emb, cache = forward_batch(model, batch, want_cache=True)
    e_a, e_p, e_n = emb
    d_pos = float(np.sum((e_a - e_p) ** 2))
    d_neg = float(np.sum((e_a - e_n) ** 2))
    loss = triplet_loss(d_pos, d_neg, margin)
    if loss <= 0.0:
        return 0.0, np.zeros(model.param_count(), dtype=model.dtype)
    d_emb = np.stack([2 * (e_n - e_p), -2 * (e_a - e_p), 2 * (e_a - e_n)]).astype(model.dtype)
    grads = backward_batch(model, cache, d_emb)
    return loss, np.concatenate([g for g in grads]) if grads else np.zeros(0, model.dtype)


def _triplet_batch_step(model: EmbeddingModel, margin: float, batch: np.ndarray | None,
                        first_cols: np.ndarray | None, unique_count: int,
                        inverse: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-triplet losses and the mean-loss gradient for one mini-batch.

    The three streams share weights, so the network runs once over the
    batch's distinct images; inverse maps the stacked anchor/positive/
    negative slots onto those unique rows, and slot gradients are summed
    back per image before backpropagation.
    """
    b = len(inverse) // 3
    emb_u, cache = forward_batch(model, batch, want_cache=True,
                                 first_cols=first_cols, batch_count=unique_count)
    emb = emb_u[inverse]
    e_a, e_p, e_n = emb[:b], emb[b:2 * b], emb[2 * b:]
    d_pos = np.sum((e_a - e_p) ** 2, axis=1)
    d_neg = np.sum((e_a - e_n) ** 2, axis=1)
    losses = np.maximum(d_pos - d_neg + margin, 0.0)
    active = (losses > 0).astype(model.dtype)[:, None] / b
    d_slots = np.concatenate([
        2 * (e_n - e_p) * active,
        -2 * (e_a - e_p) * active,
        2 * (e_a - e_n) * active,
    ]).astype(model.dtype)
    d_unique = np.zeros((unique_count, emb_u.shape[1]), dtype=model.dtype)
    np.add.at(d_unique, inverse, d_slots)
    grads = backward_batch(model, cache, d_unique)
    flat = np.concatenate([g for g in grads]) if grads else np.zeros(0, model.dtype)
    return losses, flat


def train(model: EmbeddingModel, triplets: list[Triplet], images: dict[str, np.ndarray],
          config: TrainingConfig) -> tuple[EmbeddingModel, list[float]]:
    """Mini-batch SGD with momentum over shuffled triplets; seeded, deterministic.

    Images recur across triplets and epochs, so the first convolution's
    patch matrix is computed once per distinct image and reused.
    """
    if not triplets:
        raise InputError("cannot train on an empty triplet list")
    model = model.copy()
    bank_ids = sorted({i for t in triplets for i in (t.anchor_id, t.positive_id, t.negative_id)})
    stacked = np.stack([_resolve(images, i) for i in bank_ids]).astype(model.dtype)
    if stacked.shape[1:] != tuple(model.input_shape):
        raise InputError(f"image shape {stacked.shape[1:]} does not match model {model.input_shape}")
    index = {image_id: j for j, image_id in enumerate(bank_ids)}
    first = model.layers[0]
    cols_all = _im2col(stacked, first.kernel, first.stride) if first.kind == CONV else None
    trip_index = np.array(
        [[index[t.anchor_id], index[t.positive_id], index[t.negative_id]] for t in triplets]
    )

    rng = np.random.default_rng(config.seed)
    velocity = np.zeros(model.param_count(), dtype=model.dtype)
    history: list[float] = []
    n = len(triplets)
    for _ in range(config.epochs_per_round):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, config.batch_size):
            rows = trip_index[order[start:start + config.batch_size]]
            flat_idx = np.concatenate([rows[:, 0], rows[:, 1], rows[:, 2]])
            unique, inverse = np.unique(flat_idx, return_inverse=True)
            if cols_all is not None:
                batch, cols = None, cols_all[unique]
            else:
                batch, cols = stacked[unique], None
            losses, grad = _triplet_batch_step(model, config.margin, batch, cols,
                                               len(unique), inverse)
            loss_sum += float(losses.sum())
            velocity = config.momentum * velocity - config.learning_rate * grad
            model.set_flat_parameters(model.flat_parameters() + velocity)
        history.append(loss_sum / n)
    return model, history


# Checkpoint wire format: little-endian uint32 manifest length, UTF-8 JSON
# manifest, then every parameter array as little-endian float32 in layer order.

def save_checkpoint(model: EmbeddingModel, path, seed: int = 0, round_number: int = 0) -> None:
    manifest = {
        "layers": [spec.to_json() for spec in model.layers],
        "input_shape": list(model.input_shape),
        "embedding_dim": model.embedding_dim,
        "normalize_output": model.normalize_output,
        "seed": seed,
        "round": round_number,
    }
    blob = json.dumps(manifest).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in model.parameters:
            fh.write(p.astype("<f4").tobytes())


def load_checkpoint(path, dtype=np.float32) -> tuple[EmbeddingModel, dict]:
    with open(path, "rb") as fh:
        (mlen,) = struct.unpack("<I", fh.read(4))
        manifest = json.loads(fh.read(mlen).decode("utf-8"))
        layers = [LayerSpec.from_json(d) for d in manifest["layers"]]
        params = []
        for spec in layers:
            raw = fh.read(4 * spec.param_count())
            if len(raw) != 4 * spec.param_count():
                raise InputError(f"checkpoint truncated in {spec.kind} parameters")
            params.append(np.frombuffer(raw, dtype="<f4").astype(dtype))
        if fh.read(1):
            raise InputError("checkpoint has trailing bytes")
    model = EmbeddingModel(
        layers=layers,
        input_shape=tuple(manifest["input_shape"]),
        parameters=params,
        embedding_dim=manifest["embedding_dim"],
        normalize_output=manifest["normalize_output"],
        dtype=np.dtype(dtype),
    )
    return model, manifest
