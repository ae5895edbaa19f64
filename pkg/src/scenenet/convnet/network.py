"""The VGG-style scene classifier assembled from :mod:`layers`."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericError, ParameterError, ShapeError
from . import layers as L

ModelParameters = list  # ordered list of float32 weight and bias arrays


@dataclass(frozen=True)
class Architecture:
    """Hyper-parameters of the network; the defaults are the 15-scene model."""

    input_time: int = 43
    input_freq: int = 128
    block_filters: tuple = ((32, 32), (64, 64), (128, 128), (256, 256))
    pooled: tuple = (True, True, True, False)
    conv_dropout: float = 0.25
    dense_units: int = 1024
    dense_dropout: float = 0.5
    n_classes: int = 15
    alpha: float = 0.33

    def __post_init__(self):
        if len(self.block_filters) != len(self.pooled):
            raise ParameterError("block_filters and pooled must have the same length")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")

    @classmethod
    def tiny(cls, n_classes: int = 3, **overrides) -> "Architecture":
        """Scaled-down clone used for end-to-end gradient checks and fast tests."""
        kw = dict(input_time=7, input_freq=8, block_filters=((4, 4), (8, 8)), pooled=(True, False),
                  dense_units=16, n_classes=n_classes)
        kw.update(overrides)
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_filters"] = [list(b) for b in self.block_filters]
        d["pooled"] = list(self.pooled)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        d = dict(d)
        d["block_filters"] = tuple(tuple(b) for b in d["block_filters"])
        d["pooled"] = tuple(d["pooled"])
        return cls(**d)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    arg: Optional[float] = None
    param_shapes: tuple = ()
    block: Optional[int] = None


def layer_specs(arch: Architecture) -> list[LayerSpec]:
    """Layer sequence: per block two (pad, conv, leaky ReLU) triples, then
    pooling and dropout where the block is pooled; global average pooling,
    a leaky-ReLU dense layer with dropout, and the softmax classifier."""
    specs = []
    channels = 1
    for b, (filters, pooled) in enumerate(zip(arch.block_filters, arch.pooled), start=1):
        for f in filters:
            specs.append(LayerSpec("zero_pad", 1, block=b))
            specs.append(LayerSpec("conv3x3", f, ((f, channels, 3, 3), (f,)), block=b))
            specs.append(LayerSpec("leaky_relu", arch.alpha, block=b))
            channels = f
        if pooled:
            specs.append(LayerSpec("max_pool3x3", block=b))
            specs.append(LayerSpec("dropout", arch.conv_dropout, block=b))
    specs.append(LayerSpec("global_avg_pool"))
    specs.append(LayerSpec("dense", arch.dense_units, ((arch.dense_units, channels), (arch.dense_units,))))
    specs.append(LayerSpec("leaky_relu", arch.alpha))
    specs.append(LayerSpec("dropout", arch.dense_dropout))
    specs.append(LayerSpec("dense", arch.n_classes, ((arch.n_classes, arch.dense_units), (arch.n_classes,))))
    specs.append(LayerSpec("softmax"))
    return specs


def parameter_shapes(arch: Architecture) -> list[tuple]:
    return [shape for spec in layer_specs(arch) for shape in spec.param_shapes]


def _fans(shape: tuple) -> tuple[int, int]:
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    return shape[1], shape[0]


def glorot_uniform_init(shapes: Sequence[tuple], seed: int) -> ModelParameters:
    """Glorot-uniform weights, zero biases (1-d shapes), reproducible per seed."""
    rng = np.random.default_rng(seed)
    params = []
    for shape in shapes:
        if len(shape) == 1:
            params.append(np.zeros(shape, dtype=np.float32))
            continue
        fan_in, fan_out = _fans(shape)
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-bound, bound, size=shape).astype(np.float32))
    return params


@dataclass
class ForwardTrace:
    """Per-layer caches of a training-mode pass, consumed by ``backward``."""

    caches: list
    probs: np.ndarray
    rows: int = field(default=0)


def _display_shape(arr: np.ndarray) -> tuple:
    # channels x time x frequency for maps, units for vectors
    if arr.ndim == 4:
        return (arr.shape[3], arr.shape[1], arr.shape[2])
    return tuple(arr.shape[1:])


class Network:
    """Parameters plus the fixed layer sequence of an :class:`Architecture`."""

    def __init__(self, arch: Architecture | None = None, params: ModelParameters | None = None,
                 seed: int = 0, classes: Sequence[str] | None = None):
        self.arch = arch or Architecture()
        self.specs = layer_specs(self.arch)
        shapes = parameter_shapes(self.arch)
        if params is None:
            params = glorot_uniform_init(shapes, seed)
        if [tuple(p.shape) for p in params] != [tuple(s) for s in shapes]:
            raise ShapeError("parameter shapes do not match the architecture")
        self.params = [np.ascontiguousarray(p, dtype=np.float32) for p in params]
        self.classes = list(classes) if classes is not None else None
        self._owner = []
        cursor = 0
        for spec in self.specs:
            self._owner.append(cursor if spec.param_shapes else None)
            cursor += len(spec.param_shapes)

    def copy(self) -> "Network":
        return Network(self.arch, [p.copy() for p in self.params], classes=self.classes)

    def _to_internal(self, batch) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float32)
        expected = (1, self.arch.input_time, self.arch.input_freq)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"expected a batch shaped [N, {expected[0]}, {expected[1]}, {expected[2]}], got {x.shape}")
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def _run(self, x: np.ndarray, train: bool, rng, keep_cache: bool,
             record: Callable[[int, LayerSpec, np.ndarray], None] | None = None):
        caches = []
        for i, spec in enumerate(self.specs):
            cache = None
            if spec.kind == "zero_pad":
                x = L.zero_pad(x, 1)
            elif spec.kind == "conv3x3":
                j = self._owner[i]
                x, cache = L.conv2d_forward(x, self.params[j], self.params[j + 1], padding=1)
            elif spec.kind == "leaky_relu":
                x, cache = L.leaky_relu_forward(x, spec.arg)
            elif spec.kind == "max_pool3x3":
                x, cache = L.max_pool3x3_forward(x)
            elif spec.kind == "dropout":
                x, cache = L.dropout_forward(x, spec.arg, train, rng)
            elif spec.kind == "global_avg_pool":
                x, cache = L.global_avg_pool_forward(x)
            elif spec.kind == "dense":
                j = self._owner[i]
                x, cache = L.dense_forward(x, self.params[j], self.params[j + 1])
            elif spec.kind == "softmax":
                x = L.softmax(x)
            else:  # pragma: no cover - specs are generated internally
                raise ParameterError(f"unknown layer kind {spec.kind}")
            if keep_cache:
                caches.append(cache)
            if record is not None:
                record(i, spec, x)
        if not np.all(np.isfinite(x)):
            raise NumericError("non-finite values in network output")
        return x, caches

    def forward(self, batch, train: bool = False, rng: np.random.Generator | None = None):
        """Posteriors ``[N, n_classes]``; in training mode also a :class:`ForwardTrace`."""
        x = self._to_internal(batch)
        probs, caches = self._run(x, train, rng, keep_cache=train)
        if not train:
            return probs
        return probs, ForwardTrace(caches, probs, x.shape[0])

    def backward(self, trace: ForwardTrace, labels) -> tuple[float, ModelParameters]:
        """Batch-mean cross-entropy and its gradient for every parameter tensor."""
        loss = L.cross_entropy(trace.probs, labels)
        grads: list = [None] * len(self.params)
        g = L.softmax_cross_entropy_backward(trace.probs, labels)
        for i in range(len(self.specs) - 2, -1, -1):  # the softmax itself is folded into g
            spec, cache = self.specs[i], trace.caches[i]
            j = self._owner[i]
            if spec.kind == "dense":
                g, grads[j], grads[j + 1] = L.dense_backward(g, cache, self.params[j])
            elif spec.kind == "leaky_relu":
                g = L.leaky_relu_backward(g, cache, spec.arg)
            elif spec.kind == "dropout":
                g = L.dropout_backward(g, cache)
            elif spec.kind == "global_avg_pool":
                g = L.global_avg_pool_backward(g, cache)
            elif spec.kind == "max_pool3x3":
                g = L.max_pool3x3_backward(g, cache)
            elif spec.kind == "conv3x3":
                g, grads[j], grads[j + 1] = L.conv2d_backward(g, cache, self.params[j], need_dx=j > 0)
                if g is None:
                    break
            elif spec.kind == "zero_pad":
                g = L.zero_pad_backward(g, 1)
        for k, grad in enumerate(grads):
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient in parameter tensor {k}")
            grads[k] = grad.astype(np.float32, copy=False)
        return loss, grads

    def loss_and_grads(self, batch, labels, rng: np.random.Generator | None,
                       chunk_size: int = 32) -> tuple[float, ModelParameters]:
        """Training-mode loss/gradient of a mini-batch, evaluated in chunks to bound memory."""
        batch = np.asarray(batch, dtype=np.float32)
        labels = np.asarray(labels)
        n = batch.shape[0]
        total = [np.zeros_like(p) for p in self.params]
        loss = 0.0
        for start in range(0, n, chunk_size):
            stop = min(start + chunk_size, n)
            _, trace = self.forward(batch[start:stop], train=True, rng=rng)
            chunk_loss, grads = self.backward(trace, labels[start:stop])
            w = np.float32((stop - start) / n)
            for acc, grad in zip(total, grads):
                acc += w * grad
            loss += chunk_loss * (stop - start) / n
        return loss, total

    def predict(self, batch, chunk_size: int = 64) -> np.ndarray:
        """Inference-mode posteriors, evaluated in chunks."""
        batch = np.asarray(batch, dtype=np.float32)
        out = [self.forward(batch[s:s + chunk_size]) for s in range(0, batch.shape[0], chunk_size)]
        if not out:
            return np.zeros((0, self.arch.n_classes), dtype=np.float32)
        return np.concatenate(out, axis=0)

    def shape_trace(self, batch=None) -> list[tuple[LayerSpec, tuple]]:
        """Run one inference pass and list every layer's output shape."""
        if batch is None:
            batch = np.zeros((1, 1, self.arch.input_time, self.arch.input_freq), dtype=np.float32)
        trace = []
        self._run(self._to_internal(batch), False, None, False,
                  record=lambda i, spec, out: trace.append((spec, _display_shape(out))))
        return trace

    def block_end_layers(self) -> dict[int, int]:
        """Map block number (1-based) to the index of its last layer."""
        ends = {}
        for i, spec in enumerate(self.specs):
            if spec.block is not None:
                ends[spec.block] = i
        return ends

    def export_activations(self, batch, block, chunk_size: int = 64) -> np.ndarray:
        """Per-channel maxima of a block's output map, or the softmax vector.

        ``block`` is a block number (1-based) or ``"softmax"``; returns
        ``[N, channels]`` (``[N, n_classes]`` for the softmax).
        """
        if block == "softmax":
            return self.predict(batch, chunk_size)
        ends = self.block_end_layers()
        if block not in ends:
            raise ParameterError(f"block must be one of {sorted(ends)} or 'softmax', got {block!r}")
        target = ends[block]
        batch = np.asarray(batch, dtype=np.float32)
        rows = []
        for s in range(0, batch.shape[0], chunk_size):
            grabbed = {}

            def record(i, spec, out):
                if i == target:
                    grabbed["out"] = out.max(axis=(1, 2))

            self._run(self._to_internal(batch[s:s + chunk_size]), False, None, False, record)
            rows.append(grabbed["out"])
        if not rows:
            return np.zeros((0, self.arch.block_filters[block - 1][-1]), dtype=np.float32)
        return np.concatenate(rows, axis=0)
