"""
Radar Segmentation Network for the YOdar Fusion Pipeline
========================================================
Author: Perception Fusion Team

This module implements the 1D radar network that predicts, for every vertical image
slice, the probability that a vehicle occupies it. Everything is plain numpy in
float64: input tensor assembly, the forward pass in train and infer mode, the
class-weighted cross-entropy loss, exact reverse-mode gradients and the grouping of
confident slices into bundles.

Architecture (channel-last, B x L x C):
- Input standardization per radar feature, then N_t * N_f input channels per slice
- conv1..conv3: stride-2 convolutions, width -> 2*width -> 4*width channels
- deconv1..deconv3: stride-2 transposed convolutions back to N_s slices; the
  outputs of deconv1 and deconv2 are concatenated with conv2 and conv1 outputs
- conv4: stride-1 convolution, width channels
- Every block is convolution, batch normalization, leaky ReLU
- Dense head from N_s * width to N_s logits, then a sigmoid

Key Features:
- Deterministic forward/backward given inputs, weights and mode
- Shape checks naming the offending layer or parameter
- Parameters exposed as a named, ordered mapping for optimizers and persistence

Dependencies: numpy, pydantic
"""

# Standard library imports
import logging
import math
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

# Third-party imports
import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Local imports
from ..shared.config import NetworkConfig
from ..shared.exceptions import DomainError, ShapeError
from ..shared.models import ImageGrid, RadarPoint
from ..shared.utils import chunked, parallel_map, seed_stream

logger = logging.getLogger(__name__)

PROB_CLIP = 1e-12
INFER_CHUNK = 64

Params = Dict[str, np.ndarray]


# ========== INPUT TENSOR ==========

def build_input_tensor(
    frames: Sequence[Sequence[RadarPoint]],
    grid: ImageGrid,
    n_frames: Optional[int] = None,
) -> np.ndarray:
    """
    Assign radar points to slices and stack the frames into an N_s x N_t x N_f tensor.

    Args:
        frames: N_t point lists, oldest first
        grid (ImageGrid): Slice layout
        n_frames (Optional[int]): Expected frame count, checked when given

    Returns:
        np.ndarray: Features (range_m, proj_height_px, v_lat, v_long) per slice and
        frame; zero where no point falls. The nearest point wins a shared slice.
    """
    if n_frames is not None and len(frames) != n_frames:
        raise ShapeError(f"input: expected {n_frames} radar frames, got {len(frames)}")
    tensor = np.zeros((grid.n_slices, len(frames), 4), dtype=np.float64)
    nearest = np.full((grid.n_slices, len(frames)), np.inf)
    for f, points in enumerate(frames):
        for point in points:
            if not 0.0 <= point.column_px < grid.width_px:
                continue
            s = min(int(point.column_px // grid.slice_width), grid.n_slices - 1)
            if point.range_m < nearest[s, f]:
                nearest[s, f] = point.range_m
                tensor[s, f] = (point.range_m, point.proj_height_px, point.v_lat, point.v_long)
    return tensor


def input_statistics(tensors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and standard deviation over every slice and frame of a dataset."""
    flat = np.asarray(tensors, dtype=np.float64).reshape(-1, tensors.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return mean, std


# ========== PARAMETERS ==========

class LayerSpec(NamedTuple):
    name: str
    kind: str            # "conv" or "deconv"
    kernel: int
    stride: int
    pad: int
    c_in: int
    c_out: int


def layer_specs(network: NetworkConfig) -> List[LayerSpec]:
    """The seven convolutional blocks in execution order."""
    w = network.width
    c_in = network.n_frames * network.n_features
    kc, kd, kh = network.conv_kernel, network.deconv_kernel, network.head_kernel
    pc, pd, ph = kc // 2, (kd - 2) // 2, kh // 2
    return [
        LayerSpec("conv1", "conv", kc, 2, pc, c_in, w),
        LayerSpec("conv2", "conv", kc, 2, pc, w, 2 * w),
        LayerSpec("conv3", "conv", kc, 2, pc, 2 * w, 4 * w),
        LayerSpec("deconv1", "deconv", kd, 2, pd, 4 * w, 2 * w),
        LayerSpec("deconv2", "deconv", kd, 2, pd, 4 * w, w),
        LayerSpec("deconv3", "deconv", kd, 2, pd, 2 * w, w),
        LayerSpec("conv4", "conv", kh, 1, ph, w, w),
    ]


def parameter_shapes(network: NetworkConfig) -> Dict[str, Tuple[int, ...]]:
    """Ordered name -> shape table of every tensor the network stores."""
    shapes: Dict[str, Tuple[int, ...]] = {
        "input.mean": (network.n_features,),
        "input.std": (network.n_features,),
    }
    for spec in layer_specs(network):
        shapes[f"{spec.name}.kernel"] = (spec.kernel, spec.c_in, spec.c_out)
        for suffix in ("gamma", "beta", "running_mean", "running_var"):
            shapes[f"{spec.name}.{suffix}"] = (spec.c_out,)
    shapes["dense.weight"] = (network.n_slices * network.width, network.n_slices)
    shapes["dense.bias"] = (network.n_slices,)
    return shapes


def trainable_names(network: NetworkConfig) -> List[str]:
    """Parameters updated by the optimizer (buffers excluded)."""
    names = []
    for spec in layer_specs(network):
        names += [f"{spec.name}.kernel", f"{spec.name}.gamma", f"{spec.name}.beta"]
    return names + ["dense.weight", "dense.bias"]


def decayed_names(network: NetworkConfig) -> List[str]:
    """Parameters under the L2 penalty: kernels and dense weights only."""
    return [f"{spec.name}.kernel" for spec in layer_specs(network)] + ["dense.weight"]


class NetworkWeights:
    """
    Immutable, shape-checked set of named network tensors.

    Attributes:
        network (NetworkConfig): Architecture the tensors belong to
        params (Dict[str, np.ndarray]): Read-only float64 arrays in canonical order
    """

    def __init__(self, params: Mapping[str, np.ndarray], network: NetworkConfig):
        shapes = parameter_shapes(network)
        missing = [name for name in shapes if name not in params]
        unknown = [name for name in params if name not in shapes]
        if missing or unknown:
            raise ShapeError(f"weights: missing {missing}, unknown {unknown}")
        frozen: Params = {}
        for name, shape in shapes.items():
            array = np.array(params[name], dtype=np.float64)
            if array.shape != shape:
                raise ShapeError(f"{name}: expected shape {shape}, got {array.shape}")
            if not np.all(np.isfinite(array)):
                raise DomainError(f"{name}: non-finite values")
            array.setflags(write=False)
            frozen[name] = array
        self.network = network
        self.params = frozen

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def replace(self, updates: Mapping[str, np.ndarray]) -> "NetworkWeights":
        """New weights with some tensors swapped out."""
        merged = dict(self.params)
        merged.update(updates)
        return NetworkWeights(merged, self.network)

    def equals(self, other: "NetworkWeights") -> bool:
        """Bitwise equality of every tensor."""
        return self.network == other.network and all(
            np.array_equal(self.params[name], other.params[name]) for name in self.params
        )

    def to_document(self) -> dict:
        """Self-describing record: architecture plus {name, shape, values} per tensor."""
        return {
            "network": self.network.model_dump(mode="json"),
            "parameters": [
                {"name": name, "shape": list(array.shape), "values": array.ravel().tolist()}
                for name, array in self.params.items()
            ],
        }

    @classmethod
    def from_document(cls, document: Mapping) -> "NetworkWeights":
        network = NetworkConfig.model_validate(document["network"])
        params: Params = {}
        for entry in document["parameters"]:
            shape = tuple(int(d) for d in entry["shape"])
            values = np.asarray(entry["values"], dtype=np.float64)
            if values.size != math.prod(shape):
                raise ShapeError(f"{entry['name']}: {values.size} values for shape {shape}")
            params[entry["name"]] = values.reshape(shape)
        return cls(params, network)


def init_weights(
    network: NetworkConfig,
    seed: int,
    input_mean: Optional[np.ndarray] = None,
    input_std: Optional[np.ndarray] = None,
) -> NetworkWeights:
    """
    Glorot-uniform kernels and dense weights, zero biases, identity batch norm.

    Kernels are drawn in canonical parameter order from one stream of ``seed``.
    """
    rng = seed_stream(seed, "radar", "init")
    params: Params = {}
    for name, shape in parameter_shapes(network).items():
        suffix = name.rsplit(".", 1)[1]
        if suffix in ("kernel", "weight"):
            if suffix == "kernel":
                fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
            else:
                fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif suffix in ("gamma", "running_var", "std"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    if input_mean is not None:
        params["input.mean"] = np.asarray(input_mean, dtype=np.float64)
    if input_std is not None:
        params["input.std"] = np.asarray(input_std, dtype=np.float64)
    return NetworkWeights(params, network)


# ========== LAYER PRIMITIVES ==========

def conv1d(x: np.ndarray, kernel: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Channel-last 1D convolution (cross-correlation) without bias."""
    batch, length, _ = x.shape
    k_len = kernel.shape[0]
    out_len = (length + 2 * pad - k_len) // stride + 1
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    span = stride * (out_len - 1) + 1
    out = np.zeros((batch, out_len, kernel.shape[2]))
    for k in range(k_len):
        out += xp[:, k:k + span:stride, :] @ kernel[k]
    return out


def conv1d_backward(
    x: np.ndarray, kernel: np.ndarray, stride: int, pad: int, dout: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of ``conv1d`` with respect to its input and kernel."""
    length = x.shape[1]
    out_len = dout.shape[1]
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    dxp = np.zeros_like(xp)
    dkernel = np.zeros_like(kernel)
    span = stride * (out_len - 1) + 1
    for k in range(kernel.shape[0]):
        window = xp[:, k:k + span:stride, :]
        dkernel[k] = np.tensordot(window, dout, axes=((0, 1), (0, 1)))
        dxp[:, k:k + span:stride, :] += dout @ kernel[k].T
    return dxp[:, pad:pad + length, :], dkernel


def deconv1d(x: np.ndarray, kernel: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Channel-last transposed 1D convolution, the adjoint of ``conv1d``."""
    batch, length, _ = x.shape
    k_len = kernel.shape[0]
    full = (length - 1) * stride + k_len
    span = stride * (length - 1) + 1
    yp = np.zeros((batch, full, kernel.shape[2]))
    for k in range(k_len):
        yp[:, k:k + span:stride, :] += x @ kernel[k]
    return yp[:, pad:full - pad, :]


def deconv1d_backward(
    x: np.ndarray, kernel: np.ndarray, stride: int, pad: int, dout: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradients of ``deconv1d`` with respect to its input and kernel."""
    batch, length, _ = x.shape
    k_len = kernel.shape[0]
    full = (length - 1) * stride + k_len
    span = stride * (length - 1) + 1
    dyp = np.zeros((batch, full, kernel.shape[2]))
    dyp[:, pad:full - pad, :] = dout
    dx = np.zeros_like(x)
    dkernel = np.zeros_like(kernel)
    for k in range(k_len):
        window = dyp[:, k:k + span:stride, :]
        dkernel[k] = np.tensordot(x, window, axes=((0, 1), (0, 1)))
        dx += window @ kernel[k].T
    return dx, dkernel


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function clipped to the open unit interval."""
    return np.clip(0.5 * (1.0 + np.tanh(0.5 * z)), PROB_CLIP, 1.0 - PROB_CLIP)


# ========== FORWARD PASS ==========

class BlockCache(NamedTuple):
    spec: LayerSpec
    x: np.ndarray
    zhat: np.ndarray
    inv_std: np.ndarray
    preact: np.ndarray


class ForwardCache(NamedTuple):
    """Activations kept by a train-mode forward pass for the backward pass."""

    blocks: Dict[str, BlockCache]
    flat: np.ndarray
    y: np.ndarray
    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]]

    def activation_signs(self) -> np.ndarray:
        """Sign pattern of every leaky-ReLU pre-activation, flattened."""
        return np.concatenate([np.ravel(b.preact > 0) for b in self.blocks.values()])


def _as_batch(x: np.ndarray, network: NetworkConfig) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    expected = (network.n_slices, network.n_frames, network.n_features)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise ShapeError(f"input: expected (*, {expected}), got {x.shape}")
    return x, single


def _block_forward(
    spec: LayerSpec,
    h: np.ndarray,
    weights: NetworkWeights,
    training: bool,
    expected_len: int,
) -> Tuple[np.ndarray, BlockCache, Tuple[np.ndarray, np.ndarray]]:
    kernel = weights[f"{spec.name}.kernel"]
    if h.shape[2] != spec.c_in:
        raise ShapeError(f"{spec.name}: expected {spec.c_in} input channels, got {h.shape[2]}")
    op = conv1d if spec.kind == "conv" else deconv1d
    z = op(h, kernel, spec.stride, spec.pad)
    if z.shape[1] != expected_len:
        raise ShapeError(f"{spec.name}: expected length {expected_len}, got {z.shape[1]}")
    eps = weights.network.bn_eps
    if training:
        mean = z.mean(axis=(0, 1))
        var = z.var(axis=(0, 1))
    else:
        mean = weights[f"{spec.name}.running_mean"]
        var = weights[f"{spec.name}.running_var"]
    inv_std = 1.0 / np.sqrt(var + eps)
    zhat = (z - mean) * inv_std
    u = weights[f"{spec.name}.gamma"] * zhat + weights[f"{spec.name}.beta"]
    a = np.where(u > 0, u, weights.network.leaky_slope * u)
    return a, BlockCache(spec, h, zhat, inv_std, u), (mean, var)


def forward_with_cache(x: np.ndarray, weights: NetworkWeights, training: bool = True) -> ForwardCache:
    """
    Forward pass keeping every activation.

    Args:
        x (np.ndarray): Batch (B, N_s, N_t, N_f) or a single tensor
        weights (NetworkWeights): Network parameters
        training (bool): Batch statistics when True, running statistics otherwise

    Returns:
        ForwardCache: Activations, probabilities (B, N_s) and per-block batch stats
    """
    network = weights.network
    xb, _ = _as_batch(x, network)
    batch, n = xb.shape[0], network.n_slices
    h = ((xb - weights["input.mean"]) / weights["input.std"]).reshape(batch, n, -1)

    specs = {spec.name: spec for spec in layer_specs(network)}
    blocks: Dict[str, BlockCache] = {}
    stats: Dict[str, Tuple[np.ndarray, np.ndarray]] = {}

    def run(name: str, inp: np.ndarray, length: int) -> np.ndarray:
        out, blocks[name], stats[name] = _block_forward(specs[name], inp, weights, training, length)
        return out

    c1 = run("conv1", h, n // 2)
    c2 = run("conv2", c1, n // 4)
    c3 = run("conv3", c2, n // 8)
    d1 = run("deconv1", c3, n // 4)
    d2 = run("deconv2", np.concatenate([d1, c2], axis=2), n // 2)
    d3 = run("deconv3", np.concatenate([d2, c1], axis=2), n)
    c4 = run("conv4", d3, n)

    flat = c4.reshape(batch, -1)
    logits = flat @ weights["dense.weight"] + weights["dense.bias"]
    return ForwardCache(blocks, flat, sigmoid(logits), stats)


def forward(x: np.ndarray, weights: NetworkWeights, mode: str = "infer") -> np.ndarray:
    """
    Slice probabilities for one tensor (N_s,) or a batch (B, N_s).

    ``mode`` is "train" (batch statistics) or "infer" (running statistics).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got '{mode}'")
    _, single = _as_batch(x, weights.network)
    y = forward_with_cache(x, weights, training=mode == "train").y
    return y[0] if single else y


def predict_slices(tensors: Sequence[np.ndarray], weights: NetworkWeights) -> np.ndarray:
    """
    Infer-mode probabilities for many tensors.

    Work is cut into fixed chunks, so the result does not depend on the thread count.
    """
    if len(tensors) == 0:
        return np.zeros((0, weights.network.n_slices))
    stacked = np.asarray(tensors, dtype=np.float64)
    parts = parallel_map(lambda chunk: forward(chunk, weights), chunked(stacked, INFER_CHUNK))
    return np.concatenate(parts, axis=0)


# ========== LOSS AND GRADIENTS ==========

def loss(t: np.ndarray, y: np.ndarray, alpha: float) -> float:
    """
    Class-weighted binary cross-entropy.

    Sums -alpha*t*log(y) - (1-t)*log(1-y) over slices, then averages over the batch.

    Raises:
        ShapeError: If ``t`` and ``y`` differ in shape
        DomainError: If some y lies outside (0, 1)
    """
    t = np.asarray(t, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if t.shape != y.shape:
        raise ShapeError(f"loss: targets {t.shape} and probabilities {y.shape} differ")
    if not np.all((y > 0.0) & (y < 1.0)):
        raise DomainError("loss: probabilities must lie strictly inside (0, 1)")
    per_slice = -alpha * t * np.log(y) - (1.0 - t) * np.log(1.0 - y)
    per_item = per_slice.sum(axis=-1)
    return float(np.mean(per_item))


def weight_penalty(weights: NetworkWeights, weight_decay: float) -> float:
    """weight_decay * 1/2 * squared norm of kernels and dense weights."""
    if weight_decay == 0.0:
        return 0.0
    total = sum(float(np.sum(weights[name] ** 2)) for name in decayed_names(weights.network))
    return 0.5 * weight_decay * total


class Gradient(NamedTuple):
    """
    Result of one backward pass.

    Attributes:
        loss: Data loss of the batch (train-mode forward)
        penalty: Weight-decay term added to the objective
        grads: Gradient of loss + penalty for every trainable parameter
        batch_stats: (mean, biased variance) per block from the forward pass
    """

    loss: float
    penalty: float
    grads: Params
    batch_stats: Dict[str, Tuple[np.ndarray, np.ndarray]]


def _block_backward(cache: BlockCache, weights: NetworkWeights, da: np.ndarray, grads: Params) -> np.ndarray:
    spec = cache.spec
    slope = weights.network.leaky_slope
    du = da * np.where(cache.preact > 0, 1.0, slope)
    grads[f"{spec.name}.gamma"] = np.sum(du * cache.zhat, axis=(0, 1))
    grads[f"{spec.name}.beta"] = np.sum(du, axis=(0, 1))
    dzhat = du * weights[f"{spec.name}.gamma"]
    count = dzhat.shape[0] * dzhat.shape[1]
    dz = (cache.inv_std / count) * (
        count * dzhat
        - np.sum(dzhat, axis=(0, 1))
        - cache.zhat * np.sum(dzhat * cache.zhat, axis=(0, 1))
    )
    back = conv1d_backward if spec.kind == "conv" else deconv1d_backward
    dx, grads[f"{spec.name}.kernel"] = back(
        cache.x, weights[f"{spec.name}.kernel"], spec.stride, spec.pad, dz
    )
    return dx


def backward(
    x: np.ndarray,
    weights: NetworkWeights,
    targets: np.ndarray,
    alpha: float,
    weight_decay: float = 0.0,
) -> Gradient:
    """
    Exact gradient of the batch loss plus weight decay, train-mode statistics.

    Args:
        x (np.ndarray): Batch (B, N_s, N_t, N_f)
        weights (NetworkWeights): Current parameters
        targets (np.ndarray): Occupancy targets (B, N_s)
        alpha (float): Positive-class weight
        weight_decay (float): L2 coefficient on kernels and dense weights
    """
    network = weights.network
    cache = forward_with_cache(x, weights, training=True)
    t = np.asarray(targets, dtype=np.float64).reshape(cache.y.shape)
    y = cache.y
    batch = y.shape[0]
    data_loss = loss(t, y, alpha)

    grads: Params = {}
    dlogits = ((1.0 - t) * y - alpha * t * (1.0 - y)) / batch
    grads["dense.weight"] = cache.flat.T @ dlogits
    grads["dense.bias"] = dlogits.sum(axis=0)
    dc4 = (dlogits @ weights["dense.weight"].T).reshape(batch, network.n_slices, network.width)

    w = network.width
    blocks = cache.blocks
    dd3 = _block_backward(blocks["conv4"], weights, dc4, grads)
    ds2 = _block_backward(blocks["deconv3"], weights, dd3, grads)
    dd2, dc1_skip = ds2[..., :w], ds2[..., w:]
    ds1 = _block_backward(blocks["deconv2"], weights, dd2, grads)
    dd1, dc2_skip = ds1[..., :2 * w], ds1[..., 2 * w:]
    dc3 = _block_backward(blocks["deconv1"], weights, dd1, grads)
    dc2 = _block_backward(blocks["conv3"], weights, dc3, grads) + dc2_skip
    dc1 = _block_backward(blocks["conv2"], weights, dc2, grads) + dc1_skip
    _block_backward(blocks["conv1"], weights, dc1, grads)

    for name in decayed_names(network):
        grads[name] = grads[name] + weight_decay * weights[name]
    ordered = {name: grads[name] for name in trainable_names(network)}
    return Gradient(data_loss, weight_penalty(weights, weight_decay), ordered, cache.batch_stats)


def objective(
    x: np.ndarray,
    weights: NetworkWeights,
    targets: np.ndarray,
    alpha: float,
    weight_decay: float = 0.0,
) -> float:
    """The scalar ``backward`` differentiates: train-mode loss plus weight decay."""
    y = forward_with_cache(x, weights, training=True).y
    t = np.asarray(targets, dtype=np.float64).reshape(y.shape)
    return loss(t, y, alpha) + weight_penalty(weights, weight_decay)


# ========== SLICE BUNDLES ==========

class SliceBundle(BaseModel):
    """Maximal run of consecutive slices at or above T_g (1-indexed, inclusive)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    first: int = Field(ge=1)
    last: int = Field(ge=1)

    @model_validator(mode="after")
    def _check_order(self) -> "SliceBundle":
        if self.first > self.last:
            raise ValueError("bundle first slice exceeds last slice")
        return self

    def mean_probability(self, y: np.ndarray) -> float:
        return float(np.mean(np.asarray(y)[self.first - 1:self.last]))


def extract_bundles(y: np.ndarray, t_g: float) -> List[SliceBundle]:
    """Maximal contiguous runs with y_s >= t_g, in ascending slice order."""
    if not 0.0 < t_g < 1.0:
        raise DomainError(f"t_g must lie in (0, 1), got {t_g}")
    above = np.asarray(y) >= t_g
    bundles: List[SliceBundle] = []
    start: Optional[int] = None
    for s, hit in enumerate(above, start=1):
        if hit and start is None:
            start = s
        elif not hit and start is not None:
            bundles.append(SliceBundle(first=start, last=s - 1))
            start = None
    if start is not None:
        bundles.append(SliceBundle(first=start, last=len(above)))
    return bundles
