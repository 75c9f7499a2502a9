"""
Conv1D -> LSTM -> Feedforward Network

The shared trunk is a valid-padding 1-D convolution over time (ReLU) followed
by an LSTM. Each task head is a ReLU hidden layer plus an output layer:

- classification: softmax over the readout of the LSTM sequence
- regression_scalar: identity output on the readout
- regression_sequence: the head is applied to every LSTM hidden state

Readout is the final hidden state, or the mean over time when
`arch.readout == "mean"`.

Batches are 3-D arrays (examples x frames x bands) of equal-length inputs.
All math is float64; backward() returns gradients summed over the batch.

Tensor layout (ModelParams keys):
    conv.W [filters x kernel x bands], conv.b [filters]
    lstm.Wx [filters x 4H], lstm.Wh [H x 4H], lstm.b [4H], gate order i, f, o, g
    head.<name>.W1 [H x ff], head.<name>.b1 [ff], head.<name>.W2 [ff x out], head.<name>.b2 [out]
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, softmax

from src.core.errors import MissingCache, ShapeMismatch
from src.core.sampling import make_rng
from src.models.config import Architecture, HeadSpec
from src.models.domain import MelSpectrogram, ModelParams

logger = logging.getLogger(__name__)

FORGET_GATE_BIAS = 1.0

Mode = Literal["train", "infer"]


# ============================================================================
# PARAMETERS
# ============================================================================

def param_shapes(arch: Architecture) -> Dict[str, tuple]:
    """Tensor name -> shape, in initialization order"""
    hidden = arch.lstm_units
    shapes = {
        "conv.W": (arch.conv_filters, arch.conv_kernel, arch.input_bands),
        "conv.b": (arch.conv_filters,),
        "lstm.Wx": (arch.conv_filters, 4 * hidden),
        "lstm.Wh": (hidden, 4 * hidden),
        "lstm.b": (4 * hidden,),
    }
    for head in arch.heads:
        prefix = f"head.{head.name}"
        shapes[f"{prefix}.W1"] = (hidden, head.ff_units)
        shapes[f"{prefix}.b1"] = (head.ff_units,)
        shapes[f"{prefix}.W2"] = (head.ff_units, head.n_outputs)
        shapes[f"{prefix}.b2"] = (head.n_outputs,)
    return shapes


def _fans(name: str, shape: tuple) -> tuple:
    if name == "conv.W":
        filters, kernel, bands = shape
        return kernel * bands, filters
    return shape[0], shape[1]


def init_params(arch: Architecture, seed: int) -> ModelParams:
    """
    Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.0.

    Tensors are drawn from one PCG64 stream in param_shapes() order, so the
    result is bit-identical for equal (arch, seed).
    """
    rng = make_rng(seed)
    tensors: Dict[str, np.ndarray] = {}
    for name, shape in param_shapes(arch).items():
        if len(shape) == 1:
            tensors[name] = np.zeros(shape, dtype=np.float64)
            continue
        fan_in, fan_out = _fans(name, shape)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-limit, limit, size=shape)

    hidden = arch.lstm_units
    tensors["lstm.b"][hidden : 2 * hidden] = FORGET_GATE_BIAS
    return ModelParams(arch=arch, tensors=tensors, init_seed=int(seed))


def validate_params(params: ModelParams) -> None:
    """Check tensor names, shapes and finiteness against the architecture"""
    expected = param_shapes(params.arch)
    if set(expected) != set(params.tensors):
        raise ShapeMismatch(
            f"Tensor names {sorted(params.tensors)} do not match architecture {sorted(expected)}"
        )
    for name, shape in expected.items():
        tensor = params.tensors[name]
        if tensor.shape != shape:
            raise ShapeMismatch(f"{name} has shape {tensor.shape}, expected {shape}")
        if not np.all(np.isfinite(tensor)):
            raise ShapeMismatch(f"{name} contains non-finite values")


# ============================================================================
# FORWARD
# ============================================================================

@dataclass
class HeadCache:
    inputs: np.ndarray  # readout (N x H) or hidden sequence (N x T x H)
    z1: np.ndarray
    a1: np.ndarray


@dataclass
class ForwardCache:
    """Intermediates of a training-mode forward pass"""
    x: np.ndarray
    windows: np.ndarray
    conv_z: np.ndarray
    conv_a: np.ndarray
    gates: np.ndarray  # N x T x 4H, post-activation (i, f, o sigmoid; g tanh)
    cells: np.ndarray  # N x (T+1) x H, cells[:, 0] is the zero initial state
    hiddens: np.ndarray  # N x (T+1) x H
    tanh_cells: np.ndarray  # N x T x H
    heads: Dict[str, HeadCache] = field(default_factory=dict)


@dataclass
class ForwardResult:
    """
    Attributes:
        outputs: head -> posteriors (N x C), scalar values (N,) or value sequences (N x T)
        logits: head -> output-layer pre-activations, same layout as outputs
        cache: Present only for mode="train"
    """
    outputs: Dict[str, np.ndarray]
    logits: Dict[str, np.ndarray]
    cache: Optional[ForwardCache] = None


def _as_batch(inputs: Union[np.ndarray, MelSpectrogram], arch: Architecture) -> np.ndarray:
    if isinstance(inputs, MelSpectrogram):
        inputs = inputs.values
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[np.newaxis]
    if x.ndim != 3:
        raise ShapeMismatch(f"Expected frames x bands input, got shape {x.shape}")
    if x.shape[2] != arch.input_bands:
        raise ShapeMismatch(f"Input has {x.shape[2]} bands, architecture expects {arch.input_bands}")
    if x.shape[1] < arch.conv_kernel:
        raise ShapeMismatch(
            f"Input has {x.shape[1]} frames, fewer than the conv kernel ({arch.conv_kernel})"
        )
    return x


def _conv_forward(x: np.ndarray, params: ModelParams):
    arch = params.arch
    # N x T' x bands x kernel
    windows = sliding_window_view(x, arch.conv_kernel, axis=1)[:, :: arch.conv_stride]
    z = np.einsum("ntdk,fkd->ntf", windows, params["conv.W"]) + params["conv.b"]
    return windows, z, np.maximum(z, 0.0)


def _lstm_forward(a: np.ndarray, params: ModelParams):
    n, steps, _ = a.shape
    hidden = params.arch.lstm_units
    wh = params["lstm.Wh"]
    projected = a @ params["lstm.Wx"] + params["lstm.b"]

    gates = np.empty((n, steps, 4 * hidden))
    cells = np.zeros((n, steps + 1, hidden))
    hiddens = np.zeros((n, steps + 1, hidden))
    tanh_cells = np.empty((n, steps, hidden))
    for t in range(steps):
        pre = projected[:, t] + hiddens[:, t] @ wh
        sig = expit(pre[:, : 3 * hidden])
        cand = np.tanh(pre[:, 3 * hidden :])
        i, f, o = sig[:, :hidden], sig[:, hidden : 2 * hidden], sig[:, 2 * hidden :]
        cells[:, t + 1] = f * cells[:, t] + i * cand
        tanh_cells[:, t] = np.tanh(cells[:, t + 1])
        hiddens[:, t + 1] = o * tanh_cells[:, t]
        gates[:, t, : 3 * hidden] = sig
        gates[:, t, 3 * hidden :] = cand
    return gates, cells, hiddens, tanh_cells


def _readout(hiddens: np.ndarray, arch: Architecture) -> np.ndarray:
    sequence = hiddens[:, 1:]
    if arch.readout == "mean":
        return sequence.mean(axis=1)
    return sequence[:, -1]


def _head_forward(head: HeadSpec, inputs: np.ndarray, params: ModelParams):
    prefix = f"head.{head.name}"
    z1 = inputs @ params[f"{prefix}.W1"] + params[f"{prefix}.b1"]
    a1 = np.maximum(z1, 0.0)
    logits = a1 @ params[f"{prefix}.W2"] + params[f"{prefix}.b2"]
    if head.kind == "classification":
        return z1, a1, logits, softmax(logits, axis=-1)
    logits = logits[..., 0]
    return z1, a1, logits, logits


def forward(
    params: ModelParams,
    inputs: Union[np.ndarray, MelSpectrogram],
    mode: Mode = "infer",
) -> ForwardResult:
    """
    Run the network on one input (frames x bands) or a batch (N x frames x bands).

    Raises:
        ShapeMismatch: Band count differs from the architecture or input shorter than the kernel
    """
    arch = params.arch
    x = _as_batch(inputs, arch)
    windows, conv_z, conv_a = _conv_forward(x, params)
    gates, cells, hiddens, tanh_cells = _lstm_forward(conv_a, params)
    readout = _readout(hiddens, arch)

    outputs: Dict[str, np.ndarray] = {}
    logits: Dict[str, np.ndarray] = {}
    head_caches: Dict[str, HeadCache] = {}
    for head in arch.heads:
        head_in = hiddens[:, 1:] if head.kind == "regression_sequence" else readout
        z1, a1, head_logits, head_out = _head_forward(head, head_in, params)
        outputs[head.name] = head_out
        logits[head.name] = head_logits
        head_caches[head.name] = HeadCache(inputs=head_in, z1=z1, a1=a1)

    cache = None
    if mode == "train":
        cache = ForwardCache(
            x=x,
            windows=windows,
            conv_z=conv_z,
            conv_a=conv_a,
            gates=gates,
            cells=cells,
            hiddens=hiddens,
            tanh_cells=tanh_cells,
            heads=head_caches,
        )
    return ForwardResult(outputs=outputs, logits=logits, cache=cache)


# ============================================================================
# BACKWARD
# ============================================================================

@dataclass
class Gradients:
    params: Dict[str, np.ndarray]
    inputs: Optional[np.ndarray] = None


def _head_backward(head: HeadSpec, dlogits: np.ndarray, hc: HeadCache, params: ModelParams, grads):
    prefix = f"head.{head.name}"
    if head.kind != "classification":
        dlogits = dlogits[..., np.newaxis]
    lead = hc.a1.shape[:-1]
    a1 = hc.a1.reshape(-1, hc.a1.shape[-1])
    inputs = hc.inputs.reshape(-1, hc.inputs.shape[-1])
    dout = dlogits.reshape(-1, dlogits.shape[-1])

    grads[f"{prefix}.W2"] = a1.T @ dout
    grads[f"{prefix}.b2"] = dout.sum(axis=0)
    dz1 = (dout @ params[f"{prefix}.W2"].T) * (hc.z1.reshape(a1.shape) > 0)
    grads[f"{prefix}.W1"] = inputs.T @ dz1
    grads[f"{prefix}.b1"] = dz1.sum(axis=0)
    return (dz1 @ params[f"{prefix}.W1"].T).reshape(*lead, -1)


def _lstm_backward(dh_seq: np.ndarray, cache: ForwardCache, params: ModelParams, grads) -> np.ndarray:
    hidden = params.arch.lstm_units
    n, steps, _ = dh_seq.shape
    wh_t = params["lstm.Wh"].T
    dpre = np.empty((n, steps, 4 * hidden))
    dh_next = np.zeros((n, hidden))
    dc_next = np.zeros((n, hidden))
    for t in reversed(range(steps)):
        g = cache.gates[:, t]
        i, f, o = g[:, :hidden], g[:, hidden : 2 * hidden], g[:, 2 * hidden : 3 * hidden]
        cand = g[:, 3 * hidden :]
        tc = cache.tanh_cells[:, t]
        dh = dh_seq[:, t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        step = dpre[:, t]
        step[:, :hidden] = dc * cand * i * (1.0 - i)
        step[:, hidden : 2 * hidden] = dc * cache.cells[:, t] * f * (1.0 - f)
        step[:, 2 * hidden : 3 * hidden] = dh * tc * o * (1.0 - o)
        step[:, 3 * hidden :] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        dh_next = step @ wh_t

    grads["lstm.Wx"] = np.einsum("ntf,ntg->fg", cache.conv_a, dpre)
    grads["lstm.Wh"] = np.einsum("nth,ntg->hg", cache.hiddens[:, :-1], dpre)
    grads["lstm.b"] = dpre.sum(axis=(0, 1))
    return dpre @ params["lstm.Wx"].T


def _conv_backward(da: np.ndarray, cache: ForwardCache, params: ModelParams, grads, with_inputs: bool):
    arch = params.arch
    dz = da * (cache.conv_z > 0)
    grads["conv.W"] = np.einsum("ntf,ntdk->fkd", dz, cache.windows)
    grads["conv.b"] = dz.sum(axis=(0, 1))
    if not with_inputs:
        return None

    dx = np.zeros_like(cache.x)
    steps = dz.shape[1]
    span = arch.conv_stride * (steps - 1) + 1
    w = params["conv.W"]
    for k in range(arch.conv_kernel):
        dx[:, k : k + span : arch.conv_stride] += dz @ w[:, k, :]
    return dx


def backward(
    cache: Optional[ForwardCache],
    params: ModelParams,
    output_grads: Dict[str, np.ndarray],
    input_grad: bool = False,
) -> Gradients:
    """
    Backpropagate head output gradients to every tensor.

    Args:
        cache: From forward(mode="train")
        params: Parameters used for that forward pass
        output_grads: head -> gradient w.r.t. that head's logits (classification)
            or values (regression), same layout as ForwardResult.logits. Heads
            left out contribute nothing.
        input_grad: Also return the gradient w.r.t. the input batch

    Returns:
        Gradients summed over the batch; trunk gradients are the sum of all
        head contributions

    Raises:
        MissingCache: cache is None
    """
    if cache is None:
        raise MissingCache("backward() needs the cache of a forward(mode='train') pass")
    arch = params.arch
    grads: Dict[str, np.ndarray] = {}
    hiddens = cache.hiddens[:, 1:]
    dh_seq = np.zeros_like(hiddens)
    d_readout = np.zeros((hiddens.shape[0], hiddens.shape[2]))

    for head in arch.heads:
        prefix = f"head.{head.name}"
        hc = cache.heads[head.name]
        dlogits = output_grads.get(head.name)
        if dlogits is None:
            for suffix in ("W1", "b1", "W2", "b2"):
                grads[f"{prefix}.{suffix}"] = np.zeros_like(params[f"{prefix}.{suffix}"])
            continue
        dlogits = np.asarray(dlogits, dtype=np.float64).reshape(
            hc.a1.shape[:-1] + ((head.n_outputs,) if head.kind == "classification" else ())
        )
        d_in = _head_backward(head, dlogits, hc, params, grads)
        if head.kind == "regression_sequence":
            dh_seq += d_in
        else:
            d_readout += d_in

    if arch.readout == "mean":
        dh_seq += d_readout[:, np.newaxis, :] / hiddens.shape[1]
    else:
        dh_seq[:, -1] += d_readout

    da = _lstm_backward(dh_seq, cache, params, grads)
    dx = _conv_backward(da, cache, params, grads, input_grad)
    ordered = {name: grads[name] for name in params.names()}
    return Gradients(params=ordered, inputs=dx)


# ============================================================================
# INFERENCE
# ============================================================================

def predict(params: ModelParams, inputs: Union[np.ndarray, MelSpectrogram]) -> Dict[str, np.ndarray]:
    """
    Infer-mode outputs for one input.

    Returns:
        head -> posterior vector (classification), 1-element array (scalar
        regression) or per-output-frame values (sequence regression)
    """
    result = forward(params, inputs, mode="infer")
    out: Dict[str, np.ndarray] = {}
    for head in params.arch.heads:
        value = result.outputs[head.name][0]
        out[head.name] = np.atleast_1d(value)
    return out


def merge_segment_predictions(posteriors: Sequence[np.ndarray]) -> np.ndarray:
    """Mean of segment posteriors, renormalized to sum 1"""
    if len(posteriors) == 0:
        raise ValueError("Need at least one segment posterior to merge")
    merged = np.mean(np.stack([np.asarray(p, dtype=np.float64) for p in posteriors]), axis=0)
    return merged / merged.sum()


def output_grad_template(params: ModelParams, n_examples: int, n_frames: int) -> Dict[str, np.ndarray]:
    """Zero output gradients shaped like forward() logits for a batch"""
    steps = params.arch.output_frames(n_frames)
    template: Dict[str, np.ndarray] = {}
    for head in params.arch.heads:
        if head.kind == "classification":
            template[head.name] = np.zeros((n_examples, head.n_outputs))
        elif head.kind == "regression_scalar":
            template[head.name] = np.zeros(n_examples)
        else:
            template[head.name] = np.zeros((n_examples, steps))
    return template


def param_distance(a: ModelParams, b: ModelParams) -> float:
    """Euclidean distance between two parameter sets of the same architecture"""
    return float(np.sqrt(sum(np.sum((a[k] - b[k]) ** 2) for k in a.names())))


def head_names(params: ModelParams) -> List[str]:
    return [h.name for h in params.arch.heads]
