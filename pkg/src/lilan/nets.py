"""Dense feedforward networks with hand-rolled reverse-mode gradients.

Everything here is plain numpy in 64-bit floats: tanh hidden layers,
identity output layer, exact backprop through a recorded tape, and an
Adam optimizer.  These networks are the substrate for every learned map
in the package.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .exceptions import (
    DatasetFormatError,
    InvalidArchitectureError,
    ShapeError,
    TapeMismatchError,
)

CHECKPOINT_MAGIC = b"LILN"
CHECKPOINT_VERSION = 1


@dataclass
class Mlp:
    """Weights and biases of a dense tanh network.

    weights[k] has shape (layer_sizes[k+1], layer_sizes[k]) and
    biases[k] has shape (layer_sizes[k+1],).
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )

    def astype(self, dtype) -> "Mlp":
        return Mlp(
            list(self.layer_sizes),
            [w.astype(dtype) for w in self.weights],
            [b.astype(dtype) for b in self.biases],
        )


@dataclass
class GradTape:
    """Cached forward pass: inputs, pre-activations, activations.

    `activations[0]` is the input batch, `activations[k]` the input to
    layer k; `pre_activations[k]` is the affine output of layer k.
    """

    net: Mlp
    activations: list[np.ndarray]
    pre_activations: list[np.ndarray]

    def replay(self) -> np.ndarray:
        """Return the recorded forward output (bit-identical)."""
        return self.pre_activations[-1]


def param_count(layer_sizes) -> int:
    return int(sum(layer_sizes[k + 1] * (layer_sizes[k] + 1) for k in range(len(layer_sizes) - 1)))


def init_mlp(layer_sizes, seed: int) -> Mlp:
    """Glorot-uniform weights, zero biases, deterministic in `seed`."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise InvalidArchitectureError(f"need at least input and output layer, got {sizes}")
    if any(s < 1 for s in sizes):
        raise InvalidArchitectureError(f"layer sizes must be positive, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return Mlp(sizes, weights, biases)


def _as_batch(x: np.ndarray, width: int, what: str):
    x = np.asarray(x)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise ShapeError(f"{what}: expected width {width}, got shape {x.shape}")
    return x, squeeze


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on a batch (or single vector) of inputs."""
    x, squeeze = _as_batch(x, net.n_in, "forward input")
    a = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        a = z if k == last else np.tanh(z)
    return a[0] if squeeze else a


def forward_with_tape(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, GradTape]:
    """Forward pass that records the per-layer values needed by backward."""
    x, _ = _as_batch(x, net.n_in, "forward input")
    activations = [x]
    pre_activations = []
    a = x
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w.T + b
        pre_activations.append(z)
        if k != last:
            a = np.tanh(z)
            activations.append(a)
    return pre_activations[-1], GradTape(net, activations, pre_activations)


def backward(net: Mlp, tape: GradTape, output_grad: np.ndarray):
    """Exact gradients of <output_grad, forward(x)> w.r.t. params and x.

    Returns (param_grads, input_grads) where param_grads is a list of
    (dW, db) pairs in layer order and input_grads matches the input batch.
    """
    if tape.net is not net:
        raise TapeMismatchError("tape was recorded for a different network")
    if len(tape.pre_activations) != len(net.weights):
        raise TapeMismatchError("tape depth does not match network depth")
    g = np.asarray(output_grad)
    squeeze = g.ndim == 1
    if squeeze:
        g = g[None, :]
    batch = tape.activations[0].shape[0]
    if g.shape != (batch, net.n_out):
        raise TapeMismatchError(
            f"output_grad shape {g.shape} does not match tape batch ({batch}, {net.n_out})"
        )
    n_layers = len(net.weights)
    param_grads: list[tuple[np.ndarray, np.ndarray]] = [None] * n_layers  # type: ignore
    for k in range(n_layers - 1, -1, -1):
        a_in = tape.activations[k]
        param_grads[k] = (g.T @ a_in, g.sum(axis=0))
        g = g @ net.weights[k]
        if k > 0:
            # tanh'(z) = 1 - tanh(z)^2, and activations[k] is tanh(z_{k-1})
            g = g * (1.0 - tape.activations[k] ** 2)
    return param_grads, (g[0] if squeeze else g)


def zero_grads(net: Mlp):
    return [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]


def accumulate_grads(total, extra):
    for (tw, tb), (ew, eb) in zip(total, extra):
        tw += ew
        tb += eb
    return total


def scale_grads(grads, factor: float):
    return [(gw * factor, gb * factor) for gw, gb in grads]


@dataclass
class AdamState:
    """Adam moment accumulators mirroring one Mlp's parameter shapes."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def init_adam(net: Mlp, lr: float, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
    state.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    state.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in zip(net.weights, net.biases)]
    return state


def adam_step(net: Mlp, grads, state: AdamState):
    """One in-place Adam update with bias correction."""
    if len(grads) != len(net.weights):
        raise ShapeError("gradient list length does not match network depth")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, (gw, gb) in enumerate(grads):
        if gw.shape != net.weights[k].shape or gb.shape != net.biases[k].shape:
            raise ShapeError(f"gradient shape mismatch at layer {k}")
        mw, mb = state.m[k]
        vw, vb = state.v[k]
        mw *= b1
        mw += (1 - b1) * gw
        mb *= b1
        mb += (1 - b1) * gb
        vw *= b2
        vw += (1 - b2) * gw**2
        vb *= b2
        vb += (1 - b2) * gb**2
        net.weights[k] -= state.lr * (mw / c1) / (np.sqrt(vw / c2) + state.eps)
        net.biases[k] -= state.lr * (mb / c1) / (np.sqrt(vb / c2) + state.eps)
    return net, state


@dataclass
class VectorAdamState:
    """Adam accumulators for a standalone parameter vector."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None


def init_vector_adam(vec: np.ndarray, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    return VectorAdamState(lr, beta1, beta2, eps, 0, np.zeros_like(vec), np.zeros_like(vec))


def vector_adam_step(vec: np.ndarray, grad: np.ndarray, state: VectorAdamState):
    if grad.shape != vec.shape:
        raise ShapeError("vector gradient shape mismatch")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1 - b1) * grad
    state.v = b2 * state.v + (1 - b2) * grad**2
    mhat = state.m / (1 - b1**state.step)
    vhat = state.v / (1 - b2**state.step)
    vec -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return vec, state


def save_mlp(net: Mlp, path) -> None:
    """Binary checkpoint plus a JSON sidecar describing the architecture."""
    path = str(path)
    sizes = net.layer_sizes
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(sizes)))
        fh.write(struct.pack(f"<{len(sizes)}I", *sizes))
        for w, b in zip(net.weights, net.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())
    sidecar = {
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": list(sizes),
        "parameter_count": param_count(sizes),
        "hidden_activation": "tanh",
        "output_activation": "identity",
    }
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)


def load_mlp(path) -> Mlp:
    path = str(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DatasetFormatError(f"{path}: bad checkpoint magic")
    try:
        version, n_sizes = struct.unpack_from("<II", blob, 4)
        sizes = list(struct.unpack_from(f"<{n_sizes}I", blob, 12))
    except struct.error as exc:
        raise DatasetFormatError(f"{path}: truncated checkpoint header") from exc
    if version != CHECKPOINT_VERSION:
        raise DatasetFormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 12 + 4 * n_sizes
    expected = sum(8 * (sizes[k + 1] * sizes[k] + sizes[k + 1]) for k in range(n_sizes - 1))
    if len(blob) - offset != expected:
        raise DatasetFormatError(f"{path}: checkpoint payload truncated or oversized")
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(blob, dtype="<f8", count=n_out * n_in, offset=offset)
        offset += 8 * n_out * n_in
        b = np.frombuffer(blob, dtype="<f8", count=n_out, offset=offset)
        offset += 8 * n_out
        weights.append(w.reshape(n_out, n_in).copy())
        biases.append(b.copy())
    return Mlp(sizes, weights, biases)
