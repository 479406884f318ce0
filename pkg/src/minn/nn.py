"""Minimal real-valued neural network stack with explicit backward passes.

Dense layers, ReLU, softmax, cross-entropy and MSE losses, SGD and Adam.
No automatic differentiation: every backward pass is hand-assembled and
validated against the central finite-difference oracle in tests.  Layers
accept either a single vector or a batch (leading axis); batched weight
gradients sum over the batch, so a loss gradient scaled by 1/batch yields
exactly the mean of the per-sample gradients.
"""

from __future__ import annotations

import numpy as np

from .numerics import Array, Rng


class Param:
    """A named trainable array with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: Array):
        self.name = name
        self.value = np.asarray(value, dtype=float)
        self.grad = np.zeros_like(self.value)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f"Param({self.name}, shape={self.value.shape})"


def glorot_uniform(rng: Rng, fan_out: int, fan_in: int) -> Array:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_out, fan_in))


class DenseLayer:
    """Affine map x -> weight @ x + bias with cached input for backward."""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng, name: str = "dense"):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = Param(f"{name}.weight", glorot_uniform(rng, out_dim, in_dim))
        self.bias = Param(f"{name}.bias", np.zeros(out_dim))
        self._cached_input: Array | None = None

    def forward(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.shape[1] != self.in_dim:
            raise ValueError(f"{self.weight.name}: expected input width {self.in_dim}, got {x2.shape[1]}")
        self._cached_input = x2
        out = x2 @ self.weight.value.T + self.bias.value
        return out[0] if single else out

    def backward(self, upstream: Array) -> tuple[Array, Array, Array]:
        """Returns (input-grad, weight-grad, bias-grad); accumulates into params.

        input-grad = weight^T upstream per sample; weight-grad is the sum
        over the batch of the per-sample outer products upstream x^T.
        """
        if self._cached_input is None:
            raise RuntimeError(f"{self.weight.name}: backward called before forward")
        upstream = np.asarray(upstream, dtype=float)
        single = upstream.ndim == 1
        u2 = upstream[None, :] if single else upstream
        if u2.shape != (self._cached_input.shape[0], self.out_dim):
            raise ValueError(f"{self.weight.name}: upstream shape {upstream.shape} mismatches forward")
        grad_w = u2.T @ self._cached_input
        grad_b = u2.sum(axis=0)
        grad_x = u2 @ self.weight.value
        self.weight.grad += grad_w
        self.bias.grad += grad_b
        return (grad_x[0] if single else grad_x), grad_w, grad_b

    def parameters(self) -> list[Param]:
        return [self.weight, self.bias]


def relu(x: Array) -> Array:
    return np.maximum(x, 0.0)


def relu_backward(upstream: Array, pre_activation: Array) -> Array:
    return upstream * (pre_activation > 0.0)


def softmax(logits: Array) -> Array:
    """Row-wise stable softmax (shift by the row max before exponentiating)."""
    logits = np.asarray(logits, dtype=float)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def cross_entropy(target: Array, prediction: Array) -> tuple[float, Array]:
    """CE of a one-hot target against a probability vector.

    Returns (scalar, gradient w.r.t. the prediction), the gradient being
    -target/prediction elementwise.  For training use
    :func:`softmax_cross_entropy`, whose fused gradient avoids the division.
    """
    target = np.asarray(target, dtype=float)
    prediction = np.asarray(prediction, dtype=float)
    if target.shape != prediction.shape:
        raise ValueError("target/prediction length mismatch")
    one_positions = np.flatnonzero(target == 1.0)
    if one_positions.size != 1 or np.count_nonzero(target) != 1:
        raise ValueError("target is not one-hot")
    idx = int(one_positions[0])
    if prediction[idx] <= 0.0:
        raise ValueError(f"zero probability at the target index {idx}")
    scalar = -float(np.log(prediction[idx]))
    grad = np.zeros_like(prediction)
    grad[idx] = -1.0 / prediction[idx]
    return scalar, grad


def softmax_cross_entropy(logits: Array, target: Array) -> tuple[float, Array]:
    """Fused softmax + CE; gradient w.r.t. logits is prediction - target.

    Batched inputs return the mean loss and the gradient already scaled by
    1/batch, so downstream backward passes produce mean gradients.
    """
    logits = np.asarray(logits, dtype=float)
    target = np.asarray(target, dtype=float)
    single = logits.ndim == 1
    l2 = logits[None, :] if single else logits
    t2 = target[None, :] if single else target
    probs = softmax(l2)
    picked = np.sum(probs * t2, axis=1)
    losses = -np.log(np.maximum(picked, 1e-300))
    batch = l2.shape[0]
    loss = float(np.mean(losses))
    grad = (probs - t2) / batch
    return loss, (grad[0] if single else grad)


def mse(target: Array, prediction: Array) -> tuple[float, Array]:
    """Mean squared error (1/d)||target - prediction||^2 and its gradient."""
    target = np.asarray(target, dtype=float)
    prediction = np.asarray(prediction, dtype=float)
    if target.shape != prediction.shape:
        raise ValueError("target/prediction length mismatch")
    d = target.size
    diff = prediction - target
    return float(np.sum(diff**2) / d), 2.0 * diff / d


class Mlp:
    """Dense stack with ReLU between layers and a linear final layer.

    ``output_relu=True`` appends a ReLU after the final layer, used for
    branch nets whose output feeds a concatenation rather than a head.
    """

    def __init__(self, widths: list[int], rng: Rng, name: str = "mlp", output_relu: bool = False):
        if len(widths) < 2:
            raise ValueError("Mlp needs at least input and output widths")
        self.name = name
        self.output_relu = output_relu
        self.layers = [
            DenseLayer(widths[i], widths[i + 1], rng.child(f"{name}.layer{i}"), name=f"{name}.layer{i}")
            for i in range(len(widths) - 1)
        ]
        self._pre_activations: list[Array] = []

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def forward(self, x: Array) -> Array:
        self._pre_activations = []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer.forward(h)
            if i < last or self.output_relu:
                self._pre_activations.append(h)
                h = relu(h)
        return h

    def backward(self, upstream: Array) -> Array:
        g = upstream
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            if i < last or self.output_relu:
                g = relu_backward(g, self._pre_activations[i])
            g, _, _ = self.layers[i].backward(g)
        return g

    def parameters(self) -> list[Param]:
        return [p for layer in self.layers for p in layer.parameters()]


class BranchedMlp:
    """Two input branches concatenated and passed through a head stack.

    The main branch reads the module's own input, the side branch reads
    the flattened channel-state features; both end in ReLU so the head
    sees nonnegative features.
    """

    def __init__(
        self,
        main_widths: list[int],
        side_widths: list[int],
        head_widths: list[int],
        rng: Rng,
        name: str = "branched",
    ):
        if head_widths[0] != main_widths[-1] + side_widths[-1]:
            raise ValueError("head input width must equal the sum of branch output widths")
        self.name = name
        self.main = Mlp(main_widths, rng.child(f"{name}.main"), name=f"{name}.main", output_relu=True)
        self.side = Mlp(side_widths, rng.child(f"{name}.side"), name=f"{name}.side", output_relu=True)
        self.head = Mlp(head_widths, rng.child(f"{name}.head"), name=f"{name}.head")

    @property
    def out_dim(self) -> int:
        return self.head.out_dim

    def forward(self, x: Array, side_input: Array) -> Array:
        hm = self.main.forward(x)
        hs = self.side.forward(side_input)
        return self.head.forward(np.concatenate([hm, hs], axis=-1))

    def backward(self, upstream: Array) -> Array:
        g = self.head.backward(upstream)
        split = self.main.out_dim
        g_main = self.main.backward(g[..., :split])
        self.side.backward(g[..., split:])
        return g_main

    def parameters(self) -> list[Param]:
        return self.main.parameters() + self.side.parameters() + self.head.parameters()


class Sgd:
    """Plain stochastic gradient descent: w <- w - lr * grad."""

    def __init__(self, lr: float):
        self.lr = lr
        self.step_count = 0

    def step(self, params: list[Param]) -> None:
        for p in params:
            if p.grad.shape != p.value.shape:
                raise ValueError(f"{p.name}: grad shape {p.grad.shape} != value shape {p.value.shape}")
            p.value -= self.lr * p.grad
        self.step_count += 1


class Adam:
    """Adam with bias correction; moments keyed by parameter name."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, Array] = {}
        self._v: dict[str, Array] = {}

    def step(self, params: list[Param]) -> None:
        self.step_count += 1
        t = self.step_count
        for p in params:
            if p.grad.shape != p.value.shape:
                raise ValueError(f"{p.name}: grad shape {p.grad.shape} != value shape {p.value.shape}")
            m = self._m.setdefault(p.name, np.zeros_like(p.value))
            v = self._v.setdefault(p.name, np.zeros_like(p.value))
            m[...] = self.beta1 * m + (1.0 - self.beta1) * p.grad
            v[...] = self.beta2 * v + (1.0 - self.beta2) * p.grad**2
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.value -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(kind: str, lr: float, beta1: float = 0.9, beta2: float = 0.999):
    if kind == "sgd":
        return Sgd(lr)
    if kind == "adam":
        return Adam(lr, beta1=beta1, beta2=beta2)
    raise ValueError(f"unknown optimizer kind {kind!r}")


CHECKPOINT_MAGIC = "minn-checkpoint-v1"


def save_checkpoint(path, named_arrays: list[tuple[str, Array]]) -> None:
    """Write named real arrays: text header (name + shape per line) then
    the raw little-endian float64 payloads in header order."""
    header_lines = [CHECKPOINT_MAGIC, str(len(named_arrays))]
    payloads = []
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype="<f8")
        shape = " ".join(str(d) for d in arr.shape) if arr.ndim else ""
        header_lines.append(f"{name} {shape}".rstrip())
        payloads.append(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(("\n".join(header_lines) + "\n").encode("ascii"))
        for blob in payloads:
            fh.write(blob)


def load_checkpoint(path) -> dict[str, Array]:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, _, rest = raw.partition(b"\n")
    if magic.decode("ascii", errors="replace") != CHECKPOINT_MAGIC:
        raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
    count_line, _, rest = rest.partition(b"\n")
    count = int(count_line)
    entries = []
    for _ in range(count):
        line, _, rest = rest.partition(b"\n")
        parts = line.decode("ascii").split()
        name, shape = parts[0], tuple(int(d) for d in parts[1:])
        entries.append((name, shape))
    out: dict[str, Array] = {}
    offset = 0
    for name, shape in entries:
        n = int(np.prod(shape)) if shape else 1
        end = offset + 8 * n
        if end > len(rest):
            raise ValueError(f"truncated checkpoint payload while reading {name}")
        out[name] = np.frombuffer(rest[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    return out
