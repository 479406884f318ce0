"""End-to-end goal-oriented link: Encoder, programmable channel layer,
optional Controller, Decoder, trained jointly with analytical gradients.

The model maps a feature vector x to a complex transmit vector s
(encoder output interpreted as (re, im) pairs), scales it to a fixed
transmit power, propagates it through the stochastic channel

    y = (H_D + H_2 Phi H_1^H) s + n,

and classifies from [Re(y); Im(y)].  The metasurface phase response
Phi is a diagonal (single layer) or a diffraction-coupled cascade of
diagonals (multi layer), parametrized by real phase shifts that are
either trained directly (static) or produced per frame by a controller
network from the channel state (controllable).

No automatic differentiation is used anywhere.  The backward pass is
assembled by hand from the channel's analytical derivatives.  Complex
quantities are treated as pairs of reals: an upstream gradient for a
complex array z is stored as g = dL/dRe(z) + j*dL/dIm(z), so for a
complex-linear map y = A x the pullback is g_x = A^H g_y, and a real
parameter t feeding z contributes dL/dt = Re(conj(g_z) * dz/dt).

Minibatching is an exact optimization: the fused cross-entropy gradient
is divided by the batch size, so one batched backward produces the mean
of the per-sample gradients (the batch-size-1 path is the reference).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelPool, ChannelState, csi_feature_dim, flatten_csi, stack_states
from .data import Dataset
from .metasurface import square_geometry, diffraction_matrix
from .nn import BranchedMlp, Mlp, Param, softmax, softmax_cross_entropy
from .numerics import Array, Rng, sample_complex_gaussian

CSI_MODES = ("agnostic", "aware")
MS_MODES = ("static", "controllable", "none")
MS_TYPES = ("ris", "sim")


@dataclass(frozen=True)
class Variant:
    """One cell of the design grid: who sees CSI, and what the surface is."""

    csi_mode: str = "agnostic"
    ms_mode: str = "static"
    ms_type: str = "ris"

    def __post_init__(self):
        if self.csi_mode not in CSI_MODES:
            raise ValueError(f"csi_mode must be one of {CSI_MODES}, got {self.csi_mode!r}")
        if self.ms_mode not in MS_MODES:
            raise ValueError(f"ms_mode must be one of {MS_MODES}, got {self.ms_mode!r}")
        if self.ms_type not in MS_TYPES:
            raise ValueError(f"ms_type must be one of {MS_TYPES}, got {self.ms_type!r}")

    @property
    def uses_cascade(self) -> bool:
        return self.ms_mode != "none"

    @property
    def aware(self) -> bool:
        return self.csi_mode == "aware"


@dataclass(frozen=True)
class ModelSpec:
    """Dimensions, widths, and system constants behind one model build."""

    variant: Variant
    input_dim: int
    n_classes: int
    n_tx: int
    n_rx: int
    n_ms: int = 16
    sim_layers: int = 1
    noise_var: float = 1e-12
    encoder_hidden: tuple[int, ...] = (64, 32)
    decoder_hidden: tuple[int, ...] = (64, 32)
    controller_hidden: tuple[int, ...] = (64,)
    csi_branch_hidden: int | tuple[int, ...] = 32
    csi_feature_width: int = 16
    ms_spacing: float = 5.0
    ms_pitch: float = 0.5

    def __post_init__(self):
        if min(self.input_dim, self.n_classes, self.n_tx, self.n_rx) < 1:
            raise ValueError("dimensions must be positive")
        if self.variant.ms_type == "ris" and self.sim_layers != 1:
            raise ValueError("a single reflecting surface has exactly one layer")
        if self.sim_layers < 1:
            raise ValueError("need at least one metasurface layer")
        if self.noise_var < 0:
            raise ValueError("noise variance cannot be negative")

    @property
    def phase_count(self) -> int:
        return self.sim_layers * self.n_ms


class Model:
    """Parameter container for one variant.  Built by :func:`build_model`."""

    def __init__(self, spec: ModelSpec, encoder, decoder, controller, phases: Param | None, xi: Array | None):
        self.spec = spec
        self.variant = spec.variant
        self.encoder = encoder
        self.decoder = decoder
        self.controller = controller
        self.phases = phases
        self.xi = xi
        self.power_net = None  # attached by the power-control extension

    def parameters(self) -> list[Param]:
        params = self.encoder.parameters() + self.decoder.parameters()
        if self.controller is not None:
            params += self.controller.parameters()
        if self.phases is not None:
            params.append(self.phases)
        if self.power_net is not None:
            params += self.power_net.parameters()
        return params

    def zero_grads(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def named_arrays(self) -> list[tuple[str, Array]]:
        return [(p.name, p.value) for p in self.parameters()]

    def load_named_arrays(self, arrays: dict[str, Array]) -> None:
        for p in self.parameters():
            if p.name not in arrays:
                raise KeyError(f"checkpoint is missing parameter {p.name}")
            stored = arrays[p.name]
            if stored.shape != p.value.shape:
                raise ValueError(f"checkpoint shape {stored.shape} does not fit {p.name} {p.value.shape}")
            p.value[...] = stored


def build_model(spec: ModelSpec, rng: Rng) -> Model:
    v = spec.variant
    enc_out = 2 * spec.n_tx
    dec_in = 2 * spec.n_rx
    csi_dim = csi_feature_dim(spec.n_rx, spec.n_tx, spec.n_ms)
    eh = list(spec.encoder_hidden)
    dh = list(spec.decoder_hidden)
    if v.aware:
        # CSI runs through its own small branch; the branch output is
        # concatenated with the first hidden activation before the head.
        branch = spec.csi_branch_hidden
        if isinstance(branch, int):
            branch = (branch,)
        side = [csi_dim, *branch, spec.csi_feature_width]
        encoder = BranchedMlp(
            [spec.input_dim, eh[0]],
            side,
            [eh[0] + spec.csi_feature_width] + eh[1:] + [enc_out],
            rng.child("encoder"),
            name="encoder",
        )
        decoder = BranchedMlp(
            [dec_in, dh[0]],
            side,
            [dh[0] + spec.csi_feature_width] + dh[1:] + [spec.n_classes],
            rng.child("decoder"),
            name="decoder",
        )
    else:
        encoder = Mlp([spec.input_dim] + eh + [enc_out], rng.child("encoder"), name="encoder")
        decoder = Mlp([dec_in] + dh + [spec.n_classes], rng.child("decoder"), name="decoder")

    controller = None
    phases = None
    xi = None
    if v.uses_cascade:
        if v.ms_type == "sim" and spec.sim_layers > 1:
            geom = square_geometry(spec.sim_layers, spec.n_ms, spacing=spec.ms_spacing, pitch=spec.ms_pitch)
            xi = diffraction_matrix(geom)
        if v.ms_mode == "controllable":
            controller = Mlp(
                [csi_dim] + list(spec.controller_hidden) + [spec.phase_count],
                rng.child("controller"),
                name="controller",
            )
        else:
            init = rng.uniform(0.0, 2.0 * np.pi, (spec.sim_layers, spec.n_ms))
            phases = Param("phases.omega", init)
    return Model(spec, encoder, decoder, controller, phases, xi)


def _sigmoid(z: Array) -> Array:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def power_normalize(s: Array, p) -> Array:
    """Scale s to transmit power p: output = sqrt(p) * s / ||s||."""
    s = np.asarray(s)
    single = s.ndim == 1
    s2 = s[None, :] if single else s
    norms = np.linalg.norm(s2, axis=1)
    if np.any(norms < 1e-300):
        bad = int(np.argmin(norms))
        raise ValueError(f"zero-norm transmit vector (sample {bad}) cannot be power normalized")
    p_arr = np.broadcast_to(np.asarray(p, dtype=float), (s2.shape[0],))
    if np.any(p_arr <= 0):
        raise ValueError("transmit power must be positive")
    out = np.sqrt(p_arr)[:, None] * s2 / norms[:, None]
    return out[0] if single else out


def encoder_forward(model: Model, x: Array, csi_features: Array | None = None) -> Array:
    """Complex transmit vector from a real feature batch (pre-normalization)."""
    if model.variant.aware:
        if csi_features is None:
            raise ValueError("channel-aware encoder needs CSI features")
        raw = model.encoder.forward(x, csi_features)
    else:
        if csi_features is not None:
            raise ValueError("channel-agnostic encoder takes no CSI input")
        raw = model.encoder.forward(x)
    return raw[..., 0::2] + 1j * raw[..., 1::2]


def controller_forward(model: Model, csi_features: Array) -> Array:
    """Per-frame unit-modulus response phi = exp(-j omega), omega in [0, 2pi]."""
    if model.controller is None:
        raise ValueError("variant has no controller")
    z = model.controller.forward(csi_features)
    omega = 2.0 * np.pi * _sigmoid(z)
    return np.exp(-1j * omega)


class ChannelTape:
    """Intermediates cached by the channel layer for one backward pass."""

    def __init__(self, direct, tx_to_ms, ms_to_rx, phi, xi, s, diag_inputs, y_clean, noise):
        self.direct = direct
        self.tx_to_ms = tx_to_ms
        self.ms_to_rx = ms_to_rx
        self.phi = phi  # (B, L, N) or None
        self.xi = xi
        self.s = s
        self.diag_inputs = diag_inputs  # inputs to each diagonal layer
        self.y_clean = y_clean
        self.noise = noise
        self.consumed = False


def channel_layer_forward(
    direct: Array,
    tx_to_ms: Array,
    ms_to_rx: Array,
    phi: Array | None,
    xi: Array | None,
    s: Array,
    noise: Array,
) -> tuple[Array, ChannelTape]:
    """Propagate a batch of transmit vectors through the realized channel.

    ``phi`` holds per-layer unit-modulus responses (B, L, N); None drops
    the cascaded path.  ``noise`` is the realized additive draw, cached on
    the tape so replays and finite-difference probes see identical output.
    """
    b, n_t = s.shape
    if direct.shape[0] != b or direct.shape[2] != n_t:
        raise ValueError(f"channel batch {direct.shape} does not match signal batch {s.shape}")
    y_clean = np.einsum("brt,bt->br", direct, s)
    diag_inputs = []
    if phi is not None:
        layers = phi.shape[1]
        if layers > 1 and xi is None:
            raise ValueError("multi-layer cascade needs a diffraction operator")
        z = np.einsum("btm,bt->bm", np.conj(tx_to_ms), s)
        for m in range(layers):
            if m > 0:
                z = np.einsum("mn,bn->bm", xi, z)
            diag_inputs.append(z)
            z = phi[:, m, :] * z
        y_clean = y_clean + np.einsum("brm,bm->br", ms_to_rx, z)
    if noise.shape != y_clean.shape:
        raise ValueError(f"noise shape {noise.shape} does not match output {y_clean.shape}")
    y = y_clean + noise
    tape = ChannelTape(direct, tx_to_ms, ms_to_rx, phi, xi, s, diag_inputs, y_clean, noise)
    return y, tape


def channel_layer_backward(tape: ChannelTape, upstream: Array) -> tuple[Array, Array | None]:
    """Pull a received-signal gradient back to the transmit vector and the
    per-layer phase responses.  The noise term is an additive constant.

    Returns (g_s, g_phi) in the real-pair convention; g_phi is None when
    the cascaded path is off.
    """
    if tape.consumed:
        raise RuntimeError("channel tape already consumed by a backward pass")
    tape.consumed = True
    if upstream.shape != tape.y_clean.shape:
        raise ValueError(f"upstream shape {upstream.shape} does not match output {tape.y_clean.shape}")
    g_s = np.einsum("brt,br->bt", np.conj(tape.direct), upstream)
    if tape.phi is None:
        return g_s, None
    layers = tape.phi.shape[1]
    g_phi = np.empty_like(tape.phi)
    a = np.einsum("brm,br->bm", np.conj(tape.ms_to_rx), upstream)
    for m in range(layers - 1, -1, -1):
        g_phi[:, m, :] = np.conj(tape.diag_inputs[m]) * a
        a = np.conj(tape.phi[:, m, :]) * a
        if m > 0:
            a = np.einsum("mn,bm->bn", np.conj(tape.xi), a)
    g_s = g_s + np.einsum("btm,bm->bt", tape.tx_to_ms, a)
    return g_s, g_phi


class ForwardTape:
    """Everything one end-to-end forward pass caches for its backward."""

    def __init__(self):
        self.x = None
        self.csi_features = None
        self.s_raw = None
        self.norms = None
        self.s_unit = None
        self.scale = None  # sqrt(p) per sample
        self.power = None  # p per sample
        self.controller_z = None
        self.omega = None
        self.channel: ChannelTape | None = None
        self.y = None
        self.logits = None
        self.single = False
        self.consumed = False


def _draw_noise(spec: ModelSpec, b: int, rng: Rng | None) -> Array:
    if spec.noise_var == 0:
        return np.zeros((b, spec.n_rx), dtype=complex)
    if rng is None:
        raise ValueError("noisy forward pass needs an rng (or an explicit noise array)")
    return sample_complex_gaussian(rng, (b, spec.n_rx), spec.noise_var)


def e2e_forward(
    model: Model,
    x: Array,
    states: ChannelState | list[ChannelState],
    p,
    rng: Rng | None = None,
    noise: Array | None = None,
) -> tuple[Array, ForwardTape]:
    """Full pipeline pass.  Returns class probabilities and the tape.

    ``x`` may be one sample (1-D) or a batch (2-D); ``states`` one
    realization (shared) or one per batch row.  ``p`` is the transmit
    power, scalar or per-sample.  ``noise`` overrides the random draw
    (finite-difference probes freeze it).
    """
    tape = ForwardTape()
    x = np.asarray(x, dtype=float)
    tape.single = x.ndim == 1
    xb = x[None, :] if tape.single else x
    b = xb.shape[0]
    if isinstance(states, ChannelState):
        states = [states] * b
    if len(states) != b:
        raise ValueError(f"{len(states)} channel states for batch of {b}")
    direct, tx_to_ms, ms_to_rx = stack_states(states)

    v = model.variant
    needs_csi = v.aware or v.ms_mode == "controllable"
    csi_features = flatten_csi(direct, tx_to_ms, ms_to_rx) if needs_csi else None
    tape.x = xb
    tape.csi_features = csi_features

    s_raw = encoder_forward(model, xb, csi_features if v.aware else None)
    norms = np.linalg.norm(s_raw, axis=1)
    if np.any(norms < 1e-300):
        bad = int(np.argmin(norms))
        raise ValueError(f"zero-norm transmit vector (sample {bad}) cannot be power normalized")
    p_arr = np.broadcast_to(np.asarray(p, dtype=float), (b,)).copy()
    if np.any(p_arr <= 0):
        raise ValueError("transmit power must be positive")
    scale = np.sqrt(p_arr)
    s_unit = s_raw / norms[:, None]
    s_tx = scale[:, None] * s_unit
    tape.s_raw = s_raw
    tape.norms = norms
    tape.s_unit = s_unit
    tape.scale = scale
    tape.power = p_arr

    phi = None
    if v.uses_cascade:
        spec = model.spec
        if v.ms_mode == "controllable":
            z = model.controller.forward(csi_features)
            omega = 2.0 * np.pi * _sigmoid(z)
            tape.controller_z = z
            phi_flat = np.exp(-1j * omega)
            phi = phi_flat.reshape(b, spec.sim_layers, spec.n_ms)
            tape.omega = omega.reshape(b, spec.sim_layers, spec.n_ms)
        else:
            omega = np.broadcast_to(model.phases.value, (b, spec.sim_layers, spec.n_ms))
            tape.omega = omega
            phi = np.exp(-1j * omega)

    if noise is None:
        noise = _draw_noise(model.spec, b, rng)
    elif noise.shape != (b, model.spec.n_rx):
        raise ValueError(f"noise must be shaped ({b}, {model.spec.n_rx}), got {noise.shape}")
    y, chan_tape = channel_layer_forward(direct, tx_to_ms, ms_to_rx, phi, model.xi, s_tx, noise)
    tape.channel = chan_tape
    tape.y = y

    dec_in = np.concatenate([y.real, y.imag], axis=1)
    if v.aware:
        logits = model.decoder.forward(dec_in, csi_features)
    else:
        logits = model.decoder.forward(dec_in)
    tape.logits = logits
    probs = softmax(logits)
    return (probs[0] if tape.single else probs), tape


def e2e_backward(model: Model, tape: ForwardTape, upstream_logits: Array) -> dict[str, Array]:
    """Accumulate parameter gradients from a logit gradient.

    Returns auxiliary per-sample gradients: "power" holds dL/dp through
    the normalization scale (used by the power-control extension).
    """
    if tape.consumed:
        raise RuntimeError("forward tape already consumed by a backward pass")
    tape.consumed = True
    g_logits = np.asarray(upstream_logits, dtype=float)
    if tape.single and g_logits.ndim == 1:
        g_logits = g_logits[None, :]

    v = model.variant
    n_r = model.spec.n_rx
    g_dec_in = model.decoder.backward(g_logits)
    g_y = g_dec_in[:, :n_r] + 1j * g_dec_in[:, n_r:]

    g_s_tx, g_phi = channel_layer_backward(tape.channel, g_y)

    if g_phi is not None:
        # phi = exp(-j omega): dL/domega = Re(conj(g_phi) * (-j phi)).
        g_omega = np.real(np.conj(g_phi) * (-1j * tape.channel.phi))
        if v.ms_mode == "controllable":
            b = g_omega.shape[0]
            sig = tape.omega.reshape(b, -1) / (2.0 * np.pi)
            g_z = g_omega.reshape(b, -1) * 2.0 * np.pi * sig * (1.0 - sig)
            model.controller.backward(g_z)
        else:
            model.phases.grad += g_omega.sum(axis=0)

    # Power normalization: s_tx = scale * s_raw / ||s_raw||.
    g_s_unit = tape.scale[:, None] * g_s_tx
    g_scale = np.sum(np.real(np.conj(tape.s_unit) * g_s_tx), axis=1)
    inner = np.sum(np.real(np.conj(tape.s_unit) * g_s_unit), axis=1)
    g_s_raw = (g_s_unit - tape.s_unit * inner[:, None]) / tape.norms[:, None]
    g_power = g_scale / (2.0 * tape.scale)

    g_enc_out = np.empty((g_s_raw.shape[0], 2 * g_s_raw.shape[1]))
    g_enc_out[:, 0::2] = g_s_raw.real
    g_enc_out[:, 1::2] = g_s_raw.imag
    model.encoder.backward(g_enc_out)
    return {"power": g_power}


def loss_and_gradients(
    model: Model,
    x: Array,
    targets: Array,
    states,
    p,
    rng: Rng | None = None,
    noise: Array | None = None,
) -> tuple[float, Array, dict[str, Array]]:
    """One fused forward/backward step.  Gradients accumulate into params.

    Returns (mean CE loss, class probabilities, auxiliary gradients).
    """
    probs, tape = e2e_forward(model, x, states, p, rng=rng, noise=noise)
    loss, g_logits = softmax_cross_entropy(tape.logits, targets)
    aux = e2e_backward(model, tape, g_logits)
    return loss, probs, aux


def predict_classes(probs: Array) -> Array:
    return np.argmax(probs, axis=-1)


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return self.history


def train(
    model: Model,
    dataset: Dataset,
    test_set: Dataset,
    pool: ChannelPool,
    optimizer,
    epochs: int,
    p: float,
    rng: Rng,
    batch_size: int = 1,
    seed_label: int | None = None,
) -> TrainResult:
    """Joint training loop: per step, draw a data batch and an independent
    channel realization per sample, run the pipeline, backpropagate the
    analytical gradients, and apply the optimizer.

    Records one history row per epoch: mean loss, training accuracy over
    the epoch's own predictions, test accuracy, and the realized mean
    transmit power.
    """
    if len(dataset) == 0 or epochs < 1:
        raise ValueError("training needs a nonempty dataset and epochs >= 1")
    params = model.parameters()
    onehot = dataset.one_hot_labels()
    seed = rng.seed if seed_label is None else seed_label
    shuffle_rng = rng.child("shuffle")
    noise_rng = rng.child("noise")
    eval_rng = rng.child("eval")
    result = TrainResult()
    global_step = 0
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(len(dataset))
        losses = []
        hits = 0
        power_acc = 0.0
        power_n = 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            xb = dataset.features[idx]
            tb = onehot[idx]
            states = pool.draw_batch(len(idx))
            model.zero_grads()
            probs, tape = e2e_forward(model, xb, states, p, rng=noise_rng)
            loss, g_logits = softmax_cross_entropy(tape.logits, tb)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"loss became non-finite at epoch {epoch}, step {global_step} (batch starting at {start})"
                )
            e2e_backward(model, tape, g_logits)
            optimizer.step(params)
            global_step += 1
            losses.append(loss)
            hits += int(np.sum(predict_classes(probs) == dataset.labels[idx]))
            power_acc += float(np.sum(np.abs(tape.channel.s) ** 2))
            power_n += len(idx)
        test_acc, _ = evaluate(model, test_set, pool, p, eval_rng.child(epoch), repeats=1)
        result.history.append(
            {
                "epoch": epoch,
                "step": global_step,
                "loss": float(np.mean(losses)),
                "train_acc": hits / len(order),
                "test_acc": test_acc,
                "mean_power": power_acc / power_n,
                "seed": seed,
            }
        )
    return result


def evaluate(
    model: Model,
    test_set: Dataset,
    pool: ChannelPool,
    p: float,
    rng: Rng,
    repeats: int = 1,
    batch_size: int = 256,
) -> tuple[float, float]:
    """Classification accuracy under fresh channel/noise draws.

    Returns (mean, std) across ``repeats`` full passes.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    accs = []
    for r in range(repeats):
        pass_rng = rng.child(r)
        hits = 0
        for start in range(0, len(test_set), batch_size):
            xb = test_set.features[start : start + batch_size]
            states = pool.draw_batch(xb.shape[0])
            probs, _ = e2e_forward(model, xb, states, p, rng=pass_rng)
            hits += int(np.sum(predict_classes(probs) == test_set.labels[start : start + batch_size]))
        accs.append(hits / len(test_set))
    return float(np.mean(accs)), float(np.std(accs))
