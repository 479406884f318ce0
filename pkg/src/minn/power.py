"""Adaptive transmit power control over a mobile-receiver channel.

A small policy network maps the receiver position [x, y] to a transmit
power P = min(scale * softplus(z), ceiling).  The scale constant is
1/softplus(0), so a zero-weight net emits exactly 1 W (30 dBm).  The
training objective is the Lagrangian relaxation CE + gamma * mean(P);
gamma trades classification accuracy against emitted power.

Two signal scalings are supported: "amplitude" multiplies the
unit-normalized transmit vector by P itself (emitted power P^2), and
"power" multiplies by sqrt(P) (emitted power P).  Reported power is
always the realized E[||s||^2], whichever scaling is active.

Static metasurface phases are reparametrized through a bounded map so
the trained values stay inside (0, 2pi): omega = 2*arctan(raw) + pi.
The alternative map pi*(arctan(raw) + 1) is available behind a flag;
its range overshoots the phase interval, which is harmless under
exp(-j omega) wrapping but kept non-default.

Training follows a warmup schedule: the policy stays out of the loop
for the first ``warmup`` epochs (default 30) while the rest of the
model trains at a fixed 30 dBm, then the policy enters both passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelState, SystemGeometry, draw_scatterers, sample_saleh_valenzuela, watt_to_dbm
from .data import Dataset
from .nn import Mlp, Param, softmax_cross_entropy
from .numerics import Array, Rng
from .pipeline import Model, TrainResult, e2e_backward, e2e_forward, predict_classes

POWER_SCALE = 1.0 / np.log(2.0)  # 1 W / softplus(0)
DEFAULT_CEILING_WATT = 10.0  # 40 dBm
DEFAULT_P_MAX_WATT = 1.0  # 30 dBm constraint target
SCALING_MODES = ("amplitude", "power")
PHASE_MODES = ("direct", "arctan", "literal")


def softplus(z: Array) -> Array:
    z = np.asarray(z, dtype=float)
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def _sigmoid(z: Array) -> Array:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class PowerPolicy:
    """Position-to-power network with its objective constants."""

    net: Mlp
    gamma: float = 0.0
    p_max_watt: float = DEFAULT_P_MAX_WATT
    ceiling_watt: float = DEFAULT_CEILING_WATT
    scaling: str = "amplitude"
    trainable: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.scaling not in SCALING_MODES:
            raise ValueError(f"scaling must be one of {SCALING_MODES}, got {self.scaling!r}")
        if self.ceiling_watt <= 0 or self.p_max_watt <= 0:
            raise ValueError("power targets must be positive")
        if self.net.out_dim != 1:
            raise ValueError("power net must emit one scalar")
        if self.net.in_dim != 2:
            raise ValueError("power net reads a 2-D position")

    def parameters(self) -> list[Param]:
        return self.net.parameters()


def build_policy(rng: Rng, hidden: tuple[int, ...] = (16,), **kwargs) -> PowerPolicy:
    net = Mlp([2, *hidden, 1], rng.child("power"), name="power")
    return PowerPolicy(net=net, **kwargs)


def make_constant_policy(rng: Rng, power_watt: float, hidden: tuple[int, ...] = (16,), **kwargs) -> PowerPolicy:
    """Frozen policy emitting the same power at every position.

    Used for fixed-power baselines matched to an adaptive run's budget.
    All weights are zeroed and the output bias is set so the softplus
    head reproduces ``power_watt`` exactly (below the ceiling).
    """
    kwargs.setdefault("trainable", False)
    policy = build_policy(rng, hidden=hidden, **kwargs)
    if not 0.0 < power_watt < policy.ceiling_watt:
        raise ValueError(f"constant power must lie in (0, ceiling), got {power_watt}")
    for q in policy.parameters():
        q.value[...] = 0.0
    # softplus(z) = log1p(exp(z)); solve POWER_SCALE * softplus(z) = p.
    policy.net.layers[-1].bias.value[...] = np.log(np.expm1(power_watt / POWER_SCALE))
    return policy


def power_net_forward(policy: PowerPolicy, position: Array) -> Array:
    """Strictly positive transmit power for one position or a batch."""
    position = np.asarray(position, dtype=float)
    single = position.ndim == 1
    pos2 = position[None, :] if single else position
    z = policy.net.forward(pos2)[:, 0]
    p = np.minimum(POWER_SCALE * softplus(z), policy.ceiling_watt)
    return float(p[0]) if single else p


def _power_forward_cached(policy: PowerPolicy, positions: Array) -> tuple[Array, Array, Array]:
    """Batch power with the intermediates the backward pass needs."""
    z = policy.net.forward(positions)[:, 0]
    raw_p = POWER_SCALE * softplus(z)
    capped = raw_p >= policy.ceiling_watt
    p = np.where(capped, policy.ceiling_watt, raw_p)
    return p, z, capped


def power_net_backward(policy: PowerPolicy, z: Array, capped: Array, g_p: Array) -> None:
    """Accumulate dL/dw_p from per-sample power gradients."""
    g_z = np.where(capped, 0.0, g_p * POWER_SCALE * _sigmoid(z))
    policy.net.backward(g_z[:, None])


def lagrangian_loss(ce: float, p: float, gamma: float) -> float:
    """Relaxed objective: cross-entropy plus gamma times emitted power.

    The gradient with respect to p is exactly gamma.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    return ce + gamma * p


def phase_constraint(omega_raw: Array, mode: str = "arctan") -> Array:
    """Map unconstrained reals into the phase interval.

    "arctan" lands strictly inside (0, 2pi); "literal" applies
    pi*(arctan(x)+1), whose range overshoots the interval; "direct" is
    the identity.
    """
    omega_raw = np.asarray(omega_raw, dtype=float)
    if mode == "arctan":
        return 2.0 * np.arctan(omega_raw) + np.pi
    if mode == "literal":
        return np.pi * (np.arctan(omega_raw) + 1.0)
    if mode == "direct":
        return omega_raw
    raise ValueError(f"phase mode must be one of {PHASE_MODES}, got {mode!r}")


def phase_constraint_derivative(omega_raw: Array, mode: str = "arctan") -> Array:
    omega_raw = np.asarray(omega_raw, dtype=float)
    if mode == "arctan":
        return 2.0 / (1.0 + omega_raw**2)
    if mode == "literal":
        return np.pi / (1.0 + omega_raw**2)
    if mode == "direct":
        return np.ones_like(omega_raw)
    raise ValueError(f"phase mode must be one of {PHASE_MODES}, got {mode!r}")


def phase_constraint_inverse(omega: Array, mode: str = "arctan") -> Array:
    omega = np.asarray(omega, dtype=float)
    if mode == "arctan":
        clipped = np.clip(omega, 1e-9, 2.0 * np.pi - 1e-9)
        return np.tan((clipped - np.pi) / 2.0)
    if mode == "literal":
        clipped = np.clip(omega, 1e-9, 2.0 * np.pi - 1e-9)
        return np.tan(clipped / np.pi - 1.0)
    if mode == "direct":
        return omega.copy()
    raise ValueError(f"phase mode must be one of {PHASE_MODES}, got {mode!r}")


class MobileSvPool:
    """Geometric channel pool for a receiver moving inside an arena.

    Scatterer positions and path gains are frozen at construction, so
    the channel triple is a deterministic function of the receiver
    position; only the position is random per draw.  The TX-MS link
    never changes, the direct and MS-RX links move with the receiver.
    """

    def __init__(
        self,
        geom: SystemGeometry,
        n_scatterers: int,
        arena: tuple[tuple[float, float], tuple[float, float]],
        rng: Rng,
    ):
        (x0, x1), (y0, y1) = arena
        if x1 <= x0 or y1 <= y0:
            raise ValueError("arena bounds must be a proper rectangle")
        self.geom = geom
        self.n_scatterers = n_scatterers
        self.arena = arena
        self._scatterers = draw_scatterers(geom, n_scatterers, rng.child("scatterers"))
        self._gain_seed_rng = rng.child("gains")
        self._position_rng = rng.child("positions")

    def state_at(self, position) -> ChannelState:
        # Restarting the gain stream keeps the gains identical across
        # calls; the state depends only on the position.
        gains_rng = self._gain_seed_rng.clone()
        return sample_saleh_valenzuela(
            self.geom,
            self.n_scatterers,
            gains_rng,
            scatterers=self._scatterers,
            rx_position=tuple(position),
        )

    def draw(self) -> tuple[ChannelState, Array]:
        (x0, x1), (y0, y1) = self.arena
        pos = np.array([self._position_rng.uniform(x0, x1), self._position_rng.uniform(y0, y1)])
        return self.state_at(pos), pos

    def draw_batch(self, count: int) -> tuple[list[ChannelState], Array]:
        states = []
        positions = np.empty((count, 2))
        for i in range(count):
            st, pos = self.draw()
            states.append(st)
            positions[i] = pos
        return states, positions


class _PlainPoolAdapter:
    """Presents a MobileSvPool as a position-free channel pool."""

    def __init__(self, mobile: MobileSvPool):
        self.mobile = mobile
        self.mode = "dynamic"

    def draw(self) -> ChannelState:
        return self.mobile.draw()[0]

    def draw_batch(self, count: int) -> list[ChannelState]:
        return self.mobile.draw_batch(count)[0]


def as_channel_pool(mobile: MobileSvPool) -> _PlainPoolAdapter:
    return _PlainPoolAdapter(mobile)


class _PhaseReparam:
    """Bounded reparametrization of a model's static phases."""

    def __init__(self, model: Model, mode: str):
        self.mode = mode
        self.model = model
        self.active = model.phases is not None and mode != "direct"
        if self.active:
            self.raw = Param("phases.raw", phase_constraint_inverse(model.phases.value, mode))
        else:
            self.raw = None

    def sync_forward(self) -> None:
        if self.active:
            self.model.phases.value[...] = phase_constraint(self.raw.value, self.mode)

    def pull_gradient(self) -> None:
        if self.active:
            self.raw.grad += self.model.phases.grad * phase_constraint_derivative(self.raw.value, self.mode)
            self.model.phases.zero_grad()

    def trained_parameters(self, params: list[Param]) -> list[Param]:
        if not self.active:
            return params
        out = [q for q in params if q is not self.model.phases]
        out.append(self.raw)
        return out


def phase_reparam(model: Model, mode: str = "direct") -> "_PhaseReparam":
    """Reparametrization handle for the evaluation helpers.  Mode
    ``direct`` is a no-op wrapper around the trained phases."""
    return _PhaseReparam(model, mode)


def power_step(
    model: Model,
    policy: PowerPolicy,
    reparam: _PhaseReparam,
    x: Array,
    targets: Array,
    states: list[ChannelState],
    positions: Array,
    rng: Rng | None = None,
    noise: Array | None = None,
    fixed_power: float | None = None,
) -> dict:
    """One fused forward/backward pass of the Lagrangian objective.

    ``fixed_power`` bypasses the policy (warmup and baselines); gradients
    then stop at the normalization scale.  Returns the step diagnostics.
    """
    reparam.sync_forward()
    if fixed_power is not None:
        p_net = np.full(x.shape[0], float(fixed_power))
        z = capped = None
    else:
        p_net, z, capped = _power_forward_cached(policy, positions)
    if policy.scaling == "amplitude":
        p_eff = p_net**2
    else:
        p_eff = p_net
    probs, tape = e2e_forward(model, x, states, p_eff, rng=rng, noise=noise)
    ce, g_logits = softmax_cross_entropy(tape.logits, targets)
    batch = x.shape[0]
    mean_p_net = float(np.mean(p_net))
    objective = lagrangian_loss(ce, mean_p_net, policy.gamma)
    aux = e2e_backward(model, tape, g_logits)
    reparam.pull_gradient()
    if fixed_power is None and policy.trainable:
        g_p = policy.gamma / batch + aux["power"] * (2.0 * p_net if policy.scaling == "amplitude" else 1.0)
        power_net_backward(policy, z, capped, g_p)
    emitted_sum = float(np.sum(np.abs(tape.channel.s) ** 2))
    return {
        "ce": ce,
        "objective": objective,
        "probs": probs,
        "mean_power_net": mean_p_net,
        "emitted_sum": emitted_sum,
        "mean_emitted": emitted_sum / batch,
    }


def evaluate_mobile(
    model: Model,
    policy: PowerPolicy,
    reparam: _PhaseReparam,
    test_set: Dataset,
    pool: MobileSvPool,
    rng: Rng,
    fixed_power: float | None = None,
    batch_size: int = 256,
) -> tuple[float, float]:
    """Accuracy and realized mean emitted power over the mobile channel."""
    reparam.sync_forward()
    pass_rng = rng.child(0)
    hits = 0
    emitted_acc = 0.0
    for start in range(0, len(test_set), batch_size):
        xb = test_set.features[start : start + batch_size]
        states, positions = pool.draw_batch(xb.shape[0])
        if fixed_power is not None:
            p_net = np.full(xb.shape[0], float(fixed_power))
        else:
            p_net = _power_forward_cached(policy, positions)[0]
        p_eff = p_net**2 if policy.scaling == "amplitude" else p_net
        probs, tape = e2e_forward(model, xb, states, p_eff, rng=pass_rng)
        hits += int(np.sum(predict_classes(probs) == test_set.labels[start : start + batch_size]))
        emitted_acc += float(np.sum(np.abs(tape.channel.s) ** 2))
    return hits / len(test_set), emitted_acc / len(test_set)


def scheduled_train(
    model: Model,
    policy: PowerPolicy,
    dataset: Dataset,
    test_set: Dataset,
    pool: MobileSvPool,
    optimizer,
    epochs: int,
    rng: Rng,
    warmup: int = 30,
    batch_size: int = 1,
    phase_mode: str = "arctan",
    warmup_power: float = 1.0,
    seed_label: int | None = None,
) -> TrainResult:
    """Warmup-then-adapt training over the mobile channel.

    Epochs 1..warmup run at the fixed warmup power (30 dBm by default)
    with the policy net out of both passes; afterwards the policy's
    per-position power enters the forward scaling and receives
    gradients.  The recorded loss is the cross-entropy component; the
    optimized objective adds gamma * mean(P).  History rows extend the
    plain training columns with gamma, mean power in dBm, and whether
    the realized mean power meets the constraint target.
    """
    if warmup > epochs:
        raise ValueError(f"warmup ({warmup}) cannot exceed epochs ({epochs})")
    if len(dataset) == 0 or epochs < 1:
        raise ValueError("training needs a nonempty dataset and epochs >= 1")
    reparam = _PhaseReparam(model, phase_mode)
    model_params = reparam.trained_parameters(model.parameters())
    onehot = dataset.one_hot_labels()
    seed = rng.seed if seed_label is None else seed_label
    shuffle_rng = rng.child("shuffle")
    noise_rng = rng.child("noise")
    eval_rng = rng.child("eval")
    result = TrainResult()
    global_step = 0
    for epoch in range(1, epochs + 1):
        in_warmup = epoch <= warmup
        order = shuffle_rng.permutation(len(dataset))
        ce_losses = []
        hits = 0
        emitted_acc = 0.0
        emitted_n = 0
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            states, positions = pool.draw_batch(len(idx))
            model.zero_grads()
            for q in policy.parameters():
                q.zero_grad()
            step = power_step(
                model,
                policy,
                reparam,
                dataset.features[idx],
                onehot[idx],
                states,
                positions,
                rng=noise_rng,
                fixed_power=warmup_power if in_warmup else None,
            )
            if not np.isfinite(step["ce"]):
                raise FloatingPointError(
                    f"loss became non-finite at epoch {epoch}, step {global_step} (batch starting at {start})"
                )
            trained = model_params if in_warmup or not policy.trainable else model_params + policy.parameters()
            optimizer.step(trained)
            global_step += 1
            ce_losses.append(step["ce"])
            hits += int(np.sum(predict_classes(step["probs"]) == dataset.labels[idx]))
            emitted_acc += step["emitted_sum"]
            emitted_n += len(idx)
        test_acc, _ = evaluate_mobile(
            model,
            policy,
            reparam,
            test_set,
            pool,
            eval_rng.child(epoch),
            fixed_power=warmup_power if in_warmup else None,
        )
        mean_power = emitted_acc / emitted_n
        result.history.append(
            {
                "epoch": epoch,
                "step": global_step,
                "loss": float(np.mean(ce_losses)),
                "train_acc": hits / len(order),
                "test_acc": test_acc,
                "mean_power": mean_power,
                "seed": seed,
                "gamma": policy.gamma,
                "mean_power_dbm": watt_to_dbm(mean_power),
                "constraint_satisfied": int(mean_power <= policy.p_max_watt),
            }
        )
    return result
