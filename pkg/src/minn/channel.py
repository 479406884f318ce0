"""Stochastic MIMO channel generation and the transmission function.

The link model is the standard programmable-channel triple: a direct
TX-RX matrix H_D (N_r x N_t), a TX-to-metasurface matrix H_1
(N_t x N_m), and a metasurface-to-RX matrix H_2 (N_r x N_m).  With a
metasurface response matrix Phi the received baseband signal is

    y = (H_D + H_2 Phi H_1^H) s + n,    n ~ CN(0, noise_var I).

Two fading generators are provided: Ricean (deterministic line-of-sight
steering outer product plus scattered CN(0,1) part, normalized so every
entry has unit average power) and the Saleh-Valenzuela geometric model
(a sum of scatterer paths, each a complex gain times RX/TX array
steering).  Large-scale pathloss is a free-space 1/distance amplitude
scalar per link, baked into the sampled matrices.  Antenna arrays are
uniform linear with half-wavelength spacing, oriented along the y axis.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .numerics import Array, Rng, sample_complex_gaussian


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    if x <= 0:
        raise ValueError(f"cannot express nonpositive value {x} in dB")
    return 10.0 * np.log10(x)


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def watt_to_dbm(watt: float) -> float:
    if watt <= 0:
        raise ValueError(f"cannot express nonpositive power {watt} in dBm")
    return 10.0 * np.log10(watt) + 30.0


def snr_db(p: float, noise_var: float) -> float:
    """Transmit SNR in dB for transmit power p and noise variance."""
    if p <= 0 or noise_var <= 0:
        raise ValueError("snr_db needs positive power and noise variance")
    return 10.0 * np.log10(p / noise_var)


@dataclass(frozen=True)
class ChannelState:
    """CSI triple for one coherence frame."""

    direct: Array  # (N_r, N_t)
    tx_to_ms: Array  # (N_t, N_m)
    ms_to_rx: Array  # (N_r, N_m)

    def __post_init__(self):
        n_r, n_t = self.direct.shape
        if self.tx_to_ms.shape[0] != n_t or self.ms_to_rx.shape[0] != n_r:
            raise ValueError("inconsistent channel dimensions")
        if self.tx_to_ms.shape[1] != self.ms_to_rx.shape[1]:
            raise ValueError("metasurface element count differs between links")

    @property
    def dims(self) -> tuple[int, int, int]:
        n_r, n_t = self.direct.shape
        return n_r, n_t, self.tx_to_ms.shape[1]


def ula_steering(n: int, cos_angle: float) -> Array:
    """Steering vector of an n-element half-wavelength-spaced linear array."""
    return np.exp(-1j * np.pi * np.arange(n) * cos_angle)


def _direction_cosine(src: Array, dst: Array) -> float:
    """Projection of the unit src->dst direction on the array axis (y)."""
    d = np.asarray(dst, dtype=float) - np.asarray(src, dtype=float)
    norm = float(np.linalg.norm(d))
    if norm == 0:
        raise ValueError("coincident nodes have no propagation direction")
    return float(d[1] / norm)


def sample_ricean(
    k_factor_db: float,
    shape: tuple[int, int],
    rng: Rng,
    cos_row_side: float = 0.3,
    cos_col_side: float = -0.2,
) -> Array:
    """Ricean fading matrix with E[|H_ij|^2] = 1 for every K.

    H = sqrt(K/(K+1)) H_LoS + sqrt(1/(K+1)) H_NLoS with K linear from dB.
    The LoS part is the deterministic unit-modulus outer product of the
    steering vectors seen at the row-side and column-side arrays.
    """
    rows, cols = shape
    if rows < 1 or cols < 1:
        raise ValueError(f"invalid channel shape {shape}")
    k = db_to_linear(k_factor_db)
    los = np.outer(ula_steering(rows, cos_row_side), np.conj(ula_steering(cols, cos_col_side)))
    nlos = sample_complex_gaussian(rng, shape, variance=1.0)
    return np.sqrt(k / (k + 1.0)) * los + np.sqrt(1.0 / (k + 1.0)) * nlos


@dataclass(frozen=True)
class SystemGeometry:
    """Node layout and antenna counts behind the geometric channel models.

    Positions are (x, y) in meters.  ``scatterer_bounds`` is the
    ((x_min, x_max), (y_min, y_max)) rectangle scatterers are drawn from.
    """

    n_tx: int
    n_rx: int
    n_ms: int
    tx_position: tuple[float, float]
    rx_position: tuple[float, float]
    ms_position: tuple[float, float]
    wavelength: float = 0.1
    scatterer_bounds: tuple[tuple[float, float], tuple[float, float]] | None = None

    def __post_init__(self):
        if min(self.n_tx, self.n_rx, self.n_ms) < 1:
            raise ValueError("antenna/element counts must be >= 1")
        if self.wavelength <= 0:
            raise ValueError("wavelength must be positive")

    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        if self.scatterer_bounds is not None:
            return self.scatterer_bounds
        xs = [self.tx_position[0], self.rx_position[0], self.ms_position[0]]
        ys = [self.tx_position[1], self.rx_position[1], self.ms_position[1]]
        margin = 2.0
        return ((min(xs) - margin, max(xs) + margin), (min(ys) - margin, max(ys) + margin))

    def pathloss(self, a: tuple[float, float], b: tuple[float, float]) -> float:
        """Free-space 1/d amplitude scaling between two nodes."""
        d = float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))
        if d <= 0:
            raise ValueError("coincident nodes give an unbounded pathloss scalar")
        return 1.0 / d


def draw_scatterers(geom: SystemGeometry, n_scatterers: int, rng: Rng) -> Array:
    (x0, x1), (y0, y1) = geom.bounds()
    xs = rng.uniform(x0, x1, n_scatterers)
    ys = rng.uniform(y0, y1, n_scatterers)
    return np.stack([xs, ys], axis=1)


def _sv_link(
    shape: tuple[int, int],
    row_node: tuple[float, float],
    col_node: tuple[float, float],
    scatterers: Array,
    gains: Array,
    pathloss: float,
) -> Array:
    """One Saleh-Valenzuela link: sum over scatterer paths of
    gain * steering(row side) * steering(col side)^H, scaled by pathloss."""
    rows, cols = shape
    h = np.zeros(shape, dtype=complex)
    for p in range(scatterers.shape[0]):
        a_row = ula_steering(rows, _direction_cosine(row_node, scatterers[p]))
        a_col = ula_steering(cols, _direction_cosine(col_node, scatterers[p]))
        h += gains[p] * np.outer(a_row, np.conj(a_col))
    return pathloss * h


def sample_saleh_valenzuela(
    geom: SystemGeometry,
    n_scatterers: int,
    rng: Rng,
    scatterers: Array | None = None,
    rx_position: tuple[float, float] | None = None,
) -> ChannelState:
    """Draw all three links through a shared set of scatterer positions.

    Path gains are CN(0, 1/n_scatterers) independently per link.  Passing
    ``scatterers`` freezes the geometry (static regime); ``rx_position``
    overrides the geometry's RX node (mobile-receiver experiments).
    """
    if n_scatterers < 1:
        raise ValueError("need at least one scatterer")
    if scatterers is None:
        scatterers = draw_scatterers(geom, n_scatterers, rng)
    rx = tuple(rx_position) if rx_position is not None else geom.rx_position
    gain_var = 1.0 / n_scatterers
    g_direct = sample_complex_gaussian(rng, n_scatterers, gain_var)
    g_tx_ms = sample_complex_gaussian(rng, n_scatterers, gain_var)
    g_ms_rx = sample_complex_gaussian(rng, n_scatterers, gain_var)
    direct = _sv_link(
        (geom.n_rx, geom.n_tx), rx, geom.tx_position, scatterers, g_direct, geom.pathloss(geom.tx_position, rx)
    )
    tx_to_ms = _sv_link(
        (geom.n_tx, geom.n_ms),
        geom.tx_position,
        geom.ms_position,
        scatterers,
        g_tx_ms,
        geom.pathloss(geom.tx_position, geom.ms_position),
    )
    ms_to_rx = _sv_link(
        (geom.n_rx, geom.n_ms), rx, geom.ms_position, scatterers, g_ms_rx, geom.pathloss(geom.ms_position, rx)
    )
    return ChannelState(direct=direct, tx_to_ms=tx_to_ms, ms_to_rx=ms_to_rx)


def sample_ricean_state(
    geom: SystemGeometry,
    k_factors_db: tuple[float, float, float],
    rng: Rng,
) -> ChannelState:
    """Ricean CSI triple with per-link K-factors (TX-MS, MS-RX, TX-RX).

    LoS steering angles come from the node geometry; each link is scaled
    by its free-space pathloss.
    """
    k_tx_ms, k_ms_rx, k_direct = k_factors_db
    tx, rx, ms = geom.tx_position, geom.rx_position, geom.ms_position
    direct = geom.pathloss(tx, rx) * sample_ricean(
        k_direct,
        (geom.n_rx, geom.n_tx),
        rng,
        cos_row_side=_direction_cosine(rx, tx),
        cos_col_side=_direction_cosine(tx, rx),
    )
    tx_to_ms = geom.pathloss(tx, ms) * sample_ricean(
        k_tx_ms,
        (geom.n_tx, geom.n_ms),
        rng,
        cos_row_side=_direction_cosine(tx, ms),
        cos_col_side=_direction_cosine(ms, tx),
    )
    ms_to_rx = geom.pathloss(ms, rx) * sample_ricean(
        k_ms_rx,
        (geom.n_rx, geom.n_ms),
        rng,
        cos_row_side=_direction_cosine(rx, ms),
        cos_col_side=_direction_cosine(ms, rx),
    )
    return ChannelState(direct=direct, tx_to_ms=tx_to_ms, ms_to_rx=ms_to_rx)


def transmit(state: ChannelState, phi_effect: Array | None, s: Array, noise_var: float, rng: Rng | None) -> Array:
    """y = (H_D + H_2 Phi H_1^H) s + n.  ``phi_effect=None`` drops the
    cascaded path entirely (no-metasurface baseline)."""
    s = np.asarray(s)
    n_r, n_t, n_m = state.dims
    if s.shape != (n_t,):
        raise ValueError(f"transmit vector must have length {n_t}, got {s.shape}")
    effective = state.direct
    if phi_effect is not None:
        if phi_effect.shape != (n_m, n_m):
            raise ValueError(f"metasurface effect must be {n_m}x{n_m}, got {phi_effect.shape}")
        effective = effective + state.ms_to_rx @ phi_effect @ state.tx_to_ms.conj().T
    y = effective @ s
    if noise_var > 0:
        if rng is None:
            raise ValueError("noise draw requires an rng")
        y = y + sample_complex_gaussian(rng, n_r, noise_var)
    return y


class ChannelPool:
    """An ordered collection of CSI draws with a sampling mode.

    static      one realization, reused on every draw
    dynamic     a fresh realization per draw, from the sampler
    replay      cycles deterministically through a stored list
    """

    def __init__(self, mode: str, states: list[ChannelState] | None = None, sampler=None, rng: Rng | None = None):
        if mode not in ("static", "dynamic", "replay"):
            raise ValueError(f"unknown pool mode {mode!r}")
        self.mode = mode
        self._cursor = 0
        if mode == "static":
            if sampler is not None and states is None:
                if rng is None:
                    raise ValueError("static pool construction from a sampler needs an rng")
                states = [sampler(rng)]
            if states is None or len(states) != 1:
                raise ValueError("static pool holds exactly one realization")
            self.states = list(states)
            self._sampler = None
            self._rng = None
        elif mode == "dynamic":
            if sampler is None or rng is None:
                raise ValueError("dynamic pool needs a sampler and an rng")
            self.states = []
            self._sampler = sampler
            self._rng = rng
        else:
            if not states:
                raise ValueError("replay pool needs a nonempty state list")
            self.states = list(states)
            self._sampler = None
            self._rng = None

    def draw(self) -> ChannelState:
        if self.mode == "static":
            return self.states[0]
        if self.mode == "dynamic":
            return self._sampler(self._rng)
        state = self.states[self._cursor % len(self.states)]
        self._cursor += 1
        return state

    def draw_batch(self, count: int) -> list[ChannelState]:
        if self.mode == "static":
            return [self.states[0]] * count
        return [self.draw() for _ in range(count)]


POOL_MAGIC = "minn-channel-pool-v1"


def save_pool_states(path, states: list[ChannelState]) -> None:
    """Binary export: text header with dims and count, then interleaved
    (re, im) little-endian float64 entries per state in link order."""
    if not states:
        raise ValueError("nothing to export")
    n_r, n_t, n_m = states[0].dims
    header = f"{POOL_MAGIC} count={len(states)} n_r={n_r} n_t={n_t} n_m={n_m}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for st in states:
            if st.dims != (n_r, n_t, n_m):
                raise ValueError("all pool states must share dimensions")
            for mat in (st.direct, st.tx_to_ms, st.ms_to_rx):
                inter = np.empty(mat.size * 2, dtype="<f8")
                inter[0::2] = mat.real.ravel()
                inter[1::2] = mat.imag.ravel()
                fh.write(inter.tobytes())


def load_pool_states(path) -> list[ChannelState]:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if not header.startswith(POOL_MAGIC):
            raise ValueError(f"not a channel pool file: header {header!r}")
        fields = dict(part.split("=") for part in header.split() if "=" in part)
        count = int(fields["count"])
        n_r, n_t, n_m = int(fields["n_r"]), int(fields["n_t"]), int(fields["n_m"])
        states = []
        for _ in range(count):
            mats = []
            for shape in ((n_r, n_t), (n_t, n_m), (n_r, n_m)):
                n_vals = shape[0] * shape[1] * 2
                raw = fh.read(8 * n_vals)
                if len(raw) != 8 * n_vals:
                    raise ValueError("truncated channel pool file")
                inter = np.frombuffer(raw, dtype="<f8")
                mats.append((inter[0::2] + 1j * inter[1::2]).reshape(shape))
            states.append(ChannelState(*mats))
    return states


def stack_states(states: list[ChannelState]) -> tuple[Array, Array, Array]:
    """Stack a batch of CSI triples along a leading axis for vectorized math."""
    direct = np.stack([s.direct for s in states])
    tx_to_ms = np.stack([s.tx_to_ms for s in states])
    ms_to_rx = np.stack([s.ms_to_rx for s in states])
    return direct, tx_to_ms, ms_to_rx


def flatten_csi(direct: Array, tx_to_ms: Array, ms_to_rx: Array) -> Array:
    """Real feature vector per batch element: re/im of all three links."""
    b = direct.shape[0]
    parts = []
    for mat in (direct, tx_to_ms, ms_to_rx):
        parts.append(mat.real.reshape(b, -1))
        parts.append(mat.imag.reshape(b, -1))
    return np.concatenate(parts, axis=1)


def csi_feature_dim(n_r: int, n_t: int, n_m: int) -> int:
    return 2 * (n_r * n_t + n_t * n_m + n_r * n_m)


def with_rx_position(geom: SystemGeometry, rx_position: tuple[float, float]) -> SystemGeometry:
    return replace(geom, rx_position=tuple(rx_position))
