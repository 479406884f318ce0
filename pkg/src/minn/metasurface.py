"""RIS and stacked-metasurface forward models.

A reconfigurable intelligent surface (RIS) acts on the cascaded channel
as diag(exp(-j omega)) with one tunable phase per element.  A stacked
intelligent metasurface (SIM) is M such layers coupled by free-space
Rayleigh-Sommerfeld diffraction: consecutive layers a distance d_M apart
(measured in carrier wavelengths) couple through the matrix

    Xi[n, n'] = (d_M * S_M / d^2) * (1/(2 pi d) - j) * exp(j 2 pi d)

where d is the 3-D distance between element n of one layer and element
n' of the previous and S_M is the element area in squared wavelengths.
All distances here are expressed in wavelengths, which makes the
exp(j 2 pi d) phase term dimensionally consistent.

The overall SIM response is the cascade

    diag(phi_M) Xi_M ... diag(phi_2) Xi_2 diag(phi_1),

reducing to the RIS diagonal for M=1.  The same cascade doubles as a
standalone wave-domain classifier (D2NN): the input is phase-encoded on
layer 1, a unit beacon illuminates the stack, and the class is read off
as the receptor with maximal received energy one diffraction hop behind
the final layer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import Array

MIN_RECOMMENDED_SPACING = 5.0


@dataclass(frozen=True)
class SimGeometry:
    """Physical layout of a SIM: M stacked copies of one rectangular grid.

    Lengths are in carrier wavelengths.  The defaults follow the usual
    half-wavelength element pitch (element area 1/4) and the d_M >= 5
    rule of thumb for the validity of the diffraction model.
    """

    layers: int
    grid: tuple[int, int]
    pitch: float = 0.5
    element_area: float = 0.25
    spacing: float = 5.0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError(f"layer count must be >= 1, got {self.layers}")
        if self.grid[0] < 1 or self.grid[1] < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.grid}")
        if self.spacing <= 0:
            raise ValueError(f"layer spacing must be positive, got {self.spacing}")
        if self.spacing < MIN_RECOMMENDED_SPACING:
            warnings.warn(
                f"layer spacing {self.spacing} wavelengths is below the recommended "
                f"minimum of {MIN_RECOMMENDED_SPACING}; the diffraction model degrades "
                "when elements are not small relative to the layer distance",
                stacklevel=2,
            )

    @property
    def n_elements(self) -> int:
        return self.grid[0] * self.grid[1]

    def element_positions(self) -> Array:
        """Transverse (x, y) element coordinates, grid-centered, row-major."""
        rows, cols = self.grid
        ys = (np.arange(rows) - (rows - 1) / 2.0) * self.pitch
        xs = (np.arange(cols) - (cols - 1) / 2.0) * self.pitch
        gy, gx = np.meshgrid(ys, xs, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel()], axis=1)


def square_geometry(layers: int, n_elements: int, spacing: float = 5.0, pitch: float = 0.5) -> SimGeometry:
    """Geometry with a square grid; n_elements must be a perfect square."""
    side = round(float(np.sqrt(n_elements)))
    if side * side != n_elements:
        raise ValueError(f"{n_elements} elements do not form a square grid")
    return SimGeometry(layers=layers, grid=(side, side), pitch=pitch, spacing=spacing)


def response_from_phase(omega: Array) -> Array:
    """Idealized unit-amplitude element response exp(-j omega)."""
    return np.exp(-1j * np.asarray(omega, dtype=float))


def diffraction_matrix(geom: SimGeometry) -> Array:
    """Rayleigh-Sommerfeld coupling between two consecutive layers.

    Entry (n, n') couples element n' of the earlier layer to element n of
    the later one.  Layers share one grid, so the matrix is the same for
    every consecutive pair and is computed once per geometry.
    """
    pos = geom.element_positions()
    diff = pos[:, None, :] - pos[None, :, :]
    dist = np.sqrt(geom.spacing**2 + np.sum(diff**2, axis=2))
    if np.any(dist <= 0):
        raise ValueError("degenerate geometry: zero inter-element distance")
    radial = geom.spacing * geom.element_area / dist**2
    return radial * (1.0 / (2.0 * np.pi * dist) - 1j) * np.exp(1j * 2.0 * np.pi * dist)


@dataclass
class SimConfig:
    """A SIM geometry with its per-layer phases and cached diffraction matrix."""

    geometry: SimGeometry
    phases: Array  # (layers, n_elements)
    xi: Array = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self):
        self.phases = np.asarray(self.phases, dtype=float)
        expected = (self.geometry.layers, self.geometry.n_elements)
        if self.phases.shape != expected:
            raise ValueError(f"phases shape {self.phases.shape} != layers x elements {expected}")
        if self.xi is None:
            self.xi = diffraction_matrix(self.geometry)


def cascade_matrix(xi: Array, phases: Array) -> Array:
    """Full SIM response diag(phi_M) Xi ... diag(phi_2) Xi diag(phi_1).

    ``phases`` has one row per layer; a single row yields the plain RIS
    diagonal (the diffraction matrix never enters).
    """
    phases = np.atleast_2d(np.asarray(phases, dtype=float))
    phi = response_from_phase(phases)
    out = np.diag(phi[0])
    for m in range(1, phases.shape[0]):
        out = (phi[m][:, None] * xi) @ out
    return out


def apply_cascade(xi: Array, phases: Array, x: Array) -> Array:
    """Cascade applied to a vector layer by layer (diag, then diffraction)."""
    phases = np.atleast_2d(np.asarray(phases, dtype=float))
    phi = response_from_phase(phases)
    z = phi[0] * np.asarray(x)
    for m in range(1, phases.shape[0]):
        z = phi[m] * (xi @ z)
    return z


def sim_cascade(cfg: SimConfig) -> Array:
    return cascade_matrix(cfg.xi, cfg.phases)


def phase_encode(values: Array) -> Array:
    """Input map for wave-domain classification: value v in [0,1] -> phase 2 pi v."""
    return 2.0 * np.pi * np.asarray(values, dtype=float)


def d2nn_classify(cfg: SimConfig, input_phases: Array, readout_count: int, beacon_amplitude: float = 1.0) -> int:
    """Wave-domain max-energy classification.

    Layer 1's phases are replaced by ``input_phases``, a uniform beacon of
    the given amplitude illuminates the stack, and the field propagates one
    further diffraction hop onto a readout plane that mirrors the layer
    grid.  The class is the receptor with the highest received energy among
    the first ``readout_count`` readout elements; exact ties resolve to the
    lowest index.
    """
    input_phases = np.asarray(input_phases, dtype=float)
    n = cfg.geometry.n_elements
    if input_phases.shape != (n,):
        raise ValueError(f"input phases must have length {n}")
    if not 1 <= readout_count <= n:
        raise ValueError(f"readout_count must be in 1..{n}")
    if beacon_amplitude <= 0:
        raise ValueError("beacon amplitude must be positive")
    phases = cfg.phases.copy()
    phases[0] = input_phases
    beacon = np.full(n, float(beacon_amplitude), dtype=complex)
    field_at_readout = cfg.xi @ apply_cascade(cfg.xi, phases, beacon)
    energy = np.abs(field_at_readout[:readout_count]) ** 2
    return int(np.argmax(energy))


PHASE_PROFILE_MAGIC = "minn-phase-profile-v1"


def save_phase_profile(path, phases: Array) -> None:
    """Write per-layer phases as text, one radian value per line.

    Values are written with repr-level precision so a reload is bitwise
    identical, which is what a manufactured static deployment needs.
    """
    phases = np.atleast_2d(np.asarray(phases, dtype=float))
    layers, n = phases.shape
    lines = [f"# {PHASE_PROFILE_MAGIC} layers={layers} elements={n}"]
    lines.extend(repr(float(v)) for v in phases.ravel())
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_phase_profile(path) -> Array:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().strip()
        if PHASE_PROFILE_MAGIC not in header:
            raise ValueError(f"not a phase profile: header {header!r}")
        fields = dict(part.split("=") for part in header.split() if "=" in part)
        layers, n = int(fields["layers"]), int(fields["elements"])
        values = np.array([float(line) for line in fh if line.strip()], dtype=float)
    if values.size != layers * n:
        raise ValueError(f"expected {layers * n} phases, found {values.size}")
    return values.reshape(layers, n)
