"""Regular-grid fields and the convolution machinery built on them.

Conventions used throughout the package:

* ``values[i, j]`` holds the cell whose centre sits at ``(i * dx, j * dy)``,
  so axis 0 is x and axis 1 is y.
* Convolutions are true convolutions, ``out[i,j] = sum_pq K[p,q] w[i-p,j-q]
  * dx * dy``, with zero padding outside the domain.  The ``dx * dy`` factor
  makes a disc-indicator kernel return the local mass inside its radius.
* Kernel weights are sampled at cell centres; a disc kernel carries weight 1
  wherever the centre offset lies inside the radius.
"""

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.signal import fftconvolve

# Kernels up to this many taps go through the direct (exactly summed) path;
# anything larger is cheaper via FFT.
_DIRECT_TAP_LIMIT = 1600


class GeometryError(ValueError):
    """Grid geometries that do not match, or malformed grid arguments."""


class ParameterError(ValueError):
    """Scenario or force parameters outside their allowed ranges."""


@dataclass
class ScalarField:
    """A scalar quantity sampled on a regular nx-by-ny grid."""

    values: np.ndarray
    dx: float = 1.0
    dy: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise GeometryError("field values must be a 2-d array")
        if self.values.shape[0] < 3 or self.values.shape[1] < 3:
            raise GeometryError("grid needs at least 3 cells per axis")
        if not (self.dx > 0 and self.dy > 0):
            raise GeometryError("cell sizes must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")

    @property
    def nx(self):
        return self.values.shape[0]

    @property
    def ny(self):
        return self.values.shape[1]

    @classmethod
    def zeros(cls, nx, ny, dx=1.0, dy=1.0):
        return cls(np.zeros((nx, ny)), dx, dy)

    def copy(self):
        return ScalarField(self.values.copy(), self.dx, self.dy)

    def same_geometry(self, other) -> bool:
        return (
            self.values.shape == other.values.shape
            and self.dx == other.dx
            and self.dy == other.dy
        )

    def x_coords(self):
        return np.arange(self.nx) * self.dx

    def y_coords(self):
        return np.arange(self.ny) * self.dy

    def like(self, values):
        """A new field on this grid holding ``values``."""
        values = np.asarray(values, dtype=float)
        if values.shape != self.values.shape:
            raise GeometryError("values shape does not match grid")
        return ScalarField(values, self.dx, self.dy)


@dataclass
class VectorField:
    """A 2-component vector quantity on the same layout as ScalarField."""

    x: np.ndarray
    y: np.ndarray
    dx: float = 1.0
    dy: float = 1.0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.x.shape != self.y.shape:
            raise GeometryError("vector components must share a shape")

    def magnitude(self):
        return np.hypot(self.x, self.y)


@dataclass
class Kernel:
    """A convolution stencil with odd side length ``2 m + 1``.

    ``radius`` is the physical truncation radius; ``weights[m + p, m + q]``
    is the weight applied at offset ``(p * dx, q * dy)``.
    """

    kind: str
    radius: float
    weights: np.ndarray
    dx: float = 1.0
    dy: float = 1.0
    flipped: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=float)
        if self.weights.ndim != 2:
            raise GeometryError("kernel weights must be 2-d")
        if self.weights.shape[0] % 2 == 0 or self.weights.shape[1] % 2 == 0:
            raise GeometryError("kernel side lengths must be odd")
        # cv2.filter2D correlates, so cache the flipped stencil once.
        self.flipped = np.ascontiguousarray(self.weights[::-1, ::-1])

    @property
    def half_width(self):
        return self.weights.shape[0] // 2

    def weight_sum(self):
        return float(self.weights.sum())


def _offset_radii(m_x, m_y, dx, dy):
    px = np.arange(-m_x, m_x + 1) * dx
    py = np.arange(-m_y, m_y + 1) * dy
    return np.hypot(px[:, None], py[None, :])


def disc_kernel(radius, dx=1.0, dy=1.0) -> Kernel:
    """Indicator of a disc: weight 1 at every cell-centre offset inside ``radius``.

    Convolving with it therefore integrates the field over the disc, up to
    the usual cell-centre sampling error in the disc area.
    """
    if radius <= 0:
        raise ParameterError("disc radius must be positive")
    m_x = int(np.ceil(radius / dx))
    m_y = int(np.ceil(radius / dy))
    rad = _offset_radii(m_x, m_y, dx, dy)
    weights = (rad <= radius).astype(float)
    return Kernel("disc", float(radius), weights, dx, dy)


def firing_kernel(strength, decay, preferred_range=0.0, dx=1.0, dy=1.0) -> Kernel:
    """Area-fire weight falling off exponentially away from the preferred range.

    The weight at offset r is ``strength * exp(-decay * sqrt(|r^2 - R^2|))``
    with R the preferred range.  Weights below ``1e-3 * strength`` are
    truncated to zero, which also fixes the stencil size.
    """
    if strength < 0:
        raise ParameterError("firing strength must be nonnegative")
    if strength == 0:
        return Kernel("firing", 0.0, np.zeros((1, 1)), dx, dy)
    if decay <= 0:
        raise ParameterError("firing decay must be positive for nonzero strength")
    if preferred_range < 0:
        raise ParameterError("preferred range must be nonnegative")
    # Outermost radius where the weight still clears the cutoff.
    reach = np.sqrt(preferred_range**2 + (np.log(1e3) / decay) ** 2)
    m_x = int(np.ceil(reach / dx))
    m_y = int(np.ceil(reach / dy))
    rad = _offset_radii(m_x, m_y, dx, dy)
    weights = strength * np.exp(-decay * np.sqrt(np.abs(rad**2 - preferred_range**2)))
    weights[weights < 1e-3 * strength] = 0.0
    return Kernel("firing", float(reach), weights, dx, dy)


def convolve(fld: ScalarField, kernel: Kernel) -> ScalarField:
    """Convolve a field with a kernel, zero padded, scaled by the cell area.

    Small stencils use an exactly-summed direct path, large ones go through
    FFT; both agree with the definition to well under 1e-10.
    """
    if kernel.dx != fld.dx or kernel.dy != fld.dy:
        raise GeometryError("kernel was built for a different cell size")
    if kernel.weights.size > _DIRECT_TAP_LIMIT:
        out = fftconvolve(fld.values, kernel.weights, mode="same")
    else:
        out = cv2.filter2D(
            fld.values, -1, kernel.flipped, borderType=cv2.BORDER_CONSTANT
        )
    return fld.like(out * (fld.dx * fld.dy))


def disc_mass(fld: ScalarField, radius) -> ScalarField:
    """Local mass of ``fld`` within ``radius`` of each cell."""
    return convolve(fld, disc_kernel(radius, fld.dx, fld.dy))


def gradient(fld: ScalarField) -> VectorField:
    """Central-difference gradient, one sided at the walls."""
    gx, gy = np.gradient(fld.values, fld.dx, fld.dy, edge_order=1)
    return VectorField(gx, gy, fld.dx, fld.dy)


def total_mass(fld: ScalarField) -> float:
    return float(fld.values.sum() * fld.dx * fld.dy)


def point_reflect(values: np.ndarray) -> np.ndarray:
    """Reverse both axes, the discrete point reflection through the grid centre."""
    return values[::-1, ::-1]
