"""Continuous control paths built from augmented series.

Every path is a piecewise cubic on breakpoints ``s_0 < ... < s_m``. Piece k
stores, per output channel, coefficients ``(a, b, c, d)`` of
``a + b u + c u^2 + d u^3`` with ``u = s - s_k``. Pieces are half-open
``[s_k, s_{k+1})`` except the last, which is closed.

Four constructions are provided:

- ``natural_cubic``: C2 natural cubic spline (needs the whole series).
- ``linear``: straight segments between observed knots.
- ``hermite_backward``: per-interval cubic Hermite with backward-difference
  slopes; C1, and each piece only looks one knot ahead.
- ``rectilinear``: lead-lag path on ``[0, 2n]``; time advances with features
  frozen, then features and counts jump with time frozen.

The first three use ``s_i = i`` and interpolate each feature channel over
that channel's observed knots only. Time and count channels are known at
every knot.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import EmptyChannel, OutOfDomain, ShapeError
from .series import AugmentedSeries

SCHEMES = ("natural_cubic", "linear", "hermite_backward", "rectilinear")

ALIASES = {
    "natural": "natural_cubic",
    "cubic": "natural_cubic",
    "natural_cubic": "natural_cubic",
    "linear": "linear",
    "hermite": "hermite_backward",
    "hermite_backward": "hermite_backward",
    "rectilinear": "rectilinear",
}


def canonical_scheme(name: str) -> str:
    try:
        return ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(ALIASES)}") from None


@dataclass(frozen=True, eq=False)
class ControlPath:
    """Piecewise-cubic path with derivative access.

    Attributes
    ----------
    breakpoints : (m+1,) strictly increasing parameters.
    coeffs : (m, d, 4) local polynomial coefficients, ascending powers.
    scheme : construction tag.
    derivative_discontinuities : sorted interior breakpoints where dX/ds jumps.
    knots : parameters at which the path passes through data rows
        (``i`` for most schemes, ``2i`` for rectilinear).
    channels : labels of the d output channels.
    """

    breakpoints: np.ndarray
    coeffs: np.ndarray
    scheme: str
    derivative_discontinuities: np.ndarray
    knots: np.ndarray
    channels: tuple = ()

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        co = np.asarray(self.coeffs, dtype=float)
        if bp.ndim != 1 or bp.size < 2 or np.any(np.diff(bp) <= 0):
            raise ShapeError("breakpoints must be a strictly increasing 1-d array of length >= 2")
        if co.ndim != 3 or co.shape[0] != bp.size - 1 or co.shape[2] != 4:
            raise ShapeError(f"coeffs shape {co.shape} does not match {bp.size - 1} pieces")
        disc = np.unique(np.asarray(self.derivative_discontinuities, dtype=float))
        for arr in (bp, co, disc):
            arr.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "coeffs", co)
        object.__setattr__(self, "derivative_discontinuities", disc)
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=float))
        object.__setattr__(self, "channels", tuple(self.channels))

    @property
    def out_dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    @property
    def n_pieces(self) -> int:
        return self.coeffs.shape[0]

    def locate(self, s):
        """Piece index and local coordinate for parameter(s) ``s``."""
        s = np.asarray(s, dtype=float)
        lo, hi = self.domain
        if np.any(s < lo) or np.any(s > hi) or not np.all(np.isfinite(s)):
            raise OutOfDomain(f"parameter outside [{lo}, {hi}]")
        k = np.searchsorted(self.breakpoints, s, side="right") - 1
        k = np.clip(k, 0, self.n_pieces - 1)
        return k, s - self.breakpoints[k]

    def evaluate(self, s) -> np.ndarray:
        """X(s). Scalar ``s`` gives shape (d,); an array of shape (q,) gives (q, d)."""
        k, u = self.locate(s)
        c = self.coeffs[k]
        u = u[..., None]
        return c[..., 0] + u * (c[..., 1] + u * (c[..., 2] + u * c[..., 3]))

    def derivative(self, s) -> np.ndarray:
        """dX/ds(s), right limit at breakpoints (left limit at the final one)."""
        k, u = self.locate(s)
        c = self.coeffs[k]
        u = u[..., None]
        return c[..., 1] + u * (2.0 * c[..., 2] + u * 3.0 * c[..., 3])

    def second_derivative(self, s) -> np.ndarray:
        k, u = self.locate(s)
        c = self.coeffs[k]
        return 2.0 * c[..., 2] + 6.0 * u[..., None] * c[..., 3]

    def piece_end_values(self, order: int = 0) -> np.ndarray:
        """Left limits of the ``order``-th derivative at breakpoints s_1..s_m, shape (m, d)."""
        h = np.diff(self.breakpoints)[:, None]
        a, b, c, d = np.moveaxis(self.coeffs, -1, 0)
        if order == 0:
            return a + h * (b + h * (c + h * d))
        if order == 1:
            return b + h * (2 * c + 3 * h * d)
        if order == 2:
            return 2 * c + 6 * h * d
        raise ValueError("order must be 0, 1 or 2")

    def discontinuities(self) -> list[float]:
        return [float(x) for x in self.derivative_discontinuities]

    def sample(self, n_points: int):
        """Uniform grid over the domain with X and dX/ds on it."""
        s = np.linspace(*self.domain, n_points)
        return s, self.evaluate(s), self.derivative(s)


# ---------------------------------------------------------------------------
# one-channel constructions on knots at integer positions

def _linear_knot_pieces(pos, vals):
    h = np.diff(pos)
    coeffs = np.zeros((len(pos) - 1, 4))
    coeffs[:, 0] = vals[:-1]
    coeffs[:, 1] = np.diff(vals) / h
    return coeffs


def _hermite_knot_pieces(pos, vals):
    # slope at knot k is the backward difference; knot 0 borrows the forward one
    h = np.diff(pos)
    secant = np.diff(vals) / h
    slopes = np.concatenate([secant[:1], secant])
    m0, m1 = slopes[:-1], slopes[1:]
    coeffs = np.empty((len(pos) - 1, 4))
    coeffs[:, 0] = vals[:-1]
    coeffs[:, 1] = m0
    # written in slope excesses so a piece with m0 = m1 = secant is exactly linear
    e0, e1 = m0 - secant, m1 - secant
    coeffs[:, 2] = -(2.0 * e0 + e1) / h
    coeffs[:, 3] = (e0 + e1) / h**2
    return coeffs


def natural_second_derivatives(pos, vals) -> np.ndarray:
    """Knot second derivatives M of the natural cubic spline (M_0 = M_K = 0)."""
    h = np.diff(pos)
    K = len(pos)
    M = np.zeros(K)
    if K < 3:
        return M
    rhs = 6.0 * (np.diff(vals[1:]) / h[1:] - np.diff(vals[:-1]) / h[:-1])
    ab = np.zeros((3, K - 2))
    ab[0, 1:] = h[1:-1]
    ab[1, :] = 2.0 * (h[:-1] + h[1:])
    ab[2, :-1] = h[1:-1]
    M[1:-1] = solve_banded((1, 1), ab, rhs)
    return M


def _natural_knot_pieces(pos, vals):
    h = np.diff(pos)
    M = natural_second_derivatives(pos, vals)
    coeffs = np.empty((len(pos) - 1, 4))
    coeffs[:, 0] = vals[:-1]
    coeffs[:, 1] = np.diff(vals) / h - h * (2.0 * M[:-1] + M[1:]) / 6.0
    coeffs[:, 2] = M[:-1] / 2.0
    coeffs[:, 3] = (M[1:] - M[:-1]) / (6.0 * h)
    return coeffs


def _unit_pieces(pos, knot_coeffs, vals, n, extend_slope):
    """Re-express knot-interval polynomials on the unit pieces [i, i+1), i < n.

    Outside the observed range the channel continues as a straight line with
    the boundary slope (or flat when ``extend_slope`` is False), which keeps
    the smoothness of the construction.
    """
    out = np.zeros((n, 4))
    starts = np.arange(n, dtype=float)
    if len(pos) == 1:
        out[:, 0] = vals[0]
        return out
    k = np.clip(np.searchsorted(pos, starts, side="right") - 1, 0, len(pos) - 2)
    a, b, c, d = knot_coeffs[k].T
    delta = starts - pos[k]
    out[:, 0] = a + delta * (b + delta * (c + delta * d))
    out[:, 1] = b + delta * (2 * c + 3 * delta * d)
    out[:, 2] = c + 3 * delta * d
    out[:, 3] = d

    first, last = pos[0], pos[-1]
    b0 = knot_coeffs[0, 1]
    _, bL, cL, dL = knot_coeffs[-1]
    hL = last - pos[-2]
    end_slope = bL + hL * (2 * cL + 3 * hL * dL)
    left = starts < first
    right = starts >= last
    slope_l = b0 if extend_slope else 0.0
    slope_r = end_slope if extend_slope else 0.0
    out[left] = 0.0
    out[left, 0] = vals[0] + slope_l * (starts[left] - first)
    out[left, 1] = slope_l
    out[right] = 0.0
    out[right, 0] = vals[-1] + slope_r * (starts[right] - last)
    out[right, 1] = slope_r
    return out


_KNOT_BUILDERS = {
    "linear": (_linear_knot_pieces, 1, False),
    "hermite_backward": (_hermite_knot_pieces, 1, True),
    "natural_cubic": (_natural_knot_pieces, 2, True),
}


def _channel_table(series: AugmentedSeries):
    """(values, mask) columns in output-channel order for the gap-spanning schemes."""
    rows = series.n + 1
    cols, masks = [], []
    if series.include_time:
        cols.append(series.timestamps[:, None])
        masks.append(np.ones((rows, 1), dtype=bool))
    cols.append(series.values)
    masks.append(series.mask)
    if series.include_intensity:
        cols.append(series.intensity.astype(float))
        masks.append(np.ones_like(series.mask))
    return np.hstack(cols), np.hstack(masks)


def _build_gap_spanning(series: AugmentedSeries, scheme: str) -> ControlPath:
    builder, min_knots, extend = _KNOT_BUILDERS[scheme]
    n = series.n
    values, mask = _channel_table(series)
    labels = series.channel_labels
    coeffs = np.empty((n, values.shape[1], 4))
    grid = np.arange(n + 1, dtype=float)
    for j in range(values.shape[1]):
        obs = np.flatnonzero(mask[:, j])
        if obs.size < min_knots:
            raise EmptyChannel(
                f"channel {labels[j]!r} has {obs.size} observations; {scheme} needs {min_knots}"
            )
        pos, vals = grid[obs], values[obs, j]
        knot_coeffs = builder(pos, vals) if obs.size > 1 else np.zeros((0, 4))
        coeffs[:, j] = _unit_pieces(pos, knot_coeffs, vals, n, extend)
    disc = grid[1:-1] if scheme == "linear" else np.array([])
    return ControlPath(grid, coeffs, scheme, disc, grid.copy(), labels)


def build_linear(series: AugmentedSeries) -> ControlPath:
    return _build_gap_spanning(series, "linear")


def build_hermite_backward(series: AugmentedSeries) -> ControlPath:
    return _build_gap_spanning(series, "hermite_backward")


def build_natural_cubic(series: AugmentedSeries) -> ControlPath:
    return _build_gap_spanning(series, "natural_cubic")


def build_rectilinear(series: AugmentedSeries) -> ControlPath:
    """Lead-lag path on [0, 2n].

    Breakpoint 2i holds (t_i, filled x_i, c_i); breakpoint 2i+1 holds
    (t_{i+1}, filled x_i, c_i).
    """
    n = series.n
    t = series.timestamps
    parts_even = []
    parts_odd = []
    if series.include_time:
        parts_even.append(t[:, None])
        parts_odd.append(t[1:, None])
    parts_even.append(series.filled_values)
    parts_odd.append(series.filled_values[:-1])
    if series.include_intensity:
        parts_even.append(series.intensity.astype(float))
        parts_odd.append(series.intensity[:-1].astype(float))
    even = np.hstack(parts_even)
    odd = np.hstack(parts_odd)
    points = np.empty((2 * n + 1, even.shape[1]))
    points[0::2] = even
    points[1::2] = odd
    coeffs = np.zeros((2 * n, even.shape[1], 4))
    coeffs[:, :, 0] = points[:-1]
    coeffs[:, :, 1] = np.diff(points, axis=0)
    grid = np.arange(2 * n + 1, dtype=float)
    return ControlPath(grid, coeffs, "rectilinear", grid[1:-1], grid[0::2].copy(),
                       series.channel_labels)


BUILDERS = {
    "natural_cubic": build_natural_cubic,
    "linear": build_linear,
    "hermite_backward": build_hermite_backward,
    "rectilinear": build_rectilinear,
}


def build(scheme: str, series: AugmentedSeries) -> ControlPath:
    return BUILDERS[canonical_scheme(scheme)](series)


def reparameterise(path: ControlPath, breakpoints) -> ControlPath:
    """The same path traced over new breakpoints.

    Piece k is mapped affinely from ``[s_k, s_{k+1}]`` onto the new interval.
    Where neighbouring pieces are stretched by different factors the
    derivative picks up a jump, so those breakpoints join the discontinuity
    list.
    """
    new = np.asarray(breakpoints, dtype=float)
    if new.shape != path.breakpoints.shape:
        raise ShapeError("reparameterisation must keep the number of breakpoints")
    if np.any(np.diff(new) <= 0):
        raise ShapeError("new breakpoints must be strictly increasing")
    ratio = np.diff(path.breakpoints) / np.diff(new)
    powers = ratio[:, None] ** np.arange(4)
    coeffs = path.coeffs * powers[:, None, :]
    # map old knot parameters through the piecewise-linear change of variable
    knots = np.interp(path.knots, path.breakpoints, new)
    old_disc = np.interp(path.derivative_discontinuities, path.breakpoints, new)
    stretched = new[1:-1][ratio[1:] != ratio[:-1]]
    disc = np.union1d(old_disc, stretched)
    return ControlPath(new, coeffs, path.scheme, disc, knots, path.channels)
