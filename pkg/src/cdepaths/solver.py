"""Explicit integrators for dz/ds = F(s, z) with jump-aware stepping.

Three methods: ``euler`` and ``rk4`` on a fixed grid, and ``dopri5``, the
adaptive Dormand-Prince 5(4) pair with PI step-size control and its
4th-order continuous extension for dense output.

A control path that is only piecewise smooth makes F jump at the listed
discontinuities. Steps never straddle them: fixed-step grids subdivide each
inter-discontinuity segment, and dopri5 shortens any step that would cross
one. A stage that lands exactly on the far end of such a step is evaluated
at the left limit, so the step only ever sees one smooth piece.

Every call of the user's field is counted (``SolveResult.nfe``).
"""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    BadLadder,
    MaxStepsExceeded,
    NumericalBlowup,
    ShapeError,
    StepUnderflow,
)

METHODS = ("euler", "rk4", "dopri5")
FIXED_METHODS = ("euler", "rk4")

# Dormand-Prince 5(4) tableau
DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
# continuous extension: z(s + theta h) = z + h * stages^T @ (DP_P @ [theta, theta^2, theta^3, theta^4])
DP_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ALPHA = 0.7 / 5
BETA = 0.4 / 5


@dataclass(frozen=True)
class SolveConfig:
    method: str = "dopri5"
    rtol: float = 1e-3
    atol: float = 1e-5
    fixed_step: float = 1.0
    discontinuities: tuple = ()
    max_steps: int = 2**20
    initial_step: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if not self.fixed_step > 0:
            raise ValueError("fixed_step must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        object.__setattr__(self, "discontinuities",
                           tuple(sorted(float(d) for d in set(self.discontinuities))))

    def with_discontinuities(self, discontinuities) -> SolveConfig:
        return replace(self, discontinuities=tuple(discontinuities))


@dataclass
class SolveResult:
    query_points: np.ndarray
    states: np.ndarray
    nfe: int
    steps_accepted: int
    steps_rejected: int
    step_endpoints: np.ndarray = field(default_factory=lambda: np.empty(0))


class CountedField:
    """Wraps a field and counts its evaluations."""

    def __init__(self, fn: Callable):
        self.fn = fn
        self.count = 0

    def __call__(self, s, z):
        self.count += 1
        return self.fn(s, z)


def _check_finite(x, what):
    if not np.all(np.isfinite(x)):
        raise NumericalBlowup(f"non-finite {what}")
    return x


def _end_time(s_end, s_start, at_jump):
    """Evaluation time for a stage at the end of a step: left limit if the step ends on a jump."""
    return float(np.nextafter(s_end, s_start)) if at_jump else s_end


def _segments(span, discontinuities):
    a, b = span
    inner = [d for d in discontinuities if a < d < b]
    return [a] + inner + [b], set(inner)


def fixed_step_grid(span, step, discontinuities=()):
    """Step endpoints for a fixed-step solve, and whether each step ends on a jump.

    Each segment between consecutive discontinuities is divided into
    ``ceil(length / step)`` equal steps.
    """
    cuts, jumps = _segments(span, discontinuities)
    pts = [cuts[0]]
    for lo, hi in itertools.pairwise(cuts):
        n_steps = max(1, math.ceil((hi - lo) / step - 1e-9))
        inner = lo + (hi - lo) * np.arange(1, n_steps) / n_steps
        pts.extend(inner.tolist())
        pts.append(hi)
    grid = np.array(pts)
    ends_on_jump = np.array([p in jumps for p in grid[1:]])
    return grid, ends_on_jump


def euler_step(field, s, z, h, at_jump=False):
    return z + h * field(s, z)


def rk4_step(field, s, z, h, at_jump=False):
    half = s + 0.5 * h
    k1 = field(s, z)
    k2 = field(half, z + 0.5 * h * k1)
    k3 = field(half, z + 0.5 * h * k2)
    k4 = field(_end_time(s + h, s, at_jump), z + h * k3)
    return z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_FIXED_STEPPERS = {"euler": euler_step, "rk4": rk4_step}


@dataclass
class Dopri5Step:
    z5: np.ndarray
    z4: np.ndarray
    stages: np.ndarray
    error: float


def error_norm(diff, z, z_new, rtol, atol) -> float:
    """Weighted RMS of ``diff`` with weights atol + rtol * max(|z|, |z_new|)."""
    scale = atol + rtol * np.maximum(np.abs(z), np.abs(z_new))
    r = np.asarray(diff / scale)
    return float(np.sqrt(np.mean(r * r))) if r.size else 0.0


def dopri5_step(field, s, z, h, rtol=1e-3, atol=1e-5, k1=None, at_jump=False) -> Dopri5Step:
    """One Dormand-Prince step of size h from (s, z).

    ``k1`` may carry the first stage over from the previous step (FSAL).
    Returns both solutions, the seven stage derivatives and the scaled error.
    """
    z = np.asarray(z, dtype=float)
    stages = np.empty((7,) + z.shape)
    stages[0] = field(s, z) if k1 is None else k1
    _check_finite(stages[0], "stage")
    end = _end_time(s + h, s, at_jump)
    for i in range(1, 7):
        zi = z + h * np.tensordot(DP_A[i], stages[:i], axes=1)
        si = end if DP_C[i] == 1.0 else s + DP_C[i] * h
        stages[i] = _check_finite(field(si, zi), "stage")
    z5 = z + h * np.tensordot(DP_B5, stages, axes=1)
    z4 = z + h * np.tensordot(DP_B4, stages, axes=1)
    err = error_norm(z5 - z4, z, z5, rtol, atol)
    return Dopri5Step(z5, z4, stages, err)


def dense_output(z, h, stages, theta):
    """Continuous extension of an accepted dopri5 step at fraction ``theta`` in [0, 1]."""
    powers = theta ** np.arange(1, 5)
    weights = DP_P @ powers
    return z + h * np.tensordot(weights, stages, axes=1)


def initial_step(field, s0, z0, f0, direction_end, rtol, atol):
    """Automatic first step size (Hairer, Norsett & Wanner, II.4)."""
    scale = atol + rtol * np.abs(z0)
    d0 = float(np.sqrt(np.mean((z0 / scale) ** 2))) if z0.size else 0.0
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2))) if z0.size else 0.0
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, direction_end - s0)
    z1 = z0 + h0 * f0
    f1 = _check_finite(field(s0 + h0, z1), "field value")
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0 if z0.size else 0.0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1)


def integrate(field, z0, span, queries=None, config: SolveConfig | None = None) -> SolveResult:
    """Solve dz/ds = field(s, z) over ``span`` and report z at ``queries``.

    Parameters
    ----------
    field : callable (s, z) -> dz/ds with the shape of z.
    z0 : initial state (any shape).
    span : (s_a, s_b) with s_a < s_b.
    queries : sorted parameters inside span; defaults to ``[s_b]``.
    config : SolveConfig; ``config.discontinuities`` lists jump locations.
    """
    config = config or SolveConfig()
    a, b = float(span[0]), float(span[1])
    if not b > a:
        raise ShapeError("span must satisfy s_a < s_b")
    queries = np.array([b] if queries is None else queries, dtype=float).reshape(-1)
    if queries.size and (queries[0] < a or queries[-1] > b or np.any(np.diff(queries) < 0)):
        raise ShapeError("queries must be sorted and lie within span")
    z0 = _check_finite(np.array(z0, dtype=float), "initial state")
    counted = CountedField(field)
    if config.method in FIXED_METHODS:
        return _integrate_fixed(counted, z0, (a, b), queries, config)
    return _integrate_dopri5(counted, z0, (a, b), queries, config)


def _integrate_fixed(field, z0, span, queries, config):
    grid, ends_on_jump = fixed_step_grid(span, config.fixed_step, config.discontinuities)
    if len(grid) - 1 > config.max_steps:
        raise MaxStepsExceeded(f"{len(grid) - 1} steps exceed max_steps={config.max_steps}")
    stepper = _FIXED_STEPPERS[config.method]
    states = np.empty((len(grid),) + z0.shape)
    states[0] = z0
    z = z0
    for k in range(len(grid) - 1):
        h = grid[k + 1] - grid[k]
        z = _check_finite(stepper(field, grid[k], z, h, ends_on_jump[k]), "state")
        states[k + 1] = z
    out = interpolate_grid(grid, states, queries)
    return SolveResult(queries, out, field.count, len(grid) - 1, 0, grid[1:].copy())


def interpolate_grid(grid, states, queries):
    """Linear interpolation of step-endpoint states; exact at grid points."""
    idx = np.clip(np.searchsorted(grid, queries, side="right") - 1, 0, len(grid) - 2)
    w = (queries - grid[idx]) / (grid[idx + 1] - grid[idx])
    w = w.reshape((-1,) + (1,) * (states.ndim - 1))
    lo, hi = states[idx], states[idx + 1]
    return np.where(w == 0.0, lo, lo + w * (hi - lo))


def _integrate_dopri5(field, z0, span, queries, config):
    a, b = span
    rtol, atol = config.rtol, config.atol
    length = b - a
    cuts, jumps = _segments(span, config.discontinuities)
    stop_idx = 1

    out = np.empty((len(queries),) + z0.shape)
    q = 0
    while q < len(queries) and queries[q] <= a:
        out[q] = z0
        q += 1

    s, z = a, z0
    k1 = _check_finite(field(s, z), "field value")
    if config.initial_step is not None:
        h = float(config.initial_step)
    else:
        h = initial_step(field, s, z, k1, cuts[1], rtol, atol)
    accepted = rejected = 0
    endpoints = []
    err_prev = 1e-4
    reject_last = False

    while s < b:
        if accepted + rejected >= config.max_steps:
            raise MaxStepsExceeded(f"more than max_steps={config.max_steps} steps")
        if h < 1e-12 * length:
            raise StepUnderflow(f"step size {h:g} underflowed at s={s:g}")
        stop = cuts[stop_idx]
        clamped = s + h >= stop
        h_try = stop - s if clamped else h
        s_new = stop if clamped else s + h_try
        at_jump = clamped and stop in jumps
        step = dopri5_step(field, s, z, h_try, rtol, atol, k1=k1, at_jump=at_jump)
        err = step.error
        if not np.isfinite(err):
            raise NumericalBlowup("non-finite error estimate")

        if err <= 1.0:
            accepted += 1
            endpoints.append(s_new)
            while q < len(queries) and queries[q] <= s_new:
                theta = (queries[q] - s) / h_try
                out[q] = step.z5 if queries[q] == s_new else dense_output(z, h_try, step.stages, theta)
                q += 1
            if err == 0.0:
                factor = MAX_FACTOR
            else:
                factor = SAFETY * err ** -ALPHA * err_prev ** BETA
                factor = min(MAX_FACTOR, max(MIN_FACTOR, factor))
            if reject_last:
                factor = min(1.0, factor)
            # a step cut short at a stop sizes the next one from its own length
            h_next = h_try * factor
            err_prev = max(err, 1e-4)
            reject_last = False
            s, z = s_new, _check_finite(step.z5, "state")
            if clamped:
                stop_idx += 1
            # FSAL: the last stage is the next first stage unless it was a left limit
            k1 = field(s, z) if at_jump else step.stages[6]
            h = h_next
        else:
            rejected += 1
            h = h_try * max(MIN_FACTOR, SAFETY * err ** -0.2)
            reject_last = True

    return SolveResult(queries, out, field.count, accepted, rejected, np.array(endpoints))


# ---------------------------------------------------------------------------

@dataclass
class ConvergenceFit:
    order: float
    steps: np.ndarray
    errors: np.ndarray
    exact: bool = False


def measure_convergence_order(field, exact, z0, span, method, steps) -> ConvergenceFit:
    """Least-squares slope of log(error) against log(step) at the end of span.

    ``exact`` is the true solution at ``span[1]``. If every error is zero the
    method is exact on this problem and ``order`` is NaN.
    """
    steps = np.asarray(steps, dtype=float)
    if steps.ndim != 1 or steps.size < 4 or np.any(steps <= 0) or np.unique(steps).size != steps.size:
        raise BadLadder("need at least 4 distinct positive step sizes")
    errors = np.empty(steps.size)
    for k, h in enumerate(steps):
        res = integrate(field, z0, span, [span[1]], SolveConfig(method=method, fixed_step=h))
        errors[k] = np.max(np.abs(res.states[-1] - exact))
    if np.all(errors == 0.0):
        return ConvergenceFit(float("nan"), steps, errors, exact=True)
    if np.any(errors == 0.0):
        raise BadLadder("some but not all errors vanished; cannot fit an order")
    slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
    return ConvergenceFit(float(slope), steps, errors)
