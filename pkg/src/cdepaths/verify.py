"""Empirical checks of the properties a control path should have.

* measurability: how far ahead in the data a value of the path (or of a CDE
  driven by it) is allowed to look, found by perturbing one observation;
* boundedness: sup norms of X and dX/ds and the total variation of dX/ds,
  computed exactly from the piecewise cubics;
* uniqueness: whether two different series can produce the same path;
* reparameterisation invariance of CDE solutions;
* solver cost (NFE) per interpolation scheme.
"""

from __future__ import annotations

import itertools
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np

from .control import ControlPath, build, canonical_scheme, reparameterise
from .errors import BadIndex, ShapeError
from .neuralcde import CdeModel, metric, solve_cde
from .series import AugmentedSeries, RawSeries, augment
from .solver import SolveConfig, integrate

CLASSES = ("continuously_online", "discretely_online", "offline")


# ---------------------------------------------------------------------------
# measurability

@dataclass
class ProbeReport:
    scheme: str
    kind: str
    query_points: list
    affected: list
    differences: list
    classification: str
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme,
            "kind": self.kind,
            "classification": self.classification,
            "metadata": dict(self.metadata),
            "query_points": [float(x) for x in self.query_points],
            "affected": [bool(x) for x in self.affected],
            "differences": [float(x) for x in self.differences],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> ProbeReport:
        return cls(doc["scheme"], doc["kind"], list(doc["query_points"]), list(doc["affected"]),
                   list(doc["differences"]), doc["classification"], dict(doc.get("metadata", {})))


def classify(query_points, affected, arrival, previous_knot) -> str:
    """Measurability class from the pattern of affected query points.

    Nothing affected before the datum's arrival: continuously online.
    Earlier effects only inside ``(previous_knot, arrival)``: discretely online.
    Anything earlier still: offline.
    """
    q = np.asarray(query_points, dtype=float)
    hit = np.asarray(affected, dtype=bool)
    early = q[hit & (q < arrival)]
    if early.size == 0:
        return "continuously_online"
    if np.all(early > previous_knot):
        return "discretely_online"
    return "offline"


def arrival_parameter(scheme: str, j: int) -> tuple[float, float]:
    """Parameter at which row j enters the path, and the knot before it.

    Rectilinear paths reveal x_j on the update piece starting at 2j-1; the
    other schemes place row j at parameter j.
    """
    if canonical_scheme(scheme) == "rectilinear":
        return (float(max(2 * j - 1, 0)), float(max(2 * j - 2, 0)))
    return float(j), float(max(j - 1, 0))


def perturb_row(raw: RawSeries, j: int, epsilon: float) -> RawSeries:
    """Add ``epsilon`` to every observed entry of row j."""
    if not 0 <= j <= raw.n:
        raise BadIndex(f"row {j} outside 0..{raw.n}")
    if not raw.mask[j].any():
        raise BadIndex(f"row {j} has no observed entries to perturb")
    values = np.array(raw.values)
    values[j] = np.where(raw.mask[j], values[j] + epsilon, values[j])
    return raw.with_values(values)


def default_query_grid(path: ControlPath, per_piece=8) -> np.ndarray:
    a, b = path.domain
    return np.linspace(a, b, per_piece * path.n_pieces + 1)


def _cde_states(model, path, queries):
    config = SolveConfig(method="rk4", fixed_step=0.25,
                         discontinuities=tuple(np.unique(np.concatenate([queries,
                                                                         path.breakpoints]))))
    field_fn = lambda s, z: model.matrix_field(z) @ path.derivative(s)
    z0 = model.zeta(path.evaluate(path.domain[0]))
    return integrate(field_fn, z0, path.domain, queries, config).states


def causality_probe(scheme: str, raw: RawSeries, j: int, epsilon=1.0, queries=None,
                    tolerance=1e-9, include_intensity=False, model: CdeModel | None = None,
                    seed=0) -> ProbeReport:
    """Perturb row j and record which query points of the path and of a CDE move.

    The CDE uses a fixed random model and an RK4 grid containing every
    query point and breakpoint, so z(q) depends only on X over [s_0, q].
    """
    if epsilon == 0:
        raise ValueError("epsilon must be non-zero")
    scheme = canonical_scheme(scheme)
    perturbed = perturb_row(raw, j, epsilon)
    base = build(scheme, augment(raw, include_intensity=include_intensity))
    moved = build(scheme, augment(perturbed, include_intensity=include_intensity))
    q = default_query_grid(base) if queries is None else np.asarray(queries, dtype=float)

    path_diff = np.max(np.abs(moved.evaluate(q) - base.evaluate(q)), axis=1)
    if model is None:
        model = CdeModel.init(base.out_dim, 4, 1, 8, 1, seed=seed)
    cde_diff = np.max(np.abs(_cde_states(model, moved, q) - _cde_states(model, base, q)), axis=1)
    diff = np.maximum(path_diff, cde_diff)
    affected = diff > tolerance
    arrival, previous = arrival_parameter(scheme, j)
    return ProbeReport(
        scheme=scheme,
        kind="causality",
        query_points=q.tolist(),
        affected=affected.tolist(),
        differences=diff.tolist(),
        classification=classify(q, affected, arrival, previous),
        metadata={"perturb_index": j, "epsilon": float(epsilon), "tolerance": float(tolerance),
                  "arrival": arrival, "previous_knot": previous,
                  "include_intensity": bool(include_intensity)},
    )


# ---------------------------------------------------------------------------
# boundedness

@dataclass
class PathNorms:
    """``||X||_inf``, ``||dX/ds||_inf`` and ``|dX/ds|_BV`` of a path.

    Sups are taken over channels as well (max norm); the variation adds the
    channel variations. The ``*_by_channel`` arrays keep the channel values
    and ``dense_estimate`` holds the same three numbers from plain sampling.
    """

    sup_norm: float
    deriv_sup_norm: float
    deriv_bv: float
    grid_resolution: int
    sup_by_channel: np.ndarray
    deriv_sup_by_channel: np.ndarray
    deriv_bv_by_channel: np.ndarray
    dense_estimate: tuple

    def as_dict(self) -> dict:
        return {
            "sup_norm": self.sup_norm,
            "deriv_sup_norm": self.deriv_sup_norm,
            "deriv_bv": self.deriv_bv,
            "grid_resolution": self.grid_resolution,
            "dense_sup_norm": self.dense_estimate[0],
            "dense_deriv_sup_norm": self.dense_estimate[1],
            "dense_deriv_bv": self.dense_estimate[2],
        }


def _interior_roots(coeffs, length):
    """Real roots in (0, length) of a polynomial given in ascending powers (degree <= 2)."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=float), "b")
    if c.size <= 1:
        return []
    roots = np.roots(c[::-1])
    real = roots[np.abs(roots.imag) <= 1e-12 * (1 + np.abs(roots.real))].real
    return [r for r in real if 0.0 < r < length]


def _piece_extrema(c, length):
    """(sup |P|, sup |P'|, TV of P') on [0, length] for P = c0 + c1 u + c2 u^2 + c3 u^3."""
    p = np.polynomial.Polynomial(c)
    dp = p.deriv()
    ddp_coeffs = dp.deriv().coef
    crit_p = [0.0, length] + _interior_roots(dp.coef, length)
    crit_dp = [0.0, length] + _interior_roots(ddp_coeffs, length)
    sup = max(abs(p(u)) for u in crit_p)
    dsup = max(abs(dp(u)) for u in crit_dp)
    pts = sorted(crit_dp)
    tv = sum(abs(dp(b) - dp(a)) for a, b in itertools.pairwise(pts))
    return sup, dsup, tv


def path_norms(path: ControlPath, grid_resolution=64) -> PathNorms:
    """Exact piecewise norms of a path, plus a dense-sampling estimate."""
    if grid_resolution < 10:
        raise ValueError("grid_resolution must be at least 10 points per piece")
    d = path.out_dim
    h = np.diff(path.breakpoints)
    sup = np.zeros(d)
    dsup = np.zeros(d)
    bv = np.zeros(d)
    for k in range(path.n_pieces):
        for c in range(d):
            a, b, v = _piece_extrema(path.coeffs[k, c], h[k])
            sup[c] = max(sup[c], a)
            dsup[c] = max(dsup[c], b)
            bv[c] += v
    if path.n_pieces > 1:
        left = path.piece_end_values(1)[:-1]
        right = path.coeffs[1:, :, 1]
        bv += np.abs(right - left).sum(axis=0)
    return PathNorms(float(sup.max()), float(dsup.max()), float(bv.sum()), int(grid_resolution),
                     sup, dsup, bv, dense_norms(path, grid_resolution))


def dense_norms(path: ControlPath, grid_resolution=64) -> tuple:
    """The three norms from ``grid_resolution`` samples per piece."""
    u = np.linspace(0.0, 1.0, grid_resolution + 1)
    sup = dsup = bv = 0.0
    prev_end = None
    for k in range(path.n_pieces):
        s = path.breakpoints[k] + u * (path.breakpoints[k + 1] - path.breakpoints[k])
        c = path.coeffs[k]
        w = (s - path.breakpoints[k])[:, None]
        x = c[:, 0] + w * (c[:, 1] + w * (c[:, 2] + w * c[:, 3]))
        dx = c[:, 1] + w * (2 * c[:, 2] + 3 * w * c[:, 3])
        sup = max(sup, float(np.abs(x).max()))
        dsup = max(dsup, float(np.abs(dx).max()))
        bv += float(np.abs(np.diff(dx, axis=0)).sum())
        if prev_end is not None:
            bv += float(np.abs(dx[0] - prev_end).sum())
        prev_end = dx[-1]
    return sup, dsup, bv


# ---------------------------------------------------------------------------
# uniqueness

def arc_length_resample(path: ControlPath, grid=2001, per_piece=64) -> np.ndarray:
    """The image of the path traced at constant speed, sampled at ``grid`` points.

    Comparing these removes the parameterisation, so two series giving the
    same curve in a different number of pieces compare equal.
    """
    u = np.linspace(0.0, 1.0, per_piece + 1)[:-1]
    s = (path.breakpoints[:-1, None] + u * np.diff(path.breakpoints)[:, None]).ravel()
    s = np.append(s, path.breakpoints[-1])
    pts = path.evaluate(s)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 0])
    pts = pts[keep]
    arc = np.concatenate([[0.0], np.cumsum(seg[seg > 0])])
    if arc[-1] == 0.0:
        return np.repeat(pts[:1], grid, axis=0)
    target = np.linspace(0.0, arc[-1], grid)
    return np.stack([np.interp(target, arc, pts[:, c]) for c in range(pts.shape[1])], axis=1)


def uniqueness_probe(x1: RawSeries, x2: RawSeries, scheme: str, with_intensity=False,
                     grid=2001) -> float:
    """Largest channel-wise gap between the curves built from two series."""
    if x1.n_channels != x2.n_channels:
        raise ShapeError("series have different channel counts")
    if x1.timestamps[0] != x2.timestamps[0] or x1.timestamps[-1] != x2.timestamps[-1]:
        raise ValueError("series must share the first and last timestamps")
    p1 = build(scheme, augment(x1, include_intensity=with_intensity))
    p2 = build(scheme, augment(x2, include_intensity=with_intensity))
    return float(np.max(np.abs(arc_length_resample(p1, grid) - arc_length_resample(p2, grid))))


def monotone_pieces(path: ControlPath) -> bool:
    """True when each piece has a coordinate that is strictly monotone along it."""
    for k in range(path.n_pieces):
        L = path.breakpoints[k + 1] - path.breakpoints[k]
        found = False
        for c in range(path.out_dim):
            dp = np.polynomial.Polynomial(path.coeffs[k, c]).deriv()
            vals = np.array([dp(u) for u in [0.0, L] + _interior_roots(dp.deriv().coef, L)])
            if np.abs(vals).max() > 0 and (vals.min() >= 0 or vals.max() <= 0):
                found = True
                break
        if not found:
            return False
    return True


# ---------------------------------------------------------------------------
# reparameterisation

def parameterisation(path: ControlPath, series: AugmentedSeries, kind) -> np.ndarray:
    """New breakpoints for ``path``.

    ``kind`` is ``"index"`` (unchanged), ``"time"`` (knots at timestamps,
    other breakpoints placed linearly between them), ``"dilate2"`` (doubled)
    or an explicit increasing array.
    """
    if isinstance(kind, str):
        if kind == "index":
            return path.breakpoints.copy()
        if kind == "time":
            return np.interp(path.breakpoints, path.knots, series.timestamps)
        if kind == "dilate2":
            return 2.0 * path.breakpoints
        raise ValueError(f"unknown parameterisation {kind!r}")
    return np.asarray(kind, dtype=float)


def reparam_check(model: CdeModel, series: AugmentedSeries, parameterisation_a,
                  parameterisation_b, solver_config: SolveConfig | None = None,
                  scheme="linear") -> float:
    """Max deviation of z at corresponding breakpoints under two parameterisations.

    Every breakpoint is made a step boundary in both solves, so z is compared
    at accepted step ends and neither solve steps across a kink of dX/ds.
    """
    path = build(scheme, series)
    solver_config = solver_config or SolveConfig()
    results = []
    for kind in (parameterisation_a, parameterisation_b):
        p = reparameterise(path, parameterisation(path, series, kind))
        config = solver_config.with_discontinuities(
            tuple(solver_config.discontinuities) + tuple(p.breakpoints[1:-1].tolist()))
        results.append(solve_cde(model, p, config, p.breakpoints).states)
    return float(np.max(np.abs(results[0] - results[1])))


# ---------------------------------------------------------------------------
# solver cost

@dataclass
class BenchRow:
    scheme: str
    mean_nfe: float
    metric: float


def nfe_benchmark(samples: Sequence[AugmentedSeries], labels, schemes, model: CdeModel,
                  solver_config: SolveConfig | None = None,
                  task="binary_classification") -> list[BenchRow]:
    """Mean NFE per sample and task metric for each scheme with one fixed model."""
    solver_config = solver_config or SolveConfig()
    rows = []
    for scheme in schemes:
        nfes, outputs = [], []
        for s in samples:
            path = build(scheme, s)
            res = solve_cde(model, path, solver_config)
            nfes.append(res.nfe)
            outputs.append(model.readout(res.states[-1]))
        score = metric(np.array(outputs), labels, task) if len(outputs) else float("nan")
        rows.append(BenchRow(canonical_scheme(scheme), float(np.mean(nfes)) if nfes else float("nan"),
                             score))
    return rows
