import numpy as np
import pytest
from conftest import make_series
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from cdepaths.control import (
    SCHEMES,
    build,
    build_hermite_backward,
    build_linear,
    build_natural_cubic,
    build_rectilinear,
    canonical_scheme,
    reparameterise,
)
from cdepaths.errors import EmptyChannel, OutOfDomain, ShapeError
from cdepaths.series import augment
from cdepaths.synthetic import random_series


def feature_path(builder, x, t=None, **kw):
    """Path of a one-channel series without the time channel."""
    t = np.arange(len(x), dtype=float) if t is None else t
    return builder(augment(make_series(t, x), include_time=False, **kw))


# ---------------------------------------------------------------------------
# linear

def test_linear_midpoint():
    p = feature_path(build_linear, [0.0, 2.0])
    assert_allclose(p.evaluate(0.5), [1.0])


def test_linear_bridges_missing_value():
    p = feature_path(build_linear, [0.0, None, 4.0])
    assert_allclose(p.evaluate(1.0), [2.0])


def test_linear_derivative_is_slope():
    p = feature_path(build_linear, [0.0, 2.0])
    for s in (0.0, 0.3, 1.0):
        assert_allclose(p.derivative(s), [2.0])


def test_linear_discontinuities():
    p = feature_path(build_linear, [0.0, 1.0, -1.0, 2.0])
    assert p.discontinuities() == [1.0, 2.0]


def test_linear_empty_channel():
    raw = make_series([0, 1, 2], [[1.0, None], [2.0, None], [3.0, None]])
    with pytest.raises(EmptyChannel):
        build_linear(augment(raw))


# ---------------------------------------------------------------------------
# natural cubic

def test_natural_two_knots_is_linear():
    p = feature_path(build_natural_cubic, [0.0, 1.0])
    assert_allclose(p.coeffs[0, 0], [0.0, 1.0, 0.0, 0.0], atol=1e-15)
    assert_allclose(p.derivative(0.25), p.derivative(0.75))


def test_natural_three_knots():
    # M_0 + 4 M_1 + M_2 = 6 (y_0 - 2 y_1 + y_2) with M_0 = M_2 = 0 gives M_1 = -3
    p = feature_path(build_natural_cubic, [0.0, 1.0, 0.0])
    assert_allclose(p.second_derivative(1.0), [-3.0])
    assert_allclose(p.evaluate(0.5), [0.6875])


def test_natural_matches_scipy(rng):
    x = rng.normal(size=9)
    p = feature_path(build_natural_cubic, list(x))
    s = np.linspace(0, 8, 97)
    oracle = CubicSpline(np.arange(9.0), x, bc_type="natural")
    assert_allclose(p.evaluate(s)[:, 0], oracle(s), atol=1e-12)
    assert_allclose(p.derivative(s)[:, 0], oracle(s, 1), atol=1e-12)


def test_natural_with_missing_uses_observed_knots(rng):
    x = list(rng.normal(size=7))
    x[2] = x[5] = None
    p = feature_path(build_natural_cubic, x)
    obs = [i for i, v in enumerate(x) if v is not None]
    oracle = CubicSpline(np.array(obs, float), [x[i] for i in obs], bc_type="natural")
    s = np.linspace(0, 6, 61)
    assert_allclose(p.evaluate(s)[:, 0], oracle(s), atol=1e-12)


def test_natural_offline():
    a = feature_path(build_natural_cubic, [0.0, 1.0, 0.0, 1.0])
    b = feature_path(build_natural_cubic, [0.0, 1.0, 0.0, 2.0])
    assert abs(a.evaluate(0.5)[0] - b.evaluate(0.5)[0]) > 1e-3


def test_natural_needs_two_knots():
    raw = make_series([0, 1, 2], [None, 1.0, None])
    with pytest.raises(EmptyChannel):
        build_natural_cubic(augment(raw))


# ---------------------------------------------------------------------------
# hermite with backward differences

def test_hermite_collinear_is_linear():
    p = feature_path(build_hermite_backward, [0.0, 1.0, 2.0])
    for k in range(2):
        assert_allclose(p.coeffs[k, 0], [float(k), 1.0, 0.0, 0.0], atol=1e-15)


def test_hermite_constraint_solution():
    # on [1, 2]: X(0)=0, X'(0)=0, X(1)=1, X'(1)=1  ->  X(u) = 2u^2 - u^3
    p = feature_path(build_hermite_backward, [0.0, 0.0, 1.0])
    assert_allclose(p.coeffs[1, 0], [0.0, 0.0, 2.0, -1.0], atol=1e-15)
    assert_allclose(p.evaluate(1.5), [0.375])


def test_hermite_unit_spacing_coefficients():
    # unit gaps and unit increments: b = 1, c = d = 0
    p = feature_path(build_hermite_backward, [3.0, 4.0, 5.0, 6.0])
    assert_allclose(p.coeffs[1, 0], [4.0, 1.0, 0.0, 0.0], atol=1e-15)


def test_hermite_matches_scipy(rng):
    x = rng.normal(size=8)
    slopes = np.concatenate([[x[1] - x[0]], np.diff(x)])
    oracle = CubicHermiteSpline(np.arange(8.0), x, slopes)
    p = feature_path(build_hermite_backward, list(x))
    s = np.linspace(0, 7, 71)
    assert_allclose(p.evaluate(s)[:, 0], oracle(s), atol=1e-12)
    assert_allclose(p.derivative(s)[:, 0], oracle(s, 1), atol=1e-12)


def test_hermite_derivative_continuous(rng):
    p = feature_path(build_hermite_backward, list(rng.normal(size=6)))
    assert_allclose(p.piece_end_values(1)[:-1], p.coeffs[1:, :, 1], atol=1e-12)
    assert p.discontinuities() == []


# ---------------------------------------------------------------------------
# rectilinear

def test_rectilinear_lead_lag():
    p = build_rectilinear(augment(make_series([0, 1], [5.0, 7.0])))
    assert_allclose(p.evaluate(np.array([0.0, 1.0, 2.0])), [[0, 5], [1, 5], [1, 7]])
    assert_allclose(p.evaluate(0.5), [0.5, 5.0])
    assert p.domain == (0.0, 2.0)


def test_rectilinear_time_advance_derivative():
    p = build_rectilinear(augment(make_series([0.0, 2.5, 3.0], [1.0, -1.0, 4.0])))
    assert_allclose(p.derivative(0.5), [2.5, 0.0])
    assert_allclose(p.derivative(2.5), [0.5, 0.0])
    assert_allclose(p.derivative(1.5), [0.0, -2.0])


def test_rectilinear_missing_keeps_value_and_count():
    p = build_rectilinear(augment(make_series([0, 1], [5.0, None]), include_intensity=True))
    assert_allclose(p.evaluate(2.0), [1.0, 5.0, 1.0])


def test_rectilinear_discontinuities():
    p = build_rectilinear(augment(make_series([0, 1, 2], [1.0, 2.0, 0.0])))
    assert p.discontinuities() == [1.0, 2.0, 3.0]
    assert_array_equal(p.knots, [0.0, 2.0, 4.0])


# ---------------------------------------------------------------------------
# evaluation contract

@pytest.mark.parametrize("scheme", SCHEMES)
def test_endpoints_and_domain(scheme):
    raw = make_series([0.0, 0.4, 1.7, 2.0], [1.0, -2.0, 0.5, 3.0])
    p = build(scheme, augment(raw))
    assert_allclose(p.evaluate(p.domain[0]), [0.0, 1.0], atol=1e-12)
    assert_allclose(p.evaluate(p.domain[1]), [2.0, 3.0], atol=1e-12)
    with pytest.raises(OutOfDomain):
        p.evaluate(p.domain[1] + 1)
    with pytest.raises(OutOfDomain):
        p.derivative(p.domain[0] - 1e-9)


def test_evaluate_shapes():
    p = build("linear", augment(make_series([0, 1, 2], [1.0, 2.0, 0.0])))
    assert p.evaluate(0.5).shape == (2,)
    assert p.evaluate(np.linspace(0, 2, 7)).shape == (7, 2)


def test_right_continuous_derivative():
    p = feature_path(build_linear, [0.0, 1.0, -1.0])
    assert_allclose(p.derivative(1.0), [-2.0])
    assert_allclose(p.piece_end_values(1)[0], [1.0])


@pytest.mark.parametrize("alias,name", [("natural", "natural_cubic"), ("cubic", "natural_cubic"),
                                        ("hermite", "hermite_backward"),
                                        ("rectilinear", "rectilinear")])
def test_scheme_aliases(alias, name):
    assert canonical_scheme(alias) == name


def test_unknown_scheme():
    with pytest.raises(ValueError):
        canonical_scheme("quadratic")


# ---------------------------------------------------------------------------
# properties

@st.composite
def irregular(draw, max_rows=15):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(2, max_rows))
    channels = draw(st.integers(1, 3))
    missing = draw(st.sampled_from([0.0, 0.25, 0.5]))
    return random_series(rng, n, channels, missing)


def _knot_errors(path, aug):
    """Largest gap between the path at its knots and the observed data there."""
    x = path.evaluate(path.knots)
    col = 1 if aug.include_time else 0
    err = 0.0
    if aug.include_time:
        err = np.abs(x[:, 0] - aug.timestamps).max()
    vals = x[:, col:col + aug.base.n_channels]
    err = max(err, np.abs(np.where(aug.mask, vals - aug.values, 0.0)).max())
    if aug.include_intensity:
        err = max(err, np.abs(x[:, col + aug.base.n_channels:] - aug.intensity).max())
    return err


@settings(max_examples=40, deadline=None)
@given(irregular(), st.sampled_from(SCHEMES), st.booleans())
def test_knot_exactness(raw, scheme, intensity):
    aug = augment(raw, include_intensity=intensity)
    assert _knot_errors(build(scheme, aug), aug) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(irregular(), st.sampled_from(SCHEMES))
def test_path_continuous(raw, scheme):
    p = build(scheme, augment(raw, include_intensity=True))
    left = p.piece_end_values(0)[:-1]
    right = p.coeffs[1:, :, 0]
    assert np.abs(left - right).max(initial=0.0) <= 1e-9 * (1 + np.abs(right).max(initial=0.0))


@settings(max_examples=40, deadline=None)
@given(irregular(), st.sampled_from(["hermite_backward", "natural_cubic"]))
def test_c1_schemes(raw, scheme):
    p = build(scheme, augment(raw, include_intensity=True))
    jumps = np.abs(p.piece_end_values(1)[:-1] - p.coeffs[1:, :, 1])
    assert jumps.max(initial=0.0) <= 1e-9
    if scheme == "natural_cubic":
        second = np.abs(p.piece_end_values(2)[:-1] - 2 * p.coeffs[1:, :, 2])
        assert second.max(initial=0.0) <= 1e-8
        assert np.abs(p.second_derivative(p.domain[0])).max() <= 1e-9
        assert np.abs(p.piece_end_values(2)[-1]).max() <= 1e-9


@settings(max_examples=40, deadline=None)
@given(irregular(), st.sampled_from(SCHEMES), st.sampled_from([0.5, 3.0, -2.0]))
def test_linear_in_data(raw, scheme, alpha):
    p = build(scheme, augment(raw, include_time=False))
    q = build(scheme, augment(raw.with_values(alpha * np.asarray(raw.values)), include_time=False))
    s = np.linspace(*p.domain, 33)
    assert_allclose(q.evaluate(s), alpha * p.evaluate(s), rtol=1e-12, atol=1e-12)
    assert_allclose(q.derivative(s), alpha * p.derivative(s), rtol=1e-12, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(irregular())
def test_rectilinear_monotone_coordinate(raw):
    mask = np.array(raw.mask)
    mask[:, 0] = True  # every row observed somewhere
    raw = type(raw)(raw.timestamps, raw.values, mask, raw.channel_names)
    p = build_rectilinear(augment(raw, include_intensity=True))
    v = raw.n_channels
    slopes = p.coeffs[:, :, 1]
    monotone = np.concatenate([slopes[:, :1], slopes[:, 1 + v:]], axis=1)
    assert np.all(monotone >= 0)
    assert np.all((monotone > 0).any(axis=1))


def test_regular_sampling_agreement(rng):
    x = rng.normal(size=(6, 2))
    raw = make_series(np.arange(6.0), x.tolist())
    lin = build("linear", augment(raw))
    rect = build("rectilinear", augment(raw))
    assert_allclose(rect.evaluate(rect.knots), lin.evaluate(lin.knots), atol=1e-15)


# ---------------------------------------------------------------------------
# reparameterisation

@pytest.mark.parametrize("scheme", SCHEMES)
def test_reparameterise_same_curve(scheme, rng):
    raw = random_series(rng, 7, 2, 0.2)
    p = build(scheme, augment(raw))
    new = np.cumsum(np.concatenate([[0.3], rng.uniform(0.2, 2.0, p.n_pieces)]))
    q = reparameterise(p, new)
    u = np.linspace(0, 1, 9)[:-1]
    for k in range(p.n_pieces):
        s_old = p.breakpoints[k] + u * (p.breakpoints[k + 1] - p.breakpoints[k])
        s_new = new[k] + u * (new[k + 1] - new[k])
        assert_allclose(q.evaluate(s_new), p.evaluate(s_old), atol=1e-12)
    assert_allclose(q.evaluate(q.knots), p.evaluate(p.knots), atol=1e-12)


def test_reparameterise_rejects_bad_breakpoints():
    p = feature_path(build_linear, [0.0, 1.0, 2.0])
    with pytest.raises(ShapeError):
        reparameterise(p, [0.0, 1.0])
    with pytest.raises(ShapeError):
        reparameterise(p, [0.0, 2.0, 1.0])
