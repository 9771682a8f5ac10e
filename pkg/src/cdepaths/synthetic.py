"""Seeded synthetic datasets: random irregular series and the spiral-direction task."""

from __future__ import annotations

import numpy as np

from .series import Dataset, RawSeries, split


def random_series(rng, n_rows, n_channels=1, missing_rate=0.0, min_observed=2, time_scale=1.0,
                  names=None) -> RawSeries:
    """Irregularly timed random-walk series with entries dropped at random.

    Every channel keeps at least ``min(min_observed, n_rows)`` observations so
    that every interpolation scheme can be built.
    """
    gaps = rng.uniform(0.1, 1.0, size=n_rows - 1) * time_scale
    t = np.concatenate([[rng.uniform(0.0, 1.0) * time_scale], gaps]).cumsum()
    values = np.cumsum(rng.normal(size=(n_rows, n_channels)), axis=0)
    mask = rng.random((n_rows, n_channels)) >= missing_rate
    keep = min(min_observed, n_rows)
    for c in range(n_channels):
        short = keep - int(mask[:, c].sum())
        if short > 0:
            hidden = np.flatnonzero(~mask[:, c])
            mask[rng.choice(hidden, size=short, replace=False), c] = True
    values = np.where(mask, values, 0.0)
    names = names or tuple(f"x{c}" for c in range(n_channels))
    return RawSeries(t, values, mask, tuple(names))


def random_dataset(rng, n_samples, n_rows, n_channels=1, missing_rate=0.0, include_intensity=True):
    """Random series labelled by the sign of the first channel's last observation."""
    raws = [random_series(rng, n_rows, n_channels, missing_rate) for _ in range(n_samples)]
    labels = np.array([float(r.values[r.mask[:, 0], 0][-1] > 0) for r in raws])
    return Dataset.from_raw(raws, labels, include_time=True, include_intensity=include_intensity)


def spiral(rng, clockwise, n_full=100, n_keep=30, turns=1.5, noise=0.02):
    """One spiral sampled at ``n_keep`` random points of a regular ``n_full`` grid."""
    t_full = np.linspace(0.0, 1.0, n_full)
    keep = np.sort(rng.choice(n_full, size=n_keep, replace=False))
    t = t_full[keep]
    phase = rng.uniform(0.0, 2 * np.pi)
    r0 = rng.uniform(0.6, 1.4)
    sign = -1.0 if clockwise else 1.0
    angle = phase + sign * 2 * np.pi * turns * t
    radius = r0 * (1.0 - 0.6 * t)
    xy = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    xy = xy + noise * rng.normal(size=xy.shape)
    return RawSeries(t, xy, np.ones_like(xy, dtype=bool), ("x", "y"))


def spiral_dataset(n_samples=500, seed=0, n_full=100, n_keep=30, ratios=(0.7, 0.15, 0.15)):
    """Balanced clockwise (label 1) versus anticlockwise (label 0) spirals, split."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % 2
    raws = [spiral(rng, bool(lab), n_full, n_keep) for lab in labels]
    ds = Dataset.from_raw(raws, labels.astype(float), include_time=True, include_intensity=False)
    return split(ds, ratios, seed=seed, stratify_labels=True)
