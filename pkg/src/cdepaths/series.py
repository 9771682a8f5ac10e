"""Irregular, partially observed time series.

A :class:`RawSeries` pairs a value matrix with an explicit observation mask.
Masked-out cells hold :data:`MISSING` and nothing downstream reads them; the
mask is the only source of truth for what was observed.

:func:`augment` adds the two derived quantities every control path needs:
the forward fill of each channel and the per-channel observation count
("intensity").
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections.abc import Sequence
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import BadRatios, EmptySplit, IoError, ParseError, ShapeError, TooShort

#: Value stored in unobserved cells. Never interpreted numerically.
MISSING = 0.0

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


@dataclass(frozen=True, eq=False)
class RawSeries:
    """Observation times, values and mask of one time series.

    Attributes
    ----------
    timestamps : (n+1,) float array, strictly increasing.
    values : (n+1, v) float array; cells with ``mask == False`` hold MISSING.
    mask : (n+1, v) bool array, True where observed. A row may be entirely
        unobserved: the time is known but every feature is missing.
    channel_names : tuple of v labels.
    """

    timestamps: np.ndarray
    values: np.ndarray
    mask: np.ndarray
    channel_names: tuple = ()

    def __post_init__(self):
        t = np.array(self.timestamps, dtype=float).reshape(-1)
        x = np.array(self.values, dtype=float)
        m = np.array(self.mask, dtype=bool)
        if x.ndim == 1:
            x = x[:, None]
        if m.ndim == 1:
            m = m[:, None]
        if x.shape != m.shape or x.shape[0] != t.shape[0]:
            raise ShapeError(
                f"timestamps {t.shape}, values {x.shape} and mask {m.shape} disagree"
            )
        if t.shape[0] < 2:
            raise TooShort(f"need at least 2 observation times, got {t.shape[0]}")
        if not np.all(np.isfinite(t)):
            raise ParseError("non-finite timestamp")
        bad = np.flatnonzero(np.diff(t) <= 0)
        if bad.size:
            raise ParseError("timestamps must be strictly increasing", row=int(bad[0]) + 2)
        x = np.where(m, x, MISSING)
        if not np.all(np.isfinite(x)):
            raise ParseError("non-finite observed value")
        names = tuple(self.channel_names) or tuple(f"x{j}" for j in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise ShapeError(f"{len(names)} channel names for {x.shape[1]} channels")
        for arr in (t, x, m):
            arr.setflags(write=False)
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "values", x)
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "channel_names", names)

    @property
    def n(self) -> int:
        """Index of the last observation (there are n+1 rows)."""
        return self.timestamps.shape[0] - 1

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def gaps(self) -> np.ndarray:
        """Inter-observation intervals t[i+1] - t[i]."""
        return np.diff(self.timestamps)

    @property
    def fully_observed(self) -> bool:
        return bool(self.mask.all())

    def with_values(self, values) -> RawSeries:
        return RawSeries(self.timestamps, values, self.mask, self.channel_names)

    def __eq__(self, other):
        if not isinstance(other, RawSeries):
            return NotImplemented
        return (
            self.channel_names == other.channel_names
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
        )


@dataclass(frozen=True, eq=False)
class AugmentedSeries:
    """A RawSeries plus forward fill and cumulative observation counts."""

    base: RawSeries
    filled_values: np.ndarray
    intensity: np.ndarray
    include_time: bool = True
    include_intensity: bool = False

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def timestamps(self) -> np.ndarray:
        return self.base.timestamps

    @property
    def values(self) -> np.ndarray:
        return self.base.values

    @property
    def mask(self) -> np.ndarray:
        return self.base.mask

    @property
    def out_dim(self) -> int:
        """Number of channels a control path built from this series will carry."""
        v = self.base.n_channels
        return int(self.include_time) + v + (v if self.include_intensity else 0)

    @property
    def channel_labels(self) -> tuple:
        labels = ("time",) if self.include_time else ()
        labels += self.base.channel_names
        if self.include_intensity:
            labels += tuple(f"count_{c}" for c in self.base.channel_names)
        return labels


def forward_fill(values, mask, fill_value=0.0) -> np.ndarray:
    """Last-observation-carried-forward along axis 0.

    Cells before a channel's first observation get ``fill_value``.
    """
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    rows = np.arange(values.shape[0])[:, None]
    last = np.maximum.accumulate(np.where(mask, rows, -1), axis=0)
    cols = np.broadcast_to(np.arange(values.shape[1]), values.shape)
    filled = values[np.maximum(last, 0), cols]
    return np.where(last >= 0, filled, fill_value)


def augment(raw: RawSeries, include_intensity: bool = False, include_time: bool = True,
            fill_value: float = 0.0) -> AugmentedSeries:
    filled = forward_fill(raw.values, raw.mask, fill_value)
    intensity = np.cumsum(raw.mask, axis=0)
    filled.setflags(write=False)
    intensity.setflags(write=False)
    return AugmentedSeries(raw, filled, intensity, bool(include_time), bool(include_intensity))


# ---------------------------------------------------------------------------
# CSV

def parse_csv(text) -> RawSeries:
    """Read ``time,<ch1>,...`` CSV text (or a file object). Empty cells are missing."""
    if not isinstance(text, str):
        text = text.read()
    rows = list(csv.reader(io.StringIO(text)))
    while rows and not any(cell.strip() for cell in rows[-1]):
        rows.pop()
    if not rows:
        raise TooShort("empty input")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0].lower() != "time":
        raise ParseError("header must be 'time,<channel>,...'", row=0)
    v = len(header) - 1
    body = rows[1:]
    if len(body) < 2:
        raise TooShort(f"need at least 2 data rows, got {len(body)}")

    times = np.empty(len(body))
    values = np.full((len(body), v), MISSING)
    mask = np.zeros((len(body), v), dtype=bool)
    for r, row in enumerate(body, start=1):
        if len(row) != v + 1:
            raise ParseError(f"expected {v + 1} cells, got {len(row)}", row=r)
        times[r - 1] = _parse_number(row[0], r, 0, allow_empty=False)
        if r > 1 and times[r - 1] <= times[r - 2]:
            raise ParseError("timestamps must be strictly increasing", row=r)
        for c, cell in enumerate(row[1:], start=1):
            val = _parse_number(cell, r, c, allow_empty=True)
            if val is not None:
                values[r - 1, c - 1] = val
                mask[r - 1, c - 1] = True
    return RawSeries(times, values, mask, tuple(header[1:]))


def _parse_number(cell, row, col, allow_empty):
    cell = cell.strip()
    if cell == "" or cell.lower() == "nan":
        if allow_empty:
            return None
        raise ParseError("missing timestamp", row=row, col=col)
    try:
        val = float(cell)
    except ValueError:
        raise ParseError(f"non-numeric cell {cell!r}", row=row, col=col) from None
    if not math.isfinite(val):
        raise ParseError(f"non-finite cell {cell!r}", row=row, col=col)
    return val


def emit_csv(raw: RawSeries) -> str:
    """Inverse of :func:`parse_csv`; floats are written round-trip exact."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("time",) + raw.channel_names)
    for t, x, m in zip(raw.timestamps, raw.values, raw.mask):
        writer.writerow([repr(float(t))] + [repr(float(a)) if ok else "" for a, ok in zip(x, m)])
    return out.getvalue()


def read_text(path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from exc


def read_csv(path) -> RawSeries:
    return parse_csv(read_text(path))


# ---------------------------------------------------------------------------
# Datasets

@dataclass(frozen=True)
class Dataset:
    """Labelled collection of augmented series with split tags.

    ``normalization_stats`` is ``(mean, std)`` per feature channel once
    :func:`normalize` has been applied, else None.
    """

    samples: tuple
    labels: np.ndarray
    split_assignment: tuple = ()
    normalization_stats: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        object.__setattr__(self, "labels", np.asarray(self.labels))
        object.__setattr__(self, "split_assignment", tuple(self.split_assignment))
        if len(self.labels) != len(self.samples):
            raise ShapeError(f"{len(self.labels)} labels for {len(self.samples)} samples")
        if self.split_assignment and len(self.split_assignment) != len(self.samples):
            raise ShapeError("split_assignment length differs from sample count")
        unknown = set(self.split_assignment) - set(SPLITS)
        if unknown:
            raise ShapeError(f"unknown split tags {sorted(unknown)}")

    def __len__(self):
        return len(self.samples)

    def indices(self, name: str) -> np.ndarray:
        return np.array([i for i, s in enumerate(self.split_assignment) if s == name], dtype=int)

    def subset(self, name: str):
        """(samples, labels) belonging to one split."""
        idx = self.indices(name)
        return [self.samples[i] for i in idx], self.labels[idx]

    @classmethod
    def from_raw(cls, raws: Sequence[RawSeries], labels, include_time=True,
                 include_intensity=False, split_assignment=()):
        samples = [augment(r, include_intensity=include_intensity, include_time=include_time)
                   for r in raws]
        return cls(samples, labels, split_assignment)


def split(dataset: Dataset, ratios=DEFAULT_RATIOS, seed: int = 0,
          stratify_labels: bool = False) -> Dataset:
    """Assign train/val/test tags.

    Each stratum (one per class label when ``stratify_labels``, else the whole
    dataset) is shuffled with ``numpy.random.default_rng(seed)`` and cut into
    consecutive blocks. Block sizes take ``floor(ratio * size)`` and hand the
    leftover samples to the splits with the largest fractional parts, earlier
    splits winning ties.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be three non-negative fractions summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    n = len(dataset)
    if stratify_labels:
        keys = [_label_key(lab) for lab in dataset.labels]
        strata = {}
        for i, k in enumerate(keys):
            strata.setdefault(k, []).append(i)
        groups = [np.array(strata[k]) for k in sorted(strata)]
    else:
        groups = [np.arange(n)]

    assignment = [None] * n
    for members in groups:
        members = members[rng.permutation(len(members))]
        counts = _block_sizes(len(members), ratios)
        start = 0
        for name, c in zip(SPLITS, counts):
            for i in members[start:start + c]:
                assignment[i] = name
            start += c
    return replace(dataset, split_assignment=tuple(assignment))


def _label_key(label):
    arr = np.asarray(label)
    return arr.item() if arr.ndim == 0 else tuple(arr.ravel().tolist())


def _block_sizes(size, ratios):
    exact = [r * size for r in ratios]
    counts = [math.floor(e + 1e-9) for e in exact]
    leftover = size - sum(counts)
    order = sorted(range(3), key=lambda k: (-(exact[k] - counts[k]), k))
    for k in order[:leftover]:
        counts[k] += 1
    return counts


def channel_stats(samples: Sequence[AugmentedSeries]):
    """Mean and (population) std per channel over observed cells only."""
    values = np.concatenate([s.values for s in samples], axis=0)
    mask = np.concatenate([s.mask for s in samples], axis=0)
    count = mask.sum(axis=0)
    safe = np.maximum(count, 1)
    mean = np.where(mask, values, 0.0).sum(axis=0) / safe
    var = np.where(mask, (values - mean) ** 2, 0.0).sum(axis=0) / safe
    std = np.sqrt(var)
    return mean, std


def normalize(dataset: Dataset, degenerate: float = 1e-12) -> Dataset:
    """Standardise observed cells with statistics of the train split.

    Channels whose train std is below ``degenerate`` are only centred.
    Leading gaps in the forward fill become 0, i.e. the train mean.
    """
    train, _ = dataset.subset("train") if dataset.split_assignment else ([], None)
    if not train:
        raise EmptySplit("normalization needs a non-empty train split")
    mean, std = channel_stats(train)
    scale = np.where(std < degenerate, 1.0, std)
    samples = []
    for s in dataset.samples:
        raw = s.base.with_values((s.values - mean) / scale)
        samples.append(augment(raw, s.include_intensity, s.include_time))
    return replace(dataset, samples=tuple(samples), normalization_stats=(mean, std))


# ---------------------------------------------------------------------------
# Manifests

def load_manifest(path) -> tuple[Dataset, dict]:
    """Load ``{"samples": [{"file", "label", "split"?}], ...}``.

    Relative sample paths resolve against the manifest's directory. Returns
    the dataset (unaugmented settings: time on, intensity per manifest key
    ``include_intensity``) and the raw manifest dict.
    """
    path = Path(path)
    try:
        doc = json.loads(read_text(path))
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc.msg}", row=exc.lineno) from exc
    entries = doc.get("samples")
    if not isinstance(entries, list) or not entries:
        raise ParseError("manifest needs a non-empty 'samples' list")
    raws, labels, tags = [], [], []
    for k, entry in enumerate(entries):
        unknown = set(entry) - {"file", "label", "split"}
        if unknown:
            raise ParseError(f"unknown manifest keys {sorted(unknown)}", row=k)
        file = Path(entry["file"])
        if not file.is_absolute():
            file = path.parent / file
        raws.append(read_csv(file))
        labels.append(entry["label"])
        if "split" in entry:
            tags.append(entry["split"])
    if tags and len(tags) != len(raws):
        raise ParseError("either every manifest entry has a split tag or none does")
    ds = Dataset.from_raw(raws, np.asarray(labels),
                          include_time=doc.get("include_time", True),
                          include_intensity=doc.get("include_intensity", False),
                          split_assignment=tags)
    return ds, doc


def save_manifest(path, files: Sequence, labels, split_assignment=(), **extra) -> None:
    entries = []
    for k, (f, lab) in enumerate(zip(files, labels)):
        entry = {"file": str(f), "label": np.asarray(lab).tolist()}
        if split_assignment:
            entry["split"] = split_assignment[k]
        entries.append(entry)
    doc = dict(extra, samples=entries)
    Path(path).write_text(json.dumps(doc, indent=2), encoding="utf-8")
