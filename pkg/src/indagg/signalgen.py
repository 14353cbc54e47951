"""Seedable generation of labeled change-point signals.

A signal is pure stationary noise up to an (optional) change point, after
which one of three shifts applies: a variance shift (noise scale multiplied
by a factor), a mean shift (constant offset added) or a trend shift (linear
drift added). Datasets A, B and C are bundled presets that differ in noise
family and shift ranges.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeds import SIGNAL_STREAM, SeedLike, as_key

LENGTH_RANGE = (100, 200)


class ShiftClass(IntEnum):
    """Signal classes, in confusion-matrix row order."""

    NO_CHANGE = 0
    VARIANCE = 1
    MEAN = 2
    TREND = 3


@dataclass(frozen=True)
class NoiseModel:
    """Pre-change noise family.

    "gaussian" is i.i.d. standard normal. "scaled_student" draws one scale
    factor per signal uniformly from ``scale_range`` and multiplies i.i.d.
    Student-t(df) noise by it.
    """

    kind: str = "gaussian"
    df: int = 3
    scale_range: tuple[float, float] = (0.5, 3.0)

    def __post_init__(self) -> None:
        if self.kind not in ("gaussian", "scaled_student"):
            raise ValueError(f"unknown noise kind: {self.kind!r}")
        if self.kind == "scaled_student" and self.df < 1:
            raise ValueError("Student noise needs df >= 1")


@dataclass(frozen=True)
class DatasetSpec:
    """Shift ranges and class counts for one simulated dataset."""

    name: str
    noise: NoiseModel
    mean_shift_range: tuple[float, float]
    std_shift_range: tuple[float, float]
    slope_range: tuple[float, float]
    counts: tuple[int, int, int, int] = (3000, 1000, 1000, 1000)

    def __post_init__(self) -> None:
        if any(c < 0 for c in self.counts):
            raise ValueError("class counts must be non-negative")
        for lo, hi in (self.mean_shift_range, self.std_shift_range, self.slope_range):
            if not lo <= hi:
                raise ValueError("shift range must satisfy low <= high")


PRESETS = {
    "A": DatasetSpec(
        name="A",
        noise=NoiseModel("gaussian"),
        mean_shift_range=(1.01, 5.0),
        std_shift_range=(1.01, 5.0),
        slope_range=(0.02, 3.0),
    ),
    "B": DatasetSpec(
        name="B",
        noise=NoiseModel("gaussian"),
        mean_shift_range=(0.505, 2.5),
        std_shift_range=(1.01, 5.0),
        slope_range=(0.02, 3.0),
    ),
    "C": DatasetSpec(
        name="C",
        noise=NoiseModel("scaled_student", df=3, scale_range=(0.5, 3.0)),
        mean_shift_range=(0.3, 5.0),
        std_shift_range=(1.05, 5.0),
        slope_range=(0.02, 3.0),
    ),
}


def preset(name: str, scale: float = 1.0) -> DatasetSpec:
    """Bundled dataset preset, optionally with class counts scaled down."""
    key = name.strip().upper()
    if key not in PRESETS:
        raise ValueError(f"unknown dataset preset: {name!r} (expected one of A, B, C)")
    spec = PRESETS[key]
    if scale != 1.0:
        if not 0 < scale <= 1:
            raise ValueError("scale must be in (0, 1]")
        counts = tuple(max(4, round(c * scale)) for c in spec.counts)
        spec = replace(spec, counts=counts)
    return spec


@dataclass
class SignalRecord:
    """One simulated univariate series with its label and change point."""

    id: str
    values: np.ndarray
    label: ShiftClass
    change_point: int | None

    @property
    def n(self) -> int:
        return len(self.values)


def draw_length(rng: np.random.Generator) -> int:
    """Signal length, uniform on the integers 100..200."""
    return int(rng.integers(LENGTH_RANGE[0], LENGTH_RANGE[1] + 1))


def draw_change_point(rng: np.random.Generator, n: int) -> int:
    """Change-point index, uniform on [ceil(2n/10), floor(8n/10)]."""
    lo = (2 * n + 9) // 10
    hi = (8 * n) // 10
    return int(rng.integers(lo, hi + 1))


def generate_signal(
    rng: np.random.Generator,
    label: ShiftClass | int,
    spec: DatasetSpec,
    id: str = "",
) -> SignalRecord:
    """Generate one signal of the requested class.

    The draw order (length, change point, shift parameter, noise scale,
    noise values) is part of the reproducibility contract.
    """
    label = ShiftClass(label)
    n = draw_length(rng)
    tau = None if label == ShiftClass.NO_CHANGE else draw_change_point(rng, n)

    if label == ShiftClass.VARIANCE:
        shift = rng.uniform(*spec.std_shift_range)
    elif label == ShiftClass.MEAN:
        shift = rng.uniform(*spec.mean_shift_range)
    elif label == ShiftClass.TREND:
        shift = rng.uniform(*spec.slope_range)
    else:
        shift = 0.0

    if spec.noise.kind == "gaussian":
        values = rng.standard_normal(n)
    else:
        scale = rng.uniform(*spec.noise.scale_range)
        values = scale * rng.standard_t(spec.noise.df, n)

    if label == ShiftClass.VARIANCE:
        values[tau:] *= shift
    elif label == ShiftClass.MEAN:
        values[tau:] += shift
    elif label == ShiftClass.TREND:
        values[tau:] += shift * np.arange(n - tau, dtype=float)

    return SignalRecord(id=id, values=values, label=label, change_point=tau)


def generate_dataset(master_seed: SeedLike, spec: DatasetSpec) -> list[SignalRecord]:
    """Generate the full dataset, one independent substream per signal.

    Signal i draws from the stream (SIGNAL_STREAM, master_seed..., i), so
    the output does not depend on generation order or chunking.
    """
    if all(c == 0 for c in spec.counts):
        raise ValueError("dataset must contain at least one signal")
    key = as_key(master_seed)
    records = []
    index = 0
    for cls in ShiftClass:
        for _ in range(spec.counts[cls]):
            rng = np.random.default_rng((SIGNAL_STREAM, *key, index))
            rid = f"{spec.name}-{index:05d}"
            records.append(generate_signal(rng, cls, spec, id=rid))
            index += 1
    return records


class SignalFormatError(ValueError):
    """Malformed signals file; carries the 1-based offending line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def signal_to_json(record: SignalRecord) -> str:
    """One JSON object per signal; floats carry 17 significant digits."""
    vals = ",".join(format(v, ".17g") for v in record.values)
    cp = "null" if record.change_point is None else str(record.change_point)
    rid = json.dumps(record.id)
    return f'{{"id":{rid},"label":{int(record.label)},"change_point":{cp},"values":[{vals}]}}'


def write_signals(records: Iterable[SignalRecord], path: str | Path) -> None:
    """Write signals as JSON lines."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(signal_to_json(rec))
            fh.write("\n")


def _parse_signal_line(line: str, line_no: int) -> SignalRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SignalFormatError(line_no, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise SignalFormatError(line_no, "expected a JSON object")
    missing = {"id", "label", "change_point", "values"} - obj.keys()
    if missing:
        raise SignalFormatError(line_no, f"missing keys: {sorted(missing)}")
    try:
        label = ShiftClass(obj["label"])
    except ValueError as exc:
        raise SignalFormatError(line_no, f"label must be 0..3, got {obj['label']!r}") from exc
    cp = obj["change_point"]
    if (cp is None) != (label == ShiftClass.NO_CHANGE):
        raise SignalFormatError(line_no, "change_point must be null exactly for label 0")
    values = np.asarray(obj["values"], dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise SignalFormatError(line_no, "values must be a non-empty flat list")
    if not np.all(np.isfinite(values)):
        raise SignalFormatError(line_no, "values must all be finite")
    return SignalRecord(
        id=str(obj["id"]),
        values=values,
        label=label,
        change_point=None if cp is None else int(cp),
    )


def read_signals(path: str | Path) -> list[SignalRecord]:
    """Read a JSON-lines signals file; errors name the offending line."""
    records = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            records.append(_parse_signal_line(line, line_no))
    return records


def labels_of(records: Sequence[SignalRecord]) -> np.ndarray:
    """Per-record class codes as an int array."""
    return np.array([int(r.label) for r in records], dtype=np.int64)
