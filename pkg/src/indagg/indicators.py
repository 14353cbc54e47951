"""Binary indicators: grid expansion, sliding windows, aggregation, featurization.

An indicator is (test, level, window plan, aggregator). The test runs on a
sliding window split into two halves; each position yields a reject/accept
bit at the given level, and the aggregator reduces those bits to one bit per
signal. Confirmation aggregators (rate, run, k-of-n) demand repeated
rejections before firing.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .signalgen import SignalRecord, labels_of
from .stattests import TestKind, batch_pvalues

SMOOTH_WIDTH = 5
_RATE_EPS = 1e-9  # absorbs float noise in beta*m so the >= boundary is exact


@dataclass(frozen=True)
class WindowPlan:
    """Sliding-window layout for one indicator.

    ``window_len`` is the requested total window size W; when ``adaptive``
    is set the effective size on a signal of length n is min(W, n - 2).
    ``overlap`` is the number of observations shared by consecutive windows
    (None means W - 1, i.e. stride 1). Windows are split into halves of
    floor(W/2); ``smoothed`` plans run on a width-5 trailing moving average.
    """

    window_len: int
    overlap: int | None = None
    smoothed: bool = False
    adaptive: bool = False

    def __post_init__(self) -> None:
        if self.window_len < 4:
            raise ValueError("window length must be at least 4")
        if self.overlap is not None and not 0 <= self.overlap <= self.window_len - 1:
            raise ValueError("overlap must be in [0, W-1]")

    def effective(self, n: int) -> tuple[int, int]:
        """(effective window, stride) on a signal of length n."""
        w = min(self.window_len, n - 2) if self.adaptive else self.window_len
        o = w - 1 if self.overlap is None else self.overlap
        return w, w - o


@dataclass(frozen=True)
class Aggregator:
    """Reduction of a rejection sequence to a single bit.

    kind "any": fires if any position rejects. "rate": at least beta*m of
    the m positions reject. "run": a run of at least beta*m consecutive
    rejections. "kofn": some n_conf consecutive positions contain at least
    k rejections (shorter sequences use the whole sequence).
    """

    kind: str
    beta: float | None = None
    k: int | None = None
    n_conf: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("any", "rate", "run", "kofn"):
            raise ValueError(f"unknown aggregator kind: {self.kind!r}")
        if self.kind in ("rate", "run"):
            if self.beta is None or not 0.0 < self.beta <= 1.0:
                raise ValueError("rate/run aggregators need beta in (0, 1]")
        if self.kind == "kofn":
            if self.k is None or self.n_conf is None or not 1 <= self.k <= self.n_conf:
                raise ValueError("kofn aggregator needs 1 <= k <= n_conf")

    @property
    def code(self) -> str:
        if self.kind == "any":
            return "any"
        if self.kind == "kofn":
            return f"conf{self.k}of{self.n_conf}"
        return f"{self.kind}{self.beta:g}"


def _parse_aggregator(code: str) -> Aggregator:
    if code == "any":
        return Aggregator("any")
    if code.startswith("conf"):
        k, n = code[4:].split("of")
        return Aggregator("kofn", k=int(k), n_conf=int(n))
    for kind in ("rate", "run"):
        if code.startswith(kind):
            return Aggregator(kind, beta=float(code[len(kind):]))
    raise ValueError(f"cannot parse aggregator code: {code!r}")


@dataclass(frozen=True)
class IndicatorSpec:
    """One parameterized binary detector."""

    test: TestKind
    alpha: float
    window: WindowPlan
    aggregator: Aggregator

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")

    @property
    def id(self) -> str:
        w = self.window
        wcode = f"wmin{w.window_len}" if w.adaptive else f"w{w.window_len}"
        ocode = "odense" if w.overlap is None else f"o{w.overlap}"
        scode = "sma5" if w.smoothed else "raw"
        return ":".join(
            [self.test.value, wcode, f"a{self.alpha:g}", self.aggregator.code, ocode, scode]
        )


def parse_indicator_id(text: str) -> IndicatorSpec:
    """Inverse of IndicatorSpec.id."""
    try:
        tcode, wcode, acode, gcode, ocode, scode = text.split(":")
        test = TestKind(tcode)
        adaptive = wcode.startswith("wmin")
        wlen = int(wcode[4:] if adaptive else wcode[1:])
        alpha = float(acode[1:])
        agg = _parse_aggregator(gcode)
        overlap = None if ocode == "odense" else int(ocode[1:])
        smoothed = {"sma5": True, "raw": False}[scode]
    except (ValueError, KeyError) as exc:
        raise ValueError(f"cannot parse indicator id: {text!r}") from exc
    window = WindowPlan(wlen, overlap=overlap, smoothed=smoothed, adaptive=adaptive)
    return IndicatorSpec(test=test, alpha=alpha, window=window, aggregator=agg)


# ---------------------------------------------------------------------------
# windowing


def moving_average(values, width: int):
    """Trailing moving average; output length is n - width + 1."""
    values = np.asarray(values, dtype=float)
    if width < 1:
        raise ValueError("width must be >= 1")
    if values.size < width:
        raise ValueError(f"sequence of length {values.size} shorter than width {width}")
    return np.lib.stride_tricks.sliding_window_view(values, width).mean(axis=1)


def window_positions(n: int, plan: WindowPlan) -> list[tuple[int, int]]:
    """(start, center) pairs; empty when the signal is shorter than the window."""
    w, s = plan.effective(n)
    if w < 4 or n < w:
        return []
    if s < 1:
        raise ValueError("overlap leaves no room to slide (stride < 1)")
    return [(start, start + w // 2) for start in range(0, n - w + 1, s)]


def _window_halves(x: np.ndarray, w: int, starts: np.ndarray):
    """Left/right half matrices for the windows starting at ``starts``."""
    h = w // 2
    view = np.lib.stride_tricks.sliding_window_view(x, w)[starts]
    return view[:, :h], view[:, w - h:]


def _dense_pvalues(x: np.ndarray, test: TestKind, w: int) -> np.ndarray:
    """p-values at every stride-1 position of a length-w window over x."""
    starts = np.arange(0, len(x) - w + 1)
    left, right = _window_halves(x, w, starts)
    _, p, _ = batch_pvalues(test, left, right)
    return p


def rejection_sequence(values, test: TestKind, alpha: float, plan: WindowPlan) -> np.ndarray:
    """Per-position reject bits (p < alpha) for one signal under one plan."""
    x = np.asarray(values, dtype=float)
    if plan.smoothed:
        x = moving_average(x, SMOOTH_WIDTH)
    positions = window_positions(len(x), plan)
    if not positions:
        return np.zeros(0, dtype=np.uint8)
    w, _ = plan.effective(len(x))
    starts = np.array([s for s, _ in positions])
    left, right = _window_halves(x, w, starts)
    _, p, _ = batch_pvalues(test, left, right)
    return (p < alpha).astype(np.uint8)


# ---------------------------------------------------------------------------
# aggregation


def _longest_run(bits: np.ndarray) -> int:
    if bits.size == 0:
        return 0
    padded = np.concatenate([[0], bits, [0]])
    edges = np.diff(padded)
    starts = np.flatnonzero(edges == 1)
    if starts.size == 0:
        return 0
    ends = np.flatnonzero(edges == -1)
    return int((ends - starts).max())


def _max_window_count(bits: np.ndarray, width: int) -> int:
    if bits.size <= width:
        return int(bits.sum())
    cum = np.concatenate([[0], np.cumsum(bits)])
    return int((cum[width:] - cum[:-width]).max())


def aggregate(seq, agg: Aggregator) -> int:
    """Reduce a rejection sequence to one bit; empty sequences yield 0."""
    bits = np.asarray(seq, dtype=np.uint8)
    m = bits.size
    if m == 0:
        return 0
    if agg.kind == "any":
        return int(bits.any())
    if agg.kind == "rate":
        return int(int(bits.sum()) >= agg.beta * m - _RATE_EPS)
    if agg.kind == "run":
        return int(_longest_run(bits) >= agg.beta * m - _RATE_EPS)
    return int(_max_window_count(bits, agg.n_conf) >= agg.k)


# ---------------------------------------------------------------------------
# grids

GRID_PRESETS: dict[str, dict] = {
    "AB": {
        "tests": ["u", "ks", "f"],
        "windows": [30, 50, "min100"],
        "alphas": [0.005, 0.1, 0.5],
        "smoothing": [False, True],
        "aggregators": {
            "any": True,
            "rate": {"betas": [0.1, 0.3, 0.5], "overlaps": ["dense", 5, 10]},
            "run": {"betas": [0.1, 0.3, 0.5], "overlaps": ["dense", 5, 10]},
            "kofn": {"k": [2, 3, 4], "n": [3, 5]},
        },
    },
}
GRID_PRESETS["C"] = {
    **GRID_PRESETS["AB"],
    "tests": ["u", "ks", "f", "tp", "tw", "ss", "sc"],
}
GRID_PRESETS["CM"] = {
    **GRID_PRESETS["C"],
    "aggregators": {"any": True},
}


def _parse_window(value) -> tuple[int, bool]:
    if isinstance(value, int):
        return value, False
    if isinstance(value, str) and value.startswith("min"):
        return int(value[3:]), True
    raise ValueError(f"cannot parse window size: {value!r}")


def build_grid(preset) -> list[IndicatorSpec]:
    """Expand a preset name or declarative config into indicator specs.

    Column order: test, window, alpha, aggregator variant, smoothing.
    The kofn cross product skips pairs with k > n.
    """
    cfg = GRID_PRESETS[preset.strip().upper()] if isinstance(preset, str) else preset
    aggs = cfg["aggregators"]
    variants: list[tuple[Aggregator, int | None]] = []
    if aggs.get("any"):
        variants.append((Aggregator("any"), None))
    for kind in ("rate", "run"):
        sub = aggs.get(kind)
        if not sub:
            continue
        for beta in sub["betas"]:
            for ov in sub["overlaps"]:
                variants.append((Aggregator(kind, beta=beta), None if ov == "dense" else int(ov)))
    if aggs.get("kofn"):
        for n_conf in aggs["kofn"]["n"]:
            for k in aggs["kofn"]["k"]:
                if k <= n_conf:
                    variants.append((Aggregator("kofn", k=k, n_conf=n_conf), None))

    specs = []
    for tcode in cfg["tests"]:
        test = TestKind(tcode)
        for wvalue in cfg["windows"]:
            wlen, adaptive = _parse_window(wvalue)
            for alpha in cfg["alphas"]:
                for agg, overlap in variants:
                    for smoothed in cfg["smoothing"]:
                        window = WindowPlan(wlen, overlap=overlap, smoothed=smoothed, adaptive=adaptive)
                        specs.append(IndicatorSpec(test, alpha, window, agg))
    ids = [s.id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("grid contains duplicate indicator ids")
    return specs


def load_grid(path: str | Path) -> list[IndicatorSpec]:
    """Build a grid from a declarative JSON config file."""
    with open(path) as fh:
        return build_grid(json.load(fh))


def save_grid_config(preset_name: str, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(GRID_PRESETS[preset_name.strip().upper()], fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# featurization


@dataclass
class IndicatorMatrix:
    """Signals x indicators bit matrix with labels."""

    specs: list[IndicatorSpec]
    bits: np.ndarray  # (n_signals, n_specs) uint8
    labels: np.ndarray  # (n_signals,) int64
    signal_ids: list[str]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.specs]

    def select_columns(self, columns: Sequence[int]) -> "IndicatorMatrix":
        cols = list(columns)
        return IndicatorMatrix(
            specs=[self.specs[c] for c in cols],
            bits=self.bits[:, cols].copy(),
            labels=self.labels,
            signal_ids=self.signal_ids,
        )

    def select_rows(self, rows) -> "IndicatorMatrix":
        rows = np.asarray(rows)
        return IndicatorMatrix(
            specs=self.specs,
            bits=self.bits[rows],
            labels=self.labels[rows],
            signal_ids=[self.signal_ids[i] for i in rows],
        )


def _group_specs(specs: Sequence[IndicatorSpec]):
    """Nested grouping so p-values are computed once per (test, window, smoothing).

    Returns {(test, wlen, adaptive, smoothed): {overlap: {alpha: [(col, agg)]}}}.
    """
    groups: dict = {}
    for col, spec in enumerate(specs):
        w = spec.window
        key = (spec.test, w.window_len, w.adaptive, w.smoothed)
        groups.setdefault(key, {}).setdefault(w.overlap, {}).setdefault(spec.alpha, []).append(
            (col, spec.aggregator)
        )
    return groups


def _featurize_row(values: np.ndarray, groups, n_cols: int) -> np.ndarray:
    row = np.zeros(n_cols, dtype=np.uint8)
    smoothed_cache: np.ndarray | None = None
    for (test, wlen, adaptive, smoothed), overlaps in groups.items():
        if smoothed:
            if smoothed_cache is None:
                smoothed_cache = moving_average(values, SMOOTH_WIDTH)
            x = smoothed_cache
        else:
            x = values
        plan = WindowPlan(wlen, overlap=None, smoothed=False, adaptive=adaptive)
        w, _ = plan.effective(len(x))
        if w < 4 or len(x) < w:
            continue  # no positions; all bits in this group stay 0
        dense_p = _dense_pvalues(x, test, w)
        for overlap, alphas in overlaps.items():
            stride = 1 if overlap is None else w - overlap
            p = dense_p[::stride]
            m = p.size
            for alpha, entries in alphas.items():
                bits = (p < alpha).astype(np.uint8)
                count = int(bits.sum())
                run = None
                win_counts: dict[int, int] = {}
                for col, agg in entries:
                    if agg.kind == "any":
                        row[col] = count >= 1
                    elif agg.kind == "rate":
                        row[col] = count >= agg.beta * m - _RATE_EPS
                    elif agg.kind == "run":
                        if run is None:
                            run = _longest_run(bits)
                        row[col] = run >= agg.beta * m - _RATE_EPS
                    else:
                        if agg.n_conf not in win_counts:
                            win_counts[agg.n_conf] = _max_window_count(bits, agg.n_conf)
                        row[col] = win_counts[agg.n_conf] >= agg.k
    return row


def _featurize_chunk(values_list: list[np.ndarray], groups, n_cols: int):
    return [_featurize_row(v, groups, n_cols) for v in values_list]


def featurize(
    records: Sequence[SignalRecord],
    specs: Sequence[IndicatorSpec],
    cache: bool = True,
    jobs: int = 1,
) -> IndicatorMatrix:
    """Evaluate every indicator on every signal.

    With ``cache`` (default), p-values for one (test, window, smoothing)
    combination are computed once per signal and shared across levels,
    strides and aggregators; ``cache=False`` evaluates each column
    independently and must produce the identical matrix. ``jobs`` splits
    rows across processes without changing the output.
    """
    if not specs:
        raise ValueError("specs must be non-empty")
    specs = list(specs)
    n_cols = len(specs)
    if not cache:
        rows = []
        for rec in records:
            row = np.zeros(n_cols, dtype=np.uint8)
            for col, spec in enumerate(specs):
                row[col] = aggregate(
                    rejection_sequence(rec.values, spec.test, spec.alpha, spec.window),
                    spec.aggregator,
                )
            rows.append(row)
        bits = np.vstack(rows) if rows else np.zeros((0, n_cols), np.uint8)
        return IndicatorMatrix(specs, bits, labels_of(records), [r.id for r in records])

    groups = _group_specs(specs)
    values = [np.asarray(r.values, dtype=float) for r in records]
    if jobs <= 1 or len(records) < 4:
        rows = [_featurize_row(v, groups, n_cols) for v in values]
    else:
        chunk = max(1, (len(values) + jobs - 1) // jobs)
        pieces = [values[i : i + chunk] for i in range(0, len(values), chunk)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_featurize_chunk, piece, groups, n_cols) for piece in pieces]
            rows = [row for fut in futures for row in fut.result()]
    bits = np.vstack(rows) if rows else np.zeros((0, n_cols), np.uint8)
    return IndicatorMatrix(specs, bits, labels_of(records), [r.id for r in records])


# ---------------------------------------------------------------------------
# matrix serialization


def write_matrix(matrix: IndicatorMatrix, path: str | Path) -> None:
    """CSV with header "id,label,<indicator ids...>" and 0/1 cells."""
    n, p = matrix.bits.shape
    body = np.empty((n, 2 * p), dtype=np.uint8)
    body[:, ::2] = matrix.bits + ord("0")
    body[:, 1::2] = ord(",")
    with open(path, "w") as fh:
        fh.write("id,label," + ",".join(matrix.ids) + "\n")
        for i in range(n):
            fh.write(f"{matrix.signal_ids[i]},{matrix.labels[i]},")
            fh.write(body[i, : 2 * p - 1].tobytes().decode("ascii"))
            fh.write("\n")


def read_matrix(path: str | Path) -> IndicatorMatrix:
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:2] != ["id", "label"]:
            raise ValueError("matrix CSV must start with id,label columns")
        specs = [parse_indicator_id(t) for t in header[2:]]
        p = len(specs)
        ids, labels, rows = [], [], []
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            sid, label, rest = line.split(",", 2)
            ids.append(sid)
            labels.append(int(label))
            bits = np.frombuffer(rest.replace(",", "").encode("ascii"), dtype=np.uint8) - ord("0")
            if bits.size != p:
                raise ValueError(f"row for signal {sid!r} has {bits.size} bits, expected {p}")
            rows.append(bits)
    bits = np.vstack(rows) if rows else np.zeros((0, p), np.uint8)
    return IndicatorMatrix(specs, bits.astype(np.uint8), np.array(labels, dtype=np.int64), ids)
