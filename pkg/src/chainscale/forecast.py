"""One-step-ahead workload and delay prediction.

The predictor is the classic mean-reverting AR(1) form

    prediction = mu + phi * (u_t - mu)

where ``mu`` is the mean over a sliding window of per-interval averages and
``u_t`` is the newest interval's average. ``phi`` is fitted as the lag-1
autocorrelation of the sample stream retained in the window, clipped to
[0, 1]; when a series carries the raw sub-interval reports the fit runs on
those (a persistent level shift then drives phi toward 1 and the prediction
tracks the shift within one interval), otherwise it falls back to the
per-interval values themselves.
"""

from collections import deque

from .errors import DimensionMismatchError, InsufficientHistoryError


class SampleSeries:
    """Sliding window of per-interval average values for one matrix cell.

    Holds at most ``window`` interval values, plus the raw sub-interval
    reports for those same intervals when they are fed through
    ``add_report``/``roll_interval``.
    """

    def __init__(self, window=10, values=None):
        if window < 1:
            raise ValueError("window must be positive")
        self.window = window
        self.values = deque(maxlen=window)
        self.reports = deque(maxlen=window)  # one list per interval, aligned with values
        self._pending = []
        if values is not None:
            for v in values:
                self.push(v)

    def __len__(self):
        return len(self.values)

    def push(self, value):
        """Append a per-interval average directly (no raw reports)."""
        if value < 0:
            raise ValueError("series values are non-negative")
        self.values.append(float(value))
        self.reports.append([float(value)])

    def add_report(self, value):
        """Accumulate one sub-interval report into the open interval."""
        self._pending.append(float(value))

    def roll_interval(self):
        """Close the open interval and return its average (u_t).

        An interval with no reports carries the previous average forward;
        rolling a series that never saw data raises.
        """
        if self._pending:
            u_t = sum(self._pending) / len(self._pending)
            self.values.append(u_t)
            self.reports.append(self._pending)
            self._pending = []
        elif self.values:
            u_t = self.values[-1]
            self.values.append(u_t)
            self.reports.append([u_t])
        else:
            raise InsufficientHistoryError("no reports received yet")
        return u_t

    def raw_stream(self):
        out = []
        for chunk in self.reports:
            out.extend(chunk)
        return out


def fit_phi(stream):
    """Lag-1 autocorrelation of a sample stream, clipped to [0, 1].

    Returns 0 for streams shorter than 3 samples or with no variance.
    """
    m = len(stream)
    if m < 3:
        return 0.0
    mu = sum(stream) / m
    dev = [v - mu for v in stream]
    denom = sum(d * d for d in dev)
    if denom <= 0.0:
        return 0.0
    num = sum(dev[i] * dev[i - 1] for i in range(1, m))
    return min(1.0, max(0.0, num / denom))


def predict_next(series, u_t):
    """Predict the next interval's value from a series and the newest average."""
    if len(series) == 0:
        raise InsufficientHistoryError("insufficient history")
    values = list(series.values)
    mu = sum(values) / len(values)
    if len(values) < 3:
        phi = 0.0
    else:
        phi = fit_phi(series.raw_stream())
    return max(0.0, mu + phi * (u_t - mu))


def predict_matrix(histories, current):
    """Element-wise predict_next over a matrix of series.

    ``histories`` and ``current`` are lists of rows with matching shapes.
    """
    if len(histories) != len(current):
        raise DimensionMismatchError(
            f"{len(histories)} history rows vs {len(current)} current rows")
    out = []
    for i, (hrow, crow) in enumerate(zip(histories, current)):
        if len(hrow) != len(crow):
            raise DimensionMismatchError(f"row {i}: {len(hrow)} vs {len(crow)} cells")
        row = []
        for j, (series, u_t) in enumerate(zip(hrow, crow)):
            if len(series) == 0:
                raise InsufficientHistoryError(f"insufficient history at cell ({i}, {j})")
            row.append(predict_next(series, u_t))
        out.append(row)
    return out


class MatrixForecaster:
    """Per-cell forecast state for an n x n workload or delay matrix."""

    def __init__(self, n, window=10):
        self.n = n
        self.cells = [[SampleSeries(window) for _ in range(n)] for _ in range(n)]

    def add_report(self, i, j, value):
        self.cells[i][j].add_report(value)

    def roll_and_predict(self, default=0.0):
        """Close the interval everywhere and return the predicted matrix.

        Cells that have never received a report predict ``default``.
        """
        out = []
        for i in range(self.n):
            row = []
            for j in range(self.n):
                cell = self.cells[i][j]
                try:
                    u_t = cell.roll_interval()
                except InsufficientHistoryError:
                    row.append(default)
                    continue
                row.append(predict_next(cell, u_t))
            out.append(row)
        return out
