"""OSSE scoring: RMSE against truth, block-average regridding, innovation statistics.

The toy model has no precipitation, so scores are computed on temperature
fields; the machinery is the same one would use for accumulated rainfall.
"""

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ShapeMismatchError

DEFAULT_BIN_EDGES = (0.0, 1.0, 2.0, 5.0, 10.0, 20.0, np.inf)


def rmse(field, truth) -> float:
    field = np.asarray(field, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if field.shape != truth.shape:
        raise ShapeMismatchError(f"shapes {field.shape} and {truth.shape} differ")
    return float(np.sqrt(np.mean((field - truth) ** 2)))


def regrid_average(fine, factor: int):
    """Coarsen a 2-D field by averaging non-overlapping factor x factor blocks."""
    fine = np.asarray(fine, dtype=float)
    if fine.ndim != 2:
        raise ShapeMismatchError("regrid_average expects a 2-D field")
    nx, ny = fine.shape
    if factor < 1 or nx % factor or ny % factor:
        raise ShapeMismatchError(
            f"grid {fine.shape} is not divisible by factor {factor}")
    return fine.reshape(nx // factor, factor, ny // factor, factor).mean(axis=(1, 3))


@dataclass
class InnovationStats:
    count: int
    max: Optional[float]
    mean: Optional[float]
    bin_edges: np.ndarray
    histogram: np.ndarray

    @property
    def defined(self) -> bool:
        return self.count > 0


def innovation_stats(observations, model_equivalents,
                     bin_edges=DEFAULT_BIN_EDGES) -> InnovationStats:
    """Max, mean and histogram of d = y - H(x).

    Innovations outside the outermost edges are clipped into the end bins
    so that the counts always sum to the batch size.
    """
    y = np.asarray(observations, dtype=float)
    hx = np.asarray(model_equivalents, dtype=float)
    if y.shape != hx.shape:
        raise ShapeMismatchError("observation and model-equivalent counts differ")
    edges = np.asarray(bin_edges, dtype=float)
    d = y - hx
    if d.size == 0:
        return InnovationStats(0, None, None, edges, np.zeros(edges.size - 1, int))
    idx = np.clip(np.searchsorted(edges, d, side="right") - 1, 0, edges.size - 2)
    hist = np.bincount(idx, minlength=edges.size - 1)
    return InnovationStats(int(d.size), float(d.max()), float(d.mean()), edges, hist)


@dataclass
class ScoreSeries:
    label: str
    times: List[float] = field(default_factory=list)
    rmse: List[float] = field(default_factory=list)

    def append(self, time, value):
        if value < 0:
            raise ValueError("RMSE cannot be negative")
        self.times.append(float(time))
        self.rmse.append(float(value))

    def write(self, path, mode="w"):
        write_scores([self], path, mode)


def write_scores(series: Sequence[ScoreSeries], path, mode="w"):
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["time", "rmse", "label"])
        for s in series:
            for t, r in zip(s.times, s.rmse):
                writer.writerow([repr(t), repr(r), s.label])
