"""Binned calibration diagnostics for propensity predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ValidationError


@dataclass(frozen=True)
class CalibrationBin:
    bin_low: float
    bin_high: float
    mean_predicted: float | None
    empirical_rate: float | None
    count: int

    def to_dict(self) -> dict:
        return {
            "bin_low": self.bin_low,
            "bin_high": self.bin_high,
            "mean_predicted": self.mean_predicted,
            "empirical_rate": self.empirical_rate,
            "count": self.count,
        }


def calibration_table(p_hat, d, n_bins: int = 10) -> list[CalibrationBin]:
    """Equal-width bins on [0, 1]; empty bins report ``None`` rates.

    The last bin is closed on the right so that p_hat = 1 is counted.
    """
    if n_bins < 2:
        raise ValidationError("n_bins must be at least 2")
    p_hat = np.asarray(p_hat, dtype=float).reshape(-1)
    d = np.asarray(d, dtype=float).reshape(-1)
    if p_hat.shape != d.shape:
        raise ValidationError("p_hat and d lengths differ")
    if np.any((p_hat < 0.0) | (p_hat > 1.0)) or not np.all(np.isfinite(p_hat)):
        raise ValidationError("p_hat values must lie in [0, 1]")
    idx = np.minimum((p_hat * n_bins).astype(int), n_bins - 1)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    rows = []
    for b in range(n_bins):
        sel = idx == b
        c = int(sel.sum())
        if c:
            rows.append(CalibrationBin(float(edges[b]), float(edges[b + 1]),
                                       float(p_hat[sel].mean()), float(d[sel].mean()), c))
        else:
            rows.append(CalibrationBin(float(edges[b]), float(edges[b + 1]), None, None, 0))
    return rows
