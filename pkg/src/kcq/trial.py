from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrialReport:
    """One experiment: inputs, Monte-Carlo counts, estimates and analytic references."""

    experiment: str
    params: dict
    counts: dict = field(default_factory=dict)
    estimates: dict = field(default_factory=dict)
    analytic: dict = field(default_factory=dict)
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "params": _plain(self.params),
            "counts": _plain(self.counts),
            "estimates": _plain(self.estimates),
            "analytic": _plain(self.analytic),
            "seed": self.seed,
        }

    def flat(self) -> dict:
        """Single-level mapping for CSV rows."""
        row = {"experiment": self.experiment, "seed": self.seed}
        for prefix, part in (("", self.params), ("n_", self.counts), ("est_", self.estimates), ("ref_", self.analytic)):
            for k, v in part.items():
                row[prefix + k] = _plain(v)
        return row


def binomial_sigma(p: float, trials: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / trials) if trials else math.inf


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value
