"""Closed-form least-squares fits for fringes and exponential decays."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FringeFit:
    amplitude: float
    phase_deg: float
    offset: float
    residual: float

    @property
    def contrast(self) -> float:
        return self.amplitude / self.offset if self.offset else math.nan


@dataclass(frozen=True)
class ExpFit:
    rate: float
    amplitude: float
    residual: float

    @property
    def lifetime(self) -> float:
        return 1.0 / self.rate if self.rate else math.inf


def fit_fringe(angles_deg, n, weights=None) -> FringeFit:
    """Fit n(theta) = offset + amplitude * cos(theta + phase), period 360 deg.

    Linear regression on (1, cos theta, sin theta).  ``weights`` are
    optional 1/sigma factors.  The amplitude is returned non-negative with
    the phase in [0, 360).
    """
    theta = np.radians(np.asarray(angles_deg, dtype=float))
    y = np.asarray(n, dtype=float)
    if theta.shape != y.shape or theta.ndim != 1:
        raise ValueError("angles and values must be 1-D arrays of equal length")
    if np.unique(np.round(np.degrees(theta) % 360.0, 9)).size < 4:
        raise ValueError("fringe fit needs at least four distinct angles")
    design = np.column_stack([np.ones_like(theta), np.cos(theta), np.sin(theta)])
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    coef, _, rank, _ = np.linalg.lstsq(design * w[:, None], y * w, rcond=None)
    if rank < 3:
        raise ValueError("degenerate fringe design matrix")
    offset, a, b = coef
    # a cos t + b sin t = A cos(t + phi) with A cos phi = a, A sin phi = -b
    amplitude = math.hypot(a, b)
    if amplitude <= 1e-12 * max(float(np.max(np.abs(y))), 1e-300):
        amplitude = 0.0
    phase = math.degrees(math.atan2(-b, a)) % 360.0 if amplitude > 0 else 0.0
    residual = float(np.sqrt(np.sum((design @ coef - y) ** 2)))
    return FringeFit(amplitude, phase, float(offset), residual)


def fit_exponential(t_ns, y) -> ExpFit:
    """Fit y = amplitude * exp(-rate * t) by weighted least squares on log(y).

    Each log point is weighted by y, the inverse variance of log(y) for a
    Poisson count of size y.
    """
    t = np.asarray(t_ns, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("t and y must be 1-D arrays of equal length")
    if t.size < 3:
        raise ValueError("exponential fit needs at least three points")
    if np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise ValueError("exponential fit needs strictly positive samples")
    w = np.sqrt(y)  # row scaling = sqrt(weight)
    design = np.column_stack([np.ones_like(t), -t])
    coef, _, rank, _ = np.linalg.lstsq(design * w[:, None], np.log(y) * w, rcond=None)
    if rank < 2:
        raise ValueError("exponential fit needs at least two distinct times")
    log_amp, rate = coef
    amplitude = math.exp(log_amp)
    residual = float(np.sqrt(np.sum((amplitude * np.exp(-rate * t) - y) ** 2)))
    return ExpFit(float(rate), amplitude, residual)
