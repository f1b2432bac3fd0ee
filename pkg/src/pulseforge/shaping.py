"""Interaction-window envelopes and their time-dilution factors.

A shaped window ramps the drive on and off with a raised-cosine (Tukey)
profile of ramp time ``t_p`` at each end and a flat plateau in between.
The ``exponent`` records how the programmed profile maps onto the
spin-spin coupling: 1 if the profile directly scales the intensity (so
J(t) follows the ramp), 2 if the profile scales the field amplitude (so
J follows the ramp squared). The propagator multiplies each tone's field
by ``ramp(t) ** (exponent / 2)`` so that the coupling profile is
``ramp(t) ** exponent`` in both conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad


class NoPlateauError(ValueError):
    """Window too short to hold both ramps plus a plateau."""


@dataclass(frozen=True)
class PulseShape:
    """Envelope description for one interaction window.

    Parameters
    ----------
    kind:
        ``"flat"`` or ``"tukey"``.
    ramp_time:
        Raised-cosine ramp duration t_p at each end (seconds); ignored for
        flat windows.
    duration:
        Full window length (seconds).
    exponent:
        Intensity-mapping exponent, see module docstring. Default 2.
    """

    kind: str
    ramp_time: float
    duration: float
    exponent: int = 2

    def __post_init__(self):
        if self.kind not in ("flat", "tukey"):
            raise ValueError(f"unknown envelope kind {self.kind!r}")
        if self.duration <= 0.0:
            raise ValueError("window duration must be positive")
        if self.kind == "tukey":
            if self.ramp_time <= 0.0:
                raise ValueError("tukey ramp time must be positive")
            if 2.0 * self.ramp_time > self.duration:
                raise ValueError(
                    "ramps overlap: 2*ramp_time exceeds the window duration")
        if self.exponent not in (1, 2):
            raise ValueError("intensity-mapping exponent must be 1 or 2")

    @classmethod
    def flat(cls, duration: float) -> "PulseShape":
        return cls("flat", 0.0, duration)

    @classmethod
    def tukey(cls, ramp_time: float, duration: float,
              exponent: int = 2) -> "PulseShape":
        return cls("tukey", ramp_time, duration, exponent)

    @property
    def alpha(self) -> float:
        """Shaping parameter 2*t_p / duration, in [0, 1]."""
        if self.kind == "flat":
            return 0.0
        return 2.0 * self.ramp_time / self.duration


def _ramp(t, shape: PulseShape):
    """Raw raised-cosine profile in [0, 1] over the window, 0 outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = (t >= 0.0) & (t <= shape.duration)
    if shape.kind == "flat":
        out[inside] = 1.0
        return out
    tp = shape.ramp_time
    rising = inside & (t < tp)
    falling = inside & (t > shape.duration - tp)
    plateau = inside & ~rising & ~falling
    out[plateau] = 1.0
    out[rising] = 0.5 * (1.0 - np.cos(np.pi * t[rising] / tp))
    tail = shape.duration - t[falling]
    out[falling] = 0.5 * (1.0 - np.cos(np.pi * tail / tp))
    return out


def tukey_envelope(t, shape: PulseShape):
    """Coupling profile J(t)/J0 at window-relative time(s) ``t``.

    Returns ``ramp ** exponent``; scalar in, scalar out.
    """
    scalar = np.isscalar(t)
    val = _ramp(t, shape) ** shape.exponent
    return float(val) if scalar else val


def field_envelope(t, shape: PulseShape):
    """Per-tone field multiplier, ``ramp ** (exponent / 2)``."""
    scalar = np.isscalar(t)
    val = _ramp(t, shape) ** (0.5 * shape.exponent)
    return float(val) if scalar else val


def effective_beta(shape: PulseShape, window: float | None = None) -> float:
    """Time-dilution factor: mean of the coupling profile over the window.

    Computed by numerical quadrature of ``tukey_envelope``. For a flat
    window this is exactly 1. Raises :class:`NoPlateauError` unless the
    window strictly exceeds both ramps, since a plateau-free profile has
    no well-defined drive level to dilute.
    """
    if window is None:
        window = shape.duration
    if shape.kind == "flat":
        return 1.0
    if window <= 2.0 * shape.ramp_time:
        raise NoPlateauError(
            f"window {window:g} s leaves no plateau for ramps of "
            f"{shape.ramp_time:g} s")
    probe = shape if window == shape.duration else PulseShape(
        shape.kind, shape.ramp_time, window, shape.exponent)
    total, _ = quad(lambda t: tukey_envelope(t, probe), 0.0, window,
                    points=[probe.ramp_time, window - probe.ramp_time],
                    limit=200)
    return total / window


def empirical_beta(ramp_time: float, window: float) -> float:
    """Reference calibration 1 - 1.178 * t_p / t1 used by the experiment."""
    if window <= 2.0 * ramp_time:
        raise NoPlateauError("window leaves no plateau")
    return 1.0 - 1.178 * ramp_time / window


def beta_for(shape: PulseShape, window: float, model: str = "quadrature") -> float:
    """Dispatch between the quadrature and empirical beta models."""
    if shape.kind == "flat":
        return 1.0
    if model == "quadrature":
        return effective_beta(shape, window)
    if model == "empirical":
        return empirical_beta(shape.ramp_time, window)
    raise ValueError(f"unknown beta model {model!r}")
