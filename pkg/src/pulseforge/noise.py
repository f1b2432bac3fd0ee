"""Stochastic error channels: laser intensity, detuning drift, heating.

Three independent channels feed the propagators. Intensity noise is a
pair of band-limited traces with a 1/f^2 power spectrum, one per drive
tone, expressed as fractional Rabi-rate deviations. Detuning noise is a
single static Gaussian offset per realization, applied symmetrically to
both tones. Heating is a train of fixed-amplitude, random-phase
displacement kicks on the highest (in-phase) motional mode.

Every channel draws from its own child of the master seed, so enabling
or disabling one channel never changes what another channel samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TAU = 2.0 * math.pi

# Trace grid step for intensity noise. The band edge at 1 MHz needs
# sampling strictly faster than 0.5 us to stay below Nyquist.
DEFAULT_STARK_GRID_DT = 0.4e-6

# Mean phonon gain per second under the default kick train, amplitude
# 0.01 every 1.5 us: random phases add energies, so each kick deposits
# amplitude^2 quanta on average. Frozen as the reference value for the
# heating-rate checks.
HEATING_QUANTA_PER_SECOND = 0.01 ** 2 / 1.5e-6


class AliasingError(ValueError):
    """Trace grid too coarse for the configured noise bandwidth."""


@dataclass(frozen=True)
class StarkNoiseConfig:
    """Band-limited fractional intensity noise on each drive tone.

    Parameters
    ----------
    fractional_sigma:
        Realized standard deviation of each trace over one sample
        window (exact by construction, not statistical).
    band:
        (low, high) frequency band in Hz with hard edges.
    window:
        Length in seconds over which ``fractional_sigma`` is defined.
        Longer programs concatenate fresh independent windows.
    spectrum_exponent:
        Power-spectrum exponent a in S(f) proportional to 1/f^a.
    """

    fractional_sigma: float = 0.021
    band: tuple[float, float] = (100.0, 1.0e6)
    window: float = 0.1
    spectrum_exponent: float = 2.0

    def __post_init__(self):
        if self.fractional_sigma < 0.0:
            raise ValueError("fractional sigma must be non-negative")
        if not 0.0 < self.band[0] < self.band[1]:
            raise ValueError("band must satisfy 0 < low < high")
        if self.window <= 0.0:
            raise ValueError("window must be positive")


@dataclass(frozen=True)
class DetuningNoiseConfig:
    """Static symmetric-detuning offset, one Gaussian draw per run."""

    sigma: float = TAU * 4.5e3

    def __post_init__(self):
        if self.sigma < 0.0:
            raise ValueError("sigma must be non-negative")


@dataclass(frozen=True)
class HeatingNoiseConfig:
    """Random-phase displacement kicks on the in-phase motional mode."""

    kick_amplitude: float = 0.01
    interval: float = 1.5e-6

    def __post_init__(self):
        if self.kick_amplitude < 0.0:
            raise ValueError("kick amplitude must be non-negative")
        if self.interval <= 0.0:
            raise ValueError("kick interval must be positive")

    @property
    def quanta_per_second(self) -> float:
        """Mean phonon gain rate implied by the kick train."""
        return self.kick_amplitude ** 2 / self.interval


@dataclass(frozen=True)
class NoiseTrace:
    """A sampled waveform on a uniform grid, read back by zero-order hold."""

    values: np.ndarray
    grid_dt: float

    @property
    def duration(self) -> float:
        return len(self.values) * self.grid_dt

    def at(self, t):
        """Value(s) at time(s) ``t``, holding each sample over its step."""
        idx = np.floor_divide(np.asarray(t, dtype=float), self.grid_dt)
        idx = np.clip(idx.astype(np.int64), 0, len(self.values) - 1)
        return self.values[idx]


@dataclass(frozen=True)
class KickSchedule:
    """Displacement-kick times and phases for the in-phase mode."""

    times: np.ndarray
    phases: np.ndarray
    amplitude: float

    @property
    def count(self) -> int:
        return len(self.times)

    def displacements(self) -> np.ndarray:
        """Complex kick amplitudes alpha = amplitude * e^{i phase}."""
        return self.amplitude * np.exp(1j * self.phases)


def _seed_sequence(seed) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _synthesize_window(cfg: StarkNoiseConfig, grid_dt: float,
                       rng: np.random.Generator) -> np.ndarray:
    """One window of band-limited noise with exact realized variance.

    Fourier components inside the band get magnitudes f^(-a/2) and
    independent uniform phases; the inverse transform is then rescaled
    so the sample standard deviation equals the configured sigma
    exactly rather than in expectation.
    """
    n = int(round(cfg.window / grid_dt))
    freqs = np.fft.rfftfreq(n, grid_dt)
    mask = (freqs >= cfg.band[0]) & (freqs <= cfg.band[1])
    if not np.any(mask):
        raise ValueError("no Fourier components fall inside the band; "
                         "lengthen the window or widen the band")
    spectrum = np.zeros(len(freqs), dtype=complex)
    phases = rng.uniform(0.0, TAU, int(np.sum(mask)))
    spectrum[mask] = freqs[mask] ** (-0.5 * cfg.spectrum_exponent) \
        * np.exp(1j * phases)
    values = np.fft.irfft(spectrum, n)
    values -= values.mean()
    scale = values.std()
    if scale == 0.0:
        return values
    return values * (cfg.fractional_sigma / scale)


def sample_stark_traces(cfg: StarkNoiseConfig, duration: float,
                        grid_dt: float = DEFAULT_STARK_GRID_DT,
                        seed=0) -> tuple[NoiseTrace, NoiseTrace]:
    """Draw the two independent fractional intensity traces.

    The grid always covers whole windows, so the returned traces may
    extend past ``duration``; programs longer than one window get fresh
    independent windows concatenated, never a periodic copy.

    Raises
    ------
    AliasingError
        If the grid cannot represent the top of the noise band.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    if grid_dt > 1.0 / (2.0 * cfg.band[1]):
        raise AliasingError(
            f"grid step {grid_dt:.3g} s aliases the {cfg.band[1]:.3g} Hz "
            f"band edge (need <= {1.0 / (2.0 * cfg.band[1]):.3g} s)")
    n_windows = max(1, math.ceil(duration / cfg.window - 1e-9))
    tone_seeds = _seed_sequence(seed).spawn(2)
    traces = []
    for tone_seed in tone_seeds:
        rng = np.random.default_rng(tone_seed)
        if cfg.fractional_sigma == 0.0:
            n = int(round(cfg.window / grid_dt))
            values = np.zeros(n * n_windows)
        else:
            values = np.concatenate(
                [_synthesize_window(cfg, grid_dt, rng)
                 for _ in range(n_windows)])
        traces.append(NoiseTrace(values, grid_dt))
    return traces[0], traces[1]


def induced_stark_shift(x1, x2, tones) -> np.ndarray:
    """Differential light shift from imbalanced tone intensities, rad/s.

    Parameters
    ----------
    x1, x2:
        Fractional Rabi-rate deviations of the two tones (scalars or
        arrays).
    tones:
        Drive configuration providing the nominal Rabi rates and the
        symmetric detuning mu.

    Returns
    -------
    The uniform spin-frequency shift
    (Omega_2^2 (1+x2)^2 - Omega_1^2 (1+x1)^2) / (4 mu), which vanishes
    for balanced tones and grows linearly with the imbalance.
    """
    om1 = tones.rabi_1 * (1.0 + np.asarray(x1, dtype=float))
    om2 = tones.rabi_2 * (1.0 + np.asarray(x2, dtype=float))
    return (om2 ** 2 - om1 ** 2) / (4.0 * tones.mu)


def sample_detuning_offset(cfg: DetuningNoiseConfig, seed=0) -> float:
    """One static detuning offset, drawn fresh per realization."""
    rng = np.random.default_rng(_seed_sequence(seed))
    if cfg.sigma == 0.0:
        return 0.0
    return float(rng.normal(0.0, cfg.sigma))


def heating_kick_schedule(cfg: HeatingNoiseConfig, duration: float,
                          seed=0) -> KickSchedule:
    """Kick times at whole multiples of the interval, phases i.i.d. uniform."""
    if duration < 0.0:
        raise ValueError("duration must be non-negative")
    count = int(math.floor(duration / cfg.interval * (1.0 + 1e-12)))
    rng = np.random.default_rng(_seed_sequence(seed))
    times = cfg.interval * np.arange(1, count + 1)
    phases = rng.uniform(0.0, TAU, count)
    return KickSchedule(times, phases, cfg.kick_amplitude)


@dataclass(frozen=True)
class NoiseModel:
    """Switchboard for the three channels; ``None`` disables a channel."""

    stark: StarkNoiseConfig | None = None
    detuning: DetuningNoiseConfig | None = None
    heating: HeatingNoiseConfig | None = None

    @classmethod
    def bench_default(cls) -> "NoiseModel":
        """All three channels at their reference strengths."""
        return cls(StarkNoiseConfig(), DetuningNoiseConfig(),
                   HeatingNoiseConfig())

    @property
    def silent(self) -> bool:
        return self.stark is None and self.detuning is None \
            and self.heating is None

    def realize(self, duration: float, seed: int,
                grid_dt: float = DEFAULT_STARK_GRID_DT) -> "NoiseRealization":
        """Sample every enabled channel for one trajectory.

        The master seed is split into one child per channel in a fixed
        order, so the draws of each channel depend only on the master
        seed, not on which other channels are enabled.
        """
        root = _seed_sequence(seed)
        stark_seed, detuning_seed, heating_seed = root.spawn(3)
        channel_seeds = tuple(
            int(s.generate_state(1, np.uint64)[0])
            for s in (stark_seed, detuning_seed, heating_seed))
        traces = None
        if self.stark is not None:
            traces = sample_stark_traces(self.stark, duration, grid_dt,
                                         stark_seed)
        offset = 0.0
        if self.detuning is not None:
            offset = sample_detuning_offset(self.detuning, detuning_seed)
        kicks = None
        if self.heating is not None:
            kicks = heating_kick_schedule(self.heating, duration,
                                          heating_seed)
        return NoiseRealization(duration, traces, offset, kicks,
                                seed if isinstance(seed, int) else None,
                                channel_seeds)


@dataclass(frozen=True)
class NoiseRealization:
    """Immutable per-trajectory noise sample, consumed read-only."""

    duration: float
    rabi_fractions: tuple[NoiseTrace, NoiseTrace] | None
    detuning_offset: float
    kicks: KickSchedule | None
    master_seed: int | None
    channel_seeds: tuple[int, int, int]

    def stark_fractions(self, times):
        """Fractional Rabi deviations (x1, x2) at the given times."""
        t = np.asarray(times, dtype=float)
        if self.rabi_fractions is None:
            zero = np.zeros(t.shape)
            return zero, zero.copy()
        return (self.rabi_fractions[0].at(t), self.rabi_fractions[1].at(t))

    def stark_shift(self, tones, times) -> np.ndarray:
        """Induced light shift epsilon(t) at the given times, rad/s."""
        x1, x2 = self.stark_fractions(times)
        return induced_stark_shift(x1, x2, tones)


SILENT = NoiseModel()
