"""Observable series, coherence fits, and the generalized imbalance.

The fitting entry points are deterministic: initial guesses come from a
discrete spectrum peak and a log-envelope slope rather than from random
restarts, so repeated runs on the same series give bit-identical
results. Decay times are parametrized internally as rates so that
"no decay" sits at the closed boundary rate = 0 instead of at an open
infinite-tau boundary; a fitted rate slower than once per fifty data
spans is reported as unbounded.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import curve_fit

from .sequences import PulseSequence
from .shaping import PulseShape, beta_for

TAU = 2.0 * math.pi

# Fitted decay slower than once per this many data spans is "no decay".
UNBOUNDED_TAU_SPANS = 50.0

# Observables whose per-site values are bounded magnetizations.
_MAGNETIZATIONS = frozenset({"sx", "sy", "sz"})


class IllPosedSeriesError(ValueError):
    """The series cannot support the requested fit."""


class DegeneratePatternError(ValueError):
    """An initial pattern with an empty up- or down-population."""


class FitConvergenceError(RuntimeError):
    """The nonlinear least-squares loop did not converge."""


@dataclass(frozen=True)
class ObservableSeries:
    """Ensemble-averaged observable samples on a strictly increasing grid.

    ``values`` holds one column per site (a single column for
    chain-level quantities such as the imbalance); ``stderr`` is the
    ensemble standard error with the same shape, or ``None`` for exact
    series. Magnetization observables ("sx", "sy", "sz") are checked
    against the physical bound |value| <= 1 within three standard
    errors.
    """

    times: np.ndarray
    values: np.ndarray
    stderr: np.ndarray | None = None
    realizations: int = 1
    observable: str = "sz"

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.ndim != 2 \
                or values.shape[0] != times.shape[0]:
            raise ValueError("values must be shaped (samples, sites) and "
                             "aligned with the time grid")
        if len(times) and np.any(np.diff(times) <= 0.0):
            raise ValueError("sample times must be strictly increasing")
        stderr = self.stderr
        if stderr is not None:
            stderr = np.asarray(stderr, dtype=float)
            if stderr.ndim == 1:
                stderr = stderr[:, None]
            if stderr.shape != values.shape:
                raise ValueError("stderr must match the value table")
            if np.any(stderr < 0.0):
                raise ValueError("standard errors must be non-negative")
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if self.observable in _MAGNETIZATIONS:
            slack = 3.0 * stderr if stderr is not None else 0.0
            if np.any(np.abs(values) > 1.0 + slack + 1e-9):
                raise ValueError(
                    "magnetization values exceed the physical bound")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "stderr", stderr)

    @property
    def site_count(self) -> int:
        return self.values.shape[1]

    @property
    def span(self) -> float:
        return float(self.times[-1] - self.times[0])

    def mean(self) -> np.ndarray:
        """Chain average at each sample time."""
        return self.values.mean(axis=1)

    def mean_stderr(self) -> np.ndarray | None:
        """Standard error of the chain average (independent sites)."""
        if self.stderr is None:
            return None
        return np.sqrt((self.stderr ** 2).sum(axis=1)) / self.site_count


@dataclass(frozen=True)
class FitResult:
    """Parameters of a coherence fit plus its raw covariance.

    ``parameters`` names the rows of ``covariance`` in fit order; the
    decay enters the fit as a rate, so the tau uncertainty is
    rate-uncertainty times tau squared. ``tau`` is ``inf`` when the
    fitted decay is slower than the unbounded-tau threshold, and the
    ``ftau`` / ``j0tau`` figures of merit inherit that infinity.
    """

    model: str
    amplitude: float
    tau: float
    tau_unbounded: bool
    frequency: float | None
    ftau: float | None
    j0tau: float | None
    parameters: tuple[str, ...]
    covariance: np.ndarray = field(repr=False)
    residual_norm: float

    def parameter_stderr(self, name: str) -> float:
        """Square-root covariance diagonal, mapped for derived names."""
        if name == "tau_s":
            if self.tau_unbounded or not math.isfinite(self.tau):
                return math.inf
            idx = self.parameters.index("decay_rate_hz")
            return math.sqrt(max(self.covariance[idx, idx], 0.0)) \
                * self.tau ** 2
        idx = self.parameters.index(name)
        return math.sqrt(max(self.covariance[idx, idx], 0.0))


def _damped_cosine(t, amplitude, frequency, rate):
    return amplitude * (1.0 - np.exp(-rate * t)
                        * np.cos(TAU * frequency * t)) - 1.0


def _exponential(t, amplitude, rate):
    return amplitude * np.exp(-rate * t)


def _dominant_frequency(times, values) -> float:
    """Peak of the discrete spectrum, refined by a parabolic vertex.

    The series is resampled onto a uniform grid of the same length so
    mildly non-uniform schedules (integer-cycle sampling with unequal
    cycles) still get a usable peak.
    """
    n = len(times)
    grid = np.linspace(times[0], times[-1], n)
    resampled = np.interp(grid, times, values)
    resampled = resampled - resampled.mean()
    spectrum = np.abs(np.fft.rfft(resampled))
    if len(spectrum) < 3:
        return 0.0
    peak = 1 + int(np.argmax(spectrum[1:]))
    df = 1.0 / (grid[-1] - grid[0]) * (n - 1) / n
    f0 = peak * df
    if 1 <= peak < len(spectrum) - 1:
        left, mid, right = spectrum[peak - 1:peak + 2]
        denom = left - 2.0 * mid + right
        if denom != 0.0:
            f0 += 0.5 * (left - right) / denom * df
    return float(max(f0, 0.0))


def _decay_rate_seed(times, values, amplitude, frequency) -> float:
    """Log-envelope slope of the oscillating residual, one peak per period."""
    if amplitude <= 0.0 or frequency <= 0.0:
        return 0.0
    residual = (amplitude - 1.0 - values) / amplitude
    bins = np.floor((times - times[0]) * frequency).astype(int)
    centers = []
    peaks = []
    for b in np.unique(bins):
        mask = bins == b
        peak = np.abs(residual[mask]).max()
        if peak > 1e-12:
            centers.append(times[mask].mean())
            peaks.append(peak)
    if len(peaks) < 2:
        return 0.0
    slope = np.polyfit(np.asarray(centers), np.log(np.asarray(peaks)), 1)[0]
    return float(max(0.0, -slope))


def _fit_sigma(series: ObservableSeries, weighted: bool):
    if not weighted:
        return None
    sigma = series.mean_stderr()
    if sigma is None:
        return None
    floor = sigma[sigma > 0.0].min() if np.any(sigma > 0.0) else 1.0
    return np.maximum(sigma, 1e-3 * floor)


def fit_damped_cosine(series: ObservableSeries,
                      weighted: bool = False) -> FitResult:
    """Fit the chain-average magnetization to a damped cosine.

    The model is g(t) = A (1 - e^{-t/tau} cos(2 pi f t)) - 1, the
    flopping form that starts at -1 and rings toward A - 1. Requires at
    least eight samples covering at least one and a half periods of the
    dominant spectral component; anything less cannot pin all three
    parameters and raises :class:`IllPosedSeriesError`.

    Parameters
    ----------
    series : ObservableSeries
        Ensemble-averaged magnetization samples.
    weighted : bool
        Weight the least squares by the per-sample standard errors
        when the series carries them. Default is uniform weighting.
    """
    y = series.mean()
    t = series.times
    if len(t) < 8:
        raise IllPosedSeriesError("need at least 8 samples for the "
                                  "three-parameter coherence fit")
    f0 = _dominant_frequency(t, y)
    if f0 <= 0.0 or series.span * f0 < 1.5:
        raise IllPosedSeriesError(
            f"series spans {series.span * f0:.2f} periods of the dominant "
            "frequency; need at least 1.5 to separate decay from phase")
    a0 = max(float(y.mean()) + 1.0, 1e-6)
    rate0 = _decay_rate_seed(t, y, a0, f0)
    anchor = 1.0 - math.exp(-rate0 * t[0]) * math.cos(TAU * f0 * t[0])
    if abs(anchor) > 0.2:
        a0 = max((y[0] + 1.0) / anchor, 1e-6)
    try:
        params, cov = curve_fit(
            _damped_cosine, t, y, p0=[a0, f0, rate0],
            bounds=([0.0, 0.0, 0.0], [np.inf, np.inf, np.inf]),
            sigma=_fit_sigma(series, weighted),
            absolute_sigma=weighted and series.stderr is not None,
            maxfev=20000)
    except RuntimeError as exc:
        raise FitConvergenceError(str(exc)) from exc
    amplitude, frequency, rate = (float(v) for v in params)
    unbounded = rate < 1.0 / (UNBOUNDED_TAU_SPANS * series.span)
    tau = math.inf if unbounded else 1.0 / rate
    residual = float(np.linalg.norm(y - _damped_cosine(t, *params)))
    return FitResult(model="damped_cosine", amplitude=amplitude, tau=tau,
                     tau_unbounded=unbounded, frequency=frequency,
                     ftau=frequency * tau, j0tau=None,
                     parameters=("amplitude", "frequency_hz",
                                 "decay_rate_hz"),
                     covariance=cov, residual_norm=residual)


def fit_exponential_decay(series: ObservableSeries, jbar0: float | None = None,
                          weighted: bool = False) -> FitResult:
    """Fit a chain-level series to I(t) = I0 e^{-t/tau}.

    ``jbar0`` (angular, rad/s) attaches the dimensionless figure of
    merit jbar0 * tau to the result. A series that does not decay over
    fifty data spans reports tau as unbounded.
    """
    y = series.mean()
    t = series.times
    if len(t) < 5:
        raise IllPosedSeriesError("need at least 5 samples for the decay fit")
    a0 = float(y[0])
    magnitude = np.abs(y)
    mask = magnitude > 1e-3 * magnitude.max() if magnitude.max() > 0.0 \
        else np.zeros(len(y), dtype=bool)
    rate0 = 0.0
    if mask.sum() >= 2:
        slope = np.polyfit(t[mask], np.log(magnitude[mask]), 1)[0]
        rate0 = float(max(0.0, -slope))
    try:
        params, cov = curve_fit(
            _exponential, t, y, p0=[a0, rate0],
            bounds=([-np.inf, 0.0], [np.inf, np.inf]),
            sigma=_fit_sigma(series, weighted),
            absolute_sigma=weighted and series.stderr is not None,
            maxfev=20000)
    except RuntimeError as exc:
        raise FitConvergenceError(str(exc)) from exc
    amplitude, rate = (float(v) for v in params)
    unbounded = rate < 1.0 / (UNBOUNDED_TAU_SPANS * series.span)
    tau = math.inf if unbounded else 1.0 / rate
    residual = float(np.linalg.norm(y - _exponential(t, *params)))
    return FitResult(model="exponential", amplitude=amplitude, tau=tau,
                     tau_unbounded=unbounded, frequency=None, ftau=None,
                     j0tau=None if jbar0 is None else jbar0 * tau,
                     parameters=("amplitude", "decay_rate_hz"),
                     covariance=cov, residual_norm=residual)


def generalized_imbalance(series: ObservableSeries,
                          initial_pattern) -> ObservableSeries:
    """Memory of an initial pattern, as a chain-level series.

    I(t) is the difference between the mean magnetization of the
    initially-up population and that of the initially-down population,
    each weighted by how far the pattern entry sits from the opposite
    pole:

        I(t) = sum_j v_j (1 + p_j) / sum_j (1 + p_j)
             - sum_j v_j (1 - p_j) / sum_j (1 - p_j)

    with v_j (t) the per-site magnetization and p_j the initial
    pattern. A pattern that is entirely up or entirely down leaves one
    denominator empty and raises :class:`DegeneratePatternError`.
    Standard errors propagate linearly through the fixed weights.
    """
    pattern = np.asarray(initial_pattern, dtype=float)
    if pattern.ndim != 1 or pattern.shape[0] != series.site_count:
        raise ValueError("pattern must give one entry per site")
    if np.any(np.abs(pattern) > 1.0 + 1e-12):
        raise ValueError("pattern entries must lie in [-1, 1]")
    up_weight = (1.0 + pattern).sum()
    down_weight = (1.0 - pattern).sum()
    if up_weight <= 1e-12 or down_weight <= 1e-12:
        raise DegeneratePatternError(
            "pattern must populate both the up and the down group")
    weights = (1.0 + pattern) / up_weight - (1.0 - pattern) / down_weight
    imbalance = series.values @ weights
    stderr = None
    if series.stderr is not None:
        stderr = np.sqrt((series.stderr ** 2) @ (weights ** 2))
    return ObservableSeries(series.times, imbalance[:, None],
                            None if stderr is None else stderr[:, None],
                            series.realizations, observable="imbalance")


def _nearest_neighbor_scale(seq: PulseSequence) -> float:
    """Mean adjacent-site XX coefficient of the first segment."""
    hamiltonian = seq.segments[0].hamiltonian
    n = seq.spins
    if n < 2:
        raise ValueError("coupling scale needs at least two spins")
    couplings = []
    for j in range(n - 1):
        word = "".join("X" if k in (j, j + 1) else "I" for k in range(n))
        couplings.append(hamiltonian.coefficient(word).real)
    return float(np.mean(couplings))


def average_hamiltonian_scale(seq: PulseSequence,
                              shape: PulseShape | None = None,
                              beta_model: str = "empirical") -> float:
    """Realized coupling scale of a two-segment echo cycle.

    Returns beta * J0 * t1 / (t1 + t_pi): the bare nearest-neighbor
    coupling diluted by the envelope area loss (beta) and by the dead
    time spent inside finite pulses. The envelope comes from ``shape``
    or, failing that, from the one bound to the segments.
    """
    if len(seq.segments) != 2:
        raise ValueError("the realized-coupling formula applies to the "
                         "two-segment echo form")
    t_first, t_second = (s.duration for s in seq.segments)
    if not math.isclose(t_first, t_second, rel_tol=1e-9):
        raise ValueError("the two segments must have equal duration")
    envelope = shape or seq.segments[0].envelope
    beta = 1.0 if envelope is None else beta_for(envelope, t_first,
                                                 beta_model)
    dilution = seq.interaction_time / seq.cycle_time
    return beta * _nearest_neighbor_scale(seq) * dilution


# ---------------------------------------------------------------------------
# CSV export


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def write_series_csv(series: ObservableSeries, stream,
                     header: bool = True) -> None:
    """Write ``time_s, observable, site, value, stderr`` rows.

    Multi-site series emit one row per site plus a chain-mean row with
    site -1; single-column series are chain-level quantities and emit
    only the site -1 row. A missing stderr writes as an empty field.
    """
    writer = csv.writer(stream, lineterminator="\n")
    if header:
        writer.writerow(["time_s", "observable", "site", "value", "stderr"])
    per_site = series.site_count > 1
    mean = series.mean()
    mean_err = series.mean_stderr()
    for i, t in enumerate(series.times):
        if per_site:
            for site in range(series.site_count):
                err = "" if series.stderr is None \
                    else _fmt(series.stderr[i, site])
                writer.writerow([_fmt(t), series.observable, site,
                                 _fmt(series.values[i, site]), err])
        err = "" if mean_err is None else _fmt(mean_err[i])
        writer.writerow([_fmt(t), series.observable, -1, _fmt(mean[i]), err])


def write_fits_csv(fits, stream, header: bool = True) -> None:
    """Write ``param, value, stderr`` rows for one or many fits.

    ``fits`` is a FitResult or a mapping whose keys prefix the
    parameter names (``label.param``). Derived quantities (the f*tau
    and jbar0*tau figures of merit, the residual norm) carry no
    stderr.
    """
    if isinstance(fits, FitResult):
        fits = {"": fits}
    writer = csv.writer(stream, lineterminator="\n")
    if header:
        writer.writerow(["param", "value", "stderr"])
    for label, fit in fits.items():
        prefix = f"{label}." if label else ""
        rows = [("amplitude", fit.amplitude,
                 fit.parameter_stderr("amplitude"))]
        if fit.frequency is not None:
            rows.append(("frequency_hz", fit.frequency,
                         fit.parameter_stderr("frequency_hz")))
        rows.append(("tau_s", fit.tau, fit.parameter_stderr("tau_s")))
        if fit.ftau is not None:
            rows.append(("ftau", fit.ftau, None))
        if fit.j0tau is not None:
            rows.append(("j0tau", fit.j0tau, None))
        rows.append(("residual_norm", fit.residual_norm, None))
        for name, value, err in rows:
            writer.writerow([prefix + name, _fmt(value),
                             "" if err is None else _fmt(err)])
