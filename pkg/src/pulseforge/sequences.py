"""Pulse-sequence construction, toggling-frame analysis, and validation.

A :class:`PulseSequence` alternates free-evolution segments with global
rotations. The toggling frame of segment n conjugates its Hamiltonian by
the inverse of all preceding pulses, ``H'_n = (P_{n-1}...P_1)^{-1} H_n
(P_{n-1}...P_1)``; a sequence decouples a noise operator O when the
time-weighted sum of its toggled copies cancels, and it preserves (or
engineers) an average Hamiltonian according to the time-weighted mean of
the toggled segments.

Builders return sequences whose cycles satisfy all of this exactly, which
the symbolic algebra can verify to float precision because every pulse is
a quarter-turn multiple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import yaml
from scipy.integrate import cumulative_trapezoid

from .pauli import (
    GlobalRotation,
    PauliSum,
    commutator,
    conjugate,
    parse_pauli_text,
    sigma_sum,
    pair_coupling,
)
from .shaping import PulseShape, beta_for


class SequenceStructureError(ValueError):
    """Sequence elements do not alternate segment / pulse as required."""


class UnsupportedShapeError(ValueError):
    """Operation needs a specific sequence shape (two-segment echo form)."""


class SequenceFileError(ValueError):
    """Sequence file could not be parsed."""


@dataclass(frozen=True)
class Segment:
    """Free evolution under a fixed Hamiltonian for a fixed time.

    ``noise`` optionally binds a noise operator that rides along with the
    segment in toggling-frame analysis; ``envelope`` optionally records
    how the drive implementing this segment is shaped in time.
    """

    hamiltonian: PauliSum
    duration: float
    noise: PauliSum | None = None
    envelope: PulseShape | None = None

    def __post_init__(self):
        if self.duration <= 0.0:
            raise SequenceStructureError("segment duration must be positive")
        if not self.hamiltonian.is_hermitian:
            raise SequenceStructureError(
                "segment Hamiltonian must be Hermitian")
        if self.noise is not None and self.noise.spins != self.hamiltonian.spins:
            raise SequenceStructureError(
                "bound noise acts on a different spin count")


@dataclass(frozen=True)
class PulseSequence:
    """Alternating segments and global rotations, one decoupling cycle.

    ``elements`` must start with a :class:`Segment`, strictly alternate,
    and end with a rotation (so a cycle composed with itself keeps
    alternating). ``pulse_duration`` is the wall-clock cost of one pulse;
    it enters the cycle time for every rotation with a nonzero angle.
    """

    elements: tuple
    pulse_duration: float = 0.0
    label: str = ""
    declared_target: PauliSum | None = None
    declared_average: PauliSum | None = None

    def __post_init__(self):
        if not self.elements:
            raise SequenceStructureError("sequence needs at least one segment")
        if self.pulse_duration < 0.0:
            raise SequenceStructureError("pulse duration cannot be negative")
        spins = None
        for k, el in enumerate(self.elements):
            if k % 2 == 0:
                if not isinstance(el, Segment):
                    raise SequenceStructureError(
                        f"element {k} should be a segment")
                if spins is None:
                    spins = el.hamiltonian.spins
                elif el.hamiltonian.spins != spins:
                    raise SequenceStructureError(
                        "segments act on different spin counts")
            elif not isinstance(el, GlobalRotation):
                raise SequenceStructureError(f"element {k} should be a pulse")
        if len(self.elements) % 2 != 0:
            raise SequenceStructureError(
                "sequence must end with a pulse (identity-angle is allowed)")

    @property
    def spins(self) -> int:
        return self.elements[0].hamiltonian.spins

    @property
    def segments(self) -> tuple[Segment, ...]:
        return self.elements[0::2]

    @property
    def pulses(self) -> tuple[GlobalRotation, ...]:
        return self.elements[1::2]

    @property
    def interaction_time(self) -> float:
        return float(sum(s.duration for s in self.segments))

    @property
    def active_pulse_count(self) -> int:
        return sum(1 for p in self.pulses if not p.is_identity)

    @property
    def cycle_time(self) -> float:
        """Wall-clock cycle length: segments plus every applied pulse."""
        return self.interaction_time + self.pulse_duration * self.active_pulse_count


@dataclass(frozen=True)
class DecouplingReport:
    """Outcome of the three decoupling checks for one cycle.

    ``segment_residuals`` is None when no target was supplied (sequences
    that engineer a new average rather than preserving a target skip the
    per-segment condition).
    """

    tolerance: float
    frame_closure_residual: float
    frame_closure_pass: bool
    segment_residuals: tuple[float, ...] | None
    segment_pass: bool | None
    noise_residual: float | None
    noise_pass: bool | None
    average: PauliSum

    @property
    def passed(self) -> bool:
        checks = [self.frame_closure_pass]
        if self.segment_pass is not None:
            checks.append(self.segment_pass)
        if self.noise_pass is not None:
            checks.append(self.noise_pass)
        return all(checks)

    def describe(self) -> str:
        lines = [
            f"frame closure: residual {self.frame_closure_residual:.3e} "
            f"({'pass' if self.frame_closure_pass else 'FAIL'})",
        ]
        if self.segment_residuals is None:
            lines.append("segment condition: not checked (no target)")
        else:
            worst = max(self.segment_residuals)
            lines.append(
                f"segment condition: worst residual {worst:.3e} "
                f"({'pass' if self.segment_pass else 'FAIL'})")
        if self.noise_residual is None:
            lines.append("noise cancellation: not checked (no noise operator)")
        else:
            lines.append(
                f"noise cancellation: residual {self.noise_residual:.3e} "
                f"({'pass' if self.noise_pass else 'FAIL'})")
        lines.append(f"cycle average: {self.average.to_text()}")
        return "\n".join(lines)


def _frame_before(seq: PulseSequence, index: int):
    """Pulses preceding segment ``index`` (0-based), outermost first."""
    return seq.pulses[:index]


def _toggle_through(op: PauliSum, pulses) -> PauliSum:
    """(P_k...P_1)^{-1} op (P_k...P_1) for pulses in application order."""
    out = op
    for p in reversed(pulses):
        out = conjugate(out, p, inverse_frame=True)
    # innermost conjugation is by the last pulse applied; the loop then
    # works outward to P_1
    return out


def toggling_frame(seq: PulseSequence, include_noise: bool = True):
    """Toggled Hamiltonian of every segment, in order."""
    out = []
    for k, seg in enumerate(seq.segments):
        h = seg.hamiltonian
        if include_noise and seg.noise is not None:
            h = h + seg.noise
        out.append(_toggle_through(h, _frame_before(seq, k)))
    return out


def toggled_noise(seq: PulseSequence, noise: PauliSum):
    """Toggled copies of a common noise operator, one per segment."""
    return [_toggle_through(noise, _frame_before(seq, k))
            for k in range(len(seq.segments))]


def average_hamiltonian(seq: PulseSequence, include_noise: bool = True,
                        beta_model: str = "quadrature") -> PauliSum:
    """Leading-order average Hamiltonian of one cycle.

    Each segment contributes its toggled Hamiltonian weighted by
    ``duration * beta / cycle_time``, where beta is the segment
    envelope's time-dilution factor (1 for unshaped segments). The cycle
    time in the denominator includes pulse durations, which is where the
    echo-pulse dead time dilutes the engineered coupling.
    """
    total = seq.cycle_time
    out = PauliSum.zero(seq.spins)
    for seg, toggled in zip(seq.segments, toggling_frame(seq, include_noise)):
        weight = seg.duration / total
        if seg.envelope is not None:
            weight *= beta_for(seg.envelope, seg.duration, beta_model)
        out = out + weight * toggled
    return out


def _closure_residual(seq: PulseSequence) -> float:
    """Frobenius distance of the single-spin pulse product from identity.

    All pulses are global, so the N-spin product is a tensor power of the
    2x2 product; closure up to global phase is checked on that factor
    after dividing out the phase of its first nonvanishing entry.
    """
    u = np.eye(2, dtype=complex)
    for p in seq.pulses:
        u = p.su2() @ u
    flat = u.ravel()
    pivot = flat[np.argmax(np.abs(flat) > 1e-14)]
    if abs(pivot) <= 1e-14:
        return float(np.linalg.norm(u - np.eye(2)))
    aligned = u / (pivot / abs(pivot))
    return float(np.linalg.norm(aligned - np.eye(2)))


def validate_decoupling(seq: PulseSequence, target: PauliSum | None = None,
                        noise: PauliSum | None = None,
                        tol: float = 1e-10) -> DecouplingReport:
    """Run the decoupling checks for one cycle.

    Checks, each against ``tol``:

    * frame closure: the pulse product is proportional to identity,
    * segment condition (only when ``target`` given): every toggled
      segment Hamiltonian equals the target, largest absolute coefficient
      difference recorded per segment,
    * noise cancellation (only when ``noise`` given): the time-weighted
      toggled noise sums to zero; the residual is normalized by the total
      interaction time and the noise magnitude so the tolerance is
      dimensionless.
    """
    closure = _closure_residual(seq)
    seg_residuals = None
    seg_pass = None
    if target is not None:
        seg_residuals = tuple(
            (toggled - target).max_abs_coefficient
            for toggled in toggling_frame(seq, include_noise=False))
        seg_pass = all(r <= tol for r in seg_residuals)
    noise_residual = None
    noise_pass = None
    if noise is not None:
        acc = PauliSum.zero(seq.spins)
        for seg, toggled in zip(seq.segments, toggled_noise(seq, noise)):
            acc = acc + seg.duration * toggled
        scale = seq.interaction_time * max(noise.max_abs_coefficient, 1e-300)
        noise_residual = acc.max_abs_coefficient / scale
        noise_pass = noise_residual <= tol
    return DecouplingReport(
        tolerance=tol,
        frame_closure_residual=closure,
        frame_closure_pass=closure <= tol,
        segment_residuals=seg_residuals,
        segment_pass=seg_pass,
        noise_residual=noise_residual,
        noise_pass=noise_pass,
        average=average_hamiltonian(seq, include_noise=False),
    )


# ---------------------------------------------------------------------------
# coupling-matrix conveniences


def uniform_coupling(spins: int, j: float) -> np.ndarray:
    """All-pairs coupling matrix with a single strength."""
    m = np.full((spins, spins), float(j))
    np.fill_diagonal(m, 0.0)
    return m


def power_law_coupling(spins: int, j0: float, p: float) -> np.ndarray:
    """J0 / |i-j|^p couplings, the standard long-range profile."""
    m = np.zeros((spins, spins))
    for a in range(spins):
        for b in range(spins):
            if a != b:
                m[a, b] = j0 / abs(a - b) ** p
    return m


def _as_matrix(j, spins: int | None) -> np.ndarray:
    if np.isscalar(j):
        if spins is None:
            raise ValueError("scalar coupling needs an explicit spin count")
        return uniform_coupling(spins, float(j))
    j = np.asarray(j, dtype=float)
    if j.ndim != 2 or j.shape[0] != j.shape[1]:
        raise ValueError("coupling must be a square matrix")
    if not np.allclose(j, j.T, atol=1e-12):
        raise ValueError("coupling matrix must be symmetric")
    return j


def ising_target(j, spins: int | None = None, bx: float = 0.0,
                 by: float = 0.0, bz: float = 0.0) -> PauliSum:
    """XX couplings plus uniform transverse/longitudinal fields."""
    jm = _as_matrix(j, spins)
    n = jm.shape[0]
    out = pair_coupling(jm, "X")
    for strength, letter in ((bx, "X"), (by, "Y"), (bz, "Z")):
        if strength != 0.0:
            out = out + strength * sigma_sum(n, letter)
    return out


# ---------------------------------------------------------------------------
# builders


def _chain(target: PauliSum, pulses, durations, t_pi, label,
           envelope=None, noise=None, declared_average=None,
           declared_target=None) -> PulseSequence:
    """Assemble segments H_n = F_{n-1} H_t F_{n-1}^{-1} for given pulses.

    Conjugating forward cycle by cycle makes every toggled segment land
    back on the target exactly, which is the defining property of the
    field-cycling builders.
    """
    elements = []
    h = target
    for k, (p, dt) in enumerate(zip(pulses, durations)):
        elements.append(Segment(h, dt, noise=noise, envelope=envelope))
        elements.append(p)
        if k + 1 < len(pulses):
            h = conjugate(h, p)
    return PulseSequence(tuple(elements), pulse_duration=t_pi, label=label,
                         declared_target=declared_target,
                         declared_average=declared_average)


def build_cpmg(j, t1: float, t_pi: float = 0.0, *, spins: int | None = None,
               bx: float = 0.0, by: float = 0.0, bz: float = 0.0,
               alternate_sign: bool = False,
               envelope: PulseShape | None = None,
               noise: PauliSum | None = None) -> PulseSequence:
    """Two-segment echo: free evolution, Y flip, mirrored evolution, Y flip.

    Decouples uniform sigma^z (and sigma^x) noise while preserving the XX
    target; ``alternate_sign`` flips the second pulse's rotation sense,
    which leaves the cycle algebra unchanged but mirrors how hardware
    often alternates to cancel pulse-amplitude errors.
    """
    target = ising_target(j, spins, bx, by, bz)
    second = GlobalRotation.y(-math.pi) if alternate_sign else GlobalRotation.y(math.pi)
    return _chain(target, [GlobalRotation.y(math.pi), second], [t1, t1],
                  t_pi, "cpmg", envelope=envelope, noise=noise,
                  declared_target=target)


def build_xy(j, t1: float, t_pi: float = 0.0, *, spins: int | None = None,
             bx: float = 0.0, by: float = 0.0, bz: float = 0.0,
             envelope: PulseShape | None = None,
             noise: PauliSum | None = None) -> PulseSequence:
    """Four-segment XY echo alternating X and Y pi pulses.

    Cancels uniform noise along all three axes over one cycle while
    preserving the XX target.
    """
    target = ising_target(j, spins, bx, by, bz)
    pulses = [GlobalRotation.x(math.pi), GlobalRotation.y(math.pi),
              GlobalRotation.x(math.pi), GlobalRotation.y(math.pi)]
    return _chain(target, pulses, [t1] * 4, t_pi, "xy",
                  envelope=envelope, noise=noise, declared_target=target)


def build_xy2(j, t1: float, t_pi: float = 0.0, *, spins: int | None = None,
              envelope: PulseShape | None = None,
              noise: PauliSum | None = None) -> PulseSequence:
    """Reduced two-pulse XY cycle, emitted in its doubled form.

    A single X-then-minus-Y block leaves a residual polar rotation in the
    frame (its pulse product is a Z half-turn, not a phase), so one block
    alone does not close. Two blocks back to back square that residual
    into a global phase and every decoupling condition holds exactly; the
    sigma^z cancellation already completes within each block.
    """
    target = ising_target(j, spins)
    pulses = [GlobalRotation.x(math.pi), GlobalRotation.minus_y(math.pi),
              GlobalRotation.x(math.pi), GlobalRotation.minus_y(math.pi)]
    return _chain(target, pulses, [t1] * 4, t_pi, "xy2",
                  envelope=envelope, noise=noise, declared_target=target)


def build_heisenberg(j, t1: float, t_pi: float = 0.0, *,
                     spins: int | None = None,
                     envelope: PulseShape | None = None,
                     noise: PauliSum | None = None) -> PulseSequence:
    """Engineer an isotropic Heisenberg average from an XX interaction.

    Segments evolve under XX, YY, and (via quarter-turn frames) ZZ for
    times t1, t1, t1/2 + t1/2, so the cycle average is proportional to
    XX + YY + ZZ. The pulse angles sum to zero, closing the frame
    exactly, and uniform sigma^z noise cancels across the four segments.
    """
    jm = _as_matrix(j, spins)
    h_xx = pair_coupling(jm, "X")
    h_yy = pair_coupling(jm, "Y")
    h_zz = pair_coupling(jm, "Z")
    elements = (
        Segment(h_xx, t1, noise=noise, envelope=envelope),
        GlobalRotation.y(-math.pi),
        Segment(h_yy, t1, noise=noise, envelope=envelope),
        GlobalRotation.y(0.5 * math.pi),
        Segment(h_xx, 0.5 * t1, noise=noise, envelope=envelope),
        GlobalRotation.y(math.pi),
        Segment(h_xx, 0.5 * t1, noise=noise, envelope=envelope),
        GlobalRotation.y(-0.5 * math.pi),
    )
    total = 3.0 * t1 + 4.0 * t_pi
    avg = (t1 / total) * (h_xx + h_yy + h_zz)
    return PulseSequence(elements, pulse_duration=t_pi, label="heisenberg",
                         declared_average=avg)


def build_hs_modified(j, t1: float, t_pi: float = 0.0, *,
                      spins: int | None = None,
                      envelope: PulseShape | None = None,
                      noise: PauliSum | None = None) -> PulseSequence:
    """Heisenberg cycle with the two quarter-turn pulses removed.

    Without the frame rotations the last two half-segments stay in the XX
    frame, so the average becomes proportional to 2*XX + YY: an
    anisotropic model that no longer commutes with a polarized initial
    state. The structure differs from the Heisenberg cycle in exactly two
    pulses (replaced by zero-angle placeholders so segments keep their
    boundaries); sigma^z noise still cancels.
    """
    jm = _as_matrix(j, spins)
    h_xx = pair_coupling(jm, "X")
    h_yy = pair_coupling(jm, "Y")
    elements = (
        Segment(h_xx, t1, noise=noise, envelope=envelope),
        GlobalRotation.y(-math.pi),
        Segment(h_yy, t1, noise=noise, envelope=envelope),
        GlobalRotation.y(0.0),
        Segment(h_xx, 0.5 * t1, noise=noise, envelope=envelope),
        GlobalRotation.y(math.pi),
        Segment(h_xx, 0.5 * t1, noise=noise, envelope=envelope),
        GlobalRotation.y(0.0),
    )
    total = 3.0 * t1 + 2.0 * t_pi
    avg = (t1 / total) * (2.0 * h_xx + h_yy)
    return PulseSequence(elements, pulse_duration=t_pi, label="hs_modified",
                         declared_average=avg)


BUILDERS = {
    "cpmg": build_cpmg,
    "xy": build_xy,
    "xy2": build_xy2,
    "heisenberg": build_heisenberg,
    "hs_modified": build_hs_modified,
}


# ---------------------------------------------------------------------------
# Magnus expansion of the echo cycle under a slow common-mode shift


@dataclass(frozen=True)
class MagnusReport:
    """Leading Magnus corrections for one echo cycle under eps(t) * sum Z."""

    first_order: PauliSum
    second_order: PauliSum
    eps_mean_first: float
    eps_mean_second: float
    eps_asym_first: float
    eps_asym_second: float


def _require_echo_shape(seq: PulseSequence) -> tuple[float, float]:
    segs = seq.segments
    pulses = seq.pulses
    if len(segs) != 2 or len(pulses) != 2:
        raise UnsupportedShapeError("expected the two-segment echo form")
    t_a, t_b = segs[0].duration, segs[1].duration
    if not math.isclose(t_a, t_b, rel_tol=1e-9):
        raise UnsupportedShapeError("echo segments must have equal duration")
    for p in pulses:
        if p.polar:
            raise UnsupportedShapeError("echo pulses must be transverse")
        if not math.isclose(abs(p.angle), math.pi, rel_tol=0, abs_tol=1e-9):
            raise UnsupportedShapeError("echo pulses must be pi rotations")
    dot = float(np.dot(pulses[0].axis_vector, pulses[1].axis_vector))
    if not math.isclose(abs(dot), 1.0, abs_tol=1e-9):
        raise UnsupportedShapeError("echo pulses must share an axis")
    return t_a, seq.pulse_duration


def magnus_error(seq: PulseSequence, noise_trace) -> MagnusReport:
    """First and second Magnus corrections for a sampled common shift.

    ``noise_trace`` is a ``(times, values)`` pair sampling eps(t) in rad/s
    across one cycle, time measured from the start of the first segment.
    The first-order term is the segment-mean imbalance times the
    collective Z; the second order couples the mean and the intra-segment
    asymmetry to the commutator of the ideal Hamiltonian with collective
    Z, which is what survives when the means already cancel.
    """
    t1, t_pi = _require_echo_shape(seq)
    times = np.asarray(noise_trace[0], dtype=float)
    values = np.asarray(noise_trace[1], dtype=float)
    if times.ndim != 1 or times.shape != values.shape or times.size < 2:
        raise ValueError("noise trace needs matching 1-D time/value arrays")
    cycle = 2.0 * t1 + 2.0 * t_pi
    if times[0] > 1e-12 or times[-1] < cycle * (1.0 - 1e-9):
        raise ValueError("noise trace must span the full cycle")

    def window_stats(start: float) -> tuple[float, float]:
        grid = np.linspace(start, start + t1, 2001)
        eps = np.interp(grid, times, values)
        mean = float(np.trapezoid(eps, grid) / t1)
        cum = cumulative_trapezoid(eps, grid, initial=0.0)
        double = float(np.trapezoid((grid - start) * eps - cum, grid))
        return mean, double / t1**2

    mean_a, asym_a = window_stats(0.0)
    mean_c, asym_c = window_stats(t1 + t_pi)
    z = sigma_sum(seq.spins, "Z")
    first = (mean_c - mean_a) * z
    coeff = -0.5j * t1 * (mean_a + mean_c + asym_c - asym_a)
    second = coeff * commutator(seq.segments[0].hamiltonian, z)
    return MagnusReport(first, second, mean_a, mean_c, asym_a, asym_c)


# ---------------------------------------------------------------------------
# rotating-frame bookkeeping for a longitudinal field


@dataclass(frozen=True)
class PhaseLaw:
    """One linear piece of the drive phase schedule, phi = slope*t + intercept."""

    start: float
    stop: float
    slope: float
    intercept: float

    def value(self, t):
        return self.slope * np.asarray(t, dtype=float) + self.intercept


def rotating_frame_phase_schedule(seq: PulseSequence, bz: float,
                                  t0: float = 0.0,
                                  n_cycles: int = 1) -> list[PhaseLaw]:
    """Piecewise-linear drive phase implementing a longitudinal field.

    For the echo cycle, evolving the frame at +-2*bz alternately keeps
    the engineered field aligned while the pi pulses flip the spin frame.
    Cycle n (1-based) ramps down during its first half starting at
    ``t0 + 2(n-1)(t1+t_pi)`` and ramps back up during the second half,
    landing at zero phase at the cycle boundary:

        first half:  phi(t) = -2 bz t + 2 bz (t0 + 2(n-1)(t1+t_pi))
        second half: phi(t) = +2 bz t - 2 bz (t0 + 2 n (t1+t_pi))

    The laws are continuous across every boundary, which is asserted.
    """
    t1, t_pi = _require_echo_shape(seq)
    if n_cycles < 1:
        raise ValueError("need at least one cycle")
    half = t1 + t_pi
    laws = []
    for n in range(1, n_cycles + 1):
        a = t0 + 2.0 * (n - 1) * half
        b = a + half
        laws.append(PhaseLaw(a, b, -2.0 * bz, 2.0 * bz * a))
        laws.append(PhaseLaw(b, b + half, 2.0 * bz,
                             -2.0 * bz * (t0 + 2.0 * n * half)))
    scale = max(abs(2.0 * bz * laws[-1].stop), 1.0)
    for left, right in zip(laws, laws[1:]):
        gap = abs(left.value(left.stop) - right.value(right.start))
        assert gap <= 1e-9 * scale, "phase laws must be continuous"
    return laws


def schedule_phase(laws, t) -> np.ndarray:
    """Evaluate a law list at arbitrary times; zero outside all windows."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.zeros_like(t)
    for law in laws:
        inside = (t >= law.start - 1e-15) & (t <= law.stop + 1e-15)
        out[inside] = law.value(t[inside])
    return out


# ---------------------------------------------------------------------------
# sequence files


def save_sequence_file(seq: PulseSequence, path) -> None:
    """Write a sequence to YAML with microsecond durations and degree angles."""
    elements = []
    for el in seq.elements:
        if isinstance(el, Segment):
            entry = {"hamiltonian": el.hamiltonian.to_text(),
                     "duration_us": el.duration * 1e6}
            elements.append({"segment": entry})
        else:
            entry = {"angle_deg": math.degrees(el.angle)}
            if el.polar:
                entry["axis"] = "z"
            else:
                entry["axis_phase_deg"] = math.degrees(el.axis_phase)
            elements.append({"pulse": entry})
    doc = {
        "spins": seq.spins,
        "pulse_duration_us": seq.pulse_duration * 1e6,
        "elements": elements,
    }
    if seq.label:
        doc["label"] = seq.label
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


_AXIS_SHORTHAND = {
    "x": lambda angle: GlobalRotation.x(angle),
    "y": lambda angle: GlobalRotation.y(angle),
    "-y": lambda angle: GlobalRotation.minus_y(angle),
    "z": lambda angle: GlobalRotation.z(angle),
}


def load_sequence_file(path) -> PulseSequence:
    """Parse a YAML sequence file written by hand or by `save_sequence_file`."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise SequenceFileError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict) or "elements" not in doc:
        raise SequenceFileError(f"{path}: expected a mapping with 'elements'")
    spins = doc.get("spins")
    t_pi = float(doc.get("pulse_duration_us", 0.0)) * 1e-6
    elements = []
    for k, raw in enumerate(doc["elements"]):
        if not isinstance(raw, dict) or len(raw) != 1:
            raise SequenceFileError(
                f"{path}: element {k} must be a single-key mapping")
        kind, body = next(iter(raw.items()))
        try:
            if kind == "segment":
                ham = parse_pauli_text(str(body["hamiltonian"]), spins=spins)
                elements.append(
                    Segment(ham, float(body["duration_us"]) * 1e-6))
            elif kind == "pulse":
                angle = math.radians(float(body["angle_deg"]))
                if "axis" in body:
                    axis = str(body["axis"]).lower()
                    if axis not in _AXIS_SHORTHAND:
                        raise SequenceFileError(
                            f"{path}: element {k}: unknown axis {axis!r}")
                    elements.append(_AXIS_SHORTHAND[axis](angle))
                else:
                    phase = math.radians(float(body["axis_phase_deg"]))
                    elements.append(GlobalRotation(phase, angle))
            else:
                raise SequenceFileError(
                    f"{path}: element {k}: unknown kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SequenceFileError):
                raise
            raise SequenceFileError(
                f"{path}: element {k} ({kind}): {exc}") from exc
    try:
        return PulseSequence(tuple(elements), pulse_duration=t_pi,
                             label=str(doc.get("label", "")))
    except SequenceStructureError as exc:
        raise SequenceFileError(f"{path}: {exc}") from exc
