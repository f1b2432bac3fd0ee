"""Sequence-engine tests.

The heavy oracle here is dense matrix evolution: a cycle's exact
propagator is the time-ordered product of expm(-i H_n t_n) and pulse
unitaries, and for the field-cycling builders it must factor exactly
into (pulse product) * expm(-i Hbar T).
"""

import math

import numpy as np
import pytest
from scipy.linalg import expm

from pulseforge.pauli import (
    GlobalRotation,
    PauliSum,
    commutator,
    sigma_sum,
)
from pulseforge.sequences import (
    BUILDERS,
    PulseSequence,
    Segment,
    SequenceFileError,
    SequenceStructureError,
    UnsupportedShapeError,
    average_hamiltonian,
    build_cpmg,
    build_heisenberg,
    build_hs_modified,
    build_xy,
    build_xy2,
    load_sequence_file,
    magnus_error,
    power_law_coupling,
    rotating_frame_phase_schedule,
    save_sequence_file,
    schedule_phase,
    toggled_noise,
    toggling_frame,
    uniform_coupling,
    validate_decoupling,
)

J2 = uniform_coupling(2, 1.0)


def cycle_propagator(seq: PulseSequence) -> np.ndarray:
    """Exact dense cycle unitary, pulses treated as instantaneous."""
    dim = 2 ** seq.spins
    u = np.eye(dim, dtype=complex)
    for el in seq.elements:
        if isinstance(el, Segment):
            u = expm(-1j * el.hamiltonian.to_dense() * el.duration) @ u
        else:
            u = el.dense(seq.spins) @ u
    return u


def pulse_product(seq: PulseSequence) -> np.ndarray:
    dim = 2 ** seq.spins
    u = np.eye(dim, dtype=complex)
    for p in seq.pulses:
        u = p.dense(seq.spins) @ u
    return u


def aht_defect(seq: PulseSequence) -> float:
    """Distance between the exact cycle and the average-Hamiltonian model."""
    model = pulse_product(seq) @ expm(
        -1j * average_hamiltonian(seq).to_dense() * seq.cycle_time)
    return float(np.linalg.norm(cycle_propagator(seq) - model, 2))


class TestCpmg:
    def test_toggled_segments_equal_target(self):
        seq = build_cpmg(J2, 1e-4, bx=3.0, bz=7.0)
        toggled = toggling_frame(seq)
        for h in toggled:
            assert h.approx_equal(seq.declared_target, tol=0.0)

    def test_toggled_noise_alternates_sign(self):
        seq = build_cpmg(J2, 1e-4)
        z = sigma_sum(2, "Z")
        copies = toggled_noise(seq, z)
        assert copies[0].approx_equal(z, tol=0.0)
        assert copies[1].approx_equal(-1.0 * z, tol=0.0)

    def test_alternate_sign_pulse_product_is_exact_identity(self):
        seq = build_cpmg(J2, 1e-4, alternate_sign=True)
        report = validate_decoupling(seq, seq.declared_target, sigma_sum(2, "Z"))
        assert report.frame_closure_residual == 0.0

    def test_second_segment_flips_transverse_and_longitudinal_fields(self):
        seq = build_cpmg(J2, 1e-4, bx=2.0, by=3.0, bz=5.0)
        h2 = seq.segments[1].hamiltonian
        assert h2.coefficient("XI") == -2.0
        assert h2.coefficient("IY") == 3.0
        assert h2.coefficient("ZI") == -5.0
        assert h2.coefficient("XX") == 1.0


class TestXy:
    def test_field_cycling_pattern(self):
        seq = build_xy(J2, 1e-4, bx=2.0, by=3.0, bz=5.0)
        signs = [(h.coefficient("XI").real / 2.0,
                  h.coefficient("YI").real / 3.0,
                  h.coefficient("ZI").real / 5.0)
                 for h in (s.hamiltonian for s in seq.segments)]
        assert signs == [(1, 1, 1), (1, -1, -1), (-1, -1, 1), (-1, 1, -1)]

    def test_cancels_noise_on_all_axes(self):
        seq = build_xy(J2, 1e-4)
        for letter in "XYZ":
            report = validate_decoupling(seq, seq.declared_target,
                                         sigma_sum(2, letter), tol=1e-12)
            assert report.noise_pass

    def test_time_dilution_of_coupling(self):
        t1, t_pi = 120e-6, 5e-6
        seq = build_xy(J2, t1, t_pi)
        avg = average_hamiltonian(seq)
        assert math.isclose(avg.coefficient("XX").real,
                            t1 / (t1 + t_pi), rel_tol=1e-12)


class TestXy2:
    def test_single_block_does_not_close(self):
        seq = build_xy2(J2, 1e-4)
        half = PulseSequence(seq.elements[:4], pulse_duration=0.0)
        report = validate_decoupling(half)
        assert not report.frame_closure_pass
        assert math.isclose(report.frame_closure_residual, 2.0, abs_tol=1e-12)

    def test_doubled_cycle_passes_everything(self):
        seq = build_xy2(J2, 1e-4)
        report = validate_decoupling(seq, seq.declared_target,
                                     sigma_sum(2, "Z"), tol=1e-12)
        assert report.passed

    def test_sigma_z_cancels_within_each_half(self):
        seq = build_xy2(J2, 1e-4)
        copies = toggled_noise(seq, sigma_sum(2, "Z"))
        first_half = copies[0] + copies[1]
        second_half = copies[2] + copies[3]
        assert first_half.max_abs_coefficient == 0.0
        assert second_half.max_abs_coefficient == 0.0


class TestHeisenberg:
    def test_toggled_segment_pattern(self):
        seq = build_heisenberg(J2, 1e-4)
        words = [h.to_text() for h in toggling_frame(seq)]
        assert words == ["1.0*XX", "1.0*YY", "1.0*ZZ", "1.0*ZZ"]

    def test_average_is_isotropic_with_positive_zz(self):
        t1, t_pi = 1e-4, 5e-6
        seq = build_heisenberg(J2, t1, t_pi)
        avg = average_hamiltonian(seq)
        w = t1 / (3.0 * t1 + 4.0 * t_pi)
        for word in ("XX", "YY", "ZZ"):
            assert math.isclose(avg.coefficient(word).real, w, rel_tol=1e-12)
        assert avg.coefficient("ZZ").real > 0.0
        assert avg.approx_equal(seq.declared_average, tol=1e-15)

    def test_closure_and_noise(self):
        seq = build_heisenberg(J2, 1e-4, 5e-6)
        report = validate_decoupling(seq, noise=sigma_sum(2, "Z"), tol=1e-12)
        assert report.frame_closure_pass
        assert report.noise_pass

    def test_average_commutes_with_collective_z(self):
        seq = build_heisenberg(uniform_coupling(3, 0.7), 1e-4)
        avg = average_hamiltonian(seq)
        comm = commutator(avg, sigma_sum(3, "Z"))
        assert comm.max_abs_coefficient <= 1e-14


class TestHsModified:
    def test_average_is_anisotropic(self):
        t1 = 1e-4
        seq = build_hs_modified(J2, t1)
        avg = average_hamiltonian(seq)
        assert math.isclose(avg.coefficient("XX").real, 2.0 / 3.0, rel_tol=1e-12)
        assert math.isclose(avg.coefficient("YY").real, 1.0 / 3.0, rel_tol=1e-12)
        assert avg.coefficient("ZZ") == 0.0

    def test_average_no_longer_commutes_with_collective_z(self):
        seq = build_hs_modified(uniform_coupling(3, 0.7), 1e-4)
        comm = commutator(average_hamiltonian(seq), sigma_sum(3, "Z"))
        assert comm.max_abs_coefficient > 0.1

    def test_differs_from_heisenberg_in_exactly_two_pulses(self):
        a = build_heisenberg(J2, 1e-4)
        b = build_hs_modified(J2, 1e-4)
        assert len(a.elements) == len(b.elements)
        diffs = 0
        for ea, eb in zip(a.pulses, b.pulses):
            if not (math.isclose(ea.angle, eb.angle, abs_tol=1e-15)
                    and ea.axis_phase == eb.axis_phase):
                diffs += 1
        assert diffs == 2
        for sa, sb in zip(a.segments, b.segments):
            assert sa.hamiltonian.approx_equal(sb.hamiltonian, tol=0.0)
            assert sa.duration == sb.duration

    def test_still_cancels_sigma_z(self):
        seq = build_hs_modified(J2, 1e-4)
        report = validate_decoupling(seq, noise=sigma_sum(2, "Z"), tol=1e-12)
        assert report.noise_pass and report.frame_closure_pass


class TestAllBuilders:
    def test_every_builder_validates_clean(self):
        j = uniform_coupling(2, 2.0)
        z = sigma_sum(2, "Z")
        for name, build in BUILDERS.items():
            seq = build(j, 1e-4, 5e-6)
            target = seq.declared_target
            report = validate_decoupling(seq, target, z, tol=1e-12)
            assert report.passed, f"{name}: {report.describe()}"

    def test_scalar_coupling_needs_spin_count(self):
        with pytest.raises(ValueError):
            build_cpmg(1.0, 1e-4)
        seq = build_cpmg(1.0, 1e-4, spins=3)
        assert seq.spins == 3


class TestAhtExactness:
    def test_echo_family_cycles_factor_exactly(self):
        rng = np.random.default_rng(99)
        for build in (build_cpmg, build_xy, build_xy2):
            for spins in (2, 3):
                m = rng.normal(size=(spins, spins))
                j = (m + m.T) / 2.0
                np.fill_diagonal(j, 0.0)
                kwargs = {} if build is build_xy2 else {"bz": 0.4, "bx": 0.2}
                seq = build(j * 1e3, 80e-6, **kwargs)
                assert aht_defect(seq) < 1e-10

    def test_heisenberg_two_ion_exact(self):
        seq = build_heisenberg(J2 * 1e3, 100e-6)
        assert aht_defect(seq) < 1e-10

    def test_heisenberg_three_ion_trotter_scaling(self):
        # Same total time, half the cycle length: the defect against the
        # average-Hamiltonian model should shrink by about the cycle ratio.
        j = power_law_coupling(3, 2e3, 1.3)
        t1 = 200e-6
        coarse = build_heisenberg(j, t1)
        fine = build_heisenberg(j, t1 / 2.0)
        h = average_hamiltonian(coarse).to_dense()
        assert np.allclose(h, average_hamiltonian(fine).to_dense(), atol=1e-12)
        model = expm(-1j * h * coarse.cycle_time)
        u_fine = cycle_propagator(fine)
        err_coarse = np.linalg.norm(cycle_propagator(coarse) - model, 2)
        err_fine = np.linalg.norm(u_fine @ u_fine - model, 2)
        assert err_coarse / err_fine >= 1.8

    def test_cyclic_relabeling_invariance(self):
        j = power_law_coupling(4, 1e3, 2.0)
        perm = [1, 2, 3, 0]
        j_rot = j[np.ix_(perm, perm)]
        avg = average_hamiltonian(build_heisenberg(j, 1e-4))
        avg_rot = average_hamiltonian(build_heisenberg(j_rot, 1e-4))
        relabeled = PauliSum(4, {"".join(word[perm[k]] for k in range(4)): c
                                 for word, c in avg.terms.items()})
        assert avg_rot.approx_equal(relabeled, tol=1e-12)


class TestMagnus:
    def make_trace(self, seq, fn, n=4001):
        t = np.linspace(0.0, seq.cycle_time, n)
        return t, fn(t)

    def test_constant_shift_cancels_at_first_order(self):
        t1 = 100e-6
        seq = build_cpmg(J2 * 1e3, t1, 5e-6)
        trace = self.make_trace(seq, lambda t: np.full_like(t, 30.0))
        rep = magnus_error(seq, trace)
        assert rep.first_order.max_abs_coefficient < 1e-9
        # second order collapses to -i t1 eps [H_t, sum Z] for a flat trace
        comm = commutator(seq.segments[0].hamiltonian, sigma_sum(2, "Z"))
        want = (-1j * t1 * 30.0) * comm
        assert rep.second_order.approx_equal(want, tol=1e-8)

    def test_linear_drift_first_order(self):
        t1, t_pi = 100e-6, 5e-6
        k = 2.0e6
        seq = build_cpmg(J2 * 1e3, t1, t_pi)
        trace = self.make_trace(seq, lambda t: k * t)
        rep = magnus_error(seq, trace)
        got = rep.first_order.coefficient("ZI").real
        assert math.isclose(got, k * (t1 + t_pi), rel_tol=1e-6)
        half = build_cpmg(J2 * 1e3, t1 / 2.0, 0.0)
        rep_half = magnus_error(half, self.make_trace(half, lambda t: k * t))
        assert math.isclose(rep_half.first_order.coefficient("ZI").real,
                            k * t1 / 2.0, rel_tol=1e-6)

    def test_pure_longitudinal_target_kills_second_order(self):
        seq = build_cpmg(np.zeros((2, 2)), 100e-6, bz=50.0)
        trace = self.make_trace(seq, lambda t: 10.0 + 3e4 * t)
        rep = magnus_error(seq, trace)
        assert rep.second_order.max_abs_coefficient < 1e-12

    def test_rejects_non_echo_shapes(self):
        seq = build_xy(J2, 1e-4)
        trace = self.make_trace(seq, lambda t: np.zeros_like(t))
        with pytest.raises(UnsupportedShapeError):
            magnus_error(seq, trace)


class TestPhaseSchedule:
    def test_printed_laws(self):
        t1, t_pi, bz, t0 = 100e-6, 5e-6, 2.0 * math.pi * 300.0, 2e-3
        seq = build_cpmg(J2 * 1e3, t1, t_pi, bz=bz)
        laws = rotating_frame_phase_schedule(seq, bz, t0=t0, n_cycles=2)
        assert len(laws) == 4
        half = t1 + t_pi
        for n in (1, 2):
            down, up = laws[2 * (n - 1)], laws[2 * n - 1]
            assert math.isclose(down.slope, -2.0 * bz)
            assert math.isclose(down.intercept,
                                2.0 * bz * (t0 + 2 * (n - 1) * half))
            assert math.isclose(up.slope, 2.0 * bz)
            assert math.isclose(up.intercept, -2.0 * bz * (t0 + 2 * n * half))
            # sawtooth: zero at cycle edges, -2 bz half at the midpoint
            assert abs(down.value(down.start)) < 1e-9 * bz * half
            assert math.isclose(down.value(down.stop), -2.0 * bz * half,
                                rel_tol=1e-9)
            assert math.isclose(up.value(up.start), -2.0 * bz * half,
                                rel_tol=1e-9)
            assert abs(up.value(up.stop)) < 1e-9 * bz * half

    def test_zero_field_gives_zero_schedule(self):
        seq = build_cpmg(J2, 1e-4)
        laws = rotating_frame_phase_schedule(seq, 0.0, n_cycles=3)
        t = np.linspace(0, 6e-4, 50)
        assert np.all(schedule_phase(laws, t) == 0.0)

    def test_rejects_non_echo_sequence(self):
        with pytest.raises(UnsupportedShapeError):
            rotating_frame_phase_schedule(build_xy(J2, 1e-4), 1.0)

    def test_schedule_phase_outside_windows_is_zero(self):
        seq = build_cpmg(J2, 1e-4)
        laws = rotating_frame_phase_schedule(seq, 100.0, t0=1e-3, n_cycles=1)
        assert schedule_phase(laws, [0.0])[0] == 0.0


class TestStructure:
    def test_alternation_enforced(self):
        seg = Segment(PauliSum.from_label("XX"), 1e-4)
        with pytest.raises(SequenceStructureError):
            PulseSequence((seg, seg))
        with pytest.raises(SequenceStructureError):
            PulseSequence((GlobalRotation.x(1.0), seg))
        with pytest.raises(SequenceStructureError):
            PulseSequence((seg,))

    def test_segment_checks(self):
        with pytest.raises(SequenceStructureError):
            Segment(PauliSum.from_label("XX"), -1.0)
        with pytest.raises(SequenceStructureError):
            Segment(PauliSum(2, {"XY": 1j}), 1e-4)

    def test_mismatched_spin_counts(self):
        with pytest.raises(SequenceStructureError):
            PulseSequence((
                Segment(PauliSum.from_label("XX"), 1e-4),
                GlobalRotation.x(math.pi),
                Segment(PauliSum.from_label("XXX"), 1e-4),
                GlobalRotation.x(math.pi),
            ))

    def test_corrupted_cpmg_flags_residual_two(self):
        seq = build_cpmg(J2, 1e-4)
        corrupted = PulseSequence(
            seq.elements[:-1] + (GlobalRotation.y(0.0),))
        report = validate_decoupling(corrupted)
        assert math.isclose(report.frame_closure_residual, 2.0, abs_tol=1e-12)
        assert not report.passed

    def test_cycle_time_skips_zero_angle_pulses(self):
        t1, t_pi = 1e-4, 5e-6
        assert math.isclose(build_heisenberg(J2, t1, t_pi).cycle_time,
                            3 * t1 + 4 * t_pi)
        assert math.isclose(build_hs_modified(J2, t1, t_pi).cycle_time,
                            3 * t1 + 2 * t_pi)


class TestSequenceFiles:
    def test_round_trip(self, tmp_path):
        seq = build_heisenberg(J2 * 1234.5, 120e-6, 5e-6)
        path = tmp_path / "heis.yaml"
        save_sequence_file(seq, path)
        back = load_sequence_file(path)
        assert back.spins == seq.spins
        assert math.isclose(back.pulse_duration, seq.pulse_duration)
        assert len(back.elements) == len(seq.elements)
        for a, b in zip(seq.segments, back.segments):
            assert b.hamiltonian.approx_equal(a.hamiltonian, tol=1e-9)
            assert math.isclose(a.duration, b.duration)
        for a, b in zip(seq.pulses, back.pulses):
            assert math.isclose(a.angle, b.angle, abs_tol=1e-12)

    def test_axis_shorthand(self, tmp_path):
        path = tmp_path / "seq.yaml"
        path.write_text(
            "spins: 2\n"
            "pulse_duration_us: 0.0\n"
            "elements:\n"
            "  - segment: {hamiltonian: '1.0*XX', duration_us: 10.0}\n"
            "  - pulse: {axis: -y, angle_deg: 180.0}\n")
        seq = load_sequence_file(path)
        assert np.allclose(seq.pulses[0].axis_vector, [0, -1, 0])

    def test_error_reports_element_index(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text(
            "spins: 2\n"
            "elements:\n"
            "  - segment: {hamiltonian: '1.0*XQ', duration_us: 10.0}\n")
        with pytest.raises(SequenceFileError, match="element 0"):
            load_sequence_file(path)

    def test_invalid_yaml(self, tmp_path):
        path = tmp_path / "broken.yaml"
        path.write_text("elements: [unclosed\n")
        with pytest.raises(SequenceFileError):
            load_sequence_file(path)

    def test_unknown_axis(self, tmp_path):
        path = tmp_path / "axis.yaml"
        path.write_text(
            "spins: 2\n"
            "elements:\n"
            "  - segment: {hamiltonian: '1.0*XX', duration_us: 10.0}\n"
            "  - pulse: {axis: q, angle_deg: 180.0}\n")
        with pytest.raises(SequenceFileError, match="axis"):
            load_sequence_file(path)
