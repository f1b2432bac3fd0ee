"""Linear-chain equilibrium structure, transverse modes, and couplings.

Positions are dimensionless (the Coulomb/axial length scale is folded
out); frequencies are angular. The transverse-mode calculation assumes
the chain is linear, and reports an instability rather than a zigzag
ground state when the radial confinement is too weak to keep it so.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import constants
from scipy.optimize import brentq, fsolve

DEFAULT_LAMB_DICKE = 0.08
DEFAULT_RESONANCE_GUARD = 2.0 * math.pi * 1.0e3


class EquilibriumConvergenceError(RuntimeError):
    """Position solver failed to reach the required gradient tolerance."""


class ZigzagInstabilityError(RuntimeError):
    """Radial confinement too weak for a linear chain."""


class ResonanceGuardError(ValueError):
    """Drive detuning sits inside the guard band around a mode."""


@dataclass(frozen=True)
class TrapConfig:
    """Harmonic trap for a linear chain.

    Parameters
    ----------
    n_ions:
        Chain length.
    omega_xy:
        Transverse (radial) center-of-mass frequency, rad/s.
    omega_z:
        Axial center-of-mass frequency, rad/s.
    """

    n_ions: int
    omega_xy: float
    omega_z: float

    def __post_init__(self):
        if self.n_ions < 1:
            raise ValueError("need at least one ion")
        if self.omega_z <= 0.0 or self.omega_xy <= 0.0:
            raise ValueError("trap frequencies must be positive")

    @property
    def anisotropy(self) -> float:
        return self.omega_xy / self.omega_z

    def length_scale_m(self, mass_amu: float = 170.936) -> float:
        """Axial Coulomb length (e^2 / 4 pi eps0 m omega_z^2)^(1/3)."""
        coulomb = constants.e ** 2 / (4.0 * math.pi * constants.epsilon_0)
        mass = mass_amu * constants.atomic_mass
        return (coulomb / (mass * self.omega_z ** 2)) ** (1.0 / 3.0)


def _axial_gradient(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    return u - np.sum(np.sign(diff) / diff ** 2, axis=1)


def _axial_hessian(u: np.ndarray) -> np.ndarray:
    diff = u[:, None] - u[None, :]
    np.fill_diagonal(diff, np.inf)
    inv3 = 1.0 / np.abs(diff) ** 3
    h = -2.0 * inv3
    np.fill_diagonal(h, 1.0 + 2.0 * np.sum(inv3, axis=1))
    return h


def equilibrium_positions(trap: TrapConfig) -> np.ndarray:
    """Dimensionless equilibrium positions, sorted ascending.

    Newton-solves the force balance between the axial well and the
    Coulomb repulsion; the result's gradient infinity-norm is verified
    below 1e-12.
    """
    n = trap.n_ions
    if n == 1:
        return np.zeros(1)
    spacing = 2.018 / n ** 0.559
    guess = spacing * (np.arange(n) - 0.5 * (n - 1))
    sol, info, ok, message = fsolve(
        _axial_gradient, guess, fprime=_axial_hessian, full_output=True,
        xtol=1e-13)
    sol = np.sort(sol)
    # The solver's own status can report "xtol too small" after it has
    # already converged; the binding acceptance test is the gradient norm.
    residual = float(np.max(np.abs(_axial_gradient(sol))))
    if residual > 1e-12:
        raise EquilibriumConvergenceError(
            f"position solve left gradient norm {residual:.2e} ({message})")
    return sol


@dataclass(frozen=True)
class ModeStructure:
    """Transverse normal modes of a linear chain.

    ``frequencies`` are sorted descending (center of mass first);
    ``amplitudes`` has one orthonormal row per mode, columns indexing
    sites in position order.
    """

    trap: TrapConfig
    positions: np.ndarray
    frequencies: np.ndarray
    amplitudes: np.ndarray

    @property
    def count(self) -> int:
        return len(self.frequencies)

    def subset(self, indices) -> "ModeStructure":
        """A reduced structure keeping only the selected modes."""
        idx = np.asarray(indices, dtype=int)
        return ModeStructure(self.trap, self.positions,
                             self.frequencies[idx], self.amplitudes[idx])


def transverse_modes(trap: TrapConfig) -> ModeStructure:
    """Diagonalize the transverse Hessian about the linear equilibrium.

    Raises :class:`ZigzagInstabilityError` when the lowest eigenvalue is
    not positive, i.e. the linear chain is not the transverse ground
    state for this anisotropy.
    """
    u = equilibrium_positions(trap)
    n = trap.n_ions
    alpha2 = trap.anisotropy ** 2
    if n == 1:
        k = np.array([[alpha2]])
    else:
        diff = u[:, None] - u[None, :]
        np.fill_diagonal(diff, np.inf)
        inv3 = 1.0 / np.abs(diff) ** 3
        k = inv3.copy()
        np.fill_diagonal(k, alpha2 - np.sum(inv3, axis=1))
    vals, vecs = np.linalg.eigh(k)
    if vals[0] <= 0.0:
        raise ZigzagInstabilityError(
            f"linear chain unstable: lowest transverse eigenvalue "
            f"{vals[0]:.3e} (omega_xy/omega_z = {trap.anisotropy:.2f}, "
            f"raise the radial confinement)")
    order = np.argsort(vals)[::-1]
    freqs = trap.omega_z * np.sqrt(vals[order])
    amps = vecs[:, order].T.copy()
    for row in amps:
        pivot = row[np.argmax(np.abs(row))]
        if pivot < 0.0:
            row *= -1.0
    return ModeStructure(trap, u, freqs, amps)


@dataclass(frozen=True)
class ToneConfig:
    """Symmetric bichromatic drive: tones at +mu and -mu in the spin frame.

    Phases follow the convention that phase -pi/2 on both tones yields a
    pure XX interaction (spin phase zero).
    """

    rabi_1: float
    rabi_2: float
    mu: float
    phase_1: float = -0.5 * math.pi
    phase_2: float = -0.5 * math.pi
    eta: float = DEFAULT_LAMB_DICKE

    def __post_init__(self):
        if self.rabi_1 <= 0.0 or self.rabi_2 <= 0.0:
            raise ValueError("Rabi rates must be positive")
        if self.mu <= 0.0:
            raise ValueError("symmetric detuning mu must be positive")
        if self.eta <= 0.0:
            raise ValueError("Lamb-Dicke parameter must be positive")
        if self.eta > 0.2:
            warnings.warn(
                f"Lamb-Dicke parameter {self.eta} outside the perturbative "
                "regime (> 0.2)", stacklevel=2)

    @property
    def spin_phase(self) -> float:
        """Interaction axis phase (phi1 + phi2 + pi) / 2."""
        return 0.5 * (self.phase_1 + self.phase_2 + math.pi)

    @property
    def rabi_product(self) -> float:
        return self.rabi_1 * self.rabi_2

    def detuning(self, modes: ModeStructure) -> float:
        """Drive detuning from the highest (center-of-mass) mode, rad/s."""
        return self.mu - float(modes.frequencies[0])

    def detuning_ratio(self, modes: ModeStructure) -> float:
        """delta / (eta Omega), the knob the detuning scans sweep."""
        return self.detuning(modes) / (self.eta * math.sqrt(self.rabi_product))


@dataclass(frozen=True)
class CouplingMatrix:
    """Static spin-spin couplings induced by the bichromatic drive."""

    matrix: np.ndarray
    j0: float
    p: float
    mu: float

    @property
    def n_ions(self) -> int:
        return self.matrix.shape[0]


def coupling_matrix(modes: ModeStructure, tones: ToneConfig,
                    guard: float = DEFAULT_RESONANCE_GUARD) -> CouplingMatrix:
    """Mode-summed couplings J_jj' for a far-detuned symmetric drive.

    Every mode must sit outside the guard band around the drive, since
    the static-J picture breaks down near resonance.
    """
    gaps = np.abs(tones.mu - modes.frequencies)
    if np.any(gaps <= guard):
        worst = int(np.argmin(gaps))
        raise ResonanceGuardError(
            f"drive within {gaps[worst] / (2 * math.pi):.1f} Hz of mode "
            f"{worst} (guard band {guard / (2 * math.pi):.1f} Hz)")
    weights = modes.frequencies / (tones.mu ** 2 - modes.frequencies ** 2)
    j = np.einsum("v,vj,vk->jk", weights, modes.amplitudes, modes.amplitudes)
    j *= tones.eta ** 2 * tones.rabi_product
    np.fill_diagonal(j, 0.0)
    if modes.count >= 3:
        j0, p = power_law_fit(j)
    elif modes.count == 2:
        j0, p = abs(j[0, 1]), math.nan
    else:
        j0, p = 0.0, math.nan
    return CouplingMatrix(j, j0, p, tones.mu)


def power_law_fit(j_matrix: np.ndarray) -> tuple[float, float]:
    """Fit |J_ij| = J0 / |i-j|^p by least squares in log-log space.

    Zero couplings are excluded with a warning; two-ion matrices return
    the bare coupling with an undefined (NaN) exponent since a single
    distance cannot pin a slope.
    """
    j_matrix = np.asarray(j_matrix, dtype=float)
    n = j_matrix.shape[0]
    if n < 2:
        raise ValueError("need at least two ions")
    if n == 2:
        return abs(j_matrix[0, 1]), math.nan
    dists, mags = [], []
    skipped = 0
    for a in range(n):
        for b in range(a + 1, n):
            val = abs(j_matrix[a, b])
            if val <= 0.0:
                skipped += 1
                continue
            dists.append(b - a)
            mags.append(val)
    if skipped:
        warnings.warn(f"power-law fit skipped {skipped} zero couplings",
                      stacklevel=2)
    if len(set(dists)) < 2:
        raise ValueError("need at least two distinct distances to fit")
    slope, intercept = np.polyfit(np.log(dists), np.log(mags), 1)
    return float(math.exp(intercept)), float(-slope)


def solve_rabi(modes: ModeStructure, mu: float, j0_target: float,
               eta: float = DEFAULT_LAMB_DICKE,
               guard: float = DEFAULT_RESONANCE_GUARD) -> float:
    """Rabi rate whose couplings hit ``j0_target`` at a fixed drive mu.

    J scales as the Rabi-rate square exactly, so one probe evaluation
    suffices.
    """
    probe = ToneConfig(1.0, 1.0, mu, eta=eta)
    j0 = coupling_matrix(modes, probe, guard).j0
    if j0 <= 0.0:
        raise ValueError("probe coupling vanished; cannot scale to target")
    return math.sqrt(j0_target / j0)


def solve_tones(modes: ModeStructure, j0_target: float, detuning_ratio: float,
                eta: float = DEFAULT_LAMB_DICKE,
                phases: tuple[float, float] = (-0.5 * math.pi, -0.5 * math.pi),
                guard: float = DEFAULT_RESONANCE_GUARD) -> ToneConfig:
    """Find (Omega, mu) hitting a coupling target at a fixed delta/(eta Omega).

    With mu tied to Omega through the ratio, the reachable J0 grows
    monotonically with Omega but saturates (the near-degenerate modes
    progressively cancel), so this brackets the target and bisects. A
    target above the saturation ceiling raises with the reachable value
    in the message.
    """
    if j0_target <= 0.0:
        raise ValueError("coupling target must be positive")
    if detuning_ratio <= 0.0:
        raise ValueError("detuning ratio must be positive")
    om1 = float(modes.frequencies[0])

    def tones_at(omega: float) -> ToneConfig:
        mu = om1 + detuning_ratio * eta * omega
        return ToneConfig(omega, omega, mu, phases[0], phases[1], eta)

    def j0_at(omega: float) -> float:
        return coupling_matrix(modes, tones_at(omega), guard).j0

    lo = 1.05 * guard / (detuning_ratio * eta)
    if j0_at(lo) >= j0_target:
        raise ValueError(
            "coupling target sits below the resonance-guard floor; "
            "widen the ratio or relax the guard")
    hi = lo
    ceiling = 2.0 * math.pi * 500e6
    while j0_at(hi) < j0_target:
        hi *= 2.0
        if hi > ceiling:
            raise ValueError(
                f"coupling target {j0_target / (2 * math.pi):.3g} Hz is not "
                f"reachable at ratio {detuning_ratio:g} (saturates near "
                f"{j0_at(ceiling) / (2 * math.pi):.3g} Hz)")
    omega = brentq(lambda w: j0_at(w) - j0_target, lo, hi,
                   xtol=1e-6, rtol=1e-14, maxiter=200)
    tones = tones_at(omega)
    final = coupling_matrix(modes, tones, guard).j0
    if not math.isclose(final, j0_target, rel_tol=1e-9):
        raise RuntimeError(
            f"tone solve stalled: reached J0 = {final:.6g} rad/s against "
            f"target {j0_target:.6g} rad/s")
    return tones


def carrier_pi_time(rabi: float) -> float:
    """Duration of a resonant-carrier pi pulse at the given Rabi rate."""
    if rabi <= 0.0:
        raise ValueError("Rabi rate must be positive")
    return math.pi / rabi
