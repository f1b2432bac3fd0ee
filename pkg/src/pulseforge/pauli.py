"""Exact algebra of N-spin Pauli operators.

Operators are stored as dictionaries mapping Pauli strings (words over
``IXYZ``, one letter per spin, site 0 leftmost) to complex coefficients.
Products, commutators, and conjugation by global single-spin rotations are
evaluated symbolically, so Clifford conjugations (rotation angles that are
multiples of a quarter turn) map single strings to single strings with
exact integer phases rather than accumulating float noise.

Basis conventions, used consistently by the dense converters and the
state-vector helpers:

* site 0 is the most significant bit of the computational index,
* the first basis vector is the all-up state, with "up" the +1 eigenstate
  of Z,
* ``Y|0> = i|1>`` and ``Y|1> = -i|0>``.

A rotation ``GlobalRotation(axis_phase=phi, angle=theta)`` means the
transverse-axis unitary ``exp(-i theta (cos(phi) X - sin(phi) Y)/2)``
applied to every spin; ``polar=True`` selects the Z axis instead and the
phase is ignored.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass

import numpy as np

_LETTERS = "IXYZ"

# Single-site products: (left, right) -> (phase, result letter).
_SITE_PRODUCT = {
    ("I", "I"): (1, "I"), ("I", "X"): (1, "X"), ("I", "Y"): (1, "Y"), ("I", "Z"): (1, "Z"),
    ("X", "I"): (1, "X"), ("Y", "I"): (1, "Y"), ("Z", "I"): (1, "Z"),
    ("X", "X"): (1, "I"), ("Y", "Y"): (1, "I"), ("Z", "Z"): (1, "I"),
    ("X", "Y"): (1j, "Z"), ("Y", "X"): (-1j, "Z"),
    ("Y", "Z"): (1j, "X"), ("Z", "Y"): (-1j, "X"),
    ("Z", "X"): (1j, "Y"), ("X", "Z"): (-1j, "Y"),
}

_SINGLE = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

DENSE_SPIN_CAP = 14

# Relative tolerance used when canonicalizing coefficient dictionaries.
_CANON_RTOL = 1e-12

# Angles within this of a quarter-turn multiple are treated as exact.
_QUARTER_SNAP = 1e-9


class DimensionMismatchError(ValueError):
    """Operands act on different numbers of spins."""


class DenseCapExceededError(ValueError):
    """Dense conversion requested beyond the supported spin count."""


class PauliParseError(ValueError):
    """Textual Pauli notation could not be parsed."""


def _exact_trig(angle: float) -> tuple[float, float]:
    """cos/sin with quarter-turn multiples snapped to exact 0 and +-1."""
    quarter = angle / (0.5 * math.pi)
    nearest = round(quarter)
    if abs(quarter - nearest) < _QUARTER_SNAP:
        c = (1.0, 0.0, -1.0, 0.0)[nearest % 4]
        s = (0.0, 1.0, 0.0, -1.0)[nearest % 4]
        return c, s
    return math.cos(angle), math.sin(angle)


@dataclass(frozen=True)
class PauliString:
    """One weighted Pauli word, e.g. ``0.5 * XYI``."""

    coefficient: complex
    ops: str

    def __post_init__(self):
        if not self.ops or any(ch not in _LETTERS for ch in self.ops):
            raise PauliParseError(f"invalid Pauli word {self.ops!r}")

    @property
    def spins(self) -> int:
        return len(self.ops)

    @property
    def weight(self) -> int:
        """Number of non-identity sites."""
        return sum(1 for ch in self.ops if ch != "I")

    def __mul__(self, other):
        if isinstance(other, PauliString):
            return multiply(self, other)
        if isinstance(other, (int, float, complex)):
            return PauliString(self.coefficient * other, self.ops)
        return NotImplemented

    __rmul__ = __mul__


def multiply(a: PauliString, b: PauliString) -> PauliString:
    """Exact product of two Pauli words, phases tracked symbolically."""
    if a.spins != b.spins:
        raise DimensionMismatchError(
            f"cannot multiply words on {a.spins} and {b.spins} spins")
    phase = a.coefficient * b.coefficient
    out = []
    for la, lb in zip(a.ops, b.ops):
        p, lc = _SITE_PRODUCT[(la, lb)]
        phase *= p
        out.append(lc)
    return PauliString(phase, "".join(out))


class PauliSum:
    """A complex-weighted sum of Pauli words on a fixed number of spins.

    Construction canonicalizes: duplicate words are merged and terms whose
    magnitude falls below ``1e-12`` of the largest coefficient are dropped.
    Instances are treated as immutable; arithmetic returns new objects.
    """

    __slots__ = ("_terms", "_spins")

    def __init__(self, spins: int, terms=None):
        if spins < 1:
            raise DimensionMismatchError("need at least one spin")
        self._spins = int(spins)
        merged: dict[str, complex] = {}
        if terms:
            items = terms.items() if isinstance(terms, dict) else terms
            for ops, coeff in items:
                if len(ops) != self._spins:
                    raise DimensionMismatchError(
                        f"word {ops!r} does not act on {self._spins} spins")
                if any(ch not in _LETTERS for ch in ops):
                    raise PauliParseError(f"invalid Pauli word {ops!r}")
                merged[ops] = merged.get(ops, 0j) + complex(coeff)
        if merged:
            ceiling = max(abs(c) for c in merged.values())
            floor = _CANON_RTOL * ceiling
            merged = {k: v for k, v in merged.items() if abs(v) > floor}
        self._terms = merged

    # -- constructors -------------------------------------------------

    @classmethod
    def zero(cls, spins: int) -> "PauliSum":
        return cls(spins)

    @classmethod
    def identity(cls, spins: int, coeff: complex = 1.0) -> "PauliSum":
        return cls(spins, {"I" * spins: coeff})

    @classmethod
    def from_label(cls, ops: str, coeff: complex = 1.0) -> "PauliSum":
        return cls(len(ops), {ops: coeff})

    @classmethod
    def from_strings(cls, strings) -> "PauliSum":
        strings = list(strings)
        if not strings:
            raise ValueError("from_strings needs at least one term")
        return cls(strings[0].spins,
                   [(s.ops, s.coefficient) for s in strings])

    # -- introspection -------------------------------------------------

    @property
    def spins(self) -> int:
        return self._spins

    @property
    def terms(self) -> dict[str, complex]:
        """Canonical word -> coefficient mapping (copy)."""
        return dict(self._terms)

    def items(self):
        """Deterministically ordered (word, coefficient) pairs."""
        return sorted(self._terms.items())

    def coefficient(self, ops: str) -> complex:
        return self._terms.get(ops, 0j)

    def __len__(self):
        return len(self._terms)

    def __bool__(self):
        return bool(self._terms)

    @property
    def max_abs_coefficient(self) -> float:
        return max((abs(c) for c in self._terms.values()), default=0.0)

    @property
    def is_hermitian(self) -> bool:
        """True when every canonical coefficient is real."""
        scale = max(1.0, self.max_abs_coefficient)
        return all(abs(c.imag) <= 1e-12 * scale for c in self._terms.values())

    def approx_equal(self, other: "PauliSum", tol: float = 1e-12) -> bool:
        diff = self - other
        return diff.max_abs_coefficient <= tol

    # -- arithmetic ----------------------------------------------------

    def _require_same_spins(self, other: "PauliSum"):
        if self._spins != other._spins:
            raise DimensionMismatchError(
                f"operands act on {self._spins} and {other._spins} spins")

    def __add__(self, other):
        if isinstance(other, PauliString):
            other = PauliSum.from_strings([other])
        if not isinstance(other, PauliSum):
            return NotImplemented
        self._require_same_spins(other)
        merged = dict(self._terms)
        for ops, c in other._terms.items():
            merged[ops] = merged.get(ops, 0j) + c
        return PauliSum(self._spins, merged)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self

    def __mul__(self, other):
        if isinstance(other, (int, float, complex)):
            return PauliSum(self._spins,
                            {k: v * other for k, v in self._terms.items()})
        if isinstance(other, PauliString):
            other = PauliSum.from_strings([other])
        if isinstance(other, PauliSum):
            self._require_same_spins(other)
            out: dict[str, complex] = {}
            for ka, va in self._terms.items():
                for kb, vb in other._terms.items():
                    prod = multiply(PauliString(va, ka), PauliString(vb, kb))
                    out[prod.ops] = out.get(prod.ops, 0j) + prod.coefficient
            return PauliSum(self._spins, out)
        return NotImplemented

    def __rmul__(self, other):
        if isinstance(other, (int, float, complex)):
            return self.__mul__(other)
        return NotImplemented

    def __repr__(self):
        return f"PauliSum({self._spins}, {self.to_text()!r})"

    # -- dense conversion ----------------------------------------------

    def _masks(self, ops: str) -> tuple[int, int, int]:
        x = y = z = 0
        n = self._spins
        for j, ch in enumerate(ops):
            bit = 1 << (n - 1 - j)
            if ch == "X":
                x |= bit
            elif ch == "Y":
                y |= bit
            elif ch == "Z":
                z |= bit
        return x, y, z

    def to_dense(self) -> np.ndarray:
        """Dense matrix in the computational basis (site 0 = MSB)."""
        n = self._spins
        if n > DENSE_SPIN_CAP:
            raise DenseCapExceededError(
                f"dense conversion capped at {DENSE_SPIN_CAP} spins, got {n}")
        dim = 1 << n
        mat = np.zeros((dim, dim), dtype=complex)
        cols = np.arange(dim)
        for ops, coeff in self.items():
            xm, ym, zm = self._masks(ops)
            ny = bin(ym).count("1")
            signs = 1.0 - 2.0 * (np.bitwise_count(cols & (ym | zm)) & 1)
            rows = cols ^ (xm | ym)
            mat[rows, cols] += coeff * (1j ** ny) * signs
        return mat

    def apply(self, state: np.ndarray) -> np.ndarray:
        """Apply the operator to a state vector without building a matrix."""
        n = self._spins
        dim = 1 << n
        if state.shape[0] != dim:
            raise DimensionMismatchError(
                f"state of length {state.shape[0]} does not fit {n} spins")
        idx = np.arange(dim)
        out = np.zeros(state.shape, dtype=complex)
        for ops, coeff in self._terms.items():
            xm, ym, zm = self._masks(ops)
            ny = bin(ym).count("1")
            signs = 1.0 - 2.0 * (np.bitwise_count(idx & (ym | zm)) & 1)
            amp = coeff * (1j ** ny) * signs
            if state.ndim == 1:
                out[idx ^ (xm | ym)] += amp * state
            else:
                out[idx ^ (xm | ym), :] += amp[:, None] * state
        return out

    def expectation(self, state: np.ndarray) -> complex:
        return complex(np.vdot(state, self.apply(state)))

    # -- text format -----------------------------------------------------

    def to_text(self) -> str:
        """Round-trippable textual form, e.g. ``0.5*XXI + -0.25*ZII``."""
        if not self._terms:
            return "0"
        parts = []
        scale = max(1.0, self.max_abs_coefficient)
        for ops, coeff in self.items():
            if abs(coeff.imag) <= 1e-15 * scale:
                cs = repr(float(coeff.real))
            else:
                cs = repr(complex(coeff))
            parts.append(f"{cs}*{ops}")
        return " + ".join(parts)


def parse_pauli_text(text: str, spins: int | None = None) -> PauliSum:
    """Parse the textual notation produced by :meth:`PauliSum.to_text`.

    Parameters
    ----------
    text:
        Terms of the form ``coeff*WORD`` joined by `` + ``. Coefficients may
        be Python float or complex literals. The literal ``0`` denotes the
        zero operator and requires `spins`.
    spins:
        Optional expected spin count; mismatches raise.
    """
    stripped = text.strip()
    if not stripped:
        raise PauliParseError("empty Pauli expression")
    if stripped == "0":
        if spins is None:
            raise PauliParseError("zero operator needs an explicit spin count")
        return PauliSum.zero(spins)
    terms = []
    for piece in re.split(r"\s\+\s", stripped):
        piece = piece.strip()
        if "*" not in piece:
            raise PauliParseError(f"term {piece!r} lacks a coefficient")
        coeff_text, _, word = piece.rpartition("*")
        word = word.strip()
        if not re.fullmatch(r"[IXYZ]+", word):
            raise PauliParseError(f"invalid Pauli word {word!r}")
        coeff_text = coeff_text.strip()
        try:
            coeff = complex(float(coeff_text))
        except ValueError:
            try:
                coeff = complex(coeff_text.replace(" ", ""))
            except ValueError as exc:
                raise PauliParseError(
                    f"cannot parse coefficient {coeff_text!r}") from exc
        terms.append((word, coeff))
    lengths = {len(w) for w, _ in terms}
    if len(lengths) != 1:
        raise PauliParseError(f"inconsistent word lengths {sorted(lengths)}")
    n = lengths.pop()
    if spins is not None and n != spins:
        raise DimensionMismatchError(f"expected {spins} spins, text has {n}")
    return PauliSum(n, terms)


def commutator(a: PauliSum, b: PauliSum) -> PauliSum:
    """[a, b] = ab - ba, evaluated term by term."""
    return a * b - b * a


@dataclass(frozen=True)
class GlobalRotation:
    """The same single-spin rotation applied to every spin.

    ``axis_phase`` picks the transverse axis ``cos(phi) X - sin(phi) Y``;
    ``polar=True`` rotates about Z instead. Angles are in radians and are
    not wrapped, so a ``4*pi`` rotation is distinct from identity until
    composed.
    """

    axis_phase: float
    angle: float
    polar: bool = False

    @classmethod
    def x(cls, angle: float) -> "GlobalRotation":
        return cls(0.0, angle)

    @classmethod
    def y(cls, angle: float) -> "GlobalRotation":
        # axis cos(phi) X - sin(phi) Y = +Y needs phi = -pi/2
        return cls(-0.5 * math.pi, angle)

    @classmethod
    def minus_y(cls, angle: float) -> "GlobalRotation":
        return cls(0.5 * math.pi, angle)

    @classmethod
    def z(cls, angle: float) -> "GlobalRotation":
        return cls(0.0, angle, polar=True)

    @property
    def axis_vector(self) -> np.ndarray:
        if self.polar:
            return np.array([0.0, 0.0, 1.0])
        c, s = _exact_trig(self.axis_phase)
        return np.array([c, -s, 0.0])

    def inverse(self) -> "GlobalRotation":
        return GlobalRotation(self.axis_phase, -self.angle, self.polar)

    def compose(self, other: "GlobalRotation") -> "GlobalRotation":
        """Compose with another rotation about the same axis.

        Angles add modulo 4*pi (the SU(2) period). Differing axes raise,
        since the composition would not be a single global rotation about
        a fixed axis in general.
        """
        if self.polar != other.polar:
            raise ValueError("cannot compose rotations about different axes")
        if not self.polar:
            va, vb = self.axis_vector, other.axis_vector
            if not np.allclose(va, vb, atol=1e-12):
                raise ValueError("cannot compose rotations about different axes")
        total = math.fmod(self.angle + other.angle, 4.0 * math.pi)
        return GlobalRotation(self.axis_phase, total, self.polar)

    @property
    def is_identity(self) -> bool:
        c, s = _exact_trig(0.5 * self.angle)
        return c == 1.0 and s == 0.0

    def su2(self) -> np.ndarray:
        """The 2x2 unitary exp(-i angle (axis . sigma) / 2)."""
        c, s = _exact_trig(0.5 * self.angle)
        nx, ny, nz = self.axis_vector
        return np.array(
            [[c - 1j * s * nz, -1j * s * (nx - 1j * ny)],
             [-1j * s * (nx + 1j * ny), c + 1j * s * nz]], dtype=complex)

    def dense(self, spins: int) -> np.ndarray:
        """Tensor power of the single-spin unitary over `spins` spins."""
        if spins > DENSE_SPIN_CAP:
            raise DenseCapExceededError(
                f"dense conversion capped at {DENSE_SPIN_CAP} spins")
        u = self.su2()
        out = np.array([[1.0 + 0j]])
        for _ in range(spins):
            out = np.kron(out, u)
        return out


def _rotation_so3(r: GlobalRotation, invert: bool) -> np.ndarray:
    """Rodrigues matrix for how conjugation rotates Bloch components.

    ``R (sigma . v) R^dag = sigma . (Rot(angle, axis) v)`` with Rot the
    right-handed rotation; inverting flips the angle. Entries are exact
    for quarter-turn angles about principal axes.
    """
    theta = -r.angle if invert else r.angle
    c, s = _exact_trig(theta)
    n = r.axis_vector
    cross = np.array([
        [0.0, -n[2], n[1]],
        [n[2], 0.0, -n[0]],
        [-n[1], n[0], 0.0],
    ])
    rot = c * np.eye(3) + s * cross + (1.0 - c) * np.outer(n, n)
    # Clean exact zeros produced by snapped trig so Clifford conjugations
    # keep single-branch expansions.
    rot[np.abs(rot) < 1e-15] = 0.0
    return rot


_AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}


def conjugate(op: PauliSum, r: GlobalRotation,
              inverse_frame: bool = False) -> PauliSum:
    """Conjugate an operator by a global rotation, symbolically.

    By default computes ``R op R^-1`` (the operator actively rotated the
    same way states are). With ``inverse_frame=True`` computes the
    toggling-frame form ``R^-1 op R`` instead, which is what interaction
    Hamiltonians pick up from the pulses that precede them.
    """
    rot = _rotation_so3(r, invert=inverse_frame).T
    # rot maps e_P to its image's components: column p of the Rodrigues
    # matrix gives the image of axis p; transposing lets rows index the
    # source letter below.
    out: dict[str, complex] = {}
    for ops, coeff in op._terms.items():
        branches = [("", coeff)]
        for ch in ops:
            if ch == "I":
                branches = [(pre + "I", c) for pre, c in branches]
                continue
            comps = rot[_AXIS_INDEX[ch]]
            nxt = []
            for pre, c in branches:
                for k, letter in enumerate("XYZ"):
                    w = comps[k]
                    if w != 0.0:
                        nxt.append((pre + letter, c * w))
            branches = nxt
        for word, c in branches:
            out[word] = out.get(word, 0j) + c
    return PauliSum(op.spins, out)


def pauli_decompose(matrix: np.ndarray, atol: float = 1e-10) -> PauliSum:
    """Expand a dense matrix in the Pauli-word basis.

    Inverse of :meth:`PauliSum.to_dense` up to the drop tolerance. Cost is
    ``4^N * 2^N``; refuses more than 7 spins.
    """
    dim = matrix.shape[0]
    if matrix.shape != (dim, dim):
        raise DimensionMismatchError("matrix must be square")
    n = int(round(math.log2(dim)))
    if 1 << n != dim:
        raise DimensionMismatchError(f"dimension {dim} is not a power of two")
    if n > 7:
        raise DenseCapExceededError("decomposition capped at 7 spins")
    cols = np.arange(dim)
    terms = {}
    for letters in itertools.product(_LETTERS, repeat=n):
        ops = "".join(letters)
        probe = PauliSum.from_label(ops)
        xm, ym, zm = probe._masks(ops)
        ny = bin(ym).count("1")
        signs = 1.0 - 2.0 * (np.bitwise_count(cols & (ym | zm)) & 1)
        phases = (1j ** ny) * signs
        # tr(P M) with P[c ^ flip, c] = phase(c): sum phase(c) M[c, c^flip]
        value = np.sum(phases * matrix[cols, cols ^ (xm | ym)])
        coeff = value / dim
        if abs(coeff) > atol:
            terms[ops] = coeff
    return PauliSum(n, terms)


def sigma_sum(spins: int, letter: str) -> PauliSum:
    """Sum of one Pauli over all sites, e.g. ``sigma_sum(3, 'Z')``."""
    if letter not in "XYZ":
        raise PauliParseError(f"letter must be X, Y or Z, got {letter!r}")
    terms = {}
    for j in range(spins):
        ops = "I" * j + letter + "I" * (spins - 1 - j)
        terms[ops] = 1.0
    return PauliSum(spins, terms)


def pair_coupling(j_matrix: np.ndarray, letter: str) -> PauliSum:
    """Two-body coupling sum_{j<j'} J[j,j'] P_j P_j' for one Pauli letter."""
    j_matrix = np.asarray(j_matrix, dtype=float)
    n = j_matrix.shape[0]
    if j_matrix.shape != (n, n):
        raise DimensionMismatchError("coupling matrix must be square")
    if letter not in "XYZ":
        raise PauliParseError(f"letter must be X, Y or Z, got {letter!r}")
    terms = {}
    for a in range(n):
        for b in range(a + 1, n):
            val = j_matrix[a, b]
            if val != 0.0:
                word = ["I"] * n
                word[a] = letter
                word[b] = letter
                terms["".join(word)] = val
    return PauliSum(n, terms)


def product_state(tokens) -> np.ndarray:
    """Tensor-product spin state from per-site direction tokens.

    Tokens are ``+z  -z  +x  -x  +y  -y`` (site 0 first, matching the
    leftmost Pauli letter).
    """
    single = {
        "+z": np.array([1.0, 0.0], dtype=complex),
        "-z": np.array([0.0, 1.0], dtype=complex),
        "+x": np.array([1.0, 1.0], dtype=complex) / math.sqrt(2.0),
        "-x": np.array([1.0, -1.0], dtype=complex) / math.sqrt(2.0),
        "+y": np.array([1.0, 1.0j], dtype=complex) / math.sqrt(2.0),
        "-y": np.array([1.0, -1.0j], dtype=complex) / math.sqrt(2.0),
    }
    state = np.array([1.0 + 0j])
    for tok in tokens:
        key = tok.strip().lower()
        if key not in single:
            raise ValueError(f"unknown spin direction {tok!r}")
        state = np.kron(state, single[key])
    return state


def site_expectations(state: np.ndarray, letter: str) -> np.ndarray:
    """Per-site <sigma^letter> for a spin state vector (or batch columns)."""
    dim = state.shape[0]
    n = int(round(math.log2(dim)))
    if 1 << n != dim:
        raise DimensionMismatchError("state length is not a power of two")
    out = np.empty(n)
    idx = np.arange(dim)
    prob = np.abs(state) ** 2
    for j in range(n):
        bit = 1 << (n - 1 - j)
        if letter == "Z":
            signs = 1.0 - 2.0 * ((idx & bit) > 0)
            out[j] = float(np.dot(signs, prob))
        elif letter in ("X", "Y"):
            flipped = idx ^ bit
            if letter == "X":
                vals = np.conj(state) * state[flipped]
            else:
                # (Y psi)_b = -i (-1)^{b_j} psi_{b^bit} given Y|0>=i|1>
                signs = 1.0 - 2.0 * ((idx & bit) > 0)
                vals = np.conj(state) * (-1j * signs) * state[flipped]
            out[j] = float(np.real(np.sum(vals)))
        else:
            raise PauliParseError(f"letter must be X, Y or Z, got {letter!r}")
    return out
