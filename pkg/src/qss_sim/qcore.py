"""Exact small-system quantum state engine.

Covers the four BB84 states, the five-gate set {sigma_0..sigma_3, H}, single
qubit measurements in Z or X, and bipartite states |0>_A|alpha>_E +
|1>_A|beta>_E held by an attacker with an S-level ancilla.  Bipartite vectors
are always stored with the qubit A as the leading index, so amplitude
``[a * S + e]`` belongs to ``|a>_A |e>_E``.

Besides dense vectors the module offers :class:`LabelState`, an exact
``(a, b, phase)`` bookkeeping form.  The gate set maps the four BB84 states
onto themselves up to a fourth root of unity, so a label transition table is
all that is needed to track honest photons without floating point.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionError, NormalizationError

ATOL = 1e-12
_R = 1.0 / np.sqrt(2.0)


class GateCode(enum.IntEnum):
    S0 = 0
    S1 = 1
    S2 = 2
    S3 = 3
    H = 4


class Basis(enum.IntEnum):
    Z = 0
    X = 1


def _frozen(arr) -> np.ndarray:
    out = np.array(arr, dtype=np.complex128)
    out.setflags(write=False)
    return out


GATE_MATRICES: dict[GateCode, np.ndarray] = {
    GateCode.S0: _frozen([[1, 0], [0, 1]]),
    # i*sigma_y = |0><1| - |1><0|
    GateCode.S1: _frozen([[0, 1], [-1, 0]]),
    GateCode.S2: _frozen([[1, 0], [0, -1]]),
    GateCode.S3: _frozen([[0, 1], [1, 0]]),
    GateCode.H: _frozen([[_R, _R], [_R, -_R]]),
}

PAULI_CODES = (GateCode.S0, GateCode.S1, GateCode.S2, GateCode.S3)


def gate_matrix(g: GateCode) -> np.ndarray:
    return GATE_MATRICES[GateCode(g)]


def encoding_matrix(a: int, b: int) -> np.ndarray:
    """Matrix of one party's encoding step: sigma_a first, then H if b == 1."""
    u = GATE_MATRICES[GateCode(a)]
    if b:
        u = GATE_MATRICES[GateCode.H] @ u
    return u


# The eight products H^k sigma_u, k in {0,1}, u in {0..3}.  Any product of
# encoding steps equals one of them up to a sign.
EIGHT_OPS: tuple[np.ndarray, ...] = tuple(
    _frozen(encoding_matrix(u, k)) for k in (0, 1) for u in range(4)
)
EIGHT_OP_NAMES = ("s0", "s1", "s2", "s3", "Hs0", "Hs1", "Hs2", "Hs3")


def classify_op(u: np.ndarray, atol: float = 1e-9) -> tuple[int, complex]:
    """Return ``(index, phase)`` with ``u == phase * EIGHT_OPS[index]``.

    Raises ValueError when ``u`` is not a phase multiple of one of the eight.
    """
    for idx, op in enumerate(EIGHT_OPS):
        # op is real orthogonal, so op^T u is phase * identity when they match
        m = op.conj().T @ u
        ph = m[0, 0]
        if abs(abs(ph) - 1.0) < atol and np.allclose(m, ph * np.eye(2), atol=atol):
            for root in (1, 1j, -1, -1j):
                if abs(ph - root) < atol:
                    return idx, complex(root)
            return idx, complex(ph)
    raise ValueError("matrix is not in the encoding group")


# --------------------------------------------------------------------------
# dense states


@dataclass(frozen=True, eq=False)
class PureState:
    """Normalized single-qubit state vector."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amp = _frozen(self.amplitudes).reshape(-1)
        if amp.shape != (2,):
            raise DimensionError(f"qubit state needs 2 amplitudes, got {amp.shape[0]}")
        norm = float(np.vdot(amp, amp).real)
        if abs(norm - 1.0) > 1e-9:
            raise NormalizationError(f"squared norm {norm!r} != 1")
        object.__setattr__(self, "amplitudes", amp)

    def isclose(self, other: "PureState", atol: float = ATOL) -> bool:
        return bool(np.allclose(self.amplitudes, other.amplitudes, rtol=0.0, atol=atol))

    def __repr__(self):
        a0, a1 = self.amplitudes
        return f"PureState({a0:.6g}, {a1:.6g})"


@dataclass(frozen=True, eq=False)
class BipartiteState:
    """Normalized vector of qubit A (leading index) times an S-level system E."""

    amplitudes: np.ndarray

    def __post_init__(self):
        amp = _frozen(self.amplitudes).reshape(-1)
        if amp.shape[0] % 2 or amp.shape[0] < 4:
            raise DimensionError(f"bipartite state needs 2*S amplitudes with S >= 2, got {amp.shape[0]}")
        norm = float(np.vdot(amp, amp).real)
        if abs(norm - 1.0) > 1e-9:
            raise NormalizationError(f"squared norm {norm!r} != 1")
        object.__setattr__(self, "amplitudes", amp)

    @property
    def dim_e(self) -> int:
        return self.amplitudes.shape[0] // 2

    def as_matrix(self) -> np.ndarray:
        """View as a 2 x S matrix: row a holds the E-ket paired with |a>_A."""
        return self.amplitudes.reshape(2, self.dim_e)

    def isclose(self, other: "BipartiteState", atol: float = ATOL) -> bool:
        return self.amplitudes.shape == other.amplitudes.shape and bool(
            np.allclose(self.amplitudes, other.amplitudes, rtol=0.0, atol=atol)
        )


def _bell(v) -> BipartiteState:
    return BipartiteState(np.array(v, dtype=np.complex128) * _R)


# Order |00>, |01>, |10>, |11> with A leading.  The Bell states are written
# with E first in the usual notation; only psi^- changes sign under the swap.
PHI_PLUS = _bell([1, 0, 0, 1])
PHI_MINUS = _bell([1, 0, 0, -1])
PSI_PLUS = _bell([0, 1, 1, 0])
PSI_MINUS = _bell([0, -1, 1, 0])
BELL_STATES = {"phi+": PHI_PLUS, "phi-": PHI_MINUS, "psi+": PSI_PLUS, "psi-": PSI_MINUS}


def encode_bb84(a: int, b: int) -> PureState:
    """|psi_ab>: value bit ``a`` in the Z basis (b=0) or the X basis (b=1)."""
    if b:
        return PureState([_R, -_R] if a else [_R, _R])
    return PureState([0, 1] if a else [1, 0])


def apply_gate(g: GateCode, s: PureState) -> PureState:
    return PureState(gate_matrix(g) @ s.amplitudes)


def make_pair(alpha: Sequence[complex], beta: Sequence[complex]) -> BipartiteState:
    """Build |0>_A|alpha>_E + |1>_A|beta>_E from unnormalized E-kets."""
    alpha = np.asarray(alpha, dtype=np.complex128).reshape(-1)
    beta = np.asarray(beta, dtype=np.complex128).reshape(-1)
    if alpha.shape != beta.shape:
        raise DimensionError("alpha and beta must have the same length")
    if alpha.shape[0] < 2:
        raise DimensionError(f"ancilla dimension S must be >= 2, got {alpha.shape[0]}")
    norm = float((np.vdot(alpha, alpha) + np.vdot(beta, beta)).real)
    if abs(norm - 1.0) > 1e-9:
        raise NormalizationError(f"<alpha|alpha> + <beta|beta> = {norm!r}, expected 1")
    return BipartiteState(np.concatenate([alpha, beta]))


def apply_on_a(g, bs: BipartiteState) -> BipartiteState:
    """Apply a gate (GateCode or explicit 2x2 matrix) to the A half only."""
    u = g if isinstance(g, np.ndarray) else gate_matrix(g)
    return BipartiteState((u @ bs.as_matrix()).reshape(-1))


def eight_transforms(bs: BipartiteState) -> list[BipartiteState]:
    """The pair after each of the eight composite encodings, in EIGHT_OPS order."""
    return [apply_on_a(op, bs) for op in EIGHT_OPS]


def _vec(s) -> np.ndarray:
    if isinstance(s, (PureState, BipartiteState)):
        return s.amplitudes
    return np.asarray(s, dtype=np.complex128).reshape(-1)


def inner(u, v) -> complex:
    """<u|v>, conjugate-linear in ``u``."""
    uv, vv = _vec(u), _vec(v)
    if uv.shape != vv.shape:
        raise DimensionError(f"dimension mismatch {uv.shape[0]} vs {vv.shape[0]}")
    return complex(np.vdot(uv, vv))


def gram_matrix(states: Iterable) -> np.ndarray:
    vecs = np.array([_vec(s) for s in states])
    return vecs.conj() @ vecs.T


# --------------------------------------------------------------------------
# measurement

_BASIS_VECTORS = {
    Basis.Z: (encode_bb84(0, 0), encode_bb84(1, 0)),
    Basis.X: (encode_bb84(0, 1), encode_bb84(1, 1)),
}


def basis_states(basis: Basis) -> tuple[PureState, PureState]:
    return _BASIS_VECTORS[Basis(basis)]


def measure(s: PureState, basis: Basis, rng: np.random.Generator) -> tuple[int, PureState]:
    """Projective measurement; outcome 0 is |0> or |+>, outcome 1 is |1> or |->."""
    v0, v1 = _BASIS_VECTORS[Basis(basis)]
    p0 = abs(np.vdot(v0.amplitudes, s.amplitudes)) ** 2
    outcome = 0 if rng.random() < p0 else 1
    return outcome, (v0, v1)[outcome]


# --------------------------------------------------------------------------
# label tracking

_PHASES = (1 + 0j, 1j, -1 + 0j, -1j)  # i**k for k = 0..3


@dataclass(frozen=True)
class LabelState:
    """Exact form ``phase * |psi_ab>`` with phase a fourth root of unity."""

    a: int
    b: int
    phase: complex = 1 + 0j

    def __post_init__(self):
        if self.a not in (0, 1) or self.b not in (0, 1):
            raise ValueError(f"label bits must be 0/1, got a={self.a}, b={self.b}")
        ph = complex(self.phase)
        if ph not in _PHASES:
            raise ValueError(f"phase must be one of +1, -1, +i, -i, got {self.phase!r}")
        object.__setattr__(self, "phase", ph)

    @property
    def code(self) -> int:
        return self.a | (self.b << 1) | (_PHASES.index(self.phase) << 2)

    @property
    def basis(self) -> Basis:
        return Basis(self.b)

    def decode(self) -> PureState:
        return PureState(self.phase * encode_bb84(self.a, self.b).amplitudes)

    def up_to_phase(self) -> "LabelState":
        return LabelState(self.a, self.b)

    @staticmethod
    def from_code(code: int) -> "LabelState":
        return _LABELS[code]


def identify_label(v, atol: float = 1e-9) -> LabelState:
    """Recognize ``v`` as phase * |psi_ab>; ValueError if it is not one."""
    amp = _vec(v)
    for b in (0, 1):
        for a in (0, 1):
            ov = np.vdot(encode_bb84(a, b).amplitudes, amp)
            if abs(abs(ov) - 1.0) < atol:
                k = int(np.argmin([abs(ov - p) for p in _PHASES]))
                if abs(ov - _PHASES[k]) > atol:
                    raise ValueError(f"phase {ov!r} is not a fourth root of unity")
                return LabelState(a, b, _PHASES[k])
    raise ValueError("vector is not a BB84 state")


_LABELS: tuple[LabelState, ...] = tuple(
    LabelState(c & 1, (c >> 1) & 1, _PHASES[c >> 2]) for c in range(16)
)


def _build_label_table() -> np.ndarray:
    table = np.empty((5, 16), dtype=np.int8)
    for g in GateCode:
        for lab in _LABELS:
            table[g, lab.code] = identify_label(gate_matrix(g) @ lab.decode().amplitudes).code
    table.setflags(write=False)
    return table


# LABEL_TABLE[g, code] is the code of gate g applied to label `code`.
LABEL_TABLE = _build_label_table()


def label_apply(g: GateCode, l: LabelState) -> LabelState:
    return _LABELS[LABEL_TABLE[int(g), l.code]]


def label_encode(a: int, b: int, l: LabelState) -> LabelState:
    """One party's encoding step (sigma_a, then H if b) on a label."""
    code = LABEL_TABLE[a, l.code]
    if b:
        code = LABEL_TABLE[GateCode.H, code]
    return _LABELS[code]


def measure_label(l: LabelState, basis: Basis, rng: np.random.Generator) -> int:
    """Born-rule outcome for a labelled state; deterministic in its own basis."""
    if int(basis) == l.b:
        return l.a
    return int(rng.random() < 0.5)


@lru_cache(maxsize=None)
def _solve_table(p_code: int, x_code: int, alphabet: tuple[int, ...]) -> tuple[tuple[int, int], ...]:
    p = _LABELS[p_code]
    x = _LABELS[x_code].up_to_phase()
    out = []
    for a in alphabet:
        for b in (0, 1):
            if label_encode(a, b, p).up_to_phase() == x:
                out.append((a, b))
    return tuple(out)


def solve_encoding(start: LabelState, target: LabelState, alphabet: Sequence[int]) -> list[tuple[int, int]]:
    """All encoding pairs (a, b) from ``alphabet`` x {0,1} taking start to target up to phase."""
    return list(_solve_table(start.code, target.code, tuple(alphabet)))
