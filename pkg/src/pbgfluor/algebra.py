"""Two-level operator algebra, dressed-state construction and free rotation.

Operators live on the dressed two-level space {|1~>, |2~>} and are stored as
2x2 complex matrices.  The working expansion basis is the set of matrix
units ``(R11, R12, R21, R22)`` where ``Rij = |i~><j~|``; the expansion
coefficients of an operator are therefore just its entries in row-major
order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SystemOperator",
    "OperatorBasis",
    "BASIS",
    "R11",
    "R12",
    "R21",
    "R22",
    "R3",
    "IDENTITY",
    "DressedAtom",
    "dressed_parameters",
    "coupling_operator",
    "bare_from_dressed",
    "heisenberg_rotate",
    "commutator",
    "is_hermitian",
]


@dataclass(frozen=True, eq=False)
class SystemOperator:
    """Immutable 2x2 complex operator on the dressed two-level space."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        m = np.array(self.entries, dtype=complex).reshape(2, 2)
        if not np.all(np.isfinite(m)):
            raise ValueError("operator entries must be finite")
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    def adjoint(self) -> SystemOperator:
        return SystemOperator(self.entries.conj().T)

    @property
    def dag(self) -> SystemOperator:
        return self.adjoint()

    def coefficients(self) -> np.ndarray:
        """Expansion coefficients on (R11, R12, R21, R22)."""
        return self.entries.reshape(4).copy()

    @classmethod
    def from_coefficients(cls, coeffs) -> SystemOperator:
        c = np.asarray(coeffs, dtype=complex)
        if c.shape != (4,):
            raise ValueError(f"expected 4 coefficients, got shape {c.shape}")
        return cls(c.reshape(2, 2))

    def expectation(self, psi) -> complex:
        psi = np.asarray(psi, dtype=complex)
        return complex(psi.conj() @ self.entries @ psi)

    def norm(self) -> float:
        return float(np.linalg.norm(self.entries))

    def allclose(self, other: SystemOperator, atol: float = 1e-12) -> bool:
        return bool(np.allclose(self.entries, other.entries, rtol=0.0, atol=atol))

    def __add__(self, other: SystemOperator) -> SystemOperator:
        return SystemOperator(self.entries + other.entries)

    def __sub__(self, other: SystemOperator) -> SystemOperator:
        return SystemOperator(self.entries - other.entries)

    def __neg__(self) -> SystemOperator:
        return SystemOperator(-self.entries)

    def __mul__(self, scalar) -> SystemOperator:
        return SystemOperator(complex(scalar) * self.entries)

    __rmul__ = __mul__

    def __matmul__(self, other: SystemOperator) -> SystemOperator:
        return SystemOperator(self.entries @ other.entries)

    def __repr__(self) -> str:
        c = self.coefficients()
        terms = ", ".join(f"{n}={v:.6g}" for n, v in zip(OperatorBasis.names, c) if v != 0)
        return f"SystemOperator({terms or '0'})"


def _unit(i: int, j: int) -> SystemOperator:
    m = np.zeros((2, 2), dtype=complex)
    m[i, j] = 1.0
    return SystemOperator(m)


R11 = _unit(0, 0)
R12 = _unit(0, 1)
R21 = _unit(1, 0)
R22 = _unit(1, 1)
R3 = R22 - R11
IDENTITY = R11 + R22


class OperatorBasis:
    """The ordered closure basis ``(E1, E2, E3, E4) = (R11, R12, R21, R22)``.

    ``product_table[k, m, j]`` holds the coefficient of ``E_j`` in ``E_k E_m``
    and ``commutator_table[k, m, j]`` that of ``E_j`` in ``[E_k, E_m]``.
    """

    names = ("R11", "R12", "R21", "R22")
    elements = (R11, R12, R21, R22)

    def __init__(self) -> None:
        prod = np.zeros((4, 4, 4), dtype=complex)
        for k, ek in enumerate(self.elements):
            for m, em in enumerate(self.elements):
                prod[k, m] = (ek @ em).coefficients()
        self.product_table = prod
        self.commutator_table = prod - prod.transpose(1, 0, 2)
        self.product_table.setflags(write=False)
        self.commutator_table.setflags(write=False)

    @staticmethod
    def expand(op: SystemOperator) -> np.ndarray:
        return op.coefficients()

    @staticmethod
    def reconstruct(coeffs) -> SystemOperator:
        return SystemOperator.from_coefficients(coeffs)

    @staticmethod
    def gram_matrix() -> np.ndarray:
        """Hilbert-Schmidt Gram matrix of the basis (identity for matrix units)."""
        flat = np.array([e.entries.reshape(4) for e in OperatorBasis.elements])
        return flat.conj() @ flat.T


BASIS = OperatorBasis()


def commutator(x: SystemOperator, y: SystemOperator) -> SystemOperator:
    return SystemOperator(x.entries @ y.entries - y.entries @ x.entries)


def is_hermitian(h: SystemOperator, atol: float = 1e-12) -> bool:
    return bool(np.allclose(h.entries, h.entries.conj().T, rtol=0.0, atol=atol))


@dataclass(frozen=True)
class DressedAtom:
    """Laser-dressed two-level atom in the frame rotating at the laser frequency.

    Attributes
    ----------
    epsilon : float
        Rabi coupling of the laser.
    detuning : float
        Atom-laser detuning ``omega_S - omega_L``.
    laser_frequency : float
        Laser frequency, i.e. the rotating-frame offset.
    rabi : float
        Generalized Rabi frequency ``sqrt(epsilon**2 + detuning**2 / 4)``.
    c, s : float
        Cosine and sine of the mixing angle, both non-negative.
    phi : float
        Mixing angle in ``[0, pi/2]``.
    """

    epsilon: float
    detuning: float
    laser_frequency: float
    rabi: float
    c: float
    s: float
    phi: float

    @property
    def atomic_frequency(self) -> float:
        return self.detuning + self.laser_frequency

    def hamiltonian(self) -> SystemOperator:
        """Dressed free Hamiltonian ``rabi * R3``."""
        return self.rabi * R3

    def transformation(self) -> np.ndarray:
        """Bare-to-dressed rotation ``[[c, -s], [s, c]]``."""
        return np.array([[self.c, -self.s], [self.s, self.c]])

    def to_dressed(self, bare_matrix) -> SystemOperator:
        """Express a bare-basis 2x2 matrix in the dressed basis (``V M V^T``)."""
        v = self.transformation()
        return SystemOperator(v @ np.asarray(bare_matrix, dtype=complex) @ v.T)

    def state_to_dressed(self, bare_state) -> np.ndarray:
        return self.transformation() @ np.asarray(bare_state, dtype=complex)

    def bare_excited_state(self) -> np.ndarray:
        """Bare excited level |2> written in the dressed basis."""
        return self.state_to_dressed([0.0, 1.0])

    def bare_ground_state(self) -> np.ndarray:
        return self.state_to_dressed([1.0, 0.0])

    def bare_hamiltonian(self) -> np.ndarray:
        """Rotating-frame atom+laser Hamiltonian in the bare basis."""
        d, e = self.detuning, self.epsilon
        return np.array([[-d / 2, e], [e, d / 2]], dtype=complex)


def dressed_parameters(epsilon: float, detuning: float, laser_frequency: float) -> DressedAtom:
    """Build the dressed-atom parameters for a laser with Rabi coupling ``epsilon``.

    The mixing angle satisfies ``cos(2 phi) = detuning / (2 rabi)`` so that
    the dressed rotation diagonalises the rotating-frame Hamiltonian to
    ``rabi * R3`` (at resonance ``sin^2 phi = 1/2``).
    """
    epsilon = float(epsilon)
    detuning = float(detuning)
    if not (math.isfinite(epsilon) and math.isfinite(detuning) and math.isfinite(laser_frequency)):
        raise ValueError("dressed parameters must be finite")
    if epsilon < 0:
        raise ValueError(f"epsilon must be >= 0, got {epsilon}")
    if epsilon == 0 and detuning == 0:
        raise ValueError(
            "epsilon = 0 and detuning = 0: degenerate dressing; "
            "use a nonzero detuning (omega_12 - omega_L) for the undriven atom"
        )
    rabi = math.hypot(epsilon, detuning / 2)
    # larger of (c, s) from cos 2phi, the smaller one from sin 2phi = eps / rabi
    # so that nearly-undriven atoms keep full relative precision
    big = math.sqrt((1 + abs(detuning) / (2 * rabi)) / 2)
    small = epsilon / (2 * rabi * big)
    c, s = (big, small) if detuning >= 0 else (small, big)
    return DressedAtom(
        epsilon=epsilon,
        detuning=detuning,
        laser_frequency=float(laser_frequency),
        rabi=rabi,
        c=c,
        s=s,
        phi=math.atan2(s, c),
    )


def coupling_operator(atom: DressedAtom) -> SystemOperator:
    c, s = atom.c, atom.s
    return c * s * R3 + c * c * R12 - s * s * R21


_BARE_NAMES = {
    "sigma12": "sigma12",
    "σ12": "sigma12",
    "σ₁₂": "sigma12",
    "sigma21": "sigma21",
    "σ21": "sigma21",
    "σ₂₁": "sigma21",
    "sigma3": "sigma3",
    "σ3": "sigma3",
    "σ₃": "sigma3",
    "sigmaz": "sigma3",
}


def bare_from_dressed(name: str, atom: DressedAtom) -> SystemOperator:
    """Bare atomic operator ``sigma12``, ``sigma21`` or ``sigma3`` in the dressed basis."""
    key = _BARE_NAMES.get(name)
    if key is None:
        raise ValueError(f"unknown bare operator {name!r}; expected sigma12, sigma21 or sigma3")
    c, s = atom.c, atom.s
    if key == "sigma12":
        return c * s * R3 + c * c * R12 - s * s * R21
    if key == "sigma21":
        return c * s * R3 - s * s * R12 + c * c * R21
    return (c * c - s * s) * R3 - 2 * c * s * (R12 + R21)


def heisenberg_rotate(x: SystemOperator, t: float, h: SystemOperator) -> SystemOperator:
    """Free Heisenberg rotation ``exp(i h t) x exp(-i h t)``."""
    if not is_hermitian(h):
        raise ValueError("heisenberg_rotate needs a hermitian Hamiltonian")
    hm = h.entries
    if hm[0, 1] == 0 and hm[1, 0] == 0:
        e = hm.diagonal().real
        phase = np.exp(1j * (e[:, None] - e[None, :]) * t)
        return SystemOperator(x.entries * phase)
    e, u = np.linalg.eigh(hm)
    xe = u.conj().T @ x.entries @ u
    xe = xe * np.exp(1j * (e[:, None] - e[None, :]) * t)
    return SystemOperator(u @ xe @ u.conj().T)
