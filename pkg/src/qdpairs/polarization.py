"""Two-photon polarization state algebra.

All single-photon states are written in the circular basis (R, L) and all
two-photon density matrices in the product basis ordered RR, RL, LR, LL
(first factor is the biexciton photon, second the exciton photon).

Linear states are tied to the circular basis by

    |H> = (|R> + |L>)/sqrt(2)
    |V> = -i(|R> - |L>)/sqrt(2)
    |D> = (|H> + |V>)/sqrt(2)
    |A> = (|H> - |V>)/sqrt(2)

so that (|LR> + |RL>)/sqrt(2) = (|HH> + |VV>)/sqrt(2).  On the Poincare
sphere sigma_z has eigenstates R/L, sigma_x H/V and sigma_y D/A.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .eigen import eig_hermitian4, psd_sqrt

BASIS_ORDER = "RR,RL,LR,LL"
DENSITY_TOL = 1e-10
PSD_TOL = 1e-9

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = (PAULI_I, PAULI_X, PAULI_Y, PAULI_Z)

YY = np.kron(PAULI_Y, PAULI_Y)


@dataclass(frozen=True)
class PolState:
    """Pure single-photon polarization state, amplitudes on |R> and |L>.

    Construct through :meth:`from_amplitudes` to get the canonical global
    phase (``amp_r`` real and non-negative); the raw constructor stores the
    values as given.
    """

    amp_r: complex
    amp_l: complex

    @classmethod
    def from_amplitudes(cls, amp_r, amp_l) -> PolState:
        amp_r, amp_l = complex(amp_r), complex(amp_l)
        norm = math.sqrt(abs(amp_r) ** 2 + abs(amp_l) ** 2)
        if not math.isfinite(norm) or norm == 0.0:
            raise ValueError("polarization state needs a nonzero finite amplitude")
        amp_r, amp_l = amp_r / norm, amp_l / norm
        if abs(amp_r) > 1e-15:
            phase = abs(amp_r) / amp_r
        elif abs(amp_l) > 0:
            phase = abs(amp_l) / amp_l
        else:
            phase = 1.0
        amp_r, amp_l = amp_r * phase, amp_l * phase
        if abs(amp_r) > 1e-15:
            amp_r = complex(amp_r.real, 0.0)
        else:
            amp_r = 0j
        return cls(amp_r, amp_l)

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.amp_r, self.amp_l], dtype=complex)

    @property
    def projector(self) -> np.ndarray:
        v = self.vector
        return np.outer(v, v.conj())

    def orthogonal(self) -> PolState:
        """The antipodal point on the Poincare sphere."""
        return PolState.from_amplitudes(-np.conj(self.amp_l), np.conj(self.amp_r))

    def overlap(self, other: PolState) -> float:
        """Transition probability |<self|other>|^2."""
        return float(abs(np.vdot(self.vector, other.vector)) ** 2)

    def is_close(self, other: PolState, tol=1e-12) -> bool:
        return abs(self.amp_r - other.amp_r) <= tol and abs(self.amp_l - other.amp_l) <= tol


def state_from_angles(theta_deg, phi_deg=0.0) -> PolState:
    """cos(theta/2)|R> + exp(i phi) sin(theta/2)|L>, angles in degrees.

    theta is the polar angle measured from R, so theta=90, phi=0 is H and
    theta=90, phi=90 is D.  Angles beyond 180 degrees simply continue around
    the great circle (theta=270, phi=0 is V).
    """
    t = math.radians(theta_deg % 360.0)
    p = math.radians(phi_deg % 360.0)
    return PolState.from_amplitudes(math.cos(t / 2), complex(math.cos(p), math.sin(p)) * math.sin(t / 2))


_S2 = 1 / math.sqrt(2)
# kets with the phases of the basis convention (PolState strips the global phase)
KET_H = np.array([_S2, _S2], dtype=complex)
KET_V = np.array([-1j * _S2, 1j * _S2], dtype=complex)
_H, _V = KET_H, KET_V

NAMED_STATES = {
    "R": PolState.from_amplitudes(1, 0),
    "L": PolState.from_amplitudes(0, 1),
    "H": PolState.from_amplitudes(*_H),
    "V": PolState.from_amplitudes(*_V),
    "D": PolState.from_amplitudes(*((_H + _V) * _S2)),
    "A": PolState.from_amplitudes(*((_H - _V) * _S2)),
}

# eigenvalue +1 label first
BASES = {"z": ("R", "L"), "x": ("H", "V"), "y": ("D", "A")}
BASIS_OF = {lab: key for key, pair in BASES.items() for lab in pair}
SIGN_OF = {pair[0]: 1 for pair in BASES.values()} | {pair[1]: -1 for pair in BASES.values()}


def named_state(label: str) -> PolState:
    try:
        return NAMED_STATES[label.upper()]
    except KeyError:
        raise ValueError(f"unknown polarization label {label!r}; expected one of RLHVDA") from None


@dataclass(frozen=True)
class MeasurementSetting:
    """Analyzer states for the biexciton (``proj_xx``) and exciton (``proj_x``) photons."""

    proj_xx: PolState
    proj_x: PolState
    label: str = ""

    def __post_init__(self):
        for s in (self.proj_xx, self.proj_x):
            if not isinstance(s, PolState):
                raise TypeError("measurement setting needs PolState projections")
            if abs(abs(s.amp_r) ** 2 + abs(s.amp_l) ** 2 - 1.0) > 1e-12:
                raise ValueError("measurement setting states must be normalized")

    @classmethod
    def from_labels(cls, labels: str) -> MeasurementSetting:
        """``"LR"`` means L on the biexciton photon and R on the exciton photon."""
        labels = labels.strip().upper()
        if len(labels) != 2:
            raise ValueError(f"setting label must be two letters, got {labels!r}")
        return cls(named_state(labels[0]), named_state(labels[1]), labels)

    @classmethod
    def from_angles(cls, theta_xx, theta_x, phi_xx=0.0, phi_x=0.0) -> MeasurementSetting:
        label = f"{theta_xx:g}/{theta_x:g}"
        if phi_xx or phi_x:
            label += f"@{phi_xx:g}/{phi_x:g}"
        return cls(state_from_angles(theta_xx, phi_xx), state_from_angles(theta_x, phi_x), label)

    @classmethod
    def parse(cls, text: str) -> MeasurementSetting:
        """Accept either two letters (``"HV"``) or polar angles (``"0/45"``)."""
        text = text.strip()
        if "/" in text:
            a, b = text.split("/", 1)
            return cls.from_angles(float(a), float(b))
        return cls.from_labels(text)

    def complement(self) -> MeasurementSetting:
        """Same biexciton analyzer, orthogonal exciton analyzer (the second exciton port)."""
        return MeasurementSetting(self.proj_xx, self.proj_x.orthogonal(), "")

    def projector(self) -> np.ndarray:
        return np.kron(self.proj_xx.projector, self.proj_x.projector)


# ---------------------------------------------------------------------------
# density matrices

def _ket(a: str, b: str) -> np.ndarray:
    return np.kron(named_state(a).vector, named_state(b).vector)


def check_density(rho, tol=DENSITY_TOL, psd_tol=PSD_TOL) -> np.ndarray:
    """Validate a two-qubit density matrix and return it as a complex array."""
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (4, 4):
        raise ValueError(f"density matrix must be 4x4, got {rho.shape}")
    if not np.all(np.isfinite(rho)):
        raise ValueError("density matrix has non-finite entries")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValueError("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > tol:
        raise ValueError(f"density matrix trace is {np.trace(rho).real:.12g}, expected 1")
    lam_min = eig_hermitian4(rho)[0][-1]
    if lam_min < -psd_tol:
        raise ValueError(f"density matrix has negative eigenvalue {lam_min:.3g}")
    return rho


def bell_psi() -> np.ndarray:
    """|Psi><Psi| for |Psi> = (|LR> + |RL>)/sqrt(2)."""
    psi = (_ket("L", "R") + _ket("R", "L")) / math.sqrt(2)
    return np.outer(psi, psi.conj())


def maximally_mixed() -> np.ndarray:
    return np.eye(4, dtype=complex) / 4


def bell_diagonal_from_visibilities(c_circ, c_hv, c_da) -> np.ndarray:
    """Bell-diagonal state with the given correlation visibilities per basis.

    rho = (II - c_circ ZZ + c_hv XX + c_da YY)/4, whose fidelity to |Psi> is
    (1 + c_circ + c_hv + c_da)/4.
    """
    for name, c in (("c_circ", c_circ), ("c_hv", c_hv), ("c_da", c_da)):
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"{name}={c} outside [0, 1]")
    rho = (
        np.kron(PAULI_I, PAULI_I)
        - c_circ * np.kron(PAULI_Z, PAULI_Z)
        + c_hv * np.kron(PAULI_X, PAULI_X)
        + c_da * np.kron(PAULI_Y, PAULI_Y)
    ) / 4
    lam_min = eig_hermitian4(rho)[0][-1]
    if lam_min < -PSD_TOL:
        raise ValueError(
            f"visibilities ({c_circ}, {c_hv}, {c_da}) give an unphysical state (eigenvalue {lam_min:.3g})"
        )
    return rho


def werner(v) -> np.ndarray:
    """v |Psi><Psi| + (1 - v) I/4."""
    if not -1 / 3 - 1e-12 <= v <= 1 + 1e-12:
        raise ValueError(f"Werner parameter {v} outside [-1/3, 1]")
    return v * bell_psi() + (1 - v) * maximally_mixed()


def coincidence_probability(rho, setting: MeasurementSetting) -> float:
    """Tr[rho (P_xx x P_x)]."""
    return float(np.real(np.trace(rho @ setting.projector())))


def fidelity_to_bell(rho) -> float:
    psi = (_ket("L", "R") + _ket("R", "L")) / math.sqrt(2)
    return float(np.real(np.vdot(psi, rho @ psi)))


def state_fidelity(rho, sigma) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2."""
    s = psd_sqrt(rho)
    inner = s @ sigma @ s
    w = eig_hermitian4(0.5 * (inner + inner.conj().T))[0]
    w = np.where(w > 1e-13 * max(w[0], 1e-300), w, 0.0)
    return float(np.sum(np.sqrt(w)) ** 2)


def partial_transpose(rho) -> np.ndarray:
    """Transpose over the second (exciton) photon."""
    r = np.asarray(rho, dtype=complex).reshape(2, 2, 2, 2)
    return r.transpose(0, 3, 2, 1).reshape(4, 4)


def peres_min_eigenvalue(rho) -> float:
    return float(eig_hermitian4(partial_transpose(rho))[0][-1])


def concurrence(rho) -> float:
    """Wootters concurrence.

    The lambdas are taken as square roots of the eigenvalues of
    sqrt(rho) rho~ sqrt(rho), which share the spectrum of rho rho~ but keep
    the problem Hermitian.
    """
    rho = np.asarray(rho, dtype=complex)
    flipped = YY @ rho.conj() @ YY
    s = psd_sqrt(rho)
    m = s @ flipped @ s
    mu = eig_hermitian4(0.5 * (m + m.conj().T))[0]
    mu = np.where(mu > 1e-13 * max(mu[0], 0.0), mu, 0.0)
    lam = np.sqrt(mu)
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def tangle(rho) -> float:
    return concurrence(rho) ** 2


def binary_entropy(x) -> float:
    if x <= 0.0 or x >= 1.0:
        return 0.0
    return float(-x * math.log2(x) - (1 - x) * math.log2(1 - x))


def eof_from_tangle(t) -> float:
    t = min(max(t, 0.0), 1.0)
    return binary_entropy((1 + math.sqrt(1 - t)) / 2)


def eof(rho) -> float:
    """Entanglement of formation in ebits."""
    return eof_from_tangle(tangle(rho))


def linear_entropy(rho) -> float:
    """(4/3)(1 - Tr rho^2); 0 for pure states, 1 for I/4."""
    rho = np.asarray(rho, dtype=complex)
    purity = float(np.real(np.trace(rho @ rho)))
    return 4.0 / 3.0 * (1.0 - purity)


def stokes_matrix(rho) -> np.ndarray:
    """Two-photon Stokes parameters T[i, j] = Tr[rho sigma_i x sigma_j], order I, X, Y, Z."""
    rho = np.asarray(rho, dtype=complex)
    return np.array([[np.real(np.trace(rho @ np.kron(a, b))) for b in PAULIS] for a in PAULIS])


def density_from_stokes(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return sum(t[i, j] * np.kron(PAULIS[i], PAULIS[j]) for i in range(4) for j in range(4)) / 4


# ---------------------------------------------------------------------------
# serialization

def density_to_dict(rho) -> dict:
    rho = np.asarray(rho, dtype=complex)
    return {
        "basis": BASIS_ORDER,
        "re": [[float(x) for x in row] for row in rho.real],
        "im": [[float(x) for x in row] for row in rho.imag],
    }


def density_from_dict(doc: dict) -> np.ndarray:
    if doc.get("basis") != BASIS_ORDER:
        raise ValueError(f"density matrix basis must be {BASIS_ORDER!r}, got {doc.get('basis')!r}")
    re = np.array(doc["re"], dtype=float)
    im = np.array(doc["im"], dtype=float)
    if re.shape != (4, 4) or im.shape != (4, 4):
        raise ValueError("density matrix arrays must be 4x4")
    return re + 1j * im


def dumps_density(rho, **extra) -> str:
    """JSON document with ``basis``, ``re`` and ``im`` (plus any extra keys)."""
    doc = density_to_dict(rho)
    doc.update(extra)
    return json.dumps(doc, indent=2)


def loads_density(text: str) -> np.ndarray:
    return density_from_dict(json.loads(text))
