"""Two-photon polarization tomography from 36 coincidence settings.

Linear (Stokes) inversion gives the starting point; the maximum-likelihood
step searches over rho = T^dagger T / Tr(T^dagger T) with T lower
triangular, which keeps every candidate physical.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .eigen import eig_hermitian4
from .polarization import (
    BASES,
    BASIS_OF,
    SIGN_OF,
    density_from_stokes,
    named_state,
)

LABELS = "RLHVDA"
SETTINGS = [(a, b) for a in LABELS for b in LABELS]
_PAULI_INDEX = {"x": 1, "y": 2, "z": 3}

# lower-triangle positions of the complex off-diagonal entries of T
_OFFDIAG = [(1, 0), (2, 1), (3, 2), (2, 0), (3, 1), (3, 0)]

_PROJECTORS = np.array(
    [np.kron(named_state(a).projector, named_state(b).projector) for a, b in SETTINGS]
)


def _quadruple(a, b):
    ia, ib = BASES[BASIS_OF[a]], BASES[BASIS_OF[b]]
    return [SETTINGS.index((x, y)) for x in ia for y in ib]


_QUAD_OF = np.array([_quadruple(a, b) for a, b in SETTINGS])


class ConvergenceError(RuntimeError):
    def __init__(self, message, loss, grad_norm):
        super().__init__(f"{message} (loss={loss:.6g}, |grad|={grad_norm:.3g})")
        self.loss = loss
        self.grad_norm = grad_norm


@dataclass
class TomoCounts:
    """Coincidence counts keyed by (biexciton label, exciton label)."""

    entries: dict

    def __post_init__(self):
        clean = {}
        for key, value in self.entries.items():
            if len(key) != 2:
                raise ValueError(f"unknown projection setting {key!r}")
            a, b = str(key[0]).upper(), str(key[1]).upper()
            if a not in LABELS or b not in LABELS:
                raise ValueError(f"unknown projection setting {key!r}")
            value = float(value)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"counts for {a}{b} must be non-negative, got {value}")
            clean[(a, b)] = value
        missing = [a + b for a, b in SETTINGS if (a, b) not in clean]
        if missing:
            raise ValueError(f"missing projection setting(s): {', '.join(missing)}")
        self.entries = clean

    def as_array(self) -> np.ndarray:
        return np.array([self.entries[s] for s in SETTINGS])

    @classmethod
    def from_array(cls, values) -> TomoCounts:
        values = np.asarray(values, dtype=float)
        if values.shape != (36,):
            raise ValueError("expected 36 counts")
        return cls(dict(zip(SETTINGS, values)))

    def flux(self) -> np.ndarray:
        """Per-setting flux: the summed counts of that setting's orthogonal quadruple."""
        n = self.as_array()
        return n[_QUAD_OF].sum(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("basis_xx,basis_x,counts\n")
        for a, b in SETTINGS:
            v = self.entries[(a, b)]
            buf.write(f"{a},{b},{int(v) if float(v).is_integer() else repr(v)}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> TomoCounts:
        reader = csv.reader(io.StringIO(text))
        rows = [r for r in reader if r and any(x.strip() for x in r)]
        if rows and rows[0][0].strip().lower() == "basis_xx":
            rows = rows[1:]
        entries = {}
        for i, row in enumerate(rows, 1):
            if len(row) != 3:
                raise ValueError(f"row {i}: expected basis_xx,basis_x,counts")
            a, b, c = (x.strip().upper() for x in row)
            if (a, b) in entries:
                raise ValueError(f"row {i}: duplicate setting {a}{b}")
            try:
                value = int(c)
            except ValueError:
                raise ValueError(f"row {i}: counts must be an integer, got {c!r}") from None
            entries[(a, b)] = value
        return cls(entries)


def expected_counts(rho, n_per_basis) -> TomoCounts:
    """Noiseless counts N * Tr[rho P] for every setting."""
    p = probabilities(rho)
    return TomoCounts.from_array(np.clip(p, 0.0, None) * n_per_basis)


def sample_counts(rho, n_per_basis, seed) -> TomoCounts:
    """Poisson-sampled counts with mean N * Tr[rho P]."""
    rng = np.random.default_rng(seed)
    lam = np.clip(probabilities(rho), 0.0, None) * n_per_basis
    return TomoCounts.from_array(rng.poisson(lam))


def probabilities(rho) -> np.ndarray:
    return np.real(np.einsum("nij,ji->n", _PROJECTORS, np.asarray(rho, dtype=complex)))


def linear_inversion(c: TomoCounts) -> np.ndarray:
    """Stokes-parameter estimate; Hermitian with unit trace but possibly not positive."""
    stokes = np.zeros((4, 4))
    stokes[0, 0] = 1.0
    marg_xx = {k: [] for k in _PAULI_INDEX}
    marg_x = {k: [] for k in _PAULI_INDEX}
    for bi, pair_i in BASES.items():
        for bj, pair_j in BASES.items():
            quad = [(a, b) for a in pair_i for b in pair_j]
            vals = np.array([c.entries[q] for q in quad])
            total = vals.sum()
            if total <= 0:
                raise ValueError(f"no counts in basis pair {pair_i[0]}{pair_i[1]}/{pair_j[0]}{pair_j[1]}")
            sa = np.array([SIGN_OF[a] for a, _ in quad])
            sb = np.array([SIGN_OF[b] for _, b in quad])
            stokes[_PAULI_INDEX[bi], _PAULI_INDEX[bj]] = np.dot(sa * sb, vals) / total
            marg_xx[bi].append(np.dot(sa, vals) / total)
            marg_x[bj].append(np.dot(sb, vals) / total)
    for k, idx in _PAULI_INDEX.items():
        stokes[idx, 0] = np.mean(marg_xx[k])
        stokes[0, idx] = np.mean(marg_x[k])
    return density_from_stokes(stokes)


# ---------------------------------------------------------------------------
# Cholesky-type parameterization

def t_from_params(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    T = np.zeros((4, 4), dtype=complex)
    T[np.diag_indices(4)] = t[:4]
    for k, (r, c) in enumerate(_OFFDIAG):
        T[r, c] = complex(t[4 + 2 * k], t[5 + 2 * k])
    return T


def params_from_t(T) -> np.ndarray:
    t = np.zeros(16)
    t[:4] = np.real(np.diag(T))
    for k, (r, c) in enumerate(_OFFDIAG):
        t[4 + 2 * k] = T[r, c].real
        t[5 + 2 * k] = T[r, c].imag
    return t


def rho_from_params(t) -> np.ndarray:
    T = t_from_params(t)
    m = T.conj().T @ T
    return m / np.real(np.trace(m))


def params_from_rho(rho, floor=1e-8) -> np.ndarray:
    """Parameters of a lower-triangular T with T^dagger T = rho (after a small full-rank floor)."""
    rho = (1 - floor) * np.asarray(rho, dtype=complex) + floor * np.eye(4) / 4
    J = np.eye(4)[::-1]
    low = np.linalg.cholesky(J @ rho @ J)
    upper = J @ low @ J
    return params_from_t(upper.conj().T)


def physical_projection(rho) -> np.ndarray:
    """Clip negative eigenvalues and renormalize the trace."""
    w, q = eig_hermitian4(0.5 * (rho + np.conj(np.transpose(rho))))
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        return np.eye(4, dtype=complex) / 4
    return (q * (w / w.sum())) @ q.conj().T


class Likelihood:
    """L(T) = sum (N p - n)^2 / (2 N p) over the 36 settings, with its gradient."""

    P_FLOOR = 1e-15

    def __init__(self, counts: TomoCounts):
        self.n = counts.as_array()
        self.N = counts.flux()
        if np.any(self.N <= 0):
            raise ValueError("every basis pair needs a positive total count")

    def value(self, t) -> float:
        p = np.clip(probabilities(rho_from_params(t)), self.P_FLOOR, None)
        expected = self.N * p
        return float(np.sum((expected - self.n) ** 2 / (2 * expected)))

    def gradient(self, t) -> np.ndarray:
        T = t_from_params(t)
        m = T.conj().T @ T
        trace = np.real(np.trace(m))
        p = np.clip(probabilities(m / trace), self.P_FLOOR, None)
        g = self.N / 2 - self.n**2 / (2 * self.N * p**2)
        weighted = np.tensordot(g, _PROJECTORS, axes=1)
        dT = (T @ weighted - np.dot(g, p) * T) / trace  # dL/dconj(T)
        out = np.zeros(16)
        out[:4] = 2 * np.real(np.diag(dT))
        for k, (r, c) in enumerate(_OFFDIAG):
            out[4 + 2 * k] = 2 * dT[r, c].real
            out[5 + 2 * k] = 2 * dT[r, c].imag
        return out


@dataclass
class MLEResult:
    rho: np.ndarray
    loss: float
    initial_loss: float
    n_iter: int
    n_eval: int
    grad_norm: float
    history: list = field(default_factory=list)


def mle_fit(c: TomoCounts, tol=1e-10, max_iter=100_000) -> MLEResult:
    """Maximum-likelihood reconstruction with full diagnostics.

    ``tol`` is the relative decrease of L below which the quasi-Newton
    search stops; ``max_iter`` caps the number of L evaluations.
    """
    like = Likelihood(c)
    t0 = params_from_rho(physical_projection(linear_inversion(c)))
    t0 = t0 / np.linalg.norm(t0)
    initial = like.value(t0)
    history = [initial]

    def record(xk):
        history.append(like.value(xk))

    res = minimize(
        like.value,
        t0,
        jac=like.gradient,
        method="L-BFGS-B",
        callback=record,
        options={"ftol": tol, "gtol": 1e-12, "maxfun": max_iter, "maxiter": max_iter, "maxls": 50},
    )
    t_best = res.x
    loss = like.value(t_best)
    if loss > initial:
        t_best, loss = t0, initial
    grad_norm = float(np.linalg.norm(like.gradient(t_best)))
    if res.status == 1:
        raise ConvergenceError(f"maximum-likelihood search stopped after {res.nfev} evaluations", loss, grad_norm)
    rho = rho_from_params(t_best)
    rho = 0.5 * (rho + rho.conj().T)
    return MLEResult(rho, loss, initial, int(res.nit), int(res.nfev), grad_norm, history)


def mle_reconstruct(c: TomoCounts, tol=1e-10, max_iter=100_000) -> np.ndarray:
    return mle_fit(c, tol, max_iter).rho


def bootstrap(c: TomoCounts, n_resamples, seed, tol=1e-10, max_iter=100_000) -> list:
    """MLE states of Poisson resamples of ``c`` (one child seed per resample)."""
    n = c.as_array()
    out = []
    for child in np.random.SeedSequence(seed).spawn(n_resamples):
        rng = np.random.default_rng(child)
        out.append(mle_reconstruct(TomoCounts.from_array(rng.poisson(n)), tol, max_iter))
    return out


def imaginary_report(rho) -> dict:
    """|Im rho| with a separate sign matrix (+1, -1 or 0)."""
    im = np.imag(np.asarray(rho, dtype=complex))
    return {
        "abs_im": np.abs(im).tolist(),
        "sign_im": np.sign(np.where(np.abs(im) < 1e-12, 0.0, im)).astype(int).tolist(),
    }
