import numpy as np
import pytest

from qdpairs.eigen import eig_hermitian4, psd_sqrt
from qdpairs.polarization import bell_psi


def random_hermitian(rng, n=4):
    x = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return x + x.conj().T


def test_identity_quarter():
    w, q = eig_hermitian4(np.eye(4) / 4)
    assert np.allclose(w, 0.25, atol=1e-15)
    assert np.allclose(q @ q.conj().T, np.eye(4))


def test_bell_projector_rank_one():
    w, _ = eig_hermitian4(bell_psi())
    assert np.allclose(w, [1, 0, 0, 0], atol=1e-14)


def test_reconstruction_residual_1000_random():
    rng = np.random.default_rng(20240611)
    worst = 0.0
    for _ in range(1000):
        m = random_hermitian(rng)
        w, q = eig_hermitian4(m)
        assert np.all(np.diff(w) <= 0)
        worst = max(worst, np.linalg.norm(m - (q * w) @ q.conj().T))
    assert worst <= 1e-9


def test_matches_characteristic_polynomial_roots():
    # independent oracle: roots of det(m - x I) via the companion matrix
    rng = np.random.default_rng(7)
    for _ in range(50):
        m = random_hermitian(rng)
        roots = np.sort(np.real(np.roots(np.poly(m))))[::-1]
        w, _ = eig_hermitian4(m)
        assert np.allclose(w, roots, atol=1e-8)


def test_degenerate_spectrum():
    rng = np.random.default_rng(3)
    u, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    m = (u * np.array([2.0, 2.0, -1.0, -1.0])) @ u.conj().T
    w, q = eig_hermitian4(m)
    assert np.allclose(w, [2, 2, -1, -1], atol=1e-12)
    assert np.linalg.norm(m - (q * w) @ q.conj().T) < 1e-12


def test_rejects_non_hermitian():
    with pytest.raises(ValueError, match="Hermitian"):
        eig_hermitian4(np.array([[0, 1], [0, 0]]))


def test_psd_sqrt_squares_back():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = x @ x.conj().T
    s = psd_sqrt(rho)
    assert np.allclose(s @ s, rho, atol=1e-10)
