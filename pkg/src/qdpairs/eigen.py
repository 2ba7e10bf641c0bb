"""Cyclic Jacobi eigensolver for small complex Hermitian matrices."""

import numpy as np

HERMITIAN_TOL = 1e-10


def eig_hermitian4(m, tol=1e-14, max_sweeps=50):
    """Eigen-decomposition of a small Hermitian matrix by complex Jacobi rotations.

    Parameters
    ----------
    m : array_like, shape (n, n)
        Hermitian matrix (n is 4 for two-qubit states, but any small n works).
    tol : float
        Relative off-diagonal Frobenius norm at which sweeping stops.
    max_sweeps : int
        Hard cap on the number of cyclic sweeps.

    Returns
    -------
    w : ndarray, shape (n,)
        Eigenvalues sorted in descending order.
    q : ndarray, shape (n, n)
        Unitary matrix whose columns are the matching eigenvectors,
        so that ``m == q @ diag(w) @ q.conj().T``.
    """
    a = np.array(m, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if np.max(np.abs(a - a.conj().T), initial=0.0) > HERMITIAN_TOL:
        raise ValueError("matrix is not Hermitian")
    a = 0.5 * (a + a.conj().T)
    n = a.shape[0]
    q = np.eye(n, dtype=complex)
    scale = max(np.linalg.norm(a), 1e-300)
    offdiag = ~np.eye(n, dtype=bool)

    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offdiag])
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                b = a[p, r]
                mag = abs(b)
                if mag < 1e-300:
                    continue
                phase = b / mag
                theta = 0.5 * np.arctan2(2.0 * mag, (a[p, p] - a[r, r]).real)
                c, s = np.cos(theta), np.sin(theta)
                # rotation = diag(1, conj(phase)) @ [[c, -s], [s, c]]
                u_pp, u_pr = c, -s
                u_rp, u_rr = s * np.conj(phase), c * np.conj(phase)
                col_p = a[:, p].copy()
                col_r = a[:, r].copy()
                a[:, p] = col_p * u_pp + col_r * u_rp
                a[:, r] = col_p * u_pr + col_r * u_rr
                row_p = a[p, :].copy()
                row_r = a[r, :].copy()
                a[p, :] = np.conj(u_pp) * row_p + np.conj(u_rp) * row_r
                a[r, :] = np.conj(u_pr) * row_p + np.conj(u_rr) * row_r
                a[p, r] = 0.0
                a[r, p] = 0.0
                q_p = q[:, p].copy()
                q_r = q[:, r].copy()
                q[:, p] = q_p * u_pp + q_r * u_rp
                q[:, r] = q_p * u_pr + q_r * u_rr

    w = np.real(np.diag(a))
    order = np.argsort(w)[::-1]
    return w[order], q[:, order]


def eigvals_hermitian4(m):
    return eig_hermitian4(m)[0]


def psd_sqrt(m, cutoff=1e-13):
    """Square root of a positive semidefinite Hermitian matrix.

    Eigenvalues below ``cutoff`` times the largest one are treated as exact
    zeros so that round-off in a rank-deficient matrix does not reappear as
    a ~1e-8 square root.
    """
    w, q = eig_hermitian4(m)
    w = np.where(w > cutoff * max(w[0], 0.0), w, 0.0)
    return (q * np.sqrt(np.clip(w, 0.0, None))) @ q.conj().T
