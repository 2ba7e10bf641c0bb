"""Entangled photon pairs from a quantum-dot biexciton cascade: simulation and analysis."""

__version__ = "0.1.0"

from .cascade import CascadeParams, EventStream, dcp_curve, ensemble_state, pl_decay, simulate
from .coincidence import (
    Histogram,
    NormalizedCoincidence,
    chsh_s,
    correlation_E,
    cross_correlate,
    fidelity_from_visibilities,
    integrate_and_normalize,
    visibility,
)
from .eigen import eig_hermitian4
from .fitting import fit_exponential, fit_fringe
from .polarization import (
    MeasurementSetting,
    PolState,
    bell_diagonal_from_visibilities,
    bell_psi,
    coincidence_probability,
    concurrence,
    eof,
    fidelity_to_bell,
    linear_entropy,
    peres_min_eigenvalue,
    state_from_angles,
    tangle,
    werner,
)
from .tomography import TomoCounts, linear_inversion, mle_reconstruct
