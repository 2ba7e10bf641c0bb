"""Coincidence histograms and the quantities derived from them."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .polarization import MeasurementSetting, coincidence_probability

DEFAULT_BIN_PS = 128
DEFAULT_SIDE_PEAKS = 10

# CHSH analyzer angles (Poincare polar angle, degrees)
CHSH_XX = (0.0, 90.0)
CHSH_X = (45.0, 135.0)


@dataclass
class Histogram:
    """Delay histogram on [-window_ps, window_ps) with ``bin_width_ps`` bins.

    ``counts[k]`` holds delays in ``[edges[k], edges[k] + bin_width_ps)``.
    """

    bin_width_ps: int
    window_ps: int
    counts: np.ndarray

    def __post_init__(self):
        if self.bin_width_ps <= 0:
            raise ValueError("bin width must be positive")
        if self.window_ps % self.bin_width_ps:
            raise ValueError(f"window {self.window_ps} ps is not a multiple of bin width {self.bin_width_ps} ps")
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (self.n_bins,):
            raise ValueError(f"expected {self.n_bins} bins, got {self.counts.shape}")
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be non-negative")

    @property
    def n_bins(self) -> int:
        return 2 * self.window_ps // self.bin_width_ps

    @property
    def edges(self) -> np.ndarray:
        """Left bin edges in ps."""
        return np.arange(-self.window_ps, self.window_ps, self.bin_width_ps, dtype=np.int64)

    @property
    def centers(self) -> np.ndarray:
        return self.edges + self.bin_width_ps / 2

    def at_delay(self, delay_ps) -> int:
        """Count in the bin containing ``delay_ps``."""
        k = (int(delay_ps) + self.window_ps) // self.bin_width_ps
        if not 0 <= k < self.n_bins:
            raise IndexError(f"delay {delay_ps} ps outside the histogram window")
        return int(self.counts[k])

    def __add__(self, other: Histogram) -> Histogram:
        if (self.bin_width_ps, self.window_ps) != (other.bin_width_ps, other.window_ps):
            raise ValueError("cannot add histograms with different binning")
        return Histogram(self.bin_width_ps, self.window_ps, self.counts + other.counts)

    def to_csv(self) -> str:
        lines = ["delay_ps,counts"]
        lines += [f"{d},{c}" for d, c in zip(self.edges, self.counts)]
        return "\n".join(lines) + "\n"


def _timestamps(stream):
    t = getattr(stream, "timestamps", stream)
    return np.asarray(t, dtype=np.int64)


def pair_delays(a, b, window_ps) -> np.ndarray:
    """All delays t_b - t_a with -window_ps <= delay < window_ps."""
    ta, tb = _timestamps(a), _timestamps(b)
    for name, t in (("first", ta), ("second", tb)):
        if t.size > 1 and np.any(np.diff(t) < 0):
            raise ValueError(f"{name} stream is not sorted")
    lo = np.searchsorted(tb, ta - window_ps, side="left")
    hi = np.searchsorted(tb, ta + window_ps, side="left")
    n = hi - lo
    total = int(n.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    owner = np.repeat(np.arange(ta.size), n)
    offsets = np.arange(total) - np.repeat(np.cumsum(n) - n, n)
    return tb[lo[owner] + offsets] - ta[owner]


def cross_correlate(a, b, bin_width_ps=DEFAULT_BIN_PS, window_ps=None) -> Histogram:
    """Full pairwise start-multistop histogram of t_b - t_a.

    With ``a`` the biexciton channel, positive delays mean the biexciton
    photon was detected before the exciton photon.
    """
    if window_ps is None:
        raise ValueError("window_ps is required")
    bin_width_ps, window_ps = int(bin_width_ps), int(window_ps)
    if bin_width_ps <= 0 or window_ps <= 0:
        raise ValueError("bin width and window must be positive")
    if window_ps % bin_width_ps:
        raise ValueError(f"window {window_ps} ps is not a multiple of bin width {bin_width_ps} ps")
    d = pair_delays(a, b, window_ps)
    n_bins = 2 * window_ps // bin_width_ps
    counts = np.bincount((d + window_ps) // bin_width_ps, minlength=n_bins)
    return Histogram(bin_width_ps, window_ps, counts)


def default_window_ps(period_ps, n_side_peaks=DEFAULT_SIDE_PEAKS, bin_width_ps=DEFAULT_BIN_PS) -> int:
    """Smallest bin-aligned half-window holding all side peaks for any window centre in +-period/2."""
    reach = (math.ceil(n_side_peaks / 2) + 1) * period_ps
    return int(math.ceil(reach / bin_width_ps) * bin_width_ps)


def side_peak_orders(n_side_peaks) -> list:
    """+1, -1, +2, -2, ... truncated to ``n_side_peaks`` entries."""
    orders = []
    k = 1
    while len(orders) < n_side_peaks:
        orders.append(k)
        if len(orders) < n_side_peaks:
            orders.append(-k)
        k += 1
    return orders


def integrate_window(h: Histogram, center_ps, half_width_ps) -> float:
    """Counts in [center - half, center + half), bins cut by the edges weighted by overlap."""
    lo, hi = center_ps - half_width_ps, center_ps + half_width_ps
    if lo < -h.window_ps - 1e-9 or hi > h.window_ps + 1e-9:
        raise ValueError(f"integration window [{lo}, {hi}) ps exceeds histogram window +-{h.window_ps} ps")
    left = h.edges.astype(float)
    right = left + h.bin_width_ps
    overlap = np.clip(np.minimum(right, hi) - np.maximum(left, lo), 0.0, None) / h.bin_width_ps
    return float(np.dot(overlap, h.counts))


@dataclass(frozen=True)
class NormalizedCoincidence:
    """Central-peak area over the mean side-peak area, with its Poisson sigma."""

    n: float
    poisson_sigma: float
    central: float = math.nan
    side_mean: float = math.nan

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("normalized coincidence must be non-negative")


def valley_center(h: Histogram, rep_period_ps) -> float:
    """Window centre in (-period/2, period/2] that puts the window edges in the valley between peaks.

    The histogram is folded modulo the period and the emptiest phase bin
    becomes the window boundary.  A zero-delay centre cuts the exponential
    tail of every peak at half a period and hands it to the neighbour; this
    choice keeps the full period but moves the cut to where the peaks are
    lowest.
    """
    counts = np.asarray(h.counts, dtype=float)
    if counts.sum() <= 0:
        return 0.0
    n_phase = max(int(round(rep_period_ps / h.bin_width_ps)), 1)
    phase = np.floor((h.centers % rep_period_ps) / rep_period_ps * n_phase).astype(int) % n_phase
    folded = np.bincount(phase, weights=counts, minlength=n_phase)
    hits = np.bincount(phase, minlength=n_phase)
    folded = np.where(hits > 0, folded / np.maximum(hits, 1), np.inf)
    # three-bin circular smoothing against Poisson noise
    smooth = (np.roll(folded, 1) + folded + np.roll(folded, -1)) / 3
    edge = (np.argmin(smooth) + 0.5) * rep_period_ps / n_phase
    center = edge + rep_period_ps / 2
    return float((center + rep_period_ps / 2) % rep_period_ps - rep_period_ps / 2)


def integrate_and_normalize(h: Histogram, rep_period_ps, n_side_peaks=DEFAULT_SIDE_PEAKS,
                            center_ps=0.0) -> NormalizedCoincidence:
    """Normalize the central peak by the average of ``n_side_peaks`` satellite peaks.

    Each peak is integrated over one period, [c - period/2, c + period/2)
    with c = center_ps + k * period.  When the period is not a multiple of
    the bin width, edge bins contribute in proportion to their overlap so
    every window spans exactly one period.
    """
    if n_side_peaks < 2:
        raise ValueError("need at least two side peaks")
    half = rep_period_ps / 2
    orders = side_peak_orders(n_side_peaks)
    reach = max(abs(k) for k in orders) * rep_period_ps + half + abs(center_ps)
    if reach > h.window_ps + 1e-9:
        raise ValueError(
            f"histogram window +-{h.window_ps} ps is too small for {n_side_peaks} side peaks "
            f"(needs +-{reach:g} ps)"
        )
    central = integrate_window(h, center_ps, half)
    sides = np.array([integrate_window(h, center_ps + k * rep_period_ps, half) for k in orders])
    side_total = float(sides.sum())
    if side_total <= 0:
        raise ValueError("side peaks are empty; cannot normalize")
    side_mean = side_total / n_side_peaks
    n = central / side_mean
    sigma = math.sqrt(central / side_mean**2 + n**2 / side_total)
    return NormalizedCoincidence(n, sigma, central, side_mean)


def visibility(n_par, n_perp) -> float:
    """|(n_par - n_perp)/(n_par + n_perp)|."""
    n_par, n_perp = float(getattr(n_par, "n", n_par)), float(getattr(n_perp, "n", n_perp))
    total = n_par + n_perp
    if total <= 0:
        raise ValueError("visibility undefined when both coincidence rates are zero")
    return abs((n_par - n_perp) / total)


def visibility_sigma(n_par: NormalizedCoincidence, n_perp: NormalizedCoincidence) -> float:
    total = n_par.n + n_perp.n
    if total <= 0:
        raise ValueError("visibility undefined when both coincidence rates are zero")
    d_par = 2 * n_perp.n / total**2
    d_perp = 2 * n_par.n / total**2
    return math.hypot(d_par * n_par.poisson_sigma, d_perp * n_perp.poisson_sigma)


def fidelity_from_visibilities(c_circ, c_hv, c_da) -> float:
    for c in (c_circ, c_hv, c_da):
        if not 0.0 <= c <= 1.0:
            raise ValueError(f"visibility {c} outside [0, 1]")
    return (1 + c_circ + c_hv + c_da) / 4


@dataclass(frozen=True)
class CorrelationSettingResult:
    """Both exciton ports of one run against the same biexciton channel."""

    label_xx: str
    label_x: str
    n_parallel: NormalizedCoincidence
    n_perp: NormalizedCoincidence

    def __post_init__(self):
        if not self.label_xx or not self.label_x:
            raise ValueError("setting labels must be non-empty")

    @property
    def visibility(self) -> float:
        return visibility(self.n_parallel, self.n_perp)

    @property
    def visibility_sigma(self) -> float:
        return visibility_sigma(self.n_parallel, self.n_perp)


def correlation_E(n_ab, n_ab_perp, n_aperp_b, n_aperp_bperp) -> float:
    """Polarization correlation from the four outcome rates of one analyzer pair."""
    vals = [float(getattr(x, "n", x)) for x in (n_ab, n_ab_perp, n_aperp_b, n_aperp_bperp)]
    total = sum(vals)
    if total <= 0:
        raise ValueError("correlation undefined for zero total flux")
    return (vals[0] + vals[3] - vals[1] - vals[2]) / total


def correlation_E_sigma(n_ab, n_ab_perp, n_aperp_b, n_aperp_bperp) -> float:
    ns = (n_ab, n_ab_perp, n_aperp_b, n_aperp_bperp)
    total = sum(x.n for x in ns)
    if total <= 0:
        raise ValueError("correlation undefined for zero total flux")
    e = correlation_E(*ns)
    signs = (1, -1, -1, 1)
    return math.sqrt(sum(((s - e) / total * x.poisson_sigma) ** 2 for s, x in zip(signs, ns)))


def chsh_s(E) -> float:
    """CHSH parameter from E(a,b), E(a,b'), E(a',b), E(a',b').

    The largest of the four |sum(E) - 2 E_k| is returned, so the value does
    not depend on which analyzer angle is labelled primed or on the sign
    convention of the correlation (cos(a+b) versus cos(a-b)).  Local
    realism bounds every one of the four combinations by 2.
    """
    E = [float(e) for e in E]
    if len(E) != 4:
        raise ValueError("CHSH needs four correlation values")
    total = sum(E)
    return max(abs(total - 2 * e) for e in E)


def chsh_s_sigma(E, sigmas) -> float:
    """Sigma of :func:`chsh_s` for independent errors on the four correlations."""
    return math.sqrt(sum(float(s) ** 2 for s in sigmas))


def chsh_angle_grid():
    """The 16 (theta_xx, theta_x) settings: a, a-perp x b, b-perp for both primed choices."""
    grid = []
    for a in CHSH_XX:
        for aa in (a, a + 180.0):
            for b in CHSH_X:
                for bb in (b, b + 180.0):
                    grid.append((aa % 360.0, bb % 360.0))
    return grid


def chsh_from_rates(rate):
    """S and its sigma from a mapping (theta_xx, theta_x) -> NormalizedCoincidence.

    ``rate`` must cover :func:`chsh_angle_grid`.
    """
    Es, sig = [], []
    for a in CHSH_XX:
        for b in CHSH_X:
            ap, bp = (a + 180.0) % 360.0, (b + 180.0) % 360.0
            quad = (rate[(a, b)], rate[(a, bp)], rate[(ap, b)], rate[(ap, bp)])
            Es.append(correlation_E(*quad))
            sig.append(correlation_E_sigma(*quad))
    return chsh_s(Es), chsh_s_sigma(Es, sig), Es


def chsh_from_density(rho):
    """S evaluated directly from a density matrix at the CHSH analyzer angles."""
    rate = {}
    for a, b in chsh_angle_grid():
        p = coincidence_probability(rho, MeasurementSetting.from_angles(a, b))
        rate[(a, b)] = NormalizedCoincidence(max(p, 0.0), 0.0)
    return chsh_from_rates(rate)[0]
