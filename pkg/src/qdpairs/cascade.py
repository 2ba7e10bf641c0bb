"""Biexciton-exciton cascade: ensemble two-photon state and Monte-Carlo click streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from .polarization import (
    MeasurementSetting,
    KET_H,
    KET_V,
    bell_diagonal_from_visibilities,
    check_density,
)

HBAR_UEV_NS = 0.6582119569  # reduced Planck constant in ueV*ns

CH_XX, CH_X_CO, CH_X_CROSS = 0, 1, 2
CHANNELS = (CH_XX, CH_X_CO, CH_X_CROSS)

CHUNK_PULSES = 1 << 20

_HH = np.kron(KET_H, KET_H)
_VV = np.kron(KET_V, KET_V)


@dataclass(frozen=True)
class CascadeParams:
    """Source and detection model.

    Rates are in 1/ns, the fine-structure splitting in ueV, the repetition
    rate in MHz, jitter in ps (Gaussian sigma) and dark counts in counts/s
    per channel.  ``gamma_xx`` defaults to twice ``gamma1``.  When
    ``visibilities`` is set, the polarization state is replaced by the
    Bell-diagonal state with those (circular, H/V, D/A) visibilities.
    """

    gamma1: float = 1 / 0.560
    gamma_s: float = 1 / 1.5
    gamma_xx: float | None = None
    fss_ueV: float = 0.0
    rep_rate: float = 200.0
    p_exc: float = 0.1
    det_eff: tuple = (1.0, 1.0, 1.0)
    jitter_ps: float = 50.0
    dark_cps: tuple = (50.0, 50.0, 50.0)
    visibilities: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "det_eff", _triple(self.det_eff, "det_eff"))
        object.__setattr__(self, "dark_cps", _triple(self.dark_cps, "dark_cps"))
        if self.gamma_xx is None:
            object.__setattr__(self, "gamma_xx", 2.0 * self.gamma1)
        if self.visibilities is not None:
            vis = tuple(float(v) for v in self.visibilities)
            if len(vis) != 3:
                raise ValueError("visibilities needs three values (circular, H/V, D/A)")
            bell_diagonal_from_visibilities(*vis)
            object.__setattr__(self, "visibilities", vis)
        for name in ("gamma1", "gamma_s", "gamma_xx", "jitter_ps"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {value}")
        if not math.isfinite(self.fss_ueV):
            raise ValueError("fss_ueV must be finite")
        if not self.rep_rate > 0:
            raise ValueError(f"rep_rate must be positive, got {self.rep_rate}")
        if not 0.0 <= self.p_exc <= 1.0:
            raise ValueError(f"p_exc must lie in [0, 1], got {self.p_exc}")
        if any(not 0.0 <= e <= 1.0 for e in self.det_eff):
            raise ValueError(f"det_eff entries must lie in [0, 1], got {self.det_eff}")
        if any(d < 0 for d in self.dark_cps):
            raise ValueError("dark_cps must be non-negative")

    @property
    def period_ps(self) -> float:
        return 1e6 / self.rep_rate

    @property
    def depolarization_bound(self) -> float:
        """gamma1/(gamma1 + gamma_s), the visibility left after spin scattering."""
        return self.gamma1 / (self.gamma1 + self.gamma_s)

    @classmethod
    def from_mapping(cls, values: dict) -> CascadeParams:
        """Build from string values such as those of a key=value config file.

        Lifetimes can be given instead of rates via ``tau1_ns``, ``tau_s_ns``
        and ``tau_xx_ns``.  Unknown keys raise ``ValueError``.
        """
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            key = key.strip()
            if key in ("tau1_ns", "tau_s_ns", "tau_xx_ns"):
                tau = float(raw)
                if not tau > 0:
                    raise ValueError(f"{key} must be positive, got {tau}")
                target = {"tau1_ns": "gamma1", "tau_s_ns": "gamma_s", "tau_xx_ns": "gamma_xx"}[key]
                kwargs[target] = 1.0 / tau
                continue
            if key not in known:
                raise ValueError(f"unknown cascade parameter {key!r}")
            if key in ("det_eff", "dark_cps", "visibilities"):
                kwargs[key] = _parse_list(raw)
            elif key == "gamma_xx" and str(raw).strip().lower() in ("", "none"):
                kwargs[key] = None
            else:
                kwargs[key] = float(raw)
        return cls(**kwargs)

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                out[f.name] = ",".join(repr(float(v)) for v in value)
            else:
                out[f.name] = repr(float(value))
        return out


def _triple(value, name):
    if isinstance(value, (int, float)):
        value = (value,) * 3
    value = tuple(float(v) for v in value)
    if len(value) != 3:
        raise ValueError(f"{name} needs one value per channel (3)")
    return value


def _parse_list(raw):
    if isinstance(raw, (list, tuple)):
        return tuple(float(v) for v in raw)
    items = [x for x in str(raw).replace(";", ",").split(",") if x.strip()]
    return tuple(float(x) for x in items)


# ---------------------------------------------------------------------------
# closed-form ensemble state

def hh_vv_coherence(p: CascadeParams) -> complex:
    """<HH|rho|VV> of the time-integrated state: (1/2) G1 / (G1 + Gs + i s/hbar)."""
    omega = p.fss_ueV / HBAR_UEV_NS
    return 0.5 * p.gamma1 / complex(p.gamma1 + p.gamma_s, omega)


def ensemble_state(p: CascadeParams) -> np.ndarray:
    """Time-integrated two-photon density matrix in the RR, RL, LR, LL basis.

    Exciton dwell times are exponential with rate gamma1.  Up to the dwell
    time tau the spin survives with probability exp(-gamma_s tau) and the
    surviving pair is (|HH> + exp(i s tau/hbar)|VV>)/sqrt(2); the scattered
    part is white noise I/4.  With ``p.visibilities`` set the Bell-diagonal
    override is returned instead.
    """
    if p.visibilities is not None:
        return bell_diagonal_from_visibilities(*p.visibilities)
    if not p.gamma1 > 0:
        raise ValueError("gamma1 must be positive")
    survive = p.depolarization_bound
    coh = hh_vv_coherence(p)
    rho = 0.5 * survive * (np.outer(_HH, _HH.conj()) + np.outer(_VV, _VV.conj()))
    rho = rho + coh * np.outer(_HH, _VV.conj()) + np.conj(coh) * np.outer(_VV, _HH.conj())
    rho = rho + (1.0 - survive) * np.eye(4) / 4
    return check_density(rho)


def pl_decay(p: CascadeParams, t_ns) -> np.ndarray | float:
    """Normalized exciton photoluminescence decay exp(-gamma1 t)."""
    return np.exp(-p.gamma1 * np.asarray(t_ns, dtype=float))


def dcp_curve(p: CascadeParams, t_ns) -> np.ndarray | float:
    """Degree of circular polarization exp(-gamma_s t)."""
    return np.exp(-p.gamma_s * np.asarray(t_ns, dtype=float))


# ---------------------------------------------------------------------------
# Monte-Carlo event streams

@dataclass
class EventStream:
    """Timestamps (integer ps, sorted) of the clicks on one detector channel."""

    channel: int
    timestamps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {self.channel}")
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        if self.timestamps.ndim != 1:
            raise ValueError("timestamps must be one-dimensional")
        if self.timestamps.size > 1 and np.any(np.diff(self.timestamps) < 0):
            raise ValueError("timestamps must be sorted")

    def __len__(self):
        return int(self.timestamps.size)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return self.channel == other.channel and np.array_equal(self.timestamps, other.timestamps)


def _outcome_amplitudes(setting: MeasurementSetting, ket: np.ndarray) -> np.ndarray:
    """<a b|ket> for the four analyzer outcomes.

    Order: (xx pass, x co), (xx pass, x cross), (xx block, x co), (xx block, x cross).
    """
    xx = (setting.proj_xx.vector, setting.proj_xx.orthogonal().vector)
    x = (setting.proj_x.vector, setting.proj_x.orthogonal().vector)
    return np.array([np.vdot(np.kron(a, b), ket) for a in xx for b in x])


def outcome_probabilities(rho, setting: MeasurementSetting) -> np.ndarray:
    """Probabilities of the four analyzer outcomes (same order as the simulation uses)."""
    xx = (setting.proj_xx, setting.proj_xx.orthogonal())
    x = (setting.proj_x, setting.proj_x.orthogonal())
    out = []
    for a in xx:
        for b in x:
            proj = np.kron(a.projector, b.projector)
            out.append(float(np.real(np.trace(rho @ proj))))
    return np.array(out)


def _simulate_chunk(p: CascadeParams, setting, first_pulse, n_pulses, rng):
    """Signal clicks from pulses [first_pulse, first_pulse + n_pulses)."""
    period = p.period_ps
    fired = np.flatnonzero(rng.random(n_pulses) < p.p_exc)
    n = fired.size
    t0 = (first_pulse + fired) * period
    t_xx = t0 + rng.exponential(1e3 / p.gamma_xx, n) if p.gamma_xx > 0 else t0
    dwell_ns = rng.exponential(1.0 / p.gamma1, n)
    t_x = t_xx + dwell_ns * 1e3

    if p.visibilities is not None:
        probs = np.broadcast_to(outcome_probabilities(ensemble_state(p), setting), (n, 4))
    else:
        scattered = rng.random(n) < -np.expm1(-p.gamma_s * dwell_ns)
        amp_hh = _outcome_amplitudes(setting, _HH)
        amp_vv = _outcome_amplitudes(setting, _VV)
        phase = np.exp(1j * (p.fss_ueV / HBAR_UEV_NS) * dwell_ns)
        amp = (amp_hh[None, :] + phase[:, None] * amp_vv[None, :]) / math.sqrt(2)
        probs = np.abs(amp) ** 2
        probs[scattered] = 0.25
    cum = np.cumsum(probs, axis=1)
    u = rng.random(n) * cum[:, -1]
    outcome = np.minimum((u[:, None] > cum).sum(axis=1), 3)

    xx_pass = outcome < 2
    x_co = outcome % 2 == 0
    keep0 = xx_pass & (rng.random(n) < p.det_eff[0])
    keep1 = x_co & (rng.random(n) < p.det_eff[1])
    keep2 = ~x_co & (rng.random(n) < p.det_eff[2])
    return t_xx[keep0], t_x[keep1], t_x[keep2]


def simulate(p: CascadeParams, setting: MeasurementSetting, duration_s, seed) -> tuple:
    """Three click streams (XX, X co-port, X cross-port) for one analyzer setting.

    The pulse train is cut into fixed chunks, each with its own child of
    ``SeedSequence(seed)``, so the output only depends on (params, setting,
    duration, seed).
    """
    if not isinstance(setting, MeasurementSetting):
        raise TypeError("setting must be a MeasurementSetting")
    if seed is None:
        raise ValueError("simulate needs an explicit seed")
    if not duration_s > 0:
        raise ValueError(f"duration must be positive, got {duration_s}")
    n_pulses = int(math.floor(duration_s * p.rep_rate * 1e6 + 1e-9))
    if n_pulses < 1:
        raise ValueError(f"duration {duration_s} s contains no excitation pulse")

    n_chunks = -(-n_pulses // CHUNK_PULSES)
    children = np.random.SeedSequence(seed).spawn(n_chunks + 1)
    parts = ([], [], [])
    for k in range(n_chunks):
        first = k * CHUNK_PULSES
        count = min(CHUNK_PULSES, n_pulses - first)
        clicks = _simulate_chunk(p, setting, first, count, np.random.default_rng(children[k]))
        for store, t in zip(parts, clicks):
            store.append(t)

    rng = np.random.default_rng(children[-1])
    span_ps = n_pulses * p.period_ps
    streams = []
    for ch in CHANNELS:
        t = np.concatenate(parts[ch]) if parts[ch] else np.zeros(0)
        if p.jitter_ps > 0:
            t = t + rng.normal(0.0, p.jitter_ps, t.size)
        n_dark = rng.poisson(p.dark_cps[ch] * duration_s)
        t = np.concatenate([t, rng.uniform(0.0, span_ps, n_dark)])
        streams.append(EventStream(ch, np.sort(np.rint(t).astype(np.int64))))
    return tuple(streams)


# ---------------------------------------------------------------------------
# text formats

def write_streams(path, streams) -> None:
    """Merged "channel<TAB>t_ps" lines sorted by time, no header."""
    chans = np.concatenate([np.full(len(s), s.channel, dtype=np.int64) for s in streams])
    times = np.concatenate([s.timestamps for s in streams])
    order = np.lexsort((chans, times))
    with open(path, "w") as fh:
        fh.writelines(f"{c}\t{t}\n" for c, t in zip(chans[order].tolist(), times[order].tolist()))


def read_streams(path) -> dict:
    """Parse an event file into {channel: EventStream} (all three channels present)."""
    data = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 2), dtype=np.int64)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two tab-separated columns")
    if data.shape[0] > 1 and np.any(np.diff(data[:, 1]) < 0):
        raise ValueError(f"{path}: records are not sorted by time")
    out = {}
    for ch in CHANNELS:
        out[ch] = EventStream(ch, data[data[:, 0] == ch, 1])
    unknown = set(np.unique(data[:, 0])) - set(CHANNELS)
    if unknown:
        raise ValueError(f"{path}: unknown channel ids {sorted(unknown)}")
    return out


def read_config(path) -> dict:
    """Flat key=value file; '#' starts a comment, blank lines ignored."""
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip()] = value.strip()
    return values
