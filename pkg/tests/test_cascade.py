import math

import numpy as np
import pytest
from scipy.integrate import quad

from qdpairs.cascade import (
    HBAR_UEV_NS,
    CascadeParams,
    EventStream,
    dcp_curve,
    ensemble_state,
    hh_vv_coherence,
    outcome_probabilities,
    pl_decay,
    read_config,
    read_streams,
    simulate,
    write_streams,
)
from qdpairs.polarization import (
    KET_H,
    KET_V,
    MeasurementSetting,
    bell_psi,
    check_density,
    coincidence_probability,
    fidelity_to_bell,
    werner,
)

HH = np.kron(KET_H, KET_H)
VV = np.kron(KET_V, KET_V)


def quiet(**kw):
    """No jitter, no darks, every pulse fires, photons land inside their own period."""
    base = dict(gamma1=10.0, gamma_xx=50.0, p_exc=1.0, jitter_ps=0.0, dark_cps=0.0)
    base.update(kw)
    return CascadeParams(**base)


# --- ensemble state ----------------------------------------------------------------

def test_measured_rates_give_werner():
    p = CascadeParams(gamma1=1 / 0.56, gamma_s=1 / 1.5)
    v = p.depolarization_bound
    assert v == pytest.approx(1.5 / (1.5 + 0.56))
    assert np.allclose(ensemble_state(p), werner(v), atol=1e-10)


def test_no_scattering_is_bell():
    assert np.allclose(ensemble_state(CascadeParams(gamma_s=0.0)), bell_psi(), atol=1e-12)


def test_visibility_override():
    p = CascadeParams(visibilities=(0.87, 0.78, 0.77))
    assert fidelity_to_bell(ensemble_state(p)) == pytest.approx(0.855, abs=1e-12)


def dwell_average_coherence(p):
    # <HH|rho|VV> built directly from the dwell-time integral
    w = p.fss_ueV / HBAR_UEV_NS
    g = p.gamma1 + p.gamma_s
    re = quad(lambda t: p.gamma1 * math.exp(-g * t) * math.cos(w * t), 0, math.inf, limit=400)[0]
    im = quad(lambda t: -p.gamma1 * math.exp(-g * t) * math.sin(w * t), 0, math.inf, limit=400)[0]
    return 0.5 * complex(re, im)


@pytest.mark.parametrize("s", [0.0, 2.0, 10.0, -5.0])
def test_coherence_matches_quadrature(s):
    p = CascadeParams(fss_ueV=s)
    oracle = dwell_average_coherence(p)
    assert abs(hh_vv_coherence(p) - oracle) < 1e-8
    rho = ensemble_state(p)
    assert abs(np.vdot(HH, rho @ VV) - oracle) < 1e-8


def test_fidelity_monotone_in_splitting():
    f = [fidelity_to_bell(ensemble_state(CascadeParams(fss_ueV=s))) for s in np.linspace(0, 20, 21)]
    assert all(b < a for a, b in zip(f, f[1:]))
    f_neg = [fidelity_to_bell(ensemble_state(CascadeParams(fss_ueV=-s))) for s in np.linspace(0, 20, 21)]
    assert np.allclose(f, f_neg)


def test_fidelity_monotone_in_spin_scattering():
    f = [fidelity_to_bell(ensemble_state(CascadeParams(gamma_s=g))) for g in np.linspace(0, 5, 21)]
    assert all(b < a for a, b in zip(f, f[1:]))


def test_ensemble_state_is_valid():
    for s in (0.0, 3.0, 30.0):
        for gs in (0.0, 0.7, 4.0):
            check_density(ensemble_state(CascadeParams(fss_ueV=s, gamma_s=gs)))


def test_dcp_and_pl_curves():
    p = CascadeParams()
    assert dcp_curve(p, 1.5) == pytest.approx(math.exp(-1))
    assert pl_decay(p, 0.56) == pytest.approx(math.exp(-1))
    t = np.linspace(0, 5, 11)
    assert np.allclose(dcp_curve(p, t), np.exp(-t / 1.5))


# --- parameters ---------------------------------------------------------------------

def test_defaults():
    p = CascadeParams()
    assert p.gamma_xx == pytest.approx(2 * p.gamma1)
    assert p.period_ps == pytest.approx(5000.0)
    assert p.det_eff == (1.0, 1.0, 1.0)


@pytest.mark.parametrize("kw", [
    dict(p_exc=1.5), dict(p_exc=-0.1), dict(det_eff=(1.0, 2.0, 1.0)), dict(gamma1=-1.0),
    dict(rep_rate=0.0), dict(dark_cps=(-1, 0, 0)), dict(visibilities=(1.0, 1.0, 0.0)),
    dict(det_eff=(1.0, 1.0)),
])
def test_invalid_params(kw):
    with pytest.raises(ValueError):
        CascadeParams(**kw)


def test_config_round_trip(tmp_path):
    path = tmp_path / "source.cfg"
    path.write_text("# lifetimes\ntau1_ns = 0.56\ntau_s_ns=1.5  # spin\n\np_exc = 0.3\ndet_eff = 0.5,0.6,0.7\n")
    p = CascadeParams.from_mapping(read_config(path))
    assert p.gamma1 == pytest.approx(1 / 0.56)
    assert p.gamma_s == pytest.approx(1 / 1.5)
    assert p.det_eff == (0.5, 0.6, 0.7)
    assert CascadeParams.from_mapping(p.to_mapping()) == p


def test_config_errors(tmp_path):
    with pytest.raises(ValueError, match="unknown"):
        CascadeParams.from_mapping({"gamma9": "1"})
    with pytest.raises(ValueError, match="positive"):
        CascadeParams.from_mapping({"tau1_ns": "0"})
    bad = tmp_path / "bad.cfg"
    bad.write_text("p_exc 0.3\n")
    with pytest.raises(ValueError, match="key=value"):
        read_config(bad)


# --- simulation ---------------------------------------------------------------------

def test_outcome_probabilities_sum_to_one():
    rho = ensemble_state(CascadeParams())
    for label in ("LR", "HH", "DA", "RR"):
        probs = outcome_probabilities(rho, MeasurementSetting.from_labels(label))
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)
        assert probs[0] == pytest.approx(coincidence_probability(rho, MeasurementSetting.from_labels(label)))


def test_deterministic_for_seed():
    p = CascadeParams(p_exc=0.3)
    s = MeasurementSetting.from_labels("HH")
    a = simulate(p, s, 0.002, seed=42)
    b = simulate(p, s, 0.002, seed=42)
    c = simulate(p, s, 0.002, seed=43)
    assert a == b
    assert a != c


def test_streams_sorted_and_in_range():
    p = CascadeParams(p_exc=0.3)
    duration = 0.002
    for stream in simulate(p, MeasurementSetting.from_labels("LR"), duration, seed=1):
        assert isinstance(stream, EventStream)
        assert np.all(np.diff(stream.timestamps) >= 0)
        assert stream.timestamps.dtype == np.int64


def test_zero_efficiency_leaves_dark_counts():
    p = CascadeParams(det_eff=0.0, dark_cps=(1000.0, 2000.0, 0.0))
    xx, co, cross = simulate(p, MeasurementSetting.from_labels("LR"), 0.5, seed=3)
    assert len(cross) == 0
    # Poisson means 500 and 1000
    assert abs(len(xx) - 500) < 5 * math.sqrt(500)
    assert abs(len(co) - 1000) < 5 * math.sqrt(1000)


def test_simulate_rejects_bad_input():
    p = CascadeParams()
    s = MeasurementSetting.from_labels("LR")
    with pytest.raises(ValueError):
        simulate(p, s, 0.0, seed=1)
    with pytest.raises(ValueError):
        simulate(p, s, 1e-12, seed=1)
    with pytest.raises(ValueError):
        simulate(p, s, 0.001, seed=None)
    with pytest.raises(TypeError):
        simulate(p, "LR", 0.001, seed=1)


def pulse_outcomes(p, streams):
    """Per-pulse outcome counts recovered from the click streams (quiet sources only)."""
    period = p.period_ps
    xx, co, cross = (set((s.timestamps // period).tolist()) for s in streams)
    return np.array([len(xx & co), len(xx & cross), len(co - xx), len(cross - xx)])


@pytest.mark.parametrize("label", ["LR", "RR", "HV", "DD"])
@pytest.mark.parametrize("fss", [0.0, 10.0])
def test_outcome_frequencies_match_ensemble(label, fss):
    p = quiet(gamma_s=3.0, fss_ueV=fss)
    setting = MeasurementSetting.from_labels(label)
    n_pulses = 200_000
    streams = simulate(p, setting, n_pulses / (p.rep_rate * 1e6), seed=17)
    counts = pulse_outcomes(p, streams)
    assert counts.sum() == n_pulses
    probs = outcome_probabilities(ensemble_state(p), setting)
    sigma = np.sqrt(n_pulses * probs * (1 - probs)) + 1.0
    assert np.all(np.abs(counts - n_pulses * probs) < 4 * sigma)


def test_bell_circular_anticorrelation():
    p = quiet(gamma_s=0.0)
    setting = MeasurementSetting.from_labels("RR")
    streams = simulate(p, setting, 50_000 / (p.rep_rate * 1e6), seed=5)
    counts = pulse_outcomes(p, streams)
    # RR and LL never happen for the Bell state
    assert counts[0] == 0 and counts[3] == 0


def test_detector_efficiency_thinning():
    p = quiet(det_eff=(0.5, 0.25, 0.25))
    n_pulses = 100_000
    xx, co, cross = simulate(p, MeasurementSetting.from_labels("HH"), n_pulses / 2e8, seed=8)
    # the biexciton analyzer passes half of the photons
    assert abs(len(xx) - 0.25 * n_pulses) < 5 * math.sqrt(0.1875 * n_pulses)
    assert abs(len(co) + len(cross) - 0.25 * n_pulses) < 5 * math.sqrt(0.1875 * n_pulses)


def test_delay_distribution_mean():
    # exciton photons trail biexciton photons by an Exp(gamma1) dwell
    p = quiet(gamma1=2.0, gamma_xx=20.0)
    xx, co, cross = simulate(p, MeasurementSetting.from_labels("HH"), 20_000 / 2e8, seed=4)
    x = np.sort(np.concatenate([co.timestamps, cross.timestamps]))
    assert len(x) == 20_000
    x_by_pulse = dict(zip((x // p.period_ps).tolist(), x.tolist()))
    dwell_ns = np.array([x_by_pulse[t // p.period_ps] - t for t in xx.timestamps.tolist()]) / 1e3
    assert dwell_ns.mean() == pytest.approx(0.5, rel=0.05)


def test_stream_file_round_trip(tmp_path):
    p = CascadeParams(p_exc=0.2)
    streams = simulate(p, MeasurementSetting.from_labels("LR"), 0.001, seed=2)
    path = tmp_path / "events.tsv"
    write_streams(path, streams)
    back = read_streams(path)
    for s in streams:
        assert back[s.channel] == s


def test_stream_file_errors(tmp_path):
    path = tmp_path / "bad.tsv"
    path.write_text("0\t10\n7\t20\n")
    with pytest.raises(ValueError, match="channel"):
        read_streams(path)
    path.write_text("0\t30\n1\t20\n")
    with pytest.raises(ValueError, match="sorted"):
        read_streams(path)
