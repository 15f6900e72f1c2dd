import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from iscsc.scenario import reference_scenario, synthesize_channels
from iscsc.semantics import (
    InfeasibleBleuTarget,
    bleu_oracle,
    computational_power,
    power_breakdown,
    rho_lower_bound,
    semantic_rate,
    sinr_cu,
    sinr_eve,
    transmit_power,
    worst_case_ssr,
)
from iscsc.validation import check_bleu_inversion, random_hermitian_psd, sample_ball


def cvec(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def test_sinr_without_interference():
    assert sinr_cu(0, np.array([[1.0, 0.0]]), [np.diag([1.0, 0.0])], [], 1.0) == 1.0


def test_sinr_zero_signal(rng):
    h = cvec(rng, 3)[None, :]
    assert sinr_cu(0, h, [np.zeros((3, 3))], [random_hermitian_psd(rng, 3)], 1.0) == 0.0
    assert sinr_eve(0, 0, h[0], [np.zeros((3, 3))], [], 1.0) == 0.0


def test_sinr_cu_matches_scalar_oracle(rng):
    n = 4
    H = np.array([cvec(rng, n), cvec(rng, n)])
    W = [random_hermitian_psd(rng, n, 1), random_hermitian_psd(rng, n, 1)]
    R = [random_hermitian_psd(rng, n)]
    for k in range(2):
        h = H[k]
        sig = np.vdot(h, W[k] @ h).real
        intf = np.vdot(h, W[1 - k] @ h).real + np.vdot(h, R[0] @ h).real
        assert sinr_cu(k, H, W, R, 0.3) == pytest.approx(sig / (intf + 0.3), abs=1e-10)


def test_sinr_eve_in_ball_matches_scalar_oracle(rng):
    n = 5
    h_est = cvec(rng, n)
    W = [random_hermitian_psd(rng, n, 1), random_hermitian_psd(rng, n, 1)]
    R = [random_hermitian_psd(rng, n)]
    u = sample_ball(rng, n, 0.01, 1)[0]
    h = h_est + u
    ref = np.vdot(h, W[0] @ h).real / (np.vdot(h, W[1] @ h).real + np.vdot(h, R[0] @ h).real + 0.2)
    assert sinr_eve(0, 0, h, W, R, 0.2) == pytest.approx(ref, abs=1e-10)
    # without the other CU's beam in the denominator
    ref_robust = np.vdot(h, W[0] @ h).real / (np.vdot(h, R[0] @ h).real + 0.2)
    assert sinr_eve(0, 0, h, W, R, 0.2, include_comm_interference=False) == pytest.approx(ref_robust, abs=1e-10)


def test_sinr_rejects_non_hermitian():
    bad = np.array([[1.0, 1.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        sinr_cu(0, np.ones((1, 2)), [bad], [], 1.0)
    with pytest.raises(ValueError):
        sinr_eve(0, 0, np.ones(2), [np.eye(2)], [bad], 1.0)


@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1.0, 10.0))
def test_sinr_increases_with_own_beam(seed, c):
    rng = np.random.default_rng(seed)
    H = np.array([cvec(rng, 3), cvec(rng, 3)])
    W = [random_hermitian_psd(rng, 3, 1), random_hermitian_psd(rng, 3, 1)]
    base = sinr_cu(0, H, W, [], 1.0)
    scaled = sinr_cu(0, H, [c * W[0], W[1]], [], 1.0)
    assert base >= 0 and scaled >= base * (1 - 1e-12)


def test_semantic_rate_examples():
    assert semantic_rate(1.0, 1.0, 1.0) == 1.0
    assert semantic_rate(0.5, 3.0, 1.1) == pytest.approx(4.4, rel=1e-14)
    assert semantic_rate(0.37, 0.0, 2.5) == 0.0
    with pytest.raises(ValueError):
        semantic_rate(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        semantic_rate(1.2, 1.0, 1.0)


@given(
    r1=st.floats(0.01, 1.0), r2=st.floats(0.01, 1.0),
    g=st.floats(1e-3, 1e6), iota=st.floats(0.1, 5.0),
)
def test_semantic_rate_decreasing_in_rho(r1, r2, g, iota):
    assume(r1 < r2 * (1 - 1e-9))
    assert semantic_rate(r1, g, iota) > semantic_rate(r2, g, iota)


@given(g1=st.floats(0.0, 1e6), g2=st.floats(1e-9, 1e6), rho=st.floats(0.01, 1.0))
def test_semantic_rate_increasing_in_gamma(g1, g2, rho):
    assume(g1 < g2 * (1 - 1e-6))
    assert semantic_rate(rho, g1, 1.1) < semantic_rate(rho, g2, 1.1)


def test_rho_bound_examples():
    w, p = [0.5, 0.5], [0.9, 0.7]
    assert rho_lower_bound(math.exp(0.5 * math.log(0.9) + 0.5 * math.log(0.7)), w, p) == pytest.approx(1.0, abs=1e-15)
    # 1 / (1 - ln 0.8 + ln 0.9), evaluated by hand
    assert rho_lower_bound(0.8, [1.0], [0.9]) == pytest.approx(0.894628, abs=1e-6)
    assert bleu_oracle(rho_lower_bound(0.8, [1.0], [0.9]), [1.0], [0.9]) == pytest.approx(0.8, abs=1e-12)


def test_rho_bound_infeasible_target():
    with pytest.raises(InfeasibleBleuTarget):
        rho_lower_bound(0.95, [1.0], [0.9])
    with pytest.raises(ValueError):
        rho_lower_bound(0.0, [1.0], [0.9])


def test_bleu_at_full_ratio():
    w, p = np.array([0.25] * 4), np.array([0.9, 0.8, 0.6, 0.5])
    assert bleu_oracle(1.0, w, p) == pytest.approx(math.exp(np.dot(w, np.log(p))), rel=1e-14)


def test_bleu_inversion_batch(rng):
    res = check_bleu_inversion(rng, draws=1000)
    assert res.passed, res.detail


def test_bleu_inversion_detects_wrong_denominator(rng):
    assert not check_bleu_inversion(rng, draws=200, denominator_shift=0.1).passed


def _random_instance(rng, K=2, L=3, n=6):
    cfg = reference_scenario(
        n_antennas=n,
        target_angles=tuple(float(x) for x in rng.uniform(-80, 80, L)),
        error_radius=(0.01,) * L,
        pathloss_roundtrip=(0.1 + 0j,) * L,
        pathloss_oneway=(0.1 + 0j,) * L,
    )
    ch = synthesize_channels(cfg)
    W = [random_hermitian_psd(rng, n, 1) * 1e-3 for _ in range(K)]
    R = [random_hermitian_psd(rng, n) * 1e-4 for _ in range(L)]
    return cfg, ch, W, R


def test_worst_case_ssr_brute_force(rng):
    cfg, ch, W, R = _random_instance(rng)
    noises = (ch.noise_comm_w, ch.noise_sense_w)
    for k in range(2):
        s_k = semantic_rate(0.5, sinr_cu(k, ch, W, R, noises[0]), 1.1)
        diffs = [
            max(s_k - semantic_rate(0.5, sinr_eve(l, k, ch.target_channels_est[l], W, R, noises[1]), 1.1), 0.0)
            for l in range(3)
        ]
        assert worst_case_ssr(k, ch, W, R, 0.5, 1.1, noises) == pytest.approx(min(diffs), abs=1e-10)


def test_worst_case_ssr_without_eavesdroppers(rng):
    cfg = reference_scenario(target_angles=(), error_radius=(), pathloss_oneway=(), pathloss_roundtrip=())
    ch = synthesize_channels(cfg)
    W = [random_hermitian_psd(rng, 20, 1) * 1e-3 for _ in range(2)]
    s0 = semantic_rate(0.4, sinr_cu(0, ch, W, [], ch.noise_comm_w), 1.1)
    assert worst_case_ssr(0, ch, W, [], 0.4, 1.1, (ch.noise_comm_w, ch.noise_sense_w)) == pytest.approx(s0)


def test_worst_case_ssr_clamped_at_zero():
    # the eavesdropper sits exactly on the CU's channel with less noise
    cfg = reference_scenario(n_antennas=4, target_angles=(-30.0,), error_radius=(0.01,),
                         pathloss_oneway=(1.0 + 0j,), pathloss_roundtrip=(1.0 + 0j,))
    ch = synthesize_channels(cfg)
    a = ch.cu_channels[0]
    W = [np.outer(a, a.conj()), np.zeros((4, 4))]
    assert worst_case_ssr(0, ch, W, [], 0.5, 1.1, (1.0, 1e-3)) == 0.0


@given(seed=st.integers(0, 2**32 - 1), rho=st.floats(0.05, 1.0))
def test_worst_case_ssr_bounds(seed, rho):
    rng = np.random.default_rng(seed)
    cfg, ch, W, R = _random_instance(rng, n=5)
    noises = (ch.noise_comm_w, ch.noise_sense_w)
    for k in range(2):
        s = worst_case_ssr(k, ch, W, R, rho, 1.1, noises)
        s_k = semantic_rate(rho, sinr_cu(k, ch, W, R, noises[0]), 1.1)
        assert 0.0 <= s <= s_k + 1e-12


def test_computational_power_examples():
    assert computational_power([1.0, 1.0], 0.01) == 0.0
    assert computational_power([math.exp(-1)], 2.0) == pytest.approx(2.0, rel=1e-15)
    assert computational_power([0.4, 0.33], 0.01) == pytest.approx(0.02025, abs=5e-6)
    with pytest.raises(ValueError):
        computational_power([0.0], 0.01)


@given(rho=st.floats(0.01, 0.98), d=st.floats(1e-4, 1e-2))
def test_computational_power_convex_decreasing(rho, d):
    f = lambda r: computational_power([r], 0.01)  # noqa: E731
    assert f(rho + d) < f(rho)
    assert f(rho) + f(rho + 2 * d) - 2 * f(rho + d) >= -1e-15


def test_transmit_power_examples(rng):
    assert transmit_power([np.zeros((3, 3))], [np.zeros((3, 3))]) == 0.0
    assert transmit_power([np.eye(7)], []) == 7.0
    mats = [random_hermitian_psd(rng, 4) for _ in range(3)]
    assert transmit_power(mats[:1], mats[1:]) == pytest.approx(sum(np.linalg.eigvalsh(m).sum() for m in mats), abs=1e-10)


def test_power_breakdown_accounting(rng):
    pb = power_breakdown([np.eye(2) * 0.01], [np.eye(2) * 0.005], [0.4, 0.33], 0.01, 0.1)
    assert pb.cs_w == pytest.approx(0.03)
    assert pb.total_w == pytest.approx(pb.comp_w + 0.03)
    assert pb.slack_w == pytest.approx(0.1 - pb.total_w)
    assert pb.within_budget()
    assert not power_breakdown([np.eye(2)], [], [1.0], 0.01, 0.1).within_budget()
