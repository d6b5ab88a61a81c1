import time

import numpy as np
import pytest

from thzisac.channel import sample_comm_channel
from thzisac.geometry import UpaGeometry, dft_codebook
from thzisac.precoding import (PrecodingTargets, SwitchMatrix,
                               default_switch_pattern, finalize_digital,
                               optimal_fully_digital, optimal_sensing_precoder,
                               sca_hybrid_precoding, spectral_efficiency,
                               transmit_beampattern, vec_analog_update,
                               vec_digital_update, vec_hybrid_precoding,
                               weighted_objective)
from thzisac.waveform import FrameConfig

from oracles import random_semi_unitary


@pytest.fixture
def small_setup(rng):
    geom = UpaGeometry(8, 4)  # nt = 32
    frame = FrameConfig(8, 4, 8, 1.92e6, 0.3e12)
    chan = sample_comm_channel(geom, geom, frame, rng, num_nlos=4)
    return geom, frame, chan


def _random_targets(rng, nt, ns, m_count, eta, codebook=None, q=1):
    comm = np.stack([random_semi_unitary(nt, ns, rng) for _ in range(m_count)])
    if codebook is None:
        sense = np.tile(random_semi_unitary(nt, 1, rng), (1, ns))
    else:
        sense = optimal_sensing_precoder(codebook, q, ns)
    return PrecodingTargets(comm, sense, eta)


# ---------------------------------------------------------------------------
# switch patterns
# ---------------------------------------------------------------------------

def test_default_switch_patterns():
    aosa = default_switch_pattern(4, 4, 8)
    assert np.array_equal(aosa.closed, np.eye(4, dtype=bool))
    fc = default_switch_pattern(4, 16, 8)
    assert fc.closed.all()
    mid = default_switch_pattern(4, 8, 8)
    assert mid.n_closed == 8
    assert np.all(np.diag(mid.closed))
    # row-major fill of the extras
    assert mid.closed[0, 1] and mid.closed[0, 2] and mid.closed[0, 3] and mid.closed[1, 0]
    with pytest.raises(ValueError):
        default_switch_pattern(4, 3, 8)


def test_switch_expand():
    sw = SwitchMatrix(closed=np.eye(2, dtype=bool), k_t=3)
    mask = sw.expand()
    assert mask.shape == (6, 2)
    assert mask[:3, 0].all() and not mask[:3, 1].any()


# ---------------------------------------------------------------------------
# fully digital reference
# ---------------------------------------------------------------------------

def test_svd_identity_channel():
    f, c, s = optimal_fully_digital([np.eye(4)], 2)
    np.testing.assert_allclose(f[0].conj().T @ f[0], np.eye(2), atol=1e-12)
    np.testing.assert_allclose(c[0].conj().T @ c[0], np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.abs(f[0]).sum(axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(s[0], 1.0)


def test_svd_rank_one_channel(rng):
    from thzisac.geometry import steering_upa
    tx = UpaGeometry(8, 1)
    a_t = steering_upa(0.3, np.pi / 2, tx)
    a_r = steering_upa(-0.2, np.pi / 2, UpaGeometry(4, 1))
    h = 3.0 * np.outer(a_r, a_t.conj())
    f, c, s = optimal_fully_digital([h], 1)
    # leading right-singular vector collinear with a_t (up to phase)
    corr = np.abs(np.vdot(f[0][:, 0], a_t))
    assert corr > 1 - 1e-10
    assert np.isclose(s[0][0], 3.0)
    assert np.isclose(np.linalg.norm(h @ f[0][:, 0]), s[0][0])


def test_svd_singular_value_consistency(rng):
    h = rng.standard_normal((6, 9)) + 1j * rng.standard_normal((6, 9))
    f, c, s = optimal_fully_digital([h], 3)
    for k in range(3):
        assert np.isclose(np.linalg.norm(h @ f[0][:, k]), s[0][k])


def test_svd_factored_matches_dense(small_setup):
    geom, frame, chan = small_setup
    f_f, c_f, s_f = optimal_fully_digital(chan, 4)
    mats = [chan.matrix(m) for m in range(8)]
    f_d, c_d, s_d = optimal_fully_digital(mats, 4)
    np.testing.assert_allclose(s_f, s_d, atol=1e-8)
    for m in range(8):
        # compare subspaces (columns defined up to phase): projector equality
        p1 = f_f[m] @ f_f[m].conj().T
        p2 = f_d[m] @ f_d[m].conj().T
        np.testing.assert_allclose(p1, p2, atol=1e-8)


# ---------------------------------------------------------------------------
# sensing precoder
# ---------------------------------------------------------------------------

def test_optimal_sensing_precoder():
    geom = UpaGeometry(8, 4)
    cb = dft_codebook(geom)
    f_s = optimal_sensing_precoder(cb, 3, 4)
    for k in range(1, 4):
        np.testing.assert_array_equal(f_s[:, 0], f_s[:, k])
    # rank one with commensurate target power (unit-norm columns)
    assert np.isclose(np.linalg.norm(f_s) ** 2, 4.0)
    # matched filter: the scan column wins over every other codebook column
    gains = np.abs(cb.columns.conj().T @ f_s[:, 0])
    assert np.argmax(gains) == 2


# ---------------------------------------------------------------------------
# VEC updates
# ---------------------------------------------------------------------------

def test_digital_update_unitary_case(rng):
    nt, n_rf, ns = 16, 4, 4
    f_rf = random_semi_unitary(nt, n_rf, rng)
    u0 = random_semi_unitary(ns, ns, rng)
    comm = np.repeat((f_rf @ u0.conj().T)[None], 3, axis=0)
    targets = PrecodingTargets(comm, np.zeros((nt, ns)), 1.0)
    f_bb = vec_digital_update(targets, f_rf)
    ghb = u0  # G^H B = eta F_c^H F_RF = u0
    for m in range(3):
        np.testing.assert_allclose(f_bb[m], ghb.conj().T, atol=1e-10)
        gain = np.real(np.trace(f_bb[m].conj().T @ ghb.conj().T @ ghb @ ghb.conj().T))
        # Re tr(F^H B^H G) with B^H G = (G^H B)^H = u0^H
        gain = np.real(np.trace(f_bb[m].conj().T @ u0.conj().T))
        assert np.isclose(gain, ns, atol=1e-9)


def test_digital_update_optimality(rng):
    # Procrustes step beats random semi-unitary candidates
    nt, n_rf, ns, m_count = 12, 4, 4, 2
    f_rf = np.exp(2j * np.pi * rng.random((nt, n_rf)))
    targets = _random_targets(rng, nt, ns, m_count, 0.7)
    f_bb = vec_digital_update(targets, f_rf)
    eta = targets.eta
    for m in range(m_count):
        ghb = (eta * targets.comm_opt[m].conj().T @ f_rf
               + (1 - eta) * targets.sense_opt.conj().T @ f_rf)
        best = np.real(np.trace(f_bb[m].conj().T @ ghb.conj().T))
        for _ in range(200):
            cand = random_semi_unitary(n_rf, ns, rng)
            assert np.real(np.trace(cand.conj().T @ ghb.conj().T)) <= best + 1e-9


def test_digital_update_weight_swap(rng):
    # swapping eta <-> 1-eta together with the two targets changes nothing
    nt, n_rf, ns = 12, 4, 4
    f_rf = np.exp(2j * np.pi * rng.random((nt, n_rf)))
    comm_const = random_semi_unitary(nt, ns, rng)
    sense = np.tile(random_semi_unitary(nt, 1, rng), (1, ns))
    t1 = PrecodingTargets(np.repeat(comm_const[None], 2, 0), sense, 0.3)
    t2 = PrecodingTargets(np.repeat(sense[None], 2, 0), comm_const, 0.7)
    np.testing.assert_allclose(vec_digital_update(t1, f_rf),
                               vec_digital_update(t2, f_rf), atol=1e-10)


def test_analog_update_scalar_case():
    comm = np.array([[[0.3 - 0.4j]]])  # M=1, nt=1, ns=1
    targets = PrecodingTargets(comm, np.zeros((1, 1)), 1.0)
    f_bb = np.array([[[1.0 + 0j]]])
    sw = SwitchMatrix(closed=np.ones((1, 1), dtype=bool), k_t=1)
    f_rf = vec_analog_update(targets, f_bb, sw)
    assert np.isclose(f_rf[0, 0], np.exp(1j * np.angle(0.3 - 0.4j)))


def test_analog_update_monotone(rng):
    # with square-unitary digital precoders the phase update cannot increase cost
    nt, n_rf, ns = 16, 4, 4
    sw = default_switch_pattern(n_rf, 7, nt // n_rf)
    for trial in range(10):
        targets = _random_targets(rng, nt, ns, 3, rng.uniform(0, 1))
        mask = sw.expand()
        f_rf = np.where(mask, np.exp(2j * np.pi * rng.random(mask.shape)), 0)
        f_bb = vec_digital_update(targets, f_rf)
        before = weighted_objective(targets, f_rf, f_bb)
        f_rf2 = vec_analog_update(targets, f_bb, sw, prev=f_rf)
        after = weighted_objective(targets, f_rf2, f_bb)
        assert after <= before + 1e-10


def test_analog_update_zero_structure(rng):
    targets = _random_targets(rng, 16, 4, 2, 0.5)
    sw = default_switch_pattern(4, 5, 4)
    f_bb = np.stack([random_semi_unitary(4, 4, rng) for _ in range(2)])
    f_rf = vec_analog_update(targets, f_bb, sw)
    mask = sw.expand()
    assert np.all(f_rf[~mask] == 0)
    np.testing.assert_allclose(np.abs(f_rf[mask]), 1.0, atol=1e-12)


def test_analog_update_tie_break_keeps_previous():
    nt, n_rf, ns = 4, 2, 2
    comm = np.zeros((1, nt, ns), dtype=complex)
    targets = PrecodingTargets(comm, np.zeros((nt, ns)), 1.0)
    f_bb = np.zeros((1, n_rf, ns), dtype=complex)
    sw = SwitchMatrix(closed=np.ones((2, 2), dtype=bool), k_t=2)
    prev = np.exp(1j * 0.7) * sw.expand().astype(complex)
    f_rf = vec_analog_update(targets, f_bb, sw, prev=prev)
    np.testing.assert_allclose(f_rf, prev, atol=1e-14)


# ---------------------------------------------------------------------------
# VEC full loop
# ---------------------------------------------------------------------------

def test_vec_loop_monotone_feasible_power(rng):
    geom = UpaGeometry(8, 4)
    cb = dft_codebook(geom)
    targets = _random_targets(rng, 32, 4, 6, 0.5, codebook=cb, q=2)
    sw = default_switch_pattern(4, 8, 8)
    pre = vec_hybrid_precoding(targets, sw, rng=rng)
    trace = np.array(pre.objective_trace)
    assert np.all(np.diff(trace) <= 1e-10)
    mask = sw.expand()
    assert np.all(pre.analog[~mask] == 0)
    np.testing.assert_allclose(np.abs(pre.analog[mask]), 1.0, atol=1e-12)
    for m in range(6):
        assert abs(np.linalg.norm(pre.tx_matrix(m)) ** 2 - 4) < 1e-9


def test_vec_eta_endpoint_matches_comm_only(rng):
    geom = UpaGeometry(8, 2)
    cb = dft_codebook(geom)
    comm = np.stack([random_semi_unitary(16, 2, rng) for _ in range(4)])
    sense = optimal_sensing_precoder(cb, 1, 2)
    sw = default_switch_pattern(2, 4, 8)
    a = vec_hybrid_precoding(PrecodingTargets(comm, sense, 1.0), sw,
                             rng=np.random.default_rng(3))
    b = vec_hybrid_precoding(PrecodingTargets(comm, np.zeros_like(sense), 1.0), sw,
                             rng=np.random.default_rng(3))
    assert np.isclose(a.objective_trace[-1], b.objective_trace[-1], atol=1e-12)
    np.testing.assert_allclose(a.analog, b.analog, atol=1e-12)


def test_finalize_digital_power(rng):
    targets = _random_targets(rng, 16, 4, 3, 0.4)
    sw = default_switch_pattern(4, 16, 4)
    f_rf = np.exp(2j * np.pi * rng.random((16, 4)))
    f_bb = finalize_digital(targets, f_rf)
    for m in range(3):
        assert np.isclose(np.linalg.norm(f_rf @ f_bb[m]) ** 2, 4.0, atol=1e-9)


# ---------------------------------------------------------------------------
# SCA
# ---------------------------------------------------------------------------

def test_sca_eta_endpoints(rng):
    geom = UpaGeometry(8, 4)
    cb = dft_codebook(geom)
    comm = np.stack([random_semi_unitary(32, 4, rng) for _ in range(4)])
    sw = default_switch_pattern(4, 8, 8)
    mask = sw.expand()
    comm_analog = np.where(mask, np.exp(2j * np.pi * rng.random(mask.shape)), 0)
    s1 = sca_hybrid_precoding(comm, cb, 3, 1.0, comm_analog, sw)
    np.testing.assert_array_equal(s1.analog, comm_analog)
    s0 = sca_hybrid_precoding(comm, cb, 3, 0.0, comm_analog, sw)
    scan = cb.columns[:, 2]
    phases = scan / np.abs(scan)
    for i in range(4):
        for j in range(4):
            if sw.closed[i, j]:
                np.testing.assert_allclose(s0.analog[8 * i:8 * (i + 1), j],
                                           phases[8 * i:8 * (i + 1)], atol=1e-12)
    for pre in (s0, s1):
        for m in range(4):
            assert np.isclose(np.linalg.norm(pre.tx_matrix(m)) ** 2, 4.0, atol=1e-9)


def test_sca_tie_break_lowest_indices(rng):
    # identical block errors everywhere: the first ceil(Nc(1-eta)) blocks in
    # (i, j) order get replaced
    geom = UpaGeometry(2, 2)
    cb = dft_codebook(geom, phi=np.pi / 2)
    sw = SwitchMatrix(closed=np.ones((2, 2), dtype=bool), k_t=2)
    comm_analog = np.ones((4, 2), dtype=complex)
    comm = np.repeat(np.eye(4, 2, dtype=complex)[None], 2, axis=0)
    out = sca_hybrid_precoding(comm, cb, 1, 0.5, comm_analog, sw)  # K_s = 2
    changed = [(i, j) for i in range(2) for j in range(2)
               if not np.allclose(out.analog[2 * i:2 * (i + 1), j],
                                  comm_analog[2 * i:2 * (i + 1), j])]
    assert changed == [(0, 0), (0, 1)]


def test_sca_faster_than_vec(rng):
    geom = UpaGeometry(16, 8)
    cb = dft_codebook(geom)
    comm = np.stack([random_semi_unitary(128, 4, rng) for _ in range(16)])
    sense = optimal_sensing_precoder(cb, 2, 4)
    sw = default_switch_pattern(4, 8, 32)
    t0 = time.perf_counter()
    pre = vec_hybrid_precoding(PrecodingTargets(comm, sense, 0.5), sw, rng=rng)
    t_vec = time.perf_counter() - t0
    t0 = time.perf_counter()
    sca_hybrid_precoding(comm, cb, 2, 0.5, pre.analog, sw)
    t_sca = time.perf_counter() - t0
    assert t_sca < t_vec  # no per-slot alternating iterations


# ---------------------------------------------------------------------------
# spectral efficiency and beampattern
# ---------------------------------------------------------------------------

def test_se_zero_power(small_setup):
    geom, frame, chan = small_setup
    f, c, _ = optimal_fully_digital(chan, 2)
    assert spectral_efficiency(chan, f, c, 0.0, 1.0) == 0.0


def test_se_scalar_shannon():
    from thzisac.channel import CommChannel, CommPath
    h = 0.8 + 0.1j
    chan = CommChannel(paths=[CommPath(np.array([h]), (0, np.pi / 2), (0, np.pi / 2),
                                       is_los=True)],
                       tx_geom=UpaGeometry(1, 1), rx_geom=UpaGeometry(1, 1))
    tx = np.ones((1, 1, 1), dtype=complex)
    rx = np.ones((1, 1, 1), dtype=complex)
    rho, sigma2 = 2.0, 0.5
    se = spectral_efficiency(chan, tx, rx, rho, sigma2)
    assert np.isclose(se, np.log2(1 + rho * abs(h) ** 2 / sigma2))


def test_se_digital_matches_svd_waterless_sum(small_setup):
    geom, frame, chan = small_setup
    ns, rho, sigma2 = 4, 0.3, 1.0
    f, c, s = optimal_fully_digital(chan, ns)
    se = spectral_efficiency(chan, f, c, rho, sigma2)
    expected = np.mean([np.sum(np.log2(1 + rho * s[m] ** 2 / (ns * sigma2)))
                        for m in range(8)])
    assert np.isclose(se, expected, atol=1e-9)


def test_beampattern_codebook_peak(rng):
    geom = UpaGeometry(16, 4)
    cb = dft_codebook(geom)
    ns, q = 4, 5
    sense = optimal_sensing_precoder(cb, q, ns)
    pat = transmit_beampattern(np.eye(64), np.repeat(sense[None], 4, 0),
                               cb.direction_angles, geom)
    assert np.argmax(pat) == q - 1
    assert np.isclose(pat[q - 1], 10 * np.log10(geom.n_elements), atol=1e-9)


def test_beampattern_power_conservation(rng):
    # sin-uniform average gain stays at the 0 dBi level for power-normalized sets
    geom = UpaGeometry(16, 1)
    cb = dft_codebook(geom)
    comm = np.stack([random_semi_unitary(16, 2, rng) for _ in range(4)])
    sw = default_switch_pattern(2, 4, 8)
    grid = np.arcsin(np.linspace(-1 + 1e-6, 1 - 1e-6, 4001))
    totals = []
    for eta in (0.0, 0.5, 1.0):
        pre = vec_hybrid_precoding(
            PrecodingTargets(comm, optimal_sensing_precoder(cb, 4, 2), eta), sw, rng=rng)
        lin = transmit_beampattern(pre.analog, pre.digital, grid, geom, db=False)
        totals.append(np.mean(lin))
    assert max(totals) / min(totals) < 1.01
