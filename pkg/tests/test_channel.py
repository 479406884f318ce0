"""Channel model tests: fading statistics, the transmission equation,
pools, and the pool binary format."""

import numpy as np
import pytest

from minn.channel import (
    ChannelPool,
    ChannelState,
    SystemGeometry,
    csi_feature_dim,
    db_to_linear,
    dbm_to_watt,
    draw_scatterers,
    flatten_csi,
    linear_to_db,
    load_pool_states,
    sample_ricean,
    sample_ricean_state,
    sample_saleh_valenzuela,
    save_pool_states,
    snr_db,
    stack_states,
    transmit,
    ula_steering,
    watt_to_dbm,
)
from minn.numerics import Rng


def small_geometry(n_ms: int = 8) -> SystemGeometry:
    return SystemGeometry(
        n_tx=2,
        n_rx=2,
        n_ms=n_ms,
        tx_position=(0.0, 0.0),
        rx_position=(5.0, 1.0),
        ms_position=(2.0, 3.0),
    )


def test_db_helpers():
    assert db_to_linear(0.0) == 1.0
    assert db_to_linear(10.0) == pytest.approx(10.0)
    assert linear_to_db(100.0) == pytest.approx(20.0)
    assert dbm_to_watt(30.0) == pytest.approx(1.0)
    assert dbm_to_watt(-90.0) == pytest.approx(1e-12)
    assert watt_to_dbm(1.0) == pytest.approx(30.0)
    with pytest.raises(ValueError):
        linear_to_db(0.0)
    with pytest.raises(ValueError):
        watt_to_dbm(-1.0)


def test_snr_db():
    assert snr_db(1.0, 1e-12) == pytest.approx(120.0)
    assert snr_db(2.0, 2.0) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        snr_db(0.0, 1.0)


def test_steering_vector():
    a = ula_steering(4, 0.0)
    assert np.allclose(a, np.ones(4))
    b = ula_steering(3, 1.0)
    assert np.allclose(b, np.exp(-1j * np.pi * np.arange(3)))
    assert np.allclose(np.abs(b), 1.0)


def test_ricean_high_k_is_pure_steering():
    # K = 10^30 leaves a vanishing scattered part.
    rng = Rng(0)
    h = sample_ricean(300.0, (3, 4), rng, cos_row_side=0.3, cos_col_side=-0.2)
    los = np.outer(ula_steering(3, 0.3), np.conj(ula_steering(4, -0.2)))
    assert np.max(np.abs(h - los)) < 1e-6


def test_ricean_k0_scattered_variance():
    # At K = 0 dB half the power is scattered: var(H - LoS part) = 1/2.
    rng = Rng(1)
    n = 100_000
    los = np.outer(ula_steering(1, 0.3), np.conj(ula_steering(1, -0.2)))[0, 0]
    draws = np.array([sample_ricean(0.0, (1, 1), rng)[0, 0] for _ in range(n)])
    centered = draws - np.sqrt(0.5) * los
    var = np.mean(np.abs(centered) ** 2)
    assert 0.49 < var < 0.51


@pytest.mark.parametrize("k_db", [0.0, 3.0, 13.0])
def test_ricean_unit_average_entry_power(k_db):
    rng = Rng(2)
    acc = 0.0
    n = 20_000
    for _ in range(n):
        h = sample_ricean(k_db, (2, 2), rng)
        acc += np.mean(np.abs(h) ** 2)
    assert acc / n == pytest.approx(1.0, rel=0.02)


def test_ricean_deterministic_under_seed():
    a = sample_ricean(7.0, (2, 3), Rng(5))
    b = sample_ricean(7.0, (2, 3), Rng(5))
    assert np.array_equal(a, b)


def test_sv_rank_bounded_by_scatterer_count():
    geom = small_geometry(n_ms=16)
    for n_sc in (1, 2, 5):
        state = sample_saleh_valenzuela(geom, n_sc, Rng(3))
        rank = np.linalg.matrix_rank(state.tx_to_ms, tol=1e-10)
        assert rank <= n_sc
    # One scatterer means every link is an outer product.
    state = sample_saleh_valenzuela(geom, 1, Rng(4))
    for mat in (state.direct, state.tx_to_ms, state.ms_to_rx):
        assert np.linalg.matrix_rank(mat, tol=1e-10) == 1


def test_sv_deterministic_and_frozen_scatterers():
    geom = small_geometry()
    a = sample_saleh_valenzuela(geom, 4, Rng(6))
    b = sample_saleh_valenzuela(geom, 4, Rng(6))
    assert np.array_equal(a.direct, b.direct)
    assert np.array_equal(a.tx_to_ms, b.tx_to_ms)
    # Frozen scatterers with fresh gains changes values but keeps shapes.
    sc = draw_scatterers(geom, 4, Rng(7))
    c = sample_saleh_valenzuela(geom, 4, Rng(8), scatterers=sc)
    d = sample_saleh_valenzuela(geom, 4, Rng(9), scatterers=sc)
    assert c.direct.shape == d.direct.shape
    assert not np.allclose(c.direct, d.direct)


def test_sv_rx_override_moves_only_rx_links():
    geom = small_geometry()
    sc = draw_scatterers(geom, 3, Rng(10))
    a = sample_saleh_valenzuela(geom, 3, Rng(11), scatterers=sc)
    b = sample_saleh_valenzuela(geom, 3, Rng(11), scatterers=sc, rx_position=(6.0, -2.0))
    # Same gains (same rng), same scatterers: the TX-MS link is untouched.
    assert np.allclose(a.tx_to_ms, b.tx_to_ms)
    assert not np.allclose(a.direct, b.direct)
    assert not np.allclose(a.ms_to_rx, b.ms_to_rx)


def test_pathloss_scales_average_power():
    # A 1/d amplitude factor means E|H_ij|^2 = 1/d^2 for a Ricean link.
    geom = SystemGeometry(
        n_tx=1,
        n_rx=1,
        n_ms=1,
        tx_position=(0.0, 0.0),
        rx_position=(4.0, 0.0),
        ms_position=(0.0, 2.0),
    )
    rng = Rng(12)
    acc_direct = 0.0
    acc_tx_ms = 0.0
    n = 20_000
    for _ in range(n):
        st = sample_ricean_state(geom, (0.0, 0.0, 0.0), rng)
        acc_direct += np.abs(st.direct[0, 0]) ** 2
        acc_tx_ms += np.abs(st.tx_to_ms[0, 0]) ** 2
    assert acc_direct / n == pytest.approx(1.0 / 16.0, rel=0.03)
    assert acc_tx_ms / n == pytest.approx(1.0 / 4.0, rel=0.03)


def test_ricean_state_dims():
    geom = small_geometry(n_ms=6)
    st = sample_ricean_state(geom, (13.0, 7.0, 3.0), Rng(13))
    assert st.dims == (2, 2, 6)
    assert st.direct.shape == (2, 2)
    assert st.tx_to_ms.shape == (2, 6)
    assert st.ms_to_rx.shape == (2, 6)


def test_channel_state_validation():
    with pytest.raises(ValueError):
        ChannelState(
            direct=np.zeros((2, 2), dtype=complex),
            tx_to_ms=np.zeros((3, 4), dtype=complex),
            ms_to_rx=np.zeros((2, 4), dtype=complex),
        )
    with pytest.raises(ValueError):
        ChannelState(
            direct=np.zeros((2, 2), dtype=complex),
            tx_to_ms=np.zeros((2, 4), dtype=complex),
            ms_to_rx=np.zeros((2, 5), dtype=complex),
        )


def test_transmit_direct_only():
    h_d = np.array([[1.0 + 0j, 2.0], [0.0, 1j]])
    st = ChannelState(direct=h_d, tx_to_ms=np.zeros((2, 3), dtype=complex), ms_to_rx=np.zeros((2, 3), dtype=complex))
    s = np.array([1.0, 1.0], dtype=complex)
    y = transmit(st, None, s, 0.0, None)
    assert np.allclose(y, h_d @ s, atol=1e-12)


def test_transmit_scalar_composition():
    # Single-antenna, single-element: y = (h_d + h_2 e^{-jw} conj(h_1)) s.
    h_d = np.array([[0.5 + 0.1j]])
    h_1 = np.array([[0.3 - 0.2j]])
    h_2 = np.array([[1.1 + 0.4j]])
    st = ChannelState(direct=h_d, tx_to_ms=h_1, ms_to_rx=h_2)
    w = 0.7
    phi = np.array([[np.exp(-1j * w)]])
    s = np.array([2.0 - 1.0j])
    y = transmit(st, phi, s, 0.0, None)
    expected = (h_d[0, 0] + h_2[0, 0] * np.exp(-1j * w) * np.conj(h_1[0, 0])) * s[0]
    assert abs(y[0] - expected) < 1e-12


def test_transmit_linearity():
    rng = Rng(14)
    st = sample_saleh_valenzuela(small_geometry(), 3, rng)
    phi = np.diag(np.exp(-1j * rng.uniform(0, 2 * np.pi, 8)))
    s1 = rng.normal(2) + 1j * rng.normal(2)
    s2 = rng.normal(2) + 1j * rng.normal(2)
    y = transmit(st, phi, s1 + 3.0 * s2, 0.0, None)
    y1 = transmit(st, phi, s1, 0.0, None)
    y2 = transmit(st, phi, s2, 0.0, None)
    assert np.max(np.abs(y - (y1 + 3.0 * y2))) < 1e-12


def test_transmit_noise_statistics():
    st = ChannelState(
        direct=np.zeros((1, 1), dtype=complex),
        tx_to_ms=np.zeros((1, 1), dtype=complex),
        ms_to_rx=np.zeros((1, 1), dtype=complex),
    )
    rng = Rng(15)
    var = 0.25
    draws = np.array([transmit(st, None, np.zeros(1, dtype=complex), var, rng)[0] for _ in range(50_000)])
    assert np.mean(np.abs(draws) ** 2) == pytest.approx(var, rel=0.03)


def test_transmit_validation():
    st = sample_saleh_valenzuela(small_geometry(), 2, Rng(16))
    with pytest.raises(ValueError):
        transmit(st, None, np.zeros(3, dtype=complex), 0.0, None)
    with pytest.raises(ValueError):
        transmit(st, np.eye(5, dtype=complex), np.zeros(2, dtype=complex), 0.0, None)
    with pytest.raises(ValueError):
        transmit(st, None, np.zeros(2, dtype=complex), 1.0, None)


def test_static_pool_repeats_one_state():
    geom = small_geometry()
    pool = ChannelPool("static", sampler=lambda r: sample_saleh_valenzuela(geom, 3, r), rng=Rng(17))
    a = pool.draw()
    b = pool.draw()
    assert a is b
    batch = pool.draw_batch(4)
    assert all(s is a for s in batch)


def test_dynamic_pool_draws_fresh():
    geom = small_geometry()
    pool = ChannelPool("dynamic", sampler=lambda r: sample_saleh_valenzuela(geom, 3, r), rng=Rng(18))
    a = pool.draw()
    b = pool.draw()
    assert not np.allclose(a.direct, b.direct)


def test_replay_pool_cycles_in_order():
    geom = small_geometry()
    rng = Rng(19)
    states = [sample_saleh_valenzuela(geom, 2, rng) for _ in range(3)]
    pool = ChannelPool("replay", states=states)
    seen = [pool.draw() for _ in range(5)]
    assert seen[0] is states[0]
    assert seen[2] is states[2]
    assert seen[3] is states[0]


def test_pool_mode_validation():
    with pytest.raises(ValueError):
        ChannelPool("unknown")
    with pytest.raises(ValueError):
        ChannelPool("static")
    with pytest.raises(ValueError):
        ChannelPool("dynamic", sampler=lambda r: None)
    with pytest.raises(ValueError):
        ChannelPool("replay", states=[])


def test_pool_export_import_round_trip(tmp_path):
    geom = small_geometry(n_ms=5)
    rng = Rng(20)
    states = [sample_saleh_valenzuela(geom, 4, rng) for _ in range(3)]
    path = tmp_path / "pool.bin"
    save_pool_states(path, states)
    loaded = load_pool_states(path)
    assert len(loaded) == 3
    for orig, back in zip(states, loaded):
        assert np.array_equal(orig.direct, back.direct)
        assert np.array_equal(orig.tx_to_ms, back.tx_to_ms)
        assert np.array_equal(orig.ms_to_rx, back.ms_to_rx)


def test_pool_file_rejects_foreign_content(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"something else entirely\n")
    with pytest.raises(ValueError):
        load_pool_states(path)
    trunc = tmp_path / "trunc.bin"
    geom = small_geometry(n_ms=3)
    save_pool_states(trunc, [sample_saleh_valenzuela(geom, 2, Rng(21))])
    data = trunc.read_bytes()
    trunc.write_bytes(data[:-8])
    with pytest.raises(ValueError):
        load_pool_states(trunc)


def test_stack_and_flatten_csi():
    geom = small_geometry(n_ms=4)
    rng = Rng(22)
    states = [sample_saleh_valenzuela(geom, 3, rng) for _ in range(5)]
    direct, tx_to_ms, ms_to_rx = stack_states(states)
    assert direct.shape == (5, 2, 2)
    assert tx_to_ms.shape == (5, 2, 4)
    assert ms_to_rx.shape == (5, 2, 4)
    assert np.array_equal(direct[2], states[2].direct)
    flat = flatten_csi(direct, tx_to_ms, ms_to_rx)
    assert flat.shape == (5, csi_feature_dim(2, 2, 4))
    assert flat.dtype == np.float64
    # First block is the real part of the direct link, row-major.
    assert np.array_equal(flat[1, : 2 * 2], states[1].direct.real.ravel())
