import itertools

import numpy as np
import pytest

from amp_decoder import (
    DecoderAbort,
    UserCodebook,
    bp_denoise,
    combine_effective_observations,
    combining_weights,
    decode_cell_free,
    decode_single_cell,
    effective_observation,
    estimate_tau2,
    onsager_divergence,
    residual,
    section_posterior,
    section_posteriors,
    user_contribution,
)
from channel_model import Topology, cellfree_transmit, ebn0_to_sigma2, gmac_transmit
from nonbinary_ldpc import ldpc_encode
from sparse_regression import GeometryError, SectionalVector, sample_sensing_matrix, sr_encode, to_sparse


def random_codeword(code, rng):
    return ldpc_encode(code, rng.integers(0, code.q, size=code.K_sym))


def make_users(code, n, seeds, rng):
    codebooks = [UserCodebook(k, sample_sensing_matrix(seed, n, code.L, code.q), code) for k, seed in enumerate(seeds)]
    words = [random_codeword(code, rng) for _ in seeds]
    signals = [sr_encode(cb.matrix, to_sparse(v, code.q)) for cb, v in zip(codebooks, words)]
    return codebooks, words, signals


def simplex_grid(B, m):
    """All points of the simplex with coordinates in multiples of 1/m."""
    axes = np.indices((m + 1,) * (B - 1)).reshape(B - 1, -1).T
    axes = axes[axes.sum(axis=1) <= m]
    last = m - axes.sum(axis=1, keepdims=True)
    return np.hstack([axes, last]) / m


def test_estimate_tau2(rng):
    assert estimate_tau2(np.zeros(10)) == 0.0
    z = rng.standard_normal(100_000) * np.sqrt(0.4)
    assert estimate_tau2(z, z.size) == pytest.approx(0.4, rel=0.03)
    assert estimate_tau2(3 * z) == pytest.approx(9 * estimate_tau2(z))


def test_effective_observation_with_zero_residual(rng):
    A = sample_sensing_matrix(2, 40, 8, 4)
    s = to_sparse(rng.integers(0, 4, size=8), 4)
    assert np.array_equal(effective_observation(A, np.zeros(40), s), s.flat)


def test_effective_observation_recovers_column():
    A = sample_sensing_matrix(2, 2000, 8, 4)
    r = effective_observation(A, A.dense[:, 5], SectionalVector.zeros(8, 4))
    assert r[5] == pytest.approx(1.0, abs=0.1)


def test_section_posterior_examples():
    assert np.allclose(section_posterior(np.zeros(4), 1.0), 0.25)
    alpha = section_posterior(np.array([1.0, 0.0, 0.0, 0.0]), 0.25)
    assert alpha[0] == pytest.approx(1.0 / (1.0 + 3.0 * np.exp(-4.0)))
    assert alpha[0] == pytest.approx(0.9479, abs=1e-4)
    r = np.array([0.3, -1.2, 2.0, 0.1])
    assert np.allclose(section_posterior(r, 0.7), section_posterior(r + 5.0, 0.7))


@pytest.mark.parametrize("tau2", [0.05, 0.5, 3.0])
def test_section_posterior_matches_gaussian_likelihood(rng, tau2):
    q = 16
    r = rng.uniform(-1.0, 1.0, size=q)
    basis = np.eye(q)
    weights = np.exp(-((r[None, :] - basis) ** 2).sum(axis=1) / (2.0 * tau2))
    np.testing.assert_allclose(section_posterior(r, tau2), weights / weights.sum(), rtol=0, atol=1e-12)


def test_section_posterior_zero_variance_is_one_hot():
    assert section_posterior(np.array([0.1, 0.9, 0.3]), 0.0).tolist() == [0.0, 1.0, 0.0]
    rows = section_posteriors(np.array([[2.0, 1.0], [0.0, 3.0]]), 0.0)
    assert rows.tolist() == [[1.0, 0.0], [0.0, 1.0]]


def test_section_posterior_large_inputs_stay_finite():
    alpha = section_posterior(np.array([1e4, 0.0, -1e4]), 1e-3)
    assert np.all(np.isfinite(alpha))
    assert alpha.sum() == pytest.approx(1.0)


def test_bp_denoise_without_iterations_is_symbolwise(small_code, rng):
    r = rng.standard_normal(small_code.L * small_code.q)
    s = bp_denoise(small_code, r, 0.5, 0)
    assert np.allclose(s.data, section_posteriors(r.reshape(small_code.L, small_code.q), 0.5))


def test_bp_denoise_concentrates_on_codeword(small_code, rng):
    v = random_codeword(small_code, rng)
    s = bp_denoise(small_code, to_sparse(v, small_code.q).flat, 0.05, 2)
    assert s.is_pmf()
    assert np.all(s.data[np.arange(small_code.L), v] > 0.99)


def test_onsager_divergence_closed_forms():
    one_hot = to_sparse(np.array([1, 0, 3]), 4)
    assert onsager_divergence(one_hot, 0.5) == 0.0
    uniform = SectionalVector.uniform(3, 4)
    assert onsager_divergence(uniform, 0.5) == pytest.approx((3 - 3 / 4) / 0.5)


def test_divergence_matches_finite_difference(small_code, rng):
    n = 256
    A = sample_sensing_matrix(17, n, small_code.L, small_code.q)
    tau2 = 0.2
    h = 1e-5
    closed, estimated = [], []
    for _ in range(20):
        s = to_sparse(random_codeword(small_code, rng), small_code.q)
        z = rng.standard_normal(n) * np.sqrt(tau2)
        r = effective_observation(A, z, s)
        closed.append(onsager_divergence(bp_denoise(small_code, r, tau2, 0), tau2))
        trace = 0.0
        for i in range(r.size):
            step = np.zeros_like(r)
            step[i] = h
            up = bp_denoise(small_code, r + step, tau2, 0).flat[i]
            down = bp_denoise(small_code, r - step, tau2, 0).flat[i]
            trace += (up - down) / (2 * h)
        estimated.append(trace)
    assert np.mean(closed) == pytest.approx(np.mean(estimated), rel=1e-3)
    assert np.allclose(closed, estimated, rtol=1e-3)


def test_user_contribution_and_residual(rng):
    A = sample_sensing_matrix(4, 60, 8, 4)
    s = to_sparse(rng.integers(0, 4, size=8), 4)
    x = sr_encode(A, s)
    assert np.array_equal(user_contribution(A, s, rng.standard_normal(60), 0.0, 60), x)

    z_prev = rng.standard_normal(60)
    with_onsager = user_contribution(A, s, z_prev, 3.0, 60)
    assert np.allclose(with_onsager, x - z_prev * 3.0 / 60)

    y = rng.standard_normal(60)
    assert np.allclose(residual(y, [x, with_onsager]), y - x - with_onsager)
    with pytest.raises(GeometryError):
        residual(y, [np.zeros(59)])


def test_combining_weights_match_grid_search(rng):
    for _ in range(50):
        B = int(rng.integers(2, 5))
        tau2s = rng.uniform(0.5, 2.0, size=B)
        weights = combining_weights(tau2s)
        assert weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.sum(weights**2 * tau2s) == pytest.approx(1.0 / np.sum(1.0 / tau2s), abs=1e-10)

        m = {2: 9999, 3: 139, 4: 37}[B]
        grid = simplex_grid(B, m)
        best = grid[np.argmin((grid**2 * tau2s).sum(axis=1))]
        assert np.max(np.abs(best - weights)) <= 2 * B / m


def test_combine_effective_observations(rng):
    r1, r2 = rng.standard_normal(8), rng.standard_normal(8)
    combined, variance = combine_effective_observations([r1, r2], [1.0, 3.0])
    assert np.allclose(combined, 0.75 * r1 + 0.25 * r2)
    assert variance == pytest.approx(0.75)

    single, variance = combine_effective_observations([r1], [0.4])
    assert single is r1
    assert variance == 0.4

    exact, variance = combine_effective_observations([r1, r2], [0.5, 0.0])
    assert exact is r2
    assert variance == 0.0

    with pytest.raises(ValueError):
        combine_effective_observations([], [])


def test_codebook_geometry_is_checked(small_code):
    with pytest.raises(GeometryError):
        UserCodebook(0, sample_sensing_matrix(0, 20, small_code.L + 1, small_code.q), small_code)


@pytest.mark.parametrize("users", [1, 2])
def test_noiseless_single_cell_decodes_exactly(desk_code, rng, users):
    n = 280 * users
    codebooks, words, signals = make_users(desk_code, n, range(100, 100 + users), rng)
    y = gmac_transmit(signals, 0.0, rng)
    result = decode_single_cell(y, codebooks, 0.0)
    assert all(result.syndrome_ok)
    for decoded, word in zip(result.symbols, words):
        assert np.array_equal(decoded, word)
    assert len(result.tau2_trajectory) == result.iterations


def test_early_stop_can_be_disabled(desk_code, rng):
    codebooks, _, signals = make_users(desk_code, 280, [7], rng)
    y = gmac_transmit(signals, 0.0, rng)
    result = decode_single_cell(y, codebooks, 0.0, amp_iterations=10, early_stop=False, keep_graph=True)
    assert result.iterations == 10
    assert len(result.records) == 10


def test_diagnostics_sink_receives_every_iteration(desk_code, rng):
    codebooks, _, signals = make_users(desk_code, 280, [7], rng)
    sigma2 = ebn0_to_sigma2(3.0, desk_code.L, desk_code.K_sym * desk_code.field.p)
    y = gmac_transmit(signals, sigma2, rng)
    seen = []
    result = decode_single_cell(y, codebooks, sigma2, amp_iterations=5, sink=seen.append)
    assert seen == result.records
    assert [record["t"] for record in seen] == list(range(1, result.iterations + 1))
    assert all(len(record["tau2"]) == 1 for record in seen)


def test_single_ap_cell_free_is_bit_identical(desk_code, rng):
    codebooks, _, signals = make_users(desk_code, 600, [1, 2], rng)
    sigma2 = ebn0_to_sigma2(2.0, desk_code.L, desk_code.K_sym * desk_code.field.p)
    y = gmac_transmit(signals, sigma2, rng)
    options = {"amp_iterations": 8, "final_bp_iterations": 2}

    single = decode_single_cell(y, codebooks, sigma2, **options)
    cell_free = decode_cell_free([y], Topology.single_cell(2), codebooks, sigma2, **options)

    assert single.records == cell_free.records
    for a, b in zip(single.estimates, cell_free.estimates):
        assert np.array_equal(a.data, b.data)
    for a, b in zip(single.info_bits, cell_free.info_bits):
        assert np.array_equal(a, b)


def test_noiseless_cell_free_decodes_exactly(desk_code, rng):
    topology = Topology.from_edges(2, 3, [[0, 0], [0, 1], [1, 1], [1, 2]])
    codebooks, words, signals = make_users(desk_code, 600, [5, 6, 7], rng)
    ys = cellfree_transmit(topology, signals, 0.0, rng)
    result = decode_cell_free(ys, topology, codebooks, 0.0)
    for decoded, word in zip(result.symbols, words):
        assert np.array_equal(decoded, word)
    assert all(len(record["tau2"]) == 2 for record in result.records)


def test_cell_free_rejects_mismatched_inputs(desk_code, rng):
    topology = Topology.from_edges(2, 2, [[0, 0], [1, 1]])
    codebooks, _, signals = make_users(desk_code, 300, [1, 2], rng)
    with pytest.raises(ValueError):
        decode_cell_free([signals[0]], topology, codebooks, 0.1)
    with pytest.raises(ValueError):
        decode_cell_free(signals, topology, codebooks[:1], 0.1)


def test_non_finite_observation_aborts(desk_code, rng):
    codebooks, _, signals = make_users(desk_code, 280, [3], rng)
    y = signals[0].copy()
    y[0] = np.nan
    with pytest.raises(DecoderAbort) as excinfo:
        decode_single_cell(y, codebooks, 0.1)
    assert excinfo.value.records == []


def test_observation_length_is_checked(desk_code, rng):
    codebooks, _, signals = make_users(desk_code, 280, [3], rng)
    with pytest.raises(GeometryError):
        decode_single_cell(signals[0][:-1], codebooks, 0.1)


def test_grid_helper_covers_simplex():
    grid = simplex_grid(3, 4)
    assert len(grid) == len([c for c in itertools.product(range(5), repeat=2) if sum(c) <= 4])
    assert np.allclose(grid.sum(axis=1), 1.0)
