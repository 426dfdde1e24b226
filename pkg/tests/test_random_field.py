import numpy as np
import pytest

from qnls_lab.errors import ConfigurationError
from qnls_lab.lattice import bracket_power, truncation_set
from qnls_lab.outputs import provenance
from qnls_lab.random_field import (
    GaussianSeed,
    embed,
    gaussian_table,
    linear_flow,
    read_field_csv,
    restrict,
    sample_data,
    sample_gaussian,
    seed_value,
    sobolev_norm,
    to_physical,
    unimodular_table,
    write_field_csv,
    zero_field,
)


def test_seed_must_fit_64_bits():
    assert seed_value(GaussianSeed(2**64 - 1)) == 2**64 - 1
    with pytest.raises(ConfigurationError):
        GaussianSeed(-1)
    with pytest.raises(ConfigurationError):
        seed_value(2**64)


def test_sampling_is_deterministic():
    a = sample_data(11, 0.5, 6)
    b = sample_data(11, 0.5, 6)
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)
    c = sample_data(12, 0.5, 6)
    assert not np.allclose(a.amplitudes, c.amplitudes)


def test_draws_do_not_depend_on_truncation():
    small = sample_data(3, 0.75, 4)
    large = sample_data(3, 0.75, 12)
    np.testing.assert_array_equal(restrict(large, 4).amplitudes, small.amplitudes)


def test_scalar_and_table_draws_agree():
    modes = truncation_set(3)
    table = gaussian_table([5, 6], modes)
    assert table.shape == (2, modes.shape[0])
    assert sample_gaussian(6, modes[4]) == table[1, 4]


def test_key_is_padded_to_three_components():
    one = gaussian_table([9], np.array([[2]]))
    two = gaussian_table([9], np.array([[2, 0]]))
    three = gaussian_table([9], np.array([[2, 0, 0]]))
    assert one[0, 0] == two[0, 0] == three[0, 0]


def test_gaussian_moments():
    g = gaussian_table(np.arange(2000), truncation_set(3)).ravel()
    assert g.size == 2000 * 29
    assert np.mean(np.abs(g) ** 2) == pytest.approx(1.0, abs=0.02)
    assert np.var(g.real) == pytest.approx(0.5, abs=0.015)
    assert np.var(g.imag) == pytest.approx(0.5, abs=0.015)
    assert abs(np.mean(g.real * g.imag)) < 0.01
    # P(|g|^2 > 1/2) = e^{-1/2}
    assert np.mean(np.abs(g) ** 2 > 0.5) == pytest.approx(np.exp(-0.5), abs=0.01)


def test_unimodular_factor_is_the_angle():
    modes = truncation_set(2)
    g = gaussian_table([4], modes)
    eta = unimodular_table([4], modes)
    np.testing.assert_allclose(np.abs(eta), 1.0)
    np.testing.assert_allclose(eta, g / np.abs(g), atol=1e-12)


def test_data_weights():
    field = sample_data(2, 0.25, 5)
    g = gaussian_table([2], field.modes)[0]
    sq = np.einsum("ij,ij->i", field.modes, field.modes)
    np.testing.assert_allclose(field.amplitudes, g * (1.0 + sq) ** (-0.375))


def test_sampled_data_in_other_dimensions():
    assert sample_data(1, 0.0, 3, dim=1).amplitudes.shape == (7,)
    assert sample_data(1, 0.0, 1, dim=3).modes.shape == (7, 3)


def test_sobolev_norm_of_single_mode(single_mode_field):
    assert sobolev_norm(single_mode_field, 1.0) == pytest.approx(np.sqrt(2.0))
    assert sobolev_norm(single_mode_field, 0.0) == pytest.approx(1.0)
    assert sobolev_norm(zero_field(4), 3.0) == 0.0


def test_linear_flow_keeps_modulus(rough_data):
    evolved = linear_flow(rough_data, 0.3)
    np.testing.assert_allclose(np.abs(evolved.amplitudes), np.abs(rough_data.amplitudes))
    sq = np.einsum("ij,ij->i", rough_data.modes, rough_data.modes)
    np.testing.assert_allclose(evolved.amplitudes, rough_data.amplitudes * np.exp(-0.3j * sq))


def test_restrict_and_embed(rough_data):
    bigger = embed(rough_data, 11)
    assert bigger.truncation == 11
    assert sobolev_norm(bigger, 0.5) == pytest.approx(sobolev_norm(rough_data, 0.5))
    np.testing.assert_array_equal(restrict(bigger, 8).amplitudes, rough_data.amplitudes)
    with pytest.raises(ConfigurationError):
        restrict(rough_data, 9)
    with pytest.raises(ConfigurationError):
        embed(rough_data, 7)


def test_to_physical_single_mode(single_mode_field):
    grid = to_physical(single_mode_field, 16)
    x = np.exp(2j * np.pi * np.arange(16) / 16)
    np.testing.assert_allclose(grid, np.repeat(x[:, None], 16, axis=1), atol=1e-12)
    with pytest.raises(ConfigurationError):
        to_physical(single_mode_field, 8)


def test_sampled_fields_are_complex_valued():
    grid = to_physical(sample_data(21, 0.0, 8), 32)
    assert np.max(np.abs(grid.imag)) > 0.1


def test_field_csv(tmp_path, rough_data):
    path = write_field_csv(rough_data, tmp_path / "field.csv", provenance({"seed": 7}, 1.0))
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config:")
    assert lines[3] == "n1,n2,re,im"
    again = read_field_csv(path)
    assert again.truncation == 8
    np.testing.assert_array_equal(again.modes, rough_data.modes)
    np.testing.assert_array_equal(again.amplitudes, rough_data.amplitudes)


def test_field_csv_without_modes(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("n1,n2,re,im\n")
    with pytest.raises(ConfigurationError, match="no modes"):
        read_field_csv(path)


def _within_three_se(samples, expected):
    standard_error = np.std(samples, ddof=1) / np.sqrt(samples.shape[0])
    return abs(np.mean(samples) - expected) <= 3.0 * standard_error


def test_gaussian_mean_and_second_moment_over_seeds():
    modes = np.array([[1, 0], [2, -1], [0, 0]])
    g = gaussian_table(np.arange(100_000), modes)
    for column in g.T:
        # E|mean|^2 = 1/M for a standard complex Gaussian
        assert abs(np.mean(column)) <= 3.0 / np.sqrt(column.shape[0])
    assert _within_three_se(np.abs(g[:, 0]) ** 2, 1.0)


def test_distinct_modes_are_uncorrelated():
    modes = np.array([[1, 0], [0, 1], [-3, 2]])
    g = gaussian_table(np.arange(10_000), modes)
    for a, b in [(0, 1), (0, 2), (1, 2)]:
        products = g[:, a] * np.conj(g[:, b])
        standard_error = np.sqrt(np.mean(np.abs(products) ** 2) / products.shape[0])
        assert abs(np.mean(products)) <= 3.0 * standard_error


def test_data_moments_over_seeds():
    alpha, N, epsilon = 0.5, 4, 0.1
    fields = [sample_data(seed, alpha, N) for seed in range(10_000)]
    modes = fields[0].modes
    power = np.abs(np.stack([f.amplitudes for f in fields])) ** 2
    normalised = (power / bracket_power(modes, 2.0 * alpha - 2.0)).ravel()
    assert _within_three_se(normalised, 1.0)

    norms = np.array([sobolev_norm(f, -alpha - epsilon) ** 2 for f in fields])
    expected = np.sum(bracket_power(modes, -2.0 * epsilon - 2.0))
    assert _within_three_se(norms, expected)


def test_linear_flow_group_property(rough_data):
    twice = linear_flow(linear_flow(rough_data, 0.3), -1.1)
    once = linear_flow(rough_data, -0.8)
    np.testing.assert_allclose(twice.amplitudes, once.amplitudes, rtol=0.0, atol=1e-12)


@pytest.mark.parametrize("s", [-1.5, -0.35, 0.0, 0.75, 2.0])
def test_linear_flow_is_unitary(rough_data, s):
    before = sobolev_norm(rough_data, s)
    after = sobolev_norm(linear_flow(rough_data, 7.3), s)
    assert abs(after - before) <= 1e-12 * before
