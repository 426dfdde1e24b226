import math

import numpy as np
import pytest
import scipy.sparse

from qnls_lab import tensors
from qnls_lab.errors import BudgetExceededError, ConfigurationError, PowerIterationError
from qnls_lab.lattice import TruncationMode, ball_points, bracket_power, truncation_set
from qnls_lab.tensors import (
    Axis,
    Partition,
    AxisSupport,
    SparseTensor3,
    SupportSpec,
    build_base_tensor,
    dense_operator_norm,
    deterministic_estimates_scan,
    estimate_bound,
    frobenius_norm,
    matrix_operator_norm,
    operator_norm,
    probe_support,
    random_tensor_probe,
    random_tensor_scan,
    schur_bound,
    unfold,
    verify_deterministic_estimates,
)

PARTITIONS = [
    "n->n1,n2",
    "n1->n,n2",
    "n2->n,n1",
    "n,n1->n2",
    "n,n2->n1",
    "n1,n2->n",
]


def _brute_force_triples(m, radius):
    triples = set()
    points = [tuple(int(c) for c in p) for p in ball_points(radius)]
    for n in points:
        for n2 in points:
            n1 = (n[0] + n2[0], n[1] + n2[1])
            if n1[0] ** 2 + n1[1] ** 2 > radius * radius:
                continue
            if n[0] ** 2 + n[1] ** 2 - n1[0] ** 2 - n1[1] ** 2 + n2[0] ** 2 + n2[1] ** 2 == m:
                triples.add((n, n1, n2))
    return triples


def test_partition_parse_and_str():
    p = Partition.parse("n1 -> n, n2")
    assert p.input_axes == {Axis.N1}
    assert p.output_axes == {Axis.N, Axis.N2}
    assert str(p) == "n1->n,n2"
    assert str(p.transposed()) == "n,n2->n1"
    assert p.transposed().transposed() == p


def test_partition_validation():
    with pytest.raises(ConfigurationError):
        Partition.parse("n,n1->n1,n2")
    with pytest.raises(ConfigurationError):
        Partition.parse("n->n1")


@pytest.mark.parametrize("m", [-4, 0, 2, 6])
def test_base_tensor_matches_brute_force(m):
    tensor = build_base_tensor(m, SupportSpec.balls(3, 3, 3))
    assert tensor.triples() == _brute_force_triples(m, 3)
    assert np.all(tensor.values == 1.0)
    flat = [tuple(t.reshape(-1)) for t in tensor.support]
    assert flat == sorted(flat)


def test_base_tensor_odd_resonance_is_empty():
    assert build_base_tensor(3, SupportSpec.balls(4, 4, 4)).nnz == 0


def test_base_tensor_filters():
    plain = build_base_tensor(0, SupportSpec.balls(3, 3, 3))
    no_zero = build_base_tensor(0, SupportSpec.balls(3, 3, 3, exclude_zero_n2=True))
    no_pair = build_base_tensor(0, SupportSpec.balls(3, 3, 3, no_pairing=True))
    assert all(any(t[2]) for t in no_zero.support)
    assert all(tuple(t[1]) != tuple(t[2]) for t in no_pair.support)
    assert no_zero.nnz < plain.nnz
    assert no_pair.nnz < plain.nnz


def test_sparse_tensor_validation():
    with pytest.raises(ConfigurationError):
        SparseTensor3(np.zeros((2, 3)), np.ones(2))
    bad = np.array([[[1, 0], [0, 0], [0, 0]]])
    with pytest.raises(ConfigurationError):
        SparseTensor3(bad, np.ones(1))
    closed = np.array([[[1, 0], [1, 1], [0, 1]]])
    SparseTensor3(closed, np.ones(1))
    with pytest.raises(ConfigurationError):
        SparseTensor3(closed, np.ones(1), m=4)


def test_unfold_shape_and_mass():
    tensor = build_base_tensor(0, SupportSpec.balls(4, 4, 4))
    matrix = unfold(tensor, Partition.parse("n1->n,n2"))
    assert matrix.sum() == tensor.nnz
    # every (n, n2) pair fixes n1
    assert np.all(np.asarray(matrix.sum(axis=1)).ravel() == 1)


def test_frobenius_is_square_root_of_support_size():
    tensor = build_base_tensor(0, SupportSpec.balls(4, 4, 4))
    assert tensor.nnz == 209
    assert frobenius_norm(tensor) == pytest.approx(math.sqrt(209))
    assert operator_norm(tensor, Partition(frozenset(), frozenset(Axis))) == pytest.approx(
        math.sqrt(209)
    )


@pytest.mark.parametrize("partition", PARTITIONS)
@pytest.mark.parametrize("m", [0, 2, -4])
def test_power_iteration_matches_dense_svd(partition, m):
    tensor = build_base_tensor(m, SupportSpec.balls(4, 4, 4))
    assert tensor.nnz <= 500
    p = Partition.parse(partition)
    assert operator_norm(tensor, p) == pytest.approx(dense_operator_norm(tensor, p), rel=1e-8)


@pytest.mark.parametrize("partition", PARTITIONS)
def test_operator_norm_below_schur_bound(partition):
    tensor = build_base_tensor(0, SupportSpec.balls(5, 4, 3))
    p = Partition.parse(partition)
    assert operator_norm(tensor, p) <= schur_bound(tensor, p) + 1e-10


@pytest.mark.parametrize("partition", PARTITIONS)
def test_duality_of_transposed_norms(partition):
    tensor = build_base_tensor(2, SupportSpec.balls(4, 3, 4))
    p = Partition.parse(partition)
    assert operator_norm(tensor, p) == pytest.approx(operator_norm(tensor, p.transposed()), rel=1e-8)


def test_operator_norm_of_weighted_tensor():
    tensor = build_base_tensor(0, SupportSpec.balls(4, 4, 4))
    rng = np.random.default_rng(3)
    weighted = tensor.scaled(rng.standard_normal(tensor.nnz) + 1j * rng.standard_normal(tensor.nnz))
    p = Partition.parse("n,n2->n1")
    assert operator_norm(weighted, p) == pytest.approx(dense_operator_norm(weighted, p), rel=1e-8)
    with pytest.raises(ConfigurationError):
        schur_bound(weighted, p)


def test_matrix_operator_norm_small_cases():
    diagonal = scipy.sparse.diags([3.0, 1.0, 2.0])
    assert matrix_operator_norm(diagonal) == pytest.approx(3.0)
    wide = scipy.sparse.csr_matrix(np.array([[3.0, 4.0, 0.0, 0.0]]))
    assert matrix_operator_norm(wide) == pytest.approx(5.0)
    assert matrix_operator_norm(scipy.sparse.csr_matrix((4, 4))) == 0.0
    with pytest.raises(ConfigurationError):
        matrix_operator_norm(diagonal, tol=0.0)


def test_power_iteration_reports_failure():
    rng = np.random.default_rng(0)
    matrix = scipy.sparse.csr_matrix(rng.standard_normal((60, 60)))
    with pytest.raises(PowerIterationError) as info:
        matrix_operator_norm(matrix, tol=1e-15, max_iter=1)
    assert info.value.iterations == 1
    assert info.value.last_iterate.shape == (60,)
    assert info.value.exit_code == 2


def test_dense_reference_budget():
    tensor = build_base_tensor(0, SupportSpec.balls(8, 8, 8))
    with pytest.raises(BudgetExceededError):
        dense_operator_norm(tensor, Partition.parse("n->n1,n2"))


def test_empty_tensor_norms():
    empty = build_base_tensor(1, SupportSpec.balls(4, 4, 4))
    p = Partition.parse("n->n1,n2")
    assert operator_norm(empty, p) == 0.0
    assert schur_bound(empty, p) == 0.0
    assert frobenius_norm(empty) == 0.0


def test_estimate_bounds():
    assert estimate_bound("012", 8, 4, 16, 0.0) == pytest.approx(8.0)
    assert estimate_bound("1-02", 8, 4, 16, 0.5) == pytest.approx(4.0)
    assert estimate_bound("2-01", 8, 4, 16, 0.1) == pytest.approx(2.0)
    assert estimate_bound("0-12", 8, 9, 16, 0.1) == pytest.approx(3.0)
    with pytest.raises(ConfigurationError):
        estimate_bound("3-01", 8, 8, 8, 0.1)


@pytest.mark.parametrize(
    "radius, frobenius_sq, paired_sq, single_sq",
    [(4, 209, 8, 7), (8, 1105, 12, 15)],
)
def test_deterministic_estimates_values(radius, frobenius_sq, paired_sq, single_sq):
    report = verify_deterministic_estimates(radius, radius, radius)
    rows = {row.estimate: row for row in report.rows}
    assert list(rows) == ["012", "1-02", "2-01", "0-12"]
    assert rows["012"].lhs == pytest.approx(math.sqrt(frobenius_sq))
    assert rows["1-02"].lhs == pytest.approx(math.sqrt(paired_sq), rel=1e-6)
    assert rows["2-01"].lhs == pytest.approx(math.sqrt(single_sq), rel=1e-6)
    assert rows["0-12"].lhs == pytest.approx(math.sqrt(single_sq), rel=1e-6)
    for name in ("1-02", "2-01", "0-12"):
        assert rows[name].lhs == pytest.approx(rows[name].schur, rel=1e-6)
    assert rows["012"].schur is None
    assert report.duality_error < 1e-6
    assert rows["2-01"].as_row()[-1] == pytest.approx(rows["2-01"].lhs / math.sqrt(radius))


@pytest.mark.slow
def test_deterministic_estimate_slopes():
    report = deterministic_estimates_scan()
    assert len(report.rows) == 16
    assert report.slopes["012"] < 0.5
    assert report.slopes["1-02"] < 0.5
    assert report.slopes["2-01"] <= 0.05
    assert report.slopes["0-12"] <= 0.05
    assert report.duality_error < 1e-6


def test_probe_needs_enough_trials():
    with pytest.raises(ConfigurationError):
        random_tensor_probe(0, M=2, trials=99)


def test_probe_is_reproducible():
    first = random_tensor_probe(0, alpha=0.5, M=2, trials=100, seed=11)
    second = random_tensor_probe(0, alpha=0.5, M=2, trials=100, seed=11)
    assert np.array_equal(first.ratios, second.ratios)
    assert first.trials == 100
    assert first.deterministic_norm > 0
    assert np.all(np.isfinite(first.ratios)) and np.all(first.ratios > 0)
    levels = sorted(first.quantiles)
    values = [first.quantiles[q] for q in levels]
    assert values == sorted(values)
    assert first.quantiles[0.01] <= first.median_ratio <= first.quantiles[0.99]


def test_clustered_spectrum_norm_matches_dense():
    # The top singular value of this unfolding is clustered
    tensor = build_base_tensor(0, probe_support(16))
    weighted = tensor.scaled(bracket_power(tensor.support[:, 2], -1.0))
    partition = Partition.parse("n->n1,n2")
    expected = np.linalg.norm(unfold(weighted, partition).toarray(), 2)
    assert operator_norm(weighted, partition) == pytest.approx(expected, rel=1e-6)


def test_single_output_mode_gives_unit_ratio():
    spec = SupportSpec(AxisSupport(4), AxisSupport(4), AxisSupport(0, center=(1, 0)))
    report = random_tensor_probe(0, spec, alpha=0.5, trials=100, seed=3)
    assert np.allclose(report.ratios, 1.0, rtol=0.0, atol=1e-6)


def test_scan_records_failed_scales(monkeypatch):
    probe = tensors.random_tensor_probe

    def failing_at_eight(m, spec, alpha, M, *args):
        if M == 8:
            raise PowerIterationError(500, np.zeros(3), 1.5e-4)
        return probe(m, spec, alpha, M, *args)

    monkeypatch.setattr(tensors, "random_tensor_probe", failing_at_eight)
    scan = random_tensor_scan(0, 0.5, [2, 4, 8], jobs=1)
    assert [r.M for r in scan.reports] == [2, 4]
    assert list(scan.failures) == [8]
    assert "did not converge" in scan.failures[8]
    assert math.isfinite(scan.slope)


@pytest.mark.slow
def test_median_ratio_is_flat_in_M():
    scan = random_tensor_scan(0, 0.0, [4, 8, 16, 32], trials=100)
    assert not scan.failures
    assert [r.M for r in scan.reports] == [4, 8, 16, 32]
    assert scan.reports[0].median_ratio == pytest.approx(1.44, abs=0.01)
    assert scan.slope <= 0.3


@pytest.mark.parametrize("radius, center", [(2, (0, 0)), (5, (0, 0)), (8, (3, -1))])
def test_shell_support_is_the_dyadic_shell(radius, center):
    points = ball_points(radius, center)
    kept = points[AxisSupport(radius, center, shell=True).mask(points)]
    expected = truncation_set(radius, TruncationMode.DYADIC_SHELL) + np.asarray(center)
    np.testing.assert_array_equal(kept, expected)


def test_shell_support_in_base_tensor():
    spec = SupportSpec(AxisSupport(8), AxisSupport(8), AxisSupport(8, shell=True))
    tensor = build_base_tensor(0, spec)
    assert tensor.nnz > 0
    outputs = {tuple(p) for p in tensor.support[:, 2]}
    assert outputs <= {tuple(p) for p in truncation_set(8, TruncationMode.DYADIC_SHELL)}
