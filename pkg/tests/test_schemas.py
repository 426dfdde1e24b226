import math

import pytest
from pydantic import ValidationError

from qnls_lab.counting import CountingCase
from qnls_lab.lattice import Nonlinearity
from qnls_lab.schemas import (
    DEFAULT_ALPHA,
    OutputFormat,
    RunConfig,
    ScanRecord,
    Statistic,
    Subcommand,
)


def _record(**overrides):
    data = dict(
        alpha=0.75,
        N=64,
        t=1.0,
        n1=1,
        n2=0,
        statistic=Statistic.EXACT_VARIANCE,
        value=26.9,
        samples=0,
        seed=0,
    )
    data.update(overrides)
    return ScanRecord(**data)


def test_defaults():
    config = RunConfig(subcommand="variance-scan")
    assert config.subcommand is Subcommand.VARIANCE_SCAN
    assert config.alpha is None and config.alphas == [DEFAULT_ALPHA]
    assert config.N is None
    assert config.n == (1, 0)
    assert config.format is OutputFormat.CSV
    assert config.nonlinearity is Nonlinearity.ABS2
    assert config.samples == 10_000


def test_comma_lists_are_split():
    config = RunConfig(subcommand="variance-scan", alpha="0.5,0.75", N="64,128", n="2,-1")
    assert config.alpha == [0.5, 0.75]
    assert config.N == [64, 128]
    assert config.n == (2, -1)
    assert RunConfig(subcommand="sample", alpha=0.5, N=8).N == [8]


def test_case_and_enums_from_text():
    config = RunConfig(subcommand="counting-check", case="III", format="json", nonlinearity="square")
    assert config.case is CountingCase.III
    assert config.format is OutputFormat.JSON
    assert config.nonlinearity is Nonlinearity.SQUARE


@pytest.mark.parametrize(
    "overrides",
    [
        {"N": "0"},
        {"N": []},
        {"alpha": "nan"},
        {"n": "a,b"},
        {"n": "1,2,3,4"},
        {"samples": 0},
        {"tol": 0.0},
        {"epsilon": -0.1},
        {"dim": 4},
        {"seed": -1},
        {"seed": 2**64},
        {"jobs": 0},
        {"bogus": 1},
    ],
)
def test_invalid_fields(overrides):
    with pytest.raises(ValidationError):
        RunConfig(subcommand="sample", **overrides)


@pytest.mark.parametrize("command", ["second-iterate", "variance-scan", "resonant-sum", "tightness"])
def test_zero_frequency_rejected(command):
    with pytest.raises(ValidationError, match="zero mode excluded by renormalization"):
        RunConfig(subcommand=command, n="0,0")


def test_zero_frequency_allowed_elsewhere():
    assert RunConfig(subcommand="sample", n="0,0").n == (0, 0)


def test_scan_records_need_planar_frequency():
    with pytest.raises(ValidationError):
        RunConfig(subcommand="variance-scan", n="1,0,0")
    assert RunConfig(subcommand="sample", n="1,0,0").n == (1, 0, 0)


def test_cross_field_rules():
    with pytest.raises(ValidationError):
        RunConfig(subcommand="solve", T=0.0)
    with pytest.raises(ValidationError):
        RunConfig(subcommand="tensor-check", probe=True, trials=50)
    assert RunConfig(subcommand="tensor-check", trials=50).trials == 50
    with pytest.raises(ValidationError):
        RunConfig(subcommand="converge", seed=2**64 - 1, seed_count=2)
    assert RunConfig(subcommand="converge", seed=2**64 - 2, seed_count=2).seed_count == 2


def test_echo_drops_run_local_fields():
    config = RunConfig(subcommand="variance-scan", jobs=2, store="sqlite://", output_path="x.csv")
    echo = config.echo()
    assert "jobs" not in echo and "store" not in echo and "output_path" not in echo
    assert echo["subcommand"] == "variance-scan"
    assert echo["n"] == [1, 0]


def test_scan_record_rules():
    assert _record().as_row() == (0.75, 64, 1.0, 1, 0, Statistic.EXACT_VARIANCE, 26.9, 0, 0)
    with pytest.raises(ValidationError):
        _record(samples=10)
    with pytest.raises(ValidationError):
        _record(statistic=Statistic.MC_MEAN, samples=0)
    with pytest.raises(ValidationError):
        _record(value=math.inf)
    with pytest.raises(ValidationError):
        _record(value=-1.0)
    with pytest.raises(ValidationError):
        _record(N=0)
    with pytest.raises(ValidationError):
        _record(extra=1)
    assert _record(statistic="mc_mean", samples=100, seed=2**64 - 1).seed == 2**64 - 1
