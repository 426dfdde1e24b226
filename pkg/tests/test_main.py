import json

import pytest

from qnls_lab.database import load_records, make_session_factory
from qnls_lab.errors import ConfigurationError
from qnls_lab.main import main, parse_config
from qnls_lab.outputs import read_csv_rows
from qnls_lab.schemas import Subcommand


def test_scaling_prints_critical_regularity(capsys):
    assert main(["scaling", "--nonlinearity", "abs2", "--dim", "2"]) == 0
    assert capsys.readouterr().out.splitlines() == ["1"]


def test_scaling_verdicts(capsys, tmp_path):
    path = tmp_path / "scaling.json"
    assert main(["scaling", "--alpha", "0.5,1", "-o", str(path), "-q"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "1"
    assert out[1] == "alpha=0.5: converges (threshold 0.75)"
    assert out[2] == "alpha=1: diverges (threshold 0.75)"
    document = json.loads(path.read_text())
    assert document["critical_regularity"] == 1.0
    assert [v["verdict"] for v in document["verdicts"]] == ["converges", "diverges"]


@pytest.mark.parametrize(
    "argv",
    [
        ["variance-scan", "--bogus"],
        ["no-such-command"],
        ["variance-scan", "--n", "0,0"],
        ["variance-scan", "--N", "0"],
        ["solve", "--T", "0"],
        ["sample", "--N", "4,8"],
    ],
)
def test_invalid_input_exits_with_one(argv, capsys, output_dir):
    assert main(argv) == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_zero_mode_detail(capsys):
    assert main(["resonant-sum", "--n", "0,0"]) == 1
    assert "zero mode excluded by renormalization" in capsys.readouterr().err


def test_non_contraction_exits_with_two(capsys, output_dir):
    assert main(["solve", "--alpha", "0.9", "--N", "16", "--T", "1", "-q"]) == 2
    assert "no contraction" in capsys.readouterr().err
    assert not (output_dir / "solve.csv").exists()


def test_parse_config_defaults_and_verbosity():
    config, verbosity = parse_config(["variance-scan", "-vv"])
    assert config.subcommand is Subcommand.VARIANCE_SCAN
    assert verbosity == 2
    assert parse_config(["counting-check", "-q"])[1] == -1


def test_config_file_overrides_flags(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"N": [8], "alpha": [0.5], "t": 0.5}))
    config, _ = parse_config(["variance-scan", "--N", "16,32", "--config", str(path)])
    assert config.N == [8]
    assert config.alpha == [0.5]
    assert config.t == 0.5


def test_bad_config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigurationError):
        parse_config(["variance-scan", "--config", str(path)])
    with pytest.raises(ConfigurationError):
        parse_config(["variance-scan", "--config", str(tmp_path / "missing.json")])


def test_variance_scan_output(output_dir):
    argv = ["variance-scan", "--alpha", "0.5", "--N", "8,16,32", "--jobs", "1", "-q"]
    assert main(argv) == 0
    path = output_dir / "variance-scan.csv"
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# config: ")
    assert lines[1] == "# kernel_constant: 1"
    assert lines[2].startswith("# version: ")
    rows = read_csv_rows(path)
    assert [int(r["N"]) for r in rows] == [8, 16, 32]
    assert all(r["statistic"] == "exact_variance" and r["samples"] == "0" for r in rows)
    values = [float(r["value"]) for r in rows]
    assert values == sorted(values)
    assert (output_dir / "variance-scan.csv.meta.json").exists()

    first = path.read_bytes()
    assert main(argv) == 0
    assert path.read_bytes() == first


def test_output_flag_and_json_format(tmp_path, output_dir):
    path = tmp_path / "resonant.json"
    argv = ["resonant-sum", "--N", "16,32", "--format", "json", "-o", str(path), "--jobs", "1", "-q"]
    assert main(argv) == 0
    document = json.loads(path.read_text())
    assert document["header"][:3] == ["alpha", "N", "t"]
    assert [row[1] for row in document["rows"]] == [16, 32]
    assert document["provenance"]["config"]["format"] == "json"
    assert not list(output_dir.iterdir())


def test_store_skips_duplicates(tmp_path, output_dir):
    url = f"sqlite+pysqlite:///{tmp_path / 'sweeps.db'}"
    argv = ["variance-scan", "--N", "8,16", "--store", url, "--jobs", "1", "-q"]
    assert main(argv) == 0
    assert main(argv) == 0
    records = load_records(make_session_factory(url))
    assert [r.N for r in records] == [8, 16]


def test_second_iterate_records(output_dir):
    argv = ["second-iterate", "--N", "4", "--samples", "200", "--seed", "9", "--jobs", "1", "-q"]
    assert main(argv) == 0
    rows = read_csv_rows(output_dir / "second-iterate.csv")
    assert sorted(r["statistic"] for r in rows) == ["exact_variance", "mc_mean"]
    sampled = next(r for r in rows if r["statistic"] == "mc_mean")
    assert sampled["samples"] == "200" and sampled["seed"] == "9"


def test_sample_writes_field(output_dir):
    assert main(["sample", "--alpha", "0.5", "--N", "4", "--seed", "3", "-q"]) == 0
    rows = read_csv_rows(output_dir / "sample.csv")
    assert len(rows) == 49
    assert set(rows[0]) == {"n1", "n2", "re", "im"}


def test_counting_check(capsys, output_dir):
    argv = ["counting-check", "--N", "2,4", "--case", "III", "--format", "json", "--jobs", "1", "-q"]
    assert main(argv) == 0
    assert capsys.readouterr().out.startswith("case III: max ratio")
    document = json.loads((output_dir / "counting-check.json").read_text())
    assert [row[5] for row in document["rows"]] == [3, 7]


def test_tensor_check(capsys, output_dir):
    assert main(["tensor-check", "--N", "4", "--jobs", "1", "-q"]) == 0
    out = capsys.readouterr().out
    assert "estimate 012" in out and "estimate 0-12" in out
    rows = read_csv_rows(output_dir / "tensor-check.csv")
    assert [r["estimate"] for r in rows] == ["012", "1-02", "2-01", "0-12"]


def test_tensor_probe(output_dir):
    argv = ["tensor-check", "--probe", "--N", "2,4", "--alpha", "0.5", "--trials", "100", "--jobs", "1", "-q"]
    assert main(argv) == 0
    document = json.loads((output_dir / "tensor-check.json").read_text())
    assert [p["M"] for p in document["probes"]] == [2, 4]
    assert document["probes"][0]["trials"] == 100
    [scan] = document["slopes"]
    assert scan["alpha"] == 0.5 and scan["failed"] == []
    assert isinstance(scan["slope"], float)


def test_solve_writes_trajectory(output_dir):
    assert main(["solve", "--alpha", "0.25", "--N", "4", "--nodes", "8", "-q"]) == 0
    rows = read_csv_rows(output_dir / "solve.csv")
    assert len(rows) == 9 * 49
    assert float(rows[-1]["t"]) == pytest.approx(0.01)


def test_converge(capsys, output_dir):
    argv = ["converge", "--alpha", "0.25", "--N", "4,8", "--seed-count", "2", "--jobs", "1", "-q"]
    assert main(argv) == 0
    assert "monotone fraction" in capsys.readouterr().out
    rows = read_csv_rows(output_dir / "converge.csv")
    assert len(rows) == 4
    assert all(r["converged"] == "true" for r in rows)


def test_tightness_json(output_dir):
    argv = ["tightness", "--N", "8", "--samples", "1000", "--format", "json", "--jobs", "1", "-q"]
    assert main(argv) == 0
    document = json.loads((output_dir / "tightness.json").read_text())
    report = document["reports"][0]
    assert report["samples"] == 1000
    assert 0.0 < report["empirical_fraction"] < 1.0
