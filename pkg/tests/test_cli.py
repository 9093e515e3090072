import csv
import io
import json

import pytest

from xokde.cli import main


def test_json_to_stdout(capsys):
    assert main(["--dataset", "synthetic:60,2,2", "--shuffles", "2"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["schema"] == "xokde-bench-report" and len(data["rows"]) == 2


def test_csv_to_file(tmp_path, data_dir):
    out = tmp_path / "report.csv"
    code = main(["--dataset", str(data_dir / "wine.csv"), "--label-col", "first", "--covariance", "diag",
                 "--shuffles", "1", "--output", "csv", "--out", str(out)])
    assert code == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[0][:2] == ["row", "status"] and len(rows) == 4


def test_no_timing_is_reproducible(capsys):
    args = ["--dataset", "synthetic:60,2,2", "--shuffles", "2", "--seed", "3", "--no-timing"]
    main(args)
    first = capsys.readouterr().out
    main(args)
    assert capsys.readouterr().out == first
    assert "train_time_s" not in first


@pytest.mark.parametrize("args", [
    ["--dataset", "/nonexistent/file.csv"],
    ["--dataset", "synthetic:1,2"],
    ["--dataset", "synthetic:60,2,2", "--train-frac", "1.5"],
    ["--dataset", "synthetic:60,2,2", "--forgetting", "0"],
    ["--dataset", "synthetic:60,2,2", "--dth", "-1"],
    ["--dataset", "synthetic:60,2,2", "--shuffles", "0"],
])
def test_config_and_io_errors(args, capsys):
    assert main(args) == 2
    assert "error" in capsys.readouterr().err


def test_bad_flag_value_exits_nonzero():
    with pytest.raises(SystemExit) as info:
        main(["--dataset", "x", "--covariance", "banded"])
    assert info.value.code != 0
