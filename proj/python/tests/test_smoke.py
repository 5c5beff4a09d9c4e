import json
import math
import os
import subprocess

import pytest

import ergorisk

UPRIGHT = {
    0: (0.50, 0.06), 7: (0.46, 0.08), 8: (0.54, 0.08),
    11: (0.40, 0.20), 12: (0.60, 0.20), 13: (0.40, 0.35), 14: (0.60, 0.35),
    15: (0.40, 0.48), 16: (0.60, 0.48), 19: (0.40, 0.52), 20: (0.60, 0.52),
    23: (0.42, 0.55), 24: (0.58, 0.55), 25: (0.42, 0.75), 26: (0.58, 0.75),
    27: (0.42, 0.95), 28: (0.58, 0.95),
}


def upright_record(sample_id="upright"):
    lm = [None] * 33
    for i, (x, y) in UPRIGHT.items():
        lm[i] = [x, y, 1.0]
    return {"id": sample_id, "w": 100, "h": 200, "lm": lm}


def test_version_is_a_string():
    assert isinstance(ergorisk.__version__, str) and ergorisk.__version__


def test_joint_angle_right_and_straight():
    assert ergorisk.joint_angle((1, 0), (0, 0), (0, 1)) == pytest.approx(90.0, abs=1e-12)
    assert ergorisk.joint_angle((1, 0), (0, 0), (-1, 0)) == pytest.approx(180.0, abs=1e-12)
    a, b, c = (0.3, 0.7), (1.1, -0.2), (-0.4, 0.5)
    u = (a[0] - b[0], a[1] - b[1])
    v = (c[0] - b[0], c[1] - b[1])
    want = math.degrees(math.acos((u[0] * v[0] + u[1] * v[1]) / (math.hypot(*u) * math.hypot(*v))))
    assert ergorisk.joint_angle(a, b, c) == pytest.approx(want, abs=1e-9)


def test_risk_class_clamps_at_eight():
    assert [ergorisk.risk_class(s) for s in (1, 7, 8, 9, 12)] == [1, 7, 8, 8, 8]


def test_upright_scores_class_one():
    result = ergorisk.score(upright_record())
    assert result["reba"] == 1
    assert result["class"] == 1


def test_missing_hips_raise_data_error():
    record = upright_record()
    record["lm"][23] = None
    with pytest.raises(ergorisk.DataError):
        ergorisk.score(record)


def test_malformed_record_raises_data_error():
    with pytest.raises(ergorisk.DataError):
        ergorisk.score('{"id": "x", "w": 10}')


def test_default_tables_round_trip():
    tables = ergorisk.default_tables()
    assert ergorisk.score(upright_record(), tables=tables)["class"] == 1


def test_evaluate_perfect_predictions():
    labels = [0, 1, 2, 3, 4, 5, 6, 7]
    probs = [[1.0 if c == y else 0.0 for c in range(8)] for y in labels]
    report = ergorisk.evaluate(probs, labels)
    assert report["accuracy"] == 1.0
    assert report["cohen_kappa"] == 1.0
    assert report["mcc"] == 1.0
    assert report["prob_rmse"] == 0.0


def test_run_cli_in_process(tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text(json.dumps(upright_record()) + "\n")
    code, out, _ = ergorisk.run_cli(["score", "--in", str(src)])
    assert code == 0
    assert json.loads(out.splitlines()[0])["class"] == 1
    code, _, _ = ergorisk.run_cli(["score"])
    assert code == 1


@pytest.mark.skipif("ERGORISK_CLI" not in os.environ, reason="command-line binary not provided")
def test_cli_binary_matches_module(tmp_path):
    src = tmp_path / "in.jsonl"
    src.write_text(json.dumps(upright_record("a")) + "\n")
    proc = subprocess.run([os.environ["ERGORISK_CLI"], "score", "--in", str(src)], capture_output=True, text=True)
    assert proc.returncode == 0
    _, out, _ = ergorisk.run_cli(["score", "--in", str(src)])
    assert proc.stdout == out
