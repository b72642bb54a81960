import json

import pytest

from ldplab.cli import main


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0


def test_validate_bundled_problem(tmp_path, capsys):
    code = main(["validate", "--problem", "brownian-1d", "--out", str(tmp_path)])
    assert code == 0
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["verb"] == "validate"
    report = json.loads((tmp_path / "validate.json").read_text())
    assert all(c["passed"] for c in report["checks"])


def test_validate_ellipticity_failure(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("""
[problem]
name = bad
dims = 2
ellipticity_K = 2.0

[drift]
limit = expr: 0; 0

[diffusion]
field = registry: identity_matrix(scale=3.0)
""")
    out = tmp_path / "out"
    code = main(["validate", "--problem", str(bad), "--out", str(out)])
    assert code == 1
    report = json.loads((out / "validate.json").read_text())
    failed = [c for c in report["checks"] if not c["passed"]]
    assert failed and failed[0]["name"] == "ellipticity"


def test_malformed_file_exit_2(tmp_path):
    bad = tmp_path / "broken.ini"
    bad.write_text("[problem]\ndims = not_a_number\n")
    assert main(["validate", "--problem", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_missing_file_exit_2(tmp_path):
    assert main(["validate", "--problem", str(tmp_path / "nope.ini"),
                 "--out", str(tmp_path / "o")]) == 2


def test_zvonkin_writes_certificate(tmp_path):
    code = main(["zvonkin", "--problem", "dini-tanhlog-1d", "--out", str(tmp_path),
                 "--resolution", "129"])
    assert code == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["certified"]
    assert (tmp_path / "map.json").exists()
    assert (tmp_path / "map_values.csv").exists()


def test_zvonkin_lambda_cap_exit_3(tmp_path):
    code = main(["zvonkin", "--problem", "dini-tanhlog-1d", "--out", str(tmp_path),
                 "--resolution", "65", "--max-doublings", "1"])
    assert code == 3


def test_simulate_writes_paths(tmp_path):
    code = main(["simulate", "--problem", "brownian-1d", "--out", str(tmp_path),
                 "--n-paths", "3", "--n-steps", "16"])
    assert code == 0
    files = sorted(tmp_path.glob("path_*.csv"))
    assert len(files) == 3
    header = files[0].read_text().splitlines()[0]
    assert header == "t,z1"


def test_rate_verb(tmp_path):
    code = main(["rate", "--problem", "free-endpoint", "--out", str(tmp_path),
                 "--threshold", "1.0", "--restarts", "3", "--n-intervals", "16"])
    assert code == 0
    payload = json.loads((tmp_path / "rate.json").read_text())
    assert payload["value"] == pytest.approx(0.5, rel=0.01)


def test_ldp_verb_small_ladder(tmp_path):
    code = main(["ldp", "--problem", "brownian-1d", "--out", str(tmp_path),
                 "--n-paths", "2000", "--n-steps", "32",
                 "--eps-ladder", "1.0,0.5,0.25", "--threshold", "0.5"])
    assert code == 0
    payload = json.loads((tmp_path / "ldp.json").read_text())
    assert payload["slope"] < 0
    lines = (tmp_path / "ladder.csv").read_text().splitlines()
    assert lines[0] == "eps,n_paths,hits,p_hat,ci_lo,ci_hi"
    assert len(lines) == 4


def test_ldp_reproducible(tmp_path):
    args = ["ldp", "--problem", "brownian-1d", "--n-paths", "1000",
            "--n-steps", "16", "--eps-ladder", "1.0,0.5,0.25", "--threshold", "0.5"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "ladder.csv").read_text() == \
        (tmp_path / "b" / "ladder.csv").read_text()


def test_verify_unknown_gate_exit_2(tmp_path):
    assert main(["verify", "--out", str(tmp_path), "--gates", "no_such_gate"]) == 2


def test_verify_subset_with_skip(tmp_path, capsys):
    code = main(["verify", "--out", str(tmp_path),
                 "--gates", "dini_classification,constant_resolvent_exactness",
                 "--skip", "constant_resolvent_exactness"])
    assert code == 0
    out = capsys.readouterr().out
    assert "[SKIP] constant_resolvent_exactness" in out
    assert "[PASS] dini_classification" in out
    report = json.loads((tmp_path / "gate_constant_resolvent_exactness.json").read_text())
    assert report["skipped"]
