import json
import math

import pytest

from sagald.cli import config_hash, fnv1a64, main


def run_cli(*argv):
    return main(list(argv))


def test_fnv1a64_reference_vectors():
    # standard test vectors for 64-bit FNV-1a
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C
    assert fnv1a64(b"foobar") == 0x85944171F73967E8


def test_config_hash_canonicalization():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_constants_command(tmp_path, capsys):
    rc = run_cli("constants", "--problem", "lin-1d", "--eta", "0.03125",
                 "--eps", "0.1", "--out", str(tmp_path))
    assert rc == 0
    doc = json.loads((tmp_path / "constants.json").read_text())
    assert doc["K"] == pytest.approx(math.sqrt(887_409_792.0), rel=1e-12)
    assert doc["c_check"] == pytest.approx(7699.2, rel=1e-12)
    assert len(doc["config_hash"]) == 16
    out = capsys.readouterr().out
    assert "K(eps)" in out


def test_constants_rejects_bad_eps(tmp_path):
    rc = run_cli("constants", "--problem", "lin-1d", "--eps", "0.5",
                 "--out", str(tmp_path))
    assert rc == 4


def test_missing_problem_is_usage_error(tmp_path):
    rc = run_cli("constants", "--out", str(tmp_path))
    assert rc == 2


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        run_cli("frobnicate")
    assert exc.value.code == 2


def test_sample_deterministic_outputs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        rc = run_cli("sample", "--problem", "lin-1d", "--steps", "300",
                     "--reps", "100", "--seed", "5", "--out", str(out))
        assert rc == 0
    assert (a / "trajectory.csv").read_bytes() \
        == (b / "trajectory.csv").read_bytes()
    assert (a / "moments.csv").read_bytes() == (b / "moments.csv").read_bytes()
    first = (a / "trajectory.csv").read_text().splitlines()[0]
    assert first.startswith("# config_hash=")


def test_sample_refuses_unsafe_eta(tmp_path):
    rc = run_cli("sample", "--problem", "lin-1d", "--eta", "0.05",
                 "--steps", "10", "--out", str(tmp_path))
    assert rc == 3
    rc = run_cli("sample", "--problem", "lin-1d", "--eta", "0.05",
                 "--steps", "10", "--unsafe-eta", "--reps", "100",
                 "--out", str(tmp_path))
    assert rc == 0


def test_sample_moment_pass_flag(tmp_path):
    rc = run_cli("sample", "--problem", "lin-1d", "--steps", "500",
                 "--reps", "150", "--seed", "2", "--out", str(tmp_path))
    assert rc == 0
    doc = json.loads((tmp_path / "moments.json").read_text())
    assert doc["applicable"] and doc["x_ok"] and doc["g_ok"]


def test_sample_binary_format(tmp_path):
    rc = run_cli("sample", "--problem", "micro-1d", "--steps", "50",
                 "--reps", "100", "--format", "binary", "--out",
                 str(tmp_path))
    assert rc == 0
    assert (tmp_path / "trajectory.bin").read_bytes()[:8] == b"SAGLDTRJ"


def test_couple_identical_inits(tmp_path):
    rc = run_cli("couple", "--problem", "micro-1d", "--eta", "0.5",
                 "--unsafe-eta", "--k-override", "0.2", "--regen-override",
                 "0.2", "--k-max", "20", "--reps", "150", "--init-law",
                 "point", "--x0-a", "0.0", "--x0-b", "0.0",
                 "--out", str(tmp_path))
    assert rc == 0
    lines = (tmp_path / "coupling.csv").read_text().splitlines()
    assert lines[1].startswith("k,")
    first = lines[2].split(",")
    assert first[0] == "0" and float(first[1]) == 1.0  # p_hat == 1 from k=0
    doc = json.loads((tmp_path / "coupling.json").read_text())
    assert doc["met_fraction"] == 1.0 and doc["violations"] == 0


def test_couple_rejects_uncontained_regen_ball(tmp_path):
    # K below the regeneration radius: refused at validation
    rc = run_cli("couple", "--problem", "micro-1d", "--eta", "0.5",
                 "--unsafe-eta", "--k-override", "0.1", "--k-max", "10",
                 "--reps", "120", "--out", str(tmp_path))
    assert rc == 4


def test_couple_faithful_constants_sentinel(tmp_path):
    rc = run_cli("couple", "--problem", "lin-1d", "--k-max", "10",
                 "--reps", "120", "--seed", "3", "--out", str(tmp_path))
    assert rc == 0
    doc = json.loads((tmp_path / "coupling.json").read_text())
    assert doc["n_zero_is_sentinel"] and doc["n_zero"] is None
    assert doc["n_zero_log10"] > 1e10
    assert doc["sweep_events"] == 0


def test_mixing_command(tmp_path):
    rc = run_cli("mixing", "--problem", "micro-1d", "--eta", "0.5",
                 "--unsafe-eta", "--k-override", "0.2", "--regen-override",
                 "0.2", "--lags", "32", "256", "--reps", "1000",
                 "--anchor-step", "64", "--threads", "2",
                 "--out", str(tmp_path))
    assert rc == 0
    doc = json.loads((tmp_path / "mixing.json").read_text())
    assert doc["pass_inequality"]


def test_lln_constant_echo(tmp_path):
    rc = run_cli("lln", "--problem", "lin-1d", "--phi", "const:1.5",
                 "--horizon", "500", "--reps", "4", "--out", str(tmp_path))
    assert rc == 0
    doc = json.loads((tmp_path / "lln.json").read_text())
    assert doc["mean_full"] == 1.5


def test_lln_rejects_unregistered_phi(tmp_path):
    rc = run_cli("lln", "--problem", "lin-1d", "--phi", "cube",
                 "--horizon", "500", "--reps", "4", "--out", str(tmp_path))
    assert rc == 4


def test_tv_command_diagonal(tmp_path):
    rc = run_cli("tv", "--problem", "lin-1d", "--checkpoints", "10", "50",
                 "50", "200", "--reps", "400", "--out", str(tmp_path))
    assert rc == 0
    rows = (tmp_path / "tv.csv").read_text().splitlines()[2:]
    diag = [r for r in rows if r.split(",")[0] == r.split(",")[1]]
    assert diag and all(float(r.split(",")[2]) == 0.0 for r in diag)


def test_verify_command(tmp_path):
    rc = run_cli("verify", "--problem", "micro-1d", "--eta", "0.125",
                 "--trials", "2000", "--out", str(tmp_path))
    assert rc == 0
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["assumptions"]["lipschitz_ok"]
    assert doc["minorization"]["pass"]


def test_config_file_with_flag_overrides(tmp_path):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"problem": "lin-1d", "steps": 100,
                                   "reps": 100, "seed": 9}))
    rc = run_cli("sample", "--config", str(cfgfile), "--steps", "120",
                 "--out", str(tmp_path))
    assert rc == 0
    lines = (tmp_path / "trajectory.csv").read_text().splitlines()
    assert len(lines) == 123  # hash comment + header + 121 snapshot rows
