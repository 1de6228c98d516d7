import filecmp
import json

import numpy as np
import pytest

from surggap.cli import main
from surggap.features import FeatureSet, VideoFeatures, write_manifest
from surggap.synthetic import gaussian_cloud_set, skill_dataset, write_fixtures


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def small_manifest(tmp_path):
    fs = skill_dataset("tiny", class_sizes=(4, 4), snippets=4, frames=1, dim=6, seed=5)
    return str(write_manifest(fs, tmp_path / "tiny"))


def test_gap_self_is_zero(capsys, fixtures):
    a = str(fixtures / "gap_a" / "manifest.json")
    code, out, _ = _run(capsys, "gap", "--a", a, "--b", a)
    assert code == 0
    res = json.loads(out)
    assert res["value"] == 0.0
    assert set(res) == {"value", "solver", "epsilon", "max_points", "seed", "points_a", "points_b"}


def test_gap_sinkhorn_close_to_exact(capsys, fixtures):
    a, b = (str(fixtures / n / "manifest.json") for n in ("gap_a", "gap_b"))
    _, exact, _ = _run(capsys, "gap", "--a", a, "--b", b)
    _, sk, _ = _run(capsys, "gap", "--a", a, "--b", b, "--solver", "sinkhorn", "--epsilon", "0.001")
    ve, vs = json.loads(exact)["value"], json.loads(sk)["value"]
    assert ve > 0 and abs(vs - ve) <= 0.02 * ve


def test_gap_dim_mismatch_exit_3(capsys, tmp_path, fixtures):
    other = write_manifest(gaussian_cloud_set("d5", 2, 3, 5, seed=0), tmp_path / "d5")
    code, _, err = _run(capsys, "gap", "--a", str(fixtures / "gap_a" / "manifest.json"), "--b", str(other))
    assert code == 3
    assert "8" in err and "5" in err


def test_gap_missing_manifest_exit_3(capsys, tmp_path):
    code, _, _ = _run(capsys, "gap", "--a", str(tmp_path / "no.json"), "--b", str(tmp_path / "no.json"))
    assert code == 3


def test_gap_writes_out_file(capsys, tmp_path, fixtures):
    a = str(fixtures / "gap_a" / "manifest.json")
    out = tmp_path / "r" / "gap.json"
    assert _run(capsys, "gap", "--a", a, "--b", a, "--out", str(out))[0] == 0
    assert json.loads(out.read_text())["value"] == 0.0


def test_config_precedence(capsys, tmp_path, fixtures):
    a, b = (str(fixtures / n / "manifest.json") for n in ("gap_a", "gap_b"))
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"a": a, "b": b, "max_points": 10, "seed": 3}))
    _, out, _ = _run(capsys, "gap", "--config", str(cfg))
    assert json.loads(out)["max_points"] == 10 and json.loads(out)["seed"] == 3
    _, out, _ = _run(capsys, "gap", "--config", str(cfg), "--max-points", "20")
    res = json.loads(out)
    assert res["max_points"] == 20 and res["seed"] == 3 and res["points_a"] == 20


def test_config_unknown_key_exit_2(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "red"}))
    assert _run(capsys, "gap", "--config", str(cfg))[0] == 2


def test_config_bad_type_exit_2(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"max_points": "many"}))
    assert _run(capsys, "gap", "--config", str(cfg))[0] == 2


def test_bad_flag_exit_2(capsys):
    assert _run(capsys, "gap", "--solver", "simplex")[0] == 2


def test_eval_writes_cells_and_is_deterministic(capsys, tmp_path, small_manifest):
    args = ["eval", "--manifest", small_manifest, "--shots", "1,2", "--episodes", "3", "--epochs", "3",
            "--channels", "4"]
    assert _run(capsys, *args, "--out", str(tmp_path / "r1"))[0] == 0
    code, out, _ = _run(capsys, *args, "--out", str(tmp_path / "r2"))
    assert code == 0
    names = ["linear_k1.json", "linear_k2.json", "tcn_k1.json", "tcn_k2.json"]
    assert sorted(p.name for p in (tmp_path / "r1").iterdir()) == names
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "r1", tmp_path / "r2", names, shallow=False)
    assert match == names and not mismatch and not errors
    assert "linear 1-shot: acc" in out
    report = json.loads((tmp_path / "r1" / "tcn_k2.json").read_text())
    assert report["config"]["episodes"] == 3 and len(report["per_episode"]) == 3
    assert report["config"]["architecture"] == "tcn-v1"


def test_eval_does_not_modify_inputs(capsys, tmp_path, small_manifest):
    before = {p.name: p.read_bytes() for p in (tmp_path / "tiny").iterdir()}
    _run(capsys, "eval", "--manifest", small_manifest, "--shots", "1", "--episodes", "1", "--epochs", "1",
         "--head", "linear", "--out", str(tmp_path / "r"))
    assert {p.name: p.read_bytes() for p in (tmp_path / "tiny").iterdir()} == before


def test_eval_class_too_small_exit_3(capsys, tmp_path, fixtures):
    m = str(fixtures / "small_class" / "manifest.json")
    code, _, err = _run(capsys, "eval", "--manifest", m, "--shots", "5", "--out", str(tmp_path / "r"))
    assert code == 3
    assert "proficient" in err


def test_eval_unusual_shots_need_flag(capsys, tmp_path, small_manifest):
    args = ["eval", "--manifest", small_manifest, "--shots", "3", "--episodes", "1", "--epochs", "1",
            "--head", "linear", "--out", str(tmp_path / "r")]
    assert _run(capsys, *args)[0] == 2
    assert _run(capsys, *args, "--allow-any-shots")[0] == 0


def test_eval_missing_grs_exit_2(capsys, tmp_path):
    videos = tuple(VideoFeatures(f"v{i}", np.zeros((2, 1, 3), np.float32)) for i in range(4))
    m = write_manifest(FeatureSet("nogrs", 3, videos), tmp_path / "nogrs")
    assert _run(capsys, "eval", "--manifest", str(m), "--out", str(tmp_path / "r"))[0] == 2


def _write_reports(directory, accs):
    directory.mkdir()
    for (head, k), acc in accs.items():
        rep = {"config": {"head": head, "k": k}, "per_episode": [], "mean_accuracy": acc,
               "std_accuracy": 0.0, "mean_f1": acc - 10, "std_f1": 0.0}
        (directory / f"{head}_k{k}.json").write_text(json.dumps(rep))
    return directory


def test_gains_identity(capsys, tmp_path):
    d = _write_reports(tmp_path / "u", {("linear", 1): 60.0, ("tcn", 1): 70.0})
    code, out, _ = _run(capsys, "gains", "--combined", f"U={d}", "--baseline", f"R={d}")
    assert code == 0
    assert out == "comparison,avg_accuracy_gain,avg_f1_gain\nU vs R,+0.00,+0.00\n"


def test_gains_known_means(capsys, tmp_path):
    cells = [("linear", 1), ("linear", 2), ("linear", 5)]
    u = _write_reports(tmp_path / "u", dict(zip(cells, (61.0, 67.0, 75.0))))
    r = _write_reports(tmp_path / "r", dict(zip(cells, (60.0, 66.0, 74.0))))
    s = _write_reports(tmp_path / "s", dict(zip(cells, (62.0, 68.0, 70.0))))
    out_csv = tmp_path / "gains.csv"
    code, table, _ = _run(capsys, "gains", "--combined", f"U={u}", "--baseline", f"R={r}", "--baseline",
                          f"S={s}", "--out", str(out_csv))
    assert code == 0
    assert out_csv.read_text().splitlines() == [
        "comparison,avg_accuracy_gain,avg_f1_gain",
        "U vs R,+1.00,+1.00",
        "U vs S,+1.00,+1.00",
    ]
    assert "Avg. Accuracy Gain" in table and "Avg. F1-score Gain" in table


def test_gains_cell_mismatch_exit_3(capsys, tmp_path):
    u = _write_reports(tmp_path / "u", {("linear", 1): 60.0})
    r = _write_reports(tmp_path / "r", {("linear", 2): 60.0})
    assert _run(capsys, "gains", "--combined", str(u), "--baseline", str(r))[0] == 3


def test_selftest_passes(capsys):
    code, out, _ = _run(capsys, "selftest")
    assert code == 0
    assert "FAIL" not in out and out.count("PASS") == 4


def test_bundled_fixtures_match_generator(tmp_path, fixtures):
    write_fixtures(tmp_path)
    for name in ("gap_a", "gap_b", "skill33", "small_class"):
        fresh = sorted(p.name for p in (tmp_path / name).iterdir())
        assert fresh == sorted(p.name for p in (fixtures / name).iterdir())
        for f in fresh:
            assert (tmp_path / name / f).read_bytes() == (fixtures / name / f).read_bytes(), f
