import json

import pytest

from sotif_sentinel.cli import main
from sotif_sentinel.fusion import BoundingBox, Detection, NetworkFramePredictions, predictions_to_records


def write_jsonl(path, frames):
    with open(path, "w") as fh:
        for f in frames:
            for r in predictions_to_records(f):
                fh.write(json.dumps(r) + "\n")


def det(x, p=0.9):
    s = [0.01] * 11
    s[6] = p
    return Detection(BoundingBox(x, 0.0, x + 10.0, 10.0), tuple(s))


def read_jsonl(path):
    return [json.loads(line) for line in open(path) if line.strip()]


def test_fuse_default_threshold(tmp_path):
    inp, out = tmp_path / "d.jsonl", tmp_path / "f.jsonl"
    # IoU = 0.9: merges at 0.9, not at the 0.95 default
    shift = 10 * (1 - 0.9) / 1.9
    write_jsonl(inp, [[NetworkFramePredictions(0, 0, (det(0.0),)), NetworkFramePredictions(1, 0, (det(shift),))]])
    assert main(["fuse", "-i", str(inp), "-o", str(out)]) == 0
    assert len(read_jsonl(out)) == 2
    assert main(["fuse", "--threshold", "0.89", "-i", str(inp), "-o", str(out)]) == 0
    recs = read_jsonl(out)
    assert len(recs) == 1 and recs[0]["d"] == 2


def test_fuse_empty_input(tmp_path):
    inp, out = tmp_path / "d.jsonl", tmp_path / "f.jsonl"
    inp.write_text("")
    assert main(["fuse", "-i", str(inp), "-o", str(out)]) == 0
    assert out.read_text() == ""


def test_fuse_single_network_passthrough(tmp_path):
    inp, out = tmp_path / "d.jsonl", tmp_path / "f.jsonl"
    write_jsonl(inp, [[NetworkFramePredictions(0, 0, (det(0.0), det(50.0)))]])
    assert main(["fuse", "-i", str(inp), "-o", str(out)]) == 0
    assert [r["d"] for r in read_jsonl(out)] == [1, 1]


def test_fuse_malformed_exit_2(tmp_path, capsys):
    inp = tmp_path / "d.jsonl"
    inp.write_text('{"frame": 0, "network": 0, "detections": []}\n{"frame": 0, "network": 1, "detections": [{"box": "x"}]}\n')
    assert main(["fuse", "-i", str(inp)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_assess_pipeline(tmp_path):
    inp, fused, out = tmp_path / "d.jsonl", tmp_path / "f.jsonl", tmp_path / "a.jsonl"
    write_jsonl(inp, [[NetworkFramePredictions(n, 0, (det(0.0, 0.5),)) for n in range(5)]])
    assert main(["fuse", "-i", str(inp), "-o", str(fused)]) == 0
    assert main(["assess", "-i", str(fused), "-o", str(out)]) == 0
    rec = read_jsonl(out)[0]
    # ln 2 + 10 * H(0.01) = 1.25316 -> medium
    assert rec["E_pe_star"] == pytest.approx(1.25316, abs=1e-5)
    assert rec["level"] == 1 and rec["d"] == 5
    assert main(["assess", "--detections", "-i", str(inp), "-o", str(out)]) == 0
    assert read_jsonl(out)[0] == rec


def test_field_dump(tmp_path):
    out = tmp_path / "pf.csv"
    assert main(["field-dump", "--object", "traffic_cone,0,0,0,1", "--xmin", "0", "--xmax", "0", "--ymin", "0", "--ymax", "0", "--no-road", "-o", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "X,Y,PF" and float(lines[1].split(",")[2]) == 50.0


def test_field_dump_bad_object():
    assert main(["field-dump", "--object", "cone"]) == 1


def test_unknown_case_exit_1():
    with pytest.raises(SystemExit) as ei:
        main(["compare", "--case", "9"])
    assert ei.value.code == 1


def test_compare_writes_outputs(tmp_path, capsys):
    rc = main(["--set", "scenario.duration=3.0", "compare", "--case", "2", "--out-dir", str(tmp_path)])
    assert rc == 0
    summary = json.loads((tmp_path / "case2_outcome.json").read_text())
    assert summary["puadm"]["pass_distance"] > summary["mpc-yolo"]["pass_distance"]
    assert (tmp_path / "case2_mpc-yolo.csv").exists() and (tmp_path / "case2_puadm.csv").exists()

    svg1, svg2 = tmp_path / "a.svg", tmp_path / "b.svg"
    csvs = [str(tmp_path / "case2_mpc-yolo.csv"), str(tmp_path / "case2_puadm.csv")]
    assert main(["plot", *csvs, "-o", str(svg1)]) == 0
    assert main(["plot", *csvs, "-o", str(svg2)]) == 0
    assert svg1.read_bytes() == svg2.read_bytes()


def test_compare_case4_reports_similarity(capsys):
    assert main(["--set", "scenario.duration=1.0", "compare", "--case", "4"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["lateral_rms_difference"] == pytest.approx(0.0, abs=1e-12)
    assert "lateral_rms_ratio" in summary


def test_plot_missing_column(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("t,X\n0,0\n")
    assert main(["plot", str(bad), "-o", str(tmp_path / "x.svg")]) == 2


def test_print_config(capsys):
    assert main(["--set", "scenario.seed=9", "--print-config"]) == 0
    out = capsys.readouterr().out
    assert "[perception]" in out and "affinity_threshold = 0.95" in out and "seed = 9" in out


def test_bad_override_exit_2():
    assert main(["--set", "scenario.v_e=fast", "--print-config"]) == 2


def test_sweep(tmp_path, monkeypatch):
    monkeypatch.setenv("SOTIF_SENTINEL_THREADS", "1")
    out = tmp_path / "s.csv"
    rc = main(["--set", "scenario.duration=0.5", "sweep", "--param", "scenario.x_0", "--values", "25,30", "--policy", "puadm", "-o", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("param,value,policy")


def test_simulate_writes_log(tmp_path):
    log = tmp_path / "run.csv"
    rc = main(["--set", "scenario.duration=0.5", "simulate", "--case", "3", "--policy", "mpc-yolo", "--out", str(log), "--outcome", str(tmp_path / "o.json")])
    assert rc == 0
    assert log.read_text().startswith("t,X,Y,u")
    assert json.loads((tmp_path / "o.json").read_text())["policy"] == "mpc-yolo"
