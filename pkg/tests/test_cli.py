import json

from casa.cli import main

SMALL = """
segment_lengths = 150, 150
styles = 0:0.03:1:0, 1.2:0.03:0.9:0.25
base_size = 100
test_size = 40
overlap = 20
M = 32
base_epochs = 5
"""


def test_run_report_generate(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text(SMALL)
    for policy in ("casa", "nal"):
        out = tmp_path / f"{policy}-0"
        assert main(["run", "--config", str(cfg), "--seed", "0", "--policy", policy, "--out", str(out), "--no-plots"]) == 0
        meta = json.loads((out / "run_meta.json").read_text())
        assert meta["config"]["policy"] == policy.upper() and meta["config"]["segment_lengths"] == [150, 150]
    assert main(["bounds", "--config", str(cfg), "--seed", "0", "--out", str(tmp_path / "casa-0")]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "*-0"), "--out", str(tmp_path / "table.md")]) == 0
    text = capsys.readouterr().out
    assert "| NAL |" in text and "| JModel |" in text and (tmp_path / "table.md").read_text() == text
    assert main(["generate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "d.ndjson")]) == 0
    assert len((tmp_path / "d.ndjson").read_text().splitlines()) == 1 + 100 + 300 + 2 * (40 + 100)


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("beta = 3\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2
    assert "error" in capsys.readouterr().err
