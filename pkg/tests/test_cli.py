"""End-to-end command-line runs on temporary directories."""

import csv
import json

import pytest
import yaml

from dexgen.cli import main
from dexgen.dataset import read_manifest


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def demos(tmp_path_factory):
    out = tmp_path_factory.mktemp("demos")
    assert main(["demo", "two-bin-sort", "--n", "3", "--seed", "5", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def segmented(tmp_path_factory, demos):
    out = tmp_path_factory.mktemp("seg")
    assert main(["segment", "two-bin-sort", str(demos), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def dataset(tmp_path_factory, segmented):
    out = tmp_path_factory.mktemp("ds")
    assert main(["generate", "two-bin-sort", str(segmented), "--n", "4", "--seed", "1", "--out", str(out)]) == 0
    return out


def test_demo_rerun_is_byte_identical(tmp_path, demos):
    assert main(["demo", "two-bin-sort", "--n", "3", "--seed", "5", "--out", str(tmp_path)]) == 0
    assert _files(tmp_path) == _files(demos)
    assert sorted(_files(demos)) == [f"two-bin-sort-src{i:03d}.jsonl" for i in range(3)]


def test_seed_from_environment(tmp_path, demos, monkeypatch):
    monkeypatch.setenv("DEXGEN_SEED", "5")
    assert main(["demo", "two-bin-sort", "--n", "3", "--out", str(tmp_path)]) == 0
    assert _files(tmp_path) == _files(demos)


def test_segment_report(segmented):
    report = json.loads((segmented / "segmentation_report.json").read_text())
    assert report == {f"two-bin-sort-src{i:03d}": [] for i in range(3)}


def test_manual_segmentation_matches_heuristic(tmp_path, demos, segmented):
    manual = {}
    for p in sorted(segmented.glob("*.jsonl")):
        header = json.loads(p.read_text().splitlines()[0])
        manual[header["id"]] = header["segmentation"]
    (tmp_path / "manual.yaml").write_text(yaml.safe_dump(manual))
    out = tmp_path / "seg"
    assert main(["segment", "two-bin-sort", str(demos), "--manual", str(tmp_path / "manual.yaml"), "--out", str(out)]) == 0
    assert _files(out) == _files(segmented)


def test_manual_segmentation_wrong_count_exits_2(tmp_path, demos, capsys):
    (tmp_path / "manual.yaml").write_text(yaml.safe_dump({"left": [10], "right": [10]}))
    code = main(["segment", "two-bin-sort", str(demos), "--manual", str(tmp_path / "manual.yaml"), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "expected 2 boundaries" in capsys.readouterr().err


def test_generate_writes_verifiable_dataset(dataset, capsys):
    m = read_manifest(dataset)
    assert len(m["episodes"]) == 4
    assert main(["verify", str(dataset)]) == 0
    assert "ok" in capsys.readouterr().out


def test_replay_of_episode(dataset, tmp_path, capsys):
    m = read_manifest(dataset)
    src = dataset / m["episodes"][0]["file"]
    assert main(["replay", str(src)]) == 0
    lines = src.read_text().splitlines()
    rec = json.loads(lines[8])
    rec["action"]["right"]["pos"][0] += 0.004
    lines[8] = json.dumps(rec)
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    capsys.readouterr()
    assert main(["replay", str(bad)]) == 1
    assert "step 7" in capsys.readouterr().out
    assert main(["replay", str(tmp_path / "missing.jsonl")]) == 2


def test_verify_detects_corruption(dataset, tmp_path, capsys):
    import shutil

    copy = tmp_path / "copy"
    shutil.copytree(dataset, copy)
    m = read_manifest(copy)
    f = copy / m["episodes"][-1]["file"]
    f.write_bytes(f.read_bytes().replace(b'"t":2,', b'"t":9,', 1))
    capsys.readouterr()
    assert main(["verify", str(copy), "--no-replay"]) == 1
    assert "digest mismatch" in capsys.readouterr().out


def test_stats_outputs(dataset, tmp_path):
    out = tmp_path / "stats"
    assert main(["stats", str(dataset), "--out", str(out)]) == 0
    with open(out / "projections.csv") as fh:
        header = next(csv.reader(fh))
    fams = {"eef_left", "hand_left", "eef_right", "hand_right"}
    assert header[:3] == ["label", "episode", "t"]
    for fam in fams:
        assert [h for h in header if h.startswith(fam + "_")] == [f"{fam}_pc1", f"{fam}_pc2"]
    summary = json.loads((out / "stats.json").read_text())
    assert summary["n_episodes"] == 4
    assert (out / "projections.svg").read_text().startswith("<svg")


def test_baseline(segmented, tmp_path):
    out = tmp_path / "bl"
    assert main(["baseline", "two-bin-sort", str(segmented), "--noise", "0", "--n", "3", "--out", str(out)]) == 0
    m = read_manifest(out)
    assert m["kind"] == "demo-noise" and m["gen_stats"]["success_rate"] == 1.0


def test_usage_errors(tmp_path, segmented):
    assert main(["demo", "no-such-task", "--out", str(tmp_path)]) == 2
    assert main(["generate", "two-bin-sort", str(segmented), "--variant", "D9", "--out", str(tmp_path / "x")]) == 2
    args = ["generate", "pour-then-place", str(segmented), "--ordering", "off", "--source-mix", "independent"]
    assert main(args + ["--out", str(tmp_path / "y")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["generate", "two-bin-sort", str(segmented), "--n", "0", "--out", str(tmp_path)])
    assert e.value.code == 2
