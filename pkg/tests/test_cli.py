import json
import subprocess
import sys

import pytest

from hetgraph.cli import main
from hetgraph.data import load_dataset

TINY_CFG = """\
hidden = 8
embedding = 4
mlp_hidden = 8
rrm_hidden = 8
rrm_fc = 8
geo_dim = 4
feature_channels = 4
feature_grid = 8
batch = 4
"""


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert run("dataset", "synth", "--out", d / "all.json", "--count", 24, "--seed", 3) == 0
    assert run("dataset", "split", "--input", d / "all.json", "--train-out", d / "train.json",
               "--test-out", d / "test.json", "--seed", 1) == 0
    (d / "tiny.cfg").write_text(TINY_CFG)
    return d


def train(d, name):
    return run("train", "--train", d / "train.json", "--checkpoint", d / name, "--config", d / "tiny.cfg",
               "--steps", 6, "--eval-every", 3, "--quiet", "--log", d / f"{name}.log")


class TestCli:
    def test_help_exits_zero(self):
        out = subprocess.run([sys.executable, "-m", "hetgraph", "build-het", "--help"], capture_output=True)
        assert out.returncode == 0 and b"--threshold" in out.stdout

    def test_missing_required_exits_two(self):
        with pytest.raises(SystemExit) as exc:
            run("eval", "--data", "x.json", "--report", "r.json")
        assert exc.value.code == 2

    def test_missing_file_exits_one(self, tmp_path, capsys):
        assert run("build-het", "--input", tmp_path / "nope.json", "--out", tmp_path / "o.json") == 1
        assert "nope.json" in capsys.readouterr().err

    def test_bad_threshold(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            run("build-het", "--input", "x", "--threshold", "1.5", "--out", "y")
        assert exc.value.code == 2

    def test_split_sizes(self, workspace):
        assert len(load_dataset(workspace / "train.json").scenes) == 17
        assert len(load_dataset(workspace / "test.json").scenes) == 7

    def test_build_het_and_area_map(self, workspace):
        d = workspace
        assert run("build-het", "--input", d / "test.json", "--out", d / "het.json") == 0
        doc = json.loads((d / "het.json").read_text())
        assert len(doc["images"]) == 7 and doc["images"][0]["strategy"] == "ifs"
        assert run("area-map", "--input", d / "test.json", "--out", d / "maps") == 0
        assert len(list((d / "maps").iterdir())) == 7

    def test_end_to_end(self, workspace):
        d = workspace
        assert train(d, "a") == 0
        lines = [json.loads(x) for x in (d / "a.log").read_text().splitlines()]
        assert any(e["event"] == "validation" for e in lines)
        for pairs in ("ep", "sp"):
            assert run("eval", "--checkpoint", d / "a", "--data", d / "test.json", "--pairs", pairs,
                       "--k", "5,20", "--kr", "1", "--report", d / f"r_{pairs}.json") == 0
        ep = json.loads((d / "r_ep.json").read_text())
        sp = json.loads((d / "r_sp.json").read_text())
        assert set(ep["metrics"]["triplet"]) == {"R@5", "R@20", "kR@1"}
        assert sp["meanCandidates"] < ep["meanCandidates"]
        assert run("analyze", "depth-dist", "--checkpoint", d / "a", "--data", d / "test.json",
                   "--out", d / "dd.json") == 0
        assert run("analyze", "conf-by-depth", "--checkpoint", d / "a", "--data", d / "test.json",
                   "--out", d / "cd.json", "--samples", 20, "--repeats", 2) == 0
        assert run("analyze", "cs-curve", "--data", d / "test.json", "--bins", 5,
                   "--out", d / "cs.json", "--csv", d / "cs.csv") == 0
        assert (d / "cs.csv").read_text().startswith("indicator")

    def test_deterministic_outputs(self, workspace):
        d = workspace
        for name in ("b1", "b2"):
            (d / name).mkdir()
            assert train(d, f"{name}/m") == 0
            run("eval", "--checkpoint", d / name / "m", "--data", d / "test.json",
                "--report", d / name / "report.json")
        for f in ("m.bin", "m.json", "report.json"):
            assert (d / "b1" / f).read_bytes() == (d / "b2" / f).read_bytes()

    def test_eval_sggen_without_proposals(self, workspace, capsys):
        d = workspace
        if not (d / "a.bin").exists():
            train(d, "a")
        assert run("eval", "--checkpoint", d / "a", "--data", d / "test.json", "--protocol", "sggen",
                   "--report", d / "g.json") == 1
        assert "proposals" in capsys.readouterr().err

    def test_tag_keys_and_filter(self, workspace, tmp_path):
        d = workspace
        caps = tmp_path / "caps.jsonl"
        caps.write_text(json.dumps({"imageId": "synth-3-0", "subjectSynset": "cls0.n.01",
                                    "objectSynset": "cls1.n.01"}) + "\n")
        assert run("dataset", "tag-keys", "--input", d / "all.json", "--captions", caps,
                   "--out", tmp_path / "tagged.json") == 0
        (tmp_path / "sub").mkdir()
        assert run("dataset", "split", "--input", d / "all.json", "--train-out", tmp_path / "sub" / "tr.json",
                   "--test-out", tmp_path / "te.json") == 0
        assert load_dataset(tmp_path / "sub" / "tr.json").scenes[0].saliency is not None
        assert load_dataset(tmp_path / "tagged.json").scenes[0].saliency is not None
        assert run("dataset", "filter", "--input", d / "all.json", "--k-obj", 3, "--k-pred", 2,
                   "--out", tmp_path / "f.json") == 0
        f = load_dataset(tmp_path / "f.json")
        assert f.vocab.num_classes <= 3 and f.vocab.num_predicates <= 3
