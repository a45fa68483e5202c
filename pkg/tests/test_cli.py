import json
from pathlib import Path

import pytest

from ccx.cli import EXIT_IO, EXIT_USAGE, main

DATA = Path(__file__).parent / "data"

SMALL_CONFIG = """
encoder.image_size = 16
encoder.depth = 4
encoder.d_model = 8
encoder.heads = 2
encoder.taps = -3,-2
decoder.c_model = 12
decoder.depth = 2
decoder.heads = 2
decoder.max_len = 12
stage1.epochs = 1
stage2.epochs = 1
stage3.epochs = 1
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """A tiny dataset plus one completed training run."""
    root = tmp_path_factory.mktemp("cli")
    datadir = root / "data"
    assert main(["gen-data", "--pairs", "3", "--seed", "5",
                 "--out", str(datadir), "--image-size", "16"]) == 0
    cfg_path = root / "train.cfg"
    cfg_path.write_text(SMALL_CONFIG
                        + f"data.manifest = {datadir / 'manifest.jsonl'}\n"
                        + f"train.out = {root / 'run'}\n")
    assert main(["train", "--config", str(cfg_path)]) == 0
    return {"root": root, "config": cfg_path,
            "manifest": datadir / "manifest.jsonl",
            "checkpoint": root / "run" / "stage3"}


def _golden_files(tmp_path):
    hyps, refs = [], []
    for line in (DATA / "golden_corpus.jsonl").read_text().splitlines():
        o = json.loads(line)
        hyps.append(o["hyp"])
        refs.append(" ||| ".join(o["refs"]))
    h = tmp_path / "hyp.txt"
    r = tmp_path / "ref.txt"
    h.write_text("\n".join(hyps) + "\n")
    r.write_text("\n".join(refs) + "\n")
    return h, r


class TestGenData:
    def test_repeatable_checksum(self, tmp_path, capsys):
        outs = []
        for name in ("a", "b"):
            assert main(["gen-data", "--pairs", "4", "--seed", "9",
                         "--out", str(tmp_path / name)]) == 0
            lines = capsys.readouterr().out.splitlines()
            outs.append(next(l.split()[-1] for l in lines
                             if l.startswith("manifest-sha256:")))
        assert outs[0] == outs[1]

    def test_zero_pairs_usage_error(self, tmp_path):
        assert main(["gen-data", "--pairs", "0",
                     "--out", str(tmp_path / "x")]) == EXIT_USAGE


class TestConfigInit:
    def test_toy_profile_round_trips(self, tmp_path, capsys):
        from ccx import config as cfgmod
        out = tmp_path / "toy.cfg"
        assert main(["config-init", "--out", str(out)]) == 0
        cfg = cfgmod.load_config(out)
        assert cfg == dict(cfgmod.DEFAULTS)
        assert (cfg["stage1.mode"], cfg["stage2.mode"], cfg["stage3.mode"]) == \
            ("flatten", "flatten", "random_choice")

    def test_published_profile_differs(self, tmp_path):
        from ccx import config as cfgmod
        out = tmp_path / "published.cfg"
        assert main(["config-init", "--out", str(out), "--profile", "published"]) == 0
        cfg = cfgmod.load_config(out)
        assert cfg["stage2.batch_size"] == 256
        assert cfg["stage2.base_lr"] == pytest.approx(1e-5)


class TestTrain:
    def test_missing_config_is_usage_error(self, tmp_path):
        assert main(["train", "--config", str(tmp_path / "nope.cfg")]) == EXIT_USAGE

    def test_unknown_key_is_usage_error(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("bogus.key = 1\n")
        assert main(["train", "--config", str(p)]) == EXIT_USAGE

    def test_full_run_writes_stage_checkpoints(self, trained):
        for stage in (1, 2, 3):
            ck = trained["root"] / "run" / f"stage{stage}"
            assert (ck / "state").exists()
            assert (ck / "vocab.txt").exists()
            assert any((ck / "params").iterdir())


class TestCaption:
    def test_deterministic_output(self, trained, capsys):
        outs = []
        for _ in range(2):
            assert main(["caption", "--checkpoint", str(trained["checkpoint"]),
                         "--config", str(trained["config"]),
                         "--manifest", str(trained["manifest"]),
                         "--pair", "pair0000"]) == 0
            outs.append(capsys.readouterr().out)
        assert outs[0] == outs[1]

    def test_unknown_pair_usage_error(self, trained, capsys):
        assert main(["caption", "--checkpoint", str(trained["checkpoint"]),
                     "--config", str(trained["config"]),
                     "--manifest", str(trained["manifest"]),
                     "--pair", "nope"]) == EXIT_USAGE
        capsys.readouterr()


class TestEvalMetrics:
    def test_golden_fixture_json(self, tmp_path, capsys):
        h, r = _golden_files(tmp_path)
        out = tmp_path / "report.json"
        assert main(["eval-metrics", "--hyp", str(h), "--ref", str(r),
                     "--json-out", str(out)]) == 0
        capsys.readouterr()
        got = json.loads(out.read_text())
        gold = json.loads((DATA / "golden_metrics.json").read_text())
        for key, val in gold.items():
            assert got[key] == pytest.approx(val, abs=1e-9), key

    def test_identical_files_score_perfect(self, tmp_path, capsys):
        h = tmp_path / "h.txt"
        r = tmp_path / "r.txt"
        h.write_text("a road is built\nthe tree is gone\n")
        r.write_text("a road is built\nthe tree is gone\n")
        out = tmp_path / "report.json"
        assert main(["eval-metrics", "--hyp", str(h), "--ref", str(r),
                     "--json-out", str(out)]) == 0
        capsys.readouterr()
        assert json.loads(out.read_text())["bleu4"] == pytest.approx(100.0)

    def test_line_count_mismatch_io_error(self, tmp_path, capsys):
        h = tmp_path / "h.txt"
        r = tmp_path / "r.txt"
        h.write_text("a\nb\n")
        r.write_text("a\n")
        assert main(["eval-metrics", "--hyp", str(h), "--ref", str(r)]) == EXIT_IO
        capsys.readouterr()

    def test_missing_inputs_usage_error(self, capsys):
        assert main(["eval-metrics"]) == EXIT_USAGE
        capsys.readouterr()

    def test_checkpoint_mode(self, trained, capsys):
        assert main(["eval-metrics", "--checkpoint", str(trained["checkpoint"]),
                     "--config", str(trained["config"]),
                     "--manifest", str(trained["manifest"])]) == 0
        out = capsys.readouterr().out
        assert "bleu4" in out and "cider_d" in out


class TestGradcheck:
    def test_enhancer_suite_passes(self, capsys):
        assert main(["gradcheck", "--module", "enhancer"]) == 0
        assert "enhancer" in capsys.readouterr().out
