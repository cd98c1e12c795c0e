import json
from pathlib import Path

import numpy as np
import pytest

from kgalign.checkpoint import MANIFEST, load_checkpoint, save_checkpoint
from kgalign.cli import main, parse_variants
from kgalign.encoder import EncoderConfig, PairGraph, init_parameters, relation_importance
from kgalign.graph import is_isomorphic_under, load_graph_pair

SMALL = {
    "mode": "basic",
    "encoder": {"dim": 16, "depth": 2, "n_proxies": 8},
    "train": {"epochs": 4, "eval_every": 2},
    "synth": {"entity_count": 60, "relation_count": 4, "mean_degree": 4.0, "edge_noise": 0.1,
              "seed_ratio": 0.4, "rng_seed": 3},
}


def report_block(text):
    lines = text.splitlines()
    a, b = lines.index("--- begin report ---"), lines.index("--- end report ---")
    return dict(line.split("\t", 1) for line in lines[a + 1:b])


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.json"
    path.write_text(json.dumps(SMALL))
    return path


@pytest.fixture
def trained(tmp_path, small_config, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(small_config), "--output", str(out)]) == 0
    return out, report_block(capsys.readouterr().out)


class TestTrain:
    def test_artifacts(self, trained):
        out, rows = trained
        for name in ("config.json", "history.jsonl", "report.json", "truth.tsv", "checkpoint/manifest.json",
                     "dataset/triples_1", "figures/training.png", "figures/degree_hits1.png"):
            assert (out / name).is_file(), name
        history = [json.loads(l) for l in (out / "history.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in history] == [1, 2, 3, 4]
        assert set(history[0]) >= {"epoch", "loss", "dev_hits1", "elapsed_s"}
        report = json.loads((out / "report.json").read_text())
        assert report["status"] == "ok" and report["metrics"]["count"] == 36
        assert float(rows["hits@1"]) == pytest.approx(report["metrics"]["hits"]["1"], abs=1e-6)
        assert rows["figure"].endswith("degree_hits1.png")
        assert report["timing"]["total_s"] >= report["timing"]["train_s"]
        assert not [p for p in out.parent.iterdir() if p.name.startswith(".run.")]

    def test_echoed_config_reproduces_the_run(self, trained, tmp_path, capsys):
        out, rows = trained
        again = tmp_path / "again"
        assert main(["train", "--config", str(out / "config.json"), "--output", str(again)]) == 0
        assert report_block(capsys.readouterr().out)["hits@1"] == rows["hits@1"]
        assert (again / "checkpoint" / "entity.f32").read_bytes() == (out / "checkpoint" / "entity.f32").read_bytes()

    def test_existing_output_needs_overwrite(self, trained, small_config):
        out, _ = trained
        assert main(["train", "--config", str(small_config), "--output", str(out)]) == 1
        assert main(["train", "--config", str(small_config), "--output", str(out), "--overwrite"]) == 0

    def test_semi_without_augmentation_matches_basic(self, tmp_path, small_config, capsys):
        assert main(["train", "--config", str(small_config), "--output", str(tmp_path / "b")]) == 0
        assert main(["train", "--config", str(small_config), "--output", str(tmp_path / "s"), "--mode", "semi",
                     "--no-augment"]) == 0
        capsys.readouterr()
        mb = json.loads((tmp_path / "b" / "report.json").read_text())["metrics"]
        ms = json.loads((tmp_path / "s" / "report.json").read_text())["metrics"]
        mb.pop("runtime_s"), ms.pop("runtime_s")
        assert json.dumps(mb, sort_keys=True) == json.dumps(ms, sort_keys=True)

    def test_semi_mode_writes_pseudo_pairs(self, tmp_path, small_config, capsys):
        out = tmp_path / "semi"
        assert main(["train", "--config", str(small_config), "--output", str(out), "--mode", "semi",
                     "--set", "augment.min_margin=0"]) == 0
        rows = report_block(capsys.readouterr().out)
        assert int(rows["pseudo_pairs"]) == len((out / "pseudo_pairs.tsv").read_text().splitlines())

    def test_missing_dataset_leaves_nothing(self, tmp_path, small_config):
        out = tmp_path / "never"
        code = main(["train", "--config", str(small_config), "--dataset", str(tmp_path / "nope"),
                     "--output", str(out)])
        assert code == 2
        assert not out.exists()
        assert [p.name for p in tmp_path.iterdir()] == ["small.json"]

    def test_unknown_key_is_a_usage_error(self, tmp_path, small_config):
        assert main(["train", "--config", str(small_config), "--set", "train.speed=3",
                     "--output", str(tmp_path / "x")]) == 1
        assert not (tmp_path / "x").exists()

    def test_bad_arguments(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 1

    def test_dataset_directory_input(self, tmp_path, capsys):
        assert main(["synth", "--output", str(tmp_path / "data"), "--entities", "40", "--seed", "1"]) == 0
        cfg = dict(SMALL, dataset=str(tmp_path / "data"))
        (tmp_path / "c.json").write_text(json.dumps(cfg))
        assert main(["train", "--config", str(tmp_path / "c.json"), "--output", str(tmp_path / "r")]) == 0
        meta = json.loads((tmp_path / "r" / "checkpoint" / MANIFEST).read_text())["meta"]
        assert meta["train_fraction"] == 0.3 and Path(meta["dataset"]).is_absolute()
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(tmp_path / "r" / "checkpoint")]) == 0
        ev = json.loads(capsys.readouterr().out)
        rep = json.loads((tmp_path / "r" / "report.json").read_text())["metrics"]
        assert ev["hits"] == rep["hits"] and ev["mrr"] == rep["mrr"]


class TestEval:
    def test_reproduces_training_report_and_is_deterministic(self, trained, tmp_path, capsys):
        out, _ = trained
        argv = ["eval", "--checkpoint", str(out / "checkpoint")]
        assert main(argv + ["--output", str(tmp_path / "e1.json")]) == 0
        assert main(argv + ["--output", str(tmp_path / "e2.json")]) == 0
        capsys.readouterr()
        first = (tmp_path / "e1.json").read_text()
        assert first == (tmp_path / "e2.json").read_text()
        rep = json.loads((out / "report.json").read_text())["metrics"]
        ev = json.loads(first)
        assert ev["hits"] == rep["hits"] and ev["mrr"] == rep["mrr"]

    def test_options(self, trained, tmp_path, capsys):
        out, _ = trained
        assert main(["eval", "--checkpoint", str(out / "checkpoint"), "--candidates", "all", "--k", "1,5",
                     "--csls-k", "0", "--rank-dump", str(tmp_path / "ranks.tsv"),
                     "--figure", str(tmp_path / "deg.png")]) == 0
        ev = json.loads(capsys.readouterr().out)
        assert set(ev["hits"]) == {"1", "5"}
        ranks = (tmp_path / "ranks.tsv").read_text().splitlines()
        assert len(ranks) == 36 and all(1 <= int(r.split("\t")[2]) <= 60 for r in ranks)
        assert (tmp_path / "deg.png").stat().st_size > 0

    def test_shape_mismatch(self, trained, tmp_path):
        out, _ = trained
        assert main(["synth", "--output", str(tmp_path / "other"), "--entities", "30"]) == 0
        assert main(["eval", "--checkpoint", str(out / "checkpoint"), "--dataset", str(tmp_path / "other"),
                     "--seed-count", "5"]) == 2

    def test_corrupted_manifest(self, trained, capsys):
        out, _ = trained
        m = json.loads((out / "checkpoint" / MANIFEST).read_text())
        m["arrays"][0]["dtype"] = "f16"
        (out / "checkpoint" / MANIFEST).write_text(json.dumps(m))
        assert main(["eval", "--checkpoint", str(out / "checkpoint")]) == 2
        assert "'dtype'" in capsys.readouterr().err

    def test_untrained_parameters_score_at_chance(self, tmp_path, capsys):
        assert main(["synth", "--output", str(tmp_path / "d"), "--entities", "200", "--seeds", "0.5",
                     "--seed", "5"]) == 0
        pair = load_graph_pair(tmp_path / "d", seed_count=100)
        assert len(pair.test_pairs) == 100
        enc = EncoderConfig(dim=32, depth=2, n_proxies=8)
        graph = PairGraph.from_pair(pair)
        hits = []
        for seed in range(5):
            params = init_parameters(graph.entity_count, graph.relation_count, enc, seed)
            ck = save_checkpoint(tmp_path / f"ck{seed}", params, enc, {"dataset": str(tmp_path / "d"),
                                                                       "seed_count": 100})
            capsys.readouterr()
            assert main(["eval", "--checkpoint", str(ck)]) == 0
            hits.append(json.loads(capsys.readouterr().out)["hits"]["1"])
        # chance is 1/100; three binomial standard deviations of one run is about 0.03
        assert all(abs(h - 0.01) <= 3 * np.sqrt(0.01 * 0.99 / 100) for h in hits)


class TestSynth:
    def test_files_are_deterministic_and_load_cleanly(self, tmp_path, caplog, capsys):
        argv = ["--entities", "50", "--noise", "0.2", "--seed", "9"]
        assert main(["synth", "--output", str(tmp_path / "a")] + argv) == 0
        assert main(["synth", "--output", str(tmp_path / "b")] + argv) == 0
        rows = report_block(capsys.readouterr().out)
        assert rows["entities"] == "50"
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
        caplog.clear()
        load_graph_pair(tmp_path / "a")
        assert not [r for r in caplog.records if r.levelname == "WARNING"]

    def test_noiseless_output_is_isomorphic(self, tmp_path):
        assert main(["synth", "--output", str(tmp_path / "a"), "--noise", "0", "--entities", "40"]) == 0
        pair = load_graph_pair(tmp_path / "a", train_fraction=None)
        truth = {}
        for line in (tmp_path / "a" / "truth.tsv").read_text().splitlines():
            left, right = line.split("\t")
            truth[pair.g1.entity_ids.index(left)] = pair.g2.entity_ids.index(right)
        assert is_isomorphic_under(pair.g1, pair.g2, np.array([truth[i] for i in range(40)]))

    def test_invalid_parameters(self, tmp_path):
        assert main(["synth", "--output", str(tmp_path / "a"), "--entities", "1"]) == 1
        assert not (tmp_path / "a").exists()


class TestAblate:
    def test_empty_list_trains_full_model_only(self, tmp_path, small_config, capsys):
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(small_config), "--variants", "", "--output", str(out)]) == 0
        doc = json.loads((out / "ablation.json").read_text())
        assert [v["variant"] for v in doc["variants"]] == ["full"]
        assert capsys.readouterr().out == (out / "ablation.txt").read_text()
        assert (out / "figures" / "ablation.png").is_file()

    def test_variants_and_deltas(self, tmp_path, small_config, capsys):
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(small_config), "--variants=-MHE,loss=triplet",
                     "--output", str(out)]) == 0
        rows = json.loads((out / "ablation.json").read_text())["variants"]
        assert [r["variant"] for r in rows] == ["full", "-MHE", "loss=triplet"]
        assert rows[0]["delta_hits1"] == 0.0
        for r in rows[1:]:
            assert r["delta_hits1"] == pytest.approx(r["hits1"] - rows[0]["hits1"])
        table = capsys.readouterr().out.splitlines()
        assert table[0].split()[:2] == ["variant", "hits@1"] and len(table) == 5

    def test_unknown_variant(self, tmp_path, small_config):
        assert main(["ablate", "--config", str(small_config), "--variants=-XYZ",
                     "--output", str(tmp_path / "a")]) == 1

    def test_parse_variants(self):
        assert parse_variants("") == ["full"]
        assert parse_variants("-RA,full,-RA,loss=tuns") == ["full", "-RA", "loss=tuns"]


class TestImportance:
    def test_format_and_scores(self, trained, tmp_path, capsys):
        out, _ = trained
        capsys.readouterr()
        assert main(["importance", "--checkpoint", str(out / "checkpoint"),
                     "--output", str(tmp_path / "imp.tsv")]) == 0
        text = capsys.readouterr().out
        assert text == (tmp_path / "imp.tsv").read_text()
        lines = [l.split("\t") for l in text.splitlines()]
        params, _, _ = load_checkpoint(out / "checkpoint")
        want = sorted(relation_importance(params.astype(np.float64)).tolist(), reverse=True)
        assert [float(l[2]) for l in lines] == want
        assert all(len(l) == 4 and l[3] in ("High", "Medium", "Low") for l in lines)
        raw_ids = {l[0] for l in lines}
        assert {"self-loop:1", "self-loop:2"} <= raw_ids and any(r.endswith("^-1") for r in raw_ids)

    def test_zero_attention_is_all_medium(self, trained, capsys):
        out, _ = trained
        params, enc, meta = load_checkpoint(out / "checkpoint")
        params.attention[:] = 0
        save_checkpoint(out / "zero", params, enc, meta)
        capsys.readouterr()
        assert main(["importance", "--checkpoint", str(out / "zero")]) == 0
        lines = [l.split("\t") for l in capsys.readouterr().out.splitlines()]
        assert all(l[2] == "0.0" and l[3] == "Medium" for l in lines)
