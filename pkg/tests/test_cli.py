import numpy as np
import pytest

from owlink.cli import main
from owlink.config import Settings, load_config_file, stage_seed, write_manifest
from helpers import write_triples


@pytest.fixture
def assets(tmp_path):
    """Tiny but trainable open-world dataset on disk."""
    entities = [f"e{i}" for i in range(8)]
    train = []
    for i in range(8):
        train.append((entities[i], "next", entities[(i + 1) % 8]))
        train.append((entities[i], "skip", entities[(i + 2) % 8]))
    valid = [("x0", "next", "e1"), ("x1", "skip", "e3")]
    test = [("y0", "next", "e2"), ("y1", "skip", "e5"), ("e0", "next", "e1")]

    write_triples(tmp_path / "train.txt", train)
    write_triples(tmp_path / "valid.txt", valid)
    write_triples(tmp_path / "test.txt", test)

    rng = np.random.default_rng(0)
    tokens = [f"w{i}" for i in range(8)]
    with open(tmp_path / "vectors.txt", "w") as fh:
        for tok in tokens:
            vec = " ".join(f"{v:.6f}" for v in rng.normal(size=4))
            fh.write(f"{tok} {vec}\n")

    with open(tmp_path / "metadata.tsv", "w") as fh:
        for i, ent in enumerate(entities):
            fh.write(f"{ent}\tw{i}\tw{(i + 1) % 8} w{(i + 2) % 8}\n")
        fh.write("x0\tw0\tw1 w2\n")
        fh.write("x1\tw2\tw3\n")
        fh.write("y0\tw1\tw2 w3\n")
        fh.write("y1\tw4\tw5 w6\n")
    return tmp_path


def run(argv):
    return main([str(a) for a in argv])


def train_kgc(assets, out, extra=()):
    return run([
        "train-kgc", "--train", assets / "train.txt", "--out", out,
        "--family", "distmult", "--dim", "6", "--epochs", "15",
        "--learning-rate", "0.05", "--batch-size", "4", "--seed", "1", *extra,
    ])


class TestTrainKgc:
    def test_writes_checkpoint_log_manifest(self, assets):
        out = assets / "kgc"
        assert train_kgc(assets, out) == 0
        assert (out / "kgc.ckpt").is_file()
        assert (out / "train_log.tsv").read_text().startswith("epoch\tloss")
        manifest = (out / "manifest.txt").read_text()
        assert "command=train-kgc" in manifest
        assert "family=distmult" in manifest

    def test_same_seed_identical_checkpoint(self, assets):
        a, b = assets / "a", assets / "b"
        assert train_kgc(assets, a) == 0
        assert train_kgc(assets, b) == 0
        assert (a / "kgc.ckpt").read_bytes() == (b / "kgc.ckpt").read_bytes()

    def test_missing_train_file(self, assets, capsys):
        code = run(["train-kgc", "--train", assets / "nope.txt", "--out", assets / "o"])
        assert code == 1
        err = capsys.readouterr().err
        assert "nope.txt" in err and err.startswith("owlink:")

    def test_missing_required_option(self, assets, capsys):
        code = run(["train-kgc", "--out", assets / "o"])
        assert code == 1
        assert "--train" in capsys.readouterr().err

    def test_config_file_with_flag_override(self, assets):
        cfg = assets / "run.cfg"
        cfg.write_text("family=transe\ndim=6\nepochs=2\nlearning-rate=0.01\n"
                       "batch-size=4\nseed=3\n# a comment\n")
        out = assets / "cfg_out"
        code = run(["train-kgc", "--config", cfg, "--train", assets / "train.txt",
                    "--out", out, "--family", "distmult"])
        assert code == 0
        manifest = (out / "manifest.txt").read_text()
        assert "family=distmult" in manifest  # flag beats config
        assert "dim=6" in manifest            # config beats default


class TestPipeline:
    def test_full_open_world_pipeline(self, assets, capsys):
        kgc_out = assets / "kgc"
        assert train_kgc(assets, kgc_out) == 0

        map_out = assets / "map"
        code = run([
            "train-map", "--train", assets / "train.txt",
            "--valid", assets / "valid.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--metadata", assets / "metadata.tsv",
            "--embeddings", assets / "vectors.txt",
            "--kind", "affine", "--epochs", "30", "--learning-rate", "0.01",
            "--batch-size", "4", "--seed", "1", "--out", map_out,
        ])
        assert code == 0
        assert (map_out / "map.ckpt").is_file()
        assert (map_out / "map_log.tsv").is_file()

        eval_out = assets / "eval"
        code = run([
            "eval", "--train", assets / "train.txt", "--valid", assets / "valid.txt",
            "--test", assets / "test.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--map-checkpoint", map_out / "map.ckpt",
            "--metadata", assets / "metadata.tsv",
            "--embeddings", assets / "vectors.txt",
            "--out", eval_out,
        ])
        assert code == 0
        printed = capsys.readouterr().out
        assert "MRR" in printed
        report = (eval_out / "report.tsv").read_text().splitlines()
        assert len(report) == 4  # header + 3 test triples
        summary = (eval_out / "summary.txt").read_text()
        assert "mrr_filtered=" in summary and "evaluated=3" in summary

    def test_eval_without_map_on_closed_split(self, assets):
        kgc_out = assets / "kgc"
        assert train_kgc(assets, kgc_out) == 0
        out = assets / "eval_closed"
        code = run([
            "eval", "--train", assets / "train.txt",
            "--test", assets / "train.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--filter-splits", "train", "--hits", "1,5",
            "--out", out,
        ])
        assert code == 0
        assert "hits_5=" in (out / "summary.txt").read_text()

    def test_neighbors_by_entity_and_text(self, assets, capsys):
        kgc_out = assets / "kgc"
        assert train_kgc(assets, kgc_out) == 0
        map_out = assets / "map"
        assert run([
            "train-map", "--train", assets / "train.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--metadata", assets / "metadata.tsv",
            "--embeddings", assets / "vectors.txt",
            "--epochs", "10", "--out", map_out,
        ]) == 0

        out = assets / "nn1"
        code = run([
            "neighbors", "--train", assets / "train.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--entity", "e0", "-k", "3", "--out", out,
        ])
        assert code == 0
        lines = (out / "neighbors.tsv").read_text().splitlines()
        assert len(lines) == 3
        # the entity itself is its own nearest neighbor at distance zero
        assert lines[0].split("\t")[1] == "e0"
        capsys.readouterr()

        out2 = assets / "nn2"
        code = run([
            "neighbors", "--train", assets / "train.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--map-checkpoint", map_out / "map.ckpt",
            "--embeddings", assets / "vectors.txt",
            "--text", "w3", "--description", "w4 w5", "-k", "2", "--out", out2,
        ])
        assert code == 0
        assert len((out2 / "neighbors.tsv").read_text().splitlines()) == 2

    def test_neighbors_unknown_entity(self, assets, capsys):
        kgc_out = assets / "kgc"
        assert train_kgc(assets, kgc_out) == 0
        code = run([
            "neighbors", "--train", assets / "train.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--entity", "nope", "--out", assets / "nn3",
        ])
        assert code == 1
        assert "unknown" in capsys.readouterr().err

    def test_robustness_sweep(self, assets, capsys):
        kgc_out = assets / "kgc"
        assert train_kgc(assets, kgc_out) == 0
        out = assets / "robust"
        code = run([
            "robustness", "--train", assets / "train.txt",
            "--test", assets / "test.txt",
            "--kgc-checkpoint", kgc_out / "kgc.ckpt",
            "--metadata", assets / "metadata.tsv",
            "--embeddings", assets / "vectors.txt",
            "--epochs", "5", "--fractions", "0,1.0", "--modes", "descriptions",
            "--filter-splits", "train,test", "--out", out,
        ])
        assert code == 0
        rows = (out / "robustness.tsv").read_text().splitlines()
        # header + 2 fractions + baseline row
        assert len(rows) == 4
        assert rows[-1].startswith("random-head-baseline")


class TestSampleOwe:
    def test_writes_split_files(self, assets):
        out = assets / "owe"
        code = run([
            "sample-owe", "--train", assets / "train.txt",
            "--head-fraction", "0.25", "--seed", "2", "--out", out,
        ])
        assert code == 0
        for name in ("train.txt", "valid.txt", "test_tail.txt", "test_head.txt",
                     "valid_tail.txt", "valid_head.txt", "open_entities.txt"):
            assert (out / name).is_file()
        manifest = (out / "manifest.txt").read_text()
        assert "count_train_triples=" in manifest

    def test_determinism(self, assets):
        a, b = assets / "owe_a", assets / "owe_b"
        for out in (a, b):
            assert run(["sample-owe", "--train", assets / "train.txt",
                        "--head-count", "2", "--seed", "5", "--out", out]) == 0
        for name in ("train.txt", "test_tail.txt", "open_entities.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_selector_required(self, assets, capsys):
        code = run(["sample-owe", "--train", assets / "train.txt",
                    "--out", assets / "owe_bad"])
        assert code == 1
        assert "head_fraction" in capsys.readouterr().err


class TestDropMetadata:
    def test_blanks_descriptions(self, assets):
        out = assets / "dropped"
        code = run(["drop-metadata", "--metadata", assets / "metadata.tsv",
                    "--mode", "descriptions", "--fraction", "1.0", "--out", out])
        assert code == 0
        for line in (out / "metadata.tsv").read_text().splitlines():
            assert line.split("\t")[2] == ""

    def test_all_mode_shrinks_file(self, assets):
        out = assets / "dropped_all"
        code = run(["drop-metadata", "--metadata", assets / "metadata.tsv",
                    "--mode", "all", "--fraction", "0.5", "--out", out])
        assert code == 0
        n_before = len((assets / "metadata.tsv").read_text().splitlines())
        n_after = len((out / "metadata.tsv").read_text().splitlines())
        assert n_after == n_before - round(0.5 * n_before)


class TestConfigHelpers:
    def test_load_config_file(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nalpha = 1\nbeta=two words\n\n")
        assert load_config_file(str(p)) == {"alpha": "1", "beta": "two words"}

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("no equals sign\n")
        with pytest.raises(ValueError, match="c.cfg:1"):
            load_config_file(str(p))

    def test_settings_precedence(self):
        s = Settings({"dim": 4}, {"dim": "8", "epochs": "3"})
        assert s.get("dim", 2, int) == 4
        assert s.get("epochs", 1, int) == 3
        assert s.get("margin", 1.0, float) == 1.0

    def test_bool_cast(self):
        s = Settings({}, {"flag": "yes", "off": "0"})
        assert s.get("flag", False, bool) is True
        assert s.get("off", True, bool) is False

    def test_manifest_round_trip(self, tmp_path):
        path = write_manifest(tmp_path, "demo", {"b": 2, "a": 1})
        lines = path.read_text().splitlines()
        assert lines[0] == "command=demo"
        assert lines[2:] == ["a=1", "b=2"]

    def test_stage_seed_stable_and_distinct(self):
        assert stage_seed(1, "kgc") == stage_seed(1, "kgc")
        assert stage_seed(1, "kgc") != stage_seed(1, "map")
        assert stage_seed(1, "kgc") != stage_seed(2, "kgc")
