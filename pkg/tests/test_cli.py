import json

import pytest

from cslid.cli import main
from cslid.config import TrainConfig, load_config_file, preset_path, resolve_config

TINY_FLAGS = [
    "--epochs", "2", "--batch-size", "4", "--enc-units", "4", "--dec-units", "4",
    "--emb-dim", "3", "--att-dim", "4", "--dropout", "0", "--beam", "2",
]


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(out), "--sizes", "8", "3", "3", "--seed", "5"]) == 0
    return out


@pytest.fixture(scope="module")
def las_run(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("las")
    argv = ["train", "--arch", "las", "--config", "desk", "--train", str(corpus / "train.jsonl"),
            "--dev", str(corpus / "dev.jsonl"), "--out", str(out)] + TINY_FLAGS
    assert main(argv) == 0
    return out


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        assert main(["evaluate", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_no_command(self):
        assert main([]) == 1

    def test_bad_choice(self):
        assert main(["train", "--arch", "rnn", "--train", "x", "--out", "y"]) == 1

    def test_missing_manifest(self, tmp_path, capsys):
        assert main(["labelize", "--manifest", str(tmp_path / "nope.jsonl")]) == 2
        assert "nope.jsonl" in capsys.readouterr().err

    def test_bad_checkpoint(self, tmp_path, corpus):
        (tmp_path / "x.ckpt").write_bytes(b"garbage")
        assert main(["decode", "--checkpoint", str(tmp_path / "x.ckpt"), "--manifest", str(corpus / "dev.jsonl")]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_loss(self, tmp_path, corpus):
        # a learning rate this large blows the weights up within one epoch
        argv = ["train", "--arch", "ctc", "--train", str(corpus / "train.jsonl"), "--out", str(tmp_path),
                "--lr-init", "1e300", "--clip-norm", "1e300"] + TINY_FLAGS
        assert main(argv) == 3

    def test_bad_log_level(self, monkeypatch):
        monkeypatch.setenv("CSLID_LOG", "loud")
        assert main(["evaluate", "--ref", "a", "--hyp", "b"]) == 1

    def test_bad_config_key(self, tmp_path, corpus):
        (tmp_path / "bad.cfg").write_text("learning_rate = 1\n")
        argv = ["train", "--config", str(tmp_path / "bad.cfg"), "--train", str(corpus / "train.jsonl"),
                "--out", str(tmp_path)]
        assert main(argv) == 1


class TestEvaluate:
    def test_table_report(self, tmp_path, capsys):
        (tmp_path / "ref.txt").write_text("u1\tHb He | Eb E Ee | Hb H He | Eb E Ee | Hb He | Eb E E E E Ee | Hb H H H He\n")
        (tmp_path / "hyp.txt").write_text("u1\tHb E Ee | Eb E Ee | Eb He | Hb He | Eb Ee | Eb Ee | Hb He\n")
        assert main(["evaluate", "--ref", str(tmp_path / "ref.txt"), "--hyp", str(tmp_path / "hyp.txt"),
                     "--level", "word", "--system", "CTC"]) == 0
        out = capsys.readouterr().out
        assert "N_D" in out and "Word" in out and "Character" not in out
        assert "level=word N_D=1 N_I=1 N_S=1 N=7 rate=42.85" in out

    def test_missing_hypothesis(self, tmp_path):
        (tmp_path / "ref.txt").write_text("u1\tHb He\nu2\tEb Ee\n")
        (tmp_path / "hyp.txt").write_text("u1\tHb He\n")
        assert main(["evaluate", "--ref", str(tmp_path / "ref.txt"), "--hyp", str(tmp_path / "hyp.txt")]) == 2

    def test_bad_tag(self, tmp_path):
        (tmp_path / "ref.txt").write_text("u1\tHb Xx\n")
        assert main(["evaluate", "--ref", str(tmp_path / "ref.txt"), "--hyp", str(tmp_path / "ref.txt")]) == 2


class TestPipeline:
    def test_labelize(self, corpus, tmp_path):
        assert main(["labelize", "--manifest", str(corpus / "dev.jsonl"), "--out", str(tmp_path / "r.txt")]) == 0
        lines = (tmp_path / "r.txt").read_text().splitlines()
        assert len(lines) == 3
        assert lines[0].split("\t")[1].split()[0] in ("Hb", "Eb")
        assert "sil" not in lines[0]

    def test_featurize_then_train_on_features(self, corpus, tmp_path):
        assert main(["featurize", "--manifest", str(corpus / "train.jsonl"), "--out", str(tmp_path / "f")]) == 0
        manifest = tmp_path / "f" / "features.jsonl"
        assert json.loads(manifest.read_text().splitlines()[0])["features"].endswith(".feat")
        assert main(["train", "--arch", "ctc", "--config", "desk", "--train", str(manifest),
                     "--out", str(tmp_path / "ck"), "--epochs", "1", "--enc-units", "4"]) == 0

    def test_featurize_csv(self, corpus, tmp_path):
        assert main(["featurize", "--manifest", str(corpus / "dev.jsonl"), "--out", str(tmp_path), "--format", "csv"]) == 0
        rows = (tmp_path / "dev_00000.csv").read_text().splitlines()
        assert len(rows[0].split(",")) == 26

    def test_train_decode_evaluate(self, corpus, las_run, tmp_path, capsys):
        assert (las_run / "best.ckpt").exists()
        hyp = tmp_path / "hyp.txt"
        ref = tmp_path / "ref.txt"
        assert main(["decode", "--checkpoint", str(las_run / "best.ckpt"), "--manifest", str(corpus / "test.jsonl"),
                     "--out", str(hyp), "--jobs", "2"]) == 0
        assert main(["labelize", "--manifest", str(corpus / "test.jsonl"), "--out", str(ref)]) == 0
        ids = [l.split("\t")[0] for l in hyp.read_text().splitlines()]
        assert ids == ["test_00000", "test_00001", "test_00002"]
        capsys.readouterr()
        assert main(["evaluate", "--ref", str(ref), "--hyp", str(hyp)]) == 0
        assert "rate=" in capsys.readouterr().out

    def test_decode_idempotent(self, corpus, las_run, tmp_path):
        outs = []
        for k in range(2):
            path = tmp_path / f"h{k}.txt"
            main(["decode", "--checkpoint", str(las_run / "best.ckpt"), "--manifest", str(corpus / "dev.jsonl"),
                  "--out", str(path)])
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_attention_export(self, corpus, las_run, tmp_path):
        assert main(["attention-export", "--checkpoint", str(las_run / "best.ckpt"), "--manifest",
                     str(corpus / "test.jsonl"), "--utt", "test_00001", "--out", str(tmp_path)]) == 0
        assert (tmp_path / "test_00001.attention.csv").exists()
        assert (tmp_path / "test_00001.profile.csv").read_text().startswith("u,time_s,hindi,english")
        assert (tmp_path / "test_00001.attention.svg").read_text().startswith("<svg")

    def test_attention_export_unknown_utt(self, corpus, las_run, tmp_path):
        assert main(["attention-export", "--checkpoint", str(las_run / "best.ckpt"), "--manifest",
                     str(corpus / "test.jsonl"), "--utt", "nope", "--out", str(tmp_path)]) == 2

    def test_inspect(self, las_run, capsys):
        assert main(["inspect-checkpoint", str(las_run / "last.ckpt")]) == 0
        info = json.loads(capsys.readouterr().out)
        assert info["config"]["arch"] == "las" and info["epoch"] == 1
        assert info["has_optimizer_state"] and "listener.0.fw.wx" in info["tensors"]
        assert "history" not in info["extra"]

    def test_resume(self, corpus, las_run, tmp_path):
        argv = ["train", "--arch", "las", "--config", "desk", "--train", str(corpus / "train.jsonl"),
                "--out", str(tmp_path), "--resume", str(las_run / "last.ckpt")] + TINY_FLAGS
        argv[argv.index("--epochs") + 1] = "3"
        assert main(argv) == 0


class TestConfigPrecedence:
    def test_presets_ship(self):
        assert preset_path("paper").exists() and preset_path("desk").exists()

    def test_paper_values(self):
        vals = load_config_file("paper")
        las = resolve_config("las", vals)
        ctc = resolve_config("ctc", vals)
        assert (las.enc_layers, las.enc_units, las.dec_layers, las.dec_units) == (2, 128, 2, 128)
        assert (las.dropout, las.epochs, las.batch_size, las.beam_width) == (0.5, 300, 32, 8)
        assert (ctc.enc_layers, ctc.enc_units, ctc.dropout, ctc.epochs, ctc.batch_size) == (3, 128, 0.5, 300, 8)
        assert las.lr_decay == ctc.lr_decay == 0.1

    def test_desk_scale(self):
        for arch in ("ctc", "las"):
            cfg = resolve_config(arch, load_config_file("desk"))
            assert cfg.epochs <= 30 and cfg.enc_units == 32

    @pytest.mark.parametrize(
        "key,file_value,flag_value",
        [
            ("epochs", "7", 9),
            ("batch_size", "5", 6),
            ("lr_init", "0.02", 0.03),
            ("lr_decay", "0.5", 0.25),
            ("dropout", "0.2", 0.1),
            ("beam_width", "3", 4),
            ("enc_units", "16", 8),
            ("seed", "11", 12),
        ],
    )
    def test_flag_over_file_over_default(self, key, file_value, flag_value):
        default = getattr(TrainConfig(), key)
        assert getattr(resolve_config("las", {}), key) == default
        from_file = getattr(resolve_config("las", {key: file_value}), key)
        assert from_file == type(default)(file_value) != default
        assert getattr(resolve_config("las", {key: file_value}, {key: flag_value}), key) == flag_value

    def test_arch_prefixed_key_beats_bare(self):
        vals = {"batch_size": "5", "ctc.batch_size": "3"}
        assert resolve_config("ctc", vals).batch_size == 3
        assert resolve_config("las", vals).batch_size == 5

    def test_cli_flags_reach_config(self, corpus, tmp_path):
        (tmp_path / "c.cfg").write_text("epochs = 5\nenc_units = 4\nemb_dim = 3\n")
        argv = ["train", "--arch", "ctc", "--config", str(tmp_path / "c.cfg"), "--train",
                str(corpus / "train.jsonl"), "--out", str(tmp_path / "o"), "--epochs", "1", "--seed", "3"]
        assert main(argv) == 0
        from cslid.checkpoint import load_checkpoint

        cfg = load_checkpoint(tmp_path / "o" / "last.ckpt").config
        assert (cfg["epochs"], cfg["enc_units"], cfg["seed"], cfg["emb_dim"]) == (1, 4, 3, 3)
