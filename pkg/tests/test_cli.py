import shutil

import numpy as np
import pytest

import shapprune as sp
from shapprune.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    """Toy corpus on disk plus every artifact of one full CLI run."""
    root = tmp_path_factory.mktemp("cli")
    rows, schema = sp.toy_rows(seed=0)
    paths = {
        "data": str(root / "toy.csv"),
        "schema": str(root / "schema.json"),
        "vocab": str(root / "toy.vocab"),
        "model": str(root / "model.shvr"),
        "scores": str(root / "scores.shvr"),
        "magnitude": str(root / "magnitude.shvr"),
        "pruned": str(root / "pruned.shvr"),
        "root": root,
    }
    sp.write_csv_rows(paths["data"], rows)
    schema.save(paths["schema"])
    assert main([
        "train", "--data", paths["data"], "--schema", paths["schema"],
        "--vocab-out", paths["vocab"], "--out", paths["model"],
        "--backbone", "deepfm", "--dim", "3", "--hidden", "3,3",
        "--epochs", "40", "--batch-size", "16", "--lr", "0.01",
        "--min-count", str(sp.TOY_MIN_COUNT), "--seed", "1",
    ]) == 0
    assert main([
        "attribute", "--model", paths["model"], "--vocab", paths["vocab"],
        "--data", paths["data"], "--out", paths["scores"],
        "--method", "shapley", "--passes", "4", "--seed", "0",
    ]) == 0
    assert main([
        "attribute", "--model", paths["model"], "--vocab", paths["vocab"],
        "--out", paths["magnitude"], "--method", "magnitude",
    ]) == 0
    assert main([
        "prune", "--model", paths["model"], "--scores", paths["scores"],
        "--vocab", paths["vocab"], "--data", paths["data"],
        "--sparsity", "0.5", "--out", paths["pruned"],
    ]) == 0
    return paths


class TestPipeline:
    def test_artifacts_exist_and_load(self, toy_files):
        vocab = sp.Vocabulary.load(toy_files["vocab"])
        assert vocab.field_sizes == (2, 2, 3)
        model = sp.load_model(toy_files["model"], vocab)
        assert model.backbone.kind == sp.DEEPFM
        scores = sp.AttributionScores.load(toy_files["scores"])
        assert scores.method == sp.SHAPLEY
        assert scores.passes == 4
        pruned = sp.load_pruned(toy_files["pruned"])
        assert pruned.kept_count == 11

    def test_train_reports_epochs_and_metrics(self, toy_files, capsys, tmp_path):
        out = str(tmp_path / "retrain.shvr")
        code, stdout, _ = run(
            capsys,
            "train", "--data", toy_files["data"], "--vocab", toy_files["vocab"],
            "--out", out, "--backbone", "fm", "--dim", "2", "--epochs", "2",
            "--batch-size", "16", "--seed", "3",
        )
        assert code == 0
        lines = stdout.splitlines()
        assert sum(1 for line in lines if line.startswith("event=epoch ")) == 2
        assert any(line.startswith("event=train_done ") for line in lines)
        assert "train_logloss=" in lines[-1]

    def test_eval_dense_model(self, toy_files, capsys):
        code, stdout, _ = run(
            capsys,
            "eval", "--model", toy_files["model"], "--vocab", toy_files["vocab"],
            "--data", toy_files["data"],
        )
        assert code == 0
        assert stdout.startswith("event=eval logloss=")
        assert "count=40" in stdout
        assert "freq_bucket" not in stdout

    def test_eval_pruned_model_adds_bucket_lines(self, toy_files, capsys):
        code, stdout, _ = run(
            capsys,
            "eval", "--model", toy_files["pruned"], "--vocab", toy_files["vocab"],
            "--data", toy_files["data"],
        )
        assert code == 0
        buckets = [line for line in stdout.splitlines() if line.startswith("event=freq_bucket")]
        assert len(buckets) == 3
        assert "mean_kept_dims=" in buckets[0]

    def test_curve_writes_csv(self, toy_files, capsys, tmp_path):
        out = str(tmp_path / "curve.csv")
        code, stdout, _ = run(
            capsys,
            "curve", "--model", toy_files["model"], "--scores", toy_files["scores"],
            "--vocab", toy_files["vocab"], "--data", toy_files["data"],
            "--sparsities", "0.2,0.8", "--out", out,
        )
        assert code == 0
        lines = open(out).read().strip().splitlines()
        assert lines[0] == ",".join(sp.CURVE_HEADER)
        assert len(lines) == 3
        assert "event=curve_done points=2" in stdout

    def test_codebook_embeds_into_checkpoint(self, toy_files, capsys, tmp_path):
        copy = str(tmp_path / "model.shvr")
        shutil.copy(toy_files["model"], copy)
        code, stdout, _ = run(
            capsys,
            "codebook", "--model", copy, "--vocab", toy_files["vocab"],
            "--data", toy_files["data"],
        )
        assert code == 0
        assert "event=codebook" in stdout
        model = sp.load_model(copy)
        assert model.codebook is not None
        assert model.codebook.values.shape == (3, 3)

    def test_prune_with_codebook_padding(self, toy_files, capsys, tmp_path):
        out = str(tmp_path / "pruned_cb.shvr")
        code, stdout, _ = run(
            capsys,
            "prune", "--model", toy_files["model"], "--scores", toy_files["scores"],
            "--vocab", toy_files["vocab"], "--data", toy_files["data"],
            "--sparsity", "0.8", "--padding", "codebook", "--out", out,
        )
        assert code == 0
        pruned = sp.load_pruned(out)
        assert pruned.padding == sp.CODEBOOK
        assert pruned.codebook is not None

    def test_finetune_freezes_mask(self, toy_files, capsys, tmp_path):
        out = str(tmp_path / "tuned.shvr")
        code, stdout, _ = run(
            capsys,
            "train", "--data", toy_files["data"], "--vocab", toy_files["vocab"],
            "--out", out, "--backbone", "deepfm", "--dim", "3", "--hidden", "3,3",
            "--epochs", "2", "--batch-size", "16", "--lr", "0.001", "--seed", "1",
            "--mask", toy_files["pruned"],
        )
        assert code == 0
        assert "event=finetune" in stdout
        pruned = sp.load_pruned(toy_files["pruned"])
        tuned = sp.load_model(out)
        flags = pruned.prune_mask().dense()
        assert np.all(tuned.embedding.values[flags] == 0.0)
        assert not np.array_equal(tuned.embedding.values, pruned.effective_values())

    def test_oracle_compare_reports_mae(self, toy_files, capsys, tmp_path):
        out = str(tmp_path / "exact.shvr")
        code, stdout, _ = run(
            capsys,
            "oracle", "--model", toy_files["model"], "--vocab", toy_files["vocab"],
            "--data", toy_files["data"], "--out", out,
            "--compare", toy_files["scores"],
        )
        assert code == 0
        assert "event=oracle " in stdout
        compare_line = [l for l in stdout.splitlines() if l.startswith("event=oracle_compare")][0]
        mae = float(compare_line.split("mae=")[1])
        assert 0.0 < mae < 0.01
        exact = sp.AttributionScores.load(out)
        estimate = sp.AttributionScores.load(toy_files["scores"])
        assert np.abs(exact.values - estimate.values).mean() == pytest.approx(mae, abs=5e-7)


class TestSynth:
    def test_writes_rows_and_schema(self, capsys, tmp_path):
        out = str(tmp_path / "synth.csv")
        schema_out = str(tmp_path / "schema.json")
        code, stdout, _ = run(
            capsys,
            "synth", "--out", out, "--schema-out", schema_out,
            "--rows", "200", "--fields", "3", "--tokens-per-field", "20", "--seed", "4",
        )
        assert code == 0
        rows = sp.read_csv_rows(out)
        assert len(rows) == 200
        assert all(len(row) == 4 for row in rows)
        assert set(row[0] for row in rows) <= {"0", "1"}
        schema = sp.FieldSchema.load(schema_out)
        assert schema.field_count == 3
        assert "event=synth" in stdout

    def test_deterministic_for_a_seed(self, capsys, tmp_path):
        a = str(tmp_path / "a.csv")
        b = str(tmp_path / "b.csv")
        for out in (a, b):
            assert run(capsys, "synth", "--out", out, "--rows", "80",
                       "--fields", "2", "--tokens-per-field", "10", "--seed", "7")[0] == 0
        assert open(a, "rb").read() == open(b, "rb").read()


class TestDeterminism:
    def test_same_seed_scores_are_byte_identical(self, toy_files, capsys, tmp_path):
        a = str(tmp_path / "a.shvr")
        b = str(tmp_path / "b.shvr")
        for out in (a, b):
            code, _, _ = run(
                capsys,
                "attribute", "--model", toy_files["model"], "--vocab", toy_files["vocab"],
                "--data", toy_files["data"], "--out", out,
                "--method", "shapley", "--passes", "2", "--seed", "5",
            )
            assert code == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_threads_do_not_change_the_file(self, toy_files, capsys, tmp_path):
        a = str(tmp_path / "t1.shvr")
        b = str(tmp_path / "t4.shvr")
        for out, threads in ((a, "1"), (b, "4")):
            code, _, _ = run(
                capsys,
                "attribute", "--model", toy_files["model"], "--vocab", toy_files["vocab"],
                "--data", toy_files["data"], "--out", out, "--method", "shapley",
                "--passes", "30", "--seed", "5", "--threads", threads,
            )
            assert code == 0
        assert open(a, "rb").read() == open(b, "rb").read()

    def test_different_seeds_differ(self, toy_files, capsys, tmp_path):
        a = str(tmp_path / "s0.shvr")
        b = str(tmp_path / "s1.shvr")
        for out, seed in ((a, "0"), (b, "1")):
            assert run(
                capsys,
                "attribute", "--model", toy_files["model"], "--vocab", toy_files["vocab"],
                "--data", toy_files["data"], "--out", out,
                "--method", "shapley", "--passes", "1", "--seed", seed,
            )[0] == 0
        assert open(a, "rb").read() != open(b, "rb").read()


class TestConfigFile:
    def test_config_overrides_flags(self, toy_files, capsys, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("# comment line\nepochs=1\nlr=0.02\n\nseed=9\n")
        out = str(tmp_path / "model.shvr")
        code, stdout, _ = run(
            capsys,
            "train", "--data", toy_files["data"], "--vocab", toy_files["vocab"],
            "--out", out, "--backbone", "fm", "--dim", "2", "--epochs", "50",
            "--config", str(config),
        )
        assert code == 0
        epochs = [line for line in stdout.splitlines() if line.startswith("event=epoch")]
        assert len(epochs) == 1

    def test_dashed_keys_accepted(self, toy_files, capsys, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("batch-size=8\nepochs=1\n")
        out = str(tmp_path / "model.shvr")
        assert run(
            capsys,
            "train", "--data", toy_files["data"], "--vocab", toy_files["vocab"],
            "--out", out, "--backbone", "fm", "--dim", "2",
            "--config", str(config),
        )[0] == 0

    def test_unknown_key_is_a_domain_error(self, toy_files, capsys, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("momentum=0.9\n")
        out = str(tmp_path / "model.shvr")
        code, _, stderr = run(
            capsys,
            "train", "--data", toy_files["data"], "--vocab", toy_files["vocab"],
            "--out", out, "--config", str(config),
        )
        assert code == 1
        assert "unknown key 'momentum'" in stderr

    def test_malformed_line_is_a_domain_error(self, toy_files, capsys, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("epochs 3\n")
        code, _, stderr = run(
            capsys,
            "train", "--data", toy_files["data"], "--vocab", toy_files["vocab"],
            "--out", str(tmp_path / "m.shvr"), "--config", str(config),
        )
        assert code == 1
        assert "config line 1" in stderr

    def test_missing_config_file(self, toy_files, capsys, tmp_path):
        code, _, stderr = run(
            capsys,
            "train", "--data", toy_files["data"], "--vocab", toy_files["vocab"],
            "--out", str(tmp_path / "m.shvr"), "--config", str(tmp_path / "nope.cfg"),
        )
        assert code == 2
        assert "no such file" in stderr


class TestErrorPaths:
    def test_missing_input_file_is_exit_two(self, toy_files, capsys, tmp_path):
        code, _, stderr = run(
            capsys,
            "eval", "--model", str(tmp_path / "ghost.shvr"),
            "--vocab", toy_files["vocab"], "--data", toy_files["data"],
        )
        assert code == 2
        assert "no such file" in stderr

    def test_bad_sparsity_is_exit_one(self, toy_files, capsys, tmp_path):
        code, _, stderr = run(
            capsys,
            "prune", "--model", toy_files["model"], "--scores", toy_files["scores"],
            "--sparsity", "1.5", "--out", str(tmp_path / "p.shvr"),
        )
        assert code == 1
        assert "sparsity must be in [0, 1]" in stderr

    def test_corrupt_checkpoint_is_exit_one(self, toy_files, capsys, tmp_path):
        bad = tmp_path / "bad.shvr"
        data = bytearray(open(toy_files["model"], "rb").read())
        data[len(data) // 2] ^= 0xFF
        bad.write_bytes(bytes(data))
        code, _, stderr = run(
            capsys,
            "eval", "--model", str(bad), "--vocab", toy_files["vocab"],
            "--data", toy_files["data"],
        )
        assert code == 1
        assert "corrupt" in stderr

    def test_shapley_without_data_is_exit_two(self, toy_files, capsys, tmp_path):
        code, _, stderr = run(
            capsys,
            "attribute", "--model", toy_files["model"], "--vocab", toy_files["vocab"],
            "--out", str(tmp_path / "s.shvr"), "--method", "shapley",
        )
        assert code == 2
        assert "--data is required" in stderr

    def test_prune_data_without_vocab_is_exit_two(self, toy_files, capsys, tmp_path):
        code, _, stderr = run(
            capsys,
            "prune", "--model", toy_files["model"], "--scores", toy_files["scores"],
            "--data", toy_files["data"], "--sparsity", "0.5",
            "--out", str(tmp_path / "p.shvr"),
        )
        assert code == 2
        assert "--data needs --vocab" in stderr

    def test_train_without_schema_or_vocab_is_exit_two(self, toy_files, capsys, tmp_path):
        code, _, stderr = run(
            capsys,
            "train", "--data", toy_files["data"], "--out", str(tmp_path / "m.shvr"),
        )
        assert code == 2
        assert "--schema is required" in stderr

    def test_wrong_vocabulary_is_exit_one(self, toy_files, capsys, tmp_path):
        rows = [["1", "a"], ["0", "b"]]
        vocab = sp.build_vocabulary(rows, sp.FieldSchema.categorical(1))
        other = tmp_path / "other.vocab"
        vocab.save(other)
        code, _, stderr = run(
            capsys,
            "attribute", "--model", toy_files["model"], "--vocab", str(other),
            "--out", str(tmp_path / "s.shvr"), "--method", "magnitude",
        )
        assert code == 1
        assert "vocabulary does not match" in stderr

    def test_no_subcommand_is_exit_two(self, capsys):
        code, _, _ = run(capsys)
        assert code == 2

    def test_unknown_flag_is_exit_two(self, capsys, tmp_path):
        code, _, _ = run(capsys, "synth", "--out", str(tmp_path / "x.csv"), "--zipf", "2")
        assert code == 2
