"""End-to-end command-line flows at miniature scale.

Each pipeline stage runs through ``main`` exactly as a user would invoke
it; models are trained for an epoch or two just to exercise the plumbing.
"""

import os

import numpy as np
import pytest

from scabench.cli import main
from scabench.folding import parse_matrix
from scabench.traces import parse_side_channel
from scabench.victims import DatasetManifest, parse_media


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def lookup_ds(workdir):
    out = workdir / "lookup_ds"
    rc = main(["gen", "--victim", "lookup", "--n-train", "6", "--n-test", "2",
               "--height", "8", "--width", "8", "--seed", "3", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def hash_ds(workdir):
    out = workdir / "hash_ds"
    rc = main(["gen", "--victim", "hashcheck", "--n-train", "6", "--n-test", "2",
               "--seed", "4", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def lookup_model(workdir, lookup_ds):
    out = workdir / "lookup.ckpt"
    rc = main(["train", "--dataset", str(lookup_ds), "--k", "1", "--n", "23",
               "--conv-channels", "4,8", "--strides", "1,2", "--latent", "8",
               "--epochs", "2", "--batch", "8", "--seed", "0", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def hash_model(workdir, hash_ds):
    out = workdir / "hash.ckpt"
    rc = main(["train", "--dataset", str(hash_ds), "--k", "1", "--n", "6",
               "--conv-channels", "4,8", "--strides", "1,2", "--latent", "8",
               "--epochs", "2", "--batch", "8", "--seed", "0", "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def pp_model(workdir, hash_ds):
    out = workdir / "hash_pp.ckpt"
    rc = main(["train", "--dataset", str(hash_ds), "--pp", "--sets", "64",
               "--epoch-len", "4", "--k", "1", "--n", "24",
               "--conv-channels", "4,8", "--strides", "1,2", "--latent", "8",
               "--epochs", "1", "--batch", "8", "--out", str(out)])
    assert rc == 0
    return out


class TestGen:
    def test_dataset_layout(self, lookup_ds):
        manifest = DatasetManifest.from_lines((lookup_ds / "manifest.txt").read_text())
        assert manifest.victim == "lookup"
        assert manifest.n_train == 6 and manifest.n_test == 2
        labels = (lookup_ds / "labels.txt").read_text().split()
        assert len(labels) == 8
        for sub in ("samples", "traces", "outputs"):
            assert len(os.listdir(lookup_ds / sub)) == 8
        assert (lookup_ds / "config.txt").exists()

    def test_sample_files_parse(self, lookup_ds):
        sample = parse_media((lookup_ds / "samples" / "sample_000000.txt").read_text())
        assert sample.kind == "continuous" and sample.image.shape == (8, 8)

    def test_rerun_is_bit_identical(self, workdir, lookup_ds):
        other = workdir / "lookup_ds_again"
        rc = main(["gen", "--victim", "lookup", "--n-train", "6", "--n-test", "2",
                   "--height", "8", "--width", "8", "--seed", "3", "--out", str(other)])
        assert rc == 0
        for name in ("samples/sample_000000.txt", "traces/trace_000007.txt",
                     "labels.txt", "manifest.txt"):
            assert (other / name).read_bytes() == (lookup_ds / name).read_bytes()

    def test_bare_n_means_no_test_split(self, workdir):
        out = workdir / "bare"
        rc = main(["gen", "--victim", "hashcheck", "--n", "5", "--out", str(out)])
        assert rc == 0
        manifest = DatasetManifest.from_lines((out / "manifest.txt").read_text())
        assert manifest.n_train == 5 and manifest.n_test == 0

    def test_nonpositive_n_is_usage_error(self, workdir):
        rc = main(["gen", "--victim", "lookup", "--n", "0",
                   "--out", str(workdir / "x")])
        assert rc == 1

    def test_unknown_victim_is_usage_error(self, workdir):
        rc = main(["gen", "--victim", "toaster", "--out", str(workdir / "x")])
        assert rc == 1


class TestConversions:
    def test_derive_writes_side_channel(self, workdir, lookup_ds):
        out = workdir / "side.txt"
        rc = main(["derive", str(lookup_ds / "traces" / "trace_000000.txt"),
                   "--kind", "cacheline", "--out", str(out)])
        assert rc == 0
        side = parse_side_channel(out.read_text())
        assert len(side) == 8 + 64 * 8 + 4
        assert (workdir / "side.txt.config.txt").exists()

    def test_derive_missing_input(self, workdir):
        rc = main(["derive", str(workdir / "nope.txt"),
                   "--kind", "cacheline", "--out", str(workdir / "y.txt")])
        assert rc == 2

    def test_fold_roundtrip(self, workdir):
        out = workdir / "folded.txt"
        rc = main(["fold", str(workdir / "side.txt"), "--k", "1", "--n", "23",
                   "--out", str(out)])
        assert rc == 0
        matrix = parse_matrix(out.read_text())
        assert matrix.data.shape == (1, 23, 23)
        assert matrix.valid_len == 524

    def test_fold_overflow_is_data_error(self, workdir):
        rc = main(["fold", str(workdir / "side.txt"), "--k", "1", "--n", "4",
                   "--out", str(workdir / "z.txt")])
        assert rc == 2

    def test_fold_truncate_accepts_overflow(self, workdir):
        out = workdir / "folded_cut.txt"
        rc = main(["fold", str(workdir / "side.txt"), "--k", "1", "--n", "4",
                   "--truncate", "--out", str(out)])
        assert rc == 0
        assert parse_matrix(out.read_text()).valid_len == 16

    def test_pp_capture(self, workdir, lookup_ds):
        out = workdir / "pp.txt"
        rc = main(["pp", str(lookup_ds / "traces" / "trace_000000.txt"),
                   "--sets", "16", "--ways", "2", "--epoch-len", "8",
                   "--out", str(out)])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "16 1"
        assert all(set(row) <= {"0", "1"} and len(row) == 16 for row in lines[1:])
        assert all(any(c == "1" for c in row) for row in lines[1:])


class TestNoiseCommand:
    def test_scalar_file(self, workdir):
        out = workdir / "side_noisy.txt"
        rc = main(["noise", str(workdir / "side.txt"), "--preset", "gaussian-low",
                   "--out", str(out)])
        assert rc == 0
        noisy = parse_side_channel(out.read_text())
        original = parse_side_channel((workdir / "side.txt").read_text())
        assert len(noisy) == len(original)
        assert not np.array_equal(noisy.values, original.values)

    def test_pp_file(self, workdir):
        out = workdir / "pp_noisy.txt"
        rc = main(["noise", str(workdir / "pp.txt"), "--kind", "falsehitmiss",
                   "--amount", "10", "--out", str(out)])
        assert rc == 0
        assert out.read_text().splitlines()[0] == "16 1"

    def test_modality_mismatch(self, workdir):
        rc = main(["noise", str(workdir / "pp.txt"), "--preset", "gaussian-low",
                   "--out", str(workdir / "w.txt")])
        assert rc == 2

    def test_needs_a_scheme(self, workdir):
        rc = main(["noise", str(workdir / "side.txt"),
                   "--out", str(workdir / "w.txt")])
        assert rc == 2


class TestTrain:
    def test_artifacts(self, workdir, lookup_model):
        assert lookup_model.exists()
        history = (workdir / "lookup.history.csv").read_text().splitlines()
        assert history[0] == "epoch,L_explicit,L_implicit,L_privacy,D_loss"
        assert len(history) == 3  # header + 2 epochs
        config = (workdir / "lookup.ckpt.config.txt").read_text()
        assert "epochs=2\n" in config
        assert "conv_channels=4,8\n" in config

    def test_missing_dataset(self, workdir):
        rc = main(["train", "--dataset", str(workdir / "missing"), "--k", "1",
                   "--n", "23", "--epochs", "1", "--out", str(workdir / "m.ckpt")])
        assert rc == 2


class TestAttack:
    def test_continuous_outputs(self, workdir, lookup_ds, lookup_model):
        outdir = workdir / "attack_lookup"
        rc = main(["attack", "--dataset", str(lookup_ds), "--model",
                   str(lookup_model), "--split", "test", "--outdir", str(outdir)])
        assert rc == 0
        lines = (outdir / "metrics.csv").read_text().splitlines()
        assert lines[0] == "index,mse,baseline_mse"
        assert len(lines) == 4  # header + 2 test samples + mean row
        assert lines[-1].startswith("mean,")
        for i in (6, 7):
            rec = parse_media((outdir / f"recon_{i:06d}.txt").read_text())
            assert rec.image.shape == (8, 8)
            pgm = (outdir / f"recon_{i:06d}.pgm").read_bytes()
            assert pgm.startswith(b"P5\n8 8\n255\n")
            assert len(pgm) == len(b"P5\n8 8\n255\n") + 64

    def test_token_outputs(self, workdir, hash_ds, hash_model):
        outdir = workdir / "attack_hash"
        rc = main(["attack", "--dataset", str(hash_ds), "--model",
                   str(hash_model), "--outdir", str(outdir)])
        assert rc == 0
        lines = (outdir / "metrics.csv").read_text().splitlines()
        assert lines[0] == "index,word_accuracy,baseline_word_accuracy"
        rec = parse_media((outdir / "recon_000006.txt").read_text())
        assert rec.kind == "tokens"
        assert not (outdir / "recon_000006.pgm").exists()

    def test_metric_modality_mismatch(self, workdir, hash_ds, hash_model):
        rc = main(["attack", "--dataset", str(hash_ds), "--model", str(hash_model),
                   "--metric", "mse", "--outdir", str(workdir / "bad")])
        assert rc == 2

    def test_victim_mismatch(self, workdir, hash_ds, lookup_model):
        rc = main(["attack", "--dataset", str(hash_ds), "--model",
                   str(lookup_model), "--outdir", str(workdir / "bad2")])
        assert rc == 2


class TestLocalize:
    def test_report_files(self, workdir, lookup_ds, lookup_model):
        outdir = workdir / "loc"
        rc = main(["localize", "--dataset", str(lookup_ds), "--model",
                   str(lookup_model), "--topk", "5", "--outdir", str(outdir)])
        assert rc == 0
        lines = (outdir / "report.csv").read_text().splitlines()
        assert lines[0] == "function,num_instructions,frequency"
        total = sum(int(row.split(",")[2]) for row in lines[1:])
        assert total == 2 * 5  # two test traces, five flags each
        for addr in (outdir / "addresses.txt").read_text().split():
            assert addr.startswith("0x")

    def test_pp_model_rejected(self, workdir, hash_ds, pp_model):
        rc = main(["localize", "--dataset", str(hash_ds), "--model",
                   str(pp_model), "--outdir", str(workdir / "locpp")])
        assert rc == 2


class TestDefend:
    def read_report(self, outdir):
        lines = (outdir / "defend_report.csv").read_text().splitlines()
        assert lines[0] == "key,value"
        return dict(row.split(",", 1) for row in lines[1:])

    def test_blind_continuous(self, workdir, lookup_ds, lookup_model):
        outdir = workdir / "blind_cont"
        rc = main(["defend", "--dataset", str(lookup_ds), "--model",
                   str(lookup_model), "--mode", "blind", "--alpha", "0.1",
                   "--outdir", str(outdir)])
        assert rc == 0
        report = self.read_report(outdir)
        assert report["mode"] == "blind"
        assert float(report["recovery_max_rel_err"]) < 1e-9
        for key in ("pre_mse", "post_mse", "degradation_ratio",
                    "closer_to_mask_fraction"):
            assert key in report

    def test_blind_text_recovery_exact(self, workdir, hash_ds, hash_model):
        outdir = workdir / "blind_text"
        rc = main(["defend", "--dataset", str(hash_ds), "--model",
                   str(hash_model), "--mode", "blind", "--alpha", "0.3",
                   "--outdir", str(outdir)])
        assert rc == 0
        report = self.read_report(outdir)
        assert float(report["recovery_exact_fraction"]) == 1.0
        assert "mask_word" in report

    def test_noise_preset(self, workdir, lookup_ds, lookup_model):
        outdir = workdir / "noise_gauss"
        rc = main(["defend", "--dataset", str(lookup_ds), "--model",
                   str(lookup_model), "--mode", "noise", "--preset",
                   "gaussian-low", "--outdir", str(outdir)])
        assert rc == 0
        report = self.read_report(outdir)
        assert report["scheme"] == "gaussian"
        assert "baseline_mse" in report and "beats_baseline" in report

    def test_noise_needs_scheme(self, workdir, lookup_ds, lookup_model):
        rc = main(["defend", "--dataset", str(lookup_ds), "--model",
                   str(lookup_model), "--mode", "noise",
                   "--outdir", str(workdir / "noneed")])
        assert rc == 2


class TestConfigFile:
    def test_config_satisfies_required_flags(self, workdir, hash_ds):
        cfg = workdir / "train.cfg"
        cfg.write_text("k=1\nn=6\nconv-channels=4,8\nlatent=8\nepochs=1\nbatch=8\n")
        out = workdir / "cfg_model.ckpt"
        rc = main(["train", "--config", str(cfg), "--dataset", str(hash_ds),
                   "--out", str(out)])
        assert rc == 0
        text = (workdir / "cfg_model.ckpt.config.txt").read_text()
        assert "k=1\n" in text and "n=6\n" in text

    def test_explicit_flag_overrides_config(self, workdir, hash_ds):
        cfg = workdir / "train2.cfg"
        cfg.write_text("k=1\nn=6\nconv-channels=4,8\nlatent=8\nepochs=1\nbatch=8\n")
        out = workdir / "cfg_model2.ckpt"
        rc = main(["train", "--config", str(cfg), "--dataset", str(hash_ds),
                   "--epochs", "2", "--out", str(out)])
        assert rc == 0
        history = (workdir / "cfg_model2.history.csv").read_text().splitlines()
        assert len(history) == 3  # header + 2 epochs

    def test_unknown_config_key(self, workdir, hash_ds):
        cfg = workdir / "bad.cfg"
        cfg.write_text("k=1\nn=6\nturbo=yes\n")
        rc = main(["train", "--config", str(cfg), "--dataset", str(hash_ds),
                   "--out", str(workdir / "nope.ckpt")])
        assert rc == 2

    def test_malformed_config_line(self, workdir, hash_ds):
        cfg = workdir / "bad2.cfg"
        cfg.write_text("k 1\n")
        rc = main(["train", "--config", str(cfg), "--dataset", str(hash_ds),
                   "--out", str(workdir / "nope2.ckpt")])
        assert rc == 2


class TestUsage:
    def test_no_arguments(self):
        assert main([]) == 1

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 1

    def test_gen_without_out(self):
        assert main(["gen", "--victim", "lookup"]) == 1
