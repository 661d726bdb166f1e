import json
import os

import numpy as np
import pytest

from dlvm.data import Vocab
from dlvm.exact import corpus_log_marginal
from dlvm.harness.cli import main
from dlvm.harness.config import Config, ConfigError, load_config, loads, parse_overrides
from dlvm.harness.corpus import (CorpusError, EmptyLineWarning, load_corpus, load_latents, load_vocab, write_corpus,
                                 write_latents, write_vocab)
from dlvm.harness.metrics import MetricsError, MetricsWriter, read_metrics
from dlvm.harness.recipes import RECIPES, run_recipe
from dlvm.harness.run import load_data, load_trained
from dlvm.harness.synth import TruncationWarning, synth_corpus
from dlvm.checkpoint import load_checkpoint
from dlvm.models import Hmm, NaiveBayes
from dlvm.rng import Rng

SMALL = ["n_sentences=200", "V=10", "K=3", "length=6"]


def sets(pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


def run_cli(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1]) if out else None


class TestConfig:
    def test_round_trip(self):
        cfg = Config(seed=3, family="hmm", lr=0.1 + 0.2, tau=1 / 3)
        assert loads(cfg.dumps()) == cfg

    def test_file_and_comments(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("# comment\nK = 7  # trailing\n\nfamily = hmm\n")
        cfg = load_config(p)
        assert cfg.K == 7 and cfg.family == "hmm"

    @pytest.mark.parametrize("text,msg", [("bogus = 1", "unknown config key"), ("K = 2.5", "expects int"),
                                          ("K = 2\nK = 3", "duplicate"), ("K 2", "key = value"),
                                          ("inference = gibbs", "inference must be one of"),
                                          ("family = lda", "family must be one of"), ("lr = 0", "positive"),
                                          ("iwae_reps = 0", "positive")])
    def test_errors(self, text, msg):
        with pytest.raises(ConfigError, match=msg):
            loads(text)

    def test_overrides(self):
        cfg = parse_overrides(["K=9", " lr = 0.5 "])
        assert cfg.K == 9 and cfg.lr == 0.5
        with pytest.raises(ConfigError):
            parse_overrides(["K"])
        with pytest.raises(ConfigError):
            parse_overrides(["nope=1"])

    def test_inference_key_lists_every_method(self):
        for m in ("em", "direct-marginal", "variational-em", "svi", "vae", "wake-sleep"):
            assert Config(inference=m).inference == m


class TestCorpusFiles:
    def test_round_trip(self, tmp_path):
        vocab = Vocab.synthetic(6)
        sents = [np.array([0, 5, 2]), np.array([1])]
        write_vocab(tmp_path / "v.txt", vocab)
        write_corpus(tmp_path / "c.txt", sents, vocab)
        back = load_corpus(tmp_path / "c.txt", load_vocab(tmp_path / "v.txt"))
        for a, b in zip(sents, back):
            np.testing.assert_array_equal(a, b)

    def test_unknown_token_names_line(self, tmp_path):
        vocab = Vocab.synthetic(3)
        p = tmp_path / "c.txt"
        write_corpus(p, [np.array([0, 1])], vocab)
        with open(p, "a") as fh:
            fh.write(f"{vocab.tokens[0]} zebra\n")
        with pytest.raises(CorpusError, match="line 3: unknown token 'zebra'"):
            load_corpus(p, vocab)

    def test_empty_line_skipped_with_warning(self, tmp_path):
        vocab = Vocab.synthetic(3)
        p = tmp_path / "c.txt"
        write_corpus(p, [np.array([0]), np.array([], dtype=int), np.array([2])], vocab)
        with pytest.warns(EmptyLineWarning, match="line 3"):
            back = load_corpus(p, vocab)
        assert len(back) == 2

    def test_missing_header(self, tmp_path):
        p = tmp_path / "c.txt"
        p.write_text("a b\n")
        with pytest.raises(CorpusError, match="header"):
            load_corpus(p, Vocab.synthetic(3))

    def test_large_file_reserializes_identically(self, tmp_path):
        vocab = Vocab.synthetic(40)
        rng = np.random.default_rng(42)
        sents = [rng.integers(0, 40, rng.integers(1, 15)) for _ in range(10000)]
        a, b = tmp_path / "a.txt", tmp_path / "b.txt"
        write_corpus(a, sents, vocab)
        write_corpus(b, load_corpus(a, vocab), vocab)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_token_in_vocab(self, tmp_path):
        with pytest.raises(CorpusError):
            write_vocab(tmp_path / "v.txt", Vocab(["a b", "c"]))

    def test_latents_round_trip(self, tmp_path):
        zs = [np.array([2]), np.array([0.1, -1 / 3])]
        write_latents(tmp_path / "z.txt", zs)
        back = load_latents(tmp_path / "z.txt")
        np.testing.assert_array_equal(back[0], [2])
        np.testing.assert_array_equal(back[1], zs[1])


class TestMetrics:
    def test_header_and_records(self, tmp_path):
        p = tmp_path / "m.jsonl"
        with MetricsWriter(p) as mw:
            mw.write({"epoch": 1, "loglik": -2.5})
        with MetricsWriter(p, append=True) as mw:
            mw.write({"epoch": 2, "loglik": -2.0})
        assert read_metrics(p) == [{"epoch": 1, "loglik": -2.5}, {"epoch": 2, "loglik": -2.0}]
        assert p.read_text().startswith("# dlvm-metrics 1\n")

    def test_nonfinite_rejected(self, tmp_path):
        with MetricsWriter(tmp_path / "m.jsonl") as mw:
            with pytest.raises(MetricsError, match="loglik"):
                mw.write({"loglik": float("nan")})


class TestSynth:
    def test_same_seed_same_bytes(self, tmp_path):
        cfg = parse_overrides(SMALL)
        synth_corpus(cfg, tmp_path / "a")
        synth_corpus(cfg, tmp_path / "b")
        for f in ("corpus.txt", "vocab.txt", "latents.txt", "truth.ckpt", "config.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_truth_checkpoint_round_trips(self, tmp_path):
        res = synth_corpus(parse_overrides(SMALL), tmp_path)
        vals = load_checkpoint(tmp_path / "truth.ckpt")
        for k, p in res.truth.params.items():
            np.testing.assert_array_equal(vals[k], p.data)

    def test_one_hot_truth_repeats_one_token(self):
        m = NaiveBayes.from_probs([1.0, 0.0], [[0, 0, 1.0], [1.0, 0, 0]])
        s = m.sample(Rng(0), 50, length=5).sentences
        assert all(np.all(x == 2) for x in s)

    def test_hmm_persistence_statistics(self):
        stay = 0.9
        trans = np.array([[stay, 1 - stay], [1 - stay, stay]])
        m = Hmm.from_probs(np.array([0.5, 0.5]), trans, np.array([[0.7, 0.3], [0.2, 0.8]]))
        s = m.sample(Rng(1), 2000, length=10)
        same = np.concatenate([z[1:] == z[:-1] for z in s.z])
        sd = np.sqrt(stay * (1 - stay) / same.size)
        assert abs(same.mean() - stay) < 3 * sd

    def test_truncation_warning(self):
        cfg = parse_overrides(["family=rnnlm", "V=5", "max_length=2", "n_sentences=100"])
        with pytest.warns(TruncationWarning):
            synth_corpus(cfg)


class TestCli:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_invalid_config_exits_nonzero(self, tmp_path, capsys):
        code = main(["train", "--set", "K=zero", "--out", str(tmp_path)])
        assert code == 1
        assert "expects int" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["synth", "--config", str(tmp_path / "none.txt"), "--out", str(tmp_path)]) == 1

    def test_output_root_from_environment(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DLVM_OUTPUT_ROOT", str(tmp_path))
        code, out = run_cli(["synth"] + sets(SMALL), capsys)
        assert code == 0 and out["out_dir"] == os.path.join(str(tmp_path), "data")
        assert (tmp_path / "data" / "corpus.txt").exists()

    def test_em_run_end_to_end(self, tmp_path, capsys):
        data, run = str(tmp_path / "data"), str(tmp_path / "em")
        assert main(["synth", "--out", data] + sets(SMALL)) == 0
        code, out = run_cli(["train", "--data", data, "--out", run] + sets(SMALL + ["em_iters=30"]), capsys)
        assert code == 0
        ll = [r["loglik"] for r in read_metrics(os.path.join(run, "metrics.jsonl"))]
        assert np.all(np.diff(ll) >= -1e-8)
        # the reported objective is recomputable from the checkpoint
        cfg = load_config(os.path.join(run, "config.txt"))
        sents, vocab = load_data(cfg, data)
        model, _ = load_trained(cfg, os.path.join(run, "model.ckpt"), vocab)
        np.testing.assert_allclose(corpus_log_marginal(model, sents), out["loglik"], rtol=1e-12)

    def test_resume_continues_from_checkpoint(self, tmp_path, capsys):
        common = sets(SMALL + ["inference=direct-marginal", "epochs=2"])
        _, first = run_cli(["train", "--out", str(tmp_path / "a")] + common, capsys)
        _, second = run_cli(["train", "--out", str(tmp_path / "b"), "--resume", str(tmp_path / "a" / "model.ckpt")]
                            + common, capsys)
        start = read_metrics(tmp_path / "b" / "metrics.jsonl")[0]["loglik"]
        np.testing.assert_allclose(start, first["loglik"], rtol=1e-12)
        assert second["loglik"] > first["loglik"]

    @pytest.mark.parametrize("method", ["variational-em", "svi", "wake-sleep"])
    def test_other_methods(self, tmp_path, capsys, method):
        extra = ["encoder=bow", "epochs=2", "em_iters=3", "svi_steps=3", "svi_lr=1.0"]
        code, out = run_cli(["train", "--out", str(tmp_path)] + sets(SMALL + [f"inference={method}"] + extra), capsys)
        assert code == 0 and np.isfinite(out["loglik"])
        assert (tmp_path / "model.ckpt").exists() and (tmp_path / "config.txt").exists()

    def test_vae_eval_sample_diagnose(self, tmp_path, capsys):
        common = SMALL + ["inference=vae", "encoder=bow"]
        ckpt = str(tmp_path / "t" / "model.ckpt")
        assert main(["train", "--out", str(tmp_path / "t")] + sets(common)) == 0
        rows = {}
        for k in (1, 100):
            code, res = run_cli(["eval", "--model", ckpt, "--out", str(tmp_path / f"e{k}")]
                                + sets(common + [f"iwae_k={k}"]), capsys)
            assert code == 0 and res["elbo"] <= res["loglik"]
            rows[k] = read_metrics(tmp_path / f"e{k}" / "metrics.jsonl")[:-1]
        frac = np.mean([b["iwae_100"] >= a["iwae_1"] for a, b in zip(rows[1], rows[100])])
        assert frac >= 0.9
        code, res = run_cli(["sample", "--model", ckpt, "--n", "7", "--out", str(tmp_path / "s")] + sets(common), capsys)
        assert code == 0
        assert len((tmp_path / "s" / "samples.txt").read_text().splitlines()) == 8
        code, _ = run_cli(["diagnose", "--model", ckpt, "--n", "5", "--steps", "20", "--out", str(tmp_path / "d")]
                          + sets(common), capsys)
        assert code == 0
        for r in read_metrics(tmp_path / "d" / "metrics.jsonl"):
            assert r["inference_gap"] == r["approximation_gap"] + r["amortization_gap"]

    def test_diagnose_needs_encoder(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path / "t"), "--set", "em_iters=2"] + sets(SMALL)) == 0
        code = main(["diagnose", "--model", str(tmp_path / "t" / "model.ckpt"), "--out", str(tmp_path / "d")]
                    + sets(SMALL))
        assert code == 1
        assert "inference network" in capsys.readouterr().err

    def test_unknown_recipe(self, tmp_path, capsys):
        assert main(["recipe", "nonesuch", "--out", str(tmp_path)]) == 1


class TestRecipes:
    def test_shipped_presets(self):
        assert {"table1-sweep", "collapse-demo", "gap-study", "estimator-bench", "wake-sleep-nb"} <= set(RECIPES)

    @pytest.mark.parametrize("name,overrides", [("estimator-bench", []),
                                                ("wake-sleep-nb", ["n_sentences=100", "epochs=2"]),
                                                ("table1-sweep", ["n_sentences=100", "V=10", "epochs=5",
                                                                  "em_iters=20"])])
    def test_rerun_is_byte_identical(self, tmp_path, name, overrides):
        run_recipe(name, str(tmp_path / "a"), overrides)
        run_recipe(name, str(tmp_path / "b"), overrides)
        for f in ("metrics.jsonl", "config.txt"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_summary_line_closes_metrics(self, tmp_path):
        summary = run_recipe("estimator-bench", str(tmp_path))
        last = read_metrics(tmp_path / "metrics.jsonl")[-1]
        assert last["summary"] == "estimator-bench"
        assert last["reparam_lower_variance"] == summary["reparam_lower_variance"]
