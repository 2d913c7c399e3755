"""End-to-end command-line behavior, run in-process via cli.main."""

import json
import re

import numpy as np
import pytest

from treenmt.checkpoint import load_checkpoint, save_checkpoint
from treenmt.cli import build_parser, main

from modelutil import make_model

SRC = ["the cat sat", "the dog ran", "a cat ran", "the dog sat"]
TREES = [
    "(S (NP (D the) (N cat)) (V sat))",
    "(S (NP (D the) (N dog)) (V ran))",
    "(S (NP (D a) (N cat)) (V ran))",
    "(S (NP (D the) (N dog)) (V sat))",
]
TGT = ["le chat assis", "le chien courait", "un chat courait",
       "le chien assis"]


@pytest.fixture
def corpus(tmp_path):
    paths = {}
    for name, lines in (("src", SRC), ("trees", TREES), ("tgt", TGT)):
        path = tmp_path / f"{name}.txt"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths[name] = str(path)
    return paths


def run_preprocess(tmp_path, corpus, outdir="prep", max_vocab=40):
    out = tmp_path / outdir
    code = main(["preprocess", "--src", corpus["src"], "--trees",
                 corpus["trees"], "--tgt", corpus["tgt"], "--outdir",
                 str(out), "--max-vocab", str(max_vocab),
                 "--num-merges", "10"])
    assert code == 0
    return out


def train_args(corpus, prep, outdir, extra=()):
    return ["train", "--src", corpus["src"], "--trees", corpus["trees"],
            "--tgt", corpus["tgt"],
            "--src-vocab", str(prep / "src.vocab"),
            "--tgt-vocab", str(prep / "tgt.vocab"),
            "--src-merges", str(prep / "src.merges"),
            "--tgt-merges", str(prep / "tgt.merges"),
            "--outdir", str(outdir), "--d-emb", "8", "--d", "8",
            "--batch-size", "2", "--seed", "1", *extra]


def test_preprocess_outputs_and_type_counts(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    for name in ("src.vocab", "tgt.vocab", "src.merges", "tgt.merges",
                 "src.proc", "trees.proc", "tgt.proc", "manifest.json"):
        assert (prep / name).is_file(), name
    lines = capsys.readouterr().out.strip().splitlines()
    counts = dict(line.split("=") for line in lines)
    assert int(counts["src_types_after"]) <= int(counts["src_types_before"])
    assert int(counts["tgt_types_after"]) <= int(counts["tgt_types_before"])
    manifest = json.loads((prep / "manifest.json").read_text())
    assert manifest["command"] == "preprocess"
    assert manifest["inputs"]["trees"]["sha256"]


def test_preprocess_rerun_is_byte_identical(tmp_path, corpus):
    prep = run_preprocess(tmp_path, corpus)
    first = {p.name: p.read_bytes() for p in prep.iterdir()}
    run_preprocess(tmp_path, corpus)
    second = {p.name: p.read_bytes() for p in prep.iterdir()}
    assert first == second


def test_missing_required_flag_is_usage_error(tmp_path, corpus, capsys):
    code = main(["preprocess", "--src", corpus["src"], "--tgt",
                 corpus["tgt"], "--outdir", str(tmp_path / "x")])
    assert code == 2
    assert "--trees" in capsys.readouterr().err


def test_nonexistent_input_file_names_the_flag(tmp_path, corpus, capsys):
    code = main(["preprocess", "--src", corpus["src"], "--trees",
                 str(tmp_path / "missing.txt"), "--tgt", corpus["tgt"],
                 "--outdir", str(tmp_path / "x")])
    assert code == 2
    assert "--trees" in capsys.readouterr().err


def test_no_subcommand_is_usage_error(capsys):
    assert main([]) == 2
    capsys.readouterr()


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    capsys.readouterr()


def test_train_stats_stream_and_artifacts(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    capsys.readouterr()
    outdir = tmp_path / "run"
    code = main(train_args(corpus, prep, outdir,
                           ["--max-epochs", "3", "--checkpoint-every", "2"]))
    assert code == 0
    stdout_lines = capsys.readouterr().out.strip().splitlines()
    assert len(stdout_lines) == 3
    for line in stdout_lines:
        assert re.fullmatch(r"\d+\t\d+\.\d{6}\t\d+\t\d+\.\d{3}", line)
    assert (outdir / "stats.tsv").read_text().strip().splitlines() == \
        stdout_lines
    assert (outdir / "model.ckpt").is_file()
    assert (outdir / "checkpoint-0002.ckpt").is_file()
    manifest = json.loads((outdir / "manifest.json").read_text())
    assert manifest["settings"]["max_epochs"] == 3
    assert manifest["outputs"]["checkpoint"].endswith("model.ckpt")


def test_train_rerun_reproduces_checkpoint_bytes(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    outdir = tmp_path / "run"
    assert main(train_args(corpus, prep, outdir, ["--max-epochs", "2"])) == 0
    first = (outdir / "model.ckpt").read_bytes()
    assert main(train_args(corpus, prep, outdir, ["--max-epochs", "2"])) == 0
    assert (outdir / "model.ckpt").read_bytes() == first
    capsys.readouterr()


def test_train_config_file_and_flag_precedence(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    capsys.readouterr()
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nmax_epochs = 5\nbatch_size = 2\n",
                   encoding="utf-8")
    outdir = tmp_path / "run"
    code = main(train_args(corpus, prep, outdir,
                           ["--config", str(cfg), "--max-epochs", "1"]))
    assert code == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == 1


def test_train_bad_config_reports_all_problems(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("frobnicate = 1\nthreads = soon\n", encoding="utf-8")
    code = main(train_args(corpus, prep, tmp_path / "run",
                           ["--config", str(cfg)]))
    assert code == 2
    err = capsys.readouterr().err
    assert "frobnicate" in err
    assert "threads" in err


def test_train_invalid_flags_all_at_once(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    code = main(train_args(corpus, prep, tmp_path / "run",
                           ["--beta-mode", "sometimes", "--d-c", "-3"]))
    assert code == 2
    err = capsys.readouterr().err
    assert "beta_mode" in err
    assert "d_c" in err


def test_train_resume_matches_unbroken_run(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    unbroken = tmp_path / "unbroken"
    assert main(train_args(corpus, prep, unbroken,
                           ["--max-epochs", "4"])) == 0
    split = tmp_path / "split"
    assert main(train_args(corpus, prep, split, ["--max-epochs", "2"])) == 0
    capsys.readouterr()
    assert main(train_args(corpus, prep, split,
                           ["--max-epochs", "4", "--resume",
                            str(split / "model.ckpt")])) == 0
    resumed_lines = capsys.readouterr().out.strip().splitlines()
    assert [l.split("\t")[0] for l in resumed_lines] == ["3", "4"]

    want, _, _ = load_checkpoint(unbroken / "model.ckpt")
    got, _, _ = load_checkpoint(split / "model.ckpt")
    for name, p in want.params.items():
        np.testing.assert_allclose(got.params[name].value, p.value,
                                   rtol=0, atol=1e-9)
    stats = (split / "stats.tsv").read_text().strip().splitlines()
    unbroken_stats = (unbroken / "stats.tsv").read_text().strip().splitlines()
    assert len(stats) == 4
    for mine, theirs in zip(stats, unbroken_stats):
        assert mine.split("\t")[:3] == theirs.split("\t")[:3]


def test_resume_refuses_inference_only_checkpoint(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    bare = tmp_path / "bare.ckpt"
    model = make_model(d_emb=8, d=8, src_vocab=10, tgt_vocab=10)
    save_checkpoint(bare, model)
    code = main(train_args(corpus, prep, tmp_path / "run",
                           ["--max-epochs", "1", "--resume", str(bare)]))
    assert code == 1
    assert "optimizer" in capsys.readouterr().err


def trained_run(tmp_path, corpus, capsys):
    prep = run_preprocess(tmp_path, corpus)
    outdir = tmp_path / "run"
    assert main(train_args(corpus, prep, outdir, ["--max-epochs", "2"])) == 0
    capsys.readouterr()
    return prep, outdir


def translate_args(corpus, prep, outdir, out, extra=()):
    return ["translate", "--checkpoint", str(outdir / "model.ckpt"),
            "--src", corpus["src"], "--trees", corpus["trees"],
            "--src-vocab", str(prep / "src.vocab"),
            "--tgt-vocab", str(prep / "tgt.vocab"),
            "--src-merges", str(prep / "src.merges"),
            "--out", str(out), "--max-len", "6", *extra]


def test_translate_writes_one_line_per_input(tmp_path, corpus, capsys):
    prep, outdir = trained_run(tmp_path, corpus, capsys)
    out = tmp_path / "hyp.txt"
    assert main(translate_args(corpus, prep, outdir, out)) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == len(SRC)
    assert (tmp_path / "hyp.txt.manifest.json").is_file()


def test_translate_beam_one_equals_greedy(tmp_path, corpus, capsys):
    prep, outdir = trained_run(tmp_path, corpus, capsys)
    beam_out = tmp_path / "beam.txt"
    greedy_out = tmp_path / "greedy.txt"
    assert main(translate_args(corpus, prep, outdir, beam_out,
                               ["--beam", "1"])) == 0
    assert main(translate_args(corpus, prep, outdir, greedy_out,
                               ["--greedy"])) == 0
    assert beam_out.read_bytes() == greedy_out.read_bytes()


def test_translate_default_beam_is_five():
    parser = build_parser()
    args = parser.parse_args(["translate", "--checkpoint", "c", "--src",
                              "s", "--trees", "t", "--src-vocab", "v",
                              "--tgt-vocab", "w", "--src-merges", "m",
                              "--out", "o"])
    assert args.beam == 5


def test_translate_trace_blocks(tmp_path, corpus, capsys):
    prep, outdir = trained_run(tmp_path, corpus, capsys)
    out = tmp_path / "hyp.txt"
    trace = tmp_path / "trace.tsv"
    assert main(translate_args(corpus, prep, outdir, out,
                               ["--trace", str(trace)])) == 0
    text = trace.read_text()
    assert text.count("# sentence ") == len(SRC)
    step_lines = [l for l in text.splitlines()
                  if l and not l.startswith("#")]
    for line in step_lines:
        fields = line.split("\t")
        # step index, token, beta, then one alpha per annotation node
        assert len(fields) == 3 + 6
        alphas = [float(a) for a in fields[3:]]
        assert abs(sum(alphas) - 1.0) < 1e-4


def test_translate_vocab_mismatch(tmp_path, corpus, capsys):
    prep, outdir = trained_run(tmp_path, corpus, capsys)
    other = run_preprocess(tmp_path, corpus, outdir="prep8", max_vocab=8)
    capsys.readouterr()
    code = main(translate_args(corpus, other, outdir, tmp_path / "h.txt"))
    assert code == 1
    assert "checkpoint expects" in capsys.readouterr().err


def test_eval_identity_bleu(tmp_path, corpus, capsys):
    code = main(["eval", "--hyp", corpus["tgt"], "--ref", corpus["tgt"]])
    assert code == 0
    out = capsys.readouterr().out
    assert "bleu=1.0" in out
    assert "avg_length=3.0" in out
    assert "perplexity" not in out


def test_eval_fresh_model_perplexity_near_vocab_size(tmp_path, corpus,
                                                     capsys):
    prep = run_preprocess(tmp_path, corpus)
    capsys.readouterr()
    vocab_size = sum(1 for _ in
                     (prep / "tgt.vocab").read_text().splitlines())
    ckpt = tmp_path / "fresh.ckpt"
    model = make_model(d_emb=8, d=8, src_vocab=vocab_size,
                       tgt_vocab=vocab_size)
    save_checkpoint(ckpt, model)
    code = main(["eval", "--hyp", corpus["tgt"], "--ref", corpus["tgt"],
                 "--checkpoint", str(ckpt), "--src", corpus["src"],
                 "--trees", corpus["trees"], "--tgt", corpus["tgt"],
                 "--src-vocab", str(prep / "src.vocab"),
                 "--tgt-vocab", str(prep / "tgt.vocab"),
                 "--src-merges", str(prep / "src.merges"),
                 "--tgt-merges", str(prep / "tgt.merges")])
    assert code == 0
    out = dict(line.split("=") for line in
               capsys.readouterr().out.strip().splitlines())
    assert abs(float(out["perplexity"]) - vocab_size) / vocab_size < 0.15


def test_eval_perplexity_requires_corpus_flags(tmp_path, corpus, capsys):
    ckpt = tmp_path / "fresh.ckpt"
    save_checkpoint(ckpt, make_model(d_emb=8, d=8))
    code = main(["eval", "--hyp", corpus["tgt"], "--ref", corpus["tgt"],
                 "--checkpoint", str(ckpt)])
    assert code == 2
    assert "--src-vocab" in capsys.readouterr().err


def test_eval_count_mismatch_is_runtime_error(tmp_path, corpus, capsys):
    short = tmp_path / "short.txt"
    short.write_text("une ligne\n", encoding="utf-8")
    code = main(["eval", "--hyp", str(short), "--ref", corpus["tgt"]])
    assert code == 1
    capsys.readouterr()
