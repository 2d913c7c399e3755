"""Command-line entry points: preprocess, train, translate, eval.

Exit codes: 0 on success, 2 for usage/config problems, 1 for runtime
failures. Every command writes a JSON run manifest before starting its
long-running work so runs can be reproduced from the manifest alone.
"""

from __future__ import annotations

import argparse
import os
import sys

from .checkpoint import (
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from .config import (
    SETTINGS,
    RunManifest,
    parse_config_file,
    resolve_settings,
)
from .metrics import MetricsError, avg_hypothesis_length, bleu, perplexity
from .model import ConfigError, Model, ModelConfig
from .optim import AdaDelta
from .search import beam_search, greedy_decode
from .subword import (
    EOS_ID,
    MergeTable,
    SubwordError,
    Vocab,
    join_subword_tokens,
)
from .training import (
    CorpusError,
    LineCountMismatchError,
    SentenceFailure,
    TrainConfig,
    epoch_shuffle_seed,
    learn_subword_side,
    load_parallel_corpus,
    load_source_corpus,
    make_batches,
    prepare_source,
    prepare_target,
    train_epoch,
)
from .trees import TreeError, parse_bracketed, serialize


class UsageError(ValueError):
    pass


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh]


def _require_files(args, flags):
    """Input paths must exist; every problem is named by its flag."""
    problems = []
    for flag in flags:
        path = getattr(args, flag)
        if path is not None and not os.path.isfile(path):
            problems.append(f"--{flag.replace('_', '-')}: no such file:"
                            f" {path}")
    if problems:
        raise UsageError("; ".join(problems))


def _manifest(args, command, settings=None):
    manifest = RunManifest(command=command, argv=list(args.argv_),
                           settings=dict(settings or {}))
    return manifest


def cmd_preprocess(args):
    _require_files(args, ["src", "trees", "tgt"])
    os.makedirs(args.outdir, exist_ok=True)
    out = {name: os.path.join(args.outdir, name)
           for name in ("src.vocab", "tgt.vocab", "src.merges", "tgt.merges",
                        "src.proc", "trees.proc", "tgt.proc")}

    manifest = _manifest(args, "preprocess",
                         {"max_vocab": args.max_vocab,
                          "num_merges": args.num_merges})
    for label in ("src", "trees", "tgt"):
        manifest.add_input(label, getattr(args, label))
    manifest.outputs = dict(out)
    manifest.write(os.path.join(args.outdir, "manifest.json"))

    src_lines = _read_lines(args.src)
    tree_lines = _read_lines(args.trees)
    tgt_lines = _read_lines(args.tgt)
    if not len(src_lines) == len(tree_lines) == len(tgt_lines):
        raise LineCountMismatchError(
            f"line counts differ: src={len(src_lines)}"
            f" trees={len(tree_lines)} tgt={len(tgt_lines)}")

    src_side = learn_subword_side([l.split() for l in src_lines],
                                  args.max_vocab, args.num_merges)
    tgt_side = learn_subword_side([l.split() for l in tgt_lines],
                                  args.max_vocab, args.num_merges)
    src_side.vocab.save(out["src.vocab"])
    tgt_side.vocab.save(out["tgt.vocab"])
    src_side.merges.save(out["src.merges"])
    tgt_side.merges.save(out["tgt.merges"])

    src_types = set()
    tgt_types = set()
    with open(out["src.proc"], "w", encoding="utf-8") as src_out, \
            open(out["trees.proc"], "w", encoding="utf-8") as tree_out, \
            open(out["tgt.proc"], "w", encoding="utf-8") as tgt_out:
        for lineno, (src, tr, tgt) in enumerate(
                zip(src_lines, tree_lines, tgt_lines), 1):
            try:
                tree = parse_bracketed(tr)
                _, gtree, stoks = prepare_source(
                    src.split(), tree, src_side.vocab, src_side.merges)
                _, ttoks = prepare_target(tgt.split(), tgt_side.vocab,
                                          tgt_side.merges)
            except (TreeError, CorpusError) as exc:
                raise type(exc)(f"line {lineno}: {exc}") from exc
            src_types.update(stoks)
            tgt_types.update(ttoks)
            src_out.write(" ".join(stoks) + "\n")
            tree_out.write(serialize(gtree) + "\n")
            tgt_out.write(" ".join(ttoks) + "\n")

    for side, types, vocab in (("src", src_types, src_side.vocab),
                               ("tgt", tgt_types, tgt_side.vocab)):
        uncovered = sorted(t for t in types if t not in vocab)
        if uncovered:
            print(f"warning: {side} vocab of {args.max_vocab} cannot cover"
                  f" {len(uncovered)} emitted types; raise --max-vocab",
                  file=sys.stderr)

    print(f"src_types_before={src_side.n_types_before}")
    print(f"src_types_after={len(src_types)}")
    print(f"tgt_types_before={tgt_side.n_types_before}")
    print(f"tgt_types_after={len(tgt_types)}")
    return 0


def _validated_configs(settings):
    """Model and trainer config with problems pooled into one report."""
    problems = []
    model_config = ModelConfig(
        d_emb=settings["d_emb"], d=settings["d"], a=settings["a"],
        d_c=settings["d_c"], beta_mode=settings["beta_mode"],
        attend_eos=settings["attend_eos"],
        backward_leaf=settings["backward_leaf"],
        top_down=settings["top_down"])
    try:
        model_config.validate()
    except ConfigError as exc:
        problems.extend(exc.problems)
    train_config = TrainConfig(
        batch_size=settings["batch_size"], max_epochs=settings["max_epochs"],
        shuffle_seed=settings["shuffle_seed"],
        max_sentence_length=settings["max_sentence_length"],
        checkpoint_every=settings["checkpoint_every"],
        threads=settings["threads"])
    try:
        train_config.validate()
    except ConfigError as exc:
        problems.extend(exc.problems)
    if problems:
        raise ConfigError(problems)
    return model_config, train_config


def cmd_train(args):
    _require_files(args, ["src", "trees", "tgt", "src_vocab", "tgt_vocab",
                          "src_merges", "tgt_merges", "config", "resume"])
    file_values = parse_config_file(args.config) if args.config else {}
    overrides = {key: getattr(args, key) for key in SETTINGS}
    settings = resolve_settings(file_values, overrides)
    model_config, train_config = _validated_configs(settings)

    src_vocab = Vocab.load(args.src_vocab)
    tgt_vocab = Vocab.load(args.tgt_vocab)
    src_merges = MergeTable.load(args.src_merges)
    tgt_merges = MergeTable.load(args.tgt_merges)
    dataset = load_parallel_corpus(
        args.src, args.trees, args.tgt, src_vocab, tgt_vocab, src_merges,
        tgt_merges, max_sentence_length=train_config.max_sentence_length)
    if dataset.n_dropped:
        print(f"dropped={dataset.n_dropped}", file=sys.stderr)
    if not dataset.items:
        raise CorpusError("no usable sentence pairs after length filtering")

    if args.resume:
        model, optimizer, start_epoch = load_checkpoint(
            args.resume, require_optimizer=True)
        _check_vocab_match(model, src_vocab, tgt_vocab)
    else:
        model = Model(model_config, len(src_vocab), len(tgt_vocab),
                      seed=settings["seed"])
        optimizer = AdaDelta(model.params)
        start_epoch = 0

    os.makedirs(args.outdir, exist_ok=True)
    final_path = os.path.join(args.outdir, "model.ckpt")
    stats_path = os.path.join(args.outdir, "stats.tsv")
    manifest = _manifest(args, "train", settings)
    for label in ("src", "trees", "tgt", "src_vocab", "tgt_vocab",
                  "src_merges", "tgt_merges"):
        manifest.add_input(label, getattr(args, label))
    if args.resume:
        manifest.add_input("resume", args.resume)
    manifest.outputs = {"checkpoint": final_path, "stats": stats_path}
    manifest.write(os.path.join(args.outdir, "manifest.json"))

    last_epoch = start_epoch
    mode = "a" if args.resume else "w"
    with open(stats_path, mode, encoding="utf-8") as stats_out:
        for epoch in range(start_epoch + 1, train_config.max_epochs + 1):
            batches = make_batches(
                dataset, train_config.batch_size,
                epoch_shuffle_seed(train_config.shuffle_seed, epoch))
            stats = train_epoch(model, batches, optimizer,
                                threads=train_config.threads)
            line = stats.format_line(epoch)
            print(line, flush=True)
            stats_out.write(line + "\n")
            stats_out.flush()
            last_epoch = epoch
            if (train_config.checkpoint_every
                    and epoch % train_config.checkpoint_every == 0):
                save_checkpoint(
                    os.path.join(args.outdir, f"checkpoint-{epoch:04d}.ckpt"),
                    model, optimizer, epoch=epoch)
    save_checkpoint(final_path, model, optimizer, epoch=last_epoch)
    return 0


def _check_vocab_match(model, src_vocab, tgt_vocab):
    problems = []
    if len(src_vocab) != model.src_vocab_size:
        problems.append(f"source vocab has {len(src_vocab)} entries,"
                        f" checkpoint expects {model.src_vocab_size}")
    if len(tgt_vocab) != model.tgt_vocab_size:
        problems.append(f"target vocab has {len(tgt_vocab)} entries,"
                        f" checkpoint expects {model.tgt_vocab_size}")
    if problems:
        raise CheckpointError("; ".join(problems))


def _write_trace(fh, index, traces, tgt_vocab):
    fh.write(f"# sentence {index}\n")
    for step, entry in enumerate(traces, 1):
        alphas = "\t".join(f"{a:.6f}" for a in entry.alpha)
        fh.write(f"{step}\t{tgt_vocab.token(entry.token_id)}\t"
                 f"{entry.beta:.6f}\t{alphas}\n")
    fh.write("\n")


def cmd_translate(args):
    _require_files(args, ["checkpoint", "src", "trees", "src_vocab",
                          "tgt_vocab", "src_merges"])
    model, _, _ = load_checkpoint(args.checkpoint)
    src_vocab = Vocab.load(args.src_vocab)
    tgt_vocab = Vocab.load(args.tgt_vocab)
    src_merges = MergeTable.load(args.src_merges)
    _check_vocab_match(model, src_vocab, tgt_vocab)

    manifest = _manifest(args, "translate",
                         {"beam": args.beam, "greedy": args.greedy,
                          "max_len": args.max_len})
    for label in ("checkpoint", "src", "trees", "src_vocab", "tgt_vocab",
                  "src_merges"):
        manifest.add_input(label, getattr(args, label))
    manifest.outputs = {"hypotheses": args.out}
    if args.trace:
        manifest.outputs["trace"] = args.trace
    manifest.write(args.out + ".manifest.json")

    pairs = load_source_corpus(args.src, args.trees, src_vocab, src_merges)
    trace_fh = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        with open(args.out, "w", encoding="utf-8") as out:
            for index, (src_ids, tree) in enumerate(pairs, 1):
                if args.greedy:
                    hyp = greedy_decode(model, src_ids, tree,
                                        max_len=args.max_len,
                                        trace=bool(trace_fh))
                else:
                    hyp = beam_search(model, src_ids, tree, beam=args.beam,
                                      max_len=args.max_len,
                                      trace=bool(trace_fh))
                tokens = [tgt_vocab.token(i) for i in hyp.ids if i != EOS_ID]
                out.write(join_subword_tokens(tokens) + "\n")
                if trace_fh:
                    _write_trace(trace_fh, index, hyp.traces, tgt_vocab)
    finally:
        if trace_fh:
            trace_fh.close()
    return 0


def cmd_eval(args):
    _require_files(args, ["hyp", "ref", "checkpoint", "src", "trees", "tgt",
                          "src_vocab", "tgt_vocab", "src_merges",
                          "tgt_merges"])
    hyps = [line.split() for line in _read_lines(args.hyp)]
    refs = [line.split() for line in _read_lines(args.ref)]
    print(f"bleu={float(bleu(hyps, refs))}")
    if args.checkpoint:
        needed = [flag for flag in ("src", "trees", "tgt", "src_vocab",
                                    "tgt_vocab", "src_merges", "tgt_merges")
                  if getattr(args, flag) is None]
        if needed:
            raise UsageError(
                "perplexity needs " + ", ".join(f"--{f.replace('_', '-')}"
                                                for f in needed))
        model, _, _ = load_checkpoint(args.checkpoint)
        src_vocab = Vocab.load(args.src_vocab)
        tgt_vocab = Vocab.load(args.tgt_vocab)
        _check_vocab_match(model, src_vocab, tgt_vocab)
        dataset = load_parallel_corpus(
            args.src, args.trees, args.tgt, src_vocab, tgt_vocab,
            MergeTable.load(args.src_merges),
            MergeTable.load(args.tgt_merges), max_sentence_length=None)
        print(f"perplexity={float(perplexity(model, dataset.items))}")
    print(f"avg_length={float(avg_hypothesis_length(hyps))}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="treenmt",
        description="Tree-to-sequence neural machine translation toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    pre = sub.add_parser("preprocess",
                         help="learn vocabularies and merge tables, emit"
                              " processed corpora")
    pre.add_argument("--src", required=True, help="raw source sentences")
    pre.add_argument("--trees", required=True,
                     help="bracketed source trees, one per line")
    pre.add_argument("--tgt", required=True, help="raw target sentences")
    pre.add_argument("--outdir", required=True)
    pre.add_argument("--max-vocab", type=int, default=1000)
    pre.add_argument("--num-merges", type=int, default=100)
    pre.set_defaults(func=cmd_preprocess)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--src", required=True)
    tr.add_argument("--trees", required=True)
    tr.add_argument("--tgt", required=True)
    tr.add_argument("--src-vocab", required=True)
    tr.add_argument("--tgt-vocab", required=True)
    tr.add_argument("--src-merges", required=True)
    tr.add_argument("--tgt-merges", required=True)
    tr.add_argument("--outdir", required=True)
    tr.add_argument("--config", help="flat key=value settings file")
    tr.add_argument("--resume", help="continue from a checkpoint")
    tr.add_argument("--d-emb", dest="d_emb", type=int)
    tr.add_argument("--d", type=int)
    tr.add_argument("--a", type=int)
    tr.add_argument("--d-c", dest="d_c", type=int)
    tr.add_argument("--beta-mode", dest="beta_mode",
                    help="gating | fixed:0.0 | fixed:0.5 | fixed:1.0 |"
                         " unweighted")
    tr.add_argument("--attend-eos", dest="attend_eos",
                    action=argparse.BooleanOptionalAction, default=None)
    tr.add_argument("--top-down", dest="top_down",
                    action=argparse.BooleanOptionalAction, default=None)
    tr.add_argument("--backward-leaf", dest="backward_leaf",
                    action=argparse.BooleanOptionalAction, default=None)
    tr.add_argument("--batch-size", dest="batch_size", type=int)
    tr.add_argument("--max-epochs", dest="max_epochs", type=int)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--shuffle-seed", dest="shuffle_seed", type=int)
    tr.add_argument("--max-sentence-length", dest="max_sentence_length",
                    type=int)
    tr.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    tr.add_argument("--threads", type=int)
    tr.set_defaults(func=cmd_train)

    t2 = sub.add_parser("translate", help="decode source trees")
    t2.add_argument("--checkpoint", required=True)
    t2.add_argument("--src", required=True)
    t2.add_argument("--trees", required=True)
    t2.add_argument("--src-vocab", dest="src_vocab", required=True)
    t2.add_argument("--tgt-vocab", dest="tgt_vocab", required=True)
    t2.add_argument("--src-merges", dest="src_merges", required=True)
    t2.add_argument("--out", required=True,
                    help="hypothesis file, one line per input")
    t2.add_argument("--beam", type=int, default=5)
    t2.add_argument("--greedy", action="store_true",
                    help="use greedy decoding (overrides --beam)")
    t2.add_argument("--max-len", dest="max_len", type=int, default=50)
    t2.add_argument("--trace",
                    help="write per-step attention traces to this file")
    t2.set_defaults(func=cmd_translate)

    ev = sub.add_parser("eval", help="score hypotheses")
    ev.add_argument("--hyp", required=True)
    ev.add_argument("--ref", required=True)
    ev.add_argument("--checkpoint",
                    help="also report perplexity (needs the corpus flags)")
    ev.add_argument("--src")
    ev.add_argument("--trees")
    ev.add_argument("--tgt")
    ev.add_argument("--src-vocab", dest="src_vocab")
    ev.add_argument("--tgt-vocab", dest="tgt_vocab")
    ev.add_argument("--src-merges", dest="src_merges")
    ev.add_argument("--tgt-merges", dest="tgt_merges")
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code
        if code is None:
            return 0
        return code if isinstance(code, int) else 2
    args.argv_ = list(sys.argv[1:] if argv is None else argv)
    try:
        return args.func(args) or 0
    except (ConfigError, UsageError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (TreeError, SubwordError, CorpusError, CheckpointError,
            MetricsError, SentenceFailure, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
