"""Command-line surface: reproducible data generation, training, decoding,
and evaluation runs. Every run writes machine-readable outputs plus a
manifest (resolved config, hash, versions) into its output directory."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict

import numpy as np
import torch

from . import baselines, datasets, decoding, metrics
from .corruption import CorruptionConfig, make_training_set
from .events import (Event, EventSequence, TagScheme, dump_sequences,
                     load_jsonl, load_sequences)
from .model import (ModelConfig, PAPER_TRAIN_PRESET, Seq2SeqModel,
                    TrainConfig, example_to_ids, grad_check, load_checkpoint,
                    reconstruction_accuracy, save_checkpoint, sequence_loss,
                    train)
from .vocab import Vocab, build_vocab

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_SHAPE = 4
EXIT_SIZE_LIMIT = 5


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_ERROR):
        super().__init__(message)
        self.code = code


def _load_config_file(path, parser_dests: set[str]) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_MISSING_FILE)
    except json.JSONDecodeError as e:
        raise CliError(f"config parse error: {e}", EXIT_CONFIG)
    unknown = set(cfg) - parser_dests
    if unknown:
        raise CliError(f"unknown config keys: {sorted(unknown)}", EXIT_CONFIG)
    return cfg


def _write_manifest(out_dir, command: str, config: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    canonical = json.dumps(config, sort_keys=True)
    manifest = {
        "command": command,
        "config": config,
        "config_hash": hashlib.sha256(canonical.encode()).hexdigest(),
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _require_file(path):
    if not os.path.exists(path):
        raise CliError(f"missing file: {path}", EXIT_MISSING_FILE)
    return path


def _load_model(args):
    _require_file(args.ckpt)
    try:
        model, header = load_checkpoint(args.ckpt)
    except ValueError as e:
        raise CliError(str(e), EXIT_SHAPE)
    vocab = Vocab.load(_require_file(args.vocab))
    variant = header["extra"].get("scheme", "indexed")
    scheme = TagScheme(variant, max_index=vocab.max_index)
    return model, header, vocab, scheme


def _corpus_lines(seqs):
    for s in seqs:
        for e in s.events:
            yield " ".join(c.text for c in e.constituents)


# ---------------------------------------------------------------- commands


def cmd_gen_data(args):
    rng = np.random.default_rng(args.seed)
    if args.kind == "schema":
        seqs = datasets.gen_schema_corpus(
            datasets.load_schemas(), args.n, rng,
            drop_prob=args.drop_prob, split=args.split)
    else:
        year_values = None
        if args.year_holdout:
            lo, hi = map(int, args.year_holdout.split(":"))
            band = range(lo, hi + 1)
            if args.split == "eval":
                year_values = tuple(band)
            else:
                year_values = tuple(y for y in range(1000, 2101) if y not in band)
        spec = datasets.TimexSpec(args.timex_kind, year_values=year_values)
        seqs = datasets.gen_timex_corpus(spec, args.n, args.events_per_seq, rng)
    os.makedirs(args.out_dir, exist_ok=True)
    dump_sequences(seqs, os.path.join(args.out_dir, args.out_name))
    _write_manifest(args.out_dir, "gen-data", _public_args(args))
    print(f"wrote {len(seqs)} sequences")


def cmd_build_vocab(args):
    seqs = load_sequences(_require_file(args.data))
    vocab = build_vocab(_corpus_lines(seqs), min_count=args.min_count,
                        max_index=args.max_index)
    os.makedirs(args.out_dir, exist_ok=True)
    vocab.save(os.path.join(args.out_dir, args.out_name))
    _write_manifest(args.out_dir, "build-vocab", _public_args(args))
    print(f"vocab size {len(vocab)}")


def _train_configs(args, vocab):
    if args.preset == "paper":
        tcfg = PAPER_TRAIN_PRESET
        ccfg = CorruptionConfig(deletion_prob=0.15, permutations_per_sequence=2,
                                seed=args.seed)
    else:
        tcfg = TrainConfig(learning_rate=args.lr,
                           warmup_steps=min(args.warmup, args.steps),
                           total_steps=args.steps, batch_size=args.batch_size,
                           seed=args.seed)
        ccfg = CorruptionConfig(deletion_prob=args.deletion_prob,
                                permutations_per_sequence=args.permutations,
                                seed=args.seed)
    mcfg = ModelConfig(vocab_size=len(vocab), d_model=args.d_model,
                       n_heads=args.n_heads, n_enc_layers=args.layers,
                       n_dec_layers=args.layers, d_ff=args.d_ff,
                       dropout_prob=args.dropout, max_len=args.max_len,
                       seed=args.seed)
    return mcfg, tcfg, ccfg


def cmd_train(args):
    seqs = load_sequences(_require_file(args.data))
    vocab = Vocab.load(_require_file(args.vocab))
    mcfg, tcfg, ccfg = _train_configs(args, vocab)
    scheme = TagScheme(args.scheme, max_index=vocab.max_index)
    examples = make_training_set(seqs, ccfg)
    model = Seq2SeqModel(mcfg, pad_id=vocab.pad_id)
    result = train(model, examples, tcfg, vocab, scheme,
                   log_every=args.log_every)
    os.makedirs(args.out_dir, exist_ok=True)
    save_checkpoint(os.path.join(args.out_dir, "model.ckpt"), model,
                    "seq2seq", mcfg,
                    extra={"scheme": args.scheme,
                           "train": asdict(tcfg), "corruption": asdict(ccfg)})
    with open(os.path.join(args.out_dir, "losses.json"), "w") as f:
        json.dump(result.losses, f)
    _write_manifest(args.out_dir, "train",
                    {**_public_args(args), "resolved_model": asdict(mcfg),
                     "resolved_train": asdict(tcfg),
                     "resolved_corruption": asdict(ccfg)})
    print(f"final loss {result.losses[-1]:.4f} over {len(result.losses)} steps")


def cmd_train_baseline(args):
    seqs = load_sequences(_require_file(args.data))
    vocab = Vocab.load(_require_file(args.vocab))
    mcfg, tcfg, _ = _train_configs(args, vocab)
    scheme = TagScheme(args.scheme, max_index=vocab.max_index)
    for s in seqs:
        if len(s) > baselines.MAX_EXACT_N:
            raise CliError(
                f"sequence {s.source_id} has {len(s)} events; baselines are "
                f"limited to {baselines.MAX_EXACT_N}", EXIT_SIZE_LIMIT)
    eval_set = metrics.make_ordering_eval_set(seqs, seed=args.seed,
                                              permutations_per_sequence=1)
    dataset = [(list(ex.input_events), ex.gold_perm) for ex in eval_set]
    if args.kind == "pairwise":
        model = baselines.PairwiseModel(mcfg, pad_id=vocab.pad_id)
        losses = baselines.train_pairwise(model, dataset, tcfg, scheme, vocab)
    else:
        model = baselines.PointerNet(mcfg, pad_id=vocab.pad_id)
        losses = baselines.train_pointer(model, dataset, tcfg, scheme, vocab)
    os.makedirs(args.out_dir, exist_ok=True)
    save_checkpoint(os.path.join(args.out_dir, "model.ckpt"), model,
                    args.kind, mcfg, extra={"scheme": args.scheme})
    with open(os.path.join(args.out_dir, "losses.json"), "w") as f:
        json.dump(losses, f)
    _write_manifest(args.out_dir, "train-baseline",
                    {**_public_args(args), "resolved_model": asdict(mcfg),
                     "resolved_train": asdict(tcfg)})
    print(f"final loss {losses[-1]:.4f}")


def _order_fn(model, header, vocab, scheme, args):
    kind = header["kind"]
    dcfg = decoding.DecodeConfig(beam_size=args.beam_size, seed=args.seed)

    def fn(events):
        if kind == "seq2seq":
            return decoding.order_events(model, events, scheme, vocab,
                                         dcfg).permutation
        if kind == "pairwise":
            if len(events) > baselines.MAX_EXACT_N:
                raise CliError("too many events for exact decode",
                               EXIT_SIZE_LIMIT)
            B = baselines.pairwise_scores(model, events, scheme, vocab)
            return baselines.global_decode(B)
        return baselines.pointer_decode(model, events, scheme, vocab)

    return fn


def cmd_order(args):
    model, header, vocab, scheme = _load_model(args)
    fn = _order_fn(model, header, vocab, scheme, args)
    os.makedirs(args.out_dir, exist_ok=True)
    out_path = os.path.join(args.out_dir, "predictions.jsonl")
    with open(out_path, "w") as f:
        for d in load_jsonl(_require_file(args.data)):
            seq = EventSequence.from_dict(d)
            perm = fn(list(seq.events))
            f.write(json.dumps({"id": seq.source_id,
                                "permutation": list(perm)}) + "\n")
    _write_manifest(args.out_dir, "order", _public_args(args))
    print(f"wrote {out_path}")


def cmd_eval_ordering(args):
    model, header, vocab, scheme = _load_model(args)
    seqs = load_sequences(_require_file(args.data))
    eval_set = metrics.make_ordering_eval_set(
        seqs, seed=args.seed, permutations_per_sequence=args.permutations)
    fn = _order_fn(model, header, vocab, scheme, args)
    report = metrics.evaluate_ordering(fn, eval_set)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "report.json"), "w") as f:
        f.write(report.to_json() + "\n")
    _write_manifest(args.out_dir, "eval-ordering", _public_args(args))
    print(report.to_json())


def cmd_eval_mctaco(args):
    model, header, vocab, scheme = _load_model(args)
    examples = datasets.load_mctaco_fixture(args.fixture)
    fn = _order_fn(model, header, vocab, scheme, args)
    report = metrics.evaluate_before_after(fn, examples, seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "report.json"), "w") as f:
        f.write(report.to_json() + "\n")
    _write_manifest(args.out_dir, "eval-mctaco", _public_args(args))
    print(report.to_json())


def cmd_rank_insert(args):
    model, header, vocab, scheme = _load_model(args)
    rng = np.random.default_rng(args.seed)
    cases = datasets.make_infill_cases(datasets.load_schemas(), args.n, rng,
                                       split=args.split)

    def rank_fn(seed_events, new_event):
        ranked = decoding.rank_insertions(model, seed_events, new_event,
                                          scheme, vocab,
                                          use_tag_score=args.tag_score)
        return [pos for pos, _ in ranked]

    report = metrics.evaluate_insertion_ranking(rank_fn, cases)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "report.json"), "w") as f:
        f.write(report.to_json() + "\n")
    _write_manifest(args.out_dir, "rank-insert", _public_args(args))
    print(report.to_json())


def cmd_infill(args):
    model, header, vocab, scheme = _load_model(args)
    rng = np.random.default_rng(args.seed)
    cases = datasets.make_infill_cases(datasets.load_schemas(), args.n, rng,
                                       split=args.split)
    dcfg = decoding.DecodeConfig(nucleus_p=args.nucleus_p,
                                 max_decode_len=args.max_decode_len,
                                 seed=args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    out_path = os.path.join(args.out_dir, "infills.jsonl")
    n_ok = 0
    with open(out_path, "w") as f:
        for i, case in enumerate(cases):
            query = decoding.InfillQuery(case.seed_events, case.gold_position)
            rec = {"case": i, "position": case.gold_position}
            try:
                res = decoding.infill(model, query, scheme, vocab, dcfg,
                                      rng=np.random.default_rng([args.seed, i]))
                rec.update(predicate=res.predicate, body=res.body)
                n_ok += 1
            except decoding.MalformedGenerationError as e:
                rec["error"] = str(e)
            f.write(json.dumps(rec) + "\n")
    _write_manifest(args.out_dir, "infill", _public_args(args))
    print(f"{n_ok}/{len(cases)} infills parsed")


def cmd_timex_probe(args):
    model, header, vocab, scheme = _load_model(args)
    rng = np.random.default_rng(args.seed)
    year_values = None
    if args.year_holdout:
        lo, hi = map(int, args.year_holdout.split(":"))
        year_values = tuple(range(lo, hi + 1))
    spec = datasets.TimexSpec(args.timex_kind, year_values=year_values)
    seqs = datasets.gen_timex_corpus(spec, args.n, 3, rng)
    eval_set = metrics.make_ordering_eval_set(seqs, seed=args.seed,
                                              permutations_per_sequence=1)
    fn = _order_fn(model, header, vocab, scheme, args)
    report = metrics.evaluate_ordering(fn, eval_set)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "report.json"), "w") as f:
        f.write(report.to_json() + "\n")
    _write_manifest(args.out_dir, "timex-probe", _public_args(args))
    print(report.to_json())


def cmd_grad_check(args):
    torch.manual_seed(args.seed)
    vocab_size, d_model = 20, 8
    mcfg = ModelConfig(vocab_size=vocab_size, d_model=d_model, n_heads=2,
                       n_enc_layers=1, n_dec_layers=1, d_ff=16,
                       dropout_prob=0.0, max_len=16, seed=args.seed)
    model = Seq2SeqModel(mcfg).double()
    rng = np.random.default_rng(args.seed)
    src = torch.tensor(rng.integers(4, vocab_size, size=6), dtype=torch.long)
    tgt_in = torch.tensor([1] + list(rng.integers(4, vocab_size, size=5)),
                          dtype=torch.long)
    tgt_out = torch.tensor(list(tgt_in[1:]) + [2], dtype=torch.long)

    def loss_fn():
        return sequence_loss(model(src[None], tgt_in[None]), tgt_out[None], 0)

    err = grad_check(model, loss_fn)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "report.json"), "w") as f:
        json.dump({"max_relative_error": err}, f)
        f.write("\n")
    _write_manifest(args.out_dir, "grad-check", _public_args(args))
    print(f"max relative error {err:.3e}")
    if err >= 1e-4:
        raise CliError("gradient check failed", EXIT_ERROR)


def cmd_scaling_curve(args):
    seqs = load_sequences(_require_file(args.data))
    eval_seqs = load_sequences(_require_file(args.eval_data))
    vocab = Vocab.load(_require_file(args.vocab))
    scheme = TagScheme(args.scheme, max_index=vocab.max_index)
    sizes = [int(s) for s in args.sizes.split(",")]
    rows = []
    for size in sizes:
        if size > len(seqs):
            raise CliError(f"requested size {size} exceeds corpus "
                           f"({len(seqs)} sequences)", EXIT_CONFIG)
        mcfg, tcfg, ccfg = _train_configs(args, vocab)
        examples = make_training_set(seqs[:size], ccfg)
        model = Seq2SeqModel(mcfg, pad_id=vocab.pad_id)
        train(model, examples, tcfg, vocab, scheme)
        eval_set = metrics.make_ordering_eval_set(eval_seqs, seed=args.seed)
        dcfg = decoding.DecodeConfig(beam_size=args.beam_size, seed=args.seed)
        report = metrics.evaluate_ordering(
            lambda ev: decoding.order_events(model, ev, scheme, vocab,
                                             dcfg).permutation, eval_set)
        rows.append((size, report.pairwise_accuracy, report.exact_match))
        print(f"size {size}: pairwise {report.pairwise_accuracy:.3f}")
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "scaling.csv"), "w") as f:
        f.write("n_sequences,pairwise_accuracy,exact_match\n")
        for size, acc, em in rows:
            f.write(f"{size},{acc},{em}\n")
    _write_manifest(args.out_dir, "scaling-curve", _public_args(args))


# ----------------------------------------------------------------- parser


def _public_args(args) -> dict:
    skip = {"func", "config"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _add_common(p, out_dir):
    p.add_argument("--config", default=None,
                   help="JSON config file; flags take precedence")
    p.add_argument("--out-dir", default=out_dir)
    p.add_argument("--seed", type=int, default=0)


def _add_model_flags(p):
    p.add_argument("--scheme", choices=["plain", "indexed"], default="indexed")
    p.add_argument("--preset", choices=["toy", "paper"], default="toy")
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--d-ff", type=int, default=512)
    p.add_argument("--dropout", type=float, default=0.1)
    p.add_argument("--max-len", type=int, default=256)
    p.add_argument("--lr", type=float, default=3e-4)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--deletion-prob", type=float, default=0.15)
    p.add_argument("--permutations", type=int, default=2)
    p.add_argument("--log-every", type=int, default=0)


def _add_ckpt_flags(p):
    p.add_argument("--ckpt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--beam-size", type=int, default=4)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="temporder",
        description="Temporal event ordering and infilling toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic corpora")
    _add_common(p, "runs/gen-data")
    p.add_argument("--kind", choices=["schema", "timex"], required=True)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--out-name", default="sequences.jsonl")
    p.add_argument("--timex-kind", choices=list(datasets.TIMEX_KINDS),
                   default="year")
    p.add_argument("--events-per-seq", type=int, default=3)
    p.add_argument("--year-holdout", default=None,
                   help="lo:hi band excluded from (split=train) or forming "
                        "(split=eval) the year pool")
    p.add_argument("--drop-prob", type=float, default=0.0)
    p.add_argument("--split", choices=["all", "train", "eval"], default="all")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("build-vocab", help="build the token vocabulary")
    _add_common(p, "runs/vocab")
    p.add_argument("--data", required=True)
    p.add_argument("--out-name", default="vocab.txt")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--max-index", type=int, default=30)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train the denoising seq2seq model")
    _add_common(p, "runs/train")
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-baseline", help="train a discriminative baseline")
    _add_common(p, "runs/train-baseline")
    p.add_argument("--kind", choices=["pairwise", "pointer"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--vocab", required=True)
    _add_model_flags(p)
    p.set_defaults(func=cmd_train_baseline)

    p = sub.add_parser("order", help="order event sets with a trained model")
    _add_common(p, "runs/order")
    _add_ckpt_flags(p)
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_order)

    p = sub.add_parser("eval-ordering", help="pairwise-accuracy evaluation")
    _add_common(p, "runs/eval-ordering")
    _add_ckpt_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--permutations", type=int, default=2)
    p.set_defaults(func=cmd_eval_ordering)

    p = sub.add_parser("eval-mctaco", help="before/after question evaluation")
    _add_common(p, "runs/eval-mctaco")
    _add_ckpt_flags(p)
    p.add_argument("--fixture", default=None,
                   help="fixture JSONL; default ships with the package")
    p.set_defaults(func=cmd_eval_mctaco)

    p = sub.add_parser("rank-insert", help="insertion-position ranking")
    _add_common(p, "runs/rank-insert")
    _add_ckpt_flags(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--split", choices=["all", "train", "eval"], default="eval")
    p.add_argument("--tag-score", action="store_true")
    p.set_defaults(func=cmd_rank_insert)

    p = sub.add_parser("infill", help="generate one new event per case")
    _add_common(p, "runs/infill")
    _add_ckpt_flags(p)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--split", choices=["all", "train", "eval"], default="eval")
    p.add_argument("--nucleus-p", type=float, default=0.8)
    p.add_argument("--max-decode-len", type=int, default=60)
    p.set_defaults(func=cmd_infill)

    p = sub.add_parser("timex-probe", help="timex ordering probe")
    _add_common(p, "runs/timex-probe")
    _add_ckpt_flags(p)
    p.add_argument("--timex-kind", dest="timex_kind", default="year",
                   choices=list(datasets.TIMEX_KINDS))
    p.add_argument("--kind", dest="timex_kind",
                   choices=list(datasets.TIMEX_KINDS), help=argparse.SUPPRESS)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--year-holdout", default=None)
    p.set_defaults(func=cmd_timex_probe)

    p = sub.add_parser("grad-check", help="finite-difference gradient check")
    _add_common(p, "runs/grad-check")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("scaling-curve", help="accuracy vs training-set size")
    _add_common(p, "runs/scaling-curve")
    p.add_argument("--data", required=True)
    p.add_argument("--eval-data", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--sizes", default="100,300,1000")
    p.add_argument("--beam-size", type=int, default=4)
    _add_model_flags(p)
    p.set_defaults(func=cmd_scaling_curve)

    return parser


def _collect_defaults(parser) -> dict:
    out = {}
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            for sub in a.choices.values():
                out.update(_collect_defaults(sub))
        elif a.dest != "help":
            out.setdefault(a.dest, a.default)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        dests = set(vars(args))
        try:
            overrides = _load_config_file(args.config, dests)
        except CliError as e:
            print(f"error: {e}", file=sys.stderr)
            return e.code
        # config supplies defaults; explicit flags win
        defaults = _collect_defaults(parser)
        for k, v in overrides.items():
            if getattr(args, k, None) == defaults.get(k):
                setattr(args, k, v)
    try:
        args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SHAPE if "shape" in str(e).lower() else EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
