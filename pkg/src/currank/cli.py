"""Command-line entry point.

Subcommands: ingest, synth, score, train, eval, ablate. Every command
that writes outputs drops a manifest.json with config and input/output
digests next to them, and takes an exclusive lock on the output
directory. Flags override values from an optional YAML --config file,
which overrides built-in defaults.

Exit codes: 0 success, 1 internal failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__, bm25, checkpoint, dense, synth, towers
from .curriculum import (
    DifficultyLedger, PacingParams, build_ledger, load_ledger, save_ledger,
)
from .manifest import RunManifest, digest_paths, write_manifest
from .metrics import entries_from_ranking, evaluate_run, write_qrels, write_run_file
from .ranker import rank_slate
from .scorers import Bm25Scorer, DenseScorer
from .sessions import (
    DEFAULT_NEGATIVE_WINDOW, SEP_TOKEN, SessionLogError,
    build_contexts, build_eval_items, parse_sessions,
    read_contexts, read_documents, read_sessions,
    write_contexts, write_documents, write_sessions,
)
from .towers import Vocab
from .trainer import (
    MODES, TrainConfig, evaluate_ranker, load_ranker, save_ranker,
    steps_per_epoch, sweep, train,
)

LOCK_NAME = ".currank.lock"


class CliError(Exception):
    def __init__(self, message: str, exit_code: int = 2):
        super().__init__(message)
        self.exit_code = exit_code


@contextlib.contextmanager
def output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise CliError(f"output directory {out_dir} is locked by another command")
    try:
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def split_of(session_id: str) -> str:
    """Deterministic 8/1/1 train/val/test split keyed on the session id."""
    bucket = hashlib.sha1(session_id.encode()).digest()[0] % 10
    return "train" if bucket < 8 else ("val" if bucket == 8 else "test")


def load_bundle(bundle_dir: Path):
    for name in ("documents.jsonl", "sessions.jsonl", "contexts.jsonl"):
        if not (bundle_dir / name).exists():
            raise CliError(f"bundle file not found: {bundle_dir / name}")
    with open(bundle_dir / "documents.jsonl") as fp:
        documents = read_documents(fp)
    with open(bundle_dir / "sessions.jsonl") as fp:
        sessions = read_sessions(fp)
    with open(bundle_dir / "contexts.jsonl") as fp:
        contexts = read_contexts(fp)
    return sessions, documents, contexts


def build_vocab(documents, contexts) -> Vocab:
    tokens: set[str] = {SEP_TOKEN}
    for doc in documents.values():
        tokens.update(doc.title_tokens)
    for ctx in contexts:
        tokens.update(ctx.context_tokens)
    return Vocab(tokens)


def write_bundle(out_dir: Path, sessions, documents, contexts) -> list[Path]:
    paths = []
    with open(out_dir / "documents.jsonl", "w") as fp:
        write_documents(documents, fp)
    with open(out_dir / "sessions.jsonl", "w") as fp:
        write_sessions(sessions, fp)
    with open(out_dir / "contexts.jsonl", "w") as fp:
        write_contexts(contexts, fp)
    for name in ("documents.jsonl", "sessions.jsonl", "contexts.jsonl"):
        paths.append(out_dir / name)
    return paths


def _emit_manifest(out_dir, command, config, seed, inputs, outputs, scorer_digest=""):
    write_manifest(
        out_dir,
        RunManifest(
            command=command,
            config=config,
            master_seed=seed,
            input_digests=digest_paths(inputs),
            output_digests=digest_paths(outputs, base=out_dir),
            scorer_digest=scorer_digest,
        ),
    )


# ---------------------------------------------------------------------------
# Commands


def cmd_ingest(args) -> int:
    log_path = Path(args.log)
    if not log_path.exists():
        raise CliError(f"log file not found: {log_path}")
    with open(log_path) as fp:
        try:
            sessions, documents = parse_sessions(fp)
        except SessionLogError as e:
            raise CliError(f"{log_path}: {e}")
    contexts, skipped = build_contexts(sessions, documents, window=args.window)
    out_dir = Path(args.out)
    with output_lock(out_dir):
        outputs = write_bundle(out_dir, sessions, documents, contexts)
        _emit_manifest(
            out_dir, "ingest",
            {"log": str(log_path), "window": args.window},
            None, [log_path], outputs,
        )
    print(f"sessions: {len(sessions)}")
    print(f"documents: {len(documents)}")
    print(f"contexts: {len(contexts)}")
    print(f"clickless interactions skipped: {skipped}")
    return 0


def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_sessions=args.sessions,
        vocab_size=args.vocab_size,
        n_topics=args.topics,
        queries_per_session=args.queries,
        candidates_per_query=args.candidates,
        noise_rate=args.noise,
        seed=args.seed,
    )
    sessions, documents, labels = synth.generate_synthetic(spec)
    contexts, _ = build_contexts(sessions, documents, window=args.window)
    out_dir = Path(args.out)
    with output_lock(out_dir):
        outputs = write_bundle(out_dir, sessions, documents, contexts)
        with open(out_dir / "log.jsonl", "w") as fp:
            synth.write_session_log(sessions, documents, fp)
        with open(out_dir / "labels.jsonl", "w") as fp:
            synth.write_labels(labels, fp)
        outputs += [out_dir / "log.jsonl", out_dir / "labels.jsonl"]

        # Post-generation audit: does the click land on the session topic?
        total = on_topic = 0
        for session in sessions:
            topic = labels[session.session_id]
            for inter in session.interactions:
                for doc_id in inter.clicked_doc_ids:
                    total += 1
                    if doc_id.startswith(f"d{topic:03d}_"):
                        on_topic += 1
        _emit_manifest(
            out_dir, "synth", asdict(spec), args.seed, [], outputs,
        )
    print(f"sessions: {len(sessions)}")
    print(f"documents: {len(documents)}")
    print(f"contexts: {len(contexts)}")
    print(f"on-topic click fraction: {on_topic / total:.4f}")
    if args.noise == 0.0 and on_topic != total:
        raise CliError("separability audit failed with noise 0", exit_code=1)
    return 0


def _make_scorer(kind: str, args, documents, contexts, vocab, out_dir):
    if kind == "bm25":
        index = bm25.build_index(documents)
        return Bm25Scorer(index, bm25.Bm25Params(k1=args.k1, b=args.b))
    if kind != "dense":
        raise CliError(f"unknown scorer kind {kind!r}")
    if args.checkpoint:
        params, ckpt_vocab, _, _ = checkpoint.load_checkpoint(
            args.checkpoint, expect_kind="dense-scorer"
        )
        return DenseScorer(params, ckpt_vocab, documents)
    if not args.fit:
        raise CliError("dense scorer needs --checkpoint or --fit")
    rng = np.random.default_rng([args.seed, 2])
    params = towers.init_params(len(vocab), args.d_emb, args.hidden, rng)
    train_pairs = [
        (c.context_tokens, documents[c.positive_doc_id].title_tokens)
        for c in contexts
    ]
    dense.train_in_batch(
        params, vocab, train_pairs,
        batch_size=args.fit_batch_size, epochs=args.fit_epochs,
        learning_rate=args.fit_lr, seed=args.seed,
    )
    ckpt = out_dir / "dense_scorer.bin"
    checkpoint.save_checkpoint(ckpt, "dense-scorer", params, vocab)
    return DenseScorer(params, vocab, documents)


def cmd_score(args) -> int:
    bundle_dir = Path(args.bundle)
    sessions, documents, contexts = load_bundle(bundle_dir)
    train_contexts = [c for c in contexts if split_of(c.session_id) == "train"]
    if not train_contexts:
        raise CliError("no training-split contexts in bundle")
    vocab = build_vocab(documents, contexts)
    out_dir = Path(args.out)
    pos_kind = args.pos_scorer or args.scorer
    neg_kind = args.neg_scorer or args.scorer
    with output_lock(out_dir):
        pos_scorer = _make_scorer(pos_kind, args, documents, contexts, vocab, out_dir)
        neg_scorer = (
            pos_scorer if neg_kind == pos_kind
            else _make_scorer(neg_kind, args, documents, contexts, vocab, out_dir)
        )
        ledger = build_ledger(pos_scorer, neg_scorer, train_contexts)
        ledger_path = out_dir / "ledger.json"
        save_ledger(ledger, ledger_path)
        outputs = sorted(p for p in out_dir.iterdir() if p.name != LOCK_NAME)
        _emit_manifest(
            out_dir, "score",
            {
                "bundle": str(bundle_dir), "pos_scorer": pos_kind,
                "neg_scorer": neg_kind, "k1": args.k1, "b": args.b,
                "fit": args.fit,
            },
            args.seed,
            [bundle_dir / n for n in
             ("documents.jsonl", "sessions.jsonl", "contexts.jsonl")],
            outputs,
            scorer_digest=f"{ledger.pos_scorer_digest}/{ledger.neg_scorer_digest}",
        )
    print(f"positives scored: {len(ledger.positives)}")
    print(f"pos scorer digest: {ledger.pos_scorer_digest}")
    print(f"neg scorer digest: {ledger.neg_scorer_digest}")
    return 0


def _train_config_from(args, n_positives: int) -> TrainConfig:
    T = args.steps
    if T is None:
        T = args.epochs * steps_per_epoch(n_positives, args.batch_size)
    pacing = PacingParams(
        delta=args.delta, eta=args.eta, alpha=args.alpha, beta=args.beta,
        k=args.k, T=T,
    )
    return TrainConfig(
        pacing=pacing,
        batch_size=args.batch_size,
        m=args.m,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        momentum=args.momentum,
        seed=args.seed,
        checkpoint_interval=args.checkpoint_interval,
        mode=args.mode,
        d_emb=args.d_emb,
        hidden=args.hidden,
        tau=args.tau,
    )


def _config_dict(config: TrainConfig) -> dict:
    d = asdict(config)
    d["pacing"] = asdict(config.pacing)
    return d


def cmd_train(args) -> int:
    bundle_dir = Path(args.bundle)
    sessions, documents, contexts = load_bundle(bundle_dir)
    ledger_path = Path(args.ledger)
    if not ledger_path.exists():
        raise CliError(f"ledger file not found: {ledger_path}")
    train_contexts = [c for c in contexts if split_of(c.session_id) == "train"]
    ledger = load_ledger(ledger_path, train_contexts)
    vocab = build_vocab(documents, contexts)
    config = _train_config_from(args, len(ledger.positives))
    val_items = build_eval_items(
        [s for s in sessions if split_of(s.session_id) == "val"], documents
    )
    out_dir = Path(args.out)
    with output_lock(out_dir):
        params, log = train(
            config, ledger, documents, vocab,
            val_items=val_items or None,
            checkpoint_dir=out_dir if config.checkpoint_interval else None,
            resume_from=args.resume,
        )
        ckpt_path = out_dir / "checkpoint.bin"
        save_ranker(ckpt_path, params, vocab)
        log_path = out_dir / "trainlog.jsonl"
        with open(log_path, "w") as fp:
            for rec in log.steps:
                fp.write(json.dumps(rec, sort_keys=True) + "\n")
            for rec in log.validations:
                fp.write(json.dumps({"validation": rec}, sort_keys=True) + "\n")
        outputs = sorted(p for p in out_dir.iterdir() if p.name != LOCK_NAME)
        _emit_manifest(
            out_dir, "train", _config_dict(config), args.seed,
            [bundle_dir / n for n in
             ("documents.jsonl", "sessions.jsonl", "contexts.jsonl")]
            + [ledger_path],
            outputs,
            scorer_digest=f"{ledger.pos_scorer_digest}/{ledger.neg_scorer_digest}",
        )
    print(f"steps: {len(log.steps)} (T={config.pacing.T}, mode={config.mode})")
    if log.validations:
        last = log.validations[-1]
        print(f"final validation MAP: {last['MAP']:.4f}")
    return 0


def cmd_eval(args) -> int:
    bundle_dir = Path(args.bundle)
    sessions, documents, contexts = load_bundle(bundle_dir)
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.exists():
        raise CliError(f"checkpoint not found: {ckpt_path}")
    params, vocab = load_ranker(ckpt_path)
    eval_sessions = [s for s in sessions if split_of(s.session_id) == args.split]
    items = build_eval_items(eval_sessions, documents)
    if not items:
        raise CliError(f"no evaluable interactions in split {args.split!r}")
    entries = []
    qrels = {}
    for ctx, candidates, clicked in items:
        query_id = f"{ctx.session_id}:{ctx.position}"
        ranked = rank_slate(params, vocab, ctx, list(candidates), documents)
        entries.extend(entries_from_ranking(query_id, ranked, args.tag))
        for doc_id in candidates:
            qrels.setdefault((query_id, doc_id), 0)
        for doc_id in clicked:
            qrels[(query_id, doc_id)] = 1
    table = evaluate_run(entries, qrels)
    out_dir = Path(args.out)
    with output_lock(out_dir):
        with open(out_dir / "run.txt", "w") as fp:
            write_run_file(entries, fp)
        with open(out_dir / "qrels.txt", "w") as fp:
            write_qrels(qrels, fp)
        metrics_payload = {
            "metrics": table.metrics,
            "evaluated_queries": table.evaluated_queries,
            "skipped_queries": table.skipped_queries,
        }
        (out_dir / "metrics.json").write_text(
            json.dumps(metrics_payload, sort_keys=True, indent=2) + "\n"
        )
        outputs = [out_dir / "run.txt", out_dir / "qrels.txt", out_dir / "metrics.json"]
        _emit_manifest(
            out_dir, "eval",
            {"bundle": str(bundle_dir), "checkpoint": str(ckpt_path),
             "split": args.split},
            None,
            [bundle_dir / n for n in
             ("documents.jsonl", "sessions.jsonl", "contexts.jsonl")]
            + [ckpt_path],
            outputs,
        )
    for name, value in table.metrics.items():
        print(f"{name}: {value:.4f}")
    print(f"queries evaluated: {table.evaluated_queries} "
          f"(skipped without relevant: {table.skipped_queries})")
    return 0


def cmd_ablate(args) -> int:
    bundle_dir = Path(args.bundle)
    sessions, documents, contexts = load_bundle(bundle_dir)
    ledger_path = Path(args.ledger)
    if not ledger_path.exists():
        raise CliError(f"ledger file not found: {ledger_path}")
    train_contexts = [c for c in contexts if split_of(c.session_id) == "train"]
    ledger = load_ledger(ledger_path, train_contexts)
    vocab = build_vocab(documents, contexts)
    val_items = build_eval_items(
        [s for s in sessions if split_of(s.session_id) == "val"], documents
    )
    if not val_items:
        raise CliError("ablation needs a non-empty validation split")
    base = _train_config_from(args, len(ledger.positives))

    mode_rows = []
    for mode in MODES:
        config = TrainConfig(**{**asdict_shallow(base), "mode": mode})
        try:
            params, _ = train(config, ledger, documents, vocab)
        except Exception as e:
            raise CliError(f"ablation mode {mode!r} failed: {e}", exit_code=1)
        table = evaluate_ranker(params, vocab, val_items, documents)
        row = {"mode": mode}
        row.update(table.metrics)
        mode_rows.append(row)
        print(f"mode {mode:>14s}: MAP={row['MAP']:.4f} MRR={row['MRR']:.4f}")

    deltas = [float(x) for x in args.grid_deltas.split(",")]
    etas = [float(x) for x in args.grid_etas.split(",")]
    grid_rows = sweep(base, ledger, documents, vocab, deltas, etas, val_items)
    for row in grid_rows:
        print(f"delta={row['delta']:.2f} eta={row['eta']:.2f}: MAP={row['MAP']:.4f}")

    out_dir = Path(args.out)
    with output_lock(out_dir):
        payload = {"modes": mode_rows, "grid": grid_rows}
        (out_dir / "ablation.json").write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n"
        )
        _emit_manifest(
            out_dir, "ablate", _config_dict(base), args.seed,
            [bundle_dir / n for n in
             ("documents.jsonl", "sessions.jsonl", "contexts.jsonl")]
            + [ledger_path],
            [out_dir / "ablation.json"],
        )
    return 0


def asdict_shallow(config: TrainConfig) -> dict:
    d = asdict(config)
    d["pacing"] = config.pacing
    return d


# ---------------------------------------------------------------------------
# Argument parsing


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", default="dual", choices=MODES)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--steps", type=int, default=None,
                   help="total optimizer steps T (overrides --epochs)")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--m", type=int, default=2, help="negatives per positive")
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--optimizer", default="momentum", choices=("sgd", "momentum"))
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--delta", type=float, default=0.3)
    p.add_argument("--eta", type=float, default=0.7)
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--k", type=float, default=2.0)
    p.add_argument("--d-emb", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--checkpoint-interval", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="currank",
        description="Dual-curriculum training for context-aware ranking",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a session log into a corpus bundle")
    p.add_argument("--config", default=None)
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=int, default=DEFAULT_NEGATIVE_WINDOW)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic corpus bundle")
    p.add_argument("--config", default=None)
    p.add_argument("--sessions", type=int, required=True)
    p.add_argument("--vocab-size", type=int, default=400)
    p.add_argument("--topics", type=int, default=20)
    p.add_argument("--queries", type=int, default=3)
    p.add_argument("--candidates", type=int, default=10)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--window", type=int, default=DEFAULT_NEGATIVE_WINDOW)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("score", help="build a difficulty ledger")
    p.add_argument("--config", default=None)
    p.add_argument("--bundle", required=True)
    p.add_argument("--scorer", default="bm25", choices=("bm25", "dense"))
    p.add_argument("--pos-scorer", default=None, choices=("bm25", "dense"))
    p.add_argument("--neg-scorer", default=None, choices=("bm25", "dense"))
    p.add_argument("--k1", type=float, default=1.2)
    p.add_argument("--b", type=float, default=0.75)
    p.add_argument("--checkpoint", default=None,
                   help="trained dense-scorer checkpoint")
    p.add_argument("--fit", action="store_true",
                   help="fit the dense scorer with in-batch negatives first")
    p.add_argument("--fit-epochs", type=int, default=3)
    p.add_argument("--fit-batch-size", type=int, default=32)
    p.add_argument("--fit-lr", type=float, default=0.1)
    p.add_argument("--d-emb", type=int, default=32)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("train", help="train the ranker with the dual curriculum")
    p.add_argument("--config", default=None)
    p.add_argument("--bundle", required=True)
    p.add_argument("--ledger", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained checkpoint")
    p.add_argument("--config", default=None)
    p.add_argument("--bundle", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--tag", default="currank")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run curriculum-mode ablations and the "
                                      "delta/eta grid")
    p.add_argument("--config", default=None)
    p.add_argument("--bundle", required=True)
    p.add_argument("--ledger", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-deltas", default="0.1,0.3,0.5")
    p.add_argument("--grid-etas", default="0.5,0.7,0.9")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    return parser


def _apply_config_file(parser, argv):
    """Use --config values as defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    path = Path(known.config)
    if not path.exists():
        raise CliError(f"config file not found: {path}")
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict):
        raise CliError(f"config file {path} must be a mapping")
    defaults = {key.replace("-", "_"): value for key, value in data.items()}
    for action in parser._subparsers._group_actions:
        for sub in action.choices.values():
            known_dests = {a.dest for a in sub._actions}
            sub.set_defaults(**{k: v for k, v in defaults.items() if k in known_dests})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except (SessionLogError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # internal failure
        print(f"internal error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
