"""Command-line entry point: ``polyfuzz <command> ...``.

Commands:

    gen              sample a JSON Lines corpus from a grammar
    label            label a corpus with a WAF oracle
    pair             LSI-pair two corpora into a translation corpus
    train embed      CBOW embeddings over one or more corpora
    train clf        surrogate classifier from a labeled corpus
    train xlate      translation model from a paired corpus
    fuzz             run (or resume) a fuzzing campaign
    report compare   median/IQR/Wilcoxon/A12/Scott-Knott table over reports

Failures print a JSON object on stderr and exit with status 1. Every command is
deterministic for a given ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .classifier import BLOCKED_LABEL, BYPASSED_LABEL, ClassifierConfig, classifier_filename, train_classifier
from .evolve import VARIANTS, ConfigError, RunConfig, load_checkpoint, resume, run
from .grammar import ALL_TYPES, InjectionType, load_grammars
from .mutation import TestInput
from .pipeline import (distinct, generate_corpus, label_corpus, load_embeddings, load_models,
                       save_embeddings, stream_rng, train_embeddings)
from .stats import compare, rows_to_csv, rows_to_text
from .translator import (PairedCorpus, TranslatorConfig, grammar_lexicon, lsi_pair, train_translator,
                         translator_filename)
from .waf import oracle_from_spec

DESK = {"gen_count": 2000, "pair_count": 3000}
PAPER = {"gen_count": 20000, "pair_count": 30000}
_TYPE_INDEX = {t: i for i, t in enumerate(ALL_TYPES)}


class CliError(Exception):
    """A user-facing failure with a machine-readable kind."""

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


# -- I/O helpers ---------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _write_text(out: str | None, text: str) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        return
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def corpus_record(inp: TestInput, label: str | None = None) -> dict:
    rec = {"type": inp.injection_type.value, "payload": inp.payload, "tokens": list(inp.tokens)}
    if label is not None:
        rec["label"] = label
    return rec


def read_corpus(path) -> list:
    """Read corpus records; returns a list of (TestInput, label or None)."""
    path = Path(path)
    if not path.exists():
        raise CliError("io", f"{path}: no such file")
    out = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            inp = TestInput(rec["type"], rec["payload"])
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise CliError("schema", f"{path}:{n}: bad corpus record ({exc})") from exc
        label = rec.get("label")
        if label not in (None, BLOCKED_LABEL, BYPASSED_LABEL):
            raise CliError("schema", f"{path}:{n}: label must be {BLOCKED_LABEL!r} or {BYPASSED_LABEL!r}")
        out.append((inp, label))
    return out


def _single_type(records, path) -> InjectionType:
    types = {inp.injection_type for inp, _ in records}
    if len(types) != 1:
        raise CliError("schema", f"{path}: expected records of exactly one injection type, "
                                 f"found {sorted(t.value for t in types) or 'none'}")
    return types.pop()


def _scale(args) -> dict:
    return PAPER if args.paper_scale else DESK


def _grammars(args, types=ALL_TYPES) -> dict:
    try:
        return load_grammars(args.grammar_dir, types)
    except FileNotFoundError as exc:
        raise CliError("io", f"grammar not found: {exc.filename}") from exc


# -- commands ------------------------------------------------------------------

def cmd_gen(args) -> dict:
    t = InjectionType(args.type)
    grammar = _grammars(args, [t])[t]
    count = _scale(args)["gen_count"] if args.count is None else args.count
    if count < 0:
        raise CliError("config", "--count must be >= 0")
    rng = stream_rng(args.seed, "gen", _TYPE_INDEX[t])
    inputs = generate_corpus(grammar, count, rng, args.max_depth)
    _write_text(args.out, "".join(_dumps(corpus_record(x)) + "\n" for x in inputs))
    return {"command": "gen", "type": t.value, "count": count,
            "distinct": len({x.payload for x in inputs})}


def cmd_label(args) -> dict:
    records = read_corpus(args.corpus)
    oracle = oracle_from_spec(args.waf, args.jobs)
    inputs = [inp for inp, _ in records]
    labels = label_corpus(inputs, oracle)
    _write_text(args.out, "".join(_dumps(corpus_record(x, lab)) + "\n" for x, lab in zip(inputs, labels)))
    return {"command": "label", "count": len(inputs), "bypassed": labels.count(BYPASSED_LABEL)}


def cmd_pair(args) -> dict:
    src_records, dst_records = read_corpus(args.src), read_corpus(args.dst)
    s, d = _single_type(src_records, args.src), _single_type(dst_records, args.dst)
    if s == d:
        raise CliError("schema", "source and destination corpora have the same injection type")
    count = _scale(args)["pair_count"] if args.count is None else args.count
    src_pool = distinct([x for x, _ in src_records])
    dst_pool = distinct([x for x, _ in dst_records])
    rng = stream_rng(args.seed, "pair", _TYPE_INDEX[s], _TYPE_INDEX[d])
    pick = np.sort(rng.permutation(len(src_pool))[:count])
    pc = lsi_pair([list(src_pool[i].tokens) for i in pick], [list(x.tokens) for x in dst_pool],
                  args.k, s, d)
    _write_text(args.out, pc.to_jsonl())
    return {"command": "pair", "src_type": s.value, "dst_type": d.value, "pairs": len(pc)}


def cmd_train_embed(args) -> dict:
    corpora: dict = {}
    for path in args.corpus:
        for inp, _ in read_corpus(path):
            corpora.setdefault(inp.injection_type, []).append(inp)
    if not corpora:
        raise CliError("schema", "no corpus records to train on")
    emb = train_embeddings(corpora, args.dim, args.window, args.epochs, args.seed)
    out = _out_dir(args, "models")
    save_embeddings(emb, out)
    return {"command": "train embed", "vocab": len(emb.vocab), "dim": emb.dim, "out": str(out)}


def _embeddings(args):
    try:
        return load_embeddings(args.embeddings)
    except FileNotFoundError as exc:
        raise CliError("io", f"embeddings not found in {args.embeddings}: run 'train embed' first") from exc


def cmd_train_clf(args) -> dict:
    records = read_corpus(args.corpus)
    t = _single_type(records, args.corpus)
    if any(lab is None for _, lab in records):
        raise CliError("schema", f"{args.corpus}: unlabeled records; run 'label' first")
    emb = _embeddings(args)
    cfg = ClassifierConfig(cell_kind=args.cell, hidden_size=args.hidden, epochs=args.epochs,
                           lr=args.lr, optimizer=args.optimizer, seed=args.seed)
    clf = train_classifier([(list(x.tokens), lab) for x, lab in records], t, emb, cfg)
    out = _out_dir(args, "models")
    clf.save(out / classifier_filename(t))
    return {"command": "train clf", "type": t.value, "val_accuracy": clf.report.val_accuracy,
            "val_balanced_accuracy": clf.report.val_balanced_accuracy, "out": str(out)}


def cmd_train_xlate(args) -> dict:
    path = Path(args.pairs)
    if not path.exists():
        raise CliError("io", f"{path}: no such file")
    pc = PairedCorpus.load(path)
    emb = _embeddings(args)
    cfg = TranslatorConfig(cell_kind=args.cell, embed_dim=emb.dim, hidden_size=args.hidden,
                           epochs=args.epochs, lr=args.lr, optimizer=args.optimizer, seed=args.seed)
    lexicon = grammar_lexicon(_grammars(args, [pc.dst_type])[pc.dst_type])
    model = train_translator(pc, emb.vocab, cfg, emb.matrix, lexicon)
    out = _out_dir(args, "models")
    model.save(out / translator_filename(pc.src_type, pc.dst_type))
    return {"command": "train xlate", "src_type": pc.src_type.value, "dst_type": pc.dst_type.value,
            "final_loss": model.train_loss[-1] if model.train_loss else None, "out": str(out)}


def cmd_fuzz(args) -> dict:
    if args.resume:
        config, _ = load_checkpoint(args.resume)
    else:
        try:
            config = RunConfig(tasks=tuple(args.tasks or ALL_TYPES), pop_size=args.pop_size,
                               generations=args.generations, p_transfer=args.p_transfer,
                               early_stage_generations=args.early_stage, seed=args.seed,
                               oracle=args.waf, variant=args.variant, query_budget=args.query_budget,
                               max_depth=args.max_depth)
        except (ConfigError, ValueError) as exc:
            raise CliError("config", str(exc)) from exc
    grammars = _grammars(args, config.tasks)
    models = load_models(args.models, grammars)
    if config.uses_classifier:
        missing = [t.value for t in config.tasks if t not in models.classifiers]
        if missing:
            raise CliError("config", f"variant {config.variant} needs classifiers for {missing} "
                                     f"in {args.models}; run 'train clf' first")
    oracle = oracle_from_spec(config.oracle, args.jobs)
    out = _out_dir(args, "campaign")
    if args.resume:
        report = resume(args.resume, models, oracle, out)
    else:
        report = run(config, models, oracle, out, args.checkpoint)
    return {"command": "fuzz", "variant": config.variant, "generations": report["generations"],
            "archive_count": {k: v["archive_count"] for k, v in report["tasks"].items()},
            "out": str(out)}


def _parse_report_arg(arg: str):
    label, sep, path = arg.partition("=")
    if not sep:
        label, path = None, arg
    p = Path(path)
    if not p.exists():
        raise CliError("io", f"{p}: no such file")
    try:
        report = json.loads(p.read_text(encoding="utf-8"))
        variant = report["config"]["variant"]
        tasks = report["tasks"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError("schema", f"{p}: not a fuzzing report ({exc})") from exc
    return label or variant, tasks


def cmd_report_compare(args) -> dict:
    """Group report files by label (``label=path``, default: the run's variant)."""
    table: dict = {}
    for arg in args.reports:
        label, tasks = _parse_report_arg(arg)
        for task, entry in tasks.items():
            if args.metric not in entry:
                raise CliError("schema", f"{arg}: task {task} has no metric {args.metric!r}")
            table.setdefault(task, {}).setdefault(label, []).append(entry[args.metric])
    if not table:
        raise CliError("schema", "no reports given")
    try:
        rows = compare(table, args.reference)
    except KeyError as exc:
        raise CliError("config", str(exc.args[0])) from exc
    text = rows_to_text(rows)
    out = _out_dir(args, "comparison")
    (out / "comparison.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    (out / "comparison.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return {"command": "report compare", "rows": len(rows), "out": str(out)}


# -- parser --------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=S, help="run seed (default 0)")
    p.add_argument("--jobs", type=int, default=S, help="worker threads for HTTP oracles (default 1)")
    p.add_argument("--waf", default=S, help="oracle: sim:bundled, sim:<ruleset.json> or http:<url-template>")
    p.add_argument("--grammar-dir", default=S, help="directory of <type>.cfg grammars (default: bundled)")
    p.add_argument("--out", default=S, help="output file (gen/label/pair) or directory")
    p.add_argument("--paper-scale", action="store_true", default=S,
                   help="published-scale defaults: 20,000 inputs per type, 30,000 pairs")
    return p


GLOBAL_DEFAULTS = {"seed": 0, "jobs": 1, "waf": "sim:bundled", "grammar_dir": None, "out": None,
                   "paper_scale": False}


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="polyfuzz", parents=[common],
                                     description="Multi-task injection fuzzing for web application firewalls.")
    sub = parser.add_subparsers(dest="command", required=True)
    types = [t.value for t in ALL_TYPES]

    p = sub.add_parser("gen", parents=[common], help="sample a corpus from a grammar")
    p.add_argument("--type", required=True, choices=types)
    p.add_argument("--count", type=int, default=None, help="derivations (default 2000)")
    p.add_argument("--max-depth", type=int, default=32)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", parents=[common], help="label a corpus with the --waf oracle")
    p.add_argument("corpus")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("pair", parents=[common], help="LSI-pair two corpora")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--k", type=int, default=64, help="LSI rank")
    p.add_argument("--count", type=int, default=None, help="max source documents (default 3000)")
    p.set_defaults(func=cmd_pair)

    p = sub.add_parser("train", help="train embeddings, classifiers or translators")
    tsub = p.add_subparsers(dest="what", required=True)
    q = tsub.add_parser("embed", parents=[common], help="CBOW embeddings")
    q.add_argument("corpus", nargs="+")
    q.add_argument("--dim", type=int, default=128)
    q.add_argument("--window", type=int, default=2)
    q.add_argument("--epochs", type=int, default=5)
    q.set_defaults(func=cmd_train_embed)
    for name, func, src, epochs in (("clf", cmd_train_clf, "corpus", 10),
                                    ("xlate", cmd_train_xlate, "pairs", 15)):
        q = tsub.add_parser(name, parents=[common])
        q.add_argument(src)
        q.add_argument("--embeddings", required=True, help="directory holding vocab.json and embedding.pfnn")
        q.add_argument("--cell", default="lstm", choices=["elman", "gru", "lstm"])
        q.add_argument("--hidden", type=int, default=128)
        q.add_argument("--epochs", type=int, default=epochs)
        q.add_argument("--lr", type=float, default=0.005)
        q.add_argument("--optimizer", default="adam", choices=["sgd", "adam"])
        q.set_defaults(func=func)

    p = sub.add_parser("fuzz", parents=[common], help="run a fuzzing campaign")
    p.add_argument("--models", required=True, help="directory of clf_*.pfnn / xlate_*.pfnn files")
    p.add_argument("--variant", default="mtea", choices=VARIANTS)
    p.add_argument("--tasks", nargs="+", choices=types)
    p.add_argument("--pop-size", type=int, default=100)
    p.add_argument("--generations", type=int, default=50)
    p.add_argument("--p-transfer", type=float, default=0.5)
    p.add_argument("--early-stage", type=int, default=10, help="generations with below-average replacement")
    p.add_argument("--query-budget", type=int, default=None, help="oracle queries per task")
    p.add_argument("--max-depth", type=int, default=32)
    p.add_argument("--checkpoint", help="write a resumable checkpoint here after each generation")
    p.add_argument("--resume", help="continue from this checkpoint (its config wins)")
    p.set_defaults(func=cmd_fuzz)

    p = sub.add_parser("report", help="compare fuzzing reports")
    rsub = p.add_subparsers(dest="what", required=True)
    q = rsub.add_parser("compare", parents=[common], help="comparison table over report.json files")
    q.add_argument("reports", nargs="+", help="report.json paths, optionally as label=path")
    q.add_argument("--metric", default="archive_count")
    q.add_argument("--reference", default=None, help="label the p-values and A12 are computed against")
    q.set_defaults(func=cmd_report_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for k, v in GLOBAL_DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        summary = args.func(args)
    except CliError as exc:
        sys.stderr.write(_dumps({"error": exc.kind, "message": str(exc)}) + "\n")
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        sys.stderr.write(_dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    if args.out not in (None, "-") or args.command in ("fuzz", "train"):
        sys.stderr.write(_dumps(summary) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
