"""Command-line entry point: ``vqa-forge {train,predict,evaluate,gradcheck,babi-train}``.

Settings resolve as built-in defaults, then ``--config FILE`` (``key = value``
lines, keys named like the long flags), then explicit flags. Every source of
randomness derives from ``--seed``.
"""
import argparse
import logging
import os
import sys
import time

from . import gradcheck as gc
from .datasets import BabiDataset, assemble, load_annotations, load_babi, load_features, \
    load_questions, split_plan
from .errors import (
    CompatibilityError,
    ConfigError,
    ConsistencyError,
    DimensionError,
    DivergenceError,
    FormatError,
    NotFoundError,
    ParameterError,
    ParseError,
)
from .evalmetric import ResultRecord, evaluate, read_results, write_results
from .models import MODEL_LR, MODEL_TAGS, build_model, config_for_model, load_weights, predict, save_weights
from .optim import accuracy, iterate_batches, train
from .text import Vocabulary

log = logging.getLogger("vqa_forge")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_DIVERGED = 5
EXIT_DATA = 6
EXIT_COMPAT = 7
EXIT_EMPTY = 8


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CommandError(f"{path}:{lineno}: expected key = value", EXIT_CONFIG)
            values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _require_files(*paths):
    missing = [p for p in paths if p is not None and not os.path.exists(p)]
    if missing:
        raise CommandError(f"missing input file(s): {', '.join(missing)}", EXIT_MISSING_FILE)


def _model_config(args, vocab_size, visual_dim):
    overrides = dict(vocab_size=vocab_size, maxlen=args.maxlen, visual_dim=visual_dim, dtype=args.dtype)
    for flag, field in (("embed_dim", "embed_dim"), ("lstm_units", "lstm_units"),
                        ("projection_dim", "projection_dim"), ("dropout", "dropout_rate")):
        value = getattr(args, flag)
        if value is not None:
            overrides[field] = value
    config = config_for_model(args.model, **overrides)
    if config.architecture == "vqa-sentence" and args.projection_dim is None:
        config = config.replace(projection_dim=config.lstm_units)
    return config


def _progress(record):
    print(f"epoch {record.epoch}: train_loss {record.train_loss:.4f} val_loss {record.val_loss:.4f} "
          f"({record.seconds:.2f}s)", file=sys.stderr, flush=True)


def _vocabulary(path, corpus, size):
    if path and os.path.exists(path):
        return Vocabulary.load(path)
    vocab = Vocabulary.build(corpus, size)
    if path:
        vocab.save(path)
    return vocab


def cmd_train(args):
    if args.model == "text-qa":
        raise CommandError("use the babi-train command for the text-qa model", EXIT_CONFIG)
    _require_files(args.questions, args.annotations, args.features, args.val_questions, args.val_annotations,
                   args.val_features)
    if args.val_fraction_into_train and not args.val_questions:
        raise CommandError("--val-fraction-into-train needs --val-questions/--val-annotations", EXIT_CONFIG)
    questions = load_questions(args.questions)
    annotations = load_annotations(args.annotations)
    features = load_features(args.features)
    corpus = [q.text for q in questions] + [a.canonical_answer for a in annotations]
    vocab = _vocabulary(args.vocab, corpus, args.vocab_size)
    train_set = assemble(questions, annotations, features, vocab, args.maxlen, args.answer_reduction)
    val_set = None
    if args.val_questions:
        if not args.val_annotations:
            raise CommandError("--val-questions needs --val-annotations", EXIT_CONFIG)
        vfeat = load_features(args.val_features) if args.val_features else features
        val_set = assemble(load_questions(args.val_questions), load_annotations(args.val_annotations), vfeat,
                           vocab, args.maxlen, args.answer_reduction)
        if args.val_fraction_into_train:
            train_set, val_set = split_plan(train_set, val_set, args.val_fraction_into_train, seed=args.seed)
    config = _model_config(args, len(vocab), features.dim)
    lr = args.lr if args.lr is not None else MODEL_LR[args.model]
    model = build_model(config, seed=args.seed)
    print(f"model {args.model} ({config.architecture}), {len(train_set)} training samples, lr {lr}",
          file=sys.stderr)
    history = train(model, train_set, args.epochs, lr=lr, seed=args.seed, batch_size=args.batch_size,
                    val_data=val_set, on_epoch=_progress)
    save_weights(model, args.weights)
    if args.log:
        history.write_csv(args.log, record_time=args.record_time)
    if len(history):
        print(f"final training accuracy {100 * accuracy(model, train_set):.2f}%", file=sys.stderr)
    return EXIT_OK


def cmd_babi_train(args):
    _require_files(args.babi)
    samples = load_babi(args.babi, limit=args.samples)
    if not samples:
        raise CommandError(f"{args.babi}: no question lines found", EXIT_EMPTY)
    corpus = [s.story + s.question + [s.answer] for s in samples]
    vocab = _vocabulary(args.vocab, corpus, args.vocab_size)
    data = BabiDataset(samples, vocab)
    units = args.embed_dim
    config = config_for_model("text-qa", vocab_size=len(vocab), maxlen=data.question_maxlen,
                              story_maxlen=data.story_maxlen, embed_dim=units, lstm_units=units,
                              dropout_rate=args.dropout, dtype=args.dtype)
    model = build_model(config, seed=args.seed)
    history = train(model, data, args.epochs, lr=args.lr, seed=args.seed, batch_size=args.batch_size,
                    on_epoch=_progress)
    if args.weights:
        save_weights(model, args.weights)
    if args.log:
        history.write_csv(args.log, record_time=args.record_time)
    print(f"training accuracy {100 * accuracy(model, data):.2f}% on {len(data)} samples")
    return EXIT_OK


def cmd_predict(args):
    _require_files(args.questions, args.features, args.vocab, args.weights)
    vocab = Vocabulary.load(args.vocab)
    model = load_weights(args.weights)
    expected = config_for_model(args.model)
    diff = [f for f in ("architecture", "batch_norm") if getattr(model.config, f) != getattr(expected, f)]
    if model.config.vocab_size != len(vocab):
        diff.append("vocab_size")
    if diff:
        raise CompatibilityError(f"{args.weights} does not hold a model {args.model} for this vocabulary "
                                 f"(differs in {', '.join(diff)})", diff)
    questions = load_questions(args.questions)
    features = load_features(args.features)
    missing = sorted({q.image_id for q in questions if q.image_id not in features})
    if missing:
        raise ConsistencyError(f"features missing for image ids: {missing[:50]}")
    if features.dim != model.config.visual_dim:
        raise DimensionError(f"feature dimension {features.dim} != model visual_dim {model.config.visual_dim}")
    data = assemble(questions, None, features, vocab, model.config.maxlen)
    answers = []
    diagnostics = {}
    for idx in iterate_batches(len(data), args.batch_size):
        answers.extend(predict(model, data.batch(idx), vocab, diagnostics))
    records = [ResultRecord(int(q), a) for q, a in zip(data.question_ids, answers)]
    write_results(records, args.results)
    print(f"wrote {len(records)} answers to {args.results} ({diagnostics.get('unk', 0)} unknown)",
          file=sys.stderr)
    return EXIT_OK


def cmd_evaluate(args):
    _require_files(args.results, args.annotations)
    results = read_results(args.results)
    if not results:
        raise CommandError(f"{args.results}: no results to evaluate", EXIT_EMPTY)
    report = evaluate(results, load_annotations(args.annotations), args.metric)
    print(report.table(args.title))
    if args.report_json:
        report.write_json(args.report_json)
    return EXIT_OK


def cmd_gradcheck(args):
    start = time.perf_counter()
    results = gc.run_all(seed=args.seed, corrupt=args.corrupt, include_models=not args.layers_only)
    rows = gc.summarize(results)
    width = max(len(n) for _, n, _, _ in rows)
    print(f"{'kind':<6} {'name':<{width}} {'max rel err':>12}  status")
    for kind, name, err, ok in rows:
        print(f"{kind:<6} {name:<{width}} {err:>12.3e}  {'pass' if ok else 'FAIL'}")
    failed = [n for _, n, _, ok in rows if not ok]
    print(f"{len(rows) - len(failed)}/{len(rows)} passed in {time.perf_counter() - start:.1f}s "
          f"(threshold {gc.THRESHOLD:g})")
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


def _common_training_flags(p, lr_default=None, dropout_default=None):
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=lr_default)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dropout", type=float, default=dropout_default)
    p.add_argument("--vocab-size", type=int, default=20000)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--log", help="loss CSV output")
    p.add_argument("--record-time", action="store_true",
                   help="write per-epoch wall-clock seconds into the CSV (otherwise 0, keeping runs byte-identical)")


def build_parser():
    parser = argparse.ArgumentParser(prog="vqa-forge", description="Masked-LSTM question answering toolkit.")
    parser.add_argument("--config", help="key = value settings file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a VQA model (tags 1-5)")
    p.add_argument("--model", choices=MODEL_TAGS, default="4")
    p.add_argument("--questions", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--val-questions")
    p.add_argument("--val-annotations")
    p.add_argument("--val-features")
    p.add_argument("--val-fraction-into-train", type=float, default=0.0)
    p.add_argument("--vocab", required=True, help="vocabulary file; built from the training split when absent")
    p.add_argument("--weights", required=True, help="weight file output")
    p.add_argument("--maxlen", type=int, default=22)
    p.add_argument("--embed-dim", type=int)
    p.add_argument("--lstm-units", type=int)
    p.add_argument("--projection-dim", type=int)
    p.add_argument("--answer-reduction", choices=("first-token", "skip"), default="first-token")
    _common_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("babi-train", help="train the text-qa model on a bAbI task file")
    p.add_argument("--babi", required=True)
    p.add_argument("--samples", type=int, default=None, help="use only the first N questions")
    p.add_argument("--vocab")
    p.add_argument("--weights")
    p.add_argument("--embed-dim", type=int, default=100)
    _common_training_flags(p, lr_default=MODEL_LR["text-qa"], dropout_default=0.3)
    p.set_defaults(func=cmd_babi_train)

    p = sub.add_parser("predict", help="write a results file of predicted answers")
    p.add_argument("--model", choices=MODEL_TAGS, default="4")
    p.add_argument("--questions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--results", required=True)
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score a results file against annotations")
    p.add_argument("--results", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--metric", choices=("exact", "script"), default="exact")
    p.add_argument("--report-json")
    p.add_argument("--title", default="Model")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer and architecture")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--layers-only", action="store_true")
    p.add_argument("--corrupt", choices=sorted(gc._CORRUPTIBLE), help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def parse_args(argv):
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((tok for tok in rest if tok in subparsers), None)
    if known.config and command is not None:
        if not os.path.exists(known.config):
            raise CommandError(f"missing config file: {known.config}", EXIT_MISSING_FILE)
        _apply_config(known.config, subparsers[command])
    args = parser.parse_args(argv)
    if args.command == "train" and args.lr is None:
        args.lr = MODEL_LR[args.model]
    return args


def _apply_config(path, subparser):
    """Install config-file values as the subcommand's defaults (flags still win)."""
    values = read_config_file(path)
    known = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise CommandError(f"{path}: unknown settings {', '.join(unknown)}", EXIT_CONFIG)
    defaults = {}
    for key, raw in values.items():
        action = known[key]
        if isinstance(action, argparse._StoreTrueAction):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError:
                raise CommandError(f"{path}: bad value {raw!r} for {key}", EXIT_CONFIG) from None
            if action.choices and defaults[key] not in action.choices:
                raise CommandError(f"{path}: {key} must be one of {', '.join(action.choices)}", EXIT_CONFIG)
        action.required = False
    subparser.set_defaults(**defaults)


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get("VQA_FORGE_THREADS")
    try:
        if threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=int(threads)):
                return args.func(args)
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DivergenceError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CompatibilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMPAT
    except (ConfigError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, FormatError, ConsistencyError, DimensionError, NotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
