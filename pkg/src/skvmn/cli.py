"""Command-line interface: ``skvmn train | evaluate | predict | gradcheck | ...``.

Every option can also be supplied through an environment variable named
``SKVMN_<OPTION>`` (upper case, dashes as underscores), e.g. ``SKVMN_SEED=3``.
Command-line flags win over the environment.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import data as kt_data
from . import metrics, model
from .errors import SKVMNError
from .seqdep import DEFAULT_RANGES, TriangularRange
from .train import TrainConfig, evaluate, kfold_split, predict_dataset, train_model

ENV_PREFIX = "SKVMN_"
log = logging.getLogger("skvmn")


class _Parser(argparse.ArgumentParser):
    """ArgumentParser whose defaults can come from SKVMN_* variables."""

    def add_argument(self, *args, **kw):
        action = super().add_argument(*args, **kw)
        env = os.environ.get(ENV_PREFIX + action.dest.upper())
        if env is not None and action.option_strings:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                action.default = env.lower() in ("1", "true", "yes", "on")
            else:
                action.default = action.type(env) if action.type else env
        return action


def _range_arg(text):
    try:
        return TriangularRange.parse(text)
    except SKVMNError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _model_flags(p):
    p.add_argument("--n", type=int, default=10, help="memory slots N")
    p.add_argument("--dim", type=int, default=10, help="key/value dimension d")
    p.add_argument("--value-dim", type=int, default=None, help="value dimension if different from --dim")
    p.add_argument("--hidden", type=int, default=None, help="LSTM hidden size (default: --dim)")
    p.add_argument("--mode", choices=model.MODES, default="skvmn")
    p.add_argument("--max-seq-len", type=int, default=200)
    p.add_argument("--tri-low", type=_range_arg, default=DEFAULT_RANGES[0], metavar="A,B,C")
    p.add_argument("--tri-mid", type=_range_arg, default=DEFAULT_RANGES[1], metavar="A,B,C")
    p.add_argument("--tri-high", type=_range_arg, default=DEFAULT_RANGES[2], metavar="A,B,C")


def build_parser():
    parser = _Parser(prog="skvmn", description="Sequential key-value memory networks for knowledge tracing")
    parser.add_argument("--version", action="version", version=f"skvmn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train a model and write checkpoint, log and manifest")
    p.add_argument("--data", help="triplet-format training file")
    p.add_argument("--test-data", help="separate test file (otherwise a 70/30 student split)")
    p.add_argument("--train-ratio", type=float, default=0.7)
    _model_flags(p)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--epochs", type=int, default=120)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--lr-floor", type=float, default=0.001)
    p.add_argument("--anneal-period", type=int, default=15)
    p.add_argument("--anneal-epochs", type=int, default=120)
    p.add_argument("--no-anneal", action="store_true")
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--cv", action="store_true", help="train every fold instead of fold 1 only")
    p.add_argument("--repeats", type=int, default=1, help="independent initialisations (seed, seed+1, ...)")
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs", help="root directory for run folders")
    p.add_argument("--run-dir", help="exact output directory (overrides --out)")
    p.add_argument("--from-manifest", help="replay the flags recorded in a manifest.json")

    p = sub.add_parser("evaluate", help="test AUC and loss of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n", type=int, default=None, help="assert the checkpoint's N")
    p.add_argument("--dim", type=int, default=None, help="assert the checkpoint's d")
    p.add_argument("--roc", help="write ROC points (tsv)")

    p = sub.add_parser("predict", help="probability of answering a question after a history")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--history", help="triplet fragment for one student ('-' for stdin)")
    p.add_argument("--question", type=int, required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--mode", choices=model.MODES, default="skvmn")

    p = sub.add_parser("export-states", help="per-step concept states of one student (tsv)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--student", type=int, default=0, help="index of the student in the file")
    p.add_argument("--steps", type=int, default=None, help="keep only the first STEPS exercises")
    p.add_argument("--output", required=True)

    p = sub.add_parser("export-clusters", help="attention and identity vector per question (tsv)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("stats", help="dataset statistics as JSON")
    p.add_argument("--data", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset in triplet format")
    p.add_argument("--students", type=int, default=2000)
    p.add_argument("--questions", type=int, default=50)
    p.add_argument("--concepts", type=int, default=5)
    p.add_argument("--length", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    return parser


# -- helpers -------------------------------------------------------------------

def _jsonable(args):
    out = {}
    for k, v in vars(args).items():
        if k.startswith("_"):
            continue
        if isinstance(v, TriangularRange):
            v = ",".join(repr(x) for x in v.as_list())
        out[k] = v
    return out


def _load_checkpoint(path):
    store = model.load(path)
    return store, model.config_from_store(store)


def _question_map(store):
    raw = store.meta.get("question_map")
    return None if raw is None else {int(k): v for k, v in raw.items()}


def _to_model_space(dataset, store, config):
    mapping = _question_map(store)
    Q = config.memory.num_questions
    if mapping is None:
        if dataset.num_questions > Q:
            raise SKVMNError(f"num_questions mismatch: checkpoint has |Q|={Q}, "
                             f"data uses question id {dataset.num_questions}")
        return kt_data.Dataset(Q, dataset.sequences, dataset.provenance)
    try:
        return kt_data.apply_mapping(dataset, mapping, Q)
    except SKVMNError as exc:
        raise SKVMNError(f"num_questions mismatch: checkpoint has |Q|={Q}; {exc}") from None


def _run_dir(args):
    if args.run_dir:
        path = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = Path(args.out) / f"{stamp}_seed{args.seed}"
        n = 1
        while path.exists():
            path = Path(args.out) / f"{stamp}_seed{args.seed}_{n}"
            n += 1
    path.mkdir(parents=True, exist_ok=True)
    return path


# -- commands ----------------------------------------------------------------

def cmd_train(args, parser):
    if args.from_manifest:
        with open(args.from_manifest, encoding="utf-8") as fh:
            recorded = json.load(fh)["args"]
        sub = parser._subparsers._group_actions[0].choices["train"]
        keep = {"from_manifest", "run_dir", "out", "command", "verbose"}
        fixed = {k: v for k, v in recorded.items() if k not in keep}
        for key in ("tri_low", "tri_mid", "tri_high"):
            if isinstance(fixed.get(key), str):
                fixed[key] = TriangularRange.parse(fixed[key])
        sub.set_defaults(**fixed)
        argv = args._argv
        args = parser.parse_args(argv)
        args._argv = argv
    if not args.data:
        parser.error("train: --data is required")

    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    raw = kt_data.load_triplet_format(args.data)
    raw_test = kt_data.load_triplet_format(args.test_data) if args.test_data else None
    if raw_test is not None:
        merged = kt_data.Dataset(max(raw.num_questions, raw_test.num_questions),
                                 raw.sequences + raw_test.sequences, raw.provenance)
        dense, mapping = kt_data.densify(merged)
        train_part = dense.subset(range(len(raw)), "train")
        test_part = dense.subset(range(len(raw), len(merged)), "test")
    else:
        dense, mapping = kt_data.densify(raw)
        train_part, test_part = kt_data.split_train_test(dense, args.train_ratio, args.seed)

    mcfg = model.ModelConfig.build(
        dense.num_questions, args.n, args.dim, args.value_dim, hidden_dim=args.hidden,
        ranges=(args.tri_low, args.tri_mid, args.tri_high), mode=args.mode,
        max_seq_len=args.max_seq_len)
    run_dir = _run_dir(args)
    folds = kfold_split(len(train_part), args.folds, args.seed) if args.folds >= 2 else None
    fold_ids = range(args.folds) if (args.cv and folds) else [0]
    units = [(r, k) for r in range(args.repeats) for k in fold_ids]

    results = []
    outputs = {}
    for r, k in units:
        seed = args.seed + r
        tcfg = TrainConfig(batch_size=args.batch, epochs=args.epochs, lr=args.lr,
                           lr_floor=args.lr_floor, anneal_period=args.anneal_period,
                           anneal_epochs=args.anneal_epochs, anneal=not args.no_anneal,
                           clip_norm=args.clip, folds=args.folds, seed=seed,
                           sigma=args.sigma, patience=args.patience)
        unit_dir = run_dir
        if len(units) > 1:
            unit_dir = run_dir / (f"repeat{r}_fold{k}" if args.repeats > 1 else f"fold{k}")
            unit_dir.mkdir(exist_ok=True)
        if folds:
            tr_idx, val_idx = folds[k]
            tr, val = train_part.subset(tr_idx, "train"), train_part.subset(val_idx, "val")
        else:
            tr, val = train_part, None
        params = model.init_params(mcfg, seed, args.sigma)
        params.meta.update({"question_map": {str(q): d for q, d in mapping.items()},
                            "train_config": tcfg.to_dict()})

        def progress(rec, wall_ms):
            print(f"epoch {rec['epoch']:4d}  lr {rec['lr']:.5f}  loss {rec['train_loss']:.4f}  "
                  f"val_auc {rec['val_auc']:.4f}  ({wall_ms} ms)", flush=True)

        best, _ = train_model(tr, mcfg, tcfg, val=val if val is not None and len(val) else None,
                              log_path=unit_dir / "train_log.jsonl",
                              timing_path=unit_dir / "timing.jsonl", params=params,
                              progress=progress)
        ckpt = unit_dir / "checkpoint.skvmn"
        model.save(best, ckpt)
        test = evaluate(best, mcfg, test_part) if len(test_part) else None
        result = {"repeat": r, "fold": k, "seed": seed,
                  "best_val_auc": best.meta.get("best_val_auc"),
                  "test_auc": test["auc"] if test else None,
                  "test_loss": test["loss"] if test else None}
        with open(unit_dir / "test_metrics.json", "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
        results.append(result)
        outputs[f"repeat{r}_fold{k}"] = {"checkpoint": str(ckpt),
                                         "log": str(unit_dir / "train_log.jsonl")}
        if test:
            print(f"test_auc {test['auc']:.6f}  test_loss {test['loss']:.6f}", flush=True)

    aucs = [x["test_auc"] for x in results if x["test_auc"] is not None]
    summary = {"mean_test_auc": float(np.mean(aucs)) if aucs else None,
               "std_test_auc": float(np.std(aucs)) if aucs else None, "runs": results}
    manifest = {
        "command": "train",
        "args": _jsonable(args),
        "seed": args.seed,
        "version": __version__,
        "model_config": mcfg.to_dict(),
        "parameter_count": model.parameter_count(mcfg),
        "data": {"train": kt_data.dataset_stats(train_part), "test": kt_data.dataset_stats(test_part),
                 "provenance": raw.provenance},
        "started": started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "run_dir": str(run_dir),
        "outputs": outputs,
        "summary": summary,
    }
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    if len(aucs) > 1:
        print(f"mean test_auc {summary['mean_test_auc']:.6f} +- {summary['std_test_auc']:.6f}")
    print(f"run directory: {run_dir}")
    return 0


def cmd_evaluate(args, parser):
    store, cfg = _load_checkpoint(args.checkpoint)
    for flag, have, name in ((args.n, cfg.memory.num_slots, "N (memory slots)"),
                             (args.dim, cfg.memory.key_dim, "d (key dimension)")):
        if flag is not None and flag != have:
            raise SKVMNError(f"{name} mismatch: checkpoint has {have}, flag says {flag}")
    dataset = _to_model_space(kt_data.load_triplet_format(args.data), store, cfg)
    result = evaluate(store, cfg, dataset)
    print(f"auc {result['auc']:.6f}")
    print(f"loss {result['loss']:.6f}")
    if args.roc:
        p, y = predict_dataset(store, cfg, dataset)
        metrics.write_roc(metrics.roc_curve(p, y), args.roc)
    return 0


def cmd_predict(args, parser):
    store, cfg = _load_checkpoint(args.checkpoint)
    history = []
    if args.history:
        text = sys.stdin.read() if args.history == "-" else Path(args.history).read_text(encoding="utf-8")
        frag = kt_data.parse_triplets(text, source=args.history, min_length=0)
        if len(frag.sequences) > 1:
            raise SKVMNError("history must describe exactly one student")
        if frag.sequences:
            history = [(e.question, e.answer) for e in frag.sequences[0].exercises]
    mapping = _question_map(store)
    Q = cfg.memory.num_questions

    def to_dense(qid):
        if mapping is None:
            if not 1 <= qid <= Q:
                raise SKVMNError(f"unknown question id {qid} (model has |Q|={Q})")
            return qid
        if qid not in mapping:
            raise SKVMNError(f"unknown question id {qid}")
        return mapping[qid]

    seq = [(to_dense(q), y) for q, y in history] + [(to_dense(args.question), 0)]
    p = model.forward([seq], store, cfg)[0][-1]
    print(f"{p:.10f}")
    return 0


def cmd_gradcheck(args, parser):
    from .gradcheck import run_gradcheck

    report = run_gradcheck(seed=args.seed, tolerance=args.tolerance, mode=args.mode)
    for line in report.lines():
        print(line)
    if not report.passed:
        print(f"gradient check failed: worst parameter {report.worst_param} "
              f"relative error {report.worst_error:.3e}", file=sys.stderr)
        return 1
    return 0


def cmd_export_states(args, parser):
    store, cfg = _load_checkpoint(args.checkpoint)
    dataset = _to_model_space(kt_data.load_triplet_format(args.data), store, cfg)
    if not 0 <= args.student < len(dataset):
        raise SKVMNError(f"student index {args.student} outside 0..{len(dataset) - 1}")
    seq = [(e.question, e.answer) for e in dataset.sequences[args.student].exercises]
    if args.steps:
        seq = seq[:args.steps]
    states = metrics.export_knowledge_states(store, cfg, seq, args.output)
    print(f"wrote {states.shape[0]}x{states.shape[1]} knowledge states to {args.output}")
    return 0


def cmd_export_clusters(args, parser):
    store, cfg = _load_checkpoint(args.checkpoint)
    _, _, labels = metrics.export_question_clusters(store, cfg, args.output)
    print(f"wrote {len(labels)} questions in {len(set(labels))} clusters to {args.output}")
    return 0


def cmd_stats(args, parser):
    print(json.dumps(kt_data.dataset_stats(kt_data.load_triplet_format(args.data)), sort_keys=True))
    return 0


def cmd_synth(args, parser):
    ds = kt_data.generate_synthetic(args.students, args.questions, args.concepts, args.seed, args.length)
    kt_data.save_triplet_format(ds, args.output)
    print(json.dumps(kt_data.dataset_stats(ds), sort_keys=True))
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "gradcheck": cmd_gradcheck,
    "export-states": cmd_export_states,
    "export-clusters": cmd_export_clusters,
    "stats": cmd_stats,
    "synth": cmd_synth,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, parser)
    except (SKVMNError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
