"""Command-line driver: ``switchseg <command> ...``.

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
Tabular outputs are TSV with a header row.
"""
import argparse
import hashlib
import json
import logging
import os
import sys
import time

from switchseg import __version__
from switchseg.checkpoint import load_checkpoint, save_checkpoint, to_model
from switchseg.config import dump_config, load_config, parse_value
from switchseg.corpus import (
    chars_of,
    corpus_stats,
    decoded_lines,
    load_mapping,
    read_segmented_file,
    split_train_dev,
    stats_tsv,
)
from switchseg.errors import ConfigError, FormatError, InvalidInputError, NumericalError
from switchseg.metrics import report_tsv, switch_distribution, switch_distribution_tsv
from switchseg.switch import SwitchTrace, write_trace_tsv
from switchseg.trainer import (
    DEFAULT_INSTANCE_COUNTS,
    TaskData,
    evaluate_task,
    history_tsv,
    run_training,
    segment,
    transfer_fit,
)

log = logging.getLogger("switchseg")


class UsageError(Exception):
    pass


# -- helpers -------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def parse_task_arg(text):
    """``NAME=TRAIN[,DEV]`` -> ``(name, [paths])``."""
    if "=" not in text:
        raise UsageError(f"expected NAME=PATH[,PATH], got {text!r}")
    name, paths = text.split("=", 1)
    paths = [p for p in paths.split(",") if p]
    if not name or not paths:
        raise UsageError(f"expected NAME=PATH[,PATH], got {text!r}")
    return name, paths


def read_corpus(path, mapping=None):
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    return read_segmented_file(path, mapping)


def load_mapping_arg(path):
    if path is None:
        return None
    if not os.path.exists(path):
        raise UsageError(f"no such file: {path}")
    with open(path, "rb") as f:
        return load_mapping(f)


def parse_int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected a comma-separated list of integers, got {text!r}") from None
    if not values:
        raise UsageError("empty list")
    return values


def parse_switch_mode(text):
    """``normal``, ``random-train``, ``random-test`` or ``ablate=x,s,e_m``."""
    if text is None:
        return None, None
    if text.startswith("ablate="):
        return "normal", tuple(a for a in text[len("ablate="):].split(",") if a)
    return text, None


def train_overrides(args):
    mode, ablate = parse_switch_mode(getattr(args, "switch_mode", None))
    over = {"k": getattr(args, "k", None), "seed": args.seed, "switch_mode": mode,
            "ablate": ablate, "max_epochs": args.max_epochs, "lr": args.lr}
    if getattr(args, "mode", None) is not None:
        over["multi"] = args.mode == "multi"
    for kv in args.set or []:
        key, _, value = kv.partition("=")
        over[key.replace("-", "_")] = parse_value(key.replace("-", "_"), value)
    return over


def load_datasets(task_args, mapping, dev_fraction, seed):
    datasets, fingerprints = [], {}
    for text in task_args:
        name, paths = parse_task_arg(text)
        train = read_corpus(paths[0], mapping)
        if not train:
            raise InvalidInputError(f"training file {paths[0]} is empty")
        if len(paths) > 1:
            dev = read_corpus(paths[1], mapping)
        else:
            train, dev = split_train_dev(train, dev_fraction, seed)
        if not dev:
            raise InvalidInputError(f"task {name}: empty dev set")
        datasets.append(TaskData(name, train, dev))
        fingerprints[name] = {p: sha256_file(p) for p in paths}
    if not datasets:
        raise UsageError("at least one --task NAME=TRAIN[,DEV] is required")
    return datasets, fingerprints


def write_text(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def write_manifest(out_dir, command, argv, config=None, datasets=None, artifacts=None,
                   timings=None, extra=None):
    manifest = {"command": command, "argv": list(argv), "version": __version__,
                "config": config.to_dict() if config is not None else None,
                "seed": config.seed if config is not None else None,
                "datasets": datasets or {}, "artifacts": artifacts or {},
                "timings": timings or {}}
    manifest.update(extra or {})
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1, sort_keys=True, ensure_ascii=False)
    return path


# -- commands ----------------------------------------------------------------------

def cmd_train(args, argv):
    config = load_config(args.config, train_overrides(args))
    mapping = load_mapping_arg(args.mapping)
    datasets, prints = load_datasets(args.task, mapping, args.dev_fraction, config.seed)
    os.makedirs(args.out, exist_ok=True)
    t0 = time.time()
    result = run_training(config, datasets)
    elapsed = time.time() - t0
    ck_path = os.path.join(args.out, "model.ckpt")
    hist_path = os.path.join(args.out, "history.tsv")
    save_checkpoint(result.checkpoint, ck_path)
    write_text(hist_path, history_tsv(result.history))
    write_text(os.path.join(args.out, "config.txt"), dump_config(config))
    write_manifest(args.out, "train", argv, config, prints,
                   {"checkpoint": ck_path, "history": hist_path},
                   {"train_seconds": elapsed},
                   {"best_epoch": result.best_epoch, "best_avg_dev_f": result.best_metric})
    print(f"best avg dev F {result.best_metric:.4f} at epoch {result.best_epoch}")
    return 0


def _model(path):
    if not os.path.exists(path):
        raise UsageError(f"no such checkpoint: {path}")
    return to_model(load_checkpoint(path))


def _task_for(model, name):
    if not model.config.multi:
        return None
    if name not in model.task_names:
        raise UsageError(f"task {name!r} is not registered in the checkpoint "
                         f"(known: {', '.join(model.task_names)})")
    return name


def cmd_eval(args, argv):
    model = _model(args.checkpoint)
    mapping = load_mapping_arg(args.mapping)
    train_dicts = {}
    for text in args.train or []:
        name, paths = parse_task_arg(text)
        train_dicts[name] = read_corpus(paths[0], mapping)
    reports = {}
    for text in args.test:
        name, paths = parse_task_arg(text)
        gold = read_corpus(paths[0], mapping)
        if not gold:
            raise InvalidInputError(f"test file {paths[0]} is empty")
        reports[name] = evaluate_task(model, gold, _task_for(model, name),
                                      train_dicts.get(name), args.batch_size)
    write_text(args.out, report_tsv(reports))
    return 0


def cmd_segment(args, argv):
    model = _model(args.checkpoint)
    task = _task_for(model, args.task) if model.config.multi else None
    mapping = load_mapping_arg(args.mapping)
    stream = open(args.input, "rb") if args.input not in (None, "-") else sys.stdin.buffer
    try:
        lines = []
        for line in decoded_lines(stream):
            text = "".join(line.split())
            lines.append("".join(mapping.get(ch, ch) for ch in text) if mapping else text)
    finally:
        if stream is not sys.stdin.buffer:
            stream.close()
    words = segment(model, lines, task, args.batch_size)
    write_text(args.output, "".join(" ".join(w) + "\n" for w in words))
    return 0


def cmd_sweep_k(args, argv):
    base = load_config(args.config, train_overrides(args))
    mapping = load_mapping_arg(args.mapping)
    datasets, prints = load_datasets(args.task, mapping, args.dev_fraction, base.seed)
    rows = ["K\tparams\tavg_F"]
    for k in parse_int_list(args.k_list):
        if k < 1:
            raise UsageError("K values must be >= 1")
        config = base.replace(k=k)
        result = run_training(config, datasets)
        rows.append(f"{k}\t{result.model.param_count()}\t{result.best_metric:.4f}")
        log.info("K=%d done: avg dev F %.4f", k, result.best_metric)
    write_text(args.out, "\n".join(rows) + "\n")
    return 0


def cmd_transfer(args, argv):
    if not os.path.exists(args.checkpoint):
        raise UsageError(f"no such checkpoint: {args.checkpoint}")
    base = load_checkpoint(args.checkpoint)
    config = load_config(args.config, train_overrides(args))
    mapping = load_mapping_arg(args.mapping)
    train = read_corpus(args.train, mapping)
    dev = read_corpus(args.dev, mapping)
    test = read_corpus(args.test, mapping) if args.test else dev
    if not train or not dev or not test:
        raise InvalidInputError("transfer needs non-empty train, dev and test corpora")
    counts = parse_int_list(args.counts) if args.counts else list(DEFAULT_INSTANCE_COUNTS)
    rows = ["instances\tP\tR\tF\tOOV\ttrainable\tfrozen_sha256\tfrozen_unchanged"]
    for n in counts:
        res = transfer_fit(base, train, dev, config, args.name, n)
        r = evaluate_task(res.train.model, test, args.name, train[:n], config.eval_batch)
        oov = "NA" if r.oov_recall is None else f"{r.oov_recall:.4f}"
        rows.append(f"{n}\t{r.precision:.4f}\t{r.recall:.4f}\t{r.f:.4f}\t{oov}\t"
                    f"{res.trainable_count}\t{res.frozen_after}\t"
                    f"{str(res.frozen_before == res.frozen_after).lower()}")
    write_text(args.out, "\n".join(rows) + "\n")
    return 0


def cmd_switch_stats(args, argv):
    model = _model(args.checkpoint)
    mapping = load_mapping_arg(args.mapping)
    traces = []
    for text in args.data:
        name, paths = parse_task_arg(text)
        corpus = read_corpus(paths[0], mapping)
        if not corpus:
            raise InvalidInputError(f"{paths[0]} is empty")
        task = _task_for(model, name)
        sents = [chars_of(w) for w in corpus if w]
        for s in range(0, len(sents), args.batch_size):
            _, tr = model.predict(sents[s:s + args.batch_size], task, return_trace=True)
            traces.extend(SwitchTrace(name, f, b) for f, b in tr)
    write_text(args.out, switch_distribution_tsv(switch_distribution(traces)))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8") as f:
            write_trace_tsv(traces, f)
    return 0


def cmd_synth(args, argv):
    from switchseg.synthgen import GenConfig, gen_corpora, make_spec, oracle_upper_bound, write_corpora
    gc = GenConfig(alphabet_size=args.alphabet, n_train=args.n_train, n_dev=args.n_dev,
                   n_test=args.n_test, conflict_fraction=args.conflict,
                   criteria=tuple(args.criteria.split(",")), conflict_groups=args.groups,
                   seed=args.seed)
    spec = make_spec(gc)
    data = gen_corpora(spec, gc)
    bound = oracle_upper_bound(spec, data.units["test"])
    write_corpora(data, args.out, gc, bound)
    print(f"{len(spec.lexicon)} units, conflict fraction {spec.conflict_fraction():.4f}, "
          f"task-blind bound (mean F) {bound.mean:.4f}")
    return 0


def cmd_stats(args, argv):
    mapping = load_mapping_arg(args.mapping)
    rows = []
    for text in args.data:
        name, paths = parse_task_arg(text)
        corpus = read_corpus(paths[0], mapping)
        train = read_corpus(paths[1], mapping) if len(paths) > 1 else None
        rows.append((name, corpus_stats(corpus, train)))
    write_text(args.out, stats_tsv(rows))
    return 0


def cmd_replay(args, argv):
    with open(args.manifest, encoding="utf-8") as f:
        manifest = json.load(f)
    old = list(manifest["argv"])
    if "--out" in old:
        old[old.index("--out") + 1] = args.out
    return main(old)


# -- parser ----------------------------------------------------------------------------

def _train_options(p, with_k=True):
    p.add_argument("--task", action="append", default=[], metavar="NAME=TRAIN[,DEV]",
                   help="training corpus (and optional dev corpus) of one criterion")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any setting")
    p.add_argument("--mode", choices=("single", "multi"))
    if with_k:
        p.add_argument("--k", type=int)
    p.add_argument("--switch-mode", metavar="normal|random-train|random-test|ablate=...")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dev-fraction", type=float, default=0.1)
    p.add_argument("--mapping", help="tab-separated character mapping applied on read")


def build_parser():
    ap = argparse.ArgumentParser(prog="switchseg", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a segmenter")
    _train_options(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on test corpora")
    p.add_argument("checkpoint")
    p.add_argument("--test", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--train", action="append", metavar="NAME=PATH",
                   help="training corpus for the OOV dictionary")
    p.add_argument("--mapping")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", help="TSV path (default stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("segment", help="segment raw text, one sentence per line")
    p.add_argument("checkpoint")
    p.add_argument("--task", help="criterion name (multi-criteria checkpoints)")
    p.add_argument("--input", help="input file (default stdin)")
    p.add_argument("--output", help="output file (default stdout)")
    p.add_argument("--mapping")
    p.add_argument("--batch-size", type=int, default=256)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("sweep-k", help="train once per K and tabulate avg dev F")
    _train_options(p, with_k=False)
    p.add_argument("--k-list", default="1,2,4")
    p.add_argument("--out", help="TSV path (default stdout)")
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("transfer", help="fit a new task embedding on a frozen model")
    p.add_argument("checkpoint")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--test")
    p.add_argument("--name", default="new")
    p.add_argument("--counts", help="instance counts (default 100,300,500,700,1000)")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--mapping")
    p.add_argument("--out", help="TSV path (default stdout)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("switch-stats", help="global switch distributions per task")
    p.add_argument("checkpoint")
    p.add_argument("--data", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--trace", help="also write per-position switch weights (TSV)")
    p.add_argument("--mapping")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--out", help="TSV path (default stdout)")
    p.set_defaults(func=cmd_switch_stats)

    p = sub.add_parser("synth", help="generate synthetic multi-criteria corpora")
    p.add_argument("--out", required=True)
    p.add_argument("--alphabet", type=int, default=50)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=200)
    p.add_argument("--n-test", type=int, default=200)
    p.add_argument("--conflict", type=float, default=0.5)
    p.add_argument("--criteria", default="A,B")
    p.add_argument("--groups", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--data", action="append", required=True, metavar="NAME=PATH[,TRAIN]")
    p.add_argument("--mapping")
    p.add_argument("--out")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("replay", help="rerun a command from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_replay)
    return ap


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except NumericalError as exc:
        print(f"switchseg: numerical failure: {exc}", file=sys.stderr)
        return 3
    except (UsageError, InvalidInputError, FormatError, ConfigError, OSError) as exc:
        print(f"switchseg: error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
