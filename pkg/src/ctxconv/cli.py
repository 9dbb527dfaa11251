"""Command-line front end.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import checks
from .config import RunConfig, load_config, parse_pairs
from .data import (ascii_digit, load_amat, load_dataset, load_idx, save_dataset, subset,
                   synthesize_rotated, synthesize_scaled)
from .errors import CheckError, ConfigError, FormatError, TrainingError
from .network import evaluate, export_filter_vectors, nearest_centroid_accuracy, write_filter_csv
from .tensor import Rng
from .training import CHECKPOINT, RUNLOG, load_checkpoint, read_runlog, train

log = logging.getLogger("ctxconv")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

TRAIN_FILE = "train.ctx"
TEST_FILE = "test.ctx"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_flags(p):
    p.add_argument("--config", help="key = value run configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="run output directory")
    p.add_argument("--channels", type=int, help="number of transforms in the set")
    p.add_argument("--epochs", type=int)
    p.add_argument("--subset", type=int, help="stratified training subset size")
    p.add_argument("--transpose-amat", action="store_true", default=None)


def build_parser():
    parser = _Parser(prog="ctxconv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="convert or synthesize the train/test datasets")
    _config_flags(p)

    p = sub.add_parser("train", help="train a model and log every epoch")
    _config_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")

    p = sub.add_parser("eval", help="error rate of a checkpoint on a dataset")
    _config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", help="prepared dataset container (default: prepared test split)")
    p.add_argument("--allow-phi-mismatch", action="store_true")

    p = sub.add_parser("gradcheck", help="finite-difference suite over all differentiable ops")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-fault", metavar="OP", help=argparse.SUPPRESS)

    p = sub.add_parser("export-filters", help="write per-image filter banks as CSV")
    _config_flags(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--count-per-class", type=int, default=200)
    p.add_argument("--out-csv", default=None)

    p = sub.add_parser("dump-ascii", help="render digits as text to check orientation")
    p.add_argument("path", help=".amat, IDX image file or prepared .ctx container")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--transpose-amat", action="store_true")
    return parser


def resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = []
    for flag, key in (("seed", "run.seed"), ("out", "run.out"), ("channels", "phi.channels"),
                      ("epochs", "schedule.epochs"), ("subset", "data.train_subset"),
                      ("transpose_amat", "data.transpose_amat")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append((key, str(value)))
    return parse_pairs(overrides, cfg)


def _split_seed(seed, split):
    return int(Rng.derive(seed, split).seed)


def prepare(cfg):
    """Write ``train.ctx`` / ``test.ctx`` into the prepared-data directory."""
    out = cfg.prepared_dir
    out.mkdir(parents=True, exist_ok=True)
    if cfg.data_kind == "rot12k" and cfg.data_train_file:
        train_ds = load_amat(cfg.data_train_file, cfg.data_transpose_amat)
        test_ds = load_amat(cfg.data_test_file, cfg.data_transpose_amat)
    else:
        for key in ("data_train_images", "data_train_labels", "data_test_images", "data_test_labels"):
            if not getattr(cfg, key):
                raise ConfigError(f"{key.replace('_', '.', 1)} is required for data.kind = {cfg.data_kind}")
        base_train = load_idx(cfg.data_train_images, cfg.data_train_labels)
        base_test = load_idx(cfg.data_test_images, cfg.data_test_labels)
        synth = synthesize_scaled if cfg.data_kind == "scaling" else synthesize_rotated
        lo, hi = cfg.synth_range
        train_ds = synth(base_train, lo, hi, _split_seed(cfg.data_synth_seed, "train"))
        test_ds = synth(base_test, lo, hi, _split_seed(cfg.data_synth_seed, "test"))
    train_ds.meta["kind"] = test_ds.meta["kind"] = cfg.data_kind
    save_dataset(train_ds, out / TRAIN_FILE)
    save_dataset(test_ds, out / TEST_FILE)
    return train_ds, test_ds


def load_prepared(cfg):
    d = cfg.prepared_dir
    if not (d / TRAIN_FILE).exists() or not (d / TEST_FILE).exists():
        raise FileNotFoundError(f"no prepared datasets in {d}; run `ctxconv prepare` first")
    train_ds, test_ds = load_dataset(d / TRAIN_FILE), load_dataset(d / TEST_FILE)
    if cfg.data_train_subset:
        train_ds = subset(train_ds, cfg.data_train_subset, cfg.run_seed)
    if cfg.data_test_subset:
        test_ds = subset(test_ds, cfg.data_test_subset, cfg.run_seed + 1)
    return train_ds, test_ds


def _eval_dataset(args, cfg):
    if args.dataset:
        return load_dataset(args.dataset)
    return load_prepared(cfg)[1]


def cmd_prepare(args):
    cfg = resolve_config(args)
    train_ds, test_ds = prepare(cfg)
    print(f"prepared {cfg.data_kind}: {len(train_ds)} train / {len(test_ds)} test in {cfg.prepared_dir}")


def cmd_train(args):
    cfg = resolve_config(args)
    train_ds, test_ds = load_prepared(cfg)
    params, records = train(cfg, train_ds, test_ds, resume=args.resume)
    last = read_runlog(Path(cfg.run_out) / RUNLOG)[-1] if records else None
    if last is not None:
        print(f"epoch {last['epoch']}: train loss {last['train_loss']:.4f}, test error {last['test_error']:.2f}%")


def _phi_requested(args):
    return bool(args.config or args.channels is not None)


def cmd_eval(args):
    cfg = resolve_config(args)
    ckpt = Path(args.checkpoint or Path(cfg.run_out) / CHECKPOINT)
    state = load_checkpoint(ckpt)
    phi = state["phi"]
    if _phi_requested(args):
        wanted = cfg.transform_set()
        if wanted != phi:
            if not args.allow_phi_mismatch:
                raise ConfigError(f"checkpoint was trained with {phi.kind} {phi.values}; refusing to evaluate "
                                  f"with {wanted.kind} {wanted.values} (pass --allow-phi-mismatch)")
            phi = wanted
    ds = _eval_dataset(args, cfg)
    _, err = evaluate(ds, phi, state["params"])
    print(f"error: {err:.2f}%")
    result = {"checkpoint": str(ckpt), "dataset": ds.meta.get("source"), "samples": len(ds),
              "phi_kind": phi.kind, "phi_values": list(phi.values), "error": err}
    (ckpt.parent / "eval.json").write_text(json.dumps(result) + "\n")


def cmd_gradcheck(args):
    results = checks.run_suite(seed=args.seed, fault=args.inject_fault)
    print(checks.format_report(results))
    failed = [r["op"] for r in results if not r["passed"]]
    if failed:
        print(f"FAILED: {', '.join(failed)}")
        return EXIT_NUMERIC
    print("all gradient checks passed")


def cmd_export_filters(args):
    cfg = resolve_config(args)
    ckpt = Path(args.checkpoint or Path(cfg.run_out) / CHECKPOINT)
    state = load_checkpoint(ckpt)
    ds = _eval_dataset(args, cfg)
    labels, vectors = export_filter_vectors(ds, state["params"], args.count_per_class, Rng.derive(cfg.run_seed, "export"))
    out_csv = Path(args.out_csv or ckpt.parent / "filters.csv")
    write_filter_csv(out_csv, labels, vectors)
    acc = nearest_centroid_accuracy(labels, vectors)
    print(f"wrote {len(labels)} rows x {vectors.shape[1] + 1} columns to {out_csv}")
    print(f"nearest-centroid accuracy: {acc:.2f}%")


def cmd_dump_ascii(args):
    path = Path(args.path)
    if path.suffix == ".amat":
        ds = load_amat(path, args.transpose_amat)
    elif path.suffix == ".ctx":
        ds = load_dataset(path)
    else:
        labels_path = Path(str(path).replace("images", "labels").replace("idx3", "idx1"))
        ds = load_idx(path, labels_path)
    for i in range(args.index, min(args.index + args.count, len(ds))):
        print(f"#{i} label={ds.labels[i]}")
        print(ascii_digit(ds.images[i]))


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "export-filters": cmd_export_filters,
    "dump-ascii": cmd_dump_ascii,
}


def _thread_limit():
    threads = os.environ.get("CTXCONV_THREADS")
    if not threads:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(threads))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args) or EXIT_OK
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, FormatError):
            print(f"data error: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, CheckError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
