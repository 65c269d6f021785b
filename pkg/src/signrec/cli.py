"""Command-line pipeline: prepare, spectrum, train, evaluate, inspect, recommend.

Every option can also come from a ``key = value`` config file passed with
``--config``; flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import ConfigError, DataError, SignRecError
from .graph import (
    ITEMS_MAP,
    USERS_MAP,
    ThresholdRule,
    build_graph,
    dataset_file,
    ingest_raw,
    kcore_filter,
    read_dataset,
    read_mapping,
    split,
    write_dataset,
)
from .metrics import evaluate, rank_items
from .model import attention_inputs, propagate, scores
from .pathenc import build_table, id_to_signs
from .spectral import SpectralBasis, build_laplacian, eigendecompose, load_spectrum, read_spectrum_header, save_spectrum
from .train import EpochRecord, TrainConfig, evaluation_samples, fit, load_checkpoint, save_checkpoint

log = logging.getLogger("signrec")

TRAIN_FIELDS = [f.name for f in dataclasses.fields(TrainConfig)]
DEFAULTS = TrainConfig()


# ---------------------------------------------------------------------------
# config files


def read_config(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def write_config(path: str | Path, values: dict[str, object]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in values.items():
            fh.write(f"{key} = {'' if value is None else value}\n")


def _optional_int(text: str) -> int | None:
    return None if text in ("", "none", "None") else int(text)


def _flag(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_train_options(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    g.add_argument("--alpha", type=float, help=f"negative-edge weight in (-1, 1); default {DEFAULTS.alpha}")
    g.add_argument("--beta", type=float, help=f"negative-feedback loss weight; default {DEFAULTS.beta}")
    g.add_argument("--lr", type=float, help=f"learning rate; default {DEFAULTS.lr}")
    g.add_argument("--weight-decay", dest="weight_decay", type=float, help=f"default {DEFAULTS.weight_decay}")
    g.add_argument("--epochs", type=int, help=f"default {DEFAULTS.epochs}")
    g.add_argument("--patience", type=int, help=f"default {DEFAULTS.patience}")
    g.add_argument("--batch-size", dest="batch_size", type=int, help=f"default {DEFAULTS.batch_size}")
    g.add_argument("--d", type=int, help=f"embedding size; default {DEFAULTS.d}")
    g.add_argument("--d-h", dest="d_h", type=int, help="spectral dimension; defaults to the spectrum file's")
    g.add_argument("--layers", type=int, help=f"default {DEFAULTS.layers}")
    g.add_argument("--path-length", dest="path_length", type=int, help=f"default {DEFAULTS.path_length}")
    g.add_argument("--max-walks", dest="max_walks", type=_optional_int, help="walks per node; default: one per edge")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand from resetting values given before it
    common.add_argument("--config", default=argparse.SUPPRESS, help="key = value file; flags override it")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="global random seed (default 0)")
    common.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="signrec", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="raw ratings -> canonical dataset")
    p.add_argument("raw", nargs="?", help="CSV or TSV file with user, item and signal columns")
    p.add_argument("--out", help="output directory")
    p.add_argument("--user-col", dest="user_col", help="column name (or 0-based index without a header)")
    p.add_argument("--item-col", dest="item_col")
    p.add_argument("--signal-col", dest="signal_col")
    p.add_argument("--no-header", dest="no_header", action="store_const", const=True, help="first row is data")
    p.add_argument("--delimiter", help="field separator; default from the extension (.tsv tab, else comma)")
    p.add_argument("--rule", help="threshold rule such as 'pos>3.5' or 'pos>=4,neg<2'")
    p.add_argument("--k-core", dest="k_core", type=int, help="minimum interactions per user and item (default 5)")
    p.add_argument("--ratios", help="train,val,test fractions (default 0.7,0.1,0.2)")

    p = sub.add_parser("spectrum", parents=[common], help="precompute the low-frequency eigenvectors")
    p.add_argument("dataset", nargs="?", help="dataset directory or dataset.tsv")
    p.add_argument("--out", help="spectrum cache file")
    p.add_argument("--alpha", type=float, help=f"default {DEFAULTS.alpha}")
    p.add_argument("--d-h", dest="d_h", type=int, help=f"default {DEFAULTS.d_h}")
    p.add_argument("--method", choices=["auto", "dense", "lanczos"])
    p.add_argument("--force", action="store_const", const=True, help="recompute even when the cache matches")

    p = sub.add_parser("train", parents=[common], help="fit a model and write a checkpoint")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--spectrum", help="spectrum cache from the spectrum command")
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="per-epoch TSV log (appended); default <out>.log.tsv")
    p.add_argument("--k", type=int, help="validation cutoff (default 20)")
    _add_train_options(p)

    p = sub.add_parser("evaluate", parents=[common], help="Recall@K and NDCG@K of a checkpoint")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--spectrum", help="defaults to the one recorded at training time")
    p.add_argument("--k", type=int, help="cutoff (default 20)")
    p.add_argument("--split", choices=["val", "test"], help="default test")
    p.add_argument("--out", help="metrics TSV (default: next to the checkpoint)")
    p.add_argument("--per-user", dest="per_user", help="optional per-user TSV")

    p = sub.add_parser("inspect", parents=[common], help="print learned encodings")
    p.add_argument("checkpoint", nargs="?")
    what = p.add_mutually_exclusive_group(required=True)
    what.add_argument("--phi", action="store_true", help="path-type affinities")
    what.add_argument("--theta", action="store_true", help="spectral scales per layer")
    p.add_argument("--layer", type=int)
    p.add_argument("--top", type=int)
    p.add_argument("--bottom", type=int)

    p = sub.add_parser("recommend", parents=[common], help="top-K items for one user")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--user", required=True, help="user key as it appeared in the raw data")
    p.add_argument("--spectrum")
    p.add_argument("--k", type=int, help="default 20")
    return parser


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name, default in (("config", None), ("seed", None), ("verbose", False)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.config:
        dests = set(vars(args))
        for key, value in read_config(args.config).items():
            if key not in dests and key not in TRAIN_FIELDS:
                raise ConfigError(f"{args.config}: unknown key {key!r}")
            if getattr(args, key, None) is None:
                setattr(args, key, value)
    return args


def _value(args, name, convert, default):
    """Option value with type conversion for strings that came from a config file."""
    value = getattr(args, name, None)
    if value is None:
        return default
    if isinstance(value, str) and convert is not str:
        try:
            return convert(value)
        except ValueError:
            raise ConfigError(f"bad value for {name}: {value!r}") from None
    return value


def _train_config(args, **fixed) -> TrainConfig:
    values = {}
    for f in dataclasses.fields(TrainConfig):
        convert = _optional_int if f.name == "max_walks" else type(getattr(DEFAULTS, f.name))
        values[f.name] = _value(args, f.name, convert, getattr(DEFAULTS, f.name))
    values["seed"] = _value(args, "seed", int, 0)
    values.update(fixed)
    return TrainConfig(**values)


def _require(path, what) -> Path:
    if path is None:
        raise ConfigError(f"missing {what}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"{what} not found: {path}")
    return path


def _out_path(args, what) -> Path:
    if not getattr(args, "out", None):
        raise ConfigError(f"missing --out ({what})")
    return Path(args.out)


# ---------------------------------------------------------------------------
# prepare


def _read_raw(path: Path, args) -> list[tuple[str, str, float]]:
    delimiter = _value(args, "delimiter", str, "\t" if path.suffix.lower() in (".tsv", ".tab") else ",")
    delimiter = delimiter.encode().decode("unicode_escape")
    no_header = _flag(_value(args, "no_header", _flag, False))
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh, delimiter=delimiter)
        first = next(reader, None)
        if first is None:
            raise DataError(f"{path} is empty")
        header = None if no_header else [c.strip() for c in first]
        columns = []
        for role, guesses in (("user", ("user", "user_id")), ("item", ("item", "item_id")), ("signal", ("signal", "rating"))):
            wanted = getattr(args, f"{role}_col", None)
            if header is None:
                if wanted is None or not str(wanted).isdigit():
                    raise ConfigError(f"--{role}-col must be a 0-based column index when the file has no header")
                columns.append(int(wanted))
            elif wanted is not None:
                if wanted in header:
                    columns.append(header.index(wanted))
                else:
                    raise ConfigError(f"column {wanted!r} for {role} not in header {header}")
            else:
                found = [header.index(g) for g in guesses if g in header]
                if not found:
                    raise ConfigError(f"no column mapping for {role}; pass --{role}-col")
                columns.append(found[0])
        rows = [first] if header is None else []
        rows.extend(reader)
    records = []
    width = max(columns) + 1
    for lineno, row in enumerate(rows, 1 if header is None else 2):
        if not row:
            continue
        if len(row) < width:
            raise DataError(f"{path}:{lineno}: expected at least {width} fields")
        try:
            records.append((row[columns[0]], row[columns[1]], float(row[columns[2]])))
        except ValueError:
            raise DataError(f"{path}:{lineno}: signal {row[columns[2]]!r} is not a number") from None
    return records


def cmd_prepare(args) -> int:
    raw = _require(args.raw, "raw file")
    out = _out_path(args, "dataset directory")
    rule = ThresholdRule.parse(_value(args, "rule", str, "pos>3.5"))
    k_core = _value(args, "k_core", int, 5)
    try:
        ratios = tuple(float(x) for x in str(_value(args, "ratios", str, "0.7,0.1,0.2")).split(","))
    except ValueError:
        raise ConfigError(f"bad --ratios {args.ratios!r}") from None
    seed = _value(args, "seed", int, 0)

    ingested = ingest_raw(_read_raw(raw, args), rule)
    rows, kept_users, kept_items = kcore_filter(ingested.interactions, k_core, return_kept=True)
    user_keys = [ingested.user_keys[u] for u in kept_users.tolist()]
    item_keys = [ingested.item_keys[i] for i in kept_items.tolist()]
    data = split(rows, ratios, seed, len(user_keys), len(item_keys))
    write_dataset(out, data, user_keys, item_keys)

    positives = sum(r.sign for r in rows)
    negatives = len(rows) - positives
    print(f"users\t{data.n}")
    print(f"items\t{data.m}")
    print(f"interactions\t{len(rows)}")
    print(f"positive\t{positives}")
    print(f"negative\t{negatives}")
    print(f"neg_per_pos\t{negatives / positives:.4f}" if positives else "neg_per_pos\tinf")
    print(f"train\t{len(data.train)}")
    print(f"val\t{len(data.validation)}")
    print(f"test\t{len(data.test)}")
    return 0


# ---------------------------------------------------------------------------
# spectrum


def cmd_spectrum(args) -> int:
    path = dataset_file(_require(args.dataset, "dataset"))
    out = _out_path(args, "spectrum file")
    alpha = _value(args, "alpha", float, DEFAULTS.alpha)
    d_h = _value(args, "d_h", int, DEFAULTS.d_h)
    if not -1.0 < alpha < 1.0:
        raise ConfigError(f"alpha must lie in (-1, 1), got {alpha}")
    if d_h < 1:
        raise ConfigError(f"d_h must be >= 1, got {d_h}")
    data = read_dataset(path)
    graph = build_graph(data.train, data.n, data.m)
    effective = min(d_h, graph.order)
    if out.exists() and not _flag(_value(args, "force", _flag, False)):
        try:
            header = read_spectrum_header(out)
        except DataError:
            header = None
        if header == (graph.order, effective, alpha):
            print(f"cache hit: {out}")
            return 0
    basis = eigendecompose(
        build_laplacian(graph, alpha), d_h, method=_value(args, "method", str, "auto"), seed=_value(args, "seed", int, 0)
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    save_spectrum(out, basis, alpha)
    print(f"wrote {out}: order {graph.order}, d_h {basis.d_h}, alpha {alpha!r}")
    print(f"eigenvalues\t{basis.values[0]:.6g} .. {basis.values[-1]:.6g}")
    return 0


# ---------------------------------------------------------------------------
# train


def _load_basis(path: Path, order: int, alpha: float | None = None, d_h: int | None = None) -> tuple[SpectralBasis, float]:
    basis, spec_alpha = load_spectrum(path)
    if basis.vectors.shape[1] != order:
        raise DataError(f"spectrum {path} has order {basis.vectors.shape[1]}, dataset has {order} nodes")
    if alpha is not None and alpha != spec_alpha:
        raise ConfigError(f"alpha {alpha!r} does not match the spectrum's {spec_alpha!r}; recompute the spectrum")
    if d_h is not None and d_h != basis.d_h:
        raise ConfigError(f"d_h {d_h} does not match the spectrum's {basis.d_h}")
    return basis, spec_alpha


def _conf_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.name + ".conf")


def cmd_train(args) -> int:
    path = dataset_file(_require(args.dataset, "dataset"))
    spectrum = _require(args.spectrum, "--spectrum")
    out = _out_path(args, "checkpoint")
    data = read_dataset(path)
    graph = build_graph(data.train, data.n, data.m)
    basis, alpha = _load_basis(spectrum, graph.order, _value(args, "alpha", float, None), _value(args, "d_h", int, None))
    k = _value(args, "k", int, DEFAULTS.k)
    config = _train_config(args, alpha=alpha, d_h=basis.d_h, k=k)

    out.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if getattr(args, "log", None) else out.with_name(out.name + ".log.tsv")
    fresh = not log_path.exists()
    with open(log_path, "a", encoding="utf-8", newline="\n") as fh:
        if fresh:
            fh.write(f"epoch\tloss\tval_recall@{k}\tval_ndcg@{k}\tseconds\n")

        def on_epoch(r: EpochRecord) -> None:
            fh.write(f"{r.epoch}\t{r.loss:.10f}\t{r.val_recall:.10f}\t{r.val_ndcg:.10f}\t{r.seconds:.3f}\n")
            fh.flush()
            if _flag(args.verbose):
                print(f"epoch {r.epoch}\tloss {r.loss:.6f}\tval recall@{k} {r.val_recall:.4f}", file=sys.stderr)

        best, history = fit(graph, data, basis, config, on_epoch=on_epoch)
        save_checkpoint(out, best, config, basis.d_h)
        write_config(
            _conf_path(out),
            {**dataclasses.asdict(config), "spectrum": spectrum.resolve(), "dataset": path.resolve()},
        )
        stack = _propagate(best, graph, basis, config)
        lines = []
        for part in ("val", "test"):
            if data.part(part):
                report = evaluate(stack, data, k, part=part)
                lines.append(f"final-{part}\t\t{report.recall:.10f}\t{report.ndcg:.10f}\t")
                print(f"{part}\trecall@{k}\t{report.recall:.10f}\tndcg@{k}\t{report.ndcg:.10f}")
        fh.write("".join(line + "\n" for line in lines))
    print(f"epochs\t{len(history)}")
    print(f"checkpoint\t{out}")
    return 0


def _propagate(params, graph, basis, config):
    inputs = attention_inputs(evaluation_samples(graph, build_table(config.path_length), config), basis)
    with torch.no_grad():
        return propagate(params, inputs)


# ---------------------------------------------------------------------------
# evaluate / recommend


def _restore(args, checkpoint: Path, dataset_path: Path):
    """Checkpoint, dataset, graph, basis and config as used at training time."""
    params, header = load_checkpoint(checkpoint)
    data = read_dataset(dataset_path)
    if (data.n, data.m) != (header.n, header.m):
        raise DataError(f"checkpoint is for {header.n} users / {header.m} items, dataset has {data.n} / {data.m}")
    conf_file = _conf_path(checkpoint)
    saved = read_config(conf_file) if conf_file.exists() else {}
    spectrum = getattr(args, "spectrum", None) or saved.get("spectrum")
    if not spectrum:
        raise ConfigError(f"no --spectrum given and {conf_file} does not record one")
    graph = build_graph(data.train, data.n, data.m)
    basis, _ = _load_basis(_require(spectrum, "spectrum"), graph.order, header.alpha, header.d_h)
    seed = _value(args, "seed", int, None)
    config = TrainConfig(
        alpha=header.alpha,
        beta=header.beta,
        d=header.d,
        d_h=header.d_h,
        layers=header.layers,
        path_length=header.path_length,
        seed=int(saved.get("seed", 0)) if seed is None else seed,
        max_walks=_optional_int(saved.get("max_walks", "")),
    )
    return params, data, graph, basis, config


def cmd_evaluate(args) -> int:
    checkpoint = _require(args.checkpoint, "checkpoint")
    path = dataset_file(_require(args.dataset, "dataset"))
    params, data, graph, basis, config = _restore(args, checkpoint, path)
    k = _value(args, "k", int, 20)
    part = _value(args, "split", str, "test")
    report = evaluate(_propagate(params, graph, basis, config), data, k, part=part, keep_per_user=bool(args.per_user))
    for key, value in report.rows():
        print(f"{key}\t{value}")
    out = Path(args.out) if args.out else checkpoint.with_name(f"{checkpoint.name}.{part}.tsv")
    report.write_tsv(out, args.per_user)
    return 0


def cmd_recommend(args) -> int:
    checkpoint = _require(args.checkpoint, "checkpoint")
    path = dataset_file(_require(args.dataset, "dataset"))
    params, data, graph, basis, config = _restore(args, checkpoint, path)
    users_file, items_file = path.parent / USERS_MAP, path.parent / ITEMS_MAP
    user_keys = read_mapping(users_file) if users_file.exists() else [str(u) for u in range(data.n)]
    item_keys = read_mapping(items_file) if items_file.exists() else [str(i) for i in range(data.m)]
    try:
        u = user_keys.index(args.user)
    except ValueError:
        raise ConfigError(f"unknown user {args.user!r}") from None
    k = _value(args, "k", int, 20)
    seen = {r.item for part in ("train", "val", "test") for r in data.part(part) if r.user == u}
    stack = _propagate(params, graph, basis, config)
    top = rank_items(stack, u, seen, k)
    values = scores(stack, torch.full((len(top),), u, dtype=torch.long), torch.tensor(top, dtype=torch.long))
    print("rank\titem\tscore")
    for rank, (i, s) in enumerate(zip(top, values.tolist()), 1):
        print(f"{rank}\t{item_keys[i]}\t{s:.10f}")
    return 0


# ---------------------------------------------------------------------------
# inspect


def cmd_inspect(args) -> int:
    params, header = load_checkpoint(_require(args.checkpoint, "checkpoint"))
    if args.theta:
        print("layer\ttheta")
        for layer, value in enumerate(F.softplus(params.theta_raw).tolist()):
            print(f"{layer}\t{value!r}")
        return 0
    table = build_table(header.path_length)
    layers = range(header.layers)
    if args.layer is not None:
        if not 0 <= args.layer < header.layers:
            raise ConfigError(f"--layer must be in [0, {header.layers}), got {args.layer}")
        layers = [args.layer]
    for n in (args.top, args.bottom):
        if n is not None and n < 0:
            raise ConfigError("--top and --bottom must be non-negative")
    print("layer\tpath\tphi")
    for layer in layers:
        values = params.phi[layer].numpy()
        order = np.argsort(-values, kind="stable")  # descending, ties by path-type id
        if args.top is not None or args.bottom is not None:
            head = order[: args.top or 0].tolist()
            tail = order[len(order) - (args.bottom or 0) :].tolist() if args.bottom else []
            order = head + [t for t in tail if t not in head]
        for tid in order:
            print(f"{layer}\t{id_to_signs(int(tid), table)}\t{float(values[tid])!r}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "spectrum": cmd_spectrum,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
    "recommend": cmd_recommend,
}


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except SignRecError as exc:
        print(f"signrec: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if _flag(args.verbose) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    threads = os.environ.get("SIGF_THREADS")
    if threads:
        try:
            torch.set_num_threads(int(threads))
        except ValueError:
            print(f"signrec: error: SIGF_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return ConfigError.exit_code
    try:
        return COMMANDS[args.command](args)
    except SignRecError as exc:
        print(f"signrec: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
