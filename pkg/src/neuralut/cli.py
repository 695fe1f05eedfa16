"""Command-line front end: ``neuralut {train,convert,check,emit,simulate,eval,params}``.

Exit codes: 0 success, 1 usage or configuration error, 2 verification
mismatch, 3 I/O error.
"""

import argparse
import logging
import sys

import numpy as np

from . import config as config_mod
from . import data as data_mod
from ._container import ContainerError
from .lutgen import BUNDLE_MAGIC, load_bundle, model_to_lutnetwork, save_bundle, dump_text
from .netsim import SimulationError, argmax_codes, check_equivalence, netlist_predict, simulate
from .rtl import write_rtl
from .subnet import count_params
from .topology import (
    CHECKPOINT_MAGIC,
    TopologyError,
    build_model,
    load_checkpoint,
    predict,
    resolve_layer_specs,
    save_checkpoint,
)
from .training import TrainConfigError, train

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH, EXIT_IO = 0, 1, 2, 3

log = logging.getLogger("neuralut")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def load_datasets(cfg):
    """``(train, test)`` datasets described by a validated config's data section."""
    d = cfg.get("data")
    if d is None:
        raise config_mod.ConfigError("data: section required for this command")
    kind = d["kind"]
    seed = cfg.get("seed", 0)
    if kind == "semicircles":
        ds = data_mod.gen_two_semicircles(d["n_per_class"], d["noise_std"], seed)
        return data_mod.split(ds, d["test_fraction"], seed)
    if kind == "digits":
        return data_mod.split(data_mod.load_sklearn_digits(), d["test_fraction"], seed)
    if kind == "mnist":
        return (data_mod.load_mnist_idx(d["train_images"], d["train_labels"]),
                data_mod.load_mnist_idx(d["test_images"], d["test_labels"]))
    train_set = data_mod.load_tabular_csv(d["train"], d["feature_count"], d["class_count"],
                                          header=d["header"])
    test_set = None
    if "test" in d:
        test_set = data_mod.load_tabular_csv(d["test"], d["feature_count"], d["class_count"],
                                             header=d["header"],
                                             stats=(train_set.mean, train_set.std))
    return train_set, test_set


def _read_config(args):
    cfg = config_mod.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def _load_artifact(path):
    with open(path, "rb") as f:
        magic = f.read(8)
    if magic == CHECKPOINT_MAGIC:
        return "checkpoint", load_checkpoint(path)
    if magic == BUNDLE_MAGIC:
        return "tables", load_bundle(path)
    raise ContainerError(f"{path}: neither a checkpoint nor a table bundle")


def cmd_train(args):
    cfg = _read_config(args)
    train_set, test_set = load_datasets(cfg)
    model_cfg = cfg["model"]
    input_dim = train_set.X.shape[1]
    if model_cfg.setdefault("input_dim", input_dim) != input_dim:
        raise config_mod.ConfigError(
            f"model.input_dim: {model_cfg['input_dim']} but the data has {input_dim} features")
    model = build_model(model_cfg, seed=cfg["seed"])
    model.config = cfg
    best, history = train(model, train_set, test_set, config_mod.train_config(cfg))
    save_checkpoint(best, args.out)
    hist_path = args.history or args.out + ".history.tsv"
    with open(hist_path, "w") as f:
        f.write(history.to_text())
    rec = history.records[history.best_epoch]
    print(f"saved {args.out} (best epoch {rec.epoch}: train_acc={rec.train_acc:.4f} "
          f"test_acc={rec.test_acc:.4f}); history {hist_path}")
    return EXIT_OK


def cmd_convert(args):
    model = load_checkpoint(args.checkpoint)
    lutnet = model_to_lutnetwork(model, threads=args.threads)
    save_bundle(lutnet, args.out)
    if args.text:
        with open(args.text, "w") as f:
            f.write(dump_text(lutnet))
    print(f"saved {args.out}: {lutnet.n_tables} tables in {len(lutnet.layers)} layers")
    return EXIT_OK


def cmd_check(args):
    model = load_checkpoint(args.checkpoint)
    lutnet = load_bundle(args.tables)
    report = check_equivalence(model, lutnet, n_samples=args.samples, seed=args.seed or 0)
    text = report.to_text()
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    return EXIT_OK if report.clean else EXIT_MISMATCH


def cmd_emit(args):
    lutnet = load_bundle(args.tables)
    names = write_rtl(lutnet, args.out)
    print(f"wrote {len(names)} files to {args.out}: {' '.join(names)}")
    return EXIT_OK


def _read_rows(path):
    rows = []
    with open(path) as f:
        for line in f:
            if line.strip():
                rows.append(line.split())
    return rows


def cmd_simulate(args):
    lutnet = load_bundle(args.tables)
    rows = _read_rows(args.input)
    try:
        if args.mode == "codes":
            codes = np.array([[int(v) for v in r] for r in rows], dtype=np.int64)
        else:
            codes = lutnet.encode(np.array([[float(v) for v in r] for r in rows]))
    except ValueError as exc:
        raise UsageError(f"{args.input}: {exc}") from None
    codes = codes.reshape(len(rows), -1) if rows else np.zeros((0, lutnet.input_dim), np.int64)
    result = simulate(lutnet, codes)
    with open(args.out, "w") as f:
        for row in result.outputs:
            f.write(" ".join(str(int(v)) for v in row) + "\n")
    if args.predictions:
        with open(args.predictions, "w") as f:
            f.writelines(f"{int(c)}\n" for c in argmax_codes(result.outputs))
    print(f"simulated {len(codes)} rows, latency_cycles={result.latency_cycles}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _read_config(args)
    _, test_set = load_datasets(cfg)
    kind, artifact = _load_artifact(args.artifact)
    if test_set is None:
        raise config_mod.ConfigError("data.test: a test split is required for eval")
    if kind == "checkpoint":
        pred = predict(artifact, test_set.X)
    else:
        pred = netlist_predict(artifact, test_set.X)
    acc = float(np.mean(pred == test_set.y))
    print(f"{kind} accuracy {acc:.6f} on {len(test_set)} samples")
    return EXIT_OK


def params_report(cfg):
    model_cfg = dict(cfg["model"])
    model_cfg.setdefault("input_dim", 0)
    lines = ["layer\twidth\tF\tbeta\tL\tN\tS\tT_A\tT_R\tT_N\tlayer_total"]
    total = 0
    for i, spec in enumerate(resolve_layer_specs(model_cfg)):
        s = spec.subnet
        t_a, t_r, t_n = count_params(spec.fan_in, s.L, s.N, s.S)
        total += t_n * spec.width
        lines.append(f"{i}\t{spec.width}\t{spec.fan_in}\t{spec.in_bits}\t{s.L}\t{s.N}\t{s.S}"
                     f"\t{t_a}\t{t_r}\t{t_n}\t{t_n * spec.width}")
    lines.append(f"total\t{total}")
    return "\n".join(lines) + "\n"


def cmd_params(args):
    sys.stdout.write(params_report(_read_config(args)))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="neuralut", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a circuit model from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1, help="accepted; training is single-threaded")
    s.add_argument("--history", help="TSV history path (default: <out>.history.tsv)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("convert", help="convert a checkpoint to a table bundle")
    s.add_argument("checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--text", help="also write a text dump of every table")
    s.set_defaults(func=cmd_convert)

    s = sub.add_parser("check", help="verify a table bundle against its checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("tables")
    s.add_argument("--samples", type=int, default=10_000)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--out", help="also write the report here")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("emit", help="write Verilog for a table bundle")
    s.add_argument("tables")
    s.add_argument("--out", required=True, help="target directory")
    s.set_defaults(func=cmd_emit)

    s = sub.add_parser("simulate", help="run the netlist on rows of an input file")
    s.add_argument("tables")
    s.add_argument("input")
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=["codes", "features"], default="codes")
    s.add_argument("--predictions", help="also write one predicted class per line")
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("eval", help="test accuracy of a checkpoint or table bundle")
    s.add_argument("artifact")
    s.add_argument("--config", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("params", help="per-layer trainable parameter counts")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_params)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s")
        return args.func(args)
    except (UsageError, SimulationError) as exc:
        print(f"neuralut: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (config_mod.ConfigError, TopologyError, TrainConfigError) as exc:
        print(f"neuralut: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ContainerError, data_mod.DataFormatError) as exc:
        print(f"neuralut: io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
