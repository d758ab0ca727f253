"""Command-line interface: ``tgcn {train,evaluate,predict,synth,gradcheck}``.

Exit status is 0 on success, 1 on usage or configuration errors, 2 on
data or file errors and 3 on numerical failures.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from .evaluation import evaluate
from .graph_data import (
    DataError,
    dump_edge_list,
    load_edge_list,
    normalize_adjacency,
    split,
    synth_generate,
    synth_temporal,
)
from .model import MixingMatrix, ModelConfig, ModelParameters, forward, predict_edge
from .tensor_core import ShapeError, SingularMatrixError
from .training import (
    FormatError,
    NumericalError,
    TrainConfig,
    finite_difference_check,
    load_checkpoint,
    save_checkpoint,
    train,
    write_metrics_csv,
)

__all__ = ["main", "ConfigError", "load_config"]

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOLERANCE = 1e-4

_SYNTHESIZERS = {"smooth": synth_generate, "temporal": synth_temporal}


class ConfigError(ValueError):
    """Malformed or incomplete experiment configuration."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _get(cp, section, key, conv=str, default=None, required=False):
    if not cp.has_option(section, key):
        if required:
            raise ConfigError(f"[{section}] {key} is required")
        return default
    raw = cp.get(section, key).strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None


def _int_tuple(text: str) -> tuple:
    return tuple(int(x) for x in text.split(","))


def _float_pair(text: str) -> tuple:
    lo, hi = (float(x) for x in text.split(","))
    return lo, hi


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _optional_int(text: str):
    return None if text.lower() in ("", "none") else int(text)


def load_config(path) -> dict:
    """Parse an experiment config into plain values.

    Sections: ``[data]`` (``path`` or ``synth``, plus the mandatory split
    ``seed``), ``[model]``, ``[train]`` (mandatory ``seed``) and
    ``[output]`` (``dir``).  Relative paths resolve against the config
    file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    cp = configparser.ConfigParser()
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent
    for section in ("data", "train", "output"):
        if not cp.has_section(section):
            raise ConfigError(f"{path}: missing [{section}] section")

    data = {"split_seed": _get(cp, "data", "seed", int, required=True)}
    data_path = _get(cp, "data", "path")
    synth = _get(cp, "data", "synth")
    if (data_path is None) == (synth is None):
        raise ConfigError("[data] needs exactly one of 'path' or 'synth'")
    if data_path is not None:
        resolved = (base / data_path).resolve()
        if not resolved.is_file():
            raise FileNotFoundError(f"data file not found: {resolved}")
        data["path"] = resolved
    else:
        if synth not in _SYNTHESIZERS:
            raise ConfigError(f"[data] synth must be one of {sorted(_SYNTHESIZERS)}, got {synth!r}")
        data["synth"] = synth
        data["nodes"] = _get(cp, "data", "nodes", int, required=True)
        data["slices"] = _get(cp, "data", "slices", int, required=True)
        data["density"] = _get(cp, "data", "density", float, 0.15)
        data["weight_range"] = _get(cp, "data", "weight_range", _float_pair, (-1.0, 1.0))
        data["synth_seed"] = _get(cp, "data", "synth_seed", int, data["split_seed"])

    seed = _get(cp, "train", "seed", int, required=True)
    try:
        model = ModelConfig(
            widths=_get(cp, "model", "widths", _int_tuple, (16, 16, 16)),
            window=_get(cp, "model", "window", int, 2),
            activation=_get(cp, "model", "activation", str, "tanh"),
            tied=_get(cp, "model", "tied", _bool, False),
            seed=seed,
        )
        train_cfg = TrainConfig(
            epochs=_get(cp, "train", "epochs", int, 500),
            learning_rate=_get(cp, "train", "learning_rate", float, 1e-2),
            optimizer=_get(cp, "train", "optimizer", str, "adam"),
            delta=_get(cp, "train", "delta", float, 1.0),
            seed=seed,
            patience=_get(cp, "train", "patience", _optional_int),
            batch_size=_get(cp, "train", "batch_size", _optional_int),
            weight_decay=_get(cp, "train", "weight_decay", float, 0.0),
            model=model,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out_dir = _get(cp, "output", "dir", required=True)
    return {"data": data, "train": train_cfg, "out_dir": (base / out_dir).resolve()}


def _load_graph(data: dict):
    if "path" in data:
        return load_edge_list(data["path"])
    synth = _SYNTHESIZERS[data["synth"]]
    return synth(data["nodes"], data["slices"], data["density"], data["weight_range"], seed=data["synth_seed"])


def _manifest(cfg: dict) -> str:
    cp = configparser.ConfigParser()
    data = cfg["data"]
    cp["data"] = {k: (",".join(map(repr, v)) if isinstance(v, tuple) else str(v)) for k, v in data.items()}
    t = cfg["train"]
    m = t.model
    cp["model"] = {
        "widths": ",".join(map(str, m.widths)),
        "window": str(m.window),
        "activation": m.activation,
        "tied": str(m.tied).lower(),
        "seed": str(m.seed),
    }
    cp["train"] = {
        "epochs": str(t.epochs),
        "learning_rate": repr(t.learning_rate),
        "optimizer": t.optimizer,
        "delta": repr(t.delta),
        "seed": str(t.seed),
        "patience": str(t.patience),
        "batch_size": str(t.batch_size),
        "weight_decay": repr(t.weight_decay),
    }
    cp["output"] = {"dir": str(cfg["out_dir"])}
    lines = []
    for section in cp.sections():
        lines.append(f"[{section}]")
        lines += [f"{k} = {v}" for k, v in cp[section].items()]
        lines.append("")
    return "\n".join(lines)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    graph = _load_graph(cfg["data"])
    splits = split(graph, seed=cfg["data"]["split_seed"])
    params, history = train(graph, splits, cfg["train"])
    out = cfg["out_dir"]
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, out / "model.ckpt")
    write_metrics_csv(history, out / "metrics.csv")
    (out / "manifest.ini").write_text(_manifest(cfg), encoding="utf-8")
    print(evaluate(params, graph, splits, "test").csv_row())
    return EXIT_OK


def _checkpoint_and_graph(args):
    if not Path(args.ckpt).is_file():
        raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    params = load_checkpoint(args.ckpt)
    graph = load_edge_list(args.data)
    if (graph.n_nodes, graph.n_slices) != (params.n_nodes, params.n_slices):
        raise DataError(
            f"checkpoint expects N={params.n_nodes}, T={params.n_slices}; "
            f"data has N={graph.n_nodes}, T={graph.n_slices}"
        )
    return params, graph


def cmd_evaluate(args) -> int:
    params, graph = _checkpoint_and_graph(args)
    splits = split(graph, seed=args.seed)
    print(evaluate(params, graph, splits, args.split).csv_row())
    return EXIT_OK


def cmd_predict(args) -> int:
    params, graph = _checkpoint_and_graph(args)
    i, j, t = args.edge
    F = forward(params, normalize_adjacency(graph.adjacency))
    print(repr(predict_edge(F, i, j, t, (params.W_c, params.z, params.v))))
    return EXIT_OK


def cmd_synth(args) -> int:
    synth = synth_temporal if args.temporal else synth_generate
    graph = synth(args.nodes, args.slices, args.density, args.weight_range, seed=args.seed)
    dump_edge_list(graph, args.out)
    return EXIT_OK


def gradcheck_instance(model: ModelConfig, seed: int = 0):
    """Six nodes, four slices, ten training entries and non-trivial mixing."""
    graph = synth_generate(6, 4, density=0.1, seed=seed)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.permutation(graph.n_entries)[:10])
    params = ModelParameters.init(model, graph.n_nodes, graph.n_slices)
    params.mixing = MixingMatrix(rng.normal(size=params.mixing.raw.shape))
    params.z[:] = rng.normal(scale=0.1, size=params.z.shape)
    params.v[:] = rng.uniform(-1.0, 1.0, size=params.v.shape)
    return params, normalize_adjacency(graph.adjacency), graph.entries[idx], graph.weights[idx]


def cmd_gradcheck(args) -> int:
    model = ModelConfig(widths=(4, 4, 4), window=2, seed=args.seed)
    delta = 1.0
    if args.config is not None:
        cfg = load_config(args.config)
        m = cfg["train"].model
        model = ModelConfig(widths=m.widths, window=m.window, activation=m.activation, tied=m.tied, seed=m.seed)
        delta = cfg["train"].delta
    params, adj, entries, targets = gradcheck_instance(model, args.seed)
    worst, (name, index) = finite_difference_check(params, adj, entries, targets, eps=args.eps, delta=delta)
    ok = worst < GRADCHECK_TOLERANCE
    print(f"worst relative error {worst:.3e} at {name}{list(index)} ({'ok' if ok else 'FAILED'})")
    return EXIT_OK if ok else EXIT_NUMERIC


def _edge(text: str):
    try:
        i, j, t = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected i,j,t integers, got {text!r}") from None
    return i, j, t


def _pair(text: str):
    try:
        return _float_pair(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tgcn", description="Link-weight estimation on dynamic graphs.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="load or synthesize data, split, train, write artifacts")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("evaluate", help="print split,count,mae,rmse for a checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, required=True, help="split seed used at training time")
    s.add_argument("--split", default="test", choices=["train", "validation", "test"])
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("predict", help="estimate one link weight")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--edge", type=_edge, required=True,
                   help="dense indices i,j,t (labels in first-appearance order, timestamps ranked)")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("synth", help="write a synthetic edge list")
    s.add_argument("--nodes", type=int, required=True)
    s.add_argument("--slices", type=int, required=True)
    s.add_argument("--density", type=float, default=0.15)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--weight-range", type=_pair, default=(-1.0, 1.0))
    s.add_argument("--temporal", action="store_true", help="weights depend on earlier slices")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gradcheck", help="compare gradients with central differences")
    s.add_argument("--config")
    s.add_argument("--eps", type=float, default=1e-5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"tgcn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, SingularMatrixError, FloatingPointError) as exc:
        print(f"tgcn: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FormatError, ShapeError, OSError) as exc:
        print(f"tgcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"tgcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
