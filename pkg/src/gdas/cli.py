"""Command-line entry point: ``gdas {search,derive,train,oracle,validate,export-dot}``.

Exit codes: 0 success, 1 runtime failure, 2 config or input error.
Every command writes its resolved config next to its outputs; wall-clock
numbers go to ``timing.json`` so the other files are byte-stable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import yaml

from . import config as cfgmod
from .config import ConfigError, RunConfig
from .derive import DerivedCell, derive_both, export_cell, import_cell
from .engine import NonFiniteLossError, evaluate, run_search, train_network
from .network import build_network
from .oracle import EnumerationTooLarge, enumerate_cells, rank_all
from .search_space import ArchParams

logger = logging.getLogger("gdas")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class InputError(ValueError):
    """Malformed user input other than the config file (cell or arch JSON)."""


# ----------------------------------------------------------------------
# small writers
# ----------------------------------------------------------------------

def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not text.endswith("\n"):
        text += "\n"
    path.write_text(text, encoding="utf-8", newline="\n")
    return path


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _report(title: str, pairs: list[tuple[str, object]]) -> None:
    """Delimited summary on stdout."""
    print(f"===== {title} =====")
    for k, v in pairs:
        print(f"{k}: {v}")
    print("=" * (12 + len(title)))


class _Timer:
    def __init__(self):
        self.t0 = time.perf_counter()
        self.marks: dict[str, float] = {}

    def mark(self, name: str) -> None:
        self.marks[name] = round(time.perf_counter() - self.t0, 3)

    def dump(self, out: Path) -> None:
        _write(out / "timing.json", _json({"wall_seconds": self.marks}))


# ----------------------------------------------------------------------
# config resolution
# ----------------------------------------------------------------------

def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        out[key.strip()] = yaml.safe_load(raw)
    return out


def _resolve(args, epochs_key: str | None = None, require_file: bool = True) -> RunConfig:
    overrides = _parse_set(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "output_dir", None):
        overrides["output_dir"] = args.output_dir
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    if epochs_key and getattr(args, "epochs", None) is not None:
        overrides[epochs_key] = args.epochs
    if getattr(args, "frc", False):
        overrides["search.fixed_reduction_cell"] = True
    if getattr(args, "workers", None) is not None:
        overrides["oracle.workers"] = args.workers
    path = getattr(args, "config", None)
    if path:
        return cfgmod.load(path, overrides)
    if require_file:
        raise ConfigError("--config", "a config file is required for this command")
    return cfgmod.from_dict({"dataset": {}}, overrides)


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_cell(path: str) -> DerivedCell:
    try:
        return import_cell(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read cell file {path}: {e}") from e
    except (ValueError, KeyError, TypeError) as e:
        raise InputError(f"malformed cell {path}: {e}") from e


def _read_arch(path: str) -> ArchParams:
    try:
        return ArchParams.from_json(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise InputError(f"cannot read architecture file {path}: {e}") from e
    except (ValueError, KeyError, TypeError) as e:
        raise InputError(f"malformed architecture parameters {path}: {e}") from e


def _write_cells(out: Path, cells: dict[str, DerivedCell]) -> list[Path]:
    written = []
    for ct, cell in cells.items():
        written.append(_write(out / f"cell_{ct}.json", export_cell(cell, "json")))
        written.append(_write(out / f"cell_{ct}.dot", export_cell(cell, "dot")))
    return written


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

METRIC_COLUMNS = ["epoch", "iter", "split", "loss", "accuracy", "tau", "lr_W", "lr_A"]


def cmd_search(args) -> int:
    cfg = _resolve(args, "search.epochs")
    out = _outdir(cfg)
    timer = _Timer()
    _write(out / "resolved_config.yaml", cfg.to_yaml())
    split = cfg.make_split()
    spec, plan = cfg.space_spec(), cfg.plan()
    scfg = cfg.search_config()

    def progress(epoch, rows, _snap):
        tr, va = rows
        logger.info("epoch %d/%d  train %.4f  val %.4f  tau %.3f", epoch, scfg.epochs,
                    tr["loss"], va["loss"], tr["tau"])

    result = run_search(scfg, split, spec, plan, progress)
    timer.mark("search")
    _write(out / "metrics.csv", _csv(result.metrics, METRIC_COLUMNS))
    _write(out / "arch_params_final.json", result.arch.to_json())
    for snap in result.snapshots:
        _write(out / "snapshots" / f"arch_params_epoch_{snap['epoch']:04d}.json", _json(snap))
    cells = derive_both(result.arch, exclude_zeroize=cfg.derive.exclude_zeroize)
    _write_cells(out, cells)
    if cfg.figures:
        from . import plotting

        plotting.plot_search_curves(result.metrics, out / "figures" / "search_curves.png")
        for ct in result.arch.cell_types:
            plotting.plot_edge_probabilities(result.snapshots, out / "figures" / f"edge_probs_{ct}.png", ct)
    timer.mark("total")
    timer.dump(out)
    last = {m["split"]: m for m in result.metrics[-2:]}
    pairs = [("output_dir", out), ("epochs", scfg.epochs), ("selection", scfg.selection_mode),
             ("fixed_reduction_cell", scfg.fixed_reduction_cell),
             ("final_train_loss", f"{last['train']['loss']:.4f}"),
             ("final_val_loss", f"{last['val']['loss']:.4f}")]
    pairs += [(f"cell_{ct}", json.dumps([list(map(list, n)) for n in c.nodes])) for ct, c in cells.items()]
    _report("search", pairs)
    return EXIT_OK


def cmd_derive(args) -> int:
    arch = _read_arch(args.arch_params)
    omega = [o.strip() for o in args.omega.split(",")] if args.omega else None
    try:
        cells = derive_both(arch, T=args.T, omega=omega, exclude_zeroize=args.exclude_zeroize)
    except ValueError as e:
        raise InputError(str(e)) from e
    out = Path(args.output_dir or Path(args.arch_params).parent)
    _write_cells(out, cells)
    _report("derive", [("output_dir", out)] + [
        (f"cell_{ct}", json.dumps([list(map(list, n)) for n in c.nodes])) for ct, c in cells.items()])
    return EXIT_OK


TRAIN_COLUMNS = ["epoch", "train_loss", "train_acc", "lr", "eval_loss", "eval_acc"]


def cmd_train(args) -> int:
    cfg = _resolve(args, "train.epochs")
    cell = _read_cell(args.cell)
    if cell.cell_type != "normal":
        raise InputError(f"expected a normal cell, got cell type {cell.cell_type!r}")
    reduction = _read_cell(args.reduction_cell) if args.reduction_cell else "fixed"
    plan = cfg.plan()
    if cell.B != plan.B:
        raise InputError(f"cell has B={cell.B} but the config's space.B is {plan.B}")
    out = _outdir(cfg)
    timer = _Timer()
    _write(out / "resolved_config.yaml", cfg.to_yaml())
    train, test = cfg.make_data(), cfg.make_test_data()
    net = build_network(cell, reduction, plan, affine=True, seed=cfg.seed)
    n_params = net.num_parameters()
    history = train_network(net, train, cfg.train, seed=cfg.seed, eval_set=test, eval_every_epoch=True)
    timer.mark("train")
    test_loss, test_acc = evaluate(net, test)
    _write(out / "train_history.csv", _csv(history, TRAIN_COLUMNS))
    _write(out / "test_metrics.csv", _csv(
        [dict(test_loss=test_loss, test_acc=test_acc, train_loss=history[-1]["train_loss"],
              train_acc=history[-1]["train_acc"], parameters=n_params)],
        ["test_loss", "test_acc", "train_loss", "train_acc", "parameters"]))
    if cfg.figures:
        from . import plotting

        plotting.plot_train_curve(history, out / "figures" / "train_curve.png")
    timer.mark("total")
    timer.dump(out)
    _report("train", [("output_dir", out), ("parameters", n_params), ("epochs", cfg.train.epochs),
                      ("train_loss", f"{history[-1]['train_loss']:.4f}"),
                      ("train_acc", f"{history[-1]['train_acc']:.4f}"),
                      ("test_loss", f"{test_loss:.4f}"), ("test_acc", f"{test_acc:.4f}")])
    return EXIT_OK


def cmd_oracle(args) -> int:
    cfg = _resolve(args, "oracle.epochs")
    spec = cfg.space_spec()
    try:
        cells = enumerate_cells(spec, "normal", cap=cfg.oracle.cap)
    except EnumerationTooLarge as e:
        raise ConfigError("oracle.cap", str(e)) from e
    highlight = _read_cell(args.highlight) if args.highlight else None
    out = _outdir(cfg)
    timer = _Timer()
    _write(out / "resolved_config.yaml", cfg.to_yaml())
    split = cfg.make_split()

    def progress(entry):
        logger.info("cell %d/%d  val_loss %.4f", entry.cell_id + 1, len(cells), entry.val_loss)

    result = rank_all(cells, split, cfg.oracle_budget(), cfg.plan(), seed=cfg.seed,
                      workers=cfg.oracle.workers, progress=progress)
    timer.mark("oracle")
    _write(out / "ranking.csv", result.to_csv())
    pairs = [("output_dir", out), ("cells", len(result)),
             ("best", f"{result.entries[0].cell_id} val_loss {result.entries[0].val_loss:.4f}"),
             ("worst", f"{result.entries[-1].cell_id} val_loss {result.entries[-1].val_loss:.4f}")]
    ranks = []
    if highlight is not None:
        rank = result.rank_of(highlight)
        ranks.append(rank)
        pairs.append(("highlight_rank", f"{rank}/{len(result)}"))
        pairs.append(("highlight_top_quartile", result.in_top_fraction(highlight, 0.25)))
    if cfg.figures:
        from . import plotting

        plotting.plot_ranking(result.entries, out / "figures" / "ranking.png", highlight=ranks)
    timer.mark("total")
    timer.dump(out)
    _report("oracle", pairs)
    return EXIT_OK


def cmd_validate(args) -> int:
    from .checks import run_validation

    overrides = {}
    if args.tau is not None:
        overrides["validate.tau"] = args.tau
    args.set = list(args.set or []) + [f"{k}={v}" for k, v in overrides.items()]
    cfg = _resolve(args, require_file=False)
    v = cfg.validate
    results = run_validation(seed=cfg.seed, tau=v.tau, gradcheck_seeds=v.gradcheck_seeds,
                             marginal_draws=v.marginal_draws)
    rows = [dict(check=r.name, passed=r.passed, detail=r.detail) for r in results]
    if args.output_dir:
        out = _outdir(cfg)
        _write(out / "resolved_config.yaml", cfg.to_yaml())
        _write(out / "validation.csv", _csv(rows, ["check", "passed", "detail"]))
    _report("validate", [(r.name, ("PASS " if r.passed else "FAIL ") + r.detail) for r in results])
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_export_dot(args) -> int:
    cell = _read_cell(args.cell)
    text = export_cell(cell, "dot")
    if args.output:
        _write(Path(args.output), text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def _common(p: argparse.ArgumentParser, epochs: bool = True) -> None:
    p.add_argument("--config", "-c", help="YAML run config")
    p.add_argument("--seed", type=int, help="top-level seed (overrides the config)")
    p.add_argument("--output-dir", "-o", help="output directory (overrides the config)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override any config field by dotted path, e.g. search.a_lr=1e-3")
    if epochs:
        p.add_argument("--epochs", type=int, help="epoch budget for this command")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gdas", description="Gumbel-softmax cell search at desk scale.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run the alternating W/A search")
    _common(p)
    p.add_argument("--frc", action="store_true", help="fix the reduction cell; search the normal cell only")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("derive", help="derive discrete cells from architecture logits")
    p.add_argument("arch_params", help="arch_params JSON written by search")
    p.add_argument("--T", type=int, help="edges kept per node (default: the value stored with the logits)")
    p.add_argument("--omega", help="comma-separated candidates considered for importance")
    p.add_argument("--exclude-zeroize", action="store_true")
    p.add_argument("--output-dir", "-o")
    p.set_defaults(func=cmd_derive)

    p = sub.add_parser("train", help="train a network built from a derived cell")
    p.add_argument("cell", help="normal cell JSON")
    p.add_argument("--reduction-cell", help="reduction cell JSON (default: the fixed reducer)")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("oracle", help="train and rank every cell of a tiny space")
    _common(p)
    p.add_argument("--workers", type=int, help="worker processes for ranking")
    p.add_argument("--highlight", help="cell JSON whose rank is reported")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("validate", help="run gradient, sampler and equivalence checks")
    _common(p, epochs=False)
    p.add_argument("--tau", type=float, help="temperature used by the relaxation check")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export-dot", help="render a cell JSON as Graphviz DOT")
    p.add_argument("cell")
    p.add_argument("--output", "-o")
    p.set_defaults(func=cmd_export_dot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NonFiniteLossError, RuntimeError, OSError, ValueError, ArithmeticError) as e:
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
