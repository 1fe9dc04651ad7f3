"""``roam`` command line: run, ablate, sweep, domain-shift, report.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .config import Mode, RunConfig
from .data import DomainShift, generate, split_counts, with_shift
from .errors import CheckpointError, ConfigError, RoamError
from .experiment import PretrainCache, execute_run, manifest_text, prepare_data
from .metrics import Summary, evaluate
from .net import load_checkpoint, net_from_checkpoint

log = logging.getLogger("roam")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# One cell per row of the layer/hyperparameter ablation table; "base" is the
# reference configuration every other cell deviates from.
DEFAULT_GRID = """\
base:
kappa=0: kappa_set=INPUT
kappa=1: kappa_set=ENC1
kappa=2: kappa_set=ENC2
kappa=3: kappa_set=BOTTLENECK
kappa=4: kappa_set=DEC1
kappa=5: kappa_set=DEC2
kappa=L: kappa_set=LAST
kappa={0,2,L}: kappa_set={0,2,L}
kappa={1,2,L}: kappa_set={1,2,L}
kappa={0,1,5}: kappa_set={0,1,5}
kappa={PHI,0,1,L}: kappa_set={PHI,0,1,L}
kappa=All: kappa_set=ALL
alpha=0.25: alpha=0.25
alpha=2: alpha=2
beta=0: beta=0
sharpen+,concat-: concatenate=false
sharpen-,concat+: sharpen=false
sharpen-,concat-: sharpen=false; concatenate=false
"""
MAX_CELL_KEYS = 2


# ---- grid files -------------------------------------------------------------

def parse_grid(text: str) -> list[tuple[str, dict[str, str]]]:
    """``name: key=value; key=value`` per line; ``#`` starts a comment."""
    cells = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ":" not in line:
            raise ConfigError(f"grid line {lineno}: expected 'name: key=value; ...'")
        name, body = (s.strip() for s in line.split(":", 1))
        overrides = {}
        for part in filter(None, (p.strip() for p in body.split(";"))):
            if "=" not in part:
                raise ConfigError(f"grid line {lineno}: bad override {part!r}")
            k, v = (s.strip() for s in part.split("=", 1))
            overrides[k] = v
        if len(overrides) > MAX_CELL_KEYS:
            raise ConfigError(f"grid cell {name!r} overrides {len(overrides)} keys (max {MAX_CELL_KEYS})")
        cells.append((name, overrides))
    if len({n for n, _ in cells}) != len(cells):
        raise ConfigError("grid cell names must be unique")
    return cells


# ---- helpers ----------------------------------------------------------------

def _base_config(args) -> RunConfig:
    config = cfgmod.load(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None):
        changes["out_dir"] = args.out
    return config.override(**changes) if changes else config


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and np.isnan(x)) else f"{x:.4f}"


# ---- verbs ------------------------------------------------------------------

def cmd_run(args) -> int:
    config = _base_config(args)
    outcome = execute_run(config, config.out_dir)
    print(outcome.report.to_text(), end="")
    print(f"wrote {outcome.out_dir}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    base = _base_config(args)
    grid_text = Path(args.grid).read_text() if args.grid else DEFAULT_GRID
    cells = parse_grid(grid_text)
    configs = []
    for name, overrides in cells:
        # validate every cell before spending compute on any of them
        configs.append((name, overrides, cfgmod.from_pairs(overrides, base)))
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "grid.txt").write_text(grid_text)
    (out / "manifest.txt").write_text(manifest_text(base, verb="ablate", cells=len(cells)))
    cache = PretrainCache()
    splits = prepare_data(base)
    rows = []
    for i, (name, overrides, cfg) in enumerate(configs):
        cell_dir = out / "cells" / f"{i:02d}"
        cfg = cfg.override(out_dir=str(cell_dir))
        label = "; ".join(f"{k}={v}" for k, v in overrides.items())
        try:
            data_same = cfg.data == base.data and cfg.data_seed == base.data_seed
            res = execute_run(cfg, cell_dir, cache, splits=splits if data_same else None)
            rows.append([name, label, "ok", res.val_dice, res.test_dice])
        except Exception as e:  # a failing cell must not stop the grid
            log.exception("cell %s failed", name)
            code = getattr(e, "code", type(e).__name__)
            rows.append([name, label, f"failed: {code}: {e}".replace("\n", " "), None, None])
    rows.sort(key=lambda r: np.inf if r[3] is None else -r[3])
    _write_csv(out / "ablation.csv", ["cell", "overrides", "status", "val_dice", "test_dice"],
               [[r[0], r[1], r[2], "" if r[3] is None else repr(r[3]), "" if r[4] is None else repr(r[4])]
                for r in rows])
    text = [f"{'Cell':<22}{'Overrides':<34}{'Validation':>11}{'Testing':>10}  Status"]
    text += [f"{r[0]:<22}{r[1]:<34}{_fmt(r[3]):>11}{_fmt(r[4]):>10}  {r[2]}" for r in rows]
    (out / "ablation.txt").write_text("\n".join(text) + "\n")
    print("\n".join(text))
    return EXIT_OK if all(r[2] == "ok" for r in rows) else EXIT_RUNTIME


def cmd_sweep(args) -> int:
    base = _base_config(args)
    key = {"LABELED": "n_labeled", "UNLABELED": "n_unlabeled"}[args.axis.upper()]
    sizes = [int(s) for s in args.sizes.split(",")]
    models = [Mode(m.strip().upper()) for m in args.models.split(",")]
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.txt").write_text(manifest_text(
        base, verb="sweep", axis=args.axis.upper(), sizes=args.sizes, models=args.models, seeds=args.seeds))
    per_run, curve = [], []
    for size in sizes:
        scores = {m: [] for m in models}
        for s in range(args.seeds):
            cfg = base.override(seed=base.seed + s, **{f"data__{key}": size})
            splits, cache = prepare_data(cfg), PretrainCache()
            for m in models:
                res = execute_run(cfg.override(mode=m), None, cache, splits=splits, distances=False)
                scores[m].append(res.test_dice)
                per_run.append([args.axis.upper(), size, str(m), cfg.seed, repr(res.val_dice), repr(res.test_dice)])
        for m in models:
            summ = Summary.of(scores[m])
            curve.append([args.axis.upper(), size, str(m), repr(summ.mean), repr(summ.std), summ.n])
    _write_csv(out / "runs.csv", ["axis", "size", "model", "seed", "val_dice", "test_dice"], per_run)
    _write_csv(out / "curve.csv", ["axis", "size", "model", "mean_test_dice", "std_test_dice", "n_seeds"], curve)
    for row in curve:
        print(f"{row[0]:<10}{row[1]:>6}  {row[2]:<22}{float(row[3]):.4f} ± {float(row[4]):.4f}")
    return EXIT_OK


def _parse_shift(text: str) -> DomainShift:
    values = cfgmod.parse_pairs(text.replace(",", "\n"))
    unknown = set(values) - {"gamma", "contrast", "size_bias"}
    if unknown:
        raise ConfigError(f"unknown shift key {sorted(unknown)[0]!r}", key=sorted(unknown)[0])
    try:
        return DomainShift(**{k: float(v) for k, v in values.items()})
    except ValueError as e:
        raise ConfigError(f"bad shift value: {e}") from e


def shifted_test_sets(config: RunConfig, shift: DomainShift):
    """The in-domain test split and the same samples regenerated under ``shift``."""
    d = config.data
    if d.dir:
        raise ConfigError("domain shift needs the synthetic task (data.dir must be empty)", key="data.dir")
    spec = d.task_spec()
    clean = split_counts(generate(spec, d.total, config.data_seed), d.n_labeled, d.n_unlabeled,
                         d.n_validation, d.n_test, seed=config.data_seed)
    shifted_spec = with_shift(spec, shift)
    shifted = split_counts(generate(shifted_spec, d.total, config.data_seed), d.n_labeled, d.n_unlabeled,
                           d.n_validation, d.n_test, seed=config.data_seed)
    return clean.test, shifted.test


def _checkpoint_path(p: str) -> Path:
    path = Path(p)
    return path / "model.pt" if path.is_dir() else path


def cmd_domain_shift(args) -> int:
    base = _base_config(args)
    shift = _parse_shift(args.shift)
    paths = [_checkpoint_path(p) for p in args.checkpoints]
    for p in paths:
        if not p.exists():
            raise CheckpointError(f"no checkpoint at {p}", code="MISSING_CHECKPOINT")
    clean, shifted = shifted_test_sets(base, shift)
    rows = []
    for p in paths:
        ckpt = load_checkpoint(p)
        net = net_from_checkpoint(ckpt, base.data.num_classes)
        name = ckpt.get("extra", {}).get("mode", p.parent.name)
        for domain, ds in (("in-domain", clean), ("shifted", shifted)):
            s = evaluate(net, ds, distances=False).summary()["dice"]
            rows.append([name, str(p), domain, repr(s.mean), repr(s.std), s.n])
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "domain_shift.csv", ["model", "checkpoint", "domain", "mean_dice", "std_dice", "n"], rows)
    (out / "manifest.txt").write_text(manifest_text(
        base, verb="domain-shift", shift=args.shift, checkpoints=",".join(str(p) for p in paths)))
    print(f"{'Model':<22}{'In-domain':>12}{'Shifted':>12}")
    for a, b in zip(rows[::2], rows[1::2]):
        print(f"{a[0]:<22}{float(a[3]):>12.4f}{float(b[3]):>12.4f}")
    return EXIT_OK


def cmd_report(args) -> int:
    """Merge the ``metrics.csv`` files of finished runs into one table."""
    rows = []
    for d in args.runs:
        path = Path(d) / "metrics.csv"
        if not path.exists():
            raise RoamError(f"{path} does not exist")
        with open(path) as fh:
            for r in csv.DictReader(fh):
                if r["metric"] == "dice":
                    rows.append((Path(d).name, r))
    header = f"{'Run':<20}{'Model':<24}{'Split':<12}{'Dice':>8}{'Median':>8}{'Std':>8}{'RI(%)':>8}"
    lines = [header]
    for run, r in rows:
        ri = f"{float(r['ri_percent']):.2f}" if r["ri_percent"] else ""
        lines.append(f"{run:<20}{r['model']:<24}{r['split']:<12}{float(r['mean']):>8.4f}"
                     f"{float(r['median']):>8.4f}{float(r['std']):>8.4f}{ri:>8}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# ---- entry point ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="roam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out_help="output directory (overrides out_dir)"):
        sp.add_argument("--config", help="key = value config file (defaults if omitted)")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--seed", type=int, help="override the run seed")

    sp = sub.add_parser("run", help="train and evaluate one configuration")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("ablate", help="run every cell of an ablation grid")
    common(sp)
    sp.add_argument("--grid", help="grid file; the built-in layer/hyperparameter grid if omitted")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("sweep", help="vary the labeled or unlabeled split size")
    common(sp)
    sp.add_argument("--axis", choices=["LABELED", "UNLABELED", "labeled", "unlabeled"], required=True)
    sp.add_argument("--sizes", required=True, help="comma-separated sizes")
    sp.add_argument("--models", default="LOWER_BOUND,SSL_ROAM")
    sp.add_argument("--seeds", type=int, default=3)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("domain-shift", help="evaluate checkpoints on a shifted test set")
    common(sp)
    sp.add_argument("--shift", required=True, help="e.g. gamma=1.6,contrast=0.6,size_bias=0.1")
    sp.add_argument("checkpoints", nargs="+", help="checkpoint files or run directories")
    sp.set_defaults(func=cmd_domain_shift)

    sp = sub.add_parser("report", help="merge metrics of finished runs")
    sp.add_argument("runs", nargs="+", help="run directories")
    sp.add_argument("--out", help="write the merged table here")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    torch.use_deterministic_algorithms(True, warn_only=True)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error [{e.code}]: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RoamError, OSError) as e:
        print(f"error [{getattr(e, 'code', type(e).__name__)}]: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
