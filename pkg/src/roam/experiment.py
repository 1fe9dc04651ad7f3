"""Data preparation and single-run orchestration shared by the CLI and scripts."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from . import __version__
from .config import Mode, RunConfig, config_hash, dumps
from .data import generate, load_external, split_counts
from .metrics import EvalResult, MetricsReport, evaluate
from .net import net_from_checkpoint, save_checkpoint
from .trainer import final_checkpoint, pretrain, run_mode, save_record

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"


def prepare_data(config: RunConfig):
    """Generate (or load) the dataset described by ``config.data`` and split it."""
    d = config.data
    if d.dir:
        dataset = load_external(d.dir)
    else:
        dataset = generate(d.task_spec(), d.total, seed=config.data_seed)
    return split_counts(dataset, d.n_labeled, d.n_unlabeled, d.n_validation, d.n_test, seed=config.data_seed)


def code_version() -> str:
    """Package version plus a digest of the package sources."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def manifest_text(config: RunConfig, **extra) -> str:
    lines = [dumps(config).rstrip("\n"),
             f"manifest.config_hash = {config_hash(config)}",
             f"manifest.seed = {config.seed}",
             f"manifest.code_version = {code_version()}"]
    lines += [f"manifest.{k} = {v}" for k, v in extra.items()]
    return "\n".join(lines) + "\n"


def pretrain_key(config: RunConfig) -> str:
    """Digest of the fields the lower-bound model depends on."""
    relevant = replace(config, mode=Mode.LOWER_BOUND, kappa_set=RunConfig().kappa_set, T=1.0, alpha=1.0, beta=0.0,
                       sharpen=False, concatenate=True, mix_skips=False, per_sample_lambda=False, train_epochs=0,
                       out_dir="")
    return config_hash(relevant)


class PretrainCache:
    """Reuses lower-bound checkpoints across runs that would train identical ones."""

    def __init__(self):
        self._store: dict[str, dict] = {}

    def get(self, config: RunConfig, splits) -> dict | None:
        if config.mode is Mode.FULLY_SUP_ROAM:
            return None
        key = pretrain_key(config)
        if key not in self._store:
            self._store[key] = pretrain(config, splits.labeled, splits.validation)
        return self._store[key]


@dataclass
class RunOutcome:
    config: RunConfig
    validation: EvalResult
    test: EvalResult
    report: MetricsReport
    record: object
    out_dir: Path | None = None

    @property
    def val_dice(self) -> float:
        return self.validation.mean_dice

    @property
    def test_dice(self) -> float:
        return self.test.mean_dice


def execute_run(config: RunConfig, out_dir=None, cache: PretrainCache | None = None, splits=None,
                distances: bool = True) -> RunOutcome:
    """Train ``config.mode``, evaluate on validation and test, optionally persist everything.

    When ``out_dir`` is given it receives ``model.pt``, ``events.jsonl``,
    ``metrics.csv``, ``metrics.txt`` and ``manifest.txt``.
    """
    splits = splits if splits is not None else prepare_data(config)
    pretrained = cache.get(config, splits) if cache is not None else None
    net, record, pretrained = run_mode(config, splits, pretrained)
    report = MetricsReport()
    if pretrained is not None and config.mode is not Mode.LOWER_BOUND:
        lb = net_from_checkpoint(pretrained, config.data.num_classes)
        report.baseline = str(Mode.LOWER_BOUND)
        report.add(str(Mode.LOWER_BOUND), "validation", evaluate(lb, splits.validation, distances))
        report.add(str(Mode.LOWER_BOUND), "test", evaluate(lb, splits.test, distances))
    val = evaluate(net, splits.validation, distances)
    test = evaluate(net, splits.test, distances)
    report.add(str(config.mode), "validation", val)
    report.add(str(config.mode), "test", test)
    outcome = RunOutcome(config, val, test, report, record)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(final_checkpoint(net, record, config), out / "model.pt")
        save_record(record, out / "events.jsonl")
        (out / "metrics.csv").write_text(report.to_csv())
        (out / "metrics.txt").write_text(report.to_text())
        (out / MANIFEST).write_text(manifest_text(config))
        outcome.out_dir = out
    log.info("%s val %.4f test %.4f", config.mode, val.mean_dice, test.mean_dice)
    return outcome
