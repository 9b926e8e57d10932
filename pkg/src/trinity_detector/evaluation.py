"""Perturbation-grid evaluation and report emission.

Reports mirror the comparison-table shape: one row per dataset, columns
{Ori, JPEG80, JPEG50, Gauss1, Gauss2}, each cell an exact accuracy
n_correct / n_total.  Every evaluation also emits a per-sample prediction
log so any cell can be recounted, and reports embed the full config
snapshot so cells are reproducible from the report alone.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping

from .data import PerturbationSpec, Sample, perturb
from .errors import ValidationError

GRID_COLUMNS = ("Ori", "JPEG80", "JPEG50", "Gauss1", "Gauss2")

_GRID_SPECS: dict[str, PerturbationSpec] = {
    "Ori": PerturbationSpec("none"),
    "JPEG80": PerturbationSpec("jpeg", 80),
    "JPEG50": PerturbationSpec("jpeg", 50),
    "Gauss1": PerturbationSpec("gaussian_blur", 1.0),
    "Gauss2": PerturbationSpec("gaussian_blur", 2.0),
}


def default_grid(columns: tuple[str, ...] = GRID_COLUMNS) -> dict[str, PerturbationSpec]:
    unknown = [c for c in columns if c not in _GRID_SPECS]
    if unknown:
        raise ValidationError(f"unknown grid columns {unknown}; choose from {GRID_COLUMNS}")
    return {c: _GRID_SPECS[c] for c in columns}


@dataclass(frozen=True)
class CellResult:
    n_correct: int
    n_total: int

    @property
    def acc(self) -> float:
        return self.n_correct / self.n_total


@dataclass
class EvalReport:
    """Accuracy table plus provenance.  ``row_field``/``col_field`` name the
    per-sample-record keys the rows and columns are grouped by: the
    perturbation grid uses (dataset, perturbation), the ablation table uses
    (config, dataset)."""

    rows: dict[str, dict[str, CellResult]]
    columns: tuple[str, ...]
    checkpoint: str
    config: dict
    timestamp: str
    row_field: str = "dataset"
    col_field: str = "perturbation"

    def to_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "row_field": self.row_field,
            "col_field": self.col_field,
            "rows": {
                tag: {
                    col: {
                        "acc": cell.acc,
                        "n_correct": cell.n_correct,
                        "n_total": cell.n_total,
                    }
                    for col, cell in cells.items()
                }
                for tag, cells in self.rows.items()
            },
            "checkpoint": self.checkpoint,
            "config": self.config,
            "timestamp": self.timestamp,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow([self.row_field, *self.columns])
        for tag, cells in self.rows.items():
            writer.writerow([tag, *(repr(cells[col].acc) for col in self.columns)])
        return buf.getvalue()


def report_timestamp() -> str:
    """UTC timestamp; honors SOURCE_DATE_EPOCH so reports can be made
    byte-for-byte reproducible."""
    env = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(env) if env else time.time()
    return datetime.fromtimestamp(t, tz=timezone.utc).isoformat()


PredictFn = Callable[..., object]  # (image, caption) -> object with .label


def evaluate_dataset(
    predict_fn: PredictFn,
    samples: list[Sample],
    grid: Mapping[str, PerturbationSpec],
    dataset_tag: str,
) -> tuple[dict[str, CellResult], list[dict]]:
    """Score one dataset over the perturbation grid.

    Returns the per-column cells plus the per-sample prediction log
    (one record per sample per grid cell)."""
    if not samples:
        raise ValidationError(f"dataset {dataset_tag!r} has no samples")
    cells: dict[str, CellResult] = {}
    records: list[dict] = []
    for col, spec in grid.items():
        n_correct = 0
        for i, sample in enumerate(samples):
            pred = predict_fn(perturb(sample.image, spec), sample.caption)
            truth = "fake" if sample.label == 1 else "real"
            correct = pred.label == truth
            n_correct += int(correct)
            records.append(
                {
                    "dataset": dataset_tag,
                    "perturbation": col,
                    "index": i,
                    "image_path": sample.path,
                    "label": truth,
                    "predicted": pred.label,
                    "score": float(getattr(pred, "score", float("nan"))),
                }
            )
        cells[col] = CellResult(n_correct, len(samples))
    return cells, records


def evaluate_grid(
    predict_fn: PredictFn,
    datasets: Mapping[str, list[Sample]],
    grid: Mapping[str, PerturbationSpec] | None = None,
    checkpoint_ref: str = "",
    config: dict | None = None,
) -> tuple[EvalReport, list[dict]]:
    grid = default_grid() if grid is None else grid
    rows: dict[str, dict[str, CellResult]] = {}
    records: list[dict] = []
    for tag, samples in datasets.items():
        cells, recs = evaluate_dataset(predict_fn, samples, grid, tag)
        rows[tag] = cells
        records.extend(recs)
    report = EvalReport(
        rows=rows,
        columns=tuple(grid.keys()),
        checkpoint=checkpoint_ref,
        config=config or {},
        timestamp=report_timestamp(),
    )
    return report, records


def recount(
    records: list[dict], row_field: str = "dataset", col_field: str = "perturbation"
) -> dict[str, dict[str, CellResult]]:
    """Rebuild every cell from the per-sample log; must equal the report."""
    tally: dict[str, dict[str, list[int]]] = {}
    for r in records:
        cell = tally.setdefault(r[row_field], {}).setdefault(r[col_field], [0, 0])
        cell[0] += int(r["predicted"] == r["label"])
        cell[1] += 1
    return {
        tag: {col: CellResult(c, n) for col, (c, n) in cols.items()}
        for tag, cols in tally.items()
    }


def write_report(report: EvalReport, records: list[dict], out_dir: str | os.PathLike) -> Path:
    """Emit report.json, report.csv and predictions.jsonl; verifies the
    recount invariant before writing."""
    if recount(records, report.row_field, report.col_field) != report.rows:
        raise ValidationError("per-sample log disagrees with the report cells")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "report.csv").write_text(report.to_csv(), encoding="utf-8")
    with open(out_dir / "predictions.jsonl", "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    return out_dir / "report.json"


# ---------------------------------------------------------------------------
# ablation harness


ABLATION_NAMES = ("full", "freq_ablated", "caption_ablated", "caption_generated")

_ABLATION_FLAGS: dict[str, dict[str, bool]] = {
    "full": {},
    "freq_ablated": {"disable_frequency": True},
    "caption_ablated": {"disable_caption": True},
    "caption_generated": {"caption_generated": True},
}


@dataclass(frozen=True)
class AblationPlan:
    """Ordered, unique configuration names, each mapping to ablation flag
    overrides on the base training config."""

    names: tuple[str, ...] = ABLATION_NAMES

    def __post_init__(self) -> None:
        if len(set(self.names)) != len(self.names):
            raise ValidationError(f"duplicate ablation names in {self.names}")
        unknown = [n for n in self.names if n not in _ABLATION_FLAGS]
        if unknown:
            raise ValidationError(f"unknown ablation names {unknown}; choose from {ABLATION_NAMES}")

    def flags(self, name: str) -> dict[str, bool]:
        return dict(_ABLATION_FLAGS[name])


def run_ablation(
    train_samples: list[Sample],
    eval_datasets: Mapping[str, list[Sample]],
    base: "fusion.TrainConfig",
    plan: AblationPlan | None = None,
) -> tuple[EvalReport, list[dict]]:
    """Train one detector per plan entry (shared seed, flags applied on top
    of the base config) and score each on every eval dataset, unperturbed.

    Returns a table with rows = config names and columns = dataset tags.
    """
    from . import fusion

    plan = plan or AblationPlan()
    ori = default_grid(("Ori",))
    rows: dict[str, dict[str, CellResult]] = {}
    records: list[dict] = []
    for name in plan.names:
        model_cfg = dataclasses.replace(base.model, **plan.flags(name))
        cfg = dataclasses.replace(base, model=model_cfg)
        result = fusion.train(train_samples, cfg)
        cells: dict[str, CellResult] = {}
        for tag, samples in eval_datasets.items():
            cell, recs = evaluate_dataset(result.detector.predict, samples, ori, tag)
            cells[tag] = cell["Ori"]
            for r in recs:
                r["config"] = name
            records.extend(recs)
        rows[name] = cells
    report = EvalReport(
        rows=rows,
        columns=tuple(eval_datasets.keys()),
        checkpoint="",
        config=base.to_dict(),
        timestamp=report_timestamp(),
        row_field="config",
        col_field="dataset",
    )
    return report, records
