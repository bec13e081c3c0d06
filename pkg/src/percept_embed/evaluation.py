"""Test metrics, probe selection and result tables.

Tables follow one scheme: rows are z-sizes plus an ``Any`` row holding
the best value of each column, columns are the four model kinds.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .predictors import TrainedPredictor, enumerate_mlp_grid, predict

MODEL_KINDS = ("AE", "VAE", "P.AE", "P.VAE")
PREDICTOR_KINDS = ("mlp", "linear")

# (dataset, predictor kind) -> table number, mirroring the published layout.
TABLE_NUMBERS = {
    ("lunarlander", "mlp"): 2, ("stl10", "mlp"): 3, ("svhn", "mlp"): 4,
    ("lunarlander", "linear"): 5, ("stl10", "linear"): 6, ("svhn", "linear"): 7,
}
RECON_TABLE_NUMBER = 8
DATASET_TITLES = {"lunarlander": "LunarLander", "stl10": "STL-10", "svhn": "SVHN"}
TASK_OF = {"lunarlander": "positioning", "stl10": "classification", "svhn": "classification"}


class IncompleteRecordsError(ValueError):
    pass


@dataclass
class ExperimentRecord:
    dataset: str
    z_size: int
    model_kind: str
    predictor_kind: str
    best_predictor: dict
    metric_value: float
    recon_l1: float
    timings: dict
    seeds: dict
    normalization: str
    val_loss: float = float("nan")
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.predictor_kind not in PREDICTOR_KINDS:
            raise ValueError(f"predictor_kind must be one of {PREDICTOR_KINDS}")
        if self.metric_value < 0 or (TASK_OF.get(self.dataset) == "classification" and self.metric_value > 1):
            raise ValueError(f"metric value {self.metric_value} out of range")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentRecord":
        return cls(**d)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def positioning_error(preds, truths) -> float:
    """Mean Euclidean distance in pixels."""
    p = np.asarray(preds, dtype=np.float64).reshape(-1, 2)
    t = np.asarray(truths, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0:
        raise ValueError("positioning_error needs at least one prediction")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {len(p)} predictions vs {len(t)} truths")
    return float(np.linalg.norm(p - t, axis=1).mean())


def classification_accuracy(pred_ids, true_ids) -> float:
    p, t = np.asarray(pred_ids).reshape(-1), np.asarray(true_ids).reshape(-1)
    if len(p) == 0:
        raise ValueError("classification_accuracy needs at least one prediction")
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {len(p)} vs {len(t)}")
    return float((p == t).mean())


def relative_recon_score(l1_errors: dict) -> dict:
    """Percent score per model: 100 * lowest error / own error."""
    if not l1_errors:
        raise ValueError("no errors given")
    for k, v in l1_errors.items():
        if not v > 0:
            raise ValueError(f"L1 error for {k} must be positive, got {v}")
    best = min(l1_errors.values())
    # best / v is exactly 1.0 for the best model, so it scores exactly 100
    return {k: 100.0 * (best / v) for k, v in l1_errors.items()}


# --------------------------------------------------------------------------
# Selection
# --------------------------------------------------------------------------


def select_best(candidates: list[TrainedPredictor]) -> TrainedPredictor:
    """Lowest validation loss; ties go to the lowest grid index. Failed runs never win."""
    usable = [c for c in candidates if not c.failed]
    if not usable:
        raise ValueError("every candidate predictor failed")
    return min(usable, key=lambda c: (c.val_loss, c.grid_index))


def select_and_test(candidates: list[TrainedPredictor], test_embeddings, test_labels) -> tuple[TrainedPredictor, float]:
    """Pick the best-validated probe and evaluate it once on the test part.

    MLP candidates must cover the full grid. Returns the chosen probe and
    its test metric (pixels for positioning, accuracy for classification).
    """
    if not candidates:
        raise ValueError("no candidates")
    if candidates[0].config.kind == "mlp":
        c0 = candidates[0].config
        want = {c.name for c in enumerate_mlp_grid(c0.input_dim, c0.output_dim)}
        have = {c.config.name for c in candidates}
        missing = sorted(want - have)
        if missing:
            raise IncompleteRecordsError(f"missing grid cells: {', '.join(missing)}")
    chosen = select_best(candidates)
    preds = predict(chosen, test_embeddings)
    if chosen.task == "positioning":
        return chosen, positioning_error(preds, test_labels)
    return chosen, classification_accuracy(preds, test_labels)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------


def _cell_values(records, dataset, predictor_kind):
    cells: dict[tuple[int, str], list[float]] = {}
    for r in records:
        if r.dataset == dataset and r.predictor_kind == predictor_kind:
            cells.setdefault((r.z_size, r.model_kind), []).append(r.metric_value)
    return cells


def build_table(records, dataset: str, predictor_kind: str, z_sizes=None) -> list[tuple[str, dict]]:
    """Rows ``(label, {model_kind: value})``; multiple seeds per cell are averaged."""
    cells = _cell_values(records, dataset, predictor_kind)
    if z_sizes is None:
        z_sizes = sorted({z for z, _ in cells})
    if not z_sizes:
        raise IncompleteRecordsError(f"no {predictor_kind} records for {dataset}")
    missing = [f"z={z}/{k}" for z in z_sizes for k in MODEL_KINDS if (z, k) not in cells]
    if missing:
        raise IncompleteRecordsError(f"{dataset} {predictor_kind} table is missing cells: {', '.join(missing)}")
    rows = [(str(z), {k: float(np.mean(cells[(z, k)])) for k in MODEL_KINDS}) for z in z_sizes]
    best = min if TASK_OF.get(dataset, "positioning") == "positioning" else max
    rows.append(("Any", {k: best(row[k] for _, row in rows) for k in MODEL_KINDS}))
    return rows


def build_recon_table(records, datasets=None) -> list[tuple[str, dict]]:
    """Per dataset, the lowest L1 of each model kind scored relative to the best kind."""
    datasets = datasets or sorted({r.dataset for r in records})
    rows = []
    for ds in datasets:
        best_l1 = {}
        for k in MODEL_KINDS:
            vals = [r.recon_l1 for r in records if r.dataset == ds and r.model_kind == k]
            if not vals:
                raise IncompleteRecordsError(f"{ds}: no reconstruction result for {k}")
            best_l1[k] = min(vals)
        rows.append((DATASET_TITLES.get(ds, ds), relative_recon_score(best_l1)))
    return rows


def table_to_csv(rows, first_column: str = "z size") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([first_column, *MODEL_KINDS])
    for label, vals in rows:
        w.writerow([label, *(repr(float(vals[k])) for k in MODEL_KINDS)])
    return buf.getvalue()


def read_table_csv(path: str | Path) -> list[tuple[str, dict]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return [(row[0], {k: float(v) for k, v in zip(header[1:], row[1:])}) for row in reader]


def render_table(rows, title: str, fmt: str, first_column: str = "z size") -> str:
    widths = [max(len(first_column), 11)] + [8] * len(MODEL_KINDS)
    lines = [title, f"{first_column:<{widths[0]}}" + "".join(f"{k:>{w}}" for k, w in zip(MODEL_KINDS, widths[1:]))]
    for label, vals in rows:
        lines.append(f"{label:<{widths[0]}}" + "".join(f"{fmt.format(vals[k]):>{w}}" for k, w in zip(MODEL_KINDS, widths[1:])))
    return "\n".join(lines) + "\n"


def _fmt_for(dataset: str) -> str:
    return "{:.2f}" if TASK_OF.get(dataset) == "positioning" else "{:.1%}"


def emit_tables(records, out_dir: str | Path, z_sizes: dict | None = None) -> list[Path]:
    """Write one CSV per (dataset, probe kind), the reconstruction CSV and ``tables.txt``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    datasets = sorted({r.dataset for r in records}, key=lambda d: list(DATASET_TITLES).index(d)
                      if d in DATASET_TITLES else 99)
    if not datasets:
        raise IncompleteRecordsError("no records")
    written, text = [], []
    for kind in PREDICTOR_KINDS:
        for ds in datasets:
            rows = build_table(records, ds, kind, (z_sizes or {}).get(ds))
            num = TABLE_NUMBERS.get((ds, kind), 0)
            path = out_dir / f"table{num}_{ds}_{kind}.csv"
            path.write_text(table_to_csv(rows))
            written.append(path)
            unit = "average test distance error (pixels)" if TASK_OF.get(ds) == "positioning" else "test accuracy"
            probe = "MLPs" if kind == "mlp" else "regressors"
            text.append(render_table(rows, f"Table {num}: {DATASET_TITLES.get(ds, ds)}, {unit}, {probe} "
                                           "with lowest validation loss", _fmt_for(ds)))
    rows = build_recon_table(records, datasets)
    path = out_dir / f"table{RECON_TABLE_NUMBER}_reconstruction.csv"
    path.write_text(table_to_csv(rows, "dataset"))
    written.append(path)
    text.append(render_table(rows, f"Table {RECON_TABLE_NUMBER}: reconstruction after decoder retraining, "
                                   "relative to lowest L1 error", "{:.0f}%", "dataset"))
    (out_dir / "tables.txt").write_text("\n".join(text))
    written.append(out_dir / "tables.txt")
    return written


def write_reconstruction_grid(rows, path: str | Path) -> Path:
    """Save a lossless PNG grid; ``rows`` is a list of lists of 3xHxW arrays in [0, 1]."""
    from PIL import Image

    arrays = [[np.clip(np.asarray(a, dtype=np.float64), 0, 1) for a in row] for row in rows]
    h, w = arrays[0][0].shape[1:]
    pad = 2
    ncols = max(len(r) for r in arrays)
    canvas = np.ones((len(arrays) * (h + pad) + pad, ncols * (w + pad) + pad, 3))
    for i, row in enumerate(arrays):
        for j, a in enumerate(row):
            y, x = pad + i * (h + pad), pad + j * (w + pad)
            canvas[y:y + h, x:x + w] = a.transpose(1, 2, 0)
    Image.fromarray((canvas * 255).round().astype(np.uint8)).save(path, format="PNG")
    return Path(path)
