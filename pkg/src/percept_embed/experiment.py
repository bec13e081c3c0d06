"""Resumable execution of an experiment matrix and report generation.

Each cell (dataset, z-size, model kind, seed) lives in its own directory
under ``<out>/cells`` named by a hash of the full cell config. A cell is
written to a temporary directory and renamed into place once complete,
so an interrupted run leaves no half-finished cell behind and a rerun
skips every completed one.
"""
from __future__ import annotations

import json
import logging
import shutil
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from .config import INPUT_SIZE, ExperimentMatrix, config_hash
from .datasets import DatasetBundle, ImagePart, generate_lander_collection, load_classification_dataset
from .evaluation import (MODEL_KINDS, TASK_OF, ExperimentRecord, build_table, emit_tables, select_and_test,
                         write_reconstruction_grid)
from .losses import LossSpec
from .models import build_model
from .perceptual import load_extractor, random_extractor
from .predictors import enumerate_mlp_grid, linear_config, save_predictor, train_predictor
from .training import (RunTimings, load_checkpoint, measure_overhead, reconstruction_l1, retrain_decoder,
                       save_checkpoint, train_autoencoder)

log = logging.getLogger(__name__)


class ReportError(RuntimeError):
    pass


@dataclass
class RunSummary:
    out_dir: Path
    completed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: list[str] = field(default_factory=list)


def cell_dirname(dataset: str, z: int, kind: str, seed: int, cfg: dict) -> str:
    return f"{dataset}-z{z}-{kind.replace('.', '')}-s{seed}-{config_hash(cfg)}"


def _subset(part: ImagePart, cap: int, seed: int, labelled_test: bool = False) -> ImagePart:
    if not cap or len(part) <= cap:
        return part
    rng = np.random.default_rng(seed)
    if labelled_test:
        keep = np.sort(rng.choice(len(part), cap, replace=False))
        return ImagePart(_Indexed(part.images, keep), part.labels[keep])
    n_tr = int(round(0.8 * cap))
    tr = np.sort(rng.choice(part.train_indices, min(n_tr, len(part.train_indices)), replace=False))
    va = np.sort(rng.choice(part.val_indices, min(cap - len(tr), len(part.val_indices)), replace=False))
    keep = np.concatenate([tr, va])
    labels = None if part.labels is None else part.labels[keep]
    return ImagePart(_Indexed(part.images, keep), labels, np.arange(len(tr)), np.arange(len(tr), len(keep)))


class _Indexed:
    def __init__(self, images, index):
        self.images, self.index = images, np.asarray(index)

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i):
        return self.images[int(self.index[i])]

    def stack(self, indices):
        idx = self.index[np.asarray(indices, dtype=np.int64)]
        if hasattr(self.images, "stack"):
            return self.images.stack(idx)
        return np.stack([self.images[int(j)] for j in idx])


@lru_cache(maxsize=4)
def _load_bundle(dataset: str, lander_json: str, seed: int, data_root: str, caps: tuple) -> DatasetBundle:
    if dataset == "lunarlander":
        from .datasets import SceneConfig

        cfg = json.loads(lander_json)
        cfg["sprite_size"] = tuple(cfg["sprite_size"])
        return generate_lander_collection(SceneConfig(**cfg), seed)
    bundle = load_classification_dataset(dataset, data_root or None, seed)
    a, p, t = caps
    return replace(bundle, autoencoder_part=_subset(bundle.autoencoder_part, a, seed),
                   predictor_part=_subset(bundle.predictor_part, p, seed + 1),
                   test_part=_subset(bundle.test_part, t, seed + 2, labelled_test=True))


def _extractor(matrix: ExperimentMatrix):
    if matrix.extractor_weights:
        return load_extractor(matrix.extractor_weights, matrix.normalization)
    return random_extractor(matrix.extractor_seed, matrix.normalization)


def run_cell(matrix: ExperimentMatrix, cell: tuple, out_dir: Path) -> str:
    """Train, probe, test and retrain one cell; returns its directory name."""
    torch.set_num_threads(1)
    # Saturated sigmoid outputs produce subnormal floats that slow CPU
    # kernels several-fold; flushing them changes nothing measurable.
    # numpy caches finfo on first use and warns if that happens while
    # flushing is on, so warm the cache first.
    np.finfo(np.float32), np.finfo(np.float64)
    torch.set_flush_denormal(True)
    try:
        return _run_cell(matrix, cell, out_dir)
    finally:
        torch.set_flush_denormal(False)


def _run_cell(matrix: ExperimentMatrix, cell: tuple, out_dir: Path) -> str:
    dataset, z, kind, seed = cell
    cfg = matrix.cell_config(*cell)
    name = cell_dirname(dataset, z, kind, seed, cfg)
    final = out_dir / "cells" / name
    if (final / "record_mlp.json").exists():
        return name
    tmp = out_dir / "cells" / f".tmp-{name}"
    shutil.rmtree(tmp, ignore_errors=True)
    tmp.mkdir(parents=True)
    (tmp / "cell.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))

    bundle = _load_bundle(dataset, json.dumps(asdict(matrix.lander), sort_keys=True), seed, matrix.data_root,
                          (matrix.max_autoencoder_images, matrix.max_predictor_images, matrix.max_test_images))
    variational = kind in ("VAE", "P.VAE")
    extractor = _extractor(matrix) if kind.startswith("P.") else None
    spec = LossSpec("perceptual" if extractor is not None else "pixelwise", reduction=matrix.reduction,
                    kl_weight=cfg["kl_weight"], extractor=extractor,
                    normalization=matrix.normalization if extractor is not None else None)
    train_cfg = replace(matrix.train, seed=seed)
    ext_hash = extractor.weights_hash() if extractor is not None else None

    model = build_model(z, variational, INPUT_SIZE[dataset], seed)
    model, history, timings = train_autoencoder(model, bundle.autoencoder_part, spec, train_cfg)
    if extractor is not None and extractor.weights_hash() != ext_hash:
        raise RuntimeError("perceptual extractor weights changed during training")
    history.to_csv(tmp / "history.csv")
    save_checkpoint(model, tmp / "checkpoint", {"loss_kind": spec.kind, "normalization": matrix.normalization,
                                                "model_kind": kind, "kl_weight": spec.kl_weight,
                                                "reduction": spec.reduction, "extractor": cfg["extractor"]})

    pred = bundle.predictor_part
    emb = model.embed(pred.stack())
    labels = pred.labels
    task = bundle.task_kind
    out_dim = 2 if task == "positioning" else bundle.num_classes
    split = (pred.train_indices, pred.val_indices)
    test = bundle.test_part
    test_emb = model.embed(test.stack())

    results = {}
    for pkind in ("mlp", "linear"):
        configs = enumerate_mlp_grid(z, out_dim) if pkind == "mlp" else [linear_config(z, out_dim)]
        candidates = []
        for i, pc in enumerate(configs):
            tp = train_predictor(pc, emb, labels, seed=seed, split=split, train_cfg=matrix.probe,
                                 num_classes=bundle.num_classes)
            tp.grid_index = i
            candidates.append(tp)
        chosen, metric = select_and_test(candidates, test_emb, test.labels)
        save_predictor(chosen, tmp / f"probe_{pkind}")
        results[pkind] = (chosen, metric, [(c.config.name, c.val_loss) for c in candidates])

    retrained, rhist = retrain_decoder(model, bundle.autoencoder_part, replace(matrix.retrain, seed=seed))
    rhist.to_csv(tmp / "retrain_history.csv")
    test_images = test.stack()
    recon = reconstruction_l1(retrained, test_images)
    with torch.no_grad():
        sample = torch.as_tensor(test_images[:8])
        before = model.decode(model.encode(sample, sample=False).mu).numpy()
        after = retrained.decode(retrained.encode(sample, sample=False).mu).numpy()
    write_reconstruction_grid([list(sample.numpy()), list(before), list(after)], tmp / "reconstructions.png")

    seeds = {"run": seed, "data": seed, "model_init": seed, "train": seed,
             "extractor": matrix.extractor_seed if extractor is not None and not matrix.extractor_weights else None}
    for pkind, (chosen, metric, grid) in results.items():
        rec = ExperimentRecord(
            dataset=dataset, z_size=z, model_kind=kind, predictor_kind=pkind,
            best_predictor=asdict(chosen.config), metric_value=metric, recon_l1=recon,
            timings=asdict(timings), seeds=seeds, normalization=matrix.normalization,
            val_loss=chosen.val_loss,
            extras={"task": task, "grid_val_losses": grid, "extractor": cfg["extractor"],
                    "kl_weight": spec.kl_weight, "reduction": spec.reduction, "probe_inputs": "mu",
                    "decoder_retrain": "reinitialised", "epochs": len(history.epochs),
                    "retrain_epochs": len(rhist.epochs), "cell_hash": config_hash(cfg)},
        )
        (tmp / f"record_{pkind}.json").write_text(rec.to_json())
    if final.exists():
        shutil.rmtree(final)
    tmp.rename(final)
    return name


def _run_cell_safe(args):
    matrix, cell, out_dir = args
    try:
        return cell, run_cell(matrix, cell, out_dir), None
    except Exception:  # noqa: BLE001 -- reported per cell, run continues
        return cell, None, traceback.format_exc()


def run_matrix(matrix: ExperimentMatrix, out_dir: str | Path, jobs: int = 1) -> RunSummary:
    out_dir = Path(out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    summary = RunSummary(out_dir)
    todo = []
    for cell in matrix.cells():
        name = cell_dirname(*cell, matrix.cell_config(*cell))
        if (out_dir / "cells" / name / "record_mlp.json").exists():
            summary.skipped.append(name)
        else:
            todo.append((matrix, cell, out_dir))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_cell_safe, todo))
    else:
        results = [_run_cell_safe(t) for t in todo]
    for cell, name, err in results:
        if err is None:
            summary.completed.append(name)
            log.info("completed %s", name)
        else:
            summary.failed.append("-".join(map(str, cell)))
            log.error("cell %s failed:\n%s", cell, err)
            (out_dir / "failures.log").open("a").write(f"{time.ctime()} {cell}\n{err}\n")
    return summary


# --------------------------------------------------------------------------
# Reporting
# --------------------------------------------------------------------------


def load_records(results_dir: str | Path) -> list[ExperimentRecord]:
    cells = Path(results_dir) / "cells"
    records = []
    for path in sorted(cells.glob("*/record_*.json")) if cells.exists() else []:
        records.append(ExperimentRecord.from_dict(json.loads(path.read_text())))
    return records


def _overheads(records) -> dict:
    by_key = {}
    for r in records:
        if r.predictor_kind == "mlp":
            by_key[(r.dataset, r.z_size, r.seeds.get("run"), r.model_kind)] = r
    out = {"AE->P.AE": [], "VAE->P.VAE": []}
    for (ds, z, seed, kind), r in sorted(by_key.items(), key=lambda kv: str(kv[0])):
        if kind not in ("AE", "VAE"):
            continue
        other = by_key.get((ds, z, seed, "P." + kind))
        if other is None:
            continue
        a, b = r.timings["seconds_per_epoch"], other.timings["seconds_per_epoch"]
        k = min(len(a), len(b))
        if k == 0:
            continue
        pct = measure_overhead(RunTimings("pixelwise", a[:k]), RunTimings("perceptual", b[:k]))
        out[f"{kind}->P.{kind}"].append(pct)
    return out


def _summary(records) -> dict:
    cells: dict = {}
    for r in records:
        key = f"{r.dataset}/{r.predictor_kind}/z{r.z_size}/{r.model_kind}"
        cells.setdefault(key, []).append(r.metric_value)
    overhead = _overheads(records)
    all_pct = [v for vs in overhead.values() for v in vs]
    return {
        "cells": {k: {"n": len(v), "mean": float(np.mean(v)), "std": float(np.std(v)), "values": v}
                  for k, v in sorted(cells.items())},
        "perceptual_overhead_percent": {
            k: {"n": len(v), "mean": float(np.mean(v)) if v else None, "std": float(np.std(v)) if v else None}
            for k, v in overhead.items()
        },
        "perceptual_overhead_percent_all": {"n": len(all_pct), "mean": float(np.mean(all_pct)) if all_pct else None,
                                            "std": float(np.std(all_pct)) if all_pct else None},
    }


def _plot(records, dataset: str, pkind: str, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = [r for r in build_table(records, dataset, pkind) if r[0] != "Any"]
    zs = [int(label) for label, _ in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for kind in MODEL_KINDS:
        ax.plot(zs, [vals[kind] for _, vals in rows], marker="o", label=kind)
    ax.set_xscale("log", base=2)
    ax.set_xticks(zs, [str(z) for z in zs])
    ax.set_xlabel("z size")
    ax.set_ylabel("test distance error (px)" if TASK_OF.get(dataset) == "positioning" else "test accuracy")
    ax.set_title(f"{dataset} ({pkind})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def report(results_dir: str | Path) -> list[Path]:
    """Regenerate tables, the cross-seed summary and plots from stored records."""
    results_dir = Path(results_dir)
    records = load_records(results_dir)
    if not records:
        raise ReportError(f"no completed cells under {results_dir}")
    tables = results_dir / "tables"
    written = emit_tables(records, tables)
    summary = _summary(records)
    (tables / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    written.append(tables / "summary.json")
    plots = results_dir / "plots"
    plots.mkdir(exist_ok=True)
    for ds in sorted({r.dataset for r in records}):
        for pkind in ("mlp", "linear"):
            p = plots / f"{ds}_{pkind}.png"
            _plot(records, ds, pkind, p)
            written.append(p)
    return written
