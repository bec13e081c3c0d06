import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from percept_embed.evaluation import (
    MODEL_KINDS, ExperimentRecord, IncompleteRecordsError, build_recon_table, build_table, classification_accuracy,
    emit_tables, positioning_error, read_table_csv, relative_recon_score, select_and_test, select_best,
    write_reconstruction_grid,
)
from percept_embed.predictors import TrainedPredictor, enumerate_mlp_grid


def test_positioning_examples():
    assert positioning_error([(1, 2)], [(1, 2)]) == 0.0
    assert positioning_error([(3, 4)], [(0, 0)]) == 5.0
    assert positioning_error([(1, 0), (0, 3)], [(0, 0), (0, 0)]) == 2.0


def test_accuracy_examples():
    assert classification_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert classification_accuracy([1, 2], [0, 0]) == 0.0
    assert classification_accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75


@pytest.mark.parametrize("fn", [positioning_error, classification_accuracy])
def test_metrics_reject_bad_input(fn):
    with pytest.raises(ValueError):
        fn([], [])
    with pytest.raises(ValueError):
        fn([(0, 0), (1, 1)] if fn is positioning_error else [0, 1], [(0, 0)] if fn is positioning_error else [0])


def test_recon_score_examples():
    s = relative_recon_score({"AE": 2.0, "VAE": 4.0, "P.AE": 2.5})
    assert s["AE"] == 100.0 and s["VAE"] == 50.0 and s["P.AE"] == 80.0
    with pytest.raises(ValueError):
        relative_recon_score({"AE": 0.0})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-3, 1e3), min_size=4, max_size=4, unique=True))
def test_recon_score_single_hundred(errors):
    s = relative_recon_score(dict(zip(MODEL_KINDS, errors)))
    assert sum(v == 100.0 for v in s.values()) == 1
    assert all(0 < v <= 100 for v in s.values())


def probe(index, val_loss, failed=False):
    cfg = enumerate_mlp_grid()[index]
    tp = TrainedPredictor.from_linear(np.eye(2, 32), np.zeros(2))
    tp.config, tp.val_loss, tp.failed, tp.grid_index = cfg, val_loss, failed, index
    return tp


def test_select_best_tie_break_and_failures():
    cands = [probe(i, 1.0) for i in range(36)]
    cands[5].val_loss = cands[3].val_loss = 0.5
    cands[1].val_loss, cands[1].failed = 0.1, True
    assert select_best(cands).grid_index == 3


def test_select_best_is_argmin():
    rng = np.random.default_rng(0)
    cands = [probe(i, float(v)) for i, v in enumerate(rng.random(36))]
    assert select_best(cands).grid_index == int(np.argmin([c.val_loss for c in cands]))


def test_select_and_test_names_missing_cells():
    cands = [probe(i, 1.0) for i in range(36) if i != 4]
    with pytest.raises(IncompleteRecordsError, match=enumerate_mlp_grid()[4].name.replace("[", r"\[")):
        select_and_test(cands, np.zeros((1, 32)), np.zeros((1, 2)))


def record(ds="lunarlander", z=32, kind="AE", pk="mlp", metric=1.0, l1=1.0):
    return ExperimentRecord(ds, z, kind, pk, {}, metric, l1, {}, {"train": 0}, "raw01")


def test_record_validation():
    with pytest.raises(ValueError):
        record(kind="GAN")
    with pytest.raises(ValueError):
        record(metric=-1)
    with pytest.raises(ValueError):
        record(ds="svhn", metric=1.5)
    r = record()
    r.val_loss = 0.25
    assert ExperimentRecord.from_dict(json.loads(r.to_json())) == r


def full_records(zs=(32, 64)):
    recs = []
    for z in zs:
        for i, k in enumerate(MODEL_KINDS):
            for pk in ("mlp", "linear"):
                recs.append(record(z=z, kind=k, pk=pk, metric=float(z) / 10 + i, l1=1.0 + i + z / 1000))
    return recs


def test_build_table_scheme():
    rows = build_table(full_records(), "lunarlander", "mlp")
    assert [r[0] for r in rows] == ["32", "64", "Any"]
    assert all(set(v) == set(MODEL_KINDS) for _, v in rows)
    assert rows[-1][1]["AE"] == 3.2


def test_build_table_averages_seeds_and_reports_missing():
    recs = full_records((32,)) + [record(kind="AE", metric=4.2)]
    rows = build_table(recs, "lunarlander", "mlp")
    assert rows[0][1]["AE"] == pytest.approx((3.2 + 4.2) / 2)
    with pytest.raises(IncompleteRecordsError, match="z=32/VAE"):
        build_table([record()], "lunarlander", "mlp")


def test_recon_table_uses_best_l1_per_kind():
    rows = build_recon_table(full_records())
    assert rows[0][0] == "LunarLander"
    assert rows[0][1]["AE"] == 100.0
    assert rows[0][1]["VAE"] == pytest.approx(100 * 1.032 / 2.032)


def test_emit_tables_round_trip(tmp_path):
    written = emit_tables(full_records(), tmp_path)
    names = sorted(p.name for p in written)
    assert names == ["table2_lunarlander_mlp.csv", "table5_lunarlander_linear.csv",
                     "table8_reconstruction.csv", "tables.txt"]
    back = read_table_csv(tmp_path / "table2_lunarlander_mlp.csv")
    assert back == build_table(full_records(), "lunarlander", "mlp")
    header = (tmp_path / "table2_lunarlander_mlp.csv").read_text().splitlines()[0]
    assert header == "z size,AE,VAE,P.AE,P.VAE"


def test_reconstruction_grid_png(tmp_path):
    from PIL import Image

    rows = [[np.zeros((3, 8, 8)), np.ones((3, 8, 8))]]
    path = write_reconstruction_grid(rows, tmp_path / "g.png")
    img = np.asarray(Image.open(path))
    assert img.shape == (12, 22, 3)
    assert img[2, 2].tolist() == [0, 0, 0] and img[2, 12].tolist() == [255, 255, 255]
