"""Smoke tests for the python module."""

import json
import math

import pytest

import kneedet


def test_iou_and_giou_basics():
    a = kneedet.Box(0, 0, 2, 2)
    b = kneedet.Box(1, 1, 3, 3)
    assert kneedet.iou(a, a) == pytest.approx(1.0)
    assert kneedet.iou(a, b) == pytest.approx(1.0 / 7.0)
    r = kneedet.giou(a, b)
    assert r.giou == pytest.approx(1.0 / 7.0 - 2.0 / 9.0)
    assert r.hull_area == pytest.approx(9.0)
    assert kneedet.giou(a, a).giou == pytest.approx(1.0)


def test_giou_gradient_is_zero_at_overlap():
    b = kneedet.Box(0, 0, 1, 1)
    assert kneedet.giou_gradient(b, b) == [0.0, 0.0, 0.0, 0.0]


def test_nms_suppresses_same_class_overlap():
    a = kneedet.Detection(kneedet.Box(0, 0, 10, 10), 0, 0.9, 1.0)
    b = kneedet.Detection(kneedet.Box(0, 0, 10, 8), 0, 0.7, 1.0)
    kept = kneedet.nms([a, b], 0.45)
    assert len(kept) == 1
    assert kept[0].score == pytest.approx(0.9)

    c = kneedet.Detection(kneedet.Box(0, 0, 10, 8), 1, 0.7, 1.0)
    assert len(kneedet.nms([a, c], 0.45)) == 2


def test_average_precision_and_f1():
    assert kneedet.average_precision([True], 1) == pytest.approx(1.0)
    assert kneedet.average_precision([False, True], 1) == pytest.approx(0.5)
    assert round(kneedet.f1_score(0.990, 0.998), 3) == 0.994


def test_class_schema():
    assert kneedet.class_names() == [
        "kneeApView",
        "kneeLatView",
        "tkaApView",
        "tkaLatView",
    ]


def test_end_to_end_on_a_tiny_corpus(tmp_path):
    index_csv = kneedet.synth_generate(6, 64, 11, str(tmp_path / "data"))

    img = kneedet.read_pgm(str(tmp_path / "data/images/img_00000.pgm"))
    assert img.shape == (64, 64)
    assert 0.0 <= img.min() <= img.max() <= 1.0

    folds = kneedet.kfold_split(index_csv, 2, 0)
    assert len(folds) == 6
    assert set(folds.values()) == {0, 1}

    cfg = tmp_path / "net.cfg"
    cfg.write_text(
        "[net]\nwidth=64\nheight=64\nchannels=1\n"
        "[convolutional]\nfilters=6\nsize=3\nstride=2\npad=1\nactivation=leaky\n"
        "[convolutional]\nfilters=27\nsize=3\nstride=2\npad=1\nactivation=linear\n"
        "[yolo]\nmask=0,1,2\nanchors=14,14, 18,18, 23,23\nclasses=4\n"
    )
    out = kneedet.train_toy(index_csv, str(cfg), str(tmp_path / "run"),
                            epochs=1, batch=4, lr=0.001, seed=3)
    assert (tmp_path / "run/model.weights").exists()

    dets = kneedet.detect(str(cfg), out["weights"],
                          str(tmp_path / "data/images/img_00000.pgm"),
                          conf=0.0, nms_iou=0.45)
    assert dets  # at conf 0 something always survives
    assert all(0.0 < d.score < 1.0 for d in dets)

    # replay ground truth as detections and verify a perfect report
    preds = tmp_path / "preds"
    preds.mkdir()
    for line in (tmp_path / "data/index.csv").read_text().splitlines()[1:]:
        image_path, _, _, label_path = line.split(",")
        stem = image_path.split("/")[-1].removesuffix(".pgm")
        rows = []
        for label in (tmp_path / "data" / label_path).read_text().splitlines():
            cls, cx, cy, w, h = label.split()
            box = kneedet.norm_to_abs(
                kneedet.NormBox(float(cx), float(cy), float(w), float(h)), 64, 64
            )
            rows.append(f"{cls} 0.9 {box.x1} {box.y1} {box.x2} {box.y2}")
        (preds / f"{stem}.txt").write_text("".join(r + "\n" for r in rows))

    report = json.loads(kneedet.evaluate_json(str(preds), index_csv, 0.5))
    assert report["all"]["map"] == pytest.approx(1.0)
    assert report["mean_matched_iou"] == pytest.approx(1.0)


def test_errors_surface_as_python_exceptions(tmp_path):
    with pytest.raises(ValueError):
        kneedet.iou(kneedet.Box(0, 0, math.nan, 1), kneedet.Box(0, 0, 1, 1))
    with pytest.raises(Exception):
        kneedet.detect("missing.cfg", "missing.weights", "missing.pgm")
