"""Knee joint area detection and evaluation toolkit."""

from ._kneedet import (
    Box,
    Detection,
    GIoUResult,
    NormBox,
    __version__,
    abs_to_norm,
    average_precision,
    class_names,
    detect,
    evaluate_json,
    f1_score,
    filter_confidence,
    giou,
    giou_gradient,
    iou,
    kfold_split,
    nms,
    norm_to_abs,
    read_pgm,
    synth_generate,
    train_toy,
)

__all__ = [
    "Box",
    "Detection",
    "GIoUResult",
    "NormBox",
    "__version__",
    "abs_to_norm",
    "average_precision",
    "class_names",
    "detect",
    "evaluate_json",
    "f1_score",
    "filter_confidence",
    "giou",
    "giou_gradient",
    "iou",
    "kfold_split",
    "nms",
    "norm_to_abs",
    "read_pgm",
    "synth_generate",
    "train_toy",
]
