"""Synthetic visual-grounding pipeline: quantized detection, pseudo-label
quality metrics (faithfulness / robustness / confidence), min-max fusion and
selective retraining, on a procedurally generated grounding benchmark."""

from ._core import (
    Box,
    Model,
    QuantizedBox,
    Sample,
    TrainConfig,
    confidence,
    config_text,
    dequantize,
    fuse,
    generate_dataset,
    giou,
    giou_loss,
    iou,
    l1_loss,
    load_dataset,
    minmax_normalize,
    parse_config,
    quantize,
    run_pipeline,
    save_dataset,
    to_corners,
    vocab_words,
    __version__,
)

__all__ = [
    "Box",
    "Model",
    "QuantizedBox",
    "Sample",
    "TrainConfig",
    "confidence",
    "config_text",
    "dequantize",
    "fuse",
    "generate_dataset",
    "giou",
    "giou_loss",
    "iou",
    "l1_loss",
    "load_dataset",
    "minmax_normalize",
    "parse_config",
    "quantize",
    "run_pipeline",
    "save_dataset",
    "to_corners",
    "vocab_words",
    "__version__",
]
