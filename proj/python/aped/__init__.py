"""Pronunciation error detection with a text-conditioned Transformer."""

from ._aped import (
    Model,
    __version__,
    align,
    all_reject_f1,
    evaluate,
    generate_corpus,
    metrics,
    parse_phonemes,
    render_phonemes,
    theta_sweep,
    train,
)

__all__ = [
    "Model",
    "__version__",
    "align",
    "all_reject_f1",
    "evaluate",
    "generate_corpus",
    "metrics",
    "parse_phonemes",
    "render_phonemes",
    "theta_sweep",
    "train",
]
