"""Few-shot MR-to-text generation with uncertainty-guided self-training."""

from fewshot_nlg.mr import (
    Intent,
    LabeledPair,
    MalformedMR,
    MeaningRepresentation,
    Origin,
    SlotValue,
    concrete_slot_values,
    parse_mr,
    render_mr,
)

__version__ = "0.1.0"

__all__ = [
    "Intent",
    "LabeledPair",
    "MalformedMR",
    "MeaningRepresentation",
    "Origin",
    "SlotValue",
    "concrete_slot_values",
    "parse_mr",
    "render_mr",
]
