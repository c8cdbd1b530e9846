"""Simulated annotator answering triplet questions from ground-truth attributes.

Attribute distance is a weighted sum in which any shape difference outweighs
the largest possible color-plus-thickness difference, so the oracle exhibits
a strict shape bias. Labeled datasets (no attribute tuples) fall back to
label inequality with a normalized pixel distance as the within-label
tie-breaker. All randomness (tie coins, noise flips) is derived from the
config seed and the question's image identities, so answers are pure
functions of (question, records, config) and invariant to A/B slot order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .datasets import Attributes, ImageRecord
from .errors import InputError, UnknownIdError
from .selection import TripletQuery

_FAMILY_DIFFERENT = 2.0
_VARIANT_DIFFERENT = 1.0


@dataclass(frozen=True)
class OracleConfig:
    w_shape: float = 4.0
    w_color: float = 2.0
    w_thickness: float = 1.0
    p_flip: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if min(self.w_shape, self.w_color, self.w_thickness) < 0:
            raise InputError("weights must be nonnegative")
        if max(self.w_shape, self.w_color, self.w_thickness) <= 0:
            raise InputError("at least one weight must be positive")
        if not 0 <= self.p_flip < 0.5:
            raise InputError("p_flip must lie in [0, 0.5)")


def semantic_distance(a: Attributes, b: Attributes, config: OracleConfig) -> float:
    """Weighted attribute distance; shape term 0/1/2, color 0/1, thickness |di|/2."""
    if a is None or b is None:
        raise InputError("semantic distance needs complete attribute tuples")
    if a.variant == b.variant:
        shape = 0.0
    elif a.family == b.family:
        shape = _VARIANT_DIFFERENT
    else:
        shape = _FAMILY_DIFFERENT
    color = 0.0 if a.color == b.color else 1.0
    thickness = abs(a.thickness - b.thickness) / 2.0
    return config.w_shape * shape + config.w_color * color + config.w_thickness * thickness


def _label_distance(anchor: ImageRecord, other: ImageRecord) -> float:
    """Label mismatch dominates; normalized pixel distance breaks ties within a label."""
    mismatch = 0.0 if anchor.label == other.label else 1.0
    pa = anchor.pixels.astype(np.float64).ravel() / 255.0
    pb = other.pixels.astype(np.float64).ravel() / 255.0
    pixel = float(np.linalg.norm(pa - pb)) / np.sqrt(pa.size)
    return mismatch + 0.5 * pixel


def _derived_uniforms(config: OracleConfig, anchor_id: str, opt1: str, opt2: str) -> tuple[float, float]:
    """Two uniform [0,1) draws keyed on the unordered option pair."""
    lo, hi = sorted((opt1, opt2))
    digest = hashlib.sha256(f"{config.seed}:{anchor_id}:{lo}:{hi}".encode()).digest()
    coin = int.from_bytes(digest[:8], "big") / 2.0 ** 64
    flip = int.from_bytes(digest[8:16], "big") / 2.0 ** 64
    return coin, flip


def answer(question: TripletQuery, records: dict[str, ImageRecord], config: OracleConfig) -> str:
    """Choose the option closer to the anchor; "A" or "B"."""
    try:
        anchor = records[question.anchor_id]
        opt_a = records[question.option_a_id]
        opt_b = records[question.option_b_id]
    except KeyError as exc:
        raise UnknownIdError(f"question references unknown image {exc.args[0]!r}") from None
    if anchor.attributes is not None and opt_a.attributes is not None and opt_b.attributes is not None:
        d_a = semantic_distance(anchor.attributes, opt_a.attributes, config)
        d_b = semantic_distance(anchor.attributes, opt_b.attributes, config)
    elif anchor.label is not None:
        d_a = _label_distance(anchor, opt_a)
        d_b = _label_distance(anchor, opt_b)
    else:
        raise InputError("records carry neither attributes nor labels")
    coin, flip = _derived_uniforms(config, question.anchor_id, question.option_a_id, question.option_b_id)
    if d_a < d_b:
        choice = "A"
    elif d_b < d_a:
        choice = "B"
    else:
        lo = min(question.option_a_id, question.option_b_id)
        picked = lo if coin < 0.5 else max(question.option_a_id, question.option_b_id)
        choice = "A" if picked == question.option_a_id else "B"
    if config.p_flip > 0 and flip < config.p_flip:
        choice = "B" if choice == "A" else "A"
    return choice
