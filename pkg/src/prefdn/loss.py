"""Losses built from forced-choice selections.

A user is shown Q candidate renderings of a frame and picks exactly one.
Measuring each candidate's squared error against the network output gives
per-candidate errors e_q; the pick says the selected candidate's error
should be the smallest. Three variants turn that into a trainable loss:

* best-match: the selected candidate's error alone.
* forced-choice: hinge penalties for every violated "selected is best"
  constraint, max(e_selected - e_q, 0).
* hybrid: the sum of both (soft-margin flavored).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import MissingDataError
from .image import mean_squared_error


class LossVariant(str, Enum):
    BEST_MATCH = "best-match"
    FORCED_CHOICE = "forced-choice"
    HYBRID = "hybrid"

    @classmethod
    def parse(cls, name: str) -> "LossVariant":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown loss variant {name!r}; expected one of "
                f"{[v.value for v in cls]}"
            ) from None


@dataclass(frozen=True)
class ChoiceRecord:
    """One forced-choice decision: which of Q candidates was picked for a frame."""

    frame_id: str
    selected: int
    num_candidates: int = 4
    timestamp: float = 0.0
    user_id: str = ""

    def __post_init__(self):
        if not 0 <= self.selected < self.num_candidates:
            raise ValueError(
                f"selected index {self.selected} outside [0, {self.num_candidates})"
            )

    def to_json(self) -> str:
        return json.dumps(
            {
                "user_id": self.user_id,
                "frame_id": self.frame_id,
                "selected": self.selected,
                "q": self.num_candidates,
                "ts": self.timestamp,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "ChoiceRecord":
        obj = json.loads(line)
        return cls(
            frame_id=obj["frame_id"],
            selected=int(obj["selected"]),
            num_candidates=int(obj["q"]),
            timestamp=float(obj["ts"]),
            user_id=obj["user_id"],
        )


def write_choice_log(records, path) -> None:
    """Write choices as JSON lines, one decision per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")


def read_choice_log(path) -> list[ChoiceRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(ChoiceRecord.from_json(line))
    return records


def candidate_errors(network_output: np.ndarray, candidates) -> np.ndarray:
    """Squared error of the network output against each candidate."""
    return np.array(
        [mean_squared_error(network_output, cand) for cand in candidates],
        dtype=np.float64,
    )


def _check_index(errors: np.ndarray, selected: int) -> None:
    if not 0 <= selected < len(errors):
        raise IndexError(f"selected index {selected} outside [0, {len(errors)})")


def best_match_loss(errors, selected: int) -> float:
    """The selected candidate's error; the other candidates are ignored."""
    errors = np.asarray(errors, dtype=np.float64)
    _check_index(errors, selected)
    return float(errors[selected])


def forced_choice_loss(errors, selected: int) -> float:
    """Sum of hinges max(e_selected - e_q, 0) over the alternatives.

    Zero exactly when the selected candidate's error is a minimum, i.e.
    when every constraint implied by the choice holds. The q == selected
    term is identically zero and skipped.
    """
    errors = np.asarray(errors, dtype=np.float64)
    _check_index(errors, selected)
    gaps = errors[selected] - errors
    gaps[selected] = 0.0
    return float(np.maximum(gaps, 0.0).sum())


def hybrid_loss(errors, selected: int) -> float:
    """best_match_loss plus forced_choice_loss."""
    return best_match_loss(errors, selected) + forced_choice_loss(errors, selected)


def per_frame_loss(errors, selected: int, variant: LossVariant) -> float:
    if variant is LossVariant.BEST_MATCH:
        return best_match_loss(errors, selected)
    if variant is LossVariant.FORCED_CHOICE:
        return forced_choice_loss(errors, selected)
    return hybrid_loss(errors, selected)


def loss_gradient_weights(errors, selected: int, variant: LossVariant) -> np.ndarray:
    """Coefficients d(loss)/d(e_q), one per candidate.

    Each strictly-violated constraint (e_selected > e_q) contributes +1 at
    the selected slot and -1 at q; exact ties contribute nothing (hinge
    subgradient 0 at the kink). Best-match just weights the selected slot.
    """
    errors = np.asarray(errors, dtype=np.float64)
    _check_index(errors, selected)
    weights = np.zeros(len(errors), dtype=np.float64)
    if variant in (LossVariant.BEST_MATCH, LossVariant.HYBRID):
        weights[selected] += 1.0
    if variant in (LossVariant.FORCED_CHOICE, LossVariant.HYBRID):
        active = errors[selected] > errors
        active[selected] = False
        weights[selected] += float(active.sum())
        weights[active] -= 1.0
    return weights


@dataclass
class LossBreakdown:
    """Aggregate loss over a batch of choices, with diagnostics."""

    total: float = 0.0
    best_match_term: float = 0.0
    hinge_terms: list[float] = field(default_factory=list)
    violated_constraints: int = 0
    num_constraints: int = 0

    @property
    def hinge_total(self) -> float:
        return float(sum(self.hinge_terms))


def batch_loss(records, resolve, variant: LossVariant) -> LossBreakdown:
    """Sum the per-frame loss over recorded choices.

    `resolve` maps a frame_id to (network_output, candidates). Hinge terms
    are aggregated per candidate slot; violated_constraints counts the
    (frame, q) pairs where the selected candidate strictly loses.
    """
    breakdown = LossBreakdown()
    for rec in records:
        try:
            output, candidates = resolve(rec.frame_id)
        except KeyError:
            raise MissingDataError(f"cannot resolve frame {rec.frame_id!r}") from None
        errors = candidate_errors(output, candidates)
        if len(breakdown.hinge_terms) < len(errors):
            breakdown.hinge_terms.extend(
                [0.0] * (len(errors) - len(breakdown.hinge_terms))
            )
        gaps = errors[rec.selected] - errors
        gaps[rec.selected] = 0.0
        hinges = np.maximum(gaps, 0.0)
        for q, h in enumerate(hinges):
            breakdown.hinge_terms[q] += float(h)
        breakdown.best_match_term += float(errors[rec.selected])
        breakdown.violated_constraints += int(np.count_nonzero(gaps > 0.0))
        breakdown.num_constraints += len(errors) - 1
        breakdown.total += per_frame_loss(errors, rec.selected, variant)
    return breakdown
