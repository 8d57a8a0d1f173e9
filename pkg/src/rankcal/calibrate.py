"""Threshold calibration by fixed-sequence testing of FDR control.

The score threshold is selected on i.i.d. calibration queries by walking a
descending grid and testing, at each candidate, the null hypothesis that the
family's FDR exceeds the target ``alpha``. The test rejects when the upper
confidence bound on the mean false discovery proportion falls below
``alpha``. Because candidates are tested in a fixed predeclared order and
the walk stops at the first failure, no multiplicity correction is needed,
and the returned threshold controls FDR at level ``alpha`` except with
probability ``delta``.

The guarantee is agnostic to the set family: both the plain threshold family
and its diversity-pruned, size-capped variant are calibrated by the same
walk, with the pruning applied to every calibration point inside the loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .core import LabeledQuery, PairwiseScores, PredictionSet, item_scores, threshold_set
from .diversity import greedy_prune
from .risk import MRule, derive_m, fdp, get_bound

__all__ = [
    "CalibrationConfig",
    "TraceEntry",
    "CalibrationResult",
    "lambda_grid",
    "calibrate",
    "predict",
    "plain_family",
    "diverse_family",
]


@dataclass(frozen=True)
class CalibrationConfig:
    """Everything the calibration walk needs besides the data.

    ``family`` selects the set-valued rule under calibration: ``"plain"``
    thresholds item scores; ``"diverse"`` additionally prunes each set to at
    most ``max_items`` members, greedily keeping the most diverse remainder.
    """

    alpha: float
    delta: float
    d_lambda: float = 0.01
    m_rule: MRule = field(default_factory=lambda: MRule.fraction(0.2))
    bound: str = "hoeffding"
    family: str = "plain"
    max_items: Optional[int] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta}")
        if not 0.0 < self.d_lambda < 1.0:
            raise ValueError(f"d_lambda must be in (0, 1), got {self.d_lambda}")
        if self.family not in ("plain", "diverse"):
            raise ValueError(f"family must be 'plain' or 'diverse', got {self.family!r}")
        if self.family == "diverse":
            if self.max_items is None or int(self.max_items) < 1:
                raise ValueError("diverse family requires max_items >= 1")
            object.__setattr__(self, "max_items", int(self.max_items))
        elif self.max_items is not None:
            raise ValueError("max_items only applies to the diverse family")
        get_bound(self.bound)  # fail fast on unknown bounds


@dataclass(frozen=True)
class TraceEntry:
    """One grid step: threshold, mean FDP, its UCB, and the test outcome."""

    lam: float
    mean_fdp: float
    ucb: float
    rejected: bool


@dataclass(frozen=True)
class CalibrationResult:
    """Selected threshold plus the full audit trail of the walk.

    ``stopped_reason`` is ``"failed_to_reject"`` when the walk hit a grid
    point whose test failed (``lambda_hat`` is then the previous, larger
    threshold, or 1.0 if the very first test failed) and
    ``"exhausted_grid"`` when every candidate rejected (``lambda_hat`` is the
    smallest grid value).
    """

    lambda_hat: float
    trace: tuple[TraceEntry, ...]
    stopped_reason: str


def lambda_grid(d_lambda: float) -> np.ndarray:
    """Descending threshold candidates ``1 - t*d_lambda`` down to ``d_lambda``.

    Neither 0 nor 1 is ever tested; 1.0 is reserved as the never-rejected
    fallback. For the default step 0.01 this is 0.99, 0.98, ..., 0.01.
    """
    if not 0.0 < d_lambda < 1.0:
        raise ValueError(f"d_lambda must be in (0, 1), got {d_lambda}")
    steps = int(math.floor(1.0 / d_lambda - 1.0 + 1e-9))
    return 1.0 - d_lambda * np.arange(1, steps + 1)


def plain_family(query: LabeledQuery, lam: float) -> PredictionSet:
    """Threshold the query's item scores at ``lam``."""
    return threshold_set(item_scores(query.scores), lam)


def diverse_family(m_cap: int):
    """Set family that thresholds then prunes to at most ``m_cap`` diverse items."""

    def family(query: LabeledQuery, lam: float) -> PredictionSet:
        if query.embeddings is None:
            raise ValueError(f"query {query.query_id!r} has no embeddings")
        return greedy_prune(plain_family(query, lam), query.embeddings, m_cap)

    return family


def _query_loss_profile(query: LabeledQuery, config: CalibrationConfig):
    """Reduce one query to (ascending scores, FDP indexed by set size).

    The thresholded set depends on ``lam`` only through how many scores reach
    it, and score ties are all-in or all-out, so caching the FDP per distinct
    count reproduces the per-threshold evaluation exactly. For the diverse
    family the greedy pruning is re-run for every count above the cap --
    pruned sets are not nested, so no incremental shortcut is valid there.
    """
    m = derive_m(query.k, config.m_rule)
    s = item_scores(query.scores)
    order = np.argsort(-s, kind="stable")
    false_by_position = query.ranking.ranks[order] > m
    false_prefix = np.concatenate(([0], np.cumsum(false_by_position)))
    sizes = np.arange(query.k + 1)
    fdp_by_count = false_prefix / np.maximum(sizes, 1)
    if config.family == "diverse":
        cap = config.max_items
        for c in range(cap + 1, query.k + 1):
            members = PredictionSet((np.sort(order[:c]) + 1).tolist())
            pruned = greedy_prune(members, query.embeddings, cap)
            fdp_by_count[c] = fdp(pruned, query.ranking, m)
    return np.sort(s), fdp_by_count


def _loss_matrix(data: Sequence[LabeledQuery], config: CalibrationConfig, grid: np.ndarray):
    """Per-query FDP at every grid threshold, shape (len(data), len(grid))."""
    losses = np.empty((len(data), grid.size))
    for row, query in enumerate(data):
        scores_asc, fdp_by_count = _query_loss_profile(query, config)
        counts = query.k - np.searchsorted(scores_asc, grid, side="left")
        losses[row] = fdp_by_count[counts]
    return losses


def calibrate(data: Sequence[LabeledQuery], config: CalibrationConfig) -> CalibrationResult:
    """Select the smallest grid threshold whose FDR test still rejects.

    Walks the grid from the largest candidate downward. At each threshold the
    per-query false discovery proportions of the configured family feed the
    configured bound; the null "FDR > alpha" is rejected iff the bound falls
    below ``alpha``. The walk stops at the first failure and backtracks one
    step. Deterministic: identical data and config give an identical result.
    """
    if len(data) == 0:
        raise ValueError("calibration requires at least one query")
    if config.family == "diverse":
        for q in data:
            if q.embeddings is None:
                raise ValueError(
                    f"diverse family requires embeddings on every query; {q.query_id!r} has none"
                )
    grid = lambda_grid(config.d_lambda)
    bound_fn = get_bound(config.bound)
    losses = _loss_matrix(data, config, grid)

    trace: list[TraceEntry] = []
    last_rejected: Optional[float] = None
    for col, lam in enumerate(grid):
        col_losses = losses[:, col]
        ucb = bound_fn(col_losses, config.delta)
        rejected = ucb < config.alpha
        trace.append(TraceEntry(float(lam), float(col_losses.mean()), float(ucb), rejected))
        if not rejected:
            lambda_hat = last_rejected if last_rejected is not None else 1.0
            return CalibrationResult(lambda_hat, tuple(trace), "failed_to_reject")
        last_rejected = float(lam)
    if last_rejected is None:
        # Degenerate step sizes (> 0.5) can produce an empty grid; nothing was
        # tested, so fall back to the never-rejected threshold.
        return CalibrationResult(1.0, (), "failed_to_reject")
    return CalibrationResult(last_rejected, tuple(trace), "exhausted_grid")


def predict(
    query: Union[LabeledQuery, PairwiseScores],
    lambda_hat: float,
    config: CalibrationConfig,
    embeddings=None,
) -> PredictionSet:
    """Produce the calibrated set for a new query at the selected threshold.

    Accepts a full :class:`LabeledQuery` (embeddings taken from it) or a bare
    :class:`PairwiseScores` for unlabeled test points, with ``embeddings``
    passed separately when the diverse family is in use. The guarantee only
    transfers when ``lambda_hat`` came from a calibration run with this exact
    family and cap.
    """
    if isinstance(query, LabeledQuery):
        scores = query.scores
        if embeddings is None:
            embeddings = query.embeddings
    else:
        scores = query
    base = threshold_set(item_scores(scores), lambda_hat)
    if config.family == "plain":
        return base
    if embeddings is None:
        raise ValueError("diverse family requires embeddings")
    return greedy_prune(base, embeddings, config.max_items)
