"""Server-side aggregation rules over full client weight vectors.

Each rule maps a non-empty list of `ClientUpdate`s with equal-length params
to a single parameter vector.  Sample counts weight plain federated
averaging only; every robust rule treats clients uniformly.  Duplicated
update vectors are legal and count with multiplicity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Set, Tuple

import numpy as np

AGGREGATOR_KINDS = (
    "fedavg",
    "coord_median",
    "trimmed_mean",
    "geometric_median",
    "multi_krum",
    "nnm_krum",
)


@dataclass
class ClientUpdate:
    client_id: int
    params: np.ndarray  # reconstructed full weights, (d,)
    sample_count: int

    def __post_init__(self) -> None:
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.ndim != 1:
            raise ValueError("params must be a flat vector")
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass
class AggregatorConfig:
    kind: str = "fedavg"
    beta: float = 0.1  # assumed compromised fraction for trimming / scoring
    weiszfeld_tol: float = 1e-9
    weiszfeld_max_iter: int = 1000

    def __post_init__(self) -> None:
        if self.kind not in AGGREGATOR_KINDS:
            raise ValueError(f"unknown aggregator {self.kind!r}")
        if not 0.0 <= self.beta < 0.5:
            raise ValueError("beta must be in [0, 0.5)")
        if self.weiszfeld_tol <= 0.0 or self.weiszfeld_max_iter < 1:
            raise ValueError("bad Weiszfeld settings")


def _stack(updates: Sequence[ClientUpdate]) -> np.ndarray:
    if not updates:
        raise ValueError("no updates to aggregate")
    if len({u.params.shape[0] for u in updates}) != 1:
        raise ValueError("updates have mixed dimensions")
    return np.stack([u.params for u in updates])


def fedavg(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """Sample-count-weighted mean: sum(|D_i| * w_i) / sum(|D_i|)."""
    mat = _stack(updates)
    weights = np.array([u.sample_count for u in updates], dtype=np.float64)
    return (weights[:, None] * mat).sum(axis=0) / weights.sum()


def coord_median(updates: Sequence[ClientUpdate]) -> np.ndarray:
    """Coordinate-wise median; even counts take the midpoint of the middle two."""
    return np.median(_stack(updates), axis=0)


def trimmed_mean(updates: Sequence[ClientUpdate], beta: float) -> np.ndarray:
    """Coordinate-wise mean after dropping the k = floor(beta*n) extremes per side."""
    mat = _stack(updates)
    n = mat.shape[0]
    k = int(math.floor(beta * n))
    if n - 2 * k < 1:
        raise ValueError(f"trimming {k} per side leaves no updates from n={n}")
    return np.sort(mat, axis=0)[k : n - k].mean(axis=0)


def geometric_objective(point: np.ndarray, mat: np.ndarray) -> float:
    """Sum of Euclidean distances from `point` to each row of `mat`."""
    return float(np.linalg.norm(mat - point, axis=1).sum())


def geometric_median(
    updates: Sequence[ClientUpdate],
    tol: float = 1e-9,
    max_iter: int = 1000,
) -> np.ndarray:
    """Weiszfeld fixed-point iteration for the Euclidean geometric median.

    Starts from the coordinate-wise mean and stops once successive iterates
    move less than `tol`.  An iterate landing on an input point (distance
    below 1e-12) is nudged by 1e-10 along every axis so the reciprocal
    weights stay finite.  The best point seen (including the start and the
    inputs themselves) is returned, so the result never scores worse than
    any input point.
    """
    mat = _stack(updates)
    x = mat.mean(axis=0)
    for _ in range(max_iter):
        dists = np.linalg.norm(mat - x, axis=1)
        if np.any(dists < 1e-12):
            x = x + 1e-10
            dists = np.linalg.norm(mat - x, axis=1)
        inv = 1.0 / dists
        x_next = (inv[:, None] * mat).sum(axis=0) / inv.sum()
        if np.linalg.norm(x_next - x) < tol:
            x = x_next
            break
        x = x_next
    candidates = [x, mat.mean(axis=0)] + [row for row in mat]
    scores = [geometric_objective(c, mat) for c in candidates]
    return candidates[int(np.argmin(scores))].copy()


def _krum_cap(n: int, beta: float) -> int:
    """Assumed compromised count M = ceil(beta * n)."""
    return int(math.ceil(beta * n))


def multi_krum_scores(updates: Sequence[ClientUpdate], beta: float) -> List[float]:
    """Per-update sum of squared distances to its n - M - 2 nearest peers."""
    mat = _stack(updates)
    n = mat.shape[0]
    m_cap = _krum_cap(n, beta)
    closest = n - m_cap - 2
    if closest < 1:
        raise ValueError(f"n={n}, beta={beta} leaves no peers to score against")
    diffs = mat[:, None, :] - mat[None, :, :]
    sq = (diffs * diffs).sum(axis=2)
    scores = []
    for i in range(n):
        others = np.delete(sq[i], i)
        scores.append(float(np.sort(others)[:closest].sum()))
    return scores


def multi_krum(
    updates: Sequence[ClientUpdate], beta: float
) -> Tuple[Set[int], np.ndarray]:
    """Keep the n - ceil(beta*n) lowest-scoring updates and average them.

    Score ties break toward the lower client id.  The average is unweighted:
    selection already encodes the trust judgement, so sample counts do not
    get a second vote.
    """
    scores = multi_krum_scores(updates, beta)
    n = len(updates)
    keep = n - _krum_cap(n, beta)
    order = sorted(range(n), key=lambda i: (scores[i], updates[i].client_id))
    chosen = order[:keep]
    selected_ids = {updates[i].client_id for i in chosen}
    mixed = np.stack([updates[i].params for i in chosen])
    return selected_ids, mixed.mean(axis=0)


def nnm_mix(updates: Sequence[ClientUpdate], beta: float) -> List[ClientUpdate]:
    """Replace each update by the mean of its n - M nearest updates (self included).

    Distance ties break toward the lower client id.  The mixed updates keep
    their original ids and sample counts.
    """
    mat = _stack(updates)
    n = mat.shape[0]
    m_cap = _krum_cap(n, beta)
    neighborhood = n - m_cap
    if neighborhood < 1:
        raise ValueError(f"n={n}, beta={beta} leaves an empty neighborhood")
    diffs = mat[:, None, :] - mat[None, :, :]
    sq = (diffs * diffs).sum(axis=2)
    mixed = []
    for i in range(n):
        order = sorted(range(n), key=lambda j: (sq[i][j], updates[j].client_id))
        sel = order[:neighborhood]
        mixed.append(
            ClientUpdate(updates[i].client_id, mat[sel].mean(axis=0), updates[i].sample_count)
        )
    return mixed


def nnm_krum(
    updates: Sequence[ClientUpdate], beta: float
) -> Tuple[Set[int], np.ndarray]:
    """Nearest-neighbor mixing followed by multi-krum on the mixed updates."""
    return multi_krum(nnm_mix(updates, beta), beta)


def aggregate(updates: Sequence[ClientUpdate], cfg: AggregatorConfig) -> np.ndarray:
    """Dispatch to the configured rule and return the new global vector."""
    if cfg.kind == "fedavg":
        return fedavg(updates)
    if cfg.kind == "coord_median":
        return coord_median(updates)
    if cfg.kind == "trimmed_mean":
        return trimmed_mean(updates, cfg.beta)
    if cfg.kind == "geometric_median":
        return geometric_median(updates, cfg.weiszfeld_tol, cfg.weiszfeld_max_iter)
    if cfg.kind == "multi_krum":
        return multi_krum(updates, cfg.beta)[1]
    if cfg.kind == "nnm_krum":
        return nnm_krum(updates, cfg.beta)[1]
    raise ValueError(f"unknown aggregator {cfg.kind!r}")
