"""Independent reference implementations for cross-checking the fast paths.

Everything here favors obviousness over speed: explicit Python loops,
exhaustive scans, finite differences.  The aggregation checks are also
reachable from the command line (`bfl oracle <rule>`) so the equivalence
evidence can be regenerated outside the test suite.
"""

from __future__ import annotations

import math
from typing import List, Sequence, Set, Tuple

import numpy as np

from . import nn


def matmul_triple_loop(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Schoolbook matrix product, one scalar multiply at a time."""
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for p in range(k):
                acc += a[i, p] * b[p, j]
            out[i, j] = acc
    return out


def central_difference_grads(
    model: nn.MlpModel, batch: np.ndarray, labels: np.ndarray, h: float = 1e-4
) -> np.ndarray:
    """Numerical gradient of the mean cross-entropy w.r.t. every parameter."""
    theta = nn.flatten_params(model)
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] += h
        up, _ = nn.softmax_cross_entropy(
            nn.forward(nn.unflatten_params(model, bumped), batch), labels
        )
        bumped[i] -= 2.0 * h
        down, _ = nn.softmax_cross_entropy(
            nn.forward(nn.unflatten_params(model, bumped), batch), labels
        )
        grad[i] = (up - down) / (2.0 * h)
    return grad


def constant_gradient_momentum_value(
    w0: float, g: float, lr: float, mu: float, steps: int
) -> float:
    """Closed form for repeated momentum steps with a constant gradient.

    With v_0 = 0 and no decay, v_k = g (1 - mu^k) / (1 - mu), so
    w_K = w0 - lr * g * sum_{k=1..K} (1 - mu^k) / (1 - mu).
    """
    total = sum((1.0 - mu**k) / (1.0 - mu) for k in range(1, steps + 1))
    return w0 - lr * g * total


def brute_force_multi_krum(
    vectors: Sequence[np.ndarray], ids: Sequence[int], beta: float
) -> Tuple[Set[int], np.ndarray]:
    """Literal transcription of the scoring rule, loops only."""
    n = len(vectors)
    m_cap = math.ceil(beta * n)
    closest = n - m_cap - 2
    assert closest >= 1
    scores = []
    for i in range(n):
        dists = []
        for j in range(n):
            if j == i:
                continue
            d = 0.0
            for x, y in zip(vectors[i], vectors[j]):
                d += (x - y) ** 2
            dists.append(d)
        dists.sort()
        scores.append(sum(dists[:closest]))
    ranked = sorted(range(n), key=lambda i: (scores[i], ids[i]))
    chosen = ranked[: n - m_cap]
    avg = np.zeros_like(vectors[0])
    for i in chosen:
        avg = avg + vectors[i]
    return {ids[i] for i in chosen}, avg / len(chosen)


def brute_force_nnm_mix(
    vectors: Sequence[np.ndarray], ids: Sequence[int], beta: float
) -> List[np.ndarray]:
    """Per-update nearest-neighbor means (self included), loops only."""
    n = len(vectors)
    keep = n - math.ceil(beta * n)
    assert keep >= 1
    mixed = []
    for i in range(n):
        dists = []
        for j in range(n):
            d = 0.0
            for x, y in zip(vectors[i], vectors[j]):
                d += (x - y) ** 2
            dists.append((d, ids[j], j))
        dists.sort()
        sel = [j for _, _, j in dists[:keep]]
        avg = np.zeros_like(vectors[0])
        for j in sel:
            avg = avg + vectors[j]
        mixed.append(avg / keep)
    return mixed


def sort_based_median(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Per-coordinate median via an explicit sort of Python floats."""
    n = len(vectors)
    dim = vectors[0].size
    out = np.zeros(dim)
    for d in range(dim):
        col = sorted(float(v[d]) for v in vectors)
        mid = n // 2
        out[d] = col[mid] if n % 2 else 0.5 * (col[mid - 1] + col[mid])
    return out


def sort_based_trimmed_mean(vectors: Sequence[np.ndarray], beta: float) -> np.ndarray:
    """Per-coordinate trimmed mean via an explicit sort-and-slice."""
    n = len(vectors)
    k = math.floor(beta * n)
    assert n - 2 * k >= 1
    dim = vectors[0].size
    out = np.zeros(dim)
    for d in range(dim):
        col = sorted(float(v[d]) for v in vectors)
        kept = col[k : n - k]
        out[d] = sum(kept) / len(kept)
    return out


def grid_search_geometric_median(
    points: np.ndarray, levels: int = 12, cells: int = 40
) -> Tuple[np.ndarray, float]:
    """Refined 2-D grid search for the minimum total Euclidean distance.

    Starts on the padded bounding box of the points and zooms in around the
    best grid point.  The zoom window spans four cells on each side: near a
    degenerate minimum the valley floor is a slanted cone, so the best
    sampled point can sit a few cells sideways of the true argmin, and a
    tighter window can zoom right past it.  The input points themselves are
    also evaluated, because the median of a spread-out triangle is exactly
    its middle vertex and no grid point hits a vertex exactly.
    """
    assert points.shape[1] == 2

    def objective(x, y):
        return float(np.hypot(points[:, 0] - x, points[:, 1] - y).sum())

    lo = points.min(axis=0) - 1.0
    hi = points.max(axis=0) + 1.0
    best_xy = (0.0, 0.0)
    best = np.inf
    for x, y in points:
        val = objective(x, y)
        if val < best:
            best = val
            best_xy = (x, y)
    for _ in range(levels):
        xs = np.linspace(lo[0], hi[0], cells + 1)
        ys = np.linspace(lo[1], hi[1], cells + 1)
        for x in xs:
            for y in ys:
                val = objective(x, y)
                if val < best:
                    best = val
                    best_xy = (x, y)
        step = np.array([xs[1] - xs[0], ys[1] - ys[0]])
        lo = np.array(best_xy) - 4.0 * step
        hi = np.array(best_xy) + 4.0 * step
    return np.array(best_xy), best


def exhaustive_min_wcss_split(values: Sequence[float]) -> Tuple[int, float]:
    """Try every split of the sorted values; return (split index, WCSS).

    Ties keep the smallest split, i.e. the larger upper cluster.
    """
    ordered = sorted(float(v) for v in values)
    n = len(ordered)
    assert n >= 2

    def ssd(chunk: List[float]) -> float:
        mean = sum(chunk) / len(chunk)
        return sum((v - mean) ** 2 for v in chunk)

    best_split, best_cost = 1, math.inf
    for split in range(1, n):
        cost = ssd(ordered[:split]) + ssd(ordered[split:])
        if cost < best_cost:
            best_cost = cost
            best_split = split
    return best_split, best_cost


def surrogate_loss_per_gamma(
    global_vector: np.ndarray,
    template: nn.MlpModel,
    estimate: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    gamma_grid: Sequence[float],
    n_sampled: int,
    n_malicious: int,
) -> List[float]:
    """Recompute the line-search objective per grid point from scratch.

    The simulated aggregate and the cross-entropy are both spelled out
    directly (log-sum-exp included) rather than routed through the attack
    code, so this doubles as a check of that path.
    """
    out = []
    for gamma in gamma_grid:
        mixed = (
            (n_sampled - n_malicious) * estimate + n_malicious * (-gamma * estimate)
        ) / n_sampled
        model = nn.unflatten_params(template, global_vector + mixed)
        logits = nn.forward(model, features)
        total = 0.0
        for row, label in zip(logits, labels):
            shifted = row - row.max()
            total += math.log(np.exp(shifted).sum()) - shifted[label]
        out.append(total / len(labels))
    return out
