"""Server-side filtering of client updates via generated validation data.

The server never sees client data.  Each round it trains a small conditional
generator whose only teacher is the frozen broadcast model: the generator maps
(noise, class label) to an input the broadcast model classifies as that label,
optimized by cross-entropy through the frozen classifier (Its weights receive
no updates; gradients merely pass through to the generator).  Because the
generator chases whatever regions the classifier currently labels confidently,
the synthesized samples hug the decision boundaries and expose updates that
warp them.

Sampling the trained generator with a balanced label schedule yields the
synthetic validation set.  Every candidate update is rebuilt into a full model
and scored on that set; fixed-threshold, population-mean, or two-cluster
policies then decide which clients' updates survive to aggregation.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from typing import List, Sequence, Set, Tuple

import numpy as np

from . import nn
from .data import Dataset
from .rng import GEN_INIT, GEN_TRAIN, SYNTH, substream

FILTER_KINDS = ("fixed", "adaptive", "cluster")
METRIC_KINDS = ("accuracy", "loss")

GEN_HIDDEN = (64, 64)
GEN_BATCH = 64


@dataclass
class DefenseConfig:
    noise_dim: int = 16
    q: int = 64  # synthetic samples per class
    filter: str = "adaptive"
    tau: float = 0.5  # only read by the fixed policy
    metric: str = "accuracy"
    gen_lr: float = 0.01
    gen_max_iter: int = 2000
    early_stop_loss: float = 0.1
    early_stop_patience: int = 50
    warm_start: bool = False  # reuse last round's generator as the starting point

    def __post_init__(self) -> None:
        if self.noise_dim < 1 or self.q < 1:
            raise ValueError("noise_dim and q must be >= 1")
        if self.filter not in FILTER_KINDS:
            raise ValueError(f"unknown filter {self.filter!r}")
        if self.metric not in METRIC_KINDS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.gen_lr <= 0.0 or self.gen_max_iter < 1:
            raise ValueError("bad generator training settings")
        if self.early_stop_loss <= 0.0 or self.early_stop_patience < 1:
            raise ValueError("bad early stopping settings")


@dataclass
class GeneratorModel:
    """Conditional generator: (noise, onehot label) -> synthetic input.

    The backbone ends in tanh; `out_lo`/`out_hi` rescale its [-1, 1] range
    onto the classifier's input domain per feature.
    """

    backbone: nn.MlpModel
    noise_dim: int
    num_classes: int
    out_lo: np.ndarray
    out_hi: np.ndarray

    def __post_init__(self) -> None:
        self.out_lo = np.asarray(self.out_lo, dtype=np.float64)
        self.out_hi = np.asarray(self.out_hi, dtype=np.float64)
        if self.backbone.input_dim != self.noise_dim + self.num_classes:
            raise ValueError("backbone input must be noise_dim + num_classes")
        if self.out_lo.shape != self.out_hi.shape or np.any(self.out_hi <= self.out_lo):
            raise ValueError("need out_lo < out_hi per feature")

    def generate(self, noise: np.ndarray, labels: np.ndarray) -> np.ndarray:
        """Map a noise batch plus labels to inputs inside [out_lo, out_hi]."""
        raw = nn.forward(self.backbone, self._condition(noise, labels))
        return self._scale(raw)

    def _condition(self, noise: np.ndarray, labels: np.ndarray) -> np.ndarray:
        onehot = np.zeros((len(labels), self.num_classes))
        onehot[np.arange(len(labels)), labels] = 1.0
        return np.hstack([noise, onehot])

    def _scale(self, raw: np.ndarray) -> np.ndarray:
        half = 0.5 * (self.out_hi - self.out_lo)
        return self.out_lo + half * (raw + 1.0)


def new_generator(
    classifier: nn.MlpModel, cfg: DefenseConfig, rng: np.random.Generator,
    out_lo: np.ndarray, out_hi: np.ndarray,
) -> GeneratorModel:
    num_classes = classifier.output_dim
    dims = [cfg.noise_dim + num_classes, *GEN_HIDDEN, classifier.input_dim]
    backbone = nn.init_mlp(dims, "relu", rng, out_activation="tanh")
    return GeneratorModel(backbone, cfg.noise_dim, num_classes, out_lo, out_hi)


def train_generator(
    classifier: nn.MlpModel,
    cfg: DefenseConfig,
    master_seed: int,
    round_index: int,
    out_lo: np.ndarray,
    out_hi: np.ndarray,
    warm_model: GeneratorModel | None = None,
) -> Tuple[GeneratorModel, int]:
    """Fit the generator against the frozen classifier; return it and the
    number of iterations consumed.

    Each iteration draws a fresh batch of standard-normal noise and uniform
    labels, pushes it through generator then classifier, and takes one
    momentum SGD step on the generator alone.  Training stops once the mean
    cross-entropy over the last `early_stop_patience` iterations drops below
    `early_stop_loss`, or at `gen_max_iter`.  The iteration count is the
    per-round effort signal: a crisp, stable classifier is quick to imitate,
    a drifting one is not.
    """
    init_rng = substream(master_seed, GEN_INIT, round_index)
    train_rng = substream(master_seed, GEN_TRAIN, round_index)
    if warm_model is not None and cfg.warm_start:
        gen = GeneratorModel(
            nn.clone_model(warm_model.backbone),
            warm_model.noise_dim,
            warm_model.num_classes,
            out_lo,
            out_hi,
        )
    else:
        gen = new_generator(classifier, cfg, init_rng, out_lo, out_hi)
    num_classes = classifier.output_dim
    sgd = nn.SgdConfig(learning_rate=cfg.gen_lr, momentum=0.9, weight_decay=0.0)
    state = nn.init_momentum(gen.backbone)
    window: collections.deque = collections.deque(maxlen=cfg.early_stop_patience)
    half = 0.5 * (gen.out_hi - gen.out_lo)
    iterations = 0
    for iterations in range(1, cfg.gen_max_iter + 1):
        noise = train_rng.standard_normal((GEN_BATCH, cfg.noise_dim))
        labels = train_rng.integers(0, num_classes, size=GEN_BATCH)
        cond = gen._condition(noise, labels)
        raw, gen_caches = nn.forward_cached(gen.backbone, cond)
        synth = gen._scale(raw)
        logits, cls_caches = nn.forward_cached(classifier, synth)
        loss, dlogits = nn.softmax_cross_entropy(logits, labels)
        _, dsynth = nn.backprop_through(classifier, cls_caches, dlogits)
        gen_grads, _ = nn.backprop_through(gen.backbone, gen_caches, dsynth * half)
        gen.backbone = nn.sgd_step(gen.backbone, gen_grads, sgd, state)
        window.append(loss)
        if (
            len(window) == cfg.early_stop_patience
            and sum(window) / len(window) < cfg.early_stop_loss
        ):
            break
    return gen, iterations


def synthesize(
    gen: GeneratorModel, q: int, master_seed: int, round_index: int
) -> Dataset:
    """Sample a class-balanced probe set: exactly q samples per class.

    Labels are the conditioning labels, whatever the classifier would say
    about the generated points.  Rows are grouped by class, class 0 first.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    rng = substream(master_seed, SYNTH, round_index)
    feats = []
    labels = []
    for c in range(gen.num_classes):
        noise = rng.standard_normal((q, gen.noise_dim))
        ys = np.full(q, c, dtype=np.int64)
        feats.append(gen.generate(noise, ys))
        labels.append(ys)
    ds = Dataset(np.vstack(feats), np.concatenate(labels), gen.num_classes)
    counts = np.bincount(ds.labels, minlength=gen.num_classes)
    assert np.all(counts == q), "probe set must stay class-balanced"
    return ds


@dataclass
class ScoreEntry:
    client_id: int
    raw_metric: float  # accuracy or mean cross-entropy on the probe set
    score: float  # oriented so that higher always means more trustworthy
    accepted: bool = False


def eval_update(
    params: np.ndarray, template: nn.MlpModel, probe: Dataset, metric: str
) -> float:
    """Score one rebuilt candidate model on the synthetic probe set."""
    model = nn.unflatten_params(template, params)
    logits = nn.forward(model, probe.features)
    if metric == "accuracy":
        return float((logits.argmax(axis=1) == probe.labels).mean())
    if metric == "loss":
        loss, _ = nn.softmax_cross_entropy(logits, probe.labels)
        return loss
    raise ValueError(f"unknown metric {metric!r}")


def score_updates(
    candidates: Sequence[Tuple[int, np.ndarray]],
    template: nn.MlpModel,
    probe: Dataset,
    metric: str,
) -> List[ScoreEntry]:
    """Evaluate every (client_id, params) candidate, ordered by client id.

    Accuracy keeps its sign; loss is negated, so higher score is always
    better regardless of metric.
    """
    entries = []
    for client_id, params in sorted(candidates, key=lambda c: c[0]):
        raw = eval_update(params, template, probe, metric)
        score = raw if metric == "accuracy" else -raw
        entries.append(ScoreEntry(client_id, raw, score))
    return entries


def kmeans_1d_two(
    points: Sequence[Tuple[int, float]]
) -> Tuple[List[int], List[int]]:
    """Exact two-cluster split of scalar scores, minimizing within-cluster
    sum of squares.

    Sorts the points and scans every split position; with sorted data the
    optimal 2-means partition is always such a prefix/suffix split, so the
    scan is exhaustive.  WCSS ties break toward the split putting more
    members alongside the highest score (the smaller lower cluster).
    Returns (lower ids, upper ids).
    """
    if len(points) < 2:
        raise ValueError("need at least two points to cluster")
    order = sorted(points, key=lambda p: (p[1], p[0]))
    values = np.array([p[1] for p in order], dtype=np.float64)
    n = len(values)
    prefix = np.concatenate([[0.0], np.cumsum(values)])
    prefix_sq = np.concatenate([[0.0], np.cumsum(values * values)])

    def wcss(lo: int, hi: int) -> float:
        # Sum of squared deviations of values[lo:hi] around their mean.
        s = prefix[hi] - prefix[lo]
        ss = prefix_sq[hi] - prefix_sq[lo]
        return ss - s * s / (hi - lo)

    best_split = 1
    best_cost = np.inf
    for split in range(1, n):
        cost = wcss(0, split) + wcss(split, n)
        if cost < best_cost - 1e-12 or (
            abs(cost - best_cost) <= 1e-12 and split < best_split
        ):
            best_cost = cost
            best_split = split
    lower = sorted(p[0] for p in order[:best_split])
    upper = sorted(p[0] for p in order[best_split:])
    return lower, upper


def filter_updates(
    entries: Sequence[ScoreEntry], policy: str, tau: float
) -> Set[int]:
    """Decide which client ids survive, marking entries in place.

    fixed:     keep scores strictly above the constant threshold tau.
    adaptive:  keep scores strictly above the mean score of the round.
    cluster:   exact two-means over scores; keep the cluster that contains
               the best-scoring client (so it is never rejected itself).
    Any policy may reject everyone except cluster, which always keeps at
    least the best scorer.
    """
    if policy not in FILTER_KINDS:
        raise ValueError(f"unknown filter {policy!r}")
    if not entries:
        return set()
    if policy == "fixed":
        accepted = {e.client_id for e in entries if e.score > tau}
    elif policy == "adaptive":
        mean = sum(e.score for e in entries) / len(entries)
        accepted = {e.client_id for e in entries if e.score > mean}
    else:
        if len(entries) == 1:
            accepted = {entries[0].client_id}
        else:
            lower, upper = kmeans_1d_two([(e.client_id, e.score) for e in entries])
            best = max(entries, key=lambda e: (e.score, -e.client_id))
            accepted = set(upper if best.client_id in upper else lower)
    for e in entries:
        e.accepted = e.client_id in accepted
    return accepted
