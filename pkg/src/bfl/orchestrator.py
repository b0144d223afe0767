"""Round loop: sample clients, train locally, poison, filter, aggregate.

Per round the server broadcasts the current weights, every sampled client
runs local SGD and returns a delta, compromised clients swap in their
poisoned payloads, the optional defense scores the rebuilt candidate models
on generated data and filters them, and the surviving updates are aggregated
into the next global model.  A rejected-everything round carries the previous
weights forward.

Reports are pure functions of (config, master seed): every random draw comes
from a purpose-keyed stream, so reruns match byte for byte.  Measured round
timings are logged but deliberately left out of the emitted artifacts (the
wall_ms column is written as 0) to keep them byte-stable.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import attacks, defense, nn, rng
from .aggregators import AggregatorConfig, ClientUpdate, aggregate
from .config import (
    ExperimentConfig,
    IdxDatasetSpec,
    ToyDatasetSpec,
    config_to_dict,
)
from .data import (
    ClientDataset,
    Dataset,
    PartitionConfig,
    dirichlet_partition,
    load_idx,
    make_toy_blobs,
    polygon_centers,
    train_test_split,
)

log = logging.getLogger(__name__)


@dataclass
class RoundRecord:
    round_index: int
    acc: float
    tpr: float
    tnr: float
    accepted: List[int]
    rejected: List[int]
    malicious_sampled: List[int]
    gan_iters: int
    wall_ms: float


@dataclass
class RunReport:
    config: dict
    rounds: List[RoundRecord] = field(default_factory=list)
    final_acc: float = 0.0
    mean_tpr: float = 0.0
    mean_tnr: float = 1.0


def local_training(
    client,
    template: nn.MlpModel,
    global_vector: np.ndarray,
    sgd_cfg: nn.SgdConfig,
    epochs: int,
    batch: int,
    train_rng: np.random.Generator,
) -> Tuple[np.ndarray, int]:
    """Run epochs of mini-batch SGD from the broadcast weights.

    The client's samples are reshuffled every epoch and walked in batches of
    min(batch, len(client)).  Returns (delta, sample_count) where delta is
    the flattened local weights minus the broadcast vector.
    """
    count = len(client)
    if count < 1:
        raise ValueError("client has no data")
    model = nn.unflatten_params(template, global_vector)
    state = nn.init_momentum(model)
    feats = client.features
    labels = client.labels
    bsz = min(batch, count)
    for _ in range(epochs):
        perm = train_rng.permutation(count)
        for start in range(0, count, bsz):
            sel = perm[start : start + bsz]
            _, grads = nn.backward(model, feats[sel], labels[sel])
            model = nn.sgd_step(model, grads, sgd_cfg, state)
    return nn.flatten_params(model) - global_vector, count


def compute_tpr_tnr(
    sampled: Set[int], accepted: Set[int], malicious: Set[int]
) -> Tuple[float, float]:
    """Detection rates against ground-truth roles.

    A true positive is a rejected compromised client; a true negative is an
    accepted honest one.  With no compromised clients in the round TPR is 0
    by convention; with no honest clients TNR is 1.
    """
    if not accepted <= sampled:
        raise ValueError("accepted ids must be a subset of the sampled ids")
    rejected = sampled - accepted
    bad = sampled & malicious
    good = sampled - malicious
    tp = len(rejected & bad)
    tn = len(accepted & good)
    tpr = tp / len(bad) if bad else 0.0
    tnr = tn / len(good) if good else 1.0
    return tpr, tnr


def evaluate_global(
    params: np.ndarray, template: nn.MlpModel, dataset: Dataset
) -> float:
    """Top-1 accuracy of the rebuilt model (argmax ties to the lowest class)."""
    return defense.eval_update(params, template, dataset, "accuracy")


def build_datasets(cfg: ExperimentConfig) -> Tuple[Dataset, Dataset, np.ndarray, np.ndarray]:
    """Materialize train/test sets plus the per-feature input range.

    The range bounds the classifier's input domain and calibrates the
    generator's output scaling: [0, 1] for image data, the blob bounding box
    (centers plus two spreads) for the synthetic task.  Both come from the
    dataset spec alone, never from client samples.  Keeping the box close to
    the data matters: with a loose box the generator drifts into regions no
    training sample constrains, and probe scores there say little about a
    candidate update.
    """
    spec = cfg.dataset
    if isinstance(spec, IdxDatasetSpec):
        paths = (spec.train_images, spec.train_labels, spec.test_images, spec.test_labels)
        if all(os.path.exists(p) for p in paths):
            train = load_idx(spec.train_images, spec.train_labels)
            test = load_idx(spec.test_images, spec.test_labels)
            dim = train.dim
            return train, test, np.zeros(dim), np.ones(dim)
        log.warning("IDX files missing, falling back to the toy dataset")
        spec = ToyDatasetSpec()
    full = make_toy_blobs(
        rng.subseed(cfg.seed, rng.DATASET),
        spec.num_classes,
        spec.per_class,
        polygon_centers(spec.num_classes, spec.radius),
        spec.spread,
        spec.dims,
    )
    train, test = train_test_split(
        full, spec.test_fraction, rng.subseed(cfg.seed, rng.SPLIT)
    )
    margin = 2.0 * spec.spread
    lo = np.full(spec.dims, -(spec.radius + margin))
    hi = np.full(spec.dims, spec.radius + margin)
    lo[2:] = -margin
    hi[2:] = margin
    return train, test, lo, hi


def _apply_attack(
    cfg: ExperimentConfig,
    round_index: int,
    sampled: Sequence[int],
    bad_sampled: List[int],
    deltas: Dict[int, np.ndarray],
    clients: List[ClientDataset],
    template: nn.MlpModel,
    global_vector: np.ndarray,
) -> Dict[int, np.ndarray]:
    """Replace compromised clients' honest deltas with attack payloads."""
    acfg = cfg.attack
    payloads = dict(deltas)
    if not bad_sampled or acfg.kind == "none":
        return payloads
    if acfg.kind == "random_noise":
        noise_rng = rng.substream(cfg.seed, rng.ATTACK, round_index)
        shared = attacks.draw_shared_noise(global_vector.size, acfg.sigma, noise_rng)
        reference = deltas[min(bad_sampled)]
        payload = attacks.random_noise_attack(reference, shared)
        for cid in bad_sampled:
            payloads[cid] = payload
    elif acfg.kind == "sign_flip":
        for cid in bad_sampled:
            payloads[cid] = attacks.sign_flip_attack(deltas[cid], acfg.gamma)
    elif acfg.kind == "label_flip":
        for cid in bad_sampled:
            payloads[cid] = attacks.scale_delta(deltas[cid], acfg.gamma)
    elif acfg.kind == "ipm":
        estimate = np.mean([deltas[cid] for cid in bad_sampled], axis=0)
        proxy = Dataset(
            np.vstack([clients[cid].features for cid in bad_sampled]),
            np.concatenate([clients[cid].labels for cid in bad_sampled]),
            clients[0].num_classes,
        )
        payload, gamma_star = attacks.ipm_attack(
            global_vector, template, estimate, proxy, acfg,
            len(sampled), len(bad_sampled),
        )
        log.debug("round %d ipm gamma*=%g", round_index, gamma_star)
        for cid in bad_sampled:
            payloads[cid] = payload
    return payloads


def run_experiment(cfg: ExperimentConfig) -> RunReport:
    """Execute the full simulation and return the per-round report.

    Poisoned aggregates can push float64 logits past the overflow point;
    the resulting inf/nan models simply score badly and get rejected, so
    those warnings are suppressed for the duration of the run.
    """
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _run_experiment(cfg)


def _run_experiment(cfg: ExperimentConfig) -> RunReport:
    train, test, lo, hi = build_datasets(cfg)
    part_seed = (
        cfg.partition.seed
        if cfg.partition.seed is not None
        else rng.subseed(cfg.seed, rng.PARTITION)
    )
    clients = dirichlet_partition(
        train, PartitionConfig(cfg.clients, cfg.partition.alpha, part_seed)
    )
    template = nn.init_mlp(
        [train.dim, *cfg.hidden_dims, train.num_classes],
        "relu",
        rng.substream(cfg.seed, rng.MODEL_INIT),
    )
    global_vector = nn.flatten_params(template)
    malicious: Set[int] = set()
    if cfg.attack.epsilon > 0.0:
        malicious = attacks.assign_roles(
            cfg.clients, cfg.attack.epsilon, rng.substream(cfg.seed, rng.ATTACK)
        )
    report = RunReport(config=config_to_dict(cfg))
    warm: Optional[defense.GeneratorModel] = None
    for t in range(1, cfg.rounds + 1):
        started = time.perf_counter()
        sample_rng = rng.substream(cfg.seed, rng.SAMPLING, t)
        sampled = sorted(
            int(c) for c in sample_rng.choice(cfg.clients, cfg.sampled_per_round, replace=False)
        )
        bad_sampled = [cid for cid in sampled if cid in malicious]
        deltas: Dict[int, np.ndarray] = {}
        counts: Dict[int, int] = {}
        for cid in sampled:
            shard = clients[cid]
            if cid in bad_sampled and cfg.attack.kind == "label_flip":
                shard = attacks.rotate_labels(
                    Dataset(shard.features, shard.labels, shard.num_classes)
                )
            deltas[cid], counts[cid] = local_training(
                shard,
                template,
                global_vector,
                cfg.sgd,
                cfg.local_epochs,
                cfg.batch,
                rng.substream(cfg.seed, rng.CLIENT_TRAIN, t, cid),
            )
        payloads = _apply_attack(
            cfg, t, sampled, bad_sampled, deltas, clients, template, global_vector
        )
        candidates = {cid: global_vector + payloads[cid] for cid in sampled}
        gan_iters = 0
        if cfg.defense is not None:
            classifier = nn.unflatten_params(template, global_vector)
            gen, gan_iters = defense.train_generator(
                classifier, cfg.defense, cfg.seed, t, lo, hi, warm
            )
            warm = gen
            probe = defense.synthesize(gen, cfg.defense.q, cfg.seed, t)
            entries = defense.score_updates(
                sorted(candidates.items()), template, probe, cfg.defense.metric
            )
            accepted = defense.filter_updates(entries, cfg.defense.filter, cfg.defense.tau)
        else:
            accepted = set(sampled)
        if accepted:
            updates = [
                ClientUpdate(cid, candidates[cid], counts[cid])
                for cid in sorted(accepted)
            ]
            global_vector = aggregate(updates, cfg.aggregator)
        acc = evaluate_global(global_vector, template, test)
        tpr, tnr = compute_tpr_tnr(set(sampled), accepted, malicious)
        wall_ms = (time.perf_counter() - started) * 1000.0
        record = RoundRecord(
            round_index=t,
            acc=acc,
            tpr=tpr,
            tnr=tnr,
            accepted=sorted(accepted),
            rejected=sorted(set(sampled) - accepted),
            malicious_sampled=bad_sampled,
            gan_iters=gan_iters,
            wall_ms=wall_ms,
        )
        report.rounds.append(record)
        log.info(
            "round %d acc=%.4f tpr=%.2f tnr=%.2f accepted=%d/%d gan_iters=%d (%.0f ms)",
            t, acc, tpr, tnr, len(record.accepted), len(sampled), gan_iters, wall_ms,
        )
    if report.rounds:
        report.final_acc = report.rounds[-1].acc
    else:
        report.final_acc = evaluate_global(global_vector, template, test)
    attack_rounds = [r for r in report.rounds if r.malicious_sampled]
    if attack_rounds:
        report.mean_tpr = sum(r.tpr for r in attack_rounds) / len(attack_rounds)
        report.mean_tnr = sum(r.tnr for r in attack_rounds) / len(attack_rounds)
    return report


CSV_COLUMNS = ("round", "acc", "tpr", "tnr", "accepted", "rejected", "gan_iters", "wall_ms")


def _real(x: float) -> str:
    return f"{x:.17g}"


def emit_report(report: RunReport, out_dir: str, name: str) -> Tuple[str, str]:
    """Write <name>.csv and <name>.json under out_dir; returns their paths.

    Reals carry 17 significant digits with '.' decimal points, id lists are
    ';'-joined, and lines end with LF, so identical (config, seed) pairs
    produce identical bytes.  wall_ms is emitted as 0 (see module docstring).
    """
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"{name}.csv")
    json_path = os.path.join(out_dir, f"{name}.json")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for r in report.rounds:
            writer.writerow(
                [
                    r.round_index,
                    _real(r.acc),
                    _real(r.tpr),
                    _real(r.tnr),
                    ";".join(str(i) for i in r.accepted),
                    ";".join(str(i) for i in r.rejected),
                    r.gan_iters,
                    _real(0.0),
                ]
            )
    payload = {
        "config": report.config,
        "rounds": [
            {
                "round": r.round_index,
                "acc": r.acc,
                "tpr": r.tpr,
                "tnr": r.tnr,
                "accepted": r.accepted,
                "rejected": r.rejected,
                "malicious_sampled": r.malicious_sampled,
                "gan_iters": r.gan_iters,
                "wall_ms": 0.0,
            }
            for r in report.rounds
        ],
        "final_acc": report.final_acc,
        "mean_tpr": report.mean_tpr,
        "mean_tnr": report.mean_tnr,
    }
    with open(json_path, "w", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path
