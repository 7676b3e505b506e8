"""Federated training across simulated access points.

One training round broadcasts the global parameter vector to every AP, runs
J local SGD steps on each AP's private shard, and averages the returned
vectors. APs inside a round may execute in parallel; every AP draws from its
own RNG stream keyed by (seed, ap, round), so results are bit-identical to
sequential execution.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from . import modality, models

# stream domain tags keep unrelated RNG consumers apart
_DOMAIN_PARTITION = 0xA11
_DOMAIN_LOCAL = 0xA12
_DOMAIN_PERSONALIZE = 0xA13
_DOMAIN_INIT = 0xA14


@dataclass
class SplitDataset:
    """Train/test split of a generated dataset, kept as raw waveforms."""

    num_transmitters: int
    window_len: int
    train_iq: np.ndarray
    train_labels: np.ndarray
    test_iq: np.ndarray
    test_labels: np.ndarray


@dataclass
class Partition:
    """Per-AP shards of the training set.

    ``indices[n]`` are row indices into the training arrays (pairwise
    disjoint across APs), ``label_sets[n]`` the labels actually present in
    shard n, and ``stats[n]`` normalization statistics fit on shard n only.
    """

    num_aps: int
    indices: List[np.ndarray]
    label_sets: List[np.ndarray]
    stats: List[modality.NormStats]


@dataclass
class TrainingConfig:
    spec: models.ModelSpec
    rounds: int
    local_steps: int
    batch_size: int
    eta: float
    modalities: Tuple[str, ...]
    eval_stride: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.rounds < 0 or self.local_steps < 1 or self.batch_size < 1:
            raise ValueError("rounds must be >= 0; local_steps and batch_size >= 1")
        if self.eta <= 0:
            raise ValueError("eta must be > 0")
        if self.eval_stride < 1:
            raise ValueError("eval_stride must be >= 1")


@dataclass
class APState:
    """One AP's view for a single round: shard, parameters scratch, RNG."""

    index: int
    data: models.Batch
    rng: np.random.Generator


@dataclass
class RoundMetrics:
    round: int  # completed rounds, 1-based
    global_loss: float
    global_acc: float
    ap_losses: Tuple[float, ...]
    wall_time_s: float


@dataclass
class PersonalizationResult:
    ap: int
    before_acc: float
    after_acc: float
    params: np.ndarray


def _finalize_partition(data: SplitDataset, indices: List[np.ndarray]) -> Partition:
    indices = [np.sort(np.asarray(ix, dtype=np.int64)) for ix in indices]
    label_sets = [np.unique(data.train_labels[ix]) for ix in indices]
    stats = [
        modality.fit_normalization(list(data.train_iq[ix]), modality.ALL_MODALITIES)
        for ix in indices
    ]
    return Partition(len(indices), indices, label_sets, stats)


def partition_iid(data: SplitDataset, num_aps: int, seed: int) -> Partition:
    """Deal every label's examples round-robin, so each AP sees all labels."""
    rng = np.random.default_rng(np.random.SeedSequence((_DOMAIN_PARTITION, seed)))
    indices: List[list] = [[] for _ in range(num_aps)]
    for label in range(data.num_transmitters):
        rows = np.flatnonzero(data.train_labels == label)
        if len(rows) < num_aps:
            raise ValueError(
                f"label {label} has {len(rows)} examples, fewer than {num_aps} APs"
            )
        rows = rng.permutation(rows)
        for ap in range(num_aps):
            indices[ap].extend(rows[ap::num_aps])
    return _finalize_partition(data, [np.array(ix) for ix in indices])


def partition_noniid(
    data: SplitDataset,
    num_aps: int,
    labels_per_ap: int,
    overlap_pairs: int,
    seed: int,
) -> Partition:
    """Label-skewed partition: each AP holds ``labels_per_ap`` labels.

    Exactly ``overlap_pairs`` labels are shared between two APs (their
    examples split evenly); every other label belongs to a single AP and no
    label appears at more than two APs.
    """
    num_labels = data.num_transmitters
    if num_aps * labels_per_ap - num_labels != overlap_pairs:
        raise ValueError(
            "overlap_pairs must equal num_aps*labels_per_ap - num_labels "
            f"({num_aps}*{labels_per_ap} - {num_labels})"
        )
    if overlap_pairs < 0:
        raise ValueError("num_aps*labels_per_ap must cover every label")
    if overlap_pairs > num_labels:
        raise ValueError("more overlap slots than labels (a label would need >2 APs)")
    if labels_per_ap > num_labels:
        raise ValueError("labels_per_ap exceeds the number of labels")
    if overlap_pairs > 0 and num_aps < 2:
        raise ValueError("shared labels need at least 2 APs")

    rng = np.random.default_rng(np.random.SeedSequence((_DOMAIN_PARTITION, seed)))
    order = rng.permutation(num_labels)
    doubled = order[:overlap_pairs]
    singles = order[overlap_pairs:]

    capacity = np.full(num_aps, labels_per_ap, dtype=np.int64)
    assigned: List[List[int]] = [[] for _ in range(num_labels)]

    # shared labels first: take the two APs with the most free slots, so
    # capacities stay balanced and the pair is always distinct
    for label in doubled:
        tiebreak = rng.permutation(num_aps)
        ranked = sorted(range(num_aps), key=lambda a: (-capacity[a], tiebreak[a]))
        first, second = ranked[0], ranked[1]
        if capacity[first] < 1 or capacity[second] < 1:
            raise ValueError("infeasible partition: not enough free label slots")
        assigned[label] = [first, second]
        capacity[first] -= 1
        capacity[second] -= 1
    for label in singles:
        tiebreak = rng.permutation(num_aps)
        ap = min(range(num_aps), key=lambda a: (-capacity[a], tiebreak[a]))
        if capacity[ap] < 1:
            raise ValueError("infeasible partition: not enough free label slots")
        assigned[label] = [ap]
        capacity[ap] -= 1

    indices: List[list] = [[] for _ in range(num_aps)]
    for label in range(num_labels):
        rows = np.flatnonzero(data.train_labels == label)
        if len(rows) == 0:
            raise ValueError(f"label {label} has no training examples")
        aps = assigned[label]
        if len(aps) == 1:
            indices[aps[0]].extend(rows)
        else:
            if len(rows) < 2:
                raise ValueError(f"shared label {label} needs >= 2 examples")
            rows = rng.permutation(rows)
            half = (len(rows) + 1) // 2
            indices[aps[0]].extend(rows[:half])
            indices[aps[1]].extend(rows[half:])
    return _finalize_partition(data, [np.array(ix) for ix in indices])


class _BatchSampler:
    """Without-replacement mini-batches with epoch reshuffling.

    Pops ``batch_size`` indices per step from a shuffled queue and reshuffles
    once fewer than a full batch remains. Returned indices are sorted so the
    full-batch case reduces bit-exactly to the natural data order.
    """

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.queue = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch_size > self.n:
            self.queue = self.rng.permutation(self.n)
            self.pos = 0
        out = self.queue[self.pos : self.pos + self.batch_size]
        self.pos += self.batch_size
        return np.sort(out)


def ap_stream(seed: int, ap: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence((_DOMAIN_LOCAL, seed, ap, round_index))
    )


def local_train(
    ap: APState,
    w_global: np.ndarray,
    cfg: TrainingConfig,
    grad_fn: Optional[Callable[[np.ndarray, models.Batch], np.ndarray]] = None,
) -> np.ndarray:
    """Run exactly ``cfg.local_steps`` SGD steps from the broadcast parameters."""
    if len(ap.data) < 1:
        raise ValueError("AP has an empty shard")
    if grad_fn is None:
        grad_fn = lambda w, b: models.loss_and_grad(cfg.spec, w, b)[1]
    sampler = _BatchSampler(len(ap.data), cfg.batch_size, ap.rng)
    w = np.array(w_global, dtype=np.float64, copy=True)
    for _ in range(cfg.local_steps):
        idx = sampler.next()
        g = grad_fn(w, ap.data.select(idx))
        w = models.sgd_step(w, g, cfg.eta)
    return w


def aggregate(params_list: Sequence[np.ndarray]) -> np.ndarray:
    """Unweighted elementwise mean of the AP parameter vectors.

    Each coordinate is summed in sorted value order, which makes the result
    exactly invariant to permuting the inputs.
    """
    if len(params_list) == 0:
        raise ValueError("nothing to aggregate")
    first = np.asarray(params_list[0])
    for p in params_list[1:]:
        if np.asarray(p).shape != first.shape:
            raise ValueError("parameter layouts differ across APs")
    stacked = np.stack([np.asarray(p, dtype=np.float64) for p in params_list])
    return np.sort(stacked, axis=0).sum(axis=0) / len(params_list)


def evaluate(spec: models.ModelSpec, params: np.ndarray, batch: models.Batch):
    """Mean cross-entropy (no l2 term) and accuracy under lowest-index tie-break."""
    if len(batch) == 0:
        raise ValueError("empty evaluation set")
    logits, _ = models._logits(spec, params, batch.inputs)
    loss = models._cross_entropy(logits, batch.labels)
    preds = np.argmax(logits, axis=1)
    acc = float(np.mean(preds == batch.labels))
    return loss, acc


def build_ap_batches(
    data: SplitDataset, partition: Partition, selection: Sequence[str]
) -> List[models.Batch]:
    """Standardize each shard with its own AP-local statistics."""
    batches = []
    for n in range(partition.num_aps):
        ix = partition.indices[n]
        x = modality.stack_batch(data.train_iq[ix], selection, partition.stats[n])
        batches.append(models.Batch(x, data.train_labels[ix]))
    return batches


def pool_stats(data: SplitDataset, partition: Partition) -> modality.NormStats:
    """Statistics over the whole training pool (union of the AP shards)."""
    all_ix = np.sort(np.concatenate(partition.indices))
    return modality.fit_normalization(list(data.train_iq[all_ix]), modality.ALL_MODALITIES)


def run_training(
    data: SplitDataset, partition: Partition, cfg: TrainingConfig
) -> Tuple[List[RoundMetrics], np.ndarray]:
    """Full federated loop; returns per-round metrics and the final parameters.

    Global metrics are computed on the held-out test set, standardized with
    training-pool statistics, every ``eval_stride`` rounds and always after
    the final round.
    """
    ap_batches = build_ap_batches(data, partition, cfg.modalities)
    stats = pool_stats(data, partition)
    test_batch = models.Batch(
        modality.stack_batch(data.test_iq, cfg.modalities, stats), data.test_labels
    )
    init_seed = int(np.random.SeedSequence((_DOMAIN_INIT, cfg.seed)).generate_state(1)[0])
    w = models.init_params(cfg.spec, init_seed)

    metrics: List[RoundMetrics] = []
    for t in range(cfg.rounds):
        start = time.perf_counter()
        states = [
            APState(index=n, data=ap_batches[n], rng=ap_stream(cfg.seed, n, t))
            for n in range(partition.num_aps)
        ]
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                locals_ = list(pool.map(lambda s: local_train(s, w, cfg), states))
        else:
            locals_ = [local_train(s, w, cfg) for s in states]
        w = aggregate(locals_)
        if (t + 1) % cfg.eval_stride == 0 or t == cfg.rounds - 1:
            loss, acc = evaluate(cfg.spec, w, test_batch)
            ap_losses = tuple(
                models.batch_loss(cfg.spec, w, ap_batches[n])
                for n in range(partition.num_aps)
            )
            metrics.append(
                RoundMetrics(
                    round=t + 1,
                    global_loss=loss,
                    global_acc=acc,
                    ap_losses=ap_losses,
                    wall_time_s=time.perf_counter() - start,
                )
            )
    return metrics, w


def personalize(
    data: SplitDataset,
    partition: Partition,
    w_global: np.ndarray,
    fine_tune_steps: int,
    cfg: TrainingConfig,
) -> List[PersonalizationResult]:
    """Fine-tune the global model on each AP's shard.

    Each AP is scored before and after on the subset of the global test set
    whose labels it holds. Training-pool statistics standardize both the
    fine-tuning inputs and the test subsets, so in the i.i.d. case every AP
    starts from an identical "before" accuracy.
    """
    if fine_tune_steps < 0:
        raise ValueError("fine_tune_steps must be >= 0")
    stats = pool_stats(data, partition)
    test_x = modality.stack_batch(data.test_iq, cfg.modalities, stats)
    results = []
    for n in range(partition.num_aps):
        mask = np.isin(data.test_labels, partition.label_sets[n])
        if not mask.any():
            raise ValueError(f"AP {n}: personalized test subset is empty")
        test_subset = models.Batch(test_x[mask], data.test_labels[mask])
        before = evaluate(cfg.spec, w_global, test_subset)[1]
        ix = partition.indices[n]
        local = models.Batch(
            modality.stack_batch(data.train_iq[ix], cfg.modalities, stats),
            data.train_labels[ix],
        )
        rng = np.random.default_rng(
            np.random.SeedSequence((_DOMAIN_PERSONALIZE, cfg.seed, n))
        )
        state = APState(index=n, data=local, rng=rng)
        tuned_cfg = TrainingConfig(
            spec=cfg.spec,
            rounds=1,
            local_steps=max(fine_tune_steps, 1),
            batch_size=cfg.batch_size,
            eta=cfg.eta,
            modalities=cfg.modalities,
            seed=cfg.seed,
        )
        if fine_tune_steps == 0:
            tuned = np.array(w_global, copy=True)
        else:
            tuned = local_train(state, w_global, tuned_cfg)
        after = evaluate(cfg.spec, tuned, test_subset)[1]
        results.append(
            PersonalizationResult(ap=n, before_acc=before, after_acc=after, params=tuned)
        )
    return results


def default_fine_tune_steps(shard_size: int, batch_size: int, epochs: int = 5) -> int:
    """SGD step count equal to ``epochs`` passes over a shard."""
    return epochs * math.ceil(shard_size / min(batch_size, shard_size))
