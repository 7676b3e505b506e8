import math

import numpy as np
import pytest

from fedrf import datafile, experiment, federation, models


def make_split(num_tx=4, per_tx=16, window=8, seed=0, test_fraction=0.25):
    ds = datafile.generate_dataset(num_tx, per_tx, window, 10.0, seed)
    return experiment.split_train_test(ds, test_fraction, seed)


def small_cfg(split, seed=0, rounds=2, local_steps=3, batch=8, eta=0.05,
              modalities=("iq",), threads=1, l2=1e-3):
    spec = models.ModelSpec(
        "softmax_linear",
        split.window_len,
        len(modalities),
        split.num_transmitters,
        l2_coeff=l2,
    )
    return federation.TrainingConfig(
        spec=spec,
        rounds=rounds,
        local_steps=local_steps,
        batch_size=batch,
        eta=eta,
        modalities=tuple(modalities),
        seed=seed,
        threads=threads,
    )


# ---------------------------------------------------------------------------
# partitioning

def test_iid_partition_basic():
    # 8 examples of each of 2 labels across 4 APs -> 2 each, one per label
    ds = datafile.generate_dataset(2, 8, 8, 10.0, 1)
    split = federation.SplitDataset(2, 8, ds.iq, ds.labels.astype(np.int64),
                                    ds.iq[:2], ds.labels[:2].astype(np.int64))
    part = federation.partition_iid(split, 4, seed=3)
    for n in range(4):
        assert len(part.indices[n]) == 4  # 2 per label
        assert part.label_sets[n].tolist() == [0, 1]


def test_iid_partition_disjoint_union():
    split = make_split()
    part = federation.partition_iid(split, 4, seed=5)
    allidx = np.concatenate(part.indices)
    assert len(np.unique(allidx)) == len(allidx)
    assert sorted(allidx.tolist()) == list(range(len(split.train_labels)))
    for n in range(4):
        assert part.label_sets[n].tolist() == list(range(4))


def test_iid_partition_too_few_examples():
    ds = datafile.generate_dataset(2, 3, 8, 10.0, 1)
    split = federation.SplitDataset(2, 8, ds.iq, ds.labels.astype(np.int64),
                                    ds.iq[:2], ds.labels[:2].astype(np.int64))
    with pytest.raises(ValueError):
        federation.partition_iid(split, 4, seed=0)


def test_noniid_exact_cover():
    split = make_split(num_tx=4, per_tx=10)
    part = federation.partition_noniid(split, 2, 2, 0, seed=1)
    labels = [set(s.tolist()) for s in part.label_sets]
    assert labels[0] | labels[1] == {0, 1, 2, 3}
    assert labels[0] & labels[1] == set()
    assert all(len(s) == 2 for s in labels)


def test_noniid_overlap_accounting():
    split = make_split(num_tx=16, per_tx=8)
    part = federation.partition_noniid(split, 4, 5, 4, seed=2)
    counts = np.zeros(16, dtype=int)
    for s in part.label_sets:
        assert len(s) == 5
        counts[s] += 1
    assert np.all(counts >= 1) and np.all(counts <= 2)
    assert np.sum(counts == 2) == 4
    assert sum(len(s) for s in part.label_sets) == 16 + 4
    allidx = np.concatenate(part.indices)
    assert len(np.unique(allidx)) == len(allidx) == len(split.train_labels)


def test_noniid_full_scale_assignment():
    split = make_split(num_tx=163, per_tx=4, window=8, test_fraction=0.25)
    part = federation.partition_noniid(split, 4, 41, 1, seed=7)
    counts = np.zeros(163, dtype=int)
    for s in part.label_sets:
        assert len(s) == 41
        counts[s] += 1
    assert np.all(counts >= 1)
    assert np.sum(counts == 2) == 1
    assert np.max(counts) == 2


def test_noniid_infeasible_counts():
    split = make_split(num_tx=4, per_tx=10)
    with pytest.raises(ValueError):
        federation.partition_noniid(split, 2, 1, 0, seed=0)  # cannot cover
    with pytest.raises(ValueError):
        federation.partition_noniid(split, 2, 2, 1, seed=0)  # wrong overlap


def test_noniid_assignment_fuzz():
    for num_tx, aps, lpa in ((8, 4, 3), (16, 4, 5), (12, 3, 5), (10, 5, 2)):
        split = make_split(num_tx=num_tx, per_tx=6)
        overlap = aps * lpa - num_tx
        for seed in range(5):
            part = federation.partition_noniid(split, aps, lpa, overlap, seed=seed)
            counts = np.zeros(num_tx, dtype=int)
            for s in part.label_sets:
                counts[s] += 1
            assert np.all(counts >= 1) and np.all(counts <= 2)
            assert np.sum(counts == 2) == overlap


def test_shared_label_examples_split_evenly():
    split = make_split(num_tx=16, per_tx=8)
    part = federation.partition_noniid(split, 4, 5, 4, seed=2)
    counts = np.zeros(16, dtype=int)
    for s in part.label_sets:
        counts[s] += 1
    shared = np.flatnonzero(counts == 2)
    for label in shared:
        owners = [n for n in range(4) if label in part.label_sets[n]]
        sizes = [
            int(np.sum(split.train_labels[part.indices[n]] == label)) for n in owners
        ]
        assert abs(sizes[0] - sizes[1]) <= 1


# ---------------------------------------------------------------------------
# local training and aggregation

def test_local_train_zero_eta_is_identity():
    split = make_split()
    part = federation.partition_iid(split, 2, seed=1)
    cfg = small_cfg(split, rounds=1)
    cfg.eta = 0.0  # zero step size: every update is a no-op
    batches = federation.build_ap_batches(split, part, cfg.modalities)
    w0 = models.init_params(cfg.spec, 0)
    state = federation.APState(0, batches[0], federation.ap_stream(cfg.seed, 0, 0))
    out = federation.local_train(state, w0, cfg)
    assert np.array_equal(out, w0)


def test_local_train_quadratic_closed_form():
    # f(w) = 0.5*(w-3)^2 on a single AP, full batch
    split = make_split()
    cfg = small_cfg(split, rounds=1, local_steps=1, eta=0.1)
    dummy = models.Batch(np.zeros((4, split.window_len, 2, 1)), np.zeros(4, dtype=int))
    grad_fn = lambda w, b: w - 3.0
    for steps, expected in ((1, 0.3), (2, 0.57)):
        cfg.local_steps = steps
        state = federation.APState(0, dummy, federation.ap_stream(0, 0, 0))
        out = federation.local_train(state, np.zeros(1), cfg, grad_fn=grad_fn)
        assert out[0] == pytest.approx(expected, rel=1e-12)


def test_local_train_deterministic():
    split = make_split()
    part = federation.partition_iid(split, 2, seed=1)
    cfg = small_cfg(split, seed=9, rounds=1, local_steps=5, batch=4)
    batches = federation.build_ap_batches(split, part, cfg.modalities)
    w0 = models.init_params(cfg.spec, 0)
    outs = []
    for _ in range(2):
        state = federation.APState(1, batches[1], federation.ap_stream(cfg.seed, 1, 3))
        outs.append(federation.local_train(state, w0, cfg))
    assert np.array_equal(outs[0], outs[1])


def test_batch_sampler_without_replacement():
    rng = np.random.default_rng(0)
    sampler = federation._BatchSampler(10, 4, rng)
    seen = []
    for _ in range(2):  # one partial epoch: 4 + 4, remainder discarded
        idx = sampler.next()
        assert len(idx) == 4
        assert len(np.unique(idx)) == 4
        seen.extend(idx.tolist())
    assert len(set(seen)) == 8  # no repeats within the epoch


def test_aggregate_identities():
    w = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(federation.aggregate([w, w, w]), w)
    got = federation.aggregate([np.array([0.0, 2.0]), np.array([2.0, 4.0])])
    assert np.array_equal(got, np.array([1.0, 3.0]))


def test_aggregate_permutation_invariant_exactly():
    rng = np.random.default_rng(1)
    vs = [rng.standard_normal(257) for _ in range(4)]
    a = federation.aggregate(vs)
    b = federation.aggregate(vs[::-1])
    c = federation.aggregate([vs[2], vs[0], vs[3], vs[1]])
    assert np.array_equal(a, b)
    assert np.array_equal(a, c)


def test_aggregate_matches_fsum_oracle():
    rng = np.random.default_rng(2)
    vs = [rng.standard_normal(64) for _ in range(4)]
    got = federation.aggregate(vs)
    oracle = np.array(
        [math.fsum(v[i] for v in vs) / 4.0 for i in range(64)]
    )
    assert np.max(np.abs(got - oracle)) <= 1e-12


def test_aggregate_errors():
    with pytest.raises(ValueError):
        federation.aggregate([])
    with pytest.raises(ValueError):
        federation.aggregate([np.zeros(3), np.zeros(4)])


# ---------------------------------------------------------------------------
# evaluation

def test_evaluate_uniform_and_perfect():
    spec = models.ModelSpec("softmax_linear", 4, 1, 4)
    params = np.zeros(models.num_params(spec))
    x = np.random.default_rng(0).standard_normal((8, 4, 2, 1))
    y = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    batch = models.Batch(x, y)
    loss, acc = federation.evaluate(spec, params, batch)
    assert acc == 0.25  # uniform predictor, ties break to label 0
    assert loss == pytest.approx(math.log(4.0), abs=1e-12)
    views = models.param_views(spec, params)
    views["b"][:] = 0.0
    # perfect classifier via saturated per-class biases on one-hot inputs
    x2 = np.zeros((4, 4, 2, 1))
    for i in range(4):
        x2[i, i, 0, 0] = 1.0
    views["w"][:] = 0.0
    for i in range(4):
        views["w"][i * 2, i] = 50.0
    _, acc2 = federation.evaluate(spec, params, models.Batch(x2, np.arange(4)))
    assert acc2 == 1.0


def test_evaluate_loss_matches_batch_loss_without_l2():
    split = make_split()
    cfg = small_cfg(split, l2=0.0)
    part = federation.partition_iid(split, 2, seed=0)
    batches = federation.build_ap_batches(split, part, cfg.modalities)
    params = models.init_params(cfg.spec, 1)
    loss, _ = federation.evaluate(cfg.spec, params, batches[0])
    assert loss == pytest.approx(models.batch_loss(cfg.spec, params, batches[0]), abs=1e-15)


# ---------------------------------------------------------------------------
# full training loop

def test_run_training_zero_rounds():
    split = make_split()
    part = federation.partition_iid(split, 2, seed=0)
    cfg = small_cfg(split, rounds=0)
    metrics, params = federation.run_training(split, part, cfg)
    assert metrics == []
    init_seed = int(
        np.random.SeedSequence((federation._DOMAIN_INIT, cfg.seed)).generate_state(1)[0]
    )
    assert np.array_equal(params, models.init_params(cfg.spec, init_seed))


def test_single_ap_full_batch_equals_centralized():
    split = make_split(num_tx=3, per_tx=8)
    part = federation.partition_iid(split, 1, seed=0)
    n_train = len(split.train_labels)
    cfg = small_cfg(split, rounds=5, local_steps=10, batch=n_train, eta=0.05)
    metrics, w_fed = federation.run_training(split, part, cfg)

    # centralized: 50 plain gradient steps on the same standardized tensor
    batches = federation.build_ap_batches(split, part, cfg.modalities)
    init_seed = int(
        np.random.SeedSequence((federation._DOMAIN_INIT, cfg.seed)).generate_state(1)[0]
    )
    w = models.init_params(cfg.spec, init_seed)
    for _ in range(50):
        _, g = models.loss_and_grad(cfg.spec, w, batches[0])
        w = models.sgd_step(w, g, cfg.eta)
    assert np.array_equal(w_fed, w)


def test_parallel_matches_sequential():
    split = make_split()
    part = federation.partition_iid(split, 4, seed=2)
    cfg_seq = small_cfg(split, seed=5, rounds=3, local_steps=4, batch=6, threads=1)
    cfg_par = small_cfg(split, seed=5, rounds=3, local_steps=4, batch=6, threads=4)
    m_seq, w_seq = federation.run_training(split, part, cfg_seq)
    m_par, w_par = federation.run_training(split, part, cfg_par)
    assert np.array_equal(w_seq, w_par)
    for a, b in zip(m_seq, m_par):
        assert a.round == b.round
        assert a.global_loss == b.global_loss
        assert a.global_acc == b.global_acc
        assert a.ap_losses == b.ap_losses


def test_metric_rounds_and_stride():
    split = make_split()
    part = federation.partition_iid(split, 2, seed=0)
    cfg = small_cfg(split, rounds=5)
    cfg.eval_stride = 2
    metrics, _ = federation.run_training(split, part, cfg)
    assert [m.round for m in metrics] == [2, 4, 5]
    cfg2 = small_cfg(split, rounds=1)
    metrics2, _ = federation.run_training(split, part, cfg2)
    assert [m.round for m in metrics2] == [1]


# ---------------------------------------------------------------------------
# personalization

def test_personalize_zero_steps_noop():
    split = make_split()
    part = federation.partition_iid(split, 2, seed=0)
    cfg = small_cfg(split, rounds=1)
    _, w = federation.run_training(split, part, cfg)
    results = federation.personalize(split, part, w, 0, cfg)
    for r in results:
        assert r.before_acc == r.after_acc
        assert np.array_equal(r.params, w)


def test_personalize_iid_before_identical():
    split = make_split(num_tx=4, per_tx=20)
    part = federation.partition_iid(split, 4, seed=1)
    cfg = small_cfg(split, rounds=2)
    _, w = federation.run_training(split, part, cfg)
    results = federation.personalize(split, part, w, 10, cfg)
    befores = {r.before_acc for r in results}
    assert len(befores) == 1


def test_personalize_noniid_subset_labels():
    split = make_split(num_tx=4, per_tx=20)
    part = federation.partition_noniid(split, 2, 2, 0, seed=1)
    cfg = small_cfg(split, rounds=1)
    _, w = federation.run_training(split, part, cfg)
    results = federation.personalize(split, part, w, 5, cfg)
    assert len(results) == 2
    for n, r in enumerate(results):
        mask = np.isin(split.test_labels, part.label_sets[n])
        assert mask.any()
