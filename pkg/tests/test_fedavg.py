import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedmix.data import DataError, FederatedDataset
from fedmix.engine import Datasets, run_training, train
from fedmix.fedavg import ClientUpdate, TrainingConfig, aggregate, client_update, run_round
from fedmix.model import ArchSpec, ModelParams, finite_diff_grad, grad, init_params
from fedmix.optim import OptimizerConfig, fresh_state
from fedmix.rng import stream

from conftest import make_fed, make_set


def cfg(**kw):
    base = dict(rounds=1, clients_per_round=1, local_steps=1, client_batch_size=1000,
                client_opt=OptimizerConfig("sgd", 1.0), server_opt=OptimizerConfig("sgd", 1.0))
    base.update(kw)
    return TrainingConfig(**base)


def test_client_update_closed_form():
    x = ModelParams(ArchSpec("logistic", 1), [0.0, 0.0])
    u = client_update(x, make_set([[1.0]], [1]), cfg(), stream(0, "c"), "a")
    # delta = -lr * (sigmoid(0) - 1) * [x; 1]
    np.testing.assert_allclose(u.delta, [0.5, 0.5], atol=1e-15)
    assert u.weight == 1.0


def test_client_update_cancelling_augment_is_fixed_point():
    arch = ArchSpec("logistic", 2)
    x = ModelParams(arch, [0.3, -0.1, 0.2])
    data = make_set([[1.0, 2.0], [0.5, -1.0], [2.0, 0.0]], [1, 0, 1])
    u = client_update(x, data, cfg(), stream(0, "c"), "a", augment=-grad(x, data))
    np.testing.assert_allclose(u.delta, 0.0, atol=1e-16)


def test_client_update_determinism():
    fed = make_fed([17, 17], dim=4, seed=2)
    a, b = fed.values()
    x = init_params(ArchSpec("mlp", 4, 3), 1)
    c = cfg(local_steps=6, client_batch_size=5)
    ua = client_update(x, a, c, stream(5, "c", 0, "x"), "x")
    ub = client_update(x, a, c, stream(5, "c", 0, "x"), "y")
    np.testing.assert_array_equal(ua.delta, ub.delta)
    uc = client_update(x, b, c, stream(5, "c", 0, "x"), "z")
    assert not np.array_equal(ua.delta, uc.delta)


def test_client_update_empty_rejected():
    with pytest.raises(ValueError):
        client_update(init_params(ArchSpec("logistic", 1), 0), [], cfg(), stream(0, "c"))


def test_aggregate_weighted_mean():
    ups = [ClientUpdate("a", np.array([1.0, 0.0]), 1.0), ClientUpdate("b", np.array([0.0, 1.0]), 3.0)]
    np.testing.assert_allclose(aggregate(ups), [0.25, 0.75])
    np.testing.assert_array_equal(aggregate(ups[:1]), [1.0, 0.0])
    eq = [ClientUpdate("a", np.array([1.0, 4.0]), 2.0), ClientUpdate("b", np.array([3.0, 0.0]), 2.0)]
    np.testing.assert_allclose(aggregate(eq), [2.0, 2.0])
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        ClientUpdate("a", np.zeros(2), 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 6))
def test_aggregate_permutation_invariant_bitwise(seed, n):
    rng = np.random.default_rng(seed)
    ups = [ClientUpdate(f"c{i}", rng.standard_normal(5), float(rng.integers(1, 50))) for i in range(n)]
    ref = aggregate(ups)
    for perm in itertools.islice(itertools.permutations(ups), 24):
        assert aggregate(list(perm)).tobytes() == ref.tobytes()


def test_single_client_round_is_central_sgd_step():
    fed = make_fed([9, 14, 6], dim=3, seed=4)
    x = init_params(ArchSpec("logistic", 3), 0)
    c = cfg(client_opt=OptimizerConfig("sgd", 0.3))
    new, _, rec = run_round(x, fresh_state(x.arch), fed, c, t=0)
    # one of the clients was chosen; its full-batch SGD step must reproduce the round
    candidates = [x.values - 0.3 * finite_diff_grad(x, fed[cid]) for cid in fed]
    errs = [np.max(np.abs(new.values - cand)) for cand in candidates]
    assert min(errs) < 1e-9
    assert rec.bytes_down_per_client == rec.bytes_up_per_client == 4 * 8


def test_fedsgd_equivalence_full_population():
    fed = make_fed([8, 8, 8, 8], dim=3, seed=6)
    x = init_params(ArchSpec("mlp", 3, 4), 2)
    c = cfg(clients_per_round=4, client_opt=OptimizerConfig("sgd", 0.5))
    new, _, _ = run_round(x, fresh_state(x.arch), fed, c, t=0)
    expected = x.values - 0.5 * finite_diff_grad(x, fed.pooled())
    np.testing.assert_allclose(new.values, expected, rtol=0, atol=1e-9)


def test_server_lr_one_gives_weighted_model_average():
    fed = make_fed([3, 11, 5], dim=2, seed=8)
    x = init_params(ArchSpec("logistic", 2), 0)
    c = cfg(clients_per_round=3, local_steps=4, client_batch_size=2, client_opt=OptimizerConfig("sgd", 0.2))
    new, _, _ = run_round(x, fresh_state(x.arch), fed, c, t=3)
    models = [
        x.values + client_update(x, fed[cid], c, stream(c.master_seed, "client", 3, cid), cid).delta
        for cid in fed
    ]
    sizes = [len(fed[cid]) for cid in fed]
    np.testing.assert_allclose(new.values, np.average(models, axis=0, weights=sizes), atol=1e-14)


def test_zero_client_deltas_leave_global_unchanged():
    fed =FederatedDataset({"a": make_set([[0.0]], [1]), "b": make_set([[0.0]], [0])})
    x = ModelParams(ArchSpec("logistic", 1), [0.7, 0.0])
    c = cfg(clients_per_round=2)
    new, _, _ = run_round(x, fresh_state(x.arch), fed, c, t=0)
    # balanced labels at p = 0.5 with zero features: the two deltas cancel exactly
    np.testing.assert_array_equal(new.values, x.values)


def test_run_training_no_mix_constant_predictor(synth_default):
    records = run_training(synth_default, TrainingConfig(rounds=30, eval_every=10), "no_mix")
    last = records[-1]
    assert 0.45 <= last.eval_accuracy <= 0.55
    assert last.eval_accuracy_pos > 0.95


def test_run_training_shapes_and_determinism(small_datasets):
    c = TrainingConfig(rounds=1, clients_per_round=3, eval_every=5)
    assert len(run_training(small_datasets, c)) == 1
    c = TrainingConfig(rounds=7, clients_per_round=3, eval_every=3)
    recs = run_training(small_datasets, c)
    assert [r.round for r in recs] == list(range(7))
    assert [r.eval_accuracy is not None for r in recs] == [False, False, True, False, False, True, True]
    assert run_training(small_datasets, c) == recs
    with pytest.raises(ValueError):
        TrainingConfig(rounds=0)


def test_threaded_clients_match_serial(small_datasets):
    c = TrainingConfig(rounds=5, clients_per_round=6, eval_every=1)
    serial = train(small_datasets, c, "example_transfer")
    threaded = train(small_datasets, c, "example_transfer", jobs=4)
    assert serial[0] == threaded[0]
    assert serial[1].values.tobytes() == threaded[1].values.tobytes()


def test_missing_central_rejected(small_datasets):
    no_central = Datasets(small_datasets.train, small_datasets.eval)
    for s in ("parallel", "example_transfer", "gradient_transfer", "fine_tune"):
        with pytest.raises(DataError, match="central"):
            run_training(no_central, TrainingConfig(clients_per_round=2), s)
    with pytest.raises(DataError, match="oracle"):
        run_training(no_central, TrainingConfig(clients_per_round=2), "oracle")
    with pytest.raises(ValueError):
        run_training(small_datasets, TrainingConfig(clients_per_round=500))
