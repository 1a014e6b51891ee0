"""Acceptance criteria. Each test reports one PASS/FAIL line in the terminal summary."""

import time

import numpy as np
import pytest

from fedmix.cli import main
from fedmix.data import SyntheticConfig, synthesize, synthesize_oracle
from fedmix.engine import Datasets, train
from fedmix.fedavg import TrainingConfig, run_round
from fedmix.metrics import PayloadModel, Strategy, payload_per_round, read_history
from fedmix.model import ArchSpec, grad, gradient_check, init_params
from fedmix.optim import OptimizerConfig, fresh_state
from fedmix.strategies import MixingConfig, ServerStates, run_parallel_round

EPS = np.finfo(np.float64).eps
MIXING = (Strategy.PARALLEL, Strategy.EXAMPLE_TRANSFER, Strategy.GRADIENT_TRANSFER)

# 50 rounds, 20 clients per round, 5 local steps, batch 8
FIG1_CFG = TrainingConfig(rounds=50, clients_per_round=20, local_steps=5, client_batch_size=8, eval_every=10)


@pytest.fixture(scope="module")
def datasets():
    cfg = SyntheticConfig()
    train_fed, central, eval_fed = synthesize(cfg, 0)
    return Datasets(train_fed, eval_fed, central, synthesize_oracle(cfg, 0))


@pytest.fixture(scope="module")
def figure1_runs(datasets):
    t0 = time.perf_counter()
    runs = {s: train(datasets, FIG1_CFG, s)[0] for s in Strategy}
    return runs, time.perf_counter() - t0


def test_c1_gradient_correctness(acceptance_report):
    t0 = time.perf_counter()
    err_log = gradient_check(ArchSpec("logistic", 10), seed=0, draws=10, eps=1e-5)
    err_mlp = gradient_check(ArchSpec("mlp", 10, 8, "tanh"), seed=0, draws=10, eps=1e-5)
    elapsed = time.perf_counter() - t0
    ok = max(err_log, err_mlp) < 1e-4 and elapsed < 5.0
    acceptance_report(
        "C1 gradient correctness",
        ok,
        f"logistic {err_log:.2e}, mlp-tanh {err_mlp:.2e} (< 1e-4), {elapsed:.2f}s (< 5s)",
    )
    assert ok


def test_c2_reduction_identities(datasets, acceptance_report):
    cfg = TrainingConfig(rounds=10, clients_per_round=20, local_steps=5, client_batch_size=8,
                         eval_every=1, master_seed=0)
    t0 = time.perf_counter()
    ref_records, ref_params = train(datasets, cfg, Strategy.NO_MIX)
    variants = {
        "parallel(alpha=0)": train(datasets, cfg, Strategy.PARALLEL,
                                   MixingConfig(alpha=0.0, merge_opt=OptimizerConfig("sgd", 1.0))),
        "example-transfer(n=0)": train(datasets, cfg, Strategy.EXAMPLE_TRANSFER, MixingConfig(n_transfer=0)),
        "gradient-transfer(lambda=0)": train(datasets, cfg, Strategy.GRADIENT_TRANSFER,
                                             MixingConfig(augment_scale=0.0)),
    }
    elapsed = time.perf_counter() - t0
    mismatched = [
        name for name, (records, params) in variants.items()
        if records != ref_records or not np.array_equal(params.values, ref_params.values)
    ]
    ok = not mismatched and elapsed < 60.0
    acceptance_report(
        "C2 reduction identities",
        ok,
        f"mismatched: {mismatched or 'none'}, {elapsed:.2f}s (< 60s)",
    )
    assert ok


def test_c3_single_client_oracle(datasets, acceptance_report):
    lr = 0.3
    cfg = TrainingConfig(rounds=1, clients_per_round=1, local_steps=1, client_batch_size=10_000,
                         client_opt=OptimizerConfig("sgd", lr), server_opt=OptimizerConfig("sgd", 1.0))
    x = init_params(ArchSpec("logistic", datasets.train.input_dim), 0)
    worst = 0.0
    for t in range(5):
        new, _, _ = run_round(x, fresh_state(x.arch), datasets.train, cfg, t)
        # the sampled client is whichever one's central SGD step explains the change
        errs = [
            np.max(np.abs(new.values - (x.values - lr * grad(x, datasets.train[cid]))))
            for cid in datasets.train
        ]
        worst = max(worst, min(errs))
    ok = worst <= 1e-12
    acceptance_report("C3 single-client oracle", ok, f"max elementwise error {worst:.2e} (<= 1e-12)")
    assert ok


def test_c4_weight_average_identity(datasets, acceptance_report):
    cfg = TrainingConfig(rounds=10, clients_per_round=20, local_steps=5, client_batch_size=8)
    worst = 0.0
    for alpha in (0.0, 0.25, 0.5, 1.0):
        mix = MixingConfig(alpha=alpha, merge_opt=OptimizerConfig("sgd", 1.0))
        x = init_params(ArchSpec("logistic", datasets.train.input_dim), 0)
        states = ServerStates.fresh(x.arch)
        for t in range(cfg.rounds):
            trace = []
            x, states, _ = run_parallel_round(x, states, datasets.train, datasets.central, cfg, mix, t,
                                              trace=trace)
            xc, xf = trace[0].central_model.values, trace[0].federated_model.values
            scale = np.maximum.reduce([np.abs(xc), np.abs(xf), np.abs(x.values), np.full(xc.shape, 1e-300)])
            worst = max(worst, float(np.max(np.abs(x.values - (alpha * xc + (1 - alpha) * xf)) / scale)))
    ok = worst <= 2 * EPS
    acceptance_report(
        "C4 weight-average identity",
        ok,
        f"max relative residual {worst / EPS:.2f} eps (<= 2 eps), alpha in {{0, .25, .5, 1}}",
    )
    assert ok


def test_c5_figure1_qualitative(figure1_runs, acceptance_report):
    runs, elapsed = figure1_runs
    final = {s: runs[s][-1] for s in Strategy if s is not Strategy.FINE_TUNE}
    nm = final[Strategy.NO_MIX]
    ok_a = 0.45 <= nm.eval_accuracy <= 0.55 and nm.eval_accuracy_neg < 0.05
    ok_b = all(
        final[s].eval_accuracy >= 0.85 and final[s].eval_accuracy_pos >= 0.75 and final[s].eval_accuracy_neg >= 0.75
        for s in MIXING
    )
    oracle = final[Strategy.ORACLE].eval_accuracy
    ok_c = all(oracle >= final[s].eval_accuracy - 0.03 for s in MIXING)
    ok = ok_a and ok_b and ok_c and elapsed < 180.0
    detail = ", ".join(
        f"{s.label} {final[s].eval_accuracy:.3f} (+{final[s].eval_accuracy_pos:.2f}/-{final[s].eval_accuracy_neg:.2f})"
        for s in final
    )
    acceptance_report("C5 figure-1 reproduction", ok, f"{detail}; {elapsed:.1f}s for all scenarios (< 180s)")
    assert ok_a, "no-mix should be a constant-positive predictor"
    assert ok_b, "every mixing strategy should classify both labels"
    assert ok_c, "oracle should not trail any mixing strategy by more than 0.03"
    assert elapsed < 180.0


def test_c6_catastrophic_forgetting(figure1_runs, acceptance_report):
    runs, _ = figure1_runs
    records = runs[Strategy.FINE_TUNE]
    pre, post = records[0], records[-1]
    central_drop = pre.central_accuracy - post.central_accuracy
    federated_gain = post.eval_accuracy_pos - pre.eval_accuracy_pos
    ok = central_drop >= 0.20 and federated_gain >= 0.20
    acceptance_report(
        "C6 catastrophic forgetting",
        ok,
        f"central accuracy {pre.central_accuracy:.3f} -> {post.central_accuracy:.3f}, "
        f"federated (positive) accuracy {pre.eval_accuracy_pos:.3f} -> {post.eval_accuracy_pos:.3f}",
    )
    assert ok


def test_c7_payload_table(figure1_runs, datasets, acceptance_report):
    M, E, n = 4000, 88, 16
    pm = PayloadModel(M, E)
    expected = {
        Strategy.NO_MIX: M, Strategy.ORACLE: M, Strategy.PARALLEL: M, Strategy.FINE_TUNE: M,
        Strategy.EXAMPLE_TRANSFER: M + n * E, Strategy.GRADIENT_TRANSFER: 2 * M,
    }
    table_ok = all(payload_per_round(s, pm, n) == (expected[s], M) for s in Strategy)

    # the records of real runs follow the same table
    runs, _ = figure1_runs
    arch_pm = PayloadModel.for_arch(ArchSpec("logistic", datasets.train.input_dim))
    n_tr = MixingConfig().n_transfer
    run_ok = True
    for s, records in runs.items():
        want = payload_per_round(s, arch_pm, n_tr)
        run_ok &= all((r.bytes_down_per_client, r.bytes_up_per_client) == want for r in records if r.round >= 0)
    ok = table_ok and run_ok
    acceptance_report("C7 payload table", ok, f"table exact: {table_ok}, run records match: {run_ok}")
    assert ok


def test_c8_determinism(tmp_path, acceptance_report):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--seed", "0"]) == 0

    def run(out, seed):
        assert main(["run", "--scenario", "all", "--data", str(data), "--out", str(out),
                     "--seed", str(seed)]) == 0
        return {p.name: p.read_bytes() for p in sorted(out.glob("metrics_*.csv"))}

    first, second = run(tmp_path / "a", 0), run(tmp_path / "b", 0)
    identical = len(first) == 5 and first == second
    other = run(tmp_path / "c", 1)

    def accuracies(d, name):
        return [r.eval_accuracy for r in read_history(d / name) if r.eval_accuracy is not None]

    changed = any(accuracies(tmp_path / "a", name) != accuracies(tmp_path / "c", name) for name in first)
    ok = identical and changed
    acceptance_report(
        "C8 determinism",
        ok,
        f"same seed byte-identical CSVs: {identical}, different seed changes accuracy: {changed}",
    )
    assert ok
