import numpy as np
import pytest

from fedmix.data import FederatedDataset, SyntheticConfig, synthesize, synthesize_oracle
from fedmix.engine import Datasets
from fedmix.model import ExampleSet

_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def acceptance_report(request):
    """Callable ``report(criterion, ok, detail)`` collected into the terminal summary."""
    lines = request.config.stash[_ACCEPTANCE]

    def report(criterion: str, ok: bool, detail: str = "") -> bool:
        lines.append(f"{'PASS' if ok else 'FAIL'}  {criterion}  {detail}".rstrip())
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def synth_default():
    cfg = SyntheticConfig()
    train, central, eval_fed = synthesize(cfg, 0)
    return Datasets(train, eval_fed, central, synthesize_oracle(cfg, 0))


@pytest.fixture(scope="session")
def small_datasets():
    cfg = SyntheticConfig(
        input_dim=4, n_train_clients=12, n_eval_clients=4, examples_per_client=6, n_central=60
    )
    train, central, eval_fed = synthesize(cfg, 3)
    return Datasets(train, eval_fed, central, synthesize_oracle(cfg, 3))


def make_set(rows, labels):
    return ExampleSet(np.asarray(rows, dtype=float), labels)


def make_fed(sizes, dim=3, seed=0, label=None):
    rng = np.random.default_rng(seed)
    clients = {}
    for i, n in enumerate(sizes):
        labels = rng.integers(0, 2, n) if label is None else np.full(n, label)
        clients[f"k{i:03d}"] = ExampleSet(rng.standard_normal((n, dim)), labels)
    return FederatedDataset(clients)
