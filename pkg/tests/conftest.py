import numpy as np
import pytest

from deem.dataset import TEST, TRAIN, Dataset, SyntheticConfig, generate_synthetic, make_sample

ACCEPTANCE_RESULTS = []


class StubExpert:
    """Expert whose outputs are looked up by the integer in feature column 0."""

    def __init__(self, probs: dict, embeddings: dict):
        self.probs = probs
        self.embeddings = embeddings

    def predict_proba(self, X):
        X = np.atleast_2d(X)
        return np.array([self.probs[int(round(x[0]))] for x in X])

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def transform(self, X):
        X = np.atleast_2d(X)
        return np.array([self.embeddings[int(round(x[0]))] for x in X], dtype=float)


def indexed_sample(i, split, label=None, date="d"):
    return make_sample(f"{date}_{i:06d}.jpg", [float(i)], split, label)


@pytest.fixture(scope="session")
def small_synthetic():
    cfg = SyntheticConfig(num_groups=3, num_classes=4, dim=6, train_per_group=30,
                          test_per_group=10, shift_scale=4.0, class_sep=3.0, noise_sd=1.0, seed=7)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def default_synthetic():
    return generate_synthetic(SyntheticConfig())


def tiny_dataset(n_classes=3, dim=2):
    train = [make_sample(f"a_{i}.jpg", [i, i % 2], TRAIN, i % n_classes) for i in range(6)]
    test = [make_sample(f"b_{i}.jpg", [i, 0], TEST) for i in range(3)]
    return Dataset(train, test, n_classes, dim)


@pytest.fixture
def criterion():
    """Record an acceptance criterion outcome for the end-of-run summary."""

    def record(name, passed, detail=""):
        # passed=None marks a criterion that is documented as not applicable
        ACCEPTANCE_RESULTS.append((name, passed, detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in ACCEPTANCE_RESULTS:
        status = "N/A " if passed is None else ("PASS" if passed else "FAIL")
        terminalreporter.write_line(f"{status}  {name}  {detail}")
