import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nowcaster.evalharness.synthetic import SyntheticSpec, generate_synthetic
from nowcaster.lstm import LstmHyperparams

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_synth():
    """8 years of monthly data, 6 features, moderate noise."""
    return generate_synthetic(SyntheticSpec(n_months=96, n_features=6, seed=3))


@pytest.fixture
def tiny_hp():
    return LstmHyperparams(n_timesteps=6, hidden_size=4, n_layers=1, epochs=5, batch_size=8)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_training(small_synth):
    """Filled training panel, scaler and batch from the small synthetic panel."""
    from nowcaster.evalharness.backtest import training_quarters
    from nowcaster.fill import fill_panel
    from nowcaster.tensorize import fit_scaler, make_batch

    train_end = (2009, 12)
    raw = small_synth.panel.truncate(train_end)
    filled = fill_panel(raw, "arma", train_end)
    scaler = fit_scaler(filled, train_end)
    batch = make_batch(filled, scaler, 6, training_quarters(raw, train_end))
    return filled, scaler, batch


# -- acceptance reporting -------------------------------------------------------

class _Criterion:
    def __init__(self, lines, number, title, limit):
        self.lines, self.number, self.title, self.limit = lines, number, title, limit
        self.detail = ""

    def __enter__(self):
        import time
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        import time
        elapsed = time.perf_counter() - self._t0
        passed = exc_type is None and (self.limit is None or elapsed < self.limit)
        note = self.detail
        if exc_type is not None:
            note = f"{note}; {exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}".strip("; ")
        budget = f" (limit {self.limit:.0f}s)" if self.limit else ""
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {self.number}: {self.title} -- {note} [{elapsed:.1f}s{budget}]"
        self.lines.append((self.number, line))
        print(line)
        if exc_type is None and not passed:
            raise AssertionError(f"criterion {self.number} took {elapsed:.1f}s, over the {self.limit:.0f}s limit")
        return False


@pytest.fixture
def criterion(request):
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def make(number, title, limit=None):
        return _Criterion(lines, number, title, limit)

    return make


_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
