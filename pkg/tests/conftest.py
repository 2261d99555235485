import numpy as np
import pytest
from hypothesis import settings

from twinfalsify.regions import WHOLE_SPACE, Hypothesis, OutcomeSpec
from twinfalsify.trajectory import Dataset, SchemaSpec

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def make_dataset(actions, outcomes, T=2, k=3, d=1):
    """Dataset with scalar states where feature 0 at time T holds ``outcomes``."""
    actions = np.asarray(actions, dtype=np.int64).reshape(-1, T)
    n = actions.shape[0]
    schema = SchemaSpec(T=T, dims=(d,) * (T + 1), action_cardinalities=(k,) * T)
    states = [np.zeros((n, d)) for _ in range(T)]
    states[-1][:, 0] = outcomes
    return Dataset(schema, np.zeros((n, d)), actions, states)


@pytest.fixture
def micro():
    """Three trajectories; target actions (1, 1), outcome (x_2)_0 clipped to [0, 1]."""
    data = make_dataset([[1, 1], [1, 2], [2, 1]], [0.5, 0.9, 0.4])
    hyp = Hypothesis(2, OutcomeSpec(2, 0, 0.0, 1.0), (1, 1), (WHOLE_SPACE,) * 3, "lo", "micro")
    return data, hyp


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and getattr(mod, "LINES", None):
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
