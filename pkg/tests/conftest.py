import numpy as np
import pytest

from latentbandit.model import GroupModel


@pytest.fixture
def two_group_model():
    """Two groups, one item: means (0, 1), unit variances."""
    return GroupModel(np.array([[0.0], [1.0]]), np.array([[1.0], [1.0]]), rating_scale=(-5, 5))


@pytest.fixture
def identical_groups_model():
    rng = np.random.default_rng(0)
    row_mu = rng.uniform(1, 5, 6)
    row_s2 = rng.uniform(0.3, 1.5, 6)
    return GroupModel(np.tile(row_mu, (4, 1)), np.tile(row_s2, (4, 1)))


def random_model(rng, groups, items, mu_range=(1.0, 5.0), s2_range=(0.25, 1.5)):
    return GroupModel(rng.uniform(*mu_range, (groups, items)), rng.uniform(*s2_range, (groups, items)))


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
