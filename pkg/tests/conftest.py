"""Shared fixtures and the acceptance-criteria summary hook."""

import numpy as np
import pytest

import msdarcy as m

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
criterion_results = {}


def record_criterion(num, passed, detail):
    criterion_results[num] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not criterion_results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(criterion_results):
        passed, detail = criterion_results[num]
        word = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d}: {word}  {detail}")


@pytest.fixture(scope="session")
def tiny_case():
    """16x16 fine / 4x4 coarse with a seeded log-uniform medium, for tests
    that need a full solve but not a hard one."""
    fine, coarse = m.build_grids(16, 4)
    rng = np.random.default_rng(42)
    kappa = np.exp(rng.uniform(0.0, np.log(1e3), fine.n_cells))
    perm = m.PermField.from_raw(fine, kappa)
    weight = m.compute_weight(perm, m.bilinear_pou(coarse))
    return fine, coarse, perm, weight
