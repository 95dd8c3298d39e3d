import numpy as np
import pytest

from mirrorless.geometry import make_builtin_metric

METRIC_CASES = {
    "euclidean": {"dim": 3},
    "fixed_spd": {"H": [[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 3.0]]},
    "rank_one_bump": {"dim": 3},
    "bounded_rank_one": {"dim": 3},
    "diag_arcsinh": {"dim": 3, "alpha": 0.7},
    "lyapunov_inverse": {"n": 2},
    "hessian_of": {"dim": 3, "potential": "neg_entropy"},
}


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(params=sorted(METRIC_CASES))
def builtin_metric(request):
    return make_builtin_metric(request.param, METRIC_CASES[request.param])


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[number])
