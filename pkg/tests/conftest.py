import numpy as np
import pytest

from stratquery.gp import GPHyperparams


def dense_grid_posterior(obs, query, alpha, l, lo=0.0, hi=10.0, n=2000):
    """Condition a GP discretised on ``n`` cells; region averages are overlap-weighted sums.

    Independent of the closed-form box kernel: only the point kernel is used.
    ``obs`` is a list of ``((s, t), y, noise_sd)``; ``query`` is ``(s, t)``.
    """
    edges = np.linspace(lo, hi, n + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])

    def weights(s, t):
        w = np.clip(np.minimum(edges[1:], t) - np.maximum(edges[:-1], s), 0, None)
        return w / w.sum()

    K = alpha * np.exp(-((mid[:, None] - mid[None, :]) ** 2) / l**2)
    A = np.array([weights(*o[0]) for o in obs])
    q = weights(*query)
    y = np.array([o[1] for o in obs])
    noise = np.array([o[2] for o in obs]) ** 2
    S = A @ K @ A.T + np.diag(noise)
    kq = A @ K @ q
    mean = kq @ np.linalg.solve(S, y)
    var = q @ K @ q - kq @ np.linalg.solve(S, kq)
    return mean, var


@pytest.fixture
def hyper1d():
    return GPHyperparams(1.0, (1.0,))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting: one pass/fail line per criterion ---------------------

_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        name = report.nodeid.split("::")[-1]
        _CRITERIA[name] = (props.get("criterion", name), report.outcome, props.get("detail", ""))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome, detail in sorted(_CRITERIA.values(), key=lambda t: t[0]):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{label}: {status}  {detail}")
