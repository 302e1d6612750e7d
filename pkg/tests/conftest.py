import numpy as np
import pytest

from sae_misclass.model import HyperParams, ParamState, validate_dataset

_REPORT_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_REPORT_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_REPORT_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line)


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for the acceptance summary and echo it."""

    def _report(number: int, name: str, passed: bool, detail: str) -> None:
        line = f"[{number}] {'PASS' if passed else 'FAIL'} {name}: {detail}"
        request.config.stash[_REPORT_KEY].append(line)
        print(line)

    return _report


def make_state(data, **overrides) -> ParamState:
    """Neutral state for a dataset: zero coefficients, unit variances, x = z, w = s."""
    K = data.K
    state = ParamState(
        beta=np.zeros(K),
        delta=np.zeros(data.p),
        gamma=np.zeros(data.q),
        sigma2_e=1.0,
        sigma2_u=1.0,
        sigma2_s=1.0,
        u=np.zeros(data.m),
        P=np.eye(K),
        x=np.array(data.z, dtype=np.int64),
        w=np.array(data.S, dtype=float),
    )
    for k, v in overrides.items():
        setattr(state, k, np.asarray(v, dtype=float) if k not in ("x", "sigma2_e", "sigma2_u", "sigma2_s") else v)
    return state


def toy_dataset(y, area, z, K, t=None, s=None, **kw):
    return validate_dataset(y, area, z, K, t=t, s=s, **kw)


def flat_hyper(K, p=0, q=0, **kw):
    return HyperParams.default(K, p, q, **kw)
