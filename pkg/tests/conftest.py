import numpy as np
import pytest

from pscca.model import CountDatasetPair, ModelState, free_mask


def make_loadings(rng, rows, d, scale=1.0):
    w = np.where(free_mask(rows, d), scale * rng.standard_normal((rows, d)), 0.0)
    idx = np.arange(min(rows, d))
    w[idx, idx] = np.abs(w[idx, idx]) + 0.1
    return w


def random_state(rng, d1=4, d2=5, n=6, d=2, sigma2=(0.7, 1.3)):
    w1, w2 = make_loadings(rng, d1, d), make_loadings(rng, d2, d)
    z = rng.standard_normal((d, n))
    mu1, mu2 = rng.standard_normal(d1), rng.standard_normal(d2)
    theta1 = mu1[:, None] + w1 @ z + rng.standard_normal((d1, n))
    theta2 = mu2[:, None] + w2 @ z + rng.standard_normal((d2, n))
    return ModelState(
        theta1=theta1, theta2=theta2, w1=w1, w2=w2, z=z, mu1=mu1, mu2=mu2,
        sigma2_1=sigma2[0], sigma2_2=sigma2[1],
        lambda1=rng.uniform(0.5, 2.0, d1), lambda2=rng.uniform(0.5, 2.0, d2),
        tau1=rng.uniform(0.5, 2.0), tau2=rng.uniform(0.5, 2.0),
        aux_lambda1=rng.uniform(0.5, 2.0, d1), aux_lambda2=rng.uniform(0.5, 2.0, d2),
        aux_tau1=1.3, aux_tau2=0.8,
    )


def counts_for(state, rng):
    return CountDatasetPair(rng.poisson(np.exp(np.minimum(state.theta1, 10))),
                            rng.poisson(np.exp(np.minimum(state.theta2, 10))))


def scalar_state(**kw):
    """One feature per view, one sample, one latent factor."""
    base = dict(theta1=np.zeros((1, 1)), theta2=np.zeros((1, 1)), w1=np.ones((1, 1)),
                w2=np.ones((1, 1)), z=np.zeros((1, 1)), mu1=np.zeros(1), mu2=np.zeros(1),
                sigma2_1=1.0, sigma2_2=1.0, lambda1=np.ones(1), lambda2=np.ones(1),
                tau1=1.0, tau2=1.0)
    base.update(kw)
    return ModelState(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance(capsys):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
