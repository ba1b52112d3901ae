import numpy as np
import pytest

from betanmf.divergence import beta_divergence, decompose

ACCEPTANCE_RESULTS = []


def record_criterion(number, title, passed, detail=""):
    ACCEPTANCE_RESULTS.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: r[0]):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[{status}] {number:>2}. {title}" + (f" -- {detail}" if detail else ""))


def aux_oracle(v, W, h, h_tilde, beta):
    """G(h | h_tilde) assembled term by term from the convex/concave/constant parts."""
    v_tilde = W @ h_tilde
    total = 0.0
    for f in range(W.shape[0]):
        for k in range(W.shape[1]):
            if W[f, k] == 0:
                continue
            lam = W[f, k] * h_tilde[k] / v_tilde[f]
            total += lam * decompose(v[f], v_tilde[f] * h[k] / h_tilde[k], beta).convex_val
        at_tilde = decompose(v[f], v_tilde[f], beta)
        total += at_tilde.concave_deriv * np.dot(W[f], h - h_tilde) + at_tilde.concave_val
        total += at_tilde.constant_val
    return total


def criterion(v, W, h, beta):
    return float(np.sum(beta_divergence(v, W @ h, beta)))


@pytest.fixture
def rng():
    return np.random.default_rng(20110307)
