import numpy as np
import pytest

from drdecomp import DgpConfig, Sample, generate_dgp

# rows (y, d, x)
HAND_ROWS = [(2.0, 1.0, 1.0), (1.0, 1.0, 0.0), (1.0, 0.0, 1.0), (0.0, 0.0, 0.0)]


@pytest.fixture
def hand_sample():
    y, d, x = (np.array(c) for c in zip(*HAND_ROWS))
    return Sample(y, d, x.reshape(-1, 1), ("x",))


@pytest.fixture
def hand_csv(tmp_path):
    path = tmp_path / "hand.csv"
    path.write_text("y,d,x\n" + "\n".join(f"{y:g},{d:g},{x:g}" for y, d, x in HAND_ROWS) + "\n")
    return path


@pytest.fixture(scope="session")
def fig1_10k():
    sample, truth = generate_dgp(DgpConfig.figure1(n=10_000, seed=11))
    return sample, truth


def random_sample(n=500, k=3, seed=0, shift=0.8):
    """Linear outcome, logistic groups, ``k`` covariates."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, k))
    lin = x @ np.linspace(shift, -shift / 2, k)
    d = (rng.uniform(size=n) < 1 / (1 + np.exp(-lin))).astype(float)
    y = 1 + x @ np.arange(1, k + 1) * 0.3 + 0.5 * d + 0.2 * d * x[:, 0] + rng.normal(size=n)
    return Sample(y, d, x)


# acceptance report: one line per criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, passed: bool | None, detail: str = "") -> None:
    """``passed=None`` records a skipped criterion."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{status}] criterion {number}: {name}" + (f" | {detail}" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
