import numpy as np
import pytest

from synthimpact import OptimizerOptions, PredictorSpec, ScmProblem, load_bundled_panel
from synthimpact.config import bundled_config
from synthimpact.oracle import DgpSpec, generate_panel, step_effect


@pytest.fixture(scope="session")
def chile_panel():
    return load_bundled_panel()


@pytest.fixture(scope="session")
def chile_config():
    return bundled_config("chile-group-II")


@pytest.fixture(scope="session")
def chile_problem(chile_config, chile_panel):
    problem, _ = chile_config.problem(chile_panel)
    return problem


@pytest.fixture(scope="session")
def chile_fit(chile_problem):
    return chile_problem.fit()


def sim_problem(seed=0, n_donors=6, effect=0.0, mix=None, sigma=0.01, n_starts=3, **kw):
    """A bench_oracle panel wrapped in an ScmProblem (predictors: outcome mean and covariates)."""
    spec = DgpSpec(n_donors=n_donors, sigma=sigma, seed=seed, treated_mix=mix, **kw)
    if effect:
        spec = DgpSpec.from_dict({**spec.to_dict(), "effect": step_effect(spec, effect, spec.treatment_year)})
    panel = generate_panel(spec)
    preds = [PredictorSpec("y")] + [PredictorSpec(f"x{i + 1}") for i in range(spec.n_factors)]
    return ScmProblem(panel, "y", "T00", spec.donors, preds, spec.treatment_year,
                      options=OptimizerOptions(n_starts=n_starts, seed=seed)), spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    """Store (and echo) one pass/fail line for the acceptance summary."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
