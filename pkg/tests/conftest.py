"""Shared fixtures: a seeded RNG and a tiny transient campaign."""
import sys
from pathlib import Path

import numpy as np
import pytest

from mixedrom.fom import FomConfig, generate_snapshots, step_channel
from mixedrom.model import OfflineSettings, train


def tiny_config(**kw):
    grid, bc = step_channel(16, 8)
    args = dict(nu=0.05, samples=[1.0, 1.5], dt=0.01, n_snapshots=5, save_every=20, spin_up=0.5)
    args.update(kw)
    return FomConfig(grid, bc, **args)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def tiny_archive():
    return generate_snapshots(tiny_config())


@pytest.fixture(scope="session")
def tiny_model(tiny_archive):
    return train(tiny_archive, OfflineSettings())


@pytest.fixture(scope="session")
def tiny_lifting_model(tiny_archive):
    return train(tiny_archive, OfflineSettings(bc_mode="lifting"))


@pytest.fixture(scope="session")
def tiny_steady_archive():
    return generate_snapshots(tiny_config(samples=[1.0, 1.5, 2.0], dt=0.01, n_snapshots=1,
                                          save_every=1, spin_up=40.0, steady_tol=1e-6))


@pytest.fixture(scope="session")
def tiny_steady_model(tiny_steady_archive):
    return train(tiny_steady_archive, OfflineSettings())


def pytest_terminal_summary(terminalreporter):
    """Print the acceptance verdicts and write them to ``results/acceptance.md``."""
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    lines = ["| # | criterion | verdict | measured |", "|---|---|---|---|"]
    for n in sorted(results):
        title, ok, detail = results[n]
        verdict = "PASS" if ok else "FAIL"
        tr.write_line(f"criterion {n:2d} {verdict}  {title}: {detail}")
        lines.append(f"| {n} | {title} | {verdict} | {detail} |")
    out = Path(__file__).resolve().parent.parent / "results"
    out.mkdir(exist_ok=True)
    (out / "acceptance.md").write_text("# Acceptance results\n\n" + "\n".join(lines) + "\n")
