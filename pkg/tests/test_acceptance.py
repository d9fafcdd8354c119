"""Acceptance suite: the shipped config, run once per thread count.

Each criterion prints one PASS/FAIL line (also collected into the terminal
summary).  Tolerances are read from the shipped config, and
test_tolerances_are_pinned checks that those match the acceptance targets.
"""
from __future__ import annotations

import math
import time

import pytest

from conftest import ACCEPTANCE_LINES
from levysheet.cli import shipped_config_text
from levysheet.config import parse_config
from levysheet.suite import CRITERIA, verify_convergence

RUNTIME_BUDGET = 15 * 60.0


def record(key: str, ok: bool, detail: str) -> None:
    line = f"criterion {key:>3}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)


@pytest.fixture(scope="module")
def shipped():
    return parse_config(shipped_config_text())


@pytest.fixture(scope="module")
def suite_runs(shipped):
    runs = {}
    for threads in (1, 2):
        t0 = time.perf_counter()
        result = verify_convergence(shipped, threads=threads)
        runs[threads] = (result, time.perf_counter() - t0)
    return runs


def _summary(crit) -> str:
    bad = [r for r in crit.reports if not r.passed]
    shown = bad[0] if bad else max(crit.reports, key=lambda r: abs(r.estimate.mean - r.target) / (r.tolerance or 1))
    return (f"{crit.title}; {len(crit.reports) - len(bad)}/{len(crit.reports)} checks pass; "
            f"{'first failure' if bad else 'tightest'} {shown.name}: estimate {shown.estimate.mean:.5g} "
            f"target {shown.target:.5g} tolerance {shown.tolerance:.5g}")


def test_tolerances_are_pinned(shipped):
    tol, f = shipped.tolerances, shipped.field
    pinned = {
        "n_se": (tol.n_se, 5.0), "bias": (tol.bias, 0.05), "cross_cov": (tol.cross_cov, 0.1),
        "second_moment_rel": (tol.second_moment_rel, 0.15), "ks_alpha": (tol.ks_alpha, 0.01),
        "quadrature_rel": (tol.quadrature_rel, 1e-3), "spde_rel": (tol.spde_rel, 0.05),
        "eigen_rel": (tol.eigen_rel, 0.01), "var_ratio": (tol.var_ratio, 0.2),
        "field.epsilon": (f.epsilon, 0.02), "field.theta": (f.theta, 1.0), "field.replicates": (f.replicates, 2000),
        "field.scan_epsilons": (sorted(f.scan_epsilons), [0.02, 0.05, 0.1, 0.2]),
        "classic.epsilon": (shipped.classic.epsilon, 0.02), "classic.replicates": (shipped.classic.replicates, 2000),
        "charfn.replicates": (shipped.charfn.replicates, 100_000), "charfn.xis": (shipped.charfn.xis, [0.5, 1.0, 2.0]),
        "spde.replicates": (shipped.spde.replicates, 2000), "spde.kernel_n": (shipped.spde.kernel_n, [16, 64, 256]),
        "spde.component": (shipped.spde.component, 1), "spde.probes": (shipped.spde.probes, [[0.5, 0.5]]),
    }
    wrong = {k: v for k, v in pinned.items() if v[0] != v[1]}
    assert not wrong
    assert f.model == {"type": "brownian", "sigma": 1.0, "drift": 0.0}
    assert len(shipped.charfn.models) == 4


@pytest.mark.parametrize("key", [k for k in CRITERIA if k.startswith("C")], ids=lambda k: f"criterion_{k[1:]}")
def test_criterion(suite_runs, key):
    result, _ = suite_runs[1]
    crit = next(c for c in result.criteria if c.key == key)
    ok = crit.passed
    detail = _summary(crit)
    if key == "C1":
        ok = ok and crit.seconds < 1.0
        detail += f"; runtime {crit.seconds:.3f} s"
    record(key, ok, detail)
    assert crit.passed, detail
    if key == "C1":
        assert crit.seconds < 1.0


def test_functional_inequalities(suite_runs):
    result, _ = suite_runs[1]
    crit = next(c for c in result.criteria if c.key == "F")
    record("F", crit.passed, _summary(crit))
    assert crit.passed


def test_criterion_11_reproducibility(suite_runs):
    (r1, t1), (r2, t2) = suite_runs[1], suite_runs[2]
    same = r1.fingerprint() == r2.fingerprint() and r1.rows() == r2.rows()
    fast = max(t1, t2) <= RUNTIME_BUDGET
    record("C11", same and fast,
           f"fingerprint threads=1 {r1.fingerprint()[:16]} threads=2 {r2.fingerprint()[:16]}; "
           f"runtime {t1:.0f} s and {t2:.0f} s (budget {RUNTIME_BUDGET:.0f} s)")
    assert same
    assert fast
