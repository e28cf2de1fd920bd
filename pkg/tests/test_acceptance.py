"""One test per acceptance criterion; the terminal summary prints a PASS/FAIL line for each."""
import filecmp
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from stokes_hvi.cli import main
from stokes_hvi.fespace import build_system
from stokes_hvi.fields import make_field
from stokes_hvi.friction import LogSaturating, Quadratic, SlipWeakening, validate_law
from stokes_hvi.mesh import build_rect_mesh
from stokes_hvi.rothe import SourceTerm, TimeGrid, run
from stokes_hvi.spectral import compute_inf_sup, constants_report, trace_certificate
from stokes_hvi.verify import (cauchy_study, energy_family, lipschitz_check, minimizer_check,
                               pressure_uniqueness_check, stokes_regression, uniqueness_restart,
                               xi_bound)

from conftest import LEFT_CLAMPED, record

L1 = Quadratic(2.0)
L3 = SlipWeakening(1.0, 0.2, 0.5)
UP = make_field("indicator", ax=0.0, ay=1.0)
REFERENCE = Path(__file__).resolve().parents[1] / "configs" / "reference.ini"


def load(sys, amp, **kw):
    return SourceTerm.from_field(sys, make_field("poly", ax=amp, **kw))


def margin(sys, law, k):
    return constants_report(sys, law, k).m_margin


@pytest.fixture(scope="module")
def sys4():
    return build_system(build_rect_mesh(4, 4), 1.0)


@pytest.fixture(scope="module")
def ci_runs(sys4):
    """Trajectories shared by the per-step criteria (xi growth, pressure, divergence)."""
    out = []
    for law in (L1, L3, LogSaturating(4.0)):
        for N in (8, 32, 128):
            f = load(sys4, 150.0, time="sin", rate=6.0)
            out.append((f"{law.name}/N={N}", law, run(sys4, law, UP, f, TimeGrid(1.0, N))))
    for N in (8, 16, 32, 64, 128):
        out.append((f"slip-weakening/zero-u0/N={N}", L3,
                    run(sys4, L3, make_field("zero"), load(sys4, 40.0), TimeGrid(1.0, N))))
    return out


def test_criterion_01_stokes_regression():
    s = build_system(build_rect_mesh(16, 16), 1.0)
    t0 = time.perf_counter()
    rep = stokes_regression(s)
    dt = time.perf_counter() - t0
    orders = ", ".join(f"{o:.3f}" for o in rep.orders)
    ok = record(1, rep.passed and len(rep.orders) == 4 and dt <= 120,
                f"orders {orders}; {dt:.1f} s")
    assert ok, rep.summary()


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("law", [L3, LogSaturating(4.0)], ids=lambda l: l.name)
def test_criterion_02_minimizer(n, law):
    s = build_system(build_rect_mesh(n, n, spec=LEFT_CLAMPED), 1.0)
    up = s.interpolate(make_field("trig", ax=0.3, ay=-0.2))
    f = s.load_field(make_field("trig", ax=100.0, ay=100.0))
    bad, worst, _ = minimizer_check(s, law, up, f, 0.05, n_perturb=100, seed=n)
    ok = record(2, bad == 0, f"{law.name} {n}x{n}: {bad} violations, min gain {worst:.2e}")
    assert ok


def test_criterion_03_energy(sys4):
    Ns = (8, 16, 32, 64, 128)
    m = margin(sys4, L3, 1.0 / Ns[-1])
    assert m > 0
    rep = energy_family(sys4, L3, make_field("zero"), load(sys4, 40.0), 1.0, Ns, m)
    spread = {}
    for key in ("C1", "C2", "C3"):
        vals = [r[key] for r in rep.table]
        spread[key] = (max(vals) - min(vals)) / max(vals)
    detail = ", ".join(f"{k} variation {v:.1%}" for k, v in spread.items())
    failed = [c.name for c in rep.failures()]
    ok = record(3, rep.passed, detail + (f"; failed {failed}" if failed else ""))
    assert ok, rep.summary()


def test_criterion_04_xi_growth(sys4, ci_runs):
    worst = np.inf
    bad = []
    for label, law, traj in ci_runs:
        rep = xi_bound(traj, sys4, law)
        worst = min(worst, rep.checks[0].margin)
        if not rep.passed:
            bad.append(label)
    ok = record(4, not bad, f"{len(ci_runs)} runs, worst margin {worst:.3g}"
                + (f"; failed {bad}" if bad else ""))
    assert ok


@pytest.mark.parametrize("law", [L1, L3], ids=["L1", "L3"])
def test_criterion_05_cauchy(sys4, law):
    assert margin(sys4, law, 1.0 / 8) > 0
    t0 = time.perf_counter()
    rep = cauchy_study(sys4, law, UP, load(sys4, 150.0, time="sin", rate=6.0), 1.0, 8, 4)
    dt = time.perf_counter() - t0
    ratios = ", ".join(f"{r['ratio']:.3f}" for r in rep.table[1:])
    ok = record(5, rep.passed and dt <= 300, f"{law.name} ratios {ratios}; {dt:.1f} s")
    assert ok, rep.summary()


def test_criterion_06_uniqueness(sys4):
    tol = 1e-10
    up = sys4.interpolate(make_field("trig", ax=0.3, ay=-0.2))
    f = sys4.load_field(make_field("poly", ax=150.0))
    diffs = [uniqueness_restart(sys4, L3, up, f, 0.05, tol=tol, seed=s, scale=sc)[2]
             for s, sc in [(0, 1.0), (1, 10.0), (2, 0.1)]]
    traj = run(sys4, L3, UP, load(sys4, 150.0, time="sin", rate=6.0), TimeGrid(1.0, 8), tol=1e-12)
    prep = pressure_uniqueness_check(sys4, traj, L3)
    ok = record(6, max(diffs) <= 10 * tol and prep.passed,
                f"max velocity difference {max(diffs):.2e}; "
                f"max |dp| {max(r['dp_Q'] for r in prep.table):.2e}")
    assert ok, prep.summary()


def test_criterion_07_lipschitz(sys4):
    grid = TimeGrid(1.0, 16)
    m = margin(sys4, L3, grid.k)
    assert m > 0
    d1 = (UP, load(sys4, 40.0, time="sin", rate=6.0))
    d2 = (make_field("zero"), SourceTerm.zero(sys4))
    rep = lipschitz_check(sys4, L3, grid, d1, d2, m, n_eval=20, seed=0)
    worst = min(c.margin for c in rep.checks)
    ok = record(7, rep.passed and len(rep.checks) >= 21,
                f"{len(rep.checks)} pairs, worst margin {worst:.3g}")
    assert ok, rep.summary()


@pytest.mark.parametrize("n,spec", [(4, None), (8, None), (2, LEFT_CLAMPED)],
                         ids=["4x4", "8x8", "2x2-open"])
def test_criterion_08_trace(n, spec):
    s = build_system(build_rect_mesh(n, n, **({"spec": spec} if spec else {})), 1.0)
    slack, gap = trace_certificate(s, n_samples=100, seed=n)
    ok = record(8, slack >= -1e-10 and gap <= 1e-8, f"{n}x{n}: slack {slack:.3g}, gap {gap:.1e}")
    assert ok


def test_criterion_09_inf_sup(ci_runs):
    alphas = [compute_inf_sup(build_system(build_rect_mesh(n, n), 1.0)) for n in (2, 4, 8, 16)]
    drops = [1.0 - b / a for a, b in zip(alphas, alphas[1:])]
    mean = max(abs(st["pressure_mean"]) for _, _, t in ci_runs for st in t.step_stats)
    div = max(st["divergence_norm"] for _, _, t in ci_runs for st in t.step_stats)
    ok = record(9, max(drops) < 0.2 and mean <= 1e-10 and div <= 1e-10,
                "alpha_b " + ", ".join(f"{a:.4f}" for a in alphas)
                + f"; max |mean p| {mean:.1e}; max |Bu| {div:.1e}")
    assert ok


@pytest.mark.parametrize("law,scale,expect", [
    (L1, 1.0, True), (L3, 1.0, True), (LogSaturating(4.0), 1.0, True),
    (L3, 0.5, False), (LogSaturating(4.0), 0.5, False),
], ids=["L1", "L3", "L2", "L3-halved", "L2-halved"])
def test_criterion_10_validators(law, scale, expect):
    rep = validate_law(law, n_samples=100_000, alpha_psi=scale * law.alpha_psi)
    tag = f"{law.name}{' halved' if scale != 1 else ''}: {'pass' if rep.passed else 'fail'}"
    ok = record(10, rep.passed == expect, tag)
    assert ok


def test_criterion_11_determinism(tmp_path):
    cfg = tmp_path / "reference.ini"
    shutil.copy(REFERENCE, cfg)
    for d in ("a", "b"):
        out = str(tmp_path / d)
        assert main(["constants", "--config", str(cfg), "--out", out]) == 0
        assert main(["solve", "--config", str(cfg), "--out", out]) == 0
        assert main(["validate-law", "--config", str(cfg), "--out", out]) == 0
        assert main(["study", "--study", "convergence", "--config", str(cfg), "--out", out]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    same, diff, err = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    n_csv = sum(n.endswith(".csv") for n in names)
    ok = record(11, not diff and not err and len(same) == len(names),
                f"{len(same)}/{len(names)} files identical ({n_csv} CSV)")
    assert ok
