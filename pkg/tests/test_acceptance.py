"""Acceptance suite: one PASS/FAIL line per criterion, at the required tolerances.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also printed with capture disabled so a plain ``pytest -v`` shows them.
"""
import itertools
import json
import time

import numpy as np
import pytest

from hirota_rh.cli import main
from hirota_rh.core import Convention, GridSpec, dressing_vectors, dump_spec, make_spec, sigma3
from hirota_rh.dressing import (blaschke, evaluate_Pplus, nsoliton_at, nsoliton_eval, one_soliton_closed,
                                one_soliton_csch, two_soliton_closed)
from hirota_rh.laxpair import (PINNED_G_FORM, PINNED_ORDERING, PINNED_THIRD_ORDER, DEFAULT_LAMBDA_SAMPLES,
                               Ordering, focusing_params, pde_residual, reduction_of, refinement_study,
                               zero_curvature_residual)
from hirota_rh.scattering import (Potential, Side, assemble_sectional, evolve_scattering, jost_solve,
                                  jump_check, s11_zeros, scattering_matrix, scattering_sweep, symmetry_check)

from conftest import random_spec

REG, ASP = Convention.REGULARIZED, Convention.AS_PRINTED
SWEEP = np.linspace(-3, 3, 61)
BASE_GRID = GridSpec(-10, 10, 201, 0, 1, 11)      # h_x 0.1 -> 0.05 -> 0.025 over 3 levels


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"
    return emit


def rel_err(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def sample_points(rng, n=500):
    return rng.uniform(-10, 10, n), rng.uniform(-2, 2, n)


# -- building blocks shared with criterion 8 ---------------------------------

def closed_form_error(specs, rng):
    worst, count = 0.0, 0
    for spec in specs:
        x, t = sample_points(rng)
        a = nsoliton_at(spec, x, t)
        refs = [one_soliton_closed(spec, x, t)]
        if spec.convention is ASP:
            refs.append(one_soliton_csch(spec, x, t))
        for ref in refs:
            ok = ~a.pole & ~ref.pole
            count += int(ok.sum())
            worst = max(worst, rel_err(a.q[ok], ref.q[ok]))
    return worst, count


def rh_errors(spec, rng):
    kern = blas = 0.0
    for x, t in rng.uniform(-3, 3, (5, 2)):
        for pt in spec.points:
            v, _ = dressing_vectors(pt, spec.params.epsilon, x, t, spec.convention)
            P = evaluate_Pplus(spec, x, t, pt.lam).value
            kern = max(kern, float(np.max(np.abs(P @ v)) / np.max(np.abs(v))))
    lams = rng.uniform(-3, 3, 100) + 1j * rng.uniform(0.01, 3, 100)
    for lam in lams:
        det = np.linalg.det(evaluate_Pplus(spec, 0.2, 0.1, lam).value)
        blas = max(blas, float(abs(det - blaschke(spec, lam))))
    return kern, blas


def convergence(spec, grid=BASE_GRID, levels=3):
    """Pinned-convention refinement studies of both residual engines."""
    params = focusing_params(spec.params)
    red = reduction_of(params)
    cache = {}

    def make(g):
        if g not in cache:
            cache[g] = nsoliton_eval(spec, g)
        return cache[g]

    pde = refinement_study(make, grid, levels, lambda f: pde_residual(f, params, third_order=PINNED_THIRD_ORDER))
    zc = refinement_study(make, grid, levels, lambda f: zero_curvature_residual(
        f, params, DEFAULT_LAMBDA_SAMPLES, PINNED_ORDERING, reduction=red, g_form=PINNED_G_FORM))
    return pde, zc


def converged(reports, order=1.7, tol=1e-4):
    last = reports[-1]
    return last.convergence_order is not None and last.convergence_order >= order and last.max_norm <= tol


CRIT4_SPECS = {
    "N=1": ([0.2 + 0.5j], [[1.0, 0.5j]]),
    "N=2": ([0.2 + 0.35j, -0.2 + 0.4j], [[1.0, 0.5j], [0.7, -0.3]]),
}


def run_criterion4(cases):
    lines, ok = [], True
    for label, (lams, norms) in cases.items():
        for eps in (0.0, 0.1):
            spec = make_spec(lams, norms, epsilon=eps, convention=REG)
            pde, zc = convergence(spec)
            good = converged(pde) and converged(zc)
            ok &= good
            lines.append(f"{label} eps={eps}: pde {pde[-1].max_norm:.2e} (order {pde[-1].convergence_order:.2f}), "
                         f"zc {zc[-1].max_norm:.2e} (order {zc[-1].convergence_order:.2f})")
    return ok, "; ".join(lines)


# -- criteria ----------------------------------------------------------------

def test_criterion_1_closed_forms(rng, verdict):
    specs = [random_spec(rng, 1, conv) for conv in (REG, ASP) for _ in range(10)]
    worst, count = closed_form_error(specs, rng)
    verdict(1, worst <= 1e-10 and count >= 10_000,
            f"max relative error {worst:.2e} over {count} unmasked comparisons (20 specs, both conventions)")


def test_criterion_2_two_soliton(rng, verdict):
    worst, control, count = 0.0, np.inf, 0
    for conv in (REG, ASP):
        for _ in range(10):
            spec = random_spec(rng, 2, conv)
            x, t = sample_points(rng)
            a = nsoliton_at(spec, x, t)
            b = two_soliton_closed(spec, x, t)
            ok = ~a.pole & ~b.pole
            count += int(ok.sum())
            worst = max(worst, rel_err(b.q[ok], a.q[ok]))
            c = two_soliton_closed(spec, x, t, xi_form="printed")
            okc = ok & ~c.pole
            control = min(control, rel_err(c.q[okc], a.q[okc]))
    verdict(2, worst <= 1e-10 and control > 1e-10,
            f"repaired form max rel {worst:.2e} over {count} points; "
            f"printed-xi negative control fails with min rel {control:.2e}")


def test_criterion_3_rh_properties(rng, verdict):
    kern = blas = 0.0
    for n in (1, 2, 3):
        for conv in (REG, ASP):
            k, b = rh_errors(random_spec(rng, n, conv), rng)
            kern, blas = max(kern, k), max(blas, b)
    verdict(3, kern <= 1e-10 and blas <= 1e-8,
            f"kernel |P+(lam_j) v_j| {kern:.2e}, det P+ vs Blaschke {blas:.2e} (N = 1, 2, 3)")


def test_criterion_4_residual_convergence(verdict):
    ok, detail = run_criterion4(CRIT4_SPECS)
    verdict(4, ok, detail)


def gaussian_potential():
    nodes = np.linspace(-20, 20, 801)
    return Potential.from_function(lambda x: np.stack([np.exp(-x ** 2), 0.5j * np.exp(-x ** 2)], -1),
                                   -20, 20, 2, nodes), 1


def soliton_potential():
    spec = make_spec([0.2 + 0.5j], [[1.0, 0.5j]], epsilon=0.1, convention=REG)
    return Potential.from_spec(spec, 0.0, -60, 60), -1


def scattering_identities(pot, red):
    recs = scattering_sweep(pot, SWEEP, reduction=red)
    n = pot.components + 1
    G = sigma3(n - 1) if red == 1 else np.eye(n)
    det = max(r.det_error for r in recs)
    ident = max(float(abs(r.R[0, :] @ r.S[:, 0] - 1)) for r in recs)
    sym = max(float(np.max(np.abs(r.S.conj().T - G @ r.R @ G))) for r in recs)
    for lam in (-1.0, 0.5, 2.0, 0.3 + 0.4j):
        sym = max(sym, symmetry_check(pot, lam, reduction=red).max_norm)
    jump = 0.0
    for lam in (-2.0, -1.0, 0.5, 1.0, 3.0):
        rec = scattering_matrix(pot, lam, reduction=red)
        pp, pm = assemble_sectional(jost_solve(pot, lam, Side.PLUS, reduction=red),
                                    jost_solve(pot, lam, Side.MINUS, reduction=red), rec)
        for x in (-5.0, 0.0, 5.0):
            rep = jump_check(pp, pm, rec, x)
            jump = max(jump, rep.max_norm)
            ident = max(ident, rep.extras["identity"])
    return det, sym, jump, ident


def test_criterion_5_scattering_identities(verdict):
    parts, ok = [], True
    for label, (pot, red) in (("gaussian", gaussian_potential()), ("soliton", soliton_potential())):
        det, sym, jump, ident = scattering_identities(pot, red)
        ok &= det <= 1e-8 and sym <= 1e-6 and jump <= 1e-7 and ident <= 1e-8
        parts.append(f"{label}: det {det:.1e}, symmetry {sym:.1e}, jump {jump:.1e}, identity {ident:.1e}")
    verdict(5, ok, "; ".join(parts))


def test_criterion_6_reflectionless_round_trip(verdict):
    cases = [
        ("N=1", make_spec([0.3 + 0.6j], [[1.0, 0.5j]], epsilon=0.1, convention=REG), 45.0,
         (-1.5, 1.5, 0.05, 1.5)),
        ("N=2", make_spec([0.3 + 0.5j, -0.2 + 0.6j], [[1.0, 0.5j], [0.7, -0.3]], epsilon=0.1, convention=REG),
         60.0, (-2.0123, 2.0171, 0.0213, 2.0137)),
    ]
    parts, ok = [], True
    for label, spec, half, region in cases:
        started = time.perf_counter()
        pot = Potential.from_spec(spec, 0.0, -half, half)
        recs = scattering_sweep(pot, SWEEP, reduction=-1)
        refl = max(float(max(np.max(np.abs(r.S[1:, 0])), np.max(np.abs(r.R[0, 1:])))) for r in recs)
        zeros = s11_zeros(pot, region, reduction=-1)
        elapsed = time.perf_counter() - started
        if len(zeros) == spec.n:
            err = max(min(abs(z - l) for z in zeros) for l in spec.lambdas)
        else:
            err = np.inf
        ok &= refl <= 1e-5 and err <= 1e-4 and elapsed <= 300
        parts.append(f"{label}: reflection {refl:.1e}, {len(zeros)} zeros, max error {err:.1e}, {elapsed:.0f} s")
    verdict(6, ok, "; ".join(parts))


def test_criterion_7_time_evolution(verdict):
    spec = make_spec([0.2 + 0.5j], [[1.0, 0.5j]], epsilon=0.1, convention=REG)
    pot0 = Potential.from_spec(spec, 0.0, -60, 60)
    pot1 = Potential.from_spec(spec, 0.5, -60, 60)
    worst = 0.0
    for lam in (-2.0, -0.7, 0.0, 0.4, 1.3, 2.5):
        pred = evolve_scattering(scattering_matrix(pot0, lam, reduction=-1), 0.5, 0.1)
        fresh = scattering_matrix(pot1, lam, reduction=-1)
        worst = max(worst, float(np.max(np.abs(pred.S - fresh.S))))
    verdict(7, worst <= 1e-5, f"max entrywise |evolved S - fresh S| at t = 0.5: {worst:.2e}")


def test_criterion_8_three_components(rng, verdict):
    specs = [random_spec(rng, 1, conv, components=3) for conv in (REG, ASP) for _ in range(10)]
    c1, count = closed_form_error(specs, rng)
    kern = blas = 0.0
    for conv in (REG, ASP):
        for _ in range(3):
            k, b = rh_errors(random_spec(rng, 1, conv, components=3), rng)
            kern, blas = max(kern, k), max(blas, b)
    ok4, detail4 = run_criterion4({"c=3 N=1": ([0.2 + 0.5j], [[1.0, 0.5j, -0.4]])})
    ok = c1 <= 1e-10 and count >= 10_000 and kern <= 1e-10 and blas <= 1e-8 and ok4
    verdict(8, ok, f"closed forms {c1:.2e} over {count} points; kernel {kern:.2e}; Blaschke {blas:.2e}; {detail4}")


def test_criterion_9_cli(tmp_path, verdict):
    def spec_file(name, lams, norms, conv="regularized"):
        p = tmp_path / name
        p.write_text(dump_spec(make_spec(lams, norms, epsilon=0.1, convention=conv)))
        return str(p)

    reg = spec_file("reg.json", [0.2 + 0.5j], [[1.0, 0.5j]])
    asp = spec_file("asp.json", [0.2 + 0.5j], [[1.0, 0.5j]], "as-printed")
    near = spec_file("near.json", [0.3 + 0.6j, 0.300001 + 0.6j], [[1.0, 0.5j], [0.7, -0.3]])
    bad = tmp_path / "bad.json"
    bad.write_text('{"epsilon": 0.1, "points": [')
    empty = json.loads(dump_spec(make_spec([0.2 + 0.5j], [[1.0, 0.5j]], convention="regularized")))
    empty["points"] = []
    (tmp_path / "empty.json").write_text(json.dumps(empty))
    grid = "-10:10:201,0:1:11"

    same = True
    for fmt in ("csv", "json"):
        a, b = tmp_path / f"a.{fmt}", tmp_path / f"b.{fmt}"
        for out in (a, b):
            main(["generate", "--spec", asp, "--grid", grid, "--out", str(out), "--format", fmt])
        same &= a.exists() and a.read_bytes() == b.read_bytes()

    out = lambda name: str(tmp_path / name)  # noqa: E731
    matrix = [
        ("generate ok", ["generate", "--spec", reg, "--grid", grid, "--out", out("g.csv")], 0),
        ("malformed JSON", ["generate", "--spec", str(bad), "--grid", grid, "--out", out("x1")], 2),
        ("empty points", ["verify", "--spec", out("empty.json"), "--grid", grid, "--out", out("x2")], 2),
        ("existing output", ["generate", "--spec", reg, "--grid", grid, "--out", out("g.csv")], 3),
        ("verify ok", ["verify", "--spec", reg, "--grid", grid, "--out", out("v.json")], 0),
        ("perturbed verify", ["verify", "--spec", reg, "--grid", grid, "--out", out("vp.json"),
                              "--perturb", "0.1"], 4),
        ("as-printed scatter", ["scatter", "--spec", asp, "--sweep", "-3:3:7", "--out", out("s.csv")], 5),
        ("near-coincident roundtrip", ["roundtrip", "--spec", near, "--out", out("r.json")], 6),
    ]
    wrong = []
    for label, argv, want in matrix:
        got = main(argv)
        if got != want:
            wrong.append(f"{label} -> {got} (want {want})")
    ok = same and not wrong
    verdict(9, ok, f"byte-identical generate: {same}; exit matrix {len(matrix) - len(wrong)}/{len(matrix)}"
            + ("" if not wrong else "; " + ", ".join(wrong)))


# -- convention report --------------------------------------------------------

def test_convention_sweep(capsys):
    """Every sign/ordering combination on a regularized one-soliton; the pinned one must converge."""
    spec = make_spec([0.2 + 0.5j], [[1.0, 0.5j]], epsilon=0.1, convention=REG)
    cache = {}

    def make(g):
        if g not in cache:
            cache[g] = nsoliton_eval(spec, g)
        return cache[g]

    rows = {}
    for kind in ("as-given", "focusing"):
        params = spec.params if kind == "as-given" else focusing_params(spec.params)
        red = reduction_of(params)
        for third in ("printed", "lax"):
            reps = refinement_study(make, BASE_GRID, 3, lambda f: pde_residual(f, params, third_order=third))
            rows[("pde", kind, third)] = reps
        for g_form, ordering in itertools.product(("printed", "repaired"), Ordering):
            reps = refinement_study(make, BASE_GRID, 3, lambda f: zero_curvature_residual(
                f, params, DEFAULT_LAMBDA_SAMPLES, ordering, reduction=red, g_form=g_form))
            rows[("zc", kind, g_form, ordering.value)] = reps
    with capsys.disabled():
        print("\nconvention sweep (regularized N=1, eps=0.1): finest max-norm / order")
        for key, reps in rows.items():
            mark = "converges" if converged(reps) else "-"
            print(f"  {' '.join(key):40s} {reps[-1].max_norm:.2e} / {reps[-1].convergence_order:6.2f}  {mark}")
    assert converged(rows[("pde", "focusing", PINNED_THIRD_ORDER)])
    assert converged(rows[("zc", "focusing", PINNED_G_FORM, PINNED_ORDERING.value)])
    winners = [k for k, r in rows.items() if converged(r)]
    assert set(winners) == {("pde", "focusing", "lax"), ("zc", "focusing", "repaired", "Ut-Vx")}, winners
