"""Acceptance gate: runs the bundled acceptance suite and checks each criterion.

Every criterion is checked twice: through the suite's own assertions and
again here against hard-coded thresholds read from the run summaries, so a
loosened tolerance in a bundled config cannot turn a criterion green.
"""

import json
import math

import pytest

from mirrorless.harness import run_suite

RESULTS = {}


@pytest.fixture(scope="module")
def acceptance(tmp_path_factory):
    out = tmp_path_factory.mktemp("acceptance")
    code, report = run_suite("acceptance", out)
    crit = {c["id"]: c for c in report["criteria"]}

    def summary(name):
        return json.loads((out / name / "summary.json").read_text())

    return code, crit, summary


def report(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})"
    RESULTS[number] = line
    print(line)
    assert passed, line


def suite_ok(crit, number):
    return crit[str(number)]["passed"]


def test_criterion_1_link_vs_ode(acceptance):
    _, crit, summary = acceptance
    devs = {}
    for pot in ("neg_entropy", "arcsinh_0.5", "arcsinh_2"):
        for obj in ("quadratic", "least_squares"):
            s = summary(f"c1_{pot}_{obj}")
            devs[f"{pot}/{obj}"] = s["analyses"]["theorem1_check"]["max_deviation"]
    worst = max(devs.values())
    report(1, suite_ok(crit, 1) and len(devs) == 6 and worst <= 1e-7, f"max deviation {worst:.2e} <= 1e-7")


def test_criterion_2_hessian_map(acceptance):
    _, crit, summary = acceptance
    bump = summary("c2_rank_one_bump")["analyses"]["hessian_map_check"]
    lyap = summary("c2_lyapunov_inverse")["analyses"]["hessian_map_check"]
    ok = not bump["is_hessian_map"] and abs(bump["witness_value"] - 2.0) <= 1e-2 and not lyap["is_hessian_map"]
    worst = 0.0
    for name in ("c2_euclidean", "c2_diag_arcsinh", "c2_hessian_of_neg_entropy"):
        rep = summary(name)["analyses"]["hessian_map_check"]
        ok = ok and rep["is_hessian_map"] and rep["max_violation"] <= 1e-4
        worst = max(worst, rep["max_violation"])
    report(2, suite_ok(crit, 2) and ok,
           f"bump witness {bump['witness_value']:.6f}, positive cases violation {worst:.1e}")


def test_criterion_3_rate_bound(acceptance):
    _, crit, summary = acceptance
    rep = summary("c3_rate_bound")["analyses"]["rate_bound_check"]
    ok = (rep["passed"] and rep["hypothesis_ok"] and rep["eta"] == 0.5 and len(rep["margins"]) == 201
          and min(rep["margins"]) >= -1e-10 and not rep["eigen_violations"])
    report(3, suite_ok(crit, 3) and ok, f"min margin {min(rep['margins']):.2e}, eta {rep['eta']}")


def test_criterion_4_order(acceptance):
    _, crit, summary = acceptance
    ratios = summary("c4_order")["analyses"]["discretization_error_sweep"]["ratios"]
    flat = ratios["ngd"] + ratios["md_mirrorless"]
    ok = len(flat) == 4 and all(1.6 <= r <= 2.4 for r in flat)
    report(4, suite_ok(crit, 4) and ok, "ratios " + ", ".join(f"{r:.3f}" for r in flat))


def test_criterion_5_implicit_bias(acceptance):
    _, crit, summary = acceptance
    ok, parts = True, []
    for alpha in ("0.1", "1.0"):
        s = summary(f"c5_implicit_bias_alpha_{alpha}")
        rep = s["analyses"]["bregman_projection"]
        ok = ok and (s["final_objective"] <= 1e-12 and rep["final_vs_projection_rel_inf"] <= 1e-3
                     and rep["kkt_residual_final"] <= 1e-4 and s["dimension"] == 20)
        parts.append(f"alpha={alpha}: rel {rep['final_vs_projection_rel_inf']:.1e}, kkt {rep['kkt_residual_final']:.1e}")
    report(5, suite_ok(crit, 5) and ok, "; ".join(parts))


def test_criterion_6_two_scale(acceptance):
    _, crit, summary = acceptance
    devs = []
    for pot in ("sq_euclidean", "neg_entropy"):
        rep = summary(f"c6_two_scale_{pot}")["analyses"]["two_scale_identity"]
        assert [b["b"] for b in rep["batches"]] == [1, 2, 5]
        devs.append(rep["max_deviation"])
    hand = summary("c6_hand_1d")["final_iterate"][0]
    ok = max(devs) <= 1e-12 and hand == -0.4
    report(6, suite_ok(crit, 6) and ok, f"max deviation {max(devs):.1e}, hand case w(eta) = {hand!r}")


def test_criterion_7_charts(acceptance):
    _, crit, summary = acceptance
    cubic = summary("c7_cubic_chart")["analyses"]
    affine = summary("c7_affine_chart")["analyses"]["md_affine"]
    flow = cubic["flow_cubic"]["max_deviation"]
    ratio = cubic["md_cubic"]["halving_ratio"]
    ok = flow <= 1e-7 and affine["max_deviation"] <= 1e-8 and 1.5 <= ratio <= 2.5
    report(7, suite_ok(crit, 7) and ok,
           f"flow {flow:.1e}, affine MD {affine['max_deviation']:.1e}, cubic halving ratio {ratio:.3f}")


def test_criterion_8_reference_flow(acceptance):
    _, crit, summary = acceptance
    w = summary("c8_reference_flow")["final_iterate"]
    err = max(abs(w[0] - math.exp(-1.0)), abs(w[1]))
    report(8, suite_ok(crit, 8) and err <= 1e-9, f"endpoint error {err:.1e}")


def test_criterion_9_reproducibility(acceptance):
    _, crit, _ = acceptance
    runs = crit["9"]["runs"]
    ok = len(runs) >= 3 and all(r["identical"] for r in runs)
    report(9, suite_ok(crit, 9) and ok, f"{len(runs)} configs rerun byte-identical")


def test_suite_exit_code(acceptance):
    code, crit, _ = acceptance
    assert sorted(crit, key=int) == [str(i) for i in range(1, 10)]
    assert code == 0
