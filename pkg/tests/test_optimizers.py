import numpy as np
import pytest

from mirrorless.errors import DomainError
from mirrorless.geometry import make_builtin_metric
from mirrorless.objectives import least_squares, least_squares_stochastic, linear, quadratic
from mirrorless.optimizers import (
    RunConfig,
    StochasticBlock,
    md_step_classic,
    ngd_step,
    run_method,
    run_minibatch_smd,
    run_two_scale_stochastic,
    scale_ratio,
)
from mirrorless.integrators import mirrorless_step
from mirrorless.potentials import make_builtin_potential, potential_to_metric


def pot(name, dim=2, **extra):
    return make_builtin_potential(name, {"dim": dim, **extra})


def test_ngd_examples():
    e = make_builtin_metric("euclidean", {"dim": 2})
    np.testing.assert_allclose(ngd_step(e, quadratic(np.eye(2)), [1.0, 1.0], 0.5), [0.5, 0.5])
    ent = make_builtin_metric("hessian_of", {"dim": 2, "potential": "neg_entropy"})
    # w - eta * w * grad = (0.5 - 0.25, 0.5 + 0.25)
    np.testing.assert_allclose(ngd_step(ent, linear([1.0, -1.0]), [0.5, 0.5], 0.5), [0.25, 0.75])
    r = make_builtin_metric("rank_one_bump", {"dim": 2})
    obj = quadratic(np.eye(2), [0.3, -0.2])
    np.testing.assert_array_equal(ngd_step(r, obj, [0.3, -0.2], 0.7), [0.3, -0.2])


def test_ngd_domain_exit():
    ent = make_builtin_metric("hessian_of", {"dim": 1, "potential": "neg_entropy"})
    with pytest.raises(DomainError):
        ngd_step(ent, linear([1.0]), [0.5], 2.0)


def test_md_classic_examples(rng):
    obj = linear([1.0, -1.0])
    np.testing.assert_allclose(md_step_classic(pot("neg_entropy"), obj, [0.5, 0.5], np.log(2.0)), [0.25, 1.0])
    out = md_step_classic(pot("arcsinh", alpha=1.0), linear([1.0, 0.0]), [0.0, 0.0], 1.0)
    np.testing.assert_allclose(out, [2 * np.sinh(-1.0), 0.0])
    assert out[0] == pytest.approx(-2.3504, abs=1e-4)
    e = make_builtin_metric("euclidean", {"dim": 2})
    q = quadratic([[2.0, 0.3], [0.3, 1.0]], [1.0, 0.0])
    for _ in range(10):
        w = rng.standard_normal(2)
        eta = rng.uniform(0.01, 1.0)
        np.testing.assert_allclose(md_step_classic(pot("sq_euclidean"), q, w, eta), ngd_step(e, q, w, eta), atol=1e-15)


def test_ngd_one_step_newton():
    traj = run_method(RunConfig("ngd", 1.0, 1, [0.7, -2.0]), make_builtin_metric("euclidean", {"dim": 2}),
                      quadratic(np.eye(2)))
    np.testing.assert_array_equal(traj.final, [0.0, 0.0])


def _link_vs_ode_deviation(psi, obj, w0, K=50):
    classic = run_method(RunConfig("md_classic", 0.1, K, w0), psi, obj)
    ode = run_method(RunConfig("md_mirrorless", 0.1, K, w0, verify=True), potential_to_metric(psi), obj)
    assert classic.ok and ode.ok
    return np.max(np.abs(classic.points - ode.points))


def test_mirrorless_vs_classic_example():
    obj = quadratic(np.diag([0.25, 0.5, 1.0]), [0.5, -0.25, 0.1])
    assert _link_vs_ode_deviation(pot("neg_entropy", 3), obj, [1.0, 1.0, 1.0]) <= 1e-8


@pytest.mark.parametrize("name, extra", [("sq_euclidean", {}), ("neg_entropy", {}), ("p_power", {"p": 1.5}),
                                         ("arcsinh", {"alpha": 0.5}), ("arcsinh", {"alpha": 2.0})])
@pytest.mark.parametrize("objective", ["quadratic", "least_squares"])
def test_link_update_matches_ode_matrix(name, extra, objective):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        # p_power is singular on the axes, so its data keeps iterates in the open orthant
        target = rng.uniform(0.5, 1.5, 3) if name == "p_power" else rng.standard_normal(3)
        if objective == "quadratic":
            M = rng.standard_normal((3, 3)) / 3
            Q = M @ M.T + 0.2 * np.eye(3)
            obj = quadratic(Q, Q @ target)
        else:
            A = rng.standard_normal((5, 3)) / 4
            obj = least_squares(A, A @ target + 0.01 * rng.standard_normal(5))
        psi = pot(name, 3, **extra)
        w0 = rng.uniform(0.5, 1.5, 3)
        assert _link_vs_ode_deviation(psi, obj, w0, K=20) <= 1e-8


def test_ngd_and_mirrorless_agree_to_second_order():
    m = make_builtin_metric("rank_one_bump", {"dim": 2})
    obj = quadratic(np.diag([1.0, 2.0]), [0.5, -0.3])
    w = np.array([0.8, 0.5])
    g = obj.gradient(w)
    gaps = [np.linalg.norm(ngd_step(m, obj, w, eta) - mirrorless_step(m, w, g, eta, 1e-13))
            for eta in (0.1, 0.05, 0.025)]
    for a, b in zip(gaps, gaps[1:]):
        assert 3.2 <= a / b <= 4.8


def test_md_classic_needs_potential():
    with pytest.raises(ValueError, match="classic MD requires a potential"):
        run_method(RunConfig("md_classic", 0.1, 2, [1.0, 1.0]), make_builtin_metric("rank_one_bump", {"dim": 2}),
                   quadratic(np.eye(2)))


def test_failure_returns_partial_trajectory():
    ent = make_builtin_metric("hessian_of", {"dim": 1, "potential": "neg_entropy"})
    traj = run_method(RunConfig("ngd", 0.6, 10, [1.0]), ent, linear([1.0]))
    # w -> 0.4 w each step stays positive; a step of 1.5 leaves the orthant at once
    assert traj.ok
    bad = run_method(RunConfig("ngd", 1.5, 10, [1.0]), ent, linear([1.0]))
    assert not bad.ok
    assert bad.failure["iteration"] == 0 and bad.failure["error"] == "DomainError"
    assert len(bad) == 1
    with pytest.raises(DomainError, match="iteration 0"):
        run_method(RunConfig("ngd", 1.5, 10, [1.0]), ent, linear([1.0]), raise_on_failure=True)


def test_flow_reference_times():
    traj = run_method(RunConfig("flow_reference", 0.25, 4, [1.0, 0.0]), make_builtin_metric("euclidean", {"dim": 2}),
                      quadratic(np.eye(2)))
    np.testing.assert_allclose(traj.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(traj.points[:, 0], np.exp(-traj.times), atol=1e-10)


def test_determinism():
    m = make_builtin_metric("rank_one_bump", {"dim": 2})
    obj = quadratic(np.diag([1.0, 2.0]), [0.5, -0.3])
    cfg = RunConfig("md_mirrorless", 0.1, 20, [0.8, 0.5])
    a, b = run_method(cfg, m, obj), run_method(cfg, m, obj)
    assert a.points.tobytes() == b.points.tobytes()


def test_scale_ratio():
    assert scale_ratio(0.2, 0.1) == ("minibatch", 2)
    assert scale_ratio(0.2, 0.04) == ("minibatch", 5)
    assert scale_ratio(0.2, 0.6) == ("reuse", 3)
    assert scale_ratio(0.3, 0.3) == ("minibatch", 1)
    with pytest.raises(ValueError):
        scale_ratio(0.2, 0.06)


def test_two_scale_hand_example():
    sobj = least_squares_stochastic([[1.0], [1.0]], [-0.25, -0.75])
    assert sobj.sample_gradient(np.zeros(1), 0)[0] == 1.0
    assert sobj.sample_gradient(np.zeros(1), 1)[0] == 3.0
    cfg = RunConfig("md_mirrorless", 0.2, 1, [0.0], stochastic=StochasticBlock(0.1, sampling="cyclic"))
    traj = run_two_scale_stochastic(cfg, pot("sq_euclidean", 1), sobj)
    assert traj.final[0] == -0.4


@pytest.mark.parametrize("name", ["sq_euclidean", "neg_entropy"])
@pytest.mark.parametrize("b", [1, 2, 5])
def test_minibatch_identity(name, b):
    rng = np.random.default_rng(b)
    A = rng.uniform(0.05, 0.3, (6, 3))
    sobj = least_squares_stochastic(A, A @ rng.uniform(0.2, 1.0, 3))
    cfg = RunConfig("md_mirrorless", 0.2, 15, [0.5, 0.5, 0.5], stochastic=StochasticBlock(0.2 / b, seed=9))
    two = run_two_scale_stochastic(cfg, pot(name, 3), sobj)
    ref = run_minibatch_smd(cfg, pot(name, 3), sobj, b)
    assert np.max(np.abs(two.points - ref.points)) <= 1e-12


def test_single_sample_limit():
    # nu = eta: one fresh sample per step, same stream as single-example SMD
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 2))
    sobj = least_squares_stochastic(A, rng.standard_normal(4))
    psi = pot("sq_euclidean")
    cfg = RunConfig("md_mirrorless", 0.05, 10, [0.0, 0.0], stochastic=StochasticBlock(0.05, seed=4))
    w = np.zeros(2)
    for k in range(10):
        w = w - 0.05 * sobj.sample_gradient(w, sobj.sample_index(4, k))
    np.testing.assert_allclose(run_two_scale_stochastic(cfg, psi, sobj).final, w, atol=1e-15)


def test_reuse_mode_keeps_sample():
    sobj = least_squares_stochastic([[1.0], [2.0]], [0.0, 0.0])
    cfg = RunConfig("md_mirrorless", 0.1, 4, [1.0], stochastic=StochasticBlock(0.2, sampling="cyclic"))
    traj = run_two_scale_stochastic(cfg, pot("sq_euclidean", 1), sobj)
    w = 1.0
    for k in range(4):
        i = k // 2
        w = w - 0.1 * sobj.sample_gradient(np.array([w]), i)[0]
    assert traj.final[0] == pytest.approx(w, abs=1e-15)


def test_full_pool_cyclic_recovers_deterministic_md():
    # eta = m nu with cyclic sampling visits every sample once per step
    rng = np.random.default_rng(5)
    A = rng.uniform(0.1, 0.4, (4, 3))
    sobj = least_squares_stochastic(A, A @ np.array([0.5, 1.0, 0.8]))
    psi = pot("neg_entropy", 3)
    cfg = RunConfig("md_mirrorless", 0.2, 10, [1.0, 1.0, 1.0], stochastic=StochasticBlock(0.05, sampling="cyclic"))
    det = run_method(RunConfig("md_classic", 0.2, 10, [1.0, 1.0, 1.0]), psi, sobj.base)
    np.testing.assert_allclose(run_two_scale_stochastic(cfg, psi, sobj).points, det.points, atol=1e-13)


def test_run_config_validation():
    with pytest.raises(ValueError):
        RunConfig("sgd", 0.1, 1, [1.0])
    with pytest.raises(ValueError):
        RunConfig("ngd", 0.0, 1, [1.0])
    with pytest.raises(ValueError):
        StochasticBlock(0.1, sampling="shuffle")
