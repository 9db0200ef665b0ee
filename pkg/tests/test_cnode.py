from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cnodes.diffcore import AdamConfig, MlpSpec, init_params, mlp_forward
from cnodes.errors import DimensionError, TrainingDiverged
from cnodes.model import (
    CharacteristicField,
    CnodeModel,
    FrozenMap,
    TrainConfig,
    constant_map,
    du_ds,
    evolve,
    evolve_backward,
    homeomorphism_model,
    intersecting_model,
    linear_map,
    node_field,
    predict,
    train,
)
from cnodes.model.field import apply_net
from cnodes.solver import OdeProblem, SolverConfig, integrate
from cnodes.tasks import gen_pde_dataset, pde_fit
from cnodes.tasks.pde import PdeFitConfig
from cnodes.tasks.toy import TOY_TRAIN, TWO_POINT, cnode_model, fit_two_point

TIGHT = SolverConfig(rtol=1e-10, atol=1e-12)


def learned_field(k=2, n=1, hidden=8, balance_mode="u_only"):
    j_in = n if balance_mode == "u_only" else n + k
    return CharacteristicField(k, n, MlpSpec((k + 2 * n, hidden, k)), MlpSpec((j_in, hidden, n * k)), balance_mode)


# du_ds ---------------------------------------------------------------------

def test_du_ds_node_reduction():
    fld = node_field(2, hidden=(5,))
    theta = fld.init(0)
    u = np.array([0.3, -0.4])
    want = mlp_forward(fld.jac_net, theta, u)
    assert np.array_equal(du_ds(fld, theta, np.zeros(1), u), want)


def test_du_ds_intersecting_field():
    fld = intersecting_model().field
    for u0 in (0.0, 1.0, 0.25):
        cond = np.array([u0])
        assert du_ds(fld, np.zeros(0), np.zeros(2), np.array([7.0]), cond)[0] == 1 - 2 * u0


def test_du_ds_zero_jacobian():
    fld = CharacteristicField(3, 2, MlpSpec((3 + 2 + 2, 4, 3)), constant_map(np.zeros(6)))
    theta = fld.init(1)
    rng = np.random.default_rng(0)
    for _ in range(5):
        out = du_ds(fld, theta, rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(2))
        assert np.array_equal(out, np.zeros(2))


def test_du_ds_shape_errors():
    fld = learned_field()
    theta = fld.init(0)
    with pytest.raises(DimensionError):
        du_ds(fld, theta, np.zeros(3), np.zeros(1), np.zeros(1))
    with pytest.raises(DimensionError):
        du_ds(fld, theta, np.zeros(2), np.zeros(2), np.zeros(1))
    with pytest.raises(DimensionError):
        du_ds(fld, theta, np.zeros(2), np.zeros(1))
    with pytest.raises(DimensionError):
        CharacteristicField(2, 1, MlpSpec((4, 3)), MlpSpec((1, 2)))


def test_du_ds_batched_matches_single():
    fld = learned_field(k=3, n=2)
    theta = fld.init(2)
    rng = np.random.default_rng(1)
    x, u, c = rng.standard_normal((4, 3)), rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
    batch = du_ds(fld, theta, x, u, c)
    for i in range(4):
        assert np.allclose(batch[i], du_ds(fld, theta, x[i], u[i], c[i]), atol=1e-15)


# balance mode ----------------------------------------------------------------

def _jac(fld, theta, x, u):
    _, pj = fld.split(theta)
    return apply_net(fld.jac_net, pj, fld.jac_input(x, u))


def test_u_only_cross_derivatives_vanish():
    fld = learned_field(k=3, n=2, hidden=10)
    theta = fld.init(4)
    rng = np.random.default_rng(2)
    h = 1e-5
    for _ in range(20):
        x, u = rng.standard_normal(3), rng.standard_normal(2)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            d = (_jac(fld, theta, x + e, u) - _jac(fld, theta, x - e, u)) / (2 * h)
            assert np.all(d == 0.0)


def test_full_mode_has_x_dependence():
    fld = learned_field(k=2, n=1, hidden=10, balance_mode="full")
    theta = fld.init(4)
    x, u = np.array([0.2, 0.1]), np.array([0.5])
    assert not np.allclose(_jac(fld, theta, x, u), _jac(fld, theta, x + 0.1, u))


# evolve / predict ------------------------------------------------------------

def test_zero_jacobian_keeps_boundary_feature():
    g = MlpSpec((3, 4, 2))
    fld = CharacteristicField(2, 2, MlpSpec((6, 4, 2)), constant_map(np.zeros(4)))
    model = CnodeModel(fld, g=g)
    params = model.init_params(0)
    z = np.array([0.5, -1.0, 2.0])
    uT, xT, stats = evolve(model, params, z)
    assert np.allclose(uT, mlp_forward(g, params.segment("theta1"), z), atol=1e-15)
    assert np.any(xT != 0) and stats.nfe > 0


def test_intersecting_construction_maps_exactly():
    model = intersecting_model()
    params = model.init_params(0)
    for solver in (SolverConfig(), SolverConfig("euler", h=1.0), SolverConfig("rk4", h=0.1)):
        uT, _, _ = evolve(model, params, np.array([[1.0], [0.0]]), solver)
        assert np.allclose(uT[:, 0], [0.0, 1.0], atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 200))
def test_intersecting_exact_for_any_euler_step_count(steps):
    model = intersecting_model()
    uT, _, _ = evolve(model, model.init_params(0), np.array([[1.0], [0.0]]), SolverConfig("euler", h=1.0 / steps))
    assert np.max(np.abs(uT[:, 0] - [0.0, 1.0])) < 1e-12


def test_intersecting_trajectories_cross_midway():
    model = intersecting_model()
    half = replace(model, T=0.5)
    uT, _, _ = evolve(half, half.init_params(0), np.array([[1.0], [0.0]]), SolverConfig("euler", h=0.5))
    assert uT[0, 0] == uT[1, 0] == 0.5


def test_homeomorphism_doubling():
    model = homeomorphism_model(lambda u: 2.0 * u, 1)
    uT, _, _ = evolve(model, model.init_params(0), np.array([3.0]))
    assert abs(uT[0] - 6.0) < 1e-12


def test_homeomorphism_linear_roundtrip():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((2, 2)))
    A = Q @ np.diag([1.5, 0.7]) @ Q.T
    model = homeomorphism_model(linear_map(A), 2)
    params = model.init_params(0)
    u0 = rng.standard_normal((10, 2))
    uT, xT, _ = evolve(model, params, u0, TIGHT)
    assert np.max(np.abs(uT - u0 @ A.T)) < 1e-8
    back, x0, _ = evolve_backward(model, params, uT, xT, u0, TIGHT)
    assert np.max(np.abs(back - u0)) < 1e-8 and np.max(np.abs(x0)) < 1e-8


def test_predict_identity_head_is_evolve():
    model = cnode_model()
    params = model.init_params(3)
    z = np.array([[0.2], [0.9]])
    assert np.array_equal(predict(model, params, z), evolve(model, params, z)[0])


def test_predict_softmax_head():
    model = cnode_model(n=2, head=MlpSpec((2, 3), output_activation="softmax"))
    params = model.init_params(0)
    out = predict(model, params, np.random.default_rng(0).standard_normal((6, 2)) * 5)
    assert np.all(out > 0) and np.max(np.abs(out.sum(-1) - 1.0)) < 1e-12


def test_node_reduction_matches_direct_integration():
    fld = node_field(2, hidden=(8,))
    model = CnodeModel(fld)
    params = model.init_params(5)
    theta = params.segment("theta2")
    u0 = np.array([0.4, -1.1])
    # x joins the dopri5 error norm, so adaptive steps only coincide at tight tolerance
    for solver in (TIGHT, SolverConfig("rk4", h=0.05), SolverConfig("euler", h=0.01)):
        uT, xT, _ = evolve(model, params, u0, solver)
        direct, _ = integrate(OdeProblem(lambda s, u: mlp_forward(fld.jac_net, theta, u), (0, 1), u0), solver)
        assert np.max(np.abs(uT - direct)) < 1e-10
        assert abs(xT[0] - 1.0) < 1e-12


def test_conditioning_changes_characteristics():
    fld = learned_field(k=2, n=1, hidden=8)
    model = CnodeModel(fld)
    params = model.init_params(0)
    _, x1, _ = evolve(model, params, np.array([0.2]))
    _, x2, _ = evolve(model, params, np.array([0.8]))
    assert np.max(np.abs(x1 - x2)) > 1e-4
    # at a fixed point (x, u) only cond differs; zeroing its input weights removes the effect
    x, u = np.zeros(2), np.array([0.5])
    theta = params.segment("theta2")
    a1, _ = fld.rates(theta, x, u, np.array([0.2]))
    a2, _ = fld.rates(theta, x, u, np.array([0.8]))
    assert np.max(np.abs(a1 - a2)) > 1e-4
    w = theta.copy()
    w[:8 * 4].reshape(8, 4)[:, 3] = 0.0
    b1, _ = fld.rates(w, x, u, np.array([0.2]))
    b2, _ = fld.rates(w, x, u, np.array([0.8]))
    assert np.array_equal(b1, b2)


def test_frozen_map_needs_matching_width():
    with pytest.raises(DimensionError):
        CharacteristicField(2, 1, FrozenMap(lambda c: c, 1), constant_map([1.0, 0.0]))


def test_model_checks_head_width():
    with pytest.raises(DimensionError):
        CnodeModel(learned_field(), head=MlpSpec((3, 2)))


def test_describe_is_stable():
    assert cnode_model().describe() == cnode_model().describe()
    assert "balance=u_only" in cnode_model().describe()


# training --------------------------------------------------------------------

def test_zero_learning_rate_keeps_params():
    model = cnode_model()
    params = model.init_params(0)
    cfg = replace(TOY_TRAIN, epochs=3, adam=AdamConfig(lr=0.0))
    new, history = train(model, params, TWO_POINT, cfg)
    assert new == params
    assert len({row["loss"] for row in history}) == 1


def test_history_reports_nfe():
    _, _, history, _ = fit_two_point("cnode", replace(TOY_TRAIN, epochs=2))
    for row in history:
        assert row["nfe_forward"] > 0 and row["nfe_adjoint"] > 0


def test_pde_single_pair_loss_strictly_decreases():
    full = gen_pde_dataset(n_train=1, n_test=1, seed=0)
    cfg = PdeFitConfig(train=replace(PdeFitConfig().train, epochs=10, batch_size=1))
    res = pde_fit(full, config=cfg)
    losses = [row["loss"] for row in res.history]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_discrete_euler_matches_adjoint_loss():
    cfg = replace(TOY_TRAIN, epochs=20)
    for seed in (0, 1, 2):
        adj = fit_two_point("cnode", replace(cfg, seed=seed))[2][-1]["loss"]
        disc = fit_two_point("cnode", replace(cfg, seed=seed, solver=SolverConfig("euler", h=1 / 40),
                                              grad_mode="discrete"))[2][-1]["loss"]
        assert abs(disc - adj) <= 0.05 * adj


def test_non_finite_loss_aborts_with_last_params():
    model = cnode_model()
    params = model.init_params(0)
    z = np.array([[0.0], [1.0]])
    y = np.array([[1.0], [np.nan]])
    with pytest.raises(TrainingDiverged) as exc:
        train(model, params, (z, y), replace(TOY_TRAIN, epochs=2))
    assert exc.value.epoch == 0 and exc.value.params == params


def test_train_config_validation():
    from cnodes.errors import ConfigError
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(loss="hinge")
    with pytest.raises(ConfigError):
        TrainConfig(grad_mode="both")
