import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cnodes.diffcore import (
    AdamConfig,
    MlpSpec,
    ParamVector,
    Tape,
    adam_step,
    backward,
    init_params,
    jacobian,
    load_checkpoint,
    mlp_forward,
    mlp_jvp,
    ops,
    save_checkpoint,
)
from cnodes.diffcore.checkpoint import dumps, loads
from cnodes.diffcore.gradcheck import central_difference, gradcheck_all, relative_error
from cnodes.errors import ContractError, DimensionError, PoisonedGradientError

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


# mlp_forward ---------------------------------------------------------------

def test_zero_params_give_zero_output():
    spec = MlpSpec((3, 5, 2))
    out = mlp_forward(spec, np.zeros(spec.n_params), np.array([0.3, -1.0, 2.0]))
    assert np.array_equal(out, np.zeros(2))


def test_single_linear_layer():
    spec = MlpSpec((2, 2))
    params = np.array([1.0, 2.0, 3.0, 4.0, 0.0, 0.0])
    assert np.array_equal(mlp_forward(spec, params, np.array([1.0, 1.0])), [3.0, 7.0])


def test_bias_only_layer():
    spec = MlpSpec((2, 2))
    params = np.array([1.0, 0.0, 0.0, 1.0, 0.5, 0.5])
    assert np.array_equal(mlp_forward(spec, params, np.zeros(2)), [0.5, 0.5])


def test_mlp_shape_mismatch_reports_sizes():
    spec = MlpSpec((3, 4, 1))
    with pytest.raises(DimensionError) as exc:
        mlp_forward(spec, np.zeros(spec.n_params), np.zeros(2))
    assert exc.value.expected == 3 and exc.value.actual == 2
    with pytest.raises(DimensionError):
        mlp_forward(spec, np.zeros(spec.n_params + 1), np.zeros(3))


def test_mlp_is_pure():
    spec = MlpSpec((3, 8, 8, 2))
    p = init_params(spec, 1)
    x = np.random.default_rng(0).standard_normal((5, 3))
    a, b = mlp_forward(spec, p, x), mlp_forward(spec, p, x)
    assert a.tobytes() == b.tobytes()


def test_mlp_records_on_open_tape():
    spec = MlpSpec((2, 3, 1))
    with Tape() as tape:
        p = tape.var(init_params(spec, 0))
        out = mlp_forward(spec, p, np.ones(2))
        assert len(tape) > 1
        assert out.tape is tape


def test_param_count_formula():
    spec = MlpSpec((4, 8, 3), ("relu",))
    assert spec.n_params == 4 * 8 + 8 + 8 * 3 + 3
    assert init_params(spec, 0).size == spec.n_params


def test_softmax_head_sums_to_one():
    spec = MlpSpec((2, 4, 3), output_activation="softmax")
    out = mlp_forward(spec, init_params(spec, 0), np.random.default_rng(1).standard_normal((10, 2)))
    assert np.all(out > 0) and np.allclose(out.sum(-1), 1.0, atol=1e-12)


# backward ------------------------------------------------------------------

def test_backward_sum_of_squares():
    with Tape() as tape:
        x = tape.var(np.array([1.0, 2.0, 3.0]))
        g = backward(ops.sum(x * x))
    assert np.array_equal(g[x], [2.0, 4.0, 6.0])


def test_backward_constant_is_zero():
    with Tape() as tape:
        x = tape.var(np.array([1.0, 2.0]))
        c = tape.var(np.array(5.0))
        g = backward(c)
    assert np.array_equal(g[x], [0.0, 0.0])


def test_backward_tanh_layer_matches_fd():
    rng = np.random.default_rng(3)
    W0, x, u = rng.standard_normal((4, 3)), rng.standard_normal(3), rng.standard_normal(4)

    def f(W):
        return float(u @ np.tanh(W @ x))

    with Tape() as tape:
        W = tape.var(W0)
        g = backward(ops.sum(u * ops.tanh(ops.linear(x, W, np.zeros(4)))))[W]
    assert relative_error(g, central_difference(f, W0)) < 1e-6


def test_backward_rejects_non_scalar_seed():
    with Tape() as tape:
        x = tape.var(np.ones(3))
        with pytest.raises(ContractError):
            backward(x * 2.0)


def test_backward_rejects_plain_array():
    with pytest.raises(ContractError):
        backward(np.ones(()))


def test_mixing_tapes_is_a_contract_error():
    t1, t2 = Tape(), Tape()
    a, b = t1.var(np.ones(2)), t2.var(np.ones(2))
    with pytest.raises(ContractError):
        ops.add(a, b)


def test_every_primitive_matches_finite_differences():
    errs = gradcheck_all(instances=100, seed=0, h=1e-5)
    assert set(errs) == set(ops.PRIMITIVES)
    worst = max(errs, key=errs.get)
    assert errs[worst] < 1e-5, worst


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (2,), elements=finite))
def test_broadcast_gradient_property(a0, b0):
    # d/db sum(a * b) broadcasts b across rows: gradient is the column sum of a
    with Tape() as tape:
        a, b = tape.var(a0), tape.var(b0)
        g = backward(ops.sum(a * b))
    assert np.allclose(g[b], a0.sum(0)) and np.allclose(g[a], np.broadcast_to(b0, (3, 2)))


# jacobian ------------------------------------------------------------------

def test_jacobian_of_linear_layer_is_weight():
    W = np.array([[1.0, -2.0, 0.5], [3.0, 0.0, 4.0]])
    spec = MlpSpec((3, 2))
    J = jacobian(spec, np.concatenate([W.ravel(), [0.1, 0.2]]), np.array([0.3, 0.1, -2.0]))
    assert np.array_equal(J, W)


def test_jacobian_zero_weights():
    spec = MlpSpec((2, 2))
    assert np.array_equal(jacobian(spec, np.zeros(6), np.ones(2)), np.zeros((2, 2)))


def test_jacobian_matches_fd_and_backward_rows():
    spec = MlpSpec((2, 6, 2))
    p = init_params(spec, 7)
    x0 = np.array([0.4, -0.7])
    J = jacobian(spec, p, x0)
    fd = np.stack([central_difference(lambda x: float(mlp_forward(spec, p, x)[i]), x0) for i in range(2)])
    assert relative_error(J, fd) < 1e-5
    for i in range(2):
        with Tape() as tape:
            x = tape.var(x0)
            row = backward(ops.getitem(mlp_forward(spec, p, x), i))[x]
        assert np.max(np.abs(row - J[i])) < 1e-12


def test_mlp_jvp_matches_jacobian_columns():
    spec = MlpSpec((3, 5, 5, 2), ("tanh", "relu"))
    p = init_params(spec, 2)
    x = np.array([0.2, -0.1, 0.9])
    dirs = np.random.default_rng(0).standard_normal((4, 3))
    _, dy = mlp_jvp(spec, p, x, dirs)
    assert np.allclose(dy, dirs @ jacobian(spec, p, x).T, atol=1e-13)


# init_params ---------------------------------------------------------------

def test_init_is_deterministic():
    spec = MlpSpec((4, 8, 2))
    assert init_params(spec, 5).tobytes() == init_params(spec, 5).tobytes()
    assert not np.array_equal(init_params(spec, 5), init_params(spec, 6))


def test_init_layer_counts_and_zero_biases():
    spec = MlpSpec((4, 8))
    p = init_params(spec, 0)
    assert p.size == 40
    assert np.all(p[-8:] == 0.0)
    limit = np.sqrt(6 / 12)
    assert np.all(np.abs(p[:32]) <= limit)


def test_init_weight_mean_is_centred():
    spec = MlpSpec((50, 200))
    w = init_params(spec, 0)[: 50 * 200]
    sigma = np.sqrt(6 / 250) / np.sqrt(3)
    assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)


# adam ----------------------------------------------------------------------

def _pv(values):
    return ParamVector.from_segments({"theta1": np.asarray(values, dtype=float)})


def test_adam_zero_gradient_keeps_params():
    p = _pv([1.0, -2.0])
    new, _ = adam_step(p, np.zeros(2))
    assert new == p


def test_adam_first_step_has_magnitude_lr():
    p = _pv([0.0, 0.0, 0.0])
    new, state = adam_step(p, np.array([3.0, -0.01, 1e3]), hyper=AdamConfig(lr=0.1))
    assert np.allclose(new.values, [-0.1, 0.1, -0.1], rtol=1e-6)
    assert state.step == 1


def test_adam_minimises_quadratic():
    p, state = _pv([1.0]), None
    for _ in range(500):
        p, state = adam_step(p, 2 * p.values, state, AdamConfig(lr=1e-2))
    assert abs(p.values[0]) < 1e-2


def test_adam_nan_names_segment():
    p = ParamVector.from_segments({"theta1": np.zeros(2), "theta2": np.zeros(3)})
    with pytest.raises(PoisonedGradientError) as exc:
        adam_step(p, np.array([0, 0, 0, np.nan, 0.0]))
    assert exc.value.segment == "theta2"


# ParamVector and checkpoints ---------------------------------------------

segment_sizes = st.lists(st.integers(0, 6), min_size=1, max_size=4)


@given(segment_sizes, st.integers(0, 2**31))
def test_paramvector_split_merge_roundtrip(sizes, seed):
    rng = np.random.default_rng(seed)
    parts = {f"theta{i + 1}": rng.standard_normal(n) for i, n in enumerate(sizes)}
    pv = ParamVector.from_segments(parts)
    back = ParamVector.from_segments(pv.split())
    assert back == pv
    for name, arr in parts.items():
        assert np.array_equal(pv.segment(name), arr)


def test_paramvector_rejects_gaps():
    with pytest.raises(ValueError):
        ParamVector(np.zeros(4), {"a": (0, 2), "b": (3, 1)})
    with pytest.raises(DimensionError):
        ParamVector(np.zeros(4), {"a": (0, 2)})


def test_paramvector_is_read_only():
    pv = _pv([1.0, 2.0])
    with pytest.raises(ValueError):
        pv.values[0] = 5.0


@given(segment_sizes, st.integers(0, 2**31), st.integers(0, 2**64 - 1))
def test_checkpoint_bytes_roundtrip(sizes, seed, h):
    rng = np.random.default_rng(seed)
    pv = ParamVector.from_segments({f"s{i}": rng.standard_normal(n) * 1e3 for i, n in enumerate(sizes)})
    back, h2 = loads(dumps(pv, h))
    assert back == pv and h2 == h
    assert back.values.tobytes() == pv.values.tobytes()


def test_checkpoint_file_layout(tmp_path):
    pv = ParamVector.from_segments({"theta1": [1.5], "theta2": [-2.0, 3.0], "theta3": []})
    path = tmp_path / "c.bin"
    save_checkpoint(path, pv, 42)
    blob = path.read_bytes()
    assert blob[:6] == b"CNODE\0"
    assert int.from_bytes(blob[6:8], "little") == 1
    assert int.from_bytes(blob[8:16], "little") == 42
    assert np.frombuffer(blob[-24:], "<f8").tolist() == [1.5, -2.0, 3.0]
    back, h = load_checkpoint(path)
    assert back == pv and h == 42


def test_checkpoint_rejects_foreign_bytes():
    with pytest.raises(ContractError):
        loads(b"NOTACKPT" + bytes(40))
