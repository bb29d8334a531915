import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from zslt import numerics as nx
from zslt.errors import ContractError, DimensionError, NumericalError, ParameterError
from zslt.numerics import AdamState, GradTape, Tensor


def rand(rng, *shape):
    return Tensor(rng.standard_normal(shape), dtype=np.float64)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_tensor_is_read_only(rng):
    t = rand(rng, 3)
    with pytest.raises(ValueError):
        t.data[0] = 1.0
    copy = t.numpy()
    copy[0] = 5.0
    assert t.data[0] != 5.0


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_construction_is_an_error(bad):
    with pytest.raises(NumericalError):
        Tensor([1.0, bad])


def test_overflow_and_log_zero_are_errors():
    with pytest.raises(NumericalError):
        nx.exp(Tensor([1000.0], dtype=np.float64))
    with pytest.raises(NumericalError):
        nx.log(Tensor([0.0, 1.0]))


def test_precision_context():
    assert nx.default_dtype() == np.float64
    with nx.use_precision("float32"):
        assert nx.tensor([1.0]).dtype == np.float32
    assert nx.tensor([1.0]).dtype == np.float64
    with pytest.raises(ParameterError):
        nx.resolve_dtype("float16")


def test_matmul_matches_loop_oracle(rng):
    a, b = rand(rng, 4, 3), rand(rng, 3, 5)
    np.testing.assert_allclose(nx.matmul(a, b).data, oracles.matmul(a.data, b.data), atol=1e-12)


def test_batched_matmul_with_shared_operand(rng):
    a, w = rand(rng, 2, 4, 3), rand(rng, 3, 5)
    out = nx.matmul(a, w)
    for i in range(2):
        np.testing.assert_allclose(out.data[i], oracles.matmul(a.data[i], w.data), atol=1e-12)
    left = nx.matmul(w.T, rand(rng, 2, 3, 6))
    assert left.shape == (2, 5, 6)


def test_matmul_shape_errors(rng):
    with pytest.raises(DimensionError):
        nx.matmul(rand(rng, 2, 3), rand(rng, 4, 2))
    with pytest.raises(DimensionError):
        nx.matmul(rand(rng, 2, 2, 3), rand(rng, 3, 3, 2))


def test_elementwise_broadcast_rule(rng):
    x, b = rand(rng, 2, 3, 4), rand(rng, 4)
    np.testing.assert_array_equal(nx.add(x, b).data, x.data + b.data)
    with pytest.raises(DimensionError):
        nx.add(x, rand(rng, 3, 1))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 7)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_rows_are_stochastic(x):
    p = nx.softmax_rows(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-6)
    logp = nx.log_softmax_rows(Tensor(x)).data
    np.testing.assert_allclose(np.exp(logp), p, atol=1e-12)


def test_softmax_matches_oracle_and_is_shift_stable():
    row = [1000.0, 1001.0, 999.0]
    np.testing.assert_allclose(nx.softmax_rows(Tensor([row])).data[0], oracles.softmax_row(row), atol=1e-12)


def test_relu_gradient_at_zero_is_zero():
    x = Tensor([-1.0, 0.0, 2.0])
    with GradTape() as tape:
        tape.watch(x, "x")
        y = nx.sum(nx.relu(x))
    g = nx.backward_grads(y, tape)["x"]
    np.testing.assert_array_equal(g.data, [0.0, 0.0, 1.0])


def test_linear_and_operators(rng):
    x, w, b = rand(rng, 3, 4), rand(rng, 4, 2), rand(rng, 2)
    np.testing.assert_allclose(nx.linear(x, w, b).data, x.data @ w.data + b.data)
    np.testing.assert_allclose((x @ w + b).data, nx.linear(x, w, b).data)
    np.testing.assert_allclose((-(x * 2.0) / 4.0).data, -x.data / 2.0)


def test_take_concat_reshape_roundtrip(rng):
    x = rand(rng, 2, 6)
    parts = [nx.take(x, 0, 2), nx.take(x, 2, 6)]
    np.testing.assert_array_equal(nx.concat(parts).data, x.data)
    assert nx.reshape(x, (3, 4)).shape == (3, 4)
    with pytest.raises(DimensionError):
        nx.take(x, 4, 8)


PRIMITIVES = {
    "add": lambda p: nx.sum(nx.square(nx.add(p["a"], p["b"]))),
    "sub": lambda p: nx.sum(nx.square(nx.sub(p["a"], p["b"]))),
    "mul": lambda p: nx.sum(nx.mul(p["a"], p["a"])),
    "exp_log": lambda p: nx.sum(nx.log(nx.exp(p["a"]) + 1.0)),
    "relu": lambda p: nx.sum(nx.square(nx.relu(p["a"]))),
    "mean_axis": lambda p: nx.sum(nx.square(nx.mean(p["a"], axis=0))),
    "transpose_matmul": lambda p: nx.sum(nx.square(nx.matmul(nx.transpose(p["a"]), p["b"]))),
    "softmax": lambda p: nx.sum(nx.mul(nx.softmax_rows(p["a"]), p["b"])),
    "log_softmax": lambda p: nx.sum(nx.mul(nx.log_softmax_rows(p["a"]), p["b"])),
    "take_concat": lambda p: nx.sum(nx.square(nx.concat([nx.take(p["a"], 1, 3), nx.take(p["b"], 0, 1)]))),
    "reshape": lambda p: nx.sum(nx.square(nx.matmul(nx.reshape(p["a"], (3, 4)), nx.reshape(p["b"], (4, 3))))),
    "broadcast_bias": lambda p: nx.sum(nx.square(nx.linear(p["a"], p["w"], p["c"]))),
    "batched_matmul": lambda p: nx.sum(nx.square(nx.matmul(nx.reshape(p["a"], (2, 2, 3)), nx.transpose(p["b"])))),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_match_finite_differences(name, rng):
    params = {"a": rand(rng, 4, 3), "b": rand(rng, 4, 3), "w": rand(rng, 3, 2), "c": rand(rng, 2)}
    if name == "relu":   # keep clear of the kink
        params["a"] = Tensor(np.sign(params["a"].data) * (0.1 + np.abs(params["a"].data)))
    errors = nx.gradcheck(PRIMITIVES[name], params)
    assert max(errors.values()) < 1e-4, errors


def test_unused_parameter_gets_zero_gradient(rng):
    a, b = rand(rng, 3), rand(rng, 3)
    with GradTape() as tape:
        tape.watch_all({"a": a, "b": b})
        loss = nx.sum(nx.square(a))
    g = nx.backward_grads(loss, tape)
    np.testing.assert_array_equal(g["b"].data, 0.0)
    np.testing.assert_allclose(g["a"].data, 2 * a.data)


def test_gradients_accumulate_over_reuse(rng):
    a = rand(rng, 3)
    with GradTape() as tape:
        tape.watch(a, "a")
        loss = nx.sum(nx.add(nx.mul(a, a), a))
    np.testing.assert_allclose(nx.backward_grads(loss, tape)["a"].data, 2 * a.data + 1)


def test_backward_needs_scalar(rng):
    a = rand(rng, 3)
    with GradTape() as tape:
        tape.watch(a, "a")
        y = nx.square(a)
    with pytest.raises(ContractError):
        nx.backward_grads(y, tape)


def test_dropout_modes(rng):
    x = Tensor(np.ones((200, 50)))
    assert nx.dropout(x, 0.3, "eval") is x
    y = nx.dropout(x, 0.3, "train", np.random.default_rng(1)).data
    assert set(np.unique(y)) <= {0.0, 1.0 / 0.7}
    assert abs(y.mean() - 1.0) < 0.02
    with pytest.raises(ParameterError):
        nx.dropout(x, 1.0, "train", rng)
    with pytest.raises(ParameterError):
        nx.dropout(x, 0.3, "train", None)


def test_adam_single_step():
    p = {"p": Tensor([1.0])}
    new, state = nx.adam_step(p, {"p": Tensor([1.0])}, AdamState(lr=0.001))
    assert state.step == 1
    assert new["p"].item() == pytest.approx(0.999, abs=1e-9)


def test_adam_matches_scalar_oracle():
    grads = [0.3, -1.2, 0.7, 2.0, -0.1]
    p = {"p": Tensor([0.5])}
    state = AdamState(lr=0.01)
    for g in grads:
        p, state = nx.adam_step(p, {"p": Tensor([g])}, state)
    assert p["p"].item() == pytest.approx(oracles.adam(0.5, grads, lr=0.01), abs=1e-12)


def test_adam_rejects_mismatch():
    with pytest.raises(DimensionError):
        nx.adam_step({"p": Tensor([1.0])}, {"q": Tensor([1.0])}, AdamState())
    with pytest.raises(DimensionError):
        nx.adam_step({"p": Tensor([1.0])}, {"p": Tensor([1.0, 2.0])}, AdamState())


def test_relative_error_floor():
    assert nx.relative_error(0.0, 0.0) == 0.0
    assert nx.relative_error(1.0, 1.0 + 1e-6) == pytest.approx(1e-6 / 2, rel=1e-3)
