import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unidyg import autograd as ag
from unidyg.autograd import Parameter, Tape, backward, grad_check
from unidyg.encodings import TimeEncoder
from unidyg.errors import DimensionError, ModeViolationError, TemporalOrderError
from unidyg.graph import Event, EventStream
from unidyg.state import (
    FrequencyDynamics,
    LinearDynamics,
    NodeState,
    StateStore,
    compute_message,
    flush_batch_updates,
    recompute_states,
    update_input_dim,
    update_state,
)

D_S, D_T, D_E = 6, 4, 2
IN_DIM = update_input_dim(D_S, D_T, D_E)


@pytest.fixture
def enc():
    return TimeEncoder(D_T)


def new_store():
    return StateStore(D_S, IN_DIM)


def dyn(seed=0):
    return FrequencyDynamics(IN_DIM, D_S, np.random.default_rng(seed))


def test_update_input_width():
    assert IN_DIM == D_S + (D_S + D_T + D_E) + D_T


def test_first_message_of_unseen_node(enc):
    e = Event(3, 4, 2.5, np.array([0.1, -0.2]))
    m = compute_message(e, new_store(), enc)
    np.testing.assert_array_equal(m, np.concatenate([np.zeros(D_S), enc(2.5), [0.1, -0.2]]))


def test_message_with_zero_gap(enc):
    store = new_store()
    S = np.linspace(0.1, 0.6, D_S)
    store.set([1], S[None], [3.0], np.zeros((1, IN_DIM)))
    m = compute_message(Event(1, 2, 3.0, np.zeros(D_E)), store, enc)
    np.testing.assert_array_equal(m, np.concatenate([S, np.ones(D_T), np.zeros(D_E)]))


def test_message_forbidden_in_dtdg(enc):
    with pytest.raises(ModeViolationError):
        compute_message(Event(0, 1, 1.0, np.zeros(D_E)), new_store(), enc, mode="dtdg")


def test_zero_weights_give_half(enc):
    d = FrequencyDynamics(IN_DIM, D_S, W_d=Parameter(np.zeros((2, 32))))
    out = update_state(NodeState(np.zeros(D_S)), np.ones(D_S + D_T + D_E), 1.0, np.zeros(0), d, enc)
    np.testing.assert_array_equal(out.S, np.full(D_S, 0.5))
    assert out.t_last == 1.0


def test_update_is_deterministic_and_ordered(enc):
    d = dyn()
    st0 = NodeState(np.full(D_S, 0.3), 2.0)
    m = np.arange(D_S + D_T + D_E) / 10
    a = update_state(st0, m, 4.0, np.zeros(0), d, enc)
    b = update_state(st0, m, 4.0, np.zeros(0), d, enc)
    assert np.array_equal(a.S, b.S)
    with pytest.raises(TemporalOrderError):
        update_state(st0, m, 1.0, np.zeros(0), d, enc)


def test_frequency_update_matches_numpy_fft(enc):
    d = dyn(3)
    x = np.random.default_rng(1).standard_normal(IN_DIM)
    W = d.W_d.value[0] + 1j * d.W_d.value[1]
    expect = 1 / (1 + np.exp(-np.fft.ifft(W * np.fft.fft(x, d.n)).real[:D_S]))
    np.testing.assert_allclose(d(x[None]).value[0], expect, atol=1e-12)


def test_dynamics_shape_checks():
    with pytest.raises(DimensionError):
        dyn()(np.zeros((1, IN_DIM + 1)))
    with pytest.raises(DimensionError):
        FrequencyDynamics(IN_DIM, D_S, W_d=Parameter(np.zeros((2, 8))))


def test_dynamics_grad_check():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, IN_DIM))
    w = rng.standard_normal((3, D_S))
    for _ in range(20):
        W0 = rng.standard_normal((2, 32)) * 0.3

        def fn(W):
            return ag.tsum(ag.mul(FrequencyDynamics(IN_DIM, D_S, W_d=W)(x), w))

        assert grad_check(fn, [W0]) < 1e-4


def test_linear_dynamics_is_sigmoid_of_matmul():
    d = LinearDynamics(IN_DIM, D_S, np.random.default_rng(0))
    x = np.random.default_rng(1).standard_normal((2, IN_DIM))
    np.testing.assert_allclose(d(x).value, 1 / (1 + np.exp(-x @ d.W.value)), atol=1e-14)


# -- store ------------------------------------------------------------------------

def test_unseen_read_does_not_mutate():
    store = new_store()
    cap = store.capacity
    st0 = store.get(10_000)
    assert np.all(st0.S == 0) and st0.t_last == 0.0 and store.capacity == cap
    S, t = store.gather([-1, 5, 99_999])
    assert np.all(S == 0) and np.all(t == 0)


def test_store_clock_never_decreases():
    store = new_store()
    store.set([2], np.ones((1, D_S)) * 0.5, [5.0], np.zeros((1, IN_DIM)))
    with pytest.raises(TemporalOrderError):
        store.set([2], np.ones((1, D_S)) * 0.5, [4.0], np.zeros((1, IN_DIM)))


def test_store_save_load(tmp_path):
    store = new_store()
    rng = np.random.default_rng(0)
    store.set([1, 40], rng.random((2, D_S)), [1.5, 2.5], rng.random((2, IN_DIM)))
    store.save(tmp_path / "s.npz")
    back = StateStore.load(tmp_path / "s.npz")
    for node in (1, 40, 3):
        a, b = store.get(node), back.get(node)
        assert np.array_equal(a.S, b.S) and a.t_last == b.t_last


# -- flush ---------------------------------------------------------------------------

def test_empty_batch_leaves_store(enc):
    store = new_store()
    before = store.copy()
    flush_batch_updates(store, EventStream.empty(D_E), dyn(), enc, "ctdg")
    assert np.array_equal(store.S, before.S) and np.array_equal(store.t_last, before.t_last)


def test_touched_node_clock_is_event_time(enc):
    store = new_store()
    flush_batch_updates(store, EventStream([0], [7], [3.25], np.zeros((1, D_E))), dyn(), enc, "ctdg")
    assert store.get(7).t_last == 3.25 and store.get(0).t_last == 3.25
    assert np.all((store.get(7).S > 0) & (store.get(7).S < 1))


def sequential_oracle(stream, d, enc, mode="ctdg"):
    """Event-by-event updates; both endpoints read their pre-event states."""
    states = {}
    for ev in stream:
        new = {}
        for node in (ev.src, ev.dst):
            st0 = states.get(node, NodeState(np.zeros(D_S), 0.0))
            if mode == "ctdg":
                m = np.concatenate([st0.S, enc(ev.t - st0.t_last), ev.edge_features])
            else:
                m = np.zeros(D_S + D_T + D_E)
            new[node] = update_state(st0, m, ev.t, np.zeros(0), d, enc)
        states.update(new)
    return states


@pytest.mark.parametrize("mode", ["ctdg", "dtdg"])
def test_three_batches_match_sequential_oracle(enc, mode):
    # each node at most once per batch
    src = [0, 2, 4, 1, 3, 5, 0, 3, 4]
    dst = [1, 3, 5, 2, 4, 0, 5, 1, 2]
    t = [1.0, 1.5, 2.0, 3.0, 3.5, 4.0, 5.0, 5.5, 6.0]
    feats = np.random.default_rng(0).standard_normal((9, D_E))
    stream = EventStream(src, dst, t, feats)
    d = dyn(1)
    store = new_store()
    for a in (0, 3, 6):
        flush_batch_updates(store, stream[a:a + 3], d, enc, mode)
    oracle = sequential_oracle(stream, d, enc, mode)
    for node, st0 in oracle.items():
        np.testing.assert_allclose(store.get(node).S, st0.S, atol=1e-10)
        assert store.get(node).t_last == st0.t_last


def test_repeated_node_keeps_latest_message(enc):
    # node 0 appears three times in one batch; only its last event counts
    stream = EventStream([0, 1, 0, 2, 3], [1, 0, 2, 0, 4], [1.0, 2.0, 2.0, 3.0, 4.0],
                         np.arange(10.0).reshape(5, 2))
    d = dyn(2)
    store = new_store()
    flush_batch_updates(store, stream, d, enc, "ctdg")
    last = {0: 3, 1: 1, 2: 3, 3: 4, 4: 4}
    for node, row in last.items():
        ev = stream[row:row + 1]
        m = np.concatenate([np.zeros(D_S), enc(ev.t[0]), ev.feats[0]])
        expect = update_state(NodeState(np.zeros(D_S)), m, ev.t[0], np.zeros(0), d, enc)
        np.testing.assert_allclose(store.get(node).S, expect.S, atol=1e-12)


def test_later_event_wins_equal_time_tie(enc):
    stream = EventStream([0, 0], [1, 2], [1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]])
    store = new_store()
    flush_batch_updates(store, stream, dyn(), enc, "ctdg")
    np.testing.assert_array_equal(store.inputs[0, 2 * D_S + D_T:2 * D_S + D_T + D_E], [0.0, 1.0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_states_bounded_and_clocks_monotone(seed):
    enc = TimeEncoder(D_T)
    rng = np.random.default_rng(seed)
    n = 60
    src = rng.integers(0, 8, n)
    dst = (src + rng.integers(1, 8, n)) % 8
    stream = EventStream(src, dst, np.sort(rng.uniform(0, 50, n)), rng.standard_normal((n, D_E)) * 5)
    store = new_store()
    d = dyn(seed % 7)
    prev = store.t_last.copy()
    for a in range(0, n, 7):
        flush_batch_updates(store, stream[a:a + 7], d, enc, "ctdg")
        assert np.all(store.t_last[: prev.size] >= prev)
        prev = store.t_last.copy()
    S = store.S[store.updated]
    assert np.all((S > 0) & (S < 1))


def test_recompute_states_matches_stored_and_carries_gradient(enc):
    store = new_store()
    d = dyn(4)
    flush_batch_updates(store, EventStream([0, 2], [1, 3], [1.0, 2.0], np.ones((2, D_E))), d, enc, "ctdg")
    ids = np.array([3, 9, 0, 3])
    with Tape() as tape:
        S = recompute_states(store, ids, d)
        loss = ag.tsum(S)
    np.testing.assert_allclose(S.value[[0, 2, 3]], store.S[[3, 0, 3]], atol=1e-14)
    assert np.all(S.value[1] == 0)
    backward(tape, loss)
    assert np.any(d.W_d.grad != 0)
