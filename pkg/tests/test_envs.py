import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evoflow.envs import (
    HypergridEnv,
    SeqEnv,
    load_reward_table,
)
from evoflow.errors import (
    ConfigError,
    DataError,
    OracleUnavailableError,
    TableParseError,
    UsageError,
)


def rational_reward(env, x):
    """Independent reference: interval membership in exact rational arithmetic."""
    from fractions import Fraction

    h = env.horizon - 1
    t = [abs(Fraction(c, h) - Fraction(1, 2)) for c in x]
    outer = all(Fraction(1, 4) < v <= Fraction(1, 2) for v in t)
    inner = all(Fraction(3, 10) < v <= Fraction(2, 5) for v in t)
    return env.r0 + env.r1 * outer + env.r2 * inner


# -- hypergrid reward ---------------------------------------------------------

def test_reward_hand_values_h20():
    env = HypergridEnv(dims=2, horizon=20, r0=1e-3)
    assert env.reward((0, 0)) == pytest.approx(0.501, abs=1e-15)
    assert env.reward((16, 16)) == pytest.approx(2.501, abs=1e-15)
    assert env.reward((10, 10)) == pytest.approx(0.001, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(h=st.integers(2, 24), d=st.integers(1, 3), seed=st.integers(0, 10**6))
def test_reward_matches_exact_rational_reference(h, d, seed):
    rng = np.random.default_rng(seed)
    env = HypergridEnv(dims=d, horizon=h, r0=1e-3)
    for _ in range(20):
        x = tuple(int(v) for v in rng.integers(0, h, size=d))
        assert env.reward(x) == pytest.approx(rational_reward(env, x), abs=1e-12)


def test_reward_batch_matches_scalar():
    env = HypergridEnv(dims=2, horizon=16, r0=1e-4)
    coords = np.array(list(env.enumerate_terminals()))
    batch = env.reward_batch(coords)
    for i, x in enumerate(env.enumerate_terminals()):
        assert batch[i] == env.reward(x)


def test_reward_positive_everywhere():
    env = HypergridEnv(dims=2, horizon=8, r0=1e-5)
    assert all(env.reward(x) > 0 for x in env.enumerate_terminals())


# -- masks / steps / parents --------------------------------------------------

def test_allowed_actions_boundary():
    env = HypergridEnv(dims=3, horizon=5, r0=1e-3)
    top = (4, 4, 4)
    mask = env.allowed_actions(top)
    assert list(mask) == [False, False, False, True]
    assert list(env.allowed_actions((0, 0, 0))) == [True] * 4


def test_step_semantics():
    env = HypergridEnv(dims=2, horizon=6, r0=1e-3)
    assert env.step((0, 0), 1) == ((0, 1), False)
    assert env.step((3, 5), env.stop_action) == ((3, 5), True)
    with pytest.raises(UsageError):
        env.step((3, 5), 1)  # coordinate at the edge


def test_parents_grid():
    env = HypergridEnv(dims=2, horizon=6, r0=1e-3)
    assert env.parents((0, 0)) == []
    assert set(env.parents((2, 3))) == {((1, 3), 0), ((2, 2), 1)}


def test_parent_child_duality_exhaustive():
    for d, h in [(1, 8), (2, 6), (3, 4)]:
        env = HypergridEnv(dims=d, horizon=h, r0=1e-3)
        for s in env.enumerate_terminals():
            for a in np.flatnonzero(env.allowed_actions(s)):
                a = int(a)
                if a == env.stop_action:
                    continue
                child, done = env.step(s, a)
                assert not done
                assert (s, a) in env.parents(child)
            for p, a in env.parents(s):
                assert env.step(p, a) == (s, False)


def test_trajectory_length_bound_and_acyclicity():
    env = HypergridEnv(dims=2, horizon=4, r0=1e-3)
    # any increment strictly raises the coordinate sum, so no state repeats
    s = env.initial_state()
    seen = {s}
    steps = 0
    while True:
        mask = env.allowed_actions(s)
        moves = [a for a in np.flatnonzero(mask) if a != env.stop_action]
        if not moves:
            steps += 1  # the forced stop
            break
        s, done = env.step(s, int(moves[0]))
        steps += 1
        assert s not in seen
        seen.add(s)
    assert steps <= env.max_traj_len


# -- enumeration / modes ------------------------------------------------------

def test_enumerate_counts():
    assert len(list(HypergridEnv(2, 3, 1e-3).enumerate_terminals())) == 9
    assert list(HypergridEnv(1, 2, 1e-3).enumerate_terminals()) == [(0,), (1,)]


def test_enumerate_cap():
    env = HypergridEnv(dims=6, horizon=20, r0=1e-3)
    with pytest.raises(OracleUnavailableError):
        env.enumerate_terminals(cap=1000)


def test_mode_set_h16():
    env = HypergridEnv(dims=2, horizon=16, r0=1e-3)
    assert env.mode_set() == {(2, 2), (2, 13), (13, 2), (13, 13)}


def test_mode_set_h20_band():
    env = HypergridEnv(dims=2, horizon=20, r0=1e-3)
    outer, inner = env.band_coords()
    assert inner == [2, 3, 16, 17]
    assert env.mode_set() == set(itertools.product([2, 3, 16, 17], repeat=2))
    rmax = max(env.reward(x) for x in env.enumerate_terminals())
    assert all(env.reward(x) == rmax for x in env.mode_set())


def test_mode_set_degenerate_h2():
    env = HypergridEnv(dims=1, horizon=2, r0=1e-3)
    # no state satisfies the inner band; the maximum ties over both states
    assert env.mode_set() == {(0,), (1,)}


def test_mode_set_matches_enumeration():
    for d, h in [(1, 16), (2, 8), (2, 20)]:
        env = HypergridEnv(dims=d, horizon=h, r0=1e-4)
        rewards = {x: env.reward(x) for x in env.enumerate_terminals()}
        rmax = max(rewards.values())
        assert env.mode_set() == {x for x, r in rewards.items() if r == rmax}


def test_region_of():
    env = HypergridEnv(dims=2, horizon=20, r0=1e-3)
    assert env.region_of((16, 16)) == (True, True)
    assert env.region_of((2, 17)) == (False, True)


# -- sequence env -------------------------------------------------------------

def test_seq_basic_actions():
    env = SeqEnv(("A", "B", "C"), 3, {"".join(p): 1.0 for p in itertools.product("ABC", repeat=3)})
    assert env.step("AB", env.prepend_action("C")) == ("CAB", True)
    assert env.step("AB", env.append_action("C")) == ("ABC", True)
    assert env.step("", env.prepend_action("B")) == ("B", False)


def test_seq_masks():
    env = SeqEnv(("A", "C"), 3, {"".join(p): 1.0 for p in itertools.product("AC", repeat=3)})
    assert env.allowed_actions("AC").all() and env.allowed_actions("AC").size == 4
    with pytest.raises(UsageError):
        env.allowed_actions("ACA")  # terminal


def test_seq_parents_shared_parent():
    env = SeqEnv(("A", "C"), 3, {"".join(p): 1.0 for p in itertools.product("AC", repeat=3)})
    edges = env.parents("AA")
    assert len(edges) == 2
    assert edges[0] == ("A", env.prepend_action("A"))
    assert edges[1] == ("A", env.append_action("A"))


def test_seq_parent_child_duality():
    env = SeqEnv(("A", "C"), 4, {"".join(p): 1.0 for p in itertools.product("AC", repeat=4)})
    states = [""]
    for l in range(1, 5):
        states.extend("".join(p) for p in itertools.product("AC", repeat=l))
    for s in states:
        for p, a in env.parents(s):
            assert env.step(p, a)[0] == s
        if len(s) < env.length:
            for a in range(env.n_actions):
                child, _ = env.step(s, a)
                assert (s, a) in env.parents(child)


def test_seq_reward_beta_and_floor():
    table = {"AAA": 0.7, "AAC": 0.0}
    all_keys = {"".join(p): 0.5 for p in itertools.product("AC", repeat=3)}
    all_keys.update(table)
    env = SeqEnv(("A", "C"), 3, all_keys, beta=3.0)
    assert env.reward("AAA") == pytest.approx(0.7**3)
    assert env.reward("AAC") == pytest.approx(1e-18)  # floored then cubed
    flat = SeqEnv(("A", "C"), 3, all_keys, beta=0.0)
    assert flat.reward("AAA") == 1.0


def test_seq_missing_sequence_is_hard_error():
    env = SeqEnv(("A", "C"), 2, {"AA": 1.0, "AC": 1.0, "CA": 1.0})
    with pytest.raises(DataError, match="CC"):
        env.reward("CC")


def test_seq_enumerate():
    env = SeqEnv(("A", "C"), 3, {"".join(p): 1.0 for p in itertools.product("AC", repeat=3)})
    terms = list(env.enumerate_terminals())
    assert len(terms) == 8
    assert len(set(terms)) == 8
    assert all(len(t) == 3 for t in terms)


def test_seq_mode_set(seq_ac3):
    modes = seq_ac3.mode_set()
    best = max(seq_ac3.reward(x) for x in seq_ac3.enumerate_terminals())
    assert all(seq_ac3.reward(x) == best for x in modes)


def test_seq_validation():
    with pytest.raises(ConfigError):
        SeqEnv((), 3, {})
    with pytest.raises(ConfigError):
        SeqEnv(("AB",), 3, {})
    with pytest.raises(ConfigError):
        SeqEnv(("A", "A"), 3, {})


# -- encodings ----------------------------------------------------------------

def test_grid_encode_example():
    env = HypergridEnv(dims=2, horizon=3, r0=1e-3)
    assert list(env.encode_state((1, 2))) == [0, 1, 0, 0, 0, 1]
    assert list(env.encode_state((0, 0))) == [1, 0, 0, 1, 0, 0]


def test_grid_encode_roundtrip():
    for d, h in [(1, 8), (2, 6), (3, 4)]:
        env = HypergridEnv(dims=d, horizon=h, r0=1e-3)
        for s in env.enumerate_terminals():
            assert env.decode_state(env.encode_state(s)) == s


def test_grid_encode_batch_matches():
    env = HypergridEnv(dims=2, horizon=5, r0=1e-3)
    coords = np.array(list(env.enumerate_terminals()))
    batch = env.encode_batch(coords)
    for i, s in enumerate(env.enumerate_terminals()):
        assert np.array_equal(batch[i], env.encode_state(s))


def test_seq_encode_roundtrip(seq_ac3):
    states = [""]
    for l in range(1, 4):
        states.extend("".join(p) for p in itertools.product("AC", repeat=l))
    for s in states:
        assert seq_ac3.decode_state(seq_ac3.encode_state(s)) == s


# -- reward table loading -----------------------------------------------------

def test_load_reward_table(tmp_path):
    p = tmp_path / "table.csv"
    p.write_text("sequence,reward\nACGT,0.7\nTTTT,1.25\n")
    table = load_reward_table(str(p))
    assert table == {"ACGT": 0.7, "TTTT": 1.25}


def test_load_reward_table_no_header(tmp_path):
    p = tmp_path / "table.csv"
    p.write_text("ACGT,0.7\n")
    assert load_reward_table(str(p)) == {"ACGT": 0.7}


def test_load_reward_table_effective_beta(tmp_path):
    p = tmp_path / "t.csv"
    rows = [f"{''.join(c)},0.5" for c in itertools.product("AC", repeat=2)]
    p.write_text("\n".join(rows) + "\nAC,0.7\n")
    with pytest.warns(UserWarning, match="duplicate"):
        table = load_reward_table(str(p))
    env = SeqEnv(("A", "C"), 2, table, beta=3.0)
    assert env.reward("AC") == pytest.approx(0.343)


def test_load_reward_table_malformed(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("AAAA,1.0\nbroken-line\n")
    with pytest.raises(TableParseError) as exc:
        load_reward_table(str(p))
    assert exc.value.lineno == 2

    p2 = tmp_path / "t2.csv"
    p2.write_text("AAAA,1.0\nCCCC,not-a-number\n")
    with pytest.raises(TableParseError) as exc2:
        load_reward_table(str(p2))
    assert exc2.value.lineno == 2
