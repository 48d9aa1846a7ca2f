from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from onpg.env import (
    LinearMDPSpec,
    TabularMDPSpec,
    TrajectoryBatch,
    dumps_env,
    linear_to_tabular,
    load_env,
    loads_env,
    make_deterministic_tabular,
    make_gap_tabular,
    make_random_linear,
    make_random_tabular,
    sample_episode,
    sample_episodes,
    save_env,
    tabular_as_linear,
)
from onpg.errors import ConfigurationError, ValidationError
from onpg.oracle import start_action_gap
from onpg.policy import uniform_policy
from onpg.rng import StreamRegistry


def chain_env():
    P = np.zeros((2, 2, 1, 2))
    P[:, :, 0, 1] = 1.0
    return TabularMDPSpec(2, 1, 2, P, np.full((2, 2, 1), 0.5))


def test_deterministic_chain_trajectory():
    env = chain_env()
    pol = uniform_policy(2, 2, 1, 1.0)
    for seed in range(5):
        traj = sample_episode(env, pol, StreamRegistry(seed).stream("ep"))
        assert traj.steps == ((0, 0, 0.5, 1), (1, 0, 0.5, None))


def test_uniform_action_frequencies():
    env = TabularMDPSpec(1, 2, 1, np.ones((1, 1, 2, 1)), np.zeros((1, 1, 2)))
    batch = sample_episodes(env, uniform_policy(1, 1, 2, 1.0), 10_000, StreamRegistry(0).stream("freq"))
    assert abs(batch.actions.mean() - 0.5) <= 0.02


def test_bernoulli_reward_mean():
    env = TabularMDPSpec(1, 1, 1, np.ones((1, 1, 1, 1)), np.full((1, 1, 1), 0.3), reward_noise="bernoulli")
    batch = sample_episodes(env, uniform_policy(1, 1, 1, 1.0), 10_000, StreamRegistry(0).stream("bern"))
    assert set(np.unique(batch.rewards)) <= {0.0, 1.0}
    assert abs(batch.rewards.mean() - 0.3) <= 0.015


def test_single_episode_bernoulli_matches_mean():
    env = TabularMDPSpec(1, 1, 1, np.ones((1, 1, 1, 1)), np.full((1, 1, 1), 0.3), reward_noise="bernoulli")
    rng = StreamRegistry(1).stream("bern1")
    rewards = [sample_episode(env, uniform_policy(1, 1, 1, 1.0), rng).steps[0][2] for _ in range(10_000)]
    assert abs(np.mean(rewards) - 0.3) <= 0.015


def test_transition_frequencies_match_model():
    rng = StreamRegistry(3).stream("trans-env")
    env = make_random_tabular(3, 2, 3, rng)
    batch = sample_episodes(env, uniform_policy(3, 3, 2, 1.0), 50_000, StreamRegistry(3).stream("trans"))
    for h in range(env.H - 1):
        for s in range(env.S):
            for a in range(env.A):
                mask = (batch.states[:, h] == s) & (batch.actions[:, h] == a)
                if mask.sum() < 500:
                    continue
                freq = np.bincount(batch.next_states[mask, h], minlength=env.S) / mask.sum()
                np.testing.assert_allclose(freq, env.P[h, s, a], atol=0.02)


def test_sampling_is_deterministic():
    env = make_random_tabular(3, 3, 4, StreamRegistry(0).stream("det-env"))
    pol = uniform_policy(4, 3, 3, 1.0)
    a = sample_episodes(env, pol, 50, StreamRegistry(9).stream("d"))
    b = sample_episodes(env, pol, 50, StreamRegistry(9).stream("d"))
    for name in ("states", "actions", "rewards", "next_states"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    assert [sample_episode(env, pol, StreamRegistry(2).stream("e")) for _ in range(2)] == [
        sample_episode(env, pol, StreamRegistry(2).stream("e")) for _ in range(2)
    ]


def test_trajectory_shape_and_range():
    env = make_random_tabular(4, 3, 5, StreamRegistry(0).stream("range"))
    batch = sample_episodes(env, uniform_policy(5, 4, 3, 1.0), 100, StreamRegistry(0).stream("r"))
    for traj in batch:
        assert len(traj) == env.H
        assert all(0 <= s < env.S and 0 <= a < env.A for s, a, _, _ in traj)
        assert traj.steps[-1][3] is None
    back = TrajectoryBatch.from_trajectories(list(batch))
    np.testing.assert_array_equal(back.next_states, batch.next_states)


def test_policy_shape_mismatch_raises():
    env = make_random_tabular(2, 2, 3, StreamRegistry(0).stream("m"))
    with pytest.raises(ConfigurationError):
        sample_episodes(env, uniform_policy(2, 2, 2, 1.0), 5, StreamRegistry(0).stream("x"))
    with pytest.raises(ConfigurationError):
        sample_episode(env, uniform_policy(3, 2, 3, 1.0), StreamRegistry(0).stream("x"))


@pytest.mark.parametrize(
    "P_fix, R_fix",
    [
        (lambda P: P * 1.01, lambda R: R),
        (lambda P: P, lambda R: R + 1.5),
        (lambda P: P, lambda R: R - 1.0),
    ],
)
def test_tabular_validation(P_fix, R_fix):
    env = make_random_tabular(2, 2, 2, StreamRegistry(0).stream("v"))
    with pytest.raises(ValidationError):
        TabularMDPSpec(2, 2, 2, P_fix(env.P.copy()), R_fix(env.R.copy()))


def test_bad_start_state():
    env = make_random_tabular(2, 2, 2, StreamRegistry(0).stream("v"))
    with pytest.raises(ValidationError):
        TabularMDPSpec(2, 2, 2, env.P, env.R, s1=2)


def test_one_hot_round_trip_is_exact():
    env = make_random_tabular(3, 2, 3, StreamRegistry(0).stream("oh"))
    lin = tabular_as_linear(env)
    assert lin.d == 6
    back = linear_to_tabular(lin)
    np.testing.assert_array_equal(back.P, env.P)
    np.testing.assert_array_equal(back.R, env.R)


def test_one_hot_features():
    env = make_random_tabular(2, 2, 2, StreamRegistry(1).stream("oh2"))
    lin = tabular_as_linear(env)
    assert lin.d == 4
    np.testing.assert_array_equal(np.linalg.norm(lin.phi, axis=-1), 1.0)
    np.testing.assert_array_equal(np.einsum("hsad,hd->hsa", lin.phi, lin.w_star), env.R)


def test_scalar_feature_case():
    P = np.array([0.3, 0.7])
    R = 0.4
    lin = LinearMDPSpec(1, 1, 2, 1, np.ones((1, 2, 1, 1)), P.reshape(1, 2, 1), np.full((1, 1), R))
    tab = linear_to_tabular(lin)
    np.testing.assert_allclose(tab.P[0, :, 0], np.tile(P, (2, 1)))
    np.testing.assert_allclose(tab.R, R)


def test_single_latent_shares_one_row():
    lin = make_random_linear(1, 4, 3, 2, StreamRegistry(0).stream("d1"))
    P = lin.tabular.P
    for h in range(lin.H):
        np.testing.assert_allclose(P[h], np.broadcast_to(P[h, 0, 0], P[h].shape), atol=1e-12)


def test_generated_linear_models_are_valid():
    for seed in range(100):
        lin = make_random_linear(4, 6, 3, 3, StreamRegistry(seed).stream("lin"))
        assert lin.violations() == []
        assert (np.linalg.norm(lin.phi, axis=-1) <= 1 + 1e-12).all()
        assert (np.linalg.norm(lin.w_star, axis=-1) <= np.sqrt(lin.d) + 1e-12).all()
        P, R = lin.bilinear()
        assert (P >= -1e-12).all()
        np.testing.assert_allclose(P.sum(-1), 1.0, atol=1e-10)
        assert ((R >= 0) & (R <= 1)).all()
        np.testing.assert_allclose(lin.tabular.P.sum(-1), 1.0, atol=1e-12)


def test_generators_are_deterministic():
    a = make_random_linear(3, 4, 2, 2, StreamRegistry(4).stream("g"))
    b = make_random_linear(3, 4, 2, 2, StreamRegistry(4).stream("g"))
    for name in ("phi", "psi", "w_star"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_invalid_linear_is_reported():
    lin = make_random_linear(2, 3, 2, 2, StreamRegistry(0).stream("bad"))
    psi = lin.psi.copy()
    psi[0, 0] += 0.5
    bad = LinearMDPSpec(2, 2, 3, 2, lin.phi, psi, lin.w_star)
    assert bad.violations()
    with pytest.raises(ValidationError) as info:
        bad.validate()
    assert info.value.offending


def test_deterministic_generator():
    env = make_deterministic_tabular(4, 3, 3, StreamRegistry(0).stream("det"))
    assert set(np.unique(env.P)) <= {0.0, 1.0}


def test_gap_generator_respects_gap():
    env = make_gap_tabular(4, 3, 3, StreamRegistry(0).stream("gap"), gap=0.3)
    assert start_action_gap(env) >= 0.3


def test_text_round_trip(tmp_path):
    tab = make_random_tabular(3, 2, 2, StreamRegistry(0).stream("io"), reward_noise="bernoulli")
    lin = make_random_linear(2, 3, 2, 2, StreamRegistry(0).stream("io2"))
    for env in (tab, lin):
        path = tmp_path / "env.txt"
        save_env(env, path)
        back = load_env(path)
        assert type(back) is type(env)
        assert dumps_env(back) == dumps_env(env)
    text = dumps_env(tab)
    assert "kind = tabular" in text and "P[2,3,2,3] =" in text
    assert loads_env(text).reward_noise == tab.reward_noise


def test_missing_key_in_text():
    with pytest.raises(ValidationError):
        loads_env("kind = tabular\nS = 1\nA = 1\nH = 1\n")


@settings(max_examples=30, deadline=None)
@given(S=st.integers(1, 5), A=st.integers(1, 4), H=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_random_tabular_invariants(S, A, H, seed):
    env = make_random_tabular(S, A, H, StreamRegistry(seed).stream("prop"))
    np.testing.assert_allclose(env.P.sum(-1), 1.0, atol=1e-12)
    assert (env.P >= 0).all() and ((env.R >= 0) & (env.R <= 1)).all()
    with pytest.raises(ValueError):
        env.P[0, 0, 0, 0] = 0.5
