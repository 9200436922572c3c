import io

import numpy as np
import pytest

from trajsim.dataset import Dataset, PopularityAttribute, compute_popularity
from trajsim.engine import (
    CandidateExhaustedError,
    InteractionStep,
    make_rng,
    read_log,
    simulate,
    simulate_batch,
    trajectory_stream,
    write_log,
)
from trajsim.mf import MfModel, train_mf
from trajsim.rnn import init_rnn
from trajsim.users import ChoiceModel, FeedbackModel, SeedItem, SeedStrategy, UserModel, make_seed


def tiny_mf(n=5, d=2, mean=3.0):
    rng = np.random.default_rng(0)
    return MfModel(np.arange(1, n + 1), rng.normal(size=(n, d)), 0.5, mean)


def attr_for(items):
    items = np.asarray(items)
    return PopularityAttribute("raw_count", items.copy(), np.arange(len(items), dtype=float))


def lazy_user(items):
    return UserModel(ChoiceModel("lazy"), FeedbackModel("positive"), attr_for(items))


def test_single_step_zero_user_vector_takes_tie_break():
    m = tiny_mf(6)
    # a seed rated exactly at the mean folds in to p = 0, so every score ties
    seed = [SeedItem(1, 3.0, False)]
    traj = simulate(m, lazy_user(m.items), seed, T=1, k=3, rng_seed=0)
    assert len(traj.steps) == 1
    assert traj.steps[0].slate == (2, 3, 4)
    assert traj.steps[0].choice == 2


def test_repeat_runs_are_identical(small_mf, small_pct):
    um = UserModel(ChoiceModel("uniform"), FeedbackModel("positive"), small_pct)
    seed = [SeedItem(int(small_mf.items[5]), 1.0, True)]
    a = simulate(small_mf, um, seed, 20, 10, 99)
    b = simulate(small_mf, um, seed, 20, 10, 99)
    assert a == b
    c = simulate(small_mf, um, seed, 20, 10, 100)
    assert [s.choice for s in a.steps] != [s.choice for s in c.steps]


def test_exhaustion_hand_traced():
    m = tiny_mf(5)
    um = lazy_user(m.items)
    seed = [SeedItem(3, 1.0, True)]
    traj = simulate(m, um, seed, T=4, k=2, rng_seed=1)
    chosen = [s.choice for s in traj.steps]
    assert sorted(chosen) == [1, 2, 4, 5]
    assert len(traj.steps[-1].slate) == 1  # one candidate left
    with pytest.raises(CandidateExhaustedError) as exc:
        simulate(m, um, seed, T=5, k=2, rng_seed=1)
    assert exc.value.step == 5
    assert [s.choice for s in exc.value.partial.steps] == chosen


def test_model_errors_carry_step():
    class Broken:
        items = np.arange(1, 10)

        def user_scores(self, history):
            if len(history) > 2:
                raise FloatingPointError("boom")
            return np.zeros(9)

        def fingerprint(self):
            return "x"

    from trajsim.engine import SimulationError
    with pytest.raises(SimulationError) as exc:
        simulate(Broken(), lazy_user(np.arange(1, 10)), [SeedItem(1, 1.0, True)], 5, 2, 0)
    assert exc.value.step == 3 and len(exc.value.partial.steps) == 2


def test_unknown_seed_item():
    m = tiny_mf(5)
    with pytest.raises(KeyError):
        simulate(m, lazy_user(m.items), [SeedItem(42, 1.0, True)], 1, 1, 0)


def check_invariants(traj, k):
    seen = {s.choice for s in traj.seed}
    assert len(seen) == len(traj.seed)
    for s in traj.steps:
        assert s.choice in s.slate
        assert len(set(s.slate)) == len(s.slate) <= k
        assert not seen & set(s.slate)
        seen.add(s.choice)
    assert len(set(traj.choices)) == len(traj.choices)


def test_batch_invariants_and_freeze(small_data, small_mf, small_pct):
    before = small_mf.fingerprint()
    um = UserModel(ChoiceModel("ranked"), FeedbackModel("positive"), small_pct)
    res = simulate_batch(small_mf, um, SeedStrategy("real_history"), small_data, 25, 30, 10, 5)
    assert not res.failures and len(res.completed) == 25
    for traj in res.completed:
        check_invariants(traj, 10)
        assert len(traj.steps) == 30
    assert small_mf.fingerprint() == before


def test_batch_parallelism_is_deterministic(small_data, small_mf, small_raw):
    um = UserModel(ChoiceModel("uniform"), FeedbackModel("beta_preference", 1, 20.0), small_raw)
    args = (small_mf, um, SeedStrategy("random_single"), small_data, 3, 15, 5, 11)
    one = simulate_batch(*args, threads=1)
    three = simulate_batch(*args, threads=3)
    assert one.trajectories == three.trajectories


def test_batch_of_one_matches_simulate(small_data, small_mf, small_pct):
    um = UserModel(ChoiceModel("uniform"), FeedbackModel("positive"), small_pct)
    strategy = SeedStrategy("random_single")
    res = simulate_batch(small_mf, um, strategy, small_data, 1, 12, 10, 77)
    rng, _ = make_rng(trajectory_stream(77, 0))
    seed = make_seed(strategy, small_data, rng)
    direct = simulate(small_mf, um, seed, 12, 10, rng)
    assert res.trajectories[0].seed == direct.seed
    assert res.trajectories[0].steps == direct.steps


def test_real_history_batch_covers_every_user(small_data, small_mf, small_pct):
    um = UserModel(ChoiceModel("lazy"), FeedbackModel("positive"), small_pct)
    res = simulate_batch(small_mf, um, SeedStrategy("real_history"), small_data,
                         len(small_data.users), 1, 5, 0)
    assert sorted(t.provenance["seed_user"] for t in res.completed) == small_data.users.tolist()


def test_failures_are_collected():
    d = Dataset.from_records([(u, i, 4.0, 0) for u in range(1, 4) for i in range(1, 6) if i <= u + 1])
    m = train_mf(d, 2, 1.0, 2)
    um = UserModel(ChoiceModel("lazy"), FeedbackModel("positive"), compute_popularity(d))
    res = simulate_batch(m, um, SeedStrategy("real_history"), d, 3, 2, 2, 0)
    # 4 items; users 1, 2, 3 have 2, 1 and 0 unseen items
    assert set(res.failures) == {1, 2}
    assert "step 2" in res.failures[1] and "step 1" in res.failures[2]
    assert res.trajectories[1] is None and len(res.completed) == 1


def rank1_data():
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=40), rng.normal(size=60)
    rows = [(i + 1, j + 1, 3.0 + u[i] * v[j], 0) for i in range(40) for j in range(60)
            if rng.random() < 0.5]
    return Dataset.from_records(rows)


def test_feedback_sign_changes_trajectory():
    d = rank1_data()
    m = train_mf(d, 1, 0.1, 5)
    attr = compute_popularity(d, "raw_count")
    rho0 = float(np.median(attr.values))
    seed = [SeedItem(int(d.items[0]), 1.0, True)]
    trajs = []
    for beta in (1, -1):
        um = UserModel(ChoiceModel("uniform"), FeedbackModel("beta_preference", beta, rho0), attr)
        trajs.append(simulate(m, um, seed, 30, 5, 123))
    assert [s.choice for s in trajs[0].steps] != [s.choice for s in trajs[1].steps]


def test_rnn_uses_choice_sequence_only():
    m = init_rnn(np.arange(1, 30), 4, 3, 0)
    hist_a = [InteractionStep(0, None, 5, 1.0), InteractionStep(1, (5, 6), 6, 1.0)]
    hist_b = [InteractionStep(0, None, 5, -1.0), InteractionStep(1, (6, 7), 6, 5.0, False)]
    assert np.array_equal(m.user_scores(hist_a), m.user_scores(hist_b))


def test_log_round_trip(small_data, small_mf, small_pct):
    um = UserModel(ChoiceModel("uniform"), FeedbackModel("positive"), small_pct)
    res = simulate_batch(small_mf, um, SeedStrategy("random_single"), small_data, 3, 4, 3, 1)
    buf = io.StringIO()
    assert write_log(res.completed, small_pct, buf) == 3
    lines = buf.getvalue().splitlines()
    assert len(lines) == 3 * (1 + 4)
    back = read_log(io.StringIO(buf.getvalue()))
    for a, b in zip(res.completed, back):
        assert a.seed == b.seed and a.steps == b.steps
