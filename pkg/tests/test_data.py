import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biasorder.data import (
    CsvFormatError, Dataset, IntegratorConfig, Normalizer, PairSet, TrajectorySet, integrate_robertson,
    load_dataset_csv, load_trajectories_csv, make_sin_dataset, make_stiff_ode_set, random_split,
    relative_l2_error, robertson_ic, robertson_rhs, rollout, rollout_csv, save_dataset_csv,
    save_trajectories_csv, trajectory_to_pairs,
)
from biasorder.network import NetworkSpec, Params, flatten


def test_sin_grid_and_targets():
    ds = make_sin_dataset()
    assert len(ds) == 1000
    assert ds.inputs[0, 0] == 0.0 and ds.inputs[-1, 0] == 2 * math.pi
    np.testing.assert_array_equal(ds.targets[:, 0], np.sin(ds.inputs[:, 0]))
    assert [ds.split[k].size for k in ("train", "validation", "test")] == [400, 200, 400]


def test_sin_split_is_seeded():
    a, b, c = make_sin_dataset(seed=3), make_sin_dataset(seed=3), make_sin_dataset(seed=4)
    assert all(np.array_equal(a.split[k], b.split[k]) for k in a.split)
    assert not np.array_equal(a.split["train"], c.split["train"])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 200), data=st.data())
def test_random_split_partitions(seed, n, data):
    a = data.draw(st.integers(0, n))
    b = data.draw(st.integers(0, n - a))
    parts = random_split(n, (a, b, n - a - b), seed)
    allidx = np.concatenate(list(parts.values()))
    assert np.array_equal(np.sort(allidx), np.arange(n))


def test_split_sizes_must_sum():
    with pytest.raises(ValueError):
        random_split(10, (5, 5, 1), 0)


def test_dataset_rejects_overlapping_split():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 1)), np.zeros((3, 1)), {"train": [0, 1], "validation": [1, 2]})


# -- Robertson ---------------------------------------------------------------------

@pytest.fixture(scope="module")
def robertson_set():
    return make_stiff_ode_set([robertson_ic(f) for f in (1.0, 0.8, 0.6)])


def test_rhs_conserves_mass():
    rng = np.random.default_rng(0)
    for _ in range(20):
        y = rng.uniform(0, 1, 3)
        assert abs(np.sum(robertson_rhs(0.0, y))) <= 1e-9 * (1 + np.max(np.abs(robertson_rhs(0.0, y))))


def test_trajectories_conserve_mass_and_stay_bounded(robertson_set):
    for tr in robertson_set.trajectories:
        assert np.max(np.abs(tr.states.sum(axis=1) - 1.0)) <= 1e-8
        assert np.all(tr.states >= -1e-8) and np.all(tr.states <= 1 + 1e-8)


def test_initial_state_is_exact(robertson_set):
    for f, tr in zip((1.0, 0.8, 0.6), robertson_set.trajectories):
        assert np.array_equal(tr.states[0], [f, 0.0, 1.0 - f])
        assert tr.t[0] == 0.0


def test_time_grid():
    t = IntegratorConfig().time_grid()
    assert t.size == 41 and t[0] == 0.0
    assert t[1] == pytest.approx(1e-6) and t[-1] == pytest.approx(1e5)


def test_tighter_tolerances_agree(robertson_set):
    loose = robertson_set.trajectories[0]
    tight = integrate_robertson(loose.states[0], IntegratorConfig(rtol=5e-11, atol=5e-15))
    scale = np.max(np.abs(tight.states), axis=0)
    assert np.all(np.max(np.abs(loose.states - tight.states), axis=0) / scale <= 1e-6)


def test_known_early_behaviour(robertson_set):
    # y2 rises quickly to a quasi-steady value near 3.6e-5 for the pure-reactant start
    tr = robertson_set.trajectories[0]
    assert 3e-5 < tr.states[:, 1].max() < 4e-5
    assert tr.states[-1, 0] < 0.05


def test_invalid_initial_condition():
    with pytest.raises(ValueError):
        make_stiff_ode_set([[1.0, -0.1, 0.1]])


def test_trajectory_json_round_trip(robertson_set):
    back = TrajectorySet.from_json(robertson_set.to_json())
    for a, b in zip(robertson_set.trajectories, back.trajectories):
        assert a.name == b.name and np.array_equal(a.t, b.t) and np.array_equal(a.states, b.states)


# -- pairs, normalization and rollout ----------------------------------------------------

def test_pair_counts_and_ranges(robertson_set):
    pairs = trajectory_to_pairs(robertson_set, seed=0)
    assert len(pairs.datasets) == 3
    ds = pairs.datasets[0]
    assert len(ds) == 3 * 40
    assert ds.split["validation"].size == 24 and ds.split["test"].size == 0
    assert ds.inputs.shape[1] == 4
    assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0 + 1e-12
    for q, d in enumerate(pairs.datasets):
        assert np.array_equal(d.inputs, ds.inputs)
        assert np.array_equal(d.split["train"], ds.split["train"])


def test_pairs_without_time_feature(robertson_set):
    pairs = trajectory_to_pairs(robertson_set, time_feature=False)
    assert pairs.datasets[0].inputs.shape[1] == 3 and pairs.time_norm is None


def test_pair_targets_are_next_states(robertson_set):
    pairs = trajectory_to_pairs(robertson_set, val_fraction=0.0)
    tr = robertson_set.trajectories[0]
    y1_next = pairs.state_norm.denormalize(np.column_stack([d.targets[:, 0] for d in pairs.datasets]))[:40]
    np.testing.assert_allclose(y1_next, tr.states[1:], rtol=1e-12, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(1e-12, 1e6))
def test_normalizer_round_trip_and_monotone(seed, scale):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(20, 3)) * scale
    nm = Normalizer.fit(data)
    z = nm.normalize(data)
    assert z.min() >= -1e-12 and z.max() <= 1 + 1e-12
    np.testing.assert_allclose(nm.denormalize(z), data, rtol=1e-9, atol=1e-9 * scale)
    order = np.argsort(data[:, 0])
    assert np.all(np.diff(z[order, 0]) >= 0)


def test_normalizer_constant_column():
    nm = Normalizer.fit(np.array([[2.0], [2.0]]))
    assert np.array_equal(nm.normalize([[2.0]]), [[0.0]])


def _copy_net(n_in, q):
    """ReLU net returning its q-th (nonnegative) input unchanged."""
    spec = NetworkSpec((n_in, 1, 1), "relu", 1.0, "zero")
    W0 = np.zeros((1, n_in))
    W0[0, q] = 1.0
    return spec, flatten(Params([W0, np.ones((1, 1))], [np.zeros(1)]))


def test_rollout_base_case(robertson_set):
    pairs = trajectory_to_pairs(robertson_set)
    nets = [_copy_net(4, q) for q in range(3)]
    ro = rollout(nets, pairs, [0.7, 0.0, 0.3], [0.0])
    assert ro.completed and ro.states.shape == (1, 3)
    assert np.array_equal(ro.states[0], [0.7, 0.0, 0.3])


def test_rollout_with_copying_networks_holds_state(robertson_set):
    pairs = trajectory_to_pairs(robertson_set)
    nets = [_copy_net(4, q) for q in range(3)]
    ro = rollout(nets, pairs, [0.7, 0.0, 0.3], pairs.times)
    assert ro.completed and ro.states.shape == (41, 3)
    np.testing.assert_allclose(ro.states, np.tile([0.7, 0.0, 0.3], (41, 1)), rtol=0, atol=1e-15)
    text = rollout_csv(ro, pairs.quantities)
    assert text.splitlines()[0] == "t,pred_y1,pred_y2,pred_y3" and len(text.splitlines()) == 42


def test_rollout_stops_on_non_finite(robertson_set):
    pairs = trajectory_to_pairs(robertson_set)
    spec, theta = _copy_net(4, 0)
    bad = theta.copy()
    bad[-1] = np.inf
    ro = rollout([(spec, bad), (spec, theta), (spec, theta)], pairs, [0.7, 0.0, 0.3], pairs.times)
    assert not ro.completed and ro.failed_step == 1 and ro.states.shape == (1, 3)


def test_rollout_needs_one_net_per_quantity(robertson_set):
    pairs = trajectory_to_pairs(robertson_set)
    with pytest.raises(ValueError):
        rollout([_copy_net(4, 0)], pairs, [1.0, 0.0, 0.0], pairs.times)


def test_pair_meta_round_trip(robertson_set):
    pairs = trajectory_to_pairs(robertson_set)
    back = PairSet.from_meta(pairs.meta())
    x = np.array([0.5, 1e-5, 0.5])
    np.testing.assert_array_equal(back.features(x, 10.0), pairs.features(x, 10.0))
    assert np.array_equal(back.times, pairs.times)


def test_relative_error_toy():
    assert relative_l2_error([1.0, 2.0, 3.0], [1.0, 2.0, 4.0]) == pytest.approx(1 / math.sqrt(21))
    assert relative_l2_error([0.0], [0.0]) == 0.0


# -- CSV -------------------------------------------------------------------------------

def test_dataset_csv_round_trip(tmp_path):
    ds = make_sin_dataset(50, split=(30, 10, 10), seed=2)
    path = tmp_path / "d.csv"
    save_dataset_csv(ds, path)
    back = load_dataset_csv(path)
    assert np.array_equal(back.inputs, ds.inputs) and np.array_equal(back.targets, ds.targets)
    assert all(np.array_equal(back.split[k], ds.split[k]) for k in ds.split)
    assert back.input_names == ["x"] and back.target_names == ["sin_x"]


def test_csv_scientific_notation_and_random_split(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1e-3,2.5E+2\n-4e0,0\n3,1\n4,1\n5,1\n")
    ds = load_dataset_csv(path, ["a"], ["b"], split=(0.6, 0.4, 0.0), seed=0)
    assert ds.inputs[0, 0] == 1e-3 and ds.targets[0, 0] == 250.0
    assert ds.split["train"].size == 3 and ds.split["validation"].size == 2


def test_csv_missing_column(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(CsvFormatError, match="missing column 'c'"):
        load_dataset_csv(path, ["a"], ["c"])


def test_csv_bad_number_reports_line(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("in:x,out:y\n1,2\n3,oops\n")
    with pytest.raises(CsvFormatError, match=r":3: column 'out:y'"):
        load_dataset_csv(path)


def test_trajectory_csv_round_trip(tmp_path, robertson_set):
    path = tmp_path / "t.csv"
    save_trajectories_csv(robertson_set, path)
    back = load_trajectories_csv(path)
    assert back.quantities == ["y1", "y2", "y3"]
    for a, b in zip(robertson_set.trajectories, back.trajectories):
        assert np.array_equal(a.states, b.states) and np.array_equal(a.t, b.t)
