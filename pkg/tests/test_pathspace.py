import math

import numpy as np
import pandas as pd
import pytest

from robusthedge.errors import InvalidPathError
from robusthedge.pathspace import (
    Path,
    concat,
    distance,
    inverse_time_change,
    kill_at,
    lifetime,
    path_from_frame,
    path_to_frame,
    time_change,
)

GRID = (0.0, 1.0, 2.0, 3.0)


def make_path(values, grid=GRID):
    return Path.from_sequences(grid, values)


def test_path_without_cemetery_lives_forever():
    life = lifetime(make_path([[0.0], [1.0], [2.0], [3.0]]))
    assert not life.is_finite
    assert life.index is None
    assert life.time == math.inf


def test_lifetime_is_first_cemetery_index():
    life = lifetime(make_path([[0.0], [0.5], None, None]))
    assert life.index == 2
    assert life.time == 2.0


@pytest.mark.parametrize(
    'grid,values,message',
    [
        ((0.0, 1.0), [[0.0], None, [1.0]], 'points but'),
        ((0.0, 1.0, 2.0), [[0.0], None, [1.0]], 'revives'),
        ((1.0, 2.0), [[0.0], [1.0]], 'start at 0'),
        ((0.0, 0.0), [[0.0], [1.0]], 'strictly increasing'),
        ((0.0, 1.0), [None, None], 'cemetery'),
        ((0.0, 1.0), [[0.0], [math.nan]], 'non-finite'),
    ],
)
def test_invalid_paths_are_rejected(grid, values, message):
    with pytest.raises(InvalidPathError, match=message):
        Path.from_sequences(grid, values)


def test_kill_at_cuts_at_first_grid_point_after_time():
    p = make_path([[0.0], [1.0], [2.0], [3.0]])
    killed = kill_at(p, 1.5)
    assert lifetime(killed).index == 2
    assert killed.values[:2] == p.values[:2]


def test_kill_at_is_idempotent():
    p = make_path([[0.0], [1.0], [2.0], [3.0]])
    assert kill_at(kill_at(p, 2.0), 2.0) == kill_at(p, 2.0)


def test_kill_before_existing_death_shortens_lifetime():
    p = make_path([[0.0], [1.0], [2.0], None])
    assert lifetime(kill_at(p, 1.0)).index == 1
    assert lifetime(kill_at(p, 5.0)).index == 3


def test_kill_rejects_negative_time():
    with pytest.raises(InvalidPathError):
        kill_at(make_path([[0.0], [1.0], [2.0], [3.0]]), -1.0)


def test_concat_with_constant_suffix_freezes_prefix():
    prefix = make_path([[0.0], [1.0], [2.0]], grid=(0.0, 1.0, 2.0))
    suffix = make_path([[0.0], [0.0]], grid=(0.0, 1.0))
    joined = concat(prefix, 1.0, suffix)
    assert joined.grid == (0.0, 1.0, 2.0)
    assert joined.values == ((0.0,), (1.0,), (1.0,))


def test_concat_carries_suffix_death():
    prefix = make_path([[0.0], [1.0], [2.0]], grid=(0.0, 1.0, 2.0))
    suffix = make_path([[0.0], None], grid=(0.0, 1.0))
    joined = concat(prefix, 1.0, suffix)
    assert lifetime(joined).time == 2.0


@pytest.mark.parametrize(
    'prefix_values,t,suffix_values,message',
    [
        ([[0.0], [1.0], [2.0]], 0.5, [[0.0], [0.0]], 'not on the prefix'),
        ([[0.0], None, None], 1.0, [[0.0], [0.0]], 'dead'),
        ([[0.0], [1.0], [2.0]], 1.0, [[1.0], [0.0]], 'origin'),
    ],
)
def test_concat_errors(prefix_values, t, suffix_values, message):
    prefix = make_path(prefix_values, grid=(0.0, 1.0, 2.0))
    suffix = make_path(suffix_values, grid=(0.0, 1.0))
    with pytest.raises(InvalidPathError, match=message):
        concat(prefix, t, suffix)


def test_paths_may_start_away_from_the_origin():
    spot = make_path([[100.0], [101.0], [99.0], [100.5]])
    assert not spot.is_canonical
    assert make_path([[0.0], [1.0], [2.0], [3.0]]).is_canonical
    assert kill_at(spot, 2.0).values[0] == (100.0,)


def test_kill_and_concat_commute_after_splice():
    prefix = make_path([[0.0], [1.0], [2.0]], grid=(0.0, 1.0, 2.0))
    suffix = make_path([[0.0], [0.5], [1.5]], grid=(0.0, 1.0, 2.0))
    joined = concat(prefix, 1.0, suffix)
    assert kill_at(joined, 2.0) == concat(prefix, 1.0, kill_at(suffix, 1.0))


def test_time_change_identity_for_infinite_lifetime():
    assert time_change(math.inf, 5.0) == 5.0


def test_time_change_finite_lifetime():
    assert time_change(2.0, math.log(2.0)) == pytest.approx(1.0)


def test_time_change_is_increasing_and_bounded():
    times = np.linspace(0.0, 20.0, 50)
    values = [time_change(3.0, t) for t in times]
    assert all(b > a for a, b in zip(values, values[1:]))
    assert max(values) < 3.0


def test_inverse_time_change_round_trip():
    for s in (0.0, 0.5, 1.9):
        assert time_change(2.0, inverse_time_change(2.0, s)) == (
            pytest.approx(s)
        )


@pytest.mark.parametrize('z,t', [(0.0, 1.0), (-1.0, 1.0), (1.0, -0.5)])
def test_time_change_rejects_bad_arguments(z, t):
    with pytest.raises(InvalidPathError):
        time_change(z, t)


def test_distance_between_immortal_paths_is_uniform_distance():
    p = make_path([[0.0], [1.0], [1.0], [1.0]])
    q = make_path([[0.0], [0.5], [1.0], [1.0]])
    assert distance(p, q) == pytest.approx(0.5)


def test_distance_lifetime_term():
    p = make_path([[0.0], [0.0], [0.0], [0.0]])
    q = make_path([[0.0], [0.0], None, None])
    assert distance(p, q) == pytest.approx(0.5)


def test_distance_truncates_uniform_part():
    p = make_path([[0.0], [10.0], [10.0], [10.0]])
    q = make_path([[0.0], [0.0], [0.0], [0.0]])
    assert distance(p, q) == 1.0


def _random_path(rng):
    values = [[0.0]] + rng.standard_normal((3, 1)).tolist()
    death = int(rng.integers(1, 5))
    if death < 4:
        values[death:] = [None] * (4 - death)
    return make_path(values)


@pytest.mark.parametrize('seed', [7, 11, 2024])
def test_metric_axioms_on_random_triples(seed):
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        p, q, r = (_random_path(rng) for _ in range(3))
        assert distance(p, p) == 0.0
        assert distance(p, q) == pytest.approx(distance(q, p), abs=1e-12)
        assert distance(p, r) <= distance(p, q) + distance(q, r) + 1e-12


def test_value_at_step_function():
    p = make_path([[0.0], [1.0], None, None])
    assert p.value_at(0.5) == (0.0,)
    assert p.value_at(1.0) == (1.0,)
    assert p.value_at(2.5) is None


def test_frame_codec(tmpdir):
    p = make_path([[0.0, 1.0], [2.0, 3.0], None, None])
    frame = path_to_frame(p)
    assert list(frame.columns) == [
        'time',
        'component_1',
        'component_2',
        'alive',
    ]
    filename = str(tmpdir.join('path.csv'))
    frame.to_csv(filename, index=False)
    assert path_from_frame(pd.read_csv(filename)) == p
