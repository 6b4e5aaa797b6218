"""Grid paths with a cemetery state.

A path is a right-continuous step function on a finite time grid.  The
cemetery state is stored as ``None``; once a path is dead it stays dead.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from robusthedge.errors import InvalidPathError

Point = Tuple[float, ...]
INFINITE = math.inf


@dataclass(frozen=True)
class Lifetime:
    # ``index`` is None when the path never dies.
    index: Optional[int]
    time: float = INFINITE

    @property
    def is_finite(self) -> bool:
        return self.index is not None


@dataclass(frozen=True)
class Path:
    grid: Tuple[float, ...]
    values: Tuple[Optional[Point], ...]

    def __post_init__(self) -> None:
        errors = _path_errors(self.grid, self.values)
        if errors:
            raise InvalidPathError('; '.join(errors))

    @classmethod
    def from_sequences(
        cls,
        grid: Sequence[float],
        values: Sequence[Optional[Sequence[float]]],
    ) -> 'Path':
        return cls(
            grid=tuple(float(t) for t in grid),
            values=tuple(
                None if v is None else tuple(float(x) for x in np.ravel(v))
                for v in values
            ),
        )

    @property
    def dim(self) -> int:
        first = self.values[0]
        assert first is not None
        return len(first)

    @property
    def is_canonical(self) -> bool:
        first = self.values[0]
        assert first is not None
        return all(x == 0.0 for x in first)

    def alive_at(self, index: int) -> bool:
        return self.values[index] is not None

    def value_at(self, t: float) -> Optional[Point]:
        """Evaluate the step function at time ``t`` (``None`` is dead)."""
        if t < 0:
            raise InvalidPathError(f"Time must be nonnegative, got {t}.")
        index = int(np.searchsorted(self.grid, t, side='right')) - 1
        return self.values[index]


def _path_errors(
    grid: Tuple[float, ...], values: Tuple[Optional[Point], ...]
) -> List[str]:
    errors = []
    if not grid:
        return ['A path needs at least one grid point.']
    if len(grid) != len(values):
        errors.append(
            f'Grid has {len(grid)} points but {len(values)} values given.'
        )
    if grid[0] != 0.0:
        errors.append(f'The grid must start at 0, got {grid[0]}.')
    if not all(math.isfinite(t) for t in grid):
        errors.append('Grid points must be finite.')
    if any(b <= a for a, b in zip(grid, grid[1:])):
        errors.append('The grid must be strictly increasing.')
    if values and values[0] is None:
        errors.append('A path cannot start in the cemetery state.')
    dead = False
    dims = set()
    for i, value in enumerate(values):
        if value is None:
            dead = True
            continue
        if dead:
            errors.append(f'Value {i} revives a path after the cemetery.')
        dims.add(len(value))
        if not all(math.isfinite(x) for x in value):
            errors.append(f'Value {i} has a non-finite component.')
    if len(dims) > 1:
        errors.append('All alive values must share one dimension.')
    return errors


def lifetime(p: Path) -> Lifetime:
    for i, value in enumerate(p.values):
        if value is None:
            return Lifetime(index=i, time=p.grid[i])
    return Lifetime(index=None)


def kill_at(p: Path, t: float) -> Path:
    if t < 0:
        raise InvalidPathError(f"Kill time must be nonnegative, got {t}.")
    values = tuple(
        None if s >= t else value for s, value in zip(p.grid, p.values)
    )
    return Path(grid=p.grid, values=values)


def concat(prefix: Path, t: float, suffix: Path) -> Path:
    index = _grid_index(prefix.grid, t)
    if index is None:
        raise InvalidPathError(f"Time {t} is not on the prefix grid.")
    anchor = prefix.values[index]
    if anchor is None:
        raise InvalidPathError(f"The prefix is dead at time {t}.")
    if not suffix.is_canonical:
        raise InvalidPathError('The suffix must start at the origin.')
    if suffix.dim != prefix.dim:
        raise InvalidPathError('Prefix and suffix dimensions differ.')
    shift = np.asarray(anchor)
    grid = prefix.grid[:index] + tuple(t + s for s in suffix.grid)
    tail = tuple(
        None if value is None else tuple(float(x) for x in shift + value)
        for value in suffix.values
    )
    return Path(grid=grid, values=prefix.values[:index] + tail)


def _grid_index(grid: Tuple[float, ...], t: float) -> Optional[int]:
    index = int(np.searchsorted(grid, t))
    for candidate in (index - 1, index):
        if 0 <= candidate < len(grid) and math.isclose(
            grid[candidate], t, rel_tol=0.0, abs_tol=1e-12
        ):
            return candidate
    return None


def time_change(z: float, t: float) -> float:
    if z <= 0:
        raise InvalidPathError(f"The lifetime parameter must be > 0: {z}")
    if t < 0:
        raise InvalidPathError(f"Time must be nonnegative, got {t}.")
    if math.isinf(z):
        return t
    return z * -math.expm1(-t)


def inverse_time_change(z: float, s: float) -> float:
    if z <= 0:
        raise InvalidPathError(f"The lifetime parameter must be > 0: {z}")
    if math.isinf(z):
        return s
    if not 0 <= s < z:
        raise InvalidPathError(f"{s} is outside the range [0, {z}).")
    return -math.log1p(-s / z)


def _time_changed_segment(p: Path) -> Tuple[np.ndarray, np.ndarray]:
    life = lifetime(p)
    n = len(p.grid) if life.index is None else life.index
    times = p.grid[:n]
    if life.is_finite:
        clock = np.array([inverse_time_change(life.time, s) for s in times])
    else:
        clock = np.asarray(times, dtype=float)
    return clock, np.asarray(p.values[:n], dtype=float)


def _inverse_lifetime(life: Lifetime) -> float:
    return 0.0 if not life.is_finite else 1.0 / life.time


def distance(p: Path, q: Path) -> float:
    """Lifetime distance plus the truncated uniform distance between
    the time-changed alive segments."""
    if p.dim != q.dim:
        raise InvalidPathError('Paths of different dimension.')
    lifetime_term = abs(
        _inverse_lifetime(lifetime(p)) - _inverse_lifetime(lifetime(q))
    )
    clock_p, values_p = _time_changed_segment(p)
    clock_q, values_q = _time_changed_segment(q)
    knots = np.union1d(clock_p, clock_q)
    index_p = np.searchsorted(clock_p, knots, side='right') - 1
    index_q = np.searchsorted(clock_q, knots, side='right') - 1
    gaps = np.linalg.norm(values_p[index_p] - values_q[index_q], axis=1)
    return lifetime_term + min(1.0, float(gaps.max()))


def path_to_frame(p: Path) -> pd.DataFrame:
    columns = [f'component_{i + 1}' for i in range(p.dim)]
    rows = []
    for t, value in zip(p.grid, p.values):
        row = {'time': t}
        if value is None:
            row.update({name: np.nan for name in columns})
            row['alive'] = 0
        else:
            row.update(dict(zip(columns, value)))
            row['alive'] = 1
        rows.append(row)
    return pd.DataFrame(rows, columns=['time', *columns, 'alive'])


def path_from_frame(frame: pd.DataFrame) -> Path:
    columns = [c for c in frame.columns if c.startswith('component_')]
    values: List[Optional[Point]] = []
    for _, row in frame.iterrows():
        if int(row['alive']) == 0:
            values.append(None)
        else:
            values.append(tuple(float(row[c]) for c in columns))
    return Path(
        grid=tuple(float(t) for t in frame['time']), values=tuple(values)
    )
