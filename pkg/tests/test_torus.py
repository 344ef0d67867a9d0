import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pvsplit import InvalidInput
from pvsplit.torus import (Configuration, TorusPoint, config_distance, distance_positions, min_displacement,
                           min_image, point_distance, uniform_configuration, wrap)

coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
unit = st.floats(0, 1, exclude_max=True, allow_nan=False)


def _configs(n):
    pos = st.lists(st.tuples(unit, unit), min_size=n, max_size=n)
    return pos.map(lambda p: Configuration(p, np.ones(n)))


@pytest.mark.parametrize("raw, expected", [
    ((0.3, 0.7), (0.3, 0.7)),
    ((1.25, -0.25), (0.25, 0.75)),
    ((3.0, -2.0), (0.0, 0.0)),
])
def test_wrap_examples(raw, expected):
    p = wrap(raw)
    assert (p.u, p.v) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("bad", [(np.nan, 0.1), (0.2, np.inf), (0.1, 0.2, 0.3)])
def test_wrap_rejects_bad_input(bad):
    with pytest.raises(InvalidInput):
        wrap(bad)


@given(coord, coord)
def test_wrap_lands_in_unit_square(u, v):
    p = wrap((u, v))
    assert 0.0 <= p.u < 1.0 and 0.0 <= p.v < 1.0
    assert min_image(p.u - u) == pytest.approx(0.0, abs=1e-12)


def test_torus_point_validates():
    with pytest.raises(InvalidInput):
        TorusPoint(1.0, 0.2)
    with pytest.raises(InvalidInput):
        TorusPoint(-1e-18, 0.2)


def test_min_displacement_examples():
    assert min_displacement((0.1, 0.1), (0.9, 0.1)) == pytest.approx([0.2, 0.0])
    assert np.all(min_displacement((0.4, 0.4), (0.4, 0.4)) == 0.0)
    assert tuple(min_displacement((0.6, 0.0), (0.1, 0.5))) == (0.5, 0.5)


@given(st.tuples(unit, unit), st.tuples(unit, unit))
def test_min_displacement_lifts_back(a, b):
    r = min_displacement(a, b)
    assert np.all(np.abs(r) <= 0.5)
    back = wrap(np.asarray(b) + r)
    assert point_distance(back, a) < 1e-12


@given(st.tuples(unit, unit), st.tuples(unit, unit))
def test_min_displacement_antisymmetric(a, b):
    r = min_displacement(a, b)
    if np.any(np.abs(r) == 0.5):
        return
    assert np.all(min_displacement(b, a) == -r)


def test_config_distance_examples():
    x = Configuration([[0.1, 0.2], [0.3, 0.4]], [1, -1])
    assert config_distance(x, x) == 0.0
    assert distance_positions([[0.0, 0.0]], [[0.9, 0.0]]) == pytest.approx(0.1)
    y = Configuration([[0.6, 0.7], [0.8, 0.9]], [1, -1])
    assert config_distance(x, y) == pytest.approx(1.0)


def test_config_distance_rejects_mismatch():
    x = Configuration([[0.1, 0.2], [0.3, 0.4]], [1, -1])
    with pytest.raises(InvalidInput):
        config_distance(x, Configuration([[0.1, 0.2], [0.3, 0.4], [0.5, 0.5]], [1, -1, 1]))
    with pytest.raises(InvalidInput):
        config_distance(x, x.with_intensities([1, 1]))


@settings(max_examples=200)
@given(_configs(3), _configs(3), _configs(3))
def test_config_distance_is_a_metric(x, y, z):
    dxy, dyz, dxz = config_distance(x, y), config_distance(y, z), config_distance(x, z)
    assert dxy >= 0 and dxy == pytest.approx(config_distance(y, x), abs=1e-15)
    assert dxz <= dxy + dyz + 1e-12


@given(_configs(2), _configs(2), st.lists(st.integers(-5, 5), min_size=4, max_size=4))
def test_config_distance_shift_invariant(x, y, shifts):
    s = np.asarray(shifts, dtype=float).reshape(2, 2)
    assert distance_positions(x.pos + s, y.pos + s) == pytest.approx(config_distance(x, y), abs=1e-12)


def test_configuration_validation():
    with pytest.raises(InvalidInput):
        Configuration([[0.1, 0.1]], [1])
    with pytest.raises(InvalidInput):
        Configuration([[0.1, 0.1], [0.2, 0.2]], [1, 0])
    with pytest.raises(InvalidInput):
        Configuration([[0.1, 0.1], [0.2, 0.2]], [1])
    with pytest.raises(InvalidInput):
        Configuration([[0.1, np.nan], [0.2, 0.2]], [1, 1])


def test_configuration_wraps_and_is_immutable():
    x = Configuration([[1.25, -0.25], [0.5, 0.5]], [1, 2])
    assert x.pos[0] == pytest.approx([0.25, 0.75])
    with pytest.raises(ValueError):
        x.pos[0, 0] = 0.3


def test_coincident_positions_allowed_but_not_admissible():
    x = Configuration([[0.2, 0.2], [0.2, 0.2], [0.7, 0.1]], [1, -1, 1])
    assert not x.is_admissible()
    assert Configuration([[0.2, 0.2], [0.3, 0.2]], [1, 1]).is_admissible()


@settings(max_examples=100)
@given(st.lists(st.tuples(unit, unit), min_size=2, max_size=6),
       st.floats(0.1, 10, allow_nan=False))
def test_json_round_trip_is_exact(pos, scale):
    xi = scale * (-1.0) ** np.arange(len(pos))
    x = Configuration(pos, xi)
    y = Configuration.from_json(x.to_json())
    assert np.array_equal(x.pos, y.pos) and np.array_equal(x.xi, y.xi)
    doc = json.loads(x.to_json())
    assert set(doc) == {"xi", "pos"}


def test_from_dict_rejects_malformed():
    with pytest.raises(InvalidInput):
        Configuration.from_dict({"xi": [1, 1]})


def test_uniform_configuration_respects_min_distance():
    rng = np.random.default_rng(4)
    x = uniform_configuration([1, -1, 1, -1, 1], rng, min_distance=0.2)
    d = [point_distance(a, b) for i, a in enumerate(x.pos) for b in x.pos[i + 1:]]
    assert min(d) >= 0.2
    with pytest.raises(InvalidInput):
        uniform_configuration(np.ones(40), rng, min_distance=0.4, max_tries=50)
