import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenpack.space import (
    PARAM_NAMES,
    ParamSpace,
    SpaceError,
    Sphere,
    from_physical,
    sphere_arrays,
    to_physical,
    vehicle_params,
)

SHARED = ParamSpace.shared()


def test_all_zero_maps_to_lower_bounds():
    phys = to_physical(np.zeros(7), SHARED)
    assert phys["v0"] == 25.0
    assert phys["alpha"] == 1.0
    assert phys["T"] == 0.05
    assert phys["delta_a_th"] == 0.0


def test_all_one_maps_to_upper_bounds():
    phys = to_physical(np.ones(7), SHARED)
    assert phys["T"] == 2.0
    assert phys["v0"] == 30.0
    assert phys["b"] == 4.0


def test_midpoint():
    assert to_physical(np.full(7, 0.5), SHARED)["p"] == 0.5


@pytest.mark.parametrize("v0, coord", [(25.0, 0.0), (30.0, 1.0), (27.5, 0.5)])
def test_from_physical_v0(v0, coord):
    params = to_physical(np.full(7, 0.5), SHARED)
    params["v0"] = v0
    assert from_physical(params, SHARED)[0] == coord


def test_dimension_mismatch():
    with pytest.raises(SpaceError):
        to_physical(np.zeros(3), SHARED)


def test_out_of_bounds_names_dimension():
    params = to_physical(np.full(7, 0.5), SHARED)
    params["T"] = 2.5
    with pytest.raises(SpaceError, match="'T'"):
        from_physical(params, SHARED)


def test_round_trip_1000_points():
    pts = np.random.default_rng(0).random((1000, 7))
    for x in pts:
        back = from_physical(to_physical(x, SHARED), SHARED)
        assert np.max(np.abs(back - x)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=7, max_size=7), st.integers(0, 6), st.floats(1e-6, 0.5))
def test_to_physical_strictly_increasing(x, dim, delta):
    x = np.array(x)
    y = x.copy()
    y[dim] = min(1.0, x[dim] + delta)
    if y[dim] == x[dim]:
        return
    name = PARAM_NAMES[dim]
    assert to_physical(y, SHARED)[name] > to_physical(x, SHARED)[name]


def test_per_vehicle_and_reduced():
    pv = ParamSpace.per_vehicle()
    assert pv.D == 35
    assert pv.names[7] == "sv2.v0"
    red = ParamSpace.reduced(["v0", "T"])
    assert red.D == 2
    assert red.fixed["alpha"] == 3.0
    rows = vehicle_params(to_physical([0.0, 1.0], red), red)
    assert len(rows) == 5 and rows[0]["v0"] == 25.0 and rows[0]["T"] == 2.0 and rows[0]["p"] == 0.5


def test_invalid_spaces():
    with pytest.raises(SpaceError):
        ParamSpace.reduced(["speed"])
    with pytest.raises(SpaceError):
        ParamSpace.shared((("v0", 30.0, 25.0),) + tuple((n, 0.0, 1.0) for n in PARAM_NAMES[1:]))


def test_sphere_validation_and_arrays():
    with pytest.raises(SpaceError):
        Sphere(np.zeros(3), 0.0)
    c, r = sphere_arrays([Sphere([0.1, 0.2], 0.04), Sphere([0.3, 0.4], 0.06)], 2)
    assert c.shape == (2, 2) and list(r) == [0.04, 0.06]
    c, r = sphere_arrays([], 3)
    assert c.shape == (0, 3)
