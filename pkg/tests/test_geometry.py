import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from scipy.spatial.transform import Rotation

from conftest import THOROUGH
from dronessl.errors import InvalidConfig, InvalidMicIndex, InvalidStep
from dronessl.geometry import (ArrayGeometry, Direction, build_grid, cube_array, great_circle_distance,
                               pair_tdoas, random_directions, steering_vector, tdoa)

azimuths = st.floats(-180, 180, allow_nan=False)
elevations = st.floats(-90, 90, allow_nan=False)
directions = st.builds(Direction, azimuths, elevations)
LINE = ArrayGeometry(np.array([[0.05, 0, 0], [-0.05, 0, 0]]))


class TestDirection:
    def test_wraps_azimuth(self):
        assert Direction(180, 0).azimuth == -180
        assert Direction(190, 5).azimuth == pytest.approx(-170)
        assert Direction(-540, 0).azimuth == -180

    def test_rejects_bad_elevation(self):
        for el in (90.0001, -91, float("nan")):
            with pytest.raises(ValueError):
                Direction(0, el)

    @THOROUGH
    @given(directions)
    def test_unit_norm_and_round_trip(self, d):
        assert -180 <= d.azimuth < 180
        assert abs(np.linalg.norm(d.vector) - 1) < 1e-12
        back = Direction.from_vector(d.vector)
        assert great_circle_distance(back, d) < 1e-6


class TestGreatCircle:
    def test_examples(self):
        assert great_circle_distance(Direction(30, 20), Direction(30, 20)) == 0
        assert great_circle_distance(Direction(0, 0), Direction(0, 90)) == pytest.approx(90, abs=1e-12)
        assert great_circle_distance(Direction(45, 10), Direction(-135, -10)) == pytest.approx(180, abs=1e-12)

    def test_small_angles_are_accurate(self):
        # acos loses ~1e-8 rad here; the atan2 form keeps full precision
        d = great_circle_distance(Direction(0, 0), Direction(1e-7, 0))
        assert d == pytest.approx(1e-7, rel=1e-6)

    @THOROUGH
    @given(directions, directions, directions)
    def test_metric_axioms(self, a, b, c):
        ab, ba = great_circle_distance(a, b), great_circle_distance(b, a)
        assert 0 <= ab <= 180
        assert ab == pytest.approx(ba, abs=1e-9)
        assert great_circle_distance(a, a) < 1e-9
        assert great_circle_distance(a, c) <= ab + great_circle_distance(b, c) + 1e-9


class TestTdoa:
    def test_broadside_is_zero(self):
        assert tdoa(Direction(90, 0), LINE, 0, 1) == pytest.approx(0, abs=1e-18)

    def test_endfire_matches_point_source_oracle(self):
        assert tdoa(Direction(0, 0), LINE, 0, 1) == pytest.approx(0.1 / 343, rel=1e-12)
        src = 100.0 * Direction(0, 0).vector
        d = np.linalg.norm(LINE.mic_positions - src, axis=1)
        exact = (d[1] - d[0]) / 343  # j hears it later by this much
        assert abs(tdoa(Direction(0, 0), LINE, 0, 1) - exact) < 1e-7

    def test_invalid_indices(self, cube):
        for i, j in [(0, 8), (-1, 2), (3, 3)]:
            with pytest.raises(InvalidMicIndex):
                tdoa(Direction(0, 0), cube, i, j)

    @THOROUGH
    @given(directions, st.integers(0, 7), st.integers(0, 7))
    def test_antisymmetry_and_bound(self, d, i, j):
        assume(i != j)
        geom = cube_array()
        t = tdoa(d, geom, i, j)
        assert t + tdoa(d, geom, j, i) == pytest.approx(0, abs=1e-18)
        assert abs(t) <= geom.pair_distance(i, j) / geom.speed_of_sound * (1 + 1e-12)

    @THOROUGH
    @given(directions, st.integers(0, 2 ** 32 - 1))
    def test_rotation_invariance(self, d, seed):
        rot = Rotation.random(random_state=seed)
        geom = cube_array()
        rotated = ArrayGeometry(rot.apply(geom.mic_positions))
        d2 = Direction.from_vector(rot.apply(d.vector))
        a = pair_tdoas(d.vector[None], geom, geom.pairs())
        b = pair_tdoas(d2.vector[None], rotated, geom.pairs())
        assert np.max(np.abs(a - b)) < 1e-12


class TestSteering:
    def test_dc_is_all_ones(self, cube):
        np.testing.assert_array_equal(steering_vector(Direction(12, 34), cube, 0.0), np.ones(8))

    def test_reference_element(self, cube):
        for f in (10.0, 1000.0, 7777.0):
            assert steering_vector(Direction(-80, 10), cube, f)[0] == 1

    def test_phase_difference(self):
        a = steering_vector(Direction(0, 0), LINE, 1000.0)
        phase = np.angle(a[0] / a[1])  # element 1 lags by 2 pi f tau
        assert phase == pytest.approx(2 * np.pi * 1000 * 0.1 / 343, abs=1e-12)

    @THOROUGH
    @given(directions, st.floats(0, 22050))
    def test_unit_modulus(self, d, f):
        assert np.max(np.abs(np.abs(steering_vector(d, cube_array(), f)) - 1)) < 1e-12


class TestGrid:
    def test_counts(self):
        assert len(build_grid(90, 45)) == 20
        assert len(build_grid(1, 1)) == 65160
        assert len(build_grid(5, 5)) == 72 * 37

    def test_ordering_is_elevation_outer(self):
        g = build_grid(90, 45)
        assert list(g.elevations[:4]) == [-90] * 4
        assert list(g.azimuths[:4]) == [-180, -90, 0, 90]
        assert g.elevations[4] == -45

    def test_members_are_valid_directions(self, grid5):
        for d in grid5.directions:
            assert -180 <= d.azimuth < 180 and -90 <= d.elevation <= 90

    def test_partial_elevation_range(self):
        g = build_grid(10, 10, (0, 40))
        assert len(g) == 36 * 5
        assert g.elevations.min() == 0 and g.elevations.max() == 40

    def test_invalid_steps(self):
        for args in [(7, 5), (5, 7), (0, 5), (5, -1)]:
            with pytest.raises(InvalidStep):
                build_grid(*args)

    def test_within_and_nearest(self, grid5):
        d = Direction(12, 33)
        k = grid5.nearest(d)
        assert great_circle_distance(grid5[k], d) <= 5
        assert grid5.within(d, 10)[k]


class TestArray:
    def test_cube(self):
        g = cube_array()
        assert g.n_mics == 8 and len(g.pairs()) == 28
        assert np.allclose(np.abs(g.mic_positions), 0.05)

    def test_invalid(self):
        with pytest.raises(InvalidConfig):
            ArrayGeometry(np.zeros((1, 3)))
        with pytest.raises(InvalidConfig):
            ArrayGeometry(np.array([[0, 0, 0], [0, 0, 0.0]]))
        with pytest.raises(InvalidConfig):
            ArrayGeometry(np.array([[0, 0, 0], [1, 0, 0.0]]), speed_of_sound=0)


def test_random_directions_uniform():
    v = random_directions(np.random.default_rng(3), 10000)
    assert np.allclose(np.linalg.norm(v, axis=1), 1)
    assert np.linalg.norm(v.mean(axis=0)) < 0.05
