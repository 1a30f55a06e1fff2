import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acoustrap.core import TWO_PI, MediumConfig, TransducerArray, Vec3, wavelength, wavenumber
from acoustrap.errors import ConfigurationError, GeometryError
from acoustrap.hologram import (
    SM_BLOCK_SHAPE,
    FocusTrap,
    OctahedralTrap,
    PhaseHologram,
    SmAssignment,
    focus_phase,
    ib_baseline_hologram,
    make_focus_hologram,
    make_octahedral_hologram,
    multiplexed_hologram,
    octahedron_vertexes,
    sm_assignment,
    trap_anchor,
    wrap_phase,
)

MED = MediumConfig()
ARR = TransducerArray()
LAM = wavelength(MED, ARR)
CENTER = Vec3(25.0, 25.0, 40.0)


def arrival_residuals(array, hologram, point, medium):
    """Distance of each element's arrival phase from 0 (mod 2*pi)."""
    k = wavenumber(medium, array)
    d = np.linalg.norm(array.element_centers() - point.as_array(), axis=1)
    arrival = np.mod(hologram.phases.ravel() - k * d, TWO_PI)
    return np.minimum(arrival, TWO_PI - arrival)


class TestWrapPhase:
    @given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
    def test_range_half_open(self, x):
        w = float(wrap_phase(x))
        assert 0.0 <= w < TWO_PI

    @given(
        st.floats(min_value=-100.0, max_value=100.0, allow_nan=False),
        st.integers(min_value=-5, max_value=5),
    )
    def test_period_invariance(self, x, n):
        a = float(wrap_phase(x))
        b = float(wrap_phase(x + n * TWO_PI))
        delta = abs(a - b)
        assert min(delta, TWO_PI - delta) < 1e-9

    def test_vectorized(self):
        out = wrap_phase(np.array([-0.1, 0.0, TWO_PI, 7.0]))
        assert out.shape == (4,)
        assert np.all((out >= 0.0) & (out < TWO_PI))


class TestPhaseHologram:
    def test_rejects_out_of_range(self):
        with pytest.raises(ConfigurationError):
            PhaseHologram(np.full((2, 3), 7.0))
        with pytest.raises(ConfigurationError):
            PhaseHologram(np.full((2, 3), -0.1))

    def test_rejects_non_finite_and_non_2d(self):
        with pytest.raises(ConfigurationError):
            PhaseHologram(np.array([[0.0, np.nan], [0.0, 0.0]]))
        with pytest.raises(ConfigurationError):
            PhaseHologram(np.zeros(6))

    def test_from_radians_wraps(self):
        h = PhaseHologram.from_radians(np.full((2, 2), -np.pi))
        assert np.allclose(h.phases, np.pi)

    def test_immutability(self):
        h = PhaseHologram.from_radians(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            h.phases[0, 0] = 1.0


class TestTrapSpecs:
    def test_trap_anchor(self):
        assert trap_anchor(FocusTrap(CENTER)) == CENTER
        assert trap_anchor(OctahedralTrap(CENTER, 2.0)) == CENTER

    def test_octahedral_rejects_negative_diameter(self):
        with pytest.raises(ConfigurationError):
            OctahedralTrap(CENTER, -1.0)


class TestFocusPhase:
    @given(
        st.floats(min_value=0.0, max_value=49.0),
        st.floats(min_value=0.0, max_value=49.0),
        st.floats(min_value=5.0, max_value=55.0),
    )
    @settings(max_examples=50)
    def test_matches_propagation_delay(self, x, y, z):
        element = Vec3(10.5, 20.5, 0.0)
        focal = Vec3(x, y, z)
        d = element.distance_to(focal)
        expected = d * TWO_PI / LAM % TWO_PI
        got = focus_phase(element, focal, LAM)
        delta = abs(got - expected)
        assert min(delta, TWO_PI - delta) < 1e-9
        assert 0.0 <= got < TWO_PI


class TestFocusHologram:
    def test_arrival_phases_align(self):
        rng = np.random.default_rng(11)
        for _ in range(5):
            p = Vec3(*(rng.uniform([6.5, 10.0, 25.0], [43.5, 40.0, 55.0])))
            holo = make_focus_hologram(ARR, p, MED)
            assert arrival_residuals(ARR, holo, p, MED).max() < 1e-9

    def test_shape_matches_array(self):
        holo = make_focus_hologram(ARR, CENTER, MED)
        assert holo.phases.shape == (ARR.rows, ARR.cols)

    @pytest.mark.parametrize("z", [0.0, -5.0])
    def test_rejects_focus_at_or_below_array(self, z):
        with pytest.raises(GeometryError):
            make_focus_hologram(ARR, Vec3(25.0, 25.0, z), MED)


class TestOctahedronVertexes:
    def test_order_and_values(self):
        v = octahedron_vertexes(CENTER, 2.4)
        assert v[0] == Vec3(26.2, 25.0, 40.0)
        assert v[1] == Vec3(23.8, 25.0, 40.0)
        assert v[2] == Vec3(25.0, 26.2, 40.0)
        assert v[3] == Vec3(25.0, 23.8, 40.0)
        assert v[4] == Vec3(25.0, 25.0, 41.2)
        assert v[5] == Vec3(25.0, 25.0, 38.8)

    def test_rejects_negative(self):
        with pytest.raises(ConfigurationError):
            octahedron_vertexes(CENTER, -0.1)


class TestSmAssignment:
    def test_every_block_holds_each_group_once(self):
        g = sm_assignment(ARR).group
        br, bc = SM_BLOCK_SHAPE
        for bi in range(0, ARR.rows - br + 1, br):
            for bj in range(0, ARR.cols - bc + 1, bc):
                block = g[bi:bi + br, bj:bj + bc].ravel()
                assert sorted(block.tolist()) == [0, 1, 2, 3, 4, 5]

    def test_group_populations_balanced(self):
        counts = sm_assignment(ARR).counts()
        assert counts.sum() == ARR.rows * ARR.cols
        assert counts.max() - counts.min() <= ARR.rows // 2 + ARR.cols // 3

    def test_too_small_array_rejected(self):
        with pytest.raises(ConfigurationError):
            sm_assignment(TransducerArray(rows=1, cols=3))

    def test_assignment_validation(self):
        with pytest.raises(ConfigurationError):
            SmAssignment(np.array([[0, 6]]))
        with pytest.raises(ConfigurationError):
            SmAssignment(np.array([0, 1, 2]))


class TestMultiplexedHologram:
    def test_arrival_phase_at_own_vertex(self):
        holo = make_octahedral_hologram(ARR, CENTER, 2.4, MED)
        groups = sm_assignment(ARR).group.ravel()
        verts = octahedron_vertexes(CENTER, 2.4)
        for g, v in enumerate(verts):
            mask = groups == g
            k = wavenumber(MED, ARR)
            d = np.linalg.norm(ARR.element_centers()[mask] - v.as_array(), axis=1)
            arrival = np.mod(holo.phases.ravel()[mask] - k * d, TWO_PI)
            resid = np.minimum(arrival, TWO_PI - arrival)
            assert resid.max() < 1e-9

    def test_zero_diameter_degenerates_to_focus(self):
        octa = make_octahedral_hologram(ARR, CENTER, 0.0, MED)
        focus = make_focus_hologram(ARR, CENTER, MED)
        assert np.array_equal(octa.phases, focus.phases)

    def test_mirror_symmetry_for_on_axis_center(self):
        # flipping the aperture rows is the same as swapping the +x/-x
        # vertexes and flipping the assignment rows
        d = 2.0
        holo = make_octahedral_hologram(ARR, CENTER, d, MED)
        v = octahedron_vertexes(CENTER, d)
        swapped = [v[1], v[0], v[2], v[3], v[4], v[5]]
        assign = sm_assignment(ARR)
        mirrored = multiplexed_hologram(
            ARR, SmAssignment(assign.group[::-1, :]), swapped, MED
        )
        assert np.abs(holo.phases[::-1, :] - mirrored.phases).max() < 1e-12

    def test_vertex_below_plane_rejected(self):
        with pytest.raises(GeometryError):
            make_octahedral_hologram(ARR, Vec3(25.0, 25.0, 0.5), 2.4, MED)

    def test_target_count_must_cover_groups(self):
        with pytest.raises(ConfigurationError):
            multiplexed_hologram(ARR, sm_assignment(ARR), [CENTER], MED)

    def test_assignment_shape_must_match(self):
        with pytest.raises(ConfigurationError):
            multiplexed_hologram(
                ARR,
                SmAssignment(np.zeros((2, 3), dtype=int)),
                list(octahedron_vertexes(CENTER, 2.0)),
                MED,
            )


class TestIterativeBaseline:
    def test_single_target_reduces_to_focus(self):
        focus = make_focus_hologram(ARR, CENTER, MED)
        result = ib_baseline_hologram(ARR, [CENTER], MED, iterations=3)
        # identical up to one global phase constant
        z = np.exp(1j * (result.hologram.phases - focus.phases))
        resid = np.angle(z * np.exp(-1j * np.angle(z.sum())))
        assert np.abs(resid).max() < 1e-6
        # and the arrival phases themselves are mutually aligned
        spread = arrival_residuals(ARR, result.hologram, CENTER, MED)
        assert spread.max() - spread.min() < 1e-6

    def test_cost_history_monotone_for_six_targets(self):
        targets = list(octahedron_vertexes(CENTER, 2.4))
        result = ib_baseline_hologram(ARR, targets, MED, iterations=60)
        costs = np.array(result.cost_history)
        assert costs.shape == (60,)
        assert np.all(np.diff(costs) <= 1e-9)

    def test_cost_is_negative_target_amplitude_sum(self):
        from acoustrap.field import pressure_at_points

        result = ib_baseline_hologram(ARR, [CENTER], MED, iterations=5)
        p = pressure_at_points(ARR, result.hologram, CENTER.as_array()[None, :], MED)
        assert result.cost_history[-1] == pytest.approx(-np.abs(p).sum(), rel=1e-9)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            ib_baseline_hologram(ARR, [], MED)
        with pytest.raises(ConfigurationError):
            ib_baseline_hologram(ARR, [CENTER], MED, iterations=0)
        with pytest.raises(GeometryError):
            ib_baseline_hologram(ARR, [Vec3(25.0, 25.0, -1.0)], MED)
