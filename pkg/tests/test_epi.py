import numpy as np
import pytest

from lfgen.core import GridGeometry, LightField4D
from lfgen.epi import (
    Epi,
    correspondence_set,
    epi_structure_loss,
    estimate_slopes,
    extract_epi,
    sample_subpixel,
    slopes_from_tensor,
    structure_tensor,
    synthesize_epi,
)
from lfgen.synthlf import SceneSpec, generate_scene, render_ground_truth, _value_noise


def noise_row(S, seed=3):
    return _value_noise(np.random.default_rng(seed), 1, S)[0]


class TestExtractEpi:
    def test_single_angular_row_equals_image_row(self):
        arr = np.random.default_rng(0).random((1, 1, 6, 8, 3))
        lf = LightField4D.from_array(arr)
        e = extract_epi(lf, 3, 0, "horizontal")
        assert e.shape == (1, 8)
        np.testing.assert_array_equal(e.pixels[0], arr[0, 0, 3])

    def test_constant_lightfield_gives_identical_rows(self):
        view = np.random.default_rng(1).random((6, 8, 3))
        arr = np.broadcast_to(view, (3, 3, 6, 8, 3)).copy()
        lf = LightField4D.from_array(arr)
        for axis, fs in (("horizontal", 2), ("vertical", 5)):
            e = extract_epi(lf, fs, 1, axis)
            for a in range(3):
                np.testing.assert_array_equal(e.pixels[a], e.pixels[0])

    def test_vertical_slice_layout(self):
        arr = np.random.default_rng(2).random((4, 3, 6, 8, 3))
        lf = LightField4D.from_array(arr)
        e = extract_epi(lf, 5, 2, "vertical")
        assert e.shape == (4, 6)
        np.testing.assert_array_equal(e.pixels[1], arr[1, 2, :, 5])

    def test_out_of_range(self):
        lf = LightField4D.from_array(np.zeros((2, 2, 4, 4, 3)))
        with pytest.raises(IndexError):
            extract_epi(lf, 4, 0, "horizontal")


class TestCorrespondenceSet:
    def test_zero_disparity(self):
        cs = correspondence_set(3.0, 1.0, 0.0, range(4))
        assert all(x == 3.0 for x, _ in cs.entries)

    def test_unit_slope(self):
        cs = correspondence_set(2.0, 0.0, 1.0, range(3))
        assert cs.entries == ((2.0, 0), (3.0, 1), (4.0, 2))

    def test_subpixel_line(self):
        cs = correspondence_set(1.0, 1.0, -0.5, range(3))
        assert cs.entries == ((1.5, 0), (1.0, 1), (0.5, 2))


class TestSampleSubpixel:
    def test_integer_exact(self):
        row = np.random.default_rng(0).random((8, 3))
        np.testing.assert_array_equal(sample_subpixel(row, 3.0), row[3])

    def test_midpoint(self):
        row = np.array([[0.0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0], [1, 1, 1]])
        np.testing.assert_allclose(sample_subpixel(row, 3.5), [0.5, 0.5, 0.5])

    def test_linear_ramp_exact(self):
        S = 32
        row = np.linspace(0, 1, S)[:, None] * np.ones(3)
        xs = np.linspace(0, S - 1, 301)
        got = sample_subpixel(row, xs)
        want = (xs / (S - 1))[:, None] * np.ones(3)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_out_of_range_errors_by_default(self):
        row = np.zeros((4, 3))
        with pytest.raises(ValueError):
            sample_subpixel(row, -0.1)
        np.testing.assert_array_equal(sample_subpixel(row, -0.1, clamp=True), row[0])


class TestSynthesizeEpi:
    def test_zero_disparity_copies_row(self):
        row = noise_row(32)
        e, holes = synthesize_epi(row, np.zeros(32), A=5, u0=2)
        assert not holes.bits.any()
        for a in range(5):
            np.testing.assert_array_equal(e.pixels[a], row)

    def test_unit_disparity_translates(self):
        row = noise_row(32)
        e, holes = synthesize_epi(row, np.ones(32), A=3, u0=0)
        for u in range(3):
            np.testing.assert_allclose(e.pixels[u, u:], row[: 32 - u], atol=1e-12)
            assert holes.bits[u, :u].all()
            assert not holes.bits[u, u:].any()

    def test_source_row_bit_exact(self):
        row = noise_row(32, seed=9)
        disp = np.random.default_rng(4).uniform(-2, 2, 32)
        e, holes = synthesize_epi(row, disp, A=7, u0=3)
        np.testing.assert_array_equal(e.pixels[3], row)
        assert not holes.bits[3].any()

    def test_occlusion_dominance(self):
        # fg pixel d=2 at x=2 over bg d=0, A=2, u0=0
        row = np.zeros((8, 3))
        row[2] = [1.0, 0.0, 0.0]
        disp = np.zeros(8)
        disp[2] = 2.0
        e, holes = synthesize_epi(row, disp, A=2, u0=0)
        np.testing.assert_array_equal(e.pixels[1, 4], [1.0, 0.0, 0.0])  # fg overwrites bg
        assert holes.bits[1, 2]  # vacated position is a hole

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            synthesize_epi(np.zeros((4, 3)), np.zeros(5), A=2, u0=0)


class TestStructureTensor:
    def test_constant_epi_zero_tensor(self):
        e = Epi(pixels=np.full((9, 32, 3), 0.5))
        st = structure_tensor(e)
        assert np.all(st.Jxx == 0) and np.all(st.Jxu == 0) and np.all(st.Juu == 0)
        sf = slopes_from_tensor(st)
        assert np.all(sf.coherence == 0)

    def test_vertical_stripes(self):
        xs = np.arange(48)
        pattern = 0.5 + 0.4 * np.sin(xs * 0.7)
        e = Epi(pixels=np.broadcast_to(pattern[None, :, None], (9, 48, 3)).copy())
        st = structure_tensor(e)
        inner = (slice(3, 6), slice(16, 32))
        assert np.allclose(st.Juu[inner], 0.0, atol=1e-18)
        assert st.Jxx[inner].max() > 0
        sf = slopes_from_tensor(st)
        conf = sf.coherence > 0.9
        assert np.allclose(sf.slope[conf], 0.0, atol=1e-9)

    def test_diagonal_pattern_eigenvector(self):
        # lines of slope -1: intensity constant along (dx, du) = (-1, 1)
        uu, xx = np.meshgrid(np.arange(9), np.arange(64), indexing="ij")
        ramp = 0.5 + 0.4 * np.sin((xx + uu) * 0.35)
        e = Epi(pixels=np.repeat(ramp[..., None], 3, axis=2))
        st = structure_tensor(e)
        sf = slopes_from_tensor(st)
        conf = sf.coherence > 0.9
        assert conf.any()
        np.testing.assert_allclose(sf.slope[conf], -1.0, atol=0.05)
        # dominant eigenvector (gradient direction) along (1, 1)
        a, s = 4, 32
        J = np.array([[st.Jxx[a, s], st.Jxu[a, s]], [st.Jxu[a, s], st.Juu[a, s]]])
        w, v = np.linalg.eigh(J)
        dom = v[:, np.argmax(w)]
        assert abs(abs(dom @ np.array([1, 1]) / np.sqrt(2)) - 1.0) < 0.05

    def test_psd_invariant(self):
        rng = np.random.default_rng(5)
        e = Epi(pixels=rng.random((9, 40, 3)))
        for shear in (0, 1, -2):
            st = structure_tensor(e, shear=shear)
            assert (st.Jxx >= 0).all() and (st.Juu >= 0).all()
            assert (st.Jxx * st.Juu - st.Jxu**2 >= -1e-9).all()

    def test_too_small(self):
        with pytest.raises(ValueError):
            structure_tensor(Epi(pixels=np.zeros((2, 8, 3))))


class TestSlopeRecovery:
    @pytest.mark.parametrize("d", [-1.0, 2.0])
    def test_constant_disparity_recovered(self, d):
        row = noise_row(200)
        e, _ = synthesize_epi(row, np.full(200, d), A=9, u0=4)
        sf = estimate_slopes(e)
        conf = sf.coherence > 0.9
        assert conf.sum() > 200
        frac = (np.abs(sf.slope[conf] - d) <= 0.05).mean()
        assert frac >= 0.95

    def test_shear_parameter_direct(self):
        row = noise_row(200, seed=11)
        e, _ = synthesize_epi(row, np.full(200, 2.0), A=9, u0=4)
        sf = slopes_from_tensor(structure_tensor(e, shear=2))
        conf = sf.coherence > 0.9
        assert (np.abs(sf.slope[conf] - 2.0) <= 0.05).mean() >= 0.95

    def test_slope_nan_free(self):
        rng = np.random.default_rng(8)
        e = Epi(pixels=rng.random((9, 40, 3)))
        sf = estimate_slopes(e)
        assert np.isfinite(sf.slope).all()
        assert ((sf.coherence >= 0) & (sf.coherence <= 1)).all()


class TestEpiStructureLoss:
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.e = Epi(pixels=rng.random((9, 48, 3)))

    def test_identical_is_zero(self):
        assert epi_structure_loss(self.e, self.e) == 0.0

    def test_dc_offset_invariant(self):
        shifted = Epi(pixels=np.clip(self.e.pixels * 0.5 + 0.2, 0, 1))
        base = Epi(pixels=self.e.pixels * 0.5)
        assert epi_structure_loss(shifted, base) < 1e-12

    def test_shear_strictly_positive(self):
        row = noise_row(64)
        e1, _ = synthesize_epi(row, np.zeros(64), A=9, u0=4)
        e2, _ = synthesize_epi(row, np.ones(64), A=9, u0=4)
        assert epi_structure_loss(e1, e2) > 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            epi_structure_loss(self.e, Epi(pixels=np.zeros((9, 32, 3))))


class TestRoundTrip:
    def test_epi_round_trip_and_masks(self):
        g = GridGeometry(V=9, U=9, H=64, W=64)
        spec = SceneSpec(layers=2, height=64, width=64, disparity_range=(0.0, 2.0), seed=7)
        lf, disp, occ = render_ground_truth(generate_scene(spec), g)
        for y in range(0, 64, 5):
            e = extract_epi(lf, y, 4, "horizontal")
            synth, holes = synthesize_epi(
                lf.views[4][4].pixels[y], disp[4, 4, y], A=9, u0=4
            )
            ok = ~holes.bits
            assert np.abs(synth.pixels - e.pixels)[ok].max() <= 1 / 255
            np.testing.assert_array_equal(holes.bits, occ[4, :, y, :])
