import numpy as np
import pytest

from lfgen.core import GridGeometry
from lfgen.epi import estimate_slopes, extract_epi
from lfgen.synthlf import Layer, SceneSpec, generate_scene, render_ground_truth


class TestGenerateScene:
    def test_single_layer_full_coverage(self):
        layers = generate_scene(SceneSpec(layers=1, seed=0))
        assert len(layers) == 1
        assert layers[0].alpha.all()

    def test_deterministic_for_seed(self):
        a = generate_scene(SceneSpec(layers=3, seed=42))
        b = generate_scene(SceneSpec(layers=3, seed=42))
        for la, lb in zip(a, b):
            np.testing.assert_array_equal(la.texture, lb.texture)
            np.testing.assert_array_equal(la.alpha, lb.alpha)
            assert la.disparity == lb.disparity

    def test_distinct_disparities_in_range(self):
        layers = generate_scene(SceneSpec(layers=3, disparity_range=(0.0, 2.0), seed=1))
        disps = [l.disparity for l in layers]
        assert disps == sorted(disps)
        assert len(set(disps)) == 3
        assert min(disps) >= 0.0 and max(disps) <= 2.0

    def test_texture_kinds(self):
        for kind in ("value-noise", "stripes", "checker"):
            layers = generate_scene(SceneSpec(layers=2, texture=kind, seed=3))
            assert layers[0].texture.min() >= 0.0 and layers[0].texture.max() <= 1.0

    def test_disks(self):
        layers = generate_scene(SceneSpec(layers=2, shapes="disks", seed=4))
        assert layers[1].alpha.any() and not layers[1].alpha.all()


class TestRenderGroundTruth:
    def test_zero_disparity_layer_identical_views(self):
        g = GridGeometry(V=3, U=3, H=32, W=32)
        layers = generate_scene(SceneSpec(layers=1, height=32, width=32, disparity_range=(0.0, 0.0), seed=5))
        lf, disp, occ = render_ground_truth(layers, g)
        base = lf.views[1][1].pixels
        for v in range(3):
            for u in range(3):
                np.testing.assert_array_equal(lf.views[v][u].pixels, base)
        assert not occ.any()
        assert np.all(disp == 0.0)

    def test_unit_disparity_shifts_one_pixel(self):
        g = GridGeometry(V=3, U=3, H=32, W=32)
        layers = generate_scene(SceneSpec(layers=1, height=32, width=32, disparity_range=(1.0, 1.0), seed=6))
        lf, disp, occ = render_ground_truth(layers, g)
        center = lf.views[1][1].pixels
        right = lf.views[1][2].pixels  # du = +1, content shifts +1 px
        np.testing.assert_allclose(right[:, 1:], center[:, :-1], atol=1e-12)
        # the strip entering from the border is not visible from the center
        assert occ[1, 2][:, 0].all()
        assert not occ[1, 2][:, 1:].any()

    def test_disocclusion_band_width(self):
        # fg rect d=2 over bg d=0: band of width 2*du beside the rect
        H = W = 48
        rng = np.random.default_rng(0)
        bg = Layer(texture=rng.random((H, W, 3)), disparity=0.0, alpha=np.ones((H, W), bool))
        alpha = np.zeros((H, W), bool)
        alpha[16:32, 20:30] = True
        fg = Layer(texture=rng.random((H, W, 3)), disparity=2.0, alpha=alpha)
        g = GridGeometry(V=1, U=3, H=H, W=W)
        lf, disp, occ = render_ground_truth([bg, fg], g)
        du = 1  # view (0, 2) sits one step right of center (0, 1)
        mask_row = occ[0, 2][20]  # row through the rect
        # fg moved right by 2: uncovered band is [20, 22) in view coords
        assert mask_row[20] and mask_row[21]
        assert not mask_row[22:30].any()

    def test_epi_slopes_match_layer_disparities(self):
        g = GridGeometry(V=9, U=9, H=64, W=64)
        layers = generate_scene(SceneSpec(layers=2, height=64, width=64, disparity_range=(0.0, 2.0), seed=8))
        lf, disp, occ = render_ground_truth(layers, g)
        good = bad = 0
        for y in range(0, 64, 4):
            sf = estimate_slopes(extract_epi(lf, y, 4, "horizontal"))
            conf = sf.coherence > 0.9
            err = np.abs(sf.slope - disp[4, :, y, :])
            good += int(((err <= 0.05) & conf).sum())
            bad += int(((err > 0.05) & conf).sum())
        assert good / (good + bad) >= 0.95
