import numpy as np
import pytest

from pairforge.compositor import (
    CompositeError,
    EditRecipe,
    erase_object,
    expand_bbox,
    make_pair,
    paste_object,
    restore_occluders,
)
from pairforge.geometry import PixelMask
from pairforge.inpaint import InpaintParams
from pairforge.scene_bundle import instance_mask, instance_stats
from pairforge.triplet_select import SelectionConfig, sample_passing

from conftest import flat_frame

FAST = InpaintParams(iterations_per_level=2, rng_seed=3)


@pytest.fixture(scope="module")
def passing(scene):
    cands, _ = sample_passing(scene, SelectionConfig(max_triples_per_scene=10_000), 3, per_scene_cap=None)
    assert cands, "shared scene must provide passing candidates"
    return cands


def recipe(cand, **kw):
    kw.setdefault("inpaint_params", FAST)
    return EditRecipe(candidate=cand, **kw)


class TestExpandBbox:
    def test_zero_expansion_exact(self):
        assert expand_bbox((10, 20, 100, 50), 0.0, 1000, 1000) == (10, 20, 100, 50)

    def test_five_percent_interior(self):
        x, y, w, h = expand_bbox((200, 300, 100, 50), 0.05, 1000, 1000)
        assert (w, h) == (110, 55)
        # centered on the original box center; the odd leftover rounds half-up
        assert x == 195 and y == 298

    def test_corner_clamped(self):
        x, y, w, h = expand_bbox((0, 0, 40, 40), 0.5, 100, 100)
        assert (x, y) == (0, 0)
        assert w <= 100 and h <= 100 and w >= 40

    def test_degenerate_rejected(self):
        with pytest.raises(CompositeError):
            expand_bbox((5, 5, 0, 10), 0.1, 100, 100)


class TestPaste:
    def make_source(self, w, h, oid=7, x0=10, y0=10):
        fr = flat_frame("src", width=256, height=256)
        fr.rgb[:] = np.arange(256, dtype=np.uint8)[None, :, None]  # column gradient
        fr.instances[y0 : y0 + h, x0 : x0 + w] = oid
        return fr

    def test_unit_scale_pixel_exact(self):
        fr = self.make_source(30, 20)
        base = np.zeros_like(fr.rgb)
        out, pasted, t = paste_object(base, fr, 7, (10, 10, 30, 20))
        assert t.scale == 1.0
        assert (out[10:30, 10:40] == fr.rgb[10:30, 10:40]).all()
        assert pasted.area() == 600

    def test_fit_inside_halves(self):
        fr = self.make_source(200, 100)
        base = np.zeros((256, 256, 3), dtype=np.uint8)
        out, pasted, t = paste_object(base, fr, 7, (50, 50, 100, 100))
        assert t.scale == 0.5
        ys, xs = np.nonzero(pasted.data)
        assert xs.max() - xs.min() + 1 == 100
        assert ys.max() - ys.min() + 1 == 50

    def test_min_ratio_upscale(self):
        fr = self.make_source(10, 10)
        base = np.zeros((256, 256, 3), dtype=np.uint8)
        out, pasted, t = paste_object(base, fr, 7, (100, 100, 100, 40))
        assert t.scale == 4.0
        ys, xs = np.nonzero(pasted.data)
        assert xs.max() - xs.min() + 1 == 40
        assert ys.max() - ys.min() + 1 == 40

    def test_empty_source_mask_rejected(self):
        fr = flat_frame("src")
        with pytest.raises(CompositeError):
            paste_object(np.zeros_like(fr.rgb), fr, 99, (0, 0, 10, 10))


class TestRestoreOccluders:
    def region(self, fr, x0, y0, w, h):
        m = PixelMask.empty(fr.width, fr.height)
        m.data[y0 : y0 + h, x0 : x0 + w] = True
        return m

    def test_no_other_instances_identity(self):
        fr = flat_frame()
        fr.instances[10:20, 10:20] = 7
        comp = np.zeros_like(fr.rgb)
        region = self.region(fr, 8, 8, 20, 20)
        out = restore_occluders(comp, fr, 7, region)
        assert (out == comp).all()

    def test_occluder_pixels_bit_exact(self):
        fr = flat_frame()
        fr.rgb[:] = 200
        fr.instances[10:20, 10:20] = 7
        fr.instances[12:17, 15:25] = 3  # occluder strip crossing the region
        region = self.region(fr, 8, 8, 20, 20)
        comp = np.zeros_like(fr.rgb)
        out = restore_occluders(comp, fr, 7, region)
        expected = region.data & (fr.instances == 3)
        assert expected.sum() > 0
        assert (out[expected] == fr.rgb[expected]).all()
        untouched = ~expected
        assert (out[untouched] == comp[untouched]).all()

    def test_idempotent(self):
        fr = flat_frame()
        fr.instances[10:20, 10:20] = 7
        fr.instances[5:30, 18:22] = 3
        region = self.region(fr, 8, 8, 20, 20)
        comp = np.full_like(fr.rgb, 90)
        once = restore_occluders(comp, fr, 7, region)
        twice = restore_occluders(once, fr, 7, region)
        assert (once == twice).all()


class TestMakePair:
    def test_no_change_bit_equal(self, scene, passing):
        pair = make_pair(scene, recipe(passing[0], variant="no_change"))
        edited = scene.frame(passing[0].edited_id)
        assert (pair.view2_edited == edited.rgb).all()
        assert pair.inpaint_region.area() == 0

    def test_outside_region_bit_equal_all_variants(self, scene, passing):
        cand = passing[0]
        edited = scene.frame(cand.edited_id)
        for variant, extra in [("inconsistent", {}), ("self_paste", {}), ("expansion_sweep", {"expansion": 0.25}), ("multi_self_paste", {"self_paste_count": 2})]:
            pair = make_pair(scene, recipe(cand, variant=variant, **extra))
            outside = ~pair.inpaint_region.data
            assert (pair.view2_edited[outside] == edited.rgb[outside]).all(), variant

    def test_self_paste_object_pixels_bit_equal_where_unoccluded(self, scene, passing):
        cand = passing[0]
        edited = scene.frame(cand.edited_id)
        pair = make_pair(scene, recipe(cand, variant="self_paste"))
        mask = instance_mask(edited, cand.object_id)
        assert mask.sum() > 0
        assert (pair.view2_edited[mask] == edited.rgb[mask]).all()

    def test_inconsistent_pasted_pixels_match_recomputed_crop(self, scene, passing):
        cand = passing[0]
        pair = make_pair(scene, recipe(cand, variant="inconsistent"))
        edited = scene.frame(cand.edited_id)
        donor = scene.frame(cand.donor_id)

        # recompute the expected paste from the recorded transform
        st = instance_stats(donor)[cand.object_id]
        sx, sy, sw, sh = st.bbox
        s = pair.paste_transform.scale
        out_w = int(np.floor(sw * s + 0.5))
        out_h = int(np.floor(sh * s + 0.5))
        col = np.minimum(((np.arange(out_w) + 0.5) * sw / out_w).astype(np.int64), sw - 1)
        row = np.minimum(((np.arange(out_h) + 0.5) * sh / out_h).astype(np.int64), sh - 1)
        crop = donor.rgb[sy : sy + sh, sx : sx + sw]
        cmask = donor.instances[sy : sy + sh, sx : sx + sw] == cand.object_id
        exp_rgb = crop[row][:, col]
        exp_mask = cmask[row][:, col]
        cxp, cyp = pair.paste_transform.dst_center
        dx0 = int(np.floor(cxp - out_w / 2 + 0.5))
        dy0 = int(np.floor(cyp - out_h / 2 + 0.5))

        checked = 0
        for yy in range(out_h):
            for xx in range(out_w):
                py, px = dy0 + yy, dx0 + xx
                if not (0 <= py < edited.height and 0 <= px < edited.width):
                    continue
                if not exp_mask[yy, xx]:
                    continue
                occ = edited.instances[py, px]
                if occ != 0 and occ != cand.object_id:
                    continue  # an occluder was restored on top
                assert (pair.view2_edited[py, px] == exp_rgb[yy, xx]).all()
                checked += 1
        assert checked > 50

    def test_deterministic(self, scene, passing):
        a = make_pair(scene, recipe(passing[0], variant="inconsistent"))
        b = make_pair(scene, recipe(passing[0], variant="inconsistent"))
        assert (a.view2_edited == b.view2_edited).all()
        assert a.pair_id == b.pair_id

    def test_multi_self_paste_count_and_union_region(self, scene, passing):
        cand = passing[0]
        single = make_pair(scene, recipe(cand, variant="inconsistent"))
        multi = make_pair(scene, recipe(cand, variant="multi_self_paste", self_paste_count=2))
        assert multi.inpaint_region.area() >= single.inpaint_region.area()
        all_pair = make_pair(scene, recipe(cand, variant="multi_self_paste", self_paste_count="all"))
        assert all_pair.inpaint_region.area() >= multi.inpaint_region.area()

    def test_pair_ids_encode_treatment(self, scene, passing):
        cand = passing[0]
        p = make_pair(scene, recipe(cand, variant="multi_self_paste", self_paste_count=3))
        assert "multi_self_paste" in p.pair_id and "k3" in p.pair_id
        q = make_pair(scene, recipe(cand, variant="expansion_sweep", expansion=0.25))
        assert "exp25" in q.pair_id


def test_zero_pairs_throughput_rate_absent(tmp_path):
    from pairforge.compositor import generation_throughput

    rep = generation_throughput(tmp_path, [], tmp_path / "out", workers=1)
    assert rep.pairs == 0 and rep.pairs_per_sec is None


def test_erase_region_matches_expanded_bbox(scene, passing):
    cand = passing[0]
    edited = scene.frame(cand.edited_id)
    raster, region = erase_object(edited, cand.object_id, 0.05, params=FAST)
    bbox = instance_stats(edited)[cand.object_id].bbox
    x, y, w, h = expand_bbox(bbox, 0.05, edited.width, edited.height)
    expected = np.zeros_like(region.data)
    expected[y : y + h, x : x + w] = True
    assert (region.data == expected).all()
    assert (raster[~region.data] == edited.rgb[~region.data]).all()
