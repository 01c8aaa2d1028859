import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from histcode.errors import DegenerateHistogram, SchemaMismatch
from histcode.ingest import (
    SlideImage,
    SynthParams,
    TileCoord,
    TileManifest,
    TissueMask,
    detect_tissue,
    filter_tiles,
    normalize_stain,
    otsu_threshold,
    read_manifest,
    reference_stats,
    synthesize_slide,
    tessellate,
    write_manifest,
)
from histcode.ingest.stain import StainStats, rgb_to_lab, transfer_lab
from histcode.ingest.tiling import ingest_slide, tissue_pixels

from oracles import otsu_bruteforce


def _hist(**bins):
    h = np.zeros(256, dtype=np.int64)
    for k, v in bins.items():
        h[int(k[1:])] = v
    return h


class TestOtsu:
    def test_two_spikes_tie_midpoint(self):
        assert otsu_threshold(_hist(i10=100, i200=100)) == 104

    def test_extremes(self):
        assert otsu_threshold(_hist(i0=50, i255=50)) == 127

    def test_single_intensity_is_degenerate(self):
        with pytest.raises(DegenerateHistogram):
            otsu_threshold(_hist(i42=1000))
        with pytest.raises(DegenerateHistogram):
            otsu_threshold(np.zeros(256, dtype=int))

    def test_matches_bruteforce_on_random_histograms(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            h = np.zeros(256, dtype=np.int64)
            k = rng.integers(2, 40)
            idx = rng.choice(256, size=k, replace=False)
            h[idx] = rng.integers(1, 500, size=k)
            assert otsu_threshold(h) == otsu_bruteforce(h)


def _slide(pixels, **kw):
    return SlideImage("s", np.ascontiguousarray(pixels, dtype=np.uint8), 0.5, "p", **kw)


class TestDetectTissue:
    def test_white_slide_is_empty(self):
        mask = detect_tissue(_slide(np.full((256, 256, 3), 255)), downsample=4)
        assert not mask.mask.any()

    def test_left_pink_right_white(self):
        px = np.full((512, 512, 3), 255, dtype=np.uint8)
        px[:, :256] = (220, 120, 180)
        mask = detect_tissue(_slide(px), downsample=8).mask
        assert mask[:, :32].all()
        assert not mask[:, 32:].any()

    def test_mask_shape(self):
        assert detect_tissue(_slide(np.full((1024, 1024, 3), 255)), 4).shape == (256, 256)
        assert detect_tissue(_slide(np.full((1000, 700, 3), 255)), 32).shape == (32, 22)

    def test_synthetic_tissue_coverage(self):
        slide, _ = synthesize_slide(SynthParams(height=512, width=512, tumor_fraction=0.35), seed=3)
        mask = detect_tissue(slide, 8).mask
        assert abs(mask.mean() - 0.62) < 0.05


class TestTessellate:
    def test_exact_grid(self):
        tiles = tessellate(512, 512, 256)
        assert [(t.x, t.y) for t in tiles] == [(0, 0), (256, 0), (0, 256), (256, 256)]

    def test_partials_dropped(self):
        assert len(tessellate(600, 600, 256)) == 4
        assert tessellate(255, 512, 256) == []

    @given(st.integers(1, 2000), st.integers(1, 2000), st.integers(16, 300))
    @settings(max_examples=200, deadline=None)
    def test_grid_properties(self, w, h, s):
        tiles = tessellate(w, h, s)
        assert len(tiles) == (w // s) * (h // s)
        assert len({(t.x, t.y) for t in tiles}) == len(tiles)
        for t in tiles:
            assert t.x % s == 0 and t.y % s == 0
            assert t.x + s <= w and t.y + s <= h
        assert tiles == sorted(tiles)


class TestFilterTiles:
    def test_all_and_none(self):
        tiles = tessellate(512, 512, 256)
        ones = TissueMask(np.ones((16, 16), bool), 32)
        zeros = TissueMask(np.zeros((16, 16), bool), 32)
        assert filter_tiles(tiles, ones, 100) == tiles
        assert filter_tiles(tiles, zeros, 100) == []

    def test_threshold_boundary(self):
        mask = np.zeros((20, 40), bool)
        # tile 0 (x=0) gets 99 positives, tile 1 (x=20) gets exactly 100
        sub = np.zeros((20, 20), bool)
        sub.flat[:99] = True
        mask[:, :20] = sub
        sub = np.zeros((20, 20), bool)
        sub.flat[:100] = True
        mask[:, 20:] = sub
        tiles = tessellate(40, 20, 20)
        kept = filter_tiles(tiles, TissueMask(mask, 1), 100)
        assert kept == [tiles[1]]

    def test_upsampled_count(self):
        mask = np.zeros((4, 4), bool)
        mask[0, 0] = True
        tile = TileCoord(y=0, x=0, tile_px=16)
        assert tissue_pixels(tile, TissueMask(mask, 8)) == 64
        assert tissue_pixels(TileCoord(y=4, x=4, tile_px=8), TissueMask(mask, 8)) == 16

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            mask = TissueMask(rng.random((40, 40)) < rng.random(), int(rng.integers(1, 9)))
            h = w = 40 * mask.downsample
            tiles = tessellate(w, h, int(rng.integers(8, 64)))
            lo, hi = sorted(rng.integers(0, 2000, size=2))
            assert set(filter_tiles(tiles, mask, hi)) <= set(filter_tiles(tiles, mask, lo))


class TestStain:
    def _tile(self, seed=0):
        rng = np.random.default_rng(seed)
        base = rng.integers(60, 240, size=3)
        return np.clip(base + rng.normal(0, 25, size=(64, 64, 3)), 0, 255).astype(np.uint8)

    def test_reference_is_valid(self):
        assert reference_stats().is_valid()

    def test_identity_when_stats_match(self):
        tile = self._tile()
        out, flagged = normalize_stain(tile, StainStats.from_pixels(tile))
        assert not flagged
        assert np.abs(out.astype(int) - tile.astype(int)).max() <= 1

    def test_output_means_match_reference(self):
        ref = reference_stats()
        for seed in range(20):
            lab = transfer_lab(self._tile(seed), ref).reshape(-1, 3)
            np.testing.assert_allclose(lab.mean(0), ref.mean, atol=1e-3)
            np.testing.assert_allclose(lab.std(0), ref.std, atol=1e-3)

    def test_uniform_tile_flagged(self):
        tile = np.full((32, 32, 3), (200, 100, 150), dtype=np.uint8)
        out, flagged = normalize_stain(tile, reference_stats())
        assert flagged
        assert np.array_equal(out, tile)

    def test_slide_level_source_keeps_relative_colors(self):
        a, b = self._tile(1), self._tile(2)
        source = StainStats.from_pixels(np.concatenate([a, b]))
        na, _ = normalize_stain(a, reference_stats(), source)
        nb, _ = normalize_stain(b, reference_stats(), source)
        # same affine map for both: the lightness ordering of the tiles is kept
        la, lb = rgb_to_lab(a)[..., 0].mean(), rgb_to_lab(b)[..., 0].mean()
        nla, nlb = rgb_to_lab(na)[..., 0].mean(), rgb_to_lab(nb)[..., 0].mean()
        assert (la - lb) * (nla - nlb) > 0

    def test_rejects_bad_reference(self):
        with pytest.raises(ValueError):
            normalize_stain(self._tile(), StainStats((0, 0, 0), (1, 0, 1)))


def _manifest(n, rng=None, slide_id="slide-1"):
    rng = rng or np.random.default_rng(0)
    coords = np.unique(rng.integers(0, 2**20, size=(n, 2)) * 256, axis=0) if n else np.zeros((0, 2))
    return TileManifest(
        slide_id,
        coords,
        tile_px=256,
        tile_um=128.0,
        metadata={"patient_id": "P1", "label": "tumor", "width": 10**6, "height": 10**6, "mpp": 0.5},
    )


class TestManifest:
    def test_empty_roundtrip(self, tmp_path):
        m = _manifest(0)
        write_manifest(m, tmp_path / "m.h5")
        assert read_manifest(tmp_path / "m.h5") == m

    def test_four_tile_roundtrip(self, tmp_path):
        m = TileManifest.from_tiles("s", tessellate(512, 512, 256), {"label": "normal", "mpp": 0.25})
        write_manifest(m, tmp_path / "m.h5")
        back = read_manifest(tmp_path / "m.h5")
        assert back == m
        assert list(back.tiles()) == tessellate(512, 512, 256)

    def test_large_roundtrip(self, tmp_path):
        m = _manifest(100_000)
        write_manifest(m, tmp_path / "m.h5")
        assert read_manifest(tmp_path / "m.h5") == m

    def test_randomized_roundtrips(self, tmp_path):
        rng = np.random.default_rng(7)
        for i in range(1000):
            m = _manifest(int(rng.integers(0, 50)), rng, slide_id=f"s{i}")
            m.metadata["tissue_fraction"] = float(rng.random())
            m.metadata["stain_source"] = {"mean": rng.random(3).tolist(), "std": rng.random(3).tolist()}
            path = tmp_path / "m.h5"
            write_manifest(m, path)
            assert read_manifest(path) == m

    def test_coords_sorted_and_unique(self):
        m = TileManifest("s", [(256, 0), (0, 256), (0, 0)])
        assert m.coords.tolist() == [[0, 0], [256, 0], [0, 256]]
        with pytest.raises(ValueError):
            TileManifest("s", [(0, 0), (0, 0)])

    def test_schema_version_checked(self, tmp_path):
        import h5py

        path = write_manifest(_manifest(3), tmp_path / "m.h5")
        with h5py.File(path, "a") as fh:
            fh.attrs["format_version"] = 99
        with pytest.raises(SchemaMismatch):
            read_manifest(path)

    def test_file_bytes_deterministic(self, tmp_path):
        m = _manifest(20)
        write_manifest(m, tmp_path / "a.h5")
        write_manifest(m, tmp_path / "b.h5")
        assert (tmp_path / "a.h5").read_bytes() == (tmp_path / "b.h5").read_bytes()


class TestSynth:
    def test_deterministic(self):
        p = SynthParams(height=256, width=256, tumor_fraction=0.3)
        a, ma = synthesize_slide(p, seed=5)
        b, mb = synthesize_slide(p, seed=5)
        assert np.array_equal(a.pixels, b.pixels) and np.array_equal(ma, mb)

    def test_no_tumor(self):
        slide, mask = synthesize_slide(SynthParams(height=256, width=256), seed=1)
        assert not mask.any()
        assert slide.label == "normal"

    def test_tumor_fraction_2048(self):
        slide, mask = synthesize_slide(SynthParams(height=2048, width=2048, tumor_fraction=0.3), seed=2)
        assert 0.25 <= mask.mean() <= 0.35
        assert slide.label == "tumor"

    def test_white_margins_present(self):
        slide, _ = synthesize_slide(SynthParams(height=256, width=256, tumor_fraction=0.2), seed=4)
        border = np.concatenate([slide.pixels[:8].reshape(-1, 3), slide.pixels[-8:].reshape(-1, 3)])
        assert border.min() > 230

    def test_tumor_texture_differs(self):
        slide, mask = synthesize_slide(SynthParams(height=512, width=512, tumor_fraction=0.3), seed=6)
        gray = slide.pixels.mean(-1)
        tissue = detect_tissue(slide, 1).mask
        assert gray[mask].mean() < gray[tissue & ~mask].mean() - 10


def test_ingest_slide_manifest():
    slide, _ = synthesize_slide(SynthParams(height=512, width=512, tumor_fraction=0.3), seed=8)
    m = ingest_slide(slide, tile_px=64, tile_um=64.0, downsample=8)
    assert 0 < len(m) <= 64
    assert m.metadata["label"] == "tumor"
    assert "stain_source" in m.metadata
    again = ingest_slide(slide, tile_px=64, tile_um=64.0, downsample=8)
    assert again == m
