import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from datamosaic.exceptions import (
    InvalidGeometryError,
    InvalidSelectionError,
    MosaicIOError,
    UnsupportedFormatError,
)
from datamosaic.image import (
    TileGrid,
    build_inplace_bank,
    build_photographic_bank,
    center_crop_square,
    downscale_box,
    list_images,
    load_and_normalize,
    render_mosaic,
    save_png,
    tile_image,
    to_uint8,
)
from datamosaic.model import FragmentBank


def write(path, array, mode):
    Image.fromarray(array, mode=mode).save(path)
    return path


class TestLoad:
    def test_black(self, tmp_path):
        p = write(tmp_path / "b.png", np.zeros((8, 8, 3), np.uint8), "RGB")
        img = load_and_normalize(p)
        assert img.shape == (8, 8, 3) and np.all(img == 0.0)

    def test_white_gray(self, tmp_path):
        p = write(tmp_path / "w.png", np.full((8, 6), 255, np.uint8), "L")
        img = load_and_normalize(p)
        assert img.shape == (8, 6, 1) and np.all(img == 1.0)

    def test_value_mapping(self, tmp_path):
        arr = np.arange(256, dtype=np.uint8).reshape(16, 16)
        img = load_and_normalize(write(tmp_path / "g.png", arr, "L"))
        np.testing.assert_allclose(img[:, :, 0], arr / 255.0)

    def test_resize_to_experiment_size(self, tmp_path):
        p = write(tmp_path / "big.png", np.full((512, 512, 3), 128, np.uint8), "RGB")
        img = load_and_normalize(p, size=256)
        assert img.shape == (256, 256, 3)
        np.testing.assert_allclose(img, 128 / 255.0)

    def test_enlarge_bilinear(self, tmp_path):
        p = write(tmp_path / "s.png", np.full((4, 4, 3), 64, np.uint8), "RGB")
        img = load_and_normalize(p, size=10)
        assert img.shape == (10, 10, 3)
        np.testing.assert_allclose(img, 64 / 255.0, atol=1e-6)

    def test_jpeg(self, tmp_path):
        p = tmp_path / "x.jpg"
        Image.fromarray(np.full((8, 8, 3), 200, np.uint8)).save(p, quality=95)
        assert load_and_normalize(p).shape == (8, 8, 3)

    def test_missing(self, tmp_path):
        with pytest.raises(MosaicIOError, match="missing.png"):
            load_and_normalize(tmp_path / "missing.png")

    def test_garbage(self, tmp_path):
        p = tmp_path / "bad.png"
        p.write_bytes(b"not an image")
        with pytest.raises(MosaicIOError):
            load_and_normalize(p)

    def test_rgba_unsupported(self, tmp_path):
        p = write(tmp_path / "a.png", np.zeros((4, 4, 4), np.uint8), "RGBA")
        with pytest.raises(UnsupportedFormatError):
            load_and_normalize(p)

    def test_corpus_order_lexicographic(self, tmp_path):
        for name in ("b.png", "a.png", "c.jpg", "notes.txt"):
            (tmp_path / name).write_bytes(b"")
        assert [p.name for p in list_images(tmp_path)] == ["a.png", "b.png", "c.jpg"]


class TestTiling:
    def test_paper_geometry(self):
        grid, frags = tile_image(np.zeros((256, 256, 3)), 64, 64)
        assert len(grid) == 16 and frags.shape == (16, 12288)

    def test_whole_image(self, rng):
        img = rng.random((5, 5, 3))
        grid, frags = tile_image(img, 5, 5)
        assert grid.tiles == ((0, 0),)
        np.testing.assert_array_equal(frags[0], img.reshape(-1))

    def test_overlapping_offsets(self):
        img = np.arange(16.0).reshape(4, 4) / 16
        grid, frags = tile_image(img, 2, 1)
        expected = [(r, c) for r in (0, 1, 2) for c in (0, 1, 2)]
        assert list(grid.tiles) == expected
        for (r, c), f in zip(expected, frags):
            np.testing.assert_array_equal(f, img[r:r + 2, c:c + 2].reshape(-1))

    def test_row_major_channel_last_flatten(self):
        img = np.zeros((2, 2, 3))
        img[0, 1, 2] = 1.0
        _, frags = tile_image(img, 2, 2)
        assert np.flatnonzero(frags[0]).tolist() == [(0 * 2 + 1) * 3 + 2]

    @pytest.mark.parametrize("window,stride", [(0, 1), (9, 1), (4, 5), (4, 0)])
    def test_invalid(self, window, stride):
        with pytest.raises(InvalidGeometryError):
            tile_image(np.zeros((8, 8)), window, stride)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 8))
    def test_tile_count(self, h, w, window):
        if window > min(h, w):
            return
        grid = TileGrid.build(h, w, 1, window, window)
        assert len(grid) == (h // window) * (w // window)


class TestDownscale:
    def test_constant(self):
        out = downscale_box(np.full((8, 8, 3), 0.3), 2)
        np.testing.assert_allclose(out, 0.3)

    def test_checker(self):
        out = downscale_box(np.array([[0.0, 1.0], [1.0, 0.0]]), 1)
        assert out.shape == (1, 1, 1) and out[0, 0, 0] == 0.5

    def test_paper_size(self, rng):
        assert downscale_box(rng.random((256, 256, 3)), 16).shape == (16, 16, 3)

    def test_block_mean_oracle(self, rng):
        img = rng.random((6, 6, 3))
        out = downscale_box(img, 2)
        for i in range(2):
            for j in range(2):
                np.testing.assert_allclose(out[i, j], img[3 * i:3 * i + 3, 3 * j:3 * j + 3].mean(axis=(0, 1)))

    def test_non_divisor(self, rng):
        img = rng.random((10, 10, 3))
        with pytest.raises(InvalidGeometryError):
            downscale_box(img, 3)
        out = downscale_box(img, 3, exact=False)
        assert out.shape == (3, 3, 3) and out.min() >= 0 and out.max() <= 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2 ** 32 - 1), st.sampled_from([1, 2, 4, 8]))
    def test_mean_preserved(self, seed, out_side):
        img = np.random.default_rng(seed).random((16, 16, 3))
        out = downscale_box(img, out_side)
        assert out.mean() == pytest.approx(img.mean(), abs=1e-12)
        assert 0.0 <= out.min() and out.max() <= 1.0


class TestBanks:
    def test_inplace_matches_crops(self, rng):
        srcs = [rng.random((12, 12, 3)) for _ in range(3)]
        bank = build_inplace_bank(srcs, (4, 2), 5)
        assert bank.n_fragments == 3 and bank.fragment_shape == (5, 5, 3)
        for i, s in enumerate(srcs):
            np.testing.assert_allclose(bank.data[i], s[4:9, 2:7].reshape(-1), rtol=1e-7)

    def test_inplace_self_mosaic_zero_residual(self, rng):
        target = rng.random((8, 8, 3)).astype(np.float32).astype(np.float64)
        srcs = [rng.random((8, 8, 3)), target]
        grid, frags = tile_image(target, 4, 4)
        for off, frag in zip(grid.tiles, frags):
            bank = build_inplace_bank(srcs, off, 4)
            assert np.min(np.abs(bank.data.astype(np.float64) - frag).sum(axis=1)) == 0.0

    def test_inplace_geometry_error_names_source(self, rng):
        with pytest.raises(InvalidGeometryError, match="source 1"):
            build_inplace_bank([rng.random((8, 8)), rng.random((4, 4))], (2, 2), 4)

    def test_photographic_matches_per_image_map(self, rng):
        srcs = [rng.random((16, 16, 3)) for _ in range(10)]
        bank = build_photographic_bank(srcs, 4)
        assert bank.dim == 48
        for i, s in enumerate(srcs):
            np.testing.assert_allclose(bank.data[i], downscale_box(s, 4).reshape(-1), rtol=1e-6)

    def test_photographic_center_crop(self, rng):
        wide = rng.random((8, 12, 3))
        bank = build_photographic_bank([wide], 4)
        np.testing.assert_allclose(bank.data[0], downscale_box(wide[:, 2:10], 4).reshape(-1), rtol=1e-6)
        assert center_crop_square(wide).shape == (8, 8, 3)

    def test_photographic_paper_dims(self):
        bank = build_photographic_bank([np.zeros((32, 32, 3))] * 3, 16)
        assert bank.dim == 768


class TestRender:
    def test_constant_tiles(self):
        bank = FragmentBank(np.stack([np.full(4, v) for v in (0.0, 0.25, 0.5, 1.0)]))
        grid = TileGrid.build(4, 4, 1, 2, 2)
        out = render_mosaic(grid, [[0], [1], [2], [3, 3]], bank)
        expected = np.array([[0, 0, .25, .25], [0, 0, .25, .25], [.5, .5, 1, 1], [.5, .5, 1, 1]])
        np.testing.assert_allclose(out[:, :, 0], expected)

    def test_non_overlapping_exact_averages(self, rng):
        bank = FragmentBank(rng.random((5, 12)))
        grid = TileGrid.build(4, 4, 3, 2, 2)
        sels = [rng.integers(0, 5, 3) for _ in grid.tiles]
        out = render_mosaic(grid, sels, bank)
        for (r, c), s in zip(grid.tiles, sels):
            np.testing.assert_allclose(out[r:r + 2, c:c + 2].reshape(-1),
                                       bank.data[s].astype(np.float64).mean(axis=0))

    def test_overlap_add_by_hand(self):
        vals = np.arange(9) / 10.0
        bank = FragmentBank(np.repeat(vals[:, None], 4, axis=1))
        grid = TileGrid.build(4, 4, 1, 2, 1)
        out = render_mosaic(grid, [[i] for i in range(9)], bank)[:, :, 0]
        acc, cnt = np.zeros((4, 4)), np.zeros((4, 4))
        for i, (r, c) in enumerate(grid.tiles):
            acc[r:r + 2, c:c + 2] += vals[i]
            cnt[r:r + 2, c:c + 2] += 1
        np.testing.assert_allclose(out, acc / cnt)
        assert out[1, 1] == pytest.approx((0.0 + 0.1 + 0.3 + 0.4) / 4)

    @pytest.mark.parametrize("window,stride", [(4, 4), (4, 2), (3, 1)])
    def test_identity_round_trip(self, rng, window, stride):
        target = rng.random((12, 12, 3))
        grid, frags = tile_image(target, window, stride)
        banks = [FragmentBank(f[None]) for f in frags]
        out = render_mosaic(grid, [[0]] * len(grid), banks)
        covered = np.zeros(target.shape[:2], bool)
        for r, c in grid.tiles:
            covered[r:r + window, c:c + window] = True
        np.testing.assert_allclose(out[covered], target[covered], atol=1e-6)

    def test_clamped(self):
        bank = FragmentBank(np.array([[2.0, -1.0, 0.5, 0.5]]))
        out = render_mosaic(TileGrid.build(2, 2, 1, 2, 2), [[0]], bank)
        assert out.min() == 0.0 and out.max() == 1.0

    def test_mismatch(self):
        bank = FragmentBank(np.zeros((2, 3)))
        with pytest.raises(InvalidSelectionError):
            render_mosaic(TileGrid.build(2, 2, 1, 2, 2), [[0]], bank)
        with pytest.raises(InvalidSelectionError):
            render_mosaic(TileGrid.build(2, 2, 1, 2, 2), [[0], [1]], bank)

    def test_png_quantization(self, tmp_path):
        img = np.array([[[0.0, 0.5, 1.0]]])
        assert to_uint8(img).tolist() == [[[0, 128, 255]]]
        save_png(tmp_path / "o.png", np.full((2, 2, 1), 0.2))
        with Image.open(tmp_path / "o.png") as im:
            assert im.mode == "RGB" and np.asarray(im)[0, 0].tolist() == [51, 51, 51]
