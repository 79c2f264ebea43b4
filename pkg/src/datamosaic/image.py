"""Image fragmentation, source banks and mosaic rendering.

Images are float64 arrays of shape (height, width, channels) in [0, 1] with
1 or 3 channels.  Fragments are flattened row-major over (row, col, channel);
banks and targets must share this layout.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import (
    InvalidGeometryError,
    InvalidSelectionError,
    MosaicIOError,
    UnsupportedFormatError,
)
from .model import FragmentBank, check_selection

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class TileGrid:
    image_height: int
    image_width: int
    channels: int
    window: int
    stride: int
    tiles: Tuple[Tuple[int, int], ...]

    @classmethod
    def build(cls, height: int, width: int, channels: int, window: int, stride: int) -> "TileGrid":
        if not 0 < window <= min(height, width):
            raise InvalidGeometryError(f"window {window} must lie in (0, {min(height, width)}]")
        if not 0 < stride <= window:
            raise InvalidGeometryError(f"stride {stride} must lie in (0, window={window}]")
        tiles = tuple(
            (r, c)
            for r in range(0, height - window + 1, stride)
            for c in range(0, width - window + 1, stride)
        )
        return cls(height, width, channels, window, stride, tiles)

    @property
    def fragment_shape(self) -> Tuple[int, int, int]:
        return (self.window, self.window, self.channels)

    @property
    def dim(self) -> int:
        return self.window * self.window * self.channels

    def __len__(self):
        return len(self.tiles)


def as_image(array) -> np.ndarray:
    image = np.asarray(array, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, None]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise UnsupportedFormatError(f"expected HxWx1 or HxWx3 image, got shape {image.shape}")
    return image


def load_and_normalize(path, size: Optional[int] = None) -> np.ndarray:
    """Read an 8-bit gray or RGB PNG/JPEG into [0, 1], optionally resized to size x size."""
    try:
        with Image.open(path) as img:
            img.load()
            mode = img.mode
            pixels = np.asarray(img)
    except (FileNotFoundError, IsADirectoryError, UnidentifiedImageError, OSError) as exc:
        raise MosaicIOError(f"cannot read image {path}: {exc}") from exc
    if mode not in ("L", "RGB"):
        raise UnsupportedFormatError(f"{path}: unsupported image mode {mode!r} (need L or RGB)")
    image = as_image(pixels.astype(np.float64) / 255.0)
    if size is not None and image.shape[:2] != (size, size):
        image = resize(image, size)
    return image


def resize(image, size: int) -> np.ndarray:
    """Resize to size x size: exact box filter where possible, bilinear otherwise."""
    image = as_image(image)
    h, w, _ = image.shape
    if h == w and size <= h and h % size == 0:
        return downscale_box(image, size)
    return _bilinear(image, size, size)


def _bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    channels = [
        np.asarray(Image.fromarray(image[:, :, k].astype(np.float32), mode="F")
                   .resize((width, height), Image.BILINEAR), dtype=np.float64)
        for k in range(image.shape[2])
    ]
    return np.clip(np.stack(channels, axis=2), 0.0, 1.0)


def downscale_box(image, out_side: int, exact: bool = True) -> np.ndarray:
    """Average non-overlapping blocks down to out_side x out_side.

    With ``exact=False`` a side that does not divide evenly falls back to
    bilinear resampling instead of raising.
    """
    image = as_image(image)
    h, w, ch = image.shape
    if out_side < 1 or h % out_side or w % out_side:
        if exact:
            raise InvalidGeometryError(f"out_side {out_side} must divide image size {h}x{w}")
        return _bilinear(image, out_side, out_side)
    bh, bw = h // out_side, w // out_side
    return image.reshape(out_side, bh, out_side, bw, ch).mean(axis=(1, 3))


def center_crop_square(image) -> np.ndarray:
    image = as_image(image)
    h, w, _ = image.shape
    side = min(h, w)
    top, left = (h - side) // 2, (w - side) // 2
    return image[top:top + side, left:left + side]


def tile_image(image, window: int, stride: int) -> Tuple[TileGrid, np.ndarray]:
    """Cut an image into row-major tiles; returns the grid and an (n_tiles, D) array."""
    image = as_image(image)
    h, w, ch = image.shape
    grid = TileGrid.build(h, w, ch, window, stride)
    fragments = np.stack([
        image[r:r + window, c:c + window].reshape(-1) for r, c in grid.tiles
    ])
    return grid, fragments


def build_inplace_bank(source_images: Sequence, tile: Tuple[int, int], window: int) -> FragmentBank:
    """Bank of the window at the same offset in every source image."""
    r, c = tile
    rows = []
    channels = None
    for i, src in enumerate(source_images):
        src = as_image(src)
        if src.shape[0] < r + window or src.shape[1] < c + window:
            raise InvalidGeometryError(
                f"source {i} of size {src.shape[:2]} cannot hold a {window}px window at {tile}"
            )
        if channels is not None and src.shape[2] != channels:
            raise InvalidGeometryError(f"source {i} has {src.shape[2]} channels, expected {channels}")
        channels = src.shape[2]
        rows.append(src[r:r + window, c:c + window].reshape(-1))
    return FragmentBank(np.stack(rows), (window, window, channels), "image")


def build_photographic_bank(source_images: Sequence, cell_side: int) -> FragmentBank:
    rows = []
    channels = None
    for i, src in enumerate(source_images):
        small = downscale_box(center_crop_square(src), cell_side, exact=False)
        if channels is not None and small.shape[2] != channels:
            raise InvalidGeometryError(f"source {i} has {small.shape[2]} channels, expected {channels}")
        channels = small.shape[2]
        rows.append(small.reshape(-1))
    return FragmentBank(np.stack(rows), (cell_side, cell_side, channels), "image")


def render_mosaic(grid: TileGrid, per_tile_selection: Sequence, bank: FragmentBank,
                  canvas_shape: Optional[Tuple[int, int, int]] = None) -> np.ndarray:
    """Place each tile's averaged clip; overlaps are averaged per pixel.

    ``bank`` may be a single bank shared by all tiles or one bank per tile.
    Pixels covered by no tile are left at zero.
    """
    if len(per_tile_selection) != len(grid.tiles):
        raise InvalidSelectionError(
            f"{len(per_tile_selection)} selections for {len(grid.tiles)} tiles"
        )
    banks = bank if isinstance(bank, (list, tuple)) else [bank] * len(grid.tiles)
    shape = canvas_shape or (grid.image_height, grid.image_width, grid.channels)
    acc = np.zeros(shape, dtype=np.float64)
    count = np.zeros(shape[:2] + (1,), dtype=np.float64)
    w = grid.window
    for (r, c), sel, b in zip(grid.tiles, per_tile_selection, banks):
        if b.dim != grid.dim:
            raise InvalidSelectionError(f"bank dimension {b.dim} does not match tile dimension {grid.dim}")
        sel = check_selection(sel, b)
        avg = b.data[sel].astype(np.float64).mean(axis=0)
        acc[r:r + w, c:c + w] += avg.reshape(grid.fragment_shape)
        count[r:r + w, c:c + w] += 1.0
    out = np.divide(acc, count, out=np.zeros_like(acc), where=count > 0)
    return np.clip(out, 0.0, 1.0)


def to_uint8(image) -> np.ndarray:
    return np.clip(np.round(as_image(image) * 255.0), 0, 255).astype(np.uint8)


def save_png(path, image) -> None:
    """Write an 8-bit RGB PNG (gray images are replicated to three channels)."""
    pixels = to_uint8(image)
    if pixels.shape[2] == 1:
        pixels = np.repeat(pixels, 3, axis=2)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def list_images(directory) -> List[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise MosaicIOError(f"source directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise MosaicIOError(f"no PNG/JPEG images in {directory}")
    return files


def load_corpus(directory, size: Optional[int] = None) -> List[np.ndarray]:
    """Load every image in ``directory``; lexicographic file order defines indices."""
    return [load_and_normalize(p, size) for p in list_images(directory)]


def mse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.mean((a - b) ** 2))

