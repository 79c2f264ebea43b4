"""Seeded synthetic corpora for desk-scale experiments and tests."""
from __future__ import annotations

from pathlib import Path
from typing import List

import numpy as np

from .audio import write_wav, AudioClip


def blob_image(rng: np.random.Generator, side: int = 64, channels: int = 3) -> np.ndarray:
    """Smooth image: linear colour gradient plus a few Gaussian blobs, in [0, 1]."""
    yy, xx = np.mgrid[0:side, 0:side] / max(side - 1, 1)
    c0, c1 = rng.random(channels), rng.random(channels)
    angle = rng.uniform(0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0, 1)
    image = (1 - t)[..., None] * c0 + t[..., None] * c1
    for _ in range(int(rng.integers(2, 5))):
        cy, cx = rng.random(2)
        radius = rng.uniform(0.08, 0.3)
        weight = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * radius ** 2))[..., None]
        image = (1 - weight) * image + weight * rng.random(channels)
    return np.clip(image, 0.0, 1.0)


def blob_corpus(n: int, seed: int, side: int = 64, channels: int = 3) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [blob_image(rng, side, channels) for _ in range(n)]


def write_image_corpus(directory, images) -> List[Path]:
    from .image import save_png

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, image in enumerate(images):
        path = directory / f"img_{i:05d}.png"
        save_png(path, image)
        paths.append(path)
    return paths


def tone_clip(seed: int, seconds: float = 5.0, sample_rate: int = 22050) -> AudioClip:
    """Sequence of random-pitch notes with decaying envelopes and light noise."""
    rng = np.random.default_rng(seed)
    n = int(seconds * sample_rate)
    t = np.arange(n) / sample_rate
    out = np.zeros(n)
    note = int(0.25 * sample_rate)
    for start in range(0, n, note):
        freq = 110.0 * 2 ** (rng.integers(0, 36) / 12)
        seg = slice(start, min(start + note, n))
        tt = t[seg] - t[start]
        out[seg] += 0.4 * np.sin(2 * np.pi * freq * tt) * np.exp(-3 * tt)
        out[seg] += 0.15 * np.sin(2 * np.pi * 2 * freq * tt) * np.exp(-5 * tt)
    out += 0.01 * rng.standard_normal(n)
    return AudioClip(np.clip(out, -1, 1), sample_rate)


def write_audio_clip(path, clip: AudioClip) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_wav(path, clip)
    return path
