"""STFT fragmentation, dB observations, cosine prefiltering and resynthesis."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.io import wavfile

from .exceptions import InconsistentArtifactError, InvalidInputError, MosaicIOError
from .model import FragmentBank

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 22050
DEFAULT_NFFT = 8192
DB_FLOOR = -100.0
EPS = 1e-10
WINDOWS = ("rect", "hann")


@dataclass(frozen=True, eq=False)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("audio samples must be finite")
        if int(self.sample_rate) <= 0:
            raise InvalidInputError("sample_rate must be positive")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True, eq=False)
class SpectralFrames:
    frames: np.ndarray
    magnitudes_db: np.ndarray
    nfft: int
    hop: int
    db_reference: float
    db_floor: float = DB_FLOOR
    window: str = "rect"

    @property
    def n_bins(self) -> int:
        return self.nfft // 2 + 1


def analysis_window(name: str, nfft: int) -> np.ndarray:
    if name == "rect":
        return np.ones(nfft)
    if name == "hann":
        # Periodic Hann: sums to one at hop = nfft / 2.
        return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(nfft) / nfft)
    raise InvalidInputError(f"unknown analysis window {name!r}; expected one of {WINDOWS}")


def default_hop(nfft: int, window: str) -> int:
    return nfft if window == "rect" else nfft // 2


def magnitude_db(frames, db_reference: float, db_floor: float = DB_FLOOR) -> np.ndarray:
    if not db_reference > 0:
        raise InvalidInputError("db_reference must be positive")
    mag = np.maximum(np.abs(np.asarray(frames)), EPS)
    return np.maximum(20.0 * np.log10(mag / db_reference), db_floor)


def stft_frames(clip: AudioClip, nfft: int = DEFAULT_NFFT, hop: Optional[int] = None,
                window: str = "rect", db_reference: Optional[float] = None,
                db_floor: float = DB_FLOOR) -> SpectralFrames:
    """Frame the clip, window, and take the real FFT of every full frame.

    The trailing partial frame is discarded.  ``db_reference`` defaults to the
    largest magnitude in this clip's frames.
    """
    hop = default_hop(nfft, window) if hop is None else int(hop)
    if nfft < 1 or hop < 1:
        raise InvalidInputError("nfft and hop must be positive")
    x = clip.samples
    if x.size < nfft:
        raise InvalidInputError(f"clip of {x.size} samples is shorter than one frame of {nfft}")
    n_frames = (x.size - nfft) // hop + 1
    idx = np.arange(nfft)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = np.fft.rfft(x[idx] * analysis_window(window, nfft), axis=1)
    if db_reference is None:
        peak = float(np.abs(frames).max())
        db_reference = peak if peak > 0 else 1.0
    return SpectralFrames(frames, magnitude_db(frames, db_reference, db_floor), nfft, hop,
                          float(db_reference), float(db_floor), window)


def topk_candidates(target_row, bank: FragmentBank, k: int, offset: float = 0.0) -> np.ndarray:
    """Indices of the k rows nearest in cosine distance, ties to the lower index.

    ``offset`` is added to both target and rows first (audio uses -db_floor so
    every entry is nonnegative).  Zero-norm rows are at distance 1.
    """
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    data = bank.data.astype(np.float64) + offset
    target = np.asarray(target_row, dtype=np.float64).reshape(-1) + offset
    if target.size != bank.dim:
        raise InvalidInputError(f"target has {target.size} values, bank rows have {bank.dim}")
    k = min(k, bank.n_fragments)
    t_norm = np.linalg.norm(target)
    if t_norm == 0:
        logger.warning("zero-norm target row; using the first %d bank indices", k)
        return np.arange(k, dtype=np.int64)
    r_norm = np.linalg.norm(data, axis=1)
    cos = np.divide(data @ target, r_norm * t_norm, out=np.zeros(bank.n_fragments), where=r_norm > 0)
    dist = 1.0 - cos
    order = np.lexsort((np.arange(bank.n_fragments), dist))
    return order[:k].astype(np.int64)


def build_audio_bank(clips: Sequence[AudioClip], nfft: int = DEFAULT_NFFT, hop: Optional[int] = None,
                     window: str = "rect", db_reference: Optional[float] = None,
                     db_floor: float = DB_FLOOR) -> Tuple[FragmentBank, float]:
    """Frames of every clip (no frame spans two clips) as one dB-magnitude bank."""
    hop = default_hop(nfft, window) if hop is None else hop
    spectra = [stft_frames(c, nfft, hop, window, 1.0, db_floor).frames for c in clips]
    frames = np.concatenate(spectra)
    if db_reference is None:
        peak = float(np.abs(frames).max())
        db_reference = peak if peak > 0 else 1.0
    bank = FragmentBank(magnitude_db(frames, db_reference, db_floor), (nfft // 2 + 1,),
                        "audio-magnitude", complex_frames=frames)
    return bank, float(db_reference)


def reconstruct_audio(per_frame_selections: Sequence, source_complex_frames, nfft: int,
                      hop: Optional[int] = None, window: str = "rect",
                      sample_rate: int = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Average the selected complex frames, invert, and overlap-add.

    Overlaps are normalized by the summed analysis window, so the default
    rectangular, hop = nfft layout reduces to plain concatenation.
    """
    hop = default_hop(nfft, window) if hop is None else hop
    frames = source_complex_frames
    if frames is None:
        raise InconsistentArtifactError("no complex frames available for reconstruction")
    frames = np.asarray(frames)
    n = len(per_frame_selections)
    if n == 0:
        return AudioClip(np.zeros(0), sample_rate)
    out = np.zeros((n - 1) * hop + nfft)
    wsum = np.zeros_like(out)
    win = analysis_window(window, nfft)
    for t, sel in enumerate(per_frame_selections):
        sel = np.asarray(sel, dtype=np.int64)
        if sel.size < 1 or sel.min() < 0 or sel.max() >= frames.shape[0]:
            raise InconsistentArtifactError(f"frame {t} selects an index with no complex frame")
        spectrum = frames[sel].mean(axis=0)
        out[t * hop:t * hop + nfft] += np.fft.irfft(spectrum, n=nfft)
        wsum[t * hop:t * hop + nfft] += win
    out = np.divide(out, wsum, out=out, where=wsum > 1e-3)
    return AudioClip(np.clip(out, -1.0, 1.0), sample_rate)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.int16:
        return data.astype(np.float64) / 32768.0
    if data.dtype == np.int32:
        return data.astype(np.float64) / 2147483648.0
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.floating):
        return data.astype(np.float64)
    raise MosaicIOError(f"unsupported WAV sample type {data.dtype}")


def resample_linear(samples: np.ndarray, rate_in: int, rate_out: int) -> np.ndarray:
    if rate_in == rate_out or samples.size == 0:
        return samples
    n_out = int(round(samples.size * rate_out / rate_in))
    t_out = np.arange(n_out) / rate_out
    t_in = np.arange(samples.size) / rate_in
    return np.interp(t_out, t_in, samples)


def load_wav(path, sample_rate: Optional[int] = DEFAULT_SAMPLE_RATE) -> AudioClip:
    """Read PCM or float WAV, downmix to mono, resample to ``sample_rate``."""
    try:
        rate, data = wavfile.read(path)
    except (OSError, ValueError) as exc:
        raise MosaicIOError(f"cannot read WAV {path}: {exc}") from exc
    x = _to_float(np.asarray(data))
    if x.ndim == 2:
        x = x.mean(axis=1)
    if sample_rate is not None:
        x = resample_linear(x, rate, sample_rate)
        rate = sample_rate
    return AudioClip(np.clip(x, -1.0, 1.0), rate)


def write_wav(path, clip: AudioClip, fmt: str = "pcm16") -> None:
    if fmt == "pcm16":
        data = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise InvalidInputError(f"unknown WAV format {fmt!r}")
    try:
        wavfile.write(path, clip.sample_rate, data)
    except OSError as exc:
        raise MosaicIOError(f"cannot write WAV {path}: {exc}") from exc
