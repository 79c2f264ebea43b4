"""End-to-end jobs: build fragments and banks, run inference, persist, render."""
from __future__ import annotations

import hashlib
import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from . import audio as audio_mod
from . import image as image_mod
from .artifact import Artifact, encode_float, decode_float, read_artifact, write_artifact
from .config import JobConfig, config_from_dict
from .exceptions import InconsistentArtifactError, MosaicIOError, StaleCorpusError
from .inference import RHAT_WARN_THRESHOLD, PosteriorSamples, derive_seed, split_rhat
from .model import FragmentBank, MosaicProblem
from .parallel import resolve_workers, run_problems

logger = logging.getLogger(__name__)

# Keeps render draws on a stream disjoint from the chain seeds.
RENDER_SALT = 0x5EED_0F_7E4D_E45


@dataclass
class PreparedJob:
    config: JobConfig
    problems: List[MosaicProblem]
    banks: List[FragmentBank]
    bank_index: List[int]
    geometry: dict
    grid: Optional[image_mod.TileGrid] = None
    audio: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return banks_fingerprint(self.banks)


def banks_fingerprint(banks: Sequence[FragmentBank]) -> str:
    h = hashlib.sha256()
    for bank in banks:
        h.update(bank.fingerprint().encode())
    return h.hexdigest()


def _list_wavs(directory: Path) -> List[Path]:
    if not directory.is_dir():
        raise MosaicIOError(f"source directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".wav")
    if not files:
        raise MosaicIOError(f"no WAV files in {directory}")
    return files


def _grid_from_geometry(geometry: dict) -> image_mod.TileGrid:
    return image_mod.TileGrid.build(geometry["height"], geometry["width"], geometry["channels"],
                                    geometry["window"], geometry["stride"])


def source_banks(config: JobConfig, grid: Optional[image_mod.TileGrid] = None):
    """Banks built from the source corpus alone; returns (banks, audio metadata)."""
    if config.mode == "image-inplace":
        sources = image_mod.load_corpus(config.sources, config.image_size)
        return [image_mod.build_inplace_bank(sources, off, grid.window) for off in grid.tiles], {}
    if config.mode == "image-photographic":
        sources = image_mod.load_corpus(config.sources)
        return [image_mod.build_photographic_bank(sources, config.cell_side)], {}
    clips = [audio_mod.load_wav(p, config.sample_rate) for p in _list_wavs(config.sources)]
    bank, ref = audio_mod.build_audio_bank(clips, config.nfft, config.hop, config.analysis_window,
                                           db_floor=config.db_floor)
    meta = {"nfft": config.nfft, "hop": config.hop, "window": config.analysis_window,
            "db_reference": ref, "db_floor": config.db_floor, "sample_rate": config.sample_rate}
    return [bank], meta


def prepare_job(config: JobConfig) -> PreparedJob:
    """Fragment the target and build one MosaicProblem per fragment."""
    grid = None
    if config.mode.startswith("image"):
        target = image_mod.load_and_normalize(config.target, config.image_size)
        side = config.window if config.mode == "image-inplace" else config.cell_side
        stride = config.stride if config.mode == "image-inplace" else config.cell_side
        grid, fragments = image_mod.tile_image(target, side, stride)
        banks, meta = source_banks(config, grid)
        geometry = {"height": grid.image_height, "width": grid.image_width,
                    "channels": grid.channels, "window": side, "stride": stride}
        offset = 0.0
    else:
        banks, meta = source_banks(config)
        clip = audio_mod.load_wav(config.target, config.sample_rate)
        spectrum = audio_mod.stft_frames(clip, config.nfft, config.hop, config.analysis_window,
                                     meta["db_reference"], config.db_floor)
        fragments = spectrum.magnitudes_db
        geometry = {"nfft": config.nfft, "hop": config.hop, "window": config.analysis_window,
                    "n_frames": int(fragments.shape[0]), "n_bins": spectrum.n_bins}
        offset = -config.db_floor
    bank_index = [0] * len(fragments) if len(banks) == 1 else list(range(len(fragments)))
    for i, b in enumerate(banks):
        if b.dim != fragments.shape[1]:
            raise InconsistentArtifactError(f"bank {i} has D={b.dim}, fragments have D={fragments.shape[1]}")
    problems = []
    for i, frag in enumerate(fragments):
        bank = banks[bank_index[i]]
        if config.top_k:
            candidates = audio_mod.topk_candidates(frag, bank, config.top_k, offset=offset)
        else:
            candidates = np.arange(bank.n_fragments)
        problems.append(MosaicProblem(frag, candidates, config.num_clips, config.stddev, i))
    return PreparedJob(config, problems, banks, bank_index, geometry, grid, meta)


def render_draw(selections: Sequence[np.ndarray], draws: Sequence[int], banks, bank_index,
                mode: str, geometry: dict, audio_meta: dict):
    """Render one mosaic from one flat sample index per fragment."""
    chosen = []
    for sel, d in zip(selections, draws):
        flat = sel.reshape(-1, sel.shape[-1])
        chosen.append(flat[int(d)])
    if mode.startswith("image"):
        grid = _grid_from_geometry(geometry)
        tile_banks = [banks[bank_index[i]] for i in range(len(chosen))]
        return image_mod.render_mosaic(grid, chosen, tile_banks)
    return audio_mod.reconstruct_audio(chosen, banks[0].complex_frames, audio_meta["nfft"],
                                       audio_meta["hop"], audio_meta["window"],
                                       audio_meta["sample_rate"])


def draw_indices(selections: Sequence[np.ndarray], seed: int, render_index: int) -> List[int]:
    """One flat posterior index per fragment, each from its own seeded stream."""
    draws = []
    for frag, sel in enumerate(selections):
        n = sel.shape[0] * sel.shape[1]
        rng = np.random.Generator(np.random.PCG64(derive_seed(seed ^ RENDER_SALT, frag, render_index)))
        draws.append(int(rng.integers(n)))
    return draws


def save_render(path: Path, rendered, mode: str) -> Path:
    if mode.startswith("image"):
        path = path.with_suffix(".png")
        image_mod.save_png(path, rendered)
    else:
        path = path.with_suffix(".wav")
        audio_mod.write_wav(path, rendered)
    return path


def _mean_residual(problem: MosaicProblem, post: PosteriorSamples, bank: FragmentBank) -> float:
    flat = post.flat_selections()
    avgs = bank.data[flat].astype(np.float64).mean(axis=1)
    rms = np.linalg.norm(avgs - problem.target, axis=1) / np.sqrt(problem.target.size)
    return float(rms.mean())


def build_manifest(prepared: PreparedJob, posts: Sequence[PosteriorSamples]) -> dict:
    config = prepared.config
    inf = config.inference
    fragments = []
    for problem, post in zip(prepared.problems, posts):
        bank = prepared.banks[prepared.bank_index[problem.fragment_id]]
        fragments.append({
            "fragment_id": problem.fragment_id,
            "n_candidates": int(problem.candidates.size),
            "split_rhat": encode_float(post.split_rhat),
            "mean_residual": _mean_residual(problem, post, bank),
            "chain_seeds": [derive_seed(inf.master_seed, problem.fragment_id, c)
                            for c in range(inf.num_chains)],
        })
    return {
        "mode": config.mode,
        "config": config.to_dict(),
        "geometry": prepared.geometry,
        "audio": {k: (encode_float(v) if isinstance(v, float) else v) for k, v in prepared.audio.items()},
        "num_clips": config.num_clips,
        "stddev": config.stddev,
        "master_seed": inf.master_seed,
        "num_warmup": inf.num_warmup,
        "bank_fingerprint": prepared.fingerprint,
        "n_fragments": len(prepared.problems),
        "fragments": fragments,
    }


def run_job(config: JobConfig, workers: Optional[int] = None) -> Artifact:
    """Run inference for every fragment, write the artifact and its renders.

    Nothing is written until every fragment has finished; if writing fails
    the partial output is removed.
    """
    prepared = prepare_job(config)
    n_workers = resolve_workers(config.workers if workers is None else workers)
    posts = run_problems(prepared.problems, prepared.banks, prepared.bank_index,
                         config.inference, n_workers)
    manifest = build_manifest(prepared, posts)
    selections = [p.selections for p in posts]
    renders = []
    for r in range(config.render_count):
        draws = draw_indices(selections, config.inference.master_seed, r)
        renders.append((draws, render_draw(selections, draws, prepared.banks, prepared.bank_index,
                                           config.mode, prepared.geometry, prepared.audio)))
    manifest["renders"] = [d for d, _ in renders]
    artifact = Artifact(manifest, selections, [p.traces for p in posts])
    out = Path(config.output)
    existed = out.exists()
    try:
        write_artifact(out, artifact)
        for r, (_, rendered) in enumerate(renders):
            save_render(out / f"render_{r:03d}", rendered, config.mode)
    except Exception:
        if existed:
            logger.error("job failed while writing into existing directory %s", out)
        else:
            shutil.rmtree(out, ignore_errors=True)
        raise
    return artifact


def load_for_render(artifact: Union[Artifact, str, Path]):
    """Rebuild the source banks for an artifact and check the corpus fingerprint."""
    if not isinstance(artifact, Artifact):
        artifact = read_artifact(artifact)
    manifest = artifact.manifest
    config = config_from_dict(manifest["config"], check_paths=False)
    grid = _grid_from_geometry(manifest["geometry"]) if config.mode.startswith("image") else None
    banks, meta = source_banks(config, grid)
    if banks_fingerprint(banks) != manifest["bank_fingerprint"]:
        raise StaleCorpusError("source corpus does not match the artifact's bank fingerprint")
    n = artifact.n_fragments
    bank_index = [0] * n if len(banks) == 1 else list(range(len(banks)))
    audio_meta = {k: (decode_float(v) if k == "db_reference" else v)
                  for k, v in manifest.get("audio", {}).items()}
    for sel, bi in zip(artifact.selections, bank_index):
        if sel.min() < 0 or sel.max() >= banks[bi].n_fragments:
            raise InconsistentArtifactError("artifact selects indices outside the source bank")
    return artifact, banks, bank_index, audio_meta


def render_from_artifact(artifact, draws: Optional[Sequence[int]] = None, seed: Optional[int] = None,
                         render_index: int = 0, loaded=None):
    """Render one mosaic; returns (image array or AudioClip, draws used).

    Without ``draws`` one stored sample per fragment is drawn from the
    (seed, render_index) stream; fragments with a single stored sample need
    no randomness at all.
    """
    artifact, banks, bank_index, audio_meta = loaded or load_for_render(artifact)
    manifest = artifact.manifest
    if draws is None:
        seed = manifest["master_seed"] if seed is None else seed
        draws = draw_indices(artifact.selections, seed, render_index)
    if len(draws) != artifact.n_fragments:
        raise InconsistentArtifactError(f"{len(draws)} draws for {artifact.n_fragments} fragments")
    rendered = render_draw(artifact.selections, draws, banks, bank_index, manifest["mode"],
                           manifest["geometry"], audio_meta)
    return rendered, list(draws)


def diagnostics_report(artifact: Union[Artifact, str, Path]) -> dict:
    """Per-fragment split-R-hat (from stored traces) and mean RMS residual."""
    if not isinstance(artifact, Artifact):
        artifact = read_artifact(artifact)
    warmup = int(artifact.manifest.get("num_warmup", 0))
    frag_meta = artifact.manifest.get("fragments", [])
    rows = []
    for i, tr in enumerate(artifact.traces):
        post = tr[:, warmup:]
        rhat = None
        if post.shape[0] >= 2 and post.shape[1] >= 4:
            rhat = split_rhat(post)
        residual = frag_meta[i].get("mean_residual") if i < len(frag_meta) else None
        rows.append({"fragment_id": i, "split_rhat": rhat,
                     "flagged": rhat is not None and not rhat <= RHAT_WARN_THRESHOLD,
                     "mean_residual": residual})
    values = [r["split_rhat"] for r in rows if r["split_rhat"] is not None]
    summary = None
    if values:
        summary = {"min": float(np.min(values)), "median": float(np.median(values)),
                   "max": float(np.max(values))}
    return {
        "rhat_available": bool(values),
        "rhat_threshold": RHAT_WARN_THRESHOLD,
        "rhat_summary": summary,
        "flagged": [r["fragment_id"] for r in rows if r["flagged"]],
        "fragments": rows,
    }


def format_report(report: dict) -> str:
    lines = []
    if report["rhat_available"]:
        s = report["rhat_summary"]
        lines.append(f"split R-hat  min {s['min']:.4f}  median {s['median']:.4f}  max {s['max']:.4f}")
    else:
        lines.append("split R-hat  unavailable (fewer than 2 chains)")
    lines.append(f"flagged (R-hat > {report['rhat_threshold']}): "
                 + (", ".join(map(str, report["flagged"])) or "none"))
    lines.append("fragment  R-hat     residual")
    for r in report["fragments"]:
        rh = "n/a" if r["split_rhat"] is None else f"{r['split_rhat']:.4f}"
        res = "n/a" if r["mean_residual"] is None else f"{r['mean_residual']:.5f}"
        mark = "  *" if r["flagged"] else ""
        lines.append(f"{r['fragment_id']:>8}  {rh:>8}  {res:>9}{mark}")
    return "\n".join(lines)
