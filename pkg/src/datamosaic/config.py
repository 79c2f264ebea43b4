"""Job configuration: ``key = value`` text files, presets and CLI overrides."""
from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional

from .audio import DB_FLOOR, DEFAULT_NFFT, DEFAULT_SAMPLE_RATE, WINDOWS, default_hop
from .exceptions import ConfigError
from .inference import KERNELS, InferenceConfig

MODES = ("image-inplace", "image-photographic", "audio")

# Engine defaults; the stddev values are empirical choices in data units.
IMAGE_STDDEV = 0.05
IMAGE_STDDEV_LARGE = 0.2
AUDIO_STDDEV_DB = 3.0

PRESETS: Dict[str, Dict[str, str]] = {
    "image-default": {"kernel": "gibbs", "num_warmup": "1000", "num_clips": "30"},
    "audio-default": {"kernel": "gibbs", "num_warmup": "20000", "num_clips": "30",
                      "top_k": "200", "nfft": str(DEFAULT_NFFT)},
    "low-compute": {"kernel": "gibbs", "num_warmup": "10", "num_clips": "30"},
}

_INT_KEYS = ("window", "stride", "cell_side", "image_size", "nfft", "hop", "num_clips", "top_k",
             "num_warmup", "num_samples", "thinning", "num_chains", "seed", "workers",
             "render_count", "sample_rate")
_FLOAT_KEYS = ("stddev", "db_floor")
_PATH_KEYS = ("target", "sources", "output")
_STR_KEYS = ("mode", "kernel", "analysis_window", "preset")
KNOWN_KEYS = frozenset(_INT_KEYS + _FLOAT_KEYS + _PATH_KEYS + _STR_KEYS)


@dataclass
class JobConfig:
    mode: str
    target: Path
    sources: Path
    output: Path
    inference: InferenceConfig
    num_clips: int = 30
    stddev: float = IMAGE_STDDEV
    window: int = 64
    stride: int = 64
    cell_side: int = 16
    image_size: Optional[int] = None
    nfft: int = DEFAULT_NFFT
    hop: Optional[int] = None
    analysis_window: str = "rect"
    db_floor: float = DB_FLOOR
    sample_rate: int = DEFAULT_SAMPLE_RATE
    top_k: Optional[int] = None
    workers: int = 1
    render_count: int = 10
    preset: Optional[str] = None
    extra: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in _PATH_KEYS:
            out[key] = str(getattr(self, key))
        out.pop("extra")
        out.pop("workers")
        return out


def parse_key_values(text: str) -> Dict[str, str]:
    """Parse ``key = value`` lines (``#`` comments) into a flat dict."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[job]\n" + text)
    except configparser.Error as exc:
        raise ConfigError([f"malformed config: {exc}"]) from exc
    return {k.strip().replace("-", "_"): v.strip() for k, v in parser["job"].items()}


def _defaults(mode: Optional[str]) -> Dict[str, str]:
    base = {"kernel": "gibbs", "num_samples": "100", "thinning": "1", "num_chains": "2",
            "seed": "0", "workers": "1", "render_count": "10", "num_clips": "30",
            "analysis_window": "rect", "db_floor": str(DB_FLOOR),
            "sample_rate": str(DEFAULT_SAMPLE_RATE)}
    if mode == "audio":
        base.update(num_warmup="20000", stddev=str(AUDIO_STDDEV_DB), nfft=str(DEFAULT_NFFT),
                    top_k="200")
    else:
        base.update(num_warmup="1000", stddev=str(IMAGE_STDDEV), window="64", cell_side="16")
    return base


def validate_config(raw: str, overrides: Optional[Mapping[str, str]] = None,
                    base_dir: Optional[Path] = None, check_paths: bool = True) -> JobConfig:
    """Build a JobConfig; every violation is collected and raised together."""
    values = parse_key_values(raw)
    values.update({k.replace("-", "_"): str(v) for k, v in (overrides or {}).items()})
    errors: List[str] = []

    mode = values.get("mode")
    if mode not in MODES:
        errors.append(f"mode: must be one of {', '.join(MODES)} (got {mode!r})")
    merged = _defaults(mode)
    preset = values.get("preset")
    if preset:
        if preset not in PRESETS:
            errors.append(f"preset: unknown preset {preset!r} (known: {', '.join(PRESETS)})")
        else:
            merged.update(PRESETS[preset])
    merged.update(values)

    for key in sorted(set(merged) - KNOWN_KEYS):
        errors.append(f"{key}: unknown key")

    parsed = {}
    for key in _INT_KEYS:
        if key in merged and merged[key] != "":
            try:
                parsed[key] = int(merged[key])
            except ValueError:
                errors.append(f"{key}: must be an integer (got {merged[key]!r})")
    for key in _FLOAT_KEYS:
        if key in merged:
            try:
                parsed[key] = float(merged[key])
            except ValueError:
                errors.append(f"{key}: must be a number (got {merged[key]!r})")

    def positive(key, allow_missing=True):
        if key in parsed and parsed[key] < 1:
            errors.append(f"{key}: must be positive")
        elif key not in parsed and not allow_missing:
            errors.append(f"{key}: required")

    if "stddev" in parsed and not parsed["stddev"] > 0:
        errors.append("stddev: stddev must be positive")
    for key in ("num_clips", "workers", "num_samples", "thinning", "num_chains", "nfft", "hop",
                "top_k", "image_size", "sample_rate", "cell_side", "window", "stride"):
        positive(key)
    if parsed.get("num_warmup", 0) < 0:
        errors.append("num_warmup: must be >= 0")
    if parsed.get("render_count", 0) < 0:
        errors.append("render_count: must be >= 0")
    if parsed.get("seed", 0) < 0:
        errors.append("seed: must be a nonnegative 64-bit integer")
    if merged.get("kernel") not in KERNELS:
        errors.append(f"kernel: must be one of {', '.join(KERNELS)}")
    if merged.get("analysis_window") not in WINDOWS:
        errors.append(f"analysis_window: must be one of {', '.join(WINDOWS)}")

    if mode == "image-inplace":
        window = parsed.get("window", 64)
        stride = parsed.get("stride", window)
        parsed["stride"] = stride
        if stride > window:
            errors.append(f"stride: stride ({stride}) must not exceed window ({window})")
    elif mode == "audio":
        nfft = parsed.get("nfft", DEFAULT_NFFT)
        hop = parsed.get("hop", default_hop(nfft, merged.get("analysis_window", "rect")))
        parsed["hop"] = hop
        if hop > nfft:
            errors.append(f"hop: hop ({hop}) must not exceed nfft ({nfft})")

    paths = {}
    for key in _PATH_KEYS:
        if not merged.get(key):
            errors.append(f"{key}: required")
            continue
        path = Path(merged[key]).expanduser()
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        paths[key] = path
    if check_paths:
        if "target" in paths and not paths["target"].is_file():
            errors.append(f"target: file {paths['target']} does not exist")
        if "sources" in paths and not paths["sources"].is_dir():
            errors.append(f"sources: directory {paths['sources']} does not exist")

    if errors:
        raise ConfigError(errors)

    inference = InferenceConfig(
        kernel=merged["kernel"], num_warmup=parsed["num_warmup"],
        num_samples=parsed["num_samples"], thinning=parsed["thinning"],
        num_chains=parsed["num_chains"], master_seed=parsed["seed"],
    )
    return JobConfig(
        mode=mode, target=paths["target"], sources=paths["sources"], output=paths["output"],
        inference=inference, num_clips=parsed["num_clips"], stddev=parsed["stddev"],
        window=parsed.get("window", 64), stride=parsed.get("stride", parsed.get("window", 64)),
        cell_side=parsed.get("cell_side", 16), image_size=parsed.get("image_size"),
        nfft=parsed.get("nfft", DEFAULT_NFFT), hop=parsed.get("hop"),
        analysis_window=merged["analysis_window"], db_floor=parsed["db_floor"],
        sample_rate=parsed["sample_rate"], top_k=parsed.get("top_k"),
        workers=parsed["workers"], render_count=parsed["render_count"], preset=preset,
    )


def load_config(path, overrides: Optional[Mapping[str, str]] = None, check_paths: bool = True) -> JobConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"config: cannot read {path}: {exc}"]) from exc
    return validate_config(text, overrides, base_dir=path.parent, check_paths=check_paths)


def config_from_dict(values: Mapping, check_paths: bool = True) -> JobConfig:
    """Rebuild a JobConfig from a manifest's ``config`` record."""
    flat = {k: v for k, v in values.items() if k != "inference" and v is not None}
    inf = values.get("inference") or {}
    flat.update(kernel=inf.get("kernel", "gibbs"), num_warmup=inf.get("num_warmup", 0),
                num_samples=inf.get("num_samples", 1), thinning=inf.get("thinning", 1),
                num_chains=inf.get("num_chains", 1), seed=inf.get("master_seed", 0))
    text = "\n".join(f"{k} = {v}" for k, v in flat.items())
    return validate_config(text, check_paths=check_paths)
