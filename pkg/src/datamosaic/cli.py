"""``mosaic`` command line: run, render, diag, oracle.

Exit codes: 0 success, 1 validation error, 2 runtime or numerical error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .config import load_config, parse_key_values
from .exceptions import ConfigError, InvalidInputError, MosaicError
from .inference import exact_posterior
from .jobs import diagnostics_report, format_report, load_for_render, render_from_artifact, run_job, save_render
from .model import FragmentBank, MosaicProblem

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

logger = logging.getLogger("datamosaic")


def _pairs(extra: List[str]) -> Dict[str, str]:
    """Turn leftover ``--key value`` / ``--key=value`` tokens into overrides."""
    out, i = {}, 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or len(token) < 3:
            raise ConfigError([f"unexpected argument {token!r}"])
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        elif i + 1 < len(extra):
            value = extra[i + 1]
            i += 2
        else:
            raise ConfigError([f"{key}: missing value for --{key}"])
        out[key.replace("-", "_")] = value
    return out


def _cmd_run(args, extra) -> int:
    config = load_config(args.config, _pairs(extra))
    artifact = run_job(config)
    report = diagnostics_report(artifact)
    print(f"wrote {artifact.n_fragments} fragments to {config.output}")
    print(format_report(report))
    return EXIT_OK


def _cmd_render(args, extra) -> int:
    if extra:
        raise ConfigError([f"unexpected arguments {' '.join(extra)}"])
    loaded = load_for_render(args.artifact)
    artifact = loaded[0]
    seed = artifact.manifest["master_seed"] if args.seed is None else args.seed
    out = Path(args.out) if args.out else Path(args.artifact) / f"renders_seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    for r in range(args.samples):
        rendered, _ = render_from_artifact(artifact, seed=seed, render_index=r, loaded=loaded)
        path = save_render(out / f"render_{r:03d}", rendered, artifact.manifest["mode"])
        print(path)
    return EXIT_OK


def _cmd_diag(args, extra) -> int:
    report = diagnostics_report(args.artifact)
    print(json.dumps(report, indent=2) if args.json else format_report(report))
    return EXIT_OK


def _floats(text: str) -> List[List[float]]:
    return [[float(v) for v in row.replace(",", " ").split()] for row in text.split(";") if row.strip()]


def _cmd_oracle(args, extra) -> int:
    values = parse_key_values(Path(args.config).read_text())
    values.update(_pairs(extra))
    errors = [f"{k}: required" for k in ("bank", "target", "num_clips", "stddev") if k not in values]
    if errors:
        raise ConfigError(errors)
    try:
        bank = FragmentBank(np.array(_floats(values["bank"])))
        target = np.array(_floats(values["target"])).reshape(-1)
        candidates = (np.array(_floats(values["candidates"])[0], dtype=np.int64)
                      if "candidates" in values else np.arange(bank.n_fragments))
        problem = MosaicProblem(target, candidates, int(values["num_clips"]), float(values["stddev"]))
    except ValueError as exc:
        raise ConfigError([str(exc)]) from exc
    problem.check(bank)
    post = exact_posterior(problem, bank)
    entries = [{"multiset": list(k), "probability": p} for k, p in sorted(post.probs.items())]
    print(json.dumps({"support_size": post.support_size, "mode": list(post.mode()),
                      "posterior": entries}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mosaic", description="Bayesian data mosaicing")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a mosaicing job from a key-value config file")
    p.add_argument("config")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("render", help="render mosaics from a posterior artifact")
    p.add_argument("artifact")
    p.add_argument("--samples", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("diag", help="convergence diagnostics for an artifact")
    p.add_argument("artifact")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=_cmd_diag)

    p = sub.add_parser("oracle", help="dump the exact posterior of a tiny problem")
    p.add_argument("config")
    p.set_defaults(func=_cmd_oracle)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, extra)
    except (ConfigError, InvalidInputError) as exc:
        errors = getattr(exc, "errors", [str(exc)])
        for err in errors:
            print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    except (MosaicError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
