"""On-disk posterior artifact: ``manifest.json`` plus line-per-record files.

``records.jsonl`` holds one stored selection per line (fragment, chain,
sample, slots); ``traces.jsonl`` holds the per-chain log-likelihood traces.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List

import numpy as np

from .exceptions import InconsistentArtifactError, MosaicIOError

FORMAT = "datamosaic-posterior/1"
MANIFEST = "manifest.json"
RECORDS = "records.jsonl"
TRACES = "traces.jsonl"


@dataclass
class Artifact:
    manifest: dict
    selections: List[np.ndarray]  # per fragment: (n_chains, n_samples, num_clips)
    traces: List[np.ndarray]      # per fragment: (n_chains, trace_length)

    @property
    def n_fragments(self) -> int:
        return len(self.selections)

    def drop_fragment(self, index: int) -> "Artifact":
        keep = [i for i in range(self.n_fragments) if i != index]
        return Artifact(self.manifest, [self.selections[i] for i in keep],
                        [self.traces[i] for i in keep])


def encode_float(x):
    x = float(x)
    if math.isnan(x):
        return None
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return x


def decode_float(x):
    if x is None:
        return float("nan")
    return float(x)


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_artifact(directory, artifact: Artifact) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = dict(artifact.manifest, format=FORMAT)
    with open(directory / MANIFEST, "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
    with open(directory / RECORDS, "w") as fh:
        for frag, sel in enumerate(artifact.selections):
            for chain in range(sel.shape[0]):
                for sample in range(sel.shape[1]):
                    fh.write(_dumps({"fragment_id": frag, "chain": chain, "sample": sample,
                                     "slots": sel[chain, sample].tolist()}) + "\n")
    with open(directory / TRACES, "w") as fh:
        for frag, tr in enumerate(artifact.traces):
            for chain in range(tr.shape[0]):
                fh.write(_dumps({"fragment_id": frag, "chain": chain,
                                 "log_lik": [encode_float(v) for v in tr[chain]]}) + "\n")
    return directory


def read_artifact(directory) -> Artifact:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
        record_lines = (directory / RECORDS).read_text().splitlines()
        trace_lines = (directory / TRACES).read_text().splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise MosaicIOError(f"cannot read artifact {directory}: {exc}") from exc
    if manifest.get("format") != FORMAT:
        raise InconsistentArtifactError(f"unknown artifact format {manifest.get('format')!r}")
    n_frag = int(manifest["n_fragments"])
    num_clips = int(manifest["num_clips"])
    slots = [dict() for _ in range(n_frag)]
    for line in record_lines:
        rec = json.loads(line)
        if len(rec["slots"]) != num_clips:
            raise InconsistentArtifactError(
                f"record {rec['fragment_id']}/{rec['chain']}/{rec['sample']} has "
                f"{len(rec['slots'])} slots, expected {num_clips}")
        slots[rec["fragment_id"]][(rec["chain"], rec["sample"])] = rec["slots"]
    selections = []
    for frag, table in enumerate(slots):
        if not table:
            raise InconsistentArtifactError(f"fragment {frag} has no records")
        n_chains = 1 + max(c for c, _ in table)
        n_samples = 1 + max(s for _, s in table)
        if len(table) != n_chains * n_samples:
            raise InconsistentArtifactError(f"fragment {frag} has an incomplete record set")
        arr = np.array([[table[(c, s)] for s in range(n_samples)] for c in range(n_chains)],
                       dtype=np.int64)
        selections.append(arr)
    traces = [dict() for _ in range(n_frag)]
    for line in trace_lines:
        rec = json.loads(line)
        traces[rec["fragment_id"]][rec["chain"]] = [decode_float(v) for v in rec["log_lik"]]
    trace_arrays = [np.array([t[c] for c in sorted(t)], dtype=np.float64) for t in traces]
    return Artifact(manifest, selections, trace_arrays)
