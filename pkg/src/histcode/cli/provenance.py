"""Stage stamps: which config and inputs produced which outputs.

Each stage writes ``stage.json`` into its directory with its config hash,
upstream stamp hashes, input file digests and output file digests. A stage
whose recorded hashes all still match is skipped.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from ..errors import ConfigError, MissingUpstreamArtifact

STAMP = "stage.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def digest_files(paths, root) -> dict:
    root = Path(root)
    return {str(Path(p).relative_to(root)) if Path(p).is_relative_to(root) else Path(p).name: file_digest(p) for p in sorted(map(str, paths))}


def read_stamp(stage_dir) -> dict | None:
    p = Path(stage_dir) / STAMP
    if not p.is_file():
        return None
    return json.loads(p.read_text())


def require_stamp(stage_dir, stage: str) -> dict:
    stamp = read_stamp(stage_dir)
    if stamp is None:
        raise MissingUpstreamArtifact(Path(stage_dir) / STAMP, f"run `histcode {stage}` first")
    return stamp


def write_stamp(stage_dir, stage: str, config_hash: str, upstream: dict, inputs: dict, outputs: list) -> dict:
    stage_dir = Path(stage_dir)
    stamp = {
        "stage": stage,
        "config_hash": config_hash,
        "upstream": dict(sorted(upstream.items())),
        "inputs": dict(sorted(inputs.items())),
        "outputs": digest_files(outputs, stage_dir),
    }
    tmp = stage_dir / (STAMP + ".tmp")
    tmp.write_text(json.dumps(stamp, sort_keys=True, indent=2) + "\n")
    os.replace(tmp, stage_dir / STAMP)
    return stamp


def is_current(stage_dir, config_hash: str, upstream: dict, inputs: dict) -> bool:
    stamp = read_stamp(stage_dir)
    if stamp is None or stamp["config_hash"] != config_hash:
        return False
    if stamp["upstream"] != dict(sorted(upstream.items())) or stamp["inputs"] != dict(sorted(inputs.items())):
        return False
    stage_dir = Path(stage_dir)
    for rel, digest in stamp["outputs"].items():
        p = stage_dir / rel
        if not p.is_file() or file_digest(p) != digest:
            return False
    return True


def check_consistent(stamps: dict, expected: dict) -> None:
    """Refuse to combine stage outputs produced under different configs."""
    for stage, stamp in stamps.items():
        if stamp["config_hash"] != expected[stage]:
            raise ConfigError(
                f"stage {stage} output was produced with config {stamp['config_hash']}, current config gives "
                f"{expected[stage]}; rerun `histcode {stage}`"
            )
        for up, h in stamp["upstream"].items():
            if up in stamps and stamps[up]["config_hash"] != h:
                raise ConfigError(f"stage {stage} was built on a different {up} output; rerun `histcode {stage}`")
