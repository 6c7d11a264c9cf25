"""Artifact manifests: every pipeline output carries its provenance.

A manifest is a small JSON file next to the artifact recording the
artifact's own hash, the hash of the producing configuration, the seed,
and the hashes of every input artifact.  Rerunning a step with the same
inputs must reproduce the same hashes; manifests deliberately contain no
timestamps so they compare byte-for-byte too.
"""

from __future__ import annotations

import hashlib
import json
import os

from .errors import DataError

MANIFEST_VERSION = 1
MANIFEST_SUFFIX = ".manifest.json"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def config_hash(config_dict: dict) -> str:
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return sha256_bytes(canonical.encode("utf-8"))


def manifest_path(artifact_path) -> str:
    return str(artifact_path) + MANIFEST_SUFFIX


def write_manifest(artifact_path, kind: str, config_dict: dict, seed: int,
                   inputs: dict[str, str] | None = None,
                   extra: dict | None = None) -> dict:
    """Record provenance for `artifact_path`; input values are file paths."""
    manifest = {
        "version": MANIFEST_VERSION,
        "kind": kind,
        "artifact": os.path.basename(str(artifact_path)),
        "sha256": sha256_file(artifact_path),
        "config_sha256": config_hash(config_dict),
        "seed": seed,
        "inputs": {name: sha256_file(path) for name, path in (inputs or {}).items()},
    }
    if extra:
        manifest["extra"] = extra
    with open(manifest_path(artifact_path), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def read_manifest(artifact_path) -> dict:
    path = manifest_path(artifact_path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as exc:
        raise DataError(f"missing manifest {path}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version in {path}")
    return manifest


def require_artifact(path, producer: str) -> None:
    """Fail with a pointer at the subcommand that creates `path`."""
    if not os.path.exists(path):
        raise DataError(f"missing artifact {path}; run `opsum {producer}` first")
