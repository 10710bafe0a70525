"""Run manifest: hash-verified record of every pipeline stage.

The manifest is the run's source of truth for caching and reproducibility:
each stage record carries the hash of its full input slice (config fields +
upstream artifact hashes + template IDs), the hashes of every artifact it
consumed and produced, its seeds, timing, and the gateway calls it made.
A stage may be skipped on rerun only when its input hash matches and all
recorded outputs still verify.
"""

from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

from .errors import ManifestError

MANIFEST_NAME = "manifest.json"
MANIFEST_VERSION = 1


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_hash(obj) -> str:
    """sha256 of the canonical JSON encoding (sorted keys, tight separators)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def hash_paths(base: Path, relpaths) -> dict[str, str]:
    return {rel: file_sha256(base / rel) for rel in sorted(relpaths)}


class ManifestBuilder:
    """Accumulates stage records for one run and writes ``manifest.json``."""

    def __init__(self, out_dir: str | Path, config_snapshot: dict,
                 template_ids: dict[str, str]):
        self.out_dir = Path(out_dir)
        self.doc = {
            "version": MANIFEST_VERSION,
            "config": config_snapshot,
            "templates": template_ids,
            "alpha": None,
            "stages": [],
        }
        self._prior = _load_prior(self.out_dir)

    # -- caching ------------------------------------------------------------

    def cached_record(self, name: str, input_hash: str) -> dict | None:
        """A prior record reusable for this stage, if inputs and outputs hold."""
        rec = self._prior.get(name)
        if rec is None or rec.get("input_hash") != input_hash:
            return None
        try:
            for rel, digest in rec.get("outputs", {}).items():
                if file_sha256(self.out_dir / rel) != digest:
                    return None
        except OSError:
            return None
        reused = dict(rec)
        reused["cached"] = True
        reused["gateway_calls"] = []
        return reused

    def consume(self, record: dict, relpath: str) -> None:
        """Verify an upstream artifact against earlier records and log it."""
        digest = file_sha256(self.out_dir / relpath)
        for earlier in self.doc["stages"]:
            if earlier.get("outputs", {}).get(relpath) == digest:
                record.setdefault("consumed", {})[relpath] = digest
                return
        raise ManifestError(
            f"artifact {relpath!r} consumed without a matching producer record"
        )

    def add(self, record: dict) -> None:
        self.doc["stages"].append(record)

    def set_alpha(self, mode: str, resolved: float, t_inv: int,
                  backend_range: tuple[float, float]) -> None:
        self.doc["alpha"] = {
            "mode": mode,
            "resolved": resolved,
            "t_inv": t_inv,
            "backend_range": list(backend_range),
        }

    def write(self) -> Path:
        path = self.out_dir / MANIFEST_NAME
        path.write_text(json.dumps(self.doc, indent=2))
        return path


def _load_prior(out_dir: Path) -> dict[str, dict]:
    path = out_dir / MANIFEST_NAME
    if not path.exists():
        return {}
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError:
        return {}
    return {rec["name"]: rec for rec in doc.get("stages", [])}


def verify_manifest(out_dir: str | Path) -> dict:
    """Check completeness of a persisted run; raises ManifestError on defects.

    Verifies that every recorded artifact exists with its recorded hash,
    that every consumed artifact was produced (with an identical hash) by an
    earlier stage, and that the resolved noising ratio is consistent with
    its backend range and recorded start step.
    """
    out_dir = Path(out_dir)
    path = out_dir / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no {MANIFEST_NAME} in {out_dir}")
    doc = json.loads(path.read_text())

    produced: dict[str, str] = {}
    artifact_count = 0
    for rec in doc.get("stages", []):
        for rel, digest in rec.get("outputs", {}).items():
            target = out_dir / rel
            if not target.exists():
                raise ManifestError(f"stage {rec['name']}: missing artifact {rel}")
            actual = file_sha256(target)
            if actual != digest:
                raise ManifestError(
                    f"stage {rec['name']}: artifact {rel} hash mismatch"
                )
            artifact_count += 1
        for rel, digest in rec.get("consumed", {}).items():
            if produced.get(rel) != digest:
                raise ManifestError(
                    f"stage {rec['name']}: consumed {rel} was not produced "
                    "upstream with that hash"
                )
        # outputs become visible to later stages after the record completes
        produced.update(rec.get("outputs", {}))

    alpha = doc.get("alpha")
    if alpha is not None:
        lo, hi = alpha["backend_range"]
        if not lo <= alpha["resolved"] <= hi:
            raise ManifestError(
                f"resolved alpha {alpha['resolved']} outside [{lo}, {hi}]"
            )
        T = int(doc["config"]["schedule_steps"])
        expect = min(max(int(math.floor(alpha["resolved"] * T + 0.5)), 1), T)
        if alpha["t_inv"] != expect:
            raise ManifestError(
                f"recorded t_inv {alpha['t_inv']} does not match alpha "
                f"{alpha['resolved']} (expected {expect})"
            )
    return {
        "stages": [rec["name"] for rec in doc.get("stages", [])],
        "artifacts": artifact_count,
        "alpha": alpha,
    }
