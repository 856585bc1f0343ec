"""Run configuration, seeded substreams and run manifests."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .gateway import DEFAULT_CACHE_DIR, ModelEndpoint


@dataclass
class RunConfig:
    endpoints: dict[str, ModelEndpoint] = field(default_factory=dict)
    cache_dir: str = DEFAULT_CACHE_DIR
    seed: int = 0
    output_dir: str = "."
    max_in_flight: int = 4

    @classmethod
    def from_json(cls, d: dict) -> "RunConfig":
        eps = d.get("endpoints", {})
        if isinstance(eps, list):
            names = [e["name"] for e in eps]
            if len(set(names)) != len(names):
                raise ValueError("endpoint names must be unique")
            eps = {e["name"]: e for e in eps}
        return cls(
            endpoints={k: ModelEndpoint.from_dict(v) for k, v in eps.items()},
            cache_dir=d.get("cache_dir", DEFAULT_CACHE_DIR),
            seed=int(d.get("seed", 0)),
            output_dir=d.get("output_dir", "."),
            max_in_flight=int(d.get("max_in_flight", 4)),
        )

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if not path:
            return cls()
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def to_json(self) -> dict:
        return {
            "endpoints": {k: vars(v) for k, v in sorted(self.endpoints.items())},
            "cache_dir": self.cache_dir,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "max_in_flight": self.max_in_flight,
        }

    def digest(self) -> str:
        return canonical_digest(self.to_json())

    def endpoint(self, ref) -> ModelEndpoint:
        """Look up an endpoint by config name, or build one from an inline dict."""
        if isinstance(ref, dict):
            return ModelEndpoint.from_dict(ref)
        if ref in self.endpoints:
            return self.endpoints[ref]
        raise KeyError(f"endpoint {ref!r} is not defined in the config")


def canonical_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    p = Path(path)
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
    for q in files:
        if p.is_dir():
            h.update(str(q.relative_to(p)).encode())
        h.update(q.read_bytes())
    return h.hexdigest()


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer of the run seed."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


def write_atomic(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj):
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n")


@dataclass
class RunManifest:
    subcommand: str
    config_digest: str
    inputs: dict[str, str]
    tool_version: str = __version__
    started_at: str = ""
    finished_at: str = ""
    cache_hits: int = 0
    cache_misses: int = 0
    outputs: list[str] = field(default_factory=list)

    def write(self, out_dir):
        self.finished_at = datetime.now(timezone.utc).isoformat()
        write_json(Path(out_dir) / f"manifest-{self.subcommand}.json", vars(self))
