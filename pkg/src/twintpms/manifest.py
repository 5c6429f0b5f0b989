"""Run manifests: a JSON record of what a command did and what it wrote."""
from __future__ import annotations

import json
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    """``parameters`` are the command's own options, so a manifest can be
    replayed. ``headline`` holds the numbers worth comparing between runs
    (final energy, p-list, roots)."""

    command: str
    parameters: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    deterministic: bool = True  # no random seeds anywhere in the pipelines
    outputs: list = field(default_factory=list)
    status: str = "completed"
    headline: dict = field(default_factory=dict)
    started: str = field(default_factory=_now)
    elapsed: float = 0.0
    environment: dict = field(default_factory=lambda: {"python": sys.version.split()[0], "platform": platform.platform()})

    def to_json(self) -> dict:
        return json.loads(json.dumps(asdict(self), default=_plain))

    @classmethod
    def from_json(cls, doc: dict) -> "RunManifest":
        if "command" not in doc:
            raise ValueError("manifest lacks a command")
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in doc.items() if k in known})

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _plain(x):
    """JSON fallback for numpy scalars, arrays and complex numbers."""
    if hasattr(x, "tolist"):
        return x.tolist()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return str(x)
