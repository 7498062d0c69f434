"""JSON envelope shared by every artifact, plus run manifests."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .detection import CoincidenceDistribution
from .em import EMResult
from .errors import DomainError
from .intensity import IntensityGrid
from .pnd import JointPND

FORMAT_VERSION = 1

_KINDS = {
    "joint_pnd": JointPND,
    "coincidence": CoincidenceDistribution,
    "em_result": EMResult,
    "intensity_grid": IntensityGrid,
}
_KIND_OF = {cls: kind for kind, cls in _KINDS.items()}


def envelope(obj) -> dict:
    kind = _KIND_OF.get(type(obj))
    if kind is None:
        raise TypeError(f"no artifact kind for {type(obj).__name__}")
    return {"kind": kind, "version": FORMAT_VERSION, "payload": obj.to_dict()}


def dumps(obj) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(envelope(obj), sort_keys=True, allow_nan=False) + "\n"


def write_artifact(obj, path) -> None:
    Path(path).write_text(dumps(obj))


def _guess_kind(data: dict) -> str:
    if "kl_trace" in data:
        return "em_result"
    if "n_max_s" in data:
        return "joint_pnd"
    if "c_max_s" in data:
        return "coincidence"
    if "w_s_axis" in data:
        return "intensity_grid"
    raise DomainError("cannot tell what kind of artifact this is")


def loads(text: str):
    """Parse an enveloped artifact, or a bare payload whose kind is inferred."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"invalid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise DomainError("artifact must be a JSON object")
    if "payload" in data:
        kind = data.get("kind")
        if data.get("version") != FORMAT_VERSION:
            raise DomainError(f"unsupported artifact version {data.get('version')!r}")
        payload = data["payload"]
    else:
        payload = data
        kind = _guess_kind(data)
    if kind not in _KINDS:
        raise DomainError(f"unknown artifact kind {kind!r}")
    try:
        return _KINDS[kind].from_dict(payload)
    except (KeyError, TypeError, ValueError) as exc:
        raise DomainError(f"malformed {kind} artifact: {exc}") from exc


def read_artifact(path):
    return loads(Path(path).read_text())


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    command: str
    parameters: dict
    seed: int | None = None
    tool_version: str = __version__
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    wall_time_s: float = 0.0

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = sha256(path)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "parameters": self.parameters,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time_s": self.wall_time_s,
        }

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def manifest_path(out) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")
