"""
Files a run leaves behind.

Output directory layout (write-once; an existing manifest.json stops the run):

    <out>/manifest.json            schema version, subcommand, config snapshot and
                                   hash, seed, timestamp, version string and the
                                   SHA-256 of every sibling artifact
    <out>/checkpoints/ep<N>.ckpt   policy parameters after N episodes
    <out>/traces/<episode>.csv     one row per (episode, t, entity)
    <out>/metrics/summary.json     aggregated metrics
    <out>/metrics/training_log.csv episode, cum_reward, cum_penalty, loss_pi, loss_v, entropy
    <out>/run-errors.log           log file

Every CSV starts with a "# config_hash=<hex> seed=<n>" comment line and every JSON
output carries config_hash and seed keys.

Checkpoint container (all integers little-endian):

    8 bytes   magic b"UAVCKPT\\0"
    u32       format version
    u32       header length, then that many bytes of UTF-8 JSON
    u32       tensor count, then per tensor:
                u16 name length, name (UTF-8), u32 ndim, ndim x u64 dims,
                prod(dims) x float64 ('<f8')
    32 bytes  SHA-256 of everything before it

A short file, a bad magic or a digest mismatch is a CheckpointIntegrityError; a
newer format version is a SchemaVersionError; head sizes that do not match the
environment are a CheckpointShapeError naming the head.
"""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from dateutil.parser import isoparse

from environment import ActionSpec
from ppo_agent import POLICY_VERSION, PolicyParameters, PpoHyperparams, TrainingRecord

logger = logging.getLogger("uav_relay_sim.persistence")

SCHEMA_VERSION = 1
CHECKPOINT_MAGIC = b"UAVCKPT\0"
CHECKPOINT_FORMAT_VERSION = 1
DIGEST_SIZE = 32
HASH_CHUNK_SIZE = 1024 * 1024
MANIFEST_NAME = "manifest.json"
TRAINING_LOG_HEADER = ("episode", "cum_reward", "cum_penalty", "loss_pi", "loss_v", "entropy")


class CheckpointIntegrityError(ValueError):
    pass


class CheckpointShapeError(ValueError):
    def __init__(self, head: str, stored: object, expected: object, others: Sequence[str] = ()) -> None:
        extra = f" (also: {', '.join(others)})" if others else ""
        super().__init__(f"Checkpoint head '{head}' has size {stored}, environment expects {expected}{extra}")
        self.head = head


class SchemaVersionError(ValueError):
    def __init__(self, kind: str, found: object, supported: int) -> None:
        super().__init__(f"{kind} version {found} is newer than supported version {supported}")
        self.found = found


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(*configs: object) -> str:
    """SHA-256 of the canonical JSON of the resolved configuration values."""
    merged: Dict[str, Any] = {}
    for index, config in enumerate(configs):
        prefix = "" if index == 0 else "ppo_"
        for key, value in dataclasses.asdict(config).items():
            merged[prefix + key] = value
    return hashlib.sha256(canonical_json(merged).encode("utf-8")).hexdigest()


def hash_file(path: Path) -> str:
    sha256 = hashlib.sha256()
    with path.open("rb") as handle:
        while True:
            chunk = handle.read(HASH_CHUNK_SIZE)
            if not chunk:
                break
            sha256.update(chunk)
    return sha256.hexdigest()


# Checkpoints


def _checkpoint_header(params: PolicyParameters, cfg_hash: str) -> Dict[str, Any]:
    return {
        "policy_version": params.version,
        "hyperparams": dataclasses.asdict(params.hyperparams),
        "seed": params.seed,
        "episodes": params.episodes,
        "head_sizes": dict(params.head_sizes),
        "adam_step": params.adam_step,
        "config_hash": cfg_hash,
    }


def encode_checkpoint(params: PolicyParameters, cfg_hash: str = "") -> bytes:
    buffer = io.BytesIO()
    header = canonical_json(_checkpoint_header(params, cfg_hash)).encode("utf-8")
    buffer.write(CHECKPOINT_MAGIC)
    buffer.write(struct.pack("<II", CHECKPOINT_FORMAT_VERSION, len(header)))
    buffer.write(header)
    buffer.write(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.tensors.items():
        encoded = name.encode("utf-8")
        array = np.ascontiguousarray(tensor, dtype="<f8")
        buffer.write(struct.pack("<H", len(encoded)))
        buffer.write(encoded)
        buffer.write(struct.pack("<I", array.ndim))
        buffer.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        buffer.write(array.tobytes())
    body = buffer.getvalue()
    return body + hashlib.sha256(body).digest()


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointIntegrityError(
                f"Checkpoint truncated: needed {size} bytes at offset {self.offset}, file body is {len(self.data)}"
            )
        chunk = self.data[self.offset: end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data: bytes) -> Tuple[PolicyParameters, Dict[str, Any]]:
    minimum = len(CHECKPOINT_MAGIC) + 8 + DIGEST_SIZE
    if len(data) < minimum:
        raise CheckpointIntegrityError(f"Checkpoint is {len(data)} bytes, shorter than any valid file")
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointIntegrityError("Not a checkpoint file (bad magic)")
    body, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointIntegrityError("Checkpoint digest mismatch (truncated or modified file)")
    reader = _Reader(body)
    reader.take(len(CHECKPOINT_MAGIC))
    version, header_length = reader.unpack("<II")
    if version > CHECKPOINT_FORMAT_VERSION:
        raise SchemaVersionError("Checkpoint format", version, CHECKPOINT_FORMAT_VERSION)
    try:
        header = json.loads(reader.take(header_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointIntegrityError(f"Checkpoint header is not valid JSON: {exc}") from exc
    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<H")
        name = reader.take(name_length).decode("utf-8")
        (ndim,) = reader.unpack("<I")
        shape = reader.unpack(f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape)) if shape else 1
        tensors[name] = np.frombuffer(reader.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if reader.offset != len(body):
        raise CheckpointIntegrityError("Trailing bytes after the last tensor")
    if header.get("policy_version") != POLICY_VERSION:
        raise SchemaVersionError("Policy", header.get("policy_version"), 1)
    params = PolicyParameters(
        tensors=tensors,
        hyperparams=PpoHyperparams(**header["hyperparams"]),
        seed=int(header["seed"]),
        episodes=int(header["episodes"]),
        head_sizes={k: int(v) for k, v in header["head_sizes"].items()},
        adam_step=int(header["adam_step"]),
        version=header["policy_version"],
    )
    return params, header


def check_head_sizes(stored: Mapping[str, int], spec: ActionSpec) -> None:
    expected = spec.head_sizes()
    mismatched = [head for head, size in expected.items() if stored.get(head) != size]
    if mismatched:
        head = mismatched[0]
        raise CheckpointShapeError(head, stored.get(head), expected[head], mismatched[1:])


def save_checkpoint(path: Path, params: PolicyParameters, cfg_hash: str = "") -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(params, cfg_hash))
    logger.info("Wrote checkpoint %s (%d tensors, %d episodes)", path, len(params.tensors), params.episodes)
    return path


def load_checkpoint(path: Path, spec: Optional[ActionSpec] = None) -> PolicyParameters:
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointIntegrityError(f"Cannot read checkpoint {path}: {exc}") from exc
    params, _ = decode_checkpoint(data)
    if spec is not None:
        check_head_sizes(params.head_sizes, spec)
    return params


# Manifests


def manifest_timestamp(environ: Optional[Mapping[str, str]] = None) -> str:
    environ = os.environ if environ is None else environ
    epoch = environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(timezone.utc).replace(microsecond=0)
    return moment.isoformat()


@dataclass
class Manifest:
    subcommand: str
    config: Dict[str, Any]
    config_hash: str
    seed: int
    version: str
    timestamp: str
    artifacts: Dict[str, str] = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @property
    def created(self) -> datetime:
        return isoparse(self.timestamp)


@dataclass
class OutputLayout:
    root: Path

    @property
    def manifest(self) -> Path:
        return self.root / MANIFEST_NAME

    @property
    def log(self) -> Path:
        return self.root / "run-errors.log"

    @property
    def summary(self) -> Path:
        return self.root / "metrics" / "summary.json"

    @property
    def training_log(self) -> Path:
        return self.root / "metrics" / "training_log.csv"

    def checkpoint(self, episodes: int) -> Path:
        return self.root / "checkpoints" / f"ep{episodes}.ckpt"

    def trace(self, episode: int, policy: str = "", suffix: str = ".csv") -> Path:
        name = f"{policy}-{episode}{suffix}" if policy else f"{episode}{suffix}"
        return self.root / "traces" / name

    def metrics(self, name: str) -> Path:
        return self.root / "metrics" / name

    def prepare(self) -> None:
        if self.manifest.exists():
            raise FileExistsError(f"{self.manifest} already exists; refusing to overwrite a finished run")
        for sub in ("checkpoints", "traces", "metrics"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)


def collect_artifacts(root: Path) -> Dict[str, str]:
    artifacts: Dict[str, str] = {}
    for path in sorted(root.rglob("*")):
        if not path.is_file() or path.name in (MANIFEST_NAME, "run-errors.log"):
            continue
        artifacts[path.relative_to(root).as_posix()] = hash_file(path)
    return artifacts


def write_manifest(root: Path, manifest: Manifest) -> Path:
    path = root / MANIFEST_NAME
    if path.exists():
        raise FileExistsError(f"{path} already exists; refusing to overwrite a finished run")
    manifest.artifacts = collect_artifacts(root)
    write_json(path, dataclasses.asdict(manifest))
    return path


def load_manifest(path: Path) -> Manifest:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"Cannot read manifest {path}: {exc}") from exc
    version = raw.get("schema_version")
    if not isinstance(version, int):
        raise ValueError(f"Manifest {path} has no schema_version")
    if version > SCHEMA_VERSION:
        raise SchemaVersionError("Manifest schema", version, SCHEMA_VERSION)
    manifest = Manifest(**raw)
    try:
        manifest.created
    except ValueError as exc:
        raise ValueError(f"Manifest {path} has an invalid timestamp {manifest.timestamp!r}") from exc
    return manifest


def verify_manifest(root: Path) -> List[str]:
    """Relative paths whose content no longer matches the manifest (or vanished)."""
    manifest = load_manifest(root / MANIFEST_NAME)
    problems: List[str] = []
    for rel_path, expected in sorted(manifest.artifacts.items()):
        path = root / rel_path
        if not path.is_file():
            problems.append(f"{rel_path}: missing")
        elif hash_file(path) != expected:
            problems.append(f"{rel_path}: hash mismatch")
    return problems


# CSV and JSON outputs


def write_json(path: Path, value: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(value, sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    cfg_hash: str,
    seed: int,
    **tags: Any,
) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    comment = f"# config_hash={cfg_hash} seed={seed}"
    for key, value in sorted(tags.items()):
        comment += f" {key}={value}"
    with path.open("w", encoding="utf-8", newline="") as handle:
        handle.write(comment + "\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def read_csv(path: Path) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
    """Comment tags and rows of a file written by write_csv."""
    with path.open("r", encoding="utf-8", newline="") as handle:
        first = handle.readline().strip()
        if not first.startswith("#"):
            raise ValueError(f"{path} lacks the config_hash comment line")
        tags = dict(part.split("=", 1) for part in first[1:].split())
        rows = list(csv.DictReader(handle))
    return tags, rows


def write_training_log(path: Path, records: Iterable[TrainingRecord], cfg_hash: str, seed: int) -> Path:
    rows = (
        (r.episode, r.cum_reward, r.cum_penalty, r.loss_pi, r.loss_v, r.entropy)
        for r in records
    )
    return write_csv(path, TRAINING_LOG_HEADER, rows, cfg_hash, seed)
