"""Embedding tables, checkpoint containers and run configuration."""

import csv
import dataclasses
import json
import math
import os
import struct
import tempfile

import numpy as np

from .analytics import EmbeddingSet
from .contrastive import ContrastiveConfig
from .data import AugmentPolicy, SyntheticConfig
from .encoder import EncoderArch, EncoderParams
from .errors import (
    CheckpointVersionError,
    ConfigError,
    CorruptCheckpointError,
    FormatError,
    NotACheckpointError,
)
from .probe import ProbeConfig, ProbeParams
from .rng import MASK, SplitMix64

MAGIC = b"PHLN"
VERSION = 1
KINDS = ("encoder", "probe")


def atomic_write(path, data, mode="w"):
    """Write to a temporary file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode + ("b" if isinstance(data, bytes) else "")) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- embedding CSV ---------------------------------------------------------

def _fmt(x, dtype):
    return format(float(x), ".9g" if dtype == np.float32 else ".17g")


def write_embeddings(E, path):
    """Write ``id,label,concentration,rep_0..rep_{D-1}``, one row per sample."""
    dtype = E.H.dtype if not hasattr(E, "_source_dtype") else E._source_dtype
    lines = []
    header = ["id", "label", "concentration"] + [f"rep_{j}" for j in range(E.dim)]
    lines.append(",".join(header))
    for i in range(len(E)):
        label = "" if E.labels is None else E.labels[i]
        conc = ""
        if E.concentrations is not None and math.isfinite(E.concentrations[i]):
            conc = repr(float(E.concentrations[i]))
        row = [E.ids[i], label, conc] + [_fmt(v, dtype) for v in E.H[i]]
        lines.append(_csv_line(row))
    atomic_write(path, "\n".join(lines) + "\n")


def _csv_line(row):
    out = []
    for cell in row:
        cell = str(cell)
        if any(ch in cell for ch in ',"\n'):
            cell = '"' + cell.replace('"', '""') + '"'
        out.append(cell)
    return ",".join(out)


def embeddings_from_float32(ids, H, labels=None, concentrations=None):
    """EmbeddingSet whose values are written at float32 precision (9 digits)."""
    E = EmbeddingSet(ids, np.asarray(H, dtype=np.float32).astype(np.float64), labels, concentrations)
    E._source_dtype = np.float32
    return E


def read_embeddings(path):
    if not os.path.exists(path):
        raise FormatError(f"{path}: no such file")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty file", line=1)
    header = rows[0]
    for j, name in enumerate(("id", "label", "concentration")):
        if j >= len(header) or header[j] != name:
            raise FormatError(f"{path}: header column {j} must be '{name}'", line=1)
    reps = header[3:]
    if not reps:
        raise FormatError(f"{path}: header has no rep_ columns", line=1)
    for j, name in enumerate(reps):
        if name != f"rep_{j}":
            raise FormatError(f"{path}: expected header column 'rep_{j}', got '{name}'", line=1)
    d = len(reps)
    ids, labels, concs, H = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3 + d:
            raise FormatError(f"{path}: expected {3 + d} columns, got {len(row)}", line=lineno)
        ids.append(row[0])
        labels.append(row[1])
        try:
            concs.append(float(row[2]) if row[2] != "" else math.nan)
            H.append([float(v) for v in row[3:]])
        except ValueError as exc:
            raise FormatError(f"{path}: non-numeric value ({exc})", line=lineno) from None
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate ids")
    H = np.asarray(H, dtype=np.float64).reshape(len(ids), d)
    if not np.all(np.isfinite(H)):
        raise FormatError(f"{path}: non-finite representation value")
    has_labels = bool(labels) and all(labels)
    concs = np.asarray(concs, dtype=np.float64)
    return EmbeddingSet(
        ids,
        H,
        labels if has_labels else None,
        concs if concs.size and not np.all(np.isnan(concs)) else None,
    )


# -- checkpoints -------------------------------------------------------------

def _pack(header, values):
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    body = np.asarray(values, dtype="<f4").tobytes()
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(blob)) + blob + body


def save_checkpoint(kind, payload, path, **meta):
    """Serialize an EncoderParams ("encoder") or ProbeParams ("probe")."""
    if kind == "encoder":
        if not isinstance(payload, EncoderParams):
            raise TypeError("encoder checkpoints hold EncoderParams")
        header = {"kind": kind, "arch": payload.arch.to_dict()}
        header.update({k: meta.get(k) for k in ("schedule", "step", "seed")})
        values = payload.flat()
    elif kind == "probe":
        if not isinstance(payload, ProbeParams):
            raise TypeError("probe checkpoints hold ProbeParams")
        header = {
            "kind": kind,
            "classes": list(payload.classes),
            "class_weights": [float(w) for w in payload.class_weights],
            "dim": int(payload.dim),
        }
        values = np.concatenate([payload.weights.reshape(-1), payload.bias.reshape(-1)])
    else:
        raise ValueError(f"unknown checkpoint kind {kind!r}; expected one of {KINDS}")
    header["n_values"] = int(values.size)
    atomic_write(path, _pack(header, values))


def _unpack(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:4] != MAGIC:
        raise NotACheckpointError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported checkpoint version {version}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    if 16 + hlen > len(raw):
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptCheckpointError(f"{path}: unreadable header") from None
    body = raw[16 + hlen :]
    n = header.get("n_values")
    if not isinstance(n, int) or len(body) != 4 * n:
        raise CorruptCheckpointError(
            f"{path}: payload has {len(body)} bytes, header promises {4 * (n or 0)}"
        )
    return header, np.frombuffer(body, dtype="<f4").astype(np.float32)


def load_checkpoint_header(path):
    return _unpack(path)[0]


def load_checkpoint(path, kind=None):
    header, values = _unpack(path)
    if kind is not None and header.get("kind") != kind:
        raise FormatError(f"{path}: expected a {kind} checkpoint, found {header.get('kind')!r}")
    if header.get("kind") == "encoder":
        arch = EncoderArch(**header["arch"])
        if arch.n_params() != values.size:
            raise CorruptCheckpointError(f"{path}: parameter count does not match architecture")
        return EncoderParams.from_flat(arch, values)
    if header.get("kind") == "probe":
        k, d = len(header["classes"]), header["dim"]
        if values.size != k * d + k:
            raise CorruptCheckpointError(f"{path}: parameter count does not match probe shape")
        return ProbeParams(
            values[: k * d].reshape(k, d).copy(),
            values[k * d :].copy(),
            list(header["classes"]),
            np.asarray(header["class_weights"], dtype=np.float64),
        )
    raise CorruptCheckpointError(f"{path}: unknown checkpoint kind {header.get('kind')!r}")


# -- run configuration -------------------------------------------------------

@dataclasses.dataclass
class AnalysisConfig:
    novel_threshold: float = 0.7
    healthy_label: str = "Normal"
    label_fractions: list = dataclasses.field(default_factory=lambda: [0.1, 1.0])
    holdout_label: str = None

    def __post_init__(self):
        if not (0 < self.novel_threshold <= 1):
            raise ConfigError("analysis.novel_threshold: must lie in (0, 1]", "novel_threshold")
        self.label_fractions = [float(f) for f in self.label_fractions]
        if any(not (0 < f <= 1) for f in self.label_fractions):
            raise ConfigError("analysis.label_fractions: values must lie in (0, 1]", "label_fractions")


DEFAULT_SPLIT = [3, 1, 1]


@dataclasses.dataclass
class RunConfig:
    seed: int
    data: SyntheticConfig
    split: list
    arch: EncoderArch
    ssl: ContrastiveConfig
    probe: ProbeConfig
    analysis: AnalysisConfig

    def to_dict(self):
        data = self.data.to_dict()
        data["split"] = list(self.split)
        arch = self.arch.to_dict()
        arch.pop("input_dim")
        return {
            "seed": self.seed,
            "data": data,
            "arch": arch,
            "ssl": self.ssl.to_dict(),
            "probe": self.probe.to_dict(),
            "analysis": dataclasses.asdict(self.analysis),
        }


def _fields(cls):
    return {f.name for f in dataclasses.fields(cls)}


def _build(cls, section, name, allowed_extra=()):
    if section is None:
        section = {}
    if not isinstance(section, dict):
        raise ConfigError(f"{name}: must be a JSON object", name)
    unknown = sorted(set(section) - _fields(cls) - set(allowed_extra))
    if unknown:
        raise ConfigError(f"{name}: unknown key(s) {unknown}", f"{name}.{unknown[0]}")
    kwargs = {k: v for k, v in section.items() if k not in allowed_extra}
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{name}.{exc}", exc.field) from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}", name) from None


def _check_seed(seed, where="seed"):
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed <= MASK:
        raise ConfigError(f"{where}: must be an unsigned 64-bit integer", where)
    return seed


def stage_seed(seed, stage):
    """Per-stage seed derived from the global run seed."""
    return SplitMix64(seed).child(stage).next_u64()


def parse_run_config(doc, seed_override=None):
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    unknown = sorted(set(doc) - {"seed", "data", "arch", "ssl", "probe", "analysis"})
    if unknown:
        raise ConfigError(f"config: unknown key(s) {unknown}", unknown[0])
    if seed_override is not None:
        seed = _check_seed(seed_override, "--seed")
    elif "seed" not in doc:
        raise ConfigError("config: missing required key 'seed'", "seed")
    else:
        seed = _check_seed(doc["seed"])
    data_doc = dict(doc.get("data") or {})
    split = data_doc.pop("split", DEFAULT_SPLIT)
    if (
        not isinstance(split, list)
        or len(split) != 3
        or any(isinstance(s, bool) or not isinstance(s, int) or s < 1 for s in split)
    ):
        raise ConfigError("data.split: must be three positive integers [train, val, test]", "split")
    data = _build(SyntheticConfig, data_doc, "data")
    arch_doc = dict(doc.get("arch") or {})
    if "input_dim" in arch_doc:
        raise ConfigError("arch.input_dim: derived from data.image_size, do not set it", "input_dim")
    arch_doc["input_dim"] = data.image_size ** 2
    arch = _build(EncoderArch, arch_doc, "arch")
    ssl_doc = dict(doc.get("ssl") or {})
    if isinstance(ssl_doc.get("augment"), dict):
        ssl_doc["augment"] = _build(AugmentPolicy, ssl_doc["augment"], "ssl.augment")
    ssl_doc.setdefault("seed", stage_seed(seed, "ssl"))
    ssl = _build(ContrastiveConfig, ssl_doc, "ssl")
    probe_doc = dict(doc.get("probe") or {})
    probe_doc.setdefault("seed", stage_seed(seed, "probe"))
    probe = _build(ProbeConfig, probe_doc, "probe")
    analysis = _build(AnalysisConfig, doc.get("analysis"), "analysis")
    if analysis.healthy_label not in data.class_names:
        raise ConfigError(
            f"analysis.healthy_label: '{analysis.healthy_label}' is not a class", "healthy_label"
        )
    if analysis.holdout_label is not None and analysis.holdout_label not in data.class_names:
        raise ConfigError(
            f"analysis.holdout_label: '{analysis.holdout_label}' is not a class", "holdout_label"
        )
    return RunConfig(seed, data, list(split), arch, ssl, probe, analysis)


def load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"
