"""Sequence, descriptor, and dataset serialization plus synthetic generators.

Binary sequence container (.seqf): magic "SEQF", version u32, n u64, d u64,
then n*d row-major IEEE-754 doubles, all little-endian. CSV (.csv): header
line "# seqf d=<d>", one comma-separated row per frame. Descriptors (.krpd)
reuse the same matrix container behind a JSON scheme/parameter block.
Manifests are JSON lines: {"path": ..., "label": ..., "split": ...}.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .kernels import RbfParams
from .pooling import GrpDescriptor, SubspaceDescriptor, VectorDescriptor

MAGIC = b"SEQF"
DESC_MAGIC = b"KRPD"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class SequenceFormatError(ValidationError):
    """Bad magic, version, or header fields."""


class TruncatedPayloadError(ValidationError):
    """File ends before the declared payload."""


class NonFiniteDataError(ValidationError):
    """Stored values contain NaN or infinity."""


def _check_matrix(x, where):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
        raise ValidationError(f"{where}: expected a nonempty 2-d matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteDataError(f"{where}: non-finite entries")
    return x


def _write_matrix(fh, x):
    n, d = x.shape
    fh.write(_HEADER.pack(MAGIC, VERSION, n, d))
    fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def _read_matrix(fh, where):
    header = fh.read(_HEADER.size)
    if len(header) < _HEADER.size:
        raise TruncatedPayloadError(f"{where}: truncated header")
    magic, version, n, d = _HEADER.unpack(header)
    if magic != MAGIC:
        raise SequenceFormatError(f"{where}: bad magic {magic!r}")
    if version != VERSION:
        raise SequenceFormatError(f"{where}: unsupported version {version}")
    if n < 1 or d < 1:
        raise SequenceFormatError(f"{where}: invalid dimensions n={n}, d={d}")
    payload = fh.read(8 * n * d)
    if len(payload) < 8 * n * d:
        raise TruncatedPayloadError(f"{where}: payload ends early "
                                    f"({len(payload)} of {8 * n * d} bytes)")
    x = np.frombuffer(payload, dtype="<f8").reshape(n, d).astype(float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteDataError(f"{where}: non-finite entries")
    return x


def save_sequence(x, path):
    """Write a sequence as .seqf (binary, bit-exact) or .csv (1e-15 fidelity)."""
    path = Path(path)
    x = _check_matrix(x, str(path))
    if path.suffix == ".seqf":
        with open(path, "wb") as fh:
            _write_matrix(fh, x)
    elif path.suffix == ".csv":
        with open(path, "w") as fh:
            fh.write(f"# seqf d={x.shape[1]}\n")
            for row in x:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        raise ValidationError(f"unsupported sequence extension {path.suffix!r}")


def load_sequence(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".seqf":
        with open(path, "rb") as fh:
            x = _read_matrix(fh, str(path))
            if fh.read(1):
                raise SequenceFormatError(f"{path}: trailing bytes after payload")
        return x
    if path.suffix == ".csv":
        return _load_csv(path)
    raise ValidationError(f"unsupported sequence extension {path.suffix!r}")


def _load_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("# seqf d="):
            raise SequenceFormatError(f"{path}: bad CSV header {header!r}")
        try:
            d = int(header.split("=", 1)[1])
        except ValueError as exc:
            raise SequenceFormatError(f"{path}: bad dimension in header") from exc
        rows = []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != d:
                raise SequenceFormatError(
                    f"{path}:{lineno}: expected {d} values, got {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError as exc:
                raise SequenceFormatError(f"{path}:{lineno}: unparseable value") from exc
    if not rows:
        raise TruncatedPayloadError(f"{path}: no frame rows")
    x = np.asarray(rows, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NonFiniteDataError(f"{path}: non-finite entries")
    return x


# ---------------------------------------------------------------------------
# descriptors


def save_descriptor(desc, path):
    path = Path(path)
    if isinstance(desc, VectorDescriptor):
        meta = {"scheme": desc.scheme, "params": desc.params}
        mats = [np.atleast_2d(desc.z)]
    elif isinstance(desc, GrpDescriptor):
        meta = {"scheme": "grp", "params": desc.params}
        mats = [desc.u]
    elif isinstance(desc, SubspaceDescriptor):
        meta = {"scheme": "krpfs", "params": desc.params,
                "sigma": desc.sigma.sigma, "p": desc.p}
        mats = [desc.a, desc.source]
    else:
        raise ValidationError(f"cannot serialize descriptor of type {type(desc).__name__}")
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(DESC_MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(mats)))
        for m in mats:
            _write_matrix(fh, np.asarray(m, dtype=float))


def load_descriptor(path):
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DESC_MAGIC:
            raise SequenceFormatError(f"{path}: bad descriptor magic {magic!r}")
        version, meta_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise SequenceFormatError(f"{path}: unsupported version {version}")
        try:
            meta = json.loads(fh.read(meta_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SequenceFormatError(f"{path}: bad metadata block") from exc
        (count,) = struct.unpack("<I", fh.read(4))
        mats = [_read_matrix(fh, str(path)) for _ in range(count)]
    scheme = meta.get("scheme")
    if scheme in ("avg", "rp", "bkrp", "ibkrp"):
        return VectorDescriptor(z=mats[0].ravel(), scheme=scheme, params=meta["params"])
    if scheme == "grp":
        return GrpDescriptor(u=mats[0], params=meta["params"])
    if scheme == "krpfs":
        return SubspaceDescriptor(a=mats[0], source=mats[1],
                                  sigma=RbfParams(meta["sigma"]), p=int(meta["p"]),
                                  params=meta["params"])
    raise SequenceFormatError(f"{path}: unknown descriptor scheme {scheme!r}")


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    path: Path
    label: str
    split: int


def save_manifest(entries, path):
    path = Path(path)
    with open(path, "w") as fh:
        for e in entries:
            rel = Path(e.path)
            if rel.is_absolute():
                try:
                    rel = rel.relative_to(path.parent.resolve())
                except ValueError:
                    pass
            fh.write(json.dumps({"path": str(rel), "label": e.label,
                                 "split": int(e.split)}) + "\n")


def load_manifest(path) -> list[ManifestEntry]:
    path = Path(path)
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                entry = ManifestEntry(path=Path(rec["path"]), label=str(rec["label"]),
                                      split=int(rec["split"]))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise SequenceFormatError(f"{path}:{lineno}: bad manifest record") from exc
            if not entry.path.is_absolute():
                entry.path = path.parent / entry.path
            if not entry.path.exists():
                raise ValidationError(f"{path}:{lineno}: missing sequence file {entry.path}")
            entries.append(entry)
    if not entries:
        raise ValidationError(f"{path}: empty manifest")
    return entries


def load_dataset(entries):
    """Load every manifest entry: list of (sequence, label, split)."""
    return [(load_sequence(e.path), e.label, e.split) for e in entries]


# ---------------------------------------------------------------------------
# preprocessing


def preprocess(x, ma_window: int = 1, ssr: bool = False) -> np.ndarray:
    """Optional signed square root, then a causal moving average.

    The averaging window is truncated at the sequence start; ma_window=1
    with ssr off is the identity.
    """
    x = _check_matrix(x, "preprocess")
    n = x.shape[0]
    if ma_window < 1:
        raise ValidationError(f"ma_window must be >= 1, got {ma_window}")
    if ma_window > n:
        raise ValidationError(f"ma_window {ma_window} exceeds frame count {n}")
    if ssr:
        x = np.sign(x) * np.sqrt(np.abs(x))
    if ma_window > 1:
        cs = np.cumsum(x, axis=0)
        sums = cs.copy()
        sums[ma_window:] = cs[ma_window:] - cs[:-ma_window]
        counts = np.minimum(np.arange(1, n + 1), ma_window)
        x = sums / counts[:, None]
    return np.array(x, dtype=float)


# ---------------------------------------------------------------------------
# synthetic data


def synth_smooth(n: int, d: int, seed, smoothness: float = 0.1,
                 drift: float = 0.0) -> np.ndarray:
    """Smooth nonlinear trajectory: a Gaussian random walk pushed through a
    fixed tanh-of-linear-map squashing. Deterministic per seed.

    drift > 0 gives the Gaussian steps a mean along a random per-sequence
    direction, so the trajectory carries a consistent heading instead of
    wandering back over itself.
    """
    if n < 2 or d < 1:
        raise ValidationError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    rng = np.random.default_rng(seed)
    mix = rng.standard_normal((d, d)) / np.sqrt(d)
    heading = rng.standard_normal(d)
    heading /= np.linalg.norm(heading)
    steps = smoothness * (rng.standard_normal((n, d)) + drift * heading)
    return np.tanh(np.cumsum(steps, axis=0) @ mix)


def synth_order_benchmark(num_per_class: int, n: int, d: int, seed: int,
                          out_dir, smoothness: float = 0.05,
                          drift: float = 2.0) -> tuple[Path, list[ManifestEntry]]:
    """Order-only classification task: forward trajectories vs the same
    trajectories reversed.

    Each instance pair shares its frame rows exactly, so any order-blind
    pooling (e.g. averaging) produces identical descriptors for the two
    classes. The default drift keeps every trajectory heading away from its
    start, which is what makes the frame order recoverable per instance.
    Splits are stratified 50/50. Returns (manifest_path, entries).
    """
    if num_per_class < 2:
        raise ValidationError(f"num_per_class must be >= 2, got {num_per_class}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    children = np.random.SeedSequence(seed).spawn(num_per_class)
    entries = []
    for i, child in enumerate(children):
        x = synth_smooth(n, d, child, smoothness, drift)
        split = (i % 2) + 1
        for label, data in (("forward", x), ("reversed", x[::-1])):
            name = f"{label}_{i:04d}.seqf"
            save_sequence(data, out_dir / name)
            entries.append(ManifestEntry(path=out_dir / name, label=label, split=split))
    manifest = out_dir / "manifest.jsonl"
    save_manifest(entries, manifest)
    return manifest, entries
