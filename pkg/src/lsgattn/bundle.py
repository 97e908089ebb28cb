"""Named-tensor weight bundles and checkpoint conversion.

The LSGW container (see docs/lsgw_format.md) is bit-exact: save -> load ->
save reproduces the file byte for byte. Conversion to a longer context
extends the positional table by modular duplication and adds initialized
global-token embeddings; every other entry is carried through untouched.
"""

import hashlib
import json
import os
import tempfile

import numpy as np

from .config import LsgConfig

MAGIC = b"LSGW"
VERSION = 1

_DTYPE_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}
_TAG_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}

# metadata keys convert() relies on
META_POSITIONAL = "positional_embeddings"
META_TOKEN = "token_embeddings"
META_CLS_ID = "cls_token_id"
META_MASK_ID = "mask_token_id"

GLOBAL_ENTRY = "global_embeddings"


class BundleError(ValueError):
    """Raised for malformed files or invalid conversion inputs."""


class WeightBundle:
    """Ordered name -> tensor map plus free-form string metadata."""

    def __init__(self, entries=None, metadata=None):
        self.entries = {}
        self.metadata = dict(metadata or {})
        for name, arr in (entries or {}).items():
            self.add(name, arr)

    def add(self, name, arr):
        if name in self.entries:
            raise BundleError(f"duplicate entry name {name!r}")
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_TAGS:
            raise BundleError(f"{name}: unsupported dtype {arr.dtype}")
        if arr.size == 0:
            raise BundleError(f"{name}: empty tensors are not allowed")
        self.entries[name] = arr

    def __eq__(self, other):
        return (
            isinstance(other, WeightBundle)
            and self.metadata == other.metadata
            and list(self.entries) == list(other.entries)
            and all(
                a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)
                for a, b in zip(self.entries.values(), other.entries.values())
            )
        )


def _atomic_write(path, data: bytes):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".lsgw-tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(bundle: WeightBundle, path):
    """Write the bundle atomically (temp file + rename)."""
    specs = []
    offset = 0
    blobs = []
    for name, arr in bundle.entries.items():
        raw = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        specs.append(
            {
                "name": name,
                "dtype": _DTYPE_TAGS[arr.dtype],
                "shape": list(arr.shape),
                "byte_offset": offset,
                "byte_length": len(raw),
            }
        )
        offset += len(raw)
        blobs.append(raw)
    blob = b"".join(blobs)
    body = json.dumps(
        {"entries": specs, "metadata": bundle.metadata}, sort_keys=True
    ).encode("utf-8")
    digest = hashlib.sha256(body + blob).hexdigest()
    header = json.dumps(
        {"entries": specs, "metadata": bundle.metadata, "digest": digest},
        sort_keys=True,
    ).encode("utf-8")
    out = bytearray()
    out += MAGIC
    out += VERSION.to_bytes(4, "little")
    out += len(header).to_bytes(8, "little")
    out += header
    out += blob
    _atomic_write(path, bytes(out))


def load(path) -> WeightBundle:
    """Read and fully validate an LSGW file; never returns a partial bundle."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 16:
        raise BundleError(f"{path}: truncated prefix ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BundleError(f"{path}: bad magic {data[:4]!r}")
    version = int.from_bytes(data[4:8], "little")
    if version != VERSION:
        raise BundleError(f"{path}: unsupported version {version}")
    header_len = int.from_bytes(data[8:16], "little")
    if 16 + header_len > len(data):
        raise BundleError(f"{path}: truncated header")
    try:
        header = json.loads(data[16 : 16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BundleError(f"{path}: undecodable header ({exc})") from None
    if not isinstance(header, dict) or set(header) != {"entries", "metadata", "digest"}:
        raise BundleError(f"{path}: malformed header object")
    blob = data[16 + header_len :]
    body = json.dumps(
        {"entries": header["entries"], "metadata": header["metadata"]}, sort_keys=True
    ).encode("utf-8")
    if hashlib.sha256(body + blob).hexdigest() != header["digest"]:
        raise BundleError(f"{path}: content digest mismatch (corrupted file)")

    metadata = header["metadata"]
    if not isinstance(metadata, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in metadata.items()
    ):
        raise BundleError(f"{path}: metadata must map strings to strings")

    bundle = WeightBundle(metadata=metadata)
    expected_offset = 0
    for spec in header["entries"]:
        try:
            name = spec["name"]
            tag = spec["dtype"]
            shape = tuple(spec["shape"])
            offset = spec["byte_offset"]
            length = spec["byte_length"]
        except (TypeError, KeyError) as exc:
            raise BundleError(f"{path}: malformed entry spec ({exc})") from None
        if tag not in _TAG_DTYPES:
            raise BundleError(f"{path}: {name}: unknown dtype {tag!r}")
        dt = _TAG_DTYPES[tag]
        if any((not isinstance(e, int)) or e < 1 for e in shape):
            raise BundleError(f"{path}: {name}: invalid shape {shape}")
        count = int(np.prod(shape))
        if length != count * dt.itemsize:
            raise BundleError(
                f"{path}: {name}: byte length {length} != {count} x {dt.itemsize}"
            )
        if offset != expected_offset:
            kind = "overlapping extents" if offset < expected_offset else "gap in blob"
            raise BundleError(f"{path}: {name}: {kind} at offset {offset}")
        if offset + length > len(blob):
            raise BundleError(f"{path}: {name}: truncated blob")
        arr = (
            np.frombuffer(blob, dtype=dt, count=count, offset=offset)
            .reshape(shape)
            .astype(dt.newbyteorder("="), copy=True)
        )
        try:
            bundle.add(name, arr)
        except BundleError as exc:
            raise BundleError(f"{path}: {exc}") from None
        expected_offset = offset + length
    if expected_offset != len(blob):
        raise BundleError(
            f"{path}: blob length mismatch ({len(blob)} bytes, {expected_offset} described)"
        )
    return bundle


def extend_positional(positions, target_len) -> np.ndarray:
    """Duplicate the [L, d] positional table row-modularly up to target_len:
    output row i is an exact copy of input row i mod L."""
    if positions.ndim != 2 or positions.shape[0] < 1:
        raise ValueError(f"expected [L >= 1, d] positional table, got {positions.shape}")
    length = positions.shape[0]
    if target_len < length:
        raise ValueError(f"target length {target_len} < current length {length}")
    idx = np.arange(target_len) % length
    return positions[idx].copy()


def init_globals(e_cls, e_mask, positions, num_global) -> np.ndarray:
    """Global-token embeddings: row 0 = cls embedding + position 0, row i =
    mask embedding + position i."""
    length = positions.shape[0]
    if num_global < 1:
        raise ValueError("num_global must be >= 1")
    if num_global > length:
        raise ValueError(f"num_global {num_global} exceeds {length} positions")
    out = np.empty((num_global, positions.shape[1]), dtype=positions.dtype)
    out[0] = e_cls + positions[0]
    for i in range(1, num_global):
        out[i] = e_mask + positions[i]
    return out


def convert(bundle: WeightBundle, cfg: LsgConfig, target_len: int) -> WeightBundle:
    """Rebuild the bundle for a longer context.

    The positional table (named by metadata) is extended, a global_embeddings
    entry is added (replaced in place when re-converting, which makes the
    operation idempotent), and the mechanism hyperparameters are recorded in
    metadata. Every other tensor is carried through bitwise.
    """
    meta = bundle.metadata
    for key in (META_POSITIONAL, META_TOKEN, META_CLS_ID, META_MASK_ID):
        if key not in meta:
            raise BundleError(f"metadata key {key!r} is required for conversion")
    pos_name = meta[META_POSITIONAL]
    tok_name = meta[META_TOKEN]
    for name in (pos_name, tok_name):
        if name not in bundle.entries:
            raise BundleError(f"metadata points at missing entry {name!r}")
    positions = bundle.entries[pos_name]
    tokens = bundle.entries[tok_name]
    try:
        cls_id = int(meta[META_CLS_ID])
        mask_id = int(meta[META_MASK_ID])
    except ValueError:
        raise BundleError("cls/mask token ids must be integers") from None
    if not (0 <= cls_id < tokens.shape[0] and 0 <= mask_id < tokens.shape[0]):
        raise BundleError("cls/mask token id out of range")

    extended = extend_positional(positions, target_len)
    new_meta = dict(meta)
    new_meta.update(
        {
            "lsg_block_size": str(cfg.block_size),
            "lsg_sparsity_factor": str(cfg.sparsity_factor),
            "lsg_strategy": cfg.strategy,
            "lsg_num_global": str(cfg.num_global),
            "lsg_target_len": str(target_len),
        }
    )
    out = WeightBundle(metadata=new_meta)
    for name, arr in bundle.entries.items():
        out.add(name, extended if name == pos_name else arr)
    if cfg.num_global:
        globals_arr = init_globals(
            tokens[cls_id], tokens[mask_id], positions, cfg.num_global
        )
        if GLOBAL_ENTRY in out.entries:
            out.entries[GLOBAL_ENTRY] = np.ascontiguousarray(globals_arr)
        else:
            out.add(GLOBAL_ENTRY, globals_arr)
    return out
