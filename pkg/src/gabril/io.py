"""Bit-exact persistence: dataset files, checkpoints, PGM images, SVG plots.

Both binary formats are little-endian, magic-tagged, versioned, and carry a
trailing CRC32 over every preceding byte; loaders fail with typed errors
(bad magic / version / checksum / truncation) rather than crashing.
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from .envsim import EpisodeRecord
from .errors import (BadMagicError, ChecksumError, ContractViolation,
                     TruncatedFileError, VersionMismatchError)
from .gaze import GazeSample

DATASET_MAGIC = b"GBRL"
CHECKPOINT_MAGIC = b"GBCK"
FORMAT_VERSION = 1


def _check_container(blob: bytes, magic: bytes, kind: str) -> bytes:
    if len(blob) < 12:
        raise TruncatedFileError(f"{kind} file too short ({len(blob)} bytes)")
    if blob[:4] != magic:
        raise BadMagicError(f"bad magic {blob[:4]!r}, expected {magic!r}")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{kind} format version {version}, reader supports {FORMAT_VERSION}")
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise ChecksumError(f"{kind} CRC mismatch")
    return blob[8:-4]


class _Reader:
    def __init__(self, payload: bytes, kind: str):
        self.buf = payload
        self.pos = 0
        self.kind = kind

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.buf):
            raise TruncatedFileError(f"{self.kind} payload ends mid-record")
        vals = struct.unpack_from(fmt, self.buf, self.pos)
        self.pos += size
        return vals if len(vals) > 1 else vals[0]

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFileError(f"{self.kind} payload ends mid-record")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out


# ---------------------------------------------------------------------------
# dataset files


def save_dataset(records: list[EpisodeRecord], env_config_dict: dict,
                 path: str, action_arity: int = 4):
    if records:
        h, w = records[0].observations[0].shape[-2:]
    else:
        h = w = 0
    parts = [DATASET_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    blob = json.dumps(env_config_dict, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    parts.append(struct.pack("<IIII", len(records), h, w, action_arity))
    for rec in records:
        parts.append(struct.pack("<QI", rec.seed, len(rec)))
        for o, a, g in zip(rec.observations, rec.actions, rec.gaze):
            parts.append(np.asarray(o, dtype="<f4").tobytes())
            parts.append(struct.pack("<BB2f", a, int(g.valid), g.x, g.y))
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def load_dataset(path: str):
    """Returns (records, env_config_dict, meta) where meta has the header
    fields (episode count, dims, action arity)."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(_check_container(blob, DATASET_MAGIC, "dataset"), "dataset")
    cfg_len = r.take("<I")
    env_config = json.loads(r.take_bytes(cfg_len).decode())
    n_eps, h, w, arity = r.take("<IIII")
    records = []
    for _ in range(n_eps):
        seed, n_frames = r.take("<QI")
        obs, acts, gaze = [], [], []
        for i in range(n_frames):
            raw = r.take_bytes(4 * h * w)
            obs.append(np.frombuffer(raw, dtype="<f4").reshape(1, h, w).copy())
            a, valid, x, y = r.take("<BB2f")
            acts.append(int(a))
            gaze.append(GazeSample(i, float(x), float(y), bool(valid)))
        records.append(EpisodeRecord(obs, acts, gaze, int(seed)))
    if r.pos != len(r.buf):
        raise TruncatedFileError("dataset has trailing bytes after declared content")
    meta = {"episodes": n_eps, "height": h, "width": w, "action_arity": arity}
    return records, env_config, meta


def records_equal(a: list[EpisodeRecord], b: list[EpisodeRecord]) -> bool:
    if len(a) != len(b):
        return False
    for ra, rb in zip(a, b):
        if ra.seed != rb.seed or ra.actions != rb.actions:
            return False
        if len(ra.gaze) != len(rb.gaze):
            return False
        for ga, gb in zip(ra.gaze, rb.gaze):
            if (ga.valid != gb.valid or
                    np.float32(ga.x) != np.float32(gb.x) or
                    np.float32(ga.y) != np.float32(gb.y)):
                return False
        for oa, ob in zip(ra.observations, rb.observations):
            if not np.array_equal(np.asarray(oa, dtype=np.float32),
                                  np.asarray(ob, dtype=np.float32)):
                return False
    return True


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model, config_dict: dict, path: str):
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    blob = json.dumps(config_dict, sort_keys=True).encode()
    parts.append(struct.pack("<I", len(blob)))
    parts.append(blob)
    names = sorted(model.params)
    parts.append(struct.pack("<I", len(names)))
    for name in names:
        data = model.params[name].data
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(np.asarray(data, dtype="<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body)))


def load_checkpoint_raw(path: str):
    """Returns (param_table: dict[name, ndarray], config_dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    r = _Reader(_check_container(blob, CHECKPOINT_MAGIC, "checkpoint"), "checkpoint")
    cfg_len = r.take("<I")
    config = json.loads(r.take_bytes(cfg_len).decode())
    n = r.take("<I")
    table = {}
    for _ in range(n):
        name_len = r.take("<H")
        name = r.take_bytes(name_len).decode()
        ndim = r.take("<B")
        shape = struct.unpack_from(f"<{ndim}I", r.take_bytes(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(r.take_bytes(8 * size), dtype="<f8").reshape(shape)
        if name in table:
            raise ChecksumError(f"duplicate parameter {name!r} in checkpoint")
        table[name] = data.copy()
    if r.pos != len(r.buf):
        raise TruncatedFileError("checkpoint has trailing bytes")
    return table, config


def load_policy(path: str):
    """Rebuild a PolicyModel (and its TrainConfig) from a checkpoint."""
    from .autodiff import Tensor
    from .model import PolicyModel
    from .trainer import TrainConfig
    table, config = load_checkpoint_raw(path)
    tc = TrainConfig.from_dict(config)
    params = {k: Tensor(v, requires_grad=True) for k, v in table.items()}
    model = PolicyModel(tc.model, lam=tc.lam, params=params)
    return model, tc


# ---------------------------------------------------------------------------
# images and plots


def export_pgm(field: np.ndarray, path: str):
    """8-bit binary PGM (P5); pixel = round-half-up(255 * value)."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise ContractViolation(f"export_pgm expects a 2-d field, got {field.shape}")
    if field.min() < 0.0 or field.max() > 1.0:
        raise ContractViolation(
            f"export_pgm values outside [0,1]: [{field.min()}, {field.max()}]")
    pixels = np.floor(255.0 * field + 0.5).astype(np.uint8)
    h, w = field.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(pixels.tobytes())


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def plot_svg(series: dict, path: str, title: str = "", xlabel: str = "",
             ylabel: str = ""):
    """Deterministic SVG line chart. ``series`` maps label -> (xs, ys)."""
    wpx, hpx, m = 640, 440, 60
    xs_all = [x for xs, _ in series.values() for x in xs]
    ys_all = [y for _, ys in series.values() for y in ys]
    x0, x1 = (min(xs_all), max(xs_all)) if xs_all else (0.0, 1.0)
    y0, y1 = (min(ys_all), max(ys_all)) if ys_all else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return m + (x - x0) / (x1 - x0) * (wpx - 2 * m)

    def py(y):
        return hpx - m - (y - y0) / (y1 - y0) * (hpx - 2 * m)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{wpx}" height="{hpx}">',
           f'<rect width="{wpx}" height="{hpx}" fill="white"/>',
           f'<line x1="{m}" y1="{hpx - m}" x2="{wpx - m}" y2="{hpx - m}" stroke="black"/>',
           f'<line x1="{m}" y1="{m}" x2="{m}" y2="{hpx - m}" stroke="black"/>',
           f'<text x="{wpx / 2:.1f}" y="24" text-anchor="middle" font-size="15">{title}</text>',
           f'<text x="{wpx / 2:.1f}" y="{hpx - 16}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="18" y="{hpx / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 18 {hpx / 2:.1f})">{ylabel}</text>',
           f'<text x="{m}" y="{hpx - m + 16}" font-size="10">{x0:.4g}</text>',
           f'<text x="{wpx - m}" y="{hpx - m + 16}" text-anchor="end" font-size="10">{x1:.4g}</text>',
           f'<text x="{m - 4}" y="{hpx - m}" text-anchor="end" font-size="10">{y0:.4g}</text>',
           f'<text x="{m - 4}" y="{m + 4}" text-anchor="end" font-size="10">{y1:.4g}</text>']
    for i, (label, (xs, ys)) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        out.append(f'<text x="{wpx - m + 4}" y="{m + 16 * i + 10}" font-size="11" '
                   f'fill="{color}">{label}</text>')
    out.append("</svg>\n")
    with open(path, "w") as f:
        f.write("\n".join(out))


def write_manifest(path: str, payload: dict):
    """Reproducibility manifest: config, seed, and format version."""
    payload = dict(payload)
    payload["format_version"] = FORMAT_VERSION
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
