"""Binary file formats: EBLT tensors, checkpoints, PPM/PGM images.

EBLT record: magic ``EBLT``, u8 ndim, ndim little-endian u32 extents,
then the row-major little-endian f32 payload.  A checkpoint is a text
manifest (``name dim0 dim1 ...`` per line) next to a file of
concatenated EBLT records in manifest order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"EBLT"


def write_eblt(fp, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    fp.write(MAGIC)
    fp.write(struct.pack("<B", arr.ndim))
    fp.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fp.write(arr.tobytes())


def read_eblt(fp):
    magic = fp.read(4)
    if magic != MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    (ndim,) = struct.unpack("<B", fp.read(1))
    shape = struct.unpack(f"<{ndim}I", fp.read(4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    data = np.frombuffer(fp.read(4 * count), dtype="<f4", count=count)
    return data.reshape(shape).copy()


def save_checkpoint(prefix, state):
    """Write ``<prefix>.manifest`` + ``<prefix>.eblt`` from name->ndarray."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(state)
    with open(prefix.with_suffix(".manifest"), "w", encoding="utf-8") as mf:
        for name in names:
            dims = " ".join(str(d) for d in state[name].shape)
            mf.write(f"{name} {dims}".rstrip() + "\n")
    with open(prefix.with_suffix(".eblt"), "wb") as bf:
        for name in names:
            write_eblt(bf, state[name])


def load_checkpoint(prefix):
    prefix = Path(prefix)
    entries = []
    with open(prefix.with_suffix(".manifest"), "r", encoding="utf-8") as mf:
        for line in mf:
            parts = line.split()
            if parts:
                entries.append((parts[0], tuple(int(d) for d in parts[1:])))
    state = {}
    with open(prefix.with_suffix(".eblt"), "rb") as bf:
        for name, shape in entries:
            arr = read_eblt(bf)
            if arr.shape != shape:
                raise ValueError(
                    f"checkpoint {name}: payload shape {arr.shape} != manifest {shape}")
            state[name] = arr
    return state


# ---------------------------------------------------------------------------
# netpbm images


def write_ppm(path, image):
    """image: float (3,H,W) in [0,1] or uint8 (H,W,3)."""
    if image.ndim == 3 and image.shape[0] == 3 and image.dtype != np.uint8:
        image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
        image = image.transpose(1, 2, 0)
    h, w, _ = image.shape
    with open(path, "wb") as fp:
        fp.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fp.write(np.ascontiguousarray(image).tobytes())


def write_pgm(path, mask):
    """mask: uint8 (H,W); values are written verbatim (0/1/255)."""
    mask = np.asarray(mask, dtype=np.uint8)
    h, w = mask.shape
    with open(path, "wb") as fp:
        fp.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fp.write(np.ascontiguousarray(mask).tobytes())


def _read_pnm_header(fp, magic):
    if fp.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        tok = b""
        ch = fp.read(1)
        while ch.isspace():
            ch = fp.read(1)
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = fp.read(1)
            continue
        while ch and not ch.isspace():
            tok += ch
            ch = fp.read(1)
        fields.append(int(tok))
    return fields  # w, h, maxval


def read_ppm(path):
    """Returns float32 (3,H,W) in [0,1]."""
    with open(path, "rb") as fp:
        w, h, maxval = _read_pnm_header(fp, b"P6")
        raw = np.frombuffer(fp.read(w * h * 3), dtype=np.uint8)
    img = raw.reshape(h, w, 3).transpose(2, 0, 1).astype(np.float32)
    return img / float(maxval)


def read_pgm(path):
    """Returns uint8 (H,W) with values exactly as stored."""
    with open(path, "rb") as fp:
        w, h, _ = _read_pnm_header(fp, b"P5")
        raw = np.frombuffer(fp.read(w * h), dtype=np.uint8)
    return raw.reshape(h, w).copy()
