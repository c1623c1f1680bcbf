"""Binary PGM (P5) image files, 8-bit and 16-bit.

Grids hold real values internally; writing quantizes by clamping to
[0, maxval] and rounding halves away from zero.  16-bit samples are
big-endian, as the format requires.
"""

import numpy as np

__all__ = ["read_pgm", "write_pgm"]


def _read_header_token(f):
    # Tokens are separated by whitespace; '#' starts a comment to end of line.
    token = b""
    while True:
        ch = f.read(1)
        if ch == b"":
            raise ValueError("truncated PGM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def read_pgm(path):
    """Read a binary PGM file into a float64 array of shape (height, width)."""
    with open(path, "rb") as f:
        magic = _read_header_token(f)
        if magic != b"P5":
            raise ValueError(f"not a binary PGM (P5) file: magic {magic!r}")
        width = int(_read_header_token(f))
        height = int(_read_header_token(f))
        maxval = int(_read_header_token(f))
        if width <= 0 or height <= 0:
            raise ValueError(f"bad PGM dimensions {width}x{height}")
        if not 0 < maxval < 65536:
            raise ValueError(f"bad PGM maxval {maxval}")
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raw = f.read(width * height * dtype.itemsize)
        if len(raw) != width * height * dtype.itemsize:
            raise ValueError("truncated PGM pixel data")
        data = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    return data.astype(np.float64)


def write_pgm(path, u, maxval=255):
    """Write a 2-D grid as binary PGM, clamping to [0, maxval].

    Values are rounded half away from zero; after clamping all values are
    nonnegative, so this is floor(x + 0.5).
    """
    u = np.asarray(u, dtype=np.float64)
    if u.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {u.shape}")
    if not 0 < maxval < 65536:
        raise ValueError(f"bad maxval {maxval}")
    q = np.floor(np.clip(u, 0.0, float(maxval)) + 0.5)
    q = np.minimum(q, float(maxval))  # maxval + 0.49 rounds back down
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    height, width = u.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{width} {height}\n{maxval}\n".encode("ascii"))
        f.write(q.astype(dtype).tobytes())
