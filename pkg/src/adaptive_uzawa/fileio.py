"""Matrix Market and vector file I/O, plus saving/loading whole saddle systems."""

from __future__ import annotations

import os
import struct

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import DimensionError
from .linalg import CsrMatrix

__all__ = [
    "VECTOR_MAGIC",
    "load_system",
    "read_matrix_market",
    "read_vector",
    "read_vector_binary",
    "read_vector_text",
    "save_system",
    "write_matrix_market",
    "write_vector",
    "write_vector_binary",
    "write_vector_text",
]

VECTOR_MAGIC = b"UZVEC1"
_HEADER = struct.Struct("<6sQ")


def write_matrix_market(path, A, symmetric=False):
    """Write ``A`` in coordinate format; ``symmetric=True`` stores the lower triangle only."""
    if symmetric and not A.is_symmetric():
        raise ValueError("matrix is not exactly symmetric")
    mat = A.scipy.tocoo()
    scipy.io.mmwrite(path, mat, symmetry="symmetric" if symmetric else "general", precision=17)


def read_matrix_market(path):
    mat = scipy.io.mmread(path)
    if not sp.issparse(mat):
        mat = sp.csr_matrix(mat)
    return CsrMatrix.from_scipy(mat)


def write_vector_text(path, x):
    np.savetxt(path, np.asarray(x, dtype=np.float64), fmt="%.17g")


def read_vector_text(path):
    return np.atleast_1d(np.loadtxt(path, dtype=np.float64, ndmin=1))


def write_vector_binary(path, x):
    """Little-endian file: ``b"UZVEC1"``, u64 length, then float64 entries."""
    x = np.ascontiguousarray(x, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(VECTOR_MAGIC, x.shape[0]))
        fh.write(x.tobytes())


def read_vector_binary(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise ValueError(f"{path}: truncated vector header")
        magic, n = _HEADER.unpack(head)
        if magic != VECTOR_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        data = fh.read()
    if len(data) != 8 * n:
        raise DimensionError(f"{path}: header says {n} entries, file holds {len(data) / 8:g}")
    return np.frombuffer(data, dtype="<f8").astype(np.float64)


def write_vector(path, x):
    """Binary for ``.bin`` paths, text otherwise."""
    if str(path).endswith(".bin"):
        write_vector_binary(path, x)
    else:
        write_vector_text(path, x)


def read_vector(path):
    if str(path).endswith(".bin"):
        return read_vector_binary(path)
    return read_vector_text(path)


SYSTEM_FILES = {"A": "A.mtx", "B": "B.mtx", "D": "D.mtx", "f": "f.bin", "g": "g.bin"}


def save_system(sys, out_dir):
    """Write ``A``, ``B``, ``D`` (Matrix Market) and ``f``, ``g`` (binary) into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, v) for k, v in SYSTEM_FILES.items()}
    write_matrix_market(paths["A"], sys.A)
    write_matrix_market(paths["B"], sys.B)
    write_matrix_market(paths["D"], sys.D, symmetric=sys.D.is_symmetric())
    write_vector_binary(paths["f"], sys.f)
    write_vector_binary(paths["g"], sys.g)
    return paths


def load_system(paths, check=True):
    """Load a system from a directory (standard names) or a dict of the five paths."""
    from .system import SaddleSystem

    if isinstance(paths, (str, os.PathLike)):
        paths = {k: os.path.join(paths, v) for k, v in SYSTEM_FILES.items()}
    A = read_matrix_market(paths["A"])
    B = read_matrix_market(paths["B"])
    D = read_matrix_market(paths["D"])
    f = read_vector(paths["f"])
    g = read_vector(paths["g"])
    return SaddleSystem(A, B, D, f, g, check=check, meta={"problem": "files", "paths": dict(paths)})

