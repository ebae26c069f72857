"""Plain-text persistence of matrices, vectors, tables and metadata.

Every text artifact starts with a ``# config_hash=<hash>`` line so that files
from different runs cannot be mixed silently.  A binary copy of each
sparse matrix (raw CSR arrays in ``.npy`` files, which carry no timestamps)
is written alongside for fast reloading; loaders check that its hash matches
the text file.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import scipy.sparse as sp

_CHUNK = 1 << 20


class ArtifactError(RuntimeError):
    """Missing, malformed or mismatched run artifact."""


def _hash_line(h: str) -> str:
    return f"# config_hash={h}\n"


def read_hash(path) -> str:
    with open(path) as fh:
        first = fh.readline()
    if not first.startswith("# config_hash="):
        raise ArtifactError(f"{path}: missing config hash header")
    return first.strip().split("=", 1)[1]


def check_hash(path, expected: str) -> None:
    got = read_hash(path)
    if got != expected:
        raise ArtifactError(f"{path}: config hash {got} does not match run {expected}")


def _write_rows(fh, fmt: str, columns) -> None:
    n = len(columns[0])
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        flat = [x for row in zip(*(c[lo:hi].tolist() for c in columns)) for x in row]
        fh.write((fmt * (hi - lo)) % tuple(flat))


def save_triplets(path, A, config_hash: str) -> None:
    """``rows cols nnz`` header, then ``i j value`` lines with 17 significant digits."""
    A = sp.csr_matrix(A)
    if not A.has_sorted_indices:
        A = A.sorted_indices()
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(_hash_line(config_hash))
        fh.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        step = 1 << 22
        for lo in range(0, A.nnz, step):
            hi = min(A.nnz, lo + step)
            rows = np.searchsorted(A.indptr, np.arange(lo, hi), side="right") - 1
            _write_rows(fh, "%d %d %.17g\n", (rows, A.indices[lo:hi], A.data[lo:hi]))
    _save_csr(path, A, config_hash)


def _stamp(path: Path, config_hash: str) -> str:
    st = path.stat()
    return f"{config_hash} {st.st_size} {st.st_mtime_ns}"


def _csr_dir(path: Path) -> Path:
    return path.with_name(path.stem + "_csr")


def _save_csr(path: Path, A: sp.csr_matrix, config_hash: str) -> None:
    d = _csr_dir(path)
    d.mkdir(exist_ok=True)
    A.sort_indices()
    for name in ("indptr", "indices", "data"):
        np.save(d / f"{name}.npy", getattr(A, name))
    (d / "stamp").write_text(_stamp(path, config_hash))


def _load_csr(path: Path, h: str, shape, nnz):
    d = _csr_dir(path)
    try:
        if (d / "stamp").read_text() != _stamp(path, h):
            return None
        arrs = [np.load(d / f"{name}.npy") for name in ("indptr", "indices", "data")]
    except OSError:
        return None
    A = sp.csr_matrix((arrs[2], arrs[1], arrs[0]), shape=shape)
    return A if A.nnz == nnz else None


def load_triplets(path, config_hash: str | None = None, prefer_binary: bool = True) -> sp.csr_matrix:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    h = read_hash(path)
    if config_hash is not None and h != config_hash:
        raise ArtifactError(f"{path}: config hash {h} does not match run {config_hash}")
    with open(path) as fh:
        fh.readline()
        rows, cols, nnz = (int(t) for t in fh.readline().split())
        if prefer_binary:
            A = _load_csr(path, h, (rows, cols), nnz)
            if A is not None:
                return A
        data = np.loadtxt(fh, dtype=float, ndmin=2) if nnz else np.zeros((0, 3))
    if data.shape[0] != nnz:
        raise ArtifactError(f"{path}: expected {nnz} entries, found {data.shape[0]}")
    A = sp.csr_matrix((data[:, 2], (data[:, 0].astype(np.int64), data[:, 1].astype(np.int64))), shape=(rows, cols))
    A.sort_indices()
    return A


def save_vector(path, x, config_hash: str) -> None:
    with open(path, "w") as fh:
        fh.write(_hash_line(config_hash))
        _write_rows(fh, "%.17g\n", (np.asarray(x, dtype=float),))


def load_vector(path, config_hash: str | None = None) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    if config_hash is not None:
        check_hash(path, config_hash)
    return np.atleast_1d(np.loadtxt(path, dtype=float, comments="#"))


def save_csv(path, header: str, columns, fmts, config_hash: str) -> None:
    """CSV with a hash comment line, a header row and ``columns`` formatted by ``fmts``."""
    with open(path, "w") as fh:
        fh.write(_hash_line(config_hash))
        fh.write(header + "\n")
        if len(columns) and len(columns[0]):
            _write_rows(fh, ",".join(fmts) + "\n", [np.asarray(c) for c in columns])


def load_csv(path, config_hash: str | None = None) -> dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    if config_hash is not None:
        check_hash(path, config_hash)
    with open(path) as fh:
        fh.readline()
        names = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", dtype=float, ndmin=2)
    if data.size == 0:
        data = np.zeros((0, len(names)))
    return {n: data[:, i] for i, n in enumerate(names)}


def save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def load_json(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"missing artifact {path}")
    return json.loads(path.read_text())


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not serialisable: {type(o)}")
