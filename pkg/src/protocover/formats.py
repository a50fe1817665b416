"""Little-endian binary formats: salience (SAL1), embeddings (EMB1), encoder models (ENC1)."""

from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .encoder import NONLINEARITIES, EncoderParams, EncoderSpec
from .errors import CatalogParseError, FormatError
from .pitchrep import SalienceMatrix

SAL_MAGIC = b"SAL1"
EMB_MAGIC = b"EMB1"
ENC_MAGIC = b"ENC1"

_SAL_HEADER = struct.Struct("<4sIIHf")
_EMB_HEADER = struct.Struct("<4sII")


def _read(path) -> bytes:
    with open(path, "rb") as f:
        return f.read()


def _payload(buf: bytes, offset: int, count: int, dtype: str, path) -> np.ndarray:
    need = count * np.dtype(dtype).itemsize
    if len(buf) - offset != need:
        raise FormatError(f"{path}: expected {need} payload bytes, found {len(buf) - offset}")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset)


def write_salience(path, m: SalienceMatrix) -> None:
    header = _SAL_HEADER.pack(SAL_MAGIC, m.frames, m.bins, m.bins_per_semitone, m.frames_per_second)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(m.data, dtype="<f4").tobytes())


def read_salience(path) -> SalienceMatrix:
    buf = _read(path)
    if len(buf) < _SAL_HEADER.size or buf[:4] != SAL_MAGIC:
        raise FormatError(f"{path}: not a SAL1 file")
    _, frames, bins, bps, fps = _SAL_HEADER.unpack_from(buf)
    data = _payload(buf, _SAL_HEADER.size, frames * bins, "<f4", path)
    return SalienceMatrix(data.reshape(frames, bins).astype(np.float64), bps, float(fps))


def write_embeddings(path, embeddings) -> None:
    E = np.asarray(embeddings)
    with open(path, "wb") as f:
        f.write(_EMB_HEADER.pack(EMB_MAGIC, E.shape[0], E.shape[1]))
        f.write(np.ascontiguousarray(E, dtype="<f4").tobytes())


def read_embeddings(path) -> np.ndarray:
    buf = _read(path)
    if len(buf) < _EMB_HEADER.size or buf[:4] != EMB_MAGIC:
        raise FormatError(f"{path}: not an EMB1 file")
    _, count, dim = _EMB_HEADER.unpack_from(buf)
    data = _payload(buf, _EMB_HEADER.size, count * dim, "<f4", path)
    return data.reshape(count, dim).astype(np.float64)


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".csv")


def write_sidecar(path, track_ids, work_ids) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["track_id", "work_id"])
        w.writerows(zip(track_ids, work_ids))


def read_sidecar(path, expected_rows: int) -> Tuple[List[str], List[str]]:
    tids, wids = [], []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        if next(reader, None) != ["track_id", "work_id"]:
            raise CatalogParseError(path, 1, "expected header track_id,work_id")
        for row in reader:
            if len(row) != 2:
                raise CatalogParseError(path, reader.line_num, f"expected 2 fields, got {len(row)}")
            tids.append(row[0])
            wids.append(row[1])
    if len(tids) != expected_rows:
        raise FormatError(f"{path}: {len(tids)} rows for {expected_rows} embeddings")
    return tids, wids


# ENC1 layout: magic, u32 input_dim, u32 embed_dim, u32 nonlinearity code,
# u32 normalize flag, u32 hidden layer count, u32 hidden dims..., then f64
# W0 (row-major), b0, W1, b1, ...


def write_model(path, params: EncoderParams) -> None:
    spec = params.spec
    head = [spec.input_dim, spec.embed_dim, NONLINEARITIES.index(spec.nonlinearity),
            int(spec.normalize_output), len(spec.hidden_dims), *spec.hidden_dims]
    with open(path, "wb") as f:
        f.write(ENC_MAGIC)
        f.write(struct.pack(f"<{len(head)}I", *head))
        for a in params.arrays():
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_model(path) -> EncoderParams:
    buf = _read(path)
    if len(buf) < 24 or buf[:4] != ENC_MAGIC:
        raise FormatError(f"{path}: not an ENC1 file")
    input_dim, embed_dim, nl, norm, n_hidden = struct.unpack_from("<5I", buf, 4)
    if nl >= len(NONLINEARITIES) or len(buf) < 24 + 4 * n_hidden:
        raise FormatError(f"{path}: corrupt ENC1 header")
    hidden = struct.unpack_from(f"<{n_hidden}I", buf, 24)
    spec = EncoderSpec(input_dim, hidden, embed_dim, NONLINEARITIES[nl], bool(norm))
    dims = spec.layer_dims
    sizes = []
    for a, b in zip(dims[:-1], dims[1:]):
        sizes += [(a, b), (b,)]
    offset = 24 + 4 * n_hidden
    flat = _payload(buf, offset, sum(int(np.prod(s)) for s in sizes), "<f8", path)
    arrays, i = [], 0
    for s in sizes:
        n = int(np.prod(s))
        arrays.append(flat[i:i + n].reshape(s).astype(np.float64))
        i += n
    return EncoderParams(spec, arrays[0::2], arrays[1::2])
