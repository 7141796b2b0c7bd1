"""Artifact files: JSON (readable) and little-endian binary, both bit-exact round trips.

Binary layout::

    8 bytes   magic  b"HOLOPFA\\x01"
    4 bytes   uint32 LE  schema version
    4 bytes   uint32 LE  header length L
    L bytes   UTF-8 JSON header (everything except the coefficients)
    then float64 LE (re, im) pairs in graded-lex rank order:
      V: n_bus x n_term, W: n_bus x n_term, Q: n_pv x n_term (im = 0)

The JSON form carries the same header with an extra ``series`` object holding
the coefficient pairs as nested lists.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .germ import GermSolution
from .mdhem import MDHEMArtifact, ScaleAssignment
from .mpseries import get_index_set
from .network import case_from_dict

MAGIC = b"HOLOPFA\x01"
SCHEMA_VERSION = 1


class ArtifactError(ValueError):
    pass


def _header(art: MDHEMArtifact) -> dict:
    return {
        "schema": "holopf-artifact",
        "version": SCHEMA_VERSION,
        "D": art.D,
        "M": art.M,
        "n_bus": art.case.n_bus,
        "n_pv": len(art.pv),
        "scale_digest": art.scales.digest(),
        "case_digest": art.case_digest,
        "source_digest": art.source_digest,
        "passes": art.passes,
        "case": art.case.to_dict(),
        "scales": {"names": list(art.scales.names),
                   "p": [list(p) for p in art.scales.p_dim],
                   "q": [list(q) for q in art.scales.q_dim]},
        "germ": art.germ.to_dict(),
        "tails": list(art.tails),
        "conversions": list(art.conversions),
        "warnings": list(art.warnings),
    }


def _as_complex(pairs: np.ndarray) -> np.ndarray:
    # a dtype view keeps signed zeros that ``re + 1j * im`` would flip
    return np.ascontiguousarray(pairs, dtype=np.float64).view(np.complex128)[..., 0].copy()


def _pairs(a: np.ndarray) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in a]


def _from_header(h: dict, V, W, Q) -> MDHEMArtifact:
    if h.get("schema") != "holopf-artifact":
        raise ArtifactError("not a holopf artifact")
    if h.get("version") != SCHEMA_VERSION:
        raise ArtifactError(f"unsupported artifact version {h.get('version')}")
    case = case_from_dict(h["case"])
    if case.digest() != h["case_digest"]:
        raise ArtifactError("embedded case does not match its digest")
    sc = h["scales"]
    scales = ScaleAssignment(tuple(sc["names"]), tuple(tuple(p) for p in sc["p"]),
                             tuple(tuple(q) for q in sc["q"]))
    if scales.digest() != h["scale_digest"]:
        raise ArtifactError("scale assignment does not match its digest")
    iset = get_index_set(h["D"], h["M"])
    return MDHEMArtifact(
        case=case, scales=scales, index_set=iset, V=V, W=W, Q=Q,
        germ=GermSolution.from_dict(h["germ"]), tails=tuple(h["tails"]),
        conversions=tuple(h["conversions"]), warnings=tuple(h["warnings"]),
        source_digest=h["source_digest"], passes=h["passes"],
    )


def to_json(art: MDHEMArtifact) -> str:
    doc = _header(art)
    doc["series"] = {"V": _pairs(art.V), "W": _pairs(art.W), "Q": _pairs(art.Q)}
    return json.dumps(doc)


def from_json(text: str) -> MDHEMArtifact:
    doc = json.loads(text)
    ser = doc.pop("series")

    def arr(rows, n):
        T = len(get_index_set(doc["D"], doc["M"]))
        return _as_complex(np.array(rows, dtype=float).reshape(n, T, 2))

    V = arr(ser["V"], doc["n_bus"])
    W = arr(ser["W"], doc["n_bus"])
    Q = arr(ser["Q"], doc["n_pv"]).real.copy()
    return _from_header(doc, V, W, Q)


def to_bytes(art: MDHEMArtifact) -> bytes:
    header = json.dumps(_header(art)).encode()
    blocks = []
    for a in (art.V, art.W, np.asarray(art.Q, dtype=complex)):
        pairs = np.stack([a.real, a.imag], axis=-1)
        blocks.append(np.ascontiguousarray(pairs, dtype="<f8").tobytes())
    return MAGIC + struct.pack("<II", SCHEMA_VERSION, len(header)) + header + b"".join(blocks)


def from_bytes(data: bytes) -> MDHEMArtifact:
    if data[:8] != MAGIC:
        raise ArtifactError("bad magic: not a binary holopf artifact")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != SCHEMA_VERSION:
        raise ArtifactError(f"unsupported artifact version {version}")
    h = json.loads(data[16:16 + hlen].decode())
    T = len(get_index_set(h["D"], h["M"]))
    n, v = h["n_bus"], h["n_pv"]
    flat = np.frombuffer(data, dtype="<f8", offset=16 + hlen)
    if flat.size != 2 * T * (2 * n + v):
        raise ArtifactError("coefficient block size does not match header")
    flat = flat.astype(float)

    def take(start, rows):
        a = flat[start:start + rows * T * 2].reshape(rows, T, 2)
        return _as_complex(a), start + rows * T * 2

    V, k = take(0, n)
    W, k = take(k, n)
    Q, _ = take(k, v)
    return _from_header(h, V, W, Q.real.copy())


def save_artifact(art: MDHEMArtifact, path, fmt: str | None = None) -> None:
    """Write ``art``; ``fmt`` is "json" or "bin" (default from the file suffix)."""
    path = Path(path)
    fmt = fmt or ("json" if path.suffix.lower() == ".json" else "bin")
    if fmt == "json":
        path.write_text(to_json(art))
    elif fmt == "bin":
        path.write_bytes(to_bytes(art))
    else:
        raise ValueError(f"unknown artifact format {fmt!r}")


def load_artifact(path) -> MDHEMArtifact:
    data = Path(path).read_bytes()
    if data[:8] == MAGIC:
        return from_bytes(data)
    try:
        return from_json(data.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: not a recognised artifact file") from exc
