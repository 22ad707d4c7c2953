"""Maximum-distance-separable erasure codec over GF(2^8).

Encodes K equal-length subpackets into r coded subpackets so that any K of
them reconstruct the originals. Coding is non-systematic Vandermonde: the
coded subpacket at evaluation point x carries coefficients x**(j-1), and
decoding solves the K x K Vandermonde system by Gaussian elimination over
the field.

Field arithmetic uses log/antilog tables with the 0x11D reduction
polynomial. Distinct nonzero evaluation points cap r at 255; allocation
values beyond that never reach the codec, since the simulator treats coded
subpackets as abstract indices.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["CodedSubpacket", "encode", "decode", "gf_mul", "gf_div", "gf_pow"]

_PRIM_POLY = 0x11D
FIELD_SIZE = 256

# antilog/log tables for the generator 2; GF_EXP is doubled so products of
# two logs never need a modulo
GF_EXP = [0] * 512
GF_LOG = [0] * 256


def _build_tables() -> None:
    x = 1
    for i in range(255):
        GF_EXP[i] = x
        GF_LOG[x] = i
        x <<= 1
        if x & 0x100:
            x ^= _PRIM_POLY
    for i in range(255, 512):
        GF_EXP[i] = GF_EXP[i - 255]


_build_tables()


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return GF_EXP[GF_LOG[a] + GF_LOG[b]]


def gf_div(a: int, b: int) -> int:
    if b == 0:
        raise ZeroDivisionError("division by zero in GF(256)")
    if a == 0:
        return 0
    return GF_EXP[(GF_LOG[a] - GF_LOG[b]) % 255]


def gf_pow(x: int, power: int) -> int:
    if power == 0:
        return 1
    if x == 0:
        return 0
    return GF_EXP[(GF_LOG[x] * power) % 255]


@dataclass(frozen=True)
class CodedSubpacket:
    """One coded subpacket: content it belongs to, its evaluation point
    (unique within the content's coded set), and the coded payload."""

    content_id: int
    encoding_point: int
    payload: bytes


def encode(subpackets: list[bytes], r: int, content_id: int = 0) -> list[CodedSubpacket]:
    """Encode K subpackets into r coded subpackets at points 1..r.

    All subpackets must have equal length; requires 1 <= K <= r <= 255.
    """
    K = len(subpackets)
    if K < 1:
        raise ValueError("need at least one subpacket")
    if r < K:
        raise ValueError(f"cannot encode K={K} subpackets into r={r} < K coded ones")
    if r > 255:
        raise ValueError(f"r={r} exhausts the nonzero points of GF(256)")
    length = len(subpackets[0])
    if any(len(s) != length for s in subpackets):
        raise ValueError("subpackets must all have the same length")
    coded = []
    for point in range(1, r + 1):
        coeffs = [gf_pow(point, j) for j in range(K)]
        payload = bytearray(length)
        for coeff, block in zip(coeffs, subpackets):
            if coeff == 0:
                continue
            clog = GF_LOG[coeff]
            for i, byte in enumerate(block):
                if byte:
                    payload[i] ^= GF_EXP[clog + GF_LOG[byte]]
        coded.append(CodedSubpacket(content_id, point, bytes(payload)))
    return coded


def decode(coded: list[CodedSubpacket]) -> list[bytes]:
    """Recover the K original subpackets from any K coded ones.

    Solves the Vandermonde system by Gaussian elimination over GF(256);
    duplicate encoding points make the system singular and are rejected.
    """
    K = len(coded)
    if K < 1:
        raise ValueError("need at least one coded subpacket")
    points = [c.encoding_point for c in coded]
    if len(set(points)) != K:
        raise ValueError("duplicate encoding points: singular Vandermonde system")
    length = len(coded[0].payload)
    if any(len(c.payload) != length for c in coded):
        raise ValueError("coded payloads must all have the same length")
    matrix = [[gf_pow(p, j) for j in range(K)] for p in points]
    rows = [bytearray(c.payload) for c in coded]
    # forward elimination with partial pivoting (any nonzero pivot works)
    for col in range(K):
        pivot = next((i for i in range(col, K) if matrix[i][col] != 0), None)
        if pivot is None:
            raise ValueError("singular Vandermonde system")
        matrix[col], matrix[pivot] = matrix[pivot], matrix[col]
        rows[col], rows[pivot] = rows[pivot], rows[col]
        inv = gf_div(1, matrix[col][col])
        matrix[col] = [gf_mul(v, inv) for v in matrix[col]]
        rows[col] = bytearray(gf_mul(b, inv) for b in rows[col])
        for i in range(K):
            if i == col or matrix[i][col] == 0:
                continue
            factor = matrix[i][col]
            flog = GF_LOG[factor]
            matrix[i] = [v ^ (GF_EXP[flog + GF_LOG[w]] if w else 0) for v, w in zip(matrix[i], matrix[col])]
            src = rows[col]
            dst = rows[i]
            for b in range(length):
                if src[b]:
                    dst[b] ^= GF_EXP[flog + GF_LOG[src[b]]]
    return [bytes(row) for row in rows]
