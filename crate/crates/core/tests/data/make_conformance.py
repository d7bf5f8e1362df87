"""Writes conformance_v1.ceb from a hand-specified bundle using only the stdlib."""

import struct
import sys
from pathlib import Path


def crc64_xz(data: bytes) -> int:
    poly = 0xC96C5795D7870F42
    crc = 0xFFFFFFFFFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ poly if crc & 1 else crc >> 1
    return crc ^ 0xFFFFFFFFFFFFFFFF


assert crc64_xz(b"123456789") == 0x995DC9BBDF1939FA

DIMS = (3, 2, 4)
SAMPLES = [
    ("real-000", 0, [[0.5, -1.25, 3.0], [0.1, -0.0], [1.0, 2.0, -3.5, 1e-3]]),
    ("fake-001", 1, [[-2.0, 0.25, 7.75], None, [0.0, 65504.0, -1e-7, 0.333]]),
    ("clip-é中", 0, [None, [6.5, -0.75], None]),
]


def build() -> bytes:
    out = bytearray(b"CEB1")
    out.append(1)
    out += struct.pack("<I", len(SAMPLES))
    out += struct.pack("<3I", *DIMS)
    for sid, label, embs in SAMPLES:
        raw = sid.encode("utf-8")
        out += struct.pack("<H", len(raw)) + raw
        out.append(label)
        out.append(sum(1 << i for i, e in enumerate(embs) if e is not None))
        for e in embs:
            if e is not None:
                out += struct.pack(f"<{len(e)}f", *e)
    out += struct.pack("<Q", crc64_xz(bytes(out)))
    return bytes(out)


if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).with_name("conformance_v1.ceb")
    target.write_bytes(build())
