from __future__ import annotations
from typing import Iterator, Optional, Tuple
from binascii import crc32
from dataclasses import dataclass
import uvarint
from dvae.storage import compression as cmp
from dvae import errors as err


@dataclass
class Record:
    """one named payload in a checkpoint file"""

    name: str
    payload: bytes = bytes()
    meta: int = 0

    @classmethod
    def decode(cls, buf: bytes) -> Record:
        """
        1. decode header
        2. use header metadata to slice name and payload
        3. verify checksum, raise if mismatch
        4. decompress if the meta bit says so
        """

        decoded = uvarint.cut(4, buf)
        body = decoded.rest
        _, meta, namelen, payloadlen = decoded.integers
        name = bytes(body[0:namelen])
        payload = bytes(body[namelen : namelen + payloadlen])

        checksum_bytes = body[namelen + payloadlen :]

        if not checksum_bytes:
            raise err.CheckpointError(f"truncated record {name!r}")

        checksum = uvarint.decode(checksum_bytes).integer
        check = crc32(cls._encode_header(name=name, payload=payload, meta=meta))
        check = crc32(name, check)
        check = crc32(payload, check)

        if checksum != check:
            raise err.ChecksumMismatch(f"record {name!r}")

        return Record(name=name.decode(), payload=cmp.Compression.decompress(payload, meta), meta=meta)

    def encode(self, compression: Optional[cmp.Compression] = None) -> bytes:
        """
        byte array representation of a record.
        append CRC32 checksum of header, name and payload
        ---------------------------------------------------------------------------
        | block size | meta | name length | payload length | name | payload | crc32 |
        ---------------------------------------------------------------------------
        """

        name, payload, meta = self.name.encode(), self.payload, self.meta

        if compression and compression.isenabled:
            payload = compression.compress(payload)
            meta |= compression.meta

        header = self._encode_header(name=name, payload=payload, meta=meta)
        checksum = crc32(header)
        encoded = bytearray(header)
        checksum = crc32(name, checksum)
        encoded += name
        checksum = crc32(payload, checksum)
        encoded += payload
        encoded += uvarint.encode(checksum)
        block_size = uvarint.encode(len(encoded))

        return bytes([*block_size, *encoded])

    @classmethod
    def _encode_header(cls, name: bytes, payload: bytes, meta: int) -> bytes:
        """
        ---------------------------------------
        | meta | name length | payload length |
        ---------------------------------------
        """

        header = bytearray([meta])

        for val in (len(name), len(payload)):
            header += uvarint.encode(val)

        return header


def scan(buf: bytes) -> Iterator[Record]:
    """walk back-to-back records"""

    offset = 0

    while offset < len(buf):
        block_size = uvarint.cut(1, buf[offset:]).integers[0]
        block_end = offset + len(uvarint.encode(block_size)) + block_size

        if block_end > len(buf):
            raise err.CheckpointError(f"truncated record at offset {offset}")

        yield Record.decode(buf[offset:block_end])
        offset = block_end


def split_header(buf: bytes, magic: bytes) -> Tuple[int, bytes]:
    """magic then uvarint format version; returns (version, rest)"""

    if buf[: len(magic)] != magic:
        raise err.CheckpointError("bad magic, not a checkpoint file")

    decoded = uvarint.cut(1, buf[len(magic) :])
    return decoded.integers[0], bytes(decoded.rest)
