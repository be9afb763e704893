from typing import Optional
from enum import Enum
from snappy import compress, decompress
from dvae import const


class CompressionType(Enum):
    """only snappy supported"""

    SNAPPY = 1


class Compression:
    """payload compression. records carry a meta bit so readers need no settings"""

    def __init__(self, compression_type: Optional[CompressionType] = CompressionType.SNAPPY):
        self._compression_type = compression_type

    @property
    def isenabled(self) -> bool:
        return bool(self._compression_type)

    @property
    def meta(self) -> int:
        """bits to set on records written with this compression"""

        return const.BIT_COMPRESSED if self.isenabled else 0

    def compress(self, raw: bytes) -> bytes:
        if self._compression_type == CompressionType.SNAPPY:
            return compress(raw)
        return raw

    @staticmethod
    def decompress(compressed: bytes, meta: int) -> bytes:
        """decode by the record's meta bit"""

        if meta & const.BIT_COMPRESSED:
            return decompress(compressed)
        return compressed
