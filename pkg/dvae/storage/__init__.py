from .compression import Compression, CompressionType
from .record import Record, scan
from .bundle import write_bundle, read_bundle, encode_array, decode_array

__all__ = [
    "Compression",
    "CompressionType",
    "Record",
    "scan",
    "write_bundle",
    "read_bundle",
    "encode_array",
    "decode_array",
]
