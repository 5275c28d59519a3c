"""Canonical binary serialization for protocol values.

Byte layout (all lengths/counts are 4-byte big-endian unsigned):

    NONE    0x00
    BOOL    0x01 <1 byte: 0|1>
    INT     0x02 <len> <two's-complement big-endian, minimal length>
    BYTES   0x03 <len> <raw>
    STR     0x04 <len> <utf-8>
    SEQ     0x05 <count> <item>*           (list and tuple; decodes to tuple)
    SET     0x06 <count> <item>*           (items sorted by their encoding)
    MAP     0x07 <count> (<key><value>)*   (entries sorted by key encoding)
    RECORD  0x08 <name: STR payload> <count> <field>*   (dataclass fields in declaration order)
    HASH    0x09 <32 raw bytes>

Records are dataclasses registered with :func:`record`. Their encoding is
memoised on the instance, so every registered class must be immutable.
"""

from __future__ import annotations

import dataclasses
import struct

NONE, BOOL, INT, BYTES, STR, SEQ, SET, MAP, RECORD, HASH = range(10)

_REGISTRY: dict[str, type] = {}
_U32 = struct.Struct(">I")


class CodecError(ValueError):
    pass


def record(name: str):
    """Class decorator registering a dataclass under a stable wire name."""

    def wrap(cls):
        if not dataclasses.is_dataclass(cls):
            raise TypeError(f"{cls.__name__} is not a dataclass")
        if name in _REGISTRY and _REGISTRY[name] is not cls:
            raise CodecError(f"duplicate record name {name!r}")
        _REGISTRY[name] = cls
        cls._codec_name = name
        cls._codec_fields = tuple(f.name for f in dataclasses.fields(cls))
        return cls

    return wrap


def _len(n: int) -> bytes:
    return _U32.pack(n)


def _int_bytes(v: int) -> bytes:
    size = (v.bit_length() + 8) // 8
    return v.to_bytes(size, "big", signed=True)


def encode(value) -> bytes:
    out: list[bytes] = []
    _enc(value, out)
    return b"".join(out)


def _enc(v, out: list) -> None:
    from .core import Hash  # local import: core depends on codec

    if v is None:
        out.append(b"\x00")
    elif v is True or v is False:
        out.append(b"\x01\x01" if v else b"\x01\x00")
    elif isinstance(v, int):
        b = _int_bytes(v)
        out.append(b"\x02" + _len(len(b)) + b)
    elif isinstance(v, Hash):
        out.append(b"\x09" + bytes(v))
    elif isinstance(v, (bytes, bytearray)):
        out.append(b"\x03" + _len(len(v)) + bytes(v))
    elif isinstance(v, str):
        b = v.encode("utf-8")
        out.append(b"\x04" + _len(len(b)) + b)
    elif isinstance(v, (list, tuple)):
        out.append(b"\x05" + _len(len(v)))
        for item in v:
            _enc(item, out)
    elif isinstance(v, (set, frozenset)):
        items = sorted(encode(item) for item in v)
        out.append(b"\x06" + _len(len(items)))
        out.extend(items)
    elif isinstance(v, dict):
        entries = sorted((encode(k), encode(val)) for k, val in v.items())
        out.append(b"\x07" + _len(len(entries)))
        for k, val in entries:
            out.append(k)
            out.append(val)
    elif hasattr(type(v), "_codec_name"):
        cached = v.__dict__.get("_codec_bytes")
        if cached is None:
            parts: list[bytes] = []
            name = type(v)._codec_name.encode("utf-8")
            fields = type(v)._codec_fields
            parts.append(b"\x08" + _len(len(name)) + name + _len(len(fields)))
            for f in fields:
                _enc(getattr(v, f), parts)
            cached = b"".join(parts)
            v.__dict__["_codec_bytes"] = cached
        out.append(cached)
    else:
        raise CodecError(f"cannot encode {type(v).__name__}")


def decode(data: bytes):
    value, pos = _dec(memoryview(data), 0)
    if pos != len(data):
        raise CodecError("trailing bytes after value")
    return value


def _read_len(buf, pos):
    if pos + 4 > len(buf):
        raise CodecError("truncated length")
    return _U32.unpack_from(buf, pos)[0], pos + 4


def _take(buf, pos, n):
    if pos + n > len(buf):
        raise CodecError("truncated payload")
    return bytes(buf[pos:pos + n]), pos + n


def _dec(buf, pos):
    from .core import Hash

    if pos >= len(buf):
        raise CodecError("truncated value")
    tag = buf[pos]
    pos += 1
    if tag == NONE:
        return None, pos
    if tag == BOOL:
        b, pos = _take(buf, pos, 1)
        if b not in (b"\x00", b"\x01"):
            raise CodecError("bad bool")
        return b == b"\x01", pos
    if tag == INT:
        n, pos = _read_len(buf, pos)
        b, pos = _take(buf, pos, n)
        return int.from_bytes(b, "big", signed=True), pos
    if tag == BYTES:
        n, pos = _read_len(buf, pos)
        return _take(buf, pos, n)
    if tag == STR:
        n, pos = _read_len(buf, pos)
        b, pos = _take(buf, pos, n)
        return b.decode("utf-8"), pos
    if tag == HASH:
        b, pos = _take(buf, pos, 32)
        return Hash(b), pos
    if tag in (SEQ, SET):
        n, pos = _read_len(buf, pos)
        items = []
        for _ in range(n):
            item, pos = _dec(buf, pos)
            items.append(item)
        return (tuple(items) if tag == SEQ else frozenset(items)), pos
    if tag == MAP:
        n, pos = _read_len(buf, pos)
        d = {}
        for _ in range(n):
            k, pos = _dec(buf, pos)
            d[k], pos = _dec(buf, pos)
        return d, pos
    if tag == RECORD:
        n, pos = _read_len(buf, pos)
        name, pos = _take(buf, pos, n)
        name = name.decode("utf-8")
        cls = _REGISTRY.get(name)
        if cls is None:
            raise CodecError(f"unknown record {name!r}")
        count, pos = _read_len(buf, pos)
        if count != len(cls._codec_fields):
            raise CodecError(f"{name}: expected {len(cls._codec_fields)} fields, got {count}")
        vals = []
        for _ in range(count):
            item, pos = _dec(buf, pos)
            vals.append(item)
        return cls(*vals), pos
    raise CodecError(f"bad tag {tag}")
