"""Pure-Python TIFF-flavor LZW codec.

Fallback used when the compiled kernel is unavailable; semantics are
identical (MSB-first variable-width codes, 9..12 bits, early width change
on the decode side, table reset at 4094 entries).
"""

from ..errors import CorruptStream, LengthMismatch

CLEAR = 256
EOI = 257
FIRST = 258
TABLE_RESET = 4094

# Encoder grows the code width when the next free code reaches a power of
# two; the decoder lags one table entry behind and therefore grows one
# entry early.
_ENC_GROW = {512: 10, 1024: 11, 2048: 12}
_DEC_GROW = {511: 10, 1023: 11, 2047: 12}


def encode(data: bytes) -> bytes:
    out = bytearray()
    buf = 0
    nbuf = 0
    width = 9

    def put(code: int) -> None:
        nonlocal buf, nbuf
        buf = (buf << width) | code
        nbuf += width
        while nbuf >= 8:
            nbuf -= 8
            out.append((buf >> nbuf) & 0xFF)
        buf &= (1 << nbuf) - 1

    put(CLEAR)
    if data:
        table: dict[int, int] = {}
        free = FIRST
        ent = data[0]
        for c in data[1:]:
            key = (ent << 8) | c
            nxt = table.get(key)
            if nxt is not None:
                ent = nxt
                continue
            put(ent)
            if free == TABLE_RESET:
                put(CLEAR)
                table.clear()
                free = FIRST
                width = 9
            else:
                table[key] = free
                free += 1
                if free in _ENC_GROW:
                    width = _ENC_GROW[free]
            ent = c
        put(ent)
    put(EOI)
    if nbuf:
        out.append((buf << (8 - nbuf)) & 0xFF)
    return bytes(out)


def decode(data: bytes, expected_len: int) -> bytes:
    out = bytearray()
    literals = [bytes([i]) for i in range(256)]
    table = literals + [b"", b""]
    width = 9
    buf = 0
    nbuf = 0
    pos = 0
    n = len(data)
    old = -1

    while len(out) < expected_len:
        while nbuf < width:
            if pos >= n:
                raise LengthMismatch(
                    f"lzw stream ended at {len(out)} of {expected_len} bytes"
                )
            buf = (buf << 8) | data[pos]
            pos += 1
            nbuf += 8
        nbuf -= width
        code = (buf >> nbuf) & ((1 << width) - 1)
        buf &= (1 << nbuf) - 1

        if code == EOI:
            break
        if code == CLEAR:
            del table[FIRST:]
            width = 9
            old = -1
            continue
        if old < 0:
            if code > 255:
                raise CorruptStream("lzw: first code after clear not a literal")
            entry = literals[code]
        elif code < len(table):
            entry = table[code]
            table.append(table[old] + entry[:1])
        elif code == len(table):
            entry = table[old] + table[old][:1]
            table.append(entry)
        else:
            raise CorruptStream(f"lzw: code {code} beyond table size {len(table)}")
        if len(table) > TABLE_RESET + 1:
            raise CorruptStream("lzw: table overflow without clear code")
        out += entry
        old = code
        grown = _DEC_GROW.get(len(table))
        if grown:
            width = grown

    if len(out) != expected_len:
        raise LengthMismatch(
            f"lzw decoded {len(out)} bytes, expected {expected_len}"
        )
    return bytes(out)
