# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled TIFF-flavor LZW kernel.

Wire-compatible with the pure-Python fallback in ``_lzwpy``; see that
module for the width-change and table-reset conventions.
"""

from libc.stdlib cimport free as cfree, malloc
from libc.string cimport memset

from ..errors import CorruptStream, LengthMismatch

DEF CODE_CLEAR = 256
DEF CODE_EOI = 257
DEF CODE_FIRST = 258
DEF TABLE_RESET = 4094
DEF TABLE_SIZE = 4096
DEF HASH_SIZE = 8192        # power of two, > 2 * TABLE_SIZE
DEF HASH_MASK = 8191

DEF ERR_NONE = 0
DEF ERR_TRUNCATED = 1
DEF ERR_BAD_CODE = 2
DEF ERR_OVERFLOW = 3
DEF ERR_FIRST_NOT_LITERAL = 4


cdef inline unsigned int _hash_slot(unsigned int key) nogil:
    return ((key * 2654435761u) >> 13) & HASH_MASK


def encode(const unsigned char[::1] data not None) -> bytes:
    """LZW-encode a byte buffer."""
    cdef Py_ssize_t n = data.shape[0]
    # 12 bits per input byte is the worst case, plus room for control codes
    cdef Py_ssize_t cap = (n * 12) // 8 + 32
    cdef bytearray out_arr = bytearray(cap)
    cdef unsigned char[::1] out = out_arr
    cdef Py_ssize_t opos = 0
    cdef unsigned long long buf = 0
    cdef int nbuf = 0, width = 9
    cdef int free_code = CODE_FIRST
    cdef int ent, c, code
    cdef unsigned int key, slot
    cdef Py_ssize_t i
    cdef int *hkey = <int *> malloc(HASH_SIZE * sizeof(int))
    cdef unsigned short *hval = <unsigned short *> malloc(
        HASH_SIZE * sizeof(unsigned short))
    if hkey == NULL or hval == NULL:
        if hkey != NULL:
            cfree(hkey)
        if hval != NULL:
            cfree(hval)
        raise MemoryError()

    with nogil:
        memset(hkey, 0xFF, HASH_SIZE * sizeof(int))  # all slots -> -1

        # put CLEAR
        buf = (buf << width) | CODE_CLEAR
        nbuf += width
        while nbuf >= 8:
            nbuf -= 8
            out[opos] = <unsigned char> ((buf >> nbuf) & 0xFF)
            opos += 1

        if n > 0:
            ent = data[0]
            for i in range(1, n):
                c = data[i]
                key = (<unsigned int> ent << 8) | <unsigned int> c
                slot = _hash_slot(key)
                while hkey[slot] != -1 and <unsigned int> hkey[slot] != key:
                    slot = (slot + 1) & HASH_MASK
                if hkey[slot] != -1:
                    ent = hval[slot]
                    continue
                # emit current string, then extend or reset the table
                buf = (buf << width) | <unsigned int> ent
                nbuf += width
                while nbuf >= 8:
                    nbuf -= 8
                    out[opos] = <unsigned char> ((buf >> nbuf) & 0xFF)
                    opos += 1
                if free_code == TABLE_RESET:
                    buf = (buf << width) | CODE_CLEAR
                    nbuf += width
                    while nbuf >= 8:
                        nbuf -= 8
                        out[opos] = <unsigned char> ((buf >> nbuf) & 0xFF)
                        opos += 1
                    memset(hkey, 0xFF, HASH_SIZE * sizeof(int))
                    free_code = CODE_FIRST
                    width = 9
                else:
                    hkey[slot] = <int> key
                    hval[slot] = <unsigned short> free_code
                    free_code += 1
                    if free_code == 512:
                        width = 10
                    elif free_code == 1024:
                        width = 11
                    elif free_code == 2048:
                        width = 12
                ent = c
            # final string
            buf = (buf << width) | <unsigned int> ent
            nbuf += width
            while nbuf >= 8:
                nbuf -= 8
                out[opos] = <unsigned char> ((buf >> nbuf) & 0xFF)
                opos += 1
        # put EOI and flush
        buf = (buf << width) | CODE_EOI
        nbuf += width
        while nbuf >= 8:
            nbuf -= 8
            out[opos] = <unsigned char> ((buf >> nbuf) & 0xFF)
            opos += 1
        if nbuf > 0:
            out[opos] = <unsigned char> ((buf << (8 - nbuf)) & 0xFF)
            opos += 1

    cfree(hkey)
    cfree(hval)
    return bytes(out_arr[:opos])


def decode(const unsigned char[::1] data not None, Py_ssize_t expected_len) -> bytes:
    """LZW-decode a payload into exactly ``expected_len`` bytes."""
    cdef Py_ssize_t n = data.shape[0]
    cdef bytearray out_arr = bytearray(expected_len)
    cdef unsigned char[::1] out_view
    cdef unsigned char *out_ptr = NULL
    if expected_len > 0:
        out_view = out_arr
        out_ptr = &out_view[0]
    cdef Py_ssize_t opos = 0, pos = 0
    cdef unsigned long long buf = 0
    cdef int nbuf = 0, width = 9
    cdef int code = 0, old = -1, next_code = CODE_FIRST
    cdef int err = ERR_NONE
    cdef Py_ssize_t entry_len, start
    cdef int cur
    # table entry = (prefix code, suffix byte, total string length, first byte)
    cdef int *prefix = <int *> malloc(TABLE_SIZE * sizeof(int))
    cdef unsigned char *suffix = <unsigned char *> malloc(TABLE_SIZE)
    cdef int *length = <int *> malloc(TABLE_SIZE * sizeof(int))
    cdef unsigned char *firstch = <unsigned char *> malloc(TABLE_SIZE)
    if prefix == NULL or suffix == NULL or length == NULL or firstch == NULL:
        if prefix != NULL:
            cfree(prefix)
        if suffix != NULL:
            cfree(suffix)
        if length != NULL:
            cfree(length)
        if firstch != NULL:
            cfree(firstch)
        raise MemoryError()

    with nogil:
        for cur in range(256):
            prefix[cur] = -1
            suffix[cur] = <unsigned char> cur
            length[cur] = 1
            firstch[cur] = <unsigned char> cur

        while opos < expected_len:
            while nbuf < width:
                if pos >= n:
                    err = ERR_TRUNCATED
                    break
                buf = (buf << 8) | data[pos]
                pos += 1
                nbuf += 8
            if err != ERR_NONE:
                break
            nbuf -= width
            code = <int> ((buf >> nbuf) & ((1u << width) - 1))

            if code == CODE_EOI:
                break
            if code == CODE_CLEAR:
                next_code = CODE_FIRST
                width = 9
                old = -1
                continue
            if old < 0:
                if code > 255:
                    err = ERR_FIRST_NOT_LITERAL
                    break
                out_ptr[opos] = <unsigned char> code
                opos += 1
                old = code
                continue
            if code > next_code:
                err = ERR_BAD_CODE
                break
            if next_code >= TABLE_SIZE:
                err = ERR_OVERFLOW
                break
            # add (old + firstchar of current) as the next entry
            prefix[next_code] = old
            suffix[next_code] = firstch[code] if code < next_code else firstch[old]
            length[next_code] = length[old] + 1
            firstch[next_code] = firstch[old]
            next_code += 1
            # emit the string for `code`, walking the prefix chain backwards
            entry_len = length[code]
            if opos + entry_len > expected_len:
                err = ERR_OVERFLOW
                break
            start = opos
            opos += entry_len
            cur = code
            while cur >= 0:
                entry_len -= 1
                out_ptr[start + entry_len] = suffix[cur]
                cur = prefix[cur]
            old = code
            if next_code == 511:
                width = 10
            elif next_code == 1023:
                width = 11
            elif next_code == 2047:
                width = 12

    cfree(prefix)
    cfree(suffix)
    cfree(length)
    cfree(firstch)

    if err == ERR_TRUNCATED:
        raise LengthMismatch(
            f"lzw stream ended at {opos} of {expected_len} bytes")
    if err == ERR_BAD_CODE:
        raise CorruptStream(f"lzw: code {code} beyond table")
    if err == ERR_OVERFLOW:
        raise CorruptStream("lzw: output overflow or table overflow")
    if err == ERR_FIRST_NOT_LITERAL:
        raise CorruptStream("lzw: first code after clear not a literal")
    if opos != expected_len:
        raise LengthMismatch(
            f"lzw decoded {opos} bytes, expected {expected_len}")
    return bytes(out_arr)
