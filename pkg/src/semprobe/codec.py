"""Bit-level wire codec for schema-typed messages.

A deliberately compact unaligned packed encoding:

* ``Int(lo, hi)`` packs ``value - lo`` into ``ceil(log2(hi - lo + 1))`` bits
  (zero bits when ``hi == lo``), MSB first.
* ``Enum``/``Choice`` with ``k`` alternatives pack the declared ordinal index
  into ``ceil(log2(k))`` bits; a ``Choice`` is followed by the chosen
  alternative's content.
* ``Bool`` packs one bit.
* A ``SeqOf`` packs its element count as ``Int(lo, hi)`` and then the
  elements.
* A sequence (IE instance) packs one presence bit per optional field, in
  declaration order, before the field contents.
* The final encoding is zero-padded to a byte boundary; decoding rejects
  non-zero padding and trailing bytes.

Encoding is prefix-deterministic: no lookahead is needed to decode.

Two encoder modes exist. ``checked`` enforces declared integer bounds.
``unchecked`` accepts any integer the bit field can physically carry
(``0 <= v - lo < 2**width``), which permits values above the declared
maximum, mirroring receivers whose range guards are inactive. Values below
the minimum are never wire-representable and must be delivered out of band.
The decoder reports integer values verbatim, even when above the declared
maximum: range validation is a semantic concern, not a codec concern.
"""

from __future__ import annotations

from .schema import (
    BoolKind,
    ChoiceKind,
    EnumKind,
    FieldKind,
    IntKind,
    NestedKind,
    Schema,
    SeqOfKind,
)

MODE_CHECKED = "checked"
MODE_UNCHECKED = "unchecked"

ValueTree = "dict | list | int | bool | str"


class EncodeError(ValueError):
    def __init__(self, message: str, path: str = "", raw_override_required: bool = False):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.raw_override_required = raw_override_required


class DecodeError(ValueError):
    pass


def bit_width(n_values: int) -> int:
    """Bits needed to address n_values distinct values (0 when only one)."""
    if n_values < 1:
        raise ValueError("n_values must be >= 1")
    return (n_values - 1).bit_length()


def int_width(kind: IntKind) -> int:
    return bit_width(kind.hi - kind.lo + 1)


def representable(kind: IntKind, value: int) -> bool:
    """Whether the bit field for this domain can physically carry ``value``."""
    return 0 <= value - kind.lo < (1 << int_width(kind))


class BitWriter:
    def __init__(self) -> None:
        self._bits: list[int] = []

    def write(self, value: int, width: int) -> None:
        if width == 0:
            return
        for shift in range(width - 1, -1, -1):
            self._bits.append((value >> shift) & 1)

    def write_bit(self, bit: int) -> None:
        self._bits.append(bit & 1)

    @property
    def bit_length(self) -> int:
        return len(self._bits)

    def to_bytes(self) -> bytes:
        bits = self._bits
        out = bytearray()
        acc = 0
        n = 0
        for b in bits:
            acc = (acc << 1) | b
            n += 1
            if n == 8:
                out.append(acc)
                acc = 0
                n = 0
        if n:
            out.append(acc << (8 - n))  # zero padding
        return bytes(out)


class BitReader:
    def __init__(self, data: bytes) -> None:
        self._data = data
        self._pos = 0  # bit position

    def read(self, width: int) -> int:
        if width == 0:
            return 0
        end = self._pos + width
        if end > len(self._data) * 8:
            raise DecodeError("truncated input")
        value = 0
        pos = self._pos
        for _ in range(width):
            byte = self._data[pos >> 3]
            bit = (byte >> (7 - (pos & 7))) & 1
            value = (value << 1) | bit
            pos += 1
        self._pos = end
        return value

    def read_bit(self) -> int:
        return self.read(1)

    @property
    def bit_position(self) -> int:
        return self._pos

    def finish(self) -> None:
        """Verify only zero padding remains and it fits one byte."""
        total = len(self._data) * 8
        if total - self._pos >= 8:
            raise DecodeError("trailing bytes after message")
        if self._pos < total and self.read(total - self._pos) != 0:
            raise DecodeError("non-zero padding bits")


# --------------------------------------------------------------------------
# Encoding
# --------------------------------------------------------------------------

def encode(schema: Schema, msg: dict, mode: str = MODE_CHECKED) -> bytes:
    """Encode a value tree for the schema's root IE.

    The tree must conform structurally: mandatory fields present, no unknown
    fields, choices selecting a declared alternative. In ``checked`` mode
    integer values must lie within declared bounds; in ``unchecked`` mode any
    wire-representable value is accepted.
    """
    if mode not in (MODE_CHECKED, MODE_UNCHECKED):
        raise ValueError(f"unknown mode {mode!r}")
    w = BitWriter()
    _encode_sequence(schema, schema.root, msg, schema.root, w, mode)
    return w.to_bytes()


def _encode_sequence(schema: Schema, ie_name: str, value, path: str, w: BitWriter, mode: str) -> None:
    ie = schema.ie(ie_name)
    if not isinstance(value, dict):
        raise EncodeError(f"expected an object for IE {ie_name}", path)
    unknown = set(value) - {f.name for f in ie.fields}
    if unknown:
        raise EncodeError(f"unknown fields {sorted(unknown)}", path)
    for f in ie.fields:
        if f.optional:
            w.write_bit(1 if f.name in value else 0)
        elif f.name not in value:
            raise EncodeError(f"mandatory field {f.name!r} missing", path)
    for f in ie.fields:
        if f.name in value:
            _encode_kind(schema, f.kind, value[f.name], f"{path}.{f.name}", w, mode)


def _encode_kind(schema: Schema, kind: FieldKind, value, path: str, w: BitWriter, mode: str) -> None:
    if isinstance(kind, IntKind):
        if isinstance(value, bool) or not isinstance(value, int):
            raise EncodeError(f"expected an integer, got {value!r}", path)
        if mode == MODE_CHECKED and not (kind.lo <= value <= kind.hi):
            raise EncodeError(
                f"value {value} outside declared range {kind.lo}..{kind.hi}", path
            )
        if not representable(kind, value):
            raise EncodeError(
                f"value {value} not wire-representable in {kind.lo}..{kind.hi}; "
                f"raw-override delivery required",
                path,
                raw_override_required=True,
            )
        w.write(value - kind.lo, int_width(kind))
    elif isinstance(kind, EnumKind):
        if value not in kind.labels:
            raise EncodeError(f"undeclared enum label {value!r}", path)
        w.write(kind.labels.index(value), bit_width(len(kind.labels)))
    elif isinstance(kind, BoolKind):
        if not isinstance(value, bool):
            raise EncodeError(f"expected a boolean, got {value!r}", path)
        w.write_bit(1 if value else 0)
    elif isinstance(kind, ChoiceKind):
        if not isinstance(value, dict) or len(value) != 1:
            raise EncodeError("choice value must be a single-key object", path)
        alt_name, sub_value = next(iter(value.items()))
        names = [n for n, _ in kind.alternatives]
        if alt_name not in names:
            raise EncodeError(f"undeclared choice alternative {alt_name!r}", path)
        w.write(names.index(alt_name), bit_width(len(names)))
        _encode_kind(schema, kind.alternative(alt_name), sub_value, f"{path}.{alt_name}", w, mode)
    elif isinstance(kind, SeqOfKind):
        if not isinstance(value, list):
            raise EncodeError(f"expected a list, got {value!r}", path)
        if not (kind.lo <= len(value) <= kind.hi):
            raise EncodeError(
                f"element count {len(value)} outside {kind.lo}..{kind.hi}", path
            )
        w.write(len(value) - kind.lo, bit_width(kind.hi - kind.lo + 1))
        for i, elem in enumerate(value):
            _encode_kind(schema, kind.element, elem, f"{path}[{i}]", w, mode)
    elif isinstance(kind, NestedKind):
        _encode_sequence(schema, kind.ie, value, path, w, mode)
    else:  # pragma: no cover
        raise TypeError(kind)


# --------------------------------------------------------------------------
# Decoding
# --------------------------------------------------------------------------

def decode(schema: Schema, data: bytes) -> dict:
    """Decode wire bytes into a value tree for the schema's root IE."""
    r = BitReader(data)
    tree = _decode_sequence(schema, schema.root, schema.root, r)
    r.finish()
    return tree


def _decode_sequence(schema: Schema, ie_name: str, path: str, r: BitReader) -> dict:
    ie = schema.ie(ie_name)
    present: dict[str, bool] = {}
    for f in ie.fields:
        present[f.name] = bool(r.read_bit()) if f.optional else True
    out: dict = {}
    for f in ie.fields:
        if present[f.name]:
            out[f.name] = _decode_kind(schema, f.kind, f"{path}.{f.name}", r)
    return out


def _decode_kind(schema: Schema, kind: FieldKind, path: str, r: BitReader):
    if isinstance(kind, IntKind):
        # Reported verbatim: no post-decode range validation.
        return kind.lo + r.read(int_width(kind))
    if isinstance(kind, EnumKind):
        idx = r.read(bit_width(len(kind.labels)))
        if idx >= len(kind.labels):
            raise DecodeError(f"{path}: enum index {idx} out of {len(kind.labels)} labels")
        return kind.labels[idx]
    if isinstance(kind, BoolKind):
        return bool(r.read_bit())
    if isinstance(kind, ChoiceKind):
        idx = r.read(bit_width(len(kind.alternatives)))
        if idx >= len(kind.alternatives):
            raise DecodeError(
                f"{path}: choice index {idx} out of {len(kind.alternatives)} alternatives"
            )
        name, sub = kind.alternatives[idx]
        return {name: _decode_kind(schema, sub, f"{path}.{name}", r)}
    if isinstance(kind, SeqOfKind):
        count = kind.lo + r.read(bit_width(kind.hi - kind.lo + 1))
        if count > kind.hi:
            raise DecodeError(f"{path}: element count {count} above {kind.hi}")
        return [
            _decode_kind(schema, kind.element, f"{path}[{i}]", r) for i in range(count)
        ]
    if isinstance(kind, NestedKind):
        return _decode_sequence(schema, kind.ie, path, r)
    raise TypeError(kind)  # pragma: no cover
