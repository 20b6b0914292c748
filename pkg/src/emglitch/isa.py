"""Thumb2-subset instruction decode/encode.

The subset covers the 16-bit data-processing, load/store, stack and branch
forms plus three 32-bit encodings (BL, LDR.W literal, LDR.W register-shift).
Decoding is total: every 16-bit halfword and every 32-bit pair maps either to
a subset instruction or to an ``UNDEF`` value carrying the raw bits.  UNDEF is
data, not an error; executing it raises a usage fault.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import lru_cache


class Mnemonic(enum.Enum):
    NOP = "nop"
    MOV_IMM = "movs.imm"
    MOV_REG = "mov.reg"
    ADD_IMM = "add.imm"
    ADD_REG = "add.reg"
    SUB_IMM = "sub.imm"
    SUB_REG = "sub.reg"
    CMP_IMM = "cmp.imm"
    CMP_REG = "cmp.reg"
    AND = "ands"
    ORR = "orrs"
    EOR = "eors"
    LSL_IMM = "lsls.imm"
    LDR_LIT = "ldr.lit"
    LDR_IMM = "ldr.imm"
    LDR_REG = "ldr.reg"
    LDR_REG_W = "ldr.reg.w"
    LDR_LIT_W = "ldr.lit.w"
    STR_IMM = "str.imm"
    STR_REG = "str.reg"
    B_COND = "b.cond"
    B = "b"
    BL = "bl"
    PUSH = "push"
    POP = "pop"
    UNDEF = "undef"


# Condition codes in encoding order (AL and the SVC slot are not branch
# conditions in this subset).
CONDITION_NAMES = (
    "eq", "ne", "cs", "cc", "mi", "pl", "vs", "vc",
    "hi", "ls", "ge", "lt", "gt", "le",
)

# Flavors of undefined encodings; the coprocessor space raises a distinct
# usage-fault subtype.
UNDEF_OPCODE = "undefined"
UNDEF_NOCP = "nocp"


class EncodingError(ValueError):
    """Operand combination has no encoding in the subset."""


@dataclass(frozen=True, slots=True)
class Instr:
    """One decoded instruction.

    ``imm`` holds byte offsets for memory/branch forms and plain immediates
    for data-processing forms.  ``raw`` keeps the bits as fetched and is
    excluded from equality so that decode(encode(i)) == i holds regardless of
    which of several equivalent encodings produced the value.
    """

    mn: Mnemonic
    rd: int = 0
    rn: int = 0
    rm: int = 0
    imm: int = 0
    shift: int = 0
    cond: int = 0
    reglist: tuple[int, ...] = ()
    setflags: bool = False
    width: int = 16
    undef: str = ""
    raw: int = field(default=0, compare=False)


def hamming_weight(word: int) -> int:
    return word.bit_count()


def hamming_distance(a: int, b: int) -> int:
    return (a ^ b).bit_count()


def is_32bit_prefix(hw: int) -> bool:
    """True iff a halfword opens a 32-bit encoding (top bits 11101 or 1111)."""
    return (hw >> 11) == 0b11101 or (hw >> 12) == 0b1111


def _signed(value: int, bits: int) -> int:
    if value & (1 << (bits - 1)):
        return value - (1 << bits)
    return value


def _decode16(v: int) -> Instr:
    top3 = v >> 13
    if top3 == 0b000:
        op = (v >> 11) & 0b11
        if op == 0b00:
            return Instr(Mnemonic.LSL_IMM, rd=v & 7, rm=(v >> 3) & 7,
                         shift=(v >> 6) & 31, setflags=True, raw=v)
        if op == 0b11:
            sub = (v >> 9) & 1
            use_imm = (v >> 10) & 1
            x = (v >> 6) & 7
            rn = (v >> 3) & 7
            rd = v & 7
            if use_imm:
                mn = Mnemonic.SUB_IMM if sub else Mnemonic.ADD_IMM
                return Instr(mn, rd=rd, rn=rn, imm=x, setflags=True, raw=v)
            mn = Mnemonic.SUB_REG if sub else Mnemonic.ADD_REG
            return Instr(mn, rd=rd, rn=rn, rm=x, setflags=True, raw=v)
        return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, raw=v)  # lsr/asr imm
    if top3 == 0b001:
        op = (v >> 11) & 0b11
        r = (v >> 8) & 7
        imm8 = v & 0xFF
        if op == 0b00:
            return Instr(Mnemonic.MOV_IMM, rd=r, imm=imm8, setflags=True, raw=v)
        if op == 0b01:
            return Instr(Mnemonic.CMP_IMM, rn=r, imm=imm8, setflags=True, raw=v)
        mn = Mnemonic.ADD_IMM if op == 0b10 else Mnemonic.SUB_IMM
        return Instr(mn, rd=r, rn=r, imm=imm8, setflags=True, raw=v)
    if (v >> 10) == 0b010000:
        op = (v >> 6) & 0xF
        rm = (v >> 3) & 7
        rdn = v & 7
        table = {0b0000: Mnemonic.AND, 0b0001: Mnemonic.EOR,
                 0b1100: Mnemonic.ORR, 0b1010: Mnemonic.CMP_REG}
        if op in table:
            mn = table[op]
            if mn is Mnemonic.CMP_REG:
                return Instr(mn, rn=rdn, rm=rm, setflags=True, raw=v)
            return Instr(mn, rd=rdn, rn=rdn, rm=rm, setflags=True, raw=v)
        return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, raw=v)
    if (v >> 10) == 0b010001:
        op = (v >> 8) & 0b11
        rm = (v >> 3) & 0xF
        rd = ((v >> 4) & 0b1000) | (v & 7)
        if op == 0b00:
            return Instr(Mnemonic.ADD_REG, rd=rd, rn=rd, rm=rm, raw=v)
        if op == 0b01:
            return Instr(Mnemonic.CMP_REG, rn=rd, rm=rm, setflags=True, raw=v)
        if op == 0b10:
            return Instr(Mnemonic.MOV_REG, rd=rd, rm=rm, raw=v)
        return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, raw=v)  # bx/blx
    if (v >> 11) == 0b01001:
        return Instr(Mnemonic.LDR_LIT, rd=(v >> 8) & 7, imm=(v & 0xFF) * 4, raw=v)
    if (v >> 12) == 0b0101:
        op = (v >> 9) & 7
        rm = (v >> 6) & 7
        rn = (v >> 3) & 7
        rt = v & 7
        if op == 0b000:
            return Instr(Mnemonic.STR_REG, rd=rt, rn=rn, rm=rm, raw=v)
        if op == 0b100:
            return Instr(Mnemonic.LDR_REG, rd=rt, rn=rn, rm=rm, raw=v)
        return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, raw=v)
    if (v >> 12) == 0b0110:
        load = (v >> 11) & 1
        imm = ((v >> 6) & 31) * 4
        rn = (v >> 3) & 7
        rt = v & 7
        mn = Mnemonic.LDR_IMM if load else Mnemonic.STR_IMM
        return Instr(mn, rd=rt, rn=rn, imm=imm, raw=v)
    if (v >> 12) == 0b1011:
        if (v & 0xFE00) == 0xB400:
            regs = tuple(i for i in range(8) if v & (1 << i))
            if v & 0x100:
                regs = regs + (14,)
            return Instr(Mnemonic.PUSH, reglist=regs, raw=v)
        if (v & 0xFE00) == 0xBC00:
            regs = tuple(i for i in range(8) if v & (1 << i))
            if v & 0x100:
                regs = regs + (15,)
            return Instr(Mnemonic.POP, reglist=regs, raw=v)
        if v == 0xBF00:
            return Instr(Mnemonic.NOP, raw=v)
        return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, raw=v)
    if (v >> 12) == 0b1101:
        cond = (v >> 8) & 0xF
        if cond >= 14:  # permanently-undefined slot and svc
            return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, raw=v)
        return Instr(Mnemonic.B_COND, cond=cond,
                     imm=_signed(v & 0xFF, 8) * 2, raw=v)
    if (v >> 11) == 0b11100:
        return Instr(Mnemonic.B, imm=_signed(v & 0x7FF, 11) * 2, raw=v)
    return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, raw=v)


@lru_cache(maxsize=1)
def decode16_table() -> tuple:
    """Decode results for all 65536 halfword values.

    Entries whose halfword opens a 32-bit encoding are ``None``; callers must
    route those through :func:`decode` with the second halfword.
    """
    return tuple(None if is_32bit_prefix(v) else _decode16(v)
                 for v in range(0x10000))


def _decode32(first: int, second: int) -> Instr:
    raw = (first << 16) | second
    # bl: 11110 S imm10 / 11 J1 1 J2 imm11
    if (first >> 11) == 0b11110 and (second & 0xD000) == 0xD000:
        s = (first >> 10) & 1
        imm10 = first & 0x3FF
        j1 = (second >> 13) & 1
        j2 = (second >> 11) & 1
        imm11 = second & 0x7FF
        i1 = ~(j1 ^ s) & 1
        i2 = ~(j2 ^ s) & 1
        imm = (s << 24) | (i1 << 23) | (i2 << 22) | (imm10 << 12) | (imm11 << 1)
        return Instr(Mnemonic.BL, imm=_signed(imm, 25), width=32, raw=raw)
    # ldr.w literal: 1111 1000 U101 1111 / Rt imm12
    if (first & 0xFF7F) == 0xF85F:
        u = (first >> 7) & 1
        imm12 = second & 0xFFF
        return Instr(Mnemonic.LDR_LIT_W, rd=second >> 12,
                     imm=imm12 if u else -imm12, width=32, raw=raw)
    # ldr.w register shifted: 1111 1000 0101 Rn / Rt 000000 imm2 Rm
    if (first & 0xFFF0) == 0xF850 and (second & 0x0FC0) == 0:
        return Instr(Mnemonic.LDR_REG_W, rd=second >> 12, rn=first & 0xF,
                     rm=second & 0xF, shift=(second >> 4) & 3, width=32, raw=raw)
    # coprocessor space triggers the nocp usage-fault subtype
    if (first >> 10) & 1 and ((first >> 11) & 0b11) in (0b01, 0b11):
        return Instr(Mnemonic.UNDEF, undef=UNDEF_NOCP, width=32, raw=raw)
    return Instr(Mnemonic.UNDEF, undef=UNDEF_OPCODE, width=32, raw=raw)


def decode(first: int, second: int = 0) -> Instr:
    """Decode one instruction from its first (and optional second) halfword."""
    if is_32bit_prefix(first):
        return _decode32(first, second)
    return _decode16(first)


def _check_low(*regs: int) -> None:
    for r in regs:
        if not 0 <= r <= 7:
            raise EncodingError(f"register r{r} not encodable in this form")


def _encode16(i: Instr) -> int:
    mn = i.mn
    if mn is Mnemonic.NOP:
        return 0xBF00
    if mn is Mnemonic.LSL_IMM:
        _check_low(i.rd, i.rm)
        if not 0 <= i.shift <= 31:
            raise EncodingError("shift amount out of range")
        return (i.shift << 6) | (i.rm << 3) | i.rd
    if mn is Mnemonic.MOV_IMM:
        _check_low(i.rd)
        if not 0 <= i.imm <= 255:
            raise EncodingError("immediate out of range")
        return 0x2000 | (i.rd << 8) | i.imm
    if mn is Mnemonic.MOV_REG:
        if not (0 <= i.rd <= 15 and 0 <= i.rm <= 15):
            raise EncodingError("bad register")
        return 0x4600 | ((i.rd & 8) << 4) | (i.rm << 3) | (i.rd & 7)
    if mn in (Mnemonic.ADD_IMM, Mnemonic.SUB_IMM):
        sub = mn is Mnemonic.SUB_IMM
        if i.rd <= 7 and i.rn <= 7 and 0 <= i.imm <= 7:
            base = 0x1E00 if sub else 0x1C00
            return base | (i.imm << 6) | (i.rn << 3) | i.rd
        if i.rd == i.rn and i.rd <= 7 and 0 <= i.imm <= 255:
            base = 0x3800 if sub else 0x3000
            return base | (i.rd << 8) | i.imm
        raise EncodingError("add/sub immediate form not encodable")
    if mn is Mnemonic.ADD_REG:
        if i.setflags:
            _check_low(i.rd, i.rn, i.rm)
            return 0x1800 | (i.rm << 6) | (i.rn << 3) | i.rd
        if i.rd != i.rn or not (0 <= i.rd <= 15 and 0 <= i.rm <= 15):
            raise EncodingError("non-flag add requires rd == rn")
        return 0x4400 | ((i.rd & 8) << 4) | (i.rm << 3) | (i.rd & 7)
    if mn is Mnemonic.SUB_REG:
        _check_low(i.rd, i.rn, i.rm)
        return 0x1A00 | (i.rm << 6) | (i.rn << 3) | i.rd
    if mn is Mnemonic.CMP_IMM:
        _check_low(i.rn)
        if not 0 <= i.imm <= 255:
            raise EncodingError("immediate out of range")
        return 0x2800 | (i.rn << 8) | i.imm
    if mn is Mnemonic.CMP_REG:
        if i.rn <= 7 and i.rm <= 7:
            return 0x4280 | (i.rm << 3) | i.rn
        if 0 <= i.rn <= 15 and 0 <= i.rm <= 15:
            return 0x4500 | ((i.rn & 8) << 4) | (i.rm << 3) | (i.rn & 7)
        raise EncodingError("bad register")
    if mn in (Mnemonic.AND, Mnemonic.EOR, Mnemonic.ORR):
        _check_low(i.rd, i.rm)
        if i.rn != i.rd:
            raise EncodingError("two-operand form requires rn == rd")
        op = {Mnemonic.AND: 0b0000, Mnemonic.EOR: 0b0001,
              Mnemonic.ORR: 0b1100}[mn]
        return 0x4000 | (op << 6) | (i.rm << 3) | i.rd
    if mn is Mnemonic.LDR_LIT:
        _check_low(i.rd)
        if i.imm % 4 or not 0 <= i.imm <= 1020:
            raise EncodingError("literal offset must be 0..1020, word aligned")
        return 0x4800 | (i.rd << 8) | (i.imm // 4)
    if mn in (Mnemonic.LDR_IMM, Mnemonic.STR_IMM):
        _check_low(i.rd, i.rn)
        if i.imm % 4 or not 0 <= i.imm <= 124:
            raise EncodingError("offset must be 0..124, word aligned")
        base = 0x6800 if mn is Mnemonic.LDR_IMM else 0x6000
        return base | ((i.imm // 4) << 6) | (i.rn << 3) | i.rd
    if mn in (Mnemonic.LDR_REG, Mnemonic.STR_REG):
        _check_low(i.rd, i.rn, i.rm)
        base = 0x5800 if mn is Mnemonic.LDR_REG else 0x5000
        return base | (i.rm << 6) | (i.rn << 3) | i.rd
    if mn is Mnemonic.PUSH:
        bits = 0
        for r in i.reglist:
            if r == 14:
                bits |= 0x100
            elif 0 <= r <= 7:
                bits |= 1 << r
            else:
                raise EncodingError(f"r{r} not allowed in push list")
        if not bits:
            raise EncodingError("empty register list")
        return 0xB400 | bits
    if mn is Mnemonic.POP:
        bits = 0
        for r in i.reglist:
            if r == 15:
                bits |= 0x100
            elif 0 <= r <= 7:
                bits |= 1 << r
            else:
                raise EncodingError(f"r{r} not allowed in pop list")
        if not bits:
            raise EncodingError("empty register list")
        return 0xBC00 | bits
    if mn is Mnemonic.B_COND:
        if not 0 <= i.cond <= 13:
            raise EncodingError("bad condition code")
        if i.imm % 2 or not -256 <= i.imm <= 254:
            raise EncodingError("conditional branch offset out of range")
        return 0xD000 | (i.cond << 8) | ((i.imm >> 1) & 0xFF)
    if mn is Mnemonic.B:
        if i.imm % 2 or not -2048 <= i.imm <= 2046:
            raise EncodingError("branch offset out of range")
        return 0xE000 | ((i.imm >> 1) & 0x7FF)
    raise EncodingError(f"{mn} has no 16-bit encoding")


def _encode32(i: Instr) -> tuple[int, int]:
    if i.mn is Mnemonic.BL:
        if i.imm % 2 or not -(1 << 24) <= i.imm < (1 << 24):
            raise EncodingError("bl offset out of range")
        imm = i.imm & 0x1FFFFFF
        s = (imm >> 24) & 1
        i1 = (imm >> 23) & 1
        i2 = (imm >> 22) & 1
        j1 = (~i1 & 1) ^ s
        j2 = (~i2 & 1) ^ s
        first = 0xF000 | (s << 10) | ((imm >> 12) & 0x3FF)
        second = 0xD000 | (j1 << 13) | (j2 << 11) | ((imm >> 1) & 0x7FF)
        return first, second
    if i.mn is Mnemonic.LDR_LIT_W:
        if not 0 <= i.rd <= 15 or abs(i.imm) > 4095:
            raise EncodingError("wide literal load not encodable")
        u = 1 if i.imm >= 0 else 0
        return 0xF85F | (u << 7), (i.rd << 12) | abs(i.imm)
    if i.mn is Mnemonic.LDR_REG_W:
        if i.rn == 15 or not (0 <= i.rd <= 15 and 0 <= i.rn <= 15
                              and 0 <= i.rm <= 15 and 0 <= i.shift <= 3):
            raise EncodingError("wide register load not encodable")
        return 0xF850 | i.rn, (i.rd << 12) | (i.shift << 4) | i.rm
    raise EncodingError(f"{i.mn} has no 32-bit encoding")


def encode(i: Instr) -> tuple[int, int | None]:
    """Emit the canonical encoding of a subset instruction.

    Raises :class:`EncodingError` for UNDEF or for operand combinations the
    subset cannot express.
    """
    if i.mn is Mnemonic.UNDEF:
        raise EncodingError("cannot encode an undefined instruction")
    if i.mn in (Mnemonic.BL, Mnemonic.LDR_LIT_W, Mnemonic.LDR_REG_W):
        return _encode32(i)
    return _encode16(i), None


def encoded_halfwords(i: Instr) -> tuple[int, ...]:
    first, second = encode(i)
    return (first,) if second is None else (first, second)


def _fmt_reg(r: int) -> str:
    return {13: "sp", 14: "lr", 15: "pc"}.get(r, f"r{r}")


def disasm(i: Instr) -> str:
    """Assembly text for an instruction; re-assembles to the same value."""
    mn = i.mn
    if mn is Mnemonic.NOP:
        return "nop"
    if mn is Mnemonic.UNDEF:
        return f"undef 0x{i.raw:0{i.width // 4}x}"
    if mn is Mnemonic.LSL_IMM:
        if i.shift == 0:
            return f"movs {_fmt_reg(i.rd)}, {_fmt_reg(i.rm)}"
        return f"lsls {_fmt_reg(i.rd)}, {_fmt_reg(i.rm)}, #{i.shift}"
    if mn is Mnemonic.MOV_IMM:
        return f"movs {_fmt_reg(i.rd)}, #{i.imm}"
    if mn is Mnemonic.MOV_REG:
        return f"mov {_fmt_reg(i.rd)}, {_fmt_reg(i.rm)}"
    if mn in (Mnemonic.ADD_IMM, Mnemonic.SUB_IMM):
        op = "adds" if mn is Mnemonic.ADD_IMM else "subs"
        return f"{op} {_fmt_reg(i.rd)}, {_fmt_reg(i.rn)}, #{i.imm}"
    if mn is Mnemonic.ADD_REG:
        if i.setflags:
            return f"adds {_fmt_reg(i.rd)}, {_fmt_reg(i.rn)}, {_fmt_reg(i.rm)}"
        return f"add {_fmt_reg(i.rd)}, {_fmt_reg(i.rm)}"
    if mn is Mnemonic.SUB_REG:
        return f"subs {_fmt_reg(i.rd)}, {_fmt_reg(i.rn)}, {_fmt_reg(i.rm)}"
    if mn is Mnemonic.CMP_IMM:
        return f"cmp {_fmt_reg(i.rn)}, #{i.imm}"
    if mn is Mnemonic.CMP_REG:
        return f"cmp {_fmt_reg(i.rn)}, {_fmt_reg(i.rm)}"
    if mn in (Mnemonic.AND, Mnemonic.ORR, Mnemonic.EOR):
        op = {Mnemonic.AND: "ands", Mnemonic.ORR: "orrs", Mnemonic.EOR: "eors"}[mn]
        return f"{op} {_fmt_reg(i.rd)}, {_fmt_reg(i.rm)}"
    if mn is Mnemonic.LDR_LIT:
        return f"ldr {_fmt_reg(i.rd)}, [pc, #{i.imm}]"
    if mn in (Mnemonic.LDR_IMM, Mnemonic.STR_IMM):
        op = "ldr" if mn is Mnemonic.LDR_IMM else "str"
        return f"{op} {_fmt_reg(i.rd)}, [{_fmt_reg(i.rn)}, #{i.imm}]"
    if mn in (Mnemonic.LDR_REG, Mnemonic.STR_REG):
        op = "ldr" if mn is Mnemonic.LDR_REG else "str"
        return f"{op} {_fmt_reg(i.rd)}, [{_fmt_reg(i.rn)}, {_fmt_reg(i.rm)}]"
    if mn is Mnemonic.LDR_LIT_W:
        return f"ldr.w {_fmt_reg(i.rd)}, [pc, #{i.imm}]"
    if mn is Mnemonic.LDR_REG_W:
        return (f"ldr.w {_fmt_reg(i.rd)}, [{_fmt_reg(i.rn)}, "
                f"{_fmt_reg(i.rm)}, lsl #{i.shift}]")
    if mn is Mnemonic.PUSH or mn is Mnemonic.POP:
        regs = ", ".join(_fmt_reg(r) for r in i.reglist)
        return f"{mn.value} {{{regs}}}"
    if mn is Mnemonic.B_COND:
        return f"b{CONDITION_NAMES[i.cond]} .{i.imm:+d}"
    if mn is Mnemonic.B:
        return f"b .{i.imm:+d}"
    if mn is Mnemonic.BL:
        return f"bl .{i.imm:+d}"
    raise AssertionError(mn)
