"""Decoder/encoder checks: known encodings, totality, round trips."""

import shutil
import struct
import subprocess
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emglitch import isa
from emglitch.isa import Instr, Mnemonic

DATA = Path(__file__).parent / "data"


def test_hamming_facts():
    assert isa.hamming_weight(0xBF00) == 7
    assert isa.hamming_weight(0x6000) == 2
    assert isa.hamming_distance(0x12345678, 0xFFFFFFFF) == 19


def test_32bit_prefix():
    assert isa.is_32bit_prefix(0xE800)
    assert not isa.is_32bit_prefix(0xBF00)
    assert not isa.is_32bit_prefix(0x0000)
    assert isa.is_32bit_prefix(0xF000)
    assert isa.is_32bit_prefix(0xFFFF)
    assert not isa.is_32bit_prefix(0xE7FF)  # unconditional branch, 16-bit


def test_decode_anchors():
    assert isa.decode(0xBF00).mn is Mnemonic.NOP
    assert isa.decode(0xBF00).width == 16

    str_instr = isa.decode(0x6000)
    assert str_instr.mn is Mnemonic.STR_IMM
    assert (str_instr.rd, str_instr.rn, str_instr.imm) == (0, 0, 0)

    # 0x0000 is a shift-by-zero move, not an undefined hole
    lsl = isa.decode(0x0000)
    assert lsl.mn is Mnemonic.LSL_IMM
    assert (lsl.rd, lsl.rm, lsl.shift) == (0, 0, 0)


def test_encode_anchors():
    assert isa.encode(Instr(Mnemonic.NOP)) == (0xBF00, None)
    assert isa.encode(Instr(Mnemonic.STR_IMM, rd=0, rn=0, imm=0)) == (0x6000, None)
    first, second = isa.encode(Instr(Mnemonic.LDR_LIT_W, rd=8, imm=44, width=32))
    assert (first, second) == (0xF8DF, 0x802C)
    assert isa.is_32bit_prefix(first)


def test_encode_rejects_out_of_subset():
    with pytest.raises(isa.EncodingError):
        isa.encode(Instr(Mnemonic.UNDEF))
    with pytest.raises(isa.EncodingError):
        isa.encode(Instr(Mnemonic.MOV_IMM, rd=9, imm=1))       # high rd
    with pytest.raises(isa.EncodingError):
        isa.encode(Instr(Mnemonic.LDR_IMM, rd=0, rn=0, imm=3))  # unaligned
    with pytest.raises(isa.EncodingError):
        isa.encode(Instr(Mnemonic.B, imm=3))                    # odd offset
    with pytest.raises(isa.EncodingError):
        isa.encode(Instr(Mnemonic.PUSH, reglist=()))


def test_decode_totality():
    table = isa.decode16_table()
    for v in range(0x10000):
        if isa.is_32bit_prefix(v):
            assert table[v] is None
            i = isa.decode(v, 0x0000)
            assert i.width == 32
        else:
            i = table[v]
            assert i is not None
            assert i.width == 16
            assert i.raw == v
            assert isinstance(i.mn, Mnemonic)


def test_width_discipline():
    for v in (0x0000, 0x4800, 0xBF00, 0xE7FF, 0xE800, 0xF000, 0xFFFF):
        i = isa.decode(v, 0x0000)
        assert (i.width == 32) == isa.is_32bit_prefix(v)


def test_coprocessor_space_is_nocp():
    assert isa.decode(0xEE00, 0x0000).undef == isa.UNDEF_NOCP
    assert isa.decode(0xFC00, 0x0000).undef == isa.UNDEF_NOCP
    assert isa.decode(0xE800, 0x0000).undef == isa.UNDEF_OPCODE


# -- round trips ---------------------------------------------------------------

low_reg = st.integers(0, 7)
any_reg = st.integers(0, 15)


def instr_strategies():
    return st.one_of(
        st.just(Instr(Mnemonic.NOP)),
        st.builds(lambda rd, imm: Instr(Mnemonic.MOV_IMM, rd=rd, imm=imm, setflags=True),
                  low_reg, st.integers(0, 255)),
        st.builds(lambda rd, rm: Instr(Mnemonic.MOV_REG, rd=rd, rm=rm), any_reg, any_reg),
        st.builds(lambda rd, rm, sh: Instr(Mnemonic.LSL_IMM, rd=rd, rm=rm, shift=sh, setflags=True),
                  low_reg, low_reg, st.integers(0, 31)),
        st.builds(lambda rd, rn, imm: Instr(Mnemonic.ADD_IMM, rd=rd, rn=rn, imm=imm, setflags=True),
                  low_reg, low_reg, st.integers(0, 7)),
        st.builds(lambda rd, imm: Instr(Mnemonic.ADD_IMM, rd=rd, rn=rd, imm=imm, setflags=True),
                  low_reg, st.integers(0, 255)),
        st.builds(lambda rd, rn, imm: Instr(Mnemonic.SUB_IMM, rd=rd, rn=rn, imm=imm, setflags=True),
                  low_reg, low_reg, st.integers(0, 7)),
        st.builds(lambda rd, rn, rm: Instr(Mnemonic.ADD_REG, rd=rd, rn=rn, rm=rm, setflags=True),
                  low_reg, low_reg, low_reg),
        st.builds(lambda rd, rm: Instr(Mnemonic.ADD_REG, rd=rd, rn=rd, rm=rm), any_reg, any_reg),
        st.builds(lambda rd, rn, rm: Instr(Mnemonic.SUB_REG, rd=rd, rn=rn, rm=rm, setflags=True),
                  low_reg, low_reg, low_reg),
        st.builds(lambda rn, imm: Instr(Mnemonic.CMP_IMM, rn=rn, imm=imm, setflags=True),
                  low_reg, st.integers(0, 255)),
        st.builds(lambda rn, rm: Instr(Mnemonic.CMP_REG, rn=rn, rm=rm, setflags=True),
                  any_reg, any_reg),
        st.builds(lambda rd, rm: Instr(Mnemonic.AND, rd=rd, rn=rd, rm=rm, setflags=True),
                  low_reg, low_reg),
        st.builds(lambda rd, rm: Instr(Mnemonic.ORR, rd=rd, rn=rd, rm=rm, setflags=True),
                  low_reg, low_reg),
        st.builds(lambda rd, rm: Instr(Mnemonic.EOR, rd=rd, rn=rd, rm=rm, setflags=True),
                  low_reg, low_reg),
        st.builds(lambda rd, imm: Instr(Mnemonic.LDR_LIT, rd=rd, imm=imm * 4), low_reg,
                  st.integers(0, 255)),
        st.builds(lambda rd, rn, imm: Instr(Mnemonic.LDR_IMM, rd=rd, rn=rn, imm=imm * 4),
                  low_reg, low_reg, st.integers(0, 31)),
        st.builds(lambda rd, rn, imm: Instr(Mnemonic.STR_IMM, rd=rd, rn=rn, imm=imm * 4),
                  low_reg, low_reg, st.integers(0, 31)),
        st.builds(lambda rd, rn, rm: Instr(Mnemonic.LDR_REG, rd=rd, rn=rn, rm=rm),
                  low_reg, low_reg, low_reg),
        st.builds(lambda rd, rn, rm: Instr(Mnemonic.STR_REG, rd=rd, rn=rn, rm=rm),
                  low_reg, low_reg, low_reg),
        st.builds(lambda regs, lr: Instr(Mnemonic.PUSH,
                                         reglist=tuple(sorted(set(regs) | ({14} if lr else set())))),
                  st.lists(low_reg, min_size=1, max_size=8), st.booleans()),
        st.builds(lambda regs, pc: Instr(Mnemonic.POP,
                                         reglist=tuple(sorted(set(regs) | ({15} if pc else set())))),
                  st.lists(low_reg, min_size=1, max_size=8), st.booleans()),
        st.builds(lambda cond, off: Instr(Mnemonic.B_COND, cond=cond, imm=off * 2),
                  st.integers(0, 13), st.integers(-128, 127)),
        st.builds(lambda off: Instr(Mnemonic.B, imm=off * 2), st.integers(-1024, 1023)),
        st.builds(lambda off: Instr(Mnemonic.BL, imm=off * 2, width=32),
                  st.integers(-(1 << 23), (1 << 23) - 1)),
        st.builds(lambda rd, imm: Instr(Mnemonic.LDR_LIT_W, rd=rd, imm=imm, width=32),
                  any_reg, st.integers(-4095, 4095)),
        st.builds(lambda rd, rn, rm, sh: Instr(Mnemonic.LDR_REG_W, rd=rd, rn=rn, rm=rm,
                                               shift=sh, width=32),
                  any_reg, st.integers(0, 14), any_reg, st.integers(0, 3)),
    )


@given(instr_strategies())
@settings(max_examples=2000, deadline=None)
def test_decode_encode_roundtrip(instr):
    halves = isa.encoded_halfwords(instr)
    decoded = isa.decode(*halves) if len(halves) == 2 else isa.decode(halves[0])
    assert decoded == instr
    assert (decoded.width == 32) == isa.is_32bit_prefix(halves[0])


@given(instr_strategies())
@settings(max_examples=500, deadline=None)
def test_disasm_reassembles(instr):
    from emglitch import asm
    text = isa.disasm(instr)
    if instr.mn in (Mnemonic.B, Mnemonic.B_COND, Mnemonic.BL):
        return  # relative branches need an address context; covered in test_asm
    assembly = asm.assemble(text, base=0)
    halves = isa.encoded_halfwords(instr)
    expect = b"".join(h.to_bytes(2, "little") for h in halves)
    assert assembly.data == expect


@given(st.integers(0, 0xFFFFFFFF), st.integers(0, 0xFFFFFFFF), st.integers(0, 0xFFFFFFFF))
@settings(max_examples=300, deadline=None)
def test_hamming_metric(a, b, c):
    assert isa.hamming_distance(a, b) == isa.hamming_distance(b, a)
    assert isa.hamming_distance(a, a) == 0
    assert isa.hamming_distance(a, c) <= isa.hamming_distance(a, b) + isa.hamming_distance(b, c)
    assert isa.hamming_distance(a, b) == isa.hamming_weight(a ^ b)


# -- cross-check against an independent assembler -------------------------------

def _elf_text(path: Path) -> bytes:
    data = path.read_bytes()
    shoff, = struct.unpack_from("<I", data, 0x20)
    shentsize, shnum, shstrndx = struct.unpack_from("<HHH", data, 0x2E)

    def sh(i):
        return struct.unpack_from("<10I", data, shoff + i * shentsize)

    stroff = sh(shstrndx)[4]
    for i in range(shnum):
        e = sh(i)
        end = data.index(b"\0", stroff + e[0])
        if data[stroff + e[0]:end] == b".text":
            return data[e[4]:e[4] + e[5]]
    raise AssertionError("no .text section")


def _iter_corpus_encodings():
    blob = (DATA / "thumb_corpus.bin").read_bytes()
    hws = [int.from_bytes(blob[i:i + 2], "little") for i in range(0, len(blob), 2)]
    k = 0
    while k < len(hws):
        if isa.is_32bit_prefix(hws[k]):
            yield hws[k], hws[k + 1]
            k += 2
        else:
            yield hws[k], None
            k += 1


def test_frozen_corpus_decodes_and_reencodes():
    """Every corpus encoding decodes to a subset instruction whose canonical
    encoding is the byte-identical one the reference assembler emitted."""
    count = 0
    for first, second in _iter_corpus_encodings():
        instr = isa.decode(first, second or 0)
        assert instr.mn is not Mnemonic.UNDEF, hex(first)
        halves = isa.encoded_halfwords(instr)
        assert halves == ((first,) if second is None else (first, second))
        count += 1
    assert count == 50


@pytest.mark.skipif(shutil.which("clang") is None, reason="clang not available")
def test_corpus_matches_live_clang(tmp_path):
    src = DATA / "thumb_corpus.s"
    obj = tmp_path / "corpus.o"
    subprocess.run(
        ["clang", "--target=thumbv7m-none-eabi", "-mcpu=cortex-m3", "-c",
         str(src), "-o", str(obj)],
        check=True, capture_output=True)
    assert _elf_text(obj) == (DATA / "thumb_corpus.bin").read_bytes()
