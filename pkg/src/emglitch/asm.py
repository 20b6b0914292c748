"""Tiny two-pass assembler for the Thumb2 subset.

Accepts one instruction per line, ``label:`` definitions, ``;`` comments and
a few directives (``.word``, ``.align``, ``.space``, ``.pool``).  Branch
targets are labels or ``.{+-}offset`` relative to the instruction address.
``ldr rX, =value`` allocates a literal-pool entry (pool is flushed at
``.pool`` or at the end of the program).

Non-flag-setting spellings like ``add r1, r1, #1`` are accepted for forms the
16-bit encoding space only offers flag-setting; the emitted encoding decides
the semantics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import isa
from .isa import EncodingError, Instr, Mnemonic


class AsmError(ValueError):
    pass


_REGS = {f"r{i}": i for i in range(16)}
_REGS.update({"sp": 13, "lr": 14, "pc": 15})

_CONDS = {name: idx for idx, name in enumerate(isa.CONDITION_NAMES)}


@dataclass
class Assembly:
    base: int
    data: bytes
    symbols: dict[str, int] = field(default_factory=dict)

    @property
    def end(self) -> int:
        return self.base + len(self.data)


def _parse_reg(tok: str) -> int:
    r = _REGS.get(tok.strip().lower())
    if r is None:
        raise AsmError(f"bad register {tok!r}")
    return r


def _parse_int(tok: str) -> int:
    tok = tok.strip().lstrip("#")
    try:
        return int(tok, 0)
    except ValueError:
        raise AsmError(f"bad immediate {tok!r}") from None


def _parse_reglist(body: str) -> tuple[int, ...]:
    regs: set[int] = set()
    for item in body.split(","):
        item = item.strip()
        if "-" in item:
            lo, hi = item.split("-", 1)
            a, b = _parse_reg(lo), _parse_reg(hi)
            if b < a:
                raise AsmError(f"bad register range {item!r}")
            regs.update(range(a, b + 1))
        elif item:
            regs.add(_parse_reg(item))
    return tuple(sorted(regs))


@dataclass
class _Line:
    addr: int
    mnemonic: str
    operands: str
    source: str
    lineno: int
    size: int = 2
    pool_value: int | None = None   # for ldr rX, =value


def _split_operands(text: str) -> list[str]:
    """Split on commas that are not inside brackets or braces."""
    parts, depth, cur = [], 0, ""
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


_MEM_RE = re.compile(
    r"^\[\s*(?P<rn>\w+)\s*(?:,\s*(?P<second>[^,\]]+)\s*(?:,\s*lsl\s+#?(?P<shift>\d+)\s*)?)?\]$",
    re.IGNORECASE)


class Assembler:
    def __init__(self, base: int = 0x08000000):
        self.base = base

    def assemble(self, source: str) -> Assembly:
        lines = self._first_pass(source)
        return self._second_pass(lines)

    # pass 1: addresses, sizes, labels, literal pool layout
    def _first_pass(self, source: str):
        self.symbols: dict[str, int] = {}
        self.pool: dict[int, int] = {}       # value -> addr, filled on flush
        items: list[_Line] = []
        addr = self.base
        pending_pool: list[_Line] = []

        def flush_pool():
            nonlocal addr
            if not pending_pool:
                return
            addr = (addr + 3) & ~3
            seen: dict = {}
            for ln in pending_pool:
                if ln.pool_value not in seen:
                    seen[ln.pool_value] = addr
                    items.append(_Line(addr, ".space", "4",
                                       "<literal pool>", ln.lineno, size=4))
                    addr += 4
                self.pool[ln.pool_value] = seen[ln.pool_value]
            pending_pool.clear()

        for lineno, raw in enumerate(source.splitlines(), 1):
            text = raw.split(";", 1)[0].strip()
            while text:
                m = re.match(r"^([A-Za-z_.$][\w.$]*):\s*", text)
                if not m:
                    break
                self.symbols[m.group(1)] = addr
                text = text[m.end():]
            if not text:
                continue
            parts = text.split(None, 1)
            mnemonic = parts[0].lower()
            operands = parts[1].strip() if len(parts) > 1 else ""

            if mnemonic == ".align":
                n = _parse_int(operands) if operands else 4
                pad = (-addr) % n
                if pad:
                    items.append(_Line(addr, ".space", str(pad), raw, lineno, size=pad))
                    addr += pad
                continue
            if mnemonic == ".space":
                size = _parse_int(operands)
                items.append(_Line(addr, ".space", operands, raw, lineno, size=size))
                addr += size
                continue
            if mnemonic == ".word":
                pad = (-addr) % 4
                if pad:
                    items.append(_Line(addr, ".space", str(pad), raw, lineno, size=pad))
                    addr += pad
                count = len(_split_operands(operands))
                items.append(_Line(addr, ".word", operands, raw, lineno, size=4 * count))
                addr += 4 * count
                continue
            if mnemonic == ".pool":
                flush_pool()
                continue

            line = _Line(addr, mnemonic, operands, raw, lineno)
            line.size = self._instr_size(mnemonic, operands)
            if mnemonic in ("ldr", "ldr.w") and operands.split(",", 1)[-1].strip().startswith("="):
                line.pool_value = self._pool_value(operands)
                pending_pool.append(line)
            items.append(line)
            addr += line.size
        flush_pool()
        return items

    def _pool_value(self, operands: str) -> int:
        expr = operands.split(",", 1)[1].strip()[1:].strip()
        if expr in self.symbols or re.match(r"^[A-Za-z_.$]", expr):
            # symbol; resolved in pass 2 (forward references allowed)
            return ("sym", expr)  # type: ignore[return-value]
        return _parse_int(expr)

    def _instr_size(self, mnemonic: str, operands: str) -> int:
        if mnemonic == "bl" or mnemonic.endswith(".w"):
            return 4
        if mnemonic == "ldr":
            ops = _split_operands(operands)
            if ops and _parse_reg(ops[0]) > 7:
                return 4
            if len(ops) > 1:
                m = _MEM_RE.match(ops[1])
                if m and m.group("shift") is not None:
                    return 4
        return 2

    # pass 2: encode
    def _second_pass(self, items) -> Assembly:
        # resolve symbolic pool entries now that labels are known
        pool_fixed: dict = {}
        for value, paddr in self.pool.items():
            if isinstance(value, tuple):
                name = value[1]
                if name not in self.symbols:
                    raise AsmError(f"undefined symbol {name!r}")
                pool_fixed[value] = (self.symbols[name], paddr)
            else:
                pool_fixed[value] = (value, paddr)

        end = max((ln.addr + ln.size for ln in items), default=self.base)
        data = bytearray(end - self.base)

        def put16(addr: int, value: int) -> None:
            o = addr - self.base
            data[o:o + 2] = value.to_bytes(2, "little")

        def put32(addr: int, value: int) -> None:
            o = addr - self.base
            data[o:o + 4] = (value & 0xFFFFFFFF).to_bytes(4, "little")

        for ln in items:
            try:
                if ln.mnemonic == ".space":
                    continue
                if ln.mnemonic == ".word":
                    for k, expr in enumerate(_split_operands(ln.operands)):
                        put32(ln.addr + 4 * k, self._value(expr))
                    continue
                if ln.pool_value is not None:
                    _, paddr = pool_fixed[ln.pool_value]
                    instr = self._encode_pool_load(ln, paddr)
                else:
                    instr = self._parse_instr(ln)
                halves = isa.encoded_halfwords(instr)
                put16(ln.addr, halves[0])
                if len(halves) > 1:
                    put16(ln.addr + 2, halves[1])
            except (AsmError, EncodingError) as exc:
                raise AsmError(f"line {ln.lineno}: {ln.source.strip()!r}: {exc}") from None
        # pool words for plain values
        for key, (value, paddr) in pool_fixed.items():
            put32(paddr, value)
        return Assembly(self.base, bytes(data), dict(self.symbols))

    def _value(self, expr: str) -> int:
        expr = expr.strip()
        if expr in self.symbols:
            return self.symbols[expr]
        return _parse_int(expr)

    def _branch_offset(self, ln: _Line, target_expr: str) -> int:
        target_expr = target_expr.strip()
        if target_expr.startswith("."):
            target = ln.addr + _parse_int(target_expr[1:] or "0")
        else:
            if target_expr not in self.symbols:
                raise AsmError(f"undefined label {target_expr!r}")
            target = self.symbols[target_expr]
        return target - (ln.addr + 4)

    def _encode_pool_load(self, ln: _Line, pool_addr: int) -> Instr:
        rd = _parse_reg(_split_operands(ln.operands)[0])
        offset = pool_addr - ((ln.addr + 4) & ~3)
        if ln.size == 2:
            if offset < 0 or offset > 1020:
                raise AsmError("literal pool out of range; add a .pool directive")
            return Instr(Mnemonic.LDR_LIT, rd=rd, imm=offset)
        return Instr(Mnemonic.LDR_LIT_W, rd=rd, imm=offset, width=32)

    def _parse_instr(self, ln: _Line) -> Instr:
        mn = ln.mnemonic
        ops = _split_operands(ln.operands)

        if mn == "nop":
            return Instr(Mnemonic.NOP)
        if mn == "undef":
            raise AsmError("undefined encodings cannot be assembled")

        if mn in ("mov", "movs"):
            rd = _parse_reg(ops[0])
            if ops[1].startswith("#"):
                return Instr(Mnemonic.MOV_IMM, rd=rd, imm=_parse_int(ops[1]), setflags=True)
            rm = _parse_reg(ops[1])
            if mn == "movs":
                return Instr(Mnemonic.LSL_IMM, rd=rd, rm=rm, shift=0, setflags=True)
            return Instr(Mnemonic.MOV_REG, rd=rd, rm=rm)

        if mn in ("add", "adds", "sub", "subs"):
            sub = mn.startswith("sub")
            rd = _parse_reg(ops[0])
            if len(ops) == 2:
                if ops[1].startswith("#"):
                    m = Mnemonic.SUB_IMM if sub else Mnemonic.ADD_IMM
                    return Instr(m, rd=rd, rn=rd, imm=_parse_int(ops[1]), setflags=True)
                rm = _parse_reg(ops[1])
                if sub:
                    return Instr(Mnemonic.SUB_REG, rd=rd, rn=rd, rm=rm, setflags=True)
                if mn == "adds":
                    return Instr(Mnemonic.ADD_REG, rd=rd, rn=rd, rm=rm, setflags=True)
                return Instr(Mnemonic.ADD_REG, rd=rd, rn=rd, rm=rm)
            rn = _parse_reg(ops[1])
            if ops[2].startswith("#"):
                m = Mnemonic.SUB_IMM if sub else Mnemonic.ADD_IMM
                return Instr(m, rd=rd, rn=rn, imm=_parse_int(ops[2]), setflags=True)
            rm = _parse_reg(ops[2])
            m = Mnemonic.SUB_REG if sub else Mnemonic.ADD_REG
            return Instr(m, rd=rd, rn=rn, rm=rm, setflags=True)

        if mn == "cmp":
            rn = _parse_reg(ops[0])
            if ops[1].startswith("#"):
                return Instr(Mnemonic.CMP_IMM, rn=rn, imm=_parse_int(ops[1]), setflags=True)
            return Instr(Mnemonic.CMP_REG, rn=rn, rm=_parse_reg(ops[1]), setflags=True)

        if mn in ("ands", "and", "orrs", "orr", "eors", "eor"):
            table = {"and": Mnemonic.AND, "orr": Mnemonic.ORR, "eor": Mnemonic.EOR}
            rd = _parse_reg(ops[0])
            rm = _parse_reg(ops[-1])
            return Instr(table[mn.rstrip("s")], rd=rd, rn=rd, rm=rm, setflags=True)

        if mn in ("lsl", "lsls"):
            rd = _parse_reg(ops[0])
            rm = _parse_reg(ops[1])
            shift = _parse_int(ops[2]) if len(ops) > 2 else 0
            return Instr(Mnemonic.LSL_IMM, rd=rd, rm=rm, shift=shift, setflags=True)

        if mn in ("ldr", "ldr.w", "str", "str.w"):
            load = mn.startswith("ldr")
            wide = mn.endswith(".w") or ln.size == 4
            rt = _parse_reg(ops[0])
            m = _MEM_RE.match(ops[1])
            if not m:
                raise AsmError(f"bad memory operand {ops[1]!r}")
            rn = _parse_reg(m.group("rn"))
            second = m.group("second")
            shift = m.group("shift")
            if rn == 15:
                if not load:
                    raise AsmError("cannot store pc-relative")
                imm = _parse_int(second) if second else 0
                if wide or rt > 7:
                    return Instr(Mnemonic.LDR_LIT_W, rd=rt, imm=imm, width=32)
                return Instr(Mnemonic.LDR_LIT, rd=rt, imm=imm)
            if second is None:
                second = "#0"
            if second.strip().startswith("#"):
                imm = _parse_int(second)
                if not load:
                    return Instr(Mnemonic.STR_IMM, rd=rt, rn=rn, imm=imm)
                return Instr(Mnemonic.LDR_IMM, rd=rt, rn=rn, imm=imm)
            rm = _parse_reg(second)
            if shift is not None or wide:
                if not load:
                    raise AsmError("shifted-register store is not in the subset")
                return Instr(Mnemonic.LDR_REG_W, rd=rt, rn=rn, rm=rm,
                             shift=int(shift or 0), width=32)
            if load:
                return Instr(Mnemonic.LDR_REG, rd=rt, rn=rn, rm=rm)
            return Instr(Mnemonic.STR_REG, rd=rt, rn=rn, rm=rm)

        if mn == "push":
            return Instr(Mnemonic.PUSH, reglist=_parse_reglist(ln.operands.strip("{}")))
        if mn == "pop":
            return Instr(Mnemonic.POP, reglist=_parse_reglist(ln.operands.strip("{}")))

        if mn == "b":
            return Instr(Mnemonic.B, imm=self._branch_offset(ln, ln.operands))
        if mn == "bl":
            return Instr(Mnemonic.BL, imm=self._branch_offset(ln, ln.operands), width=32)
        if mn.startswith("b") and mn[1:] in _CONDS:
            return Instr(Mnemonic.B_COND, cond=_CONDS[mn[1:]],
                         imm=self._branch_offset(ln, ln.operands))

        raise AsmError(f"unknown mnemonic {mn!r}")


def assemble(source: str, base: int = 0x08000000) -> Assembly:
    return Assembler(base).assemble(source)
