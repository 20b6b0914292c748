"""Architectural state and instruction semantics for the Thumb2 subset.

The core owns registers, flags and memory; all cycle accounting is delegated
to a :class:`emglitch.bus.Timeline`.  Exceptions park the core in a handler
self-loop: once an exception number is latched, registers and memory stop
changing and only the cycle counter advances.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from . import bus, isa
from .isa import Mnemonic

FLASH_BASE = 0x08000000
SRAM_BASE = 0x20000000

# Exception numbers follow the usual Cortex-M vector assignment.
EXC_NONE = 0
EXC_HARD_FAULT = 3
EXC_MEM_MANAGE = 4
EXC_BUS_FAULT = 5
EXC_USAGE_FAULT = 6

# Usage-fault subtypes (kept outside the xPSR number).
UF_UNDEFINED = "undefined"
UF_NOCP = "nocp"
UF_UNALIGNED = "unaligned"

# Where the core parks after a trap; stands in for a one-instruction
# handler loop, no vector table is modelled.
HANDLER_LOOP_PC = 0xFFFFFFFE

WATCHPOINT_HIT = "watchpoint"
BUDGET_EXCEEDED = "budget"


class CoreTrap(Exception):
    def __init__(self, number: int, detail: str = ""):
        super().__init__(f"exception {number} {detail}".strip())
        self.number = number
        self.detail = detail


@dataclass
class Region:
    base: int
    size: int
    kind: str                  # bus.FLASH or bus.SRAM
    data: bytearray = field(default_factory=bytearray)

    def __post_init__(self):
        if len(self.data) < self.size:
            self.data = bytearray(self.data) + bytearray(self.size - len(self.data))

    def contains(self, addr: int, nbytes: int = 1) -> bool:
        return self.base <= addr and addr + nbytes <= self.base + self.size


class MemoryImage:
    """Flat memory split into non-overlapping flash/SRAM regions.

    Flash is read-only at run time (a store there raises a bus fault); the
    oracle patches instructions by building a copy.
    """

    def __init__(self, regions: list[Region]):
        spans = sorted((r.base, r.base + r.size) for r in regions)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ValueError("memory regions overlap")
        self.regions = list(regions)

    def copy(self) -> "MemoryImage":
        return MemoryImage([Region(r.base, r.size, r.kind, bytearray(r.data))
                            for r in self.regions])

    def _find(self, addr: int, nbytes: int) -> Region:
        for r in self.regions:
            if r.contains(addr, nbytes):
                return r
        raise CoreTrap(EXC_BUS_FAULT)

    def kind_at(self, addr: int) -> str | None:
        for r in self.regions:
            if r.contains(addr, 1):
                return r.kind
        return None

    def read_u16(self, addr: int) -> int:
        r = self._find(addr, 2)
        o = addr - r.base
        return r.data[o] | (r.data[o + 1] << 8)

    def read_u32(self, addr: int) -> int:
        r = self._find(addr, 4)
        o = addr - r.base
        return int.from_bytes(r.data[o:o + 4], "little")

    def write_u32(self, addr: int, value: int) -> None:
        r = self._find(addr, 4)
        if r.kind == bus.FLASH:
            raise CoreTrap(EXC_BUS_FAULT)
        r.data[addr - r.base:addr - r.base + 4] = (value & 0xFFFFFFFF).to_bytes(4, "little")

    def read_word_or_none(self, addr: int) -> int | None:
        try:
            return self.read_u32(addr)
        except CoreTrap:
            return None

    def poke_u16(self, addr: int, value: int) -> None:
        """Patch memory regardless of region kind (image preparation only)."""
        r = self._find(addr, 2)
        o = addr - r.base
        r.data[o] = value & 0xFF
        r.data[o + 1] = (value >> 8) & 0xFF

    def poke_u32(self, addr: int, value: int) -> None:
        r = self._find(addr, 4)
        o = addr - r.base
        r.data[o:o + 4] = (value & 0xFFFFFFFF).to_bytes(4, "little")


class ArchState:
    """Registers r0-r15, the four visible flags and the exception number."""

    __slots__ = ("r", "n", "z", "c", "v", "exception_number",
                 "exception_detail", "cycles")

    def __init__(self):
        self.r = [0] * 16
        self.n = 0
        self.z = 0
        self.c = 0
        self.v = 0
        self.exception_number = EXC_NONE
        self.exception_detail = ""
        self.cycles = 0

    @property
    def pc(self) -> int:
        return self.r[15]

    @pc.setter
    def pc(self, value: int) -> None:
        self.r[15] = value & 0xFFFFFFFF

    @property
    def sp(self) -> int:
        return self.r[13]

    def copy(self) -> "ArchState":
        s = ArchState.__new__(ArchState)
        s.r = list(self.r)
        s.n, s.z, s.c, s.v = self.n, self.z, self.c, self.v
        s.exception_number = self.exception_number
        s.exception_detail = self.exception_detail
        s.cycles = self.cycles
        return s


def _u32(x: int) -> int:
    return x & 0xFFFFFFFF


def _add_with_carry(x: int, y: int, carry_in: int):
    usum = x + y + carry_in
    result = usum & 0xFFFFFFFF
    carry = 1 if usum > 0xFFFFFFFF else 0
    sx = x - (1 << 32) if x & 0x80000000 else x
    sy = y - (1 << 32) if y & 0x80000000 else y
    ssum = sx + sy + carry_in
    sres = result - (1 << 32) if result & 0x80000000 else result
    overflow = 1 if ssum != sres else 0
    return result, carry, overflow


def _condition_passed(state: ArchState, cond: int) -> bool:
    n, z, c, v = state.n, state.z, state.c, state.v
    table = (
        z == 1, z == 0, c == 1, c == 0, n == 1, n == 0, v == 1, v == 0,
        c == 1 and z == 0, c == 0 or z == 1, n == v, n != v,
        z == 0 and n == v, z == 1 or n != v,
    )
    return table[cond]


@dataclass
class ExecResult:
    branched: bool = False
    data_ops: list = field(default_factory=list)  # (kind, addr, is_load, value)


def execute(state: ArchState, instr: isa.Instr, mem: MemoryImage,
            load_hook=None, store_hook=None) -> ExecResult:
    """Apply one instruction's architectural effect.

    ``load_hook(addr, kind, value, pc) -> value`` lets a caller corrupt loaded
    data and account bus timing; ``store_hook(addr, kind, value, pc)`` mirrors
    it for stores.  Raises :class:`CoreTrap` on faults; the caller latches the
    exception.
    """
    mn = instr.mn
    pc = state.pc
    out = ExecResult()

    def reg(i: int) -> int:
        # reading the program counter mid-instruction sees pc + 4
        return _u32(pc + 4) if i == 15 else state.r[i]

    def set_nz(value: int) -> None:
        state.n = 1 if value & 0x80000000 else 0
        state.z = 1 if value == 0 else 0

    def write_rd(i: int, value: int) -> None:
        if i == 15:
            state.pc = value & ~1
            out.branched = True
        else:
            state.r[i] = _u32(value)

    def load_word(addr: int, dest: int) -> None:
        if addr & 3:
            raise CoreTrap(EXC_USAGE_FAULT, UF_UNALIGNED)
        kind = mem.kind_at(addr)
        value = mem.read_u32(addr)  # traps on unmapped
        if load_hook is not None:
            value = load_hook(addr, kind, value, pc)
        out.data_ops.append((kind, addr, True, value))
        write_rd(dest, value)

    def store_word(addr: int, value: int) -> None:
        if addr & 3:
            raise CoreTrap(EXC_USAGE_FAULT, UF_UNALIGNED)
        kind = mem.kind_at(addr)
        mem.write_u32(addr, value)  # traps on unmapped or flash
        if store_hook is not None:
            store_hook(addr, kind, value, pc)
        out.data_ops.append((kind, addr, False, value))

    if mn is Mnemonic.NOP:
        pass
    elif mn is Mnemonic.UNDEF:
        raise CoreTrap(EXC_USAGE_FAULT,
                       UF_NOCP if instr.undef == isa.UNDEF_NOCP else UF_UNDEFINED)
    elif mn is Mnemonic.MOV_IMM:
        state.r[instr.rd] = instr.imm
        set_nz(instr.imm)
    elif mn is Mnemonic.MOV_REG:
        write_rd(instr.rd, reg(instr.rm))
    elif mn is Mnemonic.LSL_IMM:
        value = reg(instr.rm)
        if instr.shift:
            state.c = (value >> (32 - instr.shift)) & 1
            value = _u32(value << instr.shift)
        state.r[instr.rd] = value
        set_nz(value)
    elif mn in (Mnemonic.ADD_IMM, Mnemonic.ADD_REG):
        y = instr.imm if mn is Mnemonic.ADD_IMM else reg(instr.rm)
        result, carry, overflow = _add_with_carry(reg(instr.rn), y, 0)
        if instr.setflags:
            set_nz(result)
            state.c, state.v = carry, overflow
        write_rd(instr.rd, result)
    elif mn in (Mnemonic.SUB_IMM, Mnemonic.SUB_REG):
        y = instr.imm if mn is Mnemonic.SUB_IMM else reg(instr.rm)
        result, carry, overflow = _add_with_carry(reg(instr.rn), _u32(~y), 1)
        if instr.setflags:
            set_nz(result)
            state.c, state.v = carry, overflow
        write_rd(instr.rd, result)
    elif mn in (Mnemonic.CMP_IMM, Mnemonic.CMP_REG):
        y = instr.imm if mn is Mnemonic.CMP_IMM else reg(instr.rm)
        result, carry, overflow = _add_with_carry(reg(instr.rn), _u32(~y), 1)
        set_nz(result)
        state.c, state.v = carry, overflow
    elif mn in (Mnemonic.AND, Mnemonic.ORR, Mnemonic.EOR):
        x, y = reg(instr.rn), reg(instr.rm)
        value = x & y if mn is Mnemonic.AND else x | y if mn is Mnemonic.ORR else x ^ y
        state.r[instr.rd] = value
        set_nz(value)
    elif mn is Mnemonic.LDR_LIT:
        load_word(((pc + 4) & ~3) + instr.imm, instr.rd)
    elif mn is Mnemonic.LDR_LIT_W:
        load_word(((pc + 4) & ~3) + instr.imm, instr.rd)
    elif mn is Mnemonic.LDR_IMM:
        load_word(_u32(reg(instr.rn) + instr.imm), instr.rd)
    elif mn is Mnemonic.LDR_REG:
        load_word(_u32(reg(instr.rn) + reg(instr.rm)), instr.rd)
    elif mn is Mnemonic.LDR_REG_W:
        load_word(_u32(reg(instr.rn) + (reg(instr.rm) << instr.shift)), instr.rd)
    elif mn is Mnemonic.STR_IMM:
        store_word(_u32(reg(instr.rn) + instr.imm), reg(instr.rd))
    elif mn is Mnemonic.STR_REG:
        store_word(_u32(reg(instr.rn) + reg(instr.rm)), reg(instr.rd))
    elif mn is Mnemonic.PUSH:
        addr = _u32(state.sp - 4 * len(instr.reglist))
        state.r[13] = addr
        for r in instr.reglist:
            store_word(addr, reg(r))
            addr += 4
    elif mn is Mnemonic.POP:
        addr = state.sp
        for r in instr.reglist:
            if addr & 3:
                raise CoreTrap(EXC_USAGE_FAULT, UF_UNALIGNED)
            kind = mem.kind_at(addr)
            value = mem.read_u32(addr)
            if load_hook is not None:
                value = load_hook(addr, kind, value, pc)
            out.data_ops.append((kind, addr, True, value))
            write_rd(r, value)
            addr += 4
        state.r[13] = addr
    elif mn is Mnemonic.B:
        state.pc = _u32(pc + 4 + instr.imm)
        out.branched = True
    elif mn is Mnemonic.B_COND:
        if _condition_passed(state, instr.cond):
            state.pc = _u32(pc + 4 + instr.imm)
            out.branched = True
    elif mn is Mnemonic.BL:
        state.r[14] = _u32(pc + 4) | 1
        state.pc = _u32(pc + 4 + instr.imm)
        out.branched = True
    else:
        raise AssertionError(mn)

    if not out.branched:
        state.pc = _u32(pc + instr.width // 8)
    return out


def step(state: ArchState, instr: isa.Instr, mem: MemoryImage) -> ArchState:
    """Standalone single step on a copy of the state (unit cycle cost).

    Full runs go through :func:`run_to_watchpoint`, which delegates cycle
    accounting to the bus timeline; this helper is for direct semantic checks.
    """
    if state.exception_number != EXC_NONE:
        raise ValueError("core is parked in an exception handler")
    s = state.copy()
    try:
        execute(s, instr, mem)
    except CoreTrap as trap:
        _latch_exception(s, trap)
    s.cycles += 1
    return s


def _latch_exception(state: ArchState, trap: CoreTrap) -> None:
    state.exception_number = trap.number
    state.exception_detail = trap.detail
    state.pc = HANDLER_LOOP_PC


@dataclass
class TraceEntry:
    pc: int
    width: int
    raw: int
    new_segment: bool
    data_ops: list  # (kind, addr, is_load, value)


@dataclass
class FaultPlan:
    """Transient corruptions applied to one re-run.

    ``instr`` maps (segment, halfword address) to the corrupted halfword the
    fetch delivers; ``data`` maps the dynamic load ordinal to the corrupted
    word the data bus delivers.
    """

    instr: dict = field(default_factory=dict)
    data: dict = field(default_factory=dict)

    def __bool__(self) -> bool:
        return bool(self.instr) or bool(self.data)


@dataclass
class RunResult:
    state: ArchState
    reason: str
    trace: list
    events: list
    executed: int


def run_to_watchpoint(state: ArchState, image: MemoryImage, watchpoint: int,
                      cycle_budget: int, clock: bus.ClockConfig | None = None,
                      bus_cfg: bus.BusTimingConfig | None = None,
                      fault_plan: FaultPlan | None = None,
                      keep_trace: bool = True,
                      emit_events: bool = True,
                      stop_segment: int | None = None) -> RunResult:
    """Run until pc reaches the watchpoint or the cycle budget is spent.

    The state/memory passed in are mutated.  Exceptions and runaway jumps do
    not raise; they surface as a budget-exceeded result whose state carries
    the exception number (or a wild pc).  ``stop_segment`` restricts the
    watchpoint match to one dynamic fetch segment, which pins a particular
    loop iteration.
    """
    timeline = bus.Timeline(image.read_word_or_none, image.kind_at, clock,
                            bus_cfg, emit_events=emit_events)
    decode16 = isa.decode16_table()
    trace: list[TraceEntry] = []
    plan = fault_plan or FaultPlan()
    executed = 0
    new_segment = True
    segment = -1
    data_idx = 0

    def load_hook(addr, kind, value, ipc):
        nonlocal data_idx
        faulted = plan.data.get(data_idx, value) if plan.data else value
        data_idx += 1
        timeline.load(addr, kind, value, ipc)
        return faulted

    def store_hook(addr, kind, value, ipc):
        nonlocal data_idx
        data_idx += 1
        timeline.store(addr, kind, value, ipc)

    def fetch_halfword(addr: int) -> int:
        if addr & 1:
            raise CoreTrap(EXC_BUS_FAULT)
        raw = image.read_u16(addr)
        if plan.instr:
            return plan.instr.get((segment, addr), raw)
        return raw

    while True:
        if state.exception_number == EXC_NONE and state.pc == watchpoint and \
                (stop_segment is None or
                 (segment == stop_segment if not new_segment else segment + 1 == stop_segment)):
            state.cycles = timeline.cycle
            timeline.finish()
            return RunResult(state, WATCHPOINT_HIT, trace, timeline.events, executed)
        if state.cycles >= cycle_budget:
            timeline.finish()
            return RunResult(state, BUDGET_EXCEEDED, trace, timeline.events, executed)
        if state.exception_number != EXC_NONE:
            timeline.spin()
            state.cycles = timeline.cycle
            continue

        pc = state.pc
        starts_segment = new_segment
        try:
            if starts_segment:
                timeline.begin_segment(pc)
                segment += 1
            first = fetch_halfword(pc)
            if isa.is_32bit_prefix(first):
                instr = isa.decode(first, fetch_halfword(pc + 2))
            else:
                instr = decode16[first]
            timeline.instruction(pc, instr.width)
            result = execute(state, instr, image,
                             load_hook=load_hook, store_hook=store_hook)
            new_segment = result.branched
            if keep_trace:
                trace.append(TraceEntry(pc, instr.width, instr.raw,
                                        starts_segment, result.data_ops))
        except CoreTrap as trap:
            _latch_exception(state, trap)
            new_segment = True
        state.cycles = timeline.cycle
        executed += 1


# -- state dumps --------------------------------------------------------------
#
# Field order is part of the format: r0..r15, N, Z, C, V, exceptionNumber,
# cycles, then watched memory words in ascending address order.

def state_dump(state: ArchState, mem: MemoryImage | None = None,
               watched: tuple[int, ...] = ()) -> dict:
    d = {f"r{i}": state.r[i] for i in range(16)}
    d["N"] = state.n
    d["Z"] = state.z
    d["C"] = state.c
    d["V"] = state.v
    d["exceptionNumber"] = state.exception_number
    d["cycles"] = state.cycles
    for addr in sorted(watched):
        try:
            value = mem.read_u32(addr) if mem is not None else 0
        except CoreTrap:
            value = 0
        d[f"mem_0x{addr:08x}"] = value
    return d


def _format_value(key: str, value: int) -> str:
    if key.startswith(("r", "mem_")):
        return f"0x{value:08x}"
    return str(value)


def dump_to_json(dump: dict) -> str:
    return json.dumps({k: _format_value(k, v) for k, v in dump.items()}, indent=2)


def dump_to_csv(dump: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(dump.keys())
    w.writerow(_format_value(k, v) for k, v in dump.items())
    return buf.getvalue()


def load_dump(text: str) -> dict:
    """Read a dump back from its JSON or CSV form."""
    text = text.strip()
    if text.startswith("{"):
        raw = json.loads(text)
    else:
        rows = list(csv.reader(io.StringIO(text)))
        if len(rows) < 2:
            raise ValueError("csv dump needs a header row and a value row")
        raw = dict(zip(rows[0], rows[1]))
    return {k: int(str(v), 0) for k, v in raw.items()}


def state_from_dump(dump: dict) -> ArchState:
    s = ArchState()
    for i in range(16):
        s.r[i] = dump[f"r{i}"]
    s.n = dump["N"]
    s.z = dump["Z"]
    s.c = dump["C"]
    s.v = dump["V"]
    s.exception_number = dump["exceptionNumber"]
    s.cycles = dump["cycles"]
    return s


def watched_from_dump(dump: dict) -> dict[int, int]:
    return {int(k[4:], 16): v for k, v in dump.items() if k.startswith("mem_")}
