"""Core semantics: stepping, flags, exceptions, runs, state dumps."""

import random

import pytest

from emglitch import asm, bus, core, isa, programs
from emglitch.isa import Instr, Mnemonic

from conftest import golden_run


def make_env(sram_words=None):
    flash = core.Region(core.FLASH_BASE, 0x1000, bus.FLASH)
    sram = core.Region(core.SRAM_BASE, 0x1000, bus.SRAM)
    image = core.MemoryImage([flash, sram])
    for addr, value in (sram_words or {}).items():
        image.poke_u32(addr, value)
    state = core.ArchState()
    state.pc = core.FLASH_BASE
    state.r[13] = core.SRAM_BASE + 0x1000
    return state, image


def test_step_add_register_non_flag_form():
    state, image = make_env()
    state.r[3] = 0x0F
    state.r[4] = 0x10
    state.n = state.z = state.c = state.v = 0
    out = core.step(state, isa.decode(0x4423), image)  # add r3, r4
    assert out.r[3] == 0x1F
    assert (out.n, out.z, out.c, out.v) == (0, 0, 0, 0)
    assert out.pc == state.pc + 2
    assert out.cycles == state.cycles + 1


def test_step_store_writes_memory():
    state, image = make_env()
    state.r[0] = core.SRAM_BASE
    out = core.step(state, isa.decode(0x6000), image)  # str r0, [r0, #0]
    assert image.read_u32(core.SRAM_BASE) == core.SRAM_BASE
    assert out.exception_number == core.EXC_NONE


def test_step_literal_load():
    state, image = make_env()
    target = ((core.FLASH_BASE + 4) & ~3) + 44
    image.poke_u32(target, 0x12345678)
    instr = isa.decode(isa.encode(Instr(Mnemonic.LDR_LIT, rd=4, imm=44))[0])
    out = core.step(state, instr, image)
    assert out.r[4] == 0x12345678


def test_step_undefined_raises_usage_fault():
    state, image = make_env()
    out = core.step(state, isa.decode(0xDE00), image)
    assert out.exception_number == core.EXC_USAGE_FAULT
    assert out.exception_detail == core.UF_UNDEFINED
    assert out.pc == core.HANDLER_LOOP_PC


def test_step_unmapped_access_is_bus_fault():
    state, image = make_env()
    state.r[0] = 0x40000000
    out = core.step(state, isa.decode(0x6800), image)  # ldr r0, [r0]
    assert out.exception_number == core.EXC_BUS_FAULT


def test_step_unaligned_access_is_usage_fault():
    state, image = make_env()
    state.r[0] = core.SRAM_BASE + 2
    out = core.step(state, isa.decode(0x6800), image)
    assert out.exception_number == core.EXC_USAGE_FAULT
    assert out.exception_detail == core.UF_UNALIGNED


def test_flash_store_is_bus_fault():
    state, image = make_env()
    state.r[0] = core.FLASH_BASE
    out = core.step(state, isa.decode(0x6000), image)
    assert out.exception_number == core.EXC_BUS_FAULT


def test_push_pop_roundtrip():
    source = """\
entry:
    movs r0, #5
    movs r1, #9
    push {r0, r1, lr}
    movs r0, #0
    movs r1, #0
    pop {r0, r1}
watch:
"""
    assembly = asm.assemble(source, base=core.FLASH_BASE)
    flash = core.Region(core.FLASH_BASE, 0x1000, bus.FLASH, bytearray(assembly.data))
    image = core.MemoryImage([flash, core.Region(core.SRAM_BASE, 0x1000, bus.SRAM)])
    state = core.ArchState()
    state.pc = assembly.symbols["entry"]
    state.r[13] = core.SRAM_BASE + 0x100
    state.r[14] = 0x1234
    result = core.run_to_watchpoint(state, image, assembly.symbols["watch"], 1000)
    assert result.reason == core.WATCHPOINT_HIT
    assert (state.r[0], state.r[1]) == (5, 9)
    assert state.r[13] == core.SRAM_BASE + 0x100 - 4  # lr still stacked


# -- differential flag check against an independent reference -------------------

M32 = 0xFFFFFFFF


def ref_flags_add(a, b):
    """Textbook NZCV for a+b, written independently of the core's adder."""
    total = a + b
    r = total & M32
    n = r >> 31
    z = int(r == 0)
    c = int(total >= 1 << 32)
    v = int((a >> 31) == (b >> 31) and (r >> 31) != (a >> 31))
    return r, n, z, c, v


def ref_flags_sub(a, b):
    r = (a - b) & M32
    n = r >> 31
    z = int(r == 0)
    c = int(a >= b)
    v = int((a >> 31) != (b >> 31) and (r >> 31) != (a >> 31))
    return r, n, z, c, v


def test_flag_semantics_differential():
    rng = random.Random(20260810)
    state, image = make_env()
    for _ in range(3000):
        a = rng.getrandbits(32)
        b = rng.getrandbits(32)
        imm = rng.randrange(256)
        state.r[1], state.r[2] = a, b
        state.n = state.z = state.c = state.v = 0

        out = core.step(state, Instr(Mnemonic.ADD_REG, rd=1, rn=1, rm=2, setflags=True), image)
        r, n, z, c, v = ref_flags_add(a, b)
        assert (out.r[1], out.n, out.z, out.c, out.v) == (r, n, z, c, v)

        out = core.step(state, Instr(Mnemonic.SUB_REG, rd=1, rn=1, rm=2, setflags=True), image)
        r, n, z, c, v = ref_flags_sub(a, b)
        assert (out.r[1], out.n, out.z, out.c, out.v) == (r, n, z, c, v)

        out = core.step(state, Instr(Mnemonic.CMP_IMM, rn=1, imm=imm, setflags=True), image)
        r, n, z, c, v = ref_flags_sub(a, imm)
        assert (out.r[1], out.n, out.z, out.c, out.v) == (a, n, z, c, v)

        out = core.step(state, Instr(Mnemonic.MOV_IMM, rd=1, imm=imm, setflags=True), image)
        assert (out.n, out.z) == (0, int(imm == 0))
        assert (out.c, out.v) == (0, 0)  # unchanged from the cleared state

        sh = rng.randrange(1, 32)
        out = core.step(state, Instr(Mnemonic.LSL_IMM, rd=1, rm=2, shift=sh, setflags=True), image)
        expect = (b << sh) & M32
        assert out.r[1] == expect
        assert out.c == (b >> (32 - sh)) & 1
        assert out.n == expect >> 31
        assert out.z == int(expect == 0)

        out = core.step(state, Instr(Mnemonic.EOR, rd=1, rn=1, rm=2, setflags=True), image)
        assert out.r[1] == a ^ b
        assert (out.n, out.z) == ((a ^ b) >> 31, int(a == b))


# -- full runs -------------------------------------------------------------------

def test_array_sum_golden(array_sum):
    result, image = golden_run(array_sum)
    assert result.reason == core.WATCHPOINT_HIT
    assert image.read_u32(programs.R0_RESULT_ADDR) == 0xFF


def test_undefined_first_instruction_parks_in_handler():
    flash = core.Region(core.FLASH_BASE, 0x100, bus.FLASH,
                        bytearray((0xDE00).to_bytes(2, "little")))
    image = core.MemoryImage([flash, core.Region(core.SRAM_BASE, 0x100, bus.SRAM)])
    state = core.ArchState()
    state.pc = core.FLASH_BASE
    result = core.run_to_watchpoint(state, image, core.FLASH_BASE + 0x40, 200)
    assert result.reason == core.BUDGET_EXCEEDED
    assert state.exception_number == core.EXC_USAGE_FAULT


def test_watchpoint_at_entry_executes_nothing(nop_sled):
    image = nop_sled.build_image()
    state = nop_sled.initial_state()
    result = core.run_to_watchpoint(state, image, nop_sled.entry, 1000)
    assert result.reason == core.WATCHPOINT_HIT
    assert result.executed == 0
    assert state.cycles == 0


def test_run_determinism(array_sum):
    r1, img1 = golden_run(array_sum)
    r2, img2 = golden_run(array_sum)
    assert r1.state.r == r2.state.r
    assert r1.state.cycles == r2.state.cycles
    assert [e.latch_time_ns for e in r1.events] == [e.latch_time_ns for e in r2.events]


def test_exception_latches_registers(nop_sled):
    image = nop_sled.build_image()
    state = nop_sled.initial_state()
    plan = core.FaultPlan(instr={(0, nop_sled.entry): 0xDE00})
    result = core.run_to_watchpoint(state, image, nop_sled.watchpoint, 100,
                                    fault_plan=plan)
    assert result.reason == core.BUDGET_EXCEEDED
    assert state.exception_number == core.EXC_USAGE_FAULT
    regs_at_trap = list(state.r[0:13])
    # spin further: registers r0-r12 must not move, cycles must
    more = core.run_to_watchpoint(state, image, nop_sled.watchpoint,
                                  state.cycles + 50, fault_plan=plan)
    assert more.state.r[0:13] == regs_at_trap
    assert more.state.cycles > 0


def test_cycle_monotonicity(array_sum):
    image = array_sum.build_image()
    state = array_sum.initial_state()
    seen = []
    budget = 10000
    # re-run stepwise through the public runner, checking the counter moves
    result = core.run_to_watchpoint(state, image, array_sum.watchpoint, budget)
    assert result.state.cycles > 0
    events = [e for e in result.events]
    latches = [e.latch_time_ns for e in events]
    assert latches == sorted(latches)


# -- dumps -----------------------------------------------------------------------

def test_dump_field_order_and_roundtrip(array_sum):
    result, image = golden_run(array_sum)
    watched = (programs.R0_RESULT_ADDR,)
    dump = core.state_dump(result.state, image, watched)
    keys = list(dump)
    assert keys[:16] == [f"r{i}" for i in range(16)]
    assert keys[16:22] == ["N", "Z", "C", "V", "exceptionNumber", "cycles"]
    assert keys[22:] == [f"mem_0x{programs.R0_RESULT_ADDR:08x}"]

    for text in (core.dump_to_json(dump), core.dump_to_csv(dump)):
        back = core.load_dump(text)
        assert back == dump
    state = core.state_from_dump(dump)
    assert state.r == result.state.r
    assert state.cycles == result.state.cycles
