"""Built-in test programs and the canonical initial register state.

Each program is a tiny flash image with an ``entry`` point and a ``watch``
label where a run stops and the state is harvested.  The initial register
values mirror the fixed experiment setup: r0 points at a result word in RAM,
r1-r4 count 1..4, r7 holds 0x100, r8-r12 are zero.  r5/r6 carry distinct
junk so that no low register aliases zero or a useful address.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import asm, bus, core

FLASH_SIZE = 0x4000
SRAM_SIZE = 0x1000

R0_RESULT_ADDR = core.SRAM_BASE + 0x100
SRAM_DATA_ADDR = R0_RESULT_ADDR + 64     # used by the SRAM-sourced load
STACK_TOP = core.SRAM_BASE + SRAM_SIZE

INITIAL_REGS = {
    0: R0_RESULT_ADDR,
    1: 1, 2: 2, 3: 3, 4: 4,
    5: 0x55AA55AA, 6: 0x66CC66CC,
    7: 0x100,
    8: 0, 9: 0, 10: 0, 11: 0, 12: 0,
}


@dataclass(frozen=True)
class Program:
    name: str
    assembly: asm.Assembly
    entry: int
    watchpoint: int
    sram_preload: tuple[tuple[int, int], ...] = ()

    def build_image(self) -> core.MemoryImage:
        flash = core.Region(core.FLASH_BASE, FLASH_SIZE, bus.FLASH,
                            bytearray(self.assembly.data))
        sram = core.Region(core.SRAM_BASE, SRAM_SIZE, bus.SRAM)
        image = core.MemoryImage([flash, sram])
        for addr, value in self.sram_preload:
            image.poke_u32(addr, value)
        return image

    def initial_state(self) -> core.ArchState:
        state = core.ArchState()
        for reg, value in INITIAL_REGS.items():
            state.r[reg] = value
        state.r[13] = STACK_TOP
        state.r[14] = core.HANDLER_LOOP_PC
        state.pc = self.entry
        return state


NOP_SLED_SOURCE = """\
entry:
    nop
    nop
    nop
    nop
    nop
    nop
    nop
    nop
watch:
"""

# Loop summing eight powers of two; the fault-free result at [r0] is 0xff.
# The array pointer is built with ALU ops so the only data-bus transfers
# from flash are the element loads themselves.
ARRAY_SUM_SOURCE = """\
entry:
    movs r1, #0               ; i = 0
    movs r2, #1
    lsls r2, r2, #27          ; flash base
    adds r2, #64              ; &array
addition_loop:
    ldr  r4, [r2, r1, lsl #2] ; r4 = array[i]
    ldr  r3, [r0, #0]         ; r3 = result
    add  r3, r4               ; r3 = r3 + r4
    str  r3, [r0, #0]         ; result = r3
    add  r1, r1, #1           ; i = i + 1
    cmp  r1, #8
    blt  addition_loop
watch:
    nop
.align 64
array:
    .word 1, 2, 4, 8, 16, 32, 64, 128
"""

# Single narrow literal load; the literal sits 44 bytes past the aligned pc.
LDR_R4_SOURCE = """\
entry:
    ldr r4, [pc, #44]
    nop
    nop
    nop
watch:
    nop
""" + "    nop\n" * 19 + """\
    .word 0x12345678
"""

# Same experiment with a high destination register: assembles wide.
LDR_R8_SOURCE = """\
entry:
    ldr r8, [pc, #44]
    nop
watch:
    nop
""" + "    nop\n" * 20 + """\
    .word 0x12345678
"""

# Load whose source word lives in SRAM instead of flash.
LDR_SRAM_SOURCE = """\
entry:
    nop
    ldr r4, [r0, #64]
    nop
    nop
watch:
    nop
"""


def _build(name: str, source: str, sram_preload=()) -> Program:
    assembly = asm.assemble(source, base=core.FLASH_BASE)
    return Program(
        name=name,
        assembly=assembly,
        entry=assembly.symbols["entry"],
        watchpoint=assembly.symbols["watch"],
        sram_preload=tuple(sram_preload),
    )


def load(name_or_path: str) -> Program:
    """Resolve a built-in program name or assemble a custom .s file."""
    builders = {
        "nop-sled": lambda: _build("nop-sled", NOP_SLED_SOURCE),
        "array-sum": lambda: _build("array-sum", ARRAY_SUM_SOURCE),
        "ldr-r4": lambda: _build("ldr-r4", LDR_R4_SOURCE),
        "ldr-r8": lambda: _build("ldr-r8", LDR_R8_SOURCE),
        "ldr-sram": lambda: _build(
            "ldr-sram", LDR_SRAM_SOURCE,
            sram_preload=[(SRAM_DATA_ADDR, 0x12345678)]),
    }
    if name_or_path in builders:
        return builders[name_or_path]()
    path = Path(name_or_path)
    if not path.is_file():
        raise FileNotFoundError(f"no built-in program or file named {name_or_path!r}")
    source = path.read_text()
    assembly = asm.assemble(source, base=core.FLASH_BASE)
    if "entry" not in assembly.symbols or "watch" not in assembly.symbols:
        raise asm.AsmError("custom programs must define 'entry' and 'watch' labels")
    return Program(path.stem, assembly, assembly.symbols["entry"],
                   assembly.symbols["watch"])


BUILTIN_NAMES = ("nop-sled", "array-sum", "ldr-r4", "ldr-r8", "ldr-sram")
