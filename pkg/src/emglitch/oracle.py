"""Instruction-replacement oracle.

Decides whether an observed faulty output can be explained by replacing a
single instruction, by exhaustively simulating replacements and comparing the
harvested state at the watchpoint.  The comparison set is (r0-r12, xPSR);
watched-memory, pc and cycle-count comparison are optional extensions.

The 16-bit space is simulated exhaustively (all 65536 halfwords, including
the ones that open a 32-bit encoding and swallow the following halfword).
The 32-bit space is searched with equivalence-class pruning: encodings whose
architectural effect provably coincides (same trap flavor, same loaded value
into the same register, same branch-and-link target class) are simulated once
and counted in bulk.  ``searched32`` reports the number of encodings covered.

Replacement scenarios: 16->16 and 32->32 overwrite in place; 16->32 swallows
the halfword after the target; 32->16 leaves the orphaned second halfword in
the image, where it decodes as an instruction of its own.  Joint replacement
of two instructions is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import bus, core, isa
from .isa import Mnemonic

MAX_MATERIALIZED = 65536

NO_FAULT = "no-fault"
EXCEPTION_FAULT = "exception"
PROGRAM_FLOW_FAULT = "program-flow"
DATA_FLOW_FAULT = "data-flow"
CRASH = "crash"

EXCEPTION_NAMES = {
    core.EXC_HARD_FAULT: "HardFault",
    core.EXC_MEM_MANAGE: "MemManageFault",
    core.EXC_BUS_FAULT: "BusFault",
    core.EXC_USAGE_FAULT: "UsageFault",
}


@dataclass(frozen=True)
class CompareSpec:
    """What enters the output-state comparison (r0-r12 and xPSR always do)."""

    memory: bool = False
    pc: bool = False
    cycles: bool = False


@dataclass
class Explanation:
    candidates: list = field(default_factory=list)   # Instr, ascending encoding
    searched16: int = 0
    searched32: int = 0
    total_matches: int = 0
    truncated: bool = False

    @property
    def empty(self) -> bool:
        return self.total_matches == 0


@dataclass(frozen=True)
class Outcome:
    kind: str
    exception: str = ""
    candidate_count: int = 0

    def __str__(self) -> str:
        if self.kind == EXCEPTION_FAULT:
            return f"{self.kind}({self.exception})"
        return self.kind


def signature(state: core.ArchState, watched_mem: dict | None = None,
              compare: CompareSpec = CompareSpec()) -> tuple:
    """Projection of a harvested state onto the comparison set."""
    parts = [tuple(state.r[0:13]), state.n, state.z, state.c, state.v,
             state.exception_number]
    if compare.memory:
        parts.append(tuple(sorted((watched_mem or {}).items())))
    if compare.pc:
        parts.append(state.pc)
    if compare.cycles:
        parts.append(state.cycles)
    return tuple(parts)


def _read_watched(image: core.MemoryImage, watched) -> dict:
    out = {}
    for addr in watched:
        try:
            out[addr] = image.read_u32(addr)
        except core.CoreTrap:
            out[addr] = 0
    return out


class ReplacementSearch:
    """Exhaustive replacement simulation against one target instruction.

    The candidate->signature table is computed once and reused across any
    number of observations on the same (program, target, pre-state) context,
    which is what campaign classification and planted-replacement testing
    need.
    """

    def __init__(self, program, target_addr: int, pre_state: core.ArchState,
                 watchpoint: int, cycle_budget: int,
                 compare: CompareSpec = CompareSpec(),
                 watched: tuple = (), clock=None, bus_cfg=None):
        self.program = program
        self.target_addr = target_addr
        self.pre_state = pre_state
        self.watchpoint = watchpoint
        self.cycle_budget = cycle_budget
        self.compare = compare
        self.watched = tuple(sorted(watched))
        self.clock = clock
        self.bus_cfg = bus_cfg
        self._base_image = program.build_image()
        self._target_width = self._decode_target().width
        self._table16: dict | None = None
        self._groups32: list | None = None

    def _decode_target(self) -> isa.Instr:
        first = self._base_image.read_u16(self.target_addr)
        second = (self._base_image.read_u16(self.target_addr + 2)
                  if isa.is_32bit_prefix(first) else 0)
        return isa.decode(first, second)

    # -- simulation ----------------------------------------------------------

    def _simulate(self, halfwords: tuple) -> tuple:
        image = self._base_image.copy()
        addr = self.target_addr
        for hw in halfwords:
            image.poke_u16(addr, hw)
            addr += 2
        state = self.pre_state.copy()
        result = core.run_to_watchpoint(state, image, self.watchpoint,
                                        self.cycle_budget, clock=self.clock,
                                        bus_cfg=self.bus_cfg,
                                        keep_trace=False, emit_events=False)
        watched_mem = _read_watched(image, self.watched) if self.compare.memory else None
        return signature(result.state, watched_mem, self.compare)

    def table16(self) -> dict:
        """Signature of every 16-bit replacement, keyed by raw halfword."""
        if self._table16 is None:
            self._table16 = {raw: self._simulate((raw,)) for raw in range(0x10000)}
        return self._table16

    # -- 32-bit equivalence classes -------------------------------------------

    def _flash_window(self) -> tuple[int, int]:
        for r in self._base_image.regions:
            if r.kind == bus.FLASH:
                return r.base, r.base + r.size
        return 0, 0

    def _load_outcome_class(self, addr: int) -> tuple:
        """What a word load from ``addr`` does, as an equivalence key."""
        addr &= 0xFFFFFFFF
        if addr & 3:
            return ("unaligned",)
        kind = self._base_image.kind_at(addr)
        if kind is None:
            return ("busfault",)
        return ("value", self._base_image.read_u32(addr), kind)

    def groups32(self) -> list:
        """(representative halfword pair, member count, lazy member iterator).

        Members of one group produce identical comparison signatures, so one
        simulation covers the whole group.
        """
        if self._groups32 is not None:
            return self._groups32
        groups: dict[tuple, list] = {}

        def add(key, pair, count):
            groups.setdefault(key, [pair, 0, []])
            groups[key][1] += count
            if len(groups[key][2]) < MAX_MATERIALIZED:
                groups[key][2].append((pair, count))

        pc_base = (self.target_addr + 4) & ~3
        ret_base = self.target_addr + 4

        # ldr.w literal: outcome depends on (rt, load class)
        for u in (0, 1):
            first = 0xF85F | (u << 7)
            for imm12 in range(4096):
                cls = self._load_outcome_class(pc_base + (imm12 if u else -imm12))
                for rt in range(16):
                    add(("ldrlitw", rt, cls), (first, (rt << 12) | imm12), 1)

        # ldr.w register-shift: address computable from the pre-state
        for rn in range(15):
            first = 0xF850 | rn
            rn_val = (self.pre_state.r[rn] if rn != 15 else ret_base)
            for rm in range(16):
                rm_val = (self.pre_state.r[rm] if rm != 15 else ret_base)
                for shift in range(4):
                    addr = (rn_val + (rm_val << shift)) & 0xFFFFFFFF
                    cls = self._load_outcome_class(addr)
                    for rt in range(16):
                        add(("ldrregw", rt, cls),
                            (first, (rt << 12) | (shift << 4) | rm), 1)

        # bl: in-flash targets behave per-target, everything else bus-faults
        flash_lo, flash_hi = self._flash_window()
        lo_imm = -(1 << 24)
        hi_imm = (1 << 24) - 2
        n_bl = 1 << 24
        in_window = 0
        for target in range(max(flash_lo, ret_base + lo_imm),
                            min(flash_hi, ret_base + hi_imm + 2), 2):
            imm = target - ret_base
            add(("bl", target), _encode_bl(imm), 1)
            in_window += 1
        add(("bl", "outside"), _encode_bl_outside(ret_base, flash_lo, flash_hi),
            n_bl - in_window)

        # everything else in the 32-bit space traps; two flavors
        n_prefix_space = 6144 * 65536
        n_ldrlitw = 2 * 4096 * 16
        n_ldrregw = 15 * 16 * 16 * 4
        n_nocp = 2048 * 65536
        n_undef = n_prefix_space - n_ldrlitw - n_ldrregw - n_bl - n_nocp
        add(("undef",), (0xE800, 0x0000), n_undef)
        add(("nocp",), (0xEE00, 0x0000), n_nocp)

        self._groups32 = [tuple(v) for v in groups.values()]
        return self._groups32

    # -- queries ---------------------------------------------------------------

    def observation_signature(self, observed: core.ArchState,
                              observed_watched: dict | None = None) -> tuple:
        return signature(observed, observed_watched, self.compare)

    def explain(self, observed: core.ArchState,
                observed_watched: dict | None = None,
                width_policy: str = "both") -> Explanation:
        want = self.observation_signature(observed, observed_watched)
        exp = Explanation()
        matches: list[tuple] = []
        if width_policy in ("16", "both"):
            for raw, sig in self.table16().items():
                if sig == want:
                    matches.append((raw, None))
                    exp.total_matches += 1
            exp.searched16 = 0x10000
        if width_policy in ("32", "both"):
            for rep, count, members in self.groups32():
                if self._sig32(rep) == want:
                    exp.total_matches += count
                    materialized = 0
                    for pair, n in members:
                        if len(matches) >= MAX_MATERIALIZED:
                            break
                        matches.append(pair)
                        materialized += n
                    if materialized < count:
                        exp.truncated = True
            exp.searched32 = 6144 * 65536
        matches.sort(key=lambda m: m[0] if m[1] is None else ((m[0] << 16) | m[1]))
        exp.candidates = [
            isa.decode(first, second if second is not None else
                       self._halfword_after(first))
            for first, second in matches]
        return exp

    def _sig32_cache(self):
        if not hasattr(self, "_sig32_memo"):
            self._sig32_memo: dict = {}
        return self._sig32_memo

    def _sig32(self, pair: tuple) -> tuple:
        memo = self._sig32_cache()
        if pair not in memo:
            memo[pair] = self._simulate(pair)
        return memo[pair]

    def _halfword_after(self, first: int) -> int:
        # a 16-bit replacement whose halfword opens a 32-bit encoding
        # consumes whatever followed the target in the image
        try:
            return self._base_image.read_u16(self.target_addr + 2)
        except core.CoreTrap:
            return 0

    def can_explain(self, candidate: isa.Instr, observed: core.ArchState,
                    observed_watched: dict | None = None) -> bool:
        halfwords = isa.encoded_halfwords(candidate)
        want = self.observation_signature(observed, observed_watched)
        return self._simulate(halfwords) == want


def _encode_bl(imm: int) -> tuple:
    instr = isa.Instr(Mnemonic.BL, imm=imm, width=32)
    first, second = isa.encode(instr)
    return first, second


def _encode_bl_outside(ret_base: int, flash_lo: int, flash_hi: int) -> tuple:
    for imm in range(-(1 << 24), (1 << 24), 2):
        target = ret_base + imm
        if not flash_lo <= target < flash_hi:
            return _encode_bl(imm)
    raise AssertionError("flash cannot cover the whole branch range")


def pre_state_at(program, target_addr: int, *, clock=None, bus_cfg=None,
                 cycle_budget: int = 100000) -> core.ArchState:
    """Golden state immediately before the first arrival at ``target_addr``."""
    image = program.build_image()
    state = program.initial_state()
    result = core.run_to_watchpoint(state, image, target_addr, cycle_budget,
                                    clock=clock, bus_cfg=bus_cfg,
                                    keep_trace=False, emit_events=False)
    if result.reason != core.WATCHPOINT_HIT:
        raise ValueError(f"golden run never reaches 0x{target_addr:08x}")
    return result.state


def can_explain(candidate: isa.Instr, pre_state: core.ArchState,
                observed: core.ArchState, target_addr: int, program,
                compare: CompareSpec = CompareSpec(), watched: tuple = (),
                observed_watched: dict | None = None,
                cycle_budget: int = 4096, clock=None, bus_cfg=None) -> bool:
    """One-candidate form of the search; substitutes, simulates and compares."""
    search = ReplacementSearch(program, target_addr, pre_state,
                               program.watchpoint, cycle_budget, compare,
                               watched, clock, bus_cfg)
    return search.can_explain(candidate, observed, observed_watched)


def explain_exhaustive(pre_state: core.ArchState, observed: core.ArchState,
                       target_addr: int, program, width_policy: str = "both",
                       compare: CompareSpec = CompareSpec(), watched: tuple = (),
                       observed_watched: dict | None = None,
                       cycle_budget: int = 4096, clock=None,
                       bus_cfg=None) -> Explanation:
    search = ReplacementSearch(program, target_addr, pre_state,
                               program.watchpoint, cycle_budget, compare,
                               watched, clock, bus_cfg)
    return search.explain(observed, observed_watched, width_policy)


def classify(golden: core.ArchState, observed: core.ArchState,
             explanation: Explanation | None, termination_reason: str,
             compare: CompareSpec = CompareSpec(),
             golden_watched: dict | None = None,
             observed_watched: dict | None = None) -> Outcome:
    """Bucket one observation into the five outcome kinds."""
    if signature(golden, golden_watched, compare) == \
            signature(observed, observed_watched, compare):
        return Outcome(NO_FAULT)
    if observed.exception_number != core.EXC_NONE:
        name = EXCEPTION_NAMES.get(observed.exception_number, "Fault")
        if observed.exception_number == core.EXC_USAGE_FAULT and observed.exception_detail:
            name = f"UsageFault:{observed.exception_detail}"
        return Outcome(EXCEPTION_FAULT, exception=name)
    if termination_reason == core.BUDGET_EXCEEDED:
        return Outcome(CRASH)
    if explanation is not None and not explanation.empty:
        return Outcome(PROGRAM_FLOW_FAULT, candidate_count=explanation.total_matches)
    return Outcome(DATA_FLOW_FAULT)
