"""AHB-Lite-style transfer timing.

Models a three-stage fetch/decode/execute pipeline over split instruction and
data buses.  Every transfer takes one address cycle plus one data cycle (plus
configurable wait states); flash sources drive their value at the *end* of the
final data cycle, SRAM at its beginning.  Those latch instants are what a
glitch pulse can race.

Conventions (the timing figures this mirrors place decode/execute sub-cycle
detail only pictorially, so the integer rules here are our own):

* cycle ``c`` spans ``[c*T, (c+1)*T)`` nanoseconds, T = clock period;
* instruction fetches are 32-bit words, pipelined one address phase per
  completed transfer, at most ``prefetch_depth`` words ahead of execution;
* an instruction executes one cycle after its last halfword is decodable;
* a load extends its decode with one data-bus transfer; a store occupies the
  data bus in the cycles following its execute;
* a taken branch restarts the fetch stream at the target word.
"""

from __future__ import annotations

from dataclasses import dataclass

INSTRUCTION_BUS = "instr"
DATA_BUS = "data"

FLASH = "flash"
SRAM = "sram"


@dataclass(frozen=True)
class ClockConfig:
    frequency_hz: float = 56e6

    @property
    def period_ns(self) -> float:
        return 1e9 / self.frequency_hz


@dataclass(frozen=True)
class BusTimingConfig:
    """Timing knobs.

    Defaults are calibrated so the array-sum benchmark lands near its
    measured 3.5 us wall time at 56 MHz; flash stalls dominate on such parts
    once the prefetch buffer is out of the picture.
    """

    flash_wait_states: int = 3
    sram_wait_states: int = 0
    prefetch_depth: int = 2
    branch_flush_extra: int = 2  # dead cycles between resolve and refetch

    def wait_states(self, kind: str) -> int:
        return self.flash_wait_states if kind == FLASH else self.sram_wait_states


@dataclass
class TransferEvent:
    bus: str
    addr: int
    word: int
    latch_time_ns: float
    source_kind: str
    consumer_pc: int     # pc of the instruction this transfer serves
    addr_cycle: int
    data_cycle_start: int
    is_load: bool = True
    # identity of the dynamic transfer, used to map a glitched event back
    # onto a re-run: (segment, word address) for fetches, ordinal for data
    segment: int = 0
    dyn_index: int = 0


def latch_vulnerable(event: TransferEvent, glitch_times_ns, setup_window_ns: float) -> bool:
    """True iff a glitch edge lands inside the transfer's setup window.

    Only flash transfers latch late enough to race; SRAM values are stable
    well before the clock edge, so they never qualify.
    """
    if setup_window_ns <= 0:
        raise ValueError("setup window must be positive")
    if event.source_kind != FLASH:
        return False
    t0 = event.latch_time_ns - setup_window_ns
    return any(t0 < t <= event.latch_time_ns for t in glitch_times_ns)


class Timeline:
    """Cycle bookkeeping for one program execution.

    The core drives this object in execution order; transfer events fall out
    as a side effect.  Replaying the same call sequence reproduces the same
    schedule, which keeps golden scheduling and faulted re-runs consistent.
    """

    def __init__(self, read_word, region_kind, clock: ClockConfig | None = None,
                 cfg: BusTimingConfig | None = None, emit_events: bool = True):
        self.read_word = read_word        # addr -> 32-bit word, or None
        self.region_kind = region_kind    # addr -> FLASH/SRAM, or None
        self.clock = clock or ClockConfig()
        self.cfg = cfg or BusTimingConfig()
        self.emit_events = emit_events
        self.events: list[TransferEvent] = []
        self.exec_cycle = -1
        self.pending_cost = 1
        self.segment = -1
        self._seg_word_base = 0
        self._next_word = 0
        self._bus_free = 0       # earliest cycle the i-bus can start an address phase
        self._word_ready: dict[int, int] = {}     # word index -> decodable cycle
        self._word_consumed: dict[int, int] = {}  # word index -> execute cycle
        self._word_events: dict[int, TransferEvent] = {}
        self._data_count = 0
        self._restart_cycle = 0

    @property
    def cycle(self) -> int:
        return max(self.exec_cycle, 0)

    # -- instruction side ---------------------------------------------------

    def begin_segment(self, pc: int) -> None:
        self._finish_prefetch()
        first = self.segment < 0
        self.segment += 1
        self._seg_word_base = pc & ~3
        self._next_word = 0
        self._word_ready = {}
        self._word_consumed = {}
        self._word_events = {}
        if first:
            self._restart_cycle = 0
        else:
            self._restart_cycle = self.exec_cycle + 1 + self.cfg.branch_flush_extra
        self._bus_free = self._restart_cycle

    def _issue_word(self, k: int) -> None:
        addr = self._seg_word_base + 4 * k
        kind = self.region_kind(addr)
        ws = self.cfg.wait_states(kind) if kind else 0
        gate = self._bus_free
        blocker = k - 1 - self.cfg.prefetch_depth
        if blocker in self._word_consumed:
            gate = max(gate, self._word_consumed[blocker] + 1)
        a = gate
        self._bus_free = a + 1 + ws  # next address phase overlaps the data tail
        if kind == FLASH:
            ready = a + 2 + ws
            latch = ready * self.clock.period_ns
        else:
            ready = a + 1
            latch = (a + 1) * self.clock.period_ns
        self._word_ready[k] = ready
        self._next_word = k + 1
        if self.emit_events and kind is not None:
            word = self.read_word(addr)
            if word is not None:
                ev = TransferEvent(
                    bus=INSTRUCTION_BUS, addr=addr, word=word,
                    latch_time_ns=latch, source_kind=kind, consumer_pc=-1,
                    addr_cycle=a, data_cycle_start=a + 1,
                    segment=self.segment, dyn_index=len(self.events))
                self._word_events[k] = ev
                self.events.append(ev)

    def _ready_cycle(self, k: int) -> int:
        while self._next_word <= k:
            self._issue_word(self._next_word)
        return self._word_ready[k]

    def instruction(self, pc: int, width: int) -> int:
        """Account one instruction's fetch+decode; returns its execute cycle."""
        k0 = (pc - self._seg_word_base) >> 2
        k1 = (pc + (width // 8) - 2 - self._seg_word_base) >> 2
        avail = max(self._ready_cycle(k) for k in range(k0, k1 + 1))
        e = max(self.exec_cycle + self.pending_cost, avail + 1)
        self.exec_cycle = e
        self.pending_cost = 1
        for k in range(k0, k1 + 1):
            self._word_consumed[k] = e
            ev = self._word_events.get(k)
            if ev is not None and ev.consumer_pc < 0:
                ev.consumer_pc = pc
        return e

    # -- data side ----------------------------------------------------------

    def load(self, addr: int, kind: str, value: int, pc: int) -> None:
        """Extend the current instruction's decode with a data-bus read."""
        ws = self.cfg.wait_states(kind)
        self.exec_cycle += 1 + ws
        if self.emit_events:
            if kind == FLASH:
                latch = self.exec_cycle * self.clock.period_ns
            else:
                latch = (self.exec_cycle - 1 - ws) * self.clock.period_ns
            self.events.append(TransferEvent(
                bus=DATA_BUS, addr=addr, word=value, latch_time_ns=latch,
                source_kind=kind, consumer_pc=pc,
                addr_cycle=self.exec_cycle - 2 - ws,
                data_cycle_start=self.exec_cycle - 1 - ws,
                segment=self.segment, dyn_index=self._data_count))
        self._data_count += 1

    def store(self, addr: int, kind: str, value: int, pc: int) -> None:
        ws = self.cfg.wait_states(kind)
        if self.emit_events:
            self.events.append(TransferEvent(
                bus=DATA_BUS, addr=addr, word=value,
                latch_time_ns=(self.exec_cycle + 2) * self.clock.period_ns,
                source_kind=kind, consumer_pc=pc,
                addr_cycle=self.exec_cycle + 1,
                data_cycle_start=self.exec_cycle + 2,
                is_load=False,
                segment=self.segment, dyn_index=self._data_count))
        self._data_count += 1
        self.pending_cost = 2 + ws

    # -- control ------------------------------------------------------------

    def spin(self) -> None:
        """Burn one cycle inside an exception handler loop."""
        self.exec_cycle += 1

    def _finish_prefetch(self) -> None:
        """Issue the overrun words the prefetcher started before a flush."""
        if self.segment < 0 or not self._word_consumed:
            return
        limit = max(self._word_consumed) + self.cfg.prefetch_depth
        while self._next_word <= limit:
            addr = self._seg_word_base + 4 * self._next_word
            if self.region_kind(addr) is None:
                break
            self._issue_word(self._next_word)

    def finish(self) -> None:
        self._finish_prefetch()
        for e in self.events:
            if e.consumer_pc < 0:  # prefetched but never decoded
                e.consumer_pc = e.addr
        self.events.sort(key=lambda e: (e.latch_time_ns, e.bus, e.dyn_index))


def schedule_transfers(image, trace, clock: ClockConfig | None = None,
                       cfg: BusTimingConfig | None = None) -> list[TransferEvent]:
    """Rebuild the bus transfer schedule for a recorded execution trace.

    ``trace`` comes from a fault-free :func:`emglitch.core.run_to_watchpoint`;
    the result is ordered by latch time.
    """
    t = Timeline(image.read_word_or_none, image.kind_at, clock, cfg)
    for entry in trace:
        if entry.new_segment:
            t.begin_segment(entry.pc)
        t.instruction(entry.pc, entry.width)
        for kind, addr, is_load, value in entry.data_ops:
            if is_load:
                t.load(addr, kind, value, entry.pc)
            else:
                t.store(addr, kind, value, entry.pc)
    t.finish()
    return t.events


def chronogram(events) -> str:
    """Text dump of a schedule for eyeballing against bus timing diagrams."""
    lines = ["bus    addr        word        latch_ns   cycleA  kind   consumer"]
    for e in events:
        lines.append(
            f"{e.bus:<6} 0x{e.addr:08x}  0x{e.word:08x}  "
            f"{e.latch_time_ns:9.2f}  {e.addr_cycle:5d}   {e.source_kind:<6}"
            f" 0x{e.consumer_pc:08x}")
    return "\n".join(lines)
