"""Bus schedule: event shapes, latch rules, timing envelope."""

import pytest

from emglitch import bus, core, programs

from conftest import golden_run


def instr_events(events):
    return [e for e in events if e.bus == bus.INSTRUCTION_BUS]


def data_events(events):
    return [e for e in events if e.bus == bus.DATA_BUS]


def test_clock_period():
    clk = bus.ClockConfig()
    assert clk.frequency_hz == 56e6
    assert clk.period_ns == pytest.approx(17.857142857142858)


def test_nop_sled_fetch_pairs(nop_sled):
    result, _ = golden_run(nop_sled)
    pairs = [e for e in instr_events(result.events) if e.word == 0xBF00BF00]
    assert len(pairs) == 4
    assert [e.addr for e in pairs] == [nop_sled.entry + 4 * k for k in range(4)]


def test_single_load_has_one_data_event(ldr_r4_context):
    events = data_events(ldr_r4_context.golden.events)
    assert len(events) == 1
    (e,) = events
    assert e.source_kind == bus.FLASH
    assert e.word == 0x12345678
    assert e.addr == ((ldr_r4_context.program.entry + 4) & ~3) + 44


def test_empty_trace_empty_schedule(nop_sled):
    image = nop_sled.build_image()
    assert bus.schedule_transfers(image, []) == []


def test_schedule_replay_matches_live(array_sum):
    result, image = golden_run(array_sum)
    replay = bus.schedule_transfers(image, result.trace)
    live = [(e.bus, e.addr, e.word, e.latch_time_ns, e.source_kind, e.consumer_pc)
            for e in result.events]
    again = [(e.bus, e.addr, e.word, e.latch_time_ns, e.source_kind, e.consumer_pc)
             for e in replay]
    assert live == again


def test_two_cycle_floor(array_sum):
    result, _ = golden_run(array_sum)
    for e in result.events:
        assert e.data_cycle_start - e.addr_cycle >= 1


def test_latch_ordering(array_sum):
    result, _ = golden_run(array_sum)
    latches = [e.latch_time_ns for e in result.events]
    assert latches == sorted(latches)


def test_fetch_pairing(array_sum):
    """Every executed halfword appears in exactly one fetch event's word."""
    result, image = golden_run(array_sum)
    by_key = {}
    for e in instr_events(result.events):
        by_key[(e.segment, e.addr)] = e
    seg = -1
    for entry in result.trace:
        if entry.new_segment:
            seg += 1
        for off in range(0, entry.width // 8, 2):
            addr = entry.pc + off
            ev = by_key[(seg, addr & ~3)]
            lane = 16 if addr & 2 else 0
            halfword = (ev.word >> lane) & 0xFFFF
            expect = entry.raw if entry.width == 16 else (
                entry.raw >> 16 if off == 0 else entry.raw & 0xFFFF)
            assert halfword == expect


def test_flash_latches_at_end_sram_at_start():
    period = bus.ClockConfig().period_ns
    cfg = bus.BusTimingConfig()
    # flash instruction word: latch strictly after its data phase starts
    prog = programs.load("nop-sled")
    result, _ = golden_run(prog)
    for e in instr_events(result.events):
        assert e.source_kind == bus.FLASH
        assert e.latch_time_ns == pytest.approx(
            (e.data_cycle_start + cfg.flash_wait_states + 1) * period)
    # sram data read: latch at the beginning of its data phase
    ctx_events, _ = golden_run(programs.load("ldr-sram"))
    sram_loads = [e for e in data_events(ctx_events.events)
                  if e.source_kind == bus.SRAM and e.is_load]
    assert sram_loads
    for e in sram_loads:
        assert e.latch_time_ns == pytest.approx(e.data_cycle_start * period)


def test_latch_vulnerable_windows():
    ev = bus.TransferEvent(bus=bus.DATA_BUS, addr=0, word=0, latch_time_ns=100.0,
                           source_kind=bus.FLASH, consumer_pc=0,
                           addr_cycle=0, data_cycle_start=1)
    assert bus.latch_vulnerable(ev, [98.0], 5.0)
    assert bus.latch_vulnerable(ev, [100.0], 5.0)       # boundary included
    assert not bus.latch_vulnerable(ev, [95.0], 5.0)    # open lower bound
    assert not bus.latch_vulnerable(ev, [150.0], 5.0)
    sram = bus.TransferEvent(bus=bus.DATA_BUS, addr=0, word=0, latch_time_ns=100.0,
                             source_kind=bus.SRAM, consumer_pc=0,
                             addr_cycle=0, data_cycle_start=1)
    assert not bus.latch_vulnerable(sram, [99.0], 5.0)
    with pytest.raises(ValueError):
        bus.latch_vulnerable(ev, [99.0], 0.0)


def test_array_sum_cycle_envelope(array_sum):
    """About 3.5 us at 56 MHz, with a wide allowance for the simple pipeline."""
    result, _ = golden_run(array_sum)
    expected = 3.5e-6 * 56e6   # 196
    assert expected * 0.75 <= result.state.cycles <= expected * 1.25


def test_chronogram_dump(array_sum):
    result, _ = golden_run(array_sum)
    text = bus.chronogram(result.events)
    assert "instr" in text and "data" in text
    assert text.count("\n") == len(result.events)
