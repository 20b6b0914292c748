"""Reproducible fault-injection campaigns.

A campaign sweeps pulse parameters (voltage, injection time, synthetic probe
position) over a built-in or user program, runs seeded trials at every point,
classifies each harvested state and aggregates histograms.  All randomness
derives from (campaign seed, point, trial index), so results are identical
for any worker count or execution order.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

from . import bus, core, glitch, oracle, programs
from .glitch import CaptureModel, CouplingField, GlitchSpec, TrialRecord

AXIS_ORDER = ("voltage", "time_ns", "x_mm", "y_mm")

DEFAULT_CARTOGRAPHY_SEED = 258
DEFAULT_METASTABILITY_SEED = 7


@dataclass
class ExperimentContext:
    program: programs.Program
    golden: core.RunResult
    golden_dump: dict
    watched: tuple
    clock: bus.ClockConfig | None
    bus_cfg: bus.BusTimingConfig | None
    cycle_budget: int


def prepare_context(program_id: str, watched: tuple | None = None,
                    clock=None, bus_cfg=None,
                    budget_factor: int = 4) -> ExperimentContext:
    """Golden run + transfer schedule for one program."""
    program = programs.load(program_id) if isinstance(program_id, str) else program_id
    if watched is None:
        watched = (programs.R0_RESULT_ADDR,)
    image = program.build_image()
    state = program.initial_state()
    golden = core.run_to_watchpoint(state, image, program.watchpoint, 100000,
                                    clock=clock, bus_cfg=bus_cfg)
    if golden.reason != core.WATCHPOINT_HIT:
        raise ValueError(f"golden run of {program.name} never reaches its watchpoint")
    golden_dump = core.state_dump(golden.state, image, watched)
    budget = max(budget_factor * golden.state.cycles, 64)
    return ExperimentContext(program, golden, golden_dump, tuple(watched),
                             clock, bus_cfg, budget)


def data_latch_events(context: ExperimentContext, source_kind: str = bus.FLASH):
    return [e for e in context.golden.events
            if e.bus == bus.DATA_BUS and e.is_load and e.source_kind == source_kind]


def first_data_latch_ns(context: ExperimentContext, source_kind: str = bus.FLASH) -> float:
    events = data_latch_events(context, source_kind)
    if not events:
        raise ValueError("program performs no data load from " + source_kind)
    return events[0].latch_time_ns


@dataclass
class CampaignSpec:
    """Everything one campaign needs; points are explicit coordinate dicts."""

    program_id: str
    points: list
    axes: tuple
    base_glitch: GlitchSpec
    capture: CaptureModel
    trials_per_point: int = 1
    seed: int = 0
    compare: oracle.CompareSpec = oracle.CompareSpec()
    watched: tuple | None = None
    coupling_field: CouplingField | None = None
    classify_outcomes: bool = True
    observe_reg: int | None = None
    true_word: int | None = None
    setup_window_ns: float = glitch.SETUP_WINDOW_NS
    budget_factor: int = 4

    def __post_init__(self):
        if self.trials_per_point < 1:
            raise ValueError("trials_per_point must be at least 1")


@dataclass
class PointResult:
    point: dict
    records: list
    histogram: dict      # outcome key -> count
    rates: dict          # outcome key -> full-precision rate


@dataclass
class CampaignReport:
    program: str
    axes: tuple
    golden_dump: dict
    points: list
    observe_reg: int | None = None
    true_word: int | None = None

    def all_records(self):
        for p in self.points:
            yield from p.records


def outcome_key(record: TrialRecord, golden_dump: dict) -> str:
    """Histogram bucket: outcome kind plus the visible state difference."""
    diffs = []
    for k, v in record.dump.items():
        if k in ("r13", "r14", "r15", "cycles"):
            continue
        if golden_dump.get(k) != v:
            if k.startswith(("r", "mem")):
                diffs.append(f"{k}=0x{v:08x}")
            else:
                diffs.append(f"{k}={v}")
    label = str(record.outcome) if record.outcome is not None else record.reason
    return label if not diffs else label + " " + ",".join(diffs)


class Campaign:
    def __init__(self, spec: CampaignSpec, clock=None, bus_cfg=None):
        self.spec = spec
        self.context = prepare_context(spec.program_id, spec.watched, clock,
                                       bus_cfg, spec.budget_factor)
        self._searches: dict = {}
        self._outcome_memo: dict = {}

    # -- glitch derivation ----------------------------------------------------

    def glitch_for(self, point: dict, trial: int) -> GlitchSpec:
        g = self.spec.base_glitch
        kwargs = {}
        if "voltage" in point:
            kwargs["voltage"] = point["voltage"]
        if "time_ns" in point:
            kwargs["injection_time_ns"] = point["time_ns"]
        if "x_mm" in point:
            ci, cd = self.spec.coupling_field.sample(point["x_mm"], point["y_mm"])
            kwargs["coupling_instr"] = ci
            kwargs["coupling_data"] = cd
        kwargs["seed"] = glitch.derive_seed(
            self.spec.seed, tuple(sorted(point.items())), trial)
        return replace(g, **kwargs)

    # -- classification --------------------------------------------------------

    def _search_for(self, segment: int, target_pc: int) -> oracle.ReplacementSearch:
        key = (segment, target_pc)
        if key not in self._searches:
            image = self.context.program.build_image()
            state = self.context.program.initial_state()
            result = core.run_to_watchpoint(
                state, image, target_pc, self.context.cycle_budget,
                clock=self.context.clock, bus_cfg=self.context.bus_cfg,
                keep_trace=False, emit_events=False, stop_segment=segment)
            if result.reason != core.WATCHPOINT_HIT:
                raise ValueError(f"cannot reconstruct pre-state at 0x{target_pc:08x}")
            self._searches[key] = oracle.ReplacementSearch(
                self.context.program, target_pc, result.state,
                self.context.program.watchpoint, self.context.cycle_budget,
                self.spec.compare, self.context.watched,
                self.context.clock, self.context.bus_cfg)
        return self._searches[key]

    def classify(self, record: TrialRecord) -> oracle.Outcome:
        memo_key = (tuple(record.dump.items()), record.reason,
                    record.exception_detail,
                    tuple((h.segment, h.consumer_pc) for h in record.corrupted))
        cached = self._outcome_memo.get(memo_key)
        if cached is not None:
            return cached
        observed = core.state_from_dump(record.dump)
        observed.exception_detail = record.exception_detail
        golden_state = self.context.golden.state
        observed_watched = core.watched_from_dump(record.dump)
        golden_watched = core.watched_from_dump(self.context.golden_dump)
        quick = oracle.classify(golden_state, observed, None, record.reason,
                                self.spec.compare, golden_watched, observed_watched)
        outcome = quick
        if quick.kind == oracle.DATA_FLOW_FAULT:
            # unexplained so far: run the replacement search where the glitch hit
            explanation = None
            for hit in record.corrupted:
                search = self._search_for(hit.segment, hit.consumer_pc)
                explanation = search.explain(observed, observed_watched)
                if not explanation.empty:
                    break
            outcome = oracle.classify(golden_state, observed, explanation,
                                      record.reason, self.spec.compare,
                                      golden_watched, observed_watched)
        self._outcome_memo[memo_key] = outcome
        return outcome

    # -- execution --------------------------------------------------------------

    def run(self) -> CampaignReport:
        spec = self.spec
        ctx = self.context
        results = []
        for point in spec.points:
            records = []
            for trial in range(spec.trials_per_point):
                g = self.glitch_for(point, trial)
                rec = glitch.inject_trial(
                    ctx.program, ctx.golden, g, spec.capture,
                    clock=ctx.clock, bus_cfg=ctx.bus_cfg, watched=ctx.watched,
                    cycle_budget=ctx.cycle_budget,
                    setup_window_ns=spec.setup_window_ns,
                    point=point, golden_dump=ctx.golden_dump)
                if spec.classify_outcomes:
                    rec.outcome = self.classify(rec)
                records.append(rec)
            counts = Counter(outcome_key(r, ctx.golden_dump) for r in records)
            total = sum(counts.values())
            histogram = dict(sorted(counts.items()))
            rates = {k: v / total for k, v in histogram.items()}
            results.append(PointResult(point, records, histogram, rates))
        return CampaignReport(ctx.program.name, spec.axes, dict(ctx.golden_dump),
                              results, spec.observe_reg, spec.true_word)


def run_campaign(spec: CampaignSpec, clock=None, bus_cfg=None) -> CampaignReport:
    return Campaign(spec, clock, bus_cfg).run()


# -- sweep/point builders -------------------------------------------------------

def frange(start: float, stop: float, step: float) -> list:
    if step <= 0:
        raise ValueError("sweep step must be positive")
    n = int((stop - start) / step + 1e-9)
    return [start + k * step for k in range(n + 1)]


def voltage_points(start: float, stop: float, step: float) -> list:
    return [{"voltage": v} for v in frange(start, stop, step)]


def time_points(start_ns: float, stop_ns: float, step_ns: float) -> list:
    return [{"time_ns": t} for t in frange(start_ns, stop_ns, step_ns)]


def grid_points(extent_mm: float, step_mm: float) -> list:
    xs = frange(0.0, extent_mm, step_mm)
    return [{"x_mm": x, "y_mm": y} for y in xs for x in xs]


# -- shipped experiment presets --------------------------------------------------

def staircase_campaign(trials_per_point: int = 1000, seed: int = 0,
                       start: float = 170.0, stop: float = 190.0,
                       step: float = 2.0, classify: bool = True) -> CampaignSpec:
    """Pulse-amplitude sweep over the narrow literal load (set-at-1 staircase)."""
    context = prepare_context("ldr-r4")
    inject_at = first_data_latch_ns(context) - 1.0
    base = GlitchSpec(voltage=start, width_ns=10.0, injection_time_ns=inject_at,
                      coupling_instr=0.0, coupling_data=1.0)
    return CampaignSpec(
        program_id="ldr-r4", points=voltage_points(start, stop, step),
        axes=("voltage",), base_glitch=base, capture=CaptureModel(),
        trials_per_point=trials_per_point, seed=seed,
        classify_outcomes=classify, observe_reg=4, true_word=0x12345678)


def metastability_campaign(trials: int = 10000, seed: int = 0) -> CampaignSpec:
    """One fixed operating point straddling the weakest bit threshold."""
    model = CaptureModel.from_seed(DEFAULT_METASTABILITY_SEED, slope=0.25)
    zero_bits = [b for b in range(32) if not (0x12345678 >> b) & 1]
    theta_min = min(model.thresholds_data[b] for b in zero_bits)
    voltage = 2.0 * theta_min   # edge intensity == weakest threshold: p = 1/2
    context = prepare_context("ldr-r4")
    inject_at = first_data_latch_ns(context) - 1.0
    base = GlitchSpec(voltage=voltage, width_ns=10.0, injection_time_ns=inject_at,
                      coupling_instr=0.0, coupling_data=1.0)
    return CampaignSpec(
        program_id="ldr-r4", points=[{"voltage": voltage}], axes=("voltage",),
        base_glitch=base, capture=model, trials_per_point=trials, seed=seed,
        classify_outcomes=False, observe_reg=4, true_word=0x12345678)


def sram_immunity_campaign(trials_per_point: int = 50, seed: int = 0) -> CampaignSpec:
    """Voltage sweep over a load whose source word lives in SRAM."""
    context = prepare_context("ldr-sram")
    inject_at = first_data_latch_ns(context, bus.SRAM) - 1.0
    base = GlitchSpec(voltage=170.0, width_ns=10.0, injection_time_ns=inject_at,
                      coupling_instr=0.0, coupling_data=1.0)
    return CampaignSpec(
        program_id="ldr-sram", points=voltage_points(170.0, 190.0, 2.0),
        axes=("voltage",), base_glitch=base,
        capture=CaptureModel.uniform(80.0, precharge_data=0x00000000),
        trials_per_point=trials_per_point, seed=seed,
        observe_reg=4, true_word=0x12345678)


def nop_replacement_campaign(trials: int = 400, seed: int = 0,
                             random_capture: bool = False) -> CampaignSpec:
    """Pulses on an instruction fetch of a NOP pair, instruction bus only."""
    context = prepare_context("nop-sled")
    instr_events = [e for e in context.golden.events
                    if e.bus == bus.INSTRUCTION_BUS and e.word == 0xBF00BF00]
    inject_at = instr_events[1].latch_time_ns - 1.0
    model = CaptureModel.from_seed(12, slope=0.6,
                                   instr_random_capture=random_capture)
    base = GlitchSpec(voltage=180.0, width_ns=10.0, injection_time_ns=inject_at,
                      coupling_instr=1.0, coupling_data=0.0)
    return CampaignSpec(
        program_id="nop-sled", points=[{"voltage": 180.0}], axes=("voltage",),
        base_glitch=base, capture=model, trials_per_point=trials, seed=seed)


# -- injection-time sweep ----------------------------------------------------------

SWEEP_NO_FAULT = "no-fault"
SWEEP_OUTPUT_FAULT = "output-fault"
SWEEP_EXCEPTION = "exception"
SWEEP_CRASH = "crash"


@dataclass
class TimeSweepRow:
    time_ns: float
    klass: str
    value: int          # watched result word
    cycles: int


@dataclass
class TimeSweepReport:
    program: str
    watched_addr: int
    golden_value: int
    rows: list


def suppression_capture_model() -> CaptureModel:
    """Capture toward an all-zero data precharge with uniform thresholds.

    Probe positions exist where glitched flash reads come back empty rather
    than saturated; this model reproduces the resulting value-suppression
    faults (a one-hot operand either survives or vanishes).
    """
    return CaptureModel.uniform(90.0, precharge_data=0x00000000)


def sweep_injection_time(start_ns: float = 0.0, stop_ns: float = 3500.0,
                         step_ns: float = 0.2, seed: int = 0,
                         program_id: str = "array-sum",
                         base_glitch: GlitchSpec | None = None,
                         capture: CaptureModel | None = None) -> TimeSweepReport:
    """Classify every injection instant over the array-sum run."""
    context = prepare_context(program_id)
    capture = capture or suppression_capture_model()
    base = base_glitch or GlitchSpec(voltage=190.0, width_ns=10.0,
                                     coupling_instr=0.0, coupling_data=1.0)
    watched_addr = context.watched[0]
    mem_key = f"mem_0x{watched_addr:08x}"
    golden_value = context.golden_dump[mem_key]
    rows = []
    for t in frange(start_ns, stop_ns, step_ns):
        g = replace(base, injection_time_ns=t,
                    seed=glitch.derive_seed(seed, t))
        rec = glitch.inject_trial(context.program, context.golden, g, capture,
                                  clock=context.clock, bus_cfg=context.bus_cfg,
                                  watched=context.watched,
                                  cycle_budget=context.cycle_budget,
                                  golden_dump=context.golden_dump)
        value = rec.dump[mem_key]
        if rec.dump["exceptionNumber"] != core.EXC_NONE:
            klass = SWEEP_EXCEPTION
        elif rec.reason == core.BUDGET_EXCEEDED:
            klass = SWEEP_CRASH
        elif value != golden_value:
            klass = SWEEP_OUTPUT_FAULT
        else:
            klass = SWEEP_NO_FAULT
        rows.append(TimeSweepRow(t, klass, value, rec.dump["cycles"]))
    return TimeSweepReport(context.program.name, watched_addr, golden_value, rows)


# -- spatial cartography -------------------------------------------------------------

CARTO_NO_FAULT = "no-fault"
CARTO_CRASH = "crash"
CARTO_USAGE_FAULT = "usage-fault"
CARTO_REGISTER_FAULT = "register-fault"


@dataclass
class CartographyCell:
    x_mm: float
    y_mm: float
    dominant: str
    counts: dict
    faulted_regs: tuple
    mean_hw_increase: float


@dataclass
class CartographyReport:
    program: str
    extent_mm: float
    step_mm: float
    cells: list


def _carto_class(record: TrialRecord, golden_dump: dict):
    """The four observed output kinds plus which registers moved."""
    if record.dump["exceptionNumber"] == core.EXC_USAGE_FAULT:
        return CARTO_USAGE_FAULT, ()
    if record.dump["exceptionNumber"] != core.EXC_NONE or \
            record.reason == core.BUDGET_EXCEEDED:
        return CARTO_CRASH, ()
    moved = tuple(i for i in range(13)
                  if record.dump[f"r{i}"] != golden_dump[f"r{i}"])
    if moved:
        return CARTO_REGISTER_FAULT, moved
    return CARTO_NO_FAULT, ()


def cartography(extent_mm: float = 3.0, step_mm: float = 0.2, seed: int = 0,
                program_id: str = "ldr-r8", voltage: float = 190.0,
                window_ns: float = 160.0, time_step_ns: float = 2.0,
                field_seed: int = DEFAULT_CARTOGRAPHY_SEED,
                capture: CaptureModel | None = None) -> CartographyReport:
    """Dominant outcome per synthetic probe position over a small time window.

    The time sub-sweep is centred on the target load's data latch and is wide
    enough to also cross a few instruction-fetch latches, the way a bench
    scan drags the pulse across the instants that matter.
    """
    context = prepare_context(program_id)
    capture = capture or CaptureModel.from_seed(field_seed, slope=0.05)
    coupling_field = CouplingField.synthetic(field_seed, extent_mm)
    centre = first_data_latch_ns(context)
    times = frange(max(0.0, centre - window_ns / 2),
                   centre + window_ns / 2, time_step_ns)
    dest_reg = _load_dest_reg(context)
    golden_hw = bin(context.golden_dump[f"r{dest_reg}"]).count("1")
    cells = []
    for point in grid_points(extent_mm, step_mm):
        ci, cd = coupling_field.sample(point["x_mm"], point["y_mm"])
        counts: Counter = Counter()
        hw_increases = []
        faulted: set = set()
        for t in times:
            g = GlitchSpec(voltage=voltage, width_ns=10.0, injection_time_ns=t,
                           coupling_instr=ci, coupling_data=cd,
                           seed=glitch.derive_seed(seed, point["x_mm"],
                                                   point["y_mm"], t))
            rec = glitch.inject_trial(context.program, context.golden, g,
                                      capture, clock=context.clock,
                                      bus_cfg=context.bus_cfg,
                                      watched=context.watched,
                                      cycle_budget=context.cycle_budget,
                                      golden_dump=context.golden_dump)
            klass, moved = _carto_class(rec, context.golden_dump)
            counts[klass] += 1
            faulted.update(moved)
            if klass == CARTO_REGISTER_FAULT and dest_reg in moved:
                hw = bin(rec.dump[f"r{dest_reg}"]).count("1")
                hw_increases.append(hw - golden_hw)
        # color the cell by its most frequent fault, the way a scan map does;
        # a cell is "no fault" only if nothing ever went wrong there
        fault_classes = {k: v for k, v in counts.items() if k != CARTO_NO_FAULT}
        if fault_classes:
            dominant = max(fault_classes.items(), key=lambda kv: (kv[1], kv[0]))[0]
        else:
            dominant = CARTO_NO_FAULT
        mean_hw = (sum(hw_increases) / len(hw_increases)) if hw_increases else 0.0
        cells.append(CartographyCell(point["x_mm"], point["y_mm"], dominant,
                                     dict(sorted(counts.items())),
                                     tuple(sorted(faulted)), mean_hw))
    return CartographyReport(context.program.name, extent_mm, step_mm, cells)


def _load_dest_reg(context: ExperimentContext) -> int:
    from . import isa
    for entry in context.golden.trace:
        if entry.data_ops:
            first = entry.raw if entry.width == 16 else entry.raw >> 16
            second = entry.raw & 0xFFFF if entry.width == 32 else 0
            instr = isa.decode(first, second)
            if instr.mn.name.startswith("LDR"):
                return instr.rd
    raise ValueError("program performs no load")
