"""Register-transfer-level glitch fault mechanism.

A pulse couples into the buses as two edges (rise and fall); an edge that
lands inside a flash transfer's setup window makes late bits latch the bus
precharge value instead of the true data.  Per-bit thresholds plus a logistic
slope turn edge intensity into capture probabilities, which reproduces both
the deterministic set-at-1 staircase on strong pulses and metastable
multi-valued outcomes near the margin.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, field

from . import bus, core

RISE_TIME_NS = 2.0          # pulse generator's fixed transition time
SETUP_WINDOW_NS = 3.0       # how long before a latch an edge is dangerous
EFFECTIVE_WIDTH_NS = 10.0   # width at which edge coupling stops attenuating


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a tuple of primitives (platform independent)."""
    text = "/".join(repr(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big")


@dataclass(frozen=True)
class GlitchSpec:
    """The attacker's knobs for one pulse."""

    voltage: float = 190.0
    width_ns: float = 10.0
    injection_time_ns: float = 0.0
    coupling_instr: float = 0.0
    coupling_data: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not -200.0 <= self.voltage <= 200.0:
            raise ValueError("pulse voltage outside the -200..200 V range")
        if not 10.0 <= self.width_ns <= 200.0:
            raise ValueError("pulse width outside the 10..200 ns range")
        for c in (self.coupling_instr, self.coupling_data):
            if not 0.0 <= c <= 1.0:
                raise ValueError("coupling factors must be in [0, 1]")

    def coupling(self, which_bus: str) -> float:
        return self.coupling_instr if which_bus == bus.INSTRUCTION_BUS else self.coupling_data


@dataclass(frozen=True)
class GlitchEdge:
    time_ns: float
    intensity: float


def width_attenuation(width_ns: float) -> float:
    """Longer pulses spread the same flux change over more time."""
    return min(1.0, EFFECTIVE_WIDTH_NS / width_ns)


def pulse_intensity(voltage: float, width_ns: float) -> float:
    return abs(voltage) / RISE_TIME_NS * width_attenuation(width_ns)


def edge_events(spec: GlitchSpec) -> list[GlitchEdge]:
    """The two flux edges of one pulse; coupling is the time derivative."""
    intensity = pulse_intensity(spec.voltage, spec.width_ns)
    return [
        GlitchEdge(spec.injection_time_ns, intensity),
        GlitchEdge(spec.injection_time_ns + spec.width_ns, intensity),
    ]


def _default_data_thresholds() -> tuple:
    from . import calibrate
    return calibrate.DEFAULT_DATA_THRESHOLDS


def _default_instr_thresholds() -> tuple:
    return drawn_thresholds(DEFAULT_INSTR_THRESHOLD_SEED)


DEFAULT_THRESHOLD_MEAN = 90.0
DEFAULT_THRESHOLD_SPREAD = 1.5
DEFAULT_INSTR_THRESHOLD_SEED = 0x1B50


def drawn_thresholds(seed: int, mean: float = DEFAULT_THRESHOLD_MEAN,
                     spread: float = DEFAULT_THRESHOLD_SPREAD) -> tuple:
    """Per-bit thresholds modelling bus skew: one seeded draw, reused."""
    rng = random.Random(seed)
    return tuple(rng.gauss(mean, spread) for _ in range(32))


@dataclass(frozen=True)
class CaptureModel:
    """Per-bus precharge words, per-bit thresholds and the capture slope.

    The default data-bus thresholds are the shipped calibration (fitted to
    the load-value staircase); the instruction-bus ones are a fixed seeded
    draw, since nothing pins them from the outside.
    """

    precharge_data: int = 0xFFFFFFFF
    precharge_instr: int = 0x00000000
    thresholds_data: tuple = field(default_factory=_default_data_thresholds)
    thresholds_instr: tuple = field(default_factory=_default_instr_thresholds)
    slope: float = 0.05
    rise_time_ns: float = RISE_TIME_NS
    prob_clamp: float = 1e-3
    instr_random_capture: bool = False   # per-bit random target instead of precharge

    def __post_init__(self):
        if self.slope <= 0:
            raise ValueError("slope must be positive")
        if len(self.thresholds_data) != 32 or len(self.thresholds_instr) != 32:
            raise ValueError("need 32 thresholds per bus")

    def precharge(self, which_bus: str) -> int:
        return self.precharge_instr if which_bus == bus.INSTRUCTION_BUS else self.precharge_data

    def thresholds(self, which_bus: str) -> tuple:
        return self.thresholds_instr if which_bus == bus.INSTRUCTION_BUS else self.thresholds_data

    @classmethod
    def from_seed(cls, seed: int, mean: float = DEFAULT_THRESHOLD_MEAN,
                  spread: float = DEFAULT_THRESHOLD_SPREAD, **overrides) -> "CaptureModel":
        overrides.setdefault("thresholds_data", drawn_thresholds(derive_seed("data", seed), mean, spread))
        overrides.setdefault("thresholds_instr", drawn_thresholds(derive_seed("instr", seed), mean, spread))
        return cls(**overrides)

    @classmethod
    def uniform(cls, threshold: float, **overrides) -> "CaptureModel":
        overrides.setdefault("thresholds_data", (threshold,) * 32)
        overrides.setdefault("thresholds_instr", (threshold,) * 32)
        return cls(**overrides)


def capture_probabilities(intensity: float, coupling: float,
                          model: CaptureModel, which_bus: str = bus.DATA_BUS) -> list[float]:
    """Per-bit probability of latching the precharge instead of the data.

    Probabilities below the clamp are forced to exactly 0 (and symmetrically
    to 1) so that out-of-range operating points are strictly fault-free.
    """
    if not 0.0 <= coupling <= 1.0:
        raise ValueError("coupling must be in [0, 1]")
    stress = intensity * coupling
    probs = []
    for theta in model.thresholds(which_bus):
        x = (stress - theta) / model.slope
        if x < -700:
            p = 0.0
        elif x > 700:
            p = 1.0
        else:
            p = 1.0 / (1.0 + math.exp(-x))
        if p < model.prob_clamp:
            p = 0.0
        elif p > 1.0 - model.prob_clamp:
            p = 1.0
        probs.append(p)
    return probs


def apply_glitch(word: int, precharge: int, probs, rng: random.Random,
                 random_targets: bool = False) -> int:
    """Independently capture each bit toward its target with probability p.

    Bits whose target equals the true bit are unchanged no matter what; with
    ``random_targets`` the capture target is a fresh coin flip per bit,
    modelling an unknown, more involved precharge scheme.
    """
    out = word & 0xFFFFFFFF
    for i, p in enumerate(probs):
        captured = p > 0.0 and (p >= 1.0 or rng.random() < p)
        target = (rng.getrandbits(1) if random_targets
                  else (precharge >> i) & 1)
        if captured:
            out = (out | (1 << i)) if target else (out & ~(1 << i))
    return out & 0xFFFFFFFF


@dataclass(frozen=True)
class CorruptedTransfer:
    bus: str
    segment: int
    addr: int
    dyn_index: int
    original: int
    faulted: int
    consumer_pc: int


@dataclass
class TrialRecord:
    """Harvested result of one injection run."""

    point: dict
    seed: int
    dump: dict
    reason: str
    corrupted: tuple = ()
    exception_detail: str = ""
    outcome: object = None

    @property
    def cycles_observed(self) -> int:
        return self.dump["cycles"]


def build_fault_plan(events, spec: GlitchSpec, model: CaptureModel,
                     setup_window_ns: float = SETUP_WINDOW_NS):
    """Corrupt every golden transfer a pulse edge can race.

    Returns (plan, corrupted) where the plan is keyed for a re-run and
    corrupted describes what changed.  Buses with zero coupling are skipped
    outright, which keeps the locality guarantee exact.
    """
    edges = edge_events(spec)
    times = [e.time_ns for e in edges]
    plan = core.FaultPlan()
    corrupted = []
    for ev in events:
        coupling = spec.coupling(ev.bus)
        if coupling <= 0.0 or not ev.is_load:
            continue
        if not bus.latch_vulnerable(ev, times, setup_window_ns):
            continue
        intensity = max(e.intensity for e in edges
                        if ev.latch_time_ns - setup_window_ns < e.time_ns <= ev.latch_time_ns)
        probs = capture_probabilities(intensity, coupling, model, ev.bus)
        rng = random.Random(derive_seed(spec.seed, ev.bus, ev.segment, ev.addr, ev.dyn_index))
        random_targets = model.instr_random_capture and ev.bus == bus.INSTRUCTION_BUS
        faulted = apply_glitch(ev.word, model.precharge(ev.bus), probs, rng,
                               random_targets=random_targets)
        if faulted == ev.word:
            continue
        if ev.bus == bus.INSTRUCTION_BUS:
            plan.instr[(ev.segment, ev.addr)] = faulted & 0xFFFF
            plan.instr[(ev.segment, ev.addr + 2)] = (faulted >> 16) & 0xFFFF
        else:
            plan.data[ev.dyn_index] = faulted
        corrupted.append(CorruptedTransfer(ev.bus, ev.segment, ev.addr,
                                           ev.dyn_index, ev.word, faulted,
                                           ev.consumer_pc))
    return plan, corrupted


def inject_trial(program, golden: core.RunResult, spec: GlitchSpec,
                 model: CaptureModel, *, clock=None, bus_cfg=None,
                 watched: tuple = (), cycle_budget: int | None = None,
                 setup_window_ns: float = SETUP_WINDOW_NS,
                 point: dict | None = None,
                 golden_dump: dict | None = None) -> TrialRecord:
    """Run one injection against a precomputed golden schedule."""
    if cycle_budget is None:
        cycle_budget = max(4 * golden.state.cycles, 64)
    plan, corrupted = build_fault_plan(golden.events, spec, model, setup_window_ns)
    if not plan:
        if golden_dump is None:
            golden_image = program.build_image()
            _replay_memory(golden_image, golden)
            golden_dump = core.state_dump(golden.state, golden_image, watched)
        return TrialRecord(dict(point or {}), spec.seed, dict(golden_dump),
                           golden.reason, ())
    image = program.build_image()
    state = program.initial_state()
    result = core.run_to_watchpoint(state, image, program.watchpoint,
                                    cycle_budget, clock=clock, bus_cfg=bus_cfg,
                                    fault_plan=plan, keep_trace=False,
                                    emit_events=False)
    dump = core.state_dump(result.state, image, watched)
    return TrialRecord(dict(point or {}), spec.seed, dump, result.reason,
                       tuple(corrupted), result.state.exception_detail)


def _replay_memory(image, golden: core.RunResult) -> None:
    """Re-apply the golden run's stores so watched memory reads correctly."""
    for entry in golden.trace:
        for kind, addr, is_load, value in entry.data_ops:
            if not is_load:
                image.poke_u32(addr, value)


# -- synthetic probe-position coupling fields ---------------------------------

@dataclass(frozen=True)
class CouplingField:
    """Sum-of-Gaussian coupling maps standing in for unknown die topography.

    Each bump is (x_mm, y_mm, sigma_mm, amplitude); instruction- and data-bus
    bumps are drawn in opposite corners so that some probe positions reach
    only one bus, the way a small antenna does in practice.
    """

    extent_mm: float
    instr_bumps: tuple
    data_bumps: tuple

    @classmethod
    def synthetic(cls, seed: int, extent_mm: float = 3.0) -> "CouplingField":
        rng = random.Random(derive_seed("field", seed))
        sigma = 0.12 * extent_mm

        def bump_in(lo: float, hi: float, amp: float):
            span = hi - lo
            return (lo + rng.random() * span, lo + rng.random() * span,
                    sigma * (0.8 + 0.4 * rng.random()), amp)

        data_bumps = (bump_in(0.15 * extent_mm, 0.45 * extent_mm, 1.0),
                      bump_in(0.10 * extent_mm, 0.50 * extent_mm, 0.5))
        instr_bumps = (bump_in(0.55 * extent_mm, 0.85 * extent_mm, 1.0),
                       bump_in(0.50 * extent_mm, 0.90 * extent_mm, 0.4))
        return cls(extent_mm, instr_bumps, data_bumps)

    @staticmethod
    def _eval(bumps, x: float, y: float) -> float:
        total = 0.0
        for bx, by, sigma, amp in bumps:
            d2 = (x - bx) ** 2 + (y - by) ** 2
            total += amp * math.exp(-d2 / (2.0 * sigma * sigma))
        return min(1.0, total)

    def sample(self, x_mm: float, y_mm: float) -> tuple[float, float]:
        """(instruction-bus, data-bus) coupling at a probe position."""
        return (self._eval(self.instr_bumps, x_mm, y_mm),
                self._eval(self.data_bumps, x_mm, y_mm))


# -- plain-text configuration -------------------------------------------------

GLITCH_CONFIG_KEYS = (
    "voltage", "width_ns", "injection_time_ns", "coupling_instr",
    "coupling_data", "precharge_data", "precharge_instr", "seed",
    "thresholds_file", "slope", "prob_clamp", "instr_random_capture",
)


def parse_glitch_config(text: str, base_dir=None):
    """Parse ``key = value`` lines into a (GlitchSpec, CaptureModel) pair."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in GLITCH_CONFIG_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = val.strip()

    spec = GlitchSpec(
        voltage=float(values.get("voltage", 190.0)),
        width_ns=float(values.get("width_ns", 10.0)),
        injection_time_ns=float(values.get("injection_time_ns", 0.0)),
        coupling_instr=float(values.get("coupling_instr", 0.0)),
        coupling_data=float(values.get("coupling_data", 1.0)),
        seed=int(values.get("seed", "0"), 0),
    )
    model_kwargs = {}
    if "precharge_data" in values:
        model_kwargs["precharge_data"] = int(values["precharge_data"], 0) & 0xFFFFFFFF
    if "precharge_instr" in values:
        model_kwargs["precharge_instr"] = int(values["precharge_instr"], 0) & 0xFFFFFFFF
    if "slope" in values:
        model_kwargs["slope"] = float(values["slope"])
    if "prob_clamp" in values:
        model_kwargs["prob_clamp"] = float(values["prob_clamp"])
    if "instr_random_capture" in values:
        model_kwargs["instr_random_capture"] = values["instr_random_capture"].lower() in ("1", "true", "yes")
    if "thresholds_file" in values:
        from pathlib import Path
        path = Path(values["thresholds_file"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        data_t, instr_t = load_thresholds(path.read_text())
        model_kwargs["thresholds_data"] = data_t
        model_kwargs["thresholds_instr"] = instr_t
    return spec, CaptureModel(**model_kwargs)


def format_glitch_config(spec: GlitchSpec, model: CaptureModel,
                         thresholds_file: str | None = None) -> str:
    lines = [
        f"voltage = {spec.voltage!r}",
        f"width_ns = {spec.width_ns!r}",
        f"injection_time_ns = {spec.injection_time_ns!r}",
        f"coupling_instr = {spec.coupling_instr!r}",
        f"coupling_data = {spec.coupling_data!r}",
        f"precharge_data = 0x{model.precharge_data:08x}",
        f"precharge_instr = 0x{model.precharge_instr:08x}",
        f"seed = {spec.seed}",
        f"slope = {model.slope!r}",
    ]
    if thresholds_file:
        lines.append(f"thresholds_file = {thresholds_file}")
    return "\n".join(lines) + "\n"


def load_thresholds(text: str) -> tuple[tuple, tuple]:
    """64 reals, one per line: data-bus bits 0..31, then instruction bus."""
    values = [float(line.split("#", 1)[0])
              for line in text.splitlines() if line.split("#", 1)[0].strip()]
    if len(values) != 64:
        raise ValueError(f"threshold file needs 64 values, got {len(values)}")
    return tuple(values[:32]), tuple(values[32:])


def format_thresholds(thresholds_data, thresholds_instr) -> str:
    lines = [repr(float(t)) for t in thresholds_data]
    lines += [repr(float(t)) for t in thresholds_instr]
    return "\n".join(lines) + "\n"
