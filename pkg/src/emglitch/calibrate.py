"""Threshold calibration for the capture model.

The observable being fitted is a voltage staircase: sweeping pulse amplitude
over a single flash load and recording the most frequent loaded value per
step.  Each bit that flips somewhere in the staircase pins its threshold to
an interval of edge intensities; placing it at the interval midpoint zeroes
the staircase residual, so the least-squares fit reduces to interval
midpoints.  Bits that never flip are parked above the strongest intensity.

``DEFAULT_STAIRCASE_TARGET`` is the shipped reference staircase for a load
whose true value is 0x12345678; the fitted constants it produces are the
default data-bus calibration.
"""

from __future__ import annotations

from .glitch import pulse_intensity

FIT_WIDTH_NS = 10.0
PARK_MARGIN = 2.0

# (pulse voltage, most frequent loaded value); 0x12345678 rows are fault-free
DEFAULT_STAIRCASE_TARGET = (
    (170.0, 0x12345678),
    (172.0, 0x12345678),
    (174.0, 0x92345678),
    (176.0, 0xFE345678),
    (178.0, 0xFFF45678),
    (180.0, 0xFFFD5678),
    (182.0, 0xFFFF7F78),
    (184.0, 0xFFFFFFFB),
    (186.0, 0xFFFFFFFF),
    (188.0, 0xFFFFFFFF),
    (190.0, 0xFFFFFFFF),
)

STAIRCASE_TRUE_WORD = 0x12345678


class CalibrationError(ValueError):
    pass


def fit_thresholds(rows, true_word: int, *, coupling: float = 1.0,
                   width_ns: float = FIT_WIDTH_NS,
                   park_margin: float = PARK_MARGIN) -> tuple:
    """Fit 32 per-bit capture thresholds to a modal staircase.

    ``rows`` is a sequence of (voltage, modal word) sorted by voltage.  The
    target must move monotonically toward an all-ones precharge: each row's
    captured-bit set must contain the previous row's.
    """
    rows = sorted(rows)
    if len(rows) < 2:
        raise CalibrationError("need at least two staircase rows")
    intensities = [pulse_intensity(v, width_ns) for v, _ in rows]
    masks = []
    prev = 0
    for v, word in rows:
        if word != word & 0xFFFFFFFF:
            raise CalibrationError(f"{v} V row is not a 32-bit word")
        if (word | true_word) != word:
            raise CalibrationError(
                f"{v} V row clears a bit of the true word; "
                "set-at-1 capture cannot produce it")
        mask = word ^ true_word
        if mask & prev != prev:
            raise CalibrationError(f"{v} V row drops a previously captured bit")
        masks.append(mask)
        prev = mask
    step = intensities[1] - intensities[0]
    park = intensities[-1] + park_margin
    thresholds = []
    for bit in range(32):
        if (true_word >> bit) & 1:
            thresholds.append(park)  # capture toward 1 is invisible here
            continue
        first = next((k for k, m in enumerate(masks) if (m >> bit) & 1), None)
        if first is None:
            thresholds.append(park)
            continue
        hi = intensities[first]
        lo = intensities[first - 1] if first > 0 else hi - step
        thresholds.append((lo + hi) / 2.0 * coupling)
    return tuple(thresholds)


def parse_staircase_file(text: str):
    """Rows of ``voltage value`` (value hex or decimal), one per line."""
    rows = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 2:
            raise CalibrationError(f"line {lineno}: expected 'voltage value'")
        rows.append((float(parts[0]), int(parts[1], 16 if not parts[1].startswith("0x") else 0)))
    if not rows:
        raise CalibrationError("empty staircase file")
    return rows


def format_staircase(rows) -> str:
    return "\n".join(f"{v:g} {word:08x}" for v, word in rows) + "\n"


DEFAULT_DATA_THRESHOLDS = fit_thresholds(DEFAULT_STAIRCASE_TARGET, STAIRCASE_TRUE_WORD)
