"""Desk-scale simulator of electromagnetic-glitch fault injection on a
Thumb2-subset microcontroller model."""

from .isa import (Instr, Mnemonic, decode, encode, disasm,
                  hamming_weight, hamming_distance, is_32bit_prefix)
from .core import ArchState, MemoryImage, Region, run_to_watchpoint, step

__all__ = [
    "Instr", "Mnemonic", "decode", "encode", "disasm",
    "hamming_weight", "hamming_distance", "is_32bit_prefix",
    "ArchState", "MemoryImage", "Region", "run_to_watchpoint", "step",
]

__version__ = "0.1.0"
