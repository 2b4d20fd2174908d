"""Algebraic path traceback over a prime field, with incremental change detection."""
from .errors import *  # noqa: F401,F403
from .field import FieldCtx, ff_add, ff_div, ff_inv, ff_mul, ff_sub, poly_eval_horner
from .incremental import (DecoderParams, KnownPath, build_R, build_S, detect_addition,
                          detect_change_randomized, detect_deletion, required_l)
from .marking import MarkingConfig, Packet, traverse_deterministic, traverse_randomized
from .path_model import ChangeEvent, ChangeKind, Path, TimedEvent, apply_change
from .reconstruct import interpolate_path, reconstruct_randomized, segregate_by_hopcount
from .stats import fractions, worst_case_ratio

__version__ = "0.1.0"
