"""Formalise, simulate and optimise multi-step offloading of 2D convolutions
onto a memory-constrained accelerator."""

from .conv_core import (LayerSpec, OutputId, Patch, PixelId, Tensor3, nb_op_value,
                        output_dims, patch_footprint, patch_set, reference_convolution)
from .exec_model import (HardwareSpec, MemoryState, Step, Strategy, execute_step,
                         run_and_verify, step_duration, strategy_duration,
                         validate_strategy)
from .strategies import (GroupSchedule, S1Params, compile_schedule, gen_row_by_row,
                         gen_s1_baseline, gen_zigzag, s1_params)

__version__ = "0.1.0"

__all__ = [
    "LayerSpec", "OutputId", "Patch", "PixelId", "Tensor3", "nb_op_value", "output_dims",
    "patch_footprint", "patch_set", "reference_convolution",
    "HardwareSpec", "MemoryState", "Step", "Strategy", "execute_step", "run_and_verify",
    "step_duration", "strategy_duration", "validate_strategy",
    "GroupSchedule", "S1Params", "compile_schedule", "gen_row_by_row", "gen_s1_baseline",
    "gen_zigzag", "s1_params",
]
