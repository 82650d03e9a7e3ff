"""Group schedules, the S1 family generators and the schedule compiler."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .conv_core import LayerSpec, OutputId, Patch, group_footprint, nb_op_value
from .errors import AcceleratorTooSmall, CapacityExceeded, ScheduleError
from .exec_model import HardwareSpec, Step, Strategy


@dataclass(frozen=True)
class GroupSchedule:
    """Ordered partition of the patch set; group ``k`` runs at step ``k+1``."""

    groups: tuple[frozenset, ...]
    layer: LayerSpec

    def __post_init__(self):
        groups = tuple(frozenset(g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        seen: set[Patch] = set()
        universe = set(self.layer.patches())
        for k, g in enumerate(groups, start=1):
            if not g:
                raise ScheduleError(f"group {k} is empty")
            stray = g - universe
            if stray:
                raise ScheduleError(f"group {k} holds unknown patches {sorted(stray)}")
            dup = g & seen
            if dup:
                raise ScheduleError(f"patches {sorted(dup)} appear in more than one group")
            seen |= g
        missing = universe - seen
        if missing:
            raise ScheduleError(f"{len(missing)} patches unassigned, e.g. {min(missing)}")

    @classmethod
    def from_ids(cls, groups: Iterable[Iterable[int]], layer: LayerSpec) -> "GroupSchedule":
        return cls(tuple(frozenset(layer.patch_at(pid) for pid in g) for g in groups), layer)

    def to_ids(self) -> list[list[int]]:
        return [sorted(self.layer.patch_id(p) for p in g) for g in self.groups]

    def assignment(self) -> tuple[int, ...]:
        """Group index of each patch, patches in row-major order."""
        where = {p: k for k, g in enumerate(self.groups) for p in g}
        return tuple(where[p] for p in self.layer.patches())

    def max_group(self) -> int:
        return max(len(g) for g in self.groups)

    def check(self, max_patches: int):
        if self.max_group() > max_patches:
            raise ScheduleError(f"a group holds {self.max_group()} patches > {max_patches}")

    def __len__(self):
        return len(self.groups)


@dataclass(frozen=True)
class S1Params:
    nb_patches_max: int
    k_min: int
    k_max: int


def s1_params(layer: LayerSpec, hw: HardwareSpec, override: int | None = None) -> S1Params:
    """Per-step patch capacity and the admissible range of step counts.

    ``override`` replaces the capacity derived from ``nbop_pe``; it may not
    exceed it.
    """
    per_patch = nb_op_value(layer) * layer.c_out
    m = hw.nbop_pe // per_patch
    if m == 0:
        raise AcceleratorTooSmall(
            f"nbop_PE={hw.nbop_pe} cannot process one patch ({per_patch} MACs)")
    if override is not None:
        if not 1 <= override <= m:
            raise AcceleratorTooSmall(f"override {override} outside [1, {m}]")
        m = override
    n = layer.n_patches
    return S1Params(m, math.ceil(n / m), n)


def _chunk(order: Sequence[Patch], size: int) -> list[frozenset]:
    return [frozenset(order[k:k + size]) for k in range(0, len(order), size)]


def _check_size(group_size: int, max_patches: int | None):
    if group_size < 1:
        raise ScheduleError("group size must be >= 1")
    if max_patches is not None and group_size > max_patches:
        raise ScheduleError(f"group size {group_size} > nb_patches_max_S1={max_patches}")


def row_major_order(layer: LayerSpec) -> list[Patch]:
    return layer.patches()


def boustrophedon_order(layer: LayerSpec) -> list[Patch]:
    order = []
    for i in range(layer.h_out):
        cols = range(layer.w_out) if i % 2 == 0 else range(layer.w_out - 1, -1, -1)
        order.extend(Patch(i, j) for j in cols)
    return order


def gen_s1_baseline(layer: LayerSpec) -> GroupSchedule:
    return GroupSchedule(tuple(_chunk(row_major_order(layer), 1)), layer)


def gen_row_by_row(layer: LayerSpec, group_size: int,
                   max_patches: int | None = None) -> GroupSchedule:
    _check_size(group_size, max_patches)
    return GroupSchedule(tuple(_chunk(row_major_order(layer), group_size)), layer)


def gen_zigzag(layer: LayerSpec, group_size: int,
               max_patches: int | None = None) -> GroupSchedule:
    _check_size(group_size, max_patches)
    return GroupSchedule(tuple(_chunk(boustrophedon_order(layer), group_size)), layer)


GENERATORS = {
    "rowbyrow": gen_row_by_row,
    "zigzag": gen_zigzag,
    "s1-baseline": lambda layer, group_size=1, max_patches=None: gen_s1_baseline(layer),
}


def _outputs(group, layer: LayerSpec) -> frozenset:
    return frozenset(OutputId(l, p.i, p.j) for p in group for l in range(layer.c_out))


def compile_schedule(schedule: GroupSchedule, layer: LayerSpec, hw: HardwareSpec,
                     source: str = "schedule") -> Strategy:
    """Turn a group schedule into concrete steps.

    Kernels are loaded at step 1 and stay resident; a pixel is kept iff the
    next group needs it; outputs are written back one step after they are
    computed, the last group's in the terminal flush.
    """
    if schedule.layer != layer:
        raise ScheduleError("schedule was built for another layer")
    kernels = frozenset(range(layer.n_kernels))
    resident: frozenset = frozenset()
    previous: frozenset = frozenset()
    steps = []
    for k, group in enumerate(schedule.groups, start=1):
        fp = group_footprint(group, layer)
        out = _outputs(group, layer)
        elements = len(fp) * layer.c_in + len(kernels) * layer.kernel_size + len(out)
        if elements > hw.size_mem:
            raise CapacityExceeded(
                f"footprint {elements} > size_MEM={hw.size_mem}", step=k)
        steps.append(Step(
            free_inp=resident - fp,
            write=_outputs(previous, layer),
            load_inp=fp - resident,
            load_ker=kernels if k == 1 else frozenset(),
            compute=group))
        resident, previous = fp, group
    flush = Step(free_inp=resident, free_ker=kernels,
                 write=_outputs(previous, layer), compute=frozenset())
    return Strategy(tuple(steps), flush, "next-step", source)
