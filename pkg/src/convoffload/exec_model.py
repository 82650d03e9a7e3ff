"""Step semantics, memory-state evolution, durations and strategy validation.

A step applies, in order: free input pixels, free kernels, write back
outputs, load input pixels, load kernels, compute. Memory is tracked as
sets of pixel ids, kernel ids and output ids; capacity is checked in
scalar elements at the end of each step, which is the per-step peak since
every action before the compute only shrinks memory or loads what the
compute needs.

Transfer costs are priced per spatial unit: one pixel load moves all
``c_in`` channels, one write moves all output channels of a position and
one kernel load counts ``h_k * w_k`` pixel-units.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import errors
from .conv_core import (LayerSpec, OutputId, PixelId, Tensor3,
                        check_operands, nb_op_value, reference_convolution)


@dataclass(frozen=True)
class HardwareSpec:
    nbop_pe: int
    size_mem: int
    t_l: float = 1
    t_w: float = 1
    t_acc: float = 1
    dram_size: int = 10**12
    count_kernel_load: bool = False
    count_write_back: bool = True

    def __post_init__(self):
        for name in ("nbop_pe", "size_mem", "t_l", "t_w", "t_acc", "dram_size"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


def _fs(items):
    return frozenset(items) if items is not None else frozenset()


@dataclass(frozen=True)
class Step:
    """One offloading step.

    ``compute`` names the patches processed by the step. When it is ``None``
    every patch whose footprint is resident and whose outputs are not yet
    computed is processed.
    """

    free_inp: frozenset = frozenset()
    free_ker: frozenset = frozenset()
    write: frozenset = frozenset()
    load_inp: frozenset = frozenset()
    load_ker: frozenset = frozenset()
    compute: frozenset | None = None

    def __post_init__(self):
        for name in ("free_inp", "free_ker", "write", "load_inp", "load_ker"):
            object.__setattr__(self, name, _fs(getattr(self, name)))
        if self.compute is not None:
            object.__setattr__(self, "compute", frozenset(self.compute))

    @property
    def is_empty(self) -> bool:
        return not (self.free_inp or self.free_ker or self.write
                    or self.load_inp or self.load_ker or self.compute)


@dataclass(frozen=True)
class Strategy:
    """Ordered steps plus the terminal flush that empties the memory.

    The flush runs after step n without computing anything; its cost is
    charged to step n.
    """

    steps: tuple[Step, ...]
    flush: Step = Step(compute=frozenset())
    write_policy: str = "next-step"
    source: str = "user"

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))

    def __len__(self):
        return len(self.steps)


@dataclass(frozen=True)
class MemoryState:
    inp: frozenset = frozenset()
    ker: frozenset = frozenset()
    out: frozenset = frozenset()
    # every output computed so far, resident or already written back
    computed: frozenset = frozenset()

    def elements(self, layer: LayerSpec) -> int:
        return (len(self.inp) * layer.c_in + len(self.ker) * layer.kernel_size
                + len(self.out))

    @property
    def is_empty(self) -> bool:
        return not (self.inp or self.ker or self.out)


@dataclass(frozen=True)
class Violation:
    kind: str
    step: int | None
    detail: str

    def __str__(self):
        where = f"step {self.step}" if self.step is not None else "strategy"
        return f"{self.kind} at {where}: {self.detail}"


@dataclass(frozen=True)
class StepTrace:
    index: int
    kind: str  # "step" or "flush"
    freed: frozenset
    freed_kernels: frozenset
    written: frozenset
    loaded: frozenset
    loaded_kernels: frozenset
    computed: frozenset
    patches: frozenset
    footprint: int
    duration: float
    ops: int

    def to_record(self) -> dict:
        return {
            "step": self.index,
            "kind": self.kind,
            "loads": len(self.loaded),
            "kernel_loads": len(self.loaded_kernels),
            "writes": _positions(self.written),
            "frees": len(self.freed),
            "computed": len(self.computed),
            "footprint": self.footprint,
            "duration": self.duration,
        }


@dataclass
class Metrics:
    duration: float
    step_footprints: list[int]
    peak_footprint: int
    load_traffic: int
    kernel_traffic: int
    write_traffic: int
    n_steps: int
    traces: list[StepTrace] = field(default_factory=list, repr=False)


@dataclass
class ValidationReport:
    violations: list[Violation]
    metrics: Metrics | None = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> set[str]:
        return {v.kind for v in self.violations}

    def to_dict(self) -> dict:
        return {"ok": self.ok,
                "violations": [{"kind": v.kind, "step": v.step, "detail": v.detail}
                               for v in self.violations]}


def _positions(outputs: Iterable[OutputId]) -> int:
    return len({(o.i, o.j) for o in outputs})


def step_duration(step: Step, includes_compute: bool, hw: HardwareSpec,
                  layer: LayerSpec | None = None) -> float:
    """Cycles for one step: loads and writes per spatial unit plus one compute."""
    cost = len(step.load_inp) * hw.t_l
    if hw.count_kernel_load and step.load_ker:
        if layer is None:
            raise ValueError("pricing kernel loads needs the layer")
        cost += len(step.load_ker) * layer.h_k * layer.w_k * hw.t_l
    if hw.count_write_back:
        cost += _positions(step.write) * hw.t_w
    if includes_compute:
        cost += hw.t_acc
    return cost


def _select_outputs(state_inp, state_ker, computed, step, layer, flush):
    """Outputs produced by a6 and the patches they come from."""
    if flush:
        return set(), set()
    candidates = step.compute if step.compute is not None else layer.patches()
    outputs, patches = set(), set()
    for p in candidates:
        if not layer.footprint(p) <= state_inp:
            continue
        new = {OutputId(l, p.i, p.j) for l in state_ker} - computed
        if step.compute is None and not new:
            continue
        outputs |= new
        patches.add(p)
    return outputs, patches


def _apply(state: MemoryState, step: Step, index: int, layer: LayerSpec,
           hw: HardwareSpec, flush=False):
    """Run one step; never raises on semantic violations, reports them."""
    bad: list[Violation] = []

    def flag(kind, detail):
        bad.append(Violation(kind, index, detail))

    # a1, a2
    missing = step.free_inp - state.inp
    if missing:
        flag("free_absent", f"freeing {len(missing)} non-resident pixels, e.g. {min(missing)}")
    missing = step.free_ker - state.ker
    if missing:
        flag("free_absent", f"freeing non-resident kernels {sorted(missing)}")
    inp = state.inp - step.free_inp
    ker = state.ker - step.free_ker
    # a3
    missing = step.write - state.out
    if missing:
        never = missing - state.computed
        example = min(never or missing)
        what = "never computed" if never else "already written back"
        flag("write_uncomputed", f"writing {len(missing)} non-resident outputs ({what}), e.g. {example}")
    out = state.out - step.write
    # a4, a5
    dup = step.load_inp & inp
    if dup:
        flag("redundant_load", f"{len(dup)} loaded pixels already resident, e.g. {min(dup)}")
    dup = step.load_ker & ker
    if dup:
        flag("redundant_load", f"kernels {sorted(dup)} already resident")
    inp = inp | step.load_inp
    ker = ker | step.load_ker
    # a6
    if step.compute is not None and not flush:
        for p in sorted(step.compute):
            if not layer.footprint(p) <= inp:
                flag("compute_not_resident", f"footprint of {p} not resident")
            if not ker:
                flag("compute_not_resident", f"no kernel resident for {p}")
    produced, patches = _select_outputs(inp, ker, state.computed, step, layer, flush)
    if step.compute is not None:
        again = {OutputId(l, p.i, p.j) for p in step.compute for l in ker} & state.computed
        if again:
            flag("duplicate_compute", f"{len(again)} outputs computed twice, e.g. {min(again)}")
    ops = len(produced) * nb_op_value(layer)
    if ops > hw.nbop_pe:
        flag("ops_exceeded", f"{ops} MAC operations > nbop_PE={hw.nbop_pe}")
    used_pixels: set[PixelId] = set()
    for p in patches:
        used_pixels |= layer.footprint(p)
    unused = step.load_inp - used_pixels
    if unused:
        flag("load_not_consumed", f"{len(unused)} loaded pixels unused by the compute, e.g. {min(unused)}")
    unused_k = step.load_ker - {o.l for o in produced}
    if unused_k:
        flag("load_not_consumed", f"loaded kernels {sorted(unused_k)} unused by the compute")
    out = out | produced
    new = MemoryState(frozenset(inp), frozenset(ker), frozenset(out),
                      state.computed | produced)
    footprint = new.elements(layer)
    if footprint > hw.size_mem:
        flag("capacity_exceeded", f"footprint {footprint} > size_MEM={hw.size_mem}")
    trace = StepTrace(
        index=index, kind="flush" if flush else "step",
        freed=step.free_inp, freed_kernels=step.free_ker, written=step.write,
        loaded=step.load_inp, loaded_kernels=step.load_ker,
        computed=frozenset(produced), patches=frozenset(patches),
        footprint=footprint,
        duration=step_duration(step, bool(produced), hw, layer), ops=ops)
    return new, trace, bad


def execute_step(state: MemoryState, step: Step, layer: LayerSpec, hw: HardwareSpec,
                 dram=None, index: int = 1, flush: bool = False):
    """Apply ``step`` to ``state``; raise the first semantic violation.

    ``dram``, when given, is a :class:`Dram` whose output image receives
    the written values.
    """
    new, trace, bad = _apply(state, step, index, layer, hw, flush)
    if bad:
        v = bad[0]
        raise errors.STEP_ERRORS.get(v.kind, errors.StepError)(v.detail, step=v.step, kind=v.kind)
    if dram is not None:
        dram.commit(trace)
    return new, trace


def _walk(strategy: Strategy, layer: LayerSpec, hw: HardwareSpec):
    """Yield (state, trace, violations) for each step then the flush."""
    state = MemoryState()
    n = len(strategy.steps)
    for idx, step in enumerate(strategy.steps, start=1):
        state, trace, bad = _apply(state, step, idx, layer, hw)
        yield state, trace, bad
    state, trace, bad = _apply(state, strategy.flush, max(n, 1), layer, hw, flush=True)
    yield state, trace, bad


def _metrics(traces: list[StepTrace]) -> Metrics:
    steps = [t for t in traces if t.kind == "step"]
    footprints = [t.footprint for t in steps]
    return Metrics(
        duration=sum(t.duration for t in traces),
        step_footprints=footprints,
        peak_footprint=max(footprints, default=0),
        load_traffic=sum(len(t.loaded) for t in traces),
        kernel_traffic=sum(len(t.loaded_kernels) for t in traces),
        write_traffic=sum(_positions(t.written) for t in traces),
        n_steps=len(steps),
        traces=traces)


def simulate(strategy: Strategy, layer: LayerSpec, hw: HardwareSpec) -> Metrics:
    """Symbolic run that ignores violations; metrics only."""
    return _metrics([trace for _, trace, _ in _walk(strategy, layer, hw)])


def strategy_duration(strategy: Strategy, layer: LayerSpec, hw: HardwareSpec) -> float:
    return simulate(strategy, layer, hw).duration


def validate_strategy(strategy: Strategy, layer: LayerSpec, hw: HardwareSpec,
                      nb_data_reload: int = 2) -> ValidationReport:
    violations: list[Violation] = []
    traces = []
    pixel_loads: Counter = Counter()
    kernel_loads: Counter = Counter()
    writes: Counter = Counter()
    state = MemoryState()
    for state, trace, bad in _walk(strategy, layer, hw):
        violations += bad
        traces.append(trace)
        pixel_loads.update(trace.loaded)
        kernel_loads.update(trace.loaded_kernels)
        writes.update(trace.written)
    for what, counts in (("pixel", pixel_loads), ("kernel", kernel_loads)):
        for item, count in sorted(counts.items()):
            if count > nb_data_reload:
                violations.append(Violation(
                    "reload_exceeded", None,
                    f"{what} {item} loaded {count} times > {nb_data_reload}"))
    if not state.is_empty:
        violations.append(Violation(
            "final_memory_nonempty", None,
            f"{len(state.inp)} pixels, {len(state.ker)} kernels, "
            f"{len(state.out)} outputs left on chip"))
    all_outputs = {OutputId(l, i, j) for l in range(layer.c_out)
                   for i in range(layer.h_out) for j in range(layer.w_out)}
    unwritten = all_outputs - set(writes)
    if unwritten:
        violations.append(Violation(
            "output_not_written", None,
            f"{len(unwritten)} outputs never written, e.g. {min(unwritten)}"))
    twice = sorted(o for o, c in writes.items() if c > 1)
    if twice:
        violations.append(Violation(
            "output_written_twice", None, f"{len(twice)} outputs written more than once, e.g. {twice[0]}"))
    needed = dram_requirement(layer)
    if needed > hw.dram_size:
        violations.append(Violation(
            "dram_capacity", None, f"layer needs {needed} DRAM elements > {hw.dram_size}"))
    return ValidationReport(violations, _metrics(traces))


def dram_requirement(layer: LayerSpec) -> int:
    return (layer.c_in * layer.h_in * layer.w_in + layer.n_kernels * layer.kernel_size
            + layer.c_out * layer.h_out * layer.w_out)


class Dram:
    """Off-chip image of the input, the kernels and the output, plus the
    on-chip copies the accelerator computes from."""

    def __init__(self, input: Tensor3, kernels: Sequence[Tensor3], layer: LayerSpec):
        check_operands(input, kernels, layer)
        self.layer = layer
        self.input = input.array
        self.kernels = np.stack([k.array for k in kernels])
        self.output = np.full((layer.c_out, layer.h_out, layer.w_out), np.nan)
        self.onchip_inp: dict[PixelId, np.ndarray] = {}
        self.onchip_ker: dict[int, np.ndarray] = {}
        self.onchip_out: dict[OutputId, float] = {}

    def commit(self, trace: StepTrace):
        layer = self.layer
        for px in trace.freed:
            self.onchip_inp.pop(px, None)
        for k in trace.freed_kernels:
            self.onchip_ker.pop(k, None)
        for o in trace.written:
            self.output[o] = self.onchip_out.pop(o)
        for px in trace.loaded:
            self.onchip_inp[px] = self.input[:, px.h, px.w].copy()
        for k in trace.loaded_kernels:
            self.onchip_ker[k] = self.kernels[k].copy()
        for o in sorted(trace.computed):
            h0, w0 = o.i * layer.s_h, o.j * layer.s_w
            window = np.empty((layer.c_in, layer.h_k, layer.w_k))
            for dh in range(layer.h_k):
                for dw in range(layer.w_k):
                    window[:, dh, dw] = self.onchip_inp[PixelId(h0 + dh, w0 + dw)]
            self.onchip_out[o] = float(np.sum(window * self.onchip_ker[o.l]))


def run_and_verify(strategy: Strategy, input: Tensor3, kernels: Sequence[Tensor3],
                   layer: LayerSpec, hw: HardwareSpec):
    """Execute every step numerically and compare with the reference.

    Returns the assembled output and the run metrics.
    """
    dram = Dram(input, kernels, layer)
    state = MemoryState()
    traces = []
    n = len(strategy.steps)
    for idx, step in enumerate(strategy.steps, start=1):
        state, trace = execute_step(state, step, layer, hw, dram, index=idx)
        traces.append(trace)
    state, trace = execute_step(state, strategy.flush, layer, hw, dram,
                                index=max(n, 1), flush=True)
    traces.append(trace)
    result = dram.output
    expected = reference_convolution(input, kernels, layer).array
    if not np.array_equal(result, expected):
        bad = np.argwhere(~(result == expected))
        first = tuple(int(x) for x in bad[0])
        raise errors.MismatchError(
            f"{len(bad)} output values differ from the reference, first at {first}: "
            f"got {result[first]}, expected {expected[first]}")
    return Tensor3.from_array(result), _metrics(traces)


def write_trace(traces: Sequence[StepTrace], stream):
    """One JSON record per line, keys in a fixed order."""
    for t in traces:
        stream.write(json.dumps(t.to_record()) + "\n")
