"""Exact and heuristic search for the S1 grouping model.

The search works on ordered lists of non-empty groups. Pixel sets are
Python ints used as bitsets, so a group's footprint is an OR of patch masks
and the pixels loaded at step k are ``fp[k] & ~fp[k-1]``.

Branch-and-bound picks the next group in execution order, so the load of
every placed group is exact at each node. Bound at a node:

    t_l * (loads so far + pixels still needed but not resident)
        + t_acc * (groups so far + ceil(remaining patches / m))

After ``polish_after`` seconds (or ``node_limit`` nodes) the tree search
stops and an iterated local search polishes the incumbent: relocate or swap
patches between groups, reverse or move whole groups, accept strict
improvements, kick when stuck.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from ..conv_core import LayerSpec, Patch
from ..errors import Infeasible, InstanceTooLarge, SolverTimeout
from ..exec_model import HardwareSpec, simulate
from ..strategies import (GroupSchedule, boustrophedon_order, compile_schedule,
                          gen_row_by_row, gen_zigzag, row_major_order)
from .model import IlpModel

log = logging.getLogger(__name__)

PROVED = "proved-optimal"
FEASIBLE = "feasible"
TIMEOUT = "timeout"


@dataclass
class Solution:
    schedule: GroupSchedule
    objective: float
    status: str
    wall_time: float
    start_objective: float | None = None
    lower_bound: float | None = None
    nodes: int = 0
    polish_rounds: int = 0
    extras: dict = field(default_factory=dict)

    @property
    def gain(self) -> float | None:
        """Relative improvement over the MIP start, in percent."""
        if not self.start_objective:
            return None
        return 100.0 * (self.start_objective - self.objective) / self.start_objective


def solution_to_schedule(sol: Solution) -> GroupSchedule:
    return sol.schedule


class Incumbent:
    """Best known (cost, assignment, groups); updates are atomic and monotone."""

    def __init__(self):
        self._lock = threading.Lock()
        self.cost = math.inf
        self.key: tuple = ()
        self.groups: list[tuple[int, ...]] | None = None

    def offer(self, cost, key, groups) -> bool:
        with self._lock:
            if self.groups is not None and (cost, key) >= (self.cost, self.key):
                return False
            self.cost, self.key = cost, key
            self.groups = [tuple(sorted(g)) for g in groups]
            return True


def _popcount(x: int) -> int:
    return x.bit_count()


class _Instance:
    """Bitset view of an IlpModel."""

    def __init__(self, model: IlpModel):
        self.model = model
        layer = model.layer
        self.layer = layer
        self.n = layer.n_patches
        self.m = model.nb_patches_max
        self.K = model.n_groups
        self.R = model.nb_data_reload
        self.t_l = model.t_l
        self.t_acc = model.t_acc
        masks = [0] * self.n
        for i, j in model.pxl_in_p:
            masks[i] |= 1 << j
        self.masks = masks
        self.kernels = layer.c_out * layer.kernel_size
        self.c_in, self.c_out = layer.c_in, layer.c_out
        self.size_mem = model.size_mem
        self.all_pixels = 0
        for x in masks:
            self.all_pixels |= x

    def fp(self, group: Iterable[int]) -> int:
        out = 0
        for i in group:
            out |= self.masks[i]
        return out

    def mem_ok(self, fp: int, size: int) -> bool:
        return _popcount(fp) * self.c_in + self.kernels + size * self.c_out <= self.size_mem

    def loads(self, fps: Sequence[int]) -> int:
        prev, total = 0, 0
        for f in fps:
            total += _popcount(f & ~prev)
            prev = f
        return total

    def reload_ok(self, fps: Sequence[int]) -> bool:
        # levels[r]: pixels loaded at least r+1 times
        levels = [0] * (self.R + 1)
        prev = 0
        for f in fps:
            new = f & ~prev
            for r in range(self.R, 0, -1):
                levels[r] |= levels[r - 1] & new
            levels[0] |= new
            prev = f
        return levels[self.R] == 0

    def cost(self, fps: Sequence[int]) -> float:
        return self.t_l * self.loads(fps) + self.t_acc * len(fps)

    def feasible(self, groups: Sequence[Sequence[int]]) -> bool:
        if len(groups) > self.K or any(not g or len(g) > self.m for g in groups):
            return False
        fps = [self.fp(g) for g in groups]
        return (all(self.mem_ok(f, len(g)) for f, g in zip(fps, groups))
                and self.reload_ok(fps))

    def key(self, groups) -> tuple[int, ...]:
        where = [0] * self.n
        for k, g in enumerate(groups):
            for i in g:
                where[i] = k
        return tuple(where)

    def lower_bound(self) -> float:
        return self.t_l * _popcount(self.all_pixels) + self.t_acc * math.ceil(self.n / self.m)

    def to_schedule(self, groups) -> GroupSchedule:
        layer = self.layer
        return GroupSchedule(tuple(frozenset(layer.patch_at(i) for i in g) for g in groups), layer)

    def from_schedule(self, schedule: GroupSchedule) -> list[tuple[int, ...]]:
        return [tuple(sorted(self.layer.patch_id(p) for p in g)) for g in schedule.groups]


class _Stop(Exception):
    pass


def _branch_and_bound(inst: _Instance, inc: Incumbent, deadline: float,
                      node_limit: int | None, max_children: int = 20000):
    """Depth-first search; returns (closed, nodes)."""
    nodes = 0
    m, K, R = inst.m, inst.K, inst.R
    t_l, t_acc = inst.t_l, inst.t_acc

    def bound(loads, rem_mask_pixels, prev_fp, used, n_rem):
        return (t_l * (loads + _popcount(rem_mask_pixels & ~prev_fp))
                + t_acc * (used + math.ceil(n_rem / m)))

    def visit(rem, groups, fps, loads, levels, used):
        nonlocal nodes
        nodes += 1
        if time.perf_counter() > deadline or (node_limit is not None and nodes > node_limit):
            raise _Stop
        if not rem:
            cost = t_l * loads + t_acc * used
            inc.offer(cost, inst.key(groups), groups)
            return
        prev = fps[-1] if fps else 0
        need = inst.fp(rem)
        if bound(loads, need, prev, used, len(rem)) > inc.cost:
            return
        n_rem = len(rem)
        smallest = max(1, n_rem - (K - used - 1) * m)
        if smallest > m:
            return
        total = sum(math.comb(n_rem, s) for s in range(smallest, min(m, n_rem) + 1))
        cand = []
        gen = (c for s in range(min(m, n_rem), smallest - 1, -1)
               for c in itertools.combinations(rem, s))
        for combo in gen:
            f = inst.fp(combo)
            if not inst.mem_ok(f, len(combo)):
                continue
            new = f & ~prev
            if levels[R - 1] & new:
                continue
            new_levels = levels[:]
            for r in range(R, 0, -1):
                new_levels[r] |= new_levels[r - 1] & new
            new_levels[0] |= new
            rest = tuple(i for i in rem if i not in combo)
            child_loads = loads + _popcount(new)
            item = (combo, f, child_loads, new_levels, rest)
            if total > max_children:
                # too many to rank: explore in generation order
                visit(rest, groups + [combo], fps + [f], child_loads, new_levels, used + 1)
                continue
            lb = bound(child_loads, inst.fp(rest), f, used + 1, len(rest))
            cand.append((lb, combo, item))
        cand.sort(key=lambda c: (c[0], c[1]))
        for lb, _, (combo, f, child_loads, new_levels, rest) in cand:
            if lb > inc.cost:
                break
            visit(rest, groups + [combo], fps + [f], child_loads, new_levels, used + 1)

    try:
        visit(tuple(range(inst.n)), [], [], 0, [0] * (R + 1), 0)
    except _Stop:
        return False, nodes
    return True, nodes


class _Polisher:
    """Iterated first-improvement local search over group sequences."""

    def __init__(self, inst: _Instance, groups, rng: random.Random):
        self.inst = inst
        self.rng = rng
        self.groups = [set(g) for g in groups]
        self.fps = [inst.fp(g) for g in self.groups]
        self.cost = inst.cost(self.fps)

    def snapshot(self):
        return [tuple(sorted(g)) for g in self.groups]

    def _ov(self, a: int, b: int) -> int:
        return _popcount(a & b)

    def _delta_groups(self, changes: dict[int, int]) -> int:
        """Load change when the footprints at the given positions change."""
        fps = self.fps
        touched_pairs = set()
        for k in changes:
            if k > 0:
                touched_pairs.add(k)
            if k + 1 < len(fps):
                touched_pairs.add(k + 1)

        def f(k, new):
            return changes.get(k, fps[k]) if new else fps[k]

        delta = 0
        for k, nf in changes.items():
            delta += _popcount(nf) - _popcount(fps[k])
        for k in touched_pairs:
            delta -= self._ov(f(k - 1, True), f(k, True)) - self._ov(fps[k - 1], fps[k])
        return delta

    def _accept(self, new_groups: list[set], new_fps: list[int]) -> bool:
        inst = self.inst
        if not inst.reload_ok(new_fps):
            return False
        cost = inst.cost(new_fps)
        if cost < self.cost:
            self.groups, self.fps, self.cost = new_groups, new_fps, cost
            return True
        return False

    def improve_once(self) -> bool:
        inst = self.inst
        m, t_l = inst.m, inst.t_l
        G = len(self.groups)
        # relocate one patch
        for a in range(G):
            for p in sorted(self.groups[a]):
                rest = self.groups[a] - {p}
                fa = inst.fp(rest)
                for b in range(G):
                    if b == a or len(self.groups[b]) >= m:
                        continue
                    fb = self.fps[b] | inst.masks[p]
                    if not inst.mem_ok(fb, len(self.groups[b]) + 1):
                        continue
                    if rest:
                        d = t_l * self._delta_groups({a: fa, b: fb})
                    else:
                        d = -1  # group disappears: evaluate exactly below
                    if d < 0:
                        ng = [set(g) for g in self.groups]
                        nf = list(self.fps)
                        ng[a], ng[b] = rest, ng[b] | {p}
                        nf[a], nf[b] = fa, fb
                        if not rest:
                            del ng[a], nf[a]
                        if self._accept(ng, nf):
                            return True
        # swap two patches
        for a in range(G):
            for b in range(a + 1, G):
                ga, gb = self.groups[a], self.groups[b]
                for p in sorted(ga):
                    base_a = ga - {p}
                    for q in sorted(gb):
                        fa = inst.fp(base_a | {q})
                        fb = inst.fp((gb - {q}) | {p})
                        d = self._delta_groups({a: fa, b: fb})
                        if d < 0 and inst.mem_ok(fa, len(ga)) and inst.mem_ok(fb, len(gb)):
                            ng = [set(g) for g in self.groups]
                            nf = list(self.fps)
                            ng[a], ng[b] = base_a | {q}, (gb - {q}) | {p}
                            nf[a], nf[b] = fa, fb
                            if self._accept(ng, nf):
                                return True
        # reverse a segment of groups (only the two boundary overlaps change)
        fps = self.fps
        for a in range(G):
            for b in range(a + 1, G):
                old = (self._ov(fps[a - 1], fps[a]) if a > 0 else 0) + \
                      (self._ov(fps[b], fps[b + 1]) if b + 1 < G else 0)
                new = (self._ov(fps[a - 1], fps[b]) if a > 0 else 0) + \
                      (self._ov(fps[a], fps[b + 1]) if b + 1 < G else 0)
                if new > old:
                    ng = self.groups[:a] + self.groups[a:b + 1][::-1] + self.groups[b + 1:]
                    nf = fps[:a] + fps[a:b + 1][::-1] + fps[b + 1:]
                    if self._accept([set(g) for g in ng], list(nf)):
                        return True
        # move one group elsewhere
        for a in range(G):
            for b in range(G):
                if b == a or b == a + 1:
                    continue
                order = list(range(G))
                order.pop(a)
                order.insert(b if b < a else b - 1, a)
                nf = [fps[k] for k in order]
                if inst.cost(nf) < self.cost:
                    if self._accept([set(self.groups[k]) for k in order], nf):
                        return True
        return False

    def descend(self, deadline: float) -> None:
        while time.perf_counter() < deadline and self.improve_once():
            pass

    def kick(self, strength: int = 2):
        """Random swaps between neighbouring groups; keeps feasibility."""
        inst = self.inst
        G = len(self.groups)
        if G < 2:
            return
        for _ in range(strength * 4):
            a = self.rng.randrange(G - 1)
            b = a + 1 if self.rng.random() < 0.7 else self.rng.randrange(G)
            if a == b:
                continue
            p = self.rng.choice(sorted(self.groups[a]))
            q = self.rng.choice(sorted(self.groups[b]))
            ng = [set(g) for g in self.groups]
            ng[a] = (ng[a] - {p}) | {q}
            ng[b] = (ng[b] - {q}) | {p}
            nf = list(self.fps)
            nf[a], nf[b] = inst.fp(ng[a]), inst.fp(ng[b])
            if not (inst.mem_ok(nf[a], len(ng[a])) and inst.mem_ok(nf[b], len(ng[b]))):
                continue
            if not inst.reload_ok(nf):
                continue
            self.groups, self.fps = ng, nf
            self.cost = inst.cost(nf)
            strength -= 1
            if strength <= 0:
                return


def band_orders(layer: LayerSpec) -> list[list[Patch]]:
    """Serpentine patch orders over horizontal and vertical bands.

    A band of ``b`` patch rows is swept column by column, alternating the
    vertical direction at each column and the sweep direction at each band.
    """
    H, W = layer.h_out, layer.w_out
    orders = []
    for transpose in (False, True):
        rows, cols = (W, H) if transpose else (H, W)
        for b in range(1, rows + 1):
            order = []
            for band, top in enumerate(range(0, rows, b)):
                band_rows = list(range(top, min(top + b, rows)))
                sweep = range(cols) if band % 2 == 0 else range(cols - 1, -1, -1)
                for c_idx, c in enumerate(sweep):
                    rr = band_rows if c_idx % 2 == 0 else band_rows[::-1]
                    for r in rr:
                        order.append(Patch(c, r) if transpose else Patch(r, c))
            orders.append(order)
    return orders


def primal_candidates(inst: _Instance) -> list[list[tuple[int, ...]]]:
    layer = inst.layer
    m = inst.m
    out = []
    orders = [row_major_order(layer), boustrophedon_order(layer)] + band_orders(layer)
    for order in orders:
        ids = [layer.patch_id(p) for p in order]
        groups = [tuple(ids[k:k + m]) for k in range(0, len(ids), m)]
        if inst.feasible(groups):
            out.append(groups)
    return out


def solve(model: IlpModel, mip_start: GroupSchedule | None = None,
          budget: float | None = None, polish_after: float = 60.0,
          node_limit: int | None = None, polish_rounds: int | None = None,
          seed: int = 0, primal_heuristics: bool = True) -> Solution:
    """Minimise ``t_l * sum(loads) + t_acc * steps`` over the model.

    ``budget`` caps the total wall time (``None``: unbounded). The tree
    search runs first and hands over to polishing after ``polish_after``
    seconds or ``node_limit`` nodes. ``polish_rounds`` caps the number of
    kick-and-descend rounds; it defaults to 200 without a time budget.
    """
    t0 = time.perf_counter()
    deadline = math.inf if budget is None else t0 + budget
    inst = _Instance(model)
    inc = Incumbent()
    start_cost = None
    if mip_start is not None:
        groups = inst.from_schedule(mip_start)
        if not inst.feasible(groups):
            raise ValueError("MIP start violates the model constraints")
        start_cost = inst.cost([inst.fp(g) for g in groups])
        inc.offer(start_cost, inst.key(groups), groups)
    lb = inst.lower_bound()

    closed, nodes = False, 0
    if inc.cost > lb:
        phase_end = min(deadline, t0 + polish_after)
        closed, nodes = _branch_and_bound(inst, inc, phase_end, node_limit)
    else:
        closed = True
    log.debug("tree search: closed=%s nodes=%d best=%s", closed, nodes, inc.cost)

    rounds = 0
    timed_out = False
    if not closed:
        if primal_heuristics:
            for groups in primal_candidates(inst):
                inc.offer(inst.cost([inst.fp(g) for g in groups]), inst.key(groups), groups)
        if inc.groups is None:
            if time.perf_counter() >= deadline:
                raise SolverTimeout("budget exhausted without a feasible solution")
            raise SolverTimeout("tree search stopped before finding a feasible solution")
        limit = polish_rounds if polish_rounds is not None else (200 if budget is None else None)
        pol = _Polisher(inst, inc.groups, random.Random(seed))
        pol.descend(deadline)
        inc.offer(pol.cost, inst.key(pol.groups), pol.groups)
        best_groups, best_cost = pol.snapshot(), pol.cost
        while inc.cost > lb and (limit is None or rounds < limit):
            if time.perf_counter() >= deadline:
                timed_out = True
                break
            rounds += 1
            pol.kick(strength=1 + rounds % 3)
            pol.descend(deadline)
            if pol.cost < best_cost:
                best_groups, best_cost = pol.snapshot(), pol.cost
                inc.offer(pol.cost, inst.key(pol.groups), pol.groups)
            elif pol.cost > best_cost:
                pol = _Polisher(inst, best_groups, pol.rng)
        if time.perf_counter() >= deadline:
            timed_out = True

    if inc.groups is None:
        raise Infeasible("no grouping satisfies the capacity, reload and step-count constraints")
    if closed or inc.cost <= lb:
        status = PROVED
    elif timed_out:
        status = TIMEOUT
    else:
        status = FEASIBLE
    return Solution(
        schedule=inst.to_schedule(inc.groups), objective=inc.cost, status=status,
        wall_time=time.perf_counter() - t0, start_objective=start_cost,
        lower_bound=inc.cost if status == PROVED else lb, nodes=nodes,
        polish_rounds=rounds)


def is_feasible(model: IlpModel, schedule: GroupSchedule) -> bool:
    """Whether ``schedule`` satisfies every constraint of ``model``."""
    inst = _Instance(model)
    return inst.feasible(inst.from_schedule(schedule))


def best_heuristic(layer: LayerSpec, group_size: int, inst_or_model) -> tuple[str, GroupSchedule]:
    """The better of Row-by-Row and ZigZag under the model objective."""
    inst = inst_or_model if isinstance(inst_or_model, _Instance) else _Instance(inst_or_model)
    best = None
    for name, gen in (("zigzag", gen_zigzag), ("rowbyrow", gen_row_by_row)):
        sched = gen(layer, group_size)
        groups = inst.from_schedule(sched)
        cost = inst.cost([inst.fp(g) for g in groups])
        if best is None or cost < best[0]:
            best = (cost, name, sched)
    return best[1], best[2]


def _ordered_partitions(items: tuple, max_size: int, max_groups: int):
    if not items:
        yield []
        return
    if max_groups == 0:
        return
    n = len(items)
    for s in range(1, min(max_size, n) + 1):
        for combo in itertools.combinations(items, s):
            rest = tuple(x for x in items if x not in combo)
            for tail in _ordered_partitions(rest, max_size, max_groups - 1):
                yield [combo] + tail


def brute_force_optimum(layer: LayerSpec, hw: HardwareSpec, n_groups: int, max_patches: int,
                        nb_data_reload: int = 2) -> Solution:
    """Enumerate every ordered partition and price it with the simulator.

    Independent of the solver: each candidate goes through
    :func:`compile_schedule` and the symbolic simulator with write-back and
    kernel loads excluded from the cost.
    """
    from dataclasses import replace

    if layer.n_patches > 9:
        raise InstanceTooLarge(f"{layer.n_patches} patches; brute force is limited to 9")
    t0 = time.perf_counter()
    pricing = replace(hw, count_write_back=False, count_kernel_load=False)
    patches = layer.patches()
    best = None
    for part in _ordered_partitions(tuple(range(len(patches))), max_patches, n_groups):
        sched = GroupSchedule(tuple(frozenset(patches[i] for i in g) for g in part), layer)
        try:
            strategy = compile_schedule(sched, layer, pricing, source="brute-force")
        except Exception:
            continue
        metrics = simulate(strategy, layer, pricing)
        counts: dict = {}
        for t in metrics.traces:
            for px in t.loaded:
                counts[px] = counts.get(px, 0) + 1
        if counts and max(counts.values()) > nb_data_reload:
            continue
        key = (metrics.duration, sched.assignment())
        if best is None or key < best[0]:
            best = (key, sched)
    if best is None:
        raise Infeasible("no ordered partition satisfies the constraints")
    return Solution(schedule=best[1], objective=best[0][0], status=PROVED,
                    wall_time=time.perf_counter() - t0)
