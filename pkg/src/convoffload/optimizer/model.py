"""Integer linear model of the S1 grouping problem.

Variables, all binary, for patch ``i``, pixel ``j`` (2D, row-major) and
group ``k`` in ``0..K-1``:

    Pg[i,k]    patch i belongs to group k
    pxlg[j,k]  pixel j is in the footprint of group k   (OR of Pg)
    ovlp[j,k]  pixel j is in groups k and k-1            (AND, 0 for k=0)
    pxlI[j,k]  pixel j is loaded at group k              (pxlg AND NOT ovlp)

Constraints are generated lazily as ``(name, {var: coef}, sense, rhs)``.
The load term of the objective is linear; the step term ``n * t_acc`` is
constant (``K * t_acc``) whenever every group is used, which holds for
``K = K_min``. :meth:`IlpModel.objective` counts the groups actually used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Mapping

from ..conv_core import LayerSpec
from ..errors import ScheduleError
from ..exec_model import HardwareSpec
from ..strategies import GroupSchedule, s1_params

BLOCKS = ("Pg", "pxlg", "ovlp", "pxlI")


@dataclass(frozen=True)
class IlpModel:
    layer: LayerSpec
    n_groups: int
    nb_patches_max: int
    nb_data_reload: int
    size_mem: int
    t_l: float
    t_acc: float

    # --- constants -------------------------------------------------------
    @cached_property
    def pxl_in_p(self) -> frozenset[tuple[int, int]]:
        """(patch id, pixel id) pairs."""
        layer = self.layer
        return frozenset((layer.patch_id(p), layer.pixel_id(px))
                         for p in layer.patches() for px in layer.footprint(p))

    @cached_property
    def patches_of_pixel(self) -> tuple[tuple[int, ...], ...]:
        by_pixel: list[list[int]] = [[] for _ in range(self.layer.n_pixels)]
        for i, j in sorted(self.pxl_in_p):
            by_pixel[j].append(i)
        return tuple(tuple(x) for x in by_pixel)

    @property
    def n_patches(self) -> int:
        return self.layer.n_patches

    @property
    def n_pixels(self) -> int:
        return self.layer.n_pixels

    # --- variables -------------------------------------------------------
    @property
    def n_variables(self) -> int:
        return self.n_groups * (3 * self.n_pixels + self.n_patches)

    def var(self, block: str, a: int, k: int) -> int:
        """Column index of ``block[a, k]``."""
        P, J, K = self.n_patches, self.n_pixels, self.n_groups
        if not 0 <= k < K:
            raise IndexError(f"group {k} out of range")
        if block == "Pg":
            return k * P + a
        offset = K * P + BLOCKS[1:].index(block) * K * J
        return offset + k * J + a

    def var_name(self, index: int) -> str:
        P, J, K = self.n_patches, self.n_pixels, self.n_groups
        if index < K * P:
            k, i = divmod(index, P)
            return f"Pg_{i}_{k}"
        rest = index - K * P
        b, rest = divmod(rest, K * J)
        k, j = divmod(rest, J)
        return f"{BLOCKS[1 + b]}_{j}_{k}"

    # --- constraints -----------------------------------------------------
    def constraints(self) -> Iterator[tuple[str, dict[int, float], str, float]]:
        v = self.var
        P, J, K = self.n_patches, self.n_pixels, self.n_groups
        layer = self.layer
        for i in range(P):
            yield f"assign_{i}", {v("Pg", i, k): 1 for k in range(K)}, "=", 1
        for k in range(K):
            yield f"cap_{k}", {v("Pg", i, k): 1 for i in range(P)}, "<=", self.nb_patches_max
        for k in range(K):
            for j in range(J):
                pats = self.patches_of_pixel[j]
                for i in pats:
                    yield f"or_lb_{j}_{k}_{i}", {v("pxlg", j, k): 1, v("Pg", i, k): -1}, ">=", 0
                row = {v("pxlg", j, k): 1}
                for i in pats:
                    row[v("Pg", i, k)] = -1
                yield f"or_ub_{j}_{k}", row, "<=", 0
        for j in range(J):
            yield f"ovlp0_{j}", {v("ovlp", j, 0): 1}, "=", 0
        for k in range(1, K):
            for j in range(J):
                o, g, gp = v("ovlp", j, k), v("pxlg", j, k), v("pxlg", j, k - 1)
                yield f"and_a_{j}_{k}", {o: 1, g: -1}, "<=", 0
                yield f"and_b_{j}_{k}", {o: 1, gp: -1}, "<=", 0
                yield f"and_c_{j}_{k}", {o: 1, g: -1, gp: -1}, ">=", -1
        for k in range(K):
            for j in range(J):
                s, g, o = v("pxlI", j, k), v("pxlg", j, k), v("ovlp", j, k)
                yield f"slice_a_{j}_{k}", {s: 1, g: -1}, "<=", 0
                yield f"slice_b_{j}_{k}", {s: 1, o: 1}, "<=", 1
                yield f"slice_c_{j}_{k}", {s: 1, g: -1, o: 1}, ">=", 0
        for j in range(J):
            yield f"reload_{j}", {v("pxlI", j, k): 1 for k in range(K)}, "<=", self.nb_data_reload
        kernels = layer.c_out * layer.kernel_size
        for k in range(K):
            row = {v("pxlg", j, k): layer.c_in for j in range(J)}
            for i in range(P):
                row[v("Pg", i, k)] = layer.c_out
            yield f"mem_{k}", row, "<=", self.size_mem - kernels

    def objective_coefficients(self) -> dict[int, float]:
        return {self.var("pxlI", j, k): self.t_l
                for k in range(self.n_groups) for j in range(self.n_pixels)}

    @property
    def objective_constant(self) -> float:
        return self.n_groups * self.t_acc

    # --- assignments -----------------------------------------------------
    def check(self, values: Mapping[int, int] | list[int]) -> list[str]:
        """Names of the constraints violated by a full 0/1 assignment."""
        get = values.__getitem__
        bad = []
        for name, row, sense, rhs in self.constraints():
            lhs = sum(c * get(x) for x, c in row.items())
            if (sense == "=" and lhs != rhs) or (sense == "<=" and lhs > rhs) \
                    or (sense == ">=" and lhs < rhs):
                bad.append(name)
        for x in range(self.n_variables):
            if get(x) not in (0, 1):
                bad.append(f"binary_{self.var_name(x)}")
        return bad

    def objective(self, values) -> float:
        loads = sum(values[x] for x in self.objective_coefficients())
        used = sum(1 for k in range(self.n_groups)
                   if any(values[self.var("Pg", i, k)] for i in range(self.n_patches)))
        return self.t_l * loads + self.t_acc * used

    def size_i_slice(self, values, k: int) -> int:
        return sum(values[self.var("pxlI", j, k)] for j in range(self.n_pixels))

    def nb_pxl_ovlp(self, values, k: int) -> int:
        return sum(values[self.var("ovlp", j, k)] for j in range(self.n_pixels))

    def size_group(self, values, k: int) -> int:
        return sum(values[self.var("pxlg", j, k)] for j in range(self.n_pixels))

    def to_lp(self, stream):
        """Write the model in CPLEX LP text format."""
        name = self.var_name

        def terms(row):
            parts = []
            for x, c in sorted(row.items()):
                sign = "-" if c < 0 else "+"
                mag = abs(c)
                coef = "" if mag == 1 else f"{mag:g} "
                parts.append(f"{sign} {coef}{name(x)}")
            text = " ".join(parts)
            return text[2:] if text.startswith("+ ") else text

        stream.write(f"\\ S1 grouping model, K={self.n_groups}, "
                     f"constant objective offset {self.objective_constant:g}\n")
        stream.write("Minimize\n obj: " + _wrap(terms(self.objective_coefficients())) + "\n")
        stream.write("Subject To\n")
        for cname, row, sense, rhs in self.constraints():
            stream.write(f" {cname}: {_wrap(terms(row))} {sense} {rhs:g}\n")
        stream.write("Binaries\n")
        for x in range(self.n_variables):
            stream.write(f" {name(x)}\n")
        stream.write("End\n")


def _wrap(text: str, width: int = 200) -> str:
    if len(text) <= width:
        return text
    out, line = [], ""
    for token in text.split(" "):
        if len(line) + len(token) + 1 > width:
            out.append(line)
            line = token
        else:
            line = f"{line} {token}" if line else token
    out.append(line)
    return "\n   ".join(out)


def build_model(layer: LayerSpec, hw: HardwareSpec, n_groups: int | None = None,
                nb_data_reload: int = 2, nb_patches_max: int | None = None) -> IlpModel:
    """Model with ``n_groups`` groups (default K_min)."""
    params = s1_params(layer, hw, nb_patches_max)
    if n_groups is None:
        n_groups = params.k_min
    if not params.k_min <= n_groups <= params.k_max:
        raise ValueError(f"K={n_groups} outside [{params.k_min}, {params.k_max}]")
    return IlpModel(layer, n_groups, params.nb_patches_max, nb_data_reload,
                    hw.size_mem, hw.t_l, hw.t_acc)


def schedule_to_mip_start(schedule: GroupSchedule, model: IlpModel) -> list[int]:
    """Full 0/1 assignment for ``schedule``; trailing groups stay empty."""
    layer = model.layer
    if len(schedule) > model.n_groups:
        raise ScheduleError(f"schedule has {len(schedule)} groups > K={model.n_groups}")
    values = [0] * model.n_variables
    v = model.var
    prev: set[int] = set()
    for k in range(model.n_groups):
        group = schedule.groups[k] if k < len(schedule) else frozenset()
        pixels = set()
        for p in group:
            values[v("Pg", layer.patch_id(p), k)] = 1
            pixels |= {layer.pixel_id(px) for px in layer.footprint(p)}
        for j in pixels:
            values[v("pxlg", j, k)] = 1
            if j in prev:
                values[v("ovlp", j, k)] = 1
            else:
                values[v("pxlI", j, k)] = 1
        prev = pixels
    return values


def decode_assignment(values, model: IlpModel) -> GroupSchedule:
    """Groups in index order, empty groups dropped."""
    layer = model.layer
    groups = []
    for k in range(model.n_groups):
        g = frozenset(layer.patch_at(i) for i in range(model.n_patches)
                      if values[model.var("Pg", i, k)] > 0.5)
        if g:
            groups.append(g)
    return GroupSchedule(tuple(groups), layer)


def k_min(layer: LayerSpec, nb_patches_max: int) -> int:
    return math.ceil(layer.n_patches / nb_patches_max)
