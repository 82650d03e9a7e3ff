"""Experiment configuration and the strategy CSV interchange format.

The configuration is a flat YAML mapping; every key maps to a field of
:class:`ExperimentConfig`. Strategy CSV files hold one row per group::

    step,patch_ids
    1,0;1
    2,2;3

with row-major patch ids separated by semicolons.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .conv_core import LayerSpec
from .errors import ParseError, ScheduleError
from .exec_model import HardwareSpec
from .strategies import GENERATORS, GroupSchedule

BUDGET_ENV = "CONVOFFLOAD_SOLVER_BUDGET"
STRATEGY_SOURCES = tuple(GENERATORS) + ("csv", "ilp")
CSV_HEADER = ["step", "patch_ids"]


@dataclass
class ExperimentConfig:
    # layer (input dims are after padding)
    c_in: int
    h_in: int
    w_in: int
    n_kernels: int
    h_k: int
    w_k: int
    s_h: int = 1
    s_w: int = 1
    pad_top: int = 0
    pad_bottom: int = 0
    pad_left: int = 0
    pad_right: int = 0
    # accelerator
    nbop_pe: int = 0
    size_mem: int = 0
    t_l: float = 1
    t_w: float = 1
    t_acc: float = 1
    dram_size: int = 10**12
    count_kernel_load: bool = False
    count_write_back: bool = True
    nb_data_reload: int = 2
    # strategy source
    strategy: str = "rowbyrow"
    group_size: int | None = None
    strategy_csv: str | None = None
    nb_patches_max: int | None = None
    # solver
    n_groups: str | int = "kmin"
    solver_budget: float = 60.0
    polish_after: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGY_SOURCES:
            raise ParseError(f"strategy must be one of {', '.join(STRATEGY_SOURCES)}, "
                             f"got {self.strategy!r}")
        if self.strategy == "csv":
            if not self.strategy_csv:
                raise ParseError("strategy 'csv' needs strategy_csv")
            if self.group_size is not None:
                raise ParseError("group_size is ignored by a CSV strategy; remove it")
        elif self.strategy_csv:
            raise ParseError(f"strategy_csv given but strategy is {self.strategy!r}")
        if self.strategy in ("rowbyrow", "zigzag") and self.group_size is None:
            raise ParseError(f"strategy {self.strategy!r} needs group_size")
        if self.n_groups != "kmin" and not (isinstance(self.n_groups, int) and self.n_groups > 0):
            raise ParseError(f"n_groups must be 'kmin' or a positive integer, got {self.n_groups!r}")

    def layer(self) -> LayerSpec:
        return LayerSpec(self.c_in, self.h_in, self.w_in, self.n_kernels, self.h_k, self.w_k,
                         self.s_h, self.s_w, self.pad_top, self.pad_bottom,
                         self.pad_left, self.pad_right)

    def hardware(self) -> HardwareSpec:
        return HardwareSpec(self.nbop_pe, self.size_mem, self.t_l, self.t_w, self.t_acc,
                            self.dram_size, self.count_kernel_load, self.count_write_back)

    def budget(self) -> float:
        env = os.environ.get(BUDGET_ENV)
        if env:
            try:
                return float(env)
            except ValueError:
                raise ParseError(f"{BUDGET_ENV}={env!r} is not a number") from None
        return self.solver_budget

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ParseError("configuration must be a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParseError(f"unknown configuration keys: {', '.join(unknown)}")
        try:
            cfg = cls(**data)
            cfg.layer()
            cfg.hardware()
        except TypeError as exc:
            raise ParseError(str(exc)) from None
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(str(exc)) from None
        return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from None
    cfg = ExperimentConfig.from_dict(data or {})
    if cfg.strategy_csv:
        csv_path = Path(cfg.strategy_csv)
        if not csv_path.is_absolute():
            csv_path = path.parent / csv_path
        if not csv_path.exists():
            raise ParseError(f"strategy_csv {cfg.strategy_csv} does not exist")
        cfg.strategy_csv = str(csv_path)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(dump_config(cfg), encoding="utf-8")


def write_schedule_csv(schedule: GroupSchedule, stream):
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for k, ids in enumerate(schedule.to_ids(), start=1):
        w.writerow([k, ";".join(str(i) for i in ids)])


def schedule_csv_text(schedule: GroupSchedule) -> str:
    buf = io.StringIO()
    write_schedule_csv(schedule, buf)
    return buf.getvalue()


def save_schedule_csv(schedule: GroupSchedule, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        write_schedule_csv(schedule, fh)


def read_schedule_csv(stream, layer: LayerSpec) -> GroupSchedule:
    rows = list(csv.reader(stream))
    if not rows or [c.strip() for c in rows[0]] != CSV_HEADER:
        raise ParseError(f"row 1: expected header {','.join(CSV_HEADER)}")
    groups = []
    for n, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError(f"row {n}: expected 2 fields, got {len(row)}")
        try:
            step = int(row[0])
            ids = [int(x) for x in row[1].split(";") if x.strip()]
        except ValueError:
            raise ParseError(f"row {n}: non-integer value in {','.join(row)!r}") from None
        if step != len(groups) + 1:
            raise ParseError(f"row {n}: step {step} out of sequence, expected {len(groups) + 1}")
        if not ids:
            raise ParseError(f"row {n}: empty group")
        for pid in ids:
            if not 0 <= pid < layer.n_patches:
                raise ParseError(f"row {n}: patch id {pid} out of range [0, {layer.n_patches})")
        groups.append(ids)
    try:
        return GroupSchedule.from_ids(groups, layer)
    except ScheduleError as exc:
        raise ParseError(f"invalid schedule: {exc}") from None


def load_schedule_csv(path, layer: LayerSpec) -> GroupSchedule:
    with open(path, encoding="utf-8", newline="") as fh:
        return read_schedule_csv(fh, layer)
