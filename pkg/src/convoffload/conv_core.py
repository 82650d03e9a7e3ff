"""Tensors, convolution layer geometry, the reference convolution and patches.

Conventions: tensors are channel-major (c, h, w); a *pixel* is a 2D spatial
input position carrying all input channels; patch ``P(i, j)`` is the input
window needed for output position (row ``i``, column ``j``) across every
output channel. Patches and pixels are linearised row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ShapeError


class PixelId(NamedTuple):
    h: int
    w: int


class Patch(NamedTuple):
    i: int
    j: int


class OutputId(NamedTuple):
    l: int  # noqa: E741
    i: int
    j: int


@dataclass(frozen=True, eq=False)
class Tensor3:
    """Dense C x H x W tensor; ``data`` is flat in channel-major order."""

    channels: int
    height: int
    width: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if data.size != self.channels * self.height * self.width:
            raise ShapeError(
                f"data has {data.size} values, expected "
                f"{self.channels}x{self.height}x{self.width}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "Tensor3":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim != 3:
            raise ShapeError(f"expected a 3D array, got shape {array.shape}")
        return cls(*array.shape, array)

    @classmethod
    def zeros(cls, channels, height, width) -> "Tensor3":
        return cls(channels, height, width, np.zeros(channels * height * width))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @property
    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape)

    def __getitem__(self, index):
        return self.array[index]

    def __eq__(self, other):
        if not isinstance(other, Tensor3):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)

    __hash__ = None


@dataclass(frozen=True)
class LayerSpec:
    """A 2D convolution layer on an already padded input.

    The ``pad_*`` fields only record how much zero padding was folded into
    ``h_in``/``w_in``; they play no part in the geometry.
    """

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

    def __post_init__(self):
        for name in ("c_in", "h_in", "w_in", "n_kernels", "h_k", "w_k", "s_h", "s_w"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("pad_top", "pad_bottom", "pad_left", "pad_right"):
            if getattr(self, name) < 0:
                raise ShapeError(f"{name} must be >= 0")
        if self.h_in < self.h_k or self.w_in < self.w_k:
            raise ShapeError(
                f"kernel {self.h_k}x{self.w_k} larger than input {self.h_in}x{self.w_in}")

    @property
    def c_out(self) -> int:
        return self.n_kernels

    @property
    def h_out(self) -> int:
        return (self.h_in - self.h_k) // self.s_h + 1

    @property
    def w_out(self) -> int:
        return (self.w_in - self.w_k) // self.s_w + 1

    @property
    def n_patches(self) -> int:
        return self.h_out * self.w_out

    @property
    def n_pixels(self) -> int:
        return self.h_in * self.w_in

    @property
    def kernel_size(self) -> int:
        """Scalars in one kernel."""
        return self.c_in * self.h_k * self.w_k

    def patch_id(self, p: Patch) -> int:
        return p.i * self.w_out + p.j

    def patch_at(self, pid: int) -> Patch:
        if not 0 <= pid < self.n_patches:
            raise IndexError(f"patch id {pid} out of range [0, {self.n_patches})")
        return Patch(*divmod(pid, self.w_out))

    def pixel_id(self, px: PixelId) -> int:
        return px.h * self.w_in + px.w

    def pixel_at(self, jid: int) -> PixelId:
        return PixelId(*divmod(jid, self.w_in))

    def patches(self) -> list[Patch]:
        """All patches in row-major order (the set X)."""
        return [Patch(i, j) for i in range(self.h_out) for j in range(self.w_out)]

    def outputs_of(self, p: Patch) -> list[OutputId]:
        return [OutputId(l, p.i, p.j) for l in range(self.c_out)]

    @cached_property
    def _footprints(self) -> dict[Patch, frozenset[PixelId]]:
        return {p: _window(p, self) for p in self.patches()}

    def footprint(self, p: Patch) -> frozenset[PixelId]:
        try:
            return self._footprints[p]
        except KeyError:
            raise ShapeError(f"{p} is not a patch of this layer") from None


def _window(p: Patch, layer: LayerSpec) -> frozenset[PixelId]:
    h0, w0 = layer.s_h * p.i, layer.s_w * p.j
    return frozenset(PixelId(h, w)
                     for h in range(h0, h0 + layer.h_k)
                     for w in range(w0, w0 + layer.w_k))


def output_dims(layer: LayerSpec) -> tuple[int, int, int]:
    return layer.c_out, layer.h_out, layer.w_out


def nb_op_value(layer: LayerSpec) -> int:
    """MAC operations needed for one output scalar."""
    return layer.c_in * layer.h_k * layer.w_k


def patch_set(layer: LayerSpec) -> list[Patch]:
    return layer.patches()


def patch_footprint(p: Patch, layer: LayerSpec) -> frozenset[PixelId]:
    return layer.footprint(p)


def group_footprint(group, layer: LayerSpec) -> frozenset[PixelId]:
    fp: set[PixelId] = set()
    for p in group:
        fp |= layer.footprint(p)
    return frozenset(fp)


def iter_pixels(layer: LayerSpec) -> Iterator[PixelId]:
    for h in range(layer.h_in):
        for w in range(layer.w_in):
            yield PixelId(h, w)


def pad_input(array, top=0, bottom=0, left=0, right=0) -> np.ndarray:
    """Zero-pad the two spatial axes of a C x H x W array."""
    return np.pad(np.asarray(array, dtype=np.float64),
                  ((0, 0), (top, bottom), (left, right)))


def check_operands(input: Tensor3, kernels: Sequence[Tensor3], layer: LayerSpec):
    if input.shape != (layer.c_in, layer.h_in, layer.w_in):
        raise ShapeError(f"input shape {input.shape} does not match layer "
                         f"{(layer.c_in, layer.h_in, layer.w_in)}")
    if len(kernels) != layer.n_kernels:
        raise ShapeError(f"got {len(kernels)} kernels, layer expects {layer.n_kernels}")
    for n, k in enumerate(kernels):
        if k.shape != (layer.c_in, layer.h_k, layer.w_k):
            raise ShapeError(f"kernel {n} has shape {k.shape}, expected "
                             f"{(layer.c_in, layer.h_k, layer.w_k)}")


def reference_convolution(input: Tensor3, kernels: Sequence[Tensor3],
                          layer: LayerSpec) -> Tensor3:
    """Strided cross-correlation of ``input`` with every kernel."""
    check_operands(input, kernels, layer)
    x = input.array
    weights = np.stack([k.array for k in kernels])  # N, C, HK, WK
    out = np.zeros((layer.c_out, layer.h_out, layer.w_out))
    for h in range(layer.h_k):
        for w in range(layer.w_k):
            window = x[:, h:h + layer.s_h * (layer.h_out - 1) + 1:layer.s_h,
                       w:w + layer.s_w * (layer.w_out - 1) + 1:layer.s_w]
            out += np.einsum("nc,cij->nij", weights[:, :, h, w], window)
    return Tensor3.from_array(out)


def random_operands(layer: LayerSpec, rng: np.random.Generator, low=-8, high=8):
    """Small-integer input and kernels so that float arithmetic stays exact.

    The unpadded interior is drawn at random and the recorded padding is
    filled with zeros.
    """
    inner_h = layer.h_in - layer.pad_top - layer.pad_bottom
    inner_w = layer.w_in - layer.pad_left - layer.pad_right
    raw = rng.integers(low, high + 1, size=(layer.c_in, inner_h, inner_w))
    x = pad_input(raw, layer.pad_top, layer.pad_bottom, layer.pad_left, layer.pad_right)
    kernels = [Tensor3.from_array(rng.integers(low, high + 1,
                                               size=(layer.c_in, layer.h_k, layer.w_k)))
               for _ in range(layer.n_kernels)]
    return Tensor3.from_array(x), kernels
