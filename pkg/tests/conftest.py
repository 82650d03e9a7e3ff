import pytest

from convoffload.conv_core import LayerSpec
from convoffload.exec_model import HardwareSpec


@pytest.fixture
def layer():
    """2x5x5 input, two 2x3x3 kernels, stride 1."""
    return LayerSpec(c_in=2, h_in=5, w_in=5, n_kernels=2, h_k=3, w_k=3)


@pytest.fixture
def hw():
    return HardwareSpec(nbop_pe=120, size_mem=100)
