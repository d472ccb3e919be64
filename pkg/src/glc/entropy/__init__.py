"""Probability modeling and entropy coding."""

from .rangecoder import (
    PRECISION,
    TOTAL,
    QuantizedCdf,
    RangeCoderError,
    RangeDecoder,
    RangeEncoder,
    pmf_to_cdf,
)
from .gaussian import (
    NUM_SCALES,
    SCALE_TABLE,
    SIGMA_MIN,
    cdf_tables,
    likelihood,
    rate_bits,
    scale_indexes,
)
from .context import (
    NUM_STEPS,
    SpatialContextModel,
    context_schedule,
    step_masks_tensor,
)
from .factorized import FactorizedDensity
from .kernel import kernel_available

__all__ = [
    "PRECISION",
    "TOTAL",
    "QuantizedCdf",
    "RangeCoderError",
    "RangeDecoder",
    "RangeEncoder",
    "pmf_to_cdf",
    "NUM_SCALES",
    "SCALE_TABLE",
    "SIGMA_MIN",
    "cdf_tables",
    "likelihood",
    "rate_bits",
    "scale_indexes",
    "NUM_STEPS",
    "SpatialContextModel",
    "context_schedule",
    "step_masks_tensor",
    "FactorizedDensity",
    "kernel_available",
    "make_encoder",
    "make_decoder",
]


def make_encoder():
    """Range encoder: native kernel when present, reference otherwise."""
    from . import kernel

    if kernel.kernel_available():
        return kernel.KernelEncoder()
    return RangeEncoder()


def make_decoder(data: bytes):
    from . import kernel

    if kernel.kernel_available():
        return kernel.KernelDecoder(data)
    return RangeDecoder(data)
