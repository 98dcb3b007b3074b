"""Block floating point arithmetic toolkit.

Groups of values share one block exponent and store integer mantissas, so a
matrix product runs as an exact fixed-point GEMM between two quantization
boundaries.  The package provides the quantizer, the partition strategies and
their storage-cost model, the checked-width GEMM with im2col lowering, a small
CNN simulator with per-layer signal/error taps, and the analytical SNR model
that predicts those taps.
"""

from .core import (
    BfpBlock,
    DomainError,
    MantissaWidth,
    QuantStats,
    RoundingMode,
    ZERO_BLOCK_EXPONENT,
    block_format,
    extract_exponent,
    measure_quant_stats,
    quant_stats,
    to_floats,
)
from .gemm import (
    BitWidthPlan,
    PlanViolationError,
    ProductMatrix,
    bfp_gemm,
    bit_width_plan,
    dequantize,
    im2col,
)
from .model import (
    ExponentPmf,
    LayerPrediction,
    SnrValue,
    block_noise_variance,
    combine_snr,
    inherit_nsr,
    input_snr,
    predict_network,
    quant_variance,
    quant_variance_pmf,
    validate_inner_product_moment,
    weight_snr,
)
from .network import (
    EnergyHistogram,
    LayerSpec,
    LayerTap,
    NetworkSpec,
    energy_histogram,
    forward_bfp,
    forward_reference,
    measure_layer_snr,
    random_gaussian_network,
    snr_db,
)
from .partition import (
    BfpMatrix,
    CostReport,
    DEFAULT_EXPONENT_BITS,
    PartitionAxis,
    PartitionScheme,
    partition_matrix,
    storage_cost,
)
from .tensorfile import TensorFileError, read_tensor, write_tensor

__version__ = "0.1.0"
