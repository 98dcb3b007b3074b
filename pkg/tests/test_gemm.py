"""Width plan, im2col lowering, and exactness of the integer GEMM."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockfp import (
    BfpBlock,
    BfpMatrix,
    DomainError,
    MantissaWidth,
    PartitionAxis,
    PartitionScheme,
    PlanViolationError,
    bfp_gemm,
    bit_width_plan,
    dequantize,
    im2col,
    partition_matrix,
    to_floats,
)

RW = PartitionScheme.ROW_WHOLE


# ── width plan ───────────────────────────────────────────────────────────


class TestBitWidthPlan:
    def test_example_widths(self):
        plan = bit_width_plan(7, 7, 9)
        assert plan.multiplier_bits == 16
        assert plan.carry_margin == 3
        assert plan.accumulator_bits == 19
        assert plan.tight_multiplier_bits == 15

    def test_k_one_no_margin(self):
        plan = bit_width_plan(5, 6, 1)
        assert plan.carry_margin == 0
        assert plan.accumulator_bits == plan.multiplier_bits

    @pytest.mark.parametrize("k,s", [(1, 0), (2, 1), (3, 1), (8, 3), (9, 3), (64, 6)])
    def test_carry_margin_floor_log2(self, k, s):
        assert bit_width_plan(8, 8, k).carry_margin == s

    def test_rejects_bad_k(self):
        with pytest.raises(DomainError):
            bit_width_plan(8, 8, 0)


# ── im2col ───────────────────────────────────────────────────────────────


def im2col_oracle(x, kh, kw, stride, pad):
    """Brute-force gather, one index computation per output element."""
    c, h, w = x.shape
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    cols = np.zeros((c * kh * kw, out_h * out_w))
    for ch in range(c):
        for u in range(kh):
            for v in range(kw):
                for oy in range(out_h):
                    for ox in range(out_w):
                        iy = oy * stride + u - pad
                        ix = ox * stride + v - pad
                        val = x[ch, iy, ix] if 0 <= iy < h and 0 <= ix < w else 0.0
                        cols[(ch * kh + u) * kw + v, oy * out_w + ox] = val
    return cols


class TestIm2col:
    def test_four_by_four(self):
        x = np.arange(16.0).reshape(1, 4, 4)
        cols = im2col(x, 2, 2, 1, 0)
        assert cols.shape == (4, 9)
        assert cols[:, 0].tolist() == [x[0, 0, 0], x[0, 0, 1], x[0, 1, 0], x[0, 1, 1]]

    def test_kernel_covers_input(self):
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        cols = im2col(x, 2, 2, 1, 0)
        assert cols.shape == (4, 1)
        assert cols[:, 0].tolist() == [1.0, 2.0, 3.0, 4.0]

    @pytest.mark.parametrize(
        "shape,kh,kw,stride,pad",
        [
            ((3, 9, 9), 3, 3, 2, 1),
            ((2, 5, 7), 3, 2, 1, 0),
            ((1, 4, 4), 2, 2, 2, 0),
            ((4, 6, 6), 1, 1, 1, 0),
            ((2, 6, 6), 3, 3, 1, 2),
        ],
    )
    def test_matches_gather_oracle(self, shape, kh, kw, stride, pad):
        rng = np.random.default_rng(sum(shape) + kh)
        x = rng.standard_normal(shape)
        assert np.array_equal(im2col(x, kh, kw, stride, pad), im2col_oracle(x, kh, kw, stride, pad))

    def test_rejects_nonintegral_output(self):
        with pytest.raises(DomainError):
            im2col(np.zeros((1, 5, 5)), 2, 2, 2, 0)
        with pytest.raises(DomainError):
            im2col(np.zeros((1, 2, 2)), 3, 3, 1, 0)


# ── GEMM ─────────────────────────────────────────────────────────────────


def bigint_gemm_oracle(wm, im):
    """Arbitrary-precision integer GEMM over Python ints."""
    m, k = len(wm), len(wm[0])
    n = len(im[0])
    return [
        [sum(int(wm[r][t]) * int(im[t][c]) for t in range(k)) for c in range(n)]
        for r in range(m)
    ]


def quantize_pair(w, i, lw, li, scheme=RW):
    wq = partition_matrix(w, "weight", scheme, lw)
    iq = partition_matrix(i, "input", scheme, li)
    plan = bit_width_plan(lw, li, w.shape[1])
    return wq, iq, plan


class TestBfpGemm:
    def test_worked_example(self):
        w = np.array([[0.5, 1.25]])
        i = np.array([[1.25, 1.25], [2.5, 5.0]])
        wq, iq, plan = quantize_pair(w, i, 3, 3)
        prod = bfp_gemm(wq, iq, plan)
        assert prod.accumulators.tolist() == [[17, 27]]
        out = dequantize(prod)
        assert out.tolist() == [[4.25, 6.75]]
        # the exact float product differs: quantization error, not GEMM error
        assert (w @ i).tolist() == [[3.75, 6.875]]

    def test_identity_weight_passes_inputs_through(self):
        rng = np.random.default_rng(2)
        i = rng.standard_normal((6, 4))
        w = np.eye(6)
        wq, iq, plan = quantize_pair(w, i, 8, 11)
        out = dequantize(bfp_gemm(wq, iq, plan))
        assert np.array_equal(out, iq.to_array())

    @pytest.mark.parametrize("scheme", list(PartitionScheme))
    def test_matches_bigint_oracle(self, scheme):
        rng = np.random.default_rng(hash(scheme.value) % 2**32)
        w = rng.standard_normal((8, 16))
        i = rng.standard_normal((16, 8))
        wq, iq, plan = quantize_pair(w, i, 10, 10, scheme)
        prod = bfp_gemm(wq, iq, plan)
        oracle = bigint_gemm_oracle(wq.mantissa_matrix(), iq.mantissa_matrix())
        assert prod.accumulators.tolist() == oracle

    def test_wide_mantissas_use_exact_bigint_path(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal((3, 5))
        i = rng.standard_normal((5, 3))
        wq, iq, plan = quantize_pair(w, i, 52, 52)
        prod = bfp_gemm(wq, iq, plan)
        oracle = bigint_gemm_oracle(wq.mantissa_matrix(), iq.mantissa_matrix())
        assert [[int(v) for v in row] for row in prod.accumulators] == oracle
        # dequantized result tracks the float64 product of the (exactly
        # reconstructed) operands to rounding precision
        ref = wq.to_array() @ iq.to_array()
        assert np.allclose(dequantize(prod), ref, rtol=1e-12, atol=0)

    def test_gemm_adds_no_error_beyond_quantization(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal((7, 9))
        i = rng.standard_normal((9, 11))
        wq, iq, plan = quantize_pair(w, i, 12, 12)
        out = dequantize(bfp_gemm(wq, iq, plan))
        # binary64 GEMM of the dequantized operands is exact at these widths
        assert np.array_equal(out, wq.to_array() @ iq.to_array())

    def test_thread_counts_agree_bit_exactly(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((33, 17))
        i = rng.standard_normal((17, 29))
        wq, iq, plan = quantize_pair(w, i, 9, 9)
        single = bfp_gemm(wq, iq, plan, threads=1)
        multi = bfp_gemm(wq, iq, plan, threads=4)
        assert np.array_equal(single.accumulators, multi.accumulators)
        assert np.array_equal(dequantize(single), dequantize(multi))

    def test_max_abs_accumulator_within_plan(self):
        rng = np.random.default_rng(6)
        for k in [1, 2, 5, 16, 33, 64]:
            w = rng.standard_normal((4, k)) * 2.0 ** rng.integers(-3, 3)
            i = rng.standard_normal((k, 4))
            wq, iq, plan = quantize_pair(w, i, 7, 7)
            prod = bfp_gemm(wq, iq, plan)
            assert prod.max_abs_accumulator < 2 ** (plan.accumulator_bits - 1)

    def test_plan_violation_reports_entry(self):
        # an adversarial plan: claim K=4 fits in a 1-carry accumulator
        mant = np.full(4, 255, dtype=np.int64)
        blocks = tuple(
            BfpBlock(mant.copy(), 0, MantissaWidth(8)) for _ in range(2)
        )
        w = BfpMatrix(2, 4, PartitionAxis.ROW, blocks, MantissaWidth(8))
        i = BfpMatrix(
            4, 2, PartitionAxis.WHOLE,
            (BfpBlock(np.full(8, 255, dtype=np.int64), 0, MantissaWidth(8)),),
            MantissaWidth(8),
        )
        plan = bit_width_plan(8, 8, 4)
        from dataclasses import replace

        bad = replace(plan, accumulator_bits=plan.multiplier_bits)
        with pytest.raises(PlanViolationError) as err:
            bfp_gemm(w, i, bad)
        assert err.value.entry is not None
        # a sound plan accepts the same operands
        assert bfp_gemm(w, i, plan).max_abs_accumulator == 4 * 255 * 255

    def test_dimension_checks(self):
        w = partition_matrix(np.ones((2, 3)), "weight", RW, 8)
        i = partition_matrix(np.ones((4, 2)), "input", RW, 8)
        with pytest.raises(DomainError):
            bfp_gemm(w, i, bit_width_plan(8, 8, 3))
        i_good = partition_matrix(np.ones((3, 2)), "input", RW, 8)
        with pytest.raises(DomainError):
            bfp_gemm(w, i_good, bit_width_plan(8, 8, 7))


# ── dequantize ───────────────────────────────────────────────────────────


class TestDequantize:
    def test_zero_accumulators(self):
        w = partition_matrix(np.zeros((2, 3)), "weight", RW, 8)
        i = partition_matrix(np.ones((3, 2)), "input", RW, 8)
        out = dequantize(bfp_gemm(w, i, bit_width_plan(8, 8, 3)))
        assert np.all(out == 0.0)

    def test_unit_scale_returns_accumulators(self):
        # lw = li = 1 with exponents 0 makes the combined scale 2**0
        w = BfpMatrix(
            1, 2, PartitionAxis.WHOLE,
            (BfpBlock(np.array([1, 1], dtype=np.int64), 0, MantissaWidth(1)),),
            MantissaWidth(1),
        )
        i = BfpMatrix(
            2, 1, PartitionAxis.WHOLE,
            (BfpBlock(np.array([1, 2], dtype=np.int64), 0, MantissaWidth(1)),),
            MantissaWidth(1),
        )
        prod = bfp_gemm(w, i, bit_width_plan(1, 1, 2))
        assert dequantize(prod).tolist() == [[3.0]]


# ── properties ───────────────────────────────────────────────────────────


@settings(max_examples=30, deadline=None)
@given(
    st.integers(min_value=1, max_value=64),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=1, max_value=6),
    st.integers(min_value=2, max_value=10),
    st.integers(min_value=0, max_value=2**31 - 1),
)
def test_overflow_soundness_property(k, m, n, bits, seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((m, k)) * 2.0 ** rng.integers(-8, 8)
    i = rng.standard_normal((k, n)) * 2.0 ** rng.integers(-8, 8)
    wq, iq, plan = quantize_pair(w, i, bits, bits)
    prod = bfp_gemm(wq, iq, plan)
    assert prod.max_abs_accumulator < 2 ** (plan.accumulator_bits - 1)


def direct_conv(weights, x, stride, pad):
    m, c, kh, kw = weights.shape
    _, h, w = x.shape
    padded = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    out = np.zeros((m, out_h, out_w))
    for om in range(m):
        for oy in range(out_h):
            for ox in range(out_w):
                tile = padded[:, oy * stride : oy * stride + kh, ox * stride : ox * stride + kw]
                out[om, oy, ox] = float(np.sum(weights[om] * tile))
    return out


def test_im2col_conv_equivalence():
    # the lowered BFP path equals a direct convolution of the dequantized
    # operands: at stride 1 every input element is gathered, so quantizing the
    # tensor and quantizing its im2col matrix agree element-wise
    from blockfp import block_format

    rng = np.random.default_rng(8)
    x = rng.standard_normal((2, 6, 6))
    weights = rng.standard_normal((3, 2, 3, 3))

    cols = im2col(x, 3, 3, 1, 1)
    wq = partition_matrix(weights.reshape(3, -1), "weight", RW, 10)
    iq = partition_matrix(cols, "input", RW, 10)
    lowered = dequantize(bfp_gemm(wq, iq, bit_width_plan(10, 10, cols.shape[0])))

    wd = wq.to_array().reshape(3, 2, 3, 3)
    xd = to_floats(block_format(x.ravel(), 10)).reshape(x.shape)
    direct = direct_conv(wd, xd, 1, 1)
    assert np.array_equal(lowered.reshape(direct.shape), direct)
