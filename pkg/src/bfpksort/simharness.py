"""Desk-scale attention decode simulator for cache-quantization experiments.

Models a single attention head generating ``T`` tokens: every step projects
the token's activation into a key that is quantized into the growing key
cache and a query that is consumed immediately.  Following the usual cache
discipline for rotary models, keys are stored *before* rotation and the
position-dependent rotation is applied after dequantization, at score time;
queries are rotated and then cast to their (higher-precision) format.
Attention scores are evaluated in float64 from the dequantized operands, so
measured error is purely storage-format error ("fake quantization").

Because cache blocks never span tokens (one key vector is one or more whole
blocks), quantizing each key at its own decode step produces bit-for-bit the
same cache as quantizing all keys at once, and the simulator exploits that
by batching.

Error metrics accumulate squared terms in ascending sorted order, which
makes the reported numbers invariant to channel permutations: two caches
holding the same multiset of per-element errors report the *bit-identical*
MSE.  This matters when comparing sorted against unsorted runs at block
sizes where reordering provably cannot change anything.

Synthetic heads reproduce the empirical pattern that drives all of this:
a handful of key channels with projection-row norms tens of times larger
than the rest, consistent across tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .bfp import BfpFormat, BfpTensor, bits_per_element, dequantize, quantize_tensor
from .errors import PlanMismatch, ShapeMismatch
from .ksort import HeadWeights, PermutationPlan
from .rope import RopeTables, rope_apply

__all__ = [
    "OutlierSpec",
    "DecodeTrace",
    "ErrorReport",
    "gen_outlier_head",
    "gen_activations",
    "simulate_decode",
    "exactness_check",
    "error_metrics",
    "score_max_abs_err",
    "footprint",
]


@dataclass(frozen=True)
class OutlierSpec:
    """Synthetic outlier-channel model for one head's projections."""

    n_outlier_channels: int
    outlier_scale: float
    base_std: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_outlier_channels < 0:
            raise ValueError("n_outlier_channels must be >= 0")
        if self.outlier_scale < 1.0:
            raise ValueError("outlier_scale must be >= 1")
        if not self.base_std > 0.0:
            raise ValueError("base_std must be positive")


def gen_outlier_head(d_h: int, d_model: int, spec: OutlierSpec) -> HeadWeights:
    """Gaussian projections with a few key rows scaled up by ``outlier_scale``.

    Consumes ``default_rng(spec.seed)`` in a fixed order (key matrix, outlier
    row choice, query matrix), so equal specs give bitwise-equal weights.
    """
    if spec.n_outlier_channels > d_h:
        raise ValueError(f"{spec.n_outlier_channels} outlier channels > d_h={d_h}")
    rng = np.random.default_rng(spec.seed)
    w_k = rng.normal(0.0, spec.base_std, size=(d_h, d_model))
    rows = rng.choice(d_h, size=spec.n_outlier_channels, replace=False)
    w_k[rows] *= spec.outlier_scale
    w_q = rng.normal(0.0, spec.base_std, size=(d_h, d_model))
    return HeadWeights(w_k=w_k, w_q=w_q)


def gen_activations(n_tokens: int, d_model: int, seed: int = 0) -> np.ndarray:
    """Standard Gaussian token activations, one row per decode step.

    Drawn from a stream keyed by ``(seed, 1)`` so the weight matrices of
    :func:`gen_outlier_head` stay fixed when the token count changes.
    """
    rng = np.random.default_rng([seed, 1])
    return rng.normal(0.0, 1.0, size=(n_tokens, d_model))


@dataclass(frozen=True)
class DecodeTrace:
    """Everything one simulated decode produced, float and quantized."""

    activations: np.ndarray  # (T, d_model)
    keys: np.ndarray  # (T, d_h) pre-rotation keys, the cache reference
    queries: np.ndarray  # (T, d_h) post-rotation queries
    key_cache: BfpTensor | None
    keys_deq: np.ndarray  # (T, d_h)
    queries_deq: np.ndarray  # (T, d_h)
    scores_ref: np.ndarray  # (T, T) lower-triangular float reference
    scores: np.ndarray  # (T, T) lower-triangular, from dequantized operands
    fmt_k: BfpFormat | None
    fmt_q: BfpFormat | None
    permuted: bool
    rope_enabled: bool

    @property
    def n_tokens(self) -> int:
        return int(self.activations.shape[0])


def _require_plan_matches(weights: HeadWeights, plan: PermutationPlan) -> None:
    idx = plan.perm.indices
    if idx.size != weights.d_h:
        raise PlanMismatch(f"plan is for d_h={idx.size}, weights have d_h={weights.d_h}")
    if not np.array_equal(plan.w_k_permuted, weights.w_k[idx]) or not np.array_equal(
        plan.w_q_permuted, weights.w_q[idx]
    ):
        raise PlanMismatch("plan weights are not a row permutation of the given head")


def simulate_decode(
    weights: HeadWeights,
    rope_tables: RopeTables | None,
    X,
    fmt_k: BfpFormat | None = None,
    fmt_q: BfpFormat | None = None,
    plan: PermutationPlan | None = None,
) -> DecodeTrace:
    """Run a T-step decode, quantizing keys at ``fmt_k`` and queries at ``fmt_q``.

    ``None`` formats mean lossless float storage.  With ``plan`` given, the
    permuted projections and remapped rotary tables are used, as a deployed
    head would after the compile-time pass; ``rope_tables`` then names the
    original tables the plan was derived from.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != weights.d_model:
        raise ShapeMismatch(f"activations {X.shape} do not match d_model={weights.d_model}")
    if plan is not None:
        _require_plan_matches(weights, plan)
        if (plan.rope is None) != (rope_tables is None):
            raise PlanMismatch("plan and call disagree on whether rotation is in use")
        w_k, w_q, tables = plan.w_k_permuted, plan.w_q_permuted, plan.rope
        b_k, b_q = plan.b_k_permuted, plan.b_q_permuted
    else:
        w_k, w_q, tables = weights.w_k, weights.w_q, rope_tables
        b_k, b_q = weights.b_k, weights.b_q

    positions = np.arange(X.shape[0])
    keys = X @ w_k.T
    queries = X @ w_q.T
    if b_k is not None:
        keys = keys + b_k
    if b_q is not None:
        queries = queries + b_q
    if tables is not None:
        queries = rope_apply(tables, queries, positions)

    if fmt_k is not None:
        key_cache = quantize_tensor(keys, fmt_k, blocking_axis=1)
        keys_deq = dequantize(key_cache)
    else:
        key_cache, keys_deq = None, keys
    queries_deq = (
        dequantize(quantize_tensor(queries, fmt_q, blocking_axis=1))
        if fmt_q is not None
        else queries
    )

    # rotation happens after retrieval, one angle per cached position
    if tables is not None:
        keys_rot_ref = rope_apply(tables, keys, positions)
        keys_rot_deq = rope_apply(tables, keys_deq, positions)
    else:
        keys_rot_ref, keys_rot_deq = keys, keys_deq

    return DecodeTrace(
        activations=X,
        keys=keys,
        queries=queries,
        key_cache=key_cache,
        keys_deq=keys_deq,
        queries_deq=queries_deq,
        scores_ref=np.tril(queries @ keys_rot_ref.T),
        scores=np.tril(queries_deq @ keys_rot_deq.T),
        fmt_k=fmt_k,
        fmt_q=fmt_q,
        permuted=plan is not None,
        rope_enabled=tables is not None,
    )


def exactness_check(
    weights: HeadWeights,
    plan: PermutationPlan,
    X,
    rope_tables: RopeTables | None = None,
) -> float:
    """Largest normalized deviation between original and permuted score maps.

    Both sides are evaluated in float64 with no quantization, over all token
    pairs; the return value is ``max|diff| / max|reference|``.  Channel
    permutation leaves each score a reordering of the same summands, so a
    correct plan lands at accumulated rounding error (~1e-15); a plan whose
    rotary tables were remapped wrongly deviates at order 1.
    """
    _require_plan_matches(weights, plan)
    orig = simulate_decode(weights, rope_tables, X)
    perm = simulate_decode(weights, rope_tables, X, plan=plan)
    scale = float(np.abs(orig.scores_ref).max())
    diff = float(np.abs(orig.scores_ref - perm.scores_ref).max())
    return diff / scale if scale > 0.0 else diff


def _sorted_accumulate_sq(values: np.ndarray) -> float:
    """Sum of squares, accumulated in ascending order: permutation-invariant."""
    return float(np.sort(np.square(values), axis=None).sum())


@dataclass(frozen=True)
class ErrorReport:
    """Error and footprint metrics for one experiment cell.

    ``sqnr_db`` is +inf when reconstruction is exact and NaN (with
    ``degenerate_signal`` set) when the reference carries no signal power.
    ``logits_max_abs_err`` and ``config`` are filled by the experiment
    driver; bare tensor comparisons leave them at their defaults.
    """

    mse: float
    sqnr_db: float
    max_abs_err: float
    bits_per_element: object  # fractions.Fraction
    logits_max_abs_err: float = math.nan
    degenerate_signal: bool = False
    config: dict = field(default_factory=dict)

    def with_logits_err(self, err: float) -> "ErrorReport":
        return replace(self, logits_max_abs_err=float(err))

    def with_config(self, **entries) -> "ErrorReport":
        return replace(self, config={**self.config, **entries})


def error_metrics(reference, quantized: BfpTensor) -> ErrorReport:
    """Reconstruction error of ``quantized`` against the float reference.

    Padding never appears (decoding strips it).  All reductions are
    permutation-invariant, see module docstring.
    """
    ref = np.asarray(reference, dtype=np.float64)
    deq = dequantize(quantized)
    if ref.shape != deq.shape:
        raise ShapeMismatch(f"reference {ref.shape} vs decoded {deq.shape}")
    bpe = bits_per_element(quantized.fmt)
    if ref.size == 0:
        return ErrorReport(
            mse=0.0, sqnr_db=math.nan, max_abs_err=0.0,
            bits_per_element=bpe, degenerate_signal=True,
        )
    err = deq - ref
    mse = _sorted_accumulate_sq(err) / ref.size
    signal = _sorted_accumulate_sq(ref) / ref.size
    if signal == 0.0:
        sqnr_db, degenerate = math.nan, True
    elif mse == 0.0:
        sqnr_db, degenerate = math.inf, False
    else:
        sqnr_db, degenerate = 10.0 * math.log10(signal / mse), False
    return ErrorReport(
        mse=mse,
        sqnr_db=sqnr_db,
        max_abs_err=float(np.abs(err).max()),
        bits_per_element=bpe,
        degenerate_signal=degenerate,
    )


def score_max_abs_err(trace: DecodeTrace) -> float:
    """Largest attention-score deviation caused by quantization, over the
    causal (lower-triangular) part of the score map."""
    t = trace.n_tokens
    if t == 0:
        return 0.0
    tri = np.tril_indices(t)
    return float(np.abs(trace.scores[tri] - trace.scores_ref[tri]).max())


def footprint(n_tokens: int, d_h: int, fmt: BfpFormat) -> int:
    """Bytes needed to cache ``n_tokens`` keys of length ``d_h`` at ``fmt``."""
    if n_tokens < 0 or d_h < 0:
        raise ValueError("token count and head dimension must be non-negative")
    blocks_per_token = -(-d_h // fmt.block_size)
    return n_tokens * blocks_per_token * fmt.bytes_per_block
