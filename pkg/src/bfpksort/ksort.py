"""Compile-time channel sorting of key/query projection weights.

Key channels with unusually large row norms in the key projection produce
outlier values that wreck shared-exponent quantization of any block they
land in.  Because the attention score ``q . k^T`` is invariant to permuting
the channels of the key and query projections simultaneously, the rows of
both weight matrices can be reordered once, before inference, so that
channels of similar magnitude end up adjacent and share blocks.

The pass is purely static: compute Euclidean row norms of the key
projection, argsort them, apply the permutation to the rows of both
projections (and their biases), and remap the rotary tables so the rotation
keeps acting on the same logical pairs.  No calibration data is involved and
nothing changes at inference time.

Note the rotary partner table holds channel *indices*, so it is not enough
to permute it as an array like ``theta`` and ``sign``; its values must also
be translated through the inverse permutation (``partner' = inv o partner o
perm``) or the pairing breaks.  The value-remap is what keeps rotation and
permutation commuting exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .rope import RopeTables

__all__ = [
    "HeadWeights",
    "Permutation",
    "PermutationPlan",
    "row_norms",
    "argsort_norms",
    "permute_rows",
    "remap_rope_tables",
    "plan_head",
]

SORT_ORDERS = ("ascending", "descending")


@dataclass(frozen=True)
class HeadWeights:
    """Key/query projection matrices for one attention head.

    Rows are output channels (length ``d_h``), columns model features
    (``d_model``).  Biases are optional and permuted along with the rows.
    """

    w_k: np.ndarray
    w_q: np.ndarray
    b_k: np.ndarray | None = None
    b_q: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.w_k.ndim != 2 or self.w_k.shape != self.w_q.shape:
            raise ShapeMismatch(
                f"w_k and w_q must be matrices of identical shape, "
                f"got {self.w_k.shape} and {self.w_q.shape}"
            )
        for name, b in (("b_k", self.b_k), ("b_q", self.b_q)):
            if b is not None and b.shape != (self.d_h,):
                raise ShapeMismatch(f"{name} must have shape ({self.d_h},), got {b.shape}")

    @property
    def d_h(self) -> int:
        return int(self.w_k.shape[0])

    @property
    def d_model(self) -> int:
        return int(self.w_k.shape[1])


@dataclass(frozen=True)
class Permutation:
    """Channel reordering: ``indices[j]`` is the old channel at new slot ``j``."""

    indices: np.ndarray  # intp

    def __post_init__(self) -> None:
        idx = self.indices
        if idx.ndim != 1 or not np.array_equal(np.sort(idx), np.arange(idx.size)):
            raise ValueError("permutation must be a bijection on 0..n-1")

    def __len__(self) -> int:
        return int(self.indices.size)

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n, dtype=np.intp))

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.indices)
        inv[self.indices] = np.arange(self.indices.size, dtype=np.intp)
        return Permutation(inv)

    def apply(self, x: np.ndarray, axis: int = 0) -> np.ndarray:
        """Gather ``x`` along ``axis``: output slot j takes input slot indices[j]."""
        return np.take(x, self.indices, axis=axis)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.indices, np.arange(self.indices.size)))


def row_norms(w) -> np.ndarray:
    """Euclidean norm of each row, in double precision."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2:
        raise ShapeMismatch(f"expected a matrix, got shape {w.shape}")
    return np.sqrt(np.sum(w * w, axis=1))


def argsort_norms(norms, order: str = "ascending") -> Permutation:
    """Stable argsort of the norms; ties keep their original relative order."""
    norms = np.asarray(norms, dtype=np.float64)
    if order not in SORT_ORDERS:
        raise ValueError(f"order must be one of {SORT_ORDERS}, got {order!r}")
    key = norms if order == "ascending" else -norms
    return Permutation(np.argsort(key, kind="stable").astype(np.intp))


def permute_rows(w: np.ndarray, perm: Permutation) -> np.ndarray:
    """Reorder matrix rows: ``out[j, :] = w[perm[j], :]``."""
    if w.shape[0] != len(perm):
        raise ShapeMismatch(f"{w.shape[0]} rows vs permutation of length {len(perm)}")
    return perm.apply(w, axis=0)


def remap_rope_tables(
    tables: RopeTables, perm: Permutation, partner_values: bool = True
) -> RopeTables:
    """Carry rotary tables through a channel permutation.

    ``theta`` and ``sign`` are plain per-channel attributes and move with
    their channels.  ``partner`` holds indices, so its entries are translated
    into the new numbering as well: ``partner'[j] = inv[partner[perm[j]]]``.

    ``partner_values=False`` skips the index translation and permutes
    ``partner`` as a bare array.  That variant does not preserve the pairing
    (the output usually fails :meth:`RopeTables.validate`) and exists only so
    tests can demonstrate the breakage; never use it for a real plan.
    """
    tables.validate()
    if len(perm) != tables.d_h:
        raise ShapeMismatch(f"permutation length {len(perm)} != d_h {tables.d_h}")
    idx = perm.indices
    partner = tables.partner[idx]
    if partner_values:
        partner = perm.inverse().indices[partner]
    return RopeTables(
        theta=tables.theta[idx],
        partner=partner.astype(np.intp),
        sign=tables.sign[idx],
    )


@dataclass(frozen=True)
class PermutationPlan:
    """Result of the sorting pass for one head: the permutation, the permuted
    projections, and the remapped rotary tables (when rotation is in use)."""

    perm: Permutation
    w_k_permuted: np.ndarray
    w_q_permuted: np.ndarray
    rope: RopeTables | None = None
    b_k_permuted: np.ndarray | None = None
    b_q_permuted: np.ndarray | None = None
    order: str = "ascending"

    def to_json(self) -> str:
        """Compact audit document: the permutation and tables, not the weights."""
        doc = {
            "d_h": len(self.perm),
            "order": self.order,
            "pi": self.perm.indices.tolist(),
            "rope": self.rope.to_jsonable() if self.rope is not None else None,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def permutation_from_json(text: str) -> tuple[Permutation, RopeTables | None, str]:
        doc = json.loads(text)
        perm = Permutation(np.asarray(doc["pi"], dtype=np.intp))
        tables = RopeTables.from_jsonable(doc["rope"]) if doc.get("rope") else None
        return perm, tables, doc.get("order", "ascending")


def plan_head(
    weights: HeadWeights,
    rope_tables: RopeTables | None = None,
    order: str = "ascending",
) -> PermutationPlan:
    """Run the full sorting pass for one head.

    Deterministic: equal inputs produce bitwise-equal plans.
    """
    if rope_tables is not None and weights.d_h % 2:
        raise ShapeMismatch("rotary tables require an even head dimension")
    norms = row_norms(weights.w_k)
    perm = argsort_norms(norms, order=order)
    return PermutationPlan(
        perm=perm,
        w_k_permuted=permute_rows(weights.w_k, perm),
        w_q_permuted=permute_rows(weights.w_q, perm),
        rope=remap_rope_tables(rope_tables, perm) if rope_tables is not None else None,
        b_k_permuted=perm.apply(weights.b_k) if weights.b_k is not None else None,
        b_q_permuted=perm.apply(weights.b_q) if weights.b_q is not None else None,
        order=order,
    )
