"""A tour of the shared-exponent block format.

Run: python demos/demo_block_format.py
"""

import numpy as np

from bfpksort import (
    BFP12_32,
    BFP16_32,
    BfpFormat,
    bfp_dot,
    bits_per_element,
    dequantize,
    pack,
    quantize_block,
    quantize_tensor,
    unpack,
)

rng = np.random.default_rng(0)

# --- one block -------------------------------------------------------------
# Four values share a single power-of-two exponent; each element keeps only
# a small signed integer mantissa.

fmt = BfpFormat(mantissa_bits=4, block_size=4)
values = [1.0, -0.5, 0.25, 6.0]
block = quantize_block(values, fmt)
print("values:   ", values)
print("exponent: ", block.exponent)
print("mantissas:", block.mantissas.tolist())
print("decoded:  ", block.decode().tolist())
print()

# The exponent is as small as the largest element allows: 6.0 needs e=0 so
# it can sit at mantissa 6; under e=0 both 0.25 and -0.5 round to zero.
# That is the precision cost every small element pays for sharing a block
# with a big one.

# --- what a single outlier does to a block ----------------------------------

calm = rng.normal(size=32)
spiked = calm.copy()
spiked[7] *= 100.0

for name, data in (("calm", calm), ("one 100x outlier", spiked)):
    t = quantize_tensor(data, BFP12_32, blocking_axis=0)
    err = dequantize(t) - data
    zeroed = int(np.sum((dequantize(t) == 0.0) & (data != 0.0)))
    print(f"{name:18s} rms error {float(np.sqrt(np.mean(err**2))):8.4f}   "
          f"elements rounded to zero: {zeroed}/32")
print()

# --- round trips and the packed wire form -----------------------------------

x = rng.normal(size=(8, 64)) * 2.0 ** rng.integers(-8, 8, size=(8, 1))
t = quantize_tensor(x, BFP12_32, blocking_axis=1)
buf = pack(t)
t2 = unpack(buf, t.fmt, t.logical_shape, t.blocking_axis)
print("packed", t.num_blocks, "blocks into", len(buf), "bytes",
      "(", t.fmt.bytes_per_block, "bytes per block )")
print("bitwise round trip:", np.array_equal(t.mantissas, t2.mantissas)
      and np.array_equal(t.exponents, t2.exponents))
print()

# --- storage cost ------------------------------------------------------------

for f in (BFP12_32, BFP16_32):
    print(f"{f.name}: {float(bits_per_element(f)):5.2f} bits per element")
print("ratio:", float(bits_per_element(BFP16_32) / bits_per_element(BFP12_32)))
print()

# --- integer-path dot product ------------------------------------------------
# Inner products never need the floats back: multiply integer mantissas,
# add block exponents.

q = quantize_tensor(rng.normal(size=128), BFP16_32, 0)
k = quantize_tensor(rng.normal(size=128), BFP12_32, 0)
print("integer-path dot:", bfp_dot(q, k))
print("float reference: ", float(np.dot(dequantize(q), dequantize(k))))
