"""Deterministic float32 dense kernels shared by every module.

All tensors are C-contiguous ``numpy.float32`` arrays. Matrix products
accumulate strictly left-to-right over the inner dimension (compiled with
numba, no reassociation), so results are bit-stable across machines and
runs. Elementwise ops inherit numpy's per-element determinism.

Random initialisation uses numpy's PCG64 generator with the float32
ziggurat normal sampler; named sub-streams are derived by SHA-256 so that
weight layouts never depend on creation order.
"""

from __future__ import annotations

import hashlib
import zlib

import numpy as np
from numba import njit

from .errors import ShapeError

FP32 = np.float32

# A Tensor throughout this package is a C-contiguous float32 ndarray.
Tensor = np.ndarray


@njit(cache=True)
def _mm2(a, b, out):  # pragma: no cover - compiled
    m, kk = a.shape
    n = b.shape[1]
    for i in range(m):
        for k in range(kk):
            aik = a[i, k]
            for j in range(n):
                out[i, j] += aik * b[k, j]


@njit(cache=True)
def _mm3(a, b, out):  # pragma: no cover - compiled
    h, m, kk = a.shape
    n = b.shape[2]
    for b_i in range(h):
        for i in range(m):
            for k in range(kk):
                aik = a[b_i, i, k]
                for j in range(n):
                    out[b_i, i, j] += aik * b[b_i, k, j]


def _as_f32(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=FP32)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with a fixed left-to-right accumulation over k.

    Accepts ``[m, k] @ [k, n]`` or batched ``[h, m, k] @ [h, k, n]``.
    """
    a = _as_f32(a)
    b = _as_f32(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: inner dims {a.shape[1]} != {b.shape[0]}")
        out = np.zeros((a.shape[0], b.shape[1]), dtype=FP32)
        _mm2(a, b, out)
        return out
    if a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: batched shapes {a.shape} x {b.shape}")
        out = np.zeros((a.shape[0], a.shape[1], b.shape[2]), dtype=FP32)
        _mm3(a, b, out)
        return out
    raise ShapeError(f"matmul: unsupported ranks {a.ndim} x {b.ndim}")


def softmax_rows(x: Tensor) -> Tensor:
    """Row softmax over the last axis, with max subtraction for stability."""
    x = np.asarray(x, dtype=FP32)
    if np.isnan(x).any():
        raise ShapeError("softmax_rows: NaN in input")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=-1, keepdims=True)).astype(FP32, copy=False)


RMSNORM_EPS = FP32(1e-6)


def rmsnorm(x: Tensor, gain: Tensor) -> Tensor:
    """RMS-normalise the last axis and scale by a per-channel gain."""
    x = np.asarray(x, dtype=FP32)
    gain = np.asarray(gain, dtype=FP32)
    if x.shape[-1] == 0:
        raise ShapeError("rmsnorm: zero-length row")
    if gain.shape != (x.shape[-1],):
        raise ShapeError(f"rmsnorm: gain shape {gain.shape} vs row length {x.shape[-1]}")
    rms = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + RMSNORM_EPS)
    return (x / rms * gain).astype(FP32, copy=False)


_GELU_C = FP32(np.sqrt(2.0 / np.pi))


def gelu(x: Tensor) -> Tensor:
    """GELU activation (tanh approximation)."""
    x = np.asarray(x, dtype=FP32)
    inner = _GELU_C * (x + FP32(0.044715) * x * x * x)
    return (FP32(0.5) * x * (FP32(1.0) + np.tanh(inner))).astype(FP32, copy=False)


def derive_seed(seed: int, name: str) -> int:
    """Derive a named 64-bit sub-seed (SHA-256 of ``"{seed}:{name}"``)."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def gaussian_init(shape, seed: int, scale: float) -> Tensor:
    """Seeded Gaussian tensor: PCG64 stream, float32 ziggurat normals.

    Bit-identical for identical seeds; stddev ~= scale for large tensors.
    """
    if scale < 0:
        raise ValueError("gaussian_init: scale must be >= 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    return (rng.standard_normal(shape, dtype=FP32) * FP32(scale)).astype(FP32, copy=False)


def checksum(x: Tensor) -> int:
    """CRC32 of the raw little-endian float32 bytes."""
    return zlib.crc32(np.ascontiguousarray(x, dtype="<f4").tobytes())


def write_tensor(path, x: Tensor) -> None:
    """Write the golden-file format: ``shape: d0 d1 ...`` + raw LE float32."""
    x = np.ascontiguousarray(x, dtype="<f4")
    with open(path, "wb") as fh:
        header = "shape: " + " ".join(str(d) for d in x.shape) + "\n"
        fh.write(header.encode("ascii"))
        fh.write(x.tobytes())


def read_tensor(path) -> Tensor:
    """Read a tensor written by :func:`write_tensor`."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if not header.startswith("shape:"):
            raise ShapeError(f"{path}: missing shape header")
        shape = tuple(int(d) for d in header.split()[1:])
        count = int(np.prod(shape)) if shape else 1
        payload = fh.read()
        if len(payload) != 4 * count:
            raise ShapeError(f"{path}: payload holds {len(payload)} bytes, header needs {4 * count}")
        data = np.frombuffer(payload, dtype="<f4")
    return np.ascontiguousarray(data.reshape(shape), dtype=FP32)
