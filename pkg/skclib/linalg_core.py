"""Complex FFT, circular/causal convolution and small dense solves shared by every other module.

Complex vectors are numpy complex128 arrays (contiguous (re, im) float pairs); real matrices are
2-D float64 arrays. Every routine is a pure function of its inputs.
"""

import numpy as np

from skclib.errors import SingularMatrixError, SizeError


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def next_power_of_two(n):
    p = 1
    while p < n:
        p <<= 1

    return p


# index permutation that reverses the low log2(n) bits of 0..n-1
def bit_reverse_permutation(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)

    return rev


def fft(x, inverse=False):
    """Iterative radix-2 transform along the last axis (leading axes are independent batches).

    Forward uses the e^{-2*pi*i*k*n/N} kernel, inverse uses e^{+...} and divides by N.
    """
    a = np.asarray(x, dtype=np.complex128)
    n = a.shape[-1]
    if not is_power_of_two(n):
        raise SizeError("fft length must be a power of two, got " + str(n))

    out = np.ascontiguousarray(a[..., bit_reverse_permutation(n)])
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(out.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * twiddle
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        size *= 2

    if inverse:
        out /= n

    return out


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.complex128)
    b = np.asarray(b, dtype=np.complex128)
    if a.shape != b.shape:
        raise SizeError("convolution operands differ in shape: " + str(a.shape) + " vs " + str(b.shape))

    if a.shape[-1] < 1:
        raise SizeError("convolution operands are empty")

    return a, b


def _linear_conv_fft(a, b):
    n = a.shape[-1]
    size = next_power_of_two(2 * n)
    pad = [(0, 0)] * (a.ndim - 1) + [(0, size - n)]
    fa = fft(np.pad(a, pad))
    fb = fft(np.pad(b, pad))
    return fft(fa * fb, inverse=True)[..., :2 * n - 1]


def circ_conv(a, b, method="fft"):
    """c_k = sum_j a_j b_{(k-j) mod n}, along the last axis.

    The fft path zero-pads to a power of two >= 2n, takes the linear convolution and folds the tail.
    """
    a, b = _check_pair(a, b)
    n = a.shape[-1]
    if method == "naive":
        k = np.arange(n)
        idx = (k[:, None] - k[None, :]) % n
        return np.einsum("...j,...kj->...k", a, b[..., idx])

    lin = _linear_conv_fft(a, b)
    out = lin[..., :n].copy()
    out[..., :n - 1] += lin[..., n:]
    return out


def causal_conv(kernel, signal, method="fft"):
    """Linear convolution truncated to the first n outputs: y_k = sum_{j<=k} kernel_{k-j} signal_j."""
    kernel, signal = _check_pair(kernel, signal)
    n = kernel.shape[-1]
    if method == "naive":
        k = np.arange(n)
        lag = k[:, None] - k[None, :]
        idx = np.where(lag >= 0, lag, 0)
        taps = np.where(lag >= 0, kernel[..., idx], 0.0)
        return np.einsum("...kj,...j->...k", taps, signal)

    return _linear_conv_fft(kernel, signal)[..., :n]


def solve_linear(A, B, pivot_tol=1e-12):
    """Solve A X = B by Gaussian elimination with partial pivoting.

    B may be a vector or a matrix with as many rows as A. Raises SingularMatrixError when the
    largest available pivot falls below pivot_tol in magnitude.
    """
    A = np.array(A, dtype=float, ndmin=2)
    B = np.array(B, dtype=float)
    vector_rhs = B.ndim == 1
    if vector_rhs:
        B = B[:, None]

    n = A.shape[0]
    if A.shape != (n, n):
        raise SizeError("solve_linear needs a square matrix, got " + str(A.shape))

    if B.shape[0] != n:
        raise SizeError("right-hand side has " + str(B.shape[0]) + " rows, expected " + str(n))

    M = np.hstack([A, B])
    for k in range(n):
        p = k + int(np.argmax(np.abs(M[k:, k])))
        if abs(M[p, k]) < pivot_tol:
            raise SingularMatrixError("pivot " + "{:.3e}".format(abs(M[p, k])) + " below " + str(pivot_tol)
                                      + " at column " + str(k))

        if p != k:
            M[[k, p]] = M[[p, k]]

        M[k + 1:, k:] -= np.outer(M[k + 1:, k] / M[k, k], M[k, k:])

    X = np.zeros((n, B.shape[1]))
    for k in range(n - 1, -1, -1):
        X[k] = (M[k, n:] - M[k, k + 1:n] @ X[k + 1:]) / M[k, k]

    return X[:, 0] if vector_rhs else X


def symmetrize(P):
    return 0.5 * (P + P.T)
