"""Pure numpy 1-D convolution kernels (fallback backend).

Layouts match the compiled backend exactly: x[T, C_in], weight[k, C_in, C_out],
output [T_out, C_out]. Padding is resolved by the caller into (pad_left, t_out);
here we only zero-pad and slide.
"""

from __future__ import annotations

from typing import Optional

import numpy as np


def _padded(x: np.ndarray, stride: int, pad_left: int, t_out: int, k: int) -> np.ndarray:
    t_in = x.shape[0]
    need = (t_out - 1) * stride + k
    pad_right = max(0, need - pad_left - t_in)
    if pad_left == 0 and pad_right == 0:
        return x
    return np.pad(x, ((pad_left, pad_right), (0, 0)))


def conv1d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: Optional[np.ndarray],
    stride: int,
    pad_left: int,
    t_out: int,
) -> np.ndarray:
    k, _, c_out = weight.shape
    xp = _padded(x, stride, pad_left, t_out, k)
    y = np.zeros((t_out, c_out), dtype=np.float64)
    hi = (t_out - 1) * stride + 1
    for j in range(k):
        y += xp[j : j + hi : stride] @ weight[j]
    if bias is not None:
        y += bias
    return y


def conv1d_backward(
    gy: np.ndarray,
    x: np.ndarray,
    weight: np.ndarray,
    stride: int,
    pad_left: int,
):
    t_out = gy.shape[0]
    t_in = x.shape[0]
    k = weight.shape[0]
    xp = _padded(x, stride, pad_left, t_out, k)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(weight)
    hi = (t_out - 1) * stride + 1
    for j in range(k):
        sl = slice(j, j + hi, stride)
        gw[j] = xp[sl].T @ gy
        gxp[sl] += gy @ weight[j].T
    gx = gxp[pad_left : pad_left + t_in]
    gb = gy.sum(axis=0)
    return np.ascontiguousarray(gx), gw, gb
