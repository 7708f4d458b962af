"""Pure numpy versions of the convolution gather/scatter kernels.

Both functions work on padded, channel-first batches ``[N, C, Hp, Wp]`` and
a column layout ``[N, Ho, Wo, C, kh, kw]`` (flattened to 2-D by callers).
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride):
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    # [N, C, Ho, Wo, kh, kw] -> [N, Ho, Wo, C, kh, kw]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5))


def col2im(cols, shape, kh, kw, stride):
    ho, wo = cols.shape[1:3]
    out = np.zeros(shape, dtype=cols.dtype)
    src = cols.transpose(0, 3, 4, 5, 1, 2)  # [N, C, kh, kw, Ho, Wo]
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * (ho - 1) + 1:stride,
                j:j + stride * (wo - 1) + 1:stride] += src[:, :, i, j]
    return out
