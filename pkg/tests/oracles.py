"""Independent reference implementations used to check the fast paths.

Everything here is written as plainly as possible (scalar loops, two-pass
accumulation) and shares no code with the package: these are the oracles the
tests trust.
"""

import numpy as np


def numerical_gradient(f, x, eps=1e-5):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def max_rel_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor) over all elements."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def conv2d_reference(x, k, b, stride=1, dilation=1, padding=0):
    """Nested-loop cross-correlation, scalar arithmetic only."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n, c, h, w = x.shape
    o, _, kh, kw = k.shape
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    xp[:, :, padding:padding + h, padding:padding + w] = x
    oh = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    ow = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for yi in range(oh):
                for xi in range(ow):
                    acc = b[oi]
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                acc += (xp[ni, ci, yi * stride + i * dilation,
                                           xi * stride + j * dilation] * k[oi, ci, i, j])
                    out[ni, oi, yi, xi] = acc
    return out


def bilinear_reference(img, th, tw):
    """Per-pixel align_corners=False bilinear resize of an (N, C, H, W) array."""
    img = np.asarray(img, dtype=np.float64)
    n, c, h, w = img.shape
    out = np.zeros((n, c, th, tw))
    for yi in range(th):
        sy = min(max((yi + 0.5) * h / th - 0.5, 0.0), h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for xi in range(tw):
            sx = min(max((xi + 0.5) * w / tw - 0.5, 0.0), w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            out[:, :, yi, xi] = (
                img[:, :, y0, x0] * (1 - fy) * (1 - fx)
                + img[:, :, y0, x1] * (1 - fy) * fx
                + img[:, :, y1, x0] * fy * (1 - fx)
                + img[:, :, y1, x1] * fy * fx
            )
    return out


def silog_two_pass(pred_depth, gt_depth, joint_valid):
    """Two-pass SILog: mean of log-diffs first, then mean squared deviation."""
    diffs = []
    h, w = np.asarray(joint_valid).shape
    for i in range(h):
        for j in range(w):
            if joint_valid[i, j]:
                diffs.append(np.log(pred_depth[i, j]) - np.log(gt_depth[i, j]))
    n = len(diffs)
    mean = sum(diffs) / n
    return sum((d - mean) ** 2 for d in diffs) / n


def scan_encoded(e, edges):
    """Linear scan of normalized-log value e over the bin edges."""
    n_cls = len(edges) - 1
    if e < edges[0]:
        return 0
    for k in range(n_cls):
        if edges[k] <= e < edges[k + 1]:
            return k
    return n_cls - 1


def softmax_ce_reference(logits, labels, valid):
    """Direct high-precision softmax cross entropy, one pixel at a time."""
    import mpmath as mp
    mp.mp.dps = 50
    n, k, h, w = logits.shape
    total = mp.mpf(0)
    count = 0
    for ni in range(n):
        for yi in range(h):
            for xi in range(w):
                if not valid[ni, yi, xi]:
                    continue
                zs = [mp.mpf(float(logits[ni, ci, yi, xi])) for ci in range(k)]
                denom = mp.fsum(mp.e ** z for z in zs)
                p = (mp.e ** zs[labels[ni, yi, xi]]) / denom
                total += -mp.log(p)
                count += 1
    return float(total / count)
