"""Hot numeric kernels: numba-jitted inner loops with pure-numpy fallbacks.

Every kernel has two implementations, ``*_numba`` and ``*_numpy``, that agree
to floating-point round-off. The module-level dispatchers pick the numba path
unless the ``CLICKREFINE_NUMBA`` environment variable disables it (``0``,
``false``, ``no``, ``off``) or numba is not importable.

Shared bilinear convention: cell (r, c) of an (H, W, C) grid covers the unit
square [r, r+1) x [c, c+1) with its center at (r+0.5, c+0.5); samples outside
the grid read as zero unless stated otherwise.

``scripts/benchmark_kernels.py`` times both paths side by side.
"""

from __future__ import annotations

import os

import numpy as np

NUMBA_ENV = "CLICKREFINE_NUMBA"


def _numba_enabled_by_env() -> bool:
    return os.environ.get(NUMBA_ENV, "1").strip().lower() not in {"0", "false", "no", "off"}


try:  # pragma: no cover - exercised implicitly at import
    import warnings

    with warnings.catch_warnings():
        # the sandbox TBB is too old; numba falls back to another layer
        warnings.simplefilter("ignore")
        import numba
        from numba import njit, prange

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco

    prange = range

USE_NUMBA = HAVE_NUMBA and _numba_enabled_by_env()


def backend() -> str:
    """Name of the active kernel backend."""
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# im2col / col2im (convolution patch gather and scatter)
# ---------------------------------------------------------------------------


def im2col_numpy(xp: np.ndarray, ksize: int, stride: int) -> np.ndarray:
    hp, wp, c = xp.shape
    oh = (hp - ksize) // stride + 1
    ow = (wp - ksize) // stride + 1
    cols = np.empty((oh, ow, ksize, ksize, c), dtype=xp.dtype)
    for ki in range(ksize):
        for kj in range(ksize):
            cols[:, :, ki, kj, :] = xp[ki : ki + stride * oh : stride, kj : kj + stride * ow : stride, :]
    return cols.reshape(oh * ow, ksize * ksize * c)


@njit(cache=True, parallel=True)
def _im2col_nb(xp, ksize, stride, oh, ow):
    hp, wp, c = xp.shape
    cols = np.empty((oh * ow, ksize * ksize * c), dtype=xp.dtype)
    for p in prange(oh * ow):
        i = p // ow
        j = p % ow
        base_r = i * stride
        base_c = j * stride
        idx = 0
        for ki in range(ksize):
            for kj in range(ksize):
                for ch in range(c):
                    cols[p, idx] = xp[base_r + ki, base_c + kj, ch]
                    idx += 1
    return cols


def im2col_numba(xp: np.ndarray, ksize: int, stride: int) -> np.ndarray:
    hp, wp, _ = xp.shape
    oh = (hp - ksize) // stride + 1
    ow = (wp - ksize) // stride + 1
    return _im2col_nb(np.ascontiguousarray(xp), ksize, stride, oh, ow)


def im2col(xp: np.ndarray, ksize: int, stride: int) -> np.ndarray:
    """Gather k x k patches of a padded (Hp, Wp, C) array into a
    (OH*OW, k*k*C) matrix, patch entries ordered (ki, kj, channel)."""
    if USE_NUMBA:
        return im2col_numba(xp, ksize, stride)
    return im2col_numpy(xp, ksize, stride)


def col2im_numpy(cols: np.ndarray, hp: int, wp: int, c: int, ksize: int, stride: int) -> np.ndarray:
    oh = (hp - ksize) // stride + 1
    ow = (wp - ksize) // stride + 1
    colsr = cols.reshape(oh, ow, ksize, ksize, c)
    xp = np.zeros((hp, wp, c), dtype=cols.dtype)
    for ki in range(ksize):
        for kj in range(ksize):
            xp[ki : ki + stride * oh : stride, kj : kj + stride * ow : stride, :] += colsr[:, :, ki, kj, :]
    return xp


@njit(cache=True, parallel=True)
def _col2im_nb(cols, hp, wp, c, ksize, stride, oh, ow):
    xp = np.zeros((hp, wp, c), dtype=cols.dtype)
    # parallel over channels: scatter targets are disjoint per channel
    for ch in prange(c):
        for p in range(oh * ow):
            i = p // ow
            j = p % ow
            base_r = i * stride
            base_c = j * stride
            for ki in range(ksize):
                for kj in range(ksize):
                    xp[base_r + ki, base_c + kj, ch] += cols[p, (ki * ksize + kj) * c + ch]
    return xp


def col2im_numba(cols: np.ndarray, hp: int, wp: int, c: int, ksize: int, stride: int) -> np.ndarray:
    oh = (hp - ksize) // stride + 1
    ow = (wp - ksize) // stride + 1
    return _col2im_nb(np.ascontiguousarray(cols), hp, wp, c, ksize, stride, oh, ow)


def col2im(cols: np.ndarray, hp: int, wp: int, c: int, ksize: int, stride: int) -> np.ndarray:
    """Scatter-add the transpose of :func:`im2col` (gradient of the gather)."""
    if USE_NUMBA:
        return col2im_numba(cols, hp, wp, c, ksize, stride)
    return col2im_numpy(cols, hp, wp, c, ksize, stride)


# ---------------------------------------------------------------------------
# RoI align (average of 2x2 bilinear samples per bin, zero padding)
# ---------------------------------------------------------------------------


def _bilinear_corners(h: int, w: int, y: float, x: float):
    u = y - 0.5
    v = x - 0.5
    r0 = int(np.floor(u))
    c0 = int(np.floor(v))
    ay = u - r0
    ax = v - c0
    return r0, c0, ay, ax


def roi_align_numpy(fm: np.ndarray, boxes: np.ndarray, out_size: int, samples: int = 2) -> np.ndarray:
    h, w, c = fm.shape
    n = boxes.shape[0]
    out = np.zeros((n, out_size, out_size, c), dtype=fm.dtype)
    inv = 1.0 / (samples * samples)
    for b in range(n):
        x0, y0, x1, y1 = boxes[b]
        bw = (x1 - x0) / out_size
        bh = (y1 - y0) / out_size
        for i in range(out_size):
            for j in range(out_size):
                acc = np.zeros(c, dtype=fm.dtype)
                for sy in range(samples):
                    for sx in range(samples):
                        y = y0 + (i + (sy + 0.5) / samples) * bh
                        x = x0 + (j + (sx + 0.5) / samples) * bw
                        r0, c0, ay, ax = _bilinear_corners(h, w, y, x)
                        for dr in (0, 1):
                            rr = r0 + dr
                            if rr < 0 or rr >= h:
                                continue
                            wy = ay if dr == 1 else 1.0 - ay
                            for dc in (0, 1):
                                cc = c0 + dc
                                if cc < 0 or cc >= w:
                                    continue
                                wx = ax if dc == 1 else 1.0 - ax
                                acc = acc + (wy * wx) * fm[rr, cc, :]
                out[b, i, j, :] = acc * inv
    return out


@njit(cache=True, parallel=True)
def _roi_align_nb(fm, boxes, out_size, samples):
    h, w, c = fm.shape
    n = boxes.shape[0]
    out = np.zeros((n, out_size, out_size, c), dtype=fm.dtype)
    inv = 1.0 / (samples * samples)
    for b in prange(n):
        x0 = boxes[b, 0]
        y0 = boxes[b, 1]
        x1 = boxes[b, 2]
        y1 = boxes[b, 3]
        bw = (x1 - x0) / out_size
        bh = (y1 - y0) / out_size
        for i in range(out_size):
            for j in range(out_size):
                for sy in range(samples):
                    for sx in range(samples):
                        y = y0 + (i + (sy + 0.5) / samples) * bh
                        x = x0 + (j + (sx + 0.5) / samples) * bw
                        u = y - 0.5
                        v = x - 0.5
                        r0 = int(np.floor(u))
                        c0 = int(np.floor(v))
                        ay = u - r0
                        ax = v - c0
                        for dr in range(2):
                            rr = r0 + dr
                            if rr < 0 or rr >= h:
                                continue
                            wy = ay if dr == 1 else 1.0 - ay
                            for dc in range(2):
                                cc = c0 + dc
                                if cc < 0 or cc >= w:
                                    continue
                                wx = ax if dc == 1 else 1.0 - ax
                                wgt = wy * wx * inv
                                for ch in range(c):
                                    out[b, i, j, ch] += wgt * fm[rr, cc, ch]
    return out


def roi_align_numba(fm: np.ndarray, boxes: np.ndarray, out_size: int, samples: int = 2) -> np.ndarray:
    return _roi_align_nb(
        np.ascontiguousarray(fm), np.ascontiguousarray(boxes, dtype=fm.dtype), out_size, samples
    )


def roi_align(fm: np.ndarray, boxes: np.ndarray, out_size: int, samples: int = 2) -> np.ndarray:
    """Pool (n, 4) boxes given in feature coordinates from an (H, W, C)
    feature map into (n, S, S, C) bins."""
    if USE_NUMBA:
        return roi_align_numba(fm, boxes, out_size, samples)
    return roi_align_numpy(fm, boxes, out_size, samples)


def roi_align_grads_numpy(
    fm: np.ndarray, boxes: np.ndarray, out_size: int, grad_out: np.ndarray, samples: int = 2
):
    h, w, c = fm.shape
    n = boxes.shape[0]
    grad_fm = np.zeros_like(fm)
    grad_boxes = np.zeros_like(boxes)
    inv = 1.0 / (samples * samples)
    for b in range(n):
        x0, y0, x1, y1 = boxes[b]
        bw = (x1 - x0) / out_size
        bh = (y1 - y0) / out_size
        for i in range(out_size):
            for j in range(out_size):
                g = grad_out[b, i, j, :] * inv
                for sy in range(samples):
                    for sx in range(samples):
                        ty = (i + (sy + 0.5) / samples) / out_size
                        tx = (j + (sx + 0.5) / samples) / out_size
                        y = y0 + ty * (y1 - y0)
                        x = x0 + tx * (x1 - x0)
                        r0, c0, ay, ax = _bilinear_corners(h, w, y, x)
                        dv_dy = 0.0
                        dv_dx = 0.0
                        for dr in (0, 1):
                            rr = r0 + dr
                            if rr < 0 or rr >= h:
                                continue
                            wy = ay if dr == 1 else 1.0 - ay
                            sy_sign = 1.0 if dr == 1 else -1.0
                            for dc in (0, 1):
                                cc = c0 + dc
                                if cc < 0 or cc >= w:
                                    continue
                                wx = ax if dc == 1 else 1.0 - ax
                                sx_sign = 1.0 if dc == 1 else -1.0
                                grad_fm[rr, cc, :] += (wy * wx) * g
                                gf = float(np.dot(g, fm[rr, cc, :]))
                                dv_dy += sy_sign * wx * gf
                                dv_dx += wy * sx_sign * gf
                        grad_boxes[b, 0] += dv_dx * (1.0 - tx)
                        grad_boxes[b, 2] += dv_dx * tx
                        grad_boxes[b, 1] += dv_dy * (1.0 - ty)
                        grad_boxes[b, 3] += dv_dy * ty
    return grad_fm, grad_boxes


@njit(cache=True)
def _roi_align_grads_nb(fm, boxes, out_size, grad_out, samples):
    h, w, c = fm.shape
    n = boxes.shape[0]
    grad_fm = np.zeros_like(fm)
    grad_boxes = np.zeros_like(boxes)
    inv = 1.0 / (samples * samples)
    for b in range(n):
        x0 = boxes[b, 0]
        y0 = boxes[b, 1]
        x1 = boxes[b, 2]
        y1 = boxes[b, 3]
        for i in range(out_size):
            for j in range(out_size):
                for sy in range(samples):
                    for sx in range(samples):
                        ty = (i + (sy + 0.5) / samples) / out_size
                        tx = (j + (sx + 0.5) / samples) / out_size
                        y = y0 + ty * (y1 - y0)
                        x = x0 + tx * (x1 - x0)
                        u = y - 0.5
                        v = x - 0.5
                        r0 = int(np.floor(u))
                        c0 = int(np.floor(v))
                        ay = u - r0
                        ax = v - c0
                        dv_dy = 0.0
                        dv_dx = 0.0
                        for dr in range(2):
                            rr = r0 + dr
                            if rr < 0 or rr >= h:
                                continue
                            wy = ay if dr == 1 else 1.0 - ay
                            sgn_y = 1.0 if dr == 1 else -1.0
                            for dc in range(2):
                                cc = c0 + dc
                                if cc < 0 or cc >= w:
                                    continue
                                wx = ax if dc == 1 else 1.0 - ax
                                sgn_x = 1.0 if dc == 1 else -1.0
                                gf = 0.0
                                for ch in range(c):
                                    g = grad_out[b, i, j, ch] * inv
                                    grad_fm[rr, cc, ch] += wy * wx * g
                                    gf += g * fm[rr, cc, ch]
                                dv_dy += sgn_y * wx * gf
                                dv_dx += wy * sgn_x * gf
                        grad_boxes[b, 0] += dv_dx * (1.0 - tx)
                        grad_boxes[b, 2] += dv_dx * tx
                        grad_boxes[b, 1] += dv_dy * (1.0 - ty)
                        grad_boxes[b, 3] += dv_dy * ty
    return grad_fm, grad_boxes


def roi_align_grads_numba(fm, boxes, out_size, grad_out, samples: int = 2):
    return _roi_align_grads_nb(
        np.ascontiguousarray(fm),
        np.ascontiguousarray(boxes, dtype=fm.dtype),
        out_size,
        np.ascontiguousarray(grad_out, dtype=fm.dtype),
        samples,
    )


def roi_align_grads(fm, boxes, out_size, grad_out, samples: int = 2):
    """Gradients of :func:`roi_align` with respect to the feature map and the
    box coordinates."""
    if USE_NUMBA:
        return roi_align_grads_numba(fm, boxes, out_size, grad_out, samples)
    return roi_align_grads_numpy(fm, boxes, out_size, grad_out, samples)


# ---------------------------------------------------------------------------
# Single-point bilinear lookup
# ---------------------------------------------------------------------------


def bilinear_lookup(fm: np.ndarray, y: float, x: float) -> np.ndarray:
    """Bilinear sample of an (H, W, C) map at continuous (y, x); zero outside."""
    h, w, c = fm.shape
    r0, c0, ay, ax = _bilinear_corners(h, w, y, x)
    out = np.zeros(c, dtype=fm.dtype)
    for dr in (0, 1):
        rr = r0 + dr
        if rr < 0 or rr >= h:
            continue
        wy = ay if dr == 1 else 1.0 - ay
        for dc in (0, 1):
            cc = c0 + dc
            if cc < 0 or cc >= w:
                continue
            wx = ax if dc == 1 else 1.0 - ax
            out += (wy * wx) * fm[rr, cc, :]
    return out


def bilinear_lookup_grad(fm_shape, y: float, x: float, grad: np.ndarray) -> np.ndarray:
    h, w, c = fm_shape
    grad_fm = np.zeros(fm_shape, dtype=grad.dtype)
    r0, c0, ay, ax = _bilinear_corners(h, w, y, x)
    for dr in (0, 1):
        rr = r0 + dr
        if rr < 0 or rr >= h:
            continue
        wy = ay if dr == 1 else 1.0 - ay
        for dc in (0, 1):
            cc = c0 + dc
            if cc < 0 or cc >= w:
                continue
            wx = ax if dc == 1 else 1.0 - ax
            grad_fm[rr, cc, :] += (wy * wx) * grad
    return grad_fm


# ---------------------------------------------------------------------------
# Bilinear resize (clamped borders; used by the tracker's scale pyramid)
# ---------------------------------------------------------------------------


def resize_bilinear_numpy(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    h, w, c = img.shape
    out = np.empty((oh, ow, c), dtype=img.dtype)
    ys = np.clip((np.arange(oh) + 0.5) * (h / oh) - 0.5, 0.0, h - 1.0)
    xs = np.clip((np.arange(ow) + 0.5) * (w / ow) - 0.5, 0.0, w - 1.0)
    r0 = np.minimum(ys.astype(np.int64), h - 2) if h > 1 else np.zeros(oh, np.int64)
    c0 = np.minimum(xs.astype(np.int64), w - 2) if w > 1 else np.zeros(ow, np.int64)
    ay = (ys - r0)[:, None, None]
    ax = (xs - c0)[None, :, None]
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    tl = img[r0][:, c0]
    tr = img[r0][:, c1]
    bl = img[r1][:, c0]
    br = img[r1][:, c1]
    out[:] = (1 - ay) * ((1 - ax) * tl + ax * tr) + ay * ((1 - ax) * bl + ax * br)
    return out


@njit(cache=True, parallel=True)
def _resize_bilinear_nb(img, oh, ow):
    h, w, c = img.shape
    out = np.empty((oh, ow, c), dtype=img.dtype)
    for i in prange(oh):
        y = (i + 0.5) * (h / oh) - 0.5
        if y < 0.0:
            y = 0.0
        if y > h - 1.0:
            y = h - 1.0
        r0 = int(y)
        if r0 > h - 2:
            r0 = h - 2 if h > 1 else 0
        r1 = r0 + 1 if r0 + 1 < h else h - 1
        ay = y - r0
        for j in range(ow):
            x = (j + 0.5) * (w / ow) - 0.5
            if x < 0.0:
                x = 0.0
            if x > w - 1.0:
                x = w - 1.0
            c0 = int(x)
            if c0 > w - 2:
                c0 = w - 2 if w > 1 else 0
            c1 = c0 + 1 if c0 + 1 < w else w - 1
            ax = x - c0
            for ch in range(c):
                top = (1.0 - ax) * img[r0, c0, ch] + ax * img[r0, c1, ch]
                bot = (1.0 - ax) * img[r1, c0, ch] + ax * img[r1, c1, ch]
                out[i, j, ch] = (1.0 - ay) * top + ay * bot
    return out


def resize_bilinear_numba(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    return _resize_bilinear_nb(np.ascontiguousarray(img), oh, ow)


def resize_bilinear(img: np.ndarray, oh: int, ow: int) -> np.ndarray:
    if USE_NUMBA:
        return resize_bilinear_numba(img, oh, ow)
    return resize_bilinear_numpy(img, oh, ow)


# ---------------------------------------------------------------------------
# Zero-normalized cross-correlation response (FFT + integral images).
# FFT is asymptotically far ahead of a spatial loop here, so both backends
# share this numpy implementation; the benchmark script includes a direct
# numba loop for comparison.
# ---------------------------------------------------------------------------


def _xcorr_valid(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid-mode cross-correlation sum_ij a[u+i, v+j] * b[i, j] via FFT."""
    ah, aw = a.shape
    bh, bw = b.shape
    fa = np.fft.rfft2(a, (ah, aw))
    fb = np.fft.rfft2(b, (ah, aw))
    cc = np.fft.irfft2(fa * np.conj(fb), (ah, aw))
    return cc[: ah - bh + 1, : aw - bw + 1]


def _patch_sums(a: np.ndarray, bh: int, bw: int) -> np.ndarray:
    """Sliding-window sums of a 2D array over (bh, bw) patches (valid mode)."""
    integral = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    integral[1:, 1:] = np.cumsum(np.cumsum(a, axis=0), axis=1)
    return (
        integral[bh:, bw:]
        - integral[:-bh, bw:]
        - integral[bh:, :-bw]
        + integral[:-bh, :-bw]
    )


def ncc_response(window: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Zero-normalized cross-correlation of a template over a search window.

    Both arrays are (H, W, C); the response covers all valid placements and
    lies in [-1, 1]. Positions with near-zero local variance score 0.
    """
    wh, ww, c = window.shape
    th, tw, _ = template.shape
    win = window.astype(np.float64, copy=False)
    tz = template.astype(np.float64) - template.mean()
    num = np.zeros((wh - th + 1, ww - tw + 1), dtype=np.float64)
    for ch in range(c):
        num += _xcorr_valid(win[:, :, ch], tz[:, :, ch])
    n = th * tw * c
    s1 = _patch_sums(win.sum(axis=2), th, tw)
    s2 = _patch_sums((win * win).sum(axis=2), th, tw)
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    t_energy = float(np.sum(tz * tz))
    denom = np.sqrt(var * t_energy)
    out = np.zeros_like(num)
    ok = denom > 1e-12
    out[ok] = num[ok] / denom[ok]
    return np.clip(out, -1.0, 1.0)
