"""Naive scalar-loop reference implementations used as test oracles.

Everything in here is written with plain Python loops and math.exp, on
purpose: these functions must stay independent of the vectorized library
code they are used to check. Slow is fine; they only ever see tiny inputs.
"""

import math

import numpy as np


def ref_softmax(values):
    """Softmax of a flat list, max-subtracted for stability."""
    m = max(values)
    exps = [math.exp(v - m) for v in values]
    s = sum(exps)
    return [e / s for e in exps]


def ref_global_pool(x):
    """Mean over the two spatial dims of an (h, w, C) array -> list of C floats."""
    h, w, c = x.shape
    out = []
    for ch in range(c):
        total = 0.0
        for i in range(h):
            for j in range(w):
                total += x[i, j, ch]
        out.append(total / (h * w))
    return out


def ref_spatial_attention(x_a, x_v):
    """Cross-modal spatial attention: per-cell dot with pooled audio, softmax over space.

    Returns (alpha (h, w), x_av (h, w, C)) as float64 arrays.
    """
    h, w, c = x_v.shape
    pooled = ref_global_pool(x_a)
    logits = []
    for i in range(h):
        for j in range(w):
            dot = 0.0
            for ch in range(c):
                dot += x_v[i, j, ch] * pooled[ch]
            logits.append(dot)
    weights = ref_softmax(logits)
    alpha = np.zeros((h, w))
    x_av = np.zeros((h, w, c))
    idx = 0
    for i in range(h):
        for j in range(w):
            alpha[i, j] = weights[idx]
            for ch in range(c):
                x_av[i, j, ch] = weights[idx] * x_v[i, j, ch]
            idx += 1
    return alpha, x_av


def ref_temporal_attention(x_t, memory, wq_heads, wk_heads):
    """Scaled dot-product attention over {current} + memory, averaged over heads.

    x_t: (h, w, C); memory: list of (h, w, C); wq_heads/wk_heads: lists of (C, C).
    Returns (beta list of K+1 floats, x_dot (h, w, C)).
    """
    c = x_t.shape[2]
    candidates = [x_t] + list(memory)
    pooled = [ref_global_pool(m) for m in candidates]
    n_heads = len(wq_heads)
    beta = [0.0] * len(candidates)
    for l in range(n_heads):
        q = [sum(pooled[0][a] * wq_heads[l][a][b] for a in range(c)) for b in range(c)]
        logits = []
        for p in pooled:
            k = [sum(p[a] * wk_heads[l][a][b] for a in range(c)) for b in range(c)]
            logits.append(sum(q[b] * k[b] for b in range(c)) / math.sqrt(c))
        weights = ref_softmax(logits)
        for i, wgt in enumerate(weights):
            beta[i] += wgt / n_heads
    x_dot = np.zeros_like(x_t)
    for i, cand in enumerate(candidates):
        x_dot += beta[i] * cand
    return beta, x_dot


def ref_memory_layer(x_a, x_v, bank_a, bank_v, bank_av, params, variant="full"):
    """Straight-line reference of the memory layer forward pass.

    params: dict with keys 'a', 'v', 'av', each (wq_heads, wk_heads).
    variant: 'full', 'uni' (skip cross-modal temporal), or
             'none' (skip all temporal propagation).
    Returns (x_av_ddot, x_a_dot).
    """
    if variant == "none":
        x_a_dot, x_v_dot = x_a, x_v
    else:
        _, x_a_dot = ref_temporal_attention(x_a, bank_a, *params["a"])
        _, x_v_dot = ref_temporal_attention(x_v, bank_v, *params["v"])
    _, x_av_dot = ref_spatial_attention(x_a_dot, x_v_dot)
    if variant == "full":
        _, x_av_ddot = ref_temporal_attention(x_av_dot, bank_av, *params["av"])
    else:
        x_av_ddot = x_av_dot
    return x_av_ddot, x_a_dot


def flood_fill_components(binary, min_area=1):
    """8-connected components via explicit BFS flood fill.

    Returns a list of (pixel_count, (x0, y0, x1, y1)) tuples, one per kept
    component, in scan order of the first-seen pixel.
    """
    h, w = binary.shape
    seen = [[False] * w for _ in range(h)]
    comps = []
    for sy in range(h):
        for sx in range(w):
            if binary[sy, sx] == 0 or seen[sy][sx]:
                continue
            queue = [(sy, sx)]
            seen[sy][sx] = True
            pixels = []
            while queue:
                y, x = queue.pop()
                pixels.append((y, x))
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and not seen[ny][nx] and binary[ny, nx] != 0:
                            seen[ny][nx] = True
                            queue.append((ny, nx))
            if len(pixels) < min_area:
                continue
            ys = [p[0] for p in pixels]
            xs = [p[1] for p in pixels]
            comps.append((len(pixels), (min(xs), min(ys), max(xs) + 1, max(ys) + 1)))
    return comps


def ref_box_iou(a, b):
    """Half-open pixel-rectangle IoU, written out longhand."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def brute_force_nms(boxes, scores, iou_thresh):
    """Greedy NMS with an explicit pairwise loop; returns kept indices in score order."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        suppressed = False
        for j in kept:
            if ref_box_iou(boxes[i], boxes[j]) > iou_thresh:
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return kept


def ref_ciou(alpha, g, tau):
    """Pixel-enumeration consensus IoU at threshold tau."""
    h, w = alpha.shape
    hit = 0
    false_pos = 0
    total_gt = 0
    for i in range(h):
        for j in range(w):
            pos = alpha[i, j] > tau
            if g[i, j] > 0:
                total_gt += 1
                if pos:
                    hit += 1
            elif pos:
                false_pos += 1
    return hit / (total_gt + false_pos)


def ref_otsu(values, bins=256):
    """Exhaustive search over every histogram split for the Otsu threshold.

    values: flat iterable in [0, 1]. Returns the boundary value between the
    two classes, or 0.0 when no split has positive between-class variance.
    """
    hist = [0] * bins
    count = 0
    for v in values:
        b = int(v * bins)
        if b >= bins:
            b = bins - 1
        hist[b] += 1
        count += 1
    best_var = 0.0
    best_split = None
    for split in range(bins - 1):
        w0 = sum(hist[: split + 1])
        w1 = count - w0
        if w0 == 0 or w1 == 0:
            continue
        centers = [(b + 0.5) / bins for b in range(bins)]
        mu0 = sum(hist[b] * centers[b] for b in range(split + 1)) / w0
        mu1 = sum(hist[b] * centers[b] for b in range(split + 1, bins)) / w1
        var = (w0 / count) * (w1 / count) * (mu0 - mu1) ** 2
        if var > best_var:
            best_var = var
            best_split = split
    if best_split is None:
        return 0.0
    return (best_split + 1) / bins


def ref_bilinear(src, out_h, out_w):
    """Corner-aligned bilinear resize with explicit per-pixel loops."""
    h, w = src.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        sy = i * (h - 1) / (out_h - 1) if out_h > 1 else 0.0
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for j in range(out_w):
            sx = j * (w - 1) / (out_w - 1) if out_w > 1 else 0.0
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out
