"""Independent reference implementations used as test oracles.

Everything here is deliberately written the slow, obvious way (python
loops, direct formula transcription) and kept free of the library's own
vectorized code paths.
"""

import numpy as np


def conv2d_naive(x, w, b=None, stride=1, padding=0, groups=1):
    """Direct-loop 2-D convolution."""
    B, Cin, H, W = x.shape
    Cout, Cg, kh, kw = w.shape
    sh = sw = stride
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oh = (H + 2 * padding - kh) // sh + 1
    ow = (W + 2 * padding - kw) // sw + 1
    out = np.zeros((B, Cout, oh, ow))
    cpg_out = Cout // groups
    for bi in range(B):
        for co in range(Cout):
            g = co // cpg_out
            for yy in range(oh):
                for xx in range(ow):
                    acc = 0.0
                    for ci in range(Cg):
                        cin = g * Cg + ci
                        for i in range(kh):
                            for j in range(kw):
                                acc += (w[co, ci, i, j]
                                        * xp[bi, cin, yy * sh + i, xx * sw + j])
                    out[bi, co, yy, xx] = acc
            if b is not None:
                out[bi, co] += b[co]
    return out


def pim_scalar(t1, t2, p1, p2):
    """Elementwise expectation formula, scalar transcription."""
    o1 = t1 * p1 + t2 * (1 - p1) * p2 + 0.5 * (t1 + t2) * (1 - p1) * (1 - p2)
    o2 = t2 * p2 + t1 * (1 - p2) * p1 + 0.5 * (t1 + t2) * (1 - p2) * (1 - p1)
    return o1, o2


def pmffm_loop(t1, t2, perception_w, perception_b, head_w, head_b,
               alphas, betas, k):
    """Per-mini-patch loop over the full fusion pipeline."""
    B, d, h, w = t1.shape
    l = d // k
    m = len(alphas)
    out = np.zeros_like(t1)
    for bi in range(B):
        for yy in range(h):
            for xx in range(w):
                for q in range(k):
                    f1 = t1[bi, q * l:(q + 1) * l, yy, xx]
                    f2 = t2[bi, q * l:(q + 1) * l, yy, xx]
                    z = perception_w.T @ ((f1 + f2) / 2.0) + perception_b
                    e = np.exp(z - z.max())
                    probs = e / e.sum()
                    heads = np.zeros((l, m))
                    for j in range(m):
                        cj = alphas[j] * f1 + betas[j] * f2
                        heads[:, j] = head_w[j] @ cj + head_b[j]
                    out[bi, q * l:(q + 1) * l, yy, xx] = heads @ probs
    return out


def edge_weights_brute(gt, lam, radius):
    """Exhaustive neighborhood scan for the boundary weight map."""
    gt = np.asarray(gt).astype(int)
    H, W = gt.shape
    boundary = np.zeros((H, W), dtype=bool)
    for y in range(H):
        for x in range(W):
            for dy, dx in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ny, nx = y + dy, x + dx
                if 0 <= ny < H and 0 <= nx < W and gt[ny, nx] != gt[y, x]:
                    boundary[y, x] = True
    w = np.ones((H, W))
    for y in range(H):
        for x in range(W):
            near = False
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    ny, nx = y + dy, x + dx
                    if 0 <= ny < H and 0 <= nx < W and boundary[ny, nx]:
                        near = True
            if near:
                w[y, x] += lam
    return w


def confusion_brute(pred, gt):
    """Per-pixel quadruple count."""
    tp = fp = tn = fn = 0
    for p, g in zip(np.asarray(pred).reshape(-1), np.asarray(gt).reshape(-1)):
        if p and g:
            tp += 1
        elif p and not g:
            fp += 1
        elif not p and g:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def adamw_scalar_steps(x0, grad_fn, lr, n_steps, beta1=0.9, beta2=0.999,
                       eps=1e-8, weight_decay=0.0):
    """Hand-iterated decoupled-weight-decay Adam recurrence on a scalar."""
    x, m, v = x0, 0.0, 0.0
    for t in range(1, n_steps + 1):
        g = grad_fn(x)
        x = x * (1.0 - lr * weight_decay)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
    return x


def overlay_reference(pred, gt, img):
    """Per-pixel classification into white/red/green/dimmed."""
    H, W = np.asarray(pred).shape
    out = np.zeros((H, W, 3), dtype=np.uint8)
    for y in range(H):
        for x in range(W):
            p, g = bool(pred[y, x]), bool(gt[y, x])
            if p and g:
                out[y, x] = (255, 255, 255)
            elif p and not g:
                out[y, x] = (255, 0, 0)
            elif g and not p:
                out[y, x] = (0, 255, 0)
            else:
                out[y, x] = (img[y, x].astype(np.float64) * 0.35).astype(np.uint8)
    return out


def finite_difference(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of an ndarray."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad
