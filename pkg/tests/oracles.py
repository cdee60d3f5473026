"""Slow, obviously-correct reference implementations used as test oracles."""

import numpy as np

TIE = 1e-9


def patch_at(fmap, y, x, k):
    return fmap[:, y:y + k, x:x + k].reshape(-1)


def match_oracle(fmap, store, level, candidates=None):
    """Exhaustive loop over every reference patch for every query location.

    Returns (ref, patch, score, flagged) arrays in row-major query order. Ties go to the
    lexicographically smallest (reference, patch) pair within TIE of the best score.
    """
    bank = store.banks[level]
    refs = range(store.N) if candidates is None else sorted(set(candidates))
    c, H, W = fmap.shape
    k = store.k
    out_ref, out_patch, out_score, out_flag = [], [], [], []
    for y in range(H - k + 1):
        for x in range(W - k + 1):
            q = patch_at(np.asarray(fmap, dtype=np.float64), y, x, k)
            qn = np.sqrt(np.sum(q * q))
            if qn == 0:
                out_ref.append(0), out_patch.append(0), out_score.append(0.0), out_flag.append(True)
                continue
            scores = []
            for i in refs:
                for j in range(bank.photo.shape[1]):
                    r = bank.photo[i, j].astype(np.float64)
                    rn = np.sqrt(np.sum(r * r))
                    s = 0.0 if rn == 0 else float(np.dot(q, r) / (qn * rn))
                    scores.append((s, i, j))
            best = max(s for s, _, _ in scores)
            s, i, j = next(t for t in scores if t[0] >= best - TIE)
            out_ref.append(i), out_patch.append(j), out_score.append(s), out_flag.append(False)
    return np.array(out_ref), np.array(out_patch), np.array(out_score), np.array(out_flag)


def random_instance(rng, N=None, k=None, size=None, channels=None, ties=False):
    """Random reference maps and a query map; ``ties`` duplicates references to force exact ties."""
    N = N or int(rng.integers(1, 5))
    k = k or int(rng.choice([1, 3]))
    h = size or int(rng.integers(k, 13))
    w = size or int(rng.integers(k, 13))
    c = channels or int(rng.integers(1, 5))
    photo = rng.standard_normal((N, c, h, w))
    if ties and N > 1:
        photo[-1] = photo[0]
    sketch = rng.standard_normal((N, c, h, w))
    qh, qw = int(rng.integers(k, 13)), int(rng.integers(k, 13))
    query = rng.standard_normal((c, qh, qw))
    if rng.random() < 0.3:
        query[:, : min(qh, k + 1), : min(qw, k + 1)] = 0      # zero-norm query patches
    return photo, sketch, query, k


def ssim_oracle(a, b, window, k1=0.01, k2=0.03, L=2.0):
    """Per-window SSIM with explicit weighted sums, averaged over windows and channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    n = window.shape[0]
    vals = []
    for ch in range(a.shape[0]):
        for y in range(a.shape[1] - n + 1):
            for x in range(a.shape[2] - n + 1):
                pa = a[ch, y:y + n, x:x + n]
                pb = b[ch, y:y + n, x:x + n]
                ma = np.sum(window * pa)
                mb = np.sum(window * pb)
                va = np.sum(window * (pa - ma) ** 2)
                vb = np.sum(window * (pb - mb) ** 2)
                cov = np.sum(window * (pa - ma) * (pb - mb))
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))
