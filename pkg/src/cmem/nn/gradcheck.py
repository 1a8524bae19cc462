import numpy as np


def central_difference(f, x, h=1e-5, index=None, pattern=None):
    """Numerical gradient of ``sum(f())`` w.r.t. array ``x`` (mutated and restored).

    ``f`` may return a scalar or an array of per-element loss terms; for arrays
    the differences are taken term by term before summing, which avoids the
    cancellation error of differencing two large totals. ``index`` restricts
    the probe to a list of flat positions; unprobed entries are NaN.

    ``pattern``, if given, is called right after each ``f()`` and must return
    the activation pattern (ReLU masks, pooling argmax). Probes whose two sides
    see different patterns straddle a kink; they are reported as NaN.
    """
    flat = x.reshape(-1)
    out = np.full(flat.shape, np.nan)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        fp = np.asarray(f(), dtype=np.float64)
        sp = pattern() if pattern else None
        flat[i] = old - h
        fm = np.asarray(f(), dtype=np.float64)
        sm = pattern() if pattern else None
        flat[i] = old
        if pattern and not all(np.array_equal(a, b) for a, b in zip(sp, sm)):
            continue
        out[i] = np.sum(fp - fm) / (2 * h)
    return out.reshape(x.shape)


def max_relative_error(analytic, numeric, floor=1e-6):
    """Elementwise |a - n| / max(|a|, |n|, floor), maximised over finite entries."""
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = np.isfinite(n)
    a, n = a[keep], n[keep]
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))
