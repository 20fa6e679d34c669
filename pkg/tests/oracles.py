"""Independent reference implementations used by the unit and acceptance tests."""

import math

import numpy as np

COLOR = {"R": 0, "G": 1, "B": 2}


def oracle_pack(frame, cfa):
    """Per-index loop: plane order R, G1 (green on the red row), G2, B."""
    h, w = frame.shape
    out = np.zeros((4, h // 2, w // 2), dtype=frame.dtype)
    letters = cfa.value
    r_row = letters.index("R") // 2
    for y in range(h):
        for x in range(w):
            c = letters[(y % 2) * 2 + (x % 2)]
            if c == "R":
                k = 0
            elif c == "B":
                k = 3
            else:
                k = 1 if y % 2 == r_row else 2
            out[k, y // 2, x // 2] = frame[y, x]
    return out


def oracle_class(cfa, y, x):
    return COLOR[cfa.value[(y % 2) * 2 + (x % 2)]]


def distinct_site_frame(h, w, cfa):
    """Values encode the site class in the millions and the position below."""
    classes = np.array([[oracle_class(cfa, y, x) for x in range(w)] for y in range(h)])
    return classes * 1_000_000 + np.arange(h * w).reshape(h, w), classes


def q8(img16):
    return np.floor(img16.astype(np.float64) / 65535.0 * 255.0 + 0.5)


def oracle_psnr(a16, b16):
    mse = np.mean((q8(a16) - q8(b16)) ** 2)
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(255.0**2 / mse))


def oracle_ssim(a16, b16):
    """Window-by-window SSIM with explicit 11x11 Gaussian weights."""
    w = np.array([0.299, 0.587, 0.114])
    x, y = q8(a16), q8(b16)
    if x.ndim == 3:
        x, y = x @ w, y @ w
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    win = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (win * px).sum(), (win * py).sum()
            vx = (win * (px - mx) ** 2).sum()
            vy = (win * (py - my) ** 2).sum()
            cxy = (win * (px - mx) * (py - my)).sum()
            vals.append((2 * mx * my + c1) * (2 * cxy + c2)
                        / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return float(np.mean(vals))
