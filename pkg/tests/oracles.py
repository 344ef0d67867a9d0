"""Independent reference implementations used only by the tests.

The Green function oracle evaluates the lattice sum sum_{k != 0} e^{2 pi i k.x} / (4 pi^2 |k|^2)
with the k2 direction summed in closed form,

    sum_{k2} e^{2 pi i k2 y} / (k1^2 + k2^2) = (pi/|k1|) (e^{-2 pi |k1| y} + e^{-2 pi |k1| (1-y)}) / (1 - e^{-2 pi |k1|})

for y in [0, 1], and the k1 = 0 row given by the Bernoulli polynomial 2 pi^2 (y^2 - y + 1/6).
Only |k1| <= KMAX is kept. Rows decay like e^{-2 pi k1 min(y, 1-y)}, so the coordinate
farther from the lattice is used as y.
"""
import numpy as np

KMAX = 200


def _rows(x, y, kmax=KMAX):
    k = np.arange(1, kmax + 1, dtype=float)
    q = np.exp(-2 * np.pi * k)
    ey = np.exp(-2 * np.pi * k * y)
    e1y = np.exp(-2 * np.pi * k * (1 - y))
    c = (np.pi / k) / (1 - q)
    row = c * (ey + e1y)
    drow = c * (-2 * np.pi * k * ey + 2 * np.pi * k * e1y)
    cos = np.cos(2 * np.pi * k * x)
    sin = np.sin(2 * np.pi * k * x)
    g = 2 * np.pi ** 2 * (y * y - y + 1 / 6) + 2 * np.sum(row * cos)
    gx = 2 * np.sum(row * (-2 * np.pi * k) * sin)
    gy = 2 * np.pi ** 2 * (2 * y - 1) + 2 * np.sum(drow * cos)
    s = 1 / (4 * np.pi ** 2)
    return g * s, gx * s, gy * s


def _prep(p):
    u, v = np.asarray(p, dtype=float) % 1.0
    du, dv = min(u, 1 - u), min(v, 1 - v)
    return u, v, du >= dv


def green_oracle(p, kmax=KMAX) -> float:
    u, v, swap = _prep(p)
    if swap:
        return _rows(v, u, kmax)[0]
    return _rows(u, v, kmax)[0]


def grad_oracle(p, kmax=KMAX) -> np.ndarray:
    u, v, swap = _prep(p)
    if swap:
        _, gv, gu = _rows(v, u, kmax)
    else:
        _, gu, gv = _rows(u, v, kmax)
    return np.array([gu, gv])


def kernel_oracle(p) -> np.ndarray:
    gx, gy = grad_oracle(p)
    return np.array([gy, -gx])


def green_fourier_2d(p, kmax):
    """Plain square truncation |k|_inf <= kmax (slow; small kmax only)."""
    k = np.arange(-kmax, kmax + 1)
    k1, k2 = np.meshgrid(k, k, indexing="ij")
    ksq = (k1 ** 2 + k2 ** 2).astype(float)
    ksq[kmax, kmax] = np.inf
    ph = 2 * np.pi * (k1 * p[0] + k2 * p[1])
    return float(np.sum(np.cos(ph) / (4 * np.pi ** 2 * ksq)))


def velocities_oracle(pos, xi):
    pos = np.asarray(pos, dtype=float)
    n = len(pos)
    out = np.zeros((n, 2))
    for i in range(n):
        for j in range(n):
            if i != j:
                out[i] += xi[j] * kernel_oracle(pos[i] - pos[j])
    return out


def rk4(f, y0, t, h):
    """Fixed-step classical RK4 from 0 to t with step about h."""
    y = np.array(y0, dtype=float)
    n = max(1, int(np.ceil(t / h)))
    h = t / n
    for _ in range(n):
        a = f(y)
        b = f(y + 0.5 * h * a)
        c = f(y + 0.5 * h * b)
        d = f(y + h * c)
        y = y + h * (a + 2 * b + 2 * c + d) / 6
    return y

