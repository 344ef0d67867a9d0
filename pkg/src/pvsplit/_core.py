"""Compiled inner loops: Ewald Green function, pair kernels, integrators, MCMC chains.

Kernel parameters travel as flat arrays so every jitted function has the same
signature tail ``(kp, fcoef, tab)``:

kp     float64 parameter vector, slots listed below
fcoef  (K+1, K+1) Fourier weights of G for k1, k2 >= 0 (sign multiplicity folded in)
tab    (2, n, n) cubic B-spline coefficients of the regular part of K (table mode)
"""
import math

import numpy as np
from numba import njit

MODE_EXACT = 0
MODE_REGULARIZED = 1
MODE_TABLE = 2

# kp slots
KP_MODE = 0
KP_ALPHA2 = 1
KP_SHELLS = 2
KP_MEANSHIFT = 3
KP_GLO = 4
KP_GHI = 5
KP_DELTA = 6
KP_TABLE_N = 7
KP_BUMP_R1 = 8
KP_BUMP_R2 = 9
KP_UMAX = 10
KP_FOURIER_K = 11
KP_SIZE = 12

SINGULAR_R = 1e-14

# status codes returned by integrators
OK = 0
COLLISION = 1
UNDERFLOW = 2
BUDGET = 3
SINGULAR = 4

_EULER_GAMMA = 0.57721566490153286061
_TWO_PI = 2.0 * math.pi

jit = njit(cache=True, nogil=True, fastmath=False)


@jit
def exp1(u):
    """Exponential integral E1(u) for u > 0."""
    if u <= 0.0:
        return np.inf
    if u > 700.0:
        return 0.0
    if u <= 1.0:
        s = 0.0
        term = 1.0
        k = 1
        while True:
            term *= -u / k
            add = -term / k
            s += add
            if abs(add) < 1e-17 * abs(s) or k > 60:
                break
            k += 1
        return -_EULER_GAMMA - math.log(u) + s
    # modified Lentz continued fraction
    b = u + 1.0
    c = 1e300
    d = 1.0 / b
    h = d
    for i in range(1, 200):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        dl = c * d
        h *= dl
        if abs(dl - 1.0) < 1e-16:
            break
    return h * math.exp(-u)


@jit
def min_image1(d):
    r = d - math.floor(d + 0.5)
    if r == -0.5:
        r = 0.5
    return r


@jit
def _green_terms(dx, dy, kp, fcoef, want_value):
    """(G, dG/dx, dG/dy) at the minimal-image displacement (dx, dy), Ewald split.

    fcoef[k1, k2] (k1, k2 >= 0) carries the sign-multiplicity of the cosine series so
    the reciprocal sum factorizes into cos(2 pi k1 dx) cos(2 pi k2 dy).
    G is skipped (returned as 0) unless want_value.
    """
    a2 = kp[KP_ALPHA2]
    shells = int(kp[KP_SHELLS])
    umax = kp[KP_UMAX]
    g = 0.0
    gx = 0.0
    gy = 0.0
    for n1 in range(-shells, shells + 1):
        rx = dx - n1
        ux = a2 * rx * rx
        if ux > umax:
            continue
        for n2 in range(-shells, shells + 1):
            ry = dy - n2
            r2 = rx * rx + ry * ry
            u = a2 * r2
            if u > umax:
                continue
            e = math.exp(-u)
            if want_value:
                g += exp1(u)
            w = e / r2
            gx -= w * rx
            gy -= w * ry
    if want_value:
        g = g / (4.0 * math.pi) - kp[KP_MEANSHIFT]
    gx /= _TWO_PI
    gy /= _TWO_PI
    kmax = int(kp[KP_FOURIER_K])
    c1x = math.cos(_TWO_PI * dx)
    s1x = math.sin(_TWO_PI * dx)
    c1y = math.cos(_TWO_PI * dy)
    s1y = math.sin(_TWO_PI * dy)
    cx = 1.0
    sx = 0.0
    for k1 in range(kmax + 1):
        acc_c = 0.0
        acc_s = 0.0
        cy = 1.0
        sy = 0.0
        for k2 in range(kmax + 1):
            w = fcoef[k1, k2]
            acc_c += w * cy
            acc_s += w * k2 * sy
            cy, sy = cy * c1y - sy * s1y, sy * c1y + cy * s1y
        if want_value:
            g += cx * acc_c
        gx -= _TWO_PI * k1 * sx * acc_c
        gy -= _TWO_PI * cx * acc_s
        cx, sx = cx * c1x - sx * s1x, sx * c1x + cx * s1x
    return g, gx, gy


@jit
def green_grad_exact(dx, dy, kp, fcoef):
    return _green_terms(dx, dy, kp, fcoef, True)


@jit
def grad_exact(dx, dy, kp, fcoef):
    _, gx, gy = _green_terms(dx, dy, kp, fcoef, False)
    return gx, gy


@jit
def smoothstep5(s):
    if s <= 0.0:
        return 0.0
    if s >= 1.0:
        return 1.0
    return s * s * s * (s * (6.0 * s - 15.0) + 10.0)


@jit
def smoothstep5_integral(s):
    """Integral of smoothstep5 from 0 to s, for s in [0, 1]."""
    return s ** 4 * (s * (s - 3.0) + 2.5)


@jit
def mollifier_from_green(g, kp):
    """chi_delta expressed through the value of G."""
    glo = kp[KP_GLO]
    ghi = kp[KP_GHI]
    return smoothstep5((g - glo) / (ghi - glo))


@jit
def regularized_green_value(g, kp):
    """F(G) with F' = 1 - chi, so that -grad_perp F(G) = (1 - chi) K."""
    glo = kp[KP_GLO]
    w = kp[KP_GHI] - glo
    if g <= glo:
        return g
    s = (g - glo) / w
    if s >= 1.0:
        return glo + 0.5 * w
    return glo + w * (s - smoothstep5_integral(s))


@jit
def smooth_bump(r, r1, r2):
    """C-infinity cutoff: 1 for r <= r1, 0 for r >= r2."""
    if r <= r1:
        return 1.0
    if r >= r2:
        return 0.0
    s = (r - r1) / (r2 - r1)
    a = math.exp(-1.0 / (1.0 - s))
    b = math.exp(-1.0 / s)
    return a / (a + b)


@jit
def singular_part_k(dx, dy, kp):
    """Bump-truncated planar vortex kernel (-dy, dx) / (2 pi r^2)."""
    r2 = dx * dx + dy * dy
    if r2 == 0.0:
        return 0.0, 0.0
    b = smooth_bump(math.sqrt(r2), kp[KP_BUMP_R1], kp[KP_BUMP_R2])
    if b == 0.0:
        return 0.0, 0.0
    w = b / (_TWO_PI * r2)
    return -dy * w, dx * w


@jit
def bspline_eval(c, x, y):
    """Periodic cubic B-spline with coefficient grid c (n, n) at torus point (x, y)."""
    n = c.shape[0]
    ux = x * n
    uy = y * n
    ix = int(math.floor(ux))
    iy = int(math.floor(uy))
    fx = ux - ix
    fy = uy - iy
    wx0 = (1.0 - fx) ** 3 / 6.0
    wx1 = (3.0 * fx ** 3 - 6.0 * fx ** 2 + 4.0) / 6.0
    wx2 = (-3.0 * fx ** 3 + 3.0 * fx ** 2 + 3.0 * fx + 1.0) / 6.0
    wx3 = fx ** 3 / 6.0
    wy0 = (1.0 - fy) ** 3 / 6.0
    wy1 = (3.0 * fy ** 3 - 6.0 * fy ** 2 + 4.0) / 6.0
    wy2 = (-3.0 * fy ** 3 + 3.0 * fy ** 2 + 3.0 * fy + 1.0) / 6.0
    wy3 = fy ** 3 / 6.0
    s = 0.0
    for a in range(4):
        if a == 0:
            wa = wx0
        elif a == 1:
            wa = wx1
        elif a == 2:
            wa = wx2
        else:
            wa = wx3
        row = (ix - 1 + a) % n
        acc = 0.0
        acc += wy0 * c[row, (iy - 1) % n]
        acc += wy1 * c[row, iy % n]
        acc += wy2 * c[row, (iy + 1) % n]
        acc += wy3 * c[row, (iy + 2) % n]
        s += wa * acc
    return s


@jit
def pair_kernel(dx, dy, kp, fcoef, tab):
    """Velocity kernel K (mode dependent) at raw displacement (dx, dy).

    Returns (kx, ky, singular_flag). Only exact mode can be singular.
    """
    dx = min_image1(dx)
    dy = min_image1(dy)
    mode = int(kp[KP_MODE])
    r2 = dx * dx + dy * dy
    if mode == MODE_REGULARIZED:
        half = 0.5 * kp[KP_DELTA]
        if r2 < half * half:
            return 0.0, 0.0, False
        if r2 >= kp[KP_DELTA] * kp[KP_DELTA]:
            gx, gy = grad_exact(dx, dy, kp, fcoef)
            return gy, -gx, False
        g, gx, gy = green_grad_exact(dx, dy, kp, fcoef)
        f = 1.0 - mollifier_from_green(g, kp)
        return f * gy, -f * gx, False
    if r2 < SINGULAR_R * SINGULAR_R:
        return 0.0, 0.0, True
    if mode == MODE_TABLE:
        sx, sy = singular_part_k(dx, dy, kp)
        px = dx - math.floor(dx)
        py = dy - math.floor(dy)
        return (bspline_eval(tab[0], px, py) + sx,
                bspline_eval(tab[1], px, py) + sy, False)
    gx, gy = grad_exact(dx, dy, kp, fcoef)
    return gy, -gx, False


@jit
def pair_green(dx, dy, kp, fcoef):
    """(G_mode, grad G_mode, singular) at raw displacement; table mode uses exact G."""
    dx = min_image1(dx)
    dy = min_image1(dy)
    r2 = dx * dx + dy * dy
    if int(kp[KP_MODE]) == MODE_REGULARIZED:
        half = 0.5 * kp[KP_DELTA]
        if r2 < half * half:
            w = kp[KP_GHI] - kp[KP_GLO]
            return kp[KP_GLO] + 0.5 * w, 0.0, 0.0, False
        g, gx, gy = green_grad_exact(dx, dy, kp, fcoef)
        f = 1.0 - mollifier_from_green(g, kp)
        return regularized_green_value(g, kp), f * gx, f * gy, False
    if r2 < SINGULAR_R * SINGULAR_R:
        return np.inf, 0.0, 0.0, True
    g, gx, gy = green_grad_exact(dx, dy, kp, fcoef)
    return g, gx, gy, False


@jit
def velocity_one(px, py, i, pos, xi, kp, fcoef, tab):
    """v_i at point (px, py) induced by all vortices j != i."""
    vx = 0.0
    vy = 0.0
    sing = False
    for j in range(pos.shape[0]):
        if j == i:
            continue
        kx, ky, s = pair_kernel(px - pos[j, 0], py - pos[j, 1], kp, fcoef, tab)
        if s:
            sing = True
        vx += xi[j] * kx
        vy += xi[j] * ky
    return vx, vy, sing


@jit
def velocity_all(pos, xi, kp, fcoef, tab, out):
    """Fill out (N, 2) with (v_1, ..., v_N); returns True if a singular pair was met."""
    n = pos.shape[0]
    sing = False
    for i in range(n):
        out[i, 0] = 0.0
        out[i, 1] = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            kx, ky, s = pair_kernel(pos[i, 0] - pos[j, 0], pos[i, 1] - pos[j, 1], kp, fcoef, tab)
            if s:
                sing = True
            # K is odd: K(x_j - x_i) = -K(x_i - x_j)
            out[i, 0] += xi[j] * kx
            out[i, 1] += xi[j] * ky
            out[j, 0] -= xi[i] * kx
            out[j, 1] -= xi[i] * ky
    return sing


@jit
def stream_one(px, py, i, pos, xi, kp, fcoef):
    """Stream function psi_i(p) = sum_{j != i} xi_j G(p - x_j) and its gradient."""
    s = 0.0
    sx = 0.0
    sy = 0.0
    sing = False
    for j in range(pos.shape[0]):
        if j == i:
            continue
        g, gx, gy, bad = pair_green(px - pos[j, 0], py - pos[j, 1], kp, fcoef)
        if bad:
            sing = True
        s += xi[j] * g
        sx += xi[j] * gx
        sy += xi[j] * gy
    return s, sx, sy, sing


@jit
def hamiltonian(pos, xi, kp, fcoef):
    """sum_{i != j} xi_i xi_j G(x_i - x_j); inf if a pair is singular."""
    n = pos.shape[0]
    h = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            g, _, _, bad = pair_green(pos[i, 0] - pos[j, 0], pos[i, 1] - pos[j, 1], kp, fcoef)
            if bad:
                return np.inf
            h += 2.0 * xi[i] * xi[j] * g
    return h


@jit
def green_sum_pairs(pos, kp, fcoef):
    """sum_{i != j} G(x_i - x_j) (no intensities)."""
    n = pos.shape[0]
    h = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            g, _, _, bad = pair_green(pos[i, 0] - pos[j, 0], pos[i, 1] - pos[j, 1], kp, fcoef)
            if bad:
                return np.inf
            h += 2.0 * g
    return h


@jit
def min_pair_distance(pos):
    n = pos.shape[0]
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            dx = min_image1(pos[i, 0] - pos[j, 0])
            dy = min_image1(pos[i, 1] - pos[j, 1])
            r = math.sqrt(dx * dx + dy * dy)
            if r < best:
                best = r
    return best


# Dormand-Prince 5(4) tableau
_C2 = 1.0 / 5.0
_C3 = 3.0 / 10.0
_C4 = 4.0 / 5.0
_C5 = 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31 = 3.0 / 40.0
_A32 = 9.0 / 40.0
_A41 = 44.0 / 45.0
_A42 = -56.0 / 15.0
_A43 = 32.0 / 9.0
_A51 = 19372.0 / 6561.0
_A52 = -25360.0 / 2187.0
_A53 = 64448.0 / 6561.0
_A54 = -212.0 / 729.0
_A61 = 9017.0 / 3168.0
_A62 = -355.0 / 33.0
_A63 = 46732.0 / 5247.0
_A64 = 49.0 / 176.0
_A65 = -5103.0 / 18656.0
_B1 = 35.0 / 384.0
_B3 = 500.0 / 1113.0
_B4 = 125.0 / 192.0
_B5 = -2187.0 / 6784.0
_B6 = 11.0 / 84.0
# difference between 5th and embedded 4th order weights
_E1 = 71.0 / 57600.0
_E3 = -71.0 / 16695.0
_E4 = 71.0 / 1920.0
_E5 = -17253.0 / 339200.0
_E6 = 22.0 / 525.0
_E7 = -1.0 / 40.0

_SAFETY = 0.9
_PI_ALPHA = 0.7 / 5.0
_PI_BETA = 0.4 / 5.0
_FAC_MIN = 0.2
_FAC_MAX = 5.0


@jit
def _rhs_one(y0, y1, i, pos, xi, speed, kp, fcoef, tab):
    vx, vy, s = velocity_one(y0, y1, i, pos, xi, kp, fcoef, tab)
    return speed * vx, speed * vy, s


@jit
def _project_level(y0, y1, i, pos, xi, psi0, kp, fcoef, project):
    """Newton projection of the moving vortex back onto {psi_i = psi0}."""
    if not project:
        return y0, y1
    tol = 2e-16 * max(1.0, abs(psi0))
    for _ in range(6):
        s, sx, sy, bad = stream_one(y0, y1, i, pos, xi, kp, fcoef)
        if bad:
            return y0, y1
        d = s - psi0
        if abs(d) <= tol:
            break
        g2 = sx * sx + sy * sy
        if g2 == 0.0:
            break
        y0 -= d * sx / g2
        y1 -= d * sy / g2
    return y0, y1


@jit
def integrate_single(pos, xi, i, span, speed, h_init, rtol, atol, max_step,
                     max_steps, project, fault_u, kp, fcoef, tab):
    """Move vortex i along speed * v_i for integration time span; others frozen.

    pos is modified in place (row i only, left unwrapped). Returns (status, h_last, steps).
    fault_u != 1 scales the first velocity coordinate (negative-control mode).
    """
    if span <= 0.0:
        return OK, h_init, 0
    y0 = pos[i, 0]
    y1 = pos[i, 1]
    psi0 = 0.0
    if project:
        psi0, _, _, bad = stream_one(y0, y1, i, pos, xi, kp, fcoef)
        if bad:
            return SINGULAR, h_init, 0
    k1x, k1y, bad = _rhs_one(y0, y1, i, pos, xi, speed, kp, fcoef, tab)
    k1x *= fault_u
    if bad:
        return SINGULAR, h_init, 0
    h = h_init
    if h <= 0.0:
        f = math.sqrt(k1x * k1x + k1y * k1y)
        scale = atol + rtol * max(abs(y0), abs(y1))
        if f > 0.0:
            h = 0.01 * max(scale, 1e-6) ** 0.2 / f
        else:
            h = span
    h = min(h, max_step, span)
    t = 0.0
    err_prev = 1e-4
    steps = 0
    h_carry = h
    while t < span:
        if steps >= max_steps:
            pos[i, 0] = y0
            pos[i, 1] = y1
            return BUDGET, h, steps
        last = False
        if t + h >= span:
            h_carry = h
            h = span - t
            last = True
        if h < 1e-15 * max(1.0, span) and not last:
            pos[i, 0] = y0
            pos[i, 1] = y1
            return UNDERFLOW, h, steps
        k2x, k2y, _ = _rhs_one(y0 + h * _A21 * k1x, y1 + h * _A21 * k1y, i, pos, xi, speed, kp, fcoef, tab)
        k2x *= fault_u
        k3x, k3y, _ = _rhs_one(y0 + h * (_A31 * k1x + _A32 * k2x),
                               y1 + h * (_A31 * k1y + _A32 * k2y), i, pos, xi, speed, kp, fcoef, tab)
        k3x *= fault_u
        k4x, k4y, _ = _rhs_one(y0 + h * (_A41 * k1x + _A42 * k2x + _A43 * k3x),
                               y1 + h * (_A41 * k1y + _A42 * k2y + _A43 * k3y), i, pos, xi, speed, kp, fcoef, tab)
        k4x *= fault_u
        k5x, k5y, _ = _rhs_one(y0 + h * (_A51 * k1x + _A52 * k2x + _A53 * k3x + _A54 * k4x),
                               y1 + h * (_A51 * k1y + _A52 * k2y + _A53 * k3y + _A54 * k4y),
                               i, pos, xi, speed, kp, fcoef, tab)
        k5x *= fault_u
        k6x, k6y, _ = _rhs_one(y0 + h * (_A61 * k1x + _A62 * k2x + _A63 * k3x + _A64 * k4x + _A65 * k5x),
                               y1 + h * (_A61 * k1y + _A62 * k2y + _A63 * k3y + _A64 * k4y + _A65 * k5y),
                               i, pos, xi, speed, kp, fcoef, tab)
        k6x *= fault_u
        n0 = y0 + h * (_B1 * k1x + _B3 * k3x + _B4 * k4x + _B5 * k5x + _B6 * k6x)
        n1 = y1 + h * (_B1 * k1y + _B3 * k3y + _B4 * k4y + _B5 * k5y + _B6 * k6y)
        k7x, k7y, _ = _rhs_one(n0, n1, i, pos, xi, speed, kp, fcoef, tab)
        k7x *= fault_u
        e0 = h * (_E1 * k1x + _E3 * k3x + _E4 * k4x + _E5 * k5x + _E6 * k6x + _E7 * k7x)
        e1 = h * (_E1 * k1y + _E3 * k3y + _E4 * k4y + _E5 * k5y + _E6 * k6y + _E7 * k7y)
        s0 = atol + rtol * max(abs(y0), abs(n0))
        s1 = atol + rtol * max(abs(y1), abs(n1))
        err = math.sqrt(0.5 * ((e0 / s0) ** 2 + (e1 / s1) ** 2))
        steps += 1
        if err <= 1.0:
            t = span if last else t + h
            y0 = n0
            y1 = n1
            k1x = k7x
            k1y = k7y
            fac = _SAFETY * max(err, 1e-10) ** (-_PI_ALPHA) * err_prev ** _PI_BETA
            fac = min(_FAC_MAX, max(_FAC_MIN, fac))
            err_prev = max(err, 1e-4)
            if not last:
                h = min(h * fac, max_step)
        else:
            fac = _SAFETY * err ** (-0.2)
            h = h * max(_FAC_MIN, fac)
    # one projection per span: every externally visible state lies on the level set
    y0, y1 = _project_level(y0, y1, i, pos, xi, psi0, kp, fcoef, project)
    pos[i, 0] = y0
    pos[i, 1] = y1
    return OK, max(h, h_carry), steps


@jit
def _add_scaled(dst, base, h, c1, k1, c2, k2, c3, k3, c4, k4, c5, k5):
    n = base.shape[0]
    for a in range(n):
        for b in range(2):
            dst[a, b] = base[a, b] + h * (c1 * k1[a, b] + c2 * k2[a, b] + c3 * k3[a, b]
                                          + c4 * k4[a, b] + c5 * k5[a, b])


@jit
def integrate_full(pos, xi, span, h_init, rtol, atol, max_step, max_steps,
                   collision_radius, kp, fcoef, tab):
    """Integrate all vortices under the full field for time span.

    pos modified in place (unwrapped). Returns (status, t_reached, h_last, steps, dmin).
    """
    n = pos.shape[0]
    if span <= 0.0:
        return OK, 0.0, h_init, 0, min_pair_distance(pos)
    k1 = np.empty((n, 2))
    k2 = np.empty((n, 2))
    k3 = np.empty((n, 2))
    k4 = np.empty((n, 2))
    k5 = np.empty((n, 2))
    k6 = np.empty((n, 2))
    k7 = np.empty((n, 2))
    tmp = np.empty((n, 2))
    ynew = np.empty((n, 2))
    zero = np.zeros((n, 2))
    d0 = min_pair_distance(pos)
    if d0 < collision_radius:
        return COLLISION, 0.0, h_init, 0, d0
    if velocity_all(pos, xi, kp, fcoef, tab, k1):
        return SINGULAR, 0.0, h_init, 0, d0
    h = h_init
    if h <= 0.0:
        f = 0.0
        for a in range(n):
            f = max(f, math.hypot(k1[a, 0], k1[a, 1]))
        if f > 0.0:
            h = 0.01 * max(atol + rtol, 1e-6) ** 0.2 / f
        else:
            h = span
    h = min(h, max_step, span)
    t = 0.0
    err_prev = 1e-4
    steps = 0
    h_carry = h
    while t < span:
        if steps >= max_steps:
            return BUDGET, t, h, steps, min_pair_distance(pos)
        last = False
        if t + h >= span:
            h_carry = h
            h = span - t
            last = True
        if h < 1e-15 * max(1.0, span) and not last:
            return UNDERFLOW, t, h, steps, min_pair_distance(pos)
        bad = False
        _add_scaled(tmp, pos, h, _A21, k1, 0.0, zero, 0.0, zero, 0.0, zero, 0.0, zero)
        bad |= velocity_all(tmp, xi, kp, fcoef, tab, k2)
        _add_scaled(tmp, pos, h, _A31, k1, _A32, k2, 0.0, zero, 0.0, zero, 0.0, zero)
        bad |= velocity_all(tmp, xi, kp, fcoef, tab, k3)
        _add_scaled(tmp, pos, h, _A41, k1, _A42, k2, _A43, k3, 0.0, zero, 0.0, zero)
        bad |= velocity_all(tmp, xi, kp, fcoef, tab, k4)
        _add_scaled(tmp, pos, h, _A51, k1, _A52, k2, _A53, k3, _A54, k4, 0.0, zero)
        bad |= velocity_all(tmp, xi, kp, fcoef, tab, k5)
        _add_scaled(tmp, pos, h, _A61, k1, _A62, k2, _A63, k3, _A64, k4, _A65, k5)
        bad |= velocity_all(tmp, xi, kp, fcoef, tab, k6)
        _add_scaled(ynew, pos, h, _B1, k1, _B3, k3, _B4, k4, _B5, k5, _B6, k6)
        bad |= velocity_all(ynew, xi, kp, fcoef, tab, k7)
        steps += 1
        if bad:
            # a stage landed on a coincident pair: shrink and retry
            h *= 0.25
            continue
        acc = 0.0
        for a in range(n):
            for b in range(2):
                e = h * (_E1 * k1[a, b] + _E3 * k3[a, b] + _E4 * k4[a, b] + _E5 * k5[a, b]
                         + _E6 * k6[a, b] + _E7 * k7[a, b])
                sc = atol + rtol * max(abs(pos[a, b]), abs(ynew[a, b]))
                acc += (e / sc) ** 2
        err = math.sqrt(acc / (2 * n))
        if err <= 1.0:
            t = span if last else t + h
            for a in range(n):
                for b in range(2):
                    pos[a, b] = ynew[a, b]
                    k1[a, b] = k7[a, b]
            dmin = min_pair_distance(pos)
            if dmin < collision_radius:
                return COLLISION, t, h, steps, dmin
            fac = _SAFETY * max(err, 1e-10) ** (-_PI_ALPHA) * err_prev ** _PI_BETA
            fac = min(_FAC_MAX, max(_FAC_MIN, fac))
            err_prev = max(err, 1e-4)
            if not last:
                h = min(h * fac, max_step)
        else:
            fac = _SAFETY * err ** (-0.2)
            h = h * max(_FAC_MIN, fac)
    return OK, t, max(h, h_carry), steps, min_pair_distance(pos)


@jit
def wrap_inplace(pos):
    for a in range(pos.shape[0]):
        for b in range(2):
            w = pos[a, b] - math.floor(pos[a, b])
            if w >= 1.0:
                w = 0.0
            pos[a, b] = w


@jit
def metropolis_chain(pos, xi, beta, scale, picks, radii, angles, accept_u,
                     burn_in, thinning, count, kp, fcoef, samples, delta_h, accepted):
    """Single-vortex disk-proposal Metropolis chain targeting exp(-beta H).

    pos is the running state (modified in place). samples (count, N, 2) receives
    thinned post-burn-in states. delta_h / accepted log every proposal.
    """
    n = pos.shape[0]
    total = burn_in + count * thinning
    n_acc = 0
    k = 0
    for step in range(total):
        i = picks[step]
        r = scale * math.sqrt(radii[step])
        th = _TWO_PI * angles[step]
        nx = pos[i, 0] + r * math.cos(th)
        ny = pos[i, 1] + r * math.sin(th)
        nx -= math.floor(nx)
        ny -= math.floor(ny)
        if nx >= 1.0:
            nx = 0.0
        if ny >= 1.0:
            ny = 0.0
        old, _, _, bad_old = stream_one(pos[i, 0], pos[i, 1], i, pos, xi, kp, fcoef)
        new, _, _, bad_new = stream_one(nx, ny, i, pos, xi, kp, fcoef)
        if bad_new:
            dh = np.inf
        elif bad_old:
            dh = -np.inf
        else:
            dh = 2.0 * xi[i] * (new - old)
        delta_h[step] = dh
        x = -beta * dh
        if x >= 0.0:
            ok = True
        elif math.isnan(x):
            ok = False
        else:
            ok = accept_u[step] < math.exp(x)
        if bad_new:
            ok = False
        accepted[step] = ok
        if ok:
            pos[i, 0] = nx
            pos[i, 1] = ny
            n_acc += 1
        if step >= burn_in and (step - burn_in) % thinning == thinning - 1:
            for a in range(n):
                samples[k, a, 0] = pos[a, 0]
                samples[k, a, 1] = pos[a, 1]
            k += 1
    return n_acc


@jit
def shell_chain(pos, xi, energy, width, scale, picks, radii, angles,
                burn_in, thinning, count, kp, fcoef, samples, energies):
    """Metropolis chain uniform on {|H - energy| <= width}. Returns accept count."""
    n = pos.shape[0]
    total = burn_in + count * thinning
    h = hamiltonian(pos, xi, kp, fcoef)
    n_acc = 0
    k = 0
    for step in range(total):
        i = picks[step]
        r = scale * math.sqrt(radii[step])
        th = _TWO_PI * angles[step]
        nx = pos[i, 0] + r * math.cos(th)
        ny = pos[i, 1] + r * math.sin(th)
        nx -= math.floor(nx)
        ny -= math.floor(ny)
        if nx >= 1.0:
            nx = 0.0
        if ny >= 1.0:
            ny = 0.0
        old, _, _, _ = stream_one(pos[i, 0], pos[i, 1], i, pos, xi, kp, fcoef)
        new, _, _, bad = stream_one(nx, ny, i, pos, xi, kp, fcoef)
        if not bad:
            hn = h + 2.0 * xi[i] * (new - old)
            if abs(hn - energy) <= width:
                pos[i, 0] = nx
                pos[i, 1] = ny
                h = hn
                n_acc += 1
        if step >= burn_in and (step - burn_in) % thinning == thinning - 1:
            for a in range(n):
                samples[k, a, 0] = pos[a, 0]
                samples[k, a, 1] = pos[a, 1]
            # recompute to keep the incremental sum from drifting
            h = hamiltonian(pos, xi, kp, fcoef)
            energies[k] = h
            k += 1
    return n_acc


@jit
def green_grid(n, kp, fcoef):
    """G on the n x n node grid j/n (origin excluded: set to +inf)."""
    out = np.empty((n, n))
    for a in range(n):
        for b in range(n):
            if a == 0 and b == 0:
                out[a, b] = np.inf
                continue
            g, _, _ = green_grad_exact(min_image1(a / n), min_image1(b / n), kp, fcoef)
            out[a, b] = g
    return out
