"""Compiled inner loops of the IMPES simulator.

Everything here works on flat float64 arrays in x-fastest cell order. Pressure
assembly and well terms are SI (Pa, m^3/s); transport works in days and
m^3/day. Failures are reported through integer status codes so the whole time
loop can stay compiled; ``flow_sim`` turns them into exceptions.
"""
import math

import numpy as np
from numba import njit

OK = 0
FLOW_LIMIT = 1
NO_WELLS = 2
NOT_SPD = 3
RESIDUAL = 4
SATURATION = 5
CFL = 6

INJECTOR = 1
PRODUCER = -1

SAT_TOL = 1e-12
RESIDUAL_TOL = 1e-8


@njit(cache=True)
def _corey(x, n):
    # generic pow is slow; Corey exponents are usually small integers
    if n == 2.0:
        return x * x
    if n == 1.0:
        return x
    if n == 3.0:
        return x * x * x
    return x ** n


@njit(cache=True)
def mobilities(s, mu_w, mu_o, swr, sor, nw, no):
    se = (s - swr) / (1.0 - swr - sor)
    if se < 0.0:
        se = 0.0
    elif se > 1.0:
        se = 1.0
    return _corey(se, nw) / mu_w, _corey(1.0 - se, no) / mu_o


@njit(cache=True)
def total_mobility(s, lam, fw, mu_w, mu_o, swr, sor, nw, no):
    for c in range(s.size):
        lw, lo = mobilities(s[c], mu_w, mu_o, swr, sor, nw, no)
        lam[c] = lw + lo
        fw[c] = lw / (lw + lo)


@njit(cache=True)
def fractional_flow(s, fw, mu_w, mu_o, swr, sor, nw, no):
    for c in range(s.size):
        lw, lo = mobilities(s[c], mu_w, mu_o, swr, sor, nw, no)
        fw[c] = lw / (lw + lo)


# ---------------------------------------------------------------------------
# banded SPD solve; row i of ``band`` holds A[i, i-b .. i] at columns 0..b

@njit(cache=True, fastmath={"contract"})
def _band_cholesky(band, b):
    """In-place right-looking Cholesky; the inner updates are plain axpys."""
    n = band.shape[0]
    col = np.empty(max(b, 1))
    for k in range(n):
        d = band[k, b]
        if not d > 0.0:
            return False
        d = math.sqrt(d)
        band[k, b] = d
        m = b if k + b < n else n - 1 - k
        for r in range(1, m + 1):
            v = band[k + r, b - r] / d
            band[k + r, b - r] = v
            col[r - 1] = v
        for r in range(1, m + 1):
            i = k + r
            lik = col[r - 1]
            if lik == 0.0:
                continue
            row = band[i]
            off = k + b - i
            for t in range(1, r + 1):
                row[t + off] -= lik * col[t - 1]
    return True


@njit(cache=True, fastmath={"contract"})
def _band_solve(band, b, rhs, x):
    n = band.shape[0]
    for i in range(n):
        k0 = i - b if i > b else 0
        s = rhs[i]
        for m in range(k0, i):
            s -= band[i, m + b - i] * x[m]
        x[i] = s / band[i, b]
    for i in range(n - 1, -1, -1):
        s = x[i]
        r1 = i + b + 1 if i + b + 1 < n else n
        for r in range(i + 1, r1):
            s -= band[r, i + b - r] * x[r]
        x[i] = s / band[i, b]


# ---------------------------------------------------------------------------
# pressure

@njit(cache=True)
def face_mobility(lam, nx, ny, fx_prev, fy_prev, have_prev, mx, my):
    """Total mobility on faces: upwind w.r.t. previous flux, else arithmetic."""
    for j in range(ny):
        for i in range(nx - 1):
            a = j * nx + i
            f = fx_prev[j, i] if have_prev else 0.0
            if f > 0.0:
                mx[j, i] = lam[a]
            elif f < 0.0:
                mx[j, i] = lam[a + 1]
            else:
                mx[j, i] = 0.5 * (lam[a] + lam[a + 1])
    for j in range(ny - 1):
        for i in range(nx):
            a = j * nx + i
            f = fy_prev[j, i] if have_prev else 0.0
            if f > 0.0:
                my[j, i] = lam[a]
            elif f < 0.0:
                my[j, i] = lam[a + nx]
            else:
                my[j, i] = 0.5 * (lam[a] + lam[a + nx])


@njit(cache=True)
def pressure_workspace(nx, ny):
    """Red-black ordering and storage for the reduced pressure system.

    Black cells ((i + j) odd) keep unknowns; red cells, whose couplings are
    all to black cells, are eliminated exactly. Black cells are numbered with
    the shorter grid dimension running fastest, which keeps the bandwidth of
    the reduced system near min(nx, ny). Returns (black index or -1 per cell,
    bandwidth, band, rhs, diag).
    """
    n = nx * ny
    bidx = np.full(n, -1, dtype=np.int64)
    nb = 0
    if nx <= ny:
        for j in range(ny):
            for i in range(nx):
                if (i + j) % 2 == 1:
                    bidx[j * nx + i] = nb
                    nb += 1
    else:
        for i in range(nx):
            for j in range(ny):
                if (i + j) % 2 == 1:
                    bidx[j * nx + i] = nb
                    nb += 1
    bw = 0
    for j in range(ny):
        for i in range(nx):
            if (i + j) % 2 == 1:
                continue
            lo = n
            hi = -1
            for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                ii = i + di
                jj = j + dj
                if 0 <= ii < nx and 0 <= jj < ny:
                    v = bidx[jj * nx + ii]
                    lo = min(lo, v)
                    hi = max(hi, v)
            if hi - lo > bw:
                bw = hi - lo
    return bidx, bw, np.zeros((nb, bw + 1)), np.zeros(n), np.zeros(n)


@njit(cache=True)
def _couple(band, bw, rhs_b, bidx, nbr, t, nk, d, r):
    """Eliminate one red cell: Schur update from its black neighbours."""
    for k in range(nk):
        bk = bidx[nbr[k]]
        rhs_b[bk] += t[k] * r / d
        for m in range(nk):
            bm = bidx[nbr[m]]
            if bm <= bk:
                band[bk, bm - bk + bw] -= t[k] * t[m] / d


@njit(cache=True)
def pressure_solve(nx, ny, tx, ty, mx, my, lam, w_cell, w_wi, w_bhp, w_kind, active,
                   p, fx, fy, q, bidx, bw, band, rhs, diag):
    """Solve the TPFA system with BHP wells; close wells that would cross-flow.

    Fills p (Pa), fx/fy (m^3/s, positive towards +x/+y), q (m^3/s, positive into
    the reservoir) and returns a status code. ``active`` is updated in place.
    The work arrays come from ``pressure_workspace``.
    """
    n = nx * ny
    nw = w_cell.size
    nbr = np.empty(4, dtype=np.int64)
    tw = np.empty(4)
    rhs_b = np.empty(band.shape[0])
    x_b = np.empty(band.shape[0])
    while True:
        n_active = 0
        for w in range(nw):
            if active[w]:
                n_active += 1
        if n_active == 0:
            return NO_WELLS
        diag[:] = 0.0
        rhs[:] = 0.0
        for j in range(ny):
            for i in range(nx - 1):
                a = j * nx + i
                v = tx[j, i] * mx[j, i]
                diag[a] += v
                diag[a + 1] += v
        for j in range(ny - 1):
            for i in range(nx):
                a = j * nx + i
                v = ty[j, i] * my[j, i]
                diag[a] += v
                diag[a + nx] += v
        for w in range(nw):
            if active[w]:
                c = w_cell[w]
                v = w_wi[w] * lam[c]
                diag[c] += v
                rhs[c] += v * w_bhp[w]

        # Schur complement on black cells
        band[:, :] = 0.0
        for c in range(n):
            if bidx[c] >= 0:
                band[bidx[c], bw] = diag[c]
                rhs_b[bidx[c]] = rhs[c]
        for j in range(ny):
            for i in range(nx):
                c = j * nx + i
                if bidx[c] >= 0:
                    continue
                nk = 0
                if i > 0:
                    nbr[nk] = c - 1
                    tw[nk] = tx[j, i - 1] * mx[j, i - 1]
                    nk += 1
                if i < nx - 1:
                    nbr[nk] = c + 1
                    tw[nk] = tx[j, i] * mx[j, i]
                    nk += 1
                if j > 0:
                    nbr[nk] = c - nx
                    tw[nk] = ty[j - 1, i] * my[j - 1, i]
                    nk += 1
                if j < ny - 1:
                    nbr[nk] = c + nx
                    tw[nk] = ty[j, i] * my[j, i]
                    nk += 1
                if not diag[c] > 0.0:
                    return NOT_SPD
                _couple(band, bw, rhs_b, bidx, nbr, tw, nk, diag[c], rhs[c])
        if not _band_cholesky(band, bw):
            return NOT_SPD
        _band_solve(band, bw, rhs_b, x_b)
        for j in range(ny):
            for i in range(nx):
                c = j * nx + i
                if bidx[c] >= 0:
                    p[c] = x_b[bidx[c]]
        # back-substitute red cells
        for j in range(ny):
            for i in range(nx):
                c = j * nx + i
                if bidx[c] >= 0:
                    continue
                v = rhs[c]
                if i > 0:
                    v += tx[j, i - 1] * mx[j, i - 1] * p[c - 1]
                if i < nx - 1:
                    v += tx[j, i] * mx[j, i] * p[c + 1]
                if j > 0:
                    v += ty[j - 1, i] * my[j - 1, i] * p[c - nx]
                if j < ny - 1:
                    v += ty[j, i] * my[j, i] * p[c + nx]
                p[c] = v / diag[c]

        # residual ||A p - rhs|| / ||rhs|| from the stencil
        res2 = 0.0
        rhs2 = 0.0
        r = np.zeros(n)
        for w in range(nw):
            if active[w]:
                c = w_cell[w]
                t = w_wi[w] * lam[c]
                r[c] += t * (p[c] - w_bhp[w])
        for j in range(ny):
            for i in range(nx - 1):
                a = j * nx + i
                f = tx[j, i] * mx[j, i] * (p[a] - p[a + 1])
                fx[j, i] = f
                r[a] += f
                r[a + 1] -= f
        for j in range(ny - 1):
            for i in range(nx):
                a = j * nx + i
                f = ty[j, i] * my[j, i] * (p[a] - p[a + nx])
                fy[j, i] = f
                r[a] += f
                r[a + nx] -= f
        for c in range(n):
            res2 += r[c] * r[c]
        for w in range(nw):
            if active[w]:
                c = w_cell[w]
                v = w_wi[w] * lam[c] * w_bhp[w]
                rhs2 += v * v
        if res2 > (RESIDUAL_TOL * RESIDUAL_TOL) * rhs2:
            return RESIDUAL

        # wrong-sign flow below round-off level is not cross-flow
        ptol = 0.0
        for w in range(nw):
            if abs(w_bhp[w]) > ptol:
                ptol = abs(w_bhp[w])
        ptol *= 1e-9
        crossflow = False
        for w in range(nw):
            if active[w]:
                c = w_cell[w]
                q[w] = w_wi[w] * lam[c] * (w_bhp[w] - p[c])
                if (w_bhp[w] - p[c]) * w_kind[w] < -ptol:
                    crossflow = True
            else:
                q[w] = 0.0
        if not crossflow:
            return OK
        # close the worst offender and re-solve
        worst = -1
        worst_v = 0.0
        for w in range(nw):
            if active[w] and -q[w] * w_kind[w] > worst_v:
                worst_v = -q[w] * w_kind[w]
                worst = w
        active[worst] = False


# ---------------------------------------------------------------------------
# transport (days, m^3/day)

@njit(cache=True)
def cfl_limit(nx, ny, fx, fy, inj, prod, pv, fmax):
    """Largest stable explicit step (days); inf when nothing flows."""
    n = nx * ny
    t_in = np.zeros(n)
    t_out = np.zeros(n)
    for c in range(n):
        t_in[c] = inj[c]
        t_out[c] = prod[c]
    for j in range(ny):
        for i in range(nx - 1):
            a = j * nx + i
            f = fx[j, i]
            if f > 0.0:
                t_out[a] += f
                t_in[a + 1] += f
            else:
                t_in[a] -= f
                t_out[a + 1] -= f
    for j in range(ny - 1):
        for i in range(nx):
            a = j * nx + i
            f = fy[j, i]
            if f > 0.0:
                t_out[a] += f
                t_in[a + nx] += f
            else:
                t_in[a] -= f
                t_out[a + nx] -= f
    dt = np.inf
    for c in range(n):
        thr = t_in[c] if t_in[c] > t_out[c] else t_out[c]
        if thr > 0.0:
            lim = pv[c] / (fmax * thr)
            if lim < dt:
                dt = lim
    return dt


@njit(cache=True)
def transport(nx, ny, s, fx, fy, inj, prod, pv, dt, nsub, swr, sor, mu_w, mu_o, nw, no, prod_water):
    """Advance s by ``nsub`` explicit upwind steps of ``dt / nsub`` days.

    ``prod_water`` accumulates the water volume (m^3) removed at each cell by
    production. Returns a status code.
    """
    n = nx * ny
    h = dt / nsub
    fw = np.empty(n)
    ds = np.empty(n)
    lo_b = swr - SAT_TOL
    hi_b = 1.0 - sor + SAT_TOL
    for _ in range(nsub):
        fractional_flow(s, fw, mu_w, mu_o, swr, sor, nw, no)
        for c in range(n):
            ds[c] = inj[c] - prod[c] * fw[c]
            prod_water[c] += h * prod[c] * fw[c]
        for j in range(ny):
            for i in range(nx - 1):
                a = j * nx + i
                f = fx[j, i]
                w = f * fw[a] if f > 0.0 else f * fw[a + 1]
                ds[a] -= w
                ds[a + 1] += w
        for j in range(ny - 1):
            for i in range(nx):
                a = j * nx + i
                f = fy[j, i]
                w = f * fw[a] if f > 0.0 else f * fw[a + nx]
                ds[a] -= w
                ds[a + nx] += w
        for c in range(n):
            v = s[c] + h * ds[c] / pv[c]
            if v < swr:
                if v < lo_b:
                    return SATURATION
                v = swr
            elif v > 1.0 - sor:
                if v > hi_b:
                    return SATURATION
                v = 1.0 - sor
            s[c] = v
    return OK


# ---------------------------------------------------------------------------
# full run

@njit(cache=True)
def simulate_kernel(nx, ny, tx, ty, pv, s, w_cell, w_wi, w_kind, bhp_steps, step_dt,
                    mu_w, mu_o, swr, sor, nw, no, fmax, cfl_target,
                    flow_limit, wc_threshold, field_shutin,
                    p, q_out, oil_out, water_out, shut_out, maxrate_out, substeps_out, info):
    """Run the IMPES loop over all pressure steps.

    Outputs per step: signed well rates (m^3/day), producer oil/water rates,
    shut-in flags and max |rate|. ``info`` receives (steps completed, failing
    step, failing well, failing value). Returns a status code.
    """
    n = nx * ny
    n_wells = w_cell.size
    n_steps = step_dt.size
    lam = np.empty(n)
    fw = np.empty(n)
    mx = np.zeros((ny, nx - 1))
    my = np.zeros((ny - 1, nx))
    fx = np.zeros((ny, nx - 1))
    fy = np.zeros((ny - 1, nx))
    fxd = np.zeros((ny, nx - 1))
    fyd = np.zeros((ny - 1, nx))
    q = np.zeros(n_wells)
    bidx, bw, band, rhs, diag = pressure_workspace(nx, ny)
    inj = np.zeros(n)
    prod = np.zeros(n)
    prod_water = np.zeros(n)
    shut = np.zeros(n_wells, dtype=np.bool_)
    active = np.zeros(n_wells, dtype=np.bool_)
    have_prev = False
    for k in range(n_steps):
        total_mobility(s, lam, fw, mu_w, mu_o, swr, sor, nw, no)
        tripped = False
        for w in range(n_wells):
            if w_kind[w] == PRODUCER and not shut[w] and fw[w_cell[w]] > wc_threshold:
                shut[w] = True
                tripped = True
        if tripped and field_shutin:
            info[0] = k
            return OK
        n_inj = 0
        n_prod = 0
        for w in range(n_wells):
            active[w] = not shut[w]
            if active[w]:
                if w_kind[w] == INJECTOR:
                    n_inj += 1
                else:
                    n_prod += 1
            shut_out[k, w] = shut[w]
        if n_inj == 0 or n_prod == 0:
            # incompressible, no cross-flow: one-sided well sets cannot flow
            for w in range(n_wells):
                q_out[k, w] = 0.0
                oil_out[k, w] = 0.0
                water_out[k, w] = 0.0
            maxrate_out[k] = 0.0
            info[0] = k + 1
            continue
        face_mobility(lam, nx, ny, fx, fy, have_prev, mx, my)
        status = pressure_solve(nx, ny, tx, ty, mx, my, lam, w_cell, w_wi, bhp_steps[k], w_kind,
                                active, p, fx, fy, q, bidx, bw, band, rhs, diag)
        if status != OK:
            info[1] = k
            return status
        have_prev = True
        mr = 0.0
        for w in range(n_wells):
            q_out[k, w] = q[w] * 86400.0
            if abs(q_out[k, w]) > mr:
                mr = abs(q_out[k, w])
        maxrate_out[k] = mr
        if flow_limit >= 0.0:
            for w in range(n_wells):
                if abs(q_out[k, w]) > flow_limit:
                    info[1] = k
                    info[2] = w
                    info[3] = abs(q_out[k, w])
                    return FLOW_LIMIT
        inj[:] = 0.0
        prod[:] = 0.0
        for w in range(n_wells):
            c = w_cell[w]
            if q_out[k, w] > 0.0:
                inj[c] += q_out[k, w]
            elif q_out[k, w] < 0.0:
                prod[c] -= q_out[k, w]
        for j in range(ny):
            for i in range(nx - 1):
                fxd[j, i] = fx[j, i] * 86400.0
        for j in range(ny - 1):
            for i in range(nx):
                fyd[j, i] = fy[j, i] * 86400.0
        dt = step_dt[k]
        lim = cfl_limit(nx, ny, fxd, fyd, inj, prod, pv, fmax) * cfl_target
        nsub = 1
        if dt > lim:
            nsub = int(math.ceil(dt / lim))
        substeps_out[k] = nsub
        prod_water[:] = 0.0
        status = transport(nx, ny, s, fxd, fyd, inj, prod, pv, dt, nsub, swr, sor,
                           mu_w, mu_o, nw, no, prod_water)
        if status != OK:
            info[1] = k
            return status
        # split producer volumes using the water actually removed in transport
        for w in range(n_wells):
            oil_out[k, w] = 0.0
            water_out[k, w] = 0.0
            if q_out[k, w] < 0.0:
                c = w_cell[w]
                share = -q_out[k, w] / prod[c]
                wr = share * prod_water[c] / dt
                water_out[k, w] = wr
                oil_out[k, w] = -q_out[k, w] - wr
        info[0] = k + 1
    return OK
