"""Exact exponential of the discrete scattering generator.

The generator is the graph Laplacian of the pair kernel on the atlas,

    (L u)_i = sum_j w_ij (u_i - u_j),    G = -W^{-1} L,

with w_ij = b(theta_i . theta_j) W_i W_j for i != j and extra nearest-neighbour
weights -(C_i + C_j)/4 >= 0 that restore the singular self-cell. L is
symmetric with nonnegative off-diagonal weights, so exp(t G) is positivity
preserving, exactly conservative in the W-weighted sum, and contractive in the
W-weighted L^2 norm.

The symmetric matrix A = W^{-1/2} L W^{-1/2} commutes with the symmetry group
of the square grid (reflections x -> -x, y -> -y and the swap x <-> y). A is
block-diagonalized over that group and each block is diagonalized densely
once; a time step is then two matrix products per block.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scattering import ScatteringModel, self_cell_coefficient
from .sphere_geometry import SphereAtlas

log = logging.getLogger(__name__)

# parity sectors (sx, sy); the (+,+) and (-,-) sectors split further by swap parity
SECTORS = ((1, 1), (1, -1), (-1, 1), (-1, -1))


def _lattice_kernel(N, h, s):
    j = np.arange(-(N - 1), N) * h
    R2 = j[:, None] ** 2 + j[None, :] ** 2
    K = np.zeros_like(R2)
    nz = R2 > 0
    K[nz] = R2[nz] ** (-1 - s)
    return K


def pair_weights(model: ScatteringModel, atlas: SphereAtlas, rows):
    """Rows of the weight matrix w_ij for row nodes ``rows`` = (ri, rj) arrays.

    Returns shape (len(ri), N, N) with w_ii = 0.
    """
    N, h, s = atlas.N, atlas.h, model.s
    ri, rj = rows
    br2 = 1.0 + atlas.r2
    a = br2 ** (s - 1)
    K = _lattice_kernel(N, h, s)
    pref = model.b1 * 2.0 ** (3 - s) * h ** 4
    out = np.empty((len(ri), N, N))
    for k, (i, j) in enumerate(zip(ri, rj)):
        out[k] = K[N - 1 - i:2 * N - 1 - i, N - 1 - j:2 * N - 1 - j]
    out *= a[None]
    out *= (pref * a[ri, rj])[:, None, None]
    if model.has_bounded:
        th = atlas.lifted
        W = atlas.jac_weights
        z = np.einsum("kc,ijc->kij", th[ri, rj], th)
        hb = model.h_poly(np.clip(z, -1.0, 1.0)) * W[None] * W[ri, rj][:, None, None]
        hb[np.arange(len(ri)), ri, rj] = 0.0
        out += hb
    # self-cell edges
    C = self_cell_coefficient(model, br2, h)
    for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        ni, nj = ri + di, rj + dj
        ok = (ni >= 0) & (ni < N) & (nj >= 0) & (nj < N)
        k = np.nonzero(ok)[0]
        out[k, ni[ok], nj[ok]] += -0.25 * (C[ri[ok], rj[ok]] + C[ni[ok], nj[ok]])
    return out


def generator_apply(u, model: ScatteringModel, atlas: SphereAtlas):
    """G u = -W^{-1} L u for fields with trailing shape (N, N), via convolutions."""
    from scipy.signal import fftconvolve
    from .scattering import apply_bounded

    u = np.asarray(u, dtype=float)
    N, h, s = atlas.N, atlas.h, model.s
    br2 = 1.0 + atlas.r2
    a = br2 ** (s - 1)
    K = _lattice_kernel(N, h, s)
    pref = model.b1 * 2.0 ** (3 - s) * h ** 4
    W = atlas.jac_weights
    flat = u.reshape((-1, N, N))
    out = np.empty_like(flat)
    S1 = fftconvolve(K, a, mode="valid")
    C = self_cell_coefficient(model, br2, h)
    for k in range(flat.shape[0]):
        v = flat[k]
        Lu = pref * a * (v * S1 - fftconvolve(K, a * v, mode="valid"))
        ex = -0.25 * (C[1:, :] + C[:-1, :]) * (v[1:, :] - v[:-1, :])
        ey = -0.25 * (C[:, 1:] + C[:, :-1]) * (v[:, 1:] - v[:, :-1])
        Lu[1:, :] += ex
        Lu[:-1, :] -= ex
        Lu[:, 1:] += ey
        Lu[:, :-1] -= ey
        out[k] = -Lu / W + apply_bounded(v, model, atlas)
    return out.reshape(u.shape)


@dataclass
class _Block:
    vecs: np.ndarray
    vals: np.ndarray
    residual: float


class ScatteringPropagator:
    """exp(dt G) on fields over the atlas, by symmetry-adapted eigenbases.

    Blocks are assembled and diagonalized lazily, the first time a field with
    a nonzero component in that symmetry sector is propagated.

    Parameters
    ----------
    model : ScatteringModel
    atlas : SphereAtlas
    chunk : int
        Row chunk for the block assembly (memory bound).
    """

    def __init__(self, model: ScatteringModel, atlas: SphereAtlas, chunk: int = 256):
        self.model = model
        self.atlas = atlas
        self.chunk = chunk
        N = atlas.N
        if N % 2:
            raise ValueError("atlas must have an even node count")
        self.n2 = N // 2
        n2 = self.n2
        # quadrant local indices (p, q) -> global (n2 + p, n2 + q)
        P, Q = np.meshgrid(np.arange(n2), np.arange(n2), indexing="ij")
        self._tri = np.nonzero((P >= Q).ravel())[0]
        self._tri_off = np.nonzero((P > Q).ravel())[0]
        self._swap = (Q * n2 + P).ravel()
        self._sqw = np.sqrt(atlas.jac_weights)
        self._blocks: dict = {}
        self._expcache: dict = {}

    # ------------------------------------------------------------------
    # field <-> sector coefficients
    # ------------------------------------------------------------------
    def _quadrants(self, f):
        n2 = self.n2
        e = f[..., n2:, n2:]
        X = f[..., n2 - 1::-1, n2:]
        Y = f[..., n2:, n2 - 1::-1]
        XY = f[..., n2 - 1::-1, n2 - 1::-1]
        return e, X, Y, XY

    def _split(self, f):
        """Sector components c^sigma on the quadrant, flattened (..., n2*n2)."""
        e, X, Y, XY = self._quadrants(f)
        lead = f.shape[:-2]
        comps = {}
        for sx, sy in SECTORS:
            c = 0.5 * (e + sx * X + sy * Y + (sx * sy) * XY)
            comps[(sx, sy)] = c.reshape(lead + (-1,))
        return comps

    def _merge(self, comps, lead):
        n2, N = self.n2, self.atlas.N
        out = np.zeros(lead + (N, N))
        shp = lead + (n2, n2)
        e = sum(0.5 * comps[k] for k in SECTORS).reshape(shp)
        X = sum(0.5 * k[0] * comps[k] for k in SECTORS).reshape(shp)
        Y = sum(0.5 * k[1] * comps[k] for k in SECTORS).reshape(shp)
        XY = sum(0.5 * k[0] * k[1] * comps[k] for k in SECTORS).reshape(shp)
        out[..., n2:, n2:] = e
        out[..., n2 - 1::-1, n2:] = X
        out[..., n2:, n2 - 1::-1] = Y
        out[..., n2 - 1::-1, n2 - 1::-1] = XY
        return out

    def _swap_split(self, c):
        """Symmetric / antisymmetric coordinates under p <-> q on the triangle."""
        tri, off, sw = self._tri, self._tri_off, self._swap
        diag = np.isin(tri, off, invert=True)
        ct = c[..., tri]
        cs = c[..., sw[tri]]
        sym = np.where(diag, ct, (ct + cs) / math.sqrt(2.0))
        anti = (c[..., off] - c[..., sw[off]]) / math.sqrt(2.0)
        return sym, anti

    def _swap_merge(self, sym, anti):
        tri, off, sw = self._tri, self._tri_off, self._swap
        diag = np.isin(tri, off, invert=True)
        lead = sym.shape[:-1]
        c = np.zeros(lead + (self.n2 * self.n2,))
        half = np.where(diag, sym, sym / math.sqrt(2.0))
        c[..., tri] = half
        c[..., sw[tri]] = half  # diagonal entries map to themselves
        a = anti / math.sqrt(2.0)
        c[..., off] += a
        c[..., sw[off]] -= a
        return c

    # ------------------------------------------------------------------
    # block assembly
    # ------------------------------------------------------------------
    def _sector_rows(self, sector, rows_local):
        """Rows of the W-scaled sector matrix A^sigma for local quadrant rows."""
        n2 = self.n2
        sx, sy = sector
        pr, qr = np.divmod(rows_local, n2)
        gi, gj = pr + n2, qr + n2
        w = pair_weights(self.model, self.atlas, (gi, gj))
        deg = w.sum(axis=(1, 2))
        sq = self._sqw
        e, X, Y, XY = self._quadrants(w / sq[None])
        blk = -(e + sx * X + sy * Y + (sx * sy) * XY).reshape(len(rows_local), -1)
        blk[np.arange(len(rows_local)), rows_local] += deg / sq[gi, gj]
        blk /= sq[gi, gj][:, None]
        return blk

    def _assemble(self, key):
        """Dense symmetric matrix of one irreducible block."""
        sector, part = key
        n2 = self.n2
        if part is None:
            rows = np.arange(n2 * n2)
        elif part == "sym":
            rows = self._tri
        else:
            rows = self._tri_off
        cols_all = n2 * n2
        full = np.empty((len(rows), cols_all))
        for start in range(0, len(rows), self.chunk):
            r = rows[start:start + self.chunk]
            full[start:start + len(r)] = self._sector_rows(sector, r)
        if part is None:
            M = full
        else:
            # restrict rows/columns to the swap-adapted basis
            sw = self._swap
            diag_rows = np.isin(rows, self._tri_off, invert=True)
            if part == "sym":
                cols = self._tri
                diag_cols = diag_rows
                M = full[:, cols] + full[:, sw[cols]]
                sc_r = np.where(diag_rows, 0.5, 1 / math.sqrt(2.0))
                sc_c = np.where(diag_cols, 0.5, 1 / math.sqrt(2.0))
                M = 2.0 * sc_r[:, None] * sc_c[None, :] * M
            else:
                cols = self._tri_off
                M = full[:, cols] - full[:, sw[cols]]
        return 0.5 * (M + M.T)

    def _block(self, key) -> _Block:
        if key not in self._blocks:
            t0 = time.perf_counter()
            A = self._assemble(key)
            vals, vecs = np.linalg.eigh(A)
            # backward error of the decomposition on a probe vector
            x = np.cos(np.arange(A.shape[0]) * 0.7)
            r = A @ x - vecs @ (vals * (vecs.T @ x))
            res = float(np.linalg.norm(r) / max(np.linalg.norm(A @ x), 1e-300))
            self._blocks[key] = _Block(vecs, vals, res)
            log.debug("block %s size %d eigensolve %.2fs residual %.1e", key, A.shape[0],
                      time.perf_counter() - t0, res)
        return self._blocks[key]

    def eigenvalues(self):
        """All generator rates mu >= 0 (forces every block)."""
        keys = self._all_keys()
        # the (+,-) block also serves the (-,+) sector
        keys.append(((1, -1), None))
        return np.sort(np.concatenate([self._block(k).vals for k in keys]))

    @staticmethod
    def _all_keys():
        return [((1, 1), "sym"), ((1, 1), "anti"), ((-1, -1), "sym"), ((-1, -1), "anti"),
                ((1, -1), None)]

    @property
    def residual(self) -> float:
        return max((b.residual for b in self._blocks.values()), default=0.0)

    # ------------------------------------------------------------------
    # propagation
    # ------------------------------------------------------------------
    def _apply_block(self, key, c, dt):
        b = self._block(key)
        ck = (key, dt)
        if ck not in self._expcache:
            self._expcache[ck] = np.exp(-dt * np.maximum(b.vals, 0.0))
        return ((c @ b.vecs) * self._expcache[ck]) @ b.vecs.T

    def _apply_quadratic(self, key, c):
        b = self._block(key)
        y = c @ b.vecs
        return np.sum(y * y * np.maximum(b.vals, 0.0), axis=-1)

    @staticmethod
    def _invariant(f):
        return (np.array_equal(f, f[..., ::-1, :]) and np.array_equal(f, f[..., :, ::-1])
                and np.array_equal(f, np.swapaxes(f, -1, -2)))

    def _propagate_invariant(self, flat, dt, return_rate, lead):
        """Fields fixed by every grid symmetry live in the (+,+) swap-symmetric block."""
        n2 = self.n2
        e = (flat * self._sqw)[:, n2:, n2:].reshape(flat.shape[0], -1)
        tri = self._tri
        diag = np.isin(tri, self._tri_off, invert=True)
        c = 2.0 * e[:, tri]
        sym = np.where(diag, c, math.sqrt(2.0) * c)
        key = ((1, 1), "sym")
        rate = self._apply_quadratic(key, sym) if return_rate else None
        r = self._apply_block(key, sym, dt)
        cq = self._swap_merge(r, np.zeros((flat.shape[0], len(self._tri_off))))
        q = (0.5 * cq).reshape(-1, n2, n2)
        out = np.empty_like(flat)
        out[:, n2:, n2:] = q
        out[:, n2 - 1::-1, n2:] = q
        out[:, n2:, n2 - 1::-1] = q
        out[:, n2 - 1::-1, n2 - 1::-1] = q
        out = (out / self._sqw).reshape(lead + flat.shape[-2:])
        if return_rate:
            return out, rate.reshape(lead)
        return out

    def propagate(self, u, dt: float, return_rate: bool = False):
        """exp(dt G) u for u with trailing shape (N, N).

        With ``return_rate`` also returns u^T L u per leading index (the
        scattering dissipation rate, W-weighted).
        """
        u = np.asarray(u, dtype=float)
        lead = u.shape[:-2]
        flat = u.reshape((-1,) + u.shape[-2:])
        if self._invariant(flat):
            return self._propagate_invariant(flat, dt, return_rate, lead)
        comps = self._split(flat * self._sqw)
        outc = {}
        rate = np.zeros(flat.shape[0])
        for sec in SECTORS:
            c = comps[sec]
            if sec in ((1, 1), (-1, -1)):
                sym, anti = self._swap_split(c)
                res = []
                for part, cc in (("sym", sym), ("anti", anti)):
                    if np.any(cc):
                        if return_rate:
                            rate += self._apply_quadratic((sec, part), cc)
                        res.append(self._apply_block((sec, part), cc, dt))
                    else:
                        res.append(np.zeros_like(cc))
                outc[sec] = self._swap_merge(*res)
            else:
                if not np.any(c):
                    outc[sec] = np.zeros_like(c)
                    continue
                if sec == (1, -1):
                    cc = c
                else:
                    # (-,+) is the (+,-) sector seen through the swap
                    cc = c[..., self._swap]
                if return_rate:
                    rate += self._apply_quadratic(((1, -1), None), cc)
                r = self._apply_block(((1, -1), None), cc, dt)
                if sec == (-1, 1):
                    r = r[..., np.argsort(self._swap)]
                outc[sec] = r
        out = self._merge(outc, (flat.shape[0],)) / self._sqw
        out = out.reshape(lead + u.shape[-2:])
        if return_rate:
            return out, rate.reshape(lead)
        return out


@lru_cache(maxsize=2)
def cached_propagator(model: ScatteringModel, atlas: SphereAtlas) -> ScatteringPropagator:
    return ScatteringPropagator(model, atlas)
