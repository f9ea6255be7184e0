"""Spectral solvers for the mean-field density and the correction hierarchy.

All equations here have the form

    d/dt u - Laplacian u = - sum_k d/dx_k (flux_k),

on (T^1)^j, and are advanced by a first-order exponential integrator: the
heat semigroup is applied exactly in Fourier space and the transport/forcing
fluxes are assembled explicitly at the current time, dealiased by the 2/3
rule, and weighted by the phi_1 factor (1 - e^{-z})/z per mode.  That weight
makes linear steady states exact and keeps the mode-0 (mass) update exact.

The correction hierarchy g^i_j lives on the triangular index set
T = {(i, j): 1 <= j <= i + 1}.  Entry (0, 1) is the mean-field density rho
(the only nonlinear equation, solved by solve_mckean_vlasov); every other
entry satisfies a linear transport equation whose right-hand side couples
lower entries through the operators

    S_{k,l} h = d/dx_k (K(x_k, x_l) h),
    H_k    h = d/dx_k (integral of K(x_k, x_*) h dx_*),

where H_k applied to a product integrates every factor carrying the starred
coordinate.  The generic assembler compiles each entry's equation into a term
table once and evaluates it per step; the explicit first-order solvers
(solve_g1_pair / solve_g1_single) implement the same two equations from their
written-out form as an independent cross-check.
"""

from __future__ import annotations

import hashlib
import itertools as it
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import GridField, KernelSpec, TorusGrid, product_field
from .partitions import assemble_correction, in_triangle, solve_order

__all__ = [
    "TimeGrid",
    "Trajectory",
    "GTable",
    "solve_mckean_vlasov",
    "solve_g1_pair",
    "solve_g1_single",
    "solve_g_hierarchy",
    "assemble_phi",
    "compute_remainder",
    "check_energy_inequality",
    "solve_bbgky_reference",
    "EnergyReport",
    "BBGKYResult",
]

STAR = 10 ** 6  # sentinel for the integrated-out coordinate; sorts after any real one

MEMORY_BUDGET_BYTES = 2 * 1024 ** 3


@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid dt * n_steps = T with snapshots every store_every steps."""

    dt: float
    n_steps: int
    store_every: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one step")
        if self.store_every < 1 or self.n_steps % self.store_every:
            raise ValueError("store_every must divide n_steps")

    @property
    def T(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def stored_steps(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.store_every)

    @property
    def stored_times(self) -> np.ndarray:
        return self.dt * self.stored_steps

    @property
    def n_stored(self) -> int:
        return self.n_steps // self.store_every + 1


@dataclass
class Trajectory:
    """Time-indexed grid field: values[s] is the field at stored_times[s]."""

    grid: TorusGrid
    arity: int
    tg: TimeGrid
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.tg.stored_times

    def at(self, s: int) -> GridField:
        return GridField(self.grid, self.arity, self.values[s])


class _SpectralOps:
    """Cached Fourier multipliers for one (M, arity, dt) combination."""

    def __init__(self, M: int, arity: int, dt: float):
        freqs = np.fft.fftfreq(M, d=1.0 / M)  # integer mode numbers
        lam = np.zeros((M,) * arity)
        self.deriv = []
        self.mask = np.ones((M,) * arity, dtype=bool)
        keep = np.abs(freqs) <= M // 3  # 2/3-rule dealiasing
        for ax in range(arity):
            shape = [1] * arity
            shape[ax] = M
            kx = freqs.reshape(shape)
            lam = lam + 4.0 * np.pi ** 2 * kx ** 2
            self.deriv.append(2j * np.pi * kx)
            self.mask &= keep.reshape(shape)
        self.heat = np.exp(-lam * dt)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = -np.expm1(-lam * dt) / lam
        self.dtphi = np.where(lam == 0.0, dt, w)

    def step(self, u: np.ndarray, fluxes) -> np.ndarray:
        """One exponential-Euler step of du/dt = Lap u - sum_k d/dx_k flux_k."""
        rhs = np.zeros(u.shape, dtype=complex)
        for ax, flux in enumerate(fluxes):
            rhs -= self.deriv[ax] * np.fft.fftn(flux)
        rhs[~self.mask] = 0.0
        out = self.heat * np.fft.fftn(u) + self.dtphi * rhs
        return np.fft.ifftn(out).real


def _kernel_matrix(kernel: KernelSpec, grid: TorusGrid) -> np.ndarray:
    """Kmat[a, b] = K(x_a, x_b) on the grid nodes."""
    x = grid.points
    return kernel.eval(x[:, None], x[None, :])


def _sup_norm_grid(kernel: KernelSpec, samples: int = 4096) -> float:
    """Sup of |b(x) + khat(z)| over a fine grid (x and z vary independently)."""
    pts = np.arange(samples) / samples
    b = kernel.b_values(pts)
    k = kernel.khat_values(pts)
    return float(max(b.max() + k.max(), -(b.min() + k.min())))


def _check_cfl(kernel: KernelSpec, grid: TorusGrid, tg: TimeGrid) -> None:
    sup = kernel.sup_norm_bound
    if sup > 0 and tg.dt > grid.h / sup:
        raise ValueError(
            f"transport CFL violated: dt={tg.dt} exceeds h/|K|_inf = {grid.h / sup:.3e}"
        )


def _check_density(f: GridField) -> None:
    if f.values.min() <= 0:
        raise ValueError("initial density must be bounded below by a positive constant")
    if abs(f.integrate() - 1.0) > 1e-10:
        raise ValueError(f"initial data has mass {f.integrate()!r}, expected 1")


def _guard_negative(rho: np.ndarray, t: float) -> None:
    m = rho.min()
    if m < -1e-10:
        raise RuntimeError(
            f"density reached {m:.3e} at t={t:.6f}; time step too large for the transport"
        )


def solve_mckean_vlasov(f: GridField, kernel: KernelSpec, tg: TimeGrid) -> Trajectory:
    """Mean-field density rho: d/dt rho - Lap rho + d/dx((K*rho) rho) = 0, rho(0) = f.

    Mass is conserved exactly each step; a density dipping below -1e-10
    anywhere aborts with a diagnostic.
    """
    grid = f.grid
    if grid.dim != 1:
        raise ValueError("the mean-field solver runs on 1-d torus grids")
    _check_density(f)
    kernel._check_band(grid.M)
    _check_cfl(kernel, grid, tg)

    ops = _SpectralOps(grid.M, 1, tg.dt)
    bvec = kernel.b_values(grid.points)
    kc = kernel.khat_coeff_fft(grid.M)
    h = grid.h

    rho = f.values.copy()
    out = np.empty((tg.n_stored, grid.M))
    out[0] = rho
    s = 1
    for n in range(tg.n_steps):
        mass = rho.sum() * h
        conv = bvec * mass + np.fft.ifft(kc * np.fft.fft(rho)).real
        rho = ops.step(rho, [conv * rho])
        _guard_negative(rho, (n + 1) * tg.dt)
        if (n + 1) % tg.store_every == 0:
            out[s] = rho
            s += 1
    return Trajectory(grid, 1, tg, out)


# ---------------------------------------------------------------------------
# explicit first-order correction solvers (written-out pair/single equations)


def _require_full_resolution(traj: Trajectory) -> None:
    if traj.tg.store_every != 1:
        raise ValueError("this solver needs the driving trajectory at every time step")


def solve_g1_pair(rho: Trajectory, kernel: KernelSpec, tg: TimeGrid) -> Trajectory:
    """First-order pair correlation: the written-out linear PDE with zero initial data.

    d/dt g - Lap g + d/dx[rho(x) int K(x,s)g(y,s)ds + g (K*rho)(x)]
                   + d/dy[rho(y) int K(y,s)g(x,s)ds + g (K*rho)(y)]
      = d/dx[(K*rho)(x) rho(x)rho(y)] + d/dy[(K*rho)(y) rho(x)rho(y)]
        - d/dx[K(x,y) rho rho] - d/dy[K(y,x) rho rho].
    """
    _require_full_resolution(rho)
    if rho.tg != tg:
        raise ValueError("rho must be solved on the same time grid")
    grid = rho.grid
    ops = _SpectralOps(grid.M, 2, tg.dt)
    Kmat = _kernel_matrix(kernel, grid)
    h = grid.h

    g = np.zeros((grid.M,) * 2)
    out = np.empty((tg.n_stored, grid.M, grid.M))
    out[0] = g
    s = 1
    for n in range(tg.n_steps):
        r = rho.values[n]
        conv = h * (Kmat @ r)          # (K*rho)(x) on the nodes
        rr = np.outer(r, r)
        cx = h * np.einsum("xs,ys->xy", Kmat, g)   # int K(x,s) g(y,s) ds
        cy = h * np.einsum("ys,xs->xy", Kmat, g)   # int K(y,s) g(x,s) ds
        flux_x = r[:, None] * cx + g * conv[:, None] - conv[:, None] * rr + Kmat * rr
        flux_y = r[None, :] * cy + g * conv[None, :] - conv[None, :] * rr + Kmat.T * rr
        g = ops.step(g, [flux_x, flux_y])
        if (n + 1) % tg.store_every == 0:
            out[s] = g
            s += 1
    return Trajectory(grid, 2, tg, out)


def solve_g1_single(
    rho: Trajectory, g12: Trajectory, kernel: KernelSpec, tg: TimeGrid
) -> Trajectory:
    """First-order single-coordinate correction with zero initial data.

    d/dt g - Lap g + d/dx[rho(x) int K(x,s)g(s)ds + g(x)(K*rho)(x)]
      = d/dx[int K(x,s)(rho(s)rho(x) - g12(x,s))ds] - d/dx[K(x,x) rho(x)],

    the last term being the self-interaction carried by the diagonal of K.
    """
    _require_full_resolution(rho)
    _require_full_resolution(g12)
    grid = rho.grid
    ops = _SpectralOps(grid.M, 1, tg.dt)
    Kmat = _kernel_matrix(kernel, grid)
    Kdiag = np.diag(Kmat).copy()
    h = grid.h

    g = np.zeros(grid.M)
    out = np.empty((tg.n_stored, grid.M))
    out[0] = g
    s = 1
    for n in range(tg.n_steps):
        r = rho.values[n]
        conv = h * (Kmat @ r)
        cg = h * (Kmat @ g)
        pair_force = h * np.einsum("xs,xs->x", Kmat, g12.values[n])
        flux = r * cg + g * conv - conv * r + pair_force + Kdiag * r
        g = ops.step(g, [flux])
        if (n + 1) % tg.store_every == 0:
            out[s] = g
            s += 1
    return Trajectory(grid, 1, tg, out)


# ---------------------------------------------------------------------------
# generic hierarchy assembler


@dataclass(frozen=True)
class _Term:
    coef: int
    kind: str            # "H" (starred contraction) or "S" (pairwise)
    k: int               # 1-based divergence coordinate
    l: int | None        # second coordinate for S terms
    factors: tuple       # of (order, coords); coords sorted, STAR last


def _factor_nonzero(order: int, coords: tuple) -> bool:
    a = len(coords)
    if a == 0 or order < 0:
        return False
    if order == 0:
        return a == 1
    return a <= order + 1


def _mk(coords) -> tuple:
    return tuple(sorted(coords))


def compile_entry_terms(i: int, j: int) -> list:
    """Term table of the order-(i, j) cluster-correction equation, i >= 1.

    Both transport products (which involve the unknown itself) are folded in
    with negative coefficients, so the right-hand side for the time stepper is
    the signed sum of all returned terms.  Terms whose factors vanish (order
    and arity off the triangular set, or the empty coordinate set) are pruned.
    """
    if i < 1:
        raise ValueError("entry (0, 1) is the mean-field equation; no term table")
    terms: list[_Term] = []
    full = tuple(range(1, j + 1))

    def add(coef, kind, k, l, factors):
        if coef == 0:
            return
        fs = tuple((o, _mk(c)) for o, c in factors)
        if not all(_factor_nonzero(o, c) for o, c in fs):
            return
        if kind == "H":
            starred = sum(STAR in c for _, c in fs)
            if starred != 1:
                raise AssertionError("H term needs exactly one starred factor")
        terms.append(_Term(coef, kind, k, l, fs))

    for k in full:
        rest = tuple(c for c in full if c != k)
        add(-1, "H", k, None, [(0, (k,)), (i, rest + (STAR,))])
        add(-1, "H", k, None, [(i, full), (0, (STAR,))])
        add(-1, "H", k, None, [(i, full + (STAR,))])
        add(j, "H", k, None, [(i - 1, full + (STAR,))])
        for wlen in range(len(rest) + 1):
            for W in it.combinations(rest, wlen):
                Wk = W + (k,)
                rem = tuple(c for c in rest if c not in W)
                for m in range(1, i):
                    add(-1, "H", k, None, [(m, Wk), (i - m, rem + (STAR,))])
                for m in range(i):
                    add(j - 1 - wlen, "H", k, None, [(m, W + (k, STAR)), (i - 1 - m, rem)])
                    add(j, "H", k, None, [(m, Wk), (i - 1 - m, rem + (STAR,))])
                for rlen in range(len(rem) + 1):
                    for R in it.combinations(rem, rlen):
                        coef = j - 1 - wlen - rlen
                        rem2 = tuple(c for c in rem if c not in R)
                        for m in range(i):
                            for n in range(i - m):
                                add(coef, "H", k, None,
                                    [(m, Wk), (n, R + (STAR,)), (i - 1 - m - n, rem2)])
        for l in full:
            add(-1, "S", k, l, [(i - 1, full)])
            if l == k:
                continue
            pool = tuple(c for c in full if c not in (k, l))
            for wlen in range(len(pool) + 1):
                for W in it.combinations(pool, wlen):
                    rem = tuple(c for c in full if c != k and c not in W)
                    for m in range(i):
                        add(-1, "S", k, l, [(m, W + (k,)), (i - 1 - m, rem)])
    return terms


def _route(vals: np.ndarray, coords: tuple, j: int, M: int) -> np.ndarray:
    """Broadcast an array whose axes follow `coords` onto the full j-lattice."""
    order = np.argsort(coords)
    if not np.all(order[:-1] < order[1:]):
        vals = np.transpose(vals, order)
        coords = tuple(coords[a] for a in order)
    shape = tuple(M if (c + 1) in set(coords) else 1 for c in range(j))
    return vals.reshape(shape)


def _contract_star(vals: np.ndarray, coords: tuple, k: int, Kmat: np.ndarray, h: float):
    """Integrate the starred axis against K(x_k, .); returns (values, coords).

    coords are sorted with STAR last, so the starred axis is the final one.
    The contraction appends an x_k axis; when the factor already carries x_k
    the two are tied on the diagonal.
    """
    rest = coords[:-1]
    w = h * np.tensordot(vals, Kmat, axes=([len(coords) - 1], [1]))
    if k in rest:
        ax_k = rest.index(k)
        w = np.diagonal(w, axis1=ax_k, axis2=w.ndim - 1)
        out_coords = tuple(c for c in rest if c != k) + (k,)
    else:
        out_coords = rest + (k,)
    return w, out_coords


class _EntrySolver:
    """Compiled evaluator for one hierarchy entry (i, j), i >= 1."""

    def __init__(self, i: int, j: int, grid: TorusGrid, Kmat: np.ndarray):
        self.i = i
        self.j = j
        self.M = grid.M
        self.h = grid.h
        self.Kmat = Kmat
        self.Kdiag = np.diag(Kmat).copy()
        self.terms = compile_entry_terms(i, j)

    def _pair_weight(self, k: int, l: int) -> np.ndarray:
        if k == l:
            return _route(self.Kdiag, (k,), self.j, self.M)
        vals = self.Kmat if k < l else self.Kmat.T
        return _route(vals, _mk((k, l)), self.j, self.M)

    def fluxes(self, state: dict) -> list:
        j, M, h = self.j, self.M, self.h
        fluxes = [np.zeros((M,) * j) for _ in range(j)]
        for t in self.terms:
            prod = None
            if t.kind == "H":
                for order, coords in t.factors:
                    vals = state[(order, len(coords))]
                    if STAR in coords:
                        vals, coords = _contract_star(vals, coords, t.k, self.Kmat, h)
                    part = _route(vals, coords, j, M)
                    prod = part if prod is None else prod * part
            else:
                prod = self._pair_weight(t.k, t.l)
                for order, coords in t.factors:
                    prod = prod * _route(state[(order, len(coords))], coords, j, M)
            # the table holds d/dt g - Lap g = sum coef * Op(...); the stepper
            # subtracts flux divergences, so the flux carries the opposite sign
            fluxes[t.k - 1] -= t.coef * prod
        return fluxes


@dataclass
class GTable:
    """Solved correction hierarchy: trajectories for every (i, j) in T, i <= i_max."""

    grid: TorusGrid
    tg: TimeGrid
    i_max: int
    kernel: KernelSpec
    entries: dict

    @property
    def times(self) -> np.ndarray:
        return self.tg.stored_times

    @property
    def n_stored(self) -> int:
        return self.tg.n_stored

    def entry(self, i: int, j: int) -> np.ndarray:
        return self.entries[(i, j)]

    def field(self, i: int, j: int, s: int) -> GridField:
        return GridField(self.grid, j, self.entries[(i, j)][s])

    def fields_at(self, s: int) -> dict:
        return {key: GridField(self.grid, key[1], arr[s]) for key, arr in self.entries.items()}

    def rho(self) -> Trajectory:
        return Trajectory(self.grid, 1, self.tg, self.entries[(0, 1)])

    def save(self, path) -> None:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        ktext = self.kernel.to_text()
        meta = {
            "M": self.grid.M,
            "dim": self.grid.dim,
            "dt": self.tg.dt,
            "n_steps": self.tg.n_steps,
            "store_every": self.tg.store_every,
            "i_max": self.i_max,
            "kernel_text": ktext,
            "kernel_sha256": hashlib.sha256(ktext.encode()).hexdigest(),
            "times": [float(t) for t in self.times],
            "entries": [],
        }
        for (i, j), arr in sorted(self.entries.items()):
            meta["entries"].append({"i": i, "j": j, "file": f"g_{i}_{j}.f64"})
            with open(path / f"g_{i}_{j}.f64", "wb") as fh:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        with open(path / "meta.json", "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=1)

    @classmethod
    def load(cls, path) -> "GTable":
        path = Path(path)
        with open(path / "meta.json", "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        grid = TorusGrid(meta["M"], meta["dim"])
        tg = TimeGrid(meta["dt"], meta["n_steps"], meta["store_every"])
        kernel = KernelSpec.from_text(meta["kernel_text"])
        entries = {}
        for ent in meta["entries"]:
            i, j = ent["i"], ent["j"]
            raw = np.frombuffer((path / ent["file"]).read_bytes(), dtype="<f8")
            entries[(i, j)] = raw.reshape((tg.n_stored,) + (meta["M"],) * j).copy()
        return cls(grid, tg, meta["i_max"], kernel, entries)


def solve_g_hierarchy(
    i_max: int, f: GridField, kernel: KernelSpec, tg: TimeGrid
) -> GTable:
    """Solve all hierarchy entries (i, j) in T with i <= i_max, in dependency order.

    All entries advance in lockstep: each step evaluates every right-hand side
    from the time-t state, then applies the exponential updates, so every
    entry sees exactly the values a sequential solve in the triangular order
    would have used.
    """
    if not 0 <= i_max <= 2:
        raise ValueError("correction order capped at i_max = 2")
    grid = f.grid
    need = (tg.n_stored + 2) * grid.M ** (i_max + 1) * 8
    if need > MEMORY_BUDGET_BYTES:
        raise MemoryError(
            f"hierarchy solve needs ~{need/1e9:.1f} GB (> {MEMORY_BUDGET_BYTES/1e9:.1f} GB budget)"
        )
    _check_density(f)
    kernel._check_band(grid.M)
    _check_cfl(kernel, grid, tg)

    order = solve_order(i_max)
    Kmat = _kernel_matrix(kernel, grid)
    bvec = kernel.b_values(grid.points)
    kc = kernel.khat_coeff_fft(grid.M)
    h = grid.h

    ops = {a: _SpectralOps(grid.M, a, tg.dt) for a in range(1, i_max + 2)}
    solvers = {
        (e.i, e.j): _EntrySolver(e.i, e.j, grid, Kmat) for e in order if (e.i, e.j) != (0, 1)
    }

    state = {(i, j): np.zeros((grid.M,) * j) for (i, j) in ((e.i, e.j) for e in order)}
    state[(0, 1)] = f.values.copy()
    store = {
        (e.i, e.j): np.empty((tg.n_stored,) + (grid.M,) * e.j) for e in order
    }
    for key, arr in store.items():
        arr[0] = state[key]

    s = 1
    for n in range(tg.n_steps):
        new_state = {}
        rho = state[(0, 1)]
        conv = bvec * (rho.sum() * h) + np.fft.ifft(kc * np.fft.fft(rho)).real
        new_state[(0, 1)] = ops[1].step(rho, [conv * rho])
        _guard_negative(new_state[(0, 1)], (n + 1) * tg.dt)
        for e in order:
            key = (e.i, e.j)
            if key == (0, 1):
                continue
            fluxes = solvers[key].fluxes(state)
            new_state[key] = ops[e.j].step(state[key], fluxes)
        state = new_state
        if (n + 1) % tg.store_every == 0:
            for key, arr in store.items():
                arr[s] = state[key]
            s += 1
    return GTable(grid, tg, i_max, kernel, store)


# ---------------------------------------------------------------------------
# assembly of the expansion, the remainder, and the energy inequality


def assemble_phi(i: int, j: int, N: float, gt: GTable) -> Trajectory:
    """phi^i_j = sum_{k<=i} N^{-k} f^k_j at every stored time."""
    if i > gt.i_max:
        raise ValueError(f"table solved to order {gt.i_max}, requested {i}")
    out = np.zeros((gt.n_stored,) + (gt.grid.M,) * j)
    for s in range(gt.n_stored):
        fields = gt.fields_at(s)
        for k in range(i + 1):
            out[s] += float(N) ** (-k) * assemble_correction(k, j, fields).values
    return Trajectory(gt.grid, j, gt.tg, out)


def compute_remainder(i: int, j: int, N: float, gt: GTable, s: int):
    """Remainder field R^i_j at stored time s and its rho-weighted squared norm.

    R^i_j = N^{-(i+1)} sum_k e_k [ j * int K(x_k, x_*) f^i_{j+1} dx_*
                                   - sum_l K(x_k, x_l) f^i_j ],
    returned as an array of the j vector components; the norm is
    integral of |R / rho^j|^2 rho^j (sum over components).
    """
    if j + 1 > 3:
        raise ValueError("remainder needs arity j+1 fields; capped at j <= 2")
    if i > gt.i_max:
        raise ValueError(f"table solved to order {gt.i_max}, requested {i}")
    grid = gt.grid
    M, h = grid.M, grid.h
    Kmat = _kernel_matrix(gt.kernel, grid)
    fields = gt.fields_at(s)
    fij = assemble_correction(i, j, fields).values
    fij1 = assemble_correction(i, j + 1, fields).values

    scale = float(N) ** (-(i + 1))
    comps = np.empty((j,) + (M,) * j)
    star_coords = tuple(range(1, j + 1)) + (STAR,)
    for k in range(1, j + 1):
        contracted, coords = _contract_star(fij1, star_coords, k, Kmat, h)
        ck = _route(contracted, coords, j, M) * np.ones((M,) * j)
        ssum = np.zeros((M,) * j)
        for l in range(1, j + 1):
            if k == l:
                ssum = ssum + _route(np.diag(Kmat).copy(), (k,), j, M)
            else:
                vals = Kmat if k < l else Kmat.T
                ssum = ssum + _route(vals, _mk((k, l)), j, M)
        comps[k - 1] = scale * (j * ck - ssum * fij)

    rho_j = product_field(gt.field(0, 1, s), j).values
    norm = float(h ** j * (comps ** 2 / rho_j).sum())
    return comps, norm


@dataclass
class EnergyReport:
    """Both sides of the hierarchy energy inequality along a reference trajectory."""

    times: np.ndarray
    x_j: np.ndarray
    x_j1: np.ndarray
    r_j: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray
    margin: np.ndarray
    apriori_margin: np.ndarray
    k_norm: float

    @property
    def ok(self) -> bool:
        return bool(self.margin.min() >= -1e-4 and self.apriori_margin.min() >= -1e-4)


def _weighted_sq(num: np.ndarray, rho_j: np.ndarray, h: float, j: int) -> float:
    return float(h ** j * (num ** 2 / rho_j).sum())


def check_energy_inequality(
    i: int, j: int, N: float, gt: GTable, f_ref: dict
) -> EnergyReport:
    """Margin of d/dt x_j <= 2j|K|^2 (x_{j+1} - x_j) + 4 j^3/N^2 |K|^2 x_j + r_j.

    x_a(t) is the rho-weighted L^2 distance between phi^i_a and the reference
    f_a; f_ref maps arity -> ndarray of shape (n_stored, (M,)*a) on the same
    grid and times.  Also reports the a-priori margin
    12 j |K|^2 y_j - d/dt y_j with y_j the weighted norm of f_j itself.
    """
    for a in (j, j + 1):
        if a not in f_ref:
            raise ValueError(f"reference trajectory for arity {a} is required")
    grid = gt.grid
    h = grid.h
    times = gt.times
    k_norm = _sup_norm_grid(gt.kernel)

    phi_j = assemble_phi(i, j, N, gt).values
    phi_j1 = assemble_phi(i, j + 1, N, gt).values
    x_j = np.empty(gt.n_stored)
    x_j1 = np.empty(gt.n_stored)
    y_j = np.empty(gt.n_stored)
    r_j = np.empty(gt.n_stored)
    for s in range(gt.n_stored):
        rho1 = gt.field(0, 1, s)
        w_j = product_field(rho1, j).values
        w_j1 = product_field(rho1, j + 1).values
        x_j[s] = _weighted_sq(phi_j[s] - f_ref[j][s], w_j, h, j)
        x_j1[s] = _weighted_sq(phi_j1[s] - f_ref[j + 1][s], w_j1, h, j + 1)
        y_j[s] = _weighted_sq(f_ref[j][s], w_j, h, j)
        r_j[s] = 2.0 * compute_remainder(i, j, N, gt, s)[1]

    lhs = np.gradient(x_j, times)
    rhs = 2 * j * k_norm ** 2 * (x_j1 - x_j) + 4 * (j ** 3 / N ** 2) * k_norm ** 2 * x_j + r_j
    apriori = 12 * j * k_norm ** 2 * y_j - np.gradient(y_j, times)
    return EnergyReport(times, x_j, x_j1, r_j, lhs, rhs, rhs - lhs, apriori, k_norm)


# ---------------------------------------------------------------------------
# truncated-BBGKY reference at small N


@dataclass
class BBGKYResult:
    """Marginal trajectories f_1..f_3 of the N-particle hierarchy, closed at level 4."""

    grid: TorusGrid
    tg: TimeGrid
    N: int
    marginals: dict
    closure_size: np.ndarray       # max |g_3| per stored time
    marginal_drift: np.ndarray     # max over j of |int f_{j+1} dx - f_j| per stored time

    @property
    def times(self) -> np.ndarray:
        return self.tg.stored_times


def _cluster3(f1, f2, f3):
    """Cluster functions g_1, g_2, g_3 of a consistent triple (dense, exact algebra)."""
    g1 = f1
    g2 = f2 - np.multiply.outer(f1, f1)
    prod3 = np.multiply.outer(np.multiply.outer(f1, f1), f1)
    s12 = np.multiply.outer(g2, f1)                       # g2(x1,x2) f1(x3)
    s13 = np.swapaxes(s12, 1, 2)                          # g2(x1,x3) f1(x2)
    s23 = np.moveaxis(s12, (0, 1, 2), (2, 0, 1))          # g2(x2,x3) f1(x1)
    g3 = f3 - s12 - s13 - s23 - prod3
    return g1, g2, g3


def solve_bbgky_reference(
    f: GridField, kernel: KernelSpec, N: int, tg: TimeGrid, j_max: int = 3
) -> BBGKYResult:
    """Integrate the hierarchy for f_1..f_{j_max} with a product closure above.

    Level j_max+1 is reconstructed each step from the cluster functions of the
    lower levels with the top cluster set to zero; the size of g_3 and the
    marginal-consistency drift are reported so the closure error is visible
    rather than hidden.
    """
    if j_max != 3:
        raise ValueError("reference solver is wired for closure at level 4 (j_max = 3)")
    if N < j_max + 1:
        raise ValueError("need N > j_max")
    grid = f.grid
    _check_density(f)
    _check_cfl(kernel, grid, tg)
    M, h = grid.M, grid.h
    Kmat = _kernel_matrix(kernel, grid)
    Kdiag = np.diag(Kmat).copy()
    ops = {a: _SpectralOps(M, a, tg.dt) for a in (1, 2, 3)}

    state = {a: product_field(f, a).values for a in (1, 2, 3)}
    store = {a: np.empty((tg.n_stored,) + (M,) * a) for a in (1, 2, 3)}
    closure_size = np.empty(tg.n_stored)
    marg_drift = np.empty(tg.n_stored)

    def closure_f4(f1, f2, f3):
        g1, g2, g3 = _cluster3(f1, f2, f3)
        out = np.zeros((M,) * 4)
        pairs = list(it.combinations(range(4), 2))
        # partitions of {1..4} with all blocks of size <= 3, assembled from g's
        # 1+1+1+1
        out += np.multiply.outer(np.multiply.outer(np.multiply.outer(g1, g1), g1), g1)
        # 2+1+1 (6 ways) and 2+2 (3 ways) and 3+1 (4 ways)
        for (a, b) in pairs:
            restc = [c for c in range(4) if c not in (a, b)]
            block = np.multiply.outer(g2, np.multiply.outer(g1, g1))
            out += np.moveaxis(block, (0, 1, 2, 3), (a, b) + tuple(restc))
        for (a, b) in ((0, 1), (0, 2), (0, 3)):
            c, d = [x for x in range(4) if x not in (a, b)]
            block = np.multiply.outer(g2, g2)
            out += np.moveaxis(block, (0, 1, 2, 3), (a, b, c, d))
        for rest in range(4):
            trip = [x for x in range(4) if x != rest]
            block = np.multiply.outer(g3, g1)
            out += np.moveaxis(block, (0, 1, 2, 3), tuple(trip) + (rest,))
        return out, g3

    def diagnostics(s):
        f1, f2, f3 = state[1], state[2], state[3]
        _, _, g3 = _cluster3(f1, f2, f3)
        closure_size[s] = np.abs(g3).max()
        d1 = np.abs(f2.sum(axis=1) * h - f1).max()
        d2 = np.abs(f3.sum(axis=2) * h - f2).max()
        marg_drift[s] = max(d1, d2)

    for a in (1, 2, 3):
        store[a][0] = state[a]
    diagnostics(0)

    s = 1
    for n in range(tg.n_steps):
        f4, _ = closure_f4(state[1], state[2], state[3])
        upper = {1: state[2], 2: state[3], 3: f4}
        new_state = {}
        for a in (1, 2, 3):
            u = state[a]
            fluxes = []
            star_coords = tuple(range(1, a + 1)) + (STAR,)
            for k in range(1, a + 1):
                contracted, coords = _contract_star(upper[a], star_coords, k, Kmat, h)
                hk = _route(contracted, coords, a, M) * np.ones((M,) * a)
                ssum = np.zeros((M,) * a)
                for l in range(1, a + 1):
                    if k == l:
                        ssum = ssum + _route(Kdiag, (k,), a, M)
                    else:
                        vals = Kmat if k < l else Kmat.T
                        ssum = ssum + _route(vals, _mk((k, l)), a, M)
                fluxes.append(((N - a) / N) * hk + (ssum * u) / N)
            new_state[a] = ops[a].step(u, fluxes)
        state = new_state
        _guard_negative(state[1], (n + 1) * tg.dt)
        if (n + 1) % tg.store_every == 0:
            for a in (1, 2, 3):
                store[a][s] = state[a]
            diagnostics(s)
            s += 1
    return BBGKYResult(grid, tg, N, store, closure_size, marg_drift)
