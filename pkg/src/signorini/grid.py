"""Tensor-product discretization of the upper half box [-R,R]^n x [0,R].

The extension direction carries the degenerate weight |y|^a, a in (-1,1).
All per-cell weighted volumes are computed from the closed-form
antiderivative of y^a (never by evaluating y^a at y=0), so the weight is
handled exactly down to the thin set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

from .errors import InvalidConfigurationError, UnsupportedRadiusError


def _weighted_layer_integrals(ys: np.ndarray, a: float) -> np.ndarray:
    """Exact values of int_{y_j}^{y_{j+1}} y^a dy for each layer."""
    return (ys[1:] ** (1.0 + a) - ys[:-1] ** (1.0 + a)) / (1.0 + a)


def _layer_transmissibilities(ys: np.ndarray, a: float) -> np.ndarray:
    """Per-layer coefficients (1-a)/(y_{j+1}^{1-a} - y_j^{1-a}).

    These are the exact two-point stiffnesses of the 1D operator
    (y^a u')' on each layer: they reproduce the flux of any element of
    span{1, y^{1-a}} without error, which is what keeps the scheme
    consistent up to the degenerate axis. For a=0 they reduce to 1/hy.
    """
    if a == 0.0:
        return 1.0 / (ys[1:] - ys[:-1])
    return (1.0 - a) / (ys[1:] ** (1.0 - a) - ys[:-1] ** (1.0 - a))


@dataclass(frozen=True)
class Grid:
    """Immutable tensor grid over [-R,R]^n x [0,R] with weighted measures."""

    n: int
    R: float
    a: float
    hx: float
    hy: float
    xs: tuple  # n arrays of thin-node coordinates
    ys: np.ndarray  # extension nodes, ys[0] = 0
    cell_y_weights: np.ndarray  # exact int y^a per layer
    cell_y_trans: np.ndarray  # kernel-exact layer transmissibilities
    cell_y_neg_weights: np.ndarray  # exact int y^{-a} per layer

    # -- shapes ---------------------------------------------------------
    @property
    def node_shape(self) -> tuple:
        return tuple(len(x) for x in self.xs) + (len(self.ys),)

    @property
    def cell_shape(self) -> tuple:
        return tuple(len(x) - 1 for x in self.xs) + (len(self.ys) - 1,)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.node_shape))

    @property
    def thin_cell_area(self) -> float:
        return self.hx**self.n

    # -- node coordinate fields -----------------------------------------
    def node_mesh(self) -> tuple:
        """Meshgrid of node coordinates, thin axes first, y last."""
        return np.meshgrid(*self.xs, self.ys, indexing="ij")

    def node_radii(self, x0=None) -> np.ndarray:
        """|X - (x0, 0)| at every node."""
        mesh = self.node_mesh()
        if x0 is None:
            x0 = np.zeros(self.n)
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        sq = sum((mesh[d] - x0[d]) ** 2 for d in range(self.n)) + mesh[-1] ** 2
        return np.sqrt(sq)

    @property
    def cell_measures(self) -> np.ndarray:
        """Exact int_cell y^a dX for every cell."""
        base = self.thin_cell_area * self.cell_y_weights
        return np.broadcast_to(base, self.cell_shape).copy()

    def cell_centers(self) -> tuple:
        axes = [0.5 * (x[:-1] + x[1:]) for x in self.xs]
        axes.append(0.5 * (self.ys[:-1] + self.ys[1:]))
        return np.meshgrid(*axes, indexing="ij")

    # -- node masks -------------------------------------------------------
    @property
    def thin_mask(self) -> np.ndarray:
        m = np.zeros(self.node_shape, dtype=bool)
        m[..., 0] = True
        return m

    @property
    def thin_index(self) -> np.ndarray:
        """Flat node indices of thin nodes (y = 0)."""
        return np.where(self.thin_mask.ravel())[0]

    @property
    def dirichlet_mask(self) -> np.ndarray:
        """Outer box boundary: lateral sides and the top y = R."""
        m = np.zeros(self.node_shape, dtype=bool)
        for d in range(self.n):
            sl = [slice(None)] * (self.n + 1)
            sl[d] = 0
            m[tuple(sl)] = True
            sl[d] = -1
            m[tuple(sl)] = True
        m[..., -1] = True
        return m

    def lumped_node_weights(self, exponent: float | None = None) -> np.ndarray:
        """Node quadrature weights for int f |y|^e dX by equal cell splitting.

        exponent defaults to the grid weight a; pass -a for conjugate-weight
        integrals. Exact antiderivatives per layer, then each cell's weight
        is split evenly among its 2^(n+1) corners.
        """
        e = self.a if exponent is None else exponent
        ys = self.ys
        layer = (ys[1:] ** (1.0 + e) - ys[:-1] ** (1.0 + e)) / (1.0 + e)
        w = np.zeros(self.node_shape)
        ny = len(ys)
        wy = np.zeros(ny)
        wy[:-1] += layer / 2.0
        wy[1:] += layer / 2.0
        w[...] = wy
        for d in range(self.n):
            wx = np.full(len(self.xs[d]), self.hx)
            wx[0] = wx[-1] = self.hx / 2.0
            shape = [1] * (self.n + 1)
            shape[d] = len(wx)
            w = w * wx.reshape(shape)
        return w


def build_grid(n: int, R: float, hx: float, hy: float, a: float) -> Grid:
    """Build the half-box grid with exact per-cell weighted measures.

    Node spacings are snapped so that the box is covered exactly and x=0
    is a node in every thin direction.
    """
    if n not in (1, 2):
        raise InvalidConfigurationError(f"thin dimension n must be 1 or 2, got {n}")
    for name, v in (("R", R), ("hx", hx), ("hy", hy), ("a", a)):
        if not np.isfinite(v):
            raise InvalidConfigurationError(f"parameter {name} must be finite, got {v}")
    if R <= 0:
        raise InvalidConfigurationError(f"R must be positive, got {R}")
    if not (0 < hx < R and 0 < hy < R):
        raise InvalidConfigurationError(f"spacings must lie in (0, R), got hx={hx}, hy={hy}")
    if not (-1.0 < a < 1.0):
        raise InvalidConfigurationError(f"weight exponent a must lie in (-1, 1), got {a}")

    nx_half = max(1, round(R / hx))
    my = max(1, round(R / hy))
    hx_eff = R / nx_half
    hy_eff = R / my
    ax = -R + hx_eff * np.arange(2 * nx_half + 1)
    ys = hy_eff * np.arange(my + 1)
    xs = tuple(ax.copy() for _ in range(n))
    return Grid(
        n=n,
        R=float(R),
        a=float(a),
        hx=float(hx_eff),
        hy=float(hy_eff),
        xs=xs,
        ys=ys,
        cell_y_weights=_weighted_layer_integrals(ys, a),
        cell_y_trans=_layer_transmissibilities(ys, a),
        cell_y_neg_weights=_weighted_layer_integrals(ys, -a),
    )


def total_weighted_measure(grid: Grid) -> float:
    """Closed form int_box y^a dX = (2R)^n R^{1+a}/(1+a)."""
    return (2.0 * grid.R) ** grid.n * grid.R ** (1.0 + grid.a) / (1.0 + grid.a)


# ---------------------------------------------------------------------------
# sphere quadrature
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereRule:
    """Quadrature on the upper half sphere of radius r.

    Applying the rule to nodal samples of g returns
    int_{S_r^+} g |y|^a dsigma; callers double the result for evenly
    reflected fields.
    """

    r: float
    points: np.ndarray  # (m, n+1) coordinates
    weights: np.ndarray  # (m,) includes surface measure and |y|^a

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))


def sphere_quadrature(grid: Grid, r: float, n_angles: int = 64, a: float | None = None) -> SphereRule:
    """Gauss-Jacobi rule absorbing the (sin theta)^a weight exactly.

    n=1: theta in (0,pi) with t = cos(theta); the measure
    (sin theta)^a dtheta becomes the Jacobi weight (1-t^2)^{(a-1)/2} dt.
    n=2: tensor of a periodic trapezoid in azimuth with a Gauss-Jacobi
    rule in u = cos(polar) carrying the u^a weight.
    """
    if a is None:
        a = grid.a
    if n_angles < 8:
        raise InvalidConfigurationError(f"n_angles must be >= 8, got {n_angles}")
    if not (0 < r <= grid.R):
        raise UnsupportedRadiusError(f"radius {r} outside (0, R={grid.R}]")
    if r < 2.0 * max(grid.hx, grid.hy):
        raise UnsupportedRadiusError(
            f"radius {r} below resolution floor 2*max(hx,hy)={2*max(grid.hx,grid.hy)}"
        )
    if grid.n == 1:
        t, w = roots_jacobi(n_angles, (a - 1.0) / 2.0, (a - 1.0) / 2.0)
        theta = np.arccos(t)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        wts = w * r ** (1.0 + a)
        return SphereRule(r=float(r), points=pts, weights=wts)
    # n == 2: y = r*u with u in (0,1], thin radius r*sqrt(1-u^2)
    t, w = roots_jacobi(n_angles, 0.0, a)
    u = (t + 1.0) / 2.0
    wu = w * 2.0 ** (-(a + 1.0))
    lam = 2.0 * np.pi * np.arange(n_angles) / n_angles
    wl = np.full(n_angles, 2.0 * np.pi / n_angles)
    U, L = np.meshgrid(u, lam, indexing="ij")
    WU, WL = np.meshgrid(wu, wl, indexing="ij")
    s = np.sqrt(np.clip(1.0 - U**2, 0.0, None))
    pts = np.column_stack(
        [(r * s * np.cos(L)).ravel(), (r * s * np.sin(L)).ravel(), (r * U).ravel()]
    )
    wts = (WU * WL).ravel() * r ** (2.0 + a)
    return SphereRule(r=float(r), points=pts, weights=wts)


def halfsphere_weighted_area(n: int, r: float, a: float) -> float:
    """Closed form int_{S_r^+} |y|^a dsigma."""
    if n == 1:
        from scipy.special import gamma

        # int_0^pi (sin t)^a dt = sqrt(pi) Gamma((a+1)/2) / Gamma(a/2+1)
        return r ** (1.0 + a) * np.sqrt(np.pi) * gamma((a + 1.0) / 2.0) / gamma(a / 2.0 + 1.0)
    return 2.0 * np.pi * r ** (2.0 + a) / (1.0 + a)


# ---------------------------------------------------------------------------
# ball coverage
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BallCells:
    """Cells meeting the upper half ball, with coverage fractions in [0,1]."""

    r: float
    indices: tuple  # arrays of cell multi-indices
    fractions: np.ndarray

    def coverage_field(self, cell_shape: tuple) -> np.ndarray:
        cov = np.zeros(cell_shape)
        cov[self.indices] = self.fractions
        return cov


def _subsample_offsets(grid: Grid, nsub: int) -> np.ndarray:
    fr = (np.arange(nsub) + 0.5) / nsub - 0.5
    axes = [fr * grid.hx] * grid.n + [fr * grid.hy]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def ball_cells(grid: Grid, r: float, center=None, nsub: int = 4) -> BallCells:
    """Cells intersecting B_r^+((center,0)) with subsampled coverage fractions.

    Coverage uses a fixed nsub^(n+1)-point midpoint subsample per
    straddling cell (nsub=4 by default); interior cells get fraction 1
    from a bounding-sphere test without subsampling.
    """
    if not (0 < r <= grid.R):
        raise UnsupportedRadiusError(f"radius {r} outside (0, R={grid.R}]")
    centers = grid.cell_centers()
    if center is None:
        center = np.zeros(grid.n)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    sq = sum((centers[d] - center[d]) ** 2 for d in range(grid.n)) + centers[-1] ** 2
    dist = np.sqrt(sq)
    half_diag = 0.5 * np.sqrt(grid.n * grid.hx**2 + grid.hy**2)
    inside = dist <= r - half_diag
    shell = (dist > r - half_diag) & (dist < r + half_diag)
    idx_in = np.where(inside)
    idx_sh = np.where(shell)
    fr_sh = np.empty(len(idx_sh[0]))
    if len(idx_sh[0]):
        offs = _subsample_offsets(grid, nsub)
        pts = np.stack([centers[d][idx_sh] for d in range(grid.n + 1)], axis=-1)
        pts = pts[:, None, :] + offs[None, :, :]
        c_full = np.concatenate([center, [0.0]])
        r2 = ((pts - c_full) ** 2).sum(axis=-1)
        fr_sh = (r2 <= r * r).mean(axis=1)
    keep = fr_sh > 0.0
    indices = tuple(
        np.concatenate([idx_in[d], idx_sh[d][keep]]) for d in range(grid.n + 1)
    )
    fractions = np.concatenate([np.ones(len(idx_in[0])), fr_sh[keep]])
    return BallCells(r=float(r), indices=indices, fractions=fractions)


def ball_weighted_measure(n: int, r: float, a: float) -> float:
    """Closed form int_{B_r^+} y^a dX (upper half ball)."""
    from scipy.special import gamma

    # integrate the half-sphere area in the radius
    if n == 1:
        area1 = np.sqrt(np.pi) * gamma((a + 1.0) / 2.0) / gamma(a / 2.0 + 1.0)
        return area1 * r ** (2.0 + a) / (2.0 + a)
    return 2.0 * np.pi / (1.0 + a) * r ** (3.0 + a) / (3.0 + a)
