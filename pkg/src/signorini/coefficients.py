"""Coefficient matrix A(x) = B(x) (+) 1, obstacle, source, boundary data.

B acts on the thin directions only and never depends on y; the extension
slot of A is identically 1 with zero coupling. Scalar data (obstacle,
source, boundary) is accepted as constants, polynomials in x, callables,
or tabulated node values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import (
    InvalidCoefficientError,
    InvalidConfigurationError,
    OutOfDomainError,
)
from .grid import Grid


# ---------------------------------------------------------------------------
# scalar field descriptions
# ---------------------------------------------------------------------------


def eval_scalar_spec(spec, points: np.ndarray) -> np.ndarray:
    """Evaluate a scalar description at points of shape (..., dim).

    Accepted forms: a number; {"poly": [[coef, [e1,...]], ...]} meaning
    sum coef * prod x_d^{e_d}; a callable taking (..., dim) coordinates.
    """
    points = np.asarray(points, dtype=float)
    if np.isscalar(spec) or isinstance(spec, (int, float)):
        return np.full(points.shape[:-1], float(spec))
    if isinstance(spec, dict) and "poly" in spec:
        out = np.zeros(points.shape[:-1])
        for coef, exps in spec["poly"]:
            term = np.full(points.shape[:-1], float(coef))
            for d, e in enumerate(exps):
                if e:
                    term = term * points[..., d] ** e
            out += term
        return out
    if callable(spec):
        return np.asarray(spec(points), dtype=float)
    raise InvalidConfigurationError(f"unrecognized scalar field description: {spec!r}")


def _thin_points(grid: Grid) -> np.ndarray:
    mesh = np.meshgrid(*grid.xs, indexing="ij")
    return np.stack(mesh, axis=-1)


def _node_points(grid: Grid) -> np.ndarray:
    mesh = grid.node_mesh()
    return np.stack(mesh, axis=-1)


# ---------------------------------------------------------------------------
# coefficient field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientField:
    """Symmetric uniformly elliptic thin-block coefficient b_ij(x)."""

    n: int
    table: np.ndarray  # B at thin nodes, thin_shape + (n, n)
    lam: float
    Lam: float
    lip: float
    _evaluator: object  # callable points (...,n) -> (...,n,n)

    def eval_B(self, points: np.ndarray) -> np.ndarray:
        """B at arbitrary thin points (..., n) -> (..., n, n)."""
        return self._evaluator(np.asarray(points, dtype=float))

    def eval_A(self, points: np.ndarray) -> np.ndarray:
        """Full (n+1)x(n+1) block matrix at thick points (..., n+1)."""
        points = np.asarray(points, dtype=float)
        B = self.eval_B(points[..., : self.n])
        A = np.zeros(points.shape[:-1] + (self.n + 1, self.n + 1))
        A[..., : self.n, : self.n] = B
        A[..., self.n, self.n] = 1.0
        return A

    @property
    def is_identity(self) -> bool:
        eye = np.eye(self.n)
        return bool(np.all(self.table == eye))


def _table_interpolator(grid: Grid, table: np.ndarray):
    interps = []
    n = grid.n
    for i in range(n):
        for j in range(n):
            interps.append(
                RegularGridInterpolator(
                    grid.xs, table[..., i, j], method="linear",
                    bounds_error=False, fill_value=None,
                )
            )

    def ev(points):
        pts = np.atleast_2d(points)
        out = np.empty(pts.shape[:-1] + (n, n))
        k = 0
        for i in range(n):
            for j in range(n):
                out[..., i, j] = interps[k](pts)
                k += 1
        if np.ndim(points) == 1:
            return out[0]
        return out

    return ev


def build_coefficients(grid: Grid, description=None, seed: int = 0) -> CoefficientField:
    """Validate a coefficient description and compute ellipticity data.

    description: None or "identity"; an (n x n) nested list of scalar
    descriptions; a callable points->(...,n,n); or a tabulated array of
    shape thin_shape+(n,n).
    """
    n = grid.n
    pts = _thin_points(grid)

    if description is None or (isinstance(description, str) and description == "identity"):
        table = np.broadcast_to(np.eye(n), pts.shape[:-1] + (n, n)).copy()

        def ev(points):
            points = np.asarray(points, dtype=float)
            return np.broadcast_to(np.eye(n), points.shape[:-1] + (n, n)).copy()

        return CoefficientField(n=n, table=table, lam=1.0, Lam=1.0, lip=0.0, _evaluator=ev)

    if callable(description):
        def ev(points):
            return np.asarray(description(np.asarray(points, dtype=float)), dtype=float)
        table = ev(pts)
    elif isinstance(description, np.ndarray):
        if description.shape != pts.shape[:-1] + (n, n):
            raise InvalidCoefficientError(
                f"tabulated coefficients must have shape {pts.shape[:-1] + (n, n)},"
                f" got {description.shape}"
            )
        table = description.astype(float)
        ev = _table_interpolator(grid, table)
    else:  # nested list of scalar specs
        entries = description
        if len(entries) != n or any(len(row) != n for row in entries):
            raise InvalidCoefficientError(f"coefficient description must be {n}x{n}")

        def ev(points):
            points = np.asarray(points, dtype=float)
            out = np.empty(points.shape[:-1] + (n, n))
            for i in range(n):
                for j in range(n):
                    out[..., i, j] = eval_scalar_spec(entries[i][j], points)
            return out

        table = ev(pts)

    if not np.all(np.isfinite(table)):
        raise InvalidCoefficientError("coefficient table contains non-finite entries")
    asym = np.abs(table - np.swapaxes(table, -1, -2)).max()
    if asym > 0.0:
        raise InvalidCoefficientError(f"coefficient matrix is asymmetric (max |b_ij-b_ji| = {asym:g})")

    eigs = np.linalg.eigvalsh(table)
    lam = float(eigs.min())
    Lam = float(eigs.max())
    if lam <= 0.0:
        raise InvalidCoefficientError(f"coefficient matrix is not positive definite (min eig = {lam:g})")

    # Lipschitz estimate: max finite-difference quotient over axis neighbors
    lip = 0.0
    for d in range(n):
        diff = np.diff(table, axis=d)
        if diff.size:
            norms = np.linalg.norm(diff.reshape(-1, n, n), ord=2, axis=(1, 2))
            lip = max(lip, float(norms.max()) / grid.hx)

    # sampled ellipticity sanity with random directions (seeded)
    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((8, n))
    xi /= np.linalg.norm(xi, axis=1, keepdims=True)
    quad = np.einsum("...ij,kj,ki->...k", table, xi, xi)
    if quad.min() < lam - 1e-12 or quad.max() > Lam + 1e-12:
        raise InvalidCoefficientError("sampled ellipticity outside eigenvalue bounds")

    return CoefficientField(n=n, table=table, lam=lam, Lam=Lam, lip=lip, _evaluator=ev)


def ellipticity_report(field: CoefficientField) -> tuple:
    """Stored (lambda, Lambda, lip); deterministic."""
    return (field.lam, field.Lam, field.lip)


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """Weighted thin obstacle problem data on a grid."""

    grid: Grid
    a: float
    coeff: CoefficientField
    psi: np.ndarray  # obstacle on thin nodes, thin_shape
    f: np.ndarray  # source on nodes, node_shape
    boundary: np.ndarray  # Dirichlet values on nodes (used on the outer boundary)
    f_independent_of_y: bool = True

    # descriptions kept for exact re-evaluation under changes of variables
    psi_spec: object = None
    f_spec: object = None


def make_problem(
    grid: Grid,
    coeff: CoefficientField | None = None,
    psi=0.0,
    f=0.0,
    boundary=0.0,
    f_independent_of_y: bool = True,
) -> ProblemSpec:
    """Assemble a validated ProblemSpec from descriptions or tables."""
    a = grid.a
    if not (0.0 <= a < 1.0):
        raise InvalidConfigurationError(f"the artifact restricts a to [0, 1), got a={a}")
    if coeff is None:
        coeff = build_coefficients(grid, None)

    thin_pts = _thin_points(grid)
    node_pts = _node_points(grid)

    psi_arr = psi if isinstance(psi, np.ndarray) else eval_scalar_spec(psi, thin_pts)
    if psi_arr.shape != thin_pts.shape[:-1]:
        raise InvalidConfigurationError("obstacle table has wrong shape")

    if isinstance(f, np.ndarray):
        f_arr = f
    else:
        # y-independent sources are described over thin variables only
        f_arr = eval_scalar_spec(f, node_pts[..., : grid.n] if f_independent_of_y else node_pts)
    f_arr = np.broadcast_to(f_arr, grid.node_shape).copy()

    bnd_arr = boundary if isinstance(boundary, np.ndarray) else eval_scalar_spec(boundary, node_pts)
    bnd_arr = np.broadcast_to(bnd_arr, grid.node_shape).copy()

    for name, arr in (("obstacle", psi_arr), ("source", f_arr), ("boundary", bnd_arr)):
        if not np.all(np.isfinite(arr)):
            raise InvalidConfigurationError(f"{name} data contains non-finite values")
    if f_independent_of_y and isinstance(f, np.ndarray):
        if np.abs(f_arr - f_arr[..., :1]).max() > 0.0:
            raise InvalidConfigurationError("source flagged y-independent but varies with y")

    return ProblemSpec(
        grid=grid, a=a, coeff=coeff, psi=psi_arr, f=f_arr, boundary=bnd_arr,
        f_independent_of_y=f_independent_of_y,
        psi_spec=None if isinstance(psi, np.ndarray) else psi,
        f_spec=None if isinstance(f, np.ndarray) else f,
    )


# ---------------------------------------------------------------------------
# normalization at a thin point
# ---------------------------------------------------------------------------


def normalize_at(problem: ProblemSpec, field, x0):
    """Change thin variables so the coefficient matrix is I at x0.

    With S = B(x0)^{1/2}, the returned problem/field are the originals
    composed with x -> x0 + S x; the new thin block is
    S^{-1} B(x0 + S x) S^{-1}, which is the identity at the origin.
    Fields are resampled onto the reference grid by multilinear
    interpolation (coordinates clamped to the box).
    """
    from .solver import SolutionField  # local import to avoid a cycle
    from .operator import neumann_trace

    grid = problem.grid
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if np.any(np.abs(x0) > grid.R + 1e-12):
        raise OutOfDomainError(f"normalization point {x0} outside the box")

    B0 = problem.coeff.eval_B(x0)
    B0 = np.atleast_2d(B0)
    w, V = np.linalg.eigh(B0)
    if w.min() <= 0:
        raise InvalidCoefficientError("coefficient matrix not positive definite at x0")
    S = (V * np.sqrt(w)) @ V.T
    S_inv = (V / np.sqrt(w)) @ V.T

    def map_thin(points):
        return x0 + points @ S.T

    base_ev = problem.coeff.eval_B

    def new_ev(points):
        B = base_ev(map_thin(np.asarray(points, dtype=float)))
        return np.einsum("ij,...jk,kl->...il", S_inv, B, S_inv)

    thin_pts = _thin_points(grid)
    new_table = new_ev(thin_pts)
    eigs = np.linalg.eigvalsh(new_table)
    coeff = CoefficientField(
        n=grid.n,
        table=new_table,
        lam=float(eigs.min()),
        Lam=float(eigs.max()),
        lip=problem.coeff.lip * float(np.linalg.norm(S_inv, 2)) ** 2 * float(np.linalg.norm(S, 2)),
        _evaluator=new_ev,
    )

    def resample_nodes(values: np.ndarray) -> np.ndarray:
        interp = RegularGridInterpolator(
            grid.xs + (grid.ys,), values, method="linear", bounds_error=False, fill_value=None
        )
        node_pts = _node_points(grid)
        mapped = node_pts.copy()
        mapped[..., : grid.n] = map_thin(node_pts[..., : grid.n])
        for d in range(grid.n):
            mapped[..., d] = np.clip(mapped[..., d], -grid.R, grid.R)
        return interp(mapped)

    def resample_thin(values: np.ndarray) -> np.ndarray:
        interp = RegularGridInterpolator(
            grid.xs, values, method="linear", bounds_error=False, fill_value=None
        )
        pts = map_thin(thin_pts)
        for d in range(grid.n):
            pts[..., d] = np.clip(pts[..., d], -grid.R, grid.R)
        return interp(pts)

    psi_new = (
        eval_scalar_spec(problem.psi_spec, map_thin(thin_pts))
        if problem.psi_spec is not None
        else resample_thin(problem.psi)
    )
    f_new = resample_nodes(problem.f)
    bnd_new = resample_nodes(problem.boundary)
    new_problem = ProblemSpec(
        grid=grid, a=problem.a, coeff=coeff, psi=psi_new, f=f_new, boundary=bnd_new,
        f_independent_of_y=problem.f_independent_of_y,
        psi_spec=None, f_spec=None,
    )

    U_new = resample_nodes(field.U)
    trace_new = neumann_trace(grid, U_new, problem.a)
    active_new = (U_new[..., 0] - psi_new) <= max(getattr(field, "tol", 0.0), 0.0) * 10 + 1e-14
    new_field = SolutionField(
        U=U_new,
        active=active_new,
        trace=trace_new,
        iterations=getattr(field, "iterations", 0),
        final_residual=getattr(field, "final_residual", 0.0),
        tol=getattr(field, "tol", 0.0),
        method=getattr(field, "method", "resampled"),
    )
    return new_problem, new_field
