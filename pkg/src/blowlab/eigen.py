"""Discrete Dirichlet eigenproblem for the diffusion operator on a bounded set.

The problem -L_h phi = lambda phi in Omega, phi = 0 outside, restricted to
the I interior nodes, is the symmetric I x I matrix

    M[i, i] = ||omega||_1,   M[i, j] = -omega(alpha_i - alpha_j)  (i != j),

which is weakly diagonally dominant with nonnegative diagonal. The smallest
eigenpair is computed by safeguarded inverse iteration with a dense
factorization; a single deflated iteration estimates the spectral gap so a
degenerate ground eigenvalue is flagged rather than treated as an error
(breaking the axis-positivity assumption genuinely produces one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .lattice import LatticeField, ZERO
from .weights import WeightKernel, _offsets_grid

MATRIX_SIZE_CAP = 20000


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


@dataclass
class DirichletProblem:
    """Interior nodes of a bounded domain, enumerated for matrix assembly.

    ``nodes`` is an (I, dim) integer array in lexicographic order. ``radius``
    is set for open balls B_R(0) (membership is |x_alpha| < R strictly).
    """

    kernel: WeightKernel
    nodes: np.ndarray
    radius: float | None = None

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=np.int64))
        if nodes.shape[0] == 0:
            raise ValueError("domain contains no interior grid nodes")
        if nodes.shape[1] != self.kernel.dim:
            raise ValueError("node list has wrong dimension")
        if nodes.shape[0] > MATRIX_SIZE_CAP:
            raise ValueError(
                f"problem size {nodes.shape[0]} exceeds the dense matrix cap "
                f"({MATRIX_SIZE_CAP})")
        order = np.lexsort(nodes.T[::-1])
        object.__setattr__(self, "nodes", nodes[order])

    @classmethod
    def from_ball(cls, kernel: WeightKernel, radius: float) -> "DirichletProblem":
        if not radius > 0:
            raise ValueError("ball radius must be positive")
        reach = int(math.ceil(radius / kernel.h))
        offs = _offsets_grid(reach, kernel.dim)
        r = kernel.h * np.sqrt(np.sum(offs.astype(np.float64) ** 2, axis=-1))
        return cls(kernel, offs[r < radius], radius=float(radius))

    @classmethod
    def from_interval(cls, kernel: WeightKernel, a: float, b: float) -> "DirichletProblem":
        """Open interval (a, b) in 1D."""
        if kernel.dim != 1:
            raise ValueError("intervals are one-dimensional domains")
        lo = int(math.floor(a / kernel.h))
        hi = int(math.ceil(b / kernel.h))
        alphas = np.arange(lo, hi + 1)
        x = kernel.h * alphas
        keep = (x > a) & (x < b)
        return cls(kernel, alphas[keep].reshape(-1, 1))

    @classmethod
    def from_nodes(cls, kernel: WeightKernel, node_list) -> "DirichletProblem":
        nodes = np.asarray(node_list, dtype=np.int64)
        if nodes.ndim == 1:
            nodes = nodes.reshape(-1, 1)
        return cls(kernel, nodes)


@dataclass
class EigenResult:
    """Smallest Dirichlet eigenpair with solver diagnostics.

    ``gap`` is the estimated distance to the next eigenvalue from one
    deflated iteration; ``simple`` is False when the gap is numerically zero
    (degenerate ground eigenvalue). The eigenfunction field is zero outside
    the domain and normalized as requested ("l1" or "l2").
    """

    lam: float
    eigenfunction: LatticeField
    residual: float
    normalization: str
    gap: float
    lam2: float
    simple: bool
    vector: np.ndarray
    nodes: np.ndarray


def assemble_dirichlet_matrix(problem: DirichletProblem) -> np.ndarray:
    """Symmetric matrix of the Dirichlet eigenproblem on the interior nodes."""
    kernel, nodes = problem.kernel, problem.nodes
    diffs = nodes[:, None, :] - nodes[None, :, :]
    M = -kernel.weight_array(diffs)
    np.fill_diagonal(M, kernel.l1_norm)
    return M


def smallest_eigenpair(matrix: np.ndarray, tol: float = 1e-10,
                       max_iter: int = 500, seed: int = 0):
    """Smallest eigenpair of a symmetric matrix by safeguarded inverse iteration.

    Returns (lam, v, residual, gap, lam2) with v l2-normalized and
    sign-normalized toward nonnegativity. The Rayleigh quotient of the result
    is cross-checked against random test vectors.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.array_equal(M, M.T):
        raise ValueError("matrix must be symmetric")
    n = M.shape[0]
    if n == 1:
        return float(M[0, 0]), np.array([1.0]), 0.0, math.inf, math.inf

    scale = float(np.max(np.abs(M)))
    factor = None
    shift = 0.0
    for attempt in range(6):
        try:
            factor = linalg.lu_factor(M + shift * np.eye(n))
            # reject factorizations with a numerically zero pivot
            if np.min(np.abs(np.diag(factor[0]))) > 1e-14 * scale:
                break
        except linalg.LinAlgError:
            pass
        shift = 1e-12 * scale if shift == 0.0 else shift * 100
        factor = None
    if factor is None:
        raise ConvergenceError("could not factorize the shifted matrix")

    v = np.ones(n) / math.sqrt(n)
    lam = float(v @ M @ v)
    residual = math.inf
    for _ in range(max_iter):
        w = linalg.lu_solve(factor, v)
        v = w / np.linalg.norm(w)
        lam = float(v @ M @ v)
        residual = float(np.max(np.abs(M @ v - lam * v)))
        if residual <= tol:
            break
    else:
        raise ConvergenceError(
            f"inverse iteration did not reach tol {tol:.1e} in {max_iter} "
            f"iterations", residual=residual)
    if np.sum(v) < 0:
        v = -v

    rng = np.random.default_rng(seed)
    for _ in range(20):
        r = rng.normal(size=n)
        if lam > (r @ M @ r) / (r @ r) + 1e-10 * max(1.0, abs(lam)):
            raise ConvergenceError("Rayleigh minimality check failed")

    # one deflated iteration sequence for the next eigenvalue
    w2 = rng.normal(size=n)
    w2 -= (v @ w2) * v
    w2 /= np.linalg.norm(w2)
    lam2 = math.inf
    for _ in range(max_iter):
        w2 = linalg.lu_solve(factor, w2)
        w2 -= (v @ w2) * v
        nrm = np.linalg.norm(w2)
        if nrm == 0.0:
            break
        w2 /= nrm
        new = float(w2 @ M @ w2)
        if abs(new - lam2) <= 1e-12 * max(1.0, abs(new)):
            lam2 = new
            break
        lam2 = new
    gap = lam2 - lam
    return lam, v, residual, gap, lam2


def solve_dirichlet(problem: DirichletProblem, tol: float = 1e-10,
                    normalization: str = "l1", seed: int = 0) -> EigenResult:
    """Assemble and solve for the smallest Dirichlet eigenpair as a field."""
    if normalization not in ("l1", "l2"):
        raise ValueError("normalization must be 'l1' or 'l2'")
    M = assemble_dirichlet_matrix(problem)
    lam, v, residual, gap, lam2 = smallest_eigenpair(M, tol=tol, seed=seed)
    kernel, nodes = problem.kernel, problem.nodes
    hN = kernel.h ** kernel.dim
    if normalization == "l1":
        v = v / (hN * np.sum(np.abs(v)))
    else:
        v = v / math.sqrt(hN * np.sum(v**2))

    box = max(1, int(np.max(np.abs(nodes))))
    shape = (2 * box + 1,) * kernel.dim
    values = np.zeros(shape)
    values[tuple((nodes + box).T)] = v
    field = LatticeField(kernel.h, kernel.dim, box, values, ZERO)
    simple = gap > max(10 * tol, 1e-9 * max(1.0, abs(lam)))
    return EigenResult(lam, field, residual, normalization, gap, lam2,
                       simple, v, nodes)


@dataclass
class ScalingRow:
    radius: float
    lam: float
    rescaled: float  # lam * R^(2s)
    residual: float


def scaling_study(kernel: WeightKernel, R_list, s: float,
                  tol: float = 1e-10) -> list[ScalingRow]:
    """Smallest eigenvalue on dilated balls B_R with the rescaling lam * R^(2s).

    For second-moment kernels use s=1 (lam * R^2 stays bounded); for
    power-tail kernels use their tail order (lam * R^(2s) stays bounded).
    """
    radii = [float(R) for R in R_list]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("R_list must be strictly increasing")
    rows = []
    for R in radii:
        res = solve_dirichlet(DirichletProblem.from_ball(kernel, R), tol=tol)
        rows.append(ScalingRow(R, res.lam, res.lam * R ** (2 * s),
                               res.residual))
    return rows


def rescaled_products_bounded(rows, ratio_low: float = 0.3,
                              ratio_high: float = 2.0) -> bool:
    """Consecutive rescaled-product ratios confined to [ratio_low, ratio_high]."""
    prods = [row.rescaled for row in rows]
    return all(ratio_low <= b / a <= ratio_high
               for a, b in zip(prods, prods[1:]))


@dataclass
class ShapeReport:
    positive_interior: bool
    max_at_center: bool
    radially_nonincreasing_on_samples: bool
    renormalized_center_value: float


def eigen_shape_checks(result: EigenResult) -> ShapeReport:
    """Structural checks of a ball-domain ground eigenfunction.

    For radially nonincreasing kernels the positive ground mode attains its
    maximum at the center; renormalized_center_value is phi(0)/max|phi|.
    """
    phi = result.eigenfunction
    nodes = result.nodes
    v = result.vector
    positive = bool(np.all(v > 0))
    r = phi.h * np.sqrt(np.sum(nodes.astype(np.float64) ** 2, axis=-1))
    vmax = float(np.max(np.abs(v)))
    center = phi.value_at(tuple([0] * phi.dim))
    max_at_center = bool(abs(center) >= vmax * (1 - 1e-12))

    order = np.argsort(r, kind="stable")
    nonincr = True
    prev_min = math.inf
    for radius in np.unique(np.round(r, 12)):
        grp = np.abs(v[np.abs(r - radius) < 1e-9])
        if grp.max() > prev_min * (1 + 1e-9):
            nonincr = False
            break
        prev_min = grp.min()
    return ShapeReport(positive, max_at_center, nonincr,
                       float(abs(center) / vmax))


def dilation_profile(kernel: WeightKernel, R_list, probe_nodes,
                     tol: float = 1e-10) -> dict:
    """Renormalized eigenfunction values phi_R/||phi_R||_inf at fixed nodes.

    As the ball dilates, the renormalized profile at any fixed node trends
    toward 1 (flat limit); returns {R: array of probe values}.
    """
    probes = np.atleast_2d(np.asarray(probe_nodes, dtype=np.int64))
    out = {}
    for R in R_list:
        res = solve_dirichlet(DirichletProblem.from_ball(kernel, R), tol=tol)
        phi = res.eigenfunction
        vmax = float(np.max(np.abs(phi.values)))
        out[float(R)] = np.array([phi.value_at(tuple(pt)) / vmax
                                  for pt in probes])
    return out
