"""Iterative solvers for the coupled nodal systems of one time step.

Mass lumping reduces the coupling between the phase and the chemical
potential to a 2x2 block per vertex, so both the variational inequality
(obstacle potential) and the cubic system (smooth potential) are first
attacked by a projected block Gauss-Seidel sweep over vertices in
ascending index order, with optional over-relaxation.  The sweeps run as
compiled kernels and converge quickly whenever the step is diagonally
dominated, which covers the production parameter regimes.

The coupled step is a saddle point problem, so for very small time steps
on coarse meshes the stationary sweep can stall.  When the driver
detects that, it switches to a primal-dual active set iteration (Newton
linearisation for the smooth potential) whose inner symmetric indefinite
systems are solved by MINRES.  Small systems get a diagonal
preconditioner; large ones a block diagonal algebraic multigrid
preconditioner (phase block and a sparse Schur approximation of the
potential block) whose hierarchies are reused across time steps through
a ``SolverScratch``.  The switch is transparent: both phases stop
against the same residuals, the potential equation in the lumped dual
norm and the phase system by the infinity norm of the projected
(natural map) nodewise update.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numba import njit

from .errors import ConfigError, SolverError

_STALL_WINDOW = 40
_STALL_FACTOR = 0.9

# Gauss-Seidel contracts like 1 - O(h^2); past this unknown count the
# sweep phase cannot reach practical tolerances and is skipped.
_LARGE_N = 20_000

# multigrid pays off once setup is amortised over enough work per solve
_AMG_MIN_UNKNOWNS = 8_000
_AMG_REFRESH_AGE = 20
_AMG_SMOOTHER = ("gauss_seidel", {"sweep": "symmetric"})


class SolverScratch:
    """Cross-step cache for the saddle preconditioner hierarchies.

    The hierarchies stay valid while the mesh (and hence the unknown
    count) is unchanged; they are refreshed on a fixed age so that the
    lagged anisotropy weights cannot drift arbitrarily far from the
    operators the hierarchies were built for.  Staleness only affects
    iteration counts, never the solution: MINRES always iterates on the
    current matrices.
    """

    def __init__(self):
        self.n = -1
        self.age = 10 ** 9
        self.ml_phase = None
        self.ml_z = None


@dataclass
class SolverConfig:
    max_outer_iters: int = 2000
    residual_tol: float = 1e-9
    relaxation_omega: float = 1.4
    linear_tol: float = 1e-11
    linear_max_iters: int = 20000

    def __post_init__(self):
        if self.residual_tol <= 0 or self.linear_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if not 0.0 < self.relaxation_omega < 2.0:
            raise ConfigError("relaxation omega must lie in (0, 2)")
        if self.max_outer_iters < 1 or self.linear_max_iters < 1:
            raise ConfigError("iteration caps must be positive")


@dataclass
class CoupledSystem:
    """Nodal data of one implicit step, in the tau-scaled form.

    Potential row j (skipped on Dirichlet nodes, where w stays fixed):

        theta_m[j] w_j + bcoef[j] phi_j + tau (A_K w)_j = b_w[j]

    Phase row j (complementarity on [-1, 1] for the obstacle variant,
    plus cubic[j] phi_j^3 on the left for the smooth variant):

        rate[j] phi_j + eps (A_B phi)_j - ccoef[j] w_j = b_phi[j]

    The coupling coefficients are proportional: ccoef = kappa_ratio *
    bcoef with a global constant, which makes the system symmetrisable.
    """

    stiff_w: sp.csr_matrix       # A_K
    stiff_phi: sp.csr_matrix     # A_B
    tau: float
    eps: float
    theta_m: np.ndarray          # theta * m_j
    bcoef: np.ndarray            # lambda * varrho_j * m_j
    ccoef: np.ndarray            # c_psi * (a/alpha) * varrho_j * m_j
    rate: np.ndarray             # eps * (rho/alpha) * m^mu_j / tau
    cubic: np.ndarray            # eps^{-1} m_j (smooth) or zeros (obstacle)
    b_w: np.ndarray
    b_phi: np.ndarray
    lumped_m: np.ndarray
    dirichlet: np.ndarray        # bool mask of fixed potential nodes

    def __post_init__(self):
        n = len(self.lumped_m)
        for name in ("theta_m", "bcoef", "ccoef", "rate", "cubic",
                     "b_w", "b_phi"):
            if getattr(self, name).shape != (n,):
                raise ConfigError(f"{name} has wrong length")
        if self.lumped_m.min() <= 0.0:
            raise ConfigError("lumped weights must be positive")

    @property
    def singular(self) -> bool:
        # potential only determined up to constants when nothing pins it
        return float(self.theta_m.max(initial=0.0)) == 0.0 and \
            not bool(self.dirichlet.any())

    def kappa_ratio(self) -> float:
        """Constant ratio ccoef / bcoef of the two coupling diagonals."""
        mask = self.bcoef != 0.0
        if not mask.any():
            return 1.0
        ratios = self.ccoef[mask] / self.bcoef[mask]
        if np.abs(ratios - ratios[0]).max() > 1e-12 * abs(ratios[0]):
            raise ConfigError("coupling coefficients are not proportional")
        return float(ratios[0])


@njit(cache=True)
def _cubic_root(lin, cub, rhs):
    """Unique real root of lin*x + cub*x^3 = rhs with lin, cub > 0."""
    p = lin / cub
    q = -rhs / cub
    disc = np.sqrt(0.25 * q * q + p * p * p / 27.0)
    if q <= 0.0:
        u = np.cbrt(-0.5 * q + disc)
    else:
        u = np.cbrt((p * p * p / 27.0) / (0.5 * q + disc))
    x = u - p / (3.0 * u)
    # u and p/(3u) can cancel when the linear term dominates; two Newton
    # steps on the monotone cubic restore full precision
    for _ in range(2):
        x -= (lin * x + cub * x * x * x - rhs) / (lin + 3.0 * cub * x * x)
    return x


@njit(cache=True)
def _sweep(iK, jK, vK, iB, jB, vB, phi, w, tau, eps, theta_m, bcoef, ccoef,
           rate, cubic, b_w, b_phi, dirichlet, omega, obstacle):
    """One projected block Gauss-Seidel pass; returns True if any node
    ended strictly inside (-1, 1) (only meaningful for the obstacle)."""
    n = phi.shape[0]
    any_inside = False
    for j in range(n):
        # potential row: diagonal and off-diagonal split of tau*A_K
        accw = 0.0
        diagK = 0.0
        for t in range(iK[j], iK[j + 1]):
            k = jK[t]
            if k == j:
                diagK = vK[t]
            else:
                accw += vK[t] * w[k]
        e = theta_m[j] + tau * diagK
        rw = b_w[j] - tau * accw

        # phase row: diagonal and off-diagonal split of eps*A_B
        accp = 0.0
        diagB = 0.0
        for t in range(iB[j], iB[j + 1]):
            k = jB[t]
            if k == j:
                diagB = vB[t]
            else:
                accp += vB[t] * phi[k]
        d = rate[j] + eps * diagB
        rp = b_phi[j] - eps * accp

        if dirichlet[j]:
            # w_j is data; only the phase unknown remains
            lin = d
            rhs = rp + ccoef[j] * w[j]
        else:
            # eliminate w_j = (rw - bcoef*phi_j) / e
            lin = d + ccoef[j] * bcoef[j] / e
            rhs = rp + ccoef[j] * rw / e

        if obstacle:
            target = rhs / lin
            if target > 1.0:
                target = 1.0
            elif target < -1.0:
                target = -1.0
            pj = phi[j] + omega * (target - phi[j])
            if pj > 1.0:
                pj = 1.0
            elif pj < -1.0:
                pj = -1.0
            if -1.0 < pj < 1.0:
                any_inside = True
        else:
            target = _cubic_root(lin, cubic[j], rhs)
            pj = phi[j] + omega * (target - phi[j])
        phi[j] = pj
        if not dirichlet[j]:
            w[j] = w[j] + omega * ((rw - bcoef[j] * pj) / e - w[j])
    return any_inside


@njit(cache=True)
def _residuals(iK, jK, vK, iB, jB, vB, phi, w, tau, eps, theta_m, bcoef,
               ccoef, rate, cubic, b_w, b_phi, lumped_m, dirichlet, obstacle):
    """(lumped dual norm of the potential rows, natural-map phase norm)."""
    n = phi.shape[0]
    dual_sq = 0.0
    phi_res = 0.0
    for j in range(n):
        accp = 0.0
        diagB = 0.0
        for t in range(iB[j], iB[j + 1]):
            k = jB[t]
            if k == j:
                diagB = vB[t]
            accp += vB[t] * phi[k]
        g = rate[j] * phi[j] + eps * accp + cubic[j] * phi[j] ** 3 \
            - ccoef[j] * w[j] - b_phi[j]

        accw = 0.0
        diagK = 0.0
        for t in range(iK[j], iK[j + 1]):
            k = jK[t]
            if k == j:
                diagK = vK[t]
            accw += vK[t] * w[k]
        e = theta_m[j] + tau * diagK
        if not dirichlet[j]:
            r = theta_m[j] * w[j] + bcoef[j] * phi[j] + tau * accw - b_w[j]
            dual_sq += r * r / lumped_m[j]
            scale = rate[j] + eps * diagB + ccoef[j] * bcoef[j] / e
        else:
            scale = rate[j] + eps * diagB
        scale += 3.0 * cubic[j] * phi[j] * phi[j]

        if obstacle:
            # distance phi_j would still move under a projected step
            step = phi[j] - g / scale
            if step > 1.0:
                step = 1.0
            elif step < -1.0:
                step = -1.0
            r_phi = abs(phi[j] - step)
        else:
            r_phi = abs(g / scale)
        if r_phi > phi_res:
            phi_res = r_phi
    return np.sqrt(dual_sq), phi_res


def _csr_parts(A: sp.csr_matrix):
    A = A.tocsr()
    return A.indptr, A.indices, A.data


class _Workspace:
    """Precomputed pieces shared by the sweep and the active-set phases."""

    def __init__(self, system: CoupledSystem, config: SolverConfig):
        self.system = system
        self.config = config
        self.iK, self.jK, self.vK = _csr_parts(system.stiff_w)
        self.iB, self.jB, self.vB = _csr_parts(system.stiff_phi)
        self.args = (system.tau, system.eps, system.theta_m, system.bcoef,
                     system.ccoef, system.rate, system.cubic, system.b_w,
                     system.b_phi)
        m = system.lumped_m
        free = ~system.dirichlet
        self.scale_w = max(
            np.sqrt(((system.b_w ** 2) / m)[free].sum()), 1e-30)
        self.total_m = m.sum()

    def sweep(self, phi, w, omega, obstacle):
        return _sweep(self.iK, self.jK, self.vK, self.iB, self.jB, self.vB,
                      phi, w, *self.args, self.system.dirichlet, omega,
                      obstacle)

    def residuals(self, phi, w, obstacle):
        rw, rp = _residuals(self.iK, self.jK, self.vK, self.iB, self.jB,
                            self.vB, phi, w, *self.args,
                            self.system.lumped_m, self.system.dirichlet,
                            obstacle)
        return rw / self.scale_w, rp

    def normalize(self, w, w_old):
        m = self.system.lumped_m
        w -= (m * (w - w_old)).sum() / self.total_m

    def phase_residual_vector(self, phi, w):
        """Rows of the phase equation (without complementarity logic)."""
        s = self.system
        return s.rate * phi + s.eps * (s.stiff_phi @ phi) \
            + s.cubic * phi ** 3 - s.ccoef * w - s.b_phi


def _amg_preconditioner(ws: _Workspace, scratch: SolverScratch, D, E, phi,
                        kappa, inact, free_w, shape):
    """Block diagonal V-cycle preconditioner for the reduced saddle.

    One hierarchy approximates the phase block itself.  The potential
    Schur complement kappa E + C D^{-1} C is approximated in the
    sandwich form Z^{-1} D Z^{-1}: writing the complement's profile in
    the mass-normalised stiffness eigenvalue l as q(l) / d(l) with the
    quadratic q(l) = kappa tau eps l^2 + kappa (theta eps + tau r) l
    + (kappa theta r + c^2), the quadratic is within a factor two of
    the square of z(l) = sqrt(kappa tau eps) l + sqrt(q(0)), realised
    by Z = sqrt(kappa tau eps) A + diag(m sqrt(q(0)/m^2)).  Unlike any
    sparse surrogate of the complement itself the sandwich keeps the
    inverse-Laplacian branch that dominates for small tau.  Both
    hierarchies are built full size and applied through zero extension,
    which keeps the preconditioner positive definite for every active
    set.
    """
    s = ws.system
    n = len(s.lumped_m)
    if scratch.n != n or scratch.age >= _AMG_REFRESH_AGE \
            or scratch.ml_phase is None:
        # the phase block is singular for the pure obstacle flow; a tiny
        # relative shift keeps the hierarchy positive definite
        shift = 1e-8 * float(np.abs(D.diagonal()).mean())
        D_spd = (D + sp.diags(np.full(n, shift))).tocsr()
        m = s.lumped_m
        r_hat = (s.rate + 3.0 * s.cubic * phi ** 2) / m
        theta_hat = s.theta_m / m
        c_hat = s.ccoef / m
        zero_order = m * np.sqrt(kappa * theta_hat * r_hat + c_hat ** 2)
        Z = (s.stiff_w.multiply(np.sqrt(kappa * s.tau * s.eps))
             + sp.diags(zero_order)).tocsr()
        z_shift = 1e-8 * float(np.abs(Z.diagonal()).mean())
        Z = Z + sp.diags(np.full(n, z_shift))
        scratch.ml_phase = pyamg.smoothed_aggregation_solver(
            D_spd, presmoother=_AMG_SMOOTHER, postsmoother=_AMG_SMOOTHER,
            max_coarse=300)
        scratch.ml_z = pyamg.smoothed_aggregation_solver(
            Z, presmoother=_AMG_SMOOTHER, postsmoother=_AMG_SMOOTHER,
            max_coarse=300)
        scratch.n = n
        scratch.age = 0

    # inflate the diagonal so the sandwiched block stays definite when
    # the phase block has the constant vector in its kernel
    D_pd = D + sp.diags(1e-8 * D.diagonal())
    v_phase = scratch.ml_phase.aspreconditioner(cycle="V")
    v_z = scratch.ml_z.aspreconditioner(cycle="V")
    idx = np.flatnonzero(inact)
    fdx = np.flatnonzero(free_w)
    nI = len(idx)
    buf = np.zeros(n)

    def apply(x):
        out = np.empty_like(x)
        buf[:] = 0.0
        buf[idx] = x[:nI]
        out[:nI] = (v_phase @ buf)[idx]
        buf[:] = 0.0
        buf[fdx] = x[nI:]
        y = v_z @ buf
        y = v_z @ (D_pd @ y)
        out[nI:] = y[fdx]
        return out

    return spla.LinearOperator(shape, matvec=apply)


def _saddle_solve(ws: _Workspace, phi, w, fixed_phi: np.ndarray, rtol,
                  scratch: SolverScratch):
    """Solve the step with the phase clamped on ``fixed_phi`` nodes.

    The remaining equality system in (phi_I, w_free) is symmetrised by
    scaling the potential rows with the constant coupling ratio and
    solved by preconditioned MINRES to the relative tolerance ``rtol``.
    Returns updated (phi, w).
    """
    s = ws.system
    kappa = s.kappa_ratio()
    free_w = ~s.dirichlet
    inact = ~fixed_phi
    nI = int(inact.sum())
    nW = int(free_w.sum())

    D = s.stiff_phi.multiply(s.eps) \
        + sp.diags(s.rate + 3.0 * s.cubic * phi ** 2)

    # residual form: solve for corrections so warm starts stay cheap
    r_phi = -(ws.phase_residual_vector(phi, w))
    r_w = -(s.theta_m * w + s.bcoef * phi + s.tau * (s.stiff_w @ w) - s.b_w)
    # Newton correction for the cubic uses the linearised diagonal in D
    rhs = np.concatenate([r_phi[inact], -kappa * r_w[free_w]])
    if nI == 0 and nW == 0:
        return phi, w

    E = sp.diags(s.theta_m) + s.stiff_w.multiply(s.tau)
    D_II = D[inact][:, inact] if nI else sp.csr_matrix((0, 0))
    E_ff = E[free_w][:, free_w] if nW else sp.csr_matrix((0, 0))
    c_diag = s.ccoef.copy()
    C_block = sp.csr_matrix((nI, nW))
    if nI and nW:
        C_full = sp.diags(c_diag).tocsr()
        C_block = C_full[inact][:, free_w]
    mat = sp.bmat([[D_II, -C_block],
                   [-C_block.T, -kappa * E_ff]], format="csr")

    if nI and nW and nI + nW >= _AMG_MIN_UNKNOWNS:
        M = _amg_preconditioner(ws, scratch, D, E, phi, kappa, inact, free_w,
                                mat.shape)
    else:
        d1 = np.maximum(D_II.diagonal(), 1e-300) if nI else np.empty(0)
        schur = kappa * E_ff.diagonal() if nW else np.empty(0)
        if nI and nW:
            cb = np.zeros(len(c_diag))
            cb[inact] = c_diag[inact] ** 2 / np.maximum(D.diagonal()[inact],
                                                        1e-300)
            schur = schur + cb[free_w]
        pre = np.concatenate([d1, np.maximum(schur, 1e-300)])
        M = spla.LinearOperator(mat.shape, matvec=lambda x: x / pre)

    sol, info = spla.minres(mat, rhs, rtol=rtol,
                            maxiter=ws.config.linear_max_iters, M=M)
    if info != 0:
        raise SolverError(f"inner MINRES failed (info={info})")
    phi = phi.copy()
    w = w.copy()
    phi[inact] += sol[:nI]
    w[free_w] += sol[nI:]
    return phi, w


def _active_set_phase(ws: _Workspace, phi, w, phi_old, w_old, obstacle,
                      sweeps_done, scratch: SolverScratch):
    """Primal-dual active set (obstacle) / Newton (smooth) fallback."""
    s = ws.system
    config = ws.config
    large = 2 * len(phi) >= _AMG_MIN_UNKNOWNS
    prev_fixed = None
    best = np.inf
    restarted = False
    res_w, res_phi = ws.residuals(phi, w, obstacle)
    res = max(res_w, res_phi)
    for outer in range(1, 61):
        if obstacle:
            g = ws.phase_residual_vector(phi, w)
            scale = s.rate + s.eps * s.stiff_phi.diagonal()
            e_diag = s.theta_m + s.tau * s.stiff_w.diagonal()
            coup = np.where(s.dirichlet, 0.0, s.ccoef * s.bcoef / e_diag)
            target = np.clip(phi - g / (scale + coup), -1.0, 1.0)
            fixed = np.abs(target) == 1.0
            # a converged iterate whose set update is a no-op satisfies
            # the complementarity conditions; the confirming solve of the
            # unchanged system would return the same point
            if prev_fixed is not None and np.array_equal(fixed, prev_fixed) \
                    and np.array_equal(phi[fixed], target[fixed]) \
                    and res_w <= config.residual_tol \
                    and res_phi <= config.residual_tol:
                return phi, w, sweeps_done + outer, res
            phi = phi.copy()
            phi[fixed] = target[fixed]
        else:
            fixed = np.zeros(len(phi), dtype=bool)
        if large and np.isfinite(res) and res <= config.residual_tol:
            # a converged iterate only sees confirming solves with a tiny
            # right hand side; they can be loose without moving it
            rtol = 1e-4
        else:
            rtol = config.linear_tol
        phi, w = _saddle_solve(ws, phi, w, fixed, rtol, scratch)
        if obstacle:
            np.clip(phi, -1.0, 1.0, out=phi)
        if s.singular and obstacle and not np.any(np.abs(phi) < 1.0):
            ws.normalize(w, w_old)
        res_w, res_phi = ws.residuals(phi, w, obstacle)
        res = max(res_w, res_phi)
        done = res_w <= config.residual_tol and res_phi <= config.residual_tol
        if done and (not obstacle or
                     (prev_fixed is not None
                      and np.array_equal(fixed, prev_fixed))):
            return phi, w, sweeps_done + outer, res
        if done and obstacle and prev_fixed is None:
            prev_fixed = fixed
            continue
        prev_fixed = fixed
        best = min(best, res)
        if not restarted and (not np.isfinite(res) or res > 10.0 * best):
            # a bad warm start can mislead the set update; try once more
            # from the previous time level
            phi = np.array(phi_old, dtype=np.float64, copy=True)
            if obstacle:
                np.clip(phi, -1.0, 1.0, out=phi)
            w = np.array(w_old, dtype=np.float64, copy=True)
            prev_fixed = None
            best = np.inf
            restarted = True
    raise SolverError("active-set iteration did not settle",
                      residual=max(res_w, res_phi),
                      iterations=sweeps_done + 60)


def _solve_coupled(system: CoupledSystem, phi_old, w_old, config, obstacle,
                   scratch: SolverScratch | None = None):
    phi = np.array(phi_old, dtype=np.float64, copy=True)
    w = np.array(w_old, dtype=np.float64, copy=True)
    if obstacle:
        np.clip(phi, -1.0, 1.0, out=phi)
    ws = _Workspace(system, config)
    normalize = system.singular
    if scratch is None:
        scratch = SolverScratch()
    scratch.age += 1

    # on large systems the stationary sweep cannot reach the tolerance
    # and its iterate would be discarded at the handoff gate below, so
    # go to the preconditioned active-set phase directly
    sweep_cap = config.max_outer_iters
    if len(phi) >= _LARGE_N:
        sweep_cap = 0

    it = 0
    res = np.inf
    best = np.inf
    best_age = 0
    omega = config.relaxation_omega
    for it in range(1, sweep_cap + 1):
        any_inside = ws.sweep(phi, w, omega, obstacle)
        if normalize and obstacle and not any_inside:
            # fully saturated phase leaves w floating; pin its mean update
            ws.normalize(w, w_old)
        res_w, res_phi = ws.residuals(phi, w, obstacle)
        res = max(res_w, res_phi)
        if res_w <= config.residual_tol and res_phi <= config.residual_tol:
            return phi, w, it, res
        if res < _STALL_FACTOR * best:
            best, best_age = res, 0
        else:
            best_age += 1
        if best_age >= _STALL_WINDOW or not np.isfinite(res):
            break
    # saddle coupling too stiff for the stationary sweep; keep the iterate
    # as a warm start only if the sweeps made real progress, otherwise the
    # active-set phase would inherit a poisoned active-set guess
    if not np.isfinite(res) or res > 1e-2:
        phi = np.array(phi_old, dtype=np.float64, copy=True)
        if obstacle:
            np.clip(phi, -1.0, 1.0, out=phi)
        w = np.array(w_old, dtype=np.float64, copy=True)
    return _active_set_phase(ws, phi, w, phi_old, w_old, obstacle, it,
                             scratch)


def solve_coupled_obstacle(system: CoupledSystem, phi_old, w_old,
                           config: SolverConfig | None = None,
                           scratch: SolverScratch | None = None):
    """Solve the variational-inequality step for the obstacle potential.

    Returns (phi, w, iterations, residual); phi obeys the bounds exactly.
    Passing the same ``scratch`` across consecutive steps reuses the
    multigrid hierarchies of the inner preconditioner.
    """
    return _solve_coupled(system, phi_old, w_old, config or SolverConfig(),
                          obstacle=True, scratch=scratch)


def solve_coupled_smooth(system: CoupledSystem, phi_old, w_old,
                         config: SolverConfig | None = None,
                         scratch: SolverScratch | None = None):
    """Solve the cubic nodal system for the smooth quartic potential."""
    if np.any(system.cubic <= 0.0):
        raise ConfigError("smooth solve needs positive cubic coefficients")
    return _solve_coupled(system, phi_old, w_old, config or SolverConfig(),
                          obstacle=False, scratch=scratch)


def conjugate_gradient(op, rhs, tol: float = 1e-12, max_iters: int = 5000,
                       preconditioner: np.ndarray | None = None):
    """Diagonally preconditioned CG for symmetric positive (semi)definite
    operators; the relative residual is measured against |rhs|."""
    rhs = np.asarray(rhs, dtype=np.float64)
    n = len(rhs)
    inv_diag = None
    if preconditioner is not None:
        preconditioner = np.asarray(preconditioner, dtype=np.float64)
        if preconditioner.shape != (n,) or np.any(preconditioner <= 0.0):
            raise ConfigError("preconditioner must be a positive diagonal")
        inv_diag = 1.0 / preconditioner

    x = np.zeros(n)
    r = rhs.copy()
    rhs_norm = np.linalg.norm(rhs)
    if rhs_norm == 0.0:
        return x
    z = r * inv_diag if inv_diag is not None else r
    p = z.copy()
    rz = r @ z
    for _ in range(max_iters):
        if np.linalg.norm(r) <= tol * rhs_norm:
            return x
        Ap = op @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = r * inv_diag if inv_diag is not None else r
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    if np.linalg.norm(r) <= tol * rhs_norm:
        return x
    raise SolverError(f"conjugate gradient stalled after {max_iters} "
                      "iterations",
                      residual=float(np.linalg.norm(r) / rhs_norm),
                      iterations=max_iters)
