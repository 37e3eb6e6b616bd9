"""Lumped products and sparse operators on a surface mesh.

Everything here works with piecewise linear nodal functions.  Integrals
use vertex-lumped quadrature: each triangle contributes a third of its
area at every corner.  The two stiffness operators share the same scatter
of 3x3 element blocks into a CSR matrix; only the per-triangle form
matrix differs.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .anisotropy import AnisotropyDensity
from .errors import ConfigError
from .mesh import SurfaceMesh


def p1_gradients(mesh: SurfaceMesh, values: np.ndarray) -> np.ndarray:
    """Per-triangle surface gradient of a nodal function, shape (m, 3)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (mesh.n_vertices,):
        raise ConfigError("values must be a nodal vector")
    corner = values[mesh.triangles]
    # anchor on the first corner so flat patches give exact zeros
    corner = corner - corner[:, :1]
    return np.einsum("mik,mi->mk", mesh.shape_gradients(), corner)


def lumped_mass_weights(mesh: SurfaceMesh,
                        triangle_values: np.ndarray | None = None
                        ) -> np.ndarray:
    """Vertex weights m_j = sum over adjacent triangles of area/3.

    With ``triangle_values`` each contribution is scaled by the triangle's
    value, which turns the plain weights into the mobility-weighted ones.
    """
    thirds = mesh.triangle_areas() / 3.0
    if triangle_values is not None:
        triangle_values = np.asarray(triangle_values, dtype=np.float64)
        if triangle_values.shape != (mesh.n_triangles,):
            raise ConfigError("triangle_values must be per-triangle")
        thirds = thirds * triangle_values
    m = np.zeros(mesh.n_vertices)
    np.add.at(m, mesh.triangles, thirds[:, None])
    return m


def _corner_values(mesh: SurfaceMesh, f) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 0:
        return np.broadcast_to(f, (mesh.n_triangles, 3))
    if f.shape == (mesh.n_vertices,):
        return f[mesh.triangles]
    if f.shape == (mesh.n_triangles, 3):
        return f
    raise ConfigError("expected a nodal vector or per-triangle corner values")


def lumped_inner(mesh: SurfaceMesh, f, g) -> float:
    """Vertex-lumped product of two piecewise linear functions.

    Arguments may be nodal vectors or (n_triangles, 3) arrays of one-sided
    corner values for functions that jump across edges.  Continuous nodal
    input reduces to sum_j m_j f_j g_j.
    """
    f = np.asarray(f, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if f.shape == g.shape == (mesh.n_vertices,):
        return float(lumped_mass_weights(mesh) @ (f * g))
    fc = _corner_values(mesh, f)
    gc = _corner_values(mesh, g)
    thirds = mesh.triangle_areas() / 3.0
    return float(thirds @ (fc * gc).sum(axis=1))


def _scatter_blocks(mesh: SurfaceMesh, blocks: np.ndarray) -> sp.csr_matrix:
    tris = mesh.triangles
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    mat = sp.coo_matrix((blocks.ravel(), (rows, cols)),
                        shape=(mesh.n_vertices, mesh.n_vertices))
    return mat.tocsr()


def assemble_diffusion(mesh: SurfaceMesh, coefficient=1.0) -> sp.csr_matrix:
    """Stiffness matrix of the weighted Dirichlet form.

    ``coefficient`` is a constant or a per-triangle array; it must be
    nonnegative so the operator stays positive semidefinite.  Constants
    lie in the kernel (row sums vanish).
    """
    coeff = np.asarray(coefficient, dtype=np.float64)
    if coeff.ndim == 0:
        coeff = np.full(mesh.n_triangles, float(coeff))
    elif coeff.shape != (mesh.n_triangles,):
        raise ConfigError("coefficient must be scalar or per-triangle")
    if np.any(coeff < 0.0):
        raise ConfigError("diffusion coefficient must be nonnegative")
    grads = mesh.shape_gradients()
    blocks = np.einsum("m,mak,mbk->mab", coeff * mesh.triangle_areas(),
                       grads, grads)
    return _scatter_blocks(mesh, blocks)


def assemble_anisotropic_stiffness(mesh: SurfaceMesh,
                                   density: AnisotropyDensity,
                                   phi_old: np.ndarray) -> sp.csr_matrix:
    """Stiffness matrix with the anisotropy linearised at the old phase.

    The form matrix of the density is frozen at the previous gradient,
    triangle by triangle, with the spatial argument at the barycenter
    projected onto the underlying surface.  Yields a symmetric operator
    that is positive definite orthogonal to constants.
    """
    q = p1_gradients(mesh, phi_old)
    B = density.b(mesh.surface_barycenters(), q)
    grads = mesh.shape_gradients()
    blocks = np.einsum("m,mak,mkl,mbl->mab", mesh.triangle_areas(),
                       grads, B, grads)
    return _scatter_blocks(mesh, blocks)


def assemble_mu_weights(mesh: SurfaceMesh, density_mu,
                        phi_old: np.ndarray) -> np.ndarray:
    """Per-triangle kinetic weights evaluated at the frozen gradient.

    ``density_mu`` may be None or 1 (constant mobility), a density whose
    gamma supplies the weight, or any callable of (points, gradients).
    """
    if density_mu is None:
        return np.ones(mesh.n_triangles)
    if np.isscalar(density_mu):
        if density_mu <= 0:
            raise ConfigError("mobility must be positive")
        return np.full(mesh.n_triangles, float(density_mu))
    q = p1_gradients(mesh, phi_old)
    z = mesh.surface_barycenters()
    if isinstance(density_mu, AnisotropyDensity):
        # gamma vanishes at q = 0; flat patches get a unit probe instead
        flat = np.linalg.norm(q, axis=1) == 0.0
        w = density_mu.gamma(z, np.where(flat[:, None], [1.0, 0.0, 0.0], q))
    else:
        w = np.asarray(density_mu(z, q), dtype=np.float64)
    if w.shape != (mesh.n_triangles,) or np.any(w <= 0.0):
        raise ConfigError("mobility weights must be positive per triangle")
    return w
