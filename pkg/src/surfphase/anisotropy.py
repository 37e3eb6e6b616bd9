"""Anisotropic surface energy densities of square-root form.

A density is a finite sum

    gamma(z, p) = sum_l sqrt(p . G_l(z) p)

with symmetric positive definite form matrices ``G_l`` that may vary over
the surface.  All evaluations broadcast over leading batch axes of ``z``
and ``p``.  Three families cover the modelled physics:

* constant form matrices (spatially homogeneous ambient anisotropies),
* form matrices rotated into the local tangent frame of the unit sphere,
  which transports a fixed planar anisotropy along the sphere,
* a scalar positive weight times the isotropic density.

Besides ``gamma`` the module provides the quadratic density
``a = gamma^2 / 2``, its gradient, and the linearised form matrix
``b_matrix`` used to freeze the nonlinearity in the time stepping.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, PoleSingularityError

DEFAULT_POLE_EPS = 1e-8


def q_rotation(z, pole_eps: float = DEFAULT_POLE_EPS) -> np.ndarray:
    """Rotation matrix taking the unit vector ``z`` to ``e3``.

    Rotates the plane spanned by ``z`` and ``e3`` around ``z x e3`` and
    acts as the identity on the orthogonal complement, so tangent frames
    move without twisting.  Undefined at the antipode: values with
    ``1 + z3 <= pole_eps`` raise.  Batched ``z`` of shape (..., 3) yields
    (..., 3, 3).
    """
    z = np.asarray(z, dtype=np.float64)
    z1, z2, z3 = z[..., 0], z[..., 1], z[..., 2]
    denom = 1.0 + z3
    if np.any(denom <= pole_eps):
        raise PoleSingularityError(
            "rotation frame undefined near the south pole")
    Q = np.empty(z.shape[:-1] + (3, 3), dtype=np.float64)
    Q[..., 0, 0] = z3 + z2 * z2 / denom
    Q[..., 0, 1] = -z1 * z2 / denom
    Q[..., 0, 2] = -z1
    Q[..., 1, 0] = Q[..., 0, 1]
    Q[..., 1, 1] = z3 + z1 * z1 / denom
    Q[..., 1, 2] = -z2
    Q[..., 2, 0] = z1
    Q[..., 2, 1] = z2
    Q[..., 2, 2] = z3
    return Q


def _check_spd(G: np.ndarray, dim: int, what: str):
    G = np.asarray(G, dtype=np.float64)
    if G.shape != (dim, dim):
        raise ConfigError(f"{what} must be a {dim}x{dim} matrix")
    if not np.allclose(G, G.T, atol=1e-12):
        raise ConfigError(f"{what} must be symmetric")
    if np.linalg.eigvalsh(G).min() <= 0.0:
        raise ConfigError(f"{what} must be positive definite")
    return 0.5 * (G + G.T)


class ConstantForm:
    """Spatially constant form matrix."""

    kind = "constant"

    def __init__(self, G):
        self.G = _check_spd(G, 3, "form matrix")

    def matrix_at(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return np.broadcast_to(self.G, z.shape[:-1] + (3, 3))

    def spec(self) -> dict:
        return {"kind": self.kind, "matrix": self.G.tolist()}


class RotatedPlanarForm:
    """Planar form matrix transported along the unit sphere.

    The 2x2 matrix acts in the tangent frame obtained by rotating the
    base point to the north pole: G(z) = Q(z)^T diag(Ghat, 1) Q(z).
    """

    kind = "rotated_planar"

    def __init__(self, Ghat, pole_eps: float = DEFAULT_POLE_EPS):
        self.Ghat = _check_spd(Ghat, 2, "planar form matrix")
        self.pole_eps = float(pole_eps)
        self._embedded = np.eye(3)
        self._embedded[:2, :2] = self.Ghat

    def matrix_at(self, z: np.ndarray) -> np.ndarray:
        Q = q_rotation(z, self.pole_eps)
        return np.einsum("...ki,kl,...lj->...ij", Q, self._embedded, Q)

    def spec(self) -> dict:
        return {"kind": self.kind, "matrix": self.Ghat.tolist(),
                "pole_eps": self.pole_eps}


class ScalarWeightedIsotropic:
    """Isotropic density scaled by a positive spatial weight.

    The only modelled weight rule is ``offset + |z|``.  The weight is kept
    in scalar form so gamma can be evaluated as w(z) |p| directly instead
    of round-tripping through the (diagonal) form matrix.
    """

    kind = "offset_norm"

    def __init__(self, offset: float):
        if offset <= 0:
            raise ConfigError("weight offset must be positive")
        self.offset = float(offset)

    def weight(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return self.offset + np.linalg.norm(z, axis=-1)

    def matrix_at(self, z: np.ndarray) -> np.ndarray:
        w2 = self.weight(z) ** 2
        return w2[..., None, None] * np.eye(3)

    def spec(self) -> dict:
        return {"kind": self.kind, "offset": self.offset}


_TERM_KINDS = {cls.kind: cls for cls in
               (ConstantForm, RotatedPlanarForm, ScalarWeightedIsotropic)}


class AnisotropyDensity:
    """Sum of square-root forms, the energy density gamma(z, p)."""

    def __init__(self, terms, name: str | None = None):
        terms = tuple(terms)
        if not terms:
            raise ConfigError("density needs at least one term")
        self.terms = terms
        self.name = name

    @property
    def n_terms(self) -> int:
        return len(self.terms)

    # -- evaluations ---------------------------------------------------------

    def matrices(self, z) -> np.ndarray:
        """Form matrices at ``z``: shape (..., L, 3, 3)."""
        z = np.asarray(z, dtype=np.float64)
        return np.stack([t.matrix_at(z) for t in self.terms], axis=-3)

    def gamma_terms(self, z, p) -> np.ndarray:
        """Per-term contributions sqrt(p . G_l p), shape (..., L)."""
        z = np.asarray(z, dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        cols = []
        for t in self.terms:
            if isinstance(t, ScalarWeightedIsotropic):
                cols.append(t.weight(z) * np.linalg.norm(p, axis=-1))
            else:
                G = t.matrix_at(z)
                quad = np.einsum("...i,...ij,...j->...", p, G, p)
                cols.append(np.sqrt(np.maximum(quad, 0.0)))
        return np.stack(np.broadcast_arrays(*cols), axis=-1) if len(cols) > 1 \
            else cols[0][..., None]

    def gamma(self, z, p) -> np.ndarray:
        return self.gamma_terms(z, p).sum(axis=-1)

    def a(self, z, p) -> np.ndarray:
        g = self.gamma(z, p)
        return 0.5 * g * g

    def a_grad(self, z, p) -> np.ndarray:
        """Gradient of a(z, .) at p; requires p != 0."""
        p = np.asarray(p, dtype=np.float64)
        norms = np.linalg.norm(p, axis=-1)
        if np.any(norms == 0.0):
            raise ConfigError("gradient of the quadratic density needs p != 0")
        G = self.matrices(z)                                # (..., L, 3, 3)
        Gp = np.einsum("...lij,...j->...li", G, p)
        gl = self.gamma_terms(z, p)                         # (..., L)
        grad = (Gp / gl[..., None]).sum(axis=-2)
        return self.gamma(z, p)[..., None] * grad

    def b(self, z, q) -> np.ndarray:
        """Linearised form matrix B(z, q), shape (..., 3, 3).

        For q != 0 this is gamma(z, q) * sum_l G_l / gamma_l(z, q); the
        value at q = 0 is the one-sided substitute L * sum_l G_l which
        keeps the monotonicity bound valid.
        """
        q = np.asarray(q, dtype=np.float64)
        G = self.matrices(z)
        zero = np.linalg.norm(q, axis=-1) == 0.0
        gl = self.gamma_terms(z, q)
        safe = np.where(zero[..., None], 1.0, gl)
        weights = np.where(zero[..., None], 1.0,
                           gl.sum(axis=-1)[..., None] / safe)
        B = np.einsum("...l,...lij->...ij", weights, G)
        if np.any(zero):
            fallback = self.n_terms * G.sum(axis=-3)
            B = np.where(zero[..., None, None], fallback, B)
        return B

    def spec(self) -> dict:
        out = {"terms": [t.spec() for t in self.terms]}
        if self.name:
            out["name"] = self.name
        return out


# -- spec-level entry points -------------------------------------------------


def gamma_eval(density: AnisotropyDensity, z, p):
    return density.gamma(z, p)


def a_eval(density: AnisotropyDensity, z, p):
    return density.a(z, p)


def a_grad_eval(density: AnisotropyDensity, z, p):
    return density.a_grad(z, p)


def b_matrix(density: AnisotropyDensity, z, q):
    return density.b(z, q)


# -- named constructions -----------------------------------------------------


def _rot_xy(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, s, 0.0], [-s, c, 0.0], [0.0, 0.0, 1.0]])


def _rot_xz(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _needle_form(R: np.ndarray, delta: float, weight: float = 1.0):
    # one term of sqrt(delta^2 |Rp|^2 + (1 - delta^2) (Rp)_1^2), scaled
    dim = R.shape[0]
    D = (delta ** 2) * np.eye(dim)
    D[0, 0] = 1.0
    return (weight ** 2) * (R.T @ D @ R)


HEX_WEIGHTS = {"a": 1.0 / np.sqrt(3.0), "b": 1.0, "c": 1.0 / (2.0 * np.sqrt(3.0))}


def make_isotropic() -> AnisotropyDensity:
    return AnisotropyDensity([ConstantForm(np.eye(3))], name="isotropic")


def make_inhomogeneous_isotropic(offset: float = 0.01) -> AnisotropyDensity:
    """gamma(z, p) = (offset + |z|) |p|."""
    return AnisotropyDensity([ScalarWeightedIsotropic(offset)],
                             name="inhomogeneous_isotropic")


def make_hexagonal_3d(variant: str, delta: float = 0.01) -> AnisotropyDensity:
    """Ambient near-hexagonal density built from four needle terms.

    One needle is aligned with the z axis, three sit in the x-y plane at
    60 degree spacing and carry the variant weight: 1/sqrt(3) ('a'),
    1 ('b') or 1/(2 sqrt(3)) ('c').
    """
    if variant not in HEX_WEIGHTS:
        raise ConfigError(f"unknown hexagonal variant {variant!r}")
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    w = HEX_WEIGHTS[variant]
    terms = [ConstantForm(_needle_form(_rot_xz(np.pi / 2.0), delta))]
    for ell in (1, 2, 3):
        terms.append(ConstantForm(_needle_form(_rot_xy(ell * np.pi / 3.0),
                                               delta, weight=w)))
    return AnisotropyDensity(terms, name=f"hexagonal3d_{variant}")


def make_hexagonal_2d_on_sphere(delta: float = 0.01,
                                pole_eps: float = DEFAULT_POLE_EPS
                                ) -> AnisotropyDensity:
    """Six-fold planar density transported along the unit sphere.

    Three planar needle terms at 60 degree spacing are rotated into the
    tangent frame of each base point, so the density looks the same in
    every tangent plane (away from the south pole).
    """
    if not 0.0 < delta < 1.0:
        raise ConfigError("delta must lie in (0, 1)")
    terms = []
    for ell in (1, 2, 3):
        theta = ell * np.pi / 3.0
        c, s = np.cos(theta), np.sin(theta)
        R = np.array([[c, s], [-s, c]])
        D = (delta ** 2) * np.eye(2)
        D[0, 0] = 1.0
        terms.append(RotatedPlanarForm(R.T @ D @ R, pole_eps))
    return AnisotropyDensity(terms, name="hexagonal2d_sphere")


def density_from_spec(spec) -> AnisotropyDensity:
    """Build a density from its serialised description.

    Accepts either a named shorthand ``{"kind": ..., ...params}`` or the
    explicit term list produced by :meth:`AnisotropyDensity.spec`.
    """
    if isinstance(spec, AnisotropyDensity):
        return spec
    if not isinstance(spec, dict):
        raise ConfigError("density spec must be a mapping")
    kind = spec.get("kind")
    if kind == "isotropic":
        return make_isotropic()
    if kind == "inhomogeneous_isotropic":
        return make_inhomogeneous_isotropic(spec.get("offset", 0.01))
    if kind == "hexagonal3d":
        return make_hexagonal_3d(spec["variant"], spec.get("delta", 0.01))
    if kind == "hexagonal2d_sphere":
        return make_hexagonal_2d_on_sphere(spec.get("delta", 0.01),
                                           spec.get("pole_eps",
                                                    DEFAULT_POLE_EPS))
    if kind is None and "terms" in spec:
        terms = []
        for tspec in spec["terms"]:
            cls = _TERM_KINDS.get(tspec.get("kind"))
            if cls is None:
                raise ConfigError(f"unknown term kind {tspec.get('kind')!r}")
            if cls is ConstantForm:
                terms.append(ConstantForm(np.asarray(tspec["matrix"])))
            elif cls is RotatedPlanarForm:
                terms.append(RotatedPlanarForm(
                    np.asarray(tspec["matrix"]),
                    tspec.get("pole_eps", DEFAULT_POLE_EPS)))
            else:
                terms.append(ScalarWeightedIsotropic(tspec["offset"]))
        return AnisotropyDensity(terms, name=spec.get("name"))
    raise ConfigError(f"unknown density spec {spec!r}")


# -- Wulff shape sampling ----------------------------------------------------


def _fibonacci_directions(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * k / n)
    theta = np.pi * (1.0 + np.sqrt(5.0)) * k
    return np.column_stack([np.cos(theta) * np.sin(phi),
                            np.sin(theta) * np.sin(phi),
                            np.cos(phi)])


def wulff_sample(density: AnisotropyDensity, z, n_dirs: int = 256,
                 tangent_frame=None) -> np.ndarray:
    """Boundary samples of the Wulff set of gamma(z, .).

    The Wulff set is the intersection of the supporting half-spaces
    {x : x . nu <= gamma(z, nu)}.  Because gamma is convex, the boundary
    point supported by direction nu is the gradient of the one-homogeneous
    extension, so the samples are grad_p gamma(z, nu) over ``n_dirs``
    directions.

    Without a frame the directions cover the unit sphere and the samples
    are returned as (n_dirs, 3) points.  With ``tangent_frame`` (two
    orthonormal rows spanning a plane) the planar convex dual is computed
    in frame coordinates and returned as (n_dirs, 2) points tracing the
    Wulff curve.
    """
    if n_dirs < 16:
        raise ConfigError("n_dirs must be at least 16")
    z = np.asarray(z, dtype=np.float64)
    if tangent_frame is None:
        nu = _fibonacci_directions(n_dirs)
        g = density.gamma(z, nu)
        grad = density.a_grad(z, nu) / g[..., None]
        return grad
    frame = np.asarray(tangent_frame, dtype=np.float64)
    if frame.shape != (2, 3):
        raise ConfigError("tangent_frame must have two rows of length 3")
    if not np.allclose(frame @ frame.T, np.eye(2), atol=1e-10):
        raise ConfigError("tangent_frame rows must be orthonormal")
    theta = 2.0 * np.pi * np.arange(n_dirs) / n_dirs
    c, s = np.cos(theta), np.sin(theta)
    nu = c[:, None] * frame[0] + s[:, None] * frame[1]
    dnu = -s[:, None] * frame[0] + c[:, None] * frame[1]
    g = density.gamma(z, nu)
    grad3 = density.a_grad(z, nu) / g[..., None]
    gprime = np.einsum("ni,ni->n", grad3, dnu)
    return np.column_stack([g * c - gprime * s, g * s + gprime * c])
