"""Exact 2D DCT-II core: basis evaluation, forward/inverse transforms, and
single-component projection.

Two scaling conventions are supported:

* ``orthonormal`` applies the usual per-axis factors c(0) = sqrt(1/N),
  c(k>0) = sqrt(2/N).  The basis is then orthonormal, the inverse is the
  transpose, and Parseval's identity holds.  This is the canonical
  convention everywhere in this package.
* ``unnormalized`` is the raw cosine-product form with no scale factors.
  It is kept because frequency-attention formulations are often written
  that way.  Its companion inverse (a bare 1/H scaling) does NOT invert
  the forward transform; it exists for reference only.

All transforms are evaluated as separable matrix products in float64.
No fast O(N log N) path is needed at the plane sizes used here (<= 224).
Everything is a pure function of its arguments; concurrent use is safe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConventionMismatchError, ValidationError

ORTHONORMAL = "orthonormal"
UNNORMALIZED = "unnormalized"
CONVENTIONS = (ORTHONORMAL, UNNORMALIZED)


def _check_convention(convention: str) -> None:
    if convention not in CONVENTIONS:
        raise ValidationError(
            f"unknown convention {convention!r}; expected one of {CONVENTIONS}"
        )


def axis_basis(n: int, k: int, convention: str = ORTHONORMAL) -> np.ndarray:
    """1D cosine basis vector cos(pi*k*(i+1/2)/n) for i = 0..n-1."""
    _check_convention(convention)
    if n < 1:
        raise ValidationError(f"axis length must be >= 1, got {n}")
    if not 0 <= k < n:
        raise IndexError(f"frequency index {k} out of range for axis length {n}")
    i = np.arange(n, dtype=np.float64)
    b = np.cos(np.pi * k * (i + 0.5) / n)
    if convention == ORTHONORMAL:
        b *= np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
    return b


def basis_matrix(n: int, convention: str = ORTHONORMAL) -> np.ndarray:
    """(n, n) matrix whose row k is the 1D basis vector for frequency k."""
    return np.stack([axis_basis(n, k, convention) for k in range(n)])


def dct_basis(h: int, w: int, u: int, v: int, convention: str = ORTHONORMAL) -> np.ndarray:
    """2D basis plane B^{u,v} of shape (h, w), the outer product of the
    two axis cosines."""
    return np.outer(axis_basis(h, u, convention), axis_basis(w, v, convention))


@dataclass(frozen=True)
class DctSpectrum:
    """A 2D DCT spectrum together with the scaling convention it was
    computed under."""

    data: np.ndarray
    convention: str = ORTHONORMAL

    def __post_init__(self) -> None:
        _check_convention(self.convention)


def _as_plane(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"expected a 2D plane, got shape {x.shape}")
    if x.shape[0] < 1 or x.shape[1] < 1:
        raise ValidationError(f"plane dimensions must be >= 1, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    return x


def dct2(x: np.ndarray, convention: str = ORTHONORMAL) -> DctSpectrum:
    """Forward 2D DCT of a single (H, W) plane.

    Evaluated separably: f = M_H @ x @ M_W^T, which equals the double sum
    over all (i, j) of x[i, j] * B^{u,v}[i, j].
    """
    _check_convention(convention)
    x = _as_plane(x)
    h, w = x.shape
    f = basis_matrix(h, convention) @ x @ basis_matrix(w, convention).T
    return DctSpectrum(f, convention)


def idct2(f: DctSpectrum | np.ndarray, convention: str | None = None) -> np.ndarray:
    """Inverse 2D DCT.

    Under the orthonormal convention this exactly inverts :func:`dct2`.
    Under ``unnormalized`` the reference inverse (1/H scaling only) is
    evaluated literally; it is *not* an inverse of the unnormalized
    forward transform and exists only so both printed forms are available.

    Passing a :class:`DctSpectrum` whose tag disagrees with an explicitly
    requested convention raises :class:`ConventionMismatchError`.
    """
    if isinstance(f, DctSpectrum):
        if convention is not None and convention != f.convention:
            raise ConventionMismatchError(
                f"spectrum is tagged {f.convention!r} but {convention!r} was requested"
            )
        convention = f.convention
        data = f.data
    else:
        convention = ORTHONORMAL if convention is None else convention
        data = f
    _check_convention(convention)
    data = _as_plane(data)
    h, w = data.shape
    mh = basis_matrix(h, convention)
    mw = basis_matrix(w, convention)
    x = mh.T @ data @ mw
    if convention == UNNORMALIZED:
        x /= h
    return x


def freq_component(
    x: np.ndarray, index: tuple[int, int], convention: str = ORTHONORMAL
) -> np.ndarray:
    """Project onto a single basis plane: sum over (h, w) of
    x[..., h, w] * B^{u,v}[h, w].

    ``x`` may be a bare (H, W) plane or a stack (..., H, W); the leading
    axes are preserved.  This is the single-component view of the full
    transform: ``freq_component(x, (u, v))`` equals ``dct2(x)[u, v]`` per
    plane.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise ValidationError(f"expected at least 2 dimensions, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("input contains non-finite values")
    u, v = index
    basis = dct_basis(x.shape[-2], x.shape[-1], u, v, convention)
    return np.tensordot(x, basis, axes=([-2, -1], [0, 1]))
