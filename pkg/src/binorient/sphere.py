"""Rigid-sphere scattering model used for synthetic head responses and for
near-field distance corrections.

Responses are surface pressures normalized by the free-field pressure at the
sphere center, expressed in the DFT sign convention (delay = negative phase
slope), i.e. the conjugate of the physics e^{-iwt} solution.

``mu`` is the dimensionless frequency k*a (a = sphere radius), ``rho`` the
source distance over a, and the incidence angle is measured at the center
between the source ray and the surface point (0 = point facing the source).
"""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError

MAX_ORDER = 150


def required_order(mu_max: float) -> int:
    """Series truncation: converges geometrically once m exceeds k*a."""
    return min(MAX_ORDER, max(30, int(np.ceil(mu_max)) + 30))


def legendre_table(order: int, x: np.ndarray) -> np.ndarray:
    """P_0..P_order at x, shape (order+1,) + x.shape, by upward recurrence."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty((order + 1,) + x.shape)
    out[0] = 1.0
    if order >= 1:
        out[1] = x
    for m in range(1, order):
        out[m + 1] = ((2 * m + 1) * x * out[m] - m * out[m - 1]) / (m + 1)
    return out


def spherical_hankel1_all(order: int, z: np.ndarray) -> np.ndarray:
    """h1_m(z) for m = 0..order over a positive vector z, shape (order+1, F).

    Upward recurrence; h1 is dominated by the (dominant-solution) y part, so
    the recurrence is stable.  High orders at small arguments overflow to inf,
    which callers treat as a negligible series tail.
    """
    z = np.asarray(z, dtype=np.float64)
    h = np.empty((order + 1,) + z.shape, dtype=np.complex128)
    expz = np.exp(1j * z)
    h[0] = -1j * expz / z
    if order >= 1:
        h[1] = -expz * (z + 1j) / (z * z)
    with np.errstate(invalid="ignore", over="ignore"):
        for m in range(1, order):
            h[m + 1] = (2 * m + 1) / z * h[m] - h[m - 1]
    return h


def _hankel1_with_derivative(order: int, z: np.ndarray):
    """h1_m(z) and h1'_m(z) for m = 0..order (f'_m = f_{m-1} - (m+1)/z f_m)."""
    h = spherical_hankel1_all(order, z)
    dh = np.empty_like(h)
    z = np.asarray(z, dtype=np.float64)
    expz = np.exp(1j * z)
    # h1_0' = -h1_1
    dh[0] = expz * (z + 1j) / (z * z)
    if order >= 1:
        m = np.arange(1, order + 1, dtype=np.float64)[:, None]
        with np.errstate(invalid="ignore", over="ignore"):
            dh[1:] = h[:-1] - (m + 1.0) / z * h[1:]
    return h, dh


def _sanitize(terms: np.ndarray) -> np.ndarray:
    bad = ~np.isfinite(terms)
    if np.any(bad):
        terms = np.where(bad, 0.0, terms)
    return terms


def _ps_static(rho: float, cos_inc: np.ndarray, order: int) -> np.ndarray:
    # k -> 0 limit: sum (2m+1)/(m+1) P_m(cos) rho^-m
    m = np.arange(order + 1)
    coef = (2.0 * m + 1.0) / (m + 1.0) * rho ** (-m.astype(np.float64))
    leg = legendre_table(order, np.asarray(cos_inc))
    return np.tensordot(coef, leg, axes=(0, 0)) + 0.0j


def point_source_response(mu: np.ndarray, rho: float, cos_inc,
                          order: int | None = None) -> np.ndarray:
    """Surface pressure for a point source at distance rho*a, over free field
    at the center.  Returns shape ``mu.shape`` or ``(n_inc,) + mu.shape``."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    if rho <= 1.0:
        raise InvalidInputError("source must lie outside the sphere (rho > 1)")
    cos_inc = np.atleast_1d(np.asarray(cos_inc, dtype=np.float64))
    if order is None:
        order = required_order(float(mu.max()))
    m = np.arange(order + 1)
    leg = legendre_table(order, cos_inc)              # (M+1, A)
    weights = (2.0 * m + 1.0)[:, None] * leg          # (M+1, A)

    out = np.zeros((cos_inc.shape[0], mu.shape[0]), dtype=np.complex128)
    zero = mu == 0.0
    if np.any(zero):
        out[:, zero] = _ps_static(rho, cos_inc, order)[:, None]
    nz = ~zero
    if np.any(nz):
        mu_nz = mu[nz]
        h_far = spherical_hankel1_all(order, mu_nz * rho)
        _, dh = _hankel1_with_derivative(order, mu_nz)
        with np.errstate(invalid="ignore", over="ignore"):
            ratio = _sanitize(h_far / dh)
        series = weights.T @ ratio                    # (A, F)
        pref = -(rho / mu_nz) * np.exp(-1j * mu_nz * rho)
        out[:, nz] = pref[None, :] * series
    out = np.conj(out)  # physics e^{-iwt} -> DFT convention
    return out[0] if out.shape[0] == 1 else out


def plane_wave_response(mu: np.ndarray, cos_inc, order: int | None = None) -> np.ndarray:
    """Surface pressure for an incident plane wave, over free field at center."""
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    cos_inc = np.atleast_1d(np.asarray(cos_inc, dtype=np.float64))
    if order is None:
        order = required_order(float(mu.max()))
    m = np.arange(order + 1)
    leg = legendre_table(order, cos_inc)
    weights = ((-1j) ** m)[:, None] * (2.0 * m + 1.0)[:, None] * leg

    out = np.zeros((cos_inc.shape[0], mu.shape[0]), dtype=np.complex128)
    zero = mu == 0.0
    if np.any(zero):
        out[:, zero] = 1.0
    nz = ~zero
    if np.any(nz):
        mu_nz = mu[nz]
        _, dh = _hankel1_with_derivative(order, mu_nz)
        with np.errstate(invalid="ignore", over="ignore"):
            inv_dh = _sanitize(1.0 / dh)
        series = weights.T @ inv_dh
        out[:, nz] = (1j / mu_nz ** 2)[None, :] * series
    out = np.conj(out)
    return out[0] if out.shape[0] == 1 else out


def distance_variation_factor(mu: np.ndarray, rho: float, cos_inc,
                              rho_ref: float = np.inf,
                              order: int | None = None) -> np.ndarray:
    """Ratio of point-source to plane-wave sphere response, renormalized so
    the factor is exactly 1 when the source sits at the reference distance.

    ``rho_ref=inf`` treats the stored response as a far-field measurement.
    """
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    if order is None:
        order = required_order(float(mu.max()))
    num = (plane_wave_response(mu, cos_inc, order) if np.isinf(rho)
           else point_source_response(mu, rho, cos_inc, order))
    if np.isinf(rho_ref):
        den = plane_wave_response(mu, cos_inc, order)
    else:
        den = point_source_response(mu, rho_ref, cos_inc, order)
    return num / den
