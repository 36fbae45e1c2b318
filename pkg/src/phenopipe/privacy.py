"""Contact hashing and GPS displacement."""

from __future__ import annotations

import hashlib
import hmac

import numpy as np

M_PER_DEG = 111_320.0
MAX_ABS_LAT = 85.0


class PoleProximity(ValueError):
    pass


def hash_contact(salt: bytes, counterparty: str) -> str:
    """Salted HMAC-SHA256 of a phone number/identity, truncated to 16 hex chars (64 bits)."""
    return hmac.new(salt, counterparty.encode("utf-8"), hashlib.sha256).hexdigest()[:16]


def hash_contacts(salt: bytes, values) -> list[str]:
    return [hash_contact(salt, str(v)) for v in values]


def _check_lat(lat):
    lat = np.asarray(lat, dtype=float)
    if np.any(np.abs(lat) > MAX_ABS_LAT):
        raise PoleProximity(f"|lat| > {MAX_ABS_LAT}")
    return lat


def project(lat, lon, ref_lat: float):
    """Local equirectangular projection to metres (x east, y north)."""
    k = np.cos(np.radians(ref_lat))
    return np.asarray(lon, dtype=float) * M_PER_DEG * k, np.asarray(lat, dtype=float) * M_PER_DEG


def unproject(x, y, ref_lat: float):
    k = np.cos(np.radians(ref_lat))
    return np.asarray(y, dtype=float) / M_PER_DEG, np.asarray(x, dtype=float) / (M_PER_DEG * k)


def obfuscate_gps(offset, lat, lon, ref_lat: float | None = None):
    """Shift points by a fixed planar offset ``(dx_m, dy_m)``.

    The east shift is converted with the cosine of ``ref_lat`` (the point's own
    latitude when omitted). With a study-wide ``ref_lat`` every pairwise planar
    distance is preserved exactly.
    """
    lat = _check_lat(lat)
    lon = np.asarray(lon, dtype=float)
    dx, dy = offset
    ref = lat if ref_lat is None else ref_lat
    new_lat = lat + dy / M_PER_DEG
    new_lon = lon + dx / (M_PER_DEG * np.cos(np.radians(ref)))
    if np.ndim(new_lat) == 0:
        return float(new_lat), float(new_lon)
    return new_lat, new_lon


def haversine_m(lat1, lon1, lat2, lon2, radius: float = 6_371_008.8):
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dl = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * radius * np.arcsin(np.sqrt(a))
