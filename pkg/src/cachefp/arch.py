"""Per-architecture constants used by the prober, simulator, and payload
generator.

``sns_string_chars`` is the long-search string length in characters for the
string-search probe; the browser stores three bytes per character, so the
sizes below put the string payload in the same ballpark as each LLC
(2 MiB chars for the 6 MiB Intel LLC, 3 MiB for AMD, 1.5 MiB for the Exynos
phones, 2 MiB for the M1 performance-core LLC).

``nominal_resolution_ms`` is the cache-occupancy sampling period measured on
each platform; it sets the default per-trace point count.
"""

from __future__ import annotations

from dataclasses import dataclass

MIB = 1 << 20


@dataclass(frozen=True)
class ArchProfile:
    name: str
    llc_bytes: int
    sns_string_chars: int
    nominal_resolution_ms: float
    line_bytes: int = 64

    def __post_init__(self):
        if self.line_bytes <= 0 or self.llc_bytes <= 0 or self.llc_bytes % self.line_bytes:
            raise ValueError("llc_bytes must be a positive multiple of line_bytes")
        if self.sns_string_chars <= 0:
            raise ValueError("sns_string_chars must be > 0")
        if self.nominal_resolution_ms <= 0:
            raise ValueError("nominal_resolution_ms must be > 0")

    @property
    def lines(self) -> int:
        return self.llc_bytes // self.line_bytes

    def default_n_points(self, duration_ms: int) -> int:
        return max(2, round(duration_ms / self.nominal_resolution_ms))


PROFILES = {
    p.name: p
    for p in (
        ArchProfile("intel-i5-3470", llc_bytes=6 * MIB, sns_string_chars=2 * MIB,
                    nominal_resolution_ms=2.9),
        # one 16 MiB CCX slice of the 4x16 MiB split LLC; a single contiguous
        # buffer cannot contend more than one slice
        ArchProfile("amd-ryzen9-3900x", llc_bytes=16 * MIB, sns_string_chars=3 * MIB,
                    nominal_resolution_ms=6.0),
        ArchProfile("apple-m1", llc_bytes=12 * MIB, sns_string_chars=2 * MIB,
                    nominal_resolution_ms=6.3),
        ArchProfile("samsung-exynos-2100", llc_bytes=8 * MIB, sns_string_chars=(3 * MIB) // 2,
                    nominal_resolution_ms=4.0),
        # small profile for desk-scale tests and constrained CI hosts
        ArchProfile("ci-small", llc_bytes=2 * MIB, sns_string_chars=64 * 1024,
                    nominal_resolution_ms=3.0),
    )
}


def get_profile(name: str) -> ArchProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown arch profile {name!r}; known: {sorted(PROFILES)}") from None
