"""Polarization analysis: Stokes vectors, single-qubit tomography, fidelity.

Six-setting convention (H/V/D/A/R/L analyzers):

    S0 = I_H + I_V,  s1 = (I_H - I_V)/S0,  s2 = (I_D - I_A)/S0,  s3 = (I_R - I_L)/S0

A linear analyzer (rotating half-wave plate + polarizing splitter) measures
only (s1, s2); the polar intensity scan I(theta) = S0/2 * (1 + s1 cos 2theta
+ s2 sin 2theta) is blind to s3, so the scan fit reports s3 as unresolved.
Physicality is enforced by radial projection onto the |s| <= 1 ball rather
than maximum-likelihood reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FitReport, FormatError, PhotonLabError
from .fitting import (
    InsufficientData,
    XYData,
    fit_least_squares,
)


class ZeroIntensity(PhotonLabError):
    """Total intensity I_H + I_V is zero; Stokes parameters undefined."""


class UnphysicalStokes(PhotonLabError):
    """|s| > 1 beyond tolerance; project_physical first."""


class InvalidDensityMatrix(PhotonLabError):
    """Matrix is not Hermitian, trace-1 and positive semidefinite."""


class InsufficientAngles(PhotonLabError):
    """Polar scan needs >= 5 distinct angles spanning >= 180 degrees."""


class DegenerateAngles(PhotonLabError):
    """Polar scan angles do not separate the {1, cos, sin} basis."""


@dataclass(frozen=True)
class SixIntensities:
    """Analyzer intensities in the six canonical settings."""

    i_h: float
    i_v: float
    i_d: float
    i_a: float
    i_r: float
    i_l: float

    def __post_init__(self):
        if min(self.i_h, self.i_v, self.i_d, self.i_a, self.i_r, self.i_l) < 0:
            raise ZeroIntensity("intensities must be non-negative")
        if self.i_h + self.i_v <= 0:
            raise ZeroIntensity("I_H + I_V must be positive")


@dataclass(frozen=True)
class StokesVector:
    """Total intensity S0 plus the normalized components (s1, s2, s3)."""

    s0: float
    s1: float
    s2: float
    s3: float

    def __post_init__(self):
        if self.s0 <= 0:
            raise ZeroIntensity("S0 must be positive")

    @property
    def norm(self) -> float:
        return float(np.sqrt(self.s1**2 + self.s2**2 + self.s3**2))


def stokes_from_six(m: SixIntensities) -> StokesVector:
    s0 = m.i_h + m.i_v
    return StokesVector(
        s0=s0,
        s1=(m.i_h - m.i_v) / s0,
        s2=(m.i_d - m.i_a) / s0,
        s3=(m.i_r - m.i_l) / s0,
    )


def degree_of_polarization(s: StokesVector) -> float:
    """|s| = sqrt(s1^2 + s2^2 + s3^2); 0 for unpolarized, 1 for pure states."""
    return s.norm


def project_physical(s: StokesVector) -> tuple[StokesVector, bool]:
    """Radially project onto |s| <= 1; returns (vector, projection_applied)."""
    norm = s.norm
    if norm <= 1.0:
        return s, False
    scale = 1.0 / norm
    return StokesVector(s.s0, s.s1 * scale, s.s2 * scale, s.s3 * scale), True


@dataclass(frozen=True, eq=False)
class DensityMatrix2:
    """2x2 density matrix in the {H, V} basis: Hermitian, trace 1, PSD."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.ascontiguousarray(self.matrix, dtype=complex)
        if mat.shape != (2, 2):
            raise InvalidDensityMatrix("matrix must be 2x2")
        if not np.allclose(mat, mat.conj().T, atol=1e-12, rtol=0):
            raise InvalidDensityMatrix("matrix not Hermitian")
        if abs(mat.trace().real - 1.0) > 1e-12 or abs(mat.trace().imag) > 1e-12:
            raise InvalidDensityMatrix("trace must be 1")
        if np.linalg.eigvalsh(mat).min() < -1e-12:
            raise InvalidDensityMatrix("matrix not positive semidefinite")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def to_json_dict(self) -> dict:
        return {
            "real": [[float(v.real) for v in row] for row in self.matrix],
            "imag": [[float(v.imag) for v in row] for row in self.matrix],
        }


MAXIMALLY_MIXED = None  # initialized below


def density_from_stokes(s: StokesVector) -> DensityMatrix2:
    """rho = (identity + s . sigma)/2; eigenvalues (1 +- |s|)/2."""
    if s.norm > 1.0 + 1e-9:
        raise UnphysicalStokes(f"|s| = {s.norm} > 1; call project_physical first")
    rho = 0.5 * np.array(
        [
            [1.0 + s.s1, s.s2 - 1j * s.s3],
            [s.s2 + 1j * s.s3, 1.0 - s.s1],
        ],
        dtype=complex,
    )
    if s.norm > 1.0:  # tolerated sliver above 1: clip the tiny negative eigenvalue
        evals, evecs = np.linalg.eigh(rho)
        evals = np.clip(evals, 0.0, None)
        evals = evals / evals.sum()
        rho = (evecs * evals) @ evecs.conj().T
    return DensityMatrix2(rho)


def stokes_from_density(rho: DensityMatrix2, s0: float = 1.0) -> StokesVector:
    """Inverse of density_from_stokes (Pauli expectation values)."""
    m = rho.matrix
    return StokesVector(
        s0=s0,
        s1=float((m[0, 0] - m[1, 1]).real),
        s2=float((m[0, 1] + m[1, 0]).real),
        s3=float((1j * (m[0, 1] - m[1, 0])).real),
    )


def _sqrtm_psd_2x2(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(mat)
    evals = np.clip(evals, 0.0, None)
    return (evecs * np.sqrt(evals)) @ evecs.conj().T


def fidelity(rho_a: DensityMatrix2, rho_b: DensityMatrix2) -> float:
    """Uhlmann fidelity Tr sqrt(sqrt(a) b sqrt(a)), via exact eigendecomposition.

    Symmetric in its arguments; 1 iff the states coincide.  For
    rho_a = identity/2 it reduces to (sqrt(p+) + sqrt(p-))/sqrt(2) with p+-
    the eigenvalues of rho_b.
    """
    sqrt_a = _sqrtm_psd_2x2(rho_a.matrix)
    inner = sqrt_a @ rho_b.matrix @ sqrt_a
    evals = np.clip(np.linalg.eigvalsh(inner), 0.0, None)
    return float(min(np.sqrt(evals).sum(), 1.0))


MAXIMALLY_MIXED = DensityMatrix2(0.5 * np.eye(2, dtype=complex))


# ---------------------------------------------------------------------------
# half-wave-plate polar scan


def polar_scan_intensity(s: StokesVector, theta_rad):
    """Linear-analyzer response I(theta) = S0/2 * (1 + s1 cos 2theta + s2 sin 2theta).

    theta is the linear polarization rotation angle (twice the half-wave
    plate angle); s3 does not enter a linear scan.
    """
    theta = np.asarray(theta_rad, dtype=float)
    out = 0.5 * s.s0 * (1.0 + s.s1 * np.cos(2.0 * theta) + s.s2 * np.sin(2.0 * theta))
    return float(out) if np.ndim(theta_rad) == 0 else out


@dataclass(frozen=True)
class PolarScanFit:
    """Linear-scan reconstruction: S0 and (s1, s2); s3 is unresolved by design."""

    s0: float
    s1: float
    s2: float
    s0_sigma: float
    s1_sigma: float
    s2_sigma: float
    report: FitReport

    @property
    def modulation_depth(self) -> float:
        return float(np.hypot(self.s1, self.s2))

    def to_json_dict(self) -> dict:
        return {
            "S0": self.s0, "S0_sigma": self.s0_sigma,
            "s1": self.s1, "s1_sigma": self.s1_sigma,
            "s2": self.s2, "s2_sigma": self.s2_sigma,
            "s3": None,
            "modulation_depth": self.modulation_depth,
        }


def fit_polar_scan(data: XYData) -> PolarScanFit:
    """Least squares on the {1, cos 2theta, sin 2theta} basis; x in radians."""
    theta = data.x
    distinct = np.unique(np.round(theta, 12))
    if distinct.size < 5 or (theta.max() - theta.min()) < np.pi - 1e-9:
        raise InsufficientAngles("need >= 5 distinct angles spanning >= 180 degrees")
    design = np.stack([np.ones_like(theta), np.cos(2 * theta), np.sin(2 * theta)], axis=1)
    sv = np.linalg.svd(design / data.sigma[:, None], compute_uv=False)
    if sv[-1] < 1e-10 * sv[0]:
        raise DegenerateAngles("angles leave the harmonic basis rank-deficient")

    model = lambda t, p: p[0] + p[1] * np.cos(2 * t) + p[2] * np.sin(2 * t)
    head = max(1, len(data) // 4)
    p0 = [float(np.mean(data.y)), float(np.ptp(data.y)) / 2.0, 0.0]
    report = fit_least_squares(model, data, np.asarray(p0))

    a0, a1, a2 = report.values
    cov = report.covariance
    s0 = 2.0 * a0
    s1, s2 = a1 / a0, a2 / a0
    grad1 = np.array([-a1 / a0**2, 1.0 / a0, 0.0])
    grad2 = np.array([-a2 / a0**2, 0.0, 1.0 / a0])
    return PolarScanFit(
        s0=float(s0),
        s1=float(s1),
        s2=float(s2),
        s0_sigma=float(2.0 * report.std_errors[0]),
        s1_sigma=float(np.sqrt(max(grad1 @ cov @ grad1, 0.0))),
        s2_sigma=float(np.sqrt(max(grad2 @ cov @ grad2, 0.0))),
        report=report,
    )


# ---------------------------------------------------------------------------
# interchange formats

_SETTING_ORDER = ("H", "V", "D", "A", "R", "L")


def parse_six_intensities_csv(csv_text: str) -> SixIntensities:
    """Parse 'setting,intensity' rows covering the six settings H,V,D,A,R,L."""
    lines = csv_text.splitlines()
    if not lines or lines[0].strip().lower() != "setting,intensity":
        raise FormatError("line 1: expected header 'setting,intensity'")
    seen = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 'setting,intensity', got {line!r}")
        setting = parts[0].strip().upper()
        if setting not in _SETTING_ORDER:
            raise FormatError(f"line {lineno}: unknown setting {parts[0]!r}")
        if setting in seen:
            raise FormatError(f"line {lineno}: duplicate setting {setting}")
        try:
            seen[setting] = float(parts[1])
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric intensity {parts[1]!r}") from None
    missing = [s for s in _SETTING_ORDER if s not in seen]
    if missing:
        raise FormatError(f"missing settings: {', '.join(missing)}")
    return SixIntensities(
        i_h=seen["H"], i_v=seen["V"], i_d=seen["D"],
        i_a=seen["A"], i_r=seen["R"], i_l=seen["L"],
    )


def parse_polar_scan_csv(csv_text: str) -> XYData:
    """Parse 'theta_deg,intensity' rows; returns XYData with theta in radians."""
    lines = csv_text.splitlines()
    if not lines or lines[0].strip().lower() != "theta_deg,intensity":
        raise FormatError("line 1: expected header 'theta_deg,intensity'")
    theta, intensity = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"line {lineno}: expected 'theta_deg,intensity', got {line!r}")
        try:
            theta.append(float(parts[0]))
            intensity.append(float(parts[1]))
        except ValueError:
            raise FormatError(f"line {lineno}: non-numeric field in {line!r}") from None
    if len(theta) < 3:
        raise InsufficientAngles("polar scan needs at least 5 points")
    return XYData(np.deg2rad(theta), np.asarray(intensity), None)


def tomography_report(m: SixIntensities) -> dict:
    """Full six-setting analysis: s, |s|, rho, fidelity to the maximally mixed state."""
    raw = stokes_from_six(m)
    s, projected = project_physical(raw)
    rho = density_from_stokes(s)
    return {
        "S0": s.s0,
        "s": [s.s1, s.s2, s.s3],
        "s_norm": degree_of_polarization(s),
        "projected_to_physical": projected,
        "rho": rho.to_json_dict(),
        "rho_eigenvalues": [float(v) for v in rho.eigenvalues],
        "fidelity_to_maximally_mixed": fidelity(MAXIMALLY_MIXED, rho),
    }
