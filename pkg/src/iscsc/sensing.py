"""Uniform-linear-array sensing math: steering vectors, FIM, CRB and an ML oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar


class AngleRangeError(ValueError):
    pass


class UnidentifiableAngleError(ValueError):
    """The Schur complement of the FIM is not positive."""


def _check_angle(theta: float) -> None:
    if abs(theta) > np.pi / 2 + 1e-12:
        raise AngleRangeError(f"angle {theta} rad outside [-pi/2, pi/2]")


def steering_vector(theta: float, n: int, spacing_ratio: float = 0.5) -> np.ndarray:
    """ULA response ``a(theta)`` with element ``m`` equal to exp(-j 2 pi m d sin(theta)).

    The row ``a(theta)^H`` therefore carries positive phase exponents.
    """
    _check_angle(theta)
    m = np.arange(n)
    return np.exp(-2j * np.pi * m * spacing_ratio * np.sin(theta))


def steering_derivative(theta: float, n: int, spacing_ratio: float = 0.5) -> np.ndarray:
    _check_angle(theta)
    m = np.arange(n)
    phase_rate = -2j * np.pi * m * spacing_ratio * np.cos(theta)
    return phase_rate * steering_vector(theta, n, spacing_ratio)


@dataclass(frozen=True)
class Fim:
    j_tt: float
    j_tb: np.ndarray  # shape (2,), columns (Re beta, Im beta)
    j_bb: np.ndarray  # shape (2, 2)

    def matrix(self) -> np.ndarray:
        out = np.empty((3, 3))
        out[0, 0] = self.j_tt
        out[0, 1:] = self.j_tb
        out[1:, 0] = self.j_tb
        out[1:, 1:] = self.j_bb
        return out


def fim_terms(theta: float, n: int, spacing_ratio: float = 0.5):
    """Return ``(B, dB)`` with ``B = a a^H`` and ``dB`` its angle derivative."""
    a = steering_vector(theta, n, spacing_ratio)
    da = steering_derivative(theta, n, spacing_ratio)
    B = np.outer(a, a.conj())
    dB = np.outer(da, a.conj()) + np.outer(a, da.conj())
    return B, dB


def fim(
    theta: float,
    beta: complex,
    rx: np.ndarray,
    t: int,
    noise_sense_w: float,
    spacing_ratio: float = 0.5,
    check: bool = True,
) -> Fim:
    """Fisher information of ``xi = [theta, Re beta, Im beta]`` for the echo model.

    ``rx`` is the transmit covariance ``sum W_k + sum R_l``.
    """
    rx = np.asarray(rx)
    if check:
        herm_err = np.max(np.abs(rx - rx.conj().T), initial=0.0)
        scale = 1.0 + np.max(np.abs(rx), initial=0.0)
        if herm_err > 1e-8 * scale:
            raise ValueError("rx is not Hermitian")
        if np.linalg.eigvalsh(0.5 * (rx + rx.conj().T))[0] < -1e-8 * scale:
            raise ValueError("rx is not positive semidefinite")
    if noise_sense_w <= 0:
        raise ValueError("noise power must be positive")
    n = rx.shape[0]
    B, dB = fim_terms(theta, n, spacing_ratio)
    c = 2.0 * t / noise_sense_w
    j_tt = c * abs(beta) ** 2 * np.real(np.trace(dB @ rx @ dB.conj().T))
    cross = np.trace(B @ rx @ dB.conj().T)
    j_tb = c * np.real(np.conj(beta) * cross * np.array([1.0, 1j]))
    j_bb = c * np.real(np.trace(B @ rx @ B.conj().T)) * np.eye(2)
    return Fim(float(j_tt), j_tb, j_bb)


def crb_theta(f: Fim) -> float:
    scalar = f.j_bb[0, 0]
    if scalar <= 0:
        raise UnidentifiableAngleError("J_bb is singular")
    schur = f.j_tt - f.j_tb @ f.j_tb / scalar
    if schur <= 1e-300 or schur <= 1e-12 * abs(f.j_tt):
        raise UnidentifiableAngleError("angle is not identifiable for this covariance")
    return float(1.0 / schur)


def transmit_covariance(w_mats, r_mats) -> np.ndarray:
    mats = list(w_mats) + list(r_mats)
    return np.sum(mats, axis=0)


def crb_per_target(w_mats, r_mats, channels, snapshots: int) -> np.ndarray:
    rx = transmit_covariance(w_mats, r_mats)
    out = []
    for theta, beta in zip(channels.target_angles_rad, channels.beta):
        f = fim(theta, beta, rx, snapshots, channels.noise_sense_w, channels.spacing_ratio, check=False)
        out.append(crb_theta(f))
    return np.array(out)


def sum_rcrb(solution, channels, cfg) -> float:
    """Sum over targets of the root CRB for the solution's transmit covariance."""
    crbs = crb_per_target(solution.w_mats, solution.r_mats, channels, cfg.snapshots)
    return float(np.sum(np.sqrt(crbs)))


@dataclass(frozen=True)
class EchoSample:
    received: np.ndarray
    transmitted: np.ndarray
    true_angle: float
    beta: complex
    noise_var: float


def simulate_echo(
    x: np.ndarray,
    theta: float,
    beta: complex,
    noise_var: float,
    seed,
    spacing_ratio: float = 0.5,
) -> EchoSample:
    """One matched-filter echo ``beta a a^H x + n`` with circular Gaussian noise."""
    if noise_var < 0:
        raise ValueError("noise variance must be non-negative")
    x = np.asarray(x, dtype=complex)
    a = steering_vector(theta, x.size, spacing_ratio)
    mean = beta * a * (a.conj() @ x)
    rng = np.random.default_rng(seed)
    noise = np.sqrt(noise_var / 2) * (rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size))
    return EchoSample(mean + noise, x, theta, beta, noise_var)


def _ml_criterion(theta, Y, X, spacing_ratio):
    # concentrated likelihood with beta profiled out:
    # |sum_t z_t^* a^H y_t|^2 / (N sum_t |z_t|^2), z_t = a^H x_t
    n = Y.shape[1]
    a = steering_vector(np.clip(theta, -np.pi / 2, np.pi / 2), n, spacing_ratio)
    z = X @ a.conj()
    num = np.abs(np.vdot(z, Y @ a.conj())) ** 2
    den = n * np.real(np.vdot(z, z))
    return num / den if den > 0 else 0.0


def estimate_angle_ml(samples, grid_step: float = np.deg2rad(0.1), spacing_ratio: float = 0.5) -> float:
    """Grid search of the concentrated likelihood followed by a bounded refinement."""
    if len(samples) == 0:
        raise ValueError("no echo samples given")
    Y = np.array([s.received for s in samples])
    X = np.array([s.transmitted for s in samples])
    n = Y.shape[1]
    grid = np.arange(-np.pi / 2, np.pi / 2 + grid_step / 2, grid_step)
    grid = np.clip(grid, -np.pi / 2, np.pi / 2)
    A = np.exp(-2j * np.pi * spacing_ratio * np.outer(np.arange(n), np.sin(grid)))
    Z = X @ A.conj()  # (T, G)
    num = np.abs(np.sum(Z.conj() * (Y @ A.conj()), axis=0)) ** 2
    den = n * np.sum(np.abs(Z) ** 2, axis=0)
    score = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    best = grid[int(np.argmax(score))]
    lo = max(-np.pi / 2, best - grid_step)
    hi = min(np.pi / 2, best + grid_step)
    try:
        res = minimize_scalar(
            lambda th: -_ml_criterion(th, Y, X, spacing_ratio),
            bracket=(lo, best, hi),
            method="golden",
            options={"xtol": 1e-10},
        )
    except ValueError:
        # grid maximum sits on the interval edge; no valid bracket
        return float(best)
    cand = float(np.clip(res.x, lo, hi))
    if _ml_criterion(cand, Y, X, spacing_ratio) >= _ml_criterion(best, Y, X, spacing_ratio):
        return cand
    return float(best)
