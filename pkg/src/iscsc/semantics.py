"""Semantic-rate, secrecy and power metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InfeasibleBleuTarget(ValueError):
    pass


def _check_hermitian(m: np.ndarray, what: str) -> None:
    m = np.asarray(m)
    scale = 1.0 + np.max(np.abs(m), initial=0.0)
    if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-9 * scale:
        raise ValueError(f"{what} is not Hermitian")


def _quad(h: np.ndarray, m: np.ndarray) -> float:
    return float(np.real(np.vdot(h, m @ h)))


def sinr_cu(k: int, channels, w_mats, r_mats, noise_w: float) -> float:
    """SINR of CU ``k``; ``channels`` is either a ChannelSet or a (K, N) array."""
    h_all = getattr(channels, "cu_channels", channels)
    h = np.asarray(h_all)[k]
    for i, w in enumerate(w_mats):
        _check_hermitian(w, f"W[{i}]")
    for i, r in enumerate(r_mats):
        _check_hermitian(r, f"R[{i}]")
    signal = _quad(h, w_mats[k])
    interference = sum(_quad(h, w) for j, w in enumerate(w_mats) if j != k)
    interference += sum(_quad(h, r) for r in r_mats)
    return max(signal, 0.0) / (interference + noise_w)


def sinr_eve(
    l: int,
    k: int,
    h_eve: np.ndarray,
    w_mats,
    r_mats,
    noise_w: float,
    include_comm_interference: bool = True,
) -> float:
    """SINR of eavesdropping target ``l`` on CU ``k``'s stream over channel ``h_eve``.

    With ``include_comm_interference=False`` the other CUs' beams are left out of
    the denominator, which is the conservative form the robust constraint certifies.
    ``l`` is only used for error messages.
    """
    h = np.asarray(h_eve)
    for i, w in enumerate(w_mats):
        _check_hermitian(w, f"W[{i}]")
    for i, r in enumerate(r_mats):
        _check_hermitian(r, f"R[{i}]")
    signal = _quad(h, w_mats[k])
    interference = sum(_quad(h, r) for r in r_mats)
    if include_comm_interference:
        interference += sum(_quad(h, w) for j, w in enumerate(w_mats) if j != k)
    return max(signal, 0.0) / (interference + noise_w)


def semantic_rate(rho: float, gamma: float, iota: float) -> float:
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho={rho} outside (0, 1]")
    return iota / rho * math.log2(1.0 + gamma)


def rho_lower_bound(Q: float, w, p) -> float:
    """Smallest extraction ratio whose BLEU score still reaches ``Q``.

    Uses natural logs in the n-gram term so that the bound inverts the
    brevity penalty ``exp(1 - 1/rho)`` exactly.
    """
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    if not 0.0 < Q <= 1.0:
        raise ValueError("Q must lie in (0, 1]")
    if np.any(p <= 0) or np.any(p > 1):
        raise ValueError("precisions must lie in (0, 1]")
    denom = 1.0 - math.log(Q) + float(np.dot(w, np.log(p)))
    if denom < 1.0:
        raise InfeasibleBleuTarget(
            f"BLEU target Q={Q} exceeds the score reachable at rho=1 (denominator {denom:.4g} < 1)"
        )
    return 1.0 / denom


def bleu_oracle(rho: float, w, p) -> float:
    """BLEU score with brevity penalty ``exp(1 - 1/rho)`` for ``rho <= 1``."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    w = np.asarray(w, dtype=float)
    p = np.asarray(p, dtype=float)
    return math.exp(1.0 - 1.0 / rho) * math.exp(float(np.dot(w, np.log(p))))


def worst_case_ssr(k: int, channels, w_mats, r_mats, rho: float, iota: float, noises) -> float:
    """Clamped semantic secrecy rate of CU ``k`` against the strongest estimated eavesdropper.

    ``noises`` is ``(noise_comm_w, noise_sense_w)``.
    """
    noise_c, noise_r = noises
    s_k = semantic_rate(rho, sinr_cu(k, channels, w_mats, r_mats, noise_c), iota)
    eves = np.asarray(channels.target_channels_est)
    if len(eves) == 0:
        return s_k
    leak = max(
        semantic_rate(rho, sinr_eve(l, k, eves[l], w_mats, r_mats, noise_r), iota)
        for l in range(len(eves))
    )
    return max(s_k - leak, 0.0)


def computational_power(rhos, f: float) -> float:
    rhos = np.asarray(rhos, dtype=float)
    if np.any(rhos <= 0) or np.any(rhos > 1):
        raise ValueError("extraction ratios must lie in (0, 1]")
    return float(np.sum(-f * np.log(rhos)))


def transmit_power(w_mats, r_mats) -> float:
    total = 0.0
    for m in list(w_mats) + list(r_mats):
        total += float(np.real(np.trace(m)))
    return total


@dataclass(frozen=True)
class PowerBreakdown:
    comp_w: float
    cs_w: float
    budget_w: float

    @property
    def total_w(self) -> float:
        return self.comp_w + self.cs_w

    @property
    def slack_w(self) -> float:
        return self.budget_w - self.total_w

    def within_budget(self, tol: float = 1e-9) -> bool:
        return self.total_w <= self.budget_w + tol


def power_breakdown(w_mats, r_mats, rhos, f: float, budget_w: float) -> PowerBreakdown:
    return PowerBreakdown(computational_power(rhos, f), transmit_power(w_mats, r_mats), budget_w)
