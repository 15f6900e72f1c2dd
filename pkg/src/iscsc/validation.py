"""Independent numerical cross-checks run by ``iscsc validate``.

Every check returns a :class:`CheckResult`; none of them raises on a failed
comparison, so a validation run always reports every verdict.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from iscsc import sdpcore
from iscsc.optimizer import certified_lambda, crb_lmi
from iscsc.sdpcore import HermExpr, SdpProblem, check_psd, embed_hermitian
from iscsc.semantics import bleu_oracle, rho_lower_bound, sinr_eve
from iscsc.sensing import crb_theta, fim, steering_derivative, steering_vector


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)


def random_hermitian_psd(rng, n: int, rank: int | None = None) -> np.ndarray:
    rank = n if rank is None else rank
    g = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return g @ g.conj().T / rank


def sample_ball(rng, n: int, radius: float, count: int) -> np.ndarray:
    """``count`` complex n-vectors uniform in the ball of the given radius."""
    g = rng.standard_normal((count, n)) + 1j * rng.standard_normal((count, n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    # uniform in the 2n-dimensional real ball
    r = radius * rng.uniform(size=(count, 1)) ** (1.0 / (2 * n))
    return g * r


def check_bleu_inversion(rng, draws: int = 1000, denominator_shift: float = 0.0) -> CheckResult:
    """``bleu_oracle(rho_lb) == Q`` and BLEU strictly below ``Q`` just under the bound.

    ``denominator_shift`` perturbs the bound's denominator; it exists so that
    the check itself can be shown to catch a wrong bound.
    """
    worst = 0.0
    below_ok = True
    used = 0
    while used < draws:
        G = int(rng.integers(1, 5))
        w = rng.dirichlet(np.ones(G))
        p = rng.uniform(0.05, 1.0, size=G)
        ceiling = math.exp(float(np.dot(w, np.log(p))))
        Q = float(rng.uniform(0.05, 1.0) * ceiling)
        rho = rho_lower_bound(Q, w, p)
        if denominator_shift:
            rho = 1.0 / (1.0 / rho + denominator_shift)
        if not 0.0 < rho <= 1.0:
            continue
        used += 1
        worst = max(worst, abs(bleu_oracle(rho, w, p) - Q))
        if rho - 1e-4 > 0 and bleu_oracle(rho - 1e-4, w, p) >= Q:
            below_ok = False
    passed = worst <= 1e-9 and below_ok
    return CheckResult("bleu_inversion", passed, f"max |BLEU(rho_lb) - Q| = {worst:.3g}, below-bound strict: {below_ok}")


def fim_finite_difference(theta, beta, x_snapshots, noise_w, spacing_ratio=0.5, step=1e-6) -> np.ndarray:
    """FIM of ``[theta, Re beta, Im beta]`` from central differences of the echo mean ``beta a a^H x``."""
    n = x_snapshots.shape[1]

    def mean(xi):
        th, br, bi = xi
        a = steering_vector(th, n, spacing_ratio)
        return (br + 1j * bi) * np.outer(x_snapshots @ a.conj(), a)  # (T, N)

    xi0 = np.array([theta, beta.real, beta.imag])
    grads = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = step
        grads.append((mean(xi0 + e) - mean(xi0 - e)) / (2 * step))
    J = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            J[i, j] = 2.0 / noise_w * np.real(np.vdot(grads[i], grads[j]))
    return J


def snapshots_for(rx: np.ndarray) -> np.ndarray:
    """``T = N`` snapshots whose scaled sample covariance ``(1/T) sum x x^H`` equals ``rx``."""
    n = rx.shape[0]
    vals, vecs = np.linalg.eigh(0.5 * (rx + rx.conj().T))
    root = (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.conj().T
    return math.sqrt(n) * root.T  # rows are snapshots


def check_fim(rng, cases: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 9))
        theta = float(rng.uniform(-1.3, 1.3))
        beta = complex(rng.standard_normal(), rng.standard_normal()) * 0.3
        rx = random_hermitian_psd(rng, n)
        noise = float(rng.uniform(0.1, 2.0))
        X = snapshots_for(rx)
        J_fd = fim_finite_difference(theta, beta, X, noise)
        J = fim(theta, beta, rx, n, noise).matrix()
        worst = max(worst, np.max(np.abs(J - J_fd)) / np.max(np.abs(J_fd)))
    return CheckResult("fim_finite_difference", worst < 1e-4, f"max relative error {worst:.3g}")


def check_steering_derivative(rng, cases: int = 10) -> CheckResult:
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 16))
        th = float(rng.uniform(-1.4, 1.4))
        h = 1e-6
        fd = (steering_vector(th + h, n) - steering_vector(th - h, n)) / (2 * h)
        an = steering_derivative(th, n)
        worst = max(worst, np.max(np.abs(fd - an)) / max(np.max(np.abs(an)), 1e-300))
    return CheckResult("steering_derivative", worst < 1e-6, f"max relative error {worst:.3g}")


def check_crb_inverse(rng, cases: int = 20) -> CheckResult:
    worst = 0.0
    for _ in range(cases):
        n = int(rng.integers(2, 9))
        theta = float(rng.uniform(-1.3, 1.3))
        beta = complex(rng.standard_normal(), rng.standard_normal())
        rx = random_hermitian_psd(rng, n)
        f = fim(theta, beta, rx, 1, 1.0)
        ref = np.linalg.inv(f.matrix())[0, 0]
        worst = max(worst, abs(crb_theta(f) - ref) / ref)
    return CheckResult("crb_full_inverse", worst < 1e-10, f"max relative error {worst:.3g}")


def max_u_under_crb_lmi(rx: np.ndarray, theta: float, beta: complex, noise_w: float = 1.0, t_snap: int = 1):
    """Largest ``U`` with the CRB block PSD at fixed ``rx``; equals ``1/CRB`` when the LMI is tight."""
    import cvxpy as cp

    f0 = fim(theta, beta, rx, t_snap, noise_w)
    scale = max(f0.j_tt, 1e-300)
    u = cp.Variable(name="u")
    prob = SdpProblem(objective=u)
    prob.add_psd("crb", crb_lmi(HermExpr.const(rx), u, theta, beta, t_snap, noise_w, scale=scale))
    out = sdpcore.solve(prob, tol=1e-10)
    if not out.optimal:
        return None
    return out.objective * scale


def check_crb_lmi(rng, sizes=(2, 4, 8)) -> CheckResult:
    worst = 0.0
    for n in sizes:
        theta = float(rng.uniform(-1.2, 1.2))
        beta = complex(rng.standard_normal(), rng.standard_normal()) * 0.5
        rx = random_hermitian_psd(rng, n)
        u = max_u_under_crb_lmi(rx, theta, beta)
        if u is None:
            return CheckResult("crb_lmi_tightness", False, f"SDP failed at N={n}")
        ref = 1.0 / crb_theta(fim(theta, beta, rx, 1, 1.0))
        worst = max(worst, abs(u - ref) / ref)
    return CheckResult("crb_lmi_tightness", worst < 1e-5, f"max relative error {worst:.3g}")


def max_sampled_leakage(w_k, r_sum, h_est, eps, noise_w, rng, count: int = 10_000) -> float:
    """Largest eavesdropper SINR over ``count`` ball samples around ``h_est`` (robust form)."""
    n = h_est.size
    us = sample_ball(rng, n, eps, count)
    # boundary points are where the worst case lives; add the same directions at full radius
    us = np.vstack([us, eps * us / np.maximum(np.linalg.norm(us, axis=1, keepdims=True), 1e-300)])
    H = h_est[None, :] + us
    sig = np.real(np.einsum("ti,ij,tj->t", H.conj(), w_k, H))
    intf = np.real(np.einsum("ti,ij,tj->t", H.conj(), r_sum, H))
    return float(np.max(sig / (intf + noise_w)))


def check_sprocedure(rng, cases: int = 5, samples: int = 10_000) -> CheckResult:
    worst = -np.inf
    for _ in range(cases):
        n = int(rng.integers(2, 7))
        w = random_hermitian_psd(rng, n, rank=1)
        r = random_hermitian_psd(rng, n, rank=2) * 0.3
        h = 0.3 * (rng.standard_normal(n) + 1j * rng.standard_normal(n))
        eps = float(rng.uniform(0.01, 0.2))
        noise = float(rng.uniform(0.05, 1.0))
        lam, _ = certified_lambda(w, r, h, eps, noise)
        sampled = max_sampled_leakage(w, r, h, eps, noise, rng, samples)
        # cross-check one sample against the scalar SINR helper
        u = sample_ball(rng, n, eps, 1)[0]
        direct = sinr_eve(0, 0, h + u, [w], [r], noise, include_comm_interference=False)
        ref = np.real(np.vdot(h + u, w @ (h + u))) / (np.real(np.vdot(h + u, r @ (h + u))) + noise)
        if abs(direct - ref) > 1e-10 * max(1.0, ref):
            return CheckResult("sprocedure_sampling", False, "scalar SINR mismatch")
        worst = max(worst, sampled - lam)
    return CheckResult("sprocedure_sampling", worst <= 1e-6, f"max sampled leakage minus certified cap {worst:.3g}")


def check_embedding(rng, cases: int = 100) -> CheckResult:
    worst = 0.0
    agree = True
    for _ in range(cases):
        n = int(rng.integers(1, 7))
        g = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        h = 0.5 * (g + g.conj().T)
        ev = np.linalg.eigvalsh(h)
        ev_e = np.linalg.eigvalsh(embed_hermitian(h))
        worst = max(worst, np.max(np.abs(np.sort(np.repeat(ev, 2)) - ev_e)))
        agree &= check_psd(h) == check_psd(embed_hermitian(h))
    passed = worst < 1e-10 and agree
    return CheckResult("embedding_eigen", passed, f"max eigenvalue mismatch {worst:.3g}, PSD verdicts agree: {agree}")


def run_all(seed: int = 0, denominator_shift: float = 0.0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [
        check_bleu_inversion(rng, denominator_shift=denominator_shift),
        check_steering_derivative(rng),
        check_fim(rng),
        check_crb_inverse(rng),
        check_crb_lmi(rng),
        check_sprocedure(rng),
        check_embedding(rng),
    ]
