"""Alternating robust SDR/SCA design of beamformers and extraction ratios.

One outer iteration runs

1. a successive-convex-approximation loop over the beamforming SDP with
   extraction ratios and leakage caps fixed,
2. a certified update of the per-CU leakage caps ``lambda_k``,
3. an exact update of the extraction ratios,

and the final covariance solution is turned into rank-one beamformers by
Gaussian randomization.

The beamforming SDP is posed on the subspace spanned by the CU channels and
the target steering vectors with their angle derivatives (see
:func:`signal_basis`), which shrinks the PSD blocks from ``N`` to at most
``K + 2L`` without changing the optimum. Powers inside the SDP are expressed
in units of a multiple of the noise power; several unit choices are tried
because interior-point accuracy on this problem depends on it.
"""

from __future__ import annotations

import dataclasses
import itertools
import logging
import math
import time
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq, minimize_scalar

from iscsc import sdpcore
from iscsc.scenario import ChannelSet, ScenarioConfig
from iscsc.sdpcore import HermExpr, SdpProblem
from iscsc.semantics import computational_power, sinr_eve, transmit_power
from iscsc.sensing import UnidentifiableAngleError, crb_theta, fim, fim_terms, steering_derivative, steering_vector

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
MODES = ("full", "rho-fixed-1", "conventional-isac")


class InfeasibleError(RuntimeError):
    """The scenario's QoS/power requirements cannot be met."""


class SolverFailure(RuntimeError):
    def __init__(self, message: str, outcome=None):
        super().__init__(message)
        self.outcome = outcome


class BracketError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# state


@dataclass
class IterateState:
    w_mats: np.ndarray  # (K, N, N)
    r_mats: np.ndarray  # (L, N, N)
    rho: np.ndarray
    lam: np.ndarray
    t_aux: np.ndarray = None  # (K, L)
    u_caps: np.ndarray = None  # (L,)
    b_anchor: np.ndarray = None
    c_anchor: np.ndarray = None
    objective_value: float = float("nan")

    def replace(self, **kw) -> "IterateState":
        return dataclasses.replace(self, **kw)

    @property
    def rx(self) -> np.ndarray:
        n = self.w_mats.shape[-1]
        return self.w_mats.sum(axis=0) + (self.r_mats.sum(axis=0) if len(self.r_mats) else np.zeros((n, n)))


@dataclass
class ObjectiveWeights:
    kappa_comm: float
    kappa_sense: float
    comm_scale: float = 1.0
    sense_scale: float = 1.0


# ---------------------------------------------------------------------------
# scalar pieces


def _log2(x):
    if isinstance(x, cp.Expression):
        return cp.log(x) / LN2
    return math.log2(x)


def taylor_rate_bound(a_expr, b_expr, b_anchor: float, rho: float, iota: float):
    """Concave minorant of ``(iota/rho) log2(A/B)`` built by linearizing ``-log2 B`` at ``b_anchor``."""
    if b_anchor <= 0:
        raise ValueError("Taylor anchor must be positive")
    return iota / rho * (_log2(a_expr) - math.log2(b_anchor) - (b_expr - b_anchor) / (b_anchor * LN2))


def taylor_lambda_bound(lambda_expr, c_anchor: float, rho: float, iota: float):
    """Linearization of ``-(iota/rho) log2(1 + lambda)`` at ``C = c_anchor``; never above the exact term."""
    if c_anchor < 1:
        raise ValueError("anchor C = 1 + lambda must be >= 1")
    return -iota / rho * (math.log2(c_anchor) + (1.0 + lambda_expr - c_anchor) / (c_anchor * LN2))


def rate_terms(w_mats, r_mats, h_cu, noise_w):
    """``A_k`` (total received power + noise) and ``B_k`` (interference + noise) per CU."""
    K = len(w_mats)
    quad = np.array([[np.real(np.vdot(h_cu[k], w @ h_cu[k])) for w in w_mats] for k in range(K)])
    sens = np.array([sum(np.real(np.vdot(h_cu[k], r @ h_cu[k])) for r in r_mats) for k in range(K)])
    A = quad.sum(axis=1) + sens + noise_w
    B = A - np.diag(quad)
    return A, B


# ---------------------------------------------------------------------------
# LMIs


def sprocedure_lmi(w_k: HermExpr, r_sum: HermExpr, lambda_k: float, t_k, h_est, eps: float, noise_w: float):
    """(N+1)x(N+1) Hermitian block (as a ``HermExpr``) certifying ``Gamma_{l|k} <= lambda_k``.

    ``E = W_k - lambda_k sum R``; the block is
    ``[[t I - E, -E h], [-h^H E, -t eps^2 - h^H E h + lambda_k sigma^2]]``.
    """
    h = np.asarray(h_est, dtype=complex)
    n = h.size
    E = w_k - r_sum.scale(lambda_k)
    eh_re, eh_im = E.matvec(h)
    corner = -t_k * eps**2 - E.quad(h) + lambda_k * noise_w
    eye = np.eye(n)
    re = cp.bmat(
        [
            [t_k * eye - E.re, cp.reshape(-eh_re, (n, 1), order="F")],
            [cp.reshape(-eh_re, (1, n), order="F"), cp.reshape(corner, (1, 1), order="F")],
        ]
    )
    zero = np.zeros((1, 1))
    im = cp.bmat(
        [
            [-E.im, cp.reshape(-eh_im, (n, 1), order="F")],
            [cp.reshape(eh_im, (1, n), order="F"), zero],
        ]
    )
    return HermExpr(re, im)


def sprocedure_matrix(E: np.ndarray, h: np.ndarray, eps: float, lam_noise: float, t: float) -> np.ndarray:
    n = h.size
    Eh = E @ h
    M = np.empty((n + 1, n + 1), dtype=complex)
    M[:n, :n] = t * np.eye(n) - E
    M[:n, n] = -Eh
    M[n, :n] = -Eh.conj()
    M[n, n] = -t * eps**2 - np.real(np.vdot(h, Eh)) + lam_noise
    return M


def sprocedure_margin(E: np.ndarray, h: np.ndarray, eps: float, lam_noise: float) -> tuple[float, float]:
    """``max_{t >= 0} lambda_min(M(t))`` and its maximizer; the LMI is feasible iff the margin is >= 0.

    ``lambda_min`` of an affine matrix pencil is concave in ``t``, so a bounded
    scalar search finds the global maximum.
    """
    h = np.asarray(h, dtype=complex)
    E = 0.5 * (E + E.conj().T)

    def g(t):
        return eigh(sprocedure_matrix(E, h, eps, lam_noise, t), eigvals_only=True, subset_by_index=[0, 0])[0]

    e_max = max(eigh(E, eigvals_only=True)[-1], 0.0)
    scale = 1.0 + np.abs(E).max() * (1 + np.linalg.norm(h)) ** 2 + abs(lam_noise)
    if eps == 0:
        # supremum as t -> inf is the corner's Schur limit
        return lam_noise - float(np.real(np.vdot(h, E @ h))), float("inf")
    t_hi = e_max + 4.0 * scale / eps**2
    res = minimize_scalar(lambda t: -g(t), bounds=(0.0, t_hi), method="bounded", options={"xatol": 1e-12 * t_hi})
    t_best = float(res.x)
    best = g(t_best)
    # bounded search never evaluates the endpoints
    for t in (0.0, e_max):
        v = g(t)
        if v > best:
            best, t_best = v, t
    return float(best), t_best


def sprocedure_slack(E: np.ndarray, h: np.ndarray, eps: float, lam_noise: float) -> tuple[float, float]:
    """Schur-complement form of :func:`sprocedure_margin`.

    For ``t`` above ``lambda_max(E)`` the LMI holds iff
    ``phi(t) = lam_noise - t eps^2 - t sum_i e_i |c_i|^2 / (t - e_i) >= 0`` with
    ``(e_i, U)`` the eigenpairs of ``E`` and ``c = U^H h``. ``phi`` is concave,
    so its maximizer is the root of the monotone ``phi'``. Returns ``(max phi, t)``.
    """
    E = 0.5 * (E + E.conj().T)
    e, U = eigh(E)
    c2 = np.abs(U.conj().T @ np.asarray(h, dtype=complex)) ** 2
    e_max = e[-1]
    if e_max <= 0:
        # every quadratic form is non-positive; t = 0 certifies
        return float(lam_noise), 0.0
    if eps == 0:
        return lam_noise - float(np.dot(e, c2)), float("inf")

    def phi(t):
        return lam_noise - t * eps**2 - t * float(np.sum(e * c2 / (t - e)))

    def dphi(t):
        return -(eps**2) + float(np.sum(e**2 * c2 / (t - e) ** 2))

    scale = max(e_max, 1e-300)
    lo = e_max * (1.0 + 1e-15) + 1e-300
    if c2[-1] <= 1e-30 * max(c2.sum(), 1e-300) or dphi(lo) <= 0:
        # maximizer sits at the edge; the edge limit is finite when c_top = 0
        mask = e < e_max * (1 - 1e-12)
        val = lam_noise - e_max * eps**2 - e_max * float(np.sum(e[mask] * c2[mask] / (e_max - e[mask])))
        return float(val), float(e_max)
    hi = e_max + scale
    while dphi(hi) > 0:
        hi = e_max + 2.0 * (hi - e_max)
    t_best = brentq(dphi, lo, hi, xtol=1e-14 * hi, rtol=4 * np.finfo(float).eps)
    return float(phi(t_best)), float(t_best)


def certified_lambda(w_k, r_sum, h, eps, noise_w, rel_tol: float = 1e-10) -> tuple[float, float]:
    """Smallest ``lambda`` whose S-procedure LMI admits some ``t >= 0``.

    Returns ``(lambda, t)``; the returned point is on the feasible side of the bisection.
    """
    h = np.asarray(h, dtype=complex)
    w_k = 0.5 * (w_k + w_k.conj().T)
    r_sum = np.zeros_like(w_k) if r_sum is None else r_sum

    def feasible(lam):
        slack, t = sprocedure_slack(w_k - lam * r_sum, h, eps, lam * noise_w)
        return slack >= 0.0, t

    ok, t = feasible(0.0)
    if ok:
        return 0.0, t
    e_w = max(eigh(w_k, eigvals_only=True)[-1], 0.0)
    hi = (np.linalg.norm(h) + eps) ** 2 * e_w / noise_w * (1 + 1e-6) + 1e-12
    ok, t_hi = feasible(hi)
    grow = 0
    while not ok:
        hi *= 2.0
        grow += 1
        if grow > 60:
            raise BracketError("could not bracket the certified leakage level")
        ok, t_hi = feasible(hi)
    lo = 0.0
    while hi - lo > rel_tol * max(hi, 1e-300):
        mid = 0.5 * (lo + hi)
        ok, t = feasible(mid)
        if ok:
            hi, t_hi = mid, t
        else:
            lo = mid
    return hi, t_hi


def crb_lmi(
    rx: HermExpr,
    u_l,
    theta: float,
    beta: complex,
    t_snap: int,
    noise_w: float,
    spacing_ratio: float = 0.5,
    scale: float = 1.0,
    basis: np.ndarray | None = None,
):
    """3x3 real block ``[[J_tt - U, J_tb], [J_tb^T, J_bb]] / scale`` affine in ``(rx, U)``.

    ``u_l`` enters unscaled, i.e. the block is ``J/scale - diag(u_l, 0, 0)``
    and ``U = scale * u_l``. With ``basis`` (N x r, orthonormal columns) the
    expression ``rx`` holds reduced coordinates ``Y`` of ``U Y U^H``.
    """
    n = rx.re.shape[0] if basis is None else basis.shape[0]
    B, dB = fim_terms(theta, n, spacing_ratio)
    # Tr(M U Y U^H) = Tr(U^H M U Y)
    mats = [dB.conj().T @ dB, dB.conj().T @ B, B.conj().T @ B]
    if basis is not None:
        mats = [basis.conj().T @ m @ basis for m in mats]
    dtd, dtb, btb = mats
    c = 2.0 * t_snap / noise_w / scale
    j_tt = c * abs(beta) ** 2 * rx.trace_with(dtd)
    tau_re, tau_im = rx.trace_with_complex(dtb)
    br, bi = beta.real, beta.imag
    j_tb1 = c * (br * tau_re + bi * tau_im)
    j_tb2 = c * (bi * tau_re - br * tau_im)
    j_bb = c * rx.trace_with(btb)

    def s(x):
        return cp.reshape(x, (1, 1), order="F")

    blk = cp.bmat(
        [
            [s(j_tt - u_l), s(j_tb1), s(j_tb2)],
            [s(j_tb1), s(j_bb), np.zeros((1, 1))],
            [s(j_tb2), np.zeros((1, 1)), s(j_bb)],
        ]
    )
    return 0.5 * (blk + blk.T)


# ---------------------------------------------------------------------------
# objective


def crb_values(rx: np.ndarray, channels: ChannelSet, snapshots: int) -> np.ndarray:
    out = []
    for theta, beta in zip(channels.target_angles_rad, channels.beta):
        f = fim(theta, beta, rx, snapshots, channels.noise_sense_w, channels.spacing_ratio, check=False)
        try:
            out.append(crb_theta(f))
        except UnidentifiableAngleError:
            out.append(np.inf)
    return np.array(out)


def objective_parts(state: IterateState, channels: ChannelSet, cfg: ScenarioConfig):
    """(communication part, sum CRB) of the design objective at ``state``."""
    A, B = rate_terms(state.w_mats, state.r_mats, channels.cu_channels, channels.noise_comm_w)
    comm = float(np.sum(cfg.iota / state.rho * (np.log2(A) - np.log2(B) - np.log2(1.0 + state.lam))))
    sense = float(np.sum(crb_values(state.rx, channels, cfg.snapshots))) if len(state.r_mats) else 0.0
    return comm, sense


def objective(state: IterateState, channels: ChannelSet, cfg: ScenarioConfig, weights: ObjectiveWeights) -> float:
    comm, sense = objective_parts(state, channels, cfg)
    return weights.kappa_comm * comm / weights.comm_scale - weights.kappa_sense * sense / weights.sense_scale


# ---------------------------------------------------------------------------
# Step 1


@dataclass
class Step1Handles:
    w: list
    r: list
    t: dict
    u: list
    v: list
    pscale: float
    crb_scale: np.ndarray
    basis: np.ndarray | None = None


def signal_basis(channels: ChannelSet, tol: float = 1e-10) -> np.ndarray:
    """Orthonormal basis of the span of CU channels, target steering vectors and their derivatives.

    Every Step 1 quantity sees the beams only through quadratic forms in these
    vectors, and compressing a beam onto their span never increases power or
    worst-case leakage, so the optimum lives in this subspace.
    """
    n = channels.n_antennas
    cols = [np.asarray(h, dtype=complex) for h in channels.cu_channels]
    for theta in channels.target_angles_rad:
        cols.append(steering_vector(theta, n, channels.spacing_ratio))
        cols.append(steering_derivative(theta, n, channels.spacing_ratio))
    M = np.array(cols).T
    U, sv, _ = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(sv > tol * sv[0]))
    return U[:, :rank]


def build_step1(
    state: IterateState,
    channels: ChannelSet,
    cfg: ScenarioConfig,
    weights: ObjectiveWeights | None = None,
    pscale: float | None = None,
    reduce: bool = True,
):
    """Beamforming SDP for fixed extraction ratios and leakage caps, anchored at ``state``.

    With ``reduce`` the matrix variables live in the coordinates of
    :func:`signal_basis`; otherwise they are full ``N x N``.
    """
    if weights is None:
        weights = ObjectiveWeights(cfg.kappa, cfg.kappa)
    K, L = len(state.w_mats), len(state.r_mats)
    basis = signal_basis(channels) if reduce else np.eye(channels.n_antennas, dtype=complex)
    N = basis.shape[1]
    ps = min(PSCALE_LADDER[0] * channels.noise_comm_w, cfg.power_budget_w) if pscale is None else pscale
    sig_c = channels.noise_comm_w / ps
    sig_r = channels.noise_sense_w / ps
    prob = SdpProblem()
    W = [prob.hermitian(N, f"W{k}", role="comm") for k in range(K)]
    R = [prob.hermitian(N, f"R{l}", role="sense") for l in range(L)]
    Wx = [HermExpr.of(w) for w in W]
    Rx = [HermExpr.of(r) for r in R]
    r_sum = Rx[0] if L else None
    for r in Rx[1:]:
        r_sum = r_sum + r

    _, b_anchor = rate_terms(state.w_mats / ps, state.r_mats / ps, channels.cu_channels, sig_c)
    h = channels.cu_channels @ basis.conj()
    obj_comm = 0
    for k in range(K):
        rx_k = sum(w.quad(h[k]) for w in W) + sum(r.quad(h[k]) for r in R) + sig_c
        b_k = rx_k - W[k].quad(h[k])
        rate = taylor_rate_bound(rx_k, b_k, b_anchor[k], state.rho[k], cfg.iota)
        prob.add(rate >= cfg.qos_threshold)
        obj_comm = obj_comm + rate - cfg.iota / state.rho[k] * math.log2(1.0 + state.lam[k])

    t_vars = {}
    for k in range(K):
        for l in range(L):
            t = cp.Variable(nonneg=True, name=f"t{k}_{l}")
            t_vars[k, l] = t
            blk = sprocedure_lmi(
                Wx[k], r_sum, float(state.lam[k]), t, basis.conj().T @ channels.target_channels_est[l],
                float(channels.error_radius[l]), sig_r,
            )
            prob.add_complex_psd(f"sproc{k}_{l}", blk.re, blk.im)

    u_vars, v_vars = [], []
    crb_scale = np.ones(L)
    obj_sense = 0
    if L:
        rx_expr = Wx[0]
        for x in Wx[1:] + Rx:
            rx_expr = rx_expr + x
        rx_anchor = state.rx / ps
        for l in range(L):
            theta, beta = channels.target_angles_rad[l], complex(channels.beta[l])
            f0 = fim(theta, beta, rx_anchor, cfg.snapshots, sig_r, channels.spacing_ratio, check=False)
            crb_scale[l] = max(f0.j_tt, 1e-12)
            u = cp.Variable(nonneg=True, name=f"U{l}")
            prob.add_psd(
                f"crb{l}",
                crb_lmi(rx_expr, u, theta, beta, cfg.snapshots, sig_r, channels.spacing_ratio,
                        scale=crb_scale[l], basis=basis),
            )
            v, epi = sdpcore.epigraph_inverse(u)
            prob.add(epi)
            u_vars.append(u)
            v_vars.append(v)
            # CRB <= 1/U with U = ps * scale * u (back in watts)
            obj_sense = obj_sense + v / (ps * crb_scale[l])

    p_comp = computational_power(state.rho, cfg.f_coeff)
    budget = (cfg.power_budget_w - p_comp) / ps
    prob.add(sum(w.trace() for w in W) + sum(r.trace() for r in R) <= budget)
    prob.objective = weights.kappa_comm * obj_comm / weights.comm_scale - weights.kappa_sense * obj_sense / weights.sense_scale
    return prob, Step1Handles(W, R, t_vars, u_vars, v_vars, ps, crb_scale, basis)


# Power units for the Step 1 SDP, as multiples of the communication noise power.
# Interior-point accuracy on this problem depends on the unit choice because
# the SNR spans several decades; the first choice that yields an ascent wins.
PSCALE_LADDER = (1e3, 1e2, 30.0)


def step1_attempts(state: IterateState, channels: ChannelSet, cfg: ScenarioConfig, weights: ObjectiveWeights, f_current: float):
    """Solve Step 1 over the power-unit ladder.

    Yields ``(outcome, candidate_or_None, candidate_objective_or_None)`` per
    attempt and stops after the first candidate that does not decrease the
    true objective.
    """
    for mult in PSCALE_LADDER:
        ps = min(mult * channels.noise_comm_w, cfg.power_budget_w)
        prob, handles = build_step1(state, channels, cfg, weights, pscale=ps)
        out = sdpcore.solve(prob, tol=cfg.solver_tol)
        if not out.optimal:
            yield out, None, None
            continue
        cand = extract_step1(out, handles, state, cfg)
        f_c = objective(cand, channels, cfg, weights)
        yield out, cand, f_c
        if f_c >= f_current:
            return


def _psd_project(m: np.ndarray) -> np.ndarray:
    m = 0.5 * (m + m.conj().T)
    vals, vecs = np.linalg.eigh(m)
    vals = np.clip(vals, 0.0, None)
    out = (vecs * vals) @ vecs.conj().T
    return 0.5 * (out + out.conj().T)


def extract_step1(outcome, handles: Step1Handles, state: IterateState, cfg: ScenarioConfig) -> IterateState:
    ps = handles.pscale
    U = handles.basis

    def lift(y):
        y = _psd_project(y * ps)
        return y if U is None else _psd_project(U @ y @ U.conj().T)

    w = np.array([lift(outcome.values[v.name]) for v in handles.w])
    n = w.shape[-1]
    r = np.array([lift(outcome.values[v.name]) for v in handles.r]).reshape(-1, n, n)
    p_cs = transmit_power(w, r)
    allowed = cfg.power_budget_w - computational_power(state.rho, cfg.f_coeff)
    if p_cs > allowed:
        shrink = allowed / p_cs
        w, r = w * shrink, r * shrink
    K, L = len(w), len(r)
    t_aux = np.zeros((K, L))
    for (k, l), t in handles.t.items():
        t_aux[k, l] = float(t.value) * ps
    u = np.array([float(x.value) * ps * s for x, s in zip(handles.u, handles.crb_scale)])
    return state.replace(w_mats=w, r_mats=r, t_aux=t_aux, u_caps=u)


# ---------------------------------------------------------------------------
# Steps 2 and 3


def update_lambda(state: IterateState, channels: ChannelSet, cfg: ScenarioConfig, per_pair: bool = False):
    """Smallest certified leakage caps for the current beams.

    The lambda subproblem's objective decreases in every ``lambda_k``, so the
    optimum saturates ``Gamma_{l|k} <= lambda_k`` over the uncertainty ball;
    each pair's saturation point is found by bisection on the S-procedure LMI.
    """
    K, L = len(state.w_mats), len(state.r_mats)
    pair = np.zeros((K, L))
    t_aux = np.zeros((K, L))
    r_sum = state.r_mats.sum(axis=0) if L else None
    for k in range(K):
        for l in range(L):
            pair[k, l], t_aux[k, l] = certified_lambda(
                state.w_mats[k], r_sum, channels.target_channels_est[l],
                float(channels.error_radius[l]), channels.noise_sense_w,
            )
    lam = pair.max(axis=1) if L else np.zeros(K)
    if per_pair:
        return lam, pair, t_aux
    return lam


def update_rho(state: IterateState, channels: ChannelSet, cfg: ScenarioConfig) -> np.ndarray:
    """Exact maximizer of ``sum_k c_k / rho_k`` over the box and compute-power constraint.

    With ``x_k = ln rho_k`` the feasible set is a box cut by one half-space and
    the objective is convex, so the maximum sits on a vertex; vertices are
    enumerated directly.
    """
    A, B = rate_terms(state.w_mats, state.r_mats, channels.cu_channels, channels.noise_comm_w)
    rate = np.log2(A) - np.log2(B)
    c = cfg.iota * (rate - np.log2(1.0 + state.lam))
    lb = cfg.rho_lower()
    if cfg.qos_threshold > 0:
        ub = np.minimum(1.0, cfg.iota * rate / cfg.qos_threshold)
    else:
        ub = np.ones_like(lb)
    if np.any(ub < lb * (1 - 1e-12)):
        bad = int(np.argmax(lb - ub))
        raise InfeasibleError(f"CU {bad}: QoS caps rho at {ub[bad]:.4g} below its BLEU bound {lb[bad]:.4g}")
    ub = np.maximum(ub, lb)
    p_rem = cfg.power_budget_w - transmit_power(state.w_mats, state.r_mats)
    # budget on sum ln rho: sum x >= s
    s = -p_rem / cfg.f_coeff
    xl, xu = np.log(lb), np.log(ub)
    if xu.sum() < s - 1e-9:
        raise InfeasibleError("compute power exceeds the remaining budget even at the largest ratios")
    x = xu.copy()
    free = [k for k in range(len(c)) if c[k] > 0]
    if not free:
        return np.exp(x)
    fixed_sum = sum(xu[k] for k in range(len(c)) if k not in free)
    best_val, best_x = -np.inf, None

    def value(xf):
        return float(np.sum(c[free] * np.exp(-xf)))

    lo_f, hi_f = xl[free], xu[free]
    for corner in itertools.product((0, 1), repeat=len(free)):
        xf = np.where(np.array(corner) == 0, lo_f, hi_f)
        if fixed_sum + xf.sum() >= s - 1e-12:
            v = value(xf)
            if v > best_val:
                best_val, best_x = v, xf.copy()
        for j in range(len(free)):
            # free coordinate j sits on the budget plane
            xj = s - fixed_sum - (xf.sum() - xf[j])
            if lo_f[j] - 1e-15 <= xj <= hi_f[j] + 1e-15:
                cand = xf.copy()
                cand[j] = min(max(xj, lo_f[j]), hi_f[j])
                v = value(cand)
                if v > best_val:
                    best_val, best_x = v, cand
    x[free] = best_x
    return np.clip(np.exp(x), lb, ub)


# ---------------------------------------------------------------------------
# Step 4


def gaussian_randomization(w_sdr, count: int, evaluate, rng=None):
    """Rank-one vectors from SDR covariances.

    ``evaluate(vectors) -> (feasible, objective)``. Each sample draws
    ``w_k ~ CN(0, W_k)`` for every CU and rescales it to ``Tr(W_k)``. The best
    feasible sample wins; the principal-eigenvector candidate is used when no
    sample is feasible (or ``count == 0``).
    """
    rng = np.random.default_rng(rng)
    w_sdr = [0.5 * (w + w.conj().T) for w in w_sdr]
    factors, traces, principal = [], [], []
    for w in w_sdr:
        vals, vecs = np.linalg.eigh(w)
        vals = np.clip(vals, 0.0, None)
        factors.append(vecs * np.sqrt(vals))
        traces.append(float(np.real(np.trace(w))))
        principal.append(vecs[:, -1] * math.sqrt(max(traces[-1], 0.0)))
    best = None
    n_feasible = 0
    for _ in range(count):
        cand = []
        for fac, tr in zip(factors, traces):
            g = (rng.standard_normal(fac.shape[1]) + 1j * rng.standard_normal(fac.shape[1])) / math.sqrt(2)
            v = fac @ g
            nv = np.linalg.norm(v)
            cand.append(v * math.sqrt(tr) / nv if nv > 0 else v)
        ok, val = evaluate(cand)
        if ok:
            n_feasible += 1
            if best is None or val > best[1]:
                best = (cand, val)
    used_fallback = best is None
    if used_fallback:
        ok, val = evaluate(principal)
        best = (principal, val)
    return np.array(best[0]), {"objective": best[1], "feasible_samples": n_feasible, "fallback": used_fallback}


# ---------------------------------------------------------------------------
# solution bundle and report


@dataclass
class BeamformingSolution:
    w_vecs: np.ndarray
    w_mats: np.ndarray
    r_mats: np.ndarray
    rho: np.ndarray
    lam: np.ndarray
    sdr_w_mats: np.ndarray
    sdr_objective: float
    randomized_objective: float
    sdr_gap: float
    rank_one_error: np.ndarray = None
    metrics: dict = field(default_factory=dict)

    @property
    def state(self) -> IterateState:
        return IterateState(self.w_mats, self.r_mats, self.rho, self.lam)


@dataclass
class RunReport:
    digest: str
    mode: str
    status: str
    converged: bool
    outer_iterations: int
    trace: list
    metrics: dict
    wall_time: float
    solver_stats: dict
    message: str = ""


def evaluate_metrics(w_mats, r_mats, rho, lam, channels: ChannelSet, cfg: ScenarioConfig) -> dict:
    """Per-CU and per-target figures of merit recomputable from (W, R, rho, lambda)."""
    from iscsc.semantics import power_breakdown, semantic_rate, sinr_cu

    K, L = len(w_mats), len(r_mats)
    w_list, r_list = list(w_mats), list(r_mats)
    gam = [sinr_cu(k, channels, w_list, r_list, channels.noise_comm_w) for k in range(K)]
    rates = [semantic_rate(rho[k], gam[k], cfg.iota) for k in range(K)]
    ssr = []
    for k in range(K):
        leak = 0.0
        for l in range(L):
            g = sinr_eve(l, k, channels.target_channels_est[l], w_list, r_list, channels.noise_sense_w)
            leak = max(leak, semantic_rate(rho[k], g, cfg.iota))
        ssr.append(max(rates[k] - leak, 0.0))
    rx = np.sum(w_list + r_list, axis=0)
    crbs = crb_values(rx, channels, cfg.snapshots) if L else np.zeros(0)
    margins = []
    if L:
        state = IterateState(np.asarray(w_mats), np.asarray(r_mats), np.asarray(rho), np.asarray(lam))
        _, pair, _ = update_lambda(state, channels, cfg, per_pair=True)
        margins = [float(np.min(np.asarray(lam) - pair[:, l])) for l in range(L)]
    pb = power_breakdown(w_list, r_list, rho, cfg.f_coeff, cfg.power_budget_w)
    return {
        "cu": [
            {"sinr": float(gam[k]), "semantic_rate": float(rates[k]), "ssr": float(ssr[k]),
             "rho": float(rho[k]), "lambda": float(lam[k])}
            for k in range(K)
        ],
        "targets": [
            {"crb": float(crbs[l]), "rcrb": float(np.sqrt(crbs[l])), "lambda_margin": margins[l]}
            for l in range(L)
        ],
        "power": {"comp_w": pb.comp_w, "cs_w": pb.cs_w, "budget_w": pb.budget_w, "slack_w": pb.slack_w},
        "sum_semantic_rate": float(np.sum(rates)),
        "sum_ssr": float(np.sum(ssr)),
        "sum_rcrb": float(np.sum(np.sqrt(crbs))) if L else 0.0,
    }


# ---------------------------------------------------------------------------
# Algorithm


def mode_config(cfg: ScenarioConfig, mode: str) -> ScenarioConfig:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "conventional-isac":
        return cfg.replace(iota=1.0)
    return cfg


def _matched_start(cfg: ScenarioConfig, rho0: np.ndarray):
    K, L, N = cfg.n_cu, cfg.n_targets, cfg.n_antennas
    p = 0.8 * (cfg.power_budget_w - computational_power(rho0, cfg.f_coeff)) / (K + L)
    w = np.array([
        p * np.outer(a, a.conj()) / N
        for a in (steering_vector(np.deg2rad(th), N, cfg.spacing_ratio) for th in cfg.cu_angles)
    ])
    r = np.array([p * np.eye(N, dtype=complex) / N for _ in range(L)]).reshape(L, N, N)
    return w, r


def initial_rho(cfg: ScenarioConfig, channels: ChannelSet, grid: int = 11) -> np.ndarray:
    """Starting extraction ratios ``rho_lb ** s`` with ``s`` picked on a grid.

    Each candidate is scored by the semantic sum rate of the matched-filter
    start it leaves power for; candidates that violate QoS or leave less than
    5% of the budget for transmission are skipped.
    """
    lb = cfg.rho_lower()
    best, best_val = np.ones_like(lb), -np.inf
    for s in np.linspace(0.0, 1.0, grid):
        rho = lb**s
        if computational_power(rho, cfg.f_coeff) > 0.95 * cfg.power_budget_w:
            continue
        w, r = _matched_start(cfg, rho)
        A, B = rate_terms(w, r, channels.cu_channels, channels.noise_comm_w)
        rates = cfg.iota / rho * (np.log2(A) - np.log2(B))
        if np.any(rates < cfg.qos_threshold):
            continue
        if rates.sum() > best_val:
            best, best_val = rho, rates.sum()
    return best


def initial_state(cfg: ScenarioConfig, channels: ChannelSet, rho0=None) -> IterateState:
    """Matched-filter communication beams and isotropic sensing beams on 80% of the free budget."""
    K = cfg.n_cu
    rho0 = np.ones(K) if rho0 is None else np.asarray(rho0, dtype=float)
    w, r = _matched_start(cfg, rho0)
    state = IterateState(w, r, rho0, np.zeros(K))
    lam = update_lambda(state, channels, cfg)
    return state.replace(lam=lam)


def _total_power(state: IterateState, cfg: ScenarioConfig) -> float:
    return computational_power(state.rho, cfg.f_coeff) + transmit_power(state.w_mats, state.r_mats)


def _frob(a, b) -> float:
    if len(a) == 0:
        return 0.0
    return float(max(np.linalg.norm(x - y) for x, y in zip(a, b)))


def run_algorithm1(
    cfg: ScenarioConfig,
    channels: ChannelSet,
    mode: str = "full",
    seed: int | None = None,
    progress=None,
):
    """Run the alternating design and Gaussian randomization.

    Returns ``(BeamformingSolution | None, RunReport)``; the solution is
    ``None`` when no feasible iterate was ever accepted.
    """
    t_start = time.perf_counter()
    seed = cfg.seed if seed is None else seed
    run_cfg = mode_config(cfg, mode)
    fix_rho = mode != "full"
    trace: list[dict] = []
    stats = {"sdp_solves": 0, "sdp_time": 0.0, "solver_iterations": 0}
    digest = cfg.digest(seed)

    def report(status, converged, outer, metrics, message=""):
        return RunReport(digest, mode, status, converged, outer, trace, metrics,
                         time.perf_counter() - t_start, stats, message)

    try:
        rho0 = None if fix_rho else initial_rho(run_cfg, channels)
        state = initial_state(run_cfg, channels, rho0)
    except BracketError as exc:
        return None, report(sdpcore.NUMERICAL_LIMIT, False, 0, {}, str(exc))
    weights = ObjectiveWeights(run_cfg.kappa, run_cfg.kappa)
    if run_cfg.normalize_objective:
        comm0, sense0 = objective_parts(state, channels, run_cfg)
        weights.comm_scale = max(abs(comm0), 1e-12)
        weights.sense_scale = max(abs(sense0), 1e-300) if sense0 else 1.0
    f = objective(state, channels, run_cfg, weights)
    state.objective_value = f
    trace.append({"outer": 0, "inner": 0, "step": "init", "objective": f, "status": "init"})

    ctx = _RunContext(run_cfg, channels, weights, fix_rho, trace, stats)
    converged = False
    outer = 0
    status = sdpcore.OPTIMAL
    message = ""
    for outer in range(1, run_cfg.max_outer_iters + 1):
        f_outer_start = f
        state, f, failure = _outer_iteration(ctx, outer, state, f)
        if failure is not None:
            status, message = failure
            if not ctx.accepted_any:
                return None, report(status, False, outer, {}, message)
            if status == "infeasible":
                break
            status, message = sdpcore.OPTIMAL, ""
        if progress:
            progress(outer, f)
        if abs(f - f_outer_start) <= run_cfg.outer_tol * max(1.0, abs(f)):
            converged = True
            break

    # Step 4: Gaussian randomization. A rank-one candidate that beats the
    # covariance iterate is a feasible ascent step, so it becomes the new
    # anchor and the alternation resumes from it.
    solution = recover_rank_one(state, channels, run_cfg, weights, seed)
    for restart in range(RANK_ONE_RESTARTS + 1):
        if solution.randomized_objective <= solution.sdr_objective + 1e-6 * max(1.0, abs(solution.sdr_objective)):
            break
        state = solution.state
        f = solution.randomized_objective
        state.objective_value = f
        trace.append({"outer": outer, "step": "rank-one restart", "objective": f, "status": "ok",
                      "power_w": _total_power(state, run_cfg)})
        if restart < RANK_ONE_RESTARTS and outer < run_cfg.max_outer_iters:
            outer += 1
            state, f, _ = _outer_iteration(ctx, outer, state, f)
        solution = recover_rank_one(state, channels, run_cfg, weights, seed)

    metrics = evaluate_metrics(solution.w_mats, solution.r_mats, solution.rho, solution.lam, channels, run_cfg)
    metrics["objective"] = solution.randomized_objective
    metrics["sdr_objective"] = solution.sdr_objective
    metrics["sdr_gap"] = solution.sdr_gap
    metrics["randomization"] = solution.metrics.get("randomization", {})
    solution.metrics = metrics
    return solution, report(status, converged, outer, metrics, message)


RANK_ONE_RESTARTS = 2


@dataclass
class _RunContext:
    cfg: ScenarioConfig
    channels: ChannelSet
    weights: ObjectiveWeights
    fix_rho: bool
    trace: list
    stats: dict
    accepted_any: bool = False
    tol_inner: float = 1e-4


def _outer_iteration(ctx: _RunContext, outer: int, state: IterateState, f: float):
    """Steps 1-3 once. Returns ``(state, objective, failure)``; ``failure`` is ``(status, message)`` or None."""
    cfg, channels, weights, trace, stats = ctx.cfg, ctx.channels, ctx.weights, ctx.trace, ctx.stats
    # Step 1: SCA on the beamforming SDP
    for inner in range(1, cfg.max_inner_iters + 1):
        best = None
        last_out = None
        for out, cand, f_c in step1_attempts(state, channels, cfg, weights, f):
            stats["sdp_solves"] += 1
            stats["sdp_time"] += out.wall_time
            stats["solver_iterations"] += out.iterations or 0
            last_out = out
            if cand is not None and (best is None or f_c > best[1]):
                best = (cand, f_c, out)
        if best is None:
            trace.append({"outer": outer, "inner": inner, "step": "beamforming", "objective": f,
                          "status": last_out.status, "solver": last_out.raw_status})
            if not ctx.accepted_any:
                return state, f, (last_out.status,
                                  f"beamforming SDP failed: {last_out.raw_status} {last_out.diagnostics}".strip())
            break
        cand, f_c, out = best
        dw = _frob(cand.w_mats, state.w_mats)
        dr = _frob(cand.r_mats, state.r_mats)
        if f_c < f:
            # solver noise only; keep the previous iterate
            trace.append({"outer": outer, "inner": inner, "step": "beamforming", "objective": f,
                          "status": "rejected", "candidate": f_c, "dW": dw, "dR": dr})
            break
        ctx.accepted_any = True
        state, f = cand.replace(objective_value=f_c), f_c
        trace.append({"outer": outer, "inner": inner, "step": "beamforming", "objective": f,
                      "status": out.status, "dW": dw, "dR": dr, "sdp_objective": out.objective,
                      "power_w": _total_power(state, cfg)})
        if dw <= ctx.tol_inner and dr <= ctx.tol_inner:
            break
    # Step 2: certified leakage caps
    # always adopted: the caps must be certified for the current beams
    state = state.replace(lam=update_lambda(state, channels, cfg))
    f = objective(state, channels, cfg, weights)
    trace.append({"outer": outer, "step": "lambda", "objective": f, "status": "ok", "lambda": state.lam.tolist()})
    # Step 3: extraction ratios
    if not ctx.fix_rho:
        try:
            rho = update_rho(state, channels, cfg)
        except InfeasibleError as exc:
            return state, f, ("infeasible", str(exc))
        cand = state.replace(rho=rho)
        f_c = objective(cand, channels, cfg, weights)
        if f_c >= f:
            state, f = cand, f_c
        trace.append({"outer": outer, "step": "rho", "objective": f, "status": "ok", "rho": state.rho.tolist(),
                      "power_w": _total_power(state, cfg)})
    state.objective_value = f
    return state, f, None


def recover_rank_one(state: IterateState, channels: ChannelSet, cfg: ScenarioConfig, weights: ObjectiveWeights, seed) -> BeamformingSolution:
    f_sdr = objective(state, channels, cfg, weights)
    budget = cfg.power_budget_w
    p_comp = computational_power(state.rho, cfg.f_coeff)

    def evaluate(vectors):
        w = np.array([np.outer(v, v.conj()) for v in vectors])
        cand = state.replace(w_mats=w)
        cand = cand.replace(lam=update_lambda(cand, channels, cfg))
        A, B = rate_terms(cand.w_mats, cand.r_mats, channels.cu_channels, channels.noise_comm_w)
        rates = cfg.iota / cand.rho * (np.log2(A) - np.log2(B))
        ok = bool(np.all(rates >= cfg.qos_threshold - 1e-6))
        ok &= p_comp + transmit_power(cand.w_mats, cand.r_mats) <= budget + 1e-6
        return ok, objective(cand, channels, cfg, weights)

    vecs, info = gaussian_randomization(state.w_mats, cfg.randomization_count, evaluate, rng=seed)
    w = np.array([np.outer(v, v.conj()) for v in vecs])
    final = state.replace(w_mats=w)
    lam = update_lambda(final, channels, cfg)
    final = final.replace(lam=lam)
    f_rand = objective(final, channels, cfg, weights)
    err = np.array([
        np.linalg.norm(w[k] - state.w_mats[k]) / max(np.linalg.norm(state.w_mats[k]), 1e-300)
        for k in range(len(w))
    ])
    gap = (f_sdr - f_rand) / max(abs(f_sdr), 1e-12)
    sol = BeamformingSolution(
        w_vecs=vecs, w_mats=w, r_mats=state.r_mats, rho=state.rho, lam=lam,
        sdr_w_mats=state.w_mats, sdr_objective=f_sdr, randomized_objective=f_rand,
        sdr_gap=float(gap), rank_one_error=err,
    )
    sol.metrics["randomization"] = {k: v for k, v in info.items() if k != "objective"}
    return sol


def run_benchmark(cfg: ScenarioConfig, channels: ChannelSet, mode: str, seed: int | None = None):
    """Run one of ``full``, ``rho-fixed-1`` or ``conventional-isac`` and return its report."""
    _, rep = run_algorithm1(cfg, channels, mode=mode, seed=seed)
    return rep
