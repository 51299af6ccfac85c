"""Loss objectives for learning LSFM and LAM representations, with analytic gradients.

All losses are sums (not means) of squared residuals. In the LSFM objectives
the successor-feature target is held constant: gradients never flow through
it, and callers may pass a frozen ``target`` to evaluate the loss the
gradient actually descends.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .dataset import TransitionDataset
from .mdp import TabularMdp
from .representation import Lam, Lsfm


class LossComponents(NamedTuple):
    """Total and per-term values. For LAM losses ``l_psi`` holds the latent transition term."""

    total: float
    l_r: float
    l_psi: float
    l_n: float


def _norm_term(x, alpha_n):
    sq = np.sum(x * x, axis=1) - 1.0
    return float(np.sum(sq * sq)), 4.0 * alpha_n * sq[:, None] * x


def _scatter_rows(shape, idx, rows):
    out = np.zeros(shape)
    np.add.at(out, idx, rows)
    return out


def lsfm_batch(phi, f, w, s, a, r, s_next, alpha_psi, alpha_n, gamma, target=None, grad=True):
    """LSFM loss on index arrays. ``target`` is an optional (phi, fbar) pair for the SF target."""
    phi_t, fbar_t = (phi, f.mean(axis=0)) if target is None else target
    x = phi[s]
    y = phi_t[s] + gamma * phi_t[s_next] @ fbar_t
    w_a, f_a = w[a], f[a]
    er = np.sum(x * w_a, axis=1) - r
    d = np.einsum("bn,bnm->bm", x, f_a) - y
    l_n, g_norm = _norm_term(x, alpha_n)
    l_r, l_psi = float(er @ er), float(np.sum(d * d))
    comps = LossComponents(l_r + alpha_psi * l_psi + alpha_n * l_n, l_r, l_psi, l_n)
    if not grad:
        return comps, None
    g_x = 2.0 * er[:, None] * w_a + 2.0 * alpha_psi * np.einsum("bnm,bm->bn", f_a, d) + g_norm
    g_w = np.zeros_like(w)
    g_f = np.zeros_like(f)
    for k in range(w.shape[0]):
        m = a == k
        if np.any(m):
            g_w[k] = 2.0 * er[m] @ x[m]
            g_f[k] = 2.0 * alpha_psi * x[m].T @ d[m]
    return comps, {"phi": _scatter_rows(phi.shape, s, g_x), "f": g_f, "w": g_w}


def lam_batch(phi, m_mats, w, s, a, r, s_next, alpha_p, alpha_n, grad=True):
    """LAM loss on index arrays; the next-state features are differentiated too."""
    x, x_next = phi[s], phi[s_next]
    w_a, m_a = w[a], m_mats[a]
    er = np.sum(x * w_a, axis=1) - r
    d = np.einsum("bn,bnm->bm", x, m_a) - x_next
    l_n, g_norm = _norm_term(x, alpha_n)
    l_r, l_p = float(er @ er), float(np.sum(d * d))
    comps = LossComponents(l_r + alpha_p * l_p + alpha_n * l_n, l_r, l_p, l_n)
    if not grad:
        return comps, None
    g_x = 2.0 * er[:, None] * w_a + 2.0 * alpha_p * np.einsum("bnm,bm->bn", m_a, d) + g_norm
    g_phi = _scatter_rows(phi.shape, s, g_x)
    np.add.at(g_phi, s_next, -2.0 * alpha_p * d)
    g_w = np.zeros_like(w)
    g_m = np.zeros_like(m_mats)
    for k in range(w.shape[0]):
        mask = a == k
        if np.any(mask):
            g_w[k] = 2.0 * er[mask] @ x[mask]
            g_m[k] = 2.0 * alpha_p * x[mask].T @ d[mask]
    return comps, {"phi": g_phi, "m": g_m, "w": g_w}


def lsfm_matrix(phi, f, w, transitions, rewards, alpha_psi, alpha_n, gamma, target=None, grad=True,
                stop_gradient=True):
    """Full-table LSFM loss: sum_a ||Phi w_a - r_a||^2 + alpha_psi ||Phi F_a - (Phi + gamma P_a Phi Fbar)||^2.

    With ``stop_gradient=False`` the target is differentiated too (only
    meaningful when ``target`` is None).
    """
    phi_t, fbar_t = (phi, f.mean(axis=0)) if target is None else target
    full = not stop_gradient and target is None
    num_actions = f.shape[0]
    l_r = l_psi = 0.0
    g_phi = np.zeros_like(phi)
    g_f = np.zeros_like(f)
    g_w = np.zeros_like(w)
    for a in range(f.shape[0]):
        res_r = phi @ w[a] - rewards[a]
        d = phi @ f[a] - phi_t - gamma * transitions[a] @ phi_t @ fbar_t
        l_r += float(res_r @ res_r)
        l_psi += float(np.sum(d * d))
        if grad:
            g_w[a] = 2.0 * phi.T @ res_r
            g_f[a] += 2.0 * alpha_psi * phi.T @ d
            g_phi += 2.0 * np.outer(res_r, w[a]) + 2.0 * alpha_psi * d @ f[a].T
            if full:
                pd = transitions[a].T @ d
                g_phi -= 2.0 * alpha_psi * (d + gamma * pd @ fbar_t.T)
                g_f -= 2.0 * alpha_psi * gamma * (phi.T @ pd) / num_actions
    l_n, g_norm = _norm_term(phi, alpha_n)
    comps = LossComponents(l_r + alpha_psi * l_psi + alpha_n * l_n, l_r, l_psi, l_n)
    if not grad:
        return comps, None
    return comps, {"phi": g_phi + g_norm, "f": g_f, "w": g_w}


def lam_matrix(phi, m_mats, w, transitions, rewards, alpha_p, alpha_n, grad=True):
    """Full-table LAM loss: sum_a ||Phi w_a - r_a||^2 + alpha_p ||Phi M_a - P_a Phi||^2."""
    l_r = l_p = 0.0
    g_phi = np.zeros_like(phi)
    g_m = np.zeros_like(m_mats)
    g_w = np.zeros_like(w)
    for a in range(m_mats.shape[0]):
        res_r = phi @ w[a] - rewards[a]
        e = phi @ m_mats[a] - transitions[a] @ phi
        l_r += float(res_r @ res_r)
        l_p += float(np.sum(e * e))
        if grad:
            g_w[a] = 2.0 * phi.T @ res_r
            g_m[a] = 2.0 * alpha_p * phi.T @ e
            g_phi += 2.0 * np.outer(res_r, w[a]) + 2.0 * alpha_p * (e @ m_mats[a].T - transitions[a].T @ e)
    l_n, g_norm = _norm_term(phi, alpha_n)
    comps = LossComponents(l_r + alpha_p * l_p + alpha_n * l_n, l_r, l_p, l_n)
    if not grad:
        return comps, None
    return comps, {"phi": g_phi + g_norm, "m": g_m, "w": g_w}


# dataset / model level wrappers

def loss_lsfm(dataset: TransitionDataset, phi, lsfm: Lsfm, alpha_psi: float, alpha_n: float,
              gamma: float, target=None) -> LossComponents:
    return lsfm_batch(np.asarray(phi, float), lsfm.f, lsfm.w, dataset.s, dataset.a, dataset.r,
                      dataset.s_next, alpha_psi, alpha_n, gamma, target, grad=False)[0]


def loss_lsfm_grad(dataset: TransitionDataset, phi, lsfm: Lsfm, alpha_psi: float, alpha_n: float,
                   gamma: float):
    return lsfm_batch(np.asarray(phi, float), np.array(lsfm.f), np.array(lsfm.w), dataset.s, dataset.a,
                      dataset.r, dataset.s_next, alpha_psi, alpha_n, gamma)


def loss_lam(dataset: TransitionDataset, phi, lam: Lam, alpha_p: float, alpha_n: float) -> LossComponents:
    return lam_batch(np.asarray(phi, float), lam.m, lam.w, dataset.s, dataset.a, dataset.r,
                     dataset.s_next, alpha_p, alpha_n, grad=False)[0]


def loss_lam_grad(dataset: TransitionDataset, phi, lam: Lam, alpha_p: float, alpha_n: float):
    return lam_batch(np.asarray(phi, float), np.array(lam.m), np.array(lam.w), dataset.s, dataset.a,
                     dataset.r, dataset.s_next, alpha_p, alpha_n)


def loss_lsfm_mat(mdp: TabularMdp, phi, lsfm: Lsfm, alpha_psi: float = 1.0, alpha_n: float = 0.0,
                  target=None) -> LossComponents:
    return lsfm_matrix(np.asarray(phi, float), lsfm.f, lsfm.w, mdp.transitions, mdp.rewards,
                       alpha_psi, alpha_n, mdp.gamma, target, grad=False)[0]


def loss_lsfm_mat_grad(mdp: TabularMdp, phi, lsfm: Lsfm, alpha_psi: float = 1.0, alpha_n: float = 0.0):
    return lsfm_matrix(np.asarray(phi, float), np.array(lsfm.f), np.array(lsfm.w), mdp.transitions,
                       mdp.rewards, alpha_psi, alpha_n, mdp.gamma)


def loss_lam_mat(mdp: TabularMdp, phi, lam: Lam, alpha_p: float = 1.0, alpha_n: float = 0.0) -> LossComponents:
    return lam_matrix(np.asarray(phi, float), lam.m, lam.w, mdp.transitions, mdp.rewards,
                      alpha_p, alpha_n, grad=False)[0]


def loss_lam_mat_grad(mdp: TabularMdp, phi, lam: Lam, alpha_p: float = 1.0, alpha_n: float = 0.0):
    return lam_matrix(np.asarray(phi, float), np.array(lam.m), np.array(lam.w), mdp.transitions,
                      mdp.rewards, alpha_p, alpha_n)
