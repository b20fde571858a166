"""Pure-numpy implementations of the scoring kernels.

Used when the compiled ``_ckernels`` extension is unavailable. Every function
has the same signature and semantics as its compiled counterpart.

Shared argument conventions (``G`` groups, ``C`` candidate items):

- ``logpost``: normalized log posterior, shape ``(G,)``; may hold ``-inf``.
- ``mu``, ``hls``, ``i2s``: per-candidate columns of ``mu``,
  ``0.5 * log(sigma2)`` and ``1 / (2 * sigma2)``, shape ``(G, C)``.
"""

import numpy as np


def _own_share(terms, own):
    # exp(own - logsumexp(terms, axis=0)) with -inf rows tolerated
    m = np.max(terms, axis=0)
    return np.exp(own - m) / np.exp(terms - m).sum(axis=0)


def linear_explore(logpost, mu, hls, i2s):
    """Posterior of ``g`` after a hypothetical rating equal to ``mu[g, c]``.

    Returns ``E`` with shape ``(G, C)``.
    """
    G, C = mu.shape
    out = np.empty((G, C))
    base = logpost[:, None] - hls
    for g in range(G):
        d = mu[g][None, :] - mu
        terms = base - d * d * i2s
        out[g] = _own_share(terms, terms[g])
    return out


def mc_explore(logpost, mu, sigma, hls, i2s, z, g_idx, h_idx):
    """Monte-Carlo mean of the posterior of ``g`` under ratings drawn from group ``g``.

    ``z`` holds standard normals of shape ``(C, G, S)``; the rating for
    sample ``s`` is ``mu[g, c] + sigma[g, c] * z[c, g, s]``. Only groups in
    ``g_idx`` are scored and only groups in ``h_idx`` enter the
    normalization (``g_idx`` must be a subset of ``h_idx``). Returns an array
    of shape ``(len(g_idx), C)``.
    """
    g_idx = np.asarray(g_idx, dtype=np.intp)
    h_idx = np.asarray(h_idx, dtype=np.intp)
    out = np.empty((g_idx.size, mu.shape[1]))
    base = (logpost[h_idx, None] - hls[h_idx])[:, :, None]
    mu_h = mu[h_idx][:, :, None]
    i2s_h = i2s[h_idx][:, :, None]
    for k, g in enumerate(g_idx):
        r = mu[g][:, None] + sigma[g][:, None] * z[:, g, :]
        d = r[None, :, :] - mu_h
        terms = base - d * d * i2s_h
        own = terms[int(np.flatnonzero(h_idx == g)[0])]
        out[k] = _own_share(terms, own).mean(axis=1)
    return out


def future_loss_matrix(mu_rem, order, weights):
    """Discounted loss of acting as group ``h`` when the truth is ``g``.

    ``mu_rem`` is ``(G, m)`` over the remaining items, ``order[h]`` ranks
    those items best-first for group ``h`` and ``weights[i]`` is the discount
    for rank ``i``. Returns ``L[g, h]``.
    """
    G, m = mu_rem.shape
    if m == 0:
        return np.zeros((G, G))
    own = np.take_along_axis(mu_rem, order, axis=1)
    cross = mu_rem[:, order]
    return np.abs(own[:, None, :] - cross) @ weights
