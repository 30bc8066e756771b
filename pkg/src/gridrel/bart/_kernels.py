"""Compiled inner loops for the sum-of-trees sampler and its predictions.

Trees live in fixed-capacity node pools (one row per tree).  Node 0 is the
root; ``var < 0`` marks a leaf.  For binary predictors a split on variable
``v`` sends ``x[v] == 0`` left and ``x[v] == 1`` right, and a variable is
never reused along a path (the second split would leave a child empty).
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from numba import njit, prange
from numba.core.errors import NumbaWarning

# an outdated system TBB only disables that threading layer; numba falls back on its own
warnings.filterwarnings("ignore", message="The TBB threading layer", category=NumbaWarning)

CAPACITY = 128

GROW, PRUNE, CHANGE, SWAP = 0, 1, 2, 3


@njit(cache=True)
def _leaf_loglik(n, s, sigma2, tau2):
    denom = sigma2 + n * tau2
    return 0.5 * math.log(sigma2 / denom) + 0.5 * s * s * tau2 / (sigma2 * denom)


@njit(cache=True)
def _p_split(depth, p, alpha, beta):
    if depth >= p:
        return 0.0
    return alpha * (1.0 + depth) ** (-beta)


@njit(cache=True)
def _mark_ancestors(j, node, var, parent, used, flag):
    k = parent[j, node]
    while k >= 0:
        used[var[j, k]] = flag
        k = parent[j, k]


@njit(cache=True)
def _pick_free(alive, j):
    for k in range(1, alive.shape[1]):
        if alive[j, k] == 0:
            return k
    return -1


@njit(cache=True)
def _is_nog(j, k, var, left, right):
    return var[j, k] >= 0 and var[j, left[j, k]] < 0 and var[j, right[j, k]] < 0


@njit(cache=True)
def _route(j, start, x_row, var, left, right):
    k = start
    while var[j, k] >= 0:
        if x_row[var[j, k]] == 0:
            k = left[j, k]
        else:
            k = right[j, k]
    return k


@njit(cache=True)
def run_chain(X, y, m, tau, alpha, beta, nu, lam, sigma2_init, n_burn, n_keep, seed,
              move_probs):
    """Backfitting Metropolis-within-Gibbs sampler.

    Returns pooled compact trees for the kept draws plus the sigma^2 chain and
    per-move acceptance counts.
    """
    np.random.seed(seed)
    n, p = X.shape
    cap = CAPACITY
    tau2 = tau * tau

    var = np.full((m, cap), -1, np.int32)
    left = np.full((m, cap), -1, np.int32)
    right = np.full((m, cap), -1, np.int32)
    parent = np.full((m, cap), -1, np.int32)
    depth = np.zeros((m, cap), np.int32)
    mu = np.zeros((m, cap))
    alive = np.zeros((m, cap), np.uint8)
    alive[:, 0] = 1

    assign = np.zeros((m, n), np.int32)
    resid = y.copy()  # y minus current total fit
    R = np.empty(n)
    used = np.zeros(p, np.uint8)
    buf = np.empty(cap, np.int32)
    cnt = np.zeros(cap, np.int64)
    sm = np.zeros(cap)
    cnt2 = np.zeros(cap, np.int64)
    sm2 = np.zeros(cap)
    newvar = np.empty(cap, np.int32)
    in_sub = np.zeros(cap, np.uint8)
    new_leaf = np.empty(n, np.int32)

    cum = np.cumsum(move_probs)
    sigma2 = sigma2_init
    sig_chain = np.empty(n_keep)
    proposed = np.zeros(4, np.int64)
    accepted = np.zeros(4, np.int64)

    pool_cap = max(16, n_keep * m * 3)
    pvar = np.empty(pool_cap, np.int32)
    pleft = np.empty(pool_cap, np.int32)
    pright = np.empty(pool_cap, np.int32)
    pmu = np.empty(pool_cap)
    tree_start = np.empty((n_keep, m), np.int64)
    pool_n = 0
    order = np.empty(cap, np.int32)
    remap = np.empty(cap, np.int32)

    for it in range(n_burn + n_keep):
        for j in range(m):
            for i in range(n):
                R[i] = resid[i] + mu[j, assign[j, i]]

            u = np.random.random()
            move = 0
            while move < 3 and u > cum[move]:
                move += 1
            proposed[move] += 1

            n_leaves = 0
            n_nog = 0
            for k in range(cap):
                if alive[j, k] == 1:
                    if var[j, k] < 0:
                        n_leaves += 1
                    elif _is_nog(j, k, var, left, right):
                        n_nog += 1

            if move == GROW:
                nl = 0
                for k in range(cap):
                    if alive[j, k] == 1 and var[j, k] < 0:
                        buf[nl] = k
                        nl += 1
                leaf = buf[np.random.randint(nl)]
                d = depth[j, leaf]
                n_elig = p - d
                kl = _pick_free(alive, j)
                if n_elig > 0 and kl >= 0:
                    alive[j, kl] = 1
                    kr = _pick_free(alive, j)
                    alive[j, kl] = 0
                    if kr >= 0:
                        _mark_ancestors(j, leaf, var, parent, used, 1)
                        r = np.random.randint(n_elig)
                        v = -1
                        for q in range(p):
                            if used[q] == 0:
                                if r == 0:
                                    v = q
                                    break
                                r -= 1
                        _mark_ancestors(j, leaf, var, parent, used, 0)
                        nL = 0
                        nR = 0
                        sL = 0.0
                        sR = 0.0
                        for i in range(n):
                            if assign[j, i] == leaf:
                                if X[i, v] == 0:
                                    nL += 1
                                    sL += R[i]
                                else:
                                    nR += 1
                                    sR += R[i]
                        if nL > 0 and nR > 0:
                            pa = parent[j, leaf]
                            nog_after = n_nog + 1
                            if pa >= 0 and _is_nog(j, pa, var, left, right):
                                nog_after -= 1
                            ps = _p_split(d, p, alpha, beta)
                            pc = _p_split(d + 1, p, alpha, beta)
                            logr = (math.log(n_leaves) - math.log(nog_after)
                                    + math.log(ps) + 2.0 * math.log(1.0 - pc)
                                    - math.log(1.0 - ps)
                                    + _leaf_loglik(nL, sL, sigma2, tau2)
                                    + _leaf_loglik(nR, sR, sigma2, tau2)
                                    - _leaf_loglik(nL + nR, sL + sR, sigma2, tau2))
                            if math.log(np.random.random()) < logr:
                                accepted[GROW] += 1
                                var[j, leaf] = v
                                for kk in (kl, kr):
                                    alive[j, kk] = 1
                                    var[j, kk] = -1
                                    parent[j, kk] = leaf
                                    depth[j, kk] = d + 1
                                    mu[j, kk] = 0.0
                                left[j, leaf] = kl
                                right[j, leaf] = kr
                                for i in range(n):
                                    if assign[j, i] == leaf:
                                        assign[j, i] = kl if X[i, v] == 0 else kr

            elif move == PRUNE and n_nog > 0:
                nb = 0
                for k in range(cap):
                    if alive[j, k] == 1 and _is_nog(j, k, var, left, right):
                        buf[nb] = k
                        nb += 1
                node = buf[np.random.randint(nb)]
                a = left[j, node]
                b = right[j, node]
                na = 0
                nbb = 0
                sa = 0.0
                sb = 0.0
                for i in range(n):
                    if assign[j, i] == a:
                        na += 1
                        sa += R[i]
                    elif assign[j, i] == b:
                        nbb += 1
                        sb += R[i]
                d = depth[j, node]
                ps = _p_split(d, p, alpha, beta)
                pc = _p_split(d + 1, p, alpha, beta)
                leaves_after = n_leaves - 1
                logr = (math.log(n_nog) - math.log(leaves_after)
                        + math.log(1.0 - ps) - math.log(ps) - 2.0 * math.log(1.0 - pc)
                        + _leaf_loglik(na + nbb, sa + sb, sigma2, tau2)
                        - _leaf_loglik(na, sa, sigma2, tau2)
                        - _leaf_loglik(nbb, sb, sigma2, tau2))
                if math.log(np.random.random()) < logr:
                    accepted[PRUNE] += 1
                    for i in range(n):
                        if assign[j, i] == a or assign[j, i] == b:
                            assign[j, i] = node
                    for kk in (a, b):
                        alive[j, kk] = 0
                        var[j, kk] = -1
                        left[j, kk] = -1
                        right[j, kk] = -1
                        parent[j, kk] = -1
                    var[j, node] = -1
                    left[j, node] = -1
                    right[j, node] = -1

            elif move == CHANGE and n_nog > 0:
                nb = 0
                for k in range(cap):
                    if alive[j, k] == 1 and _is_nog(j, k, var, left, right):
                        buf[nb] = k
                        nb += 1
                node = buf[np.random.randint(nb)]
                d = depth[j, node]
                n_cand = p - d - 1
                if n_cand > 0:
                    old = var[j, node]
                    _mark_ancestors(j, node, var, parent, used, 1)
                    used[old] = 1
                    r = np.random.randint(n_cand)
                    v = -1
                    for q in range(p):
                        if used[q] == 0:
                            if r == 0:
                                v = q
                                break
                            r -= 1
                    used[old] = 0
                    _mark_ancestors(j, node, var, parent, used, 0)
                    a = left[j, node]
                    b = right[j, node]
                    oa = 0
                    ob = 0
                    osa = 0.0
                    osb = 0.0
                    na = 0
                    nbb = 0
                    sa = 0.0
                    sb = 0.0
                    for i in range(n):
                        k = assign[j, i]
                        if k == a or k == b:
                            if k == a:
                                oa += 1
                                osa += R[i]
                            else:
                                ob += 1
                                osb += R[i]
                            if X[i, v] == 0:
                                na += 1
                                sa += R[i]
                            else:
                                nbb += 1
                                sb += R[i]
                    if na > 0 and nbb > 0:
                        logr = (_leaf_loglik(na, sa, sigma2, tau2)
                                + _leaf_loglik(nbb, sb, sigma2, tau2)
                                - _leaf_loglik(oa, osa, sigma2, tau2)
                                - _leaf_loglik(ob, osb, sigma2, tau2))
                        if math.log(np.random.random()) < logr:
                            accepted[CHANGE] += 1
                            var[j, node] = v
                            for i in range(n):
                                k = assign[j, i]
                                if k == a or k == b:
                                    assign[j, i] = a if X[i, v] == 0 else b

            elif move == SWAP:
                nb = 0
                for k in range(1, cap):
                    if alive[j, k] == 1 and var[j, k] >= 0:
                        buf[nb] = k
                        nb += 1
                if nb > 0:
                    child = buf[np.random.randint(nb)]
                    top = parent[j, child]
                    for k in range(cap):
                        newvar[k] = var[j, k]
                    sib = right[j, top] if left[j, top] == child else left[j, top]
                    newvar[top] = var[j, child]
                    newvar[child] = var[j, top]
                    if var[j, sib] >= 0 and var[j, sib] == var[j, child]:
                        newvar[sib] = var[j, top]
                    # nodes in the subtree of `top`
                    for k in range(cap):
                        in_sub[k] = 0
                        if alive[j, k] == 1:
                            q = k
                            while q >= 0:
                                if q == top:
                                    in_sub[k] = 1
                                    break
                                q = parent[j, q]
                    for k in range(cap):
                        cnt[k] = 0
                        sm[k] = 0.0
                        cnt2[k] = 0
                        sm2[k] = 0.0
                    for i in range(n):
                        k = assign[j, i]
                        if in_sub[k] == 1:
                            cnt[k] += 1
                            sm[k] += R[i]
                            q = top
                            while newvar[q] >= 0:
                                if X[i, newvar[q]] == 0:
                                    q = left[j, q]
                                else:
                                    q = right[j, q]
                            new_leaf[i] = q
                            cnt2[q] += 1
                            sm2[q] += R[i]
                    ok = True
                    logr = 0.0
                    for k in range(cap):
                        if in_sub[k] == 1 and var[j, k] < 0:
                            if cnt2[k] == 0:
                                ok = False
                                break
                            logr += (_leaf_loglik(cnt2[k], sm2[k], sigma2, tau2)
                                     - _leaf_loglik(cnt[k], sm[k], sigma2, tau2))
                    if ok and math.log(np.random.random()) < logr:
                        accepted[SWAP] += 1
                        for k in range(cap):
                            var[j, k] = newvar[k]
                        for i in range(n):
                            if in_sub[assign[j, i]] == 1:
                                assign[j, i] = new_leaf[i]

            # conjugate leaf draws, then refresh the full residual
            for k in range(cap):
                cnt[k] = 0
                sm[k] = 0.0
            for i in range(n):
                k = assign[j, i]
                cnt[k] += 1
                sm[k] += R[i]
            for k in range(cap):
                if alive[j, k] == 1 and var[j, k] < 0:
                    post_var = 1.0 / (1.0 / tau2 + cnt[k] / sigma2)
                    mu[j, k] = post_var * sm[k] / sigma2 + math.sqrt(post_var) * np.random.normal()
            for i in range(n):
                resid[i] = R[i] - mu[j, assign[j, i]]

        sse = 0.0
        for i in range(n):
            sse += resid[i] * resid[i]
        shape = 0.5 * (nu + n)
        scale = 0.5 * (nu * lam + sse)
        sigma2 = scale / np.random.gamma(shape, 1.0)

        if it >= n_burn:
            kidx = it - n_burn
            sig_chain[kidx] = sigma2
            for j in range(m):
                if pool_n + cap > pool_cap:
                    new_cap = 2 * pool_cap + cap
                    t1 = np.empty(new_cap, np.int32)
                    t1[:pool_n] = pvar[:pool_n]
                    pvar = t1
                    t2 = np.empty(new_cap, np.int32)
                    t2[:pool_n] = pleft[:pool_n]
                    pleft = t2
                    t3 = np.empty(new_cap, np.int32)
                    t3[:pool_n] = pright[:pool_n]
                    pright = t3
                    t4 = np.empty(new_cap)
                    t4[:pool_n] = pmu[:pool_n]
                    pmu = t4
                    pool_cap = new_cap
                # preorder compaction of tree j
                tree_start[kidx, j] = pool_n
                top_s = 0
                order[0] = 0
                count = 0
                while top_s >= 0:
                    k = order[top_s]
                    top_s -= 1
                    remap[k] = count
                    buf[count] = k
                    count += 1
                    if var[j, k] >= 0:
                        top_s += 1
                        order[top_s] = right[j, k]
                        top_s += 1
                        order[top_s] = left[j, k]
                for c in range(count):
                    k = buf[c]
                    pvar[pool_n + c] = var[j, k]
                    pmu[pool_n + c] = mu[j, k]
                    if var[j, k] >= 0:
                        pleft[pool_n + c] = remap[left[j, k]]
                        pright[pool_n + c] = remap[right[j, k]]
                    else:
                        pleft[pool_n + c] = -1
                        pright[pool_n + c] = -1
                pool_n += count

    return (pvar[:pool_n].copy(), pleft[:pool_n].copy(), pright[:pool_n].copy(),
            pmu[:pool_n].copy(), tree_start, sig_chain, proposed, accepted)


@njit(cache=True, parallel=True)
def predict_draws(X, pvar, pleft, pright, pmu, tree_start):
    """Scaled sum-of-trees value of every row under every kept draw: shape (rows, draws)."""
    n = X.shape[0]
    n_draws, m = tree_start.shape
    out = np.zeros((n, n_draws))
    for i in prange(n):
        for d in range(n_draws):
            total = 0.0
            for j in range(m):
                base = tree_start[d, j]
                k = 0
                while pvar[base + k] >= 0:
                    if X[i, pvar[base + k]] == 0:
                        k = pleft[base + k]
                    else:
                        k = pright[base + k]
                total += pmu[base + k]
            out[i, d] = total
    return out
