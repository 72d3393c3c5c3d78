"""Hot loops.

Every kernel has a vectorised numpy version (``*_np``) and a loop version
compiled with numba (``*_nb``). The public names at the bottom pick one
according to ``OSVILAB_NUMBA``. The fused learner loops only exist in numba
form; their numpy counterpart is the per-step code in ``learners``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# relative margin an action must win by before policy iteration switches to it
IMPROVE_EPS = 1e-12

MODEL_SMOOTHED_MLE = 0
MODEL_FROZEN = 1


def control_solve_np(P, R, gamma, pi_start, max_iter=1000):
    """Policy iteration warm-started at ``pi_start``.

    Returns (V, greedy actions of V with lowest-index ties, iterations).
    """
    n = P.shape[0]
    idx = np.arange(n)
    eye = np.eye(n)
    pi = np.array(pi_start, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        v = np.linalg.solve(eye - gamma * P[idx, pi], R[idx, pi])
        q = R + gamma * (P @ v)
        cur = q[idx, pi]
        best = np.argmax(q, axis=1)
        better = q[idx, best] > cur + IMPROVE_EPS * (1.0 + np.abs(cur))
        if not better.any():
            break
        pi = np.where(better, best, pi)
    return v, np.argmax(q, axis=1), it


@njit
def _pe_solve_nb(P, R, gamma, pi):
    n = P.shape[0]
    A = np.empty((n, n))
    b = np.empty(n)
    for x in range(n):
        a = pi[x]
        for y in range(n):
            A[x, y] = -gamma * P[x, a, y]
        A[x, x] += 1.0
        b[x] = R[x, a]
    return np.linalg.solve(A, b)


@njit
def _q_row_nb(P, R, gamma, v, x, q_row):
    m = P.shape[1]
    n = P.shape[2]
    for a in range(m):
        s = 0.0
        for y in range(n):
            s += P[x, a, y] * v[y]
        q_row[a] = R[x, a] + gamma * s


@njit
def _argmax_row(q_row):
    best = 0
    for a in range(1, q_row.shape[0]):
        if q_row[a] > q_row[best]:
            best = a
    return best


@njit
def control_solve_nb(P, R, gamma, pi_start, max_iter=1000):
    n = P.shape[0]
    m = P.shape[1]
    pi = pi_start.copy()
    greedy = np.empty(n, dtype=np.int64)
    q_row = np.empty(m)
    v = np.zeros(n)
    it = 0
    for it in range(1, max_iter + 1):
        v = _pe_solve_nb(P, R, gamma, pi)
        changed = False
        for x in range(n):
            _q_row_nb(P, R, gamma, v, x, q_row)
            best = _argmax_row(q_row)
            greedy[x] = best
            cur = q_row[pi[x]]
            if q_row[best] > cur + IMPROVE_EPS * (1.0 + abs(cur)):
                pi[x] = best
                changed = True
        if not changed:
            break
    return v, greedy, it


@njit
def _refresh_row_nb(counts, totals, Phat, x, a, lam):
    n = counts.shape[2]
    tot = totals[x, a]
    support = 0
    for y in range(n):
        if counts[x, a, y] > 0:
            support += 1
    for y in range(n):
        p = counts[x, a, y] / tot
        u = 1.0 / support if counts[x, a, y] > 0 else 0.0
        Phat[x, a, y] = (1.0 - lam) * p + lam * u


@njit
def _backup_nb(Phat, rbar, gamma, v, control, pi, out, greedy):
    n = Phat.shape[0]
    m = Phat.shape[1]
    q_row = np.empty(m)
    for x in range(n):
        _q_row_nb(Phat, rbar, gamma, v, x, q_row)
        if control:
            best = _argmax_row(q_row)
            greedy[x] = best
            out[x] = q_row[best]
        else:
            out[x] = q_row[pi[x]]


@njit
def model_learner_run_nb(
    reward, gamma, xs, acts, rewards, nexts, alphas,
    lam, model_kind, Phat0, use_rbar, control, pi_eval, inner_iters, record_every,
):
    """Fused OS-Dyna / Dyna loop.

    ``use_rbar`` selects OS-Dyna (learned auxiliary reward) over Dyna (true
    reward). ``inner_iters == 0`` means exact planning on the current model,
    otherwise that many backups warm-started at the current value.
    """
    n = reward.shape[0]
    m = reward.shape[1]
    T = xs.shape[0]
    counts = np.zeros((n, m, n), dtype=np.int64)
    totals = np.zeros((n, m), dtype=np.int64)
    Phat = Phat0.copy()
    rbar = np.zeros((n, m)) if use_rbar else reward.copy()
    pi = pi_eval.copy()
    if control:
        pi[:] = 0
    if inner_iters == 0:
        if control:
            v, pi, _ = control_solve_nb(Phat, rbar, gamma, pi, 1000)
        else:
            v = _pe_solve_nb(Phat, rbar, gamma, pi)
    else:
        v = np.zeros(n)
    n_rec = T // record_every
    rec_pi = np.empty((n_rec, n), dtype=np.int64)
    rec_v = np.empty((n_rec, n))
    rec_i = 0
    q_row = np.empty(m)
    u = np.empty(n)
    u_next = np.empty(n)
    greedy = pi.copy()
    for t in range(T):
        x = xs[t]
        a = acts[t]
        xp = nexts[t]
        if model_kind == MODEL_SMOOTHED_MLE:
            counts[x, a, xp] += 1
            totals[x, a] += 1
            _refresh_row_nb(counts, totals, Phat, x, a, lam)
        if use_rbar:
            ev = 0.0
            for y in range(n):
                ev += Phat[x, a, y] * v[y]
            target = rewards[t] + gamma * v[xp] - gamma * ev
            rbar[x, a] += alphas[t] * (target - rbar[x, a])
        if inner_iters == 0:
            if control:
                if a == pi[x]:
                    v, pi, _ = control_solve_nb(Phat, rbar, gamma, pi, 1000)
                else:
                    # only Q(x, a) moved; V stays exact unless x's argmax flips
                    _q_row_nb(Phat, rbar, gamma, v, x, q_row)
                    if _argmax_row(q_row) != pi[x]:
                        v, pi, _ = control_solve_nb(Phat, rbar, gamma, pi, 1000)
            elif a == pi[x]:
                v = _pe_solve_nb(Phat, rbar, gamma, pi)
        else:
            u[:] = v
            for _ in range(inner_iters):
                _backup_nb(Phat, rbar, gamma, u, control, pi, u_next, greedy)
                u[:] = u_next
            v = u.copy()
            if control:
                pi[:] = greedy
        if (t + 1) % record_every == 0:
            rec_pi[rec_i] = pi
            rec_v[rec_i] = v
            rec_i += 1
    return rec_pi, rec_v, rbar, v, pi, counts


@njit
def q_learning_run_nb(n_states, n_actions, gamma, xs, acts, rewards, nexts, alphas, record_every):
    T = xs.shape[0]
    Q = np.zeros((n_states, n_actions))
    n_rec = T // record_every
    rec_pi = np.empty((n_rec, n_states), dtype=np.int64)
    rec_i = 0
    for t in range(T):
        x = xs[t]
        a = acts[t]
        xp = nexts[t]
        best = Q[xp, 0]
        for b in range(1, n_actions):
            if Q[xp, b] > best:
                best = Q[xp, b]
        Q[x, a] += alphas[t] * (rewards[t] + gamma * best - Q[x, a])
        if (t + 1) % record_every == 0:
            for s in range(n_states):
                rec_pi[rec_i, s] = _argmax_row(Q[s])
            rec_i += 1
    return rec_pi, Q


@njit
def td_run_nb(n_states, gamma, xs, rewards, nexts, alphas, record_every):
    T = xs.shape[0]
    V = np.zeros(n_states)
    n_rec = T // record_every
    rec_v = np.empty((n_rec, n_states))
    rec_i = 0
    for t in range(T):
        x = xs[t]
        V[x] += alphas[t] * (rewards[t] + gamma * V[nexts[t]] - V[x])
        if (t + 1) % record_every == 0:
            rec_v[rec_i] = V
            rec_i += 1
    return rec_v, V


def control_solve(P, R, gamma, pi_start, max_iter=1000):
    P = np.ascontiguousarray(P, dtype=np.float64)
    R = np.ascontiguousarray(R, dtype=np.float64)
    pi_start = np.ascontiguousarray(pi_start, dtype=np.int64)
    if USE_NUMBA:
        return control_solve_nb(P, R, float(gamma), pi_start, max_iter)
    return control_solve_np(P, R, gamma, pi_start, max_iter)
