"""Hot inner loops, each in a numba form and a pure-numpy form.

The numba form walks scalars (episode by episode, hour by hour); the numpy
form vectorizes across the batch axis. Which one ``simulate_zone`` and
``domination_ranks`` use is fixed at import time by ``_jit.USE_NUMBA``.
Both forms are importable so the benchmark and the parity tests can call
either directly.
"""
from __future__ import annotations

import numpy as np

from ._jit import USE_NUMBA, njit

# output column order, mirrors domain.OUTPUT_CHANNELS
T_INT, Q_AC, Q_HEAT, Q_PEOPLE, Q_EQP, Q_LIGHT, Q_AHU_C, Q_AHU_H = range(8)


def _simulate_zone_loops(
    t_init, capacity, ua, infiltration, aperture, p_heat, p_cool,
    people_kw, eqp_kw, light_kw, eqp_night, light_night,
    occupied, heat_set, cool_set, vent_cond, t_vent, t_amb, iglob, gain,
):
    n_ep, horizon = occupied.shape
    out = np.empty((n_ep, horizon, 8))
    net = np.empty((n_ep, horizon))
    for b in range(n_ep):
        t = t_init[b]
        for k in range(horizon):
            occ = occupied[b, k]
            q_heat = gain * (heat_set[b, k] - t)
            q_heat = min(max(q_heat, 0.0), p_heat[b])
            q_ac = gain * (t - cool_set[b, k])
            q_ac = min(max(q_ac, 0.0), p_cool[b])
            q_people = people_kw[b] * occ
            q_eqp = eqp_kw[b] * (occ + (1.0 - occ) * eqp_night[b])
            q_light = light_kw[b] * (occ + (1.0 - occ) * light_night[b])
            q_solar = aperture[b] * iglob[b, k]
            dt_out = t_amb[b, k] - t
            q_vent = vent_cond[b, k] * (t_vent[b, k] - t)
            ahu = vent_cond[b, k] * (t_vent[b, k] - t_amb[b, k])
            p_net = (q_heat - q_ac + (q_people + q_eqp + q_light) + q_solar
                     + ua[b] * dt_out + infiltration[b] * dt_out + q_vent)
            t = t + p_net / capacity[b]
            out[b, k, T_INT] = t
            out[b, k, Q_AC] = q_ac
            out[b, k, Q_HEAT] = q_heat
            out[b, k, Q_PEOPLE] = q_people
            out[b, k, Q_EQP] = q_eqp
            out[b, k, Q_LIGHT] = q_light
            out[b, k, Q_AHU_C] = max(-ahu, 0.0)
            out[b, k, Q_AHU_H] = max(ahu, 0.0)
            net[b, k] = p_net
    return out, net


simulate_zone_numba = njit(_simulate_zone_loops)


def simulate_zone_numpy(
    t_init, capacity, ua, infiltration, aperture, p_heat, p_cool,
    people_kw, eqp_kw, light_kw, eqp_night, light_night,
    occupied, heat_set, cool_set, vent_cond, t_vent, t_amb, iglob, gain,
):
    n_ep, horizon = occupied.shape
    out = np.empty((n_ep, horizon, 8))
    net = np.empty((n_ep, horizon))
    t = np.array(t_init, dtype=float)
    for k in range(horizon):
        occ = occupied[:, k]
        q_heat = np.minimum(np.maximum(gain * (heat_set[:, k] - t), 0.0), p_heat)
        q_ac = np.minimum(np.maximum(gain * (t - cool_set[:, k]), 0.0), p_cool)
        q_people = people_kw * occ
        q_eqp = eqp_kw * (occ + (1.0 - occ) * eqp_night)
        q_light = light_kw * (occ + (1.0 - occ) * light_night)
        q_solar = aperture * iglob[:, k]
        dt_out = t_amb[:, k] - t
        q_vent = vent_cond[:, k] * (t_vent[:, k] - t)
        ahu = vent_cond[:, k] * (t_vent[:, k] - t_amb[:, k])
        p_net = (q_heat - q_ac + (q_people + q_eqp + q_light) + q_solar
                 + ua * dt_out + infiltration * dt_out + q_vent)
        t = t + p_net / capacity
        out[:, k, T_INT] = t
        out[:, k, Q_AC] = q_ac
        out[:, k, Q_HEAT] = q_heat
        out[:, k, Q_PEOPLE] = q_people
        out[:, k, Q_EQP] = q_eqp
        out[:, k, Q_LIGHT] = q_light
        out[:, k, Q_AHU_C] = np.maximum(-ahu, 0.0)
        out[:, k, Q_AHU_H] = np.maximum(ahu, 0.0)
        net[:, k] = p_net
    return out, net


def _domination_counts_loops(objectives):
    # dom[i, j] is True when i dominates j (minimisation)
    n, m = objectives.shape
    dom = np.zeros((n, n), dtype=np.bool_)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            better = False
            worse = False
            for d in range(m):
                a = objectives[i, d]
                b = objectives[j, d]
                if a < b:
                    better = True
                elif a > b:
                    worse = True
                    break
            if better and not worse:
                dom[i, j] = True
    return dom


def _peel_fronts(dom):
    n = dom.shape[0]
    rank = np.full(n, -1, dtype=np.int64)
    count = np.zeros(n, dtype=np.int64)
    for j in range(n):
        for i in range(n):
            if dom[i, j]:
                count[j] += 1
    current = np.empty(n, dtype=np.int64)
    size = 0
    for i in range(n):
        if count[i] == 0:
            rank[i] = 0
            current[size] = i
            size += 1
    level = 0
    while size > 0:
        nxt = np.empty(n, dtype=np.int64)
        nsize = 0
        for a in range(size):
            p = current[a]
            for q in range(n):
                if dom[p, q]:
                    count[q] -= 1
                    if count[q] == 0:
                        rank[q] = level + 1
                        nxt[nsize] = q
                        nsize += 1
        level += 1
        current = nxt
        size = nsize
    return rank


_domination_counts_jit = njit(_domination_counts_loops)
_peel_fronts_jit = njit(_peel_fronts)


@njit
def _domination_ranks_jit(objectives):
    return _peel_fronts_jit(_domination_counts_jit(objectives))


def domination_ranks_numba(objectives: np.ndarray) -> np.ndarray:
    return _domination_ranks_jit(np.ascontiguousarray(objectives, dtype=np.float64))


def domination_ranks_numpy(objectives: np.ndarray) -> np.ndarray:
    f = np.asarray(objectives, dtype=float)
    le = np.all(f[:, None, :] <= f[None, :, :], axis=2)
    lt = np.any(f[:, None, :] < f[None, :, :], axis=2)
    dom = le & lt
    count = dom.sum(axis=0)
    rank = np.full(f.shape[0], -1, dtype=np.int64)
    current = np.flatnonzero(count == 0)
    level = 0
    while current.size:
        rank[current] = level
        count = count - dom[current].sum(axis=0)
        count[rank >= 0] = -1
        current = np.flatnonzero(count == 0)
        level += 1
    return rank


if USE_NUMBA:
    simulate_zone = simulate_zone_numba
    domination_ranks = domination_ranks_numba
else:
    simulate_zone = simulate_zone_numpy
    domination_ranks = domination_ranks_numpy
