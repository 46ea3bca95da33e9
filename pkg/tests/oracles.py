"""Independent brute-force and closed-form oracles shared by the test modules."""

import itertools
from functools import lru_cache

import numpy as np


def kron_lyapunov(A, beta):
    """Independent route: vectorize (A-bI)P + P(A-bI)^T = -I and solve the linear system."""
    n = len(A)
    As = A - beta * np.eye(n)
    M = np.kron(np.eye(n), As) + np.kron(As, np.eye(n))
    return np.linalg.solve(M, -np.eye(n).ravel(order="F")).reshape((n, n), order="F")


def _is_central(i, nc):
    return 0 < i < nc - 1


def _count_ok(i, k, nc, cs):
    if _is_central(i, nc):
        return k == 0 or k >= cs.cnc
    return cs.prc is None or k <= cs.prc


def brute_cost_configurations(cs, ns, nc):
    bwc = cs.bwc if cs.bwc is not None else 1
    out = []
    for vec in itertools.product(range(ns + 1), repeat=nc):
        if sum(vec) != ns * bwc:
            continue
        if any(cs.cc is not None and k > len([j for j in range(ns) if abs(i - j) <= cs.cc])
               for i, k in enumerate(vec)):
            continue
        if all(_count_ok(i, k, nc, cs) for i, k in enumerate(vec)):
            out.append(vec)
    return sorted(out)


def brute_masks(ns, nc, cs):
    bwc = cs.bwc if cs.bwc is not None else 1
    out = []
    for bits in itertools.product((0, 1), repeat=ns * nc):
        a = np.array(bits).reshape(nc, ns)
        i, j = np.indices(a.shape)
        if cs.cc is not None and a[np.abs(i - j) > cs.cc].any():
            continue
        if not (a.sum(axis=0) == bwc).all():
            continue
        if all(_count_ok(r, int(k), nc, cs) for r, k in enumerate(a.sum(axis=1))):
            out.append(tuple(bits))
    return sorted(out)


def _fanouts(net, cs, relay, objective):
    L = net.n_layers
    adj = [c for c in range(net.n_controllers) if net.edge(L - 2, relay, c, cs.cc)]
    subsets = [F for k in range(1, len(adj) + 1) for F in itertools.combinations(adj, k)]
    if objective == "reliability":
        return [F for F in subsets if len(F) == len(adj)]
    if objective == "user_requirement" and cs.user_requirement is not None:
        lo, hi = cs.user_requirement.region_fanout.get(relay, (1, len(adj)))
        return [F for F in subsets if lo <= len(F) <= hi]
    return subsets



def brute_sets(net, cs, objective):
    """Every choice of routes (sensor, relay chain, controller fan-out) meeting the rules."""
    L = net.n_layers
    h = 0 if cs.constraint_layer in (0,) else L - 1
    routes = []
    relay_layers = [range(net.sizes[k]) for k in range(1, L - 1)]
    for s in range(net.n_sensors):
        for chain in itertools.product(*relay_layers):
            hops = [(0, s, chain[0])] + [(k + 1, chain[k], chain[k + 1])
                                         for k in range(len(chain) - 1)]
            if not all(net.edge(layer, u, v, cs.cc) for layer, u, v in hops):
                continue
            for F in _fanouts(net, cs, chain[-1], objective):
                routes.append((s, chain, F))

    def div(r):
        return r[1][0] if h == 0 else r[1][-1]

    D = sorted({div(r) for r in routes})
    if not D:
        return []
    found = []
    for combo in itertools.combinations(routes, len(D)):
        if sorted(div(r) for r in combo) != D:
            continue
        if len({r[0] for r in combo}) != len(combo):
            continue
        if cs.bwc is not None:
            use = {}
            for r in combo:
                for k, n in enumerate(r[1]):
                    use[(k, n)] = use.get((k, n), 0) + 1
            if max(use.values()) > cs.bwc:
                continue
        indeg = [0] * net.n_controllers
        for r in combo:
            for c in r[2]:
                indeg[c] += 1
        ur = cs.user_requirement
        if ur is not None and any(not lo <= indeg[c] <= hi
                                  for c, (lo, hi) in ur.controller_indegree.items()):
            continue
        if objective == "cost" and not all(_count_ok(i, k, net.n_controllers, cs)
                                           for i, k in enumerate(indeg)):
            continue
        found.append(tuple(sorted((r[0],) + r[1] + (c,) for r in combo for c in r[2])))
    return sorted(found)




def brute_feasible(tasks):
    """Exhaustive single-machine search: can every task finish by its deadline?

    Exactly one task may run per slot (every task draws the full capacity).
    """
    tasks = list(tasks)
    horizon = max((t.d for t in tasks), default=0)

    @lru_cache(maxsize=None)
    def go(t, rem):
        if all(r == 0 for r in rem):
            return True
        if t >= horizon:
            return False
        for i, task in enumerate(tasks):
            if rem[i] and t + rem[i] > task.d:
                return False
        ready = [i for i, task in enumerate(tasks) if rem[i] and task.r <= t]
        for i in ready:
            nxt = list(rem)
            nxt[i] -= 1
            if go(t + 1, tuple(nxt)):
                return True
        return go(t + 1, rem)

    return go(0, tuple(t.c for t in tasks))
