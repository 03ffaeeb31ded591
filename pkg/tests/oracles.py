"""Independent reference computations shared by the unit and acceptance
tests. Written for clarity, not speed, and without calling the library
routines they check."""

import itertools
import math

import numpy as np


# ------------------------------------------------------------ extraction

def blob_matrix(rng, n_blobs, size=24, min_sep=8, spread=0.7, radius=1):
    """Sum of isolated Gaussian blobs with distinct peak levels.

    Returns the matrix and the blob centres. Centres are at least
    ``min_sep`` cells apart in Chebyshev distance and each blob is cut to a
    (2 radius + 1) square footprint, so supports never touch."""
    centres = []
    while len(centres) < n_blobs:
        c = tuple(int(v) for v in rng.integers(0, size, 2))
        if all(max(abs(c[0] - d[0]), abs(c[1] - d[1])) >= min_sep for d in centres):
            centres.append(c)
    levels = np.sort(rng.uniform(0.05, 1.0, n_blobs))[::-1]
    R = np.zeros((size, size))
    for (r0, c0), a in zip(centres, levels):
        for r in range(r0 - radius, r0 + radius + 1):
            for c in range(c0 - radius, c0 + radius + 1):
                if 0 <= r < size and 0 <= c < size:
                    R[r, c] += a * math.exp(-((r - r0) ** 2 + (c - c0) ** 2) / (2 * spread ** 2))
    return R, centres


def top_k_local_maxima(R, k):
    """Cells not smaller than any of their 8 neighbours, strongest first."""
    rows, cols = R.shape
    found = []
    for r in range(rows):
        for c in range(cols):
            v = R[r, c]
            if v <= 0:
                continue
            nb = [R[i, j] for i in range(r - 1, r + 2) for j in range(c - 1, c + 2)
                  if (i, j) != (r, c) and 0 <= i < rows and 0 <= j < cols]
            if all(v >= x for x in nb):
                found.append((v, r, c))
    found.sort(key=lambda t: (-t[0], t[1], t[2]))
    return [(r, c) for _, r, c in found[:k]]


def box_energy(R, r, c, s):
    total = 0.0
    for i in range(r - s, r + s + 1):
        for j in range(c - s, c + s + 1):
            if 0 <= i < R.shape[0] and 0 <= j < R.shape[1]:
                total += R[i, j]
    return total


def support_by_enumeration(R, r, c, eps):
    """Smallest half-width whose next ring adds at most ``eps`` of the box
    energy, found by trying every width in turn."""
    for s in range(1, max(R.shape)):
        inner = box_energy(R, r, c, s)
        if inner <= 0 or (box_energy(R, r, c, s + 1) - inner) / inner <= eps:
            return s
    return max(R.shape)


# ----------------------------------------------------------- association

def enumerate_association(beta, xi):
    """Exact association marginals by listing every joint assignment.

    Feature k takes measurement m with weight beta[k, m], stays missed with
    weight 1; an unclaimed measurement contributes xi[m]. Each measurement
    is claimed at most once. Returns (K, M+1) and (M, K+1) marginals with
    column 0 for "none"."""
    beta = np.asarray(beta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    K, M = beta.shape
    pa = np.zeros((K, M + 1))
    pb = np.zeros((M, K + 1))
    total = 0.0
    for a in itertools.product(range(M + 1), repeat=K):
        used = [m for m in a if m]
        if len(used) != len(set(used)):
            continue
        w = 1.0
        for k, m in enumerate(a):
            if m:
                w *= beta[k, m - 1]
        for m in range(M):
            if m + 1 not in used:
                w *= xi[m]
        total += w
        b = [0] * M
        for k, m in enumerate(a):
            if m:
                b[m - 1] = k + 1
        for k, m in enumerate(a):
            pa[k, m] += w
        for m, k in enumerate(b):
            pb[m, k] += w
    return pa / total, pb / total


def is_tree(beta):
    """True when the feature/measurement graph of nonzero entries has no cycle."""
    K, M = beta.shape
    parent = list(range(K + M))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for k in range(K):
        for m in range(M):
            if beta[k, m] > 0:
                a, b = find(k), find(K + m)
                if a == b:
                    return False
                parent[a] = b
    return True


# ----------------------------------------------------------------- ospa

def ospa_brute_force(X, Y, c, p):
    X = [tuple(x) for x in X]
    Y = [tuple(y) for y in Y]
    if len(X) > len(Y):
        X, Y = Y, X
    m, n = len(X), len(Y)
    if n == 0:
        return 0.0
    best = math.inf
    for perm in itertools.permutations(range(n), m):
        s = sum(min(math.dist(X[i], Y[j]), c) ** p for i, j in enumerate(perm))
        best = min(best, s)
    return ((best + c ** p * (n - m)) / n) ** (1 / p)
