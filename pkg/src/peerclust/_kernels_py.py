"""Pure-Python reference kernels.

These define the exact floating-point semantics of the hot loops: every
accumulation runs users ascending, neighbours ascending, points in shard
order, coordinates ascending, in binary64. The compiled extension mirrors
this operation order instruction for instruction, so both implementations
produce bitwise-identical results; tests assert exact equality.

Layout shared with the compiled kernels:
  centers  (m, K, d) float64, C-contiguous
  points   (N, d)    float64, shard rows concatenated in user order
  weights  (N,)      float64
  offsets  (m+1,)    int64, shard i owns rows [offsets[i], offsets[i+1])
  indptr/indices     int64 CSR neighbour lists, sorted ascending
  labels   (N,)      int32 cluster index per point
  amat     (d, d) float64 Mahalanobis matrix, or None for euclidean

Loss codes: 0 kmeans, 1 huber (param = delta), 2 logistic, 3 fair
(param = eta).
"""

import math

IMPLEMENTATION = "python"


def _sqdist_and_dir(x, y, d, amat, dir_buf):
    """Squared metric distance and gradient direction for one pair.

    Euclidean: s = sum (x-y)^2, dir = x - y. Mahalanobis: dir = A (x-y),
    s = (x-y).dir. Fills dir_buf and returns s.
    """
    if amat is None:
        s = 0.0
        for c in range(d):
            t = x[c] - y[c]
            dir_buf[c] = t
            s += t * t
        return s
    for c in range(d):
        acc = 0.0
        for c2 in range(d):
            acc += amat[c, c2] * (x[c2] - y[c2])
        dir_buf[c] = acc
    s = 0.0
    for c in range(d):
        s += (x[c] - y[c]) * dir_buf[c]
    return s


def _gamma(loss_code, s, param):
    if loss_code == 0:
        return 1.0
    if loss_code == 1:
        g = math.sqrt(s)
        if g <= param:
            return 1.0
        return param / g
    if loss_code == 2:
        return 2.0 / (1.0 + math.exp(-s))
    return 4.0 * param * (1.0 - param / (param + s))


def _scalar_loss(loss_code, s, param):
    if loss_code == 0:
        return 0.5 * s
    if loss_code == 1:
        g = math.sqrt(s)
        if g <= param:
            return 0.5 * s
        return param * g - 0.5 * param * param
    if loss_code == 2:
        if s > 30.0:
            return s + math.log1p(math.exp(-s))
        return math.log1p(math.exp(s))
    return 2.0 * param * param * (s / param - math.log1p(s / param))


def assign_clusters(centers, points, offsets, amat, out_labels, user_start, user_end):
    """Nearest-center labels; ties go to the lowest cluster index."""
    k_count = centers.shape[1]
    d = centers.shape[2]
    dir_buf = [0.0] * d
    for i in range(user_start, user_end):
        for r in range(offsets[i], offsets[i + 1]):
            y = points[r]
            best = math.inf
            best_k = 0
            for k in range(k_count):
                s = _sqdist_and_dir(centers[i, k], y, d, amat, dir_buf)
                if s < best:
                    best = s
                    best_k = k
            out_labels[r] = best_k


def grad_field(centers, indptr, indices, points, weights, labels, offsets,
               loss_code, param, inv_rho, amat, out, user_start, user_end):
    """Per-(user, cluster) gradient of the penalized cost.

    out[i, k] = sum_{j in N(i)} (centers[i,k] - centers[j,k])
              + inv_rho * sum_{r in C_i(k)} w_r gamma_r dir_r
    """
    k_count = centers.shape[1]
    d = centers.shape[2]
    dir_buf = [0.0] * d
    for i in range(user_start, user_end):
        for k in range(k_count):
            x = centers[i, k]
            cons = [0.0] * d
            for p in range(indptr[i], indptr[i + 1]):
                j = indices[p]
                xj = centers[j, k]
                for c in range(d):
                    cons[c] += x[c] - xj[c]
            inn = [0.0] * d
            for r in range(offsets[i], offsets[i + 1]):
                if labels[r] != k:
                    continue
                s = _sqdist_and_dir(x, points[r], d, amat, dir_buf)
                coef = weights[r] * _gamma(loss_code, s, param)
                for c in range(d):
                    inn[c] += coef * dir_buf[c]
            row = out[i, k]
            for c in range(d):
                row[c] = cons[c] + inv_rho * inn[c]


def weighted_cost(centers, points, weights, labels, offsets, loss_code, param, amat):
    """J = sum over users asc, clusters asc, points in shard order."""
    k_count = centers.shape[1]
    d = centers.shape[2]
    dir_buf = [0.0] * d
    total = 0.0
    for i in range(len(offsets) - 1):
        partial = [0.0] * k_count
        for r in range(offsets[i], offsets[i + 1]):
            k = labels[r]
            s = _sqdist_and_dir(centers[i, k], points[r], d, amat, dir_buf)
            partial[k] += weights[r] * _scalar_loss(loss_code, s, param)
        for k in range(k_count):
            total += partial[k]
    return total
