"""Independent oracles shared by the test modules.

Nothing here calls into the code under test except to obtain the function
being differentiated.
"""
import numpy as np

# one "criterion N: PASS|FAIL detail" line per acceptance criterion, printed at session end
ACCEPTANCE = []

# entries below this fraction of the largest gradient entry are compared absolutely;
# central-difference roundoff (~eps |f| / h) dominates there
FD_FLOOR = 1e-4


def central_diff(f, arrays, step=1e-6, order=2):
    """Central differences of scalar ``f()`` w.r.t. every entry of every array (mutated in place).

    ``order=4`` uses the five-point stencil, which tolerates a larger step
    when |f| is big enough for roundoff (~eps |f| / h) to matter.
    """
    out = []
    for A in arrays:
        G = np.zeros_like(A, dtype=np.float64)
        for idx in np.ndindex(A.shape):
            orig = A[idx]
            h = step * (1.0 + abs(orig))

            def at(delta):
                A[idx] = orig + delta
                return f()

            if order == 2:
                G[idx] = (at(h) - at(-h)) / (2 * h)
            else:
                G[idx] = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h)
            A[idx] = orig
        out.append(G)
    return out


def max_rel_err(analytic, numeric):
    """max |a - n| / max(|a|, |n|, floor), floor scaled to the largest gradient entry."""
    scale = max(max(float(np.max(np.abs(n))) for n in numeric if n.size) if numeric else 0.0, 1.0)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FD_FLOOR * scale)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)) if a.size else 0.0)
    return worst


def gd_scalar(q, b, phi, k):
    y = 0.0
    for _ in range(k):
        y = y - phi * (q * y + b)
    return y


def nag_companion(q, b, phi, mu, k):
    """y_k for d = 1 from powers of the 2x2 error-propagation matrix.

    With e_t = y_t - y*, e_{t+1} = (1 + beta)(1 - phi q) e_t - beta (1 - phi q) e_{t-1}.
    """
    s = np.sqrt(mu * phi)
    beta = (1 - s) / (1 + s)
    ystar = -b / q
    c = 1 - phi * q
    R = np.array([[(1 + beta) * c, -beta * c], [1.0, 0.0]])
    e0 = -ystar
    e1 = c * e0  # y_1 = -phi b since z_0 = 0
    if k == 0:
        return 0.0
    v = np.linalg.matrix_power(R, k - 1) @ np.array([e1, e0])
    return float(v[0] + ystar)


def rnn_straight_line(V, W1y, W1g, Wh, Q, b, y):
    g = [sum(Q[i][j] * y[j] for j in range(len(y))) + b[i] for i in range(len(y))]
    h = [max(0.0, sum(W1y[r][j] * y[j] + W1g[r][j] * g[j] for j in range(len(y)))) for r in range(len(W1y))]
    for W in Wh:
        h = [max(0.0, sum(W[r][j] * h[j] for j in range(len(h)))) for r in range(len(W))]
    return [sum(V[i][j] * h[j] for j in range(len(h))) for i in range(len(V))]
