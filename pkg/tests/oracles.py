"""Independent reference computations used as test oracles."""
import numpy as np

from grover.nn import cross_entropy, forward


def activation_pattern(tape):
    """Every discrete choice the forward pass made: ReLU signs, pool winners,
    global-max positions. Identical patterns mean the network is a single
    smooth piece between two inputs."""
    parts = []
    for k in sorted(tape.branches):
        br = tape.branches[k]
        parts += [br["p1"] > 0, br["take_right"], br["top_arg"], br["top"] > 0]
    return tuple(p.tobytes() for p in parts)


def numerical_gradients(params, E, batch, labels, h=1e-3, dropout_seed=None):
    """Central finite differences of the mean cross-entropy w.r.t. every
    parameter entry and every embedding entry (64-bit).

    Eval mode by default; with ``dropout_seed`` every evaluation runs in train
    mode with the same dropout mask.

    Returns ``(gradients, smooth)``; ``smooth`` is False when some stencil
    point lands on a different activation pattern, i.e. straddles a kink
    where central differences are not a valid oracle.
    """
    def run():
        if dropout_seed is None:
            return forward(params, E, batch, train_mode=False)
        return forward(params, E, batch, train_mode=True, rng=np.random.default_rng(dropout_seed))

    base = activation_pattern(run()[1])
    smooth = True

    def loss():
        nonlocal smooth
        logits, tape = run()
        smooth = smooth and activation_pattern(tape) == base
        return cross_entropy(logits, labels)

    out = {}
    for name, a in list(params.arrays.items()) + [("embedding", E)]:
        num = np.zeros_like(a)
        for idx in np.ndindex(a.shape):
            old = a[idx]
            a[idx] = old + h
            plus = loss()
            a[idx] = old - h
            minus = loss()
            a[idx] = old
            num[idx] = (plus - minus) / (2 * h)
        out[name] = num
    return out, smooth


def relative_error(analytic, numeric, floor=1e-6):
    """Entrywise |a - n| / max(|a|, |n|, floor)."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def exhaustive_neighbors(matrix, itos, cue_id, k, exclude):
    """Score every row with a plain Python loop, then sort by (-sim, id)."""
    u = [float(x) for x in matrix[cue_id]]
    nu = sum(x * x for x in u) ** 0.5
    scored = []
    for i, row in enumerate(matrix):
        if i == cue_id or i in exclude:
            continue
        v = [float(x) for x in row]
        nv = sum(x * x for x in v) ** 0.5
        sim = 0.0 if nv == 0 else sum(a * b for a, b in zip(u, v)) / (nu * nv)
        scored.append((-max(-1.0, min(1.0, sim)), i))
    scored.sort()
    return [(itos[i], -s) for s, i in scored[:k]]


def reference_frequency_order(frequency, specials=(0, 1)):
    return [i for _, i in sorted((int(f), i) for i, f in enumerate(frequency) if i not in specials)]


def count_tokens(docs):
    counts = {}
    for doc in docs:
        for tok in doc.split():
            counts[tok] = counts.get(tok, 0) + 1
    return counts
