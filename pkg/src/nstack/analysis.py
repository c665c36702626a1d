"""Stack-reading analysis: PCA projections and reading-over-time matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import StackLm


@dataclass
class Projection:
    points: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d), rows are principal axes
    variance: np.ndarray  # (2,) variance along each axis
    mean: np.ndarray  # (d,)


def pca_2d(x) -> Projection:
    """Center ``x`` (n, d) and project it onto its top two principal axes."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"PCA needs at least 2 points, got {x.shape[0] if x.ndim else 0}")
    mean = x.mean(axis=0)
    xc = x - mean
    # SVD of the centered data; rows of vt are eigenvectors of the covariance
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    k = min(2, vt.shape[0])
    comps = np.zeros((2, x.shape[1]))
    comps[:k] = vt[:k]
    var = np.zeros(2)
    var[:k] = s[:k] ** 2 / (x.shape[0] - 1)
    return Projection(xc @ comps.T, comps, var, mean)


def after_marker_positions(w, marker="#") -> list[int]:
    """0-based positions of the symbols strictly after the first ``marker``."""
    try:
        i = list(w).index(marker)
    except ValueError:
        return []
    return list(range(i + 1, len(w)))


def reading_for_symbol(p: int) -> int:
    """Index into r_0..r_{n-1} of the reading fed to the controller when it predicts symbol ``p`` (0-based).

    Symbol p is predicted from h_p, which consumed r_{p-1}; the first
    symbol is predicted from the initial state and has no reading.
    """
    return p - 1


def collect_readings(model: StackLm, theta, strings, positions=after_marker_positions):
    """Readings at chosen positions, each labeled by the symbol it precedes.

    ``positions(w)`` returns 0-based symbol positions; the default picks every
    symbol between the marker and EOS.
    """
    if model.config.kind == "lstm":
        raise ValueError("the model has no stack, so there are no readings to collect")
    points, labels = [], []
    by_len: dict[int, list] = {}
    for w in strings:
        by_len.setdefault(len(w), []).append(tuple(w))
    for n, ws in sorted(by_len.items()):
        res = model.log_probs(theta, ws, keep_readings=True)
        R = np.stack(res.readings, axis=1) if res.readings else np.zeros((len(ws), 0, model.config.reading_size))
        for b, w in enumerate(ws):
            for p in positions(w):
                i = reading_for_symbol(p)
                if 0 <= i < R.shape[1]:
                    points.append(R[b, i])
                    labels.append(w[p])
    return np.array(points).reshape(len(points), model.config.reading_size), labels


def pca_readings(model: StackLm, theta, strings, positions=after_marker_positions):
    points, labels = collect_readings(model, theta, strings, positions)
    return pca_2d(points), labels


def reading_columns(model: StackLm) -> list[str]:
    """Column names for one reading vector."""
    c = model.config
    if c.kind == "sup":
        return [f"stack{i}.top{j}" for i in range(c.num_stacks) for j in range(c.sup_dim)]
    pairs = [f"q{q}.x{x}" for q in range(c.num_states) for x in range(c.stack_size)]
    if c.kind == "rns":
        return pairs
    return [f"{p}.v{j}" for p in pairs for j in range(c.stack_dim)]


def reading_matrix(model: StackLm, theta, w) -> np.ndarray:
    """Readings r_0..r_{n-1} for one string as a (n, reading_size) matrix."""
    res = model.log_probs(theta, [tuple(w)], keep_readings=True)
    if not res.readings:
        return np.zeros((0, model.config.reading_size))
    return np.stack([r[0] for r in res.readings])


def write_tsv(path, header, rows) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
