"""Word-level visual consistency: monotone shortest-path alignment of two
glimpse-vector sequences under cosine distance.

The dynamic program fills a cumulative matrix S where S[i, j] is the cheapest
cost of any monotone path (moves: right, down, diagonal) from the top-left
cell to (i, j); the loss is the differentiable sum of distance entries along
the recovered optimal path, with the path itself treated as a constant
(subgradient through the hard min).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

# Backtracking tie-break order: diagonal, then up, then left.
_MOVES = ((-1, -1), (-1, 0), (0, -1))


@dataclass
class DistanceMatrix:
    """Pairwise cosine distances, entries kept as scalar tensors for backprop."""

    entries: list  # Tw x Ts nested list of scalar Tensors
    values: np.ndarray  # float view of the same matrix

    @property
    def shape(self):
        return self.values.shape


@dataclass
class AlignmentResult:
    cumulative: np.ndarray
    path: list  # [(i, j)] from (0, 0) to (Tw-1, Ts-1), monotone
    total: float


def cosine_distance_matrix(glimpses_teacher, glimpses_student):
    """Distance matrix d_ij = 1 - cos(teacher_i, student_j).

    Teacher glimpses are treated as detached constants; gradients flow only
    into the student side.
    """
    if len(glimpses_teacher) == 0 or len(glimpses_student) == 0:
        raise ValueError("cosine_distance_matrix: empty glimpse sequence")
    teacher_const = [ad.constant(z.data if isinstance(z, ad.Tensor) else z) for z in glimpses_teacher]
    entries = []
    values = np.empty((len(teacher_const), len(glimpses_student)))
    for i, zt in enumerate(teacher_const):
        row = []
        for j, zs in enumerate(glimpses_student):
            d = ad.sub(ad.constant(1.0), ad.cosine_similarity(zt, zs))
            row.append(d)
            values[i, j] = d.item()
        entries.append(row)
    return DistanceMatrix(entries=entries, values=values)


def shortest_path(distances):
    """Cheapest monotone path from the first to the last cell.

    Boundary cells admit only straight-line predecessors; interior cells take
    the min over left, up, and diagonal. Accepts a DistanceMatrix or a plain
    2-d array.
    """
    d = distances.values if isinstance(distances, DistanceMatrix) else np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.size == 0:
        raise ValueError(f"shortest_path: need a non-empty 2-d matrix, got shape {d.shape}")
    rows, cols = d.shape
    s = np.empty_like(d)
    s[0, 0] = d[0, 0]
    for i in range(1, rows):
        s[i, 0] = s[i - 1, 0] + d[i, 0]
    for j in range(1, cols):
        s[0, j] = s[0, j - 1] + d[0, j]
    for i in range(1, rows):
        for j in range(1, cols):
            s[i, j] = min(s[i - 1, j], s[i, j - 1], s[i - 1, j - 1]) + d[i, j]

    path = [(rows - 1, cols - 1)]
    i, j = rows - 1, cols - 1
    while (i, j) != (0, 0):
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            best = None
            for di, dj in _MOVES:
                cost = s[i + di, j + dj]
                if best is None or cost < best_cost:
                    best, best_cost = (i + di, j + dj), cost
            i, j = best
        path.append((i, j))
    path.reverse()
    return AlignmentResult(cumulative=s, path=path, total=float(s[-1, -1]))


def brute_force_shortest_path(d):
    """Exact minimum over all monotone paths by exhaustive enumeration.

    Test oracle only; rejected beyond 7x7 (path count grows combinatorially).
    """
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 2 or d.size == 0:
        raise ValueError("brute_force_shortest_path: need a non-empty 2-d matrix")
    rows, cols = d.shape
    if rows > 7 or cols > 7:
        raise ValueError(f"brute_force_shortest_path: {rows}x{cols} exceeds the 7x7 enumeration guard")

    best = np.inf

    def walk(i, j, acc):
        nonlocal best
        acc += d[i, j]
        if (i, j) == (rows - 1, cols - 1):
            best = min(best, acc)
            return
        if i + 1 < rows and j + 1 < cols:
            walk(i + 1, j + 1, acc)
        if i + 1 < rows:
            walk(i + 1, j, acc)
        if j + 1 < cols:
            walk(i, j + 1, acc)

    walk(0, 0, 0.0)
    return best


def character_glimpses(trace, eos_id):
    """Glimpse vectors of the character steps, dropping the EOS emission step."""
    return [z for tok, z in zip(trace.tokens, trace.glimpses) if tok != eos_id]


def wvcr_loss(trace_teacher_weak, trace_student_strong, eos_id):
    """Alignment cost between teacher and student glimpse sequences.

    Returns (loss, AlignmentResult | None); a trace with zero character steps
    contributes a constant zero loss and None for the alignment (callers flag
    those in their metrics).
    """
    zw = character_glimpses(trace_teacher_weak, eos_id)
    zs = character_glimpses(trace_student_strong, eos_id)
    if not zw or not zs:
        return ad.constant(0.0), None
    dist = cosine_distance_matrix(zw, zs)
    result = shortest_path(dist)
    terms = [dist.entries[i][j] for i, j in result.path]
    loss = terms[0]
    for term in terms[1:]:
        loss = ad.add(loss, term)
    return loss, result
