"""Independent reference implementations used to pin expected values.

These deliberately avoid the library's own code paths: the kNN oracle is
a naive double loop, the pass@k oracle samples subsets, the token oracle
is a standalone whitespace counter, and the chunk-count oracle is plain
stride arithmetic. Keep them dumb.
"""

from __future__ import annotations

import random


def word_count_tokens(text: str) -> int:
    """Standalone surrogate-token counter: whitespace runs + line breaks."""
    runs = 0
    in_run = False
    breaks = 0
    for ch in text:
        if ch == "\n":
            breaks += 1
        if ch.isspace():
            in_run = False
        else:
            if not in_run:
                runs += 1
            in_run = True
    return runs + breaks


def brute_force_knn(vectors: list[list[float]], ids: list[str],
                    query: list[float], k: int) -> list[tuple[str, float]]:
    """Exact nearest neighbors by squared L2, double loop, float64 math.

    Accumulates per coordinate in index order; ties break on id.
    """
    scored = []
    for row, chunk_id in zip(vectors, ids):
        total = 0.0
        for a, b in zip(row, query):
            diff = float(a) - float(b)
            total += diff * diff
        scored.append((chunk_id, total))
    scored.sort(key=lambda item: (item[1], item[0]))
    return scored[:k]


def monte_carlo_pass_at_k(n: int, c: int, k: int, samples: int = 1_000_000,
                          seed: int = 12345) -> float:
    """Estimate P(at least one of k sampled runs is usable) by sampling."""
    rng = random.Random(seed)
    population = [True] * c + [False] * (n - c)
    hits = 0
    for _ in range(samples):
        if any(rng.sample(population, k)):
            hits += 1
    return hits / samples


def chunk_count_by_stride(total_lines: int, tokens_per_line: int,
                          budget: int, overlap: int) -> int:
    """Expected chunk count for a uniform-line document.

    Joined text costs tokens_per_line for the first line and
    tokens_per_line + 1 (the newline) for each further line, mirroring the
    splitter's token accounting; this just walks the stride arithmetic.
    """
    def lines_fitting(token_limit: int) -> int:
        # first line: tokens_per_line; each additional: tokens_per_line + 1
        if token_limit < tokens_per_line:
            return 1
        return 1 + (token_limit - tokens_per_line) // (tokens_per_line + 1)

    lines_per_chunk = lines_fitting(budget)
    overlap_lines = lines_fitting(overlap) if overlap >= tokens_per_line else 0
    stride = max(lines_per_chunk - overlap_lines, 1)
    if total_lines <= lines_per_chunk:
        return 1
    count = 1
    position = 0
    while position + lines_per_chunk < total_lines:
        position += stride
        count += 1
    return count


def population_std(values: list[float]) -> float:
    mean = sum(values) / len(values)
    return (sum((v - mean) ** 2 for v in values) / len(values)) ** 0.5
