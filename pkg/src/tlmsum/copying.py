"""How much of a generated abstract is copied from its input, and from which part.

A position counts as copied when the n-gram starting there occurs anywhere in
the source (set membership, not clipped counts). Copied positions are
attributed to the extracted sentences whenever the n-gram occurs there, and to
the rest of the input otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence


def ngram_set(tokens: Sequence, n: int, sentences: Sequence[Sequence] | None = None) -> set[tuple]:
    """All n-grams of ``tokens``; with ``sentences`` only n-grams inside one sentence."""
    if sentences is not None:
        out: set[tuple] = set()
        for s in sentences:
            out |= ngram_set(s, n)
        return out
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def _positions(abstract: Sequence, n: int) -> list[tuple]:
    return [tuple(abstract[i : i + n]) for i in range(len(abstract) - n + 1)]


def copied_count(abstract: Sequence, article: Sequence, n: int) -> int:
    source = ngram_set(article, n)
    return sum(1 for g in _positions(abstract, n) if g in source)


def copied_fraction(abstract: Sequence, article: Sequence, n: int, type_level: bool = False) -> float | None:
    """Share of abstract n-gram positions (or distinct n-grams with ``type_level``) found in the article.

    Returns None when the abstract is shorter than n.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    grams = _positions(abstract, n)
    if not grams:
        return None
    source = ngram_set(article, n)
    if type_level:
        kinds = set(grams)
        return sum(1 for g in kinds if g in source) / len(kinds)
    return sum(1 for g in grams if g in source) / len(grams)


def attribution_counts(abstract: Sequence, extract_tokens: Sequence, other_tokens: Sequence, n: int):
    """(positions, copied from extracts, copied from elsewhere)."""
    ext = ngram_set(extract_tokens, n)
    other = ngram_set(other_tokens, n)
    n_ext = n_other = 0
    grams = _positions(abstract, n)
    for g in grams:
        if g in ext:
            n_ext += 1
        elif g in other:
            n_other += 1
    return len(grams), n_ext, n_other


def copy_source_attribution(abstract: Sequence, extract_tokens: Sequence, other_input_tokens: Sequence,
                            n: int) -> tuple[float, float] | None:
    """(fraction from extracts, fraction from other input), both over all abstract positions."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total, n_ext, n_other = attribution_counts(abstract, extract_tokens, other_input_tokens, n)
    if total == 0:
        return None
    return n_ext / total, n_other / total


@dataclass
class CopyInput:
    """One abstract with its source split into extracted and other input tokens."""

    abstract: Sequence
    extract: Sequence = ()
    other: Sequence = ()


@dataclass
class CopyProfile:
    """Corpus-level copy statistics per n, position weighted."""

    n_max: int
    positions: dict[int, int] = field(default_factory=dict)
    copied: dict[int, int] = field(default_factory=dict)
    from_extract: dict[int, int] = field(default_factory=dict)
    from_other: dict[int, int] = field(default_factory=dict)

    def copied_fraction(self, n: int) -> float | None:
        return self.copied[n] / self.positions[n] if self.positions.get(n) else None

    def attribution(self, n: int) -> tuple[float, float] | None:
        if not self.positions.get(n):
            return None
        return self.from_extract[n] / self.positions[n], self.from_other[n] / self.positions[n]

    def rows(self, model_tag: str = "") -> list[list]:
        out = []
        for n in range(1, self.n_max + 1):
            frac = self.copied_fraction(n)
            if frac is None:
                continue
            fe, fo = self.attribution(n)
            out.append([model_tag, n, frac, fe, fo])
        return out


def profile_corpus(items: Sequence[CopyInput], n_max: int = 25) -> CopyProfile:
    if not items:
        raise ValueError("profile_corpus needs at least one abstract")
    prof = CopyProfile(n_max)
    for n in range(1, n_max + 1):
        pos = cop = fe = fo = 0
        for it in items:
            total, e, o = attribution_counts(it.abstract, it.extract, it.other, n)
            pos, fe, fo = pos + total, fe + e, fo + o
            cop += e + o
        prof.positions[n], prof.copied[n], prof.from_extract[n], prof.from_other[n] = pos, cop, fe, fo
    return prof


CSV_HEADER = ["model_tag", "n", "copied_fraction", "frac_extract", "frac_other"]


def write_profiles_csv(profiles: dict[str, CopyProfile], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for tag, prof in profiles.items():
            w.writerows(prof.rows(tag))


def plot_profiles(profiles: dict[str, CopyProfile], path) -> Path:
    """Copied fraction against n, one line per model; saved as vector graphics."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for tag, prof in profiles.items():
        rows = prof.rows(tag)
        ax.plot([r[1] for r in rows], [r[2] for r in rows], marker="o", ms=3, label=tag)
        if any(r[3] for r in rows):
            ax.plot([r[1] for r in rows], [r[3] for r in rows], ls="--", label=f"{tag} (from extracts)")
    ax.set_xlabel("n-gram length")
    ax.set_ylabel("fraction of abstract n-grams found in input")
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path)
    plt.close(fig)
    return path
