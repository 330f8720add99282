"""Static report figures (PNG) written next to the delimited outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def city_scatter(joined: Sequence, r: float, path: str | Path, title: str = "") -> Path:
    """Model mean MMI against DYFI CDI, one dot per matched city."""
    fig, ax = plt.subplots(figsize=(5, 5))
    xs = [j.cdi for j in joined]
    ys = [j.mean_mmi for j in joined]
    ax.scatter(xs, ys, s=[8 + 4 * min(j.n_tweets, 25) for j in joined], alpha=0.7)
    lo, hi = 1, 10
    ax.plot([lo, hi], [lo, hi], color="grey", lw=0.8, ls="--")
    ax.set_xlim(lo - 0.5, hi + 0.5)
    ax.set_ylim(lo - 0.5, hi + 0.5)
    ax.set_xlabel("DYFI intensity (CDI)")
    ax.set_ylabel("model mean MMI")
    ax.set_title(f"{title} r = {r:.2f}".strip())
    return _save(fig, path)


def distance_scatter(pairs: Sequence[tuple[float, float]], r: float, path: str | Path, title: str = "") -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter([p[0] for p in pairs], [p[1] for p in pairs], s=6, alpha=0.4)
    ax.set_xlabel("epicentral distance (km)")
    ax.set_ylabel("model MMI")
    ax.set_title(f"{title} r = {r:.2f}".strip())
    return _save(fig, path)


def sensitivity_bars(report, path: str | Path) -> Path:
    """Damage-level and confidence means (std as error bars) per prompt version."""
    versions = [v.version for v in report.versions]
    idx = range(len(versions))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.5))
    a1.bar(idx, [v.dl_mean for v in report.versions], yerr=[v.dl_std for v in report.versions], capsize=3)
    a1.set_ylabel("damage level")
    a2.bar(idx, [v.conf_mean for v in report.versions], yerr=[v.conf_std for v in report.versions],
           capsize=3, color="tab:orange")
    a2.set_ylabel("confidence")
    a2.set_ylim(0, 1.05)
    for ax in (a1, a2):
        ax.set_xticks(list(idx))
        ax.set_xticklabels(versions)
    return _save(fig, path)
