"""Dataset statistics: lengths, success rate and PCA projections of actions."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from dexgen.geometry import as_matrix
from dexgen.tasks import ARMS
from dexgen.world import ArmAction

# total variance below this is treated as a constant matrix
DEGENERATE_VARIANCE = 1e-20


@dataclass
class PCAResult:
    mean: np.ndarray
    components: np.ndarray  # (k, d), rows are unit eigenvectors
    eigenvalues: np.ndarray  # all d, descending
    explained_variance_ratio: np.ndarray  # all d, descending

    def project(self, x: np.ndarray) -> np.ndarray:
        p = (np.asarray(x, dtype=float) - self.mean) @ self.components.T
        if p.shape[1] < 2:
            p = np.hstack([p, np.zeros((p.shape[0], 2 - p.shape[1]))])
        return p


def pca(x: np.ndarray, k: int = 2) -> PCAResult | None:
    """Principal components by eigendecomposition of the sample covariance.

    Each eigenvector's largest-magnitude entry is made positive so results are
    reproducible. Returns None when the data has no variance.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        return None
    mean = x.mean(axis=0)
    c = x - mean
    cov = c.T @ c / (x.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order]
    total = float(vals.sum())
    if total <= DEGENERATE_VARIANCE:
        return None
    for j in range(vecs.shape[1]):
        i = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[i, j] < 0:
            vecs[:, j] = -vecs[:, j]
    k = min(k, x.shape[1])
    return PCAResult(mean, vecs[:, :k].T.copy(), vals, vals / total)


def eef_features(a: ArmAction) -> list[float]:
    """Position plus the first two rotation-matrix columns (continuous in orientation)."""
    m = as_matrix(a.target)
    return [*a.target.pos, m[0][0], m[1][0], m[2][0], m[0][1], m[1][1], m[2][1]]


def families() -> list[str]:
    return [f"{kind}_{arm}" for arm in ARMS for kind in ("eef", "hand")]


def _rows(actions: dict[str, Sequence[ArmAction]], t: int) -> dict[str, list[float]]:
    out = {}
    for arm in ARMS:
        a = actions[arm][t]
        out[f"eef_{arm}"] = eef_features(a)
        out[f"hand_{arm}"] = list(a.hand.values)
    return out


@dataclass
class FamilyStats:
    name: str
    dim: int
    explained_variance_ratio: list[float] | None = None
    note: str | None = None
    source_inside_generated_hull: bool | None = None


@dataclass
class StatsReport:
    n_episodes: int
    n_successes: int
    lengths: dict
    families: dict[str, FamilyStats]
    # (label, episode id, t, {family: (pc1, pc2) or None})
    projections: list[tuple[str, str, int, dict]] = field(default_factory=list, repr=False)

    @property
    def success_rate(self) -> float:
        return self.n_successes / self.n_episodes if self.n_episodes else 0.0

    def summary(self) -> dict:
        return {
            "n_episodes": self.n_episodes,
            "success_rate": self.success_rate,
            "lengths": self.lengths,
            "families": {
                k: {
                    "dim": f.dim,
                    "explained_variance_ratio": f.explained_variance_ratio,
                    "note": f.note,
                    "source_inside_generated_hull": f.source_inside_generated_hull,
                }
                for k, f in self.families.items()
            },
        }


def hull_contains(outer: np.ndarray, inner: np.ndarray, tol: float = 1e-9) -> bool:
    """True when every ``inner`` point lies in the convex hull of ``outer``."""
    outer = np.asarray(outer, dtype=float)
    inner = np.asarray(inner, dtype=float)
    if len(inner) == 0:
        return True
    try:
        hull = ConvexHull(outer)
    except (QhullError, ValueError):
        return False
    eq = hull.equations
    return bool(np.all(inner @ eq[:, :-1].T + eq[:, -1] <= tol))


def compute_stats(episodes: Iterable, sources: Iterable = ()) -> StatsReport:
    """Length/success summary and per-family PCA over generated and source actions.

    ``episodes`` and ``sources`` are any objects with ``id``, ``success`` and
    per-arm ``actions``. The PCA basis is fitted on the generated episodes.
    """
    keys: list[tuple[str, str, int]] = []
    data: dict[str, list[list[float]]] = {f: [] for f in families()}
    lengths: list[int] = []
    n_success = 0
    for lab, group in (("generated", episodes), ("source", sources)):
        for e in group:
            H = len(e.actions[ARMS[0]])
            if lab == "generated":
                lengths.append(H)
                n_success += bool(e.success)
            for t in range(H):
                keys.append((lab, e.id, t))
                for f, row in _rows(e.actions, t).items():
                    data[f].append(row)
    if len(lengths) < 2:
        raise ValueError(f"stats need at least 2 episodes, got {len(lengths)}")
    is_gen = np.array([k[0] == "generated" for k in keys])
    fams: dict[str, FamilyStats] = {}
    proj: dict[str, np.ndarray | None] = {}
    for f, rows in data.items():
        x = np.asarray(rows, dtype=float)
        res = pca(x[is_gen])
        fs = FamilyStats(f, x.shape[1])
        if res is None:
            fs.note = "PCA skipped: constant action matrix"
            proj[f] = None
        else:
            fs.explained_variance_ratio = [float(v) for v in res.explained_variance_ratio]
            p = res.project(x)
            proj[f] = p
            if f.startswith("eef") and (~is_gen).any():
                fs.source_inside_generated_hull = hull_contains(p[is_gen], p[~is_gen])
        fams[f] = fs
    projections = [
        (lab, eid, t, {f: None if proj[f] is None else (float(proj[f][i, 0]), float(proj[f][i, 1])) for f in data})
        for i, (lab, eid, t) in enumerate(keys)
    ]
    arr = np.asarray(lengths)
    return StatsReport(
        n_episodes=len(lengths),
        n_successes=n_success,
        lengths={
            "min": int(arr.min()),
            "max": int(arr.max()),
            "mean": float(arr.mean()),
            "median": float(np.median(arr)),
        },
        families=fams,
        projections=projections,
    )


def projections_csv(report: StatsReport) -> str:
    fams = list(report.families)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["label", "episode", "t"] + [f"{f}_pc{i}" for f in fams for i in (1, 2)])
    for lab, eid, t, vals in report.projections:
        row: list = [lab, eid, t]
        for f in fams:
            v = vals[f]
            row += ["", ""] if v is None else [repr(v[0]), repr(v[1])]
        w.writerow(row)
    return buf.getvalue()


def projections_svg(report: StatsReport, max_points: int = 4000) -> str:
    """Scatter plots of the 2-D projections, one panel per family."""
    fams = [f for f in report.families if report.families[f].note is None]
    size, pad = 260, 30
    width = max(1, len(fams)) * (size + pad) + pad
    height = size + 2 * pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for j, f in enumerate(fams):
        pts = [(lab, v[f]) for lab, _, _, v in report.projections if v[f] is not None]
        xs = [p[0] for _, p in pts]
        ys = [p[1] for _, p in pts]
        x0, x1 = min(xs), max(xs)
        y0, y1 = min(ys), max(ys)
        sx = (size - 10) / (x1 - x0) if x1 > x0 else 0.0
        sy = (size - 10) / (y1 - y0) if y1 > y0 else 0.0
        ox = pad + j * (size + pad)
        parts.append(f'<g transform="translate({ox},{pad})">')
        parts.append(f'<rect width="{size}" height="{size}" fill="none" stroke="#888"/>')
        parts.append(f'<text x="0" y="-8">{f}</text>')
        for lab, color, r in (("generated", "#9db4d3", 1.5), ("source", "#c0392b", 2.0)):
            sel = [p for l, p in pts if l == lab]
            stride = max(1, math.ceil(len(sel) / max_points))
            for x, y in sel[::stride]:
                cx = 5 + (x - x0) * sx
                cy = size - 5 - (y - y0) * sy
                parts.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="{r}" fill="{color}"/>')
        parts.append("</g>")
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
