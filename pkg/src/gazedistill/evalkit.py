"""Evaluation protocol: angular error, calibration split, personalization,
EU percentile tables, hierarchical bootstrap, and embedding export.

Angles are (yaw, pitch) in degrees per eye; the per-frame error is the
mean over the two eyes of the angle between predicted and ground-truth
unit rays. Each user's frame errors are summarized at percentiles
E50/E75/E90, then aggregated across users at U50/U75/U90, column by
column. Percentiles use linear interpolation at rank (n - 1) * p / 100;
this choice is normative for the package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensorcore.rng import RngStream

PERCENTILES = (50.0, 75.0, 90.0)
CALIBRATION_FRAMES = 9
FRAMES_PER_RECORDING = 64


def gaze_to_vector(yaw_deg: np.ndarray, pitch_deg: np.ndarray) -> np.ndarray:
    """(..., ) angles -> (..., 3) unit rays: (sin y cos p, sin p, cos y cos p)."""
    y = np.radians(np.asarray(yaw_deg, dtype=np.float64))
    p = np.radians(np.asarray(pitch_deg, dtype=np.float64))
    v = np.stack([np.sin(y) * np.cos(p), np.sin(p), np.cos(y) * np.cos(p)], axis=-1)
    return v


def angular_error_deg(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-frame error in degrees, averaged over eyes.

    pred/gt: (..., 4) arrays of [yaw_L, pitch_L, yaw_R, pitch_R] in degrees.
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.shape[-1] != 4:
        raise ValueError(f"angular_error: expected matching (..., 4) arrays, got {pred.shape} vs {gt.shape}")
    errs = []
    for k in (0, 2):  # left eye then right eye
        vp = gaze_to_vector(pred[..., k], pred[..., k + 1])
        vg = gaze_to_vector(gt[..., k], gt[..., k + 1])
        dot = np.clip(np.sum(vp * vg, axis=-1), -1.0, 1.0)
        errs.append(np.degrees(np.arccos(dot)))
    return (errs[0] + errs[1]) / 2.0


def percentile(values: np.ndarray, p: float) -> float:
    """Linear interpolation at rank (n - 1) * p / 100."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    n = v.size
    if n == 0:
        raise ValueError("percentile of empty array")
    h = (n - 1) * p / 100.0
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    return float(v[lo] + (h - lo) * (v[hi] - v[lo]))


def sample_frames(n_frames: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    """Pick 64 uniform frame indices; first 9 by index order calibrate,
    the remaining 55 are the test set. Calibration and test are disjoint."""
    if n_frames < FRAMES_PER_RECORDING:
        raise ValueError(f"recording has {n_frames} frames, needs >= {FRAMES_PER_RECORDING}")
    if n_frames == FRAMES_PER_RECORDING:
        chosen = np.arange(n_frames)
    else:
        # uniform sample without replacement via seeded partial shuffle
        perm = np.argsort(rng.uniform((n_frames,)), kind="stable")
        chosen = np.sort(perm[:FRAMES_PER_RECORDING])
    return chosen[:CALIBRATION_FRAMES].copy(), chosen[CALIBRATION_FRAMES:].copy()


@dataclass
class PersonalizationModel:
    """Additive per-eye bias: [d_yaw_L, d_pitch_L, d_yaw_R, d_pitch_R] degrees."""

    bias: np.ndarray

    def apply(self, preds: np.ndarray) -> np.ndarray:
        return preds + self.bias


def personalize(preds: np.ndarray, gts: np.ndarray) -> PersonalizationModel:
    """Fit the bias minimizing squared residual on calibration frames
    (equivalently the mean residual)."""
    preds = np.asarray(preds, dtype=np.float64)
    gts = np.asarray(gts, dtype=np.float64)
    if preds.ndim != 2 or preds.shape[1] != 4 or preds.shape != gts.shape:
        raise ValueError("personalize: expected matching (N, 4) arrays")
    if preds.shape[0] < 1:
        raise ValueError("personalize: needs at least one calibration frame")
    bias = (gts - preds).mean(axis=0)
    if not np.all(np.isfinite(bias)):
        raise ValueError("personalize: non-finite bias")
    return PersonalizationModel(bias)


# ---------------------------------------------------------------------------
# EU table


@dataclass
class EUReport:
    """grid[i, j] = U-percentile i of users' E-percentile j, in degrees."""

    grid: np.ndarray  # (3, 3)
    ci_lo: np.ndarray | None = None
    ci_hi: np.ndarray | None = None
    n_users: int = 0
    frames_per_user: int = 0

    def cell(self, u: int, e: int) -> float:
        return float(self.grid[PERCENTILES.index(float(u)), PERCENTILES.index(float(e))])

    @property
    def e50u50(self) -> float:
        return float(self.grid[0, 0])

    @property
    def e90u90(self) -> float:
        return float(self.grid[2, 2])


def eu_table(errors_by_user: list[np.ndarray]) -> EUReport:
    """Per-user E percentiles, then U percentiles across users per column."""
    if len(errors_by_user) == 0:
        raise ValueError("eu_table: needs at least one user")
    for e in errors_by_user:
        if np.asarray(e).size < 1:
            raise ValueError("eu_table: every user needs at least one frame")
    e_rows = np.array(
        [[percentile(u, p) for p in PERCENTILES] for u in errors_by_user], dtype=np.float64
    )  # (n_users, 3)
    grid = np.array(
        [[percentile(e_rows[:, j], up) for j in range(3)] for up in PERCENTILES], dtype=np.float64
    )  # (3 user-pcts, 3 error-pcts)
    frames = int(np.asarray(errors_by_user[0]).size)
    return EUReport(grid, n_users=len(errors_by_user), frames_per_user=frames)


def bootstrap_ci(
    errors_by_user: list[np.ndarray],
    iterations: int = 1000,
    rng: RngStream | None = None,
    alpha: float = 0.05,
) -> tuple[np.ndarray, np.ndarray]:
    """Hierarchical bootstrap: users with replacement, then frames within
    each sampled user. Returns (lo, hi) grids at the alpha/2 percentiles.

    Replicate r draws from the stream child("bootstrap", r), so results do
    not depend on evaluation order or worker count. With equal frame
    counts the percentile math is vectorized across replicates
    (np.percentile's default linear interpolation matches `percentile`).
    """
    rng = rng or RngStream(0, 0)
    n_users = len(errors_by_user)
    if n_users == 0:
        raise ValueError("bootstrap_ci: needs at least one user")
    sizes = {np.asarray(e).size for e in errors_by_user}
    if len(sizes) == 1:
        nf = sizes.pop()
        errs = np.stack([np.asarray(e, dtype=np.float64) for e in errors_by_user])
        grids = np.empty((iterations, 3, 3), dtype=np.float64)
        for r in range(iterations):
            rr = rng.child("bootstrap", r)
            users = rr.integers(n_users, (n_users,))
            fidx = rr.integers(nf, (n_users, nf))
            sampled = errs[users[:, None], fidx]  # (users, frames)
            e_rows = np.percentile(sampled, PERCENTILES, axis=1)  # (E-pct, users)
            grids[r] = np.percentile(e_rows, PERCENTILES, axis=1)  # (U-pct, E-pct)
        lo = np.percentile(grids, 100 * alpha / 2, axis=0)
        hi = np.percentile(grids, 100 * (1 - alpha / 2), axis=0)
        return lo, hi
    grids = np.empty((iterations, 3, 3), dtype=np.float64)
    for r in range(iterations):
        rr = rng.child("bootstrap", r)
        users = rr.integers(n_users, (n_users,))
        resampled = []
        for u in users:
            frames = np.asarray(errors_by_user[int(u)])
            idx = rr.integers(frames.size, (frames.size,))
            resampled.append(frames[idx])
        grids[r] = eu_table(resampled).grid
    lo = np.percentile(grids, 100 * alpha / 2, axis=0)
    hi = np.percentile(grids, 100 * (1 - alpha / 2), axis=0)
    return lo, hi


def evaluate_errors(errors_by_user: list[np.ndarray], bootstrap_iters: int = 1000,
                    rng: RngStream | None = None) -> EUReport:
    rep = eu_table(errors_by_user)
    if bootstrap_iters > 0:
        rep.ci_lo, rep.ci_hi = bootstrap_ci(errors_by_user, bootstrap_iters, rng)
    return rep


# ---------------------------------------------------------------------------
# full protocol against a predictor


def evaluate_predictor(
    predict_deg,
    eval_split,
    rng: RngStream,
    bootstrap_iters: int = 1000,
    batch: int = 256,
) -> EUReport:
    """Run the frame-sampling + personalization protocol for one model.

    predict_deg(images_left, images_right) -> (N, 4) degrees. Recordings
    are evaluated per (subject, recording): 9 calibration frames fit the
    additive bias, the remaining 55 frames are scored.
    """
    if eval_split.gaze is None:
        raise ValueError("evaluate_predictor: split carries no ground truth")
    preds = np.empty((len(eval_split), 4), dtype=np.float64)
    for i in range(0, len(eval_split), batch):
        sl = slice(i, min(i + batch, len(eval_split)))
        preds[sl] = predict_deg(eval_split.images_left[sl], eval_split.images_right[sl])
    gts = eval_split.gaze.astype(np.float64)

    errors_by_user: list[np.ndarray] = []
    keys = np.stack([eval_split.subject_ids, eval_split.recording_ids], axis=1)
    uniq = np.unique(keys, axis=0)
    for subject_id, recording_id in uniq:
        mask = (eval_split.subject_ids == subject_id) & (eval_split.recording_ids == recording_id)
        idx = np.flatnonzero(mask)
        order = np.argsort(eval_split.frame_ids[idx], kind="stable")
        idx = idx[order]
        calib, test = sample_frames(idx.size, rng.child("frames", int(subject_id), int(recording_id)))
        model = personalize(preds[idx[calib]], gts[idx[calib]])
        corrected = model.apply(preds[idx[test]])
        errors_by_user.append(angular_error_deg(corrected, gts[idx[test]]))
    return evaluate_errors(errors_by_user, bootstrap_iters, rng.child("ci"))


# ---------------------------------------------------------------------------
# reporting and export


def format_cell(value: float, lo: float | None = None, hi: float | None = None) -> str:
    if lo is None or hi is None:
        return f"{value:.2f}"
    return f"{value:.2f} ({(hi - lo) / 2:.2f})"


def render_table(rows: list[tuple[str, EUReport]], title: str = "") -> str:
    """Plain-text EU table: one row per method, value (ci_halfwidth) cells."""
    header = ["method"] + [f"E{int(e)}U{int(u)}" for u in PERCENTILES for e in PERCENTILES]
    lines = []
    if title:
        lines.append(title)
    widths = [max(24, len(header[0]))] + [14] * (len(header) - 1)
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for name, rep in rows:
        cells = [name.ljust(widths[0])]
        ci = rep.ci_lo is not None
        for ui in range(3):
            for ei in range(3):
                cell = format_cell(
                    rep.grid[ui, ei],
                    rep.ci_lo[ui, ei] if ci else None,
                    rep.ci_hi[ui, ei] if ci else None,
                )
                cells.append(cell.ljust(14))
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"


def write_metrics_csv(path: str | Path, rows: list[tuple[str, int, EUReport]]) -> None:
    """One CSV row per (method, seed, U, E) cell."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["method", "seed", "U", "E", "value_deg", "ci_lo", "ci_hi"])
        for method, seed, rep in rows:
            for ui, u in enumerate(PERCENTILES):
                for ei, e in enumerate(PERCENTILES):
                    lo = rep.ci_lo[ui, ei] if rep.ci_lo is not None else ""
                    hi = rep.ci_hi[ui, ei] if rep.ci_hi is not None else ""
                    wr.writerow(
                        [
                            method,
                            seed,
                            int(u),
                            int(e),
                            f"{rep.grid[ui, ei]:.6f}",
                            f"{lo:.6f}" if lo != "" else "",
                            f"{hi:.6f}" if hi != "" else "",
                        ]
                    )


def export_embeddings(embed_fn, split, path: str | Path, batch: int = 256) -> int:
    """Write sample id, subject id, gaze, and embedding components as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = len(split)
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        first = embed_fn(split.images_left[:1], split.images_right[:1])
        dim = first.shape[1]
        wr.writerow(["sample_id", "subject_id", "yaw_left", "pitch_left"] + [f"e{i}" for i in range(dim)])
        for i in range(0, n, batch):
            sl = slice(i, min(i + batch, n))
            emb = embed_fn(split.images_left[sl], split.images_right[sl])
            gaze = split.gaze if split.gaze is not None else np.zeros((n, 4), dtype=np.float32)
            for j in range(emb.shape[0]):
                row = [
                    i + j,
                    int(split.subject_ids[i + j]),
                    f"{gaze[i + j, 0]:.4f}",
                    f"{gaze[i + j, 1]:.4f}",
                ] + [f"{v:.6g}" for v in emb[j]]
                wr.writerow(row)
    return n
