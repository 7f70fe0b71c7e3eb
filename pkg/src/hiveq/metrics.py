"""Learning-curve capture, stability measurement, and run reports.

Stability of a curve x_1..x_T is the Euclidean distance between the curve
and a smoothed version of itself, d = sqrt(sum_t (x_t - xhat_t)^2), averaged
across seeds. Four smoothers are provided: a scalar constant-level Kalman
filter, exponential moving average, double EMA, and the midpoint (average
of max and min) over a rolling window.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from statistics import median
from typing import Sequence

import numpy as np

from .errors import ConfigurationError

CSV_FIELDS = [
    "wall_clock_s",
    "env_steps_total",
    "eval_mean_return",
    "eval_median_return",
    "td_loss",
    "kl_mean_per_container",
    "central_buffer_size",
    "container_buffer_sizes",
    "dropped_episodes",
]


@dataclass
class Curve:
    steps: np.ndarray
    values: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.steps) != len(self.values):
            raise ConfigurationError("curve steps and values must have equal length")
        if len(self.steps) > 1 and not (np.diff(self.steps) > 0).all():
            raise ConfigurationError("curve steps must be strictly increasing")


# -- smoothers ---------------------------------------------------------------


def ema_smooth(x: np.ndarray, factor: float = 0.1) -> np.ndarray:
    out = np.empty_like(x)
    out[0] = x[0]
    for t in range(1, len(x)):
        out[t] = factor * x[t] + (1.0 - factor) * out[t - 1]
    return out


def dema_smooth(x: np.ndarray, factor: float = 0.1) -> np.ndarray:
    e = ema_smooth(x, factor)
    return 2.0 * e - ema_smooth(e, factor)


def midpoint_smooth(x: np.ndarray, window: int = 5) -> np.ndarray:
    out = np.empty_like(x)
    for t in range(len(x)):
        lo = max(0, t - window + 1)
        seg = x[lo : t + 1]
        out[t] = (seg.max() + seg.min()) / 2.0
    return out


def kalman_smooth(x: np.ndarray, noise_ratio: float = 0.01) -> np.ndarray:
    """Scalar Kalman filter with a constant-level model.

    ``noise_ratio`` is process variance over observation variance; small
    values trust the model and smooth aggressively.
    """
    out = np.empty_like(x)
    est = x[0]
    var = 1.0
    q, r = noise_ratio, 1.0
    out[0] = est
    for t in range(1, len(x)):
        var += q
        gain = var / (var + r)
        est = est + gain * (x[t] - est)
        var = (1.0 - gain) * var
        out[t] = est
    return out


SMOOTHERS = {
    "kalman": kalman_smooth,
    "ema": ema_smooth,
    "dema": dema_smooth,
    "midpoint": midpoint_smooth,
}


def stability_distance(curve: Curve | np.ndarray, smoother: str = "kalman", **params) -> float:
    values = curve.values if isinstance(curve, Curve) else np.asarray(curve, dtype=np.float64)
    if len(values) < 2:
        raise ConfigurationError("stability needs a curve of length >= 2")
    try:
        fn = SMOOTHERS[smoother]
    except KeyError:
        raise ConfigurationError(
            f"unknown smoother {smoother!r}; choices: {sorted(SMOOTHERS)}"
        ) from None
    smoothed = fn(values, **params)
    return float(np.sqrt(np.sum((values - smoothed) ** 2)))


def average_stability(curves: Sequence[Curve | np.ndarray], smoother: str = "kalman", **params) -> float:
    if not curves:
        raise ConfigurationError("need at least one curve")
    return float(np.mean([stability_distance(c, smoother, **params) for c in curves]))


# -- run reports -------------------------------------------------------------


def read_metrics_csv(path: Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CSV_FIELDS) <= set(reader.fieldnames):
            missing = set(CSV_FIELDS) - set(reader.fieldnames or [])
            raise ConfigurationError(f"{path}: metrics schema mismatch, missing {sorted(missing)}")
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for key in CSV_FIELDS:
        vals = []
        for row in rows:
            raw = row[key]
            try:
                vals.append(float(raw))
            except ValueError:
                vals.append(np.nan)  # non-numeric columns (e.g. list-valued)
        out[key] = np.array(vals)
    return out


@dataclass
class ConfigSummary:
    name: str
    seeds: list[int]
    final_returns: list[float]
    median_final: float
    variance_final: float
    stability: float


def curve_report(run_dir: str | Path, smoother: str = "kalman") -> list[ConfigSummary]:
    """Aggregate every config under ``run_dir`` across its seeds.

    Expects ``<run_dir>/<config>/seed_<n>/metrics.csv``. Curves are aligned
    on the ratio of elapsed to total training time before the stability
    measure is taken, so configs with different budgets remain comparable.
    """
    run_dir = Path(run_dir)
    summaries = []
    config_dirs = sorted(d for d in run_dir.iterdir() if d.is_dir())
    for cfg_dir in config_dirs:
        seed_dirs = sorted(cfg_dir.glob("seed_*"))
        if not seed_dirs:
            continue
        seeds, finals, curves = [], [], []
        for sd in seed_dirs:
            csv_path = sd / "metrics.csv"
            if not csv_path.exists():
                continue
            data = read_metrics_csv(csv_path)
            returns = data["eval_mean_return"]
            clock = data["wall_clock_s"]
            keep = ~np.isnan(returns)
            returns, clock = returns[keep], clock[keep]
            if len(returns) == 0:
                continue
            seeds.append(int(sd.name.split("_", 1)[1]))
            finals.append(float(returns[-1]))
            total = clock[-1] if clock[-1] > 0 else 1.0
            curves.append(Curve(steps=clock / total, values=returns))
        if not finals:
            continue
        stab = average_stability([c for c in curves if len(c.values) >= 2], smoother) if any(
            len(c.values) >= 2 for c in curves
        ) else 0.0
        summaries.append(
            ConfigSummary(
                name=cfg_dir.name,
                seeds=seeds,
                final_returns=finals,
                median_final=float(median(finals)),
                variance_final=float(np.var(finals)),
                stability=stab,
            )
        )
    if not summaries:
        raise ConfigurationError(f"no runs found under {run_dir}")
    return summaries


def write_report(summaries: list[ConfigSummary], out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    md = out_dir / "summary.md"
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["config", "n_seeds", "median_final", "variance_final", "stability"])
        for s in summaries:
            writer.writerow([s.name, len(s.seeds), s.median_final, s.variance_final, s.stability])
    lines = [
        "| config | seeds | median final return | variance | stability |",
        "|---|---|---|---|---|",
    ]
    for s in summaries:
        lines.append(
            f"| {s.name} | {len(s.seeds)} | {s.median_final:.4f} | "
            f"{s.variance_final:.4f} | {s.stability:.4f} |"
        )
    md.write_text("\n".join(lines) + "\n")
    return md
