"""Dataset generation for every benchmark family, plus CSV ingestion.

All generators are pure functions of their parameters and seed. The dynamical
system iterators here are the single source of truth for both supervised pair
construction and rollout ground truth.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import DataError

SINC_DOMAIN = (-2.0, 2.0)
SINES2D_DOMAIN = (0.0, 1.0)
PEAK_CENTERS = (0.1, 0.3, 0.5, 0.7, 0.9)
PEAK_SHARPNESS = 300.0


@dataclass
class Dataset:
    """Paired input/target matrices with a provenance tag."""

    x: np.ndarray
    y: np.ndarray
    name: str = ""
    split: str = "train"

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape[0] != self.y.shape[0]:
            raise DataError(
                f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}"
            )
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise DataError("dataset contains non-finite values")
        if self.split not in ("train", "test"):
            raise DataError(f"split must be 'train' or 'test', got {self.split!r}")

    @property
    def n(self) -> int:
        return self.x.shape[0]


def stack_datasets(datasets, name="", split="train") -> Dataset:
    return Dataset(
        np.vstack([d.x for d in datasets]),
        np.vstack([d.y for d in datasets]),
        name=name or datasets[0].name,
        split=split,
    )


# --- regression targets ---------------------------------------------------

def sinc1d(x):
    """sin(pi x) / (pi x) with the removable singularity at 0 handled."""
    return np.sinc(np.asarray(x, dtype=float))


def sines2d(x1, x2):
    return np.sin(2.0 * np.pi * x1**2) * np.sin(4.0 * np.pi * x2**2)


def five_peaks(x, centers=PEAK_CENTERS):
    """Mixture of five narrow Gaussian bumps at the given centers."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    for c in centers:
        out += np.exp(-PEAK_SHARPNESS * (x - c) ** 2)
    return out


# Dimensionless benchmark formulas. Ranges are the dataset-generation knob:
# defaults are [0.1, 1] per variable, narrowed where a formula would otherwise
# approach a singularity.
_R = (0.1, 1.0)
FEYNMAN = {
    "I.6.20": (
        lambda v: np.exp(-(v[:, 0] ** 2) / (2 * v[:, 1] ** 2))
        / np.sqrt(2 * np.pi * v[:, 1] ** 2),
        [_R, _R],
    ),
    "I.6.20b": (
        lambda v: np.exp(-((v[:, 0] - v[:, 2]) ** 2) / (2 * v[:, 1] ** 2))
        / np.sqrt(2 * np.pi * v[:, 1] ** 2),
        [_R, _R, _R],
    ),
    "I.9.18": (
        lambda v: v[:, 0]
        / (
            (v[:, 1] - 1.0) ** 2
            + (v[:, 2] - v[:, 3]) ** 2
            + (v[:, 4] - v[:, 5]) ** 2
        ),
        [_R, (1.5, 2.5), _R, _R, _R, _R],
    ),
    "I.12.11": (lambda v: 1.0 + v[:, 0] * np.sin(v[:, 1]), [_R, _R]),
    "I.13.12": (lambda v: v[:, 0] * (1.0 / v[:, 1] - 1.0), [_R, _R]),
    "I.15.3x": (
        lambda v: (1.0 - v[:, 0]) / np.sqrt(1.0 - v[:, 1] ** 2),
        [_R, (0.1, 0.9)],
    ),
    "I.16.6": (lambda v: (v[:, 0] + v[:, 1]) / (1.0 + v[:, 0] * v[:, 1]), [_R, _R]),
    "I.18.4": (lambda v: (1.0 + v[:, 0] * v[:, 1]) / (1.0 + v[:, 0]), [_R, _R]),
    "I.26.2": (lambda v: np.arcsin(v[:, 0] * np.sin(v[:, 1])), [_R, _R]),
    "I.27.6": (lambda v: 1.0 / (1.0 + v[:, 0] * v[:, 1]), [_R, _R]),
}


def feynman_ids():
    return sorted(FEYNMAN)


def _uniform(rng, n, ranges):
    cols = [rng.uniform(lo, hi, n) for lo, hi in ranges]
    return np.column_stack(cols)


def gen_regression(target: str, n_train: int, n_test: int, seed: int = 0,
                   ranges=None):
    """Noise-free regression data with x uniform over the target's box.

    ``target`` is "sinc1d", "sines2d", or "feynman:<id>"; ``ranges`` overrides
    the per-variable sampling intervals.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one train and one test sample")
    rng = np.random.default_rng(seed)
    if target == "sinc1d":
        box = ranges or [SINC_DOMAIN]
        fn = lambda v: sinc1d(v[:, 0])
    elif target == "sines2d":
        box = ranges or [SINES2D_DOMAIN, SINES2D_DOMAIN]
        fn = lambda v: sines2d(v[:, 0], v[:, 1])
    elif target.startswith("feynman:"):
        fid = target.split(":", 1)[1]
        if fid not in FEYNMAN:
            raise ValueError(
                f"unknown Feynman id {fid!r}; supported: {', '.join(feynman_ids())}"
            )
        fn, box = FEYNMAN[fid]
        box = ranges or box
    else:
        raise ValueError(f"unknown regression target {target!r}")

    def make(n, split):
        x = _uniform(rng, n, box)
        y = fn(x).reshape(-1, 1)
        return Dataset(x, y, name=target, split=split)

    return make(n_train, "train"), make(n_test, "test")


# --- Ikeda map --------------------------------------------------------------

@dataclass
class IkedaParams:
    mu: float = 0.9


def ikeda_step(state, p: IkedaParams = IkedaParams()):
    """One iteration of the Ikeda map."""
    x, y = float(state[0]), float(state[1])
    phi = 0.4 - 6.0 / (1.0 + x * x + y * y)
    c, s = math.cos(phi), math.sin(phi)
    return (1.0 + p.mu * (x * c - y * s), p.mu * (x * s + y * c))


def ikeda_trajectory(n_steps: int, init=(0.0, 0.0), p: IkedaParams = IkedaParams()):
    """States [init, f(init), ..., f^n(init)], shape (n_steps+1, 2)."""
    out = np.empty((n_steps + 1, 2))
    out[0] = init
    s = (float(init[0]), float(init[1]))
    for t in range(n_steps):
        s = ikeda_step(s, p)
        out[t + 1] = s
    return out


def ikeda_dataset(n_train: int, n_test: int, transient: int = 1000, seed: int = 0,
                  p: IkedaParams = IkedaParams()):
    """Consecutive-pair data from one trajectory; the test pairs continue the
    same trajectory right after the training segment."""
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one train and one test pair")
    rng = np.random.default_rng(seed)
    init = rng.uniform(-0.5, 0.5, 2)
    traj = ikeda_trajectory(transient + n_train + n_test, init, p)
    states = traj[transient:]
    train = Dataset(states[:n_train], states[1 : n_train + 1],
                    name="ikeda", split="train")
    test = Dataset(states[n_train : n_train + n_test],
                   states[n_train + 1 : n_train + n_test + 1],
                   name="ikeda", split="test")
    return train, test


# --- three-population ecosystem ---------------------------------------------

@dataclass
class EcosystemParams:
    """Chaotic food-chain parameters (producer N, herbivore P, carnivore Q)."""

    K: float = 0.98
    xp: float = 0.4
    yp: float = 2.009
    xq: float = 0.08
    yq: float = 2.876
    n0: float = 0.16129
    p0: float = 0.5

    def __post_init__(self):
        for name in ("K", "xp", "yp", "xq", "yq", "n0", "p0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


def ecosystem_rhs(state, p: EcosystemParams = EcosystemParams()):
    """Right-hand side of the three-population model."""
    N, P, Q = state
    dN = N * (1.0 - N / p.K) - p.xp * p.yp * N * P / (N + p.n0)
    dP = p.xp * P * (p.yp * N / (N + p.n0) - 1.0) - p.xq * p.yq * P * Q / (P + p.p0)
    dQ = p.xq * Q * (p.yq * P / (P + p.p0) - 1.0)
    return np.array([dN, dP, dQ])


def integrate_rk4(rhs, x0, dt: float, n_steps: int):
    """Classical fourth-order Runge-Kutta; returns (n_steps+1, dim) states."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x0 = np.asarray(x0, dtype=float)
    out = np.empty((n_steps + 1, x0.size))
    out[0] = x0
    s = x0.copy()
    for t in range(n_steps):
        k1 = np.asarray(rhs(s))
        k2 = np.asarray(rhs(s + 0.5 * dt * k1))
        k3 = np.asarray(rhs(s + 0.5 * dt * k2))
        k4 = np.asarray(rhs(s + dt * k3))
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(s).all():
            raise DataError(f"integration blew up at step {t + 1}")
        out[t + 1] = s
    return out


def ecosystem_dataset(
    n_train: int = 2000,
    n_test: int = 1000,
    dt: float = 0.01,
    dt_sample: float = 0.1,
    transient_time: float = 100.0,
    seed: int = 0,
    p: EcosystemParams = EcosystemParams(),
):
    """Flow-map pairs state(t) -> state(t + dt_sample) along one attractor
    trajectory, train and test segments contiguous and disjoint."""
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one train and one test pair")
    stride = int(round(dt_sample / dt))
    if stride < 1 or abs(stride * dt - dt_sample) > 1e-9 * dt_sample:
        raise ValueError("dt_sample must be a positive multiple of dt")
    rng = np.random.default_rng(seed)
    # nominal point inside the chaotic attractor's basin; large kicks land in
    # the basin of a carnivore-extinct cycle instead
    init = np.array([0.5, 0.3, 0.8]) * (1.0 + 0.01 * rng.uniform(-1, 1, 3))
    n_states = n_train + n_test + 1
    total_steps = int(round(transient_time / dt)) + stride * (n_states - 1)
    traj = integrate_rk4(lambda s: ecosystem_rhs(s, p), init, dt, total_steps)
    states = traj[int(round(transient_time / dt)) :: stride][:n_states]
    train = Dataset(states[:n_train], states[1 : n_train + 1],
                    name="ecosystem", split="train")
    test = Dataset(states[n_train : n_train + n_test],
                   states[n_train + 1 : n_train + n_test + 1],
                   name="ecosystem", split="test")
    return train, test


# --- continual-learning phases ----------------------------------------------

def gen_five_peaks(n_per_peak: int = 100, centers=PEAK_CENTERS):
    """One dataset per peak: points equally spaced in a window of half the
    center spacing on each side, targets from the full five-peak mixture."""
    centers = tuple(float(c) for c in centers)
    if len(centers) != 5 or any(b <= a for a, b in zip(centers, centers[1:])):
        raise ValueError("need 5 strictly increasing centers")
    spacing = np.mean(np.diff(centers))
    phases = []
    for idx, c in enumerate(centers):
        x = np.linspace(c - spacing / 2, c + spacing / 2, n_per_peak)
        phases.append(
            Dataset(x.reshape(-1, 1), five_peaks(x, centers).reshape(-1, 1),
                    name=f"five_peaks_phase{idx}", split="train")
        )
    return phases


def five_peaks_eval_set(n_points: int = 500, centers=PEAK_CENTERS) -> Dataset:
    """Uniform grid over the union of the phase windows, for full-domain RMSE."""
    centers = tuple(float(c) for c in centers)
    spacing = np.mean(np.diff(centers))
    x = np.linspace(centers[0] - spacing / 2, centers[-1] + spacing / 2, n_points)
    return Dataset(x.reshape(-1, 1), five_peaks(x, centers).reshape(-1, 1),
                   name="five_peaks_full", split="test")


# --- CSV ingestion ------------------------------------------------------------

def load_csv(path, target_column: str, feature_columns=None) -> Dataset:
    """Read a headered CSV into a Dataset; no normalization is applied.

    ``feature_columns`` defaults to every column except the target. Rows with
    missing or non-numeric cells raise a DataError naming the line.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if target_column not in header:
            raise DataError(
                f"{path}: no column {target_column!r}; available: {header}"
            )
        if feature_columns is None:
            feature_columns = [h for h in header if h != target_column]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing feature columns {missing}")
        fidx = [header.index(c) for c in feature_columns]
        tidx = header.index(target_column)
        xs, ys = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                xs.append([float(row[i]) for i in fidx])
                ys.append([float(row[tidx])])
            except (ValueError, IndexError):
                raise DataError(
                    f"{path}: line {lineno}: missing or non-numeric value"
                ) from None
    if not xs:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(xs), np.array(ys),
                   name=os.path.basename(path), split="train")


def split(ds: Dataset, n_train: int, n_test: int, seed: int = 0):
    """Disjoint random train/test subsets, sampled without replacement."""
    if n_train < 1 or n_test < 1:
        raise ValueError("need at least one train and one test row")
    if n_train + n_test > ds.n:
        raise DataError(
            f"insufficient rows: have {ds.n}, need {n_train + n_test}"
        )
    perm = np.random.default_rng(seed).permutation(ds.n)
    tr, te = perm[:n_train], perm[n_train : n_train + n_test]
    return (
        Dataset(ds.x[tr], ds.y[tr], name=ds.name, split="train"),
        Dataset(ds.x[te], ds.y[te], name=ds.name, split="test"),
    )


def save_dataset_csv(ds: Dataset, path) -> None:
    """Write features then targets with x*/y* headers."""
    d, m = ds.x.shape[1], ds.y.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(d)] + [f"y{j}" for j in range(m)])
        for xr, yr in zip(ds.x, ds.y):
            w.writerow([repr(v) for v in xr] + [repr(v) for v in yr])
