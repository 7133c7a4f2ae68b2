"""Experiment orchestration: decay scans of commutator averages, configs, outputs.

Estimator used by the decay scan
--------------------------------
For each sample the observables ``F(z) = sum_x g(x - z) Xi^{o,n}_{ij}(x)`` are
computed for every translation ``z`` at once, and the covariance at separation
``L e`` is estimated by the torus average ``mean_z F_ij(z) F_ml(z + L e)``.

* ``abar^1`` enters as a deterministic matrix: the mean of the per-sample torus
  averages over the whole scan.  (With per-sample centering, ``sum_z F(z) = 0``
  exactly, which shifts every covariance by ``-O(M^{-d})`` and swamps the decay.)
  ``F`` is affine in ``abar^1``, so per-sample cross-correlations of its pieces
  are stored and combined once the scan mean is known.
* Control variate: the local part ``Ft(z) = sum_x g(x - z) (a_ji - E a_ji)`` has an
  exactly computable covariance (Hermite expansion of the coefficient map).
  ``P = Pt_exact + E[F F' - Ft Ft']``, estimated without bias.

Standard errors come from 8 batch means.  The plain estimator (sample
covariance of ``F[g]`` and ``F[g']`` at one window pair) is reported alongside.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .commutator import standard_component
from .correctors import commutator_hierarchy, max_depth
from .elliptic import ConvergenceError
from .ensemble import (CoefficientMap, EnsembleSpec, SpectralCovariance, coefficient_covariance,
                       coefficient_mean, lattice_covariance, sample_coefficient)
from .fitting import fit_power_law
from .grid import TorusGrid, gradient, irfft, rfft
from .parallel import map_samples
from .sensitivity import (TestFunction, bump_eval, cov_bound_rhs_shifts, observable_shifts,
                          representation_derivative)

log = logging.getLogger(__name__)

__all__ = ["ExperimentConfig", "DecayScanResult", "RunManifest", "run_decay_scan", "fit_power_law",
           "load_config", "write_csv", "theorem_envelope", "sample_covariance"]

NBATCH = 8


def _floats(text):
    return [float(v) for v in str(text).replace(",", " ").split()]


def _ints(text):
    return [int(v) for v in str(text).replace(",", " ").split()]


@dataclass
class ExperimentConfig:
    """Decay-scan parameters; see ``load_config`` for the file format."""

    d: int = 2
    M: int = 1024
    alpha0: float = 1.0
    length: float = 1.0
    amplitude: float = 1.0
    family: str = "stable"
    lam: float = 0.25
    map_kind: str = "scalar-logistic"
    skew: float = 0.5
    order: int = 0  # 0 means ceil(d/2)
    radii: list = field(default_factory=lambda: [8.0])
    lags: list = field(default_factory=lambda: [64, 128, 256])
    direction: int = 0
    components: tuple = (0, 0, 0, 0)
    samples: int = 512
    seed: int = 0
    tol: float = 1e-8
    profile_samples: int = 0
    control_variate: bool = True
    sizes: list = field(default_factory=lambda: [32, 64, 128])
    steps: list = field(default_factory=lambda: [1e-3, 5e-4, 2.5e-4, 1.25e-4])
    index: int = 0
    output: str = "out"

    def __post_init__(self):
        self.radii = [float(r) for r in self.radii]
        self.lags = [int(v) for v in self.lags]
        self.components = tuple(int(c) for c in self.components)
        self.sizes = [int(v) for v in self.sizes]
        self.steps = [float(v) for v in self.steps]
        if self.order == 0:
            self.order = max_depth(self.d)

    def validate(self, scan: bool = True):
        """Check field ranges; ``scan`` adds the decay-scan geometry constraints."""
        TorusGrid(self.d, self.M)
        if self.samples < 1 or self.index < 0:
            raise ValueError("samples must be positive and index nonnegative")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")
        for M in self.sizes:
            TorusGrid(self.d, M)
        if any(t <= 0 for t in self.steps):
            raise ValueError("Gateaux steps must be positive")
        self.spec()  # ensemble parameters
        if not scan:
            return self
        if not 1 <= self.order <= max_depth(self.d):
            raise ValueError(f"order must lie in 1..{max_depth(self.d)}")
        if len(self.components) != 4 or not all(0 <= c < self.d for c in self.components):
            raise ValueError("components must be four indices in 0..d-1")
        if not 0 <= self.direction < self.d:
            raise ValueError("direction must be an axis index")
        if not self.radii or not self.lags:
            raise ValueError("radii and lags must be nonempty")
        if max(self.lags) + 2 * max(self.radii) > self.M / 2:
            raise ValueError("max(L) + 2 max(R) must not exceed M/2")
        for R in self.radii:
            for L in self.lags:
                if L < 4 * R:
                    raise ValueError(f"pair R={R}, L={L} violates L >= 4R")
        if self.samples < NBATCH:
            raise ValueError(f"need at least {NBATCH} samples for batch means")
        return self

    def spec(self) -> EnsembleSpec:
        return EnsembleSpec(TorusGrid(self.d, self.M),
                            SpectralCovariance(self.alpha0, self.length, self.amplitude, self.family),
                            CoefficientMap(self.lam, self.map_kind, self.skew), self.seed)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["ensemble"] = dict(d=self.d, M=self.M, alpha0=repr(self.alpha0), length=repr(self.length),
                              amplitude=repr(self.amplitude), family=self.family, lam=repr(self.lam),
                              map=self.map_kind, skew=repr(self.skew), seed=self.seed)
        cp["scan"] = dict(order=self.order, radii=" ".join(repr(r) for r in self.radii),
                          lags=" ".join(str(v) for v in self.lags), direction=self.direction,
                          components=" ".join(str(c) for c in self.components),
                          samples=self.samples, tol=repr(self.tol),
                          profile_samples=self.profile_samples,
                          control_variate=str(self.control_variate).lower())
        cp["moments"] = dict(sizes=" ".join(str(v) for v in self.sizes))
        cp["repcheck"] = dict(steps=" ".join(repr(t) for t in self.steps))
        cp["sample"] = dict(index=self.index)
        cp["output"] = dict(dir=self.output)
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def digest(self) -> str:
        return hashlib.sha256(self.to_ini().encode()).hexdigest()


_KEYS = {
    ("ensemble", "d"): ("d", int), ("ensemble", "m"): ("M", int),
    ("ensemble", "alpha0"): ("alpha0", float), ("ensemble", "length"): ("length", float),
    ("ensemble", "amplitude"): ("amplitude", float), ("ensemble", "family"): ("family", str),
    ("ensemble", "lam"): ("lam", float), ("ensemble", "map"): ("map_kind", str),
    ("ensemble", "skew"): ("skew", float), ("ensemble", "seed"): ("seed", int),
    ("scan", "order"): ("order", int), ("scan", "radii"): ("radii", _floats),
    ("scan", "lags"): ("lags", _ints), ("scan", "direction"): ("direction", int),
    ("scan", "components"): ("components", _ints), ("scan", "samples"): ("samples", int),
    ("scan", "tol"): ("tol", float), ("scan", "profile_samples"): ("profile_samples", int),
    ("scan", "control_variate"): ("control_variate", lambda v: str(v).lower() in ("1", "true", "yes", "on")),
    ("moments", "sizes"): ("sizes", _ints), ("repcheck", "steps"): ("steps", _floats),
    ("sample", "index"): ("index", int), ("output", "dir"): ("output", str),
}


def config_from_parser(cp: configparser.ConfigParser, overrides=None) -> ExperimentConfig:
    kw = {}
    for sec in cp.sections():
        for key, val in cp[sec].items():
            if (sec, key) not in _KEYS:
                raise ValueError(f"unknown config key [{sec}] {key}")
            name, conv = _KEYS[(sec, key)]
            kw[name] = conv(val)
    for item in overrides or ():
        k, _, v = item.partition("=")
        sec, _, key = k.strip().lower().partition(".")
        if (sec, key) not in _KEYS:
            raise ValueError(f"unknown override {k!r} (use section.key=value)")
        name, conv = _KEYS[(sec, key)]
        kw[name] = conv(v.strip())
    return ExperimentConfig(**kw)


def load_config(path=None, overrides=None) -> ExperimentConfig:
    """Read an INI file with sections ``[ensemble]``, ``[scan]``, ``[output]``.

    ``overrides`` are ``section.key=value`` strings applied after the file.
    """
    cp = configparser.ConfigParser()
    if path is not None:
        with open(path) as fh:
            cp.read_file(fh)
    return config_from_parser(cp, overrides)


# -- scan -------------------------------------------------------------------

def theorem_envelope(d: int, alpha0: float, R, L):
    """``R^{-d/2} (ln R)^{1/2} L^{-d/2-alpha0} ln(L/R)`` (even d; no ``ln R`` factor for odd d)."""
    R = np.asarray(R, dtype=float)
    L = np.asarray(L, dtype=float)
    env = R ** (-d / 2) * L ** (-d / 2 - alpha0) * np.log(L / R)
    if d % 2 == 0:
        env = env * np.sqrt(np.log(R))
    return env


def _xcorr_at(F1, F2, shifts):
    C = irfft(np.conj(rfft(F1)) * rfft(F2), F1.shape) / F1.size
    return np.array([C[s] for s in shifts])


def _pieces(h, n, i, j):
    """``(A, [B_l])`` with ``Xi^{o,n}_{ij} = A - sum_l abar^1_{jl} B_l``."""
    d = h.d
    gw = gradient(h.phi[(i,)])
    gw[i] += 1.0
    base = standard_component(h, n, i, j)
    row = h.dual.abar[1][()][:, j]
    A = base + sum(row[l] * gw[l] for l in range(d))
    return A, [gw[l] for l in range(d)], row


def _scan_sample(args):
    cfg, index, ctx = args
    spec = cfg.spec()
    d = cfg.d
    n = cfg.order
    i, j, m, l = cfg.components
    try:
        a = sample_coefficient(spec, index)
        prof = index < cfg.profile_samples
        h = commutator_hierarchy(a, n, primal=(i, m), dual=(j, l), tol=cfg.tol, top_flux=prof)
    except ConvergenceError as exc:
        log.warning("sample %d skipped: %s", index, exc)
        return None
    A1, B1, row_j = _pieces(h, n, i, j)
    A2, B2, row_l = _pieces(h, n, m, l)
    shifts = [tuple(L if k == cfg.direction else 0 for k in range(d)) for L in cfg.lags]
    origin = (0,) * d
    out = dict(row_j=row_j, row_l=row_l, R={})
    Ea = ctx["mean_a"]
    for R in cfg.radii:
        g0 = bump_eval(TestFunction(R), spec.grid)
        f1 = [observable_shifts(g0, A1)] + [observable_shifts(g0, b) for b in B1]
        f2 = [observable_shifts(g0, A2)] + [observable_shifts(g0, b) for b in B2]
        CC = np.array([[_xcorr_at(u, v, shifts) for v in f2] for u in f1])
        # single-window values: F[g] at the origin and F[g'] at L e
        w1 = np.array([u[origin] for u in f1])
        w2 = np.array([[v[s] for s in shifts] for v in f2])
        rec = dict(CC=CC, w1=w1, w2=w2)
        if cfg.control_variate:
            t1 = observable_shifts(g0, a[j, i] - Ea[j, i])
            t2 = t1 if (m, l) == (i, j) else observable_shifts(g0, a[l, m] - Ea[l, m])
            rec["cv"] = _xcorr_at(t1, t2, shifts)
        if prof:
            rec["pF"] = representation_derivative(h, TestFunction(R), i, j, n, tol=cfg.tol).norm_field() ** 2
            rec["pH"] = (rec["pF"] if (m, l) == (i, j) else
                         representation_derivative(h, TestFunction(R), m, l, n, tol=cfg.tol).norm_field() ** 2)
        out["R"][R] = rec
    return out


@dataclass
class DecayScanResult:
    config: ExperimentConfig
    rows: list  # dicts: R, L, P, stderr, n_samples, envelope, stable, P_local, P_plain, stderr_plain
    fits: dict
    envelope_constant: float
    cov_constant: float = float("nan")
    cov_theory: float = float("nan")
    cov_constant_margin: float = float("nan")
    skipped: int = 0
    valid: bool = True
    abar_row: list = field(default_factory=list)

    def table(self, R=None):
        rows = self.rows if R is None else [r for r in self.rows if r["R"] == R]
        return rows

    def summary(self) -> dict:
        return dict(fits=self.fits, envelope_constant=self.envelope_constant,
                    cov_constant=self.cov_constant, cov_theory=self.cov_theory,
                    cov_constant_margin=self.cov_constant_margin,
                    skipped=self.skipped, valid=self.valid, abar_row=self.abar_row,
                    points=[{k: r[k] for k in ("R", "L", "P", "stderr", "stable", "P_local",
                                               "P_plain", "stderr_plain", "cov_rhs")}
                            for r in self.rows])


def _batch_stats(values):
    """Mean and batch-means standard error of per-sample values (axis 0)."""
    values = np.asarray(values)
    batches = np.array([b.mean(axis=0) for b in np.array_split(values, NBATCH)])
    return values.mean(axis=0), batches.std(axis=0, ddof=1) / np.sqrt(NBATCH), batches


def sample_covariance(x, y):
    """Unbiased sample covariance of ``x`` (N,) with each column of ``y`` (N, ...),
    with a batch-means standard error."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    N = len(x)
    if N < NBATCH:
        raise ValueError(f"need at least {NBATCH} samples")
    xc = (x - x.mean()).reshape((N,) + (1,) * (y.ndim - 1))
    prod = xc * (y - y.mean(axis=0)) * (N / (N - 1))
    cov, se, _ = _batch_stats(prod)
    return cov, se


def _fit_points(x, y, se, stable):
    sel = np.asarray(stable, dtype=bool)
    if sel.sum() < 3:
        return dict(slope=float("nan"), prefactor=float("nan"), slope_stderr=float("nan"),
                    points=int(sel.sum()), note="fewer than three sign-stable points")
    fit = fit_power_law(np.asarray(x)[sel], np.abs(np.asarray(y)[sel]), np.asarray(se)[sel])
    return dict(slope=fit.slope, prefactor=fit.prefactor, slope_stderr=fit.slope_stderr,
                points=fit.npoints, note="")


def run_decay_scan(cfg: ExperimentConfig, workers: int | None = None) -> DecayScanResult:
    """Monte Carlo estimate of ``P = Cov(F_ij[g], F_ml[g'])`` over the ``(R, L)`` grid."""
    cfg.validate()
    spec = cfg.spec()
    d = cfg.d
    i, j, m, l = cfg.components
    ctx = dict(mean_a=coefficient_mean(spec))
    res = map_samples(_scan_sample, [(cfg, k, ctx) for k in range(cfg.samples)], workers)
    good = [r for r in res if r is not None]
    skipped = len(res) - len(good)
    valid = skipped <= 0.01 * cfg.samples
    if not good:
        raise RuntimeError("every sample failed")
    row_j = np.mean([r["row_j"] for r in good], axis=0)
    row_l = np.mean([r["row_l"] for r in good], axis=0)
    v1 = np.concatenate([[1.0], -row_j])
    v2 = np.concatenate([[1.0], -row_l])
    shifts = [tuple(L if k == cfg.direction else 0 for k in range(d)) for L in cfg.lags]
    nl = len(cfg.lags)

    if cfg.control_variate:
        K = coefficient_covariance(spec, (j, i), (l, m))
    c_field = lattice_covariance(spec.covariance, spec.grid)
    slope2 = spec.cmap.slope_bound(d) ** 2
    rows = []
    for R in cfg.radii:
        recs = [r["R"][R] for r in good]
        Y = np.array([np.einsum("p,q,pqL->L", v1, v2, rc["CC"]) for rc in recs])
        g0 = bump_eval(TestFunction(R), spec.grid)
        if cfg.control_variate:
            Pt_field = irfft(rfft(K) * np.abs(rfft(g0)) ** 2, spec.grid.shape)
            P_local = np.array([Pt_field[s] for s in shifts])
            Z = Y - np.array([rc["cv"] for rc in recs])
        else:
            P_local = np.zeros(nl)
            Z = Y
        zmean, zse, zb = _batch_stats(Z)
        P = P_local + zmean
        batches = P_local + zb
        stable = np.all(np.sign(batches) == np.sign(P), axis=0) & (P != 0)
        # plain single-window sample covariance
        F1 = np.array([v1 @ rc["w1"] for rc in recs])
        F2 = np.array([v2 @ rc["w2"] for rc in recs])
        pp, ppse = sample_covariance(F1, F2)
        rhs = np.full(nl, np.nan)
        if cfg.profile_samples > 0:
            pF = np.sqrt(np.mean([rc["pF"] for rc in recs if "pF" in rc], axis=0))
            pH = np.sqrt(np.mean([rc["pH"] for rc in recs if "pH" in rc], axis=0))
            allr = cov_bound_rhs_shifts(pF, pH, c_field)
            rhs = np.array([allr[s] for s in shifts])
        env = theorem_envelope(d, cfg.alpha0, R, cfg.lags)
        for q, L in enumerate(cfg.lags):
            rows.append(dict(R=R, L=L, P=float(P[q]), stderr=float(zse[q]), n_samples=len(good),
                             envelope=float(env[q]), stable=bool(stable[q]),
                             P_local=float(P_local[q]), P_plain=float(pp[q]),
                             stderr_plain=float(ppse[q]), cov_rhs=float(rhs[q])))

    fits = {"L_exponent": {}, "R_exponent": {}}
    for R in cfg.radii:
        rr = [r for r in rows if r["R"] == R]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fits["L_exponent"][repr(R)] = _fit_points([r["L"] for r in rr], [r["P"] for r in rr],
                                                      [r["stderr"] for r in rr], [r["stable"] for r in rr])
    ratios = {}
    for r in rows:
        ratios.setdefault(round(r["L"] / r["R"], 9), []).append(r)
    for ratio, rr in sorted(ratios.items()):
        if len(rr) >= 3:
            rr.sort(key=lambda r: r["R"])
            fits["R_exponent"][repr(ratio)] = _fit_points([r["R"] for r in rr], [r["P"] for r in rr],
                                                          [r["stderr"] for r in rr],
                                                          [r["stable"] for r in rr])
    env_c = max(abs(r["P"]) / r["envelope"] for r in rows)
    cov_c = cov_m = float("nan")
    if cfg.profile_samples > 0:
        cov_c = max(abs(r["P"]) / r["cov_rhs"] for r in rows)
        # same constant after discounting two standard errors of Monte Carlo noise
        cov_m = max(max(abs(r["P"]) - 2 * r["stderr"], 0.0) / r["cov_rhs"] for r in rows)
    return DecayScanResult(cfg, rows, fits, float(env_c), cov_c, slope2, cov_m, skipped, valid,
                           [float(v) for v in row_j])


# -- outputs ------------------------------------------------------------------

DECAY_COLUMNS = ("R", "L", "P", "stderr", "n_samples", "envelope")
MOMENT_COLUMNS = ("M", "level", "quantity", "p", "value", "stderr")
GATEAUX_COLUMNS = ("t", "lhs", "rhs", "rel_error")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, rows, columns):
    """Write dict rows with exact float repr so reruns compare bitwise."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config_digest: str
    seed: int
    version: str
    started: float = field(default_factory=time.time)
    finished: float = 0.0
    timings: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.versions:
            self.versions = dict(python=platform.python_version(), numpy=np.__version__,
                                 scipy=scipy.__version__)

    def stage(self, name, seconds):
        self.timings[name] = round(float(seconds), 3)

    def add_file(self, path):
        path = Path(path)
        self.files[path.name] = file_digest(path)

    def write(self, directory) -> Path:
        self.finished = time.time()
        path = Path(directory) / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def save_decay_scan(result: DecayScanResult, directory) -> list:
    directory = Path(directory)
    csv_path = write_csv(directory / "decay_scan.csv", result.rows, DECAY_COLUMNS)
    js = directory / "decay_summary.json"
    js.write_text(json.dumps(result.summary(), indent=2, sort_keys=True, default=float) + "\n")
    return [csv_path, js]
