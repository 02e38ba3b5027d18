"""Replicate ensembles: simulate, analyze, predict, compare.

A run draws R independent torus fields, measures the level topology of each
at every level of the grid, merges the per-replicate values in replicate
order and joins the means with the closed-form predictions.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .covariance import make_model
from .critical import find_critical_points
from .kacrice import critical_density_mc
from .sampler import GridField, load_field, sample_torus, save_field
from .theory import (
    AsymptoticRegimeWarning,
    expected_components_asymptotic,
    expected_euler,
    lk_curvatures,
    nazarov_sodin_cz,
    torus,
)
from .topology import level_topology

__all__ = [
    "RunConfig",
    "ComparisonRow",
    "RunResult",
    "Aggregate",
    "CSV_HEADER",
    "METRICS",
    "CACHE_ENV",
    "analyze_field",
    "aggregate",
    "theory_table",
    "compare_report",
    "write_report",
    "check_rows",
    "run",
]

CSV_HEADER = ["model", "n", "domain", "u", "metric", "emp_mean", "emp_se", "theory", "ratio", "z"]
CACHE_ENV = "RFTOPO_CACHE"

TOPOLOGY_METRICS = ("euler", "n_components", "b0", "b1", "betti_sum", "n_nodal", "nodal_density")
BALL_METRICS = ("n_ball", "n_sphere")
METRICS = TOPOLOGY_METRICS + BALL_METRICS + ("crit_counts",)


@dataclass
class RunConfig:
    """Everything that determines a run; the report is a pure function of it.

    ``ball_u_min`` bounds the critical-point search from below: ball,
    sphere and critical-count metrics are only measured at levels
    ``u >= ball_u_min`` (excursion side). ``None`` measures them everywhere.
    """

    model: str = "bargmann_fock"
    n: int = 2
    sides: tuple = (40.0, 40.0)
    shape: tuple = (512, 512)
    u_grid: tuple = (0.0, 1.0, 2.0, 3.0)
    replicates: int = 10
    seed: int = 0
    metrics: tuple = METRICS
    side: str = "excursion"
    ball_u_min: float | None = None
    out_dir: str = "rftopo_out"
    workers: int = 1
    rel_tol: float = 0.05
    cache_dir: str | None = None
    kacrice_samples: int = 10**6

    def __post_init__(self):
        self.sides = tuple(float(s) for s in np.atleast_1d(self.sides))
        self.shape = tuple(int(m) for m in np.atleast_1d(self.shape))
        self.u_grid = tuple(float(u) for u in np.atleast_1d(self.u_grid))
        self.metrics = tuple(self.metrics)
        self.validate()

    def validate(self):
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if list(self.u_grid) != sorted(self.u_grid):
            raise ValueError("u_grid must be sorted")
        if len(self.sides) != self.n or len(self.shape) != self.n:
            raise ValueError("sides and shape need one entry per dimension")
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise ValueError(f"unknown metrics {sorted(unknown)}")
        if self.side not in ("excursion", "sojourn"):
            raise ValueError("side must be excursion or sojourn")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        make_model(self.model, self.n)

    @property
    def domain_label(self):
        return torus(*self.sides).label() + "@" + "x".join(str(m) for m in self.shape)

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json_file(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    n: int
    domain: str
    u: float
    metric: str
    emp_mean: float
    emp_se: float
    theory: float
    ratio: float
    z: float
    flags: tuple = field(default=())

    def csv_fields(self):
        return [self.model, str(self.n), self.domain, _fmt(self.u), self.metric, _fmt(self.emp_mean),
                _fmt(self.emp_se), _fmt(self.theory), _fmt(self.ratio), _fmt(self.z)]


def _fmt(x):
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# per-field analysis


def _model_of(config):
    return make_model(config.model, config.n)


def analyze_field(field: GridField, config: RunConfig):
    """Per-level observables of one field, as a list of flat records.

    Every record maps metric names to numbers; metrics that were not
    measured at that level are absent.
    """
    want = set(config.metrics)
    need_points = bool(want & (set(BALL_METRICS) | {"crit_counts"}))
    points = None
    if need_points:
        lo = config.ball_u_min if config.ball_u_min is not None else -np.inf
        if config.side == "excursion":
            points = find_critical_points(field, min_value=lo)
        else:
            points = find_critical_points(field)
    out = []
    for u in config.u_grid:
        with_balls = need_points and (config.ball_u_min is None or u >= config.ball_u_min)
        lt = level_topology(field, u, config.side, points=points if with_balls else None,
                            with_balls=with_balls)
        rec = {"u": u}
        rec["euler"] = lt.euler_characteristic
        rec["n_components"] = lt.n_components
        if lt.betti:
            rec["b0"], rec["b1"] = lt.betti[0], lt.betti[1]
            rec["betti_sum"] = int(sum(lt.betti))
        rec["n_nodal"] = lt.n_nodal_components
        rec["nodal_density"] = lt.n_nodal_components / field.volume
        if with_balls:
            rec["n_ball"] = lt.n_ball_components
            rec["n_sphere"] = lt.n_sphere_components
            for i, c in enumerate(lt.crit_counts):
                rec[f"crit_{i}"] = c
        out.append({k: v for k, v in rec.items() if k == "u" or _metric_family(k) in want})
    return out


def _metric_family(name):
    return "crit_counts" if name.startswith("crit_") else name


def _cache_path(config, replicate):
    root = config.cache_dir or os.environ.get(CACHE_ENV)
    if not root:
        return None
    key = json.dumps(
        {"model": _model_of(config).descriptor(), "sides": config.sides, "shape": config.shape,
         "seed": config.seed, "replicate": replicate},
        sort_keys=True,
    )
    digest = hashlib.sha256(key.encode()).hexdigest()[:32]
    return Path(root) / f"{digest}.rftf"


def _replicate_field(config, model, replicate):
    path = _cache_path(config, replicate)
    if path is not None and path.exists():
        return load_field(path)
    f = sample_torus(model, config.sides, config.shape, config.seed, replicate)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(f".tmp{os.getpid()}")
        save_field(tmp, f)
        os.replace(tmp, path)
    return f


def _replicate_task(args):
    config_json, replicate = args
    config = RunConfig.from_dict(json.loads(config_json))
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", AsymptoticRegimeWarning)
            f = _replicate_field(config, _model_of(config), replicate)
            return analyze_field(f, config)
    except Exception as exc:  # the failing seed has to be named
        raise RuntimeError(
            f"replicate {replicate} (master seed {config.seed}) failed: {exc!r}"
        ) from exc


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class Aggregate:
    """Running count, mean and squared deviations of one (u, metric) series."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    def add(self, x):
        self.merge(Aggregate(1, float(x), 0.0))

    def merge(self, other):
        if other.count == 0:
            return self
        tot = self.count + other.count
        delta = other.mean - self.mean
        self.mean += delta * other.count / tot
        self.m2 += other.m2 + delta * delta * self.count * other.count / tot
        self.count = tot
        return self

    @property
    def stderr(self):
        if self.count < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1) / self.count)


def aggregate(per_replicate):
    """Merge per-replicate record lists, in the order given, into {(u, metric): Aggregate}."""
    acc = {}
    for records in per_replicate:
        for rec in records:
            u = rec["u"]
            for k, v in rec.items():
                if k == "u":
                    continue
                acc.setdefault((u, k), Aggregate()).add(v)
    return acc


# ---------------------------------------------------------------------------
# theory


def theory_table(config: RunConfig, keys):
    """Prediction for each (u, metric) key; nan where none applies."""
    model = _model_of(config)
    dom = torus(*config.sides)
    lk = lk_curvatures(dom, model.second_moment)
    sign = 1.0 if config.side == "excursion" else -1.0
    out = {}
    crit_cache = {}
    for u, metric in keys:
        ue = sign * u  # level of the equivalent excursion set of +-f
        val = math.nan
        if metric == "euler":
            val = float(expected_euler(lk, ue))
        elif metric in ("n_components", "n_ball", "b0", "betti_sum", "n_sphere"):
            if ue > 0:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", AsymptoticRegimeWarning)
                    val = float(expected_components_asymptotic(dom, model, ue, refined=True))
        elif metric in ("n_nodal", "nodal_density"):
            # the level set at u has the law of the level set at -u
            if u != 0:
                val = float(nazarov_sodin_cz(model, abs(u)))
                if metric == "n_nodal":
                    val *= dom.volume
        elif metric.startswith("crit_"):
            i = int(metric[5:])
            if u not in crit_cache:
                # excursion counts are indexed for -f, whose sojourn below -u has the same law
                crit_cache[u] = critical_density_mc(model, -ue, n_samples=config.kacrice_samples,
                                                    seed=config.seed)
            val = float(crit_cache[u].density[i] * dom.volume)
        out[(u, metric)] = val
    return out


def compare_report(empirical, theory, *, model, n, domain):
    """Join aggregates with predictions.

    Parameters
    ----------
    empirical : dict
        {(u, metric): Aggregate} (or (mean, se, count) tuples).
    theory : dict
        {(u, metric): value}; nan means no prediction.

    Raises
    ------
    KeyError
        Listing every key present on one side only.
    """
    missing = sorted(set(empirical) ^ set(theory))
    if missing:
        raise KeyError(f"unmatched (u, metric) keys: {missing}")
    rows = []
    for key in sorted(empirical, key=lambda k: (k[0], _metric_order(k[1]))):
        u, metric = key
        agg = empirical[key]
        if not isinstance(agg, Aggregate):
            mean, se, count = agg
            agg = Aggregate(int(count), float(mean), float(se) ** 2 * count * max(count - 1, 0))
        mean, se, th = agg.mean, agg.stderr, float(theory[key])
        flags = []
        if agg.count < 2:
            flags.append("insufficient replicates")
        if math.isnan(th):
            flags.append("no theory")
            ratio = z = math.nan
        else:
            ratio = mean / th if th != 0 else math.nan
            if th == 0:
                flags.append("ratio undefined")
            if se > 0:
                z = (mean - th) / se
            else:
                z = 0.0 if mean == th else math.copysign(math.inf, mean - th)
                if mean != th:
                    flags.append("zero stderr")
        rows.append(ComparisonRow(model, n, domain, u, metric, mean, se, th, ratio, z, tuple(flags)))
    return rows


def _metric_order(name):
    order = list(TOPOLOGY_METRICS + BALL_METRICS)
    return (order.index(name), name) if name in order else (len(order), name)


def report_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def write_report(rows, path):
    Path(path).write_text(report_csv(rows))


def check_rows(rows, rel_tol):
    """Rows with a prediction whose mean is off by more than max(3 se, rel_tol |theory|)."""
    bad = []
    for r in rows:
        if math.isnan(r.theory):
            continue
        if abs(r.emp_mean - r.theory) > max(3 * r.emp_se, rel_tol * abs(r.theory)):
            bad.append(r)
    return bad


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class RunResult:
    rows: list
    report_path: Path
    manifest_path: Path
    records_path: Path
    elapsed: float


def simulate_records(config: RunConfig):
    """Per-replicate analysis records, in replicate order."""
    cfg = config.to_json()
    tasks = [(cfg, r) for r in range(config.replicates)]
    if config.workers == 1:
        return [_replicate_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=config.workers) as pool:
        return list(pool.map(_replicate_task, tasks))


def run(config: RunConfig) -> RunResult:
    """Simulate, analyze, predict and compare; write report.csv, manifest.json, fields.jsonl."""
    t0 = time.perf_counter()
    per_rep = simulate_records(config)
    emp = aggregate(per_rep)
    theory = theory_table(config, emp.keys())
    rows = compare_report(emp, theory, model=config.model, n=config.n, domain=config.domain_label)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = out / "report.csv"
    write_report(rows, report)
    records = out / "fields.jsonl"
    with open(records, "w") as fh:
        for r, recs in enumerate(per_rep):
            for rec in recs:
                fh.write(json.dumps({"replicate": r, "seed": config.seed, "side": config.side, **rec},
                                    sort_keys=True) + "\n")
    elapsed = time.perf_counter() - t0
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({
        "config": json.loads(config.to_json()),
        "model": _model_of(config).descriptor(),
        "report": report.name,
        "records": records.name,
        "flags": [{"u": r.u, "metric": r.metric, "flags": list(r.flags)} for r in rows if r.flags],
        "elapsed_seconds": round(elapsed, 3),
    }, indent=2, sort_keys=True))
    return RunResult(rows, report, manifest, records, elapsed)


def read_records(path):
    """Per-replicate record lists from a fields.jsonl file."""
    reps = {}
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            r = rec.pop("replicate")
            rec.pop("seed", None)
            rec.pop("side", None)
            reps.setdefault(r, []).append(rec)
    return [reps[r] for r in sorted(reps)]
