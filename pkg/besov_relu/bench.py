"""Reproducible rate experiments: configuration, grid runner and slope fitting.

An experiment sweeps a grid of term budgets N (or sample sizes n) over a set
of seeds, runs every method on each grid cell and writes one CSV row per
(grid value, seed, method). Cells run on a thread pool; rows are always
written in grid order.
"""

import csv
import hashlib
import inspect
import json
import logging
import math
import time
from collections.abc import Iterable, Sequence
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from scipy import stats

from besov_relu.approx import (
    NTermApproximation,
    adaptive_budget,
    full_count,
    full_grid_truncation,
    full_level_truncation,
    lr_error,
    quadrature_points,
    select_nterm,
    select_sparse_grid,
    sparse_grid_budget,
    sparse_grid_level,
)
from besov_relu.bspline import Expansion, sequence_norm
from besov_relu.compiler import (
    architecture_budget,
    certify_unit,
    compile_expansion,
    expansion_error_bound,
)
from besov_relu.corpus import CORPUS, Certification, CorpusFunction, load_corpus
from besov_relu.exceptions import (
    ConfigError,
    ExperimentInterrupted,
    ParameterError,
)
from besov_relu.models import Family, SpaceParams
from besov_relu.regression import (
    RateParams,
    RegressionConfig,
    empirical_l2_risk,
    fit_adaptive_dictionary,
    fit_krr_cv,
    generate_data,
    rate_reference,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "kind",
    "method",
    "n_or_N",
    "seed",
    "error",
    "fit_residual",
    "error_bound",
    "truncated",
    "wall_ms",
)
COMPILE_RESOLUTION = {1: 4097, 2: 129}


class ExperimentKind(str, Enum):
    """What an experiment measures."""

    APPROX_RATE = "approx_rate"
    ESTIMATE_RATE = "estimate_rate"
    COMPILE_VERIFY = "compile_verify"


METHODS: dict[ExperimentKind, tuple[str, ...]] = {
    ExperimentKind.APPROX_RATE: ("adaptive", "full_level", "full_grid"),
    ExperimentKind.ESTIMATE_RATE: ("adaptive", "krr_gaussian", "krr_spline"),
    ExperimentKind.COMPILE_VERIFY: ("network",),
}

DEFAULT_METHODS: dict[ExperimentKind, tuple[str, ...]] = {
    ExperimentKind.APPROX_RATE: ("adaptive", "full_level"),
    ExperimentKind.ESTIMATE_RATE: ("adaptive", "krr_gaussian"),
    ExperimentKind.COMPILE_VERIFY: ("network",),
}


@dataclass(frozen=True)
class ExperimentConfig:
    """A versioned experiment description.

    Attributes:
        kind: Experiment kind.
        space: Smoothness parameters of the target ball.
        grid: Strictly increasing term budgets N or sample sizes n.
        seeds: Target and data seeds; every seed is one replicate.
        target: Corpus entry name or path of an expansion JSON file.
        target_options: Keyword arguments of the corpus constructor.
        methods: Methods to run on every cell.
        out: CSV output path; None keeps results in memory.
        sigma: Noise level (estimate_rate).
        F: Clipping bound of the adaptive estimator (estimate_rate).
        dictionary_scale: N = scale * n^{d/(2s+d)} for the adaptive estimator.
        seed_base: Offset added to every seed.
        threads: Worker threads.
        record_timings: Write wall-clock milliseconds into the CSV.
        thresholds: Accepted slope interval per method, checked in assert mode.
        schema: Config schema version.
    """

    kind: ExperimentKind
    space: SpaceParams
    grid: tuple[int, ...]
    seeds: tuple[int, ...] = (0,)
    target: str = "spike-train"
    target_options: dict[str, Any] = field(default_factory=dict)
    methods: tuple[str, ...] = ()
    out: str | None = None
    sigma: float = 0.1
    F: float = 1.0  # noqa: N815
    dictionary_scale: float = 4.0
    seed_base: int = 0
    threads: int = 1
    record_timings: bool = False
    thresholds: dict[str, tuple[float, float]] = field(default_factory=dict)
    schema: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.schema != SCHEMA_VERSION:
            raise ConfigError("schema", f"unsupported version {self.schema}")
        try:
            object.__setattr__(self, "kind", ExperimentKind(self.kind))
        except ValueError as e:
            raise ConfigError("kind", f"expected one of {[k.value for k in ExperimentKind]}") from e
        grid = tuple(self.grid)
        if not grid:
            raise ConfigError("grid", "must not be empty")
        if any(int(v) != v or v < 1 for v in grid):
            raise ConfigError("grid", f"values must be positive integers, got {list(grid)}")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("grid", f"must be strictly increasing, got {list(grid)}")
        object.__setattr__(self, "grid", tuple(int(v) for v in grid))
        seeds = tuple(int(s) for s in self.seeds)
        if not seeds:
            raise ConfigError("seeds", "must not be empty")
        if len(set(seeds)) != len(seeds) or min(seeds) < 0:
            raise ConfigError("seeds", f"must be distinct and nonnegative, got {list(seeds)}")
        if self.seed_base < 0:
            raise ConfigError("seed_base", f"must be >= 0, got {self.seed_base}")
        object.__setattr__(self, "seeds", seeds)
        methods = tuple(self.methods) or DEFAULT_METHODS[self.kind]
        unknown = [m for m in methods if m not in METHODS[self.kind]]
        if unknown:
            raise ConfigError("methods", f"{unknown} not available for {self.kind.value}")
        object.__setattr__(self, "methods", methods)
        if self.threads < 1:
            raise ConfigError("threads", f"must be >= 1, got {self.threads}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError("sigma", f"must be >= 0, got {self.sigma}")
        if not self.F >= 1:
            raise ConfigError("F", f"must be >= 1, got {self.F}")
        if not self.dictionary_scale > 0:
            raise ConfigError("dictionary_scale", f"must be positive, got {self.dictionary_scale}")
        if "adaptive" in methods or self.kind is ExperimentKind.COMPILE_VERIFY:
            floor = dictionary_floor(self.space)
            if grid[0] < floor:
                raise ConfigError(
                    "grid", f"{grid[0]} is below the level-0 dictionary of {floor} atoms"
                )
        if not self.target.endswith(".json") and self.target not in CORPUS:
            raise ConfigError("target", f"unknown corpus entry '{self.target}'")
        thresholds = {}
        for method, bounds in self.thresholds.items():
            low, high = (float(b) for b in bounds)
            if method not in self.methods or low > high:
                raise ConfigError("thresholds", f"bad interval {bounds} for '{method}'")
            thresholds[method] = (low, high)
        object.__setattr__(self, "thresholds", thresholds)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        """Build a config from its JSON document.

        Raises:
            ConfigError: If a field is missing, unknown or invalid.
        """
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(unknown[0], "unknown field")
        for required in ("kind", "space", "grid"):
            if required not in data:
                raise ConfigError(required, "missing")
        fields = dict(data)
        try:
            fields["space"] = SpaceParams.from_dict(data["space"])
        except (ParameterError, TypeError) as e:
            raise ConfigError("space", str(e)) from e
        for name in ("grid", "seeds", "methods"):
            if name in fields:
                fields[name] = tuple(fields[name])
        return cls(**fields)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        """Read a config JSON file."""
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError("config", f"cannot read {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON document; ``from_dict`` inverts it."""
        return {
            "schema": self.schema,
            "kind": self.kind.value,
            "space": self.space.to_dict(),
            "grid": list(self.grid),
            "seeds": list(self.seeds),
            "target": self.target,
            "target_options": self.target_options,
            "methods": list(self.methods),
            "out": self.out,
            "sigma": self.sigma,
            "F": self.F,
            "dictionary_scale": self.dictionary_scale,
            "seed_base": self.seed_base,
            "threads": self.threads,
            "record_timings": self.record_timings,
            "thresholds": {k: list(v) for k, v in self.thresholds.items()},
        }

    def config_hash(self) -> str:
        """Return the SHA-256 of the canonical JSON, ignoring output and thread settings."""
        document = {k: v for k, v in self.to_dict().items() if k not in ("out", "threads")}
        canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, **changes: Any) -> "ExperimentConfig":
        """Return a copy with the non-None keyword fields replaced."""
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class ExperimentResult:
    """Rows in grid order plus the summary document."""

    rows: list[dict[str, str]]
    summary: dict[str, Any]
    artifacts: dict[str, Any] = field(default_factory=dict)


def fit_rate(points: Iterable[tuple[float, float]]) -> tuple[float, float, float]:
    """Least squares fit of log2 y = slope * log2 x + intercept.

    Returns:
        (slope, intercept, r_squared).

    Raises:
        ParameterError: With fewer than 2 points, nonpositive values or a
            single distinct x.

    Example:
        >>> fit_rate([(2, 0.5), (4, 0.25), (8, 0.125)])[0]
        -1.0
    """
    pairs = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    if pairs.shape[0] < 2:
        raise ParameterError(f"Rate fit needs at least 2 points, got {pairs.shape[0]}")
    if not np.all(np.isfinite(pairs)) or np.any(pairs <= 0):
        raise ParameterError("Rate fit needs finite positive x and y")
    lx, ly = np.log2(pairs[:, 0]), np.log2(pairs[:, 1])
    if np.ptp(lx) == 0:
        raise ParameterError("Rate fit needs at least 2 distinct x values")
    fit = stats.linregress(lx, ly)
    r_squared = 1.0 if np.ptp(ly) == 0 or pairs.shape[0] == 2 else float(fit.rvalue**2)
    return float(fit.slope), float(fit.intercept), r_squared


def _format(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _target_seed(cfg: ExperimentConfig, seed: int) -> int:
    return cfg.seed_base + seed


def _data_seed(cfg: ExperimentConfig, seed: int, value: int) -> int:
    return int(np.random.SeedSequence([cfg.seed_base, seed, value]).generate_state(1)[0])


def load_target(cfg: ExperimentConfig, seed: int) -> CorpusFunction:
    """Build the target of one replicate.

    Expansion files are certified by their own sequence norm; corpus entries
    that take a seed receive ``seed_base + seed``.
    """
    if cfg.target.endswith(".json"):
        try:
            expansion = Expansion.from_json(Path(cfg.target).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError("target", f"cannot read {cfg.target}: {e}") from e
        if expansion.dim != cfg.space.d or expansion.order != cfg.space.m:
            raise ConfigError("target", "expansion (d, m) disagrees with the space")
        return CorpusFunction(
            name=cfg.target,
            space=cfg.space,
            radius=sequence_norm(expansion, cfg.space),
            certification=Certification.SEQUENCE_NORM,
            expansion=expansion,
        )
    options = dict(cfg.target_options)
    if "seed" in inspect.signature(CORPUS[cfg.target]).parameters:
        options["seed"] = _target_seed(cfg, seed)
    try:
        return load_corpus(cfg.target, cfg.space, **options)
    except TypeError as e:
        raise ConfigError("target_options", str(e)) from e


def adaptive_approximation(
    e: Expansion, params: SpaceParams, N: int  # noqa: N803
) -> NTermApproximation:
    """Return the adaptive N-term approximation, by sparse grid in mixed mode."""
    if params.mixed:
        return select_sparse_grid(e, sparse_grid_level(params, N), params)
    return select_nterm(e, adaptive_budget(params, N), params)


def dictionary_floor(space: SpaceParams) -> int:
    """Return the smallest dictionary that holds the level-0 atoms."""
    if space.mixed:
        return sparse_grid_budget(space, 0).N
    return 2 * full_count(0, space.d, space.m)


def dictionary_budget(cfg: ExperimentConfig, n: int) -> int:
    """Return N = scale * n^{d/(2s+d)} (n^{1/(2s+1)} in mixed mode), floored at the base level."""
    space = cfg.space
    if space.mixed:
        exponent = 1 / (2 * space.s + 1)
    else:
        exponent = space.d / (2 * space.s + space.d)
    return max(dictionary_floor(space), math.ceil(cfg.dictionary_scale * n**exponent))


@dataclass
class _Cell:
    value: int
    seed: int
    rows: list[dict[str, str]] = field(default_factory=list)
    artifacts: dict[str, Any] = field(default_factory=dict)


def _row(
    cfg: ExperimentConfig,
    method: str,
    cell: _Cell,
    error: float,
    started: float,
    residual: float | None = None,
    bound: float | None = None,
    truncated: bool | None = None,
) -> dict[str, str]:
    wall = (time.perf_counter() - started) * 1000.0 if cfg.record_timings else None
    return {
        "kind": cfg.kind.value,
        "method": method,
        "n_or_N": str(cell.value),
        "seed": str(cell.seed),
        "error": _format(error),
        "fit_residual": _format(residual),
        "error_bound": _format(bound),
        "truncated": "" if truncated is None else str(int(truncated)),
        "wall_ms": "" if wall is None else f"{wall:.3f}",
    }


def _approx_cell(cfg: ExperimentConfig, target: CorpusFunction, cell: _Cell) -> None:
    e = target.as_expansion()
    for method in cfg.methods:
        started = time.perf_counter()
        truncated = None
        if method == "adaptive":
            selection = adaptive_approximation(e, cfg.space, cell.value)
            approx, truncated = selection.expansion, selection.truncated
        elif method == "full_level":
            approx = full_level_truncation(e, cell.value)
        else:
            approx = full_grid_truncation(e, cell.value)
        error = lr_error(e, approx, cfg.space.d, cfg.space.r)
        cell.rows.append(_row(cfg, method, cell, error, started, truncated=truncated))


def _estimate_cell(cfg: ExperimentConfig, target: CorpusFunction, cell: _Cell) -> None:
    seed = _data_seed(cfg, cell.seed, cell.value)
    data = generate_data(
        target, RegressionConfig(n=cell.value, sigma=cfg.sigma, F=cfg.F, seed=seed, d=cfg.space.d)
    )
    for method in cfg.methods:
        started = time.perf_counter()
        if method == "adaptive":
            N = min(dictionary_budget(cfg, cell.value), cell.value)  # noqa: N806
            report = fit_adaptive_dictionary(data, cfg.space, N, cfg.F)
        else:
            report = fit_krr_cv(data, method.removeprefix("krr_"), seed=seed)
        risk = empirical_l2_risk(report, target, cfg.space.d, seed=seed)
        cell.rows.append(_row(cfg, method, cell, risk.value, started, residual=report.residual))


def _compile_cell(cfg: ExperimentConfig, target: CorpusFunction, cell: _Cell) -> None:
    started = time.perf_counter()
    space = cfg.space
    selection = adaptive_approximation(target.as_expansion(), space, cell.value)
    approx = selection.expansion
    budget = architecture_budget(space, cell.value)
    net = compile_expansion(approx, budget.eps_unit)
    points, _ = quadrature_points(space.d, COMPILE_RESOLUTION.get(space.d, 4096), seed=cell.seed)
    observed = float(np.max(np.abs(net.evaluate(points)[:, 0] - approx(points))))
    bound = expansion_error_bound(approx, budget.eps_unit)
    cell.rows.append(
        _row(cfg, "network", cell, observed, started, bound=bound, truncated=selection.truncated)
    )
    cell.artifacts = {
        "network": net,
        "certificate": {
            "N": cell.value,
            "seed": cell.seed,
            "terms": len(approx),
            "selection": selection.to_dict(),
            "observed_error": observed,
            "error_bound": bound,
            "architecture": budget.to_dict(),
            "size": net.size_report().to_dict(),
            "unit": certify_unit(space.d, space.m, budget.eps_unit).to_dict(),
        },
    }


RUNNERS = {
    ExperimentKind.APPROX_RATE: _approx_cell,
    ExperimentKind.ESTIMATE_RATE: _estimate_cell,
    ExperimentKind.COMPILE_VERIFY: _compile_cell,
}


def _reference_family(cfg: ExperimentConfig, method: str) -> RateParams | None:
    space = cfg.space
    d = 1 if space.mixed and method == "adaptive" else space.d
    if cfg.kind is ExperimentKind.APPROX_RATE:
        family = Family.APPROX_ADAPTIVE if method == "adaptive" else Family.APPROX_LINEAR
    elif cfg.kind is ExperimentKind.ESTIMATE_RATE:
        if method == "adaptive":
            family, d = (Family.MIXED if space.mixed else Family.BESOV), space.d
        else:
            family = Family.LINEAR_LOWER
    else:
        return None
    return RateParams(family, s=space.s, p=space.p, q=space.q, d=d, r=space.r)


def _slope_fit(points: Sequence[tuple[float, float]]) -> dict[str, float] | None:
    positive = [(x, y) for x, y in points if y > 0]
    if len({x for x, _ in positive}) < 2:
        return None
    slope, intercept, r_squared = fit_rate(positive)
    return {"slope": slope, "intercept": intercept, "r_squared": r_squared}


def summarize(cfg: ExperimentConfig, rows: Sequence[dict[str, str]]) -> dict[str, Any]:
    """Fit one slope per seed and method and report their median.

    The fit through the per-grid-value median errors is kept as
    ``median_fit``. Zero errors are left out of every fit.
    """
    methods: dict[str, Any] = {}
    for method in cfg.methods:
        errors: dict[int, list[tuple[int, float]]] = {}
        for r in rows:
            if r["method"] == method:
                errors.setdefault(int(r["seed"]), []).append((int(r["n_or_N"]), float(r["error"])))
        medians = []
        for value in cfg.grid:
            at_value = [y for points in errors.values() for x, y in points if x == value]
            if at_value:
                medians.append((value, float(np.median(at_value))))
        seed_slopes = {}
        for seed, points in sorted(errors.items()):
            fit = _slope_fit(points)
            if fit is not None:
                seed_slopes[str(seed)] = fit["slope"]
        entry: dict[str, Any] = {
            "slope": float(np.median(list(seed_slopes.values()))) if seed_slopes else None,
            "seed_slopes": seed_slopes,
            "medians": medians,
            "median_fit": _slope_fit(medians),
            "truncated_rows": sum(
                1 for r in rows if r["method"] == method and r.get("truncated") == "1"
            ),
        }
        reference = _reference_family(cfg, method)
        entry["reference"] = None
        if reference is not None:
            try:
                _, exponent = rate_reference(reference, max(cfg.grid[-1], 2))
                entry["reference"] = {"family": reference.family.value, "exponent": exponent}
            except ParameterError as e:
                logger.info("No reference rate for %s: %s", method, e)
        methods[method] = entry
    return {
        "schema": SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "kind": cfg.kind.value,
        "rows": len(rows),
        "methods": methods,
    }


def check_thresholds(cfg: ExperimentConfig, summary: dict[str, Any]) -> list[str]:
    """Return the failed acceptance checks of a finished run.

    Slopes must fall in the configured intervals. Compile runs also need every
    observed error within its bound.
    """
    failures = []
    for method, (low, high) in cfg.thresholds.items():
        slope = summary["methods"][method]["slope"]
        if slope is None or not low <= slope <= high:
            failures.append(f"{method}: slope {slope} outside [{low}, {high}]")
    for failed in summary.get("bound_violations", []):
        failures.append(f"network: error exceeds bound at N={failed}")
    return failures


def _marker_path(out: Path) -> Path:
    return out.with_name(out.name + ".partial.json")


def _summary_path(out: Path) -> Path:
    return out.with_suffix(".summary.json")


def _write_rows(path: Path, rows: Iterable[dict[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def _resume(cfg: ExperimentConfig, out: Path) -> dict[tuple[int, int], list[dict[str, str]]]:
    """Return the rows of cells finished by an interrupted run of the same config."""
    marker = _marker_path(out)
    if not (marker.exists() and out.exists()):
        return {}
    state = json.loads(marker.read_text(encoding="utf-8"))
    if state.get("config_hash") != cfg.config_hash():
        logger.warning("Ignoring resume marker %s written for another config", marker)
        return {}
    done = {(int(v), int(s)) for v, s in state.get("completed", [])}
    finished: dict[tuple[int, int], list[dict[str, str]]] = {}
    with open(out, encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            key = (int(row["n_or_N"]), int(row["seed"]))
            if key in done:
                finished.setdefault(key, []).append(row)
    logger.info(
        "Resuming: %d of %d cells already finished",
        len(finished),
        len(cfg.grid) * len(cfg.seeds),
    )
    return finished


def _run_cell(cfg: ExperimentConfig, target: CorpusFunction, cell: _Cell) -> _Cell:
    RUNNERS[cfg.kind](cfg, target, cell)
    logger.info("Finished %s cell value=%d seed=%d", cfg.kind.value, cell.value, cell.seed)
    return cell


def _flush_partial(
    cfg: ExperimentConfig, out: Path, order: list[tuple[int, int]], cells: dict[Any, _Cell]
) -> ExperimentInterrupted:
    done = [key for key in order if key in cells]
    _write_rows(out, (row for key in done for row in cells[key].rows))
    marker = _marker_path(out)
    marker.write_text(
        json.dumps({"config_hash": cfg.config_hash(), "completed": done}, indent=2),
        encoding="utf-8",
    )
    logger.warning("Interrupted after %d cells, wrote %s", len(done), marker)
    return ExperimentInterrupted(str(marker), len(done))


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every (grid value, seed) cell and emit CSV rows and the summary.

    With ``cfg.out`` set, the CSV goes to ``out``, the summary to
    ``<stem>.summary.json`` and compile artifacts next to them. On interrupt
    the finished rows are flushed together with ``<out>.partial.json``; a rerun
    of the same config resumes from it.

    Raises:
        ExperimentInterrupted: After flushing partial results.
    """
    out = Path(cfg.out) if cfg.out else None
    finished = _resume(cfg, out) if out else {}
    targets = {seed: load_target(cfg, seed) for seed in cfg.seeds}
    for seed, target in targets.items():
        if not target.certify()["passed"]:
            logger.warning("Target %s (seed %d) exceeds its claimed radius", target.name, seed)
        if cfg.kind is not ExperimentKind.ESTIMATE_RATE and target.expansion is None:
            targets[seed] = replace(target, expansion=target.as_expansion())
    order = [(value, seed) for value in cfg.grid for seed in cfg.seeds]
    cells = {key: _Cell(key[0], key[1], rows) for key, rows in finished.items()}

    logger.info("Running %d cells on %d threads", len(order) - len(cells), cfg.threads)
    interrupted = False
    with ThreadPoolExecutor(max_workers=cfg.threads) as executor:
        futures: dict[tuple[int, int], Future[_Cell]] = {
            key: executor.submit(_run_cell, cfg, targets[key[1]], _Cell(*key))
            for key in order
            if key not in cells
        }
        try:
            for key, future in futures.items():
                cells[key] = future.result()
        except KeyboardInterrupt:
            interrupted = True
            for future in futures.values():
                future.cancel()
        except BaseException:
            for future in futures.values():
                future.cancel()
            raise
    if interrupted:
        for key, future in futures.items():
            if key not in cells and future.done() and not future.cancelled():
                if future.exception() is None:
                    cells[key] = future.result()
        if out is None:
            raise KeyboardInterrupt
        raise _flush_partial(cfg, out, order, cells)

    rows = [row for key in order for row in cells[key].rows]
    summary = summarize(cfg, rows)
    artifacts: dict[str, Any] = {}
    if cfg.kind is ExperimentKind.COMPILE_VERIFY:
        summary["bound_violations"] = [
            int(r["n_or_N"]) for r in rows if float(r["error"]) > float(r["error_bound"])
        ]
        last = cells[(cfg.grid[-1], cfg.seeds[0])]
        if last.artifacts:
            artifacts = last.artifacts
            summary["certificate"] = artifacts["certificate"]
    if out is not None:
        _write_rows(out, rows)
        _summary_path(out).write_text(json.dumps(summary, indent=2), encoding="utf-8")
        if artifacts:
            out.with_suffix(".network.json").write_text(
                artifacts["network"].to_json(), encoding="utf-8"
            )
            out.with_suffix(".certificate.json").write_text(
                json.dumps(artifacts["certificate"], indent=2), encoding="utf-8"
            )
        _marker_path(out).unlink(missing_ok=True)
    logger.info("Experiment %s finished: %d rows", cfg.kind.value, len(rows))
    return ExperimentResult(rows, summary, artifacts)
