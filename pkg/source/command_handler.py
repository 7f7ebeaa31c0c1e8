"""
Обработчик команд: run, sweep, optimize, validate, ingest.

Каждая команда пишет только обычные CSV/текстовые файлы без меток времени,
поэтому повторный запуск с тем же зерном даёт побайтно те же файлы.
"""

import io
import math
import os
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .engine import DeadlockError, congestion_frame, days_frame, pooled_travel, run_replications, trips_frame
from .ingest import (
    IngestError,
    distribution_file,
    fit_inputs,
    parse_trip_log,
    read_text,
    route_time_summary,
)
from .layout import LayoutError
from .logger import logger
from .optimizer import (
    EXPERIMENTS,
    EvaluationResult,
    FilterCriteria,
    SearchError,
    evaluate,
    filter_candidates,
    report,
    search,
)
from .scenario import Scenario, ScenarioError, load_scenario
from .stochastics import mean_ci, variance_ratio_test, welch_t_test
from .workflow import FleetPlan, KanbanError, format_clock

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

DOMAIN_ERRORS = (ScenarioError, LayoutError, DeadlockError, IngestError, SearchError, KanbanError, ValueError, OSError)


class UsageError(Exception):
    """Неверные аргументы командной строки."""


def parse_range(text: str) -> Tuple[int, int]:
    """'3..11' -> (3, 11); '5' -> (5, 5)."""
    parts = text.split("..")
    try:
        if len(parts) == 1:
            low = high = int(parts[0])
        elif len(parts) == 2:
            low, high = int(parts[0]), int(parts[1])
        else:
            raise ValueError(text)
    except ValueError as e:
        raise UsageError(f"bad fleet range {text!r}; expected A..B") from e
    if low > high:
        raise UsageError(f"empty fleet range {text!r}")
    return low, high


def _quartiles(values: List[float]) -> Dict[str, float]:
    x = np.asarray(values, dtype=float)
    q = np.percentile(x, [0, 25, 50, 75, 100])
    return {"n": int(x.size), "min": q[0], "q1": q[1], "median": q[2], "q3": q[3], "max": q[4], "mean": float(x.mean())}


def travel_samples(text: str, surgical_only: bool = False) -> Dict[str, List[float]]:
    """
    Времена поездок по типам тележек из журнала модели (trips.csv) или журнала системы AGV.

    Поездки журнала AGV с неизвестным направлением группируются по маршруту «откуда-куда».
    """
    header = text.splitlines()[0] if text.strip() else ""
    samples: Dict[str, List[float]] = {}
    if "travel_min" in header.split(","):
        frame = pd.read_csv(io.StringIO(text))
        for state, group in frame.groupby("cart_state", sort=True):
            samples[str(state)] = group["travel_min"].astype(float).tolist()
        return samples
    for row in parse_trip_log(text, surgical_only=surgical_only):
        samples.setdefault(row.cart_state or row.route, []).append(row.travel_minutes)
    return samples


class CommandHandler:
    def __init__(self, out_dir: Path, seed: Optional[int] = None, jobs: int = 1):
        self.out = Path(out_dir)
        self.seed = seed
        self.jobs = max(1, jobs)
        self.written: List[Path] = []

    def handle_command(self, args) -> int:
        """Выполняет команду; при ошибке удаляет частично записанные файлы и возвращает код выхода."""
        commands = {
            "run": self.cmd_run,
            "sweep": self.cmd_sweep,
            "optimize": self.cmd_optimize,
            "validate": self.cmd_validate,
            "ingest": self.cmd_ingest,
        }
        try:
            self.out.mkdir(parents=True, exist_ok=True)
            commands[args.command](args)
            logger.info(f"Command {args.command} finished: {len(self.written)} file(s) in {self.out}")
            return EXIT_OK
        except UsageError as e:
            logger.error(f"Usage error: {e}")
            self._cleanup()
            return EXIT_USAGE
        except DOMAIN_ERRORS as e:
            logger.error(f"Command {args.command} failed: {e}", exc_info=True)
            self._cleanup()
            return EXIT_ERROR

    def _cleanup(self):
        for path in self.written:
            if path.exists():
                path.unlink()
        self.written = []

    def _write_csv(self, frame: pd.DataFrame, name: str) -> Path:
        path = self.out / name
        self.written.append(path)
        frame.to_csv(path, index=False, float_format="%.3f", lineterminator="\n")
        return path

    def _write_text(self, text: str, name: str) -> Path:
        path = self.out / name
        self.written.append(path)
        path.write_text(text, encoding="utf-8", newline="\n")
        return path

    def _require_seed(self, scenario: Scenario) -> int:
        if self.seed is not None:
            return self.seed
        env_seed = os.getenv("AGV_SIMOPT_SEED")
        if env_seed:
            try:
                return int(env_seed)
            except ValueError as e:
                raise UsageError(f"AGV_SIMOPT_SEED must be an integer, got {env_seed!r}") from e
        if scenario.seed is not None:
            return scenario.seed
        raise UsageError("a seed is required: --seed, AGV_SIMOPT_SEED or 'seed' in the scenario")

    def _scenario(self, args) -> Scenario:
        if not args.scenario:
            raise UsageError("--scenario is required")
        scenario = load_scenario(Path(args.scenario))
        if getattr(args, "variant", None):
            scenario = scenario.with_variant(args.variant)
        return scenario.with_horizon(days=args.days, replications=args.reps)

    def cmd_run(self, args):
        scenario = self._scenario(args)
        seed = self._require_seed(scenario)
        results = run_replications(scenario, seed, jobs=self.jobs)
        days = days_frame(results)

        self._write_csv(trips_frame(results), "trips.csv")
        self._write_csv(days, "days.csv")
        self._write_csv(congestion_frame(results), "congestion.csv")

        level = args.level
        lines = [
            f"variant {scenario.variant}, fleet {scenario.fleet.label}, seed {seed}",
            f"{len(results)} replication(s) x {scenario.horizon} business day(s)",
            "",
            f"{'measure':<22}{'mean':>10}  {int(level * 100)}% CI",
        ]
        for state in ("clean", "soiled", "washed"):
            means = [r.mean_travel(state) for r in results]
            lines.append(self._ci_line(f"{state} travel, min", [m for m in means if m is not None], level))
        tc = days.groupby("rep")["t_c_min"].mean().dropna().tolist()
        lines.append(self._ci_line("T_c, min", tc, level))
        clock = days.groupby("rep")["completion_min"].mean().dropna().tolist()
        if clock:
            lines.append(f"{'completion clock':<22}{format_clock(float(np.mean(clock))):>10}")
        peak = max((max(r.congestion.kanban_peak.values(), default=0) for r in results), default=0)
        lines.append(f"{'kanban peak':<22}{peak:>10}")
        self._write_text("\n".join(lines) + "\n", "summary.txt")

    @staticmethod
    def _ci_line(name: str, values: List[float], level: float) -> str:
        if not values:
            return f"{name:<22}{'-':>10}"
        if len(values) < 2:
            return f"{name:<22}{values[0]:>10.3f}"
        ci = mean_ci(values, level)
        low, high = ci.confidence_interval
        return f"{name:<22}{ci.estimate:>10.3f}  ({low:.3f}, {high:.3f})"

    def cmd_sweep(self, args):
        base = self._scenario(args)
        seed = self._require_seed(base)
        low, high = parse_range(args.fleet or f"3..{base.fleet.pool_size}")
        if low < 1 or high > base.fleet.pool_size:
            raise UsageError(f"fleet range must lie in [1, {base.fleet.pool_size}]")

        travel_rows, completion_rows = [], []
        for size in range(low, high + 1):
            scenario = base.with_fleet(FleetPlan.constant(size, base.fleet.pool_size))
            results = run_replications(scenario, seed, jobs=self.jobs)
            for state, values in sorted(pooled_travel(results).items()):
                travel_rows.append({"variant": scenario.variant, "fleet": size, "cart_state": state,
                                    "metric": "trip", **_quartiles(values)})
            days = days_frame(results)
            daily = days["clean_total"].tolist()
            if daily:
                travel_rows.append({"variant": scenario.variant, "fleet": size, "cart_state": "clean",
                                    "metric": "daily_total", **_quartiles(daily)})
            tc = days["t_c_min"].dropna().tolist()
            if tc:
                completion_rows.append({"variant": scenario.variant, "fleet": size, **_quartiles(tc)})
            logger.info(f"Sweep {scenario.variant} fleet {size} done")

        self._write_csv(pd.DataFrame.from_records(travel_rows), "sweep_travel.csv")
        self._write_csv(pd.DataFrame.from_records(completion_rows), "sweep_completion.csv")

    def cmd_optimize(self, args):
        scenario = self._scenario(args)
        seed = self._require_seed(scenario)
        if args.budget is None or args.budget < 1:
            raise UsageError("--budget must be a positive number of evaluations")
        if args.experiment not in EXPERIMENTS:
            raise UsageError(f"--experiment must be one of {sorted(EXPERIMENTS)}")
        objective, bound = EXPERIMENTS[args.experiment]
        cache: Dict[Tuple[int, ...], EvaluationResult] = {}

        def evaluator(plan: FleetPlan) -> EvaluationResult:
            if plan.k not in cache:
                cache[plan.k] = evaluate(plan, scenario, seed=seed, jobs=self.jobs)
            return cache[plan.k]

        baseline = evaluator(scenario.fleet)
        result = search(
            objective,
            evaluator,
            args.budget,
            pool_size=scenario.fleet.pool_size,
            weekdays=scenario.fleet.weekdays,
            constraint=bound,
        )
        criteria = FilterCriteria(max_avg_travel=baseline.avg_travel if not math.isnan(baseline.avg_travel) else math.inf)
        feasible = [r for r in result.ranked if r.feasible]
        self._write_csv(report(result.ranked), "optimizer_report.csv")
        self._write_csv(report(filter_candidates(feasible, criteria)), "filtered.csv")
        constraint = f"T_c <= {bound:g} min" if bound is not None else "none"
        self._write_text(
            f"experiment {args.experiment}: objective {objective}, constraint {constraint}\n"
            f"baseline fleet {scenario.fleet.label}: avg travel {baseline.avg_travel:.3f} min\n"
            f"evaluations {result.evaluations}, exhaustive {result.exhaustive}\n",
            "optimizer.txt",
        )

    def cmd_validate(self, args):
        if not args.simulated or not args.reference:
            raise UsageError("validate needs --simulated and --reference")
        simulated = travel_samples(read_text(Path(args.simulated)), args.surgical_only)
        reference = travel_samples(read_text(Path(args.reference)), args.surgical_only)
        if not simulated or not reference:
            raise ValueError("validate needs non-empty trip logs")

        rows = []
        for route in sorted(set(simulated) & set(reference)):
            a, b = simulated[route], reference[route]
            if len(a) < 2 or len(b) < 2:
                logger.warning(f"Route {route}: fewer than 2 trips on one side, skipped")
                continue
            sim_ci = mean_ci(a, args.level).confidence_interval
            ref_ci = mean_ci(b, args.level).confidence_interval
            if np.var(a) == 0.0 and np.var(b) == 0.0:
                t_stat, dof, p_value = 0.0, float(len(a) + len(b) - 2), 1.0 if np.mean(a) == np.mean(b) else 0.0
            else:
                t = welch_t_test(a, b, args.level)
                t_stat, dof, p_value = t.statistic, t.degrees_of_freedom, t.p_value
            try:
                var = variance_ratio_test(a, b, args.level, method=args.variance_test)
                var_stat, var_p = var.statistic, var.p_value
            except ValueError:
                var_stat, var_p = math.nan, math.nan
            rows.append({
                "route": route,
                "n_sim": len(a),
                "mean_sim": float(np.mean(a)),
                "ci_sim": f"({sim_ci[0]:.2f},{sim_ci[1]:.2f})",
                "n_ref": len(b),
                "mean_ref": float(np.mean(b)),
                "ci_ref": f"({ref_ci[0]:.2f},{ref_ci[1]:.2f})",
                "t": t_stat,
                "df": dof,
                "p_value": p_value,
                "verdict": "consistent" if p_value >= 1.0 - args.level else "different",
                "var_stat": var_stat,
                "var_p_value": var_p,
            })
        if not rows:
            raise ValueError("no route has at least 2 trips in both logs")
        self._write_csv(pd.DataFrame.from_records(rows), "validation.csv")
        for row in rows:
            logger.info(f"Route {row['route']}: p={row['p_value']:.4f} -> {row['verdict']}")

    def cmd_ingest(self, args):
        if not args.log:
            raise UsageError("ingest needs --log")
        log = parse_trip_log(read_text(Path(args.log)), surgical_only=args.surgical_only, max_minutes=args.max_minutes)
        if not log.rows:
            raise IngestError("no trips left after filtering")
        self._write_csv(route_time_summary(log.rows), "route_summary.csv")
        case_counts, release = fit_inputs(log.rows, args.mode_estimator)
        self._write_text(distribution_file(case_counts, release), "distributions.toml")
        self._write_text(
            f"rows {log.total}, kept {len(log.rows)}, outliers {log.outliers}, filtered {log.filtered}\n",
            "ingest.txt",
        )
