"""Seeded Monte Carlo experiments, parameter sweeps and report serialization.

Trial ``i`` of an experiment always uses the stream seeded by
``mix64(master_seed ^ i)``, and per-chunk results are integer counters, so a
report does not depend on chunking, worker count or kernel backend.

JSON report layout (``schema = "qauth-report/1"``), keys in this order::

    schema, config{...}, trials, metrics{name: metric}, mean_restarts{...},
    reference{...}, [sweep{parameter, value}], digest

Each metric holds ``successes, trials, empirical_rate, ci95 [lo, hi],
analytic, z_score, mc_verifiable``. CSV output has one row per metric with
columns :data:`CSV_COLUMNS` (sweeps prepend ``parameter, value``).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Any, Iterable, Mapping

import numpy as np

from . import analysis, kernel
from .adversary import AdversaryStrategy, Attack
from .protocol import ParamError, ProtocolParams
from .qchannel import Basis, PhotonSourceModel

SCHEMA = "qauth-report/1"
Z95 = NormalDist().inv_cdf(0.975)
Z_LIMIT = 4.0
# below this many expected events (or non-events) a rate is reported, not tested
MIN_EXPECTED_EVENTS = 10.0
CHUNK = 100_000

CSV_COLUMNS = ("metric", "successes", "trials", "empirical_rate", "ci_low", "ci_high",
               "analytic", "z_score", "mc_verifiable")
SWEEPABLE = ("g", "d", "k", "p1", "D")

CONFIG_KEYS = {
    "k": int, "d": int, "m": int, "threshold": float, "key_basis": str, "max_restarts": int,
    "target_D": float, "strategy": str, "g": int, "placement": str, "knows_plaintext": str,
    "p1": float, "max_photons": int, "trials": int, "seed": int, "format": str,
}
DEFAULTS = {"k": 17, "d": 41, "strategy": "passive", "trials": 10_000, "seed": 1, "format": "json"}


class ConfigError(ValueError):
    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{f}: {m}" for f, m in errors))


class UnknownParameter(ConfigError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    params: ProtocolParams
    strategy: AdversaryStrategy = field(default_factory=AdversaryStrategy.passive)
    source: PhotonSourceModel = field(default_factory=PhotonSourceModel)
    trials: int = 10_000
    master_seed: int = 1
    output_format: str = "json"

    def __post_init__(self):
        errors = []
        if self.trials < 1:
            errors.append(("trials", "must be >= 1"))
        if not 0 <= self.master_seed < 2 ** 64:
            errors.append(("seed", "must be an unsigned 64-bit integer"))
        if self.output_format not in ("json", "csv"):
            errors.append(("format", "must be json or csv"))
        try:
            self.strategy.validate(self.params.k, self.params.d)
        except ValueError as exc:
            errors.append(("g", str(exc)))
        if self.strategy.attack is Attack.ORACLE_LOCATIONS and not self.strategy.knows_plaintext:
            errors.append(("knows_plaintext", "oracle-locations requires the decrypted spec"))
        if errors:
            raise ConfigError(errors)

    def describe(self) -> dict[str, Any]:
        p, s, src = self.params, self.strategy, self.source
        return {
            "k": p.k, "d": p.d, "m": p.m, "threshold": p.error_threshold,
            "key_basis": p.key_basis.name.lower(), "max_restarts": p.max_restarts,
            "target_D": p.target_D, "strategy": s.attack.value, "g": s.g,
            "placement": s.placement, "knows_plaintext": s.knows_plaintext,
            "p1": src.p1, "max_photons": src.max_photons,
            "trials": self.trials, "seed": self.master_seed,
        }

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from flat key/value settings (config-file keys, see :data:`CONFIG_KEYS`)."""
        errors: list[tuple[str, str]] = []
        raw = {**DEFAULTS, **{k: v for k, v in values.items() if v is not None}}
        vals: dict[str, Any] = {}
        for key, value in raw.items():
            if key not in CONFIG_KEYS:
                errors.append((key, "unknown setting"))
                continue
            try:
                vals[key] = _coerce(CONFIG_KEYS[key], value)
            except (TypeError, ValueError):
                errors.append((key, f"cannot parse {value!r} as {CONFIG_KEYS[key].__name__}"))
        if errors:
            raise ConfigError(errors)

        if "target_D" in vals and not {"k", "d"} & set(values):
            try:
                vals["k"], vals["d"] = analysis.size_parameters(vals["target_D"])
            except analysis.DomainError as exc:
                raise ConfigError([("target_D", str(exc))]) from None
        try:
            basis = Basis[vals.get("key_basis", "rectilinear").upper()]
        except KeyError:
            raise ConfigError([("key_basis", "must be rectilinear or diagonal")]) from None
        try:
            params = ProtocolParams(
                k=vals["k"], d=vals["d"], m=vals.get("m"),
                error_threshold=vals.get("threshold", 0.0), key_basis=basis,
                max_restarts=vals.get("max_restarts", 3), target_D=vals.get("target_D"),
            )
        except ParamError as exc:
            raise ConfigError([(exc.field, str(exc))]) from None
        try:
            attack = Attack(vals["strategy"])
        except ValueError:
            raise ConfigError([("strategy", f"one of {[a.value for a in Attack]}")]) from None
        knows = vals.get("knows_plaintext")
        knows = (attack is Attack.ORACLE_LOCATIONS) if knows is None else _truthy(knows)
        try:
            strategy = AdversaryStrategy(attack, g=vals.get("g") if attack is Attack.SUBSET_GUESS else None,
                                         knows_plaintext=knows, placement=vals.get("placement", "alice"))
        except ValueError as exc:
            raise ConfigError([("strategy", str(exc))]) from None
        try:
            source = PhotonSourceModel(vals.get("p1", 1.0), vals.get("max_photons", 2))
        except ValueError as exc:
            raise ConfigError([("p1", str(exc))]) from None
        return cls(params, strategy, source, vals["trials"], vals["seed"], vals["format"])


def _coerce(typ, value):
    if isinstance(value, str):
        value = value.strip()
        if typ is int:
            return int(value, 0)
        return typ(value)
    if typ is str:
        return str(value)
    if typ is int and isinstance(value, float) and not value.is_integer():
        raise ValueError(value)
    return typ(value)


def _truthy(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError([("knows_plaintext", f"not a boolean: {value!r}")])


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    errors = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            errors.append((f"line {lineno}", "expected key = value"))
            continue
        out[key.strip()] = value.strip()
    if errors:
        raise ConfigError(errors)
    return out


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("n must be positive")
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def z_score(successes: int, n: int, p: float) -> float | None:
    """Standardized deviation from ``p``; ``None`` if ``p`` is 0 or 1 and the data disagree."""
    rate = successes / n
    if p <= 0.0 or p >= 1.0:
        return 0.0 if rate == p else None
    return (rate - p) / math.sqrt(p * (1 - p) / n)


def _rate_metric(successes: int, n: int, analytic: float | None) -> dict[str, Any]:
    lo, hi = wilson_interval(successes, n)
    z = None if analytic is None else z_score(successes, n, analytic)
    verifiable = analytic is not None and (
        analytic in (0.0, 1.0) or n * min(analytic, 1 - analytic) >= MIN_EXPECTED_EVENTS)
    return {
        "successes": int(successes), "trials": int(n), "empirical_rate": successes / n,
        "ci95": [lo, hi], "analytic": analytic, "z_score": z, "mc_verifiable": verifiable,
    }


COUNTERS = (
    "trials", "authenticated", "alice_accepted", "detected", "restart_limit", "forged",
    "coverage_success", "alice_tamper_errors", "alice_tamper_checked", "bob_tamper_errors",
    "bob_tamper_checked", "key_agreement", "eve_key_bits_known", "restarts", "restarts_sq",
    "disturbed_tamper_slots",
)


def summarize_rows(rows: np.ndarray) -> np.ndarray:
    """Collapse kernel rows to the integer counters in :data:`COUNTERS`."""
    col = {name: rows[:, i] for i, name in enumerate(kernel.FIELDS)}
    return np.array([
        rows.shape[0],
        int(np.count_nonzero(col["alice_accepted"] | col["eve_forged"])),
        int(col["alice_accepted"].sum()),
        int(col["detected"].sum()),
        int(col["restart_limit_exceeded"].sum()),
        int(col["eve_forged"].sum()),
        int(col["coverage_success"].sum()),
        int(col["alice_tamper_errors"].sum()),
        int(col["alice_tamper_checked"].sum()),
        int(col["bob_tamper_errors"].sum()),
        int(col["bob_tamper_checked"].sum()),
        int(col["key_agreement"].sum()),
        int(col["eve_key_bits_known"].sum()),
        int(col["restarts"].sum()),
        int((col["restarts"] * col["restarts"]).sum()),
        int(col["disturbed_tamper_slots"].sum()),
    ], dtype=np.int64)


def _run_chunk(args) -> np.ndarray:
    config, start, count, backend = args
    rows = kernel.run_trials(config.params, config.strategy, config.source,
                             config.master_seed, start, count, backend)
    return summarize_rows(rows)


def collect_counts(config: ExperimentConfig, workers: int = 1, backend: str | None = None,
                   chunk: int = CHUNK) -> dict[str, int]:
    jobs = [(config, s, min(chunk, config.trials - s), backend)
            for s in range(0, config.trials, chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_chunk, jobs))
    else:
        parts = [_run_chunk(j) for j in jobs]
    total = np.sum(parts, axis=0)
    return {name: int(v) for name, v in zip(COUNTERS, total)}


@dataclass
class ExperimentReport:
    config: dict[str, Any]
    trials: int
    metrics: dict[str, dict[str, Any]]
    mean_restarts: dict[str, Any]
    reference: dict[str, Any]
    counts: dict[str, int] = field(repr=False, default_factory=dict)
    sweep: dict[str, Any] | None = None

    def as_dict(self) -> dict[str, Any]:
        out = {
            "schema": SCHEMA,
            "config": self.config,
            "trials": self.trials,
            "metrics": self.metrics,
            "mean_restarts": self.mean_restarts,
            "reference": self.reference,
        }
        if self.sweep is not None:
            out["sweep"] = self.sweep
        out["digest"] = hashlib.sha256(
            json.dumps({"config": self.config, "counts": self.counts, "sweep": self.sweep},
                       sort_keys=True).encode()).hexdigest()
        return out

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2) + "\n"

    def csv_rows(self) -> list[list[Any]]:
        rows = []
        for name, mt in self.metrics.items():
            rows.append([name, mt["successes"], mt["trials"], mt["empirical_rate"], mt["ci95"][0],
                         mt["ci95"][1], mt["analytic"], mt["z_score"], mt["mc_verifiable"]])
        mr = self.mean_restarts
        rows.append(["mean_restarts", mr["total"], mr["trials"], mr["mean"], mr["ci95"][0],
                     mr["ci95"][1], mr["analytic"], mr["z_score"], mr["mc_verifiable"]])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        w.writerows([["" if v is None else v for v in row] for row in self.csv_rows()])
        return buf.getvalue()

    def inconsistent(self, z_limit: float = Z_LIMIT) -> list[str]:
        """Metrics whose empirical value disagrees with a testable analytic value."""
        bad = []
        for name, mt in [*self.metrics.items(), ("mean_restarts", self.mean_restarts)]:
            if mt["analytic"] is None or not mt["mc_verifiable"]:
                continue
            if mt["z_score"] is None or abs(mt["z_score"]) > z_limit:
                bad.append(name)
        return bad


def build_report(config: ExperimentConfig, counts: dict[str, int]) -> ExperimentReport:
    n = counts["trials"]
    p = config.params
    forms = analysis.closed_forms(p, config.strategy, config.source)
    c = counts
    pairs = {
        "authentication_rate": (c["authenticated"], n),
        "alice_acceptance_rate": (c["alice_accepted"], n),
        "detection_rate": (c["detected"], n),
        "evasion_rate": (n - c["detected"], n),
        "restart_limit_rate": (c["restart_limit"], n),
        "forgery_rate": (c["forged"], n),
        "coverage_success_rate": (c["coverage_success"], n),
        "alice_tamper_error_rate": (c["alice_tamper_errors"], c["alice_tamper_checked"]),
        "bob_tamper_error_rate": (c["bob_tamper_errors"], c["bob_tamper_checked"]),
        "key_agreement_rate": (c["key_agreement"], n),
        "eve_key_knowledge_rate": (c["eve_key_bits_known"], n * p.k),
    }
    metrics = {}
    for name, (succ, denom) in pairs.items():
        if denom == 0:  # no tamper slots at all
            metrics[name] = {"successes": 0, "trials": 0, "empirical_rate": None, "ci95": [None, None],
                             "analytic": forms[name], "z_score": None, "mc_verifiable": False}
        else:
            metrics[name] = _rate_metric(succ, denom, forms[name])

    mean = c["restarts"] / n
    var = max(c["restarts_sq"] / n - mean * mean, 0.0)
    se = math.sqrt(var / n)
    analytic_mr = forms["mean_restarts"]
    if analytic_mr is None:
        z = None
    elif se > 0:
        z = (mean - analytic_mr) / se
    else:
        z = 0.0 if mean == analytic_mr else None
    mean_restarts = {
        "total": c["restarts"], "trials": n, "mean": mean, "ci95": [mean - Z95 * se, mean + Z95 * se],
        "analytic": analytic_mr, "z_score": z,
        "mc_verifiable": analytic_mr is not None and (analytic_mr == 0.0 or n >= 1000),
    }

    reference = {
        "forgery_bound": analysis.forgery_prob(p.m),
        "evasion_bound": analysis.evade_prob(p.d),
        "pns_evade_approx": analysis.pns_evade_approx(p.d, config.source.p1),
        "pns_evade_exact": analysis.pns_evade_exact(p.d, config.source.p1),
        "mean_disturbed_tamper_slots": c["disturbed_tamper_slots"] / n,
    }
    g = config.strategy.g
    if config.strategy.attack is Attack.SUBSET_GUESS and p.k <= g <= p.k + p.d:
        reference["subset_guess_success"] = analysis.subset_guess_success(p.k, p.d, g).float_value
    return ExperimentReport(config.describe(), n, metrics, mean_restarts, reference, dict(counts))


def run_experiment(config: ExperimentConfig, workers: int = 1, backend: str | None = None) -> ExperimentReport:
    return build_report(config, collect_counts(config, workers, backend))


def vary_config(config: ExperimentConfig, parameter: str, value) -> ExperimentConfig:
    if parameter not in SWEEPABLE:
        raise UnknownParameter([(parameter, f"sweepable parameters are {', '.join(SWEEPABLE)}")])
    p, s = config.params, config.strategy
    try:
        if parameter == "g":
            s = dataclasses.replace(s, attack=Attack.SUBSET_GUESS, g=int(value))
        elif parameter in ("k", "d"):
            kw = {parameter: int(value)}
            if parameter == "k" and p.m == p.k:
                kw["m"] = int(value)
            p = dataclasses.replace(p, **kw)
        elif parameter == "D":
            k, d = analysis.size_parameters(float(value))
            p = dataclasses.replace(p, k=k, d=d, m=k, target_D=float(value))
        elif parameter == "p1":
            return dataclasses.replace(config, source=dataclasses.replace(config.source, p1=float(value)))
    except ParamError as exc:
        raise ConfigError([(exc.field, str(exc))]) from None
    except (ValueError, analysis.DomainError) as exc:
        raise ConfigError([(parameter, str(exc))]) from None
    return dataclasses.replace(config, params=p, strategy=s)


def sweep(config: ExperimentConfig, vary: str, values: Iterable, workers: int = 1,
          backend: str | None = None) -> list[ExperimentReport]:
    reports = []
    for value in values:
        cell = vary_config(config, vary, value)
        report = run_experiment(cell, workers, backend)
        report.sweep = {"parameter": vary, "value": value}
        reports.append(report)
    return reports


def sweep_to_json(reports: list[ExperimentReport]) -> str:
    return json.dumps([r.as_dict() for r in reports], indent=2) + "\n"


def sweep_to_csv(reports: list[ExperimentReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("parameter", "value", *CSV_COLUMNS))
    for r in reports:
        for row in r.csv_rows():
            w.writerow([r.sweep["parameter"], r.sweep["value"], *["" if v is None else v for v in row]])
    return buf.getvalue()
