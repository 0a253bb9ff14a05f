import csv
import io
import json
import math

import pytest

from qauth import cli, kernel, sim
from qauth.analysis import subset_guess_success
from qauth.sim import (
    CSV_COLUMNS, ConfigError, ExperimentConfig, UnknownParameter, collect_counts, parse_config_text,
    run_experiment, sweep, sweep_to_csv, sweep_to_json, vary_config, wilson_interval, z_score,
)


def cfg(**kw):
    return ExperimentConfig.from_mapping(kw)


def test_defaults():
    c = cfg()
    assert (c.params.k, c.params.d, c.trials, c.master_seed) == (17, 41, 10_000, 1)
    assert c.strategy.attack.value == "passive"


def test_parse_config_text():
    text = "# comment\nk = 5\n d=7  # trailing\n\nstrategy = pns\n"
    assert parse_config_text(text) == {"k": "5", "d": "7", "strategy": "pns"}
    with pytest.raises(ConfigError) as exc:
        parse_config_text("k 5\n")
    assert exc.value.errors[0][0] == "line 1"


@pytest.mark.parametrize("values,field", [
    ({"bogus": 1}, "bogus"), ({"k": "x"}, "k"), ({"k": 0}, "k"), ({"m": 20}, "m"),
    ({"strategy": "nope"}, "strategy"), ({"trials": 0}, "trials"), ({"format": "xml"}, "format"),
    ({"strategy": "subset-guess", "g": 99}, "g"), ({"p1": 0}, "p1"), ({"key_basis": "circular"}, "key_basis"),
    ({"strategy": "oracle-locations", "knows_plaintext": "no"}, "knows_plaintext"),
    ({"knows_plaintext": "maybe"}, "knows_plaintext"), ({"target_D": 2.0}, "target_D"),
    ({"seed": -1}, "seed"),
])
def test_config_errors_name_the_field(values, field):
    with pytest.raises(ConfigError) as exc:
        cfg(**values)
    assert field in [f for f, _ in exc.value.errors]


def test_target_D_sets_sizes():
    c = cfg(target_D=2.0 ** -17)
    assert (c.params.k, c.params.d) == (17, 41)
    assert cfg(target_D=1e-3, k=4, d=5).params.k == 4


def _wilson_bisect(s, n, z):
    phat = s / n

    def f(p):
        return abs(phat - p) - z * math.sqrt(p * (1 - p) / n)

    def root(lo, hi):
        for _ in range(200):
            mid = (lo + hi) / 2
            if (f(lo) > 0) == (f(mid) > 0):
                lo = mid
            else:
                hi = mid
        return (lo + hi) / 2

    low = 0.0 if s == 0 else root(0.0, phat)
    high = 1.0 if s == n else root(phat, 1.0)
    return low, high


@pytest.mark.parametrize("s,n", [(0, 10), (10, 10), (3, 10), (500, 1000), (1, 100_000), (7, 13)])
def test_wilson_matches_bisection(s, n):
    lo, hi = wilson_interval(s, n)
    blo, bhi = _wilson_bisect(s, n, sim.Z95)
    assert lo == pytest.approx(blo, abs=1e-9) and hi == pytest.approx(bhi, abs=1e-9)


def test_z_score():
    assert z_score(50, 100, 0.5) == 0
    assert z_score(60, 100, 0.5) == pytest.approx(2.0)


def test_determinism_and_workers():
    c = cfg(strategy="intercept-resend", k=4, d=6, trials=25_000)
    a = run_experiment(c).to_json()
    assert run_experiment(c).to_json() == a
    assert run_experiment(c, workers=3).to_json() == a
    assert collect_counts(c, chunk=7_000) == collect_counts(c)


def test_different_seed_changes_report():
    a = run_experiment(cfg(strategy="pns", p1=0.5, k=3, d=5, trials=2000, seed=1)).as_dict()
    b = run_experiment(cfg(strategy="pns", p1=0.5, k=3, d=5, trials=2000, seed=2)).as_dict()
    assert a["digest"] != b["digest"]


def test_json_schema():
    d = run_experiment(cfg(k=3, d=4, trials=500)).as_dict()
    assert d["schema"] == "qauth-report/1"
    assert list(d) == ["schema", "config", "trials", "metrics", "mean_restarts", "reference", "digest"]
    for mt in d["metrics"].values():
        assert set(mt) == {"successes", "trials", "empirical_rate", "ci95", "analytic", "z_score",
                           "mc_verifiable"}


def test_csv_columns_and_rows():
    r = run_experiment(cfg(k=3, d=4, trials=500))
    rows = list(csv.reader(io.StringIO(r.to_csv())))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert [row[0] for row in rows[1:]] == [*r.metrics, "mean_restarts"]


def test_zero_tamper_slots_reported_not_tested():
    r = run_experiment(cfg(k=4, d=0, trials=200, strategy="intercept-resend"))
    mt = r.metrics["alice_tamper_error_rate"]
    assert mt["trials"] == 0 and mt["empirical_rate"] is None and not mt["mc_verifiable"]


REGRESSION = [
    dict(strategy="intercept-resend", k=4, d=8, max_restarts=0),
    dict(strategy="intercept-resend", k=3, d=4, max_restarts=3),
    dict(strategy="intercept-resend", k=3, d=6, placement="both"),
    dict(strategy="pns", p1=0.5, k=4, d=10),
    dict(strategy="pns", p1=0.3, k=2, d=6, max_photons=4, placement="bob"),
    dict(strategy="subset-guess", g=6, k=3, d=7, max_restarts=0),
    dict(strategy="subset-guess", g=4, k=2, d=6, max_restarts=2),
    dict(strategy="oracle-locations", k=5, d=7),
    dict(strategy="passive", k=3, d=5),
]


@pytest.mark.parametrize("values", REGRESSION, ids=lambda v: "-".join(str(x) for x in v.values()))
def test_metrics_agree_with_closed_forms(values):
    trials = 100_000 if kernel.BACKEND == "cython" else 10_000
    r = run_experiment(cfg(trials=trials, seed=99, **values))
    assert r.inconsistent() == []
    assert any(m["mc_verifiable"] for m in r.metrics.values())


def test_sweep_g_tracks_exact_values():
    base = cfg(strategy="subset-guess", g=3, k=3, d=12, max_restarts=0,
               trials=200_000 if kernel.BACKEND == "cython" else 10_000)
    reports = sweep(base, "g", range(3, 11))
    analytic = [r.metrics["coverage_success_rate"]["analytic"] for r in reports]
    assert analytic == sorted(analytic)
    for g, r in zip(range(3, 11), reports):
        assert r.reference["subset_guess_success"] == pytest.approx(float(subset_guess_success(3, 12, g).value))
        assert r.inconsistent() == []


def test_sweep_D_and_p1():
    reports = sweep(cfg(trials=200), "D", [1e-3, 1e-6])
    assert [(r.config["k"], r.config["d"]) for r in reports] == [(10, 25), (20, 49)]
    reports = sweep(cfg(strategy="pns", k=3, d=8, trials=20_000), "p1", [0.25, 0.5, 1.0])
    ev = [r.metrics["evasion_rate"]["empirical_rate"] for r in reports]
    assert ev == sorted(ev, reverse=True)
    data = json.loads(sweep_to_json(reports))
    assert [d["sweep"]["value"] for d in data] == [0.25, 0.5, 1.0]
    assert sweep_to_csv(reports).splitlines()[0].startswith("parameter,value,metric")


def test_vary_unknown_parameter():
    with pytest.raises(UnknownParameter):
        vary_config(cfg(), "trials", 3)
    with pytest.raises(ConfigError):
        vary_config(cfg(k=3, d=2), "g", 9)


def test_cli_run_json_and_csv(tmp_path, capsys):
    assert cli.main(["run", "--k", "3", "--d", "4", "--trials", "300"]) == 0
    assert json.loads(capsys.readouterr().out)["trials"] == 300
    out = tmp_path / "r.csv"
    assert cli.main(["run", "--k", "3", "--d", "4", "--trials", "300", "--format", "csv", "--out", str(out)]) == 0
    assert out.read_text().splitlines()[0] == ",".join(CSV_COLUMNS)


def test_cli_config_file_and_override(tmp_path, capsys):
    conf = tmp_path / "exp.conf"
    conf.write_text("k = 3\nd = 4\ntrials = 100\nstrategy = intercept-resend\n")
    assert cli.main(["run", "--config", str(conf), "--trials", "50"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["config"]["trials"] == 50 and rep["config"]["strategy"] == "intercept-resend"


@pytest.mark.parametrize("argv", [
    ["run", "--k", "zero"], ["run", "--strategy", "nope"], ["run", "--config", "/nonexistent/x"],
    ["sweep", "--vary", "g", "--values", "a,b"], ["size", "--D", "2"],
])
def test_cli_config_errors_exit_2(argv, capsys):
    assert cli.main(argv) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_size(capsys):
    assert cli.main(["size", "--D", str(2.0 ** -17)]) == 0
    out = capsys.readouterr().out
    assert " 17   41 " in out and "2.41" in out


def test_cli_sweep(capsys):
    assert cli.main(["sweep", "--vary", "d", "--values", "2,4", "--k", "2", "--trials", "100"]) == 0
    assert len(json.loads(capsys.readouterr().out)) == 2


def test_cli_selftest_pass_and_fail(monkeypatch, capsys):
    assert cli.main(["selftest", "--trials", "2000"]) == 0
    assert "FAIL" not in capsys.readouterr().out
    import qauth.selftest
    monkeypatch.setattr(qauth.selftest, "run_checks", lambda trials: [("forced", False, "x")])
    assert cli.main(["selftest"]) == 3
