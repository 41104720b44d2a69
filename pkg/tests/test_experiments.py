import csv
import subprocess
import sys

import numpy as np
import pytest

from lsis.black_scholes import bs_closed_form
from lsis.cli import main
from lsis.optimize import presimulate
from lsis.experiments import (
    RESULT_FIELDS,
    ConfigError,
    ResultRow,
    bundled_configs,
    load_config,
    parse_config,
    read_results,
    run_experiment,
    summarize,
    write_results,
)

BS_HEADER = """
[experiment]
id = tiny
[model]
type = black_scholes
spot = 50
rate = 0.05
maturity = 1.0
"""

LMM_HEADER = """
[experiment]
id = tiny_lmm
[model]
type = lmm
"""


def _bs(run, instruments=""):
    return parse_config(BS_HEADER + "[run]\n" + run + "\n" + instruments)


CALL_ATM = "[instrument.1]\nkind = call\nvolatility = 0.1\nstrike = 50\n"


# -- manifest of bundled tables -----------------------------------------------------

MANIFEST = {
    "calls": [f"call sigma={s} K={k}" for s, ks in (("0.1", (30, 50, 60)), ("0.3", (30, 50, 60))) for k in ks],
    "puts": [f"put sigma={s} K={k}" for s, ks in (("0.1", (40, 50, 60)), ("0.3", (30, 50, 60))) for k in ks],
    "caplets": [f"caplet T={t} K={k}" for t, ks in (("1", ("0.04", "0.055", "0.07")), ("2.5", ("0.04", "0.055", "0.07")),
                                                    ("5", ("0.04", "0.06", "0.08")), ("7", ("0.04", "0.055", "0.07")))
                for k in ks],
    "caps": [f"cap Tn=0.25 TM={t} K={k}" for t in ("1", "2.5", "5", "7") for k in ("0.04", "0.055", "0.07")],
    "swaptions": [f"swaption Tn={a} TM1={b} K={k}" for a, b, ks in (
        ("0.5", "1.5", ("0.04", "0.055", "0.07")), ("0.5", "2.5", ("0.04", "0.055", "0.07")),
        ("0.5", "5.5", ("0.04", "0.055", "0.07")), ("1", "6", ("0.04", "0.055", "0.07")),
        ("2", "7", ("0.04", "0.055", "0.09")), ("5", "10", ("0.04", "0.055", "0.09"))) for k in ks],
    "straddles": [f"straddle T={t} K={k}" for t in ("1", "5") for k in ("0.04", "0.05", "0.06", "0.07")],
}


def test_bundled_configs_cover_every_table_row_once():
    cfgs = bundled_configs()
    assert set(cfgs) == set(MANIFEST)
    for name, rows in MANIFEST.items():
        cfg = load_config(name)
        got = [i.descriptor for i in cfg.instruments]
        assert got == rows, name
        assert len(set(got)) == len(got)


def test_bundled_settings():
    for name in ("calls", "puts"):
        cfg = load_config(name)
        assert cfg.run.paths == 1_000_000
        assert set(cfg.run.methods) == {"crude", "lsis", "lsis_vol", "ghs"}
    for name in ("caplets", "caps", "swaptions", "straddles"):
        assert load_config(name).run.paths == 200_000
    sw = load_config("swaptions")
    knots = [i.knots for i in sw.instruments]
    assert knots == [3] * 15 + [5] * 3
    assert load_config("caps").run.knots == 3
    assert "lsis_mm" in load_config("straddles").run.methods


# -- parsing and validation ---------------------------------------------------------

def test_parse_minimal_and_overrides():
    cfg = _bs("methods = crude, lsis\npaths = 1000\nseed = 3\ntarget.lsis = pseudo_variance\npresim_paths.lsis = 80",
              CALL_ATM)
    assert cfg.experiment_id == "tiny"
    assert cfg.run.option("target", "lsis") == "pseudo_variance"
    assert cfg.run.option("target", "crude") == "second_moment"
    assert cfg.run.option("presim_paths", "lsis") == 80
    c2 = cfg.with_overrides(seed=9, paths=500, output="x.csv")
    assert (c2.run.seed, c2.run.paths, c2.output) == (9, 500, "x.csv")
    assert cfg.run.seed == 3


@pytest.mark.parametrize("run, inst", [
    ("methods = crude, nope", CALL_ATM),
    ("methods = crude, lsis_strat\npaths = 1001\nstrata = 10", CALL_ATM),
    ("methods = crude, crude", CALL_ATM),
    ("paths = 1", CALL_ATM),
    ("seed = -4", CALL_ATM),
    ("paths = many", CALL_ATM),
    ("target = variance", CALL_ATM),
    ("color.lsis = blue", CALL_ATM),
    ("", "[instrument.1]\nkind = digital\nstrike = 50\nvolatility = 0.1\n"),
    ("", "[instrument.1]\nkind = call\nvolatility = 0.1\n"),
    ("", "[instrument.1]\nkind = call\nvolatility = -0.1\nstrike = 50\n"),
    ("repetitions = 300\npaths = 100000000", CALL_ATM),
])
def test_invalid_bs_configs(run, inst):
    with pytest.raises(ConfigError):
        _bs(run, inst)


@pytest.mark.parametrize("body", [
    "[run]\nmethods = crude, ghs\n[instrument.1]\nkind = caplet\nmaturity = 1\nstrike = 0.04\n",
    "[run]\n[instrument.1]\nkind = caplet\nmaturity = 0.3\nstrike = 0.04\n",
    "[run]\n[instrument.1]\nkind = caplet\nmaturity = 0\nstrike = 0.04\n",
    "[run]\n[instrument.1]\nkind = swaption\nexpiry = 2\nfinal = 1\nstrike = 0.04\n",
    "[run]\n[instrument.1]\nkind = cap\nfirst = 0\nlast = 1\nstrike = 0.04\n",
    "[run]\nknots = 9\n[instrument.1]\nkind = caplet\nmaturity = 0.5\nstrike = 0.04\n",
    "[run]\n[instrument.1]\nkind = bond\nmaturity = 1\nstrike = 0.04\n",
    "[run]\n[instrument.1]\nkind = caplet\nmaturity = 1\nstrike = -0.01\n",
    "[run]\n[instrument.1]\nkind = swaption\nexpiry = 1\nfinal = 2\nstrike = 0.04\ndiscount = maybe\n",
])
def test_invalid_lmm_configs(body):
    with pytest.raises(ConfigError):
        parse_config(LMM_HEADER + body)


def test_missing_sections_and_model_type():
    with pytest.raises(ConfigError):
        parse_config("[experiment]\nid = x\n[run]\n")
    with pytest.raises(ConfigError):
        parse_config("[experiment]\n[model]\ntype = heston\n[run]\n")
    with pytest.raises(ConfigError):
        parse_config("not an ini file")


def test_lmm_instrument_parsing():
    cfg = parse_config(LMM_HEADER + "tenor = 0.5\nsigma0 = 0.1\n[run]\nknots = 2\n"
                       "[instrument.a]\nkind = swaption\nexpiry = 1\nfinal = 3\nstrike = 0.05\ndiscount = no\n"
                       "[instrument.b]\nkind = floorlet\nmaturity = 2\nstrike = 0.05\nknots = 1\n")
    sw, fl = cfg.instruments
    assert sw.descriptor == "swaption Tn=1 TM1=3 K=0.05 at-expiry"
    assert (sw.payoff.instrument.expiry, sw.payoff.instrument.final) == (2, 6)
    assert not sw.payoff.instrument.discounted
    assert sw.payoff.config.sigma0 == 0.1 and sw.knots is None
    assert fl.kind == "floorlet" and fl.knots == 1
    assert fl.payoff.dimension == 4 * 3 * 3


def test_load_config_errors(tmp_path):
    with pytest.raises(OSError):
        load_config(tmp_path / "absent.cfg")
    p = tmp_path / "mine.cfg"
    p.write_text(BS_HEADER + "[run]\n" + CALL_ATM)
    assert load_config(p).source == str(p)
    assert load_config("caplets.cfg").experiment_id == "caplets"


# -- running ----------------------------------------------------------------------

def test_crude_only_bs_call_matches_closed_form():
    cfg = _bs("methods = crude\npaths = 100000\nrepetitions = 1\nseed = 5", CALL_ATM)
    (row,) = run_experiment(cfg)
    ref = bs_closed_form(cfg.instruments[0].closed_form)
    assert row.method == "crude" and row.variance_ratio == 1.0
    assert abs(row.price - ref) < 3 * row.std_error


def test_empty_instrument_list():
    assert run_experiment(_bs("methods = crude, lsis")) == []


def test_rows_in_config_order_with_crude_first():
    inst = CALL_ATM + "[instrument.2]\nkind = put\nvolatility = 0.3\nstrike = 50\n"
    cfg = _bs("methods = lsis, ghs, crude, lsis_vol\npaths = 20000\nrepetitions = 2\ntarget = pseudo_variance\n"
              "presim_paths = 200", inst)
    rows = run_experiment(cfg)
    assert [(r.instrument, r.method) for r in rows] == [
        (i, m) for i in ("call sigma=0.1 K=50", "put sigma=0.3 K=50") for m in ("crude", "lsis", "ghs", "lsis_vol")]
    for r in rows:
        assert r.N_p == 20000 and r.seed == cfg.run.seed
        assert np.isfinite(r.price) and r.std_error > 0
    crude = {r.instrument: r for r in rows if r.method == "crude"}
    for r in rows:
        assert abs(r.price - crude[r.instrument].price) < 4 * np.hypot(r.std_error, crude[r.instrument].std_error)
    assert all(r.vr_uncertainty >= 0 for r in rows)
    assert all(r.fit is not None for r in rows if r.method in ("lsis", "lsis_vol"))


def test_zero_payout_presample_is_flagged():
    inst = "[instrument.1]\nkind = call\nvolatility = 0.1\nstrike = 500\n"
    cfg = _bs("methods = crude, lsis\npaths = 1000\nrepetitions = 1\npresim_paths = 10\nmin_nonzero = 1", inst)
    rows = run_experiment(cfg)
    assert "zero_presample" in rows[1].flags
    assert "presample_extended" in rows[1].flags
    # a zero crude variance against a zero IS variance counts as an infinite ratio
    assert rows[1].price == 0.0


def test_lmm_run_with_strata_and_warm_start(caplog):
    body = ("[run]\nmethods = crude, lsis, lsis_strat\npaths = 2000\npresim_paths = 200\nstrata = 10\n"
            "repetitions = 2\nseed = 4\n"
            "[instrument.1]\nkind = caplet\nmaturity = 1\nstrike = 0.04\n"
            "[instrument.2]\nkind = caplet\nmaturity = 1\nstrike = 0.055\n")
    cfg = parse_config(LMM_HEADER + body)
    progress = []
    rows = run_experiment(cfg, progress=progress.append)
    assert len(rows) == 6 and len(progress) == 2
    strat = [r for r in rows if r.method == "lsis_strat"]
    lsis = [r for r in rows if r.method == "lsis"]
    assert all(r.M_strata == 10 for r in strat)
    assert all(r.N_k == 1 for r in strat + lsis)
    # the stratified row reuses the plain fit
    assert strat[0].fit is lsis[0].fit
    # the second strike starts from the first optimum, not from zero drift
    ps = presimulate(cfg.instruments[1].payoff, 200, seed=4, min_nonzero=10)
    assert lsis[1].fit.objective_trace[0] < 0.5 * np.mean(ps.payouts ** 2)


# -- CSV ----------------------------------------------------------------------------

def _row(**kw):
    base = dict(experiment_id="e", instrument="call sigma=0.1 K=50", method="lsis", price=3.4024788544110716,
                std_error=1.2345678901234567e-05, variance_ratio=7.765432109876543, vr_uncertainty=0.0,
                N_p=1000000, N_k=1, M_strata=1, seed=12345, wall_time_seconds=1.5, presim_seconds=0.01,
                flags="")
    base.update(kw)
    return ResultRow(**base)


def test_csv_round_trip(tmp_path):
    rows = [_row(), _row(method="crude", variance_ratio=1.0, flags="not_converged;presample_extended"),
            _row(variance_ratio=float("inf"), flags="infinite_vr")]
    path = tmp_path / "out" / "r.csv"
    write_results(rows, path)
    back = read_results(path)
    for a, b in zip(rows, back):
        for name in RESULT_FIELDS:
            va, vb = getattr(a, name), getattr(b, name)
            if isinstance(va, float):
                assert float(f"{va:.15g}") == float(f"{vb:.15g}")
            else:
                assert va == vb
    text = path.read_bytes().decode("utf-8")
    assert text.splitlines()[0] == ",".join(RESULT_FIELDS)
    assert "\r" not in text


def test_csv_header_only(tmp_path):
    p = tmp_path / "empty.csv"
    write_results([], p)
    assert p.read_text(encoding="utf-8") == ",".join(RESULT_FIELDS) + "\n"
    assert read_results(p) == []


def test_csv_unwritable_path_named(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    target = blocker / "sub" / "r.csv"
    with pytest.raises(OSError) as exc:
        write_results([_row()], target)
    assert str(target) in str(exc.value) or str(blocker) in str(exc.value)


def test_read_results_rejects_other_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_results(p)


def test_summary_table():
    text = summarize([_row(), _row(variance_ratio=float("inf"))])
    assert "inf" in text and "call sigma=0.1 K=50" in text


# -- reproducibility and CLI --------------------------------------------------------

TIMING = {"wall_time_seconds", "presim_seconds"}


def _strip_timing(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: v for k, v in rec.items() if k not in TIMING} for rec in csv.DictReader(fh)]


def _write_cfg(tmp_path, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(BS_HEADER + "[run]\nmethods = crude, lsis, ghs, lsis_vol\npaths = 5000\nrepetitions = 2\n"
                 "presim_paths = 100\ntarget = pseudo_variance\nseed = 8\n" + CALL_ATM
                 + "[instrument.2]\nkind = put\nvolatility = 0.3\nstrike = 40\n")
    return p


def test_identical_runs_give_identical_files(tmp_path):
    cfgp = _write_cfg(tmp_path)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["run", str(cfgp), "-o", str(a), "-q"]) == 0
    assert main(["run", str(cfgp), "-o", str(b), "-q"]) == 0
    assert _strip_timing(a) == _strip_timing(b)
    assert len(_strip_timing(a)) == 8


def test_cli_overrides_and_stream_separation(tmp_path, capsys):
    cfgp = _write_cfg(tmp_path)
    out = tmp_path / "o.csv"
    assert main(["run", str(cfgp), "--seed", "99", "--paths", "3000", "--repetitions", "1", "--output", str(out)]) == 0
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "call sigma=0.1 K=50" in captured.err
    rows = read_results(out)
    assert {r.seed for r in rows} == {99} and {r.N_p for r in rows} == {3000}


def test_cli_exit_codes(tmp_path, capsys, caplog):
    bad = tmp_path / "bad.cfg"
    bad.write_text(BS_HEADER + "[run]\nmethods = crude, bogus\n")
    assert main(["run", str(bad)]) == 2
    assert main(["run", str(tmp_path / "missing.cfg")]) == 3
    cfgp = _write_cfg(tmp_path)
    assert main(["run", str(cfgp), "--paths", "1"]) == 2
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert main(["run", str(cfgp), "--paths", "100", "-q", "-o", str(blocker / "x.csv")]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code != 0
    assert "invalid choice" in capsys.readouterr().err
    assert "invalid configuration" in caplog.text
    assert str(blocker / "x.csv") in caplog.text


def test_cli_empty_config_writes_header(tmp_path):
    p = tmp_path / "empty.cfg"
    p.write_text(BS_HEADER + "[run]\nmethods = crude\n")
    out = tmp_path / "e.csv"
    assert main(["run", str(p), "-o", str(out), "-q"]) == 0
    assert out.read_text() == ",".join(RESULT_FIELDS) + "\n"


def test_cli_list(capsys):
    assert main(["list"]) == 0
    out = capsys.readouterr().out
    for name in MANIFEST:
        assert name in out


def test_console_entry_point_runs(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lsis.cli", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "caplets" in proc.stdout
