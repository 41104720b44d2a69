"""Batch experiments: configuration files, the run loop and CSV results.

A configuration is an INI file::

    [experiment]
    id = caplets

    [model]
    type = lmm                  ; or black_scholes
    tenor = 0.25                ; model parameters, all optional

    [run]
    methods = crude, lsis, lsis_strat
    paths = 200000
    presim_paths = 500
    knots = 1
    strata = 100
    seed = 2024
    repetitions = 10
    target = second_moment
    target.lsis_vol = pseudo_variance   ; per-method override
    output = caplets.csv

    [instrument.1]
    kind = caplet
    maturity = 1.0
    strike = 0.04

Instrument sections run in file order. Black-Scholes instruments take
``kind`` (call/put), ``strike`` and ``volatility`` (``spot``, ``rate`` and
``maturity`` fall back to the model section); LMM instruments are ``caplet``,
``floorlet`` and ``straddle`` (``maturity``), ``cap`` (``first``, ``last``)
and ``swaption`` (``expiry``, ``final``), all in years, plus ``strike`` and
an optional ``knots``. Swaptions are discounted to time zero unless
``discount = false``, which prices the value at expiry instead.
"""

import configparser
import csv
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .black_scholes import CALL, PUT, BsParams, BsPayoff, ghs_drift
from .densities import ShiftedGaussian
from .estimators import (
    CRUDE,
    GHS_IS,
    LSIS,
    LSIS_MM,
    LSIS_STRAT,
    LSIS_VOL,
    LSISampler,
    crude_estimate,
    is_estimate,
    is_stratified_estimate,
    variance_ratio,
)
from .lmm import LmmConfig
from .optimize import PSEUDO_VARIANCE, SECOND_MOMENT
from .payoffs import Cap, Caplet, Floorlet, LmmPayoff, Straddle, Swaption
from .sampling import RngStream

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "InstrumentEntry",
    "RunSettings",
    "ResultRow",
    "RESULT_FIELDS",
    "bundled_configs",
    "load_config",
    "parse_config",
    "run_experiment",
    "write_results",
    "read_results",
]

log = logging.getLogger(__name__)

BLACK_SCHOLES = "black_scholes"
LMM = "lmm"
METHODS = (CRUDE, LSIS, LSIS_STRAT, LSIS_VOL, LSIS_MM, GHS_IS)
FAMILY = {LSIS: "drift", LSIS_STRAT: "drift", LSIS_VOL: "drift_vol", LSIS_MM: "mixture"}
BS_ONLY = (LSIS_VOL, GHS_IS)

# Stream layout: presample paths start at 0, main-run repetition r uses
# [MAIN_OFFSET + r * paths, MAIN_OFFSET + (r + 1) * paths).
MAIN_OFFSET = 1 << 24
MAX_STREAM = 1 << 32

RESULT_FIELDS = (
    "experiment_id", "instrument", "method", "price", "std_error", "variance_ratio",
    "vr_uncertainty", "N_p", "N_k", "M_strata", "seed", "wall_time_seconds",
    "presim_seconds", "flags",
)


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class RunSettings:
    methods: tuple = (CRUDE, LSIS)
    paths: int = 200_000
    presim_paths: int = 500
    knots: int = 1
    strata: int = 100
    seed: int = 0
    repetitions: int = 10
    target: str = SECOND_MOMENT
    min_nonzero: int = 10
    warm_start: bool = True
    overrides: dict = field(default_factory=dict)

    def option(self, name, method):
        """Per-method override ``name.method`` falling back to the run-wide value."""
        return self.overrides.get(f"{name}.{method}", getattr(self, name))


@dataclass(frozen=True)
class InstrumentEntry:
    descriptor: str
    kind: str
    payoff: object
    knots: int = None
    closed_form: object = None  # BsParams for Black-Scholes rows


@dataclass(frozen=True)
class ExperimentConfig:
    experiment_id: str
    model_type: str
    instruments: tuple
    run: RunSettings
    output: str = None
    source: str = None

    def with_overrides(self, seed=None, paths=None, strata=None, repetitions=None, output=None):
        changes = {k: v for k, v in dict(seed=seed, paths=paths, strata=strata,
                                         repetitions=repetitions).items() if v is not None}
        cfg = replace(self, run=replace(self.run, **changes))
        if output is not None:
            cfg = replace(cfg, output=str(output))
        validate(cfg)
        return cfg

    def select(self, *indices):
        """A copy restricted to the given instrument positions."""
        return replace(self, instruments=tuple(self.instruments[i] for i in indices))


@dataclass
class ResultRow:
    experiment_id: str
    instrument: str
    method: str
    price: float
    std_error: float
    variance_ratio: float
    vr_uncertainty: float
    N_p: int
    N_k: int
    M_strata: int
    seed: int
    wall_time_seconds: float
    presim_seconds: float = 0.0
    flags: str = ""
    # not written to CSV
    fit: object = field(default=None, repr=False, compare=False)
    density: object = field(default=None, repr=False, compare=False)
    reports: list = field(default=None, repr=False, compare=False)

    def as_record(self):
        return {name: getattr(self, name) for name in RESULT_FIELDS}


# ---------------------------------------------------------------- parsing

def _get(section, key, conv, default=None):
    if key not in section:
        if default is None:
            raise ConfigError(f"[{section.name}] is missing '{key}'")
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from None


def _bool(text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


def _fmt(x):
    return f"{x:g}"


def _bs_instrument(sec, model):
    kind = sec["kind"].strip().lower()
    vol = _get(sec, "volatility", float, model.get("volatility"))
    params = BsParams(
        spot=_get(sec, "spot", float, model.get("spot", 50.0)),
        strike=_get(sec, "strike", float),
        rate=_get(sec, "rate", float, model.get("rate", 0.05)),
        volatility=vol,
        maturity=_get(sec, "maturity", float, model.get("maturity", 1.0)),
    )
    desc = f"{kind} sigma={_fmt(params.volatility)} K={_fmt(params.strike)}"
    return InstrumentEntry(desc, kind, BsPayoff(params, kind), _get(sec, "knots", int, 1), params)


def _lmm_instrument(sec, lmm):
    kind = sec["kind"].strip().lower()
    h = lmm.tenor
    strike = _get(sec, "strike", float)
    if strike <= 0:
        raise ConfigError(f"[{sec.name}] strike must be positive")
    if kind in ("caplet", "floorlet", "straddle"):
        T = _get(sec, "maturity", float)
        cls = {"caplet": Caplet, "floorlet": Floorlet, "straddle": Straddle}[kind]
        inst = cls.from_years(T, strike, h)
        if inst.m < 1:
            raise ConfigError(f"[{sec.name}] maturity must be at least one period")
        desc = f"{kind} T={_fmt(T)} K={_fmt(strike)}"
    elif kind == "cap":
        first, last = _get(sec, "first", float), _get(sec, "last", float)
        inst = Cap.from_years(first, last, strike, h)
        if not 1 <= inst.first <= inst.last:
            raise ConfigError(f"[{sec.name}] cap needs 0 < first <= last")
        desc = f"cap Tn={_fmt(first)} TM={_fmt(last)} K={_fmt(strike)}"
    elif kind == "swaption":
        expiry, final = _get(sec, "expiry", float), _get(sec, "final", float)
        discounted = _get(sec, "discount", _bool, True)
        inst = Swaption.from_years(expiry, final, strike, h, discounted)
        if not 0 < inst.expiry < inst.final:
            raise ConfigError(f"[{sec.name}] swaption needs 0 < expiry < final")
        desc = f"swaption Tn={_fmt(expiry)} TM1={_fmt(final)} K={_fmt(strike)}"
        if not discounted:
            desc += " at-expiry"
    else:
        raise ConfigError(f"[{sec.name}] unknown LMM instrument kind {kind!r}")
    knots = _get(sec, "knots", int, 0) or None
    return InstrumentEntry(desc, kind, LmmPayoff(inst, lmm), knots)


def parse_config(text, source=None):
    """Build an :class:`ExperimentConfig` from INI text."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for name in ("experiment", "model", "run"):
        if not cp.has_section(name):
            raise ConfigError(f"missing [{name}] section")
    exp, model, run = cp["experiment"], cp["model"], cp["run"]

    methods = tuple(m.strip().lower() for m in run.get("methods", "crude, lsis").split(",") if m.strip())
    overrides = {}
    for key in run:
        if "." in key:
            name, method = key.split(".", 1)
            if name not in ("target", "presim_paths", "knots", "min_nonzero"):
                raise ConfigError(f"[run] cannot override {name!r} per method")
            conv = str if name == "target" else int
            overrides[key] = _get(run, key, conv)
    settings = RunSettings(
        methods=methods,
        paths=_get(run, "paths", int, 200_000),
        presim_paths=_get(run, "presim_paths", int, 500),
        knots=_get(run, "knots", int, 1),
        strata=_get(run, "strata", int, 100),
        seed=_get(run, "seed", int, 0),
        repetitions=_get(run, "repetitions", int, 10),
        target=_get(run, "target", str, SECOND_MOMENT),
        min_nonzero=_get(run, "min_nonzero", int, 10),
        warm_start=_get(run, "warm_start", _bool, True),
        overrides=overrides,
    )

    model_type = model.get("type", "").strip().lower()
    sections = [s for s in cp.sections() if s.startswith("instrument")]
    instruments = []
    if model_type == BLACK_SCHOLES:
        defaults = {k: _get(model, k, float) for k in ("spot", "rate", "maturity", "volatility") if k in model}
        for s in sections:
            kind = cp[s].get("kind", "").strip().lower()
            if kind not in (CALL, PUT):
                raise ConfigError(f"[{s}] Black-Scholes instruments are call or put, got {kind!r}")
            try:
                instruments.append(_bs_instrument(cp[s], defaults))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{s}] {exc}") from None
    elif model_type == LMM:
        keys = {"tenor": float, "euler_substeps": int, "num_factors": int, "sigma0": float,
                "alpha": float, "beta": float, "l0": float}
        kw = {k: _get(model, k, conv) for k, conv in keys.items() if k in model}
        try:
            lmm = LmmConfig(num_periods=0, **kw)
        except ValueError as exc:
            raise ConfigError(f"[model] {exc}") from None
        for s in sections:
            try:
                instruments.append(_lmm_instrument(cp[s], lmm))
            except ConfigError:
                raise
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"[{s}] {exc}") from None
    else:
        raise ConfigError(f"[model] type must be {BLACK_SCHOLES!r} or {LMM!r}, got {model_type!r}")

    cfg = ExperimentConfig(
        experiment_id=exp.get("id", "experiment").strip(),
        model_type=model_type,
        instruments=tuple(instruments),
        run=settings,
        output=run.get("output", exp.get("output")),
        source=source,
    )
    validate(cfg)
    return cfg


def load_config(path):
    """Read a config file; a bare name such as ``caplets`` selects a bundled config."""
    p = Path(path)
    if not p.exists():
        bundled = bundled_configs()
        name = p.stem if p.suffix == ".cfg" else p.name
        if name not in bundled:
            raise OSError(f"config file not found: {path}")
        p = bundled[name]
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot read config {p}: {exc.strerror or exc}") from None
    return parse_config(text, source=str(p))


def bundled_configs():
    """Mapping of bundled config names to their paths."""
    root = resources.files("lsis") / "configs"
    return {Path(str(p)).stem: Path(str(p)) for p in root.iterdir() if str(p).endswith(".cfg")}


def validate(cfg):
    r = cfg.run
    for m in r.methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        if m in BS_ONLY and cfg.model_type != BLACK_SCHOLES:
            raise ConfigError(f"method {m!r} is only available for Black-Scholes instruments")
        t = r.option("target", m)
        if t not in (SECOND_MOMENT, PSEUDO_VARIANCE):
            raise ConfigError(f"unknown target {t!r}")
        if r.option("presim_paths", m) < 1:
            raise ConfigError("presim_paths must be positive")
    if len(set(r.methods)) != len(r.methods):
        raise ConfigError("methods are listed more than once")
    if r.paths < 2 or r.repetitions < 1:
        raise ConfigError("need paths >= 2 and repetitions >= 1")
    if r.seed < 0 or r.seed >= 2**64:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    if MAIN_OFFSET + r.repetitions * r.paths > MAX_STREAM:
        raise ConfigError("paths x repetitions exceeds the available stream indices")
    if LSIS_STRAT in r.methods:
        if r.strata < 1:
            raise ConfigError("strata must be positive")
        if r.paths % r.strata:
            raise ConfigError(f"paths={r.paths} is not divisible by strata={r.strata}")
        if r.strata > 1 and r.paths // r.strata < 2:
            raise ConfigError("need at least two paths per stratum")
    for inst in cfg.instruments:
        dim = inst.payoff.dimension
        knots = inst.knots or r.knots
        if cfg.model_type == LMM:
            steps = dim // inst.payoff.config.num_factors
            if not 1 <= knots <= steps:
                raise ConfigError(f"{inst.descriptor}: {knots} knots do not fit {steps} Euler steps")


# ---------------------------------------------------------------- running

def _knots_for(cfg, inst, method):
    if cfg.model_type == BLACK_SCHOLES:
        return 1
    if f"knots.{method}" in cfg.run.overrides:
        return cfg.run.overrides[f"knots.{method}"]
    return inst.knots or cfg.run.knots


def _sampler(cfg, inst, method, theta0=None):
    family = FAMILY[method]
    factors = None if cfg.model_type == BLACK_SCHOLES else inst.payoff.config.num_factors
    return LSISampler(family=family, n_knots=_knots_for(cfg, inst, method), num_factors=factors,
                      target=cfg.run.option("target", method), theta0=theta0)


def _repeat(cfg, fn):
    r = cfg.run
    return [fn(RngStream(r.seed, MAIN_OFFSET + k * r.paths)) for k in range(r.repetitions)]


def _row(cfg, inst, method, reports, crude, elapsed, presim_time=0.0, n_k=0, strata=1, flags=()):
    flags = list(flags)
    if method == CRUDE:
        vr, unc = 1.0, 0.0
    else:
        rep = variance_ratio(crude, reports)
        vr, unc = rep.vr, rep.vr_uncertainty
        if rep.infinite:
            flags.append("infinite_vr")
    first = reports[0]
    return ResultRow(
        cfg.experiment_id, inst.descriptor, method, first.value, first.std_error, vr,
        0.0 if not np.isfinite(unc) else unc, first.num_paths, n_k, strata, cfg.run.seed,
        elapsed + presim_time, presim_time, ";".join(flags), reports=reports,
    )


def run_experiment(cfg, progress=None):
    """Run every instrument of ``cfg`` with every method; rows in config order.

    For each instrument the crude baseline runs first. Fitted methods share
    one presample per (family, settings) and warm-start from the previous
    instrument's optimum when the two have the same parameter layout.
    """
    validate(cfg)
    r = cfg.run
    rows = []
    warm = {}
    prev_kind = None
    for idx, inst in enumerate(cfg.instruments):
        if progress:
            progress(f"[{idx + 1}/{len(cfg.instruments)}] {inst.descriptor}")
        payoff = inst.payoff
        t0 = time.perf_counter()
        crude = _repeat(cfg, lambda s: crude_estimate(payoff, r.paths, s))
        crude_row = _row(cfg, inst, CRUDE, crude, crude, time.perf_counter() - t0)
        if CRUDE in r.methods:
            rows.append(crude_row)
        fits = {}
        for method in r.methods:
            if method == CRUDE:
                continue
            flags = []
            presim_time = 0.0
            n_k = 0
            strata = 1
            if method == GHS_IS:
                t0 = time.perf_counter()
                try:
                    density = ShiftedGaussian([ghs_drift(inst.closed_form, inst.kind)])
                except ValueError as exc:
                    log.warning("%s: GHS drift unavailable (%s)", inst.descriptor, exc)
                    density = ShiftedGaussian([0.0])
                    flags.append("ghs_failed")
                presim_time = time.perf_counter() - t0
                fit = None
            else:
                key = (FAMILY[method], _knots_for(cfg, inst, method), r.option("target", method),
                       r.option("presim_paths", method), r.option("min_nonzero", method))
                if key not in fits:
                    t0 = time.perf_counter()
                    theta0 = None
                    wkey = key + (payoff.dimension,)
                    if r.warm_start and prev_kind == inst.kind and wkey in warm:
                        theta0 = warm[wkey]
                    sampler = _sampler(cfg, inst, method, theta0)
                    sampler.fit_payoff(payoff, r.option("presim_paths", method), seed=r.seed,
                                       min_nonzero=r.option("min_nonzero", method))
                    warm[wkey] = sampler.theta_
                    fits[key] = (sampler, time.perf_counter() - t0)
                sampler, presim_time = fits[key]
                fit = sampler.result_
                density = sampler.density_
                n_k = key[1]
                if not sampler.converged_:
                    flags.append("not_converged")
                if sampler.n_presim_ > r.option("presim_paths", method):
                    flags.append("presample_extended")
                if sampler.presim_nonzero_ == 0:
                    flags.append("zero_presample")
            t0 = time.perf_counter()
            if method == LSIS_STRAT:
                strata = r.strata
                if not np.any(density.drift):
                    flags.append("zero_drift")
                    reports = _repeat(cfg, lambda s: is_estimate(payoff, density, r.paths, s, method=method))
                    strata = 1
                else:
                    reports = _repeat(cfg, lambda s: is_stratified_estimate(
                        payoff, density, r.paths, s, num_strata=strata))
            else:
                reports = _repeat(cfg, lambda s: is_estimate(payoff, density, r.paths, s, method=method))
            row = _row(cfg, inst, method, reports, crude, time.perf_counter() - t0,
                       presim_time, n_k, strata, flags)
            row.fit = fit
            row.density = density
            rows.append(row)
            if flags:
                log.warning("%s %s: %s", inst.descriptor, method, ", ".join(flags))
        prev_kind = inst.kind
    return rows


# ---------------------------------------------------------------- output

def _cell(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_results(rows, path):
    """Write rows as UTF-8 CSV with the fixed :data:`RESULT_FIELDS` header."""
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RESULT_FIELDS)
            for row in rows:
                rec = row.as_record()
                w.writerow([_cell(rec[k]) for k in RESULT_FIELDS])
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc.strerror or exc}") from None


_INT_FIELDS = {"N_p", "N_k", "M_strata", "seed"}
_STR_FIELDS = {"experiment_id", "instrument", "method", "flags"}


def read_results(path):
    """Parse a results CSV back into :class:`ResultRow` objects."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"{path} does not have the expected header")
        out = []
        for rec in reader:
            kw = {}
            for f in fields(ResultRow):
                if f.name not in RESULT_FIELDS:
                    continue
                v = rec[f.name]
                kw[f.name] = v if f.name in _STR_FIELDS else int(v) if f.name in _INT_FIELDS else float(v)
            out.append(ResultRow(**kw))
        return out


def summarize(rows):
    """Short text table for the terminal."""
    lines = [f"{'instrument':<34} {'method':<11} {'price':>13} {'std_err':>10} {'VR':>10}"]
    for row in rows:
        vr = "inf" if math.isinf(row.variance_ratio) else f"{row.variance_ratio:.4g}"
        lines.append(f"{row.instrument:<34} {row.method:<11} {row.price:>13.7g} "
                     f"{row.std_error:>10.3g} {vr:>10}")
    return "\n".join(lines)
