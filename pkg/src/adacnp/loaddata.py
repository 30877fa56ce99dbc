"""Hourly load ingestion, daily feature records and stratified splits."""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from adacnp.errors import ContractError, DataError, ParseError
from adacnp.training import Pool

HOUR = np.timedelta64(1, "h")
DEFAULT_SCHEMA = {"timestamp": "timestamp", "load": "load", "temperature": "temperature"}
SEASONS = ("winter", "spring", "summer", "autumn")


@dataclass(frozen=True)
class HourlySeries:
    """Strictly increasing hourly samples. ``gaps`` lists every missing hour."""

    timestamps: np.ndarray  # datetime64[h]
    load: np.ndarray  # MW
    temperature: np.ndarray  # degrees C
    holidays: frozenset = frozenset()
    gaps: tuple = ()

    def __len__(self):
        return len(self.timestamps)


def _parse_time(text):
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1]
    stamp = dt.datetime.fromisoformat(text)
    if stamp.tzinfo is not None:
        stamp = stamp.astimezone(dt.timezone.utc).replace(tzinfo=None)
    if stamp.minute or stamp.second or stamp.microsecond:
        raise ValueError("timestamp is not on the hour")
    return np.datetime64(stamp, "h")


def ingest(path, schema=None, holidays=()):
    """Read a comma-separated hourly file with a header row.

    ``schema`` maps the roles ``timestamp``, ``load`` and ``temperature`` to
    column names.
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    stamps, loads, temps = [], [], []
    with open(path, newline="") as fh:
        numbered = [(n, line) for n, line in enumerate(fh, 1)
                    if line.strip() and not line.lstrip().startswith("#")]
    if not numbered:
        raise DataError(f"{path}: file is empty")
    rows = csv.reader(line for _, line in numbered)
    header = [h.strip() for h in next(rows)]
    missing = [c for c in schema.values() if c not in header]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    cols = {role: header.index(name) for role, name in schema.items()}
    for (line, _), row in zip(numbered[1:], rows):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        try:
            stamps.append(_parse_time(row[cols["timestamp"]]))
            loads.append(float(row[cols["load"]]))
            temps.append(float(row[cols["temperature"]]))
        except ValueError as exc:
            raise ParseError(str(exc), line) from None
    if not stamps:
        raise DataError(f"{path}: no data rows")
    ts = np.array(stamps, dtype="datetime64[h]")
    steps = np.diff(ts)
    if np.any(steps <= np.timedelta64(0, "h")):
        bad = int(np.flatnonzero(steps <= np.timedelta64(0, "h"))[0]) + 1
        raise DataError(f"{path}: timestamps not strictly increasing at data row {bad + 1} ({ts[bad]})")
    load = np.array(loads)
    if np.any(load < 0) or not np.all(np.isfinite(load)):
        raise DataError(f"{path}: load must be finite and nonnegative")
    gaps = []
    for k in np.flatnonzero(steps > HOUR):
        t = ts[k] + HOUR
        while t < ts[k + 1]:
            gaps.append(t)
            t = t + HOUR
    return HourlySeries(ts, load, np.array(temps), frozenset(holidays), tuple(gaps))


def read_holidays(path):
    days = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                days.add(dt.date.fromisoformat(line))
            except ValueError:
                raise ParseError(f"bad ISO date {line!r}", lineno) from None
    return frozenset(days)


@dataclass(frozen=True)
class FeatureConfig:
    t_ref: float = 18.0
    nonlinear: tuple = ("square", "cube", "heating", "cooling")


def _nonlinear(temp, cfg):
    terms = {
        "square": lambda t: t ** 2,
        "cube": lambda t: t ** 3,
        "heating": lambda t: np.maximum(0.0, cfg.t_ref - t),
        "cooling": lambda t: np.maximum(0.0, t - cfg.t_ref),
    }
    unknown = set(cfg.nonlinear) - terms.keys()
    if unknown:
        raise ContractError(f"unknown nonlinear temperature terms {sorted(unknown)}")
    return [terms[name](temp) for name in cfg.nonlinear]


def season_of(month):
    return SEASONS[(month % 12) // 3]


def feature_names(cfg=None):
    cfg = cfg or FeatureConfig()
    names = [f"prev_load_h{h}" for h in range(24)]
    names += [f"prev_temp_h{h}" for h in range(24)]
    names += [f"temp_h{h}" for h in range(24)]
    for term in cfg.nonlinear:
        names += [f"temp_{term}_h{h}" for h in range(24)]
    names += ["weekend", "holiday"] + [f"season_{s}" for s in SEASONS] + ["year_sin", "year_cos"]
    return names


def day_features(prev_load, prev_temp, temp, date, holidays, cfg=None):
    """Raw feature vector for predicting the load of ``date``."""
    cfg = cfg or FeatureConfig()
    season = season_of(date.month)
    pos = 2.0 * math.pi * date.timetuple().tm_yday / 365.25
    calendar = [
        float(date.weekday() >= 5),
        float(date in holidays),
        *[float(s == season) for s in SEASONS],
        math.sin(pos),
        math.cos(pos),
    ]
    return np.concatenate([prev_load, prev_temp, temp, *_nonlinear(temp, cfg), calendar])


@dataclass(frozen=True)
class DayRecords:
    dates: tuple  # datetime.date per record
    x: np.ndarray  # (n, d_x) raw features
    y: np.ndarray  # (n, 24) raw load of the record's day
    curves: np.ndarray  # (n, 24) same as y, kept for detection
    feature_names: tuple
    dropped: int = 0

    def __len__(self):
        return len(self.dates)


def _complete_days(series):
    """Map date -> (24 loads, 24 temperatures) for days with all hours present."""
    days = series.timestamps.astype("datetime64[D]")
    hours = (series.timestamps - days).astype(int)
    out = {}
    starts = np.flatnonzero(np.r_[True, days[1:] != days[:-1]])
    ends = np.r_[starts[1:], len(days)]
    for s, e in zip(starts, ends):
        if e - s == 24 and np.array_equal(hours[s:e], np.arange(24)):
            out[days[s].astype(dt.date)] = (series.load[s:e], series.temperature[s:e])
    span = int((days[-1] - days[0]).astype(int)) + 1
    return out, span


def build_day_records(series, cfg=None):
    """One record per day whose own day and previous day are both complete."""
    cfg = cfg or FeatureConfig()
    complete, n_days = _complete_days(series)
    if n_days < 2:
        raise ContractError("series must cover at least two days")
    dates, xs, ys = [], [], []
    for date in sorted(complete):
        prev = complete.get(date - dt.timedelta(days=1))
        if prev is None:
            continue
        load, temp = complete[date]
        xs.append(day_features(prev[0], prev[1], temp, date, series.holidays, cfg))
        ys.append(load)
        dates.append(date)
    # every calendar day except the series' first can in principle be a record
    dropped = (n_days - 1) - len(dates)
    y = np.array(ys).reshape(-1, 24)
    return DayRecords(
        tuple(dates), np.array(xs).reshape(len(dates), -1), y, y.copy(),
        tuple(feature_names(cfg)), max(dropped, 0),
    )


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, data):
        mean = data.mean(axis=0)
        scale = data.std(axis=0)
        return cls(mean, np.where(scale > 0, scale, 1.0))

    def apply(self, data):
        return (data - self.mean) / self.scale

    def invert(self, data):
        return data * self.scale + self.mean


STRATA = ("historical_normal", "historical_extreme", "test_normal", "test_extreme")


@dataclass(frozen=True)
class DataSplit:
    records: DayRecords
    extreme: np.ndarray
    members: dict  # stratum name -> sorted index array into records
    x_std: Standardizer
    y_std: Standardizer
    x: np.ndarray = field(repr=False, default=None)
    y: np.ndarray = field(repr=False, default=None)

    def indices(self, *strata):
        return np.sort(np.concatenate([self.members[s] for s in strata]))

    def pool(self, *strata):
        idx = self.indices(*strata)
        return Pool(self.x[idx], self.y[idx], self.extreme[idx])

    def historical(self):
        return self.pool("historical_normal", "historical_extreme")

    def header(self):
        """JSON-serialisable description for exact replay."""
        dates = self.records.dates
        return {
            "feature_names": list(self.records.feature_names),
            "x_mean": self.x_std.mean.tolist(),
            "x_scale": self.x_std.scale.tolist(),
            "y_mean": self.y_std.mean.tolist(),
            "y_scale": self.y_std.scale.tolist(),
            "split": {s: [dates[i].isoformat() for i in self.members[s]] for s in STRATA},
        }

    def write_header(self, path, extra=None):
        with open(path, "w") as fh:
            json.dump({**(extra or {}), **self.header()}, fh, indent=1)


def split_and_standardize(records, extreme, test_fraction=0.2, seed=0):
    """Stratified hold-out of ``test_fraction`` of normal and of extreme days.

    Standardization statistics come from the historical days only.
    """
    extreme = np.asarray(extreme, dtype=bool)
    if extreme.shape != (len(records),):
        raise ContractError(f"need {len(records)} labels, got {extreme.shape}")
    if not 0.0 <= test_fraction < 1.0:
        raise ContractError(f"test fraction {test_fraction} outside [0, 1)")
    rng = np.random.default_rng(seed)
    members = {}
    for name, mask in (("normal", ~extreme), ("extreme", extreme)):
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            raise ContractError(f"the {name} stratum is empty")
        n_test = int(round(test_fraction * idx.size))
        test = rng.choice(idx, size=n_test, replace=False)
        members[f"test_{name}"] = np.sort(test)
        members[f"historical_{name}"] = np.setdiff1d(idx, test)
    hist = np.sort(np.concatenate([members["historical_normal"], members["historical_extreme"]]))
    x_std = Standardizer.fit(records.x[hist])
    y_std = Standardizer.fit(records.y[hist])
    return DataSplit(records, extreme, members, x_std, y_std,
                     x_std.apply(records.x), y_std.apply(records.y))


# --- synthetic hourly fixture ------------------------------------------------

def us_style_holidays(years):
    """A fixed-date subset of public holidays, enough to exercise the flag."""
    out = set()
    for y in years:
        out |= {dt.date(y, 1, 1), dt.date(y, 7, 4), dt.date(y, 12, 25), dt.date(y, 11, 11)}
    return frozenset(out)


def _daily_shape(h, weekend):
    morning = np.exp(-0.5 * ((h - 8.0) / 2.0) ** 2)
    evening = np.exp(-0.5 * ((h - 19.0) / 2.5) ** 2)
    night = 0.62 + 0.1 * np.cos(2 * np.pi * (h - 14) / 24)
    if weekend:
        return night + 0.10 * morning + 0.22 * evening
    return night + 0.28 * morning + 0.26 * evening


@dataclass(frozen=True)
class SyntheticLoadConfig:
    start: str = "2019-01-01"
    years: int = 3
    base_mw: float = 1000.0
    extremes_per_year: int = 10
    min_gap_days: int = 16
    extreme_scale: float = 0.4  # multiplier on the extra load of extreme days
    seed: int = 7


def make_synthetic_hourly(cfg=None):
    """Hourly load and temperature with injected single-day extreme events.

    Ordinary days follow a temperature-driven load model. On an extreme day
    the temperature jumps far outside its seasonal norm and the load enters a
    different regime: an extra peak whose size grows with how far the
    temperature passes a critical level, placed in the afternoon for heat
    events and in the morning for cold events.

    Returns ``(series, extreme_dates)``.
    """
    cfg = cfg or SyntheticLoadConfig()
    rng = np.random.default_rng(cfg.seed)
    start = dt.date.fromisoformat(cfg.start)
    end = dt.date(start.year + cfg.years, start.month, start.day)
    n_days = (end - start).days
    dates = [start + dt.timedelta(days=k) for k in range(n_days)]
    holidays = us_style_holidays(range(start.year, start.year + cfg.years + 1))

    n_ext = cfg.extremes_per_year * cfg.years
    spacing = n_days // n_ext
    if spacing < cfg.min_gap_days:
        raise ContractError("too many extreme events for the requested spacing")
    jitter = rng.integers(-(spacing - cfg.min_gap_days) // 2, (spacing - cfg.min_gap_days) // 2 + 1, n_ext)
    ext_idx = {int(np.clip(spacing // 2 + k * spacing + jitter[k], 8, n_days - 9)) for k in range(n_ext)}

    h = np.arange(24.0)
    anomaly = 0.0
    stamps, loads, temps = [], [], []
    extreme_dates = []
    growth = 1.0
    for k, date in enumerate(dates):
        doy = date.timetuple().tm_yday
        seasonal = 12.0 - 13.0 * math.cos(2 * math.pi * (doy - 20) / 365.25)
        anomaly = 0.7 * anomaly + rng.normal(0.0, 2.2)
        temp = seasonal + anomaly + 4.0 * np.sin(2 * np.pi * (h - 9) / 24) + rng.normal(0, 0.4, 24)
        weekend = date.weekday() >= 5 or date in holidays
        extra = np.zeros(24)
        if k in ext_idx:
            extreme_dates.append(date)
            if seasonal >= 12.0:
                temp = temp + rng.uniform(9.0, 13.0)
                excess = np.maximum(0.0, temp - 30.0)
                extra = 40.0 * excess ** 1.3 * np.exp(-0.5 * ((h - 16.0) / 3.0) ** 2)
            else:
                temp = temp - rng.uniform(10.0, 14.0)
                excess = np.maximum(0.0, -5.0 - temp)
                extra = 45.0 * excess ** 1.3 * np.exp(-0.5 * ((h - 8.0) / 2.5) ** 2)
        growth *= 1.0 + 0.03 / 365.25
        load = cfg.base_mw * growth * _daily_shape(h, weekend)
        load = load + 22.0 * np.maximum(0.0, 14.0 - temp) + 28.0 * np.maximum(0.0, temp - 20.0)
        load = load + cfg.extreme_scale * extra
        load = load * (1.0 + rng.normal(0.0, 0.01, 24))
        base = np.datetime64(date, "h")
        stamps.extend(base + np.arange(24) * HOUR)
        loads.append(np.maximum(load, 0.0))
        temps.append(temp)
    # rounded to the resolution of the CSV so that written and in-memory series agree
    series = HourlySeries(
        np.array(stamps, dtype="datetime64[h]"), np.concatenate(loads).round(3),
        np.concatenate(temps).round(3),
        holidays, (),
    )
    return series, sorted(extreme_dates)


def write_hourly_csv(series, path, header_comment=None):
    with open(path, "w", newline="") as fh:
        if header_comment:
            for line in header_comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "load", "temperature"])
        for t, l, c in zip(series.timestamps, series.load, series.temperature):
            writer.writerow([str(t) + ":00", f"{l:.3f}", f"{c:.3f}"])


def write_holidays(dates, path):
    with open(path, "w") as fh:
        for d in sorted(dates):
            fh.write(d.isoformat() + "\n")


FIXTURE_FILES = {"hourly": "synthetic_hourly.csv", "holidays": "holidays.txt",
                 "extremes": "injected_extremes.txt"}


def write_fixture(directory, cfg=None):
    """Write the synthetic fixture (hourly CSV, holiday list, injected dates)."""
    cfg = cfg or SyntheticLoadConfig()
    series, extremes = make_synthetic_hourly(cfg)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    note = " ".join(f"{k}={v}" for k, v in asdict(cfg).items())
    write_hourly_csv(series, directory / FIXTURE_FILES["hourly"], f"synthetic load fixture {note}")
    write_holidays(series.holidays, directory / FIXTURE_FILES["holidays"])
    write_holidays(extremes, directory / FIXTURE_FILES["extremes"])
    return {k: directory / v for k, v in FIXTURE_FILES.items()}


def bundled_fixture():
    """Paths of the fixture files shipped with the package."""
    root = resources.files("adacnp") / "data"
    return {k: Path(str(root / v)) for k, v in FIXTURE_FILES.items()}


def load_bundled():
    """The bundled fixture as ``(series, injected_extreme_dates)``."""
    paths = bundled_fixture()
    series = ingest(paths["hourly"], holidays=read_holidays(paths["holidays"]))
    return series, sorted(read_holidays(paths["extremes"]))
