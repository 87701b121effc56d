"""Click-stream ingestion: schema mapping, impression filters, eligibility
rules and pair-table construction.

Each search impression is treated as one consumer. Currency columns are
kept in dollars in the stored frame and divided by 100 when covariates are
emitted, so estimates read per $100.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .domain import SPEC_VERSION, PairOutcomeTable, config_hash

log = logging.getLogger(__name__)

PRICE_MIN = 10.0
PRICE_MAX = 1000.0
TOTAL_RATIO_MAX = 1.3
RATIO_RTOL = 1e-9       # decimal totals at exactly 130% must survive float rounding
PRICE_UNIT = 100.0

ROLES = ("impression", "hotel", "position", "price", "promotion", "star_rating", "review_score",
         "chain", "location_score", "booking_window", "clicked", "purchased", "nights", "total_price")
OPTIONAL_ROLES = ("click_order",)
CURRENCY_ROLES = ("price", "total_price")


class SchemaError(ValueError):
    """Declared columns are missing from the input."""


@dataclass(frozen=True)
class Schema:
    """Role -> CSV column name, plus the covariate designation.

    ``x`` and ``z`` list roles used as impression-varying utility and
    search-cost covariates; ``invariant`` lists hotel-level characteristics
    for the within-impression estimator.
    """

    columns: dict = field(default_factory=lambda: {
        "impression": "srch_id", "hotel": "prop_id", "position": "position", "price": "price_usd",
        "promotion": "promotion_flag", "star_rating": "prop_starrating",
        "review_score": "prop_review_score", "chain": "prop_brand_bool",
        "location_score": "prop_location_score1", "booking_window": "srch_booking_window",
        "clicked": "click_bool", "purchased": "booking_bool", "nights": "srch_length_of_stay",
        "total_price": "gross_price_usd",
    })
    x: tuple[str, ...] = ("price", "promotion")
    z: tuple[str, ...] = ("position", "booking_window")
    invariant: tuple[str, ...] = ("star_rating", "review_score", "chain", "location_score")

    def __post_init__(self):
        missing = [r for r in ROLES if r not in self.columns]
        if missing:
            raise SchemaError(f"schema lacks role(s): {', '.join(missing)}")
        unknown = set(self.columns) - set(ROLES) - set(OPTIONAL_ROLES)
        if unknown:
            raise SchemaError(f"unknown role(s): {', '.join(sorted(unknown))}")

    def to_json(self) -> dict:
        return {"spec_version": SPEC_VERSION, "columns": dict(self.columns), "x": list(self.x),
                "z": list(self.z), "invariant": list(self.invariant)}

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        d = Schema()
        return cls(dict(obj.get("columns", d.columns)), tuple(obj.get("x", d.x)), tuple(obj.get("z", d.z)),
                   tuple(obj.get("invariant", d.invariant)))

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class FilterReport:
    rows_read: int = 0
    rows_unparseable: int = 0
    unparseable_lines: list[int] = field(default_factory=list)
    impressions_read: int = 0
    dropped_price_range: int = 0
    dropped_total_price: int = 0
    impressions_kept: int = 0
    rows_kept: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    """Filtered rows keyed by role names (currency in dollars)."""

    frame: pd.DataFrame
    schema: Schema
    report: FilterReport = field(default_factory=FilterReport)
    order_mode_note: str = "exactly_one"

    @property
    def n_impressions(self) -> int:
        return int(self.frame["impression"].nunique())

    def to_source_frame(self) -> pd.DataFrame:
        """Rows renamed back to the input schema's column names."""
        cols = {r: c for r, c in self.schema.columns.items() if r in self.frame}
        return self.frame[list(cols)].rename(columns=cols)


# ---------------------------------------------------------------------------
# load and filter
# ---------------------------------------------------------------------------

_INT_ROLES = ("impression", "hotel", "position", "clicked", "purchased", "nights")


def _parse(raw: pd.DataFrame, schema: Schema, report: FilterReport) -> pd.DataFrame:
    roles = [r for r in ROLES + OPTIONAL_ROLES if r in schema.columns]
    missing = [schema.columns[r] for r in roles if schema.columns[r] not in raw.columns]
    if missing:
        raise SchemaError(f"missing column(s): {', '.join(missing)}")
    out = pd.DataFrame({r: pd.to_numeric(raw[schema.columns[r]], errors="coerce") for r in roles})
    # total price may be absent for non-booked rows; every other role must parse
    required = [r for r in roles if r not in ("total_price", "click_order")]
    bad = out[required].isna().any(axis=1).to_numpy()
    for r in ("total_price", "click_order"):
        if r in out:
            text = raw[schema.columns[r]].astype(str).str.strip()
            bad |= (out[r].isna() & ~text.isin(["", "nan", "NaN", "None"])).to_numpy()
    if bad.any():
        lines = (np.flatnonzero(bad) + 2).tolist()       # header is line 1
        report.rows_unparseable = len(lines)
        report.unparseable_lines = lines
        log.warning("dropped %d unparseable row(s) at line(s) %s", len(lines), lines[:20])
    out = out.loc[~bad].copy()
    for r in _INT_ROLES:
        out[r] = out[r].astype(np.int64)
    return out


def apply_filters(frame: pd.DataFrame, report: FilterReport) -> pd.DataFrame:
    """Drop whole impressions with a price outside [$10, $1000] per night or a
    total price above 130% of price times nights. Boundary values are kept."""
    price_bad = (frame["price"] < PRICE_MIN) | (frame["price"] > PRICE_MAX)
    total_bad = frame["total_price"].notna() & (
        frame["total_price"] > TOTAL_RATIO_MAX * frame["price"] * frame["nights"] * (1 + RATIO_RTOL))
    imp_price = set(frame.loc[price_bad, "impression"])
    imp_total = set(frame.loc[total_bad, "impression"]) - imp_price
    report.impressions_read = int(frame["impression"].nunique())
    report.dropped_price_range = len(imp_price)
    report.dropped_total_price = len(imp_total)
    keep = ~frame["impression"].isin(imp_price | imp_total)
    out = frame.loc[keep].reset_index(drop=True)
    report.impressions_kept = int(out["impression"].nunique())
    report.rows_kept = len(out)
    return out


def load_and_filter(path, schema: Schema | None = None) -> Dataset:
    """Parse a click-stream CSV, drop unparseable rows and filter impressions."""
    schema = schema or Schema()
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    report = FilterReport(rows_read=len(raw))
    frame = _parse(raw, schema, report)
    bad_click = frame["purchased"].astype(bool) & ~frame["clicked"].astype(bool)
    if bad_click.any():
        log.warning("%d row(s) purchased without a click; treated as clicked", int(bad_click.sum()))
        frame.loc[bad_click, "clicked"] = 1
    frame = apply_filters(frame, report)
    return Dataset(frame, schema, report)


def save_dataset(ds: Dataset, directory) -> Path:
    """CSV in the source schema plus a JSON manifest; reloads bit-exactly."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    src = ds.to_source_frame()
    src.to_csv(d / "impressions.csv", index=False)
    manifest = {"spec_version": SPEC_VERSION, "schema": ds.schema.to_json(),
                "filter_report": ds.report.to_json(), "n_rows": len(src),
                "pair_mode_default": "exactly_one",
                "price_unit_dollars": PRICE_UNIT,
                "schema_hash": config_hash(ds.schema.to_json())}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return d


def load_dataset(directory) -> Dataset:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    schema = Schema.from_json(manifest["schema"])
    raw = pd.read_csv(d / "impressions.csv", dtype=str, keep_default_na=False)
    report = FilterReport(rows_read=len(raw))
    frame = _parse(raw, schema, report)
    return Dataset(apply_filters(frame, report), schema, report)


# ---------------------------------------------------------------------------
# eligibility
# ---------------------------------------------------------------------------

def hotel_impression_counts(ds: Dataset) -> pd.Series:
    return ds.frame.groupby("hotel")["impression"].nunique()


def eligible_pairs(ds: Dataset, min_impressions: int = 100) -> list[tuple[int, int]]:
    """Unordered pairs of hotels that each appear in more than ``min_impressions`` impressions."""
    counts = hotel_impression_counts(ds)
    hotels = sorted(int(h) for h in counts.index[counts > min_impressions])
    return list(itertools.combinations(hotels, 2))


def eligible_impressions(ds: Dataset, min_displayed: int = 24) -> list[int]:
    """Impressions displaying more than ``min_displayed`` hotels."""
    if ds.frame.empty:
        return []
    shown = ds.frame.groupby("impression")["hotel"].nunique()
    return sorted(int(i) for i in shown.index[shown > min_displayed])


# ---------------------------------------------------------------------------
# pair tables
# ---------------------------------------------------------------------------

def _covariates(frame: pd.DataFrame, roles: Sequence[str]) -> np.ndarray:
    cols = [frame[r].to_numpy(dtype=float) / (PRICE_UNIT if r in CURRENCY_ROLES else 1.0) for r in roles]
    return np.column_stack(cols) if cols else np.zeros((len(frame), 0))


def build_pair_tables(ds: Dataset, pairs: Sequence[tuple[int, int]], mode: str = "exactly_one",
                      min_rows: int = 0) -> list[PairOutcomeTable]:
    """One table per hotel pair over impressions showing both hotels.

    ``mode="exactly_one"`` keeps impressions with exactly one of the two
    clicked (``S = 1`` when it is the first hotel). ``mode="order"`` also
    keeps impressions that clicked both, ordered by the ``click_order``
    column. Consumer ids are impression ids.
    """
    if mode not in ("exactly_one", "order"):
        raise ValueError(f"unknown pair mode {mode!r}")
    if mode == "order" and "click_order" not in ds.frame:
        raise SchemaError("order mode needs a click_order column")
    f = ds.frame
    sch = ds.schema
    by_hotel = {int(h): g.set_index("impression") for h, g in f.groupby("hotel")}
    out = []
    for i, j in pairs:
        if i not in by_hotel or j not in by_hotel:
            continue
        gi, gj = by_hotel[i], by_hotel[j]
        common = gi.index.intersection(gj.index).sort_values()
        a, b = gi.loc[common], gj.loc[common]
        ci, cj = a["clicked"].to_numpy() == 1, b["clicked"].to_numpy() == 1
        keep = ci ^ cj
        S = ci.copy()
        if mode == "order":
            both = ci & cj
            oi, oj = a["click_order"].to_numpy(), b["click_order"].to_numpy()
            S = np.where(both, oi < oj, S)
            keep = keep | both
        if keep.sum() < max(min_rows, 1):
            continue
        a, b = a.loc[keep], b.loc[keep]
        out.append(PairOutcomeTable(
            (i, j), a.index.to_numpy(), S[keep].astype(np.int8),
            _covariates(a, sch.x), _covariates(b, sch.x), _covariates(a, sch.z), _covariates(b, sch.z),
            tuple(sch.x), tuple(sch.z)))
    return out


def hotel_invariants(ds: Dataset) -> pd.DataFrame:
    """Hotel-level characteristics (first observed value per hotel)."""
    return ds.frame.groupby("hotel")[list(ds.schema.invariant)].first()


# ---------------------------------------------------------------------------
# synthetic fixture
# ---------------------------------------------------------------------------

def synthetic_expedia(n_impressions: int = 400, n_hotels: int = 40, seed: int = 0,
                      displayed: tuple[int, int] = (20, 32), schema: Schema | None = None) -> pd.DataFrame:
    """Expedia-schema rows generated from the sequential search model.

    Clicks are the searched set of the index policy; the purchase is the
    chosen hotel. A small share of rows violate the price filters so the
    pipeline has something to drop.
    """
    from .model_core import MatchValueDist, ginv
    from .simulator import _index_policy

    schema = schema or Schema()
    rng = np.random.default_rng(seed)
    star = rng.integers(1, 6, n_hotels).astype(float)
    review = np.round(rng.uniform(2.5, 5.0, n_hotels) * 2) / 2
    chain = rng.integers(0, 2, n_hotels)
    locs = np.round(rng.uniform(0, 7, n_hotels), 2)
    quality = rng.normal(0, 0.5, n_hotels)
    base_price = np.exp(4.5 + 0.25 * star + 0.3 * quality + rng.normal(0, 0.2, n_hotels))
    dist = MatchValueDist.normal_var(0.0, 3.0)
    rows = []
    for imp in range(1, n_impressions + 1):
        k = int(rng.integers(displayed[0], displayed[1] + 1))
        hotels = np.sort(rng.choice(n_hotels, size=min(k, n_hotels), replace=False))
        k = len(hotels)
        price = np.round(base_price[hotels] * np.exp(rng.normal(0, 0.25, k)), 2)
        promo = rng.integers(0, 2, k)
        pos = rng.permutation(k) + 1
        window = int(rng.integers(0, 120))
        nights = int(rng.integers(1, 6))
        delta = (-0.5 * price / PRICE_UNIT + 0.3 * promo + 0.2 * star[hotels] + 0.1 * review[hotels]
                 + quality[hotels] + rng.normal(0, 0.7, k))
        cost = np.exp(-4.0 + 0.1 * pos + 0.002 * window)
        r = ginv(cost, dist, extrapolate_high=True) + delta
        u = delta + dist.scale * rng.standard_normal(k)
        u0 = np.array([1.5 + rng.normal()])
        order, n_s, choice, _ = _index_policy(r[None], u[None], u0)
        clicked = np.zeros(k, int)
        click_order = np.full(k, np.nan)
        clicked[order[0, :n_s[0]]] = 1
        click_order[order[0, :n_s[0]]] = np.arange(1, n_s[0] + 1)
        bought = np.zeros(k, int)
        if choice[0] >= 0:
            bought[choice[0]] = 1
        total = np.where(bought == 1, np.round(price * nights * rng.uniform(1.0, 1.2), 2), np.nan)
        for t in range(k):
            rows.append((imp, int(hotels[t] + 1), int(pos[t]), float(price[t]), int(promo[t]),
                         float(star[hotels[t]]), float(review[hotels[t]]), int(chain[hotels[t]]),
                         float(locs[hotels[t]]), window, int(clicked[t]), int(bought[t]), nights,
                         float(total[t]), click_order[t]))
    cols = [schema.columns[r] for r in ROLES] + ["click_order"]
    df = pd.DataFrame(rows, columns=cols)
    # a few impressions tripping each filter
    pc, tc = schema.columns["price"], schema.columns["total_price"]
    bad = rng.choice(n_impressions, size=max(2, n_impressions // 50), replace=False) + 1
    for n, imp in enumerate(bad):
        idx = df.index[df[schema.columns["impression"]] == imp][0]
        if n % 2 == 0:
            df.loc[idx, pc] = 5.0
        else:
            nn = df.loc[idx, schema.columns["nights"]]
            df.loc[idx, tc] = round(1.5 * df.loc[idx, pc] * nn, 2)
    df["click_order"] = df["click_order"].astype("Int64")
    return df


def fixture_path() -> Path:
    """Path of the bundled synthetic fixture CSV."""
    return Path(__file__).with_name("data") / "synthetic_expedia.csv"


def fixture_schema() -> Schema:
    cols = dict(Schema().columns)
    cols["click_order"] = "click_order"
    return Schema(columns=cols)
