//! Discrete, linear, multi-unit time model.
//!
//! Instants are integer grain counts since 1970-01-01T00:00:00 in a named
//! unit. Intervals are closed on both ends. A [`TemporalDomain`] is always
//! kept normalized: sorted, pairwise disjoint and non-contiguous.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike, Weekday};
use thiserror::Error;

/// Tick value used for the open `NOW` upper bound.
pub const NOW_TICK: i64 = i64::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemporalError {
    #[error("mixed temporal units: {0} and {1}")]
    MixedUnits(TemporalUnit, TemporalUnit),
    #[error("empty interval: start {0} is after end {1}")]
    EmptyInterval(String, String),
    #[error("unit {from} is not finer than {to}")]
    NotCoarser { from: TemporalUnit, to: TemporalUnit },
    #[error("domain is open-ended (ends in NOW)")]
    UnboundedDomain,
    #[error("invalid temporal literal `{0}`")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, TemporalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemporalUnit {
    Annee,
    Semestre,
    Trimestre,
    Mois,
    Semaine,
    Jour,
    JourSemaine,
    Heure,
    Minute,
    Seconde,
}

const DAY_CHAIN: [TemporalUnit; 5] = [
    TemporalUnit::Seconde,
    TemporalUnit::Minute,
    TemporalUnit::Heure,
    TemporalUnit::Jour,
    TemporalUnit::Semaine,
];

const CALENDAR_CHAIN: [TemporalUnit; 8] = [
    TemporalUnit::Seconde,
    TemporalUnit::Minute,
    TemporalUnit::Heure,
    TemporalUnit::Jour,
    TemporalUnit::Mois,
    TemporalUnit::Trimestre,
    TemporalUnit::Semestre,
    TemporalUnit::Annee,
];

impl TemporalUnit {
    pub const ALL: [TemporalUnit; 10] = [
        TemporalUnit::Annee,
        TemporalUnit::Semestre,
        TemporalUnit::Trimestre,
        TemporalUnit::Mois,
        TemporalUnit::Semaine,
        TemporalUnit::Jour,
        TemporalUnit::JourSemaine,
        TemporalUnit::Heure,
        TemporalUnit::Minute,
        TemporalUnit::Seconde,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemporalUnit::Annee => "annee",
            TemporalUnit::Semestre => "semestre",
            TemporalUnit::Trimestre => "trimestre",
            TemporalUnit::Mois => "mois",
            TemporalUnit::Semaine => "semaine",
            TemporalUnit::Jour => "jour",
            TemporalUnit::JourSemaine => "jour_semaine",
            TemporalUnit::Heure => "heure",
            TemporalUnit::Minute => "minute",
            TemporalUnit::Seconde => "seconde",
        }
    }

    /// Strict partial order: every `coarser` grain is an exact
    /// concatenation of `self` grains.
    pub fn finer_than(self, coarser: TemporalUnit) -> bool {
        let in_chain = |chain: &[TemporalUnit]| {
            let a = chain.iter().position(|u| *u == self);
            let b = chain.iter().position(|u| *u == coarser);
            matches!((a, b), (Some(a), Some(b)) if a < b)
        };
        in_chain(&DAY_CHAIN) || in_chain(&CALENDAR_CHAIN)
    }
}

/// Free-function form of [`TemporalUnit::finer_than`].
pub fn finer_than(u1: TemporalUnit, u2: TemporalUnit) -> bool {
    u1.finer_than(u2)
}

impl fmt::Display for TemporalUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemporalUnit {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self> {
        TemporalUnit::ALL
            .iter()
            .copied()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| TemporalError::Parse(s.to_string()))
    }
}

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid epoch")
}

fn days_since_epoch(d: NaiveDate) -> i64 {
    d.signed_duration_since(epoch()).num_days()
}

fn date_from_days(days: i64) -> Option<NaiveDate> {
    epoch().checked_add_signed(chrono::Duration::try_days(days)?)
}

/// Monday-based week index; week 0 starts on Monday 1969-12-29.
fn week_index(days: i64) -> i64 {
    (days + 3).div_euclid(7)
}

fn grain_of(unit: TemporalUnit, dt: NaiveDateTime) -> i64 {
    let d = dt.date();
    let years = i64::from(d.year()) - 1970;
    let month0 = i64::from(d.month0());
    let days = days_since_epoch(d);
    let secs_in_day = i64::from(dt.num_seconds_from_midnight());
    match unit {
        TemporalUnit::Annee => years,
        TemporalUnit::Semestre => years * 2 + month0 / 6,
        TemporalUnit::Trimestre => years * 4 + month0 / 3,
        TemporalUnit::Mois => years * 12 + month0,
        TemporalUnit::Semaine => week_index(days),
        TemporalUnit::Jour => days,
        TemporalUnit::JourSemaine => {
            week_index(days) * 5 + i64::from(d.weekday().num_days_from_monday()).min(4)
        }
        TemporalUnit::Heure => days * 24 + secs_in_day / 3600,
        TemporalUnit::Minute => days * 1440 + secs_in_day / 60,
        TemporalUnit::Seconde => days * 86_400 + secs_in_day,
    }
}

fn grain_start(unit: TemporalUnit, ticks: i64) -> Option<NaiveDateTime> {
    let ymd = |y: i64, m: i64| -> Option<NaiveDateTime> {
        NaiveDate::from_ymd_opt(i32::try_from(1970 + y).ok()?, u32::try_from(m + 1).ok()?, 1)?
            .and_hms_opt(0, 0, 0)
    };
    let day_start = |days: i64, secs: i64| -> Option<NaiveDateTime> {
        let d = date_from_days(days)?;
        d.and_hms_opt(0, 0, 0)?
            .checked_add_signed(chrono::Duration::try_seconds(secs)?)
    };
    match unit {
        TemporalUnit::Annee => ymd(ticks, 0),
        TemporalUnit::Semestre => ymd(ticks.div_euclid(2), ticks.rem_euclid(2) * 6),
        TemporalUnit::Trimestre => ymd(ticks.div_euclid(4), ticks.rem_euclid(4) * 3),
        TemporalUnit::Mois => ymd(ticks.div_euclid(12), ticks.rem_euclid(12)),
        TemporalUnit::Semaine => day_start(ticks.checked_mul(7)? - 3, 0),
        TemporalUnit::Jour => day_start(ticks, 0),
        TemporalUnit::JourSemaine => {
            day_start(ticks.div_euclid(5).checked_mul(7)? - 3 + ticks.rem_euclid(5), 0)
        }
        TemporalUnit::Heure => day_start(ticks.div_euclid(24), ticks.rem_euclid(24) * 3600),
        TemporalUnit::Minute => day_start(ticks.div_euclid(1440), ticks.rem_euclid(1440) * 60),
        TemporalUnit::Seconde => day_start(ticks.div_euclid(86_400), ticks.rem_euclid(86_400)),
    }
}

/// One grain of a temporal unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Instant {
    unit: TemporalUnit,
    ticks: i64,
}

impl Instant {
    pub fn new(unit: TemporalUnit, ticks: i64) -> Self {
        Instant { unit, ticks }
    }

    pub fn unit(&self) -> TemporalUnit {
        self.unit
    }

    pub fn ticks(&self) -> i64 {
        self.ticks
    }

    /// The grain of `unit` containing the given calendar moment.
    pub fn from_datetime(unit: TemporalUnit, dt: NaiveDateTime) -> Self {
        Instant::new(unit, grain_of(unit, dt))
    }

    /// Calendar moment at which this grain begins.
    pub fn start(&self) -> Option<NaiveDateTime> {
        grain_start(self.unit, self.ticks)
    }

    pub fn offset(&self, delta: i64) -> Self {
        Instant::new(self.unit, self.ticks + delta)
    }

    pub fn coarsen(&self, to: TemporalUnit) -> Result<Instant> {
        coarsen_instant(*self, to)
    }
}

/// The `to`-grain containing `i`. Requires `unit(i)` strictly finer than `to`.
pub fn coarsen_instant(i: Instant, to: TemporalUnit) -> Result<Instant> {
    if !i.unit.finer_than(to) {
        return Err(TemporalError::NotCoarser { from: i.unit, to });
    }
    let start = i
        .start()
        .ok_or_else(|| TemporalError::Parse(format!("{}:{}", i.unit, i.ticks)))?;
    Ok(Instant::from_datetime(to, start))
}

impl fmt::Display for Instant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let Some(dt) = self.start() else {
            return write!(f, "{}:#{}", self.unit, self.ticks);
        };
        let d = dt.date();
        match self.unit {
            TemporalUnit::Annee => write!(f, "annee:{}", d.year()),
            TemporalUnit::Semestre => write!(f, "semestre:{}-S{}", d.year(), d.month0() / 6 + 1),
            TemporalUnit::Trimestre => {
                write!(f, "trimestre:{}-Q{}", d.year(), d.month0() / 3 + 1)
            }
            TemporalUnit::Mois => write!(f, "mois:{}-{:02}", d.year(), d.month()),
            TemporalUnit::Semaine => {
                let w = d.iso_week();
                write!(f, "semaine:{}-W{:02}", w.year(), w.week())
            }
            TemporalUnit::Jour | TemporalUnit::JourSemaine => {
                write!(f, "{}:{}", self.unit, d.format("%Y-%m-%d"))
            }
            TemporalUnit::Heure => write!(f, "heure:{}", dt.format("%Y-%m-%dT%H")),
            TemporalUnit::Minute => write!(f, "minute:{}", dt.format("%Y-%m-%dT%H:%M")),
            TemporalUnit::Seconde => write!(f, "seconde:{}", dt.format("%Y-%m-%dT%H:%M:%S")),
        }
    }
}

fn parse_year(s: &str) -> Option<i32> {
    s.parse().ok()
}

impl FromStr for Instant {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || TemporalError::Parse(s.to_string());
        let (unit, body) = s.trim().split_once(':').ok_or_else(bad)?;
        let unit: TemporalUnit = unit.trim().parse().map_err(|_| bad())?;
        let body = body.trim();
        if let Some(raw) = body.strip_prefix('#') {
            return Ok(Instant::new(unit, raw.parse().map_err(|_| bad())?));
        }
        let date = |text: &str| NaiveDate::parse_from_str(text, "%Y-%m-%d").ok();
        let dt: NaiveDateTime = match unit {
            TemporalUnit::Annee => NaiveDate::from_ymd_opt(parse_year(body).ok_or_else(bad)?, 1, 1)
                .ok_or_else(bad)?
                .and_hms_opt(0, 0, 0)
                .ok_or_else(bad)?,
            TemporalUnit::Semestre | TemporalUnit::Trimestre => {
                let (y, part) = body.rsplit_once('-').ok_or_else(bad)?;
                let (tag, per) = if unit == TemporalUnit::Semestre { ('S', 6) } else { ('Q', 3) };
                let n: u32 = part.strip_prefix(tag).ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if n == 0 || n * per > 12 {
                    return Err(bad());
                }
                NaiveDate::from_ymd_opt(parse_year(y).ok_or_else(bad)?, (n - 1) * per + 1, 1)
                    .ok_or_else(bad)?
                    .and_hms_opt(0, 0, 0)
                    .ok_or_else(bad)?
            }
            TemporalUnit::Mois => {
                let (y, m) = body.rsplit_once('-').ok_or_else(bad)?;
                NaiveDate::from_ymd_opt(
                    parse_year(y).ok_or_else(bad)?,
                    m.parse().map_err(|_| bad())?,
                    1,
                )
                .ok_or_else(bad)?
                .and_hms_opt(0, 0, 0)
                .ok_or_else(bad)?
            }
            TemporalUnit::Semaine => {
                let (y, w) = body.rsplit_once("-W").ok_or_else(bad)?;
                NaiveDate::from_isoywd_opt(
                    parse_year(y).ok_or_else(bad)?,
                    w.parse().map_err(|_| bad())?,
                    Weekday::Mon,
                )
                .ok_or_else(bad)?
                .and_hms_opt(0, 0, 0)
                .ok_or_else(bad)?
            }
            TemporalUnit::Jour | TemporalUnit::JourSemaine => {
                let d = date(body).ok_or_else(bad)?;
                if unit == TemporalUnit::JourSemaine
                    && matches!(d.weekday(), Weekday::Sat | Weekday::Sun)
                {
                    return Err(bad());
                }
                d.and_hms_opt(0, 0, 0).ok_or_else(bad)?
            }
            TemporalUnit::Heure => {
                NaiveDateTime::parse_from_str(&format!("{body}:00:00"), "%Y-%m-%dT%H:%M:%S")
                    .map_err(|_| bad())?
            }
            TemporalUnit::Minute => {
                NaiveDateTime::parse_from_str(&format!("{body}:00"), "%Y-%m-%dT%H:%M:%S")
                    .map_err(|_| bad())?
            }
            TemporalUnit::Seconde => {
                NaiveDateTime::parse_from_str(body, "%Y-%m-%dT%H:%M:%S").map_err(|_| bad())?
            }
        };
        Ok(Instant::from_datetime(unit, dt))
    }
}

/// Closed interval `[start, end]`; `end == NOW_TICK` encodes the open `NOW` bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Interval {
    unit: TemporalUnit,
    start: i64,
    end: i64,
}

impl Interval {
    pub fn new(start: Instant, end: Instant) -> Result<Self> {
        if start.unit != end.unit {
            return Err(TemporalError::MixedUnits(start.unit, end.unit));
        }
        Interval::from_ticks(start.unit, start.ticks, end.ticks)
    }

    pub fn until_now(start: Instant) -> Self {
        Interval { unit: start.unit, start: start.ticks, end: NOW_TICK }
    }

    pub fn from_ticks(unit: TemporalUnit, start: i64, end: i64) -> Result<Self> {
        if start > end || start == NOW_TICK {
            return Err(TemporalError::EmptyInterval(
                Instant::new(unit, start).to_string(),
                if end == NOW_TICK { "NOW".into() } else { Instant::new(unit, end).to_string() },
            ));
        }
        Ok(Interval { unit, start, end })
    }

    pub fn single(i: Instant) -> Self {
        Interval { unit: i.unit, start: i.ticks, end: i.ticks }
    }

    pub fn unit(&self) -> TemporalUnit {
        self.unit
    }

    pub fn start(&self) -> Instant {
        Instant::new(self.unit, self.start)
    }

    /// `None` when the interval ends in `NOW`.
    pub fn end(&self) -> Option<Instant> {
        (self.end != NOW_TICK).then(|| Instant::new(self.unit, self.end))
    }

    pub fn start_ticks(&self) -> i64 {
        self.start
    }

    pub fn end_ticks(&self) -> i64 {
        self.end
    }

    pub fn ends_now(&self) -> bool {
        self.end == NOW_TICK
    }

    pub fn contains(&self, t: Instant) -> bool {
        t.unit == self.unit && self.start <= t.ticks && t.ticks <= self.end
    }

    pub fn grain_count(&self) -> Option<i64> {
        (!self.ends_now()).then(|| self.end - self.start + 1)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.end() {
            Some(end) => write!(f, "[{},{}]", self.start(), end),
            None => write!(f, "[{},NOW]", self.start()),
        }
    }
}

/// Ordered list of disjoint, non-contiguous intervals sharing one unit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct TemporalDomain {
    intervals: Vec<Interval>,
}

fn common_unit<'a>(it: impl IntoIterator<Item = &'a Interval>) -> Result<Option<TemporalUnit>> {
    let mut unit = None;
    for iv in it {
        match unit {
            None => unit = Some(iv.unit),
            Some(u) if u != iv.unit => return Err(TemporalError::MixedUnits(u, iv.unit)),
            _ => {}
        }
    }
    Ok(unit)
}

/// Sort, then merge overlapping and adjacent intervals.
pub fn normalize_domain(mut intervals: Vec<Interval>) -> Result<TemporalDomain> {
    common_unit(&intervals)?;
    intervals.sort_by_key(|iv| (iv.start, iv.end));
    let mut out: Vec<Interval> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match out.last_mut() {
            Some(last) if iv.start <= last.end.saturating_add(1) => {
                last.end = last.end.max(iv.end);
            }
            _ => out.push(iv),
        }
    }
    Ok(TemporalDomain { intervals: out })
}

impl TemporalDomain {
    pub fn empty() -> Self {
        TemporalDomain::default()
    }

    pub fn single(iv: Interval) -> Self {
        TemporalDomain { intervals: vec![iv] }
    }

    pub fn from_now(start: Instant) -> Self {
        TemporalDomain::single(Interval::until_now(start))
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn unit(&self) -> Option<TemporalUnit> {
        self.intervals.first().map(|iv| iv.unit)
    }

    pub fn ends_now(&self) -> bool {
        self.intervals.last().is_some_and(Interval::ends_now)
    }

    pub fn first_start(&self) -> Option<Instant> {
        self.intervals.first().map(Interval::start)
    }

    /// Last closed instant; `None` for empty or open-ended domains.
    pub fn last_end(&self) -> Option<Instant> {
        self.intervals.last().and_then(Interval::end)
    }

    pub fn contains(&self, t: Instant) -> bool {
        self.intervals.iter().any(|iv| iv.contains(t))
    }

    /// Number of covered grains, `None` when open-ended.
    pub fn grain_count(&self) -> Option<i64> {
        self.intervals.iter().map(Interval::grain_count).sum()
    }

    /// Every covered tick. Panics on open-ended domains; intended for small domains.
    pub fn grains(&self) -> BTreeSet<i64> {
        assert!(!self.ends_now(), "cannot enumerate an open-ended domain");
        self.intervals.iter().flat_map(|iv| iv.start..=iv.end).collect()
    }

    fn check_units(&self, other: &TemporalDomain) -> Result<()> {
        match (self.unit(), other.unit()) {
            (Some(a), Some(b)) if a != b => Err(TemporalError::MixedUnits(a, b)),
            _ => Ok(()),
        }
    }

    pub fn union(&self, other: &TemporalDomain) -> Result<TemporalDomain> {
        self.check_units(other)?;
        normalize_domain(self.intervals.iter().chain(&other.intervals).copied().collect())
    }

    pub fn intersection(&self, other: &TemporalDomain) -> Result<TemporalDomain> {
        self.check_units(other)?;
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < self.intervals.len() && j < other.intervals.len() {
            let a = self.intervals[i];
            let b = other.intervals[j];
            let lo = a.start.max(b.start);
            let hi = a.end.min(b.end);
            if lo <= hi {
                out.push(Interval { unit: a.unit, start: lo, end: hi });
            }
            if a.end < b.end {
                i += 1;
            } else {
                j += 1;
            }
        }
        Ok(TemporalDomain { intervals: out })
    }

    pub fn difference(&self, other: &TemporalDomain) -> Result<TemporalDomain> {
        self.check_units(other)?;
        let mut out = Vec::new();
        for a in &self.intervals {
            let mut cursor = a.start;
            let mut open = true;
            for b in other.intervals.iter().filter(|b| b.end >= a.start && b.start <= a.end) {
                if b.start > cursor {
                    out.push(Interval { unit: a.unit, start: cursor, end: b.start - 1 });
                }
                if b.end >= a.end {
                    open = false;
                    break;
                }
                cursor = cursor.max(b.end + 1);
            }
            if open && cursor <= a.end {
                out.push(Interval { unit: a.unit, start: cursor, end: a.end });
            }
        }
        Ok(TemporalDomain { intervals: out })
    }

    pub fn intersects(&self, other: &TemporalDomain) -> Result<bool> {
        Ok(!self.intersection(other)?.is_empty())
    }

    /// Replace the open `NOW` bound with `end` (inclusive).
    pub fn close_at(&self, end: Instant) -> Result<TemporalDomain> {
        let mut intervals = self.intervals.clone();
        if let Some(last) = intervals.last_mut() {
            if last.ends_now() {
                if last.unit != end.unit {
                    return Err(TemporalError::MixedUnits(last.unit, end.unit));
                }
                *last = Interval::from_ticks(last.unit, last.start, end.ticks)?;
            }
        }
        Ok(TemporalDomain { intervals })
    }
}

/// Domain-level union.
pub fn domain_union(a: &TemporalDomain, b: &TemporalDomain) -> Result<TemporalDomain> {
    a.union(b)
}

/// Domain-level intersection.
pub fn domain_intersection(a: &TemporalDomain, b: &TemporalDomain) -> Result<TemporalDomain> {
    a.intersection(b)
}

/// Domain-level difference.
pub fn domain_difference(a: &TemporalDomain, b: &TemporalDomain) -> Result<TemporalDomain> {
    a.difference(b)
}

impl fmt::Display for TemporalDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("<")?;
        for (k, iv) in self.intervals.iter().enumerate() {
            if k > 0 {
                f.write_str(";")?;
            }
            write!(f, "{iv}")?;
        }
        f.write_str(">")
    }
}

impl FromStr for TemporalDomain {
    type Err = TemporalError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || TemporalError::Parse(s.to_string());
        let inner = s
            .trim()
            .strip_prefix('<')
            .and_then(|r| r.strip_suffix('>'))
            .ok_or_else(bad)?
            .trim();
        if inner.is_empty() {
            return Ok(TemporalDomain::empty());
        }
        let mut intervals = Vec::new();
        for part in inner.split(';') {
            let body = part
                .trim()
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(bad)?;
            let (a, b) = body.split_once(',').ok_or_else(bad)?;
            let start: Instant = a.parse()?;
            let iv = if b.trim() == "NOW" {
                Interval::until_now(start)
            } else {
                Interval::new(start, b.parse()?)?
            };
            intervals.push(iv);
        }
        normalize_domain(intervals)
    }
}

/// Group payloads by the `unit` grains their domains intersect.
pub fn group_by_grain<P: Clone>(
    states: &[(TemporalDomain, P)],
    unit: TemporalUnit,
) -> Result<BTreeMap<Instant, Vec<P>>> {
    let mut groups: BTreeMap<Instant, Vec<P>> = BTreeMap::new();
    for (domain, payload) in states {
        let mut grains = BTreeSet::new();
        for iv in domain.intervals() {
            let end = iv.end().ok_or(TemporalError::UnboundedDomain)?;
            let lo = coarsen_instant(iv.start(), unit)?;
            let hi = coarsen_instant(end, unit)?;
            grains.extend((lo.ticks..=hi.ticks).map(|t| Instant::new(unit, t)));
        }
        for g in grains {
            groups.entry(g).or_default().push(payload.clone());
        }
    }
    Ok(groups)
}
