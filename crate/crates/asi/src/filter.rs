use std::collections::BTreeSet;
use std::time::Duration;

use citytb_core::{parse_duration, GeoCircle, GeoPoint, Observation, SimTime, Urn};
use serde::{Deserialize, Serialize};

use crate::error::AsiError;

/// Selects observations. Empty sets mean "any".
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    #[serde(default)]
    pub phenomena: BTreeSet<String>,
    #[serde(default)]
    pub urns: BTreeSet<Urn>,
    #[serde(default)]
    pub geo: Option<GeoCircle>,
}

impl Filter {
    pub fn phenomenon(p: impl Into<String>) -> Self {
        Filter {
            phenomena: BTreeSet::from([p.into()]),
            ..Filter::default()
        }
    }

    pub fn source(mut self, urn: Urn) -> Self {
        self.urns.insert(urn);
        self
    }

    pub fn near(mut self, center: GeoPoint, radius_m: f64) -> Self {
        self.geo = Some(GeoCircle { center, radius_m });
        self
    }

    pub fn matches(&self, o: &Observation) -> bool {
        (self.phenomena.is_empty() || self.phenomena.contains(&o.phenomenon))
            && (self.urns.is_empty() || self.urns.contains(&o.source))
            && self.geo.is_none_or(|g| g.contains(&o.position))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Min,
    Max,
    Mean,
}

impl std::str::FromStr for Aggregate {
    type Err = AsiError;

    fn from_str(s: &str) -> Result<Self, AsiError> {
        match s {
            "min" => Ok(Aggregate::Min),
            "max" => Ok(Aggregate::Max),
            "mean" => Ok(Aggregate::Mean),
            other => Err(AsiError::BadFilter(format!("unknown aggregate {other:?}"))),
        }
    }
}

/// A history request over the half-open range `[from, to)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryQuery {
    pub filter: Filter,
    pub from: SimTime,
    pub to: SimTime,
    pub aggregate: Option<Aggregate>,
    /// Window width for aggregates; `None` aggregates the whole range.
    pub window: Option<Duration>,
}

impl HistoryQuery {
    pub fn raw(filter: Filter, from: SimTime, to: SimTime) -> Self {
        HistoryQuery {
            filter,
            from,
            to,
            aggregate: None,
            window: None,
        }
    }

    pub fn aggregated(mut self, agg: Aggregate, window: Option<Duration>) -> Self {
        self.aggregate = Some(agg);
        self.window = window;
        self
    }

    pub fn check(&self) -> Result<(), AsiError> {
        if self.from > self.to {
            return Err(AsiError::BadFilter("from is after to".into()));
        }
        if self.window == Some(Duration::ZERO) {
            return Err(AsiError::BadFilter("window must be positive".into()));
        }
        if self.window.is_some() && self.aggregate.is_none() {
            return Err(AsiError::BadFilter("window given without aggregate".into()));
        }
        if let Some(g) = &self.filter.geo {
            if !(g.radius_m >= 0.0) {
                return Err(AsiError::BadFilter("radius must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Parses URL query pairs. `phenomenon` and `urn` may repeat; `from` and
    /// `to` take durations since the start of the run.
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, AsiError> {
        let bad = |k: &str, v: &str| AsiError::BadFilter(format!("bad {k}: {v:?}"));
        let mut q = HistoryQuery::raw(Filter::default(), SimTime::ZERO, SimTime(u64::MAX));
        let (mut lat, mut lon, mut radius) = (None, None, None);
        for (k, v) in pairs {
            let num = || v.parse::<f64>().map_err(|_| bad(k, v));
            let dur = || parse_duration(v).map_err(|_| bad(k, v));
            match k {
                "phenomenon" => {
                    q.filter.phenomena.insert(v.to_string());
                }
                "urn" => {
                    q.filter.urns.insert(v.parse().map_err(|_| bad(k, v))?);
                }
                "lat" => lat = Some(num()?),
                "lon" => lon = Some(num()?),
                "radius" => radius = Some(num()?),
                "from" => q.from = SimTime(dur()?.as_millis() as u64),
                "to" => q.to = SimTime(dur()?.as_millis() as u64),
                "aggregate" => q.aggregate = Some(v.parse()?),
                "window" => q.window = Some(dur()?),
                other => return Err(AsiError::BadFilter(format!("unknown field {other:?}"))),
            }
        }
        match (lat, lon, radius) {
            (None, None, None) => {}
            (Some(lat), Some(lon), Some(r)) => q.filter.geo = Some(GeoCircle {
                center: GeoPoint::new(lat, lon),
                radius_m: r,
            }),
            _ => return Err(AsiError::BadFilter("lat, lon and radius go together".into())),
        }
        q.check()?;
        Ok(q)
    }
}
