use citytb_core::{ConnectionKind, GeoCircle, GeoPoint, NodeRole, NodeState, ResourceDescription, Urn};

use crate::error::RdError;

#[derive(Debug, Clone, PartialEq)]
pub enum Predicate {
    Role(NodeRole),
    Phenomenon(String),
    ParentGateway(Urn),
    ConnectionType(ConnectionKind),
    Hw(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StateFilter {
    #[default]
    Active,
    Any,
    Is(NodeState),
}

/// Conjunction of predicates, an optional geo circle and a state filter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Query {
    pub predicates: Vec<Predicate>,
    pub geo: Option<GeoCircle>,
    pub state: StateFilter,
}

impl Query {
    pub fn all() -> Self {
        Query::default()
    }

    pub fn with(mut self, p: Predicate) -> Self {
        self.predicates.push(p);
        self
    }

    pub fn in_state(mut self, state: StateFilter) -> Self {
        self.state = state;
        self
    }

    pub fn near(mut self, center: GeoPoint, radius_m: f64) -> Self {
        self.geo = Some(GeoCircle { center, radius_m });
        self
    }

    /// Builds a query from `key=value` pairs as they appear in a lookup URL.
    ///
    /// Keys: `role`, `phenomenon`, `state` (a state name or `any`),
    /// `parent-gateway`, `connection.type`, `hw.<key>`, and `lat`/`lon`/`radius`
    /// which must appear together.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Query, RdError> {
        let bad = |m: String| RdError::BadQuery(m);
        let mut q = Query::default();
        let (mut lat, mut lon, mut radius) = (None, None, None);
        let num = |k: &str, v: &str| -> Result<f64, RdError> {
            v.parse().map_err(|_| bad(format!("{k} must be a number, got {v:?}")))
        };
        for (k, v) in pairs {
            match k {
                "role" => q
                    .predicates
                    .push(Predicate::Role(v.parse().map_err(|e| bad(format!("{e}")))?)),
                "phenomenon" => q.predicates.push(Predicate::Phenomenon(v.to_string())),
                "parent-gateway" => q.predicates.push(Predicate::ParentGateway(
                    Urn::parse(v).map_err(|e| bad(e.to_string()))?,
                )),
                "connection.type" => q.predicates.push(Predicate::ConnectionType(
                    v.parse().map_err(|e| bad(format!("{e}")))?,
                )),
                "state" => {
                    q.state = if v.eq_ignore_ascii_case("any") {
                        StateFilter::Any
                    } else {
                        StateFilter::Is(v.parse().map_err(|e| bad(format!("{e}")))?)
                    }
                }
                "lat" => lat = Some(num(k, v)?),
                "lon" => lon = Some(num(k, v)?),
                "radius" => radius = Some(num(k, v)?),
                other => match other.strip_prefix("hw.") {
                    Some(key) if !key.is_empty() => {
                        q.predicates.push(Predicate::Hw(key.to_string(), v.to_string()))
                    }
                    _ => return Err(bad(format!("unknown field {other:?}"))),
                },
            }
        }
        match (lat, lon, radius) {
            (None, None, None) => {}
            (Some(lat), Some(lon), Some(r)) if r >= 0.0 => {
                q.geo = Some(GeoCircle {
                    center: GeoPoint::new(lat, lon),
                    radius_m: r,
                })
            }
            _ => return Err(bad("geo filter needs lat, lon and a non-negative radius".into())),
        }
        Ok(q)
    }

    /// Inverse of [`Query::from_pairs`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = self
            .predicates
            .iter()
            .map(|p| match p {
                Predicate::Role(r) => ("role".into(), r.to_string()),
                Predicate::Phenomenon(s) => ("phenomenon".into(), s.clone()),
                Predicate::ParentGateway(u) => ("parent-gateway".into(), u.to_string()),
                Predicate::ConnectionType(c) => ("connection.type".into(), c.to_string()),
                Predicate::Hw(k, v) => (format!("hw.{k}"), v.clone()),
            })
            .collect();
        match self.state {
            StateFilter::Active => {}
            StateFilter::Any => out.push(("state".into(), "any".into())),
            StateFilter::Is(s) => out.push(("state".into(), s.to_string())),
        }
        if let Some(g) = &self.geo {
            out.push(("lat".into(), g.center.lat.to_string()));
            out.push(("lon".into(), g.center.lon.to_string()));
            out.push(("radius".into(), g.radius_m.to_string()));
        }
        out
    }

    pub fn state_matches(&self, state: NodeState) -> bool {
        match self.state {
            StateFilter::Active => state == NodeState::Active,
            StateFilter::Any => true,
            StateFilter::Is(s) => state == s,
        }
    }

    pub fn matches(&self, d: &ResourceDescription) -> bool {
        self.state_matches(d.state)
            && self.predicates.iter().all(|p| match p {
                Predicate::Role(r) => d.role == *r,
                Predicate::Phenomenon(ph) => d.has_phenomenon(ph),
                Predicate::ParentGateway(g) => d.parent_gateway.as_ref() == Some(g),
                Predicate::ConnectionType(c) => d.connection.kind == *c,
                Predicate::Hw(k, v) => d.hw_meta.get(k) == Some(v),
            })
            && self
                .geo
                .as_ref()
                .is_none_or(|g| d.position.fixed().is_some_and(|p| g.contains(&p)))
    }
}
