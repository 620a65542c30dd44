use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// Resource name rendered as `urn:<authority>:<testbed>:<node-id>`.
///
/// Segments are nonempty and restricted to `[A-Za-z0-9._-]`, so a URN can be
/// dropped into a path segment or query value without escaping. Ordering is
/// by `(authority, testbed, node_id)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Urn {
    authority: String,
    testbed: String,
    node_id: String,
}

fn valid_segment(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl Urn {
    pub fn new(
        authority: impl Into<String>,
        testbed: impl Into<String>,
        node_id: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let urn = Urn {
            authority: authority.into(),
            testbed: testbed.into(),
            node_id: node_id.into(),
        };
        for (seg, what) in [
            (&urn.authority, "bad authority"),
            (&urn.testbed, "bad testbed id"),
            (&urn.node_id, "bad node id"),
        ] {
            if !valid_segment(seg) {
                return Err(ModelError::MalformedUrn(urn.to_string(), what));
            }
        }
        Ok(urn)
    }

    /// Parses a URN. The `urn` scheme prefix is case-insensitive and
    /// canonicalized to lowercase; the other segments are kept verbatim.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let malformed = |why| ModelError::MalformedUrn(text.to_string(), why);
        let mut parts = text.split(':');
        let scheme = parts.next().ok_or_else(|| malformed("empty"))?;
        if !scheme.eq_ignore_ascii_case("urn") {
            return Err(malformed("missing urn: prefix"));
        }
        let (Some(authority), Some(testbed), Some(node_id), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(malformed("expected exactly four ':'-separated segments"));
        };
        Urn::new(authority, testbed, node_id).map_err(|e| match e {
            ModelError::MalformedUrn(_, why) => malformed(why),
            other => other,
        })
    }

    pub fn authority(&self) -> &str {
        &self.authority
    }

    pub fn testbed(&self) -> &str {
        &self.testbed
    }

    pub fn node_id(&self) -> &str {
        &self.node_id
    }

    /// Another URN in the same authority/testbed namespace.
    pub fn sibling(&self, node_id: &str) -> Result<Urn, ModelError> {
        Urn::new(self.authority.clone(), self.testbed.clone(), node_id)
    }
}

impl fmt::Display for Urn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "urn:{}:{}:{}", self.authority, self.testbed, self.node_id)
    }
}

impl FromStr for Urn {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Urn::parse(s)
    }
}

impl TryFrom<String> for Urn {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Urn::parse(&value)
    }
}

impl From<Urn> for String {
    fn from(value: Urn) -> Self {
        value.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_santander_node() {
        let urn = Urn::parse("urn:smartsantander:santander:node0352").unwrap();
        assert_eq!(urn.authority(), "smartsantander");
        assert_eq!(urn.testbed(), "santander");
        assert_eq!(urn.node_id(), "node0352");
    }

    #[test]
    fn empty_node_id_is_malformed() {
        assert!(matches!(
            Urn::parse("urn:smartsantander:santander:"),
            Err(ModelError::MalformedUrn(..))
        ));
    }

    #[test]
    fn rejects_wrong_segment_counts_and_separators() {
        for bad in [
            "",
            "urn",
            "urn:a:b",
            "urn:a:b:c:d",
            "urx:a:b:c",
            "urn:a:b:c d",
            "urn:a:b:c/d",
            "urn::b:c",
        ] {
            assert!(Urn::parse(bad).is_err(), "{bad:?} accepted");
        }
    }

    #[test]
    fn scheme_is_canonicalized() {
        let urn = Urn::parse("URN:smartsantander:santander:gw01").unwrap();
        assert_eq!(urn.to_string(), "urn:smartsantander:santander:gw01");
    }

    fn segment() -> impl Strategy<Value = String> {
        "[A-Za-z0-9._-]{1,12}"
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn render_parse_round_trip(a in segment(), t in segment(), n in segment()) {
            let text = format!("urn:{a}:{t}:{n}");
            let urn = Urn::parse(&text).unwrap();
            prop_assert_eq!(urn.to_string(), text);
            prop_assert_eq!(Urn::parse(&urn.to_string()).unwrap(), urn);
        }
    }
}
