//! Registry of simulated node programs.

use crate::node::SimNode;

pub const DEFAULT_SENSE: &str = "default-sense";
pub const ECHO: &str = "echo";
pub const BLINK: &str = "blink";
pub const FLOOD_ROUTING: &str = "flood-routing";

pub const BEHAVIORS: [&str; 4] = [DEFAULT_SENSE, ECHO, BLINK, FLOOD_ROUTING];

pub fn is_known(behavior: &str) -> bool {
    BEHAVIORS.contains(&behavior)
}

pub fn boot_banner(node: &SimNode) -> Vec<u8> {
    format!(
        "boot {} v{}",
        node.installed.behavior, node.installed.version
    )
    .into_bytes()
}

/// What a node does with one experiment-plane payload.
#[derive(Debug, Default, PartialEq)]
pub(crate) struct Reaction {
    pub outputs: Vec<Vec<u8>>,
    /// Payload to rebroadcast to experiment-plane neighbors.
    pub rebroadcast: Option<Vec<u8>>,
}

pub(crate) fn on_message(node: &mut SimNode, payload: &[u8]) -> Reaction {
    match node.installed.behavior.as_str() {
        ECHO => Reaction {
            outputs: vec![payload.to_vec()],
            rebroadcast: None,
        },
        BLINK => {
            node.behavior_state ^= 1;
            let led = if node.behavior_state & 1 == 1 { "on" } else { "off" };
            Reaction {
                outputs: vec![format!("led {led}").into_bytes()],
                rebroadcast: None,
            }
        }
        FLOOD_ROUTING => {
            let mut out = b"recv:".to_vec();
            out.extend_from_slice(payload);
            Reaction {
                outputs: vec![out],
                rebroadcast: Some(payload.to_vec()),
            }
        }
        _ => Reaction::default(),
    }
}
