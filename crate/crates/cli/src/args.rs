use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "citytb", version, about = "Operate and experiment on a simulated city-scale IoT testbed")]
pub struct Cli {
    /// Base URL of a running testbed.
    #[arg(long, global = true, env = "CITYTB_URL", default_value = "http://127.0.0.1:8080")]
    pub server: String,

    /// One record per line with a fixed field order, for scripts.
    #[arg(long, short = 'm', global = true)]
    pub machine: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a topology and serve it until interrupted.
    Up(UpArgs),
    /// Query and edit the resource directory.
    #[command(subcommand)]
    Resources(Resources),
    /// Inject faults into the simulated city.
    #[command(subcommand)]
    Fault(Fault),
    /// Book nodes for an experiment.
    Reserve(ReserveArgs),
    /// Cancel a reservation.
    Cancel(CancelArgs),
    /// Busy slots of every reservable node.
    Availability {
        #[arg(long, default_value = "+0s")]
        from: String,
        #[arg(long)]
        to: Option<String>,
    },
    /// Export the set of reservable nodes.
    Nodes,
    /// Work inside a reservation.
    #[command(subcommand)]
    Session(Session),
    /// Query observations from the service plane.
    #[command(subcommand)]
    Asi(Asi),
    /// Show or change the soft-state timeouts.
    Timeouts {
        #[arg(long)]
        invalidation: Option<String>,
        #[arg(long)]
        deletion: Option<String>,
        #[arg(long)]
        configurator: Option<String>,
    },
    /// Management bus events from a position on.
    Events {
        #[arg(long, default_value_t = 0)]
        since: u64,
        /// Keep polling for new events.
        #[arg(long)]
        follow: bool,
    },
    /// Liveness and registration progress.
    Health,
    /// Replay scripted runs locally.
    #[command(subcommand)]
    Scenario(Scenario),
}

#[derive(Args, Debug)]
pub struct UpArgs {
    /// Topology seed; bare names are also looked up under ./seeds.
    #[arg(long)]
    pub topo: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub listen: String,
    /// Simulated seconds per wall-clock second; 0 runs flat out.
    #[arg(long, default_value_t = 1.0)]
    pub speed: f64,
    /// Simulated time per step.
    #[arg(long, default_value = "1s")]
    pub tick: String,
    /// Keep broker, directory and observation logs here.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Also serve the management bus over TCP.
    #[arg(long, env = "CITYTB_BUS_ADDR")]
    pub bus_listen: Option<String>,
    /// Run the gateway agents against the TCP bus.
    #[arg(long, requires = "bus_listen")]
    pub agents_over_tcp: bool,
    /// Agent settings file of `key = value` lines.
    #[arg(long)]
    pub agent_config: Option<PathBuf>,
    /// Accounts as user:credential; repeatable.
    #[arg(long = "user", default_value = "alice:alice")]
    pub users: Vec<String>,
    /// Serve at once instead of registering every device first.
    #[arg(long)]
    pub cold: bool,
    /// Simulated time allowed for the initial registration.
    #[arg(long, default_value = "1h")]
    pub ready_limit: String,
}

#[derive(Args, Debug, Default)]
pub struct Filters {
    /// A node role, or `gateway` for gateways.
    #[arg(long)]
    pub role: Option<String>,
    #[arg(long)]
    pub phenomenon: Option<String>,
    #[arg(long)]
    pub gateway: Option<String>,
    /// mesh, gprs or wired.
    #[arg(long)]
    pub connection: Option<String>,
    /// Hardware class, such as lamppost or parking.
    #[arg(long)]
    pub class: Option<String>,
    /// new, active, disabled, deleted or any.
    #[arg(long)]
    pub state: Option<String>,
    /// lat,lon,radius in metres.
    #[arg(long)]
    pub near: Option<String>,
    /// Extra raw `key=value` query pairs.
    pub pairs: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Resources {
    /// Matching resource descriptions.
    List(Filters),
    Get { urn: String },
    /// Counts by state and role.
    Summary,
    /// Register a description from a file, or stdin with `-`.
    Put { file: PathBuf },
    /// Apply a partial update from a file, or stdin with `-`.
    Update { urn: String, file: PathBuf },
    Delete { urn: String },
    /// Follow resources appearing in and leaving a query.
    Watch {
        #[command(flatten)]
        filters: Filters,
        /// Stop after this many changes.
        #[arg(long)]
        count: Option<usize>,
    },
}

#[derive(Subcommand, Debug)]
pub enum Fault {
    Inject {
        target: String,
        /// node-death, gw-death, revive or link-degrade.
        kind: String,
        #[arg(long)]
        loss: Option<f64>,
    },
}

#[derive(Args, Debug)]
pub struct Credentials {
    #[arg(long, env = "CITYTB_USER", default_value = "alice")]
    pub user: String,
    #[arg(long, env = "CITYTB_CREDENTIAL", default_value = "alice", hide_env_values = true)]
    pub credential: String,
}

#[derive(Args, Debug)]
pub struct ReserveArgs {
    /// Nodes to book, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub urns: Vec<String>,
    /// `+30s` from now, or a duration since the start of the run.
    #[arg(long, default_value = "+0s")]
    pub from: String,
    #[arg(long)]
    pub dur: String,
    #[command(flatten)]
    pub credentials: Credentials,
}

#[derive(Args, Debug)]
pub struct CancelArgs {
    pub id: u64,
    #[command(flatten)]
    pub credentials: Credentials,
}

#[derive(Args, Debug)]
pub struct Key {
    #[arg(long, env = "CITYTB_KEY", hide_env_values = true)]
    pub key: String,
}

#[derive(Subcommand, Debug)]
pub enum Session {
    Open {
        #[command(flatten)]
        key: Key,
        /// URL to receive controller output as it happens.
        #[arg(long)]
        controller: Option<String>,
    },
    Send {
        id: u32,
        urn: String,
        payload: String,
        /// The payload is hex.
        #[arg(long)]
        hex: bool,
        #[command(flatten)]
        key: Key,
    },
    Flash {
        id: u32,
        /// Image file.
        image: PathBuf,
        #[arg(long)]
        behavior: String,
        #[arg(long, default_value = "broadcast")]
        mode: String,
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
        #[arg(long, default_value_t = 1)]
        version: u32,
        #[command(flatten)]
        key: Key,
    },
    Reset {
        id: u32,
        urn: String,
        #[command(flatten)]
        key: Key,
    },
    /// Messages in and out of the reserved nodes.
    Trace(FeedArgs),
    /// Controller output.
    Events(FeedArgs),
}

#[derive(Args, Debug)]
pub struct FeedArgs {
    pub id: u32,
    #[arg(long, default_value_t = 0)]
    pub since: usize,
    /// Stay connected until the session ends.
    #[arg(long)]
    pub follow: bool,
    #[command(flatten)]
    pub key: Key,
}

#[derive(Subcommand, Debug)]
pub enum Asi {
    /// History as `key=value` pairs: phenomenon, urn, from, to, lat, lon,
    /// radius, aggregate, window.
    Query {
        pairs: Vec<String>,
        #[arg(long)]
        csv: bool,
    },
    /// Follow new observations matching the pairs.
    Subscribe {
        pairs: Vec<String>,
        #[arg(long)]
        count: Option<usize>,
    },
    Heatmap {
        #[arg(long)]
        phenomenon: String,
        /// south,west,north,east
        #[arg(long, allow_hyphen_values = true)]
        bbox: String,
        #[arg(long, default_value = "10x10")]
        cells: String,
        #[arg(long)]
        at: Option<String>,
    },
}

#[derive(Subcommand, Debug)]
pub enum Scenario {
    Run {
        file: PathBuf,
        /// Use this topology instead of the script's.
        #[arg(long)]
        topo: Option<PathBuf>,
    },
}
