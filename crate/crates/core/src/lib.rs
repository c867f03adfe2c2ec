//! Duty-cycle-efficient slotted-Aloha synchronization for LoRaWAN class-A
//! devices.
//!
//! The network server judges each uplink by where it ends inside a shared
//! slot grid and, only when a device has drifted past a guard interval,
//! piggybacks a two-byte "time to next slot" on the acknowledgement. The
//! crate contains the protocol itself ([`protocol`]), the pieces it is built
//! from ([`airtime`], [`clock`], [`slot`], [`frame`]) and a deterministic
//! simulator ([`sim`]) that compares it with fixed-rate resynchronization.

pub mod airtime;
pub mod clock;
pub mod frame;
pub mod protocol;
pub mod report;
pub mod scenario;
pub mod sim;
pub mod slot;

/// Integer nanoseconds; the unit of every timestamp and duration.
pub type Nanos = i64;

pub const NS_PER_MS: Nanos = 1_000_000;
pub const NS_PER_S: Nanos = 1_000_000_000;

pub use airtime::{time_on_air, AirTime, ParamError, RadioParams};
pub use clock::{ClockModel, SimClock};
pub use frame::{SyncAck, UplinkFrame, SYNC_FPORT};
pub use protocol::{EndDevice, NetworkServer, SyncStrategy};
pub use report::{Comparison, RunSummary};
pub use scenario::{ClockSpec, DeviceSpec, Scenario, ScenarioError, SlotPick};
pub use sim::{run, Metrics, Trace, TraceRow};
pub use slot::{SlotConfig, TimelineRef};
