//! Experiment sessions: subjects work through the price list and the spread
//! screens, every accepted choice is logged before it is acknowledged, and
//! completed subjects are paid by a reproducible random draw.

pub mod http;
pub mod payout;
pub mod service;
pub mod state;

pub use http::router;
pub use payout::{draw_payout, PayoutDraw};
pub use service::{Service, ServiceConfig, ServiceError};
pub use state::{BatterySpec, Event, ProtocolError, SessionState, Stage};
