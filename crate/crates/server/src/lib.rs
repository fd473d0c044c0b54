//! Hosts guided panel sessions over a loopback line protocol and a
//! WebSocket bridge speaking the same grammar, and drives them with a
//! simulated operator.

mod connection;
pub mod lines;
mod server;
pub mod sim;

pub use connection::INLINE_DOC_ID;
pub use server::{serve, BackgroundServer, ServerConfig, ServerError, ServerHandle, DEFAULT_PORT};
