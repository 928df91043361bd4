//! Read-only access tier: the text status table and the HTTP endpoints.

mod http;
mod text;

pub use http::{serve_http, Response, Surface, SurfaceHandle};
pub use text::{fetch_live_values, format_duration, render_status, StatusRow, COLUMNS};
