//! Per-frame event trace.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::frames::Frame;
use crate::ids::{Micros, NodeId};

/// Reception result at one addressed node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RxNote {
    pub node: NodeId,
    pub header_ok: bool,
    pub body_ok: bool,
}

/// One transmitted frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub start: Micros,
    pub end: Micros,
    pub node: NodeId,
    pub frame: Frame,
    /// Absolute expiry of the NAV the frame carries.
    pub nav_until: Micros,
    /// Outcomes at addressed nodes that locked onto the frame.
    pub outcomes: Vec<RxNote>,
}

impl TraceRecord {
    /// `ok` when every addressed node decoded the frame, `fail` when one
    /// did not, `-` for frames without addressees or unobserved ones.
    pub fn outcome(&self) -> &'static str {
        if self.outcomes.is_empty() {
            "-"
        } else if self.outcomes.iter().all(|o| o.body_ok) {
            "ok"
        } else {
            "fail"
        }
    }

    /// `start end node kind to nav_until outcome`, space separated.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        let to: Vec<String> = self
            .frame
            .addressees()
            .iter()
            .map(|n| alloc::format!("{n}"))
            .collect();
        let to = if to.is_empty() { String::from("*") } else { to.join(",") };
        let _ = write!(
            s,
            "{} {} {} {} {} {} {}",
            self.start,
            self.end,
            self.node,
            self.frame.kind().name(),
            to,
            self.nav_until,
            self.outcome()
        );
        s
    }
}

/// Header line matching [`TraceRecord::to_line`].
pub const TRACE_HEADER: &str = "start_us end_us node kind to nav_until_us outcome";
