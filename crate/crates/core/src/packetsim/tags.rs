//! Start-time fair queueing tags.
//!
//! `prev` is the tag of the flow's previous packet (at the same resource for
//! the per-resource rules), `None` for a flow's first packet.

/// DRFQ: one tag per packet, shared by every resource. The increment is
/// `max_j a_ij`, which is 1 for normalized rows.
pub fn tag_drf(v: f64, prev: Option<f64>, dominant: f64) -> f64 {
    match prev {
        Some(s) => v.max(s + dominant),
        None => v,
    }
}

/// PF-SFQ at resource j: increment `a_ij / Q_ij`, with `Q_ij` the flow's
/// backlog at j counting the arriving packet.
pub fn tag_pf(v_j: f64, prev: Option<f64>, a: f64, backlog: u32) -> f64 {
    assert!(backlog > 0, "the arriving packet counts toward its own backlog");
    match prev {
        Some(s) => v_j.max(s + a / f64::from(backlog)),
        None => v_j,
    }
}

/// BMF-SFQ at resource j: weighted max-min with weight `1/a_ij`.
pub fn tag_bmf(v_j: f64, prev: Option<f64>, a: f64) -> f64 {
    match prev {
        Some(s) => v_j.max(s + a),
        None => v_j,
    }
}
