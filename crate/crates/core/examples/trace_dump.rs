//! Dump the ADR event timeline of a scenario run, for eyeballing the
//! control loop. Usage: `cargo run --release --example trace_dump -- <scenario.json>`

use std::path::PathBuf;

use adrsim::cli::load_scenario;
use adrsim::sim::{self, TxKind};

fn main() {
    let path: PathBuf = std::env::args().nth(1).expect("scenario path").into();
    let scenario = load_scenario(&path).expect("valid scenario");
    let trace = sim::run(&scenario).expect("run");

    if let Err(v) = adrsim::metrics::audit_duty_cycle(&trace, 0.01) {
        println!("# DUTY VIOLATION: {v:?}");
    }

    println!("# injections");
    for inj in &trace.injections {
        println!("{:>12.1}s {:?}", inj.time_s, inj.kind);
    }
    println!("# adr events");
    for e in &trace.adr_events {
        println!("{:>12.1}s dev{} {:?}", e.time_s, e.device, e.kind);
    }
    let received = trace
        .transmissions
        .iter()
        .filter(|r| r.kind == TxKind::Uplink && r.outcome.is_received())
        .count();
    let uplinks = trace
        .transmissions
        .iter()
        .filter(|r| r.kind == TxKind::Uplink)
        .count();
    println!("# {uplinks} uplink attempts, {received} received");
    if let Some(inj) = trace.injections.first() {
        let anchor = inj.time_s;
        let nth = trace
            .transmissions
            .iter()
            .filter(|r| r.kind == TxKind::Uplink && r.outcome.is_received() && r.end_s >= anchor)
            .nth(trace.adr_n as usize - 1)
            .map(|r| r.end_s);
        println!(
            "# convergence at N={}: {:?} min after anchor",
            trace.adr_n,
            nth.map(|t| (t - anchor) / 60.0)
        );
    }
}
