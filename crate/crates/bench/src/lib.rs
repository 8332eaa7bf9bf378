//! Shared fixtures for the benchmarks.

use eas_core::env::{ClusterConfig, SimState};
use eas_core::workload::{generate_sequence, JobArrivalSequence, WorkloadConfig};

pub fn paper_cluster() -> ClusterConfig {
    ClusterConfig::default()
}

pub fn sequence(lambda: f64, seed: u64) -> JobArrivalSequence {
    generate_sequence(&WorkloadConfig { lambda, seed, ..Default::default() }).expect("valid workload")
}

/// A mid-episode state: every arrival up to `clock` admitted, half the
/// queue scheduled greedily.
pub fn busy_state(seed: u64, clock: u32) -> SimState {
    let cluster = paper_cluster();
    let seq = sequence(0.9, seed);
    let mut s = SimState::reset(&seq, &cluster, seed).expect("valid reset");
    while s.clock() < clock && !s.is_terminal() {
        let valid = s.valid_actions();
        let a = if s.queue_len() > 5 && valid.len() > 1 { valid[0] } else { cluster.hold_action() };
        s.step(a).expect("non-terminal");
    }
    s
}
