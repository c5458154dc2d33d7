use std::sync::atomic::{AtomicUsize, Ordering};

use crate::netsim::{InstanceSpec, Latency, NetSim, NetSimError};

/// Hands out simulated networks and tracks how many are still live.
///
/// This is the seam where a backend driving real application processes
/// would plug in; only the simulator ships.
#[derive(Debug, Default)]
pub struct SimulatorBackend {
    latency: Latency,
    live: AtomicUsize,
    provisioned: AtomicUsize,
}

impl SimulatorBackend {
    pub fn new(latency: Latency) -> Self {
        Self { latency, live: AtomicUsize::new(0), provisioned: AtomicUsize::new(0) }
    }

    pub fn provision(&self, specs: Vec<InstanceSpec>) -> Result<NetSim, NetSimError> {
        let sim = NetSim::provision(specs, self.latency)?;
        self.live.fetch_add(1, Ordering::SeqCst);
        self.provisioned.fetch_add(1, Ordering::SeqCst);
        Ok(sim)
    }

    pub fn release(&self, mut sim: NetSim) {
        sim.teardown();
        self.live.fetch_sub(1, Ordering::SeqCst);
    }

    /// Simulations provisioned and not yet released.
    pub fn live(&self) -> usize {
        self.live.load(Ordering::SeqCst)
    }

    pub fn total_provisioned(&self) -> usize {
        self.provisioned.load(Ordering::SeqCst)
    }
}
