//! Deterministic discrete-event simulation of one gateway and its devices.
//!
//! A [`Scenario`] fully describes a run; [`run`] executes it and returns a
//! [`RunTrace`]. The same scenario and seed always produce the identical
//! trace: every device draws from its own counter-based RNG stream keyed by
//! (seed, device id), and simultaneous events are ordered by insertion.

mod engine;
mod trace;

pub use trace::{
    channel_by_index, AdrEventKind, AdrEventRecord, DeviceId, InjectionKind, InjectionRecord,
    RecordOutcome, RunTrace, TransmissionRecord, TxKind, RX2_CHANNEL_INDEX,
};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mac::RetxPolicy;
use crate::metrics::EnergyModel;
use crate::phy::{PhyConfig, SpreadingFactor, TxPower};

/// Twelve days, the standard experiment horizon.
pub const DEFAULT_SIM_DURATION_S: f64 = 12.0 * 86_400.0;

/// A link-quality change applied to some devices at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkChangeSpec {
    /// Target device ids; `None` applies to every device alive at the time.
    #[serde(default)]
    pub devices: Option<Vec<DeviceId>>,
    pub delta_db: f64,
}

/// One scheduled perturbation of the running network.
///
/// Exactly one of `at_s` / `after_warmup` picks the trigger, and exactly one
/// of `link_change` / `add_devices` picks the action. `after_warmup` fires
/// once every initial device has had a full SNR window evaluated by the
/// network (or at `warmup_max_s`, whichever comes first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Injection {
    #[serde(default)]
    pub at_s: Option<f64>,
    #[serde(default)]
    pub after_warmup: bool,
    #[serde(default)]
    pub link_change: Option<LinkChangeSpec>,
    #[serde(default)]
    pub add_devices: Option<u32>,
}

/// Complete description of one simulation run.
///
/// Every field has a default matching the standard parameter set: a 670 m
/// disk, one frame per 10 minutes per device, three g1 channels at CR 4/5,
/// devices starting at (SF12, 14 dBm), N = 20, ADR_ACK_LIMIT = 64,
/// ADR_ACK_DELAY = 32, and a 10 dB installation margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub n_devices: u32,
    pub area_radius_m: f64,
    pub sim_duration_s: f64,
    pub mean_interarrival_s: f64,
    /// Shadowing standard deviation; 0, 1.785, and 3.57 are the low, medium
    /// and high channel-variation levels.
    pub sigma_db: f64,
    /// Fraction of uplink frames sent confirmed, drawn per frame.
    pub confirmed_fraction: f64,
    pub payload_bytes: u32,
    /// Packets the network needs before it computes SF/TP for a device.
    pub adr_n: u32,
    pub adr_ack_limit: u32,
    pub adr_ack_delay: u32,
    pub margin_db: f64,
    pub initial_sf: u8,
    pub initial_tp_dbm: i8,
    pub seed: u64,
    /// Path loss model: reference distance, exponent, loss at reference.
    pub d0_m: f64,
    pub gamma: f64,
    pub lpl_d0_db: f64,
    /// Pins every device's distance instead of sampling the disk; length
    /// must equal `n_devices`. Devices added by injection still sample.
    pub fixed_distances_m: Option<Vec<f64>>,
    pub injections: Vec<Injection>,
    /// Upper bound on the `after_warmup` trigger.
    pub warmup_max_s: f64,
    pub phy: PhyConfig,
    pub retx: RetxPolicy,
    pub energy: EnergyModel,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            n_devices: 100,
            area_radius_m: 670.0,
            sim_duration_s: DEFAULT_SIM_DURATION_S,
            mean_interarrival_s: 600.0,
            sigma_db: 0.0,
            confirmed_fraction: 0.0,
            payload_bytes: 20,
            adr_n: 20,
            adr_ack_limit: 64,
            adr_ack_delay: 32,
            margin_db: 10.0,
            initial_sf: 12,
            initial_tp_dbm: 14,
            seed: 0,
            d0_m: 40.0,
            gamma: 2.08,
            lpl_d0_db: 127.41,
            fixed_distances_m: None,
            injections: Vec::new(),
            warmup_max_s: 6.0 * 86_400.0,
            phy: PhyConfig::default(),
            retx: RetxPolicy::default(),
            energy: EnergyModel::default(),
        }
    }
}

impl Scenario {
    pub fn initial_sf(&self) -> Result<SpreadingFactor, Error> {
        SpreadingFactor::new(self.initial_sf)
    }

    pub fn initial_tp(&self) -> Result<TxPower, Error> {
        TxPower::new(self.initial_tp_dbm)
    }

    /// Check every domain constraint a run relies on.
    pub fn validate(&self) -> Result<(), Error> {
        let fail = |msg: String| Err(Error::InvalidScenario(msg));
        if self.n_devices < 1 {
            return fail("n_devices must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.confirmed_fraction) {
            return fail(format!(
                "confirmed_fraction {} outside [0, 1]",
                self.confirmed_fraction
            ));
        }
        if self.sim_duration_s < 0.0 || !self.sim_duration_s.is_finite() {
            return fail(format!("sim_duration_s {} invalid", self.sim_duration_s));
        }
        if self.mean_interarrival_s <= 0.0 {
            return fail(format!(
                "mean_interarrival_s {} must be positive",
                self.mean_interarrival_s
            ));
        }
        if self.sigma_db < 0.0 {
            return fail(format!("sigma_db {} must be non-negative", self.sigma_db));
        }
        if self.payload_bytes < 1 {
            return fail("payload_bytes must be at least 1".into());
        }
        if self.adr_n < 1 {
            return fail("adr_n must be at least 1".into());
        }
        if self.adr_ack_limit < 1 || self.adr_ack_delay < 1 {
            return fail("adr_ack_limit and adr_ack_delay must be at least 1".into());
        }
        if self.margin_db < 0.0 {
            return fail(format!("margin_db {} must be non-negative", self.margin_db));
        }
        if self.d0_m <= 0.0 {
            return fail(format!("d0_m {} must be positive", self.d0_m));
        }
        if self.area_radius_m <= 0.0 {
            return fail(format!(
                "area_radius_m {} must be positive",
                self.area_radius_m
            ));
        }
        self.initial_sf()
            .map_err(|e| Error::InvalidScenario(format!("initial_sf: {e}")))?;
        self.initial_tp()
            .map_err(|e| Error::InvalidScenario(format!("initial_tp_dbm: {e}")))?;
        if let Some(distances) = &self.fixed_distances_m {
            if distances.len() != self.n_devices as usize {
                return fail(format!(
                    "fixed_distances_m has {} entries for {} devices",
                    distances.len(),
                    self.n_devices
                ));
            }
            if let Some(d) = distances.iter().find(|&&d| d < self.d0_m) {
                return fail(format!("fixed distance {d} m below reference d0 {}", self.d0_m));
            }
        }
        for (i, inj) in self.injections.iter().enumerate() {
            let triggers = usize::from(inj.at_s.is_some()) + usize::from(inj.after_warmup);
            if triggers != 1 {
                return fail(format!(
                    "injection {i}: exactly one of at_s / after_warmup required"
                ));
            }
            if let Some(t) = inj.at_s {
                if !(0.0..=self.sim_duration_s).contains(&t) {
                    return fail(format!(
                        "injection {i}: at_s {t} outside [0, {}]",
                        self.sim_duration_s
                    ));
                }
            }
            let actions =
                usize::from(inj.link_change.is_some()) + usize::from(inj.add_devices.is_some());
            if actions != 1 {
                return fail(format!(
                    "injection {i}: exactly one of link_change / add_devices required"
                ));
            }
        }
        Ok(())
    }
}

/// Place `n` devices uniformly over the disk of the given radius
/// (area-uniform: radius scales with the square root of a uniform draw).
pub fn place_devices<R: Rng>(n: u32, radius_m: f64, rng: &mut R) -> Vec<(f64, f64)> {
    (0..n).map(|_| sample_disk_point(radius_m, rng)).collect()
}

pub(crate) fn sample_disk_point<R: Rng>(radius_m: f64, rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.gen();
    let theta: f64 = rng.gen::<f64>() * std::f64::consts::TAU;
    let r = radius_m * u.sqrt();
    (r * theta.cos(), r * theta.sin())
}

/// Next uplink instant: an exponential gap with the given mean after `now`,
/// deferred to the duty-cycle (or MAC) clearance when that is later.
pub fn next_uplink_time<R: Rng>(
    rng: &mut R,
    mean_interarrival_s: f64,
    now: f64,
    clearance_s: f64,
) -> f64 {
    let gap = Exp::new(1.0 / mean_interarrival_s)
        .expect("positive mean")
        .sample(rng);
    (now + gap).max(clearance_s)
}

/// Run a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunTrace, Error> {
    scenario.validate()?;
    engine::Engine::new(scenario)?.run()
}
