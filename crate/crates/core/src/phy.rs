//! LoRa PHY model: propagation, airtime, sensitivity, and collision/capture
//! resolution for uplinks and downlinks seen by a single receiver.
//!
//! All functions here are pure; the simulation engine owns every piece of
//! mutable state and feeds sampled shadowing values in explicitly so that
//! runs stay reproducible.

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Spreading factor, SF7 through SF12.
///
/// Higher SF buys receiver sensitivity at the cost of airtime: each step
/// doubles the symbol duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct SpreadingFactor(u8);

impl SpreadingFactor {
    pub const MIN: SpreadingFactor = SpreadingFactor(7);
    pub const MAX: SpreadingFactor = SpreadingFactor(12);

    pub fn new(value: u8) -> Result<Self, Error> {
        if (7..=12).contains(&value) {
            Ok(SpreadingFactor(value))
        } else {
            Err(Error::InvalidSpreadingFactor(value))
        }
    }

    pub fn value(self) -> u8 {
        self.0
    }

    /// Next more robust SF (SF8 after SF7, ...); `None` at SF12.
    pub fn step_up(self) -> Option<Self> {
        if self.0 < 12 {
            Some(SpreadingFactor(self.0 + 1))
        } else {
            None
        }
    }

    /// Next faster SF (SF11 after SF12, ...); `None` at SF7.
    pub fn step_down(self) -> Option<Self> {
        if self.0 > 7 {
            Some(SpreadingFactor(self.0 - 1))
        } else {
            None
        }
    }

    fn index(self) -> usize {
        (self.0 - 7) as usize
    }
}

impl TryFrom<u8> for SpreadingFactor {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self, Error> {
        SpreadingFactor::new(v)
    }
}

impl From<SpreadingFactor> for u8 {
    fn from(sf: SpreadingFactor) -> u8 {
        sf.0
    }
}

/// EU868 transmit power grid: {2, 5, 8, 11, 14} dBm, 14 dBm regulatory cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub struct TxPower(i8);

/// The allowed power levels, lowest first.
pub const TX_POWER_LEVELS_DBM: [i8; 5] = [2, 5, 8, 11, 14];

impl TxPower {
    pub const MIN: TxPower = TxPower(2);
    pub const MAX: TxPower = TxPower(14);

    pub fn new(dbm: i8) -> Result<Self, Error> {
        if TX_POWER_LEVELS_DBM.contains(&dbm) {
            Ok(TxPower(dbm))
        } else {
            Err(Error::InvalidTxPower(dbm))
        }
    }

    pub fn dbm(self) -> i8 {
        self.0
    }

    /// One level up the grid (5 after 2, ...); `None` at 14 dBm.
    pub fn step_up(self) -> Option<Self> {
        let idx = TX_POWER_LEVELS_DBM.iter().position(|&p| p == self.0).unwrap();
        TX_POWER_LEVELS_DBM.get(idx + 1).map(|&p| TxPower(p))
    }

    /// One level down the grid (11 after 14, ...); `None` at 2 dBm.
    pub fn step_down(self) -> Option<Self> {
        let idx = TX_POWER_LEVELS_DBM.iter().position(|&p| p == self.0).unwrap();
        idx.checked_sub(1).map(|i| TxPower(TX_POWER_LEVELS_DBM[i]))
    }
}

impl TryFrom<i8> for TxPower {
    type Error = Error;
    fn try_from(v: i8) -> Result<Self, Error> {
        TxPower::new(v)
    }
}

impl From<TxPower> for i8 {
    fn from(tp: TxPower) -> i8 {
        tp.0
    }
}

/// A 125 kHz channel identified by its centre frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Channel {
    pub center_hz: f64,
    pub bandwidth_hz: f64,
}

/// The three default g1 uplink channels.
pub const G1_CHANNELS: [Channel; 3] = [
    Channel { center_hz: 868.1e6, bandwidth_hz: 125_000.0 },
    Channel { center_hz: 868.3e6, bandwidth_hz: 125_000.0 },
    Channel { center_hz: 868.5e6, bandwidth_hz: 125_000.0 },
];

/// EU868 RX2 default: 869.525 MHz, used with SF12.
pub const RX2_CHANNEL: Channel = Channel { center_hz: 869.525e6, bandwidth_hz: 125_000.0 };

/// Demodulation SNR floor in dB, indexed SF7..SF12.
pub const REQUIRED_SNR_DB: [f64; 6] = [-7.5, -10.0, -12.5, -15.0, -17.5, -20.0];

/// Log-distance path loss with log-normal shadowing.
///
/// `mean_offset_db` is a per-device additive term that link-change
/// injections mutate at runtime; it defaults to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub d0_m: f64,
    pub gamma: f64,
    pub lpl_d0_db: f64,
    pub sigma_db: f64,
    pub mean_offset_db: f64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            d0_m: 40.0,
            gamma: 2.08,
            lpl_d0_db: 127.41,
            sigma_db: 0.0,
            mean_offset_db: 0.0,
        }
    }
}

/// Uplink vs downlink, as seen by the receiver doing the decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Uplink,
    Downlink,
}

/// One scheduled on-air interval with everything the collision model needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Transmission {
    pub source: u32,
    pub start_time_s: f64,
    pub airtime_s: f64,
    pub channel: Channel,
    pub sf: SpreadingFactor,
    pub tx_power: TxPower,
    /// Power at the receiver after total path loss.
    pub rx_power_dbm: f64,
    pub payload_bytes: u32,
    pub direction: Direction,
}

impl Transmission {
    pub fn end_time_s(&self) -> f64 {
        self.start_time_s + self.airtime_s
    }

    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.start_time_s < other.end_time_s() && other.start_time_s < self.end_time_s()
    }

    /// Same-SF, same-channel transmissions are the only mutual interferers;
    /// orthogonal SFs and disjoint channels decode independently.
    pub fn interferes_with(&self, other: &Transmission) -> bool {
        self.sf == other.sf && self.channel == other.channel && self.overlaps(other)
    }
}

/// Why a transmission was not decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossReason {
    None,
    Collision,
    UnderSensitivity,
    GatewayBusy,
}

/// Decode verdict for one transmission at the shared receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceptionOutcome {
    Received,
    Lost(LossReason),
}

impl ReceptionOutcome {
    pub fn is_received(self) -> bool {
        self == ReceptionOutcome::Received
    }

    pub fn loss_reason(self) -> LossReason {
        match self {
            ReceptionOutcome::Received => LossReason::None,
            ReceptionOutcome::Lost(reason) => reason,
        }
    }
}

/// Receiver-side constants of the radio model.
///
/// The sensitivity table, capture threshold, and noise figure are the usual
/// transceiver-datasheet figures; all are configurable because real
/// deployments differ on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhyConfig {
    /// Minimum decodable power in dBm, indexed SF7..SF12, at 125 kHz.
    pub sensitivity_dbm: [f64; 6],
    /// Power advantage the strongest colliding signal needs for capture.
    pub capture_threshold_db: f64,
    /// Receiver noise figure for the SNR noise floor.
    pub noise_figure_db: f64,
    /// Preamble length in symbols.
    pub preamble_symbols: u32,
}

impl Default for PhyConfig {
    fn default() -> Self {
        PhyConfig {
            sensitivity_dbm: [-123.0, -126.0, -129.0, -132.0, -134.5, -137.0],
            capture_threshold_db: 6.0,
            noise_figure_db: 6.0,
            preamble_symbols: 8,
        }
    }
}

impl PhyConfig {
    pub fn sensitivity(&self, sf: SpreadingFactor) -> f64 {
        self.sensitivity_dbm[sf.index()]
    }

    /// Thermal noise floor in dBm for the given bandwidth: -174 dBm/Hz plus
    /// bandwidth and the receiver noise figure.
    pub fn noise_floor_dbm(&self, bandwidth_hz: f64) -> f64 {
        -174.0 + 10.0 * bandwidth_hz.log10() + self.noise_figure_db
    }

    /// Config whose sensitivity table is the thermal noise floor at the
    /// given noise figure plus the per-SF demodulation SNR.
    ///
    /// At NF = 4 dB the SF12 sensitivity lands at -139.03 dBm, which under
    /// the default path loss model puts the 14 dBm SF12 range at 670 m, the
    /// standard cell radius; the whole disk is then reachable at the most
    /// robust setting.
    pub fn noise_limited(noise_figure_db: f64) -> PhyConfig {
        let mut config = PhyConfig {
            noise_figure_db,
            ..PhyConfig::default()
        };
        let floor = config.noise_floor_dbm(125_000.0);
        for (slot, required) in config.sensitivity_dbm.iter_mut().zip(REQUIRED_SNR_DB) {
            *slot = floor + required;
        }
        config
    }
}

/// Code rate of the LoRa forward error correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodeRate {
    Cr4_5,
    Cr4_6,
    Cr4_7,
    Cr4_8,
}

impl CodeRate {
    /// Denominator of the rate, i.e. the symbol multiplier in the airtime
    /// formula (5 for 4/5).
    pub fn denominator(self) -> u32 {
        match self {
            CodeRate::Cr4_5 => 5,
            CodeRate::Cr4_6 => 6,
            CodeRate::Cr4_7 => 7,
            CodeRate::Cr4_8 => 8,
        }
    }
}

/// Mean path loss in dB plus an externally drawn shadowing sample.
///
/// The shadowing sample must be drawn per transmission as Normal(0, sigma);
/// passing it in keeps this function pure and the caller in charge of RNG
/// stream discipline.
pub fn path_loss(distance_m: f64, link: &LinkModel, shadow_sample_db: f64) -> Result<f64, Error> {
    if distance_m < link.d0_m {
        return Err(Error::DistanceBelowReference {
            distance_m,
            d0_m: link.d0_m,
        });
    }
    Ok(link.lpl_d0_db
        + 10.0 * link.gamma * (distance_m / link.d0_m).log10()
        + shadow_sample_db
        + link.mean_offset_db)
}

/// Whether the low data rate optimisation is mandated: SF11/SF12 at 125 kHz.
pub fn low_data_rate_optimize(sf: SpreadingFactor, bandwidth_hz: f64) -> bool {
    sf.value() >= 11 && bandwidth_hz <= 125_000.0
}

/// Time on air in seconds for one LoRa frame (SX127x formula, CRC on).
///
/// `explicit_header` selects the usual uplink framing; `low_data_rate_opt`
/// halves the effective symbol rate at SF11/SF12.
pub fn airtime(
    sf: SpreadingFactor,
    bandwidth_hz: f64,
    code_rate: CodeRate,
    payload_bytes: u32,
    preamble_symbols: u32,
    explicit_header: bool,
    low_data_rate_opt: bool,
) -> f64 {
    let sf_v = f64::from(sf.value());
    let t_sym = 2f64.powi(i32::from(sf.value())) / bandwidth_hz;
    let ih = if explicit_header { 0.0 } else { 1.0 };
    let de = if low_data_rate_opt { 1.0 } else { 0.0 };
    let numerator = 8.0 * f64::from(payload_bytes) - 4.0 * sf_v + 28.0 + 16.0 - 20.0 * ih;
    let denominator = 4.0 * (sf_v - 2.0 * de);
    let n_payload =
        8.0 + ((numerator / denominator).ceil() * f64::from(code_rate.denominator())).max(0.0);
    let t_preamble = (f64::from(preamble_symbols) + 4.25) * t_sym;
    t_preamble + n_payload * t_sym
}

/// Power at the receiver: transmit power minus total path loss.
pub fn received_power(tx_power: TxPower, loss_db: f64) -> f64 {
    f64::from(tx_power.dbm()) - loss_db
}

/// SNR of a signal received at `rx_power_dbm` over a 125 kHz channel.
pub fn snr(rx_power_dbm: f64, config: &PhyConfig) -> f64 {
    rx_power_dbm - config.noise_floor_dbm(125_000.0)
}

/// Decide the fate of every transmission in a batch sharing one receiver.
///
/// Rules, applied per transmission:
/// - below the sensitivity threshold for its SF: lost to fading;
/// - different SF or different channel never interfere;
/// - among time-overlapping same-SF same-channel signals, the strongest is
///   decoded iff it beats the strongest interferer by at least the capture
///   threshold; everything else in the overlap is a collision.
///
/// Signals below sensitivity still count as interference: the receiver
/// cannot decode them but their energy is on the air.
pub fn resolve_receptions(transmissions: &[Transmission], config: &PhyConfig) -> Vec<ReceptionOutcome> {
    transmissions
        .iter()
        .enumerate()
        .map(|(i, tx)| {
            let interferers = transmissions
                .iter()
                .enumerate()
                .filter(|(j, other)| *j != i && tx.interferes_with(other))
                .map(|(_, other)| other);
            classify_one(tx, interferers, config)
        })
        .collect()
}

/// Classify a single transmission against the interferers that overlapped it.
///
/// This is the same rule `resolve_receptions` applies batch-wise; the
/// simulation engine calls it incrementally as each transmission ends.
pub fn classify_one<'a>(
    tx: &Transmission,
    interferers: impl Iterator<Item = &'a Transmission>,
    config: &PhyConfig,
) -> ReceptionOutcome {
    if tx.rx_power_dbm < config.sensitivity(tx.sf) {
        return ReceptionOutcome::Lost(LossReason::UnderSensitivity);
    }
    let strongest = interferers
        .map(|t| t.rx_power_dbm)
        .fold(f64::NEG_INFINITY, f64::max);
    if strongest == f64::NEG_INFINITY
        || tx.rx_power_dbm >= strongest + config.capture_threshold_db
    {
        ReceptionOutcome::Received
    } else {
        ReceptionOutcome::Lost(LossReason::Collision)
    }
}
