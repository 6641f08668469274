//! LoRaWAN Class A MAC behaviour: frames, receive windows, confirmed-traffic
//! retransmission, and the 1% duty-cycle bookkeeping that gates every
//! transmission by devices and the gateway.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::phy::{Channel, SpreadingFactor, TxPower, RX2_CHANNEL};

/// Delay from uplink end to the RX1 window (EU868 default).
pub const RECEIVE_DELAY1_S: f64 = 1.0;
/// Delay from uplink end to the RX2 window (EU868 default).
pub const RECEIVE_DELAY2_S: f64 = 2.0;
/// RX2 spreading factor (EU868 default).
pub const RX2_SF: SpreadingFactor = SpreadingFactor::MAX;

/// An uplink MAC frame. Retransmissions reuse the frame, fcnt included.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UplinkFrame {
    pub dev_id: u32,
    pub fcnt: u32,
    pub confirmed: bool,
    pub adr_enabled: bool,
    pub adr_ack_req: bool,
    pub payload_bytes: u32,
}

/// Raw LinkADRReq payload as it travels in a downlink. The device side
/// validates the values against the SF/TP domains before applying them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkAdrCmd {
    pub sf: u8,
    pub tp_dbm: i8,
}

impl LinkAdrCmd {
    pub fn new(sf: SpreadingFactor, tp: TxPower) -> Self {
        LinkAdrCmd {
            sf: sf.value(),
            tp_dbm: tp.dbm(),
        }
    }
}

/// A downlink answering one uplink: an ACK and/or a rate assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DownlinkFrame {
    pub dev_id: u32,
    pub ack: bool,
    pub link_adr_cmd: Option<LinkAdrCmd>,
}

/// Regulatory sub-bands this model transmits in.
///
/// The three g1 uplink channels share one duty-cycle budget; the RX2
/// frequency sits in g3 with its own budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubBand {
    G1,
    G3,
}

impl SubBand {
    pub fn of_channel(channel: Channel) -> SubBand {
        if (868.0e6..868.6e6).contains(&channel.center_hz) {
            SubBand::G1
        } else {
            SubBand::G3
        }
    }
}

/// Per-sub-band off-time accounting.
///
/// A transmission of airtime T ending at t blocks its sub-band until
/// t + T * (1/limit - 1); with the 1% limit that is 99 airtimes of silence.
#[derive(Debug, Clone)]
pub struct DutyCycleTracker {
    limit: f64,
    earliest_next_tx: [f64; 2],
}

impl DutyCycleTracker {
    pub fn new(limit: f64) -> Self {
        DutyCycleTracker {
            limit,
            earliest_next_tx: [0.0; 2],
        }
    }

    fn slot(&self, sub_band: SubBand) -> usize {
        match sub_band {
            SubBand::G1 => 0,
            SubBand::G3 => 1,
        }
    }

    /// Earliest instant a new transmission may start in `sub_band`.
    pub fn next_allowed_tx(&self, sub_band: SubBand, now: f64) -> f64 {
        now.max(self.earliest_next_tx[self.slot(sub_band)])
    }

    /// Charge a finished (or committed) transmission against the budget.
    pub fn record_tx(&mut self, sub_band: SubBand, end_time: f64, airtime_s: f64) {
        let off_time = airtime_s * (1.0 / self.limit - 1.0);
        let slot = self.slot(sub_band);
        self.earliest_next_tx[slot] = self.earliest_next_tx[slot].max(end_time + off_time);
    }
}

impl Default for DutyCycleTracker {
    fn default() -> Self {
        DutyCycleTracker::new(0.01)
    }
}

/// RX window opening times and radio parameters for a finished uplink.
///
/// RX1 mirrors the uplink channel and SF; RX2 is fixed at 869.525 MHz, SF12.
pub fn rx_window_times(
    uplink_end: f64,
    uplink_sf: SpreadingFactor,
    uplink_channel: Channel,
) -> (f64, (SpreadingFactor, Channel), f64, (SpreadingFactor, Channel)) {
    (
        uplink_end + RECEIVE_DELAY1_S,
        (uplink_sf, uplink_channel),
        uplink_end + RECEIVE_DELAY2_S,
        (RX2_SF, RX2_CHANNEL),
    )
}

/// Retransmission policy for confirmed uplinks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetxPolicy {
    pub max_attempts: u32,
    /// Seconds after uplink end at which the ED declares the ACK missing.
    /// Must clear RX2 plus the longest downlink airtime.
    pub ack_timeout_s: f64,
    pub backoff_min_s: f64,
    pub backoff_max_s: f64,
}

impl Default for RetxPolicy {
    fn default() -> Self {
        RetxPolicy {
            max_attempts: 8,
            ack_timeout_s: 4.0,
            backoff_min_s: 1.0,
            backoff_max_s: 3.0,
        }
    }
}

/// What a confirmed sender does when the ACK window closes empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RetxAction {
    /// Retransmit the same frame no earlier than this instant (duty cycle
    /// clearance is applied by the caller on top).
    RetransmitAt(f64),
    GiveUp,
}

/// Resolve an ACK timeout for attempt number `attempt` (1-based).
///
/// Panics if the frame is unconfirmed; unconfirmed frames have no ACK to
/// wait for.
pub fn handle_ack_timeout<R: Rng>(
    frame: &UplinkFrame,
    policy: &RetxPolicy,
    attempt: u32,
    now: f64,
    rng: &mut R,
) -> RetxAction {
    assert!(frame.confirmed, "ack timeout on unconfirmed frame");
    if attempt < policy.max_attempts {
        let backoff = rng.gen_range(policy.backoff_min_s..=policy.backoff_max_s);
        RetxAction::RetransmitAt(now + backoff)
    } else {
        RetxAction::GiveUp
    }
}

/// The receive window the gateway picked for a downlink, or the reason the
/// downlink never went on air.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DownlinkSlot {
    Rx1 { start: f64, airtime_s: f64 },
    Rx2 { start: f64, airtime_s: f64 },
    Dropped,
}

/// Choose a receive window for a downlink at the half-duplex gateway.
///
/// RX1 is preferred; each window needs its sub-band clear of off-time and
/// the gateway idle for the whole transmission. When neither fits, the
/// downlink is dropped and the device's ADR counter keeps rising.
pub fn gateway_schedule_downlink(
    rx1_start: f64,
    rx1_airtime_s: f64,
    rx1_sub_band: SubBand,
    rx2_start: f64,
    rx2_airtime_s: f64,
    tracker: &DutyCycleTracker,
    gateway_busy: impl Fn(f64, f64) -> bool,
) -> DownlinkSlot {
    if tracker.next_allowed_tx(rx1_sub_band, rx1_start) <= rx1_start
        && !gateway_busy(rx1_start, rx1_start + rx1_airtime_s)
    {
        return DownlinkSlot::Rx1 {
            start: rx1_start,
            airtime_s: rx1_airtime_s,
        };
    }
    if tracker.next_allowed_tx(SubBand::G3, rx2_start) <= rx2_start
        && !gateway_busy(rx2_start, rx2_start + rx2_airtime_s)
    {
        return DownlinkSlot::Rx2 {
            start: rx2_start,
            airtime_s: rx2_airtime_s,
        };
    }
    DownlinkSlot::Dropped
}
