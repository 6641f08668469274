//! Run traces: the timestamped record of everything a simulation did.
//!
//! Records are compact by design; a 12-day run with thousands of devices
//! produces millions of transmission attempts and the whole trace is held
//! in memory while metrics are computed.

use crate::phy::{Channel, G1_CHANNELS, RX2_CHANNEL};

pub type DeviceId = u32;

/// Channel index used in records: 0..=2 are the g1 uplink channels, 3 is
/// the RX2 downlink frequency.
pub const RX2_CHANNEL_INDEX: u8 = 3;

pub fn channel_by_index(index: u8) -> Channel {
    if index == RX2_CHANNEL_INDEX {
        RX2_CHANNEL
    } else {
        G1_CHANNELS[index as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxKind {
    Uplink,
    Downlink,
}

/// Final fate of one recorded transmission.
///
/// `Dropped` marks a downlink that never went on air (both windows blocked
/// at the gateway); `DeviceBusy` a downlink that arrived while its target
/// was itself transmitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Received,
    Collision,
    UnderSensitivity,
    GatewayBusy,
    Dropped,
    DeviceBusy,
}

impl RecordOutcome {
    pub fn is_received(self) -> bool {
        self == RecordOutcome::Received
    }
}

/// One transmission attempt, uplink or downlink.
///
/// Downlink records reuse `fcnt` for the frame counter of the uplink they
/// answer. Records are appended when the attempt's outcome is known, so the
/// trace is ordered by `end_s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransmissionRecord {
    pub start_s: f64,
    pub end_s: f64,
    pub device: DeviceId,
    pub fcnt: u32,
    /// SNR at the receiver, informational for lost packets too.
    pub snr_db: f32,
    pub sf: u8,
    pub tp_dbm: i8,
    pub channel: u8,
    /// 1-based attempt number within the frame.
    pub attempt: u8,
    pub kind: TxKind,
    pub outcome: RecordOutcome,
    pub confirmed: bool,
    pub adr_ack_req: bool,
    /// Downlinks only: a LinkADRReq was on board.
    pub carried_cmd: bool,
}

/// ADR state transitions worth keeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdrEventKind {
    /// Device raised TP after prolonged silence.
    EdStepUpTp { tp_dbm: i8 },
    /// Device raised SF after prolonged silence with TP maxed.
    EdStepUpSf { sf: u8 },
    /// Network computed a new assignment and queued a LinkADRReq.
    CmdIssued { sf: u8, tp_dbm: i8 },
    /// Device applied a received LinkADRReq.
    CmdApplied { sf: u8, tp_dbm: i8 },
    /// Device rejected an out-of-domain LinkADRReq.
    CmdRejected,
    /// Confirmed frame abandoned after the last retransmission.
    GiveUp { fcnt: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdrEventRecord {
    pub time_s: f64,
    pub device: DeviceId,
    pub kind: AdrEventKind,
}

/// A scenario injection as it actually fired.
#[derive(Debug, Clone, PartialEq)]
pub enum InjectionKind {
    LinkChange { devices: Vec<DeviceId>, delta_db: f64 },
    AddDevices { first_id: DeviceId, count: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InjectionRecord {
    pub time_s: f64,
    pub kind: InjectionKind,
}

/// Everything one `sim::run` produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub transmissions: Vec<TransmissionRecord>,
    pub adr_events: Vec<AdrEventRecord>,
    pub injections: Vec<InjectionRecord>,
    pub duration_s: f64,
    /// Window size the network needed per device, copied from the scenario
    /// so metrics can apply the convergence definition.
    pub adr_n: u32,
    pub n_devices_initial: u32,
    pub n_devices_final: u32,
}

impl RunTrace {
    /// (device, anchor) pairs whose convergence this trace can measure:
    /// every device touched by a link change and every device added at
    /// runtime, each anchored at the injection instant.
    pub fn anchors(&self) -> Vec<(DeviceId, f64)> {
        let mut out = Vec::new();
        for inj in &self.injections {
            match &inj.kind {
                InjectionKind::LinkChange { devices, .. } => {
                    out.extend(devices.iter().map(|&d| (d, inj.time_s)));
                }
                InjectionKind::AddDevices { first_id, count } => {
                    out.extend((*first_id..first_id + count).map(|d| (d, inj.time_s)));
                }
            }
        }
        out
    }
}
