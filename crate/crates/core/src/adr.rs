//! Both halves of the LoRaWAN v1.1 adaptive data rate mechanism.
//!
//! The device side is a counter machine: after `adr_ack_limit` uplinks with
//! no downlink it starts requesting one (ADRACKReq), and every further
//! `adr_ack_delay` unanswered uplinks it makes the link more robust, raising
//! TP to the maximum before touching SF. Any downlink resets the counter.
//!
//! The network side watches the SNR of the last N receptions per device and,
//! when the best of them clears the demodulation floor by more than the
//! installation margin, assigns a faster SF and/or lower TP via LinkADRReq.

use std::collections::VecDeque;

use crate::mac::DownlinkFrame;
use crate::phy::{SpreadingFactor, TxPower, REQUIRED_SNR_DB};

/// Required SNR for the given spreading factor.
pub fn required_snr(sf: SpreadingFactor) -> f64 {
    REQUIRED_SNR_DB[(sf.value() - 7) as usize]
}

/// dB of link budget attributed to one adaptation step (one SF step or one
/// TP level; the TP grid is spaced 3 dB).
const STEP_DB: f64 = 3.0;

/// Device-side ADR state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdAdrState {
    pub sf: SpreadingFactor,
    pub tp: TxPower,
    pub adr_ack_cnt: u32,
    pub adr_ack_limit: u32,
    pub adr_ack_delay: u32,
}

impl EdAdrState {
    pub fn new(sf: SpreadingFactor, tp: TxPower, adr_ack_limit: u32, adr_ack_delay: u32) -> Self {
        EdAdrState {
            sf,
            tp,
            adr_ack_cnt: 0,
            adr_ack_limit,
            adr_ack_delay,
        }
    }
}

/// What `ed_before_uplink` did to the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdrStepAction {
    None,
    SetAdrAckReq,
    StepUpTp,
    StepUpSf,
}

/// Advance the device counter machine ahead of one new uplink frame.
///
/// Returns the ADRACKReq flag for the frame and the robustness step taken,
/// if any. Steps fire when the counter sits exactly at
/// `adr_ack_limit + k * adr_ack_delay` for k >= 1; TP rises first, then SF,
/// and at (SF12, 14 dBm) the state is already as robust as it gets.
pub fn ed_before_uplink(state: &mut EdAdrState) -> (bool, AdrStepAction) {
    state.adr_ack_cnt += 1;
    let adr_ack_req = state.adr_ack_cnt >= state.adr_ack_limit;
    let past_limit = state.adr_ack_cnt >= state.adr_ack_limit + state.adr_ack_delay;
    let on_step = past_limit
        && (state.adr_ack_cnt - state.adr_ack_limit).is_multiple_of(state.adr_ack_delay);
    let action = if on_step {
        if let Some(tp) = state.tp.step_up() {
            state.tp = tp;
            AdrStepAction::StepUpTp
        } else if let Some(sf) = state.sf.step_up() {
            state.sf = sf;
            AdrStepAction::StepUpSf
        } else {
            AdrStepAction::None
        }
    } else if adr_ack_req && state.adr_ack_cnt == state.adr_ack_limit {
        AdrStepAction::SetAdrAckReq
    } else {
        AdrStepAction::None
    };
    (adr_ack_req, action)
}

/// How the device handled a LinkADRReq, if the downlink carried one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmdOutcome {
    NoCommand,
    Applied,
    Rejected,
}

/// Process a downlink at the device: reset the counter, apply a carried
/// LinkADRReq when its raw values are in domain, reject it otherwise.
/// Rejection does not undo the counter reset; the downlink itself proved
/// connectivity.
pub fn ed_on_downlink(state: &mut EdAdrState, frame: &DownlinkFrame) -> CmdOutcome {
    state.adr_ack_cnt = 0;
    match frame.link_adr_cmd {
        None => CmdOutcome::NoCommand,
        Some(cmd) => match (SpreadingFactor::new(cmd.sf), TxPower::new(cmd.tp_dbm)) {
            (Ok(sf), Ok(tp)) => {
                state.sf = sf;
                state.tp = tp;
                CmdOutcome::Applied
            }
            _ => CmdOutcome::Rejected,
        },
    }
}

/// Network-side ADR state for one device: the SNR window of the last N
/// received uplinks.
#[derive(Debug, Clone, Default)]
pub struct DeviceWindow {
    snr_db: VecDeque<f64>,
}

/// Network-side ADR state across devices.
///
/// Windows are indexed by dense device id. `margin_db` is the installation
/// margin preserved above the demodulation floor when assigning new values.
#[derive(Debug, Clone)]
pub struct NetAdrState {
    windows: Vec<DeviceWindow>,
    pub n_required: usize,
    pub margin_db: f64,
}

impl NetAdrState {
    pub fn new(n_devices: usize, n_required: usize, margin_db: f64) -> Self {
        NetAdrState {
            windows: vec![DeviceWindow::default(); n_devices],
            n_required,
            margin_db,
        }
    }

    /// Make room for devices added while the simulation runs.
    pub fn grow_to(&mut self, n_devices: usize) {
        if n_devices > self.windows.len() {
            self.windows.resize(n_devices, DeviceWindow::default());
        }
    }

    pub fn window_len(&self, dev: u32) -> usize {
        self.windows[dev as usize].snr_db.len()
    }

    pub fn window(&self, dev: u32) -> impl Iterator<Item = f64> + '_ {
        self.windows[dev as usize].snr_db.iter().copied()
    }
}

/// Record the SNR of a received uplink, evicting the oldest sample beyond N.
pub fn net_record(state: &mut NetAdrState, dev: u32, snr_db: f64) {
    let window = &mut state.windows[dev as usize].snr_db;
    window.push_back(snr_db);
    while window.len() > state.n_required {
        window.pop_front();
    }
}

/// Compute a new (SF, TP) assignment for a device, if the window is full and
/// the margin calls for a change.
///
/// The link budget surplus is the window maximum over the requirement for
/// the device's current SF, less the installation margin; each 3 dB of it
/// funds one step, spent on SF reduction first, then TP reduction. A deficit
/// raises TP only; this operation never raises SF. Emitting a command clears
/// the window so the next decision uses fresh samples.
pub fn net_compute(
    state: &mut NetAdrState,
    dev: u32,
    current_sf: SpreadingFactor,
    current_tp: TxPower,
) -> Option<(SpreadingFactor, TxPower)> {
    let window = &state.windows[dev as usize].snr_db;
    if window.len() < state.n_required {
        return None;
    }
    let snr_max = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let margin = snr_max - required_snr(current_sf) - state.margin_db;
    let mut n_step = (margin / STEP_DB).floor() as i64;

    let mut sf = current_sf;
    let mut tp = current_tp;
    while n_step > 0 {
        if let Some(next) = sf.step_down() {
            sf = next;
            n_step -= 1;
        } else {
            break;
        }
    }
    while n_step > 0 {
        if let Some(next) = tp.step_down() {
            tp = next;
            n_step -= 1;
        } else {
            break;
        }
    }
    while n_step < 0 {
        if let Some(next) = tp.step_up() {
            tp = next;
            n_step += 1;
        } else {
            break;
        }
    }

    if sf == current_sf && tp == current_tp {
        None
    } else {
        state.windows[dev as usize].snr_db.clear();
        Some((sf, tp))
    }
}
