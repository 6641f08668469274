//! The event loop behind `sim::run`.
//!
//! Strictly single-threaded and deterministic: events are processed in
//! (time, insertion sequence) order, and all randomness comes from
//! per-device ChaCha streams keyed by (scenario seed, device id), so devices
//! added mid-run never perturb the draws of existing ones.
//!
//! Per-device draw order: position (two draws, skipped for pinned
//! distances), then per frame: confirmed flag, and per attempt: channel,
//! shadowing; downlink delivery consumes one shadowing draw from the target
//! device; retransmission backoff one draw.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::adr::{
    ed_before_uplink, ed_on_downlink, net_compute, net_record, AdrStepAction, CmdOutcome,
    EdAdrState, NetAdrState,
};
use crate::error::Error;
use crate::mac::{
    gateway_schedule_downlink, handle_ack_timeout, rx_window_times, DownlinkFrame, DownlinkSlot,
    DutyCycleTracker, LinkAdrCmd, RetxAction, SubBand, UplinkFrame,
};
use crate::phy::{
    airtime, classify_one, low_data_rate_optimize, path_loss, received_power, snr, CodeRate,
    Direction, LinkModel, LossReason, ReceptionOutcome, SpreadingFactor, Transmission, TxPower,
    G1_CHANNELS,
};

use super::trace::{
    AdrEventKind, AdrEventRecord, DeviceId, InjectionKind, InjectionRecord, RecordOutcome,
    RunTrace, TransmissionRecord, TxKind, RX2_CHANNEL_INDEX,
};
use super::{next_uplink_time, sample_disk_point, Scenario};

/// The gateway transmits downlinks at the EU868 cap.
const GATEWAY_TX_POWER: TxPower = TxPower::MAX;
/// MAC overhead of an empty downlink frame.
const DOWNLINK_BASE_BYTES: u32 = 12;
/// Extra bytes when a LinkADRReq rides in FOpts.
const LINK_ADR_CMD_BYTES: u32 = 5;

#[derive(Debug, Clone)]
struct DownlinkInfo {
    device: DeviceId,
    answered_fcnt: u32,
    sf: SpreadingFactor,
    channel_idx: u8,
    start_s: f64,
    airtime_s: f64,
    ack: bool,
    cmd: Option<LinkAdrCmd>,
}

#[derive(Debug, Clone)]
enum EventKind {
    TxAttempt { device: DeviceId },
    UplinkEnd { device: DeviceId },
    DownlinkEnd(DownlinkInfo),
    AckTimeout { device: DeviceId, generation: u64 },
    Injection { index: usize },
    WarmupDeadline,
}

struct EventEntry {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for EventEntry {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for EventEntry {}

impl PartialOrd for EventEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so the BinaryHeap pops the earliest (time, seq) first.
impl Ord for EventEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .partial_cmp(&self.time)
            .expect("event times are never NaN")
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct ActiveFrame {
    fcnt: u32,
    confirmed: bool,
    adr_ack_req: bool,
    attempt: u32,
}

struct Device {
    distance_m: f64,
    mean_offset_db: f64,
    adr: EdAdrState,
    rng: ChaCha8Rng,
    duty: DutyCycleTracker,
    next_fcnt: u32,
    frame: Option<ActiveFrame>,
    /// Start of the current frame's first attempt; the generation clock.
    last_frame_start: f64,
    /// On-air interval of the latest attempt, for half-duplex checks.
    tx_start: f64,
    tx_end: f64,
    timeout_generation: u64,
}

struct InflightTx {
    tx: Transmission,
    resolved: bool,
}

struct Gateway {
    duty: DutyCycleTracker,
    /// Committed downlink on-air intervals, pruned as time advances.
    tx_intervals: Vec<(f64, f64)>,
    /// Uplinks on the air or recently ended, kept while they can still
    /// interfere with an unresolved one.
    inflight: Vec<InflightTx>,
}

pub(super) struct Engine<'a> {
    scenario: &'a Scenario,
    now: f64,
    seq: u64,
    queue: BinaryHeap<EventEntry>,
    /// Airtime per SF (index SF-7) for the fixed uplink payload, and for
    /// downlinks with and without a LinkADRReq on board.
    uplink_airtime_s: [f64; 6],
    downlink_airtime_s: [f64; 6],
    downlink_cmd_airtime_s: [f64; 6],
    devices: Vec<Device>,
    gateway: Gateway,
    net: NetAdrState,
    /// Pending LinkADRReq per device, surviving dropped downlinks.
    pending_cmd: Vec<Option<LinkAdrCmd>>,
    /// Warm-up bookkeeping over the initial population.
    evaluated: Vec<bool>,
    evaluated_count: u32,
    warmup_injections: Vec<usize>,
    warmup_fired: bool,
    trace: RunTrace,
}

impl<'a> Engine<'a> {
    pub(super) fn new(scenario: &'a Scenario) -> Result<Self, Error> {
        let initial_sf = scenario.initial_sf()?;
        let initial_tp = scenario.initial_tp()?;
        let n = scenario.n_devices;

        let table = |payload: u32| {
            let mut t = [0.0; 6];
            for (i, slot) in t.iter_mut().enumerate() {
                let sf = SpreadingFactor::new(7 + i as u8).expect("sf in range");
                *slot = airtime(
                    sf,
                    125_000.0,
                    CodeRate::Cr4_5,
                    payload,
                    scenario.phy.preamble_symbols,
                    true,
                    low_data_rate_optimize(sf, 125_000.0),
                );
            }
            t
        };

        let mut engine = Engine {
            scenario,
            now: 0.0,
            seq: 0,
            queue: BinaryHeap::new(),
            uplink_airtime_s: table(scenario.payload_bytes),
            downlink_airtime_s: table(DOWNLINK_BASE_BYTES),
            downlink_cmd_airtime_s: table(DOWNLINK_BASE_BYTES + LINK_ADR_CMD_BYTES),
            devices: Vec::with_capacity(n as usize),
            gateway: Gateway {
                duty: DutyCycleTracker::default(),
                tx_intervals: Vec::new(),
                inflight: Vec::new(),
            },
            net: NetAdrState::new(n as usize, scenario.adr_n as usize, scenario.margin_db),
            pending_cmd: vec![None; n as usize],
            evaluated: vec![false; n as usize],
            evaluated_count: 0,
            warmup_injections: Vec::new(),
            warmup_fired: false,
            trace: RunTrace {
                duration_s: scenario.sim_duration_s,
                adr_n: scenario.adr_n,
                n_devices_initial: n,
                ..RunTrace::default()
            },
        };

        for id in 0..n {
            let fixed = scenario
                .fixed_distances_m
                .as_ref()
                .map(|d| d[id as usize]);
            engine.spawn_device(id, fixed, initial_sf, initial_tp, 0.0);
        }

        for (index, inj) in scenario.injections.iter().enumerate() {
            if let Some(t) = inj.at_s {
                engine.push(t, EventKind::Injection { index });
            } else {
                engine.warmup_injections.push(index);
            }
        }
        if !engine.warmup_injections.is_empty() {
            let deadline = scenario.warmup_max_s.min(scenario.sim_duration_s);
            engine.push(deadline, EventKind::WarmupDeadline);
        }

        Ok(engine)
    }

    fn spawn_device(
        &mut self,
        id: DeviceId,
        fixed_distance_m: Option<f64>,
        sf: SpreadingFactor,
        tp: TxPower,
        start_time: f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.scenario.seed);
        rng.set_stream(u64::from(id));
        let distance_m = match fixed_distance_m {
            Some(d) => d,
            None => {
                let (x, y) = sample_disk_point(self.scenario.area_radius_m, &mut rng);
                // The path loss model is undefined inside the reference
                // distance; devices that land there sit at its edge.
                (x * x + y * y).sqrt().max(self.scenario.d0_m)
            }
        };
        let first_tx = next_uplink_time(
            &mut rng,
            self.scenario.mean_interarrival_s,
            start_time,
            start_time,
        );
        self.devices.push(Device {
            distance_m,
            mean_offset_db: 0.0,
            adr: EdAdrState::new(sf, tp, self.scenario.adr_ack_limit, self.scenario.adr_ack_delay),
            rng,
            duty: DutyCycleTracker::default(),
            next_fcnt: 0,
            frame: None,
            last_frame_start: start_time,
            tx_start: -1.0,
            tx_end: -1.0,
            timeout_generation: 0,
        });
        if first_tx <= self.scenario.sim_duration_s {
            self.push(first_tx, EventKind::TxAttempt { device: id });
        }
    }

    fn push(&mut self, time: f64, kind: EventKind) {
        self.seq += 1;
        self.queue.push(EventEntry { time, seq: self.seq, kind });
    }

    pub(super) fn run(mut self) -> Result<RunTrace, Error> {
        while let Some(entry) = self.queue.pop() {
            self.now = entry.time;
            match entry.kind {
                EventKind::TxAttempt { device } => self.on_tx_attempt(device),
                EventKind::UplinkEnd { device } => self.on_uplink_end(device),
                EventKind::DownlinkEnd(info) => self.on_downlink_end(info),
                EventKind::AckTimeout { device, generation } => {
                    self.on_ack_timeout(device, generation)
                }
                EventKind::Injection { index } => self.on_injection(index)?,
                EventKind::WarmupDeadline => self.on_warmup_deadline(),
            }
        }
        self.trace.n_devices_final = self.devices.len() as u32;
        Ok(self.trace)
    }

    fn link_model(&self, device: &Device) -> LinkModel {
        LinkModel {
            d0_m: self.scenario.d0_m,
            gamma: self.scenario.gamma,
            lpl_d0_db: self.scenario.lpl_d0_db,
            sigma_db: self.scenario.sigma_db,
            mean_offset_db: device.mean_offset_db,
        }
    }

    fn draw_shadow(sigma_db: f64, rng: &mut ChaCha8Rng) -> f64 {
        if sigma_db > 0.0 {
            Normal::new(0.0, sigma_db).expect("valid sigma").sample(rng)
        } else {
            0.0
        }
    }

    fn downlink_airtime(&self, sf: SpreadingFactor, carries_cmd: bool) -> f64 {
        let idx = (sf.value() - 7) as usize;
        if carries_cmd {
            self.downlink_cmd_airtime_s[idx]
        } else {
            self.downlink_airtime_s[idx]
        }
    }

    fn on_tx_attempt(&mut self, id: DeviceId) {
        let sigma = self.scenario.sigma_db;
        let confirmed_fraction = self.scenario.confirmed_fraction;
        let airtime_table = self.uplink_airtime_s;
        let link = self.link_model(&self.devices[id as usize]);
        let now = self.now;

        let dev = &mut self.devices[id as usize];
        let mut step_event = None;
        if dev.frame.is_none() {
            let (adr_ack_req, action) = ed_before_uplink(&mut dev.adr);
            step_event = match action {
                AdrStepAction::StepUpTp => Some(AdrEventKind::EdStepUpTp {
                    tp_dbm: dev.adr.tp.dbm(),
                }),
                AdrStepAction::StepUpSf => Some(AdrEventKind::EdStepUpSf {
                    sf: dev.adr.sf.value(),
                }),
                AdrStepAction::None | AdrStepAction::SetAdrAckReq => None,
            };
            let confirmed = dev.rng.gen::<f64>() < confirmed_fraction;
            dev.frame = Some(ActiveFrame {
                fcnt: dev.next_fcnt,
                confirmed,
                adr_ack_req,
                attempt: 1,
            });
            dev.next_fcnt += 1;
            dev.last_frame_start = now;
        }

        let channel_idx = dev.rng.gen_range(0..3u8);
        let shadow = Self::draw_shadow(sigma, &mut dev.rng);
        let loss = path_loss(dev.distance_m, &link, shadow).expect("distance clamped to d0");
        let rx_power = received_power(dev.adr.tp, loss);
        let sf = dev.adr.sf;
        let tp = dev.adr.tp;
        let airtime_s = airtime_table[(sf.value() - 7) as usize];
        let end = now + airtime_s;
        dev.duty.record_tx(SubBand::G1, end, airtime_s);
        dev.tx_start = now;
        dev.tx_end = end;

        if let Some(kind) = step_event {
            self.trace.adr_events.push(AdrEventRecord {
                time_s: now,
                device: id,
                kind,
            });
        }

        self.gateway.inflight.push(InflightTx {
            tx: Transmission {
                source: id,
                start_time_s: now,
                airtime_s,
                channel: G1_CHANNELS[channel_idx as usize],
                sf,
                tx_power: tp,
                rx_power_dbm: rx_power,
                payload_bytes: self.scenario.payload_bytes,
                direction: Direction::Uplink,
            },
            resolved: false,
        });
        self.push(end, EventKind::UplinkEnd { device: id });
    }

    fn on_uplink_end(&mut self, id: DeviceId) {
        let idx = self
            .gateway
            .inflight
            .iter()
            .position(|e| !e.resolved && e.tx.source == id)
            .expect("uplink end without inflight entry");
        let tx = self.gateway.inflight[idx].tx.clone();
        let frame = self.devices[id as usize].frame.expect("uplink end without frame");

        let gw_busy = self
            .gateway
            .tx_intervals
            .iter()
            .any(|&(s, e)| s < tx.end_time_s() && tx.start_time_s < e);
        let outcome = if gw_busy {
            ReceptionOutcome::Lost(LossReason::GatewayBusy)
        } else {
            let interferers = self
                .gateway
                .inflight
                .iter()
                .enumerate()
                .filter(|(j, e)| *j != idx && tx.interferes_with(&e.tx))
                .map(|(_, e)| &e.tx);
            classify_one(&tx, interferers, &self.scenario.phy)
        };
        self.gateway.inflight[idx].resolved = true;
        self.prune_gateway_state();

        let snr_db = snr(tx.rx_power_dbm, &self.scenario.phy);
        let channel_idx = G1_CHANNELS
            .iter()
            .position(|c| *c == tx.channel)
            .expect("uplink on g1") as u8;
        let record_outcome = match outcome {
            ReceptionOutcome::Received => RecordOutcome::Received,
            ReceptionOutcome::Lost(LossReason::Collision) => RecordOutcome::Collision,
            ReceptionOutcome::Lost(LossReason::UnderSensitivity) => RecordOutcome::UnderSensitivity,
            ReceptionOutcome::Lost(LossReason::GatewayBusy) => RecordOutcome::GatewayBusy,
            ReceptionOutcome::Lost(LossReason::None) => unreachable!("lost without reason"),
        };
        self.trace.transmissions.push(TransmissionRecord {
            start_s: tx.start_time_s,
            end_s: tx.end_time_s(),
            device: id,
            fcnt: frame.fcnt,
            snr_db: snr_db as f32,
            sf: tx.sf.value(),
            tp_dbm: tx.tx_power.dbm(),
            channel: channel_idx,
            attempt: frame.attempt.min(255) as u8,
            kind: TxKind::Uplink,
            outcome: record_outcome,
            confirmed: frame.confirmed,
            adr_ack_req: frame.adr_ack_req,
            carried_cmd: false,
        });

        if outcome.is_received() {
            self.on_uplink_received(id, &tx, frame, snr_db, channel_idx);
        }

        // The sender's life continues either way: confirmed frames wait for
        // an ACK, unconfirmed ones are done.
        if frame.confirmed {
            let timeout = self.now + self.scenario.retx.ack_timeout_s;
            self.devices[id as usize].timeout_generation += 1;
            let generation = self.devices[id as usize].timeout_generation;
            self.push(timeout, EventKind::AckTimeout { device: id, generation });
        } else {
            self.devices[id as usize].frame = None;
            self.schedule_next_frame(id);
        }
    }

    fn on_uplink_received(
        &mut self,
        id: DeviceId,
        tx: &Transmission,
        frame: ActiveFrame,
        snr_db: f64,
        channel_idx: u8,
    ) {
        net_record(&mut self.net, id, snr_db);
        if self.net.window_len(id) >= self.scenario.adr_n as usize {
            self.mark_evaluated(id);
            if let Some((new_sf, new_tp)) = net_compute(&mut self.net, id, tx.sf, tx.tx_power) {
                self.pending_cmd[id as usize] = Some(LinkAdrCmd::new(new_sf, new_tp));
                self.trace.adr_events.push(AdrEventRecord {
                    time_s: self.now,
                    device: id,
                    kind: AdrEventKind::CmdIssued {
                        sf: new_sf.value(),
                        tp_dbm: new_tp.dbm(),
                    },
                });
            }
        }

        let has_cmd = self.pending_cmd[id as usize].is_some();
        let wants_downlink = frame.confirmed || frame.adr_ack_req || has_cmd;
        if !wants_downlink {
            return;
        }

        let (rx1_t, (rx1_sf, rx1_ch), rx2_t, (rx2_sf, _)) =
            rx_window_times(self.now, tx.sf, tx.channel);
        let rx1_airtime = self.downlink_airtime(rx1_sf, has_cmd);
        let rx2_airtime = self.downlink_airtime(rx2_sf, has_cmd);
        let intervals = &self.gateway.tx_intervals;
        let slot = gateway_schedule_downlink(
            rx1_t,
            rx1_airtime,
            SubBand::of_channel(rx1_ch),
            rx2_t,
            rx2_airtime,
            &self.gateway.duty,
            |s, e| intervals.iter().any(|&(s2, e2)| s2 < e && s < e2),
        );
        let (start, airtime_s, sf, dl_channel_idx, band) = match slot {
            DownlinkSlot::Rx1 { start, airtime_s } => {
                (start, airtime_s, rx1_sf, channel_idx, SubBand::of_channel(rx1_ch))
            }
            DownlinkSlot::Rx2 { start, airtime_s } => {
                (start, airtime_s, rx2_sf, RX2_CHANNEL_INDEX, SubBand::G3)
            }
            DownlinkSlot::Dropped => {
                // Both windows blocked: the answer never airs. A pending
                // LinkADRReq stays queued for the next opportunity.
                self.trace.transmissions.push(TransmissionRecord {
                    start_s: rx2_t,
                    end_s: rx2_t,
                    device: id,
                    fcnt: frame.fcnt,
                    snr_db: 0.0,
                    sf: rx2_sf.value(),
                    tp_dbm: GATEWAY_TX_POWER.dbm(),
                    channel: RX2_CHANNEL_INDEX,
                    attempt: 1,
                    kind: TxKind::Downlink,
                    outcome: RecordOutcome::Dropped,
                    confirmed: false,
                    adr_ack_req: false,
                    carried_cmd: false,
                });
                return;
            }
        };

        let end = start + airtime_s;
        self.gateway.duty.record_tx(band, end, airtime_s);
        self.gateway.tx_intervals.push((start, end));
        let cmd = self.pending_cmd[id as usize].take();
        self.push(
            end,
            EventKind::DownlinkEnd(DownlinkInfo {
                device: id,
                answered_fcnt: frame.fcnt,
                sf,
                channel_idx: dl_channel_idx,
                start_s: start,
                airtime_s,
                ack: frame.confirmed,
                cmd,
            }),
        );
    }

    fn on_downlink_end(&mut self, info: DownlinkInfo) {
        let sigma = self.scenario.sigma_db;
        let link = self.link_model(&self.devices[info.device as usize]);
        let dev = &mut self.devices[info.device as usize];
        let end = info.start_s + info.airtime_s;

        // Class A target must not be mid-uplink; it cannot listen then.
        let device_busy = dev.tx_start < end && info.start_s < dev.tx_end;
        let (outcome, snr_db) = if device_busy {
            (RecordOutcome::DeviceBusy, 0.0)
        } else {
            let shadow = Self::draw_shadow(sigma, &mut dev.rng);
            let loss = path_loss(dev.distance_m, &link, shadow).expect("distance clamped to d0");
            let rx_power = received_power(GATEWAY_TX_POWER, loss);
            if rx_power < self.scenario.phy.sensitivity(info.sf) {
                (RecordOutcome::UnderSensitivity, snr(rx_power, &self.scenario.phy))
            } else {
                (RecordOutcome::Received, snr(rx_power, &self.scenario.phy))
            }
        };

        self.trace.transmissions.push(TransmissionRecord {
            start_s: info.start_s,
            end_s: end,
            device: info.device,
            fcnt: info.answered_fcnt,
            snr_db: snr_db as f32,
            sf: info.sf.value(),
            tp_dbm: GATEWAY_TX_POWER.dbm(),
            channel: info.channel_idx,
            attempt: 1,
            kind: TxKind::Downlink,
            outcome,
            confirmed: false,
            adr_ack_req: false,
            carried_cmd: info.cmd.is_some(),
        });

        if outcome != RecordOutcome::Received {
            return;
        }

        let frame = DownlinkFrame {
            dev_id: info.device,
            ack: info.ack,
            link_adr_cmd: info.cmd,
        };
        let dev = &mut self.devices[info.device as usize];
        let cmd_outcome = ed_on_downlink(&mut dev.adr, &frame);
        match cmd_outcome {
            CmdOutcome::Applied => {
                let kind = AdrEventKind::CmdApplied {
                    sf: dev.adr.sf.value(),
                    tp_dbm: dev.adr.tp.dbm(),
                };
                self.trace.adr_events.push(AdrEventRecord {
                    time_s: self.now,
                    device: info.device,
                    kind,
                });
            }
            CmdOutcome::Rejected => {
                self.trace.adr_events.push(AdrEventRecord {
                    time_s: self.now,
                    device: info.device,
                    kind: AdrEventKind::CmdRejected,
                });
            }
            CmdOutcome::NoCommand => {}
        }

        if info.ack {
            let dev = &mut self.devices[info.device as usize];
            if let Some(f) = dev.frame {
                if f.confirmed && f.fcnt == info.answered_fcnt {
                    dev.timeout_generation += 1; // cancels the pending timeout
                    dev.frame = None;
                    self.schedule_next_frame(info.device);
                }
            }
        }
    }

    fn on_ack_timeout(&mut self, id: DeviceId, generation: u64) {
        let policy = self.scenario.retx;
        let duration = self.scenario.sim_duration_s;
        let now = self.now;
        let dev = &mut self.devices[id as usize];
        if dev.timeout_generation != generation {
            return; // an ACK landed first
        }
        let Some(frame) = dev.frame else { return };
        let uplink = UplinkFrame {
            dev_id: id,
            fcnt: frame.fcnt,
            confirmed: frame.confirmed,
            adr_enabled: true,
            adr_ack_req: frame.adr_ack_req,
            payload_bytes: self.scenario.payload_bytes,
        };
        match handle_ack_timeout(&uplink, &policy, frame.attempt, now, &mut dev.rng) {
            RetxAction::RetransmitAt(t) => {
                dev.frame.as_mut().unwrap().attempt += 1;
                let t = dev.duty.next_allowed_tx(SubBand::G1, t);
                if t <= duration {
                    self.push(t, EventKind::TxAttempt { device: id });
                } else {
                    dev.frame = None;
                }
            }
            RetxAction::GiveUp => {
                dev.frame = None;
                self.trace.adr_events.push(AdrEventRecord {
                    time_s: now,
                    device: id,
                    kind: AdrEventKind::GiveUp { fcnt: frame.fcnt },
                });
                self.schedule_next_frame(id);
            }
        }
    }

    fn schedule_next_frame(&mut self, id: DeviceId) {
        let mean = self.scenario.mean_interarrival_s;
        let duration = self.scenario.sim_duration_s;
        let now = self.now;
        let dev = &mut self.devices[id as usize];
        let clearance = dev.duty.next_allowed_tx(SubBand::G1, now);
        let t = next_uplink_time(&mut dev.rng, mean, dev.last_frame_start, clearance);
        if t <= duration {
            self.push(t, EventKind::TxAttempt { device: id });
        }
    }

    fn mark_evaluated(&mut self, id: DeviceId) {
        if let Some(flag) = self.evaluated.get_mut(id as usize) {
            if !*flag {
                *flag = true;
                self.evaluated_count += 1;
                if self.evaluated_count == self.trace.n_devices_initial {
                    self.fire_warmup_injections();
                }
            }
        }
    }

    fn fire_warmup_injections(&mut self) {
        if self.warmup_fired || self.now > self.scenario.sim_duration_s {
            return;
        }
        self.warmup_fired = true;
        let now = self.now;
        let pending = std::mem::take(&mut self.warmup_injections);
        for index in pending {
            self.push(now, EventKind::Injection { index });
        }
    }

    fn on_warmup_deadline(&mut self) {
        self.fire_warmup_injections();
    }

    fn on_injection(&mut self, index: usize) -> Result<(), Error> {
        let inj = &self.scenario.injections[index];
        if let Some(spec) = &inj.link_change {
            let ids: Vec<DeviceId> = match &spec.devices {
                Some(ids) => ids.clone(),
                None => (0..self.devices.len() as u32).collect(),
            };
            for &d in &ids {
                if d as usize >= self.devices.len() {
                    return Err(Error::UnknownDevice(d));
                }
            }
            for &d in &ids {
                self.devices[d as usize].mean_offset_db += spec.delta_db;
            }
            self.trace.injections.push(InjectionRecord {
                time_s: self.now,
                kind: InjectionKind::LinkChange {
                    devices: ids,
                    delta_db: spec.delta_db,
                },
            });
        } else if let Some(count) = inj.add_devices {
            let first_id = self.devices.len() as u32;
            let sf = self.scenario.initial_sf()?;
            let tp = self.scenario.initial_tp()?;
            self.net.grow_to((first_id + count) as usize);
            self.pending_cmd
                .resize((first_id + count) as usize, None);
            for i in 0..count {
                self.spawn_device(first_id + i, None, sf, tp, self.now);
            }
            self.trace.injections.push(InjectionRecord {
                time_s: self.now,
                kind: InjectionKind::AddDevices { first_id, count },
            });
        }
        Ok(())
    }

    /// Drop inflight entries and gateway intervals that can no longer
    /// interfere with anything unresolved or future.
    fn prune_gateway_state(&mut self) {
        let min_active_start = self
            .gateway
            .inflight
            .iter()
            .filter(|e| !e.resolved)
            .map(|e| e.tx.start_time_s)
            .fold(self.now, f64::min);
        self.gateway
            .inflight
            .retain(|e| !e.resolved || e.tx.end_time_s() > min_active_start);
        let horizon = self.now - 2.0; // longest uplink airtime is < 2 s
        self.gateway.tx_intervals.retain(|&(_, e)| e > horizon);
    }
}
