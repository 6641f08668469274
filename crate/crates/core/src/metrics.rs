//! Evaluation quantities computed from run traces: convergence time, radio
//! energy, packet-loss breakdown, cross-repetition aggregates, and the
//! trace audits the test suites lean on.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::phy::TX_POWER_LEVELS_DBM;
use crate::sim::{DeviceId, InjectionKind, RecordOutcome, RunTrace, TxKind};

/// Transmit-current model of the device radio.
///
/// Current draw in mA per TP level {2, 5, 8, 11, 14} dBm at the given supply
/// voltage. Receive and sleep currents are excluded: the regime of interest
/// is transmit-dominated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergyModel {
    pub supply_v: f64,
    pub tx_current_ma: [f64; 5],
}

impl Default for EnergyModel {
    fn default() -> Self {
        EnergyModel {
            supply_v: 3.3,
            tx_current_ma: [24.0, 27.0, 30.0, 35.0, 44.0],
        }
    }
}

impl EnergyModel {
    pub fn tx_current_a(&self, tp_dbm: i8) -> f64 {
        let idx = TX_POWER_LEVELS_DBM
            .iter()
            .position(|&p| p == tp_dbm)
            .expect("tp from the power grid");
        self.tx_current_ma[idx] / 1000.0
    }
}

/// When the network gathered enough packets from a device after an anchor
/// event, and when the device then applied the resulting assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRecord {
    pub device: DeviceId,
    pub anchor_time_s: f64,
    /// Instant the N-th post-anchor uplink was received; `None` when the
    /// trace ended first (the device did not converge).
    pub converged_rx_time_s: Option<f64>,
    /// Instant the device applied the next LinkADRReq at or after
    /// `converged_rx_time_s`.
    pub converged_applied_time_s: Option<f64>,
}

impl ConvergenceRecord {
    pub fn converged(&self) -> bool {
        self.converged_rx_time_s.is_some()
    }

    pub fn convergence_minutes(&self) -> Option<f64> {
        self.converged_rx_time_s.map(|t| (t - self.anchor_time_s) / 60.0)
    }

    pub fn applied_minutes(&self) -> Option<f64> {
        self.converged_applied_time_s.map(|t| (t - self.anchor_time_s) / 60.0)
    }
}

/// Convergence time for one device relative to an anchor (a link change or
/// the device's arrival): the instant the network has received the N-th
/// uplink from it at or after the anchor.
pub fn convergence_time(
    trace: &RunTrace,
    device: DeviceId,
    anchor_time_s: f64,
) -> Result<ConvergenceRecord, Error> {
    let anchored = trace.injections.iter().any(|inj| {
        inj.time_s == anchor_time_s
            && match &inj.kind {
                InjectionKind::LinkChange { devices, .. } => devices.contains(&device),
                InjectionKind::AddDevices { first_id, count } => {
                    (*first_id..first_id + count).contains(&device)
                }
            }
    });
    if !anchored {
        return Err(Error::UnknownAnchor { device, anchor_s: anchor_time_s });
    }

    let n = trace.adr_n as usize;
    let converged_rx_time_s = trace
        .transmissions
        .iter()
        .filter(|r| {
            r.kind == TxKind::Uplink
                && r.device == device
                && r.outcome.is_received()
                && r.end_s >= anchor_time_s
        })
        .nth(n.saturating_sub(1))
        .map(|r| r.end_s);

    let converged_applied_time_s = converged_rx_time_s.and_then(|rx_time| {
        trace
            .adr_events
            .iter()
            .find(|e| {
                e.device == device
                    && e.time_s >= rx_time
                    && matches!(e.kind, crate::sim::AdrEventKind::CmdApplied { .. })
            })
            .map(|e| e.time_s)
    });

    Ok(ConvergenceRecord {
        device,
        anchor_time_s,
        converged_rx_time_s,
        converged_applied_time_s,
    })
}

/// Joules a device's radio spent transmitting inside an interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyRecord {
    pub device: DeviceId,
    pub joules: f64,
}

/// Transmit energy over every uplink attempt (retransmissions and lost
/// packets included) starting within [start, end).
pub fn energy(
    trace: &RunTrace,
    device: DeviceId,
    interval: (f64, f64),
    model: &EnergyModel,
) -> EnergyRecord {
    let joules = trace
        .transmissions
        .iter()
        .filter(|r| {
            r.kind == TxKind::Uplink
                && r.device == device
                && r.start_s >= interval.0
                && r.start_s < interval.1
        })
        .map(|r| (r.end_s - r.start_s) * model.tx_current_a(r.tp_dbm) * model.supply_v)
        .sum();
    EnergyRecord { device, joules }
}

/// Attempt-level loss accounting plus the frame-level no-ACK count.
///
/// The four outcome categories partition generated uplink attempts exactly,
/// so `received_pct` plus the three loss percentages is 100. `no_ack_frames`
/// counts confirmed frames none of whose attempts reached the gateway; its
/// percentage is over confirmed frames, a different unit, and is reported
/// alongside rather than added to the partition.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub generated: u64,
    pub received: u64,
    pub collision: u64,
    pub under_sensitivity: u64,
    pub gateway_busy: u64,
    pub confirmed_frames: u64,
    pub no_ack_frames: u64,
}

impl LossBreakdown {
    fn pct(&self, count: u64) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            100.0 * count as f64 / self.generated as f64
        }
    }

    pub fn received_pct(&self) -> f64 {
        self.pct(self.received)
    }

    pub fn collision_pct(&self) -> f64 {
        self.pct(self.collision)
    }

    pub fn under_sensitivity_pct(&self) -> f64 {
        self.pct(self.under_sensitivity)
    }

    pub fn gateway_busy_pct(&self) -> f64 {
        self.pct(self.gateway_busy)
    }

    pub fn no_ack_pct(&self) -> f64 {
        if self.confirmed_frames == 0 {
            0.0
        } else {
            100.0 * self.no_ack_frames as f64 / self.confirmed_frames as f64
        }
    }
}

/// Classify every uplink attempt that starts within [start, end), optionally
/// restricted to a device set. Frames are attributed to the interval of
/// their first attempt in it.
pub fn loss_breakdown(
    trace: &RunTrace,
    devices: Option<&[DeviceId]>,
    interval: (f64, f64),
) -> LossBreakdown {
    let device_set: Option<std::collections::HashSet<DeviceId>> =
        devices.map(|d| d.iter().copied().collect());
    let mut out = LossBreakdown::default();
    // (device, fcnt) -> any attempt received, for the confirmed-frame view
    let mut confirmed: HashMap<(DeviceId, u32), bool> = HashMap::new();

    for r in &trace.transmissions {
        if r.kind != TxKind::Uplink || r.start_s < interval.0 || r.start_s >= interval.1 {
            continue;
        }
        if let Some(set) = &device_set {
            if !set.contains(&r.device) {
                continue;
            }
        }
        out.generated += 1;
        match r.outcome {
            RecordOutcome::Received => out.received += 1,
            RecordOutcome::Collision => out.collision += 1,
            RecordOutcome::UnderSensitivity => out.under_sensitivity += 1,
            RecordOutcome::GatewayBusy => out.gateway_busy += 1,
            RecordOutcome::Dropped | RecordOutcome::DeviceBusy => {
                unreachable!("uplinks are never dropped or device-busy")
            }
        }
        if r.confirmed {
            let got = confirmed.entry((r.device, r.fcnt)).or_insert(false);
            *got |= r.outcome.is_received();
        }
    }

    out.confirmed_frames = confirmed.len() as u64;
    out.no_ack_frames = confirmed.values().filter(|&&received| !received).count() as u64;
    out
}

/// Sample mean and standard deviation across repetitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation (n-1 denominator); 0 for a single value.
    pub stddev: f64,
    pub count: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate, Error> {
    if values.is_empty() {
        return Err(Error::EmptyAggregate);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(Aggregate { mean, stddev, count: values.len() })
}

/// A transmission that started before its sender's sub-band off-time had
/// elapsed.
#[derive(Debug, Clone, PartialEq)]
pub struct DutyCycleViolation {
    pub source: String,
    pub start_s: f64,
    pub allowed_from_s: f64,
}

/// Replay the trace against the off-time rule: a transmission of airtime T
/// ending at t blocks its sender's sub-band until t + T * (1/limit - 1).
/// Uplink sources are devices (g1 only); all downlinks share the gateway,
/// with g1 and g3 budgets tracked separately.
pub fn audit_duty_cycle(trace: &RunTrace, limit: f64) -> Result<(), DutyCycleViolation> {
    // Airtime is recomputed here as end - start, so the off-time bound can
    // differ from the engine's by ~1e-8 s at large timestamps once scaled
    // by 99 airtimes. A microsecond of slack is far below any physical
    // significance and far above that noise.
    const SLACK_S: f64 = 1e-6;
    let mut records: Vec<_> = trace
        .transmissions
        .iter()
        .filter(|r| r.outcome != RecordOutcome::Dropped)
        .collect();
    records.sort_by(|a, b| a.start_s.partial_cmp(&b.start_s).unwrap());

    // key: device id for uplinks; (u32::MAX, band) for the gateway
    let mut earliest: HashMap<(u32, u8), f64> = HashMap::new();
    for r in records {
        let band = if r.channel == crate::sim::RX2_CHANNEL_INDEX { 1 } else { 0 };
        let key = match r.kind {
            TxKind::Uplink => (r.device, 0),
            TxKind::Downlink => (u32::MAX, band),
        };
        let allowed = earliest.get(&key).copied().unwrap_or(0.0);
        if r.start_s + SLACK_S < allowed {
            return Err(DutyCycleViolation {
                source: match r.kind {
                    TxKind::Uplink => format!("device {}", r.device),
                    TxKind::Downlink => "gateway".to_string(),
                },
                start_s: r.start_s,
                allowed_from_s: allowed,
            });
        }
        let airtime = r.end_s - r.start_s;
        let next = r.end_s + airtime * (1.0 / limit - 1.0);
        let entry = earliest.entry(key).or_insert(0.0);
        *entry = entry.max(next);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{InjectionRecord, TransmissionRecord};
    use approx::assert_abs_diff_eq;

    fn uplink(device: u32, fcnt: u32, start: f64, outcome: RecordOutcome) -> TransmissionRecord {
        TransmissionRecord {
            start_s: start,
            end_s: start + 0.056576,
            device,
            fcnt,
            snr_db: 0.0,
            sf: 7,
            tp_dbm: 14,
            channel: 0,
            attempt: 1,
            kind: TxKind::Uplink,
            outcome,
            confirmed: false,
            adr_ack_req: false,
            carried_cmd: false,
        }
    }

    fn trace_with(transmissions: Vec<TransmissionRecord>, adr_n: u32) -> RunTrace {
        RunTrace {
            transmissions,
            adr_events: Vec::new(),
            injections: vec![InjectionRecord {
                time_s: 0.0,
                kind: InjectionKind::LinkChange { devices: vec![0], delta_db: 0.0 },
            }],
            duration_s: 1000.0,
            adr_n,
            n_devices_initial: 1,
            n_devices_final: 1,
        }
    }

    #[test]
    fn convergence_is_the_nth_received_uplink() {
        let txs: Vec<_> = (0..5)
            .map(|i| uplink(0, i, f64::from(i) * 10.0, RecordOutcome::Received))
            .collect();
        let trace = trace_with(txs, 3);
        let rec = convergence_time(&trace, 0, 0.0).unwrap();
        assert_abs_diff_eq!(rec.converged_rx_time_s.unwrap(), 20.0 + 0.056576, epsilon = 1e-9);
    }

    #[test]
    fn too_few_receptions_is_non_converged() {
        let mut txs: Vec<_> = (0..2)
            .map(|i| uplink(0, i, f64::from(i) * 10.0, RecordOutcome::Received))
            .collect();
        txs.push(uplink(0, 2, 20.0, RecordOutcome::Collision));
        let trace = trace_with(txs, 3);
        let rec = convergence_time(&trace, 0, 0.0).unwrap();
        assert!(!rec.converged());
        assert_eq!(rec.convergence_minutes(), None);
    }

    #[test]
    fn anchor_must_exist_in_the_trace() {
        let trace = trace_with(vec![], 3);
        assert!(convergence_time(&trace, 0, 5.0).is_err());
        assert!(convergence_time(&trace, 9, 0.0).is_err());
    }

    #[test]
    fn anchor_at_trace_end_is_non_converged() {
        let mut trace = trace_with(
            (0..5)
                .map(|i| uplink(0, i, f64::from(i) * 10.0, RecordOutcome::Received))
                .collect(),
            3,
        );
        trace.injections[0].time_s = trace.duration_s;
        let rec = convergence_time(&trace, 0, trace.duration_s).unwrap();
        assert!(!rec.converged());
    }

    #[test]
    fn convergence_is_translation_invariant() {
        let build = |shift: f64| {
            let txs: Vec<_> = (0..4)
                .map(|i| uplink(0, i, shift + f64::from(i) * 10.0, RecordOutcome::Received))
                .collect();
            let mut t = trace_with(txs, 4);
            t.injections[0].time_s = shift;
            t
        };
        let a = convergence_time(&build(0.0), 0, 0.0).unwrap();
        let b = convergence_time(&build(777.0), 0, 777.0).unwrap();
        assert_abs_diff_eq!(
            a.convergence_minutes().unwrap(),
            b.convergence_minutes().unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn energy_of_one_sf7_uplink_at_14_dbm() {
        let trace = trace_with(vec![uplink(0, 0, 0.0, RecordOutcome::Received)], 1);
        let rec = energy(&trace, 0, (0.0, 1000.0), &EnergyModel::default());
        // 0.056576 s * 44 mA * 3.3 V
        assert_abs_diff_eq!(rec.joules, 8.215e-3, epsilon = 1e-5);
    }

    #[test]
    fn energy_is_zero_without_transmissions_and_additive_over_intervals() {
        let model = EnergyModel::default();
        let trace = trace_with(
            vec![
                uplink(0, 0, 10.0, RecordOutcome::Received),
                uplink(0, 1, 50.0, RecordOutcome::Collision),
            ],
            1,
        );
        assert_eq!(energy(&trace, 1, (0.0, 100.0), &model).joules, 0.0);
        let whole = energy(&trace, 0, (0.0, 100.0), &model).joules;
        let first = energy(&trace, 0, (0.0, 30.0), &model).joules;
        let second = energy(&trace, 0, (30.0, 100.0), &model).joules;
        assert_abs_diff_eq!(whole, first + second, epsilon = 1e-15);
        assert_abs_diff_eq!(whole, 2.0 * first, epsilon = 1e-15);
    }

    #[test]
    fn loss_breakdown_partitions_attempts() {
        let trace = trace_with(
            vec![
                uplink(0, 0, 0.0, RecordOutcome::Received),
                uplink(0, 1, 1.0, RecordOutcome::Collision),
                uplink(0, 2, 2.0, RecordOutcome::UnderSensitivity),
                uplink(0, 3, 3.0, RecordOutcome::GatewayBusy),
                uplink(0, 4, 4.0, RecordOutcome::Received),
            ],
            1,
        );
        let b = loss_breakdown(&trace, None, (0.0, 1000.0));
        assert_eq!(b.generated, 5);
        assert_abs_diff_eq!(
            b.received_pct() + b.collision_pct() + b.under_sensitivity_pct() + b.gateway_busy_pct(),
            100.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(b.collision_pct(), 20.0);
    }

    #[test]
    fn no_ack_counts_fully_failed_confirmed_frames() {
        let mut lost1 = uplink(0, 0, 0.0, RecordOutcome::Collision);
        lost1.confirmed = true;
        let mut lost2 = uplink(0, 0, 5.0, RecordOutcome::UnderSensitivity);
        lost2.confirmed = true;
        lost2.attempt = 2;
        let mut ok1 = uplink(0, 1, 10.0, RecordOutcome::Collision);
        ok1.confirmed = true;
        let mut ok2 = uplink(0, 1, 15.0, RecordOutcome::Received);
        ok2.confirmed = true;
        ok2.attempt = 2;
        let trace = trace_with(vec![lost1, lost2, ok1, ok2], 1);
        let b = loss_breakdown(&trace, None, (0.0, 1000.0));
        assert_eq!(b.confirmed_frames, 2);
        assert_eq!(b.no_ack_frames, 1);
        assert_abs_diff_eq!(b.no_ack_pct(), 50.0);
    }

    #[test]
    fn loss_breakdown_respects_the_device_filter() {
        let trace = trace_with(
            vec![
                uplink(0, 0, 0.0, RecordOutcome::Received),
                uplink(5, 0, 1.0, RecordOutcome::Collision),
            ],
            1,
        );
        let b = loss_breakdown(&trace, Some(&[5]), (0.0, 1000.0));
        assert_eq!(b.generated, 1);
        assert_eq!(b.collision, 1);
    }

    #[test]
    fn aggregate_mean_and_sample_stddev() {
        let a = aggregate(&[5.0, 5.0, 5.0]).unwrap();
        assert_abs_diff_eq!(a.mean, 5.0);
        assert_abs_diff_eq!(a.stddev, 0.0);

        let a = aggregate(&[1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(a.mean, 2.0);
        assert_abs_diff_eq!(a.stddev, std::f64::consts::SQRT_2, epsilon = 1e-12);

        let a = aggregate(&[7.5]).unwrap();
        assert_eq!((a.mean, a.stddev, a.count), (7.5, 0.0, 1));

        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn duty_cycle_audit_flags_early_transmissions() {
        // Second transmission starts long before 99 airtimes have passed.
        let trace = trace_with(
            vec![
                uplink(0, 0, 0.0, RecordOutcome::Received),
                uplink(0, 1, 1.0, RecordOutcome::Received),
            ],
            1,
        );
        assert!(audit_duty_cycle(&trace, 0.01).is_err());

        let trace = trace_with(
            vec![
                uplink(0, 0, 0.0, RecordOutcome::Received),
                uplink(0, 1, 6.0, RecordOutcome::Received),
            ],
            1,
        );
        assert!(audit_duty_cycle(&trace, 0.01).is_ok());
    }
}
