//! Scenario files, experiment presets, repetition orchestration, and CSV
//! results.
//!
//! Scenario files are JSON objects whose keys are exactly the fields of
//! [`Scenario`]; unknown keys are errors so typos in sweeps fail loudly.
//! Presets bundle a scenario template with one swept parameter and a value
//! list; `run_preset` fans repetitions out over a thread pool and returns
//! rows that are byte-identical for a given (preset, base seed) regardless
//! of parallelism.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::Error;
use crate::metrics::{self, EnergyModel};
use crate::sim::{self, Injection, LinkChangeSpec, RunTrace, Scenario};

/// Load and validate a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario, Error> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let scenario: Scenario =
        serde_json::from_str(&text).map_err(|source| Error::ScenarioParse {
            path: path.to_owned(),
            source,
        })?;
    scenario.validate()?;
    Ok(scenario)
}

/// The parameter a preset sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweptParam {
    NDevices,
    SigmaDb,
    ConfirmedFraction,
    AdrN,
    AdrAckLimit,
    AdrAckDelay,
    /// Path-loss delta of every link-change injection in the template.
    LinkDeltaDb,
}

impl SweptParam {
    pub fn name(self) -> &'static str {
        match self {
            SweptParam::NDevices => "n_devices",
            SweptParam::SigmaDb => "sigma_db",
            SweptParam::ConfirmedFraction => "confirmed_fraction",
            SweptParam::AdrN => "adr_n",
            SweptParam::AdrAckLimit => "adr_ack_limit",
            SweptParam::AdrAckDelay => "adr_ack_delay",
            SweptParam::LinkDeltaDb => "delta_db",
        }
    }

    pub fn apply(self, scenario: &mut Scenario, value: f64) {
        match self {
            SweptParam::NDevices => scenario.n_devices = value as u32,
            SweptParam::SigmaDb => scenario.sigma_db = value,
            SweptParam::ConfirmedFraction => scenario.confirmed_fraction = value,
            SweptParam::AdrN => scenario.adr_n = value as u32,
            SweptParam::AdrAckLimit => scenario.adr_ack_limit = value as u32,
            SweptParam::AdrAckDelay => scenario.adr_ack_delay = value as u32,
            SweptParam::LinkDeltaDb => {
                for inj in &mut scenario.injections {
                    if let Some(change) = &mut inj.link_change {
                        change.delta_db = value;
                    }
                }
            }
        }
    }
}

/// A named experiment: scenario template, swept parameter, values,
/// repetition count.
#[derive(Debug, Clone)]
pub struct ExperimentPreset {
    pub name: &'static str,
    pub description: &'static str,
    pub scenario: Scenario,
    pub param: SweptParam,
    pub values: Vec<f64>,
    pub repetitions: u32,
}

impl ExperimentPreset {
    /// Scenario for one swept value (seed still to be assigned).
    pub fn scenario_for(&self, value: f64) -> Scenario {
        let mut s = self.scenario.clone();
        self.param.apply(&mut s, value);
        s
    }
}

/// Template shared by the parameter studies: a well-placed lone device whose
/// link suddenly degrades hard enough that it must climb several robustness
/// steps to reconnect.
fn degraded_link_template() -> Scenario {
    Scenario {
        n_devices: 1,
        fixed_distances_m: Some(vec![40.0]),
        sigma_db: 0.0,
        injections: vec![Injection {
            at_s: Some(86_400.0),
            link_change: Some(LinkChangeSpec {
                devices: Some(vec![0]),
                delta_db: 20.0,
            }),
            ..Injection::default()
        }],
        ..Scenario::default()
    }
}

/// Template for the traffic and link-change studies: a lone device at the
/// cell edge under high channel variation whose link improves at the
/// injection, leaving a slightly lossy but usable channel.
fn edge_device_template(delta_db: f64) -> Scenario {
    Scenario {
        n_devices: 1,
        fixed_distances_m: Some(vec![670.0]),
        sigma_db: 3.57,
        injections: vec![Injection {
            at_s: Some(7_200.0),
            link_change: Some(LinkChangeSpec {
                devices: Some(vec![0]),
                delta_db,
            }),
            ..Injection::default()
        }],
        ..Scenario::default()
    }
}

/// Template for the population studies: a background network warmed up
/// until the server has assessed every device, then 100 fresh devices whose
/// convergence is measured.
///
/// Uses the noise-limited sensitivity table so the full 670 m cell is
/// reachable at (SF12, 14 dBm), matching the standard communication range.
pub fn population_template(sigma_db: f64) -> Scenario {
    Scenario {
        sigma_db,
        phy: crate::phy::PhyConfig::noise_limited(4.0),
        injections: vec![Injection {
            after_warmup: true,
            add_devices: Some(100),
            ..Injection::default()
        }],
        ..Scenario::default()
    }
}

/// All built-in experiment presets.
pub fn presets() -> Vec<ExperimentPreset> {
    vec![
        ExperimentPreset {
            name: "network-size",
            description: "convergence and loss of 100 devices joining warmed-up networks of growing size",
            scenario: population_template(0.0),
            param: SweptParam::NDevices,
            values: vec![100.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0],
            repetitions: 30,
        },
        ExperimentPreset {
            name: "channel-variation",
            description: "impact of shadowing level on convergence of 100 joining devices",
            scenario: population_template(0.0),
            param: SweptParam::SigmaDb,
            values: vec![0.0, 1.785, 3.57],
            repetitions: 30,
        },
        ExperimentPreset {
            name: "link-change",
            description: "lone edge device whose mean path loss steps by delta_db mid-run",
            scenario: edge_device_template(-6.0),
            param: SweptParam::LinkDeltaDb,
            values: vec![-10.0, -6.0, -3.0, 3.0, 6.0, 10.0],
            repetitions: 30,
        },
        ExperimentPreset {
            name: "traffic-type",
            description: "share of confirmed uplinks on a marginal improving link",
            scenario: edge_device_template(-4.0),
            param: SweptParam::ConfirmedFraction,
            values: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            repetitions: 30,
        },
        ExperimentPreset {
            name: "packet-window",
            description: "window size N the server needs before recomputing SF/TP, degraded link",
            scenario: degraded_link_template(),
            param: SweptParam::AdrN,
            values: vec![5.0, 10.0, 15.0, 20.0],
            repetitions: 30,
        },
        ExperimentPreset {
            name: "ack-limit",
            description: "ADR_ACK_LIMIT sweep on the degraded link",
            scenario: degraded_link_template(),
            param: SweptParam::AdrAckLimit,
            values: vec![16.0, 32.0, 64.0, 128.0],
            repetitions: 30,
        },
        ExperimentPreset {
            name: "ack-delay",
            description: "ADR_ACK_DELAY sweep on the degraded link",
            scenario: degraded_link_template(),
            param: SweptParam::AdrAckDelay,
            values: vec![8.0, 16.0, 32.0, 64.0],
            repetitions: 30,
        },
    ]
}

pub fn preset(name: &str) -> Result<ExperimentPreset, Error> {
    presets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::UnknownPreset(name.to_string()))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
    }
    hash
}

/// Stable, documented seed derivation: chained SplitMix64 over the FNV-1a
/// hash of the preset name, the swept value index, and the repetition.
/// Identical inputs give identical seeds on every platform.
pub fn derive_seed(base_seed: u64, preset_name: &str, value_idx: usize, rep: u32) -> u64 {
    let s = splitmix64(base_seed ^ fnv1a64(preset_name.as_bytes()));
    let s = splitmix64(s ^ (value_idx as u64 + 1));
    splitmix64(s ^ (u64::from(rep) + 1))
}

/// One output row: a single metric of a single repetition (or an aggregate
/// row with `rep = -1` and `seed = 0`, metric suffixed `_mean` / `_std`).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub preset: String,
    pub param: String,
    pub value: f64,
    pub rep: i64,
    pub seed: u64,
    pub metric: String,
    pub metric_value: f64,
}

/// Format with six significant digits in plain decimal notation, trailing
/// zeros trimmed.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exponent = x.abs().log10().floor() as i32;
    let decimals = (5 - exponent).max(0) as usize;
    let scale = 10f64.powi(5 - exponent);
    let rounded = (x * scale).round() / scale;
    let text = format!("{rounded:.decimals$}");
    if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    }
}

fn parse_sig6(x: f64) -> f64 {
    fmt_sig6(x).parse().expect("fmt_sig6 emits valid floats")
}

/// Per-run metric extraction shared by `run_preset` and the `run` command.
///
/// Convergence metrics cover the devices anchored by injections (link
/// changes and runtime arrivals); non-converged devices are counted, never
/// folded into means. Loss metrics cover all devices from the earliest
/// anchor (or time zero) onward.
pub fn summarize_run(trace: &RunTrace, energy_model: &EnergyModel) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let anchors = trace.anchors();

    if !anchors.is_empty() {
        let mut conv_minutes = Vec::new();
        let mut applied_minutes = Vec::new();
        let mut energies = Vec::new();
        for &(device, anchor) in &anchors {
            let rec = metrics::convergence_time(trace, device, anchor)
                .expect("anchor comes from the trace");
            if let Some(m) = rec.convergence_minutes() {
                conv_minutes.push(m);
                let rx_time = rec.converged_rx_time_s.unwrap();
                energies.push(metrics::energy(trace, device, (anchor, rx_time), energy_model).joules);
            }
            if let Some(m) = rec.applied_minutes() {
                applied_minutes.push(m);
            }
        }
        out.push(("tracked_count".into(), anchors.len() as f64));
        out.push(("converged_count".into(), conv_minutes.len() as f64));
        if let Ok(a) = metrics::aggregate(&conv_minutes) {
            out.push(("convergence_rx_min".into(), a.mean));
        }
        if let Ok(a) = metrics::aggregate(&applied_minutes) {
            out.push(("convergence_applied_min".into(), a.mean));
        }
        if let Ok(a) = metrics::aggregate(&energies) {
            out.push(("energy_j".into(), a.mean));
        }
    }

    let from = anchors.iter().map(|&(_, t)| t).fold(f64::INFINITY, f64::min);
    let from = if from.is_finite() { from } else { 0.0 };
    let b = metrics::loss_breakdown(trace, None, (from, f64::INFINITY));
    out.push(("generated_uplinks".into(), b.generated as f64));
    out.push(("received_pct".into(), b.received_pct()));
    out.push(("collision_pct".into(), b.collision_pct()));
    out.push(("under_sensitivity_pct".into(), b.under_sensitivity_pct()));
    out.push(("gateway_busy_pct".into(), b.gateway_busy_pct()));
    out.push(("no_ack_pct".into(), b.no_ack_pct()));
    out
}

/// Run every (swept value, repetition) combination of a preset and collect
/// metric rows plus per-value aggregates.
///
/// `parallelism` bounds the worker threads (0 uses the rayon default). Rows
/// come back in a deterministic order independent of scheduling.
pub fn run_preset(
    preset: &ExperimentPreset,
    base_seed: u64,
    repetitions: u32,
    parallelism: usize,
) -> Result<Vec<ResultRow>, Error> {
    let jobs: Vec<(usize, u32)> = (0..preset.values.len())
        .flat_map(|v| (0..repetitions).map(move |r| (v, r)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .expect("thread pool");
    let results: Result<Vec<_>, Error> = pool.install(|| {
        jobs.par_iter()
            .map(|&(value_idx, rep)| {
                let value = preset.values[value_idx];
                let mut scenario = preset.scenario_for(value);
                let seed = derive_seed(base_seed, preset.name, value_idx, rep);
                scenario.seed = seed;
                let trace = sim::run(&scenario)?;
                let summary = summarize_run(&trace, &scenario.energy);
                Ok((value_idx, rep, seed, summary))
            })
            .collect()
    });
    let mut results = results?;
    results.sort_by_key(|&(value_idx, rep, _, _)| (value_idx, rep));

    let mut rows = Vec::new();
    for &(value_idx, rep, seed, ref summary) in &results {
        for (metric, metric_value) in summary {
            rows.push(ResultRow {
                preset: preset.name.to_string(),
                param: preset.param.name().to_string(),
                value: parse_sig6(preset.values[value_idx]),
                rep: i64::from(rep),
                seed,
                metric: metric.clone(),
                metric_value: parse_sig6(*metric_value),
            });
        }
    }

    // Per-value aggregates across repetitions.
    for (value_idx, &value) in preset.values.iter().enumerate() {
        let mut metric_names: Vec<String> = Vec::new();
        for &(vi, _, _, ref summary) in &results {
            if vi == value_idx {
                for (name, _) in summary {
                    if !metric_names.contains(name) {
                        metric_names.push(name.clone());
                    }
                }
            }
        }
        for name in metric_names {
            let values: Vec<f64> = results
                .iter()
                .filter(|&&(vi, _, _, _)| vi == value_idx)
                .filter_map(|(_, _, _, summary)| {
                    summary.iter().find(|(n, _)| n == &name).map(|(_, v)| *v)
                })
                .collect();
            let agg = metrics::aggregate(&values).expect("at least one repetition");
            for (suffix, v) in [("_mean", agg.mean), ("_std", agg.stddev)] {
                rows.push(ResultRow {
                    preset: preset.name.to_string(),
                    param: preset.param.name().to_string(),
                    value: parse_sig6(value),
                    rep: -1,
                    seed: 0,
                    metric: format!("{name}{suffix}"),
                    metric_value: parse_sig6(v),
                });
            }
        }
    }

    Ok(rows)
}

/// Write rows under the fixed header; floats carry six significant digits
/// and the final line is newline-terminated.
pub fn write_csv(rows: &[ResultRow], path: &Path) -> Result<(), Error> {
    let mut writer = csv::Writer::from_path(path).map_err(Error::Csv)?;
    writer
        .write_record(["preset", "param", "value", "rep", "seed", "metric", "metric_value"])
        .map_err(Error::Csv)?;
    for row in rows {
        writer
            .write_record([
                row.preset.as_str(),
                row.param.as_str(),
                &fmt_sig6(row.value),
                &row.rep.to_string(),
                &row.seed.to_string(),
                row.metric.as_str(),
                &fmt_sig6(row.metric_value),
            ])
            .map_err(Error::Csv)?;
    }
    writer.flush().map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(())
}

/// Read rows back from `write_csv` output.
pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, Error> {
    let mut reader = csv::Reader::from_path(path).map_err(Error::Csv)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(Error::Csv)?;
        let field = |i: usize| record.get(i).unwrap_or_default().to_string();
        let num = |i: usize| -> f64 { record.get(i).unwrap_or_default().parse().unwrap_or(f64::NAN) };
        rows.push(ResultRow {
            preset: field(0),
            param: field(1),
            value: num(2),
            rep: record.get(3).unwrap_or_default().parse().unwrap_or(0),
            seed: record.get(4).unwrap_or_default().parse().unwrap_or(0),
            metric: field(5),
            metric_value: num(6),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp(name: &str, contents: &str) -> tempfile::TempPath {
        let mut f = tempfile::Builder::new()
            .suffix(name)
            .tempfile()
            .unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f.into_temp_path()
    }

    #[test]
    fn empty_object_gives_full_defaults() {
        let path = tmp(".json", "{}");
        let s = load_scenario(Path::new(&*path)).unwrap();
        assert_eq!(s, Scenario::default());
        assert_eq!(s.area_radius_m, 670.0);
        assert_eq!(s.mean_interarrival_s, 600.0);
    }

    #[test]
    fn sigma_override_parses() {
        let path = tmp(".json", r#"{"sigma_db": 3.57}"#);
        let s = load_scenario(Path::new(&*path)).unwrap();
        assert_eq!(s.sigma_db, 3.57);
    }

    #[test]
    fn domain_violation_is_rejected_with_diagnostics() {
        let path = tmp(".json", r#"{"initial_sf": 6}"#);
        let err = load_scenario(Path::new(&*path)).unwrap_err();
        assert!(err.to_string().contains("initial_sf"), "{err}");
    }

    #[test]
    fn unknown_fields_are_errors() {
        let path = tmp(".json", r#"{"n_device": 5}"#);
        assert!(load_scenario(Path::new(&*path)).is_err());
        let path = tmp(".json", r#"{"phy": {"capture_treshold_db": 6.0}}"#);
        assert!(load_scenario(Path::new(&*path)).is_err());
    }

    #[test]
    fn nested_configs_allow_partial_overrides() {
        let path = tmp(".json", r#"{"phy": {"capture_threshold_db": 10.0}}"#);
        let s = load_scenario(Path::new(&*path)).unwrap();
        assert_eq!(s.phy.capture_threshold_db, 10.0);
        assert_eq!(s.phy.preamble_symbols, 8);
    }

    #[test]
    fn preset_names_are_unique_and_cover_the_experiments() {
        let all = presets();
        let mut names: Vec<_> = all.iter().map(|p| p.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), all.len());
        for required in [
            "network-size",
            "channel-variation",
            "link-change",
            "traffic-type",
            "packet-window",
            "ack-limit",
            "ack-delay",
        ] {
            assert!(preset(required).is_ok(), "missing preset {required}");
        }
        for p in &all {
            assert!(!p.values.is_empty());
            assert_eq!(p.repetitions, 30);
            p.scenario.validate().unwrap();
        }
        let sizes = &preset("network-size").unwrap().values;
        assert_eq!(sizes, &[100.0, 500.0, 1000.0, 2000.0, 3000.0, 4000.0]);
    }

    #[test]
    fn unknown_preset_is_an_error() {
        assert!(preset("no-such-thing").is_err());
    }

    #[test]
    fn seed_derivation_is_stable() {
        let s = derive_seed(42, "network-size", 0, 0);
        assert_eq!(s, derive_seed(42, "network-size", 0, 0));
        assert_ne!(s, derive_seed(42, "network-size", 0, 1));
        assert_ne!(s, derive_seed(42, "network-size", 1, 0));
        assert_ne!(s, derive_seed(42, "channel-variation", 0, 0));
        assert_ne!(s, derive_seed(43, "network-size", 0, 0));
    }

    #[test]
    fn fmt_sig6_keeps_six_significant_digits() {
        assert_eq!(fmt_sig6(0.0), "0");
        assert_eq!(fmt_sig6(200.0), "200");
        assert_eq!(fmt_sig6(0.056576), "0.056576");
        assert_eq!(fmt_sig6(1234567.0), "1234570");
        assert_eq!(fmt_sig6(-14.5432), "-14.5432");
        assert_eq!(fmt_sig6(1.2345649e-4), "0.000123456");
        assert_eq!(fmt_sig6(212.3456789), "212.346");
    }

    #[test]
    fn csv_round_trip_reproduces_rows() {
        let rows = vec![
            ResultRow {
                preset: "p".into(),
                param: "n_devices".into(),
                value: 100.0,
                rep: 0,
                seed: 7,
                metric: "convergence_rx_min".into(),
                metric_value: parse_sig6(212.3456789),
            },
            ResultRow {
                preset: "p".into(),
                param: "n_devices".into(),
                value: 100.0,
                rep: -1,
                seed: 0,
                metric: "convergence_rx_min_mean".into(),
                metric_value: parse_sig6(212.3456789),
            },
        ];
        let path = tmp(".csv", "");
        write_csv(&rows, Path::new(&*path)).unwrap();
        let back = read_csv(Path::new(&*path)).unwrap();
        assert_eq!(rows, back);
        let text = std::fs::read_to_string(&*path).unwrap();
        assert!(text.starts_with("preset,param,value,rep,seed,metric,metric_value\n"));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn empty_rows_write_a_header_only_file() {
        let path = tmp(".csv", "");
        write_csv(&[], Path::new(&*path)).unwrap();
        let text = std::fs::read_to_string(&*path).unwrap();
        assert_eq!(text, "preset,param,value,rep,seed,metric,metric_value\n");
    }
}
