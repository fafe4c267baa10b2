//! Parameter sweeps, baseline tuning with an on-disk cache, and the
//! figure-reproduction presets.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::Deserialize;

use crate::baselines::{grid_search_params, BaselineConfig, BaselineKind, TuneBudget, TuneScenario, TunedBaseline};
use crate::channel::FeedbackModel;
use crate::domain::SystemParams;
use crate::error::{Error, Result};
use crate::protocol::{DeltaConfig, Variant};
use crate::sim::{run_episode, run_heterogeneity_sweep, EpisodeConfig, MetricsLedger, ProtocolSpec};
use crate::smm::{build_model, default_psi_max, fixed_k, optimize_k, ModelVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Rho,
    N,
    Nu,
    SigmaF,
    EpsilonF,
    OmegaF,
    K,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Rho => "rho",
            Axis::N => "N",
            Axis::Nu => "nu",
            Axis::SigmaF => "sigma_f",
            Axis::EpsilonF => "epsilon_f",
            Axis::OmegaF => "omega_f",
            Axis::K => "K",
        }
    }
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "rho" => Axis::Rho,
            "N" | "n" => Axis::N,
            "nu" => Axis::Nu,
            "sigma_f" => Axis::SigmaF,
            "epsilon_f" => Axis::EpsilonF,
            "omega_f" => Axis::OmegaF,
            "K" | "k" => Axis::K,
            other => return Err(Error::Config(format!("unknown sweep axis {other:?}"))),
        })
    }
}

/// How DELTA picks its slot budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KChoice {
    /// `⌈5N/2⌉`.
    Fixed,
    /// `argmax_K π(ZW)` of the semi-Markov model.
    Model(ModelVariant),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolChoice {
    Delta { variant: Variant, k: KChoice },
    Baseline(BaselineKind),
}

impl ProtocolChoice {
    pub fn label(&self) -> &'static str {
        match self {
            ProtocolChoice::Delta { variant: Variant::DeltaPlus, .. } => "DELTA+",
            ProtocolChoice::Delta { k: KChoice::Fixed, .. } => "DELTA-fixed",
            ProtocolChoice::Delta { k: KChoice::Model(ModelVariant::Pessimistic), .. } => "DELTA-pes",
            ProtocolChoice::Delta { k: KChoice::Model(ModelVariant::Optimistic), .. } => "DELTA-opt",
            ProtocolChoice::Baseline(kind) => kind.name(),
        }
    }

    pub fn all() -> Vec<ProtocolChoice> {
        let mut out: Vec<ProtocolChoice> = ["DELTA-opt", "DELTA-pes", "DELTA-fixed", "DELTA+"]
            .iter()
            .map(|s| s.parse().expect("known label"))
            .collect();
        out.extend(BaselineKind::ALL.iter().map(|&k| ProtocolChoice::Baseline(k)));
        out
    }
}

impl FromStr for ProtocolChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let delta = |variant, k| ProtocolChoice::Delta { variant, k };
        Ok(match s.to_ascii_uppercase().as_str() {
            "DELTA" | "DELTA-OPT" => delta(Variant::Delta, KChoice::Model(ModelVariant::Optimistic)),
            "DELTA-PES" => delta(Variant::Delta, KChoice::Model(ModelVariant::Pessimistic)),
            "DELTA-FIXED" => delta(Variant::Delta, KChoice::Fixed),
            "DELTA+" => delta(Variant::DeltaPlus, KChoice::Model(ModelVariant::Optimistic)),
            "RR" => ProtocolChoice::Baseline(BaselineKind::Rr),
            "MAF" => ProtocolChoice::Baseline(BaselineKind::Maf),
            "ZW" => ProtocolChoice::Baseline(BaselineKind::Zw),
            "LZW" => ProtocolChoice::Baseline(BaselineKind::Lzw),
            "GZW" => ProtocolChoice::Baseline(BaselineKind::Gzw),
            _ => return Err(Error::Config(format!("unknown protocol {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub n: usize,
    pub rho: f64,
    pub epsilon: f64,
    pub nu: f64,
    pub feedback: FeedbackModel,
    /// Overrides every DELTA budget when set.
    pub k: Option<f64>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 20,
            rho: 0.5,
            epsilon: 0.05,
            nu: 0.0,
            feedback: FeedbackModel::Ideal,
            k: None,
        }
    }
}

impl Scenario {
    pub fn with_axis(mut self, axis: Axis, value: f64) -> Self {
        match axis {
            Axis::Rho => self.rho = value,
            Axis::N => self.n = value.round() as usize,
            Axis::Nu => self.nu = value,
            Axis::SigmaF => self.feedback = FeedbackModel::Noisy { sigma: value },
            Axis::EpsilonF => self.feedback = FeedbackModel::Erasure { prob: value },
            Axis::OmegaF => self.feedback = FeedbackModel::Deletion { prob: value },
            Axis::K => self.k = Some(value),
        }
        self
    }

    pub fn lambda(&self) -> f64 {
        self.rho / self.n as f64
    }

    pub fn params(&self) -> Result<SystemParams> {
        SystemParams::symmetric(self.n, self.rho, self.epsilon)
    }
}

fn feedback_label(fb: &FeedbackModel) -> String {
    match *fb {
        FeedbackModel::Ideal => "ideal".into(),
        FeedbackModel::Noisy { sigma } => format!("noisy({sigma})"),
        FeedbackModel::Erasure { prob } => format!("erasure({prob})"),
        FeedbackModel::Deletion { prob } => format!("deletion({prob})"),
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} rho={} eps={} fb={}", self.n, self.rho, self.epsilon, feedback_label(&self.feedback))
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub name: String,
    pub axis: Axis,
    pub values: Vec<f64>,
    pub base: Scenario,
    pub protocols: Vec<ProtocolChoice>,
    pub slots: u64,
    pub seed: u64,
    pub thresholds: Vec<u64>,
    /// Activation vectors drawn per point on the `nu` axis.
    pub samples: usize,
    /// Adds semi-Markov π(ZW) rows (meaningful on the `K` axis).
    pub model_rows: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Config(format!("sweep {:?} has no values", self.name)));
        }
        if self.values.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Config(format!("sweep {:?} values must be sorted", self.name)));
        }
        if self.thresholds.is_empty() {
            return Err(Error::Config("at least one threshold is required".into()));
        }
        if self.slots == 0 {
            return Err(Error::Config("slots must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// File holding tuned baseline probabilities across runs.
    pub tune_cache: Option<PathBuf>,
    /// Ignore cached entries and tune again.
    pub retune: bool,
    /// Overrides the tuning budget derived from the sweep's slot count.
    pub tune_budget: Option<TuneBudget>,
}

/// One CSV line.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub scenario: String,
    pub protocol: String,
    pub axis: &'static str,
    pub value: f64,
    pub violation: Vec<Option<f64>>,
    /// Standard error of each violation estimate.
    pub violation_se: Vec<Option<f64>>,
    pub mean_aoii: Option<f64>,
    pub mean_aoi: Option<f64>,
    pub pi_zw: Option<f64>,
    pub seed: u64,
    pub slots: u64,
}

/// Values `start, start+step, ..., stop`, rounded to 1e-9.
pub fn linspace_step(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let count = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=count).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect()
}

fn budget_for(slots: u64, opts: &RunOptions) -> TuneBudget {
    opts.tune_budget.unwrap_or(TuneBudget {
        grid_slots: (slots / 10).max(1),
        final_slots: slots,
        finalists: 5,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct TuneKey(String);

fn tune_key(kind: BaselineKind, scenario: &Scenario, threshold: u64, seed: u64, budget: &TuneBudget) -> TuneKey {
    TuneKey(format!(
        "{}|n={}|rho={}|eps={}|fb={}|thr={}|seed={}|grid={}|final={}|top={}",
        kind.name(),
        scenario.n,
        scenario.rho,
        scenario.epsilon,
        feedback_label(&scenario.feedback),
        threshold,
        seed,
        budget.grid_slots,
        budget.final_slots,
        budget.finalists
    ))
}

/// Tuned baseline probabilities keyed by scenario, optionally persisted.
#[derive(Debug, Default)]
pub struct TuneCache {
    entries: BTreeMap<TuneKey, TunedBaseline>,
    path: Option<PathBuf>,
}

#[derive(Debug, serde::Serialize, Deserialize)]
struct TuneRecord {
    key: String,
    kind: String,
    p1: f64,
    p2: f64,
    objective: f64,
}

fn kind_from_name(s: &str) -> Result<BaselineKind> {
    BaselineKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown baseline {s:?} in tuning cache")))
}

impl TuneCache {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cache = TuneCache {
            entries: BTreeMap::new(),
            path: path.map(Path::to_path_buf),
        };
        let Some(path) = path else { return Ok(cache) };
        if !path.exists() {
            return Ok(cache);
        }
        let mut reader = csv::Reader::from_path(path)?;
        for rec in reader.deserialize::<TuneRecord>() {
            let rec = rec?;
            let kind = kind_from_name(&rec.kind)?;
            cache.entries.insert(
                TuneKey(rec.key),
                TunedBaseline {
                    config: BaselineConfig { kind, p1: rec.p1, p2: rec.p2 },
                    objective: rec.objective,
                },
            );
        }
        Ok(cache)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        self.write_table(path)
    }

    /// Writes the table of tuned parameters (key, kind, p1, p2, objective).
    pub fn write_table(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        for (key, t) in &self.entries {
            w.serialize(TuneRecord {
                key: key.0.clone(),
                kind: t.config.kind.name().into(),
                p1: t.config.p1,
                p2: t.config.p2,
                objective: t.objective,
            })?;
        }
        w.flush().map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

struct Resolver<'a> {
    opts: &'a RunOptions,
    tuned: Mutex<TuneCache>,
    k_cache: Mutex<HashMap<(usize, u64, u64, ModelVariant), u32>>,
}

impl<'a> Resolver<'a> {
    fn tuned(&self, kind: BaselineKind, scenario: &Scenario, threshold: u64, seed: u64, budget: TuneBudget) -> Result<BaselineConfig> {
        let key = tune_key(kind, scenario, threshold, seed, &budget);
        if !self.opts.retune {
            if let Some(t) = self.tuned.lock().expect("tune cache poisoned").entries.get(&key) {
                return Ok(t.config);
            }
        }
        let ts = TuneScenario {
            params: scenario.params()?,
            feedback: scenario.feedback,
            threshold,
            seed,
        };
        let result = grid_search_params(kind, &ts, budget)?;
        log::info!("tuned {} for {scenario} θ={threshold}: p1={} p2={}", kind.name(), result.config.p1, result.config.p2);
        self.tuned.lock().expect("tune cache poisoned").entries.insert(key, result);
        Ok(result.config)
    }

    fn delta_k(&self, scenario: &Scenario, choice: KChoice) -> Result<f64> {
        if let Some(k) = scenario.k {
            return Ok(k);
        }
        match choice {
            KChoice::Fixed => Ok(fixed_k(scenario.n) as f64),
            KChoice::Model(variant) => {
                let key = (scenario.n, scenario.rho.to_bits(), scenario.epsilon.to_bits(), variant);
                if let Some(&k) = self.k_cache.lock().expect("K cache poisoned").get(&key) {
                    return Ok(k as f64);
                }
                let k = model_optimal_k(scenario.n, scenario.lambda(), scenario.epsilon, variant)?;
                self.k_cache.lock().expect("K cache poisoned").insert(key, k);
                Ok(k as f64)
            }
        }
    }
}

/// Budget range searched by the model: `N/2 ..= 6N`.
pub fn model_k_range(n: usize) -> std::ops::RangeInclusive<u32> {
    ((n as u32 / 2).max(2))..=(6 * n as u32).max(3)
}

/// Below this the model's π(ZW) is rounding noise and its argmax means nothing.
pub const MODEL_PI_FLOOR: f64 = 1e-9;

/// Model-optimal budget. When the model predicts no ZW occupancy for any
/// budget in range, the reference budget is used instead.
pub fn model_optimal_k(n: usize, lambda: f64, epsilon: f64, variant: ModelVariant) -> Result<u32> {
    let (k, pi) = optimize_k(n, lambda, epsilon, default_psi_max(n), variant, model_k_range(n))?;
    if pi < MODEL_PI_FLOOR {
        let fallback = fixed_k(n);
        log::warn!(
            "{} model predicts π(ZW) < {MODEL_PI_FLOOR:e} for every K at N={n} λ={lambda}; using K={fallback}",
            variant.name()
        );
        return Ok(fallback);
    }
    Ok(k)
}

fn episode(scenario: &Scenario, protocol: ProtocolSpec, spec: &SweepSpec, seed: u64, thresholds: Vec<u64>) -> Result<EpisodeConfig> {
    Ok(EpisodeConfig {
        slots: spec.slots,
        seed,
        thresholds,
        ..EpisodeConfig::new(scenario.params()?, protocol, scenario.feedback)
    })
}

fn run_point(scenario: &Scenario, protocol: ProtocolSpec, spec: &SweepSpec, seed: u64, thresholds: Vec<u64>) -> Result<MetricsLedger> {
    let cfg = episode(scenario, protocol, spec, seed, thresholds)?;
    if spec.axis == Axis::Nu {
        let het = run_heterogeneity_sweep(scenario.rho, scenario.nu, spec.samples, &cfg)?;
        let mut merged = het.samples[0].clone();
        let count = het.samples.len() as f64;
        merged.violation = het.mean.clone();
        merged.violation_se = het.spread.iter().map(|s| s / count.sqrt()).collect();
        merged.mean_aoii = het.samples.iter().map(|s| s.mean_aoii).sum::<f64>() / count;
        merged.mean_aoi = het.samples.iter().map(|s| s.mean_aoi).sum::<f64>() / count;
        merged.psi_zw_fraction = merged
            .psi_zw_fraction
            .map(|_| het.samples.iter().filter_map(|s| s.psi_zw_fraction).sum::<f64>() / count);
        return Ok(merged);
    }
    run_episode(&cfg)
}

fn point_seed(spec: &SweepSpec, index: usize) -> u64 {
    spec.seed.wrapping_add(index as u64)
}

fn tune_seed(spec: &SweepSpec) -> u64 {
    spec.seed ^ 0x7475_6e65
}

fn evaluate_row(res: &Resolver<'_>, spec: &SweepSpec, index: usize, choice: ProtocolChoice) -> Result<SweepRow> {
    let value = spec.values[index];
    let scenario = spec.base.with_axis(spec.axis, value);
    let seed = point_seed(spec, index);
    let mut row = SweepRow {
        scenario: spec.base.to_string(),
        protocol: choice.label().into(),
        axis: spec.axis.name(),
        value,
        violation: vec![None; spec.thresholds.len()],
        violation_se: vec![None; spec.thresholds.len()],
        mean_aoii: None,
        mean_aoi: None,
        pi_zw: None,
        seed,
        slots: spec.slots,
    };
    match choice {
        ProtocolChoice::Delta { variant, k } => {
            let cfg = DeltaConfig::new(res.delta_k(&scenario, k)?, variant);
            let m = run_point(&scenario, ProtocolSpec::Delta(cfg), spec, seed, spec.thresholds.clone())?;
            row.violation = m.violation.iter().copied().map(Some).collect();
            row.violation_se = m.violation_se.iter().copied().map(Some).collect();
            row.mean_aoii = Some(m.mean_aoii);
            row.mean_aoi = Some(m.mean_aoi);
            row.pi_zw = m.psi_zw_fraction;
        }
        ProtocolChoice::Baseline(kind) if kind.tunables() == 0 => {
            let m = run_point(&scenario, ProtocolSpec::Baseline(BaselineConfig::polled(kind)), spec, seed, spec.thresholds.clone())?;
            row.violation = m.violation.iter().copied().map(Some).collect();
            row.violation_se = m.violation_se.iter().copied().map(Some).collect();
            row.mean_aoii = Some(m.mean_aoii);
            row.mean_aoi = Some(m.mean_aoi);
        }
        ProtocolChoice::Baseline(kind) => {
            // one run per threshold, each with the probabilities tuned for it
            let budget = budget_for(spec.slots, res.opts);
            let tune_at = Scenario { nu: 0.0, k: None, ..scenario };
            for (i, &thr) in spec.thresholds.iter().enumerate() {
                let cfg = res.tuned(kind, &tune_at, thr, tune_seed(spec), budget)?;
                let m = run_point(&scenario, ProtocolSpec::Baseline(cfg), spec, seed, vec![thr])?;
                row.violation[i] = Some(m.violation[0]);
                row.violation_se[i] = Some(m.violation_se[0]);
                if i == 0 {
                    row.mean_aoii = Some(m.mean_aoii);
                    row.mean_aoi = Some(m.mean_aoi);
                }
            }
        }
    }
    Ok(row)
}

fn model_row(spec: &SweepSpec, index: usize, variant: ModelVariant) -> Result<SweepRow> {
    let value = spec.values[index];
    let s = spec.base.with_axis(spec.axis, value);
    let k = s.k.unwrap_or(fixed_k(s.n) as f64);
    let pi = build_model(s.n, s.lambda(), s.epsilon, k, default_psi_max(s.n), variant)?.pi_zw()?;
    Ok(SweepRow {
        scenario: spec.base.to_string(),
        protocol: format!("model-{}", variant.name()),
        axis: spec.axis.name(),
        value,
        violation: vec![None; spec.thresholds.len()],
        violation_se: vec![None; spec.thresholds.len()],
        mean_aoii: None,
        mean_aoi: None,
        pi_zw: Some(pi),
        seed: spec.seed,
        slots: 0,
    })
}

enum Job {
    Protocol(usize, ProtocolChoice),
    Model(usize, ModelVariant),
}

/// Runs every (value, protocol) point of the sweeps. Rows come back in spec,
/// value, protocol order regardless of scheduling.
pub fn run_sweeps(specs: &[SweepSpec], opts: &RunOptions) -> Result<Vec<SweepRow>> {
    let thresholds = specs.first().map(|s| s.thresholds.clone()).unwrap_or_default();
    for s in specs {
        s.validate()?;
        if s.thresholds != thresholds {
            return Err(Error::Config("sweeps written to one table must share thresholds".into()));
        }
    }
    let res = Resolver {
        opts,
        tuned: Mutex::new(TuneCache::load(opts.tune_cache.as_deref())?),
        k_cache: Mutex::new(HashMap::new()),
    };
    let mut rows = Vec::new();
    for spec in specs {
        let mut jobs = Vec::new();
        for i in 0..spec.values.len() {
            jobs.extend(spec.protocols.iter().map(|&p| Job::Protocol(i, p)));
            if spec.model_rows {
                jobs.push(Job::Model(i, ModelVariant::Pessimistic));
                jobs.push(Job::Model(i, ModelVariant::Optimistic));
            }
        }
        let done = jobs
            .par_iter()
            .map(|job| match *job {
                Job::Protocol(i, p) => evaluate_row(&res, spec, i, p),
                Job::Model(i, v) => model_row(spec, i, v),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.extend(done);
    }
    res.tuned.lock().expect("tune cache poisoned").save()?;
    Ok(rows)
}

pub fn run_sweep(spec: &SweepSpec, opts: &RunOptions) -> Result<Vec<SweepRow>> {
    run_sweeps(std::slice::from_ref(spec), opts)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_rows(path: &Path, thresholds: &[u64], rows: &[SweepRow]) -> Result<()> {
    let io_err = |source| Error::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["scenario".to_string(), "protocol".into(), "axis".into(), "value".into()];
    header.extend(thresholds.iter().map(|t| format!("v_{t}")));
    header.extend(thresholds.iter().map(|t| format!("se_{t}")));
    header.extend(["mean_aoii", "mean_aoi", "pi_zw", "seed", "slots"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.scenario.clone(), r.protocol.clone(), r.axis.to_string(), r.value.to_string()];
        rec.extend(r.violation.iter().map(|v| fmt_opt(*v)));
        rec.extend(r.violation_se.iter().map(|v| fmt_opt(*v)));
        rec.extend([fmt_opt(r.mean_aoii), fmt_opt(r.mean_aoi), fmt_opt(r.pi_zw), r.seed.to_string(), r.slots.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(io_err)
}

/// Tunes every tunable baseline of the sweeps at every point and returns the
/// resulting table; cached entries are reused unless `opts.retune` is set.
pub fn tune_baselines(specs: &[SweepSpec], opts: &RunOptions) -> Result<TuneCache> {
    let res = Resolver {
        opts,
        tuned: Mutex::new(TuneCache::load(opts.tune_cache.as_deref())?),
        k_cache: Mutex::new(HashMap::new()),
    };
    for spec in specs {
        spec.validate()?;
        let budget = budget_for(spec.slots, opts);
        let tasks: Vec<(Scenario, BaselineKind, u64)> = spec
            .values
            .iter()
            .flat_map(|&v| {
                let s = Scenario { nu: 0.0, k: None, ..spec.base.with_axis(spec.axis, v) };
                spec.protocols
                    .iter()
                    .filter_map(|p| match p {
                        ProtocolChoice::Baseline(k) if k.tunables() > 0 => Some(*k),
                        _ => None,
                    })
                    .flat_map(move |k| spec.thresholds.iter().map(move |&t| (s, k, t)))
            })
            .collect();
        tasks
            .par_iter()
            .map(|(s, k, t)| res.tuned(*k, s, *t, tune_seed(spec), budget).map(|_| ()))
            .collect::<Result<Vec<_>>>()?;
    }
    let cache = res.tuned.into_inner().expect("tune cache poisoned");
    cache.save()?;
    Ok(cache)
}

pub const PRESETS: [&str; 7] = ["fig2", "fig4", "fig5", "fig6", "fig7", "fig8", "fig9"];

/// Sweeps reproducing one figure. Defaults: N=20, ε=0.05, thresholds {0, 5}.
pub fn preset(name: &str, seed: u64, slots: u64) -> Result<Vec<SweepSpec>> {
    let all = ProtocolChoice::all();
    let spec = |axis, values: Vec<f64>, base: Scenario, protocols: Vec<ProtocolChoice>| SweepSpec {
        name: name.to_string(),
        axis,
        values,
        base,
        protocols,
        slots,
        seed,
        thresholds: vec![0, 5],
        samples: 100,
        model_rows: axis == Axis::K,
    };
    let at = |rho: f64| Scenario { rho, ..Scenario::default() };
    Ok(match name {
        "fig2" => {
            let ks = linspace_step(10.0, 150.0, 5.0);
            let delta = vec!["DELTA-fixed".parse()?];
            vec![spec(Axis::K, ks.clone(), at(0.2), delta.clone()), spec(Axis::K, ks, at(0.5), delta)]
        }
        "fig4" => vec![spec(Axis::Rho, linspace_step(0.1, 0.6, 0.05), at(0.5), all)],
        "fig5" => {
            let ns = vec![5.0, 10.0, 15.0, 20.0, 30.0, 40.0, 50.0];
            vec![spec(Axis::N, ns.clone(), at(0.3), all.clone()), spec(Axis::N, ns, at(0.5), all)]
        }
        "fig6" => vec![spec(Axis::Nu, linspace_step(0.0, 0.9, 0.1), at(0.5), all)],
        "fig7" => {
            let sig = linspace_step(0.0, 5.0, 0.5);
            vec![spec(Axis::SigmaF, sig.clone(), at(0.3), all.clone()), spec(Axis::SigmaF, sig, at(0.5), all)]
        }
        "fig8" => {
            let e = linspace_step(0.0, 0.2, 0.025);
            vec![spec(Axis::EpsilonF, e.clone(), at(0.3), all.clone()), spec(Axis::EpsilonF, e, at(0.5), all)]
        }
        "fig9" => vec![spec(Axis::OmegaF, linspace_step(0.0, 0.2, 0.025), at(0.5), all)],
        other => return Err(Error::Config(format!("unknown preset {other:?}; known: {}", PRESETS.join(", ")))),
    })
}

/// Declarative sweep file: one `[[sweep]]` table per sweep.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    #[serde(default)]
    pub sweep: Vec<SweepSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub axis: Option<String>,
    pub values: Option<Vec<f64>>,
    pub protocols: Option<Vec<String>>,
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub epsilon: Option<f64>,
    pub sigma_f: Option<f64>,
    pub epsilon_f: Option<f64>,
    pub omega_f: Option<f64>,
    pub slots: Option<u64>,
    pub seed: Option<u64>,
    pub thresholds: Option<Vec<u64>>,
    pub samples: Option<usize>,
    pub model_rows: Option<bool>,
}

/// Parses a sweep file. `seed` and `slots` fill in sections that omit them.
pub fn parse_sweep_file(text: &str, seed: u64, slots: u64) -> Result<Vec<SweepSpec>> {
    let file: SweepFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    for section in file.sweep {
        let seed = section.seed.unwrap_or(seed);
        let slots = section.slots.unwrap_or(slots);
        if let Some(p) = &section.preset {
            out.extend(preset(p, seed, slots)?);
            continue;
        }
        let axis: Axis = section
            .axis
            .as_deref()
            .ok_or_else(|| Error::Config("sweep section needs an axis or a preset".into()))?
            .parse()?;
        let mut base = Scenario::default();
        if let Some(n) = section.n {
            base.n = n;
        }
        if let Some(r) = section.rho {
            base.rho = r;
        }
        if let Some(e) = section.epsilon {
            base.epsilon = e;
        }
        let feedbacks = [
            section.sigma_f.map(|sigma| FeedbackModel::Noisy { sigma }),
            section.epsilon_f.map(|prob| FeedbackModel::Erasure { prob }),
            section.omega_f.map(|prob| FeedbackModel::Deletion { prob }),
        ];
        let mut chosen = feedbacks.into_iter().flatten();
        if let Some(fb) = chosen.next() {
            base.feedback = fb;
        }
        if chosen.next().is_some() {
            return Err(Error::Config("set at most one of sigma_f, epsilon_f, omega_f".into()));
        }
        let protocols = match &section.protocols {
            Some(list) => list.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>()?,
            None => ProtocolChoice::all(),
        };
        out.push(SweepSpec {
            name: section.name.clone().unwrap_or_else(|| axis.name().to_string()),
            axis,
            values: section.values.clone().ok_or_else(|| Error::Config("sweep section needs values".into()))?,
            base,
            protocols,
            slots,
            seed,
            thresholds: section.thresholds.clone().unwrap_or_else(|| vec![0, 5]),
            samples: section.samples.unwrap_or(100),
            model_rows: section.model_rows.unwrap_or(axis == Axis::K),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_is_clean() {
        let v = linspace_step(0.1, 0.6, 0.05);
        assert_eq!(v.len(), 11);
        assert_eq!(v[4], 0.3);
        assert_eq!(*v.last().unwrap(), 0.6);
    }

    #[test]
    fn protocol_labels_round_trip() {
        for p in ProtocolChoice::all() {
            assert_eq!(p.label().parse::<ProtocolChoice>().unwrap(), p);
        }
        assert!("ALOHA".parse::<ProtocolChoice>().is_err());
    }

    #[test]
    fn axis_overrides_scenario() {
        let s = Scenario::default();
        assert_eq!(s.with_axis(Axis::N, 30.0).n, 30);
        assert_eq!(s.with_axis(Axis::EpsilonF, 0.1).feedback, FeedbackModel::Erasure { prob: 0.1 });
        assert_eq!(s.with_axis(Axis::K, 55.0).k, Some(55.0));
    }

    #[test]
    fn presets_exist_and_are_sorted() {
        for name in PRESETS {
            let specs = preset(name, 1, 1000).unwrap();
            assert!(!specs.is_empty());
            for s in specs {
                s.validate().unwrap();
            }
        }
        assert!(preset("fig3", 1, 10).is_err());
    }

    #[test]
    fn sweep_file_parses() {
        let text = r#"
            [[sweep]]
            axis = "epsilon_f"
            values = [0.0, 0.1]
            protocols = ["DELTA", "MAF"]
            rho = 0.3

            [[sweep]]
            preset = "fig9"
            slots = 500
        "#;
        let specs = parse_sweep_file(text, 9, 1000).unwrap();
        assert_eq!(specs.len(), 2);
        assert_eq!(specs[0].axis, Axis::EpsilonF);
        assert_eq!(specs[0].base.rho, 0.3);
        assert_eq!(specs[0].slots, 1000);
        assert_eq!(specs[0].seed, 9);
        assert_eq!(specs[1].slots, 500);
        assert!(parse_sweep_file("[[sweep]]\nvalues=[1.0]", 1, 1).is_err());
        assert!(parse_sweep_file("[[sweep]]\nbogus=1", 1, 1).is_err());
    }
}
