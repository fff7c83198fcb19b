//! Studies over randomly drawn options: relative errors of the Monte Carlo
//! estimates against lattice references, error histograms, the arithmetic
//! average approximation and the objective sweep at a single time step.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{
    locate_boundary_mode_a, FlashlightConfig, ObjectiveCurve, SearchMode, DEFAULT_BINS,
    DEFAULT_MIN_BIN_PATHS,
};
use crate::contract::{ContractSpec, ExerciseStyle, OptionKind};
use crate::error::{invalid, Result};
use crate::lattice::{
    crr_bermudan, crr_price, geo_asian_closed_form, geo_avg_tree, TreeConfig,
};
use crate::pricer::{
    generate_sample, price_american_on, price_averaged, price_european, reprice_independent,
    AmericanConfig, BackwardPass, PriceEstimate,
};
use crate::process::{ProcessParams, TimeGrid};
use crate::rng::{derive_seed, PathRng, DOMAIN_OPTIONS};

/// Means of `(rate, sigma, s0, strike, expiry)` for random options.
pub const DRAW_MEANS: [f64; 5] = [0.10, 0.40, 100.0, 100.0, 0.50];
/// Standard deviations of the same parameters.
pub const DRAW_SDS: [f64; 5] = [0.05, 0.20, 50.0, 50.0, 0.25];

/// Relative errors are only formed when the reference exceeds this fraction of `s0`.
pub const MIN_REFERENCE_FRACTION: f64 = 1e-4;

/// Half-width of the strike window in units of `sigma sqrt(T)`.
pub fn strike_window(kind: OptionKind) -> f64 {
    if kind.averaging().is_some() {
        1.0
    } else {
        2.0
    }
}

/// Draws `n` option set-ups. Every parameter comes from an independent normal,
/// redrawn while nonpositive; the strike is also redrawn until
/// `|ln X - ln(s0 e^{rT})| <= k sigma sqrt(T)` with `k` from [`strike_window`].
/// Option `j` uses its own random stream, so a prefix of a larger draw equals
/// the smaller draw.
pub fn sample_random_options(
    n: usize,
    seed: u64,
    kind: OptionKind,
    n_steps: usize,
) -> Result<Vec<(ProcessParams, ContractSpec)>> {
    if n == 0 {
        return Err(invalid("n_options must be at least 1"));
    }
    if kind == OptionKind::VanillaCall {
        return Err(invalid("random studies cover put options only"));
    }
    let k = strike_window(kind);
    (0..n)
        .map(|j| {
            let mut rng = PathRng::new(seed, DOMAIN_OPTIONS, j as u64);
            let mut positive = |m: usize| loop {
                let v = DRAW_MEANS[m] + DRAW_SDS[m] * rng.normal();
                if v > 0.0 {
                    return v;
                }
            };
            let rate = positive(0);
            let sigma = positive(1);
            let s0 = positive(2);
            let expiry = positive(4);
            let centre = s0.ln() + rate * expiry;
            let half = k * sigma * expiry.sqrt();
            let strike = loop {
                let x = positive(3);
                if (x.ln() - centre).abs() <= half {
                    break x;
                }
            };
            let params = ProcessParams::new(rate, sigma, s0)?;
            let contract = ContractSpec::new(kind, strike, expiry, ExerciseStyle::American, n_steps)?;
            Ok((params, contract))
        })
        .collect()
}

fn default_paths() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub kind: OptionKind,
    pub n_options: usize,
    pub n_paths: usize,
    pub n_steps: usize,
    pub mode: SearchMode,
    pub seed: u64,
    pub cutoff: bool,
    pub flashlight: bool,
    pub importance: bool,
    pub bins: usize,
    /// Representative averages per tree log-step in the geometric-average tree.
    pub tree_density: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kind: OptionKind::VanillaPut,
            n_options: 100,
            n_paths: default_paths(),
            n_steps: 100,
            mode: SearchMode::Exact,
            seed: 1,
            cutoff: true,
            flashlight: false,
            importance: true,
            bins: DEFAULT_BINS,
            tree_density: 16,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_options == 0 {
            return Err(invalid("n_options must be at least 1"));
        }
        if self.n_paths < 2 {
            return Err(invalid("n_paths must be at least 2"));
        }
        if self.n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        if self.bins == 0 {
            return Err(invalid("bins must be at least 1"));
        }
        if self.kind == OptionKind::VanillaCall {
            return Err(invalid("kind: random studies cover put options only"));
        }
        if self.tree_density == 0 {
            return Err(invalid("tree_density must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn american(&self, seed: u64) -> AmericanConfig {
        AmericanConfig {
            n_paths: self.n_paths,
            seed,
            mode: self.mode,
            cutoff: self.cutoff,
            flashlight: self.flashlight.then(FlashlightConfig::default),
            bins: self.bins,
            min_bin_paths: DEFAULT_MIN_BIN_PATHS,
            grid_tol: None,
            importance: self.importance,
        }
    }
}

/// Monte Carlo estimates for one option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub in_sample: PriceEstimate,
    pub independent: PriceEstimate,
    pub averaged: PriceEstimate,
    /// European counterpart on the same sample as `in_sample`.
    pub european: PriceEstimate,
}

/// Reference prices for one option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct References {
    /// Tree price, or for arithmetic averages the approximation built from
    /// geometric trees and the European Monte Carlo price.
    pub american: f64,
    pub european: Option<f64>,
    /// American and European geometric-average tree prices used by the approximation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometric_trees: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrors {
    pub in_sample: Option<f64>,
    pub independent: Option<f64>,
    pub averaged: Option<f64>,
    pub european: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub index: usize,
    pub params: ProcessParams,
    pub contract: ContractSpec,
    pub seed: u64,
    pub seed2: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Estimates>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub references: Option<References>,
    pub errors: RelativeErrors,
    /// Reference too small for a meaningful relative error.
    pub excluded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

/// `(mc - reference) / reference`.
pub fn relative_error(mc: f64, reference: f64) -> f64 {
    (mc - reference) / reference
}

/// Approximate American arithmetic-average price from the geometric-average
/// American and European tree prices and the European arithmetic Monte Carlo price.
pub fn approx_arith_price(american_geo_tree: f64, european_geo_tree: f64, european_arith_mc: f64) -> f64 {
    american_geo_tree - european_geo_tree + european_arith_mc
}

impl ErrorRecord {
    /// Combines estimates and references into a record with relative errors.
    pub fn assemble(
        index: usize,
        params: ProcessParams,
        contract: ContractSpec,
        seeds: (u64, u64),
        estimates: Estimates,
        references: References,
    ) -> Self {
        let floor = MIN_REFERENCE_FRACTION * params.s0;
        let excluded = references.american < floor;
        let err = |v: f64| (!excluded).then(|| relative_error(v, references.american));
        let errors = RelativeErrors {
            in_sample: err(estimates.in_sample.value),
            independent: err(estimates.independent.value),
            averaged: err(estimates.averaged.value),
            european: references
                .european
                .filter(|&e| e >= floor)
                .map(|e| relative_error(estimates.european.value, e)),
        };
        Self {
            index,
            params,
            contract,
            seed: seeds.0,
            seed2: seeds.1,
            estimates: Some(estimates),
            references: Some(references),
            errors,
            excluded,
            failure: None,
        }
    }

    fn failed(index: usize, params: ProcessParams, contract: ContractSpec, seeds: (u64, u64), msg: String) -> Self {
        Self {
            index,
            params,
            contract,
            seed: seeds.0,
            seed2: seeds.1,
            estimates: None,
            references: None,
            errors: RelativeErrors::default(),
            excluded: false,
            failure: Some(msg),
        }
    }
}

/// Runs the in-sample, independent, averaged and European estimators.
pub fn estimate_option(
    config: &StudyConfig,
    params: &ProcessParams,
    contract: &ContractSpec,
    seed: u64,
    seed2: u64,
) -> Result<Estimates> {
    let sample = generate_sample(params, contract, config.n_paths, seed, config.importance)?;
    let american = price_american_on(&sample, contract, config.american(seed))?;
    let european = price_european(&sample, &contract.with_style(ExerciseStyle::European))?;
    drop(sample);
    let independent = reprice_independent(
        params,
        contract,
        &american.boundary,
        config.n_paths,
        seed2,
        config.importance,
    )?;
    let averaged = price_averaged(&american.estimate, &independent)?;
    Ok(Estimates {
        in_sample: american.estimate,
        independent,
        averaged,
        european,
    })
}

/// Lattice references on the contract's own grid.
pub fn reference_prices(
    config: &StudyConfig,
    params: &ProcessParams,
    contract: &ContractSpec,
    european_mc: Option<f64>,
) -> Result<References> {
    let am = contract.with_style(ExerciseStyle::American);
    let eu = contract.with_style(ExerciseStyle::European);
    let tree = |c: ContractSpec| TreeConfig {
        n_steps: contract.n_steps,
        params: *params,
        contract: c,
    };
    match contract.kind {
        OptionKind::VanillaPut | OptionKind::VanillaCall => Ok(References {
            american: crr_price(&tree(am))?.price,
            european: Some(crr_price(&tree(eu))?.price),
            geometric_trees: None,
        }),
        OptionKind::GeoAvgPut => {
            let grid = TimeGrid::for_contract(contract)?;
            Ok(References {
                american: geo_avg_tree(&tree(am), config.tree_density)?,
                european: Some(geo_asian_closed_form(params, contract.strike, &grid)?),
                geometric_trees: None,
            })
        }
        OptionKind::ArithAvgPut => {
            let e_am = european_mc.ok_or_else(|| invalid("approximation needs the European arithmetic price"))?;
            let geo = |c: ContractSpec| ContractSpec {
                kind: OptionKind::GeoAvgPut,
                ..c
            };
            let a_gm = geo_avg_tree(&tree(geo(am)), config.tree_density)?;
            let e_gm = geo_avg_tree(&tree(geo(eu)), config.tree_density)?;
            Ok(References {
                american: approx_arith_price(a_gm, e_gm, e_am),
                european: None,
                geometric_trees: Some((a_gm, e_gm)),
            })
        }
    }
}

/// Option seeds `(sample, independent sample)` for draw `index`.
pub fn option_seeds(master: u64, index: usize) -> (u64, u64) {
    (derive_seed(master, index as u64, 1), derive_seed(master, index as u64, 2))
}

pub fn run_option(config: &StudyConfig, index: usize, params: ProcessParams, contract: ContractSpec) -> ErrorRecord {
    let seeds = option_seeds(config.seed, index);
    let outcome = estimate_option(config, &params, &contract, seeds.0, seeds.1).and_then(|est| {
        let refs = reference_prices(config, &params, &contract, Some(est.european.value))?;
        Ok((est, refs))
    });
    match outcome {
        Ok((est, refs)) => ErrorRecord::assemble(index, params, contract, seeds, est, refs),
        Err(e) => ErrorRecord::failed(index, params, contract, seeds, e.to_string()),
    }
}

/// Fixed-width histogram over `[lower, upper)` with one underflow and one overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub width: f64,
    /// Underflow, `n` interior bins, overflow.
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Self {
        Self {
            lower,
            width: (upper - lower) / bins as f64,
            counts: vec![0; bins + 2],
        }
    }

    /// Relative-error histogram: 40 bins over [-5%, +5%].
    pub fn relative_errors(values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::new(-0.05, 0.05, 40);
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn add(&mut self, x: f64) {
        let interior = self.counts.len() - 2;
        let pos = (x - self.lower) / self.width;
        let slot = if pos < 0.0 {
            0
        } else if pos >= interior as f64 {
            interior + 1
        } else {
            pos as usize + 1
        };
        self.counts[slot] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Rows of `(centre, count, density)`; the outer bins are reported one
    /// width beyond the range.
    pub fn rows(&self) -> Vec<(f64, usize, f64)> {
        let total = self.total().max(1) as f64;
        self.counts
            .iter()
            .enumerate()
            .map(|(k, &c)| {
                let centre = self.lower + (k as f64 - 0.5) * self.width;
                (centre, c, c as f64 / (total * self.width))
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_center,count,density")?;
        for (centre, count, density) in self.rows() {
            writeln!(out, "{centre:?},{count},{density:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: usize,
    pub mean: f64,
    pub std_dev: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { count: 0, mean: f64::NAN, std_dev: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { count: n, mean, std_dev }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub records: usize,
    pub excluded: usize,
    pub failed: usize,
    pub in_sample: Moments,
    pub independent: Moments,
    pub averaged: Moments,
    pub european: Moments,
    /// Relative gap `(in-sample - independent) / reference`.
    pub bias_gap: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub config: StudyConfig,
    pub records: Vec<ErrorRecord>,
}

impl StudyOutcome {
    fn column(&self, pick: impl Fn(&RelativeErrors) -> Option<f64>) -> Vec<f64> {
        self.records.iter().filter_map(|r| pick(&r.errors)).collect()
    }

    pub fn in_sample_errors(&self) -> Vec<f64> {
        self.column(|e| e.in_sample)
    }

    pub fn independent_errors(&self) -> Vec<f64> {
        self.column(|e| e.independent)
    }

    pub fn averaged_errors(&self) -> Vec<f64> {
        self.column(|e| e.averaged)
    }

    pub fn european_errors(&self) -> Vec<f64> {
        self.column(|e| e.european)
    }

    pub fn bias_gaps(&self) -> Vec<f64> {
        self.column(|e| Some(e.in_sample? - e.independent?))
    }

    pub fn summary(&self) -> StudySummary {
        StudySummary {
            records: self.records.len(),
            excluded: self.records.iter().filter(|r| r.excluded).count(),
            failed: self.records.iter().filter(|r| r.failure.is_some()).count(),
            in_sample: Moments::of(&self.in_sample_errors()),
            independent: Moments::of(&self.independent_errors()),
            averaged: Moments::of(&self.averaged_errors()),
            european: Moments::of(&self.european_errors()),
            bias_gap: Moments::of(&self.bias_gaps()),
        }
    }

    pub fn histograms(&self) -> Vec<(&'static str, Histogram)> {
        vec![
            ("in_sample", Histogram::relative_errors(self.in_sample_errors())),
            ("independent", Histogram::relative_errors(self.independent_errors())),
            ("averaged", Histogram::relative_errors(self.averaged_errors())),
            ("european", Histogram::relative_errors(self.european_errors())),
        ]
    }
}

/// Draws the options and prices them all. Options run concurrently; record
/// order follows the draw index.
pub fn run_error_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.validate()?;
    let draws = sample_random_options(config.n_options, config.seed, config.kind, config.n_steps)?;
    let records = draws
        .into_par_iter()
        .enumerate()
        .map(|(j, (p, c))| run_option(config, j, p, c))
        .collect();
    Ok(StudyOutcome {
        config: config.clone(),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyManifest {
    pub config: StudyConfig,
    /// Hash of the canonical JSON of `config`.
    pub input_sha256: String,
    pub summary: StudySummary,
    pub files: Vec<ManifestFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut Vec<ManifestFile>) -> Result<()> {
    fs::write(dir.join(name), bytes)?;
    files.push(ManifestFile {
        name: name.to_string(),
        sha256: sha256_hex(bytes),
    });
    Ok(())
}

/// Writes `records.jsonl`, one histogram CSV per error population and
/// `manifest.json` into `dir`.
pub fn write_study(outcome: &StudyOutcome, dir: &Path) -> Result<StudyManifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let mut jsonl = Vec::new();
    for r in &outcome.records {
        serde_json::to_writer(&mut jsonl, r)?;
        jsonl.push(b'\n');
    }
    write_file(dir, "records.jsonl", &jsonl, &mut files)?;

    for (name, hist) in outcome.histograms() {
        let mut csv = Vec::new();
        hist.write_csv(&mut csv)?;
        write_file(dir, &format!("hist_{name}.csv"), &csv, &mut files)?;
    }

    let manifest = StudyManifest {
        config: outcome.config.clone(),
        input_sha256: sha256_hex(&serde_json::to_vec(&outcome.config)?),
        summary: outcome.summary(),
        files,
    };
    let mut out = BufWriter::new(fs::File::create(dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut out, &manifest)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(manifest)
}

/// Setting of the objective sweep at one time index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub params: ProcessParams,
    pub contract: ContractSpec,
    pub index: usize,
    pub n_candidates: usize,
    /// Candidate window `[lo, hi]`.
    pub window: (f64, f64),
    pub sizes: Vec<usize>,
    pub seed: u64,
    /// Tree steps per exercise date for the reference boundary.
    pub tree_substeps: usize,
}

impl SweepConfig {
    /// Put with `S0 = X = 50`, `r = 0.10`, `sigma = 0.40`, `T = 5/12`, 50 dates,
    /// inspected at date 45.
    pub fn demo() -> Self {
        Self {
            params: ProcessParams {
                rate: 0.10,
                sigma: 0.40,
                s0: 50.0,
            },
            contract: ContractSpec {
                kind: OptionKind::VanillaPut,
                strike: 50.0,
                expiry: 5.0 / 12.0,
                style: ExerciseStyle::American,
                n_steps: 50,
            },
            index: 45,
            n_candidates: 100,
            window: (30.0, 50.0),
            sizes: vec![100, 1_000, 10_000, 100_000],
            seed: 1,
            tree_substeps: 40,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.contract.validate()?;
        if self.contract.kind.averaging().is_some() || self.contract.style != ExerciseStyle::American {
            return Err(invalid("sweep needs an American vanilla contract"));
        }
        if self.index == 0 || self.index >= self.contract.n_steps {
            return Err(invalid("index must lie strictly between 0 and n_steps"));
        }
        if self.n_candidates < 2 || !(self.window.0 < self.window.1) {
            return Err(invalid("need at least two candidates over a nonempty window"));
        }
        if self.sizes.iter().any(|&n| n < 2) || self.tree_substeps == 0 {
            return Err(invalid("sizes must be at least 2 and tree_substeps positive"));
        }
        Ok(())
    }

    fn candidates(&self) -> Vec<f64> {
        let (lo, hi) = self.window;
        let m = self.n_candidates;
        (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
    }
}

/// Reference boundary at the sweep index from a fine tree that only allows
/// exercise on the contract's dates.
pub fn sweep_tree_boundary(config: &SweepConfig) -> Result<f64> {
    let tree = crr_bermudan(
        &TreeConfig {
            n_steps: config.contract.n_steps * config.tree_substeps,
            params: config.params,
            contract: config.contract,
        },
        config.tree_substeps,
    )?;
    tree.crossing[config.index].ok_or_else(|| invalid("tree does not exercise at the sweep index"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_paths: usize,
    pub seed: u64,
    pub curve: ObjectiveCurve,
    /// Best of the candidate grid.
    pub curve_argmax: f64,
    /// Maximizer over the sampled values.
    pub exact_argmax: f64,
    /// Mean gap between neighbouring sampled values around `near`.
    pub local_spacing: f64,
}

/// Mean gap between sorted `values` over the `2 m` values closest to `near`.
pub fn local_spacing(values: &[f64], near: f64, m: usize) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n < 2 {
        return f64::INFINITY;
    }
    let j = v.partition_point(|&x| x < near);
    let lo = j.saturating_sub(m);
    let hi = (j + m).min(n - 1);
    if hi <= lo {
        return f64::INFINITY;
    }
    (v[hi] - v[lo]) / (hi - lo) as f64
}

/// Objective curve and argmax at the sweep index for one sample.
pub fn sweep_once(config: &SweepConfig, n_paths: usize, seed: u64, near: f64) -> Result<SweepPoint> {
    config.validate()?;
    let am = AmericanConfig {
        n_paths,
        seed,
        ..AmericanConfig::default()
    };
    let sample = generate_sample(&config.params, &config.contract, n_paths, seed, am.importance)?;
    let mut pass = BackwardPass::new(&sample, &config.contract, am)?;
    pass.run_until(config.index)?;
    let slice = pass.current_slice();
    let curve = ObjectiveCurve::evaluate(&slice, config.index, &config.candidates());
    let curve_argmax = curve.argmax().map(|(c, _)| c).unwrap_or(f64::NAN);
    let exact_argmax = locate_boundary_mode_a(&slice)?.point.threshold;
    Ok(SweepPoint {
        n_paths,
        seed,
        curve,
        curve_argmax,
        exact_argmax,
        local_spacing: local_spacing(&slice.spot, near, 5),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutput {
    pub tree_boundary: f64,
    pub points: Vec<SweepPoint>,
}

pub fn objective_sweep(config: &SweepConfig) -> Result<SweepOutput> {
    let tree_boundary = sweep_tree_boundary(config)?;
    let points = config
        .sizes
        .iter()
        .map(|&n| sweep_once(config, n, config.seed, tree_boundary))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepOutput { tree_boundary, points })
}

/// Writes `objective_N{n}.csv` per sample size and `sweep.json`; returns the written paths.
pub fn write_sweep(output: &SweepOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for pt in &output.points {
        let path = dir.join(format!("objective_N{}.csv", pt.n_paths));
        let mut out = BufWriter::new(fs::File::create(&path)?);
        pt.curve.write_csv(&mut out)?;
        out.flush()?;
        written.push(path);
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        tree_boundary: f64,
        runs: Vec<RunSummary<'a>>,
    }
    #[derive(Serialize)]
    struct RunSummary<'a> {
        n_paths: usize,
        seed: u64,
        curve_argmax: f64,
        exact_argmax: f64,
        local_spacing: f64,
        file: &'a str,
    }
    let names: Vec<String> = output
        .points
        .iter()
        .map(|p| format!("objective_N{}.csv", p.n_paths))
        .collect();
    let summary = Summary {
        tree_boundary: output.tree_boundary,
        runs: output
            .points
            .iter()
            .zip(&names)
            .map(|(p, f)| RunSummary {
                n_paths: p.n_paths,
                seed: p.seed,
                curve_argmax: p.curve_argmax,
                exact_argmax: p.exact_argmax,
                local_spacing: p.local_spacing,
                file: f,
            })
            .collect(),
    };
    let path = dir.join("sweep.json");
    let mut out = BufWriter::new(fs::File::create(&path)?);
    serde_json::to_writer_pretty(&mut out, &summary)?;
    out.write_all(b"\n")?;
    out.flush()?;
    written.push(path);
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n_paths: usize,
    pub median_distance: f64,
    pub median_spacing: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Median over seeds of `|exact argmax - tree boundary|` for each sample size.
pub fn sweep_convergence(config: &SweepConfig, seeds: &[u64]) -> Result<Vec<ConvergenceRow>> {
    let tree = sweep_tree_boundary(config)?;
    config
        .sizes
        .iter()
        .map(|&n| {
            let runs = seeds
                .par_iter()
                .map(|&s| sweep_once(config, n, s, tree))
                .collect::<Result<Vec<_>>>()?;
            Ok(ConvergenceRow {
                n_paths: n,
                median_distance: median(runs.iter().map(|r| (r.exact_argmax - tree).abs()).collect()),
                median_spacing: median(runs.iter().map(|r| r.local_spacing).collect()),
            })
        })
        .collect()
}
