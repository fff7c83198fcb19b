//! Monte Carlo estimators: European, in-sample American with boundary
//! tracking, independent-sample repricing and the averaged estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{
    early_cutoff_binned, early_cutoff_check, expiry_anchor, flashlight_augment, locate,
    locate_binned_boundary, BoundaryPoint, BoundarySlice, ContinuationTable, CutoffDecision,
    ExerciseBoundary, FlashlightConfig, RangeFlag, SearchMode, StepSlice, DEFAULT_BINS,
    DEFAULT_MIN_BIN_PATHS,
};
use crate::contract::{
    discount_factor, exercise_payoff, AugmentedState, Averaging, ContractSpec, ExerciseStyle,
};
use crate::error::{invalid, Result};
use crate::process::{importance_shift, simulate_forward_tilted, PathSample, ProcessParams, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasTag {
    InSampleUp,
    IndependentDown,
    Averaged,
    EuropeanUnbiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub bias_tag: BiasTag,
    pub contract: ContractSpec,
}

/// Weighted mean and its standard error (effective-sample-size corrected).
pub fn weighted_mean_se(x: &[f64], w: &[f64]) -> (f64, f64) {
    let mut sw = 0.0;
    let mut sw2 = 0.0;
    let mut swx = 0.0;
    for (a, b) in x.iter().zip(w) {
        sw += b;
        sw2 += b * b;
        swx += b * a;
    }
    let mean = swx / sw;
    let mut ss = 0.0;
    for (a, b) in x.iter().zip(w) {
        ss += b * (a - mean) * (a - mean);
    }
    let ess = sw * sw / sw2;
    if ess <= 1.0 {
        return (mean, 0.0);
    }
    let var = ss / sw * ess / (ess - 1.0);
    (mean, (var / ess).sqrt())
}

/// Running averages of every path, path-major like the sample itself.
pub fn sample_averages(sample: &PathSample, averaging: Averaging) -> Vec<f64> {
    let n_pts = sample.n_points();
    let mut out = vec![0.0; sample.n_paths() * n_pts];
    out.par_chunks_mut(n_pts)
        .enumerate()
        .for_each(|(p, row)| {
            row.copy_from_slice(&crate::contract::running_averages(averaging, sample.path(p)));
        });
    out
}

fn state_at(sample: &PathSample, averages: Option<&[f64]>, p: usize, i: usize) -> AugmentedState {
    let s = sample.value(p, i);
    let s_bar = match averages {
        Some(a) => a[p * sample.n_points() + i],
        None => s,
    };
    AugmentedState { s, s_bar }
}

fn check_grid(sample: &PathSample, contract: &ContractSpec) -> Result<()> {
    let grid = TimeGrid::for_contract(contract)?;
    if !sample.grid.matches(&grid) {
        return Err(invalid(format!(
            "sample grid ({} steps to {}) does not match the contract ({} steps to {})",
            sample.grid.n_steps(),
            sample.grid.expiry(),
            contract.n_steps,
            contract.expiry
        )));
    }
    Ok(())
}

/// Discounted terminal payoff averaged over the sample.
pub fn price_european(sample: &PathSample, contract: &ContractSpec) -> Result<PriceEstimate> {
    contract.validate()?;
    check_grid(sample, contract)?;
    let n = sample.grid.n_steps();
    let disc = *sample.grid.discount_curve(sample.params.rate).last().expect("grid");
    let averaging = contract.kind.averaging();
    let pv: Vec<f64> = (0..sample.n_paths())
        .into_par_iter()
        .map(|p| {
            let s = sample.terminal(p);
            let s_bar = match averaging {
                Some(a) => *crate::contract::running_averages(a, sample.path(p))
                    .last()
                    .expect("path"),
                None => s,
            };
            disc * exercise_payoff(contract, AugmentedState { s, s_bar })
        })
        .collect();
    debug_assert_eq!(sample.n_points(), n + 1);
    let (value, std_error) = weighted_mean_se(&pv, sample.weights());
    Ok(PriceEstimate {
        value,
        std_error,
        n_paths: sample.n_paths(),
        bias_tag: BiasTag::EuropeanUnbiased,
        contract: contract.with_style(ExerciseStyle::European),
    })
}

/// Settings of the boundary-tracking pricer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmericanConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub mode: SearchMode,
    /// Stop tracking once the boundary leaves the sample.
    pub cutoff: bool,
    #[serde(skip)]
    pub flashlight: Option<FlashlightConfig>,
    pub bins: usize,
    pub min_bin_paths: usize,
    /// Grid-search tolerance; `None` means `1e-3 * strike`.
    pub grid_tol: Option<f64>,
    /// Tilt the drift toward the money and reweight.
    pub importance: bool,
}

impl Default for AmericanConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            seed: 1,
            mode: SearchMode::Exact,
            cutoff: true,
            flashlight: None,
            bins: DEFAULT_BINS,
            min_bin_paths: DEFAULT_MIN_BIN_PATHS,
            grid_tol: None,
            importance: true,
        }
    }
}

impl AmericanConfig {
    fn tol(&self, contract: &ContractSpec) -> f64 {
        self.grid_tol.unwrap_or(1e-3 * contract.strike)
    }
}

/// Path sample used by the pricers for a given seed.
pub fn generate_sample(
    params: &ProcessParams,
    contract: &ContractSpec,
    n_paths: usize,
    seed: u64,
    importance: bool,
) -> Result<PathSample> {
    let grid = TimeGrid::for_contract(contract)?;
    let shift = if importance {
        importance_shift(params, contract)
    } else {
        0.0
    };
    simulate_forward_tilted(params, &grid, n_paths, seed, shift)
}

/// Backward induction over one path sample: locate the boundary at each
/// index from expiry down to 1, then update the continuation table.
pub struct BackwardPass<'a> {
    sample: &'a PathSample,
    contract: ContractSpec,
    config: AmericanConfig,
    averages: Option<Vec<f64>>,
    table: ContinuationTable,
    boundary: ExerciseBoundary,
    frozen: Option<RangeFlag>,
    last_threshold: f64,
    flashlight_segments: usize,
}

impl<'a> BackwardPass<'a> {
    pub fn new(sample: &'a PathSample, contract: &ContractSpec, config: AmericanConfig) -> Result<Self> {
        contract.validate()?;
        check_grid(sample, contract)?;
        if config.flashlight.is_some() && contract.kind.averaging().is_some() {
            return Err(invalid("flashlight segments are only supported for vanilla contracts"));
        }
        let n = contract.n_steps;
        let averages = contract.kind.averaging().map(|a| sample_averages(sample, a));
        let payoffs: Vec<f64> = (0..sample.n_paths())
            .map(|p| exercise_payoff(contract, state_at(sample, averages.as_deref(), p, n)))
            .collect();
        let mut boundary = ExerciseBoundary::never_exercise(contract, &sample.grid);
        boundary.slices[n] = expiry_anchor(contract);
        Ok(Self {
            sample,
            contract: *contract,
            config,
            averages,
            table: ContinuationTable::at_expiry(n, payoffs),
            boundary,
            frozen: None,
            last_threshold: contract.strike,
            flashlight_segments: 0,
        })
    }

    /// Index whose continuation values the table currently holds.
    pub fn index(&self) -> usize {
        self.table.index
    }

    pub fn table(&self) -> &ContinuationTable {
        &self.table
    }

    pub fn boundary(&self) -> &ExerciseBoundary {
        &self.boundary
    }

    pub fn flashlight_segments(&self) -> usize {
        self.flashlight_segments
    }

    fn states(&self, i: usize) -> Vec<AugmentedState> {
        (0..self.sample.n_paths())
            .map(|p| state_at(self.sample, self.averages.as_deref(), p, i))
            .collect()
    }

    /// Objective inputs at the next index to be processed.
    pub fn current_slice(&self) -> StepSlice {
        let i = self.table.index - 1;
        let disc = discount_factor(self.sample.params.rate, self.sample.grid.dt(i));
        StepSlice::build(
            &self.contract,
            &self.states(i),
            self.sample.weights(),
            &self.table,
            disc,
        )
    }

    fn frozen_slice(&self, flag: RangeFlag) -> BoundarySlice {
        let pt = BoundaryPoint {
            threshold: self.last_threshold,
            flag,
            inherited: false,
        };
        match self.contract.kind.averaging() {
            Some(_) => BoundarySlice::Binned(crate::boundary::BinnedBoundary {
                edges: Vec::new(),
                points: vec![pt],
            }),
            None => BoundarySlice::Scalar(pt),
        }
    }

    fn flashlight_slice(&self, i: usize, slice: &StepSlice) -> Result<Option<StepSlice>> {
        let Some(cfg) = self.config.flashlight else {
            return Ok(None);
        };
        if cfg.n_aux == 0 {
            return Ok(None);
        }
        let prev = match &self.boundary.slices[i + 1] {
            BoundarySlice::Scalar(pt) if pt.flag == RangeFlag::Located => pt.threshold,
            _ => return Ok(None),
        };
        let params = &self.sample.params;
        let half = cfg.width * params.sigma * self.sample.grid.dt(i).sqrt();
        let (lo, hi) = (prev * (-half).exp(), prev * half.exp());
        let covered = slice.value.iter().filter(|&&v| v >= lo && v <= hi).count();
        if covered >= cfg.n_aux {
            return Ok(None);
        }
        let aux = flashlight_augment(
            i,
            prev,
            params,
            &self.sample.grid,
            &self.contract,
            &self.boundary,
            cfg,
            self.config.seed,
        )?;
        Ok(Some(aux))
    }

    /// Processes one decision index (the one below the table's index).
    pub fn step(&mut self) -> Result<()> {
        let i = self.table.index - 1;
        if i == 0 {
            return Err(invalid("index 0 is settled by `finish`"));
        }
        let kind = self.contract.kind;
        let slice = self.current_slice();
        let decided = match self.frozen {
            Some(flag) => self.frozen_slice(flag),
            None if kind.averaging().is_some() => {
                let binned = locate_binned_boundary(
                    &slice,
                    self.config.bins,
                    self.config.min_bin_paths,
                    self.config.mode,
                    self.config.tol(&self.contract),
                )?;
                if self.config.cutoff {
                    if let CutoffDecision::FreezeOutside(flag) = early_cutoff_binned(&binned) {
                        self.frozen = Some(flag);
                    }
                }
                if let Some(t) = binned
                    .points
                    .iter()
                    .filter(|p| p.flag == RangeFlag::Located)
                    .map(|p| p.threshold)
                    .reduce(f64::max)
                {
                    self.last_threshold = t;
                }
                BoundarySlice::Binned(binned)
            }
            None => {
                let aux = self.flashlight_slice(i, &slice)?;
                let search = match &aux {
                    Some(a) => {
                        self.flashlight_segments += a.len();
                        let mut combined = slice.clone();
                        combined.extend(a);
                        combined
                    }
                    None => slice.clone(),
                };
                let loc = locate(&search, self.config.mode, self.config.tol(&self.contract))?;
                if self.config.cutoff {
                    if let CutoffDecision::FreezeOutside(flag) = early_cutoff_check(&search, &loc.point) {
                        self.frozen = Some(flag);
                    }
                }
                if loc.point.flag == RangeFlag::Located {
                    self.last_threshold = loc.point.threshold;
                }
                BoundarySlice::Scalar(loc.point)
            }
        };
        let states = self.states(i);
        let exercise: Vec<bool> = states
            .iter()
            .zip(&slice.exercise)
            .map(|(&st, &g)| decided.exercises(kind, st, g))
            .collect();
        self.boundary.slices[i] = decided;
        let disc = discount_factor(self.sample.params.rate, self.sample.grid.dt(i));
        self.table.step_back(disc, &exercise, &slice.exercise);
        Ok(())
    }

    /// Steps back until the table holds continuation values for index `i + 1`,
    /// i.e. until index `i` is the next to be decided.
    pub fn run_until(&mut self, i: usize) -> Result<()> {
        while self.table.index > i + 1 {
            self.step()?;
        }
        Ok(())
    }

    /// Settles index 0 and averages the pathwise payoffs discounted from
    /// each path's first crossing.
    pub fn finish(mut self) -> Result<AmericanResult> {
        self.run_until(0)?;
        let sample = self.sample;
        let kind = self.contract.kind;
        let weights = sample.weights();
        let disc0 = discount_factor(sample.params.rate, sample.grid.dt(0));
        let hold0: f64 = {
            let (num, den) = self
                .table
                .value
                .iter()
                .zip(weights)
                .fold((0.0, 0.0), |(a, b), (v, w)| (a + w * v * disc0, b + w));
            num / den
        };
        let start = AugmentedState::initial(sample.params.s0);
        let g0 = exercise_payoff(&self.contract, start);
        let estimate = if g0 > 0.0 && g0 > hold0 {
            self.boundary.slices[0] = match self.contract.kind.averaging() {
                Some(_) => BoundarySlice::Binned(crate::boundary::BinnedBoundary {
                    edges: Vec::new(),
                    points: vec![BoundaryPoint::always(kind, self.contract.strike)],
                }),
                None => BoundarySlice::Scalar(BoundaryPoint::always(kind, self.contract.strike)),
            };
            PriceEstimate {
                value: g0,
                std_error: 0.0,
                n_paths: sample.n_paths(),
                bias_tag: BiasTag::InSampleUp,
                contract: self.contract,
            }
        } else {
            let curve = sample.grid.discount_curve(sample.params.rate);
            let pv: Vec<f64> = (0..sample.n_paths())
                .map(|p| match self.table.stop[p] {
                    Some(k) => self.table.payoff[p] * curve[k],
                    None => 0.0,
                })
                .collect();
            let (value, std_error) = weighted_mean_se(&pv, weights);
            PriceEstimate {
                value,
                std_error,
                n_paths: sample.n_paths(),
                bias_tag: BiasTag::InSampleUp,
                contract: self.contract,
            }
        };
        Ok(AmericanResult {
            estimate,
            boundary: self.boundary,
            stops: self.table.stop,
            flashlight_segments: self.flashlight_segments,
        })
    }
}

#[derive(Debug, Clone)]
pub struct AmericanResult {
    pub estimate: PriceEstimate,
    pub boundary: ExerciseBoundary,
    /// First crossing index of each sample path (`None`: never exercised).
    pub stops: Vec<Option<usize>>,
    pub flashlight_segments: usize,
}

fn require_american(contract: &ContractSpec) -> Result<()> {
    if contract.style != ExerciseStyle::American {
        return Err(invalid("contract style must be american"));
    }
    Ok(())
}

/// In-sample American estimate on an existing sample.
pub fn price_american_on(
    sample: &PathSample,
    contract: &ContractSpec,
    config: AmericanConfig,
) -> Result<AmericanResult> {
    require_american(contract)?;
    BackwardPass::new(sample, contract, config)?.finish()
}

/// Generates the sample from `config.seed` and runs the full backward pass.
pub fn price_american(
    params: &ProcessParams,
    contract: &ContractSpec,
    config: AmericanConfig,
) -> Result<AmericanResult> {
    require_american(contract)?;
    let sample = generate_sample(params, contract, config.n_paths, config.seed, config.importance)?;
    price_american_on(&sample, contract, config)
}

/// Prices a sample against a fixed boundary: each path pays at its first
/// crossing, discounted to time 0.
pub fn reprice_on(
    sample: &PathSample,
    contract: &ContractSpec,
    boundary: &ExerciseBoundary,
) -> Result<PriceEstimate> {
    check_grid(sample, contract)?;
    if !boundary.compatible_with(contract, &sample.grid) {
        return Err(invalid("boundary grid or contract does not match the sample"));
    }
    let curve = sample.grid.discount_curve(sample.params.rate);
    let averaging = contract.kind.averaging();
    let n = sample.grid.n_steps();
    let pv: Vec<f64> = (0..sample.n_paths())
        .into_par_iter()
        .map(|p| {
            let path = sample.path(p);
            let mut s_bar = path[0];
            let mut log_bar = path[0].ln();
            for i in 0..=n {
                let s = path[i];
                if i > 0 {
                    match averaging {
                        Some(Averaging::Arithmetic) => {
                            s_bar = crate::contract::update_average(Averaging::Arithmetic, s_bar, s, i)
                        }
                        Some(Averaging::Geometric) => {
                            log_bar = (i as f64 * log_bar + s.ln()) / (i as f64 + 1.0);
                            s_bar = log_bar.exp();
                        }
                        None => s_bar = s,
                    }
                }
                let state = AugmentedState { s, s_bar };
                let g = exercise_payoff(contract, state);
                if boundary.exercises(i, state, g) {
                    return g * curve[i];
                }
            }
            0.0
        })
        .collect();
    let (value, std_error) = weighted_mean_se(&pv, sample.weights());
    Ok(PriceEstimate {
        value,
        std_error,
        n_paths: sample.n_paths(),
        bias_tag: BiasTag::IndependentDown,
        contract: *contract,
    })
}

/// Fresh sample from `seed2`, priced against a fixed boundary.
pub fn reprice_independent(
    params: &ProcessParams,
    contract: &ContractSpec,
    boundary: &ExerciseBoundary,
    n_paths: usize,
    seed2: u64,
    importance: bool,
) -> Result<PriceEstimate> {
    let sample = generate_sample(params, contract, n_paths, seed2, importance)?;
    reprice_on(&sample, contract, boundary)
}

/// Mean of the upward- and downward-biased estimates.
pub fn price_averaged(in_sample: &PriceEstimate, independent: &PriceEstimate) -> Result<PriceEstimate> {
    if in_sample.contract != independent.contract {
        return Err(invalid("cannot average estimates of different contracts"));
    }
    Ok(PriceEstimate {
        value: 0.5 * (in_sample.value + independent.value),
        std_error: 0.5 * in_sample.std_error.hypot(independent.std_error),
        n_paths: in_sample.n_paths + independent.n_paths,
        bias_tag: BiasTag::Averaged,
        contract: in_sample.contract,
    })
}

/// Machine-readable result of one pricing run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PricingRecord {
    pub contract: ContractSpec,
    pub params: ProcessParams,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed2: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SearchMode>,
    pub cutoff: bool,
    pub flashlight: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub european: Option<PriceEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub in_sample: Option<PriceEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub independent: Option<PriceEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub averaged: Option<PriceEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_file: Option<String>,
}
