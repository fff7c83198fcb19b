//! Exercise-boundary location by maximizing the sampled policy payoff.
//!
//! At a decision index `i` every path carries two numbers: its immediate
//! exercise value `G_i(p)` and its hold value `e^{-r dt_i} G_{i+1}(p)`, the
//! payoff from following the already-fixed later boundary, discounted back
//! to `i`. A candidate threshold `c'` defines the policy "exercise iff the
//! path coordinate is below `c'`", and the objective is the weighted mean
//! payoff of that policy over the sample. Its maximizer estimates the
//! boundary.
//!
//! Coordinates: puts use `S`, calls use `-S`, average puts use the running
//! average (within one bin of `S`). Exercise is always on the low-coordinate
//! side, and candidates never exceed the strike coordinate, so an exercised
//! path always has a positive payoff.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::contract::{exercise_payoff, AugmentedState, ContractSpec, OptionKind};
use crate::error::{invalid, Result};
use crate::process::{ProcessParams, TimeGrid};
use crate::rng::{PathRng, DOMAIN_FLASHLIGHT};

/// Initial candidate count of the grid search.
pub const GRID_SITES: usize = 64;
/// Spacing reduction between grid-search levels.
pub const GRID_REFINE: f64 = 4.0;
pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_MIN_BIN_PATHS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMode {
    /// Maximize over the sampled coordinates (sort then scan).
    #[serde(rename = "3a")]
    Exact,
    /// Coarse-to-fine grid search.
    #[serde(rename = "3b")]
    Grid,
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchMode::Exact => "3a",
            SearchMode::Grid => "3b",
        })
    }
}

impl std::str::FromStr for SearchMode {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "3a" | "a" | "exact" => Ok(SearchMode::Exact),
            "3b" | "b" | "grid" => Ok(SearchMode::Grid),
            other => Err(invalid(format!("unknown search mode {other:?}"))),
        }
    }
}

/// Position of a threshold relative to the sampled values, in natural units
/// (`S` for vanilla contracts, the running average for average contracts).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeFlag {
    BelowSample,
    AboveSample,
    Located,
}

impl RangeFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            RangeFlag::BelowSample => "below-sample",
            RangeFlag::AboveSample => "above-sample",
            RangeFlag::Located => "located",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub threshold: f64,
    pub flag: RangeFlag,
    /// Copied from a neighbouring bin because this bin had too few paths.
    #[serde(default)]
    pub inherited: bool,
}

impl BoundaryPoint {
    pub fn located(threshold: f64) -> Self {
        Self {
            threshold,
            flag: RangeFlag::Located,
            inherited: false,
        }
    }

    /// A point outside the sample on the side where nothing is exercised.
    pub fn never(kind: OptionKind, threshold: f64) -> Self {
        Self {
            threshold,
            flag: never_flag(kind),
            inherited: false,
        }
    }

    /// A point outside the sample on the side where every paying path is exercised.
    pub fn always(kind: OptionKind, threshold: f64) -> Self {
        Self {
            threshold,
            flag: always_flag(kind),
            inherited: false,
        }
    }

    /// Exercise decision for a state whose boundary-relevant value is `value`.
    pub fn exercises(&self, kind: OptionKind, value: f64, payoff: f64) -> bool {
        if payoff <= 0.0 {
            return false;
        }
        if self.flag == never_flag(kind) {
            false
        } else if self.flag == always_flag(kind) {
            true
        } else {
            to_coord(kind, value) < to_coord(kind, self.threshold)
        }
    }
}

fn never_flag(kind: OptionKind) -> RangeFlag {
    if kind.is_call() {
        RangeFlag::AboveSample
    } else {
        RangeFlag::BelowSample
    }
}

fn always_flag(kind: OptionKind) -> RangeFlag {
    if kind.is_call() {
        RangeFlag::BelowSample
    } else {
        RangeFlag::AboveSample
    }
}

pub(crate) fn to_coord(kind: OptionKind, value: f64) -> f64 {
    if kind.is_call() {
        -value
    } else {
        value
    }
}

/// Value that the boundary of `kind` is expressed in.
pub fn boundary_value(kind: OptionKind, state: AugmentedState) -> f64 {
    match kind.averaging() {
        Some(_) => state.s_bar,
        None => state.s,
    }
}

/// Average-option boundary: equal-population bins in `S`, one threshold in
/// the running average per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedBoundary {
    /// Inner bin edges in `S`; `K` bins need `K - 1` edges.
    pub edges: Vec<f64>,
    pub points: Vec<BoundaryPoint>,
}

impl BinnedBoundary {
    pub fn bin_of(&self, s: f64) -> usize {
        self.edges.partition_point(|&e| e <= s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoundarySlice {
    Scalar(BoundaryPoint),
    Binned(BinnedBoundary),
}

impl BoundarySlice {
    pub fn exercises(&self, kind: OptionKind, state: AugmentedState, payoff: f64) -> bool {
        match self {
            BoundarySlice::Scalar(pt) => pt.exercises(kind, boundary_value(kind, state), payoff),
            BoundarySlice::Binned(b) => {
                b.points[b.bin_of(state.s)].exercises(kind, boundary_value(kind, state), payoff)
            }
        }
    }

    /// Whether every bin (or the single point) sits on the given side.
    fn uniform_flag(&self) -> Option<RangeFlag> {
        match self {
            BoundarySlice::Scalar(pt) => Some(pt.flag),
            BoundarySlice::Binned(b) => {
                let first = b.points.first()?.flag;
                b.points.iter().all(|p| p.flag == first).then_some(first)
            }
        }
    }

    pub fn is_located(&self) -> bool {
        match self {
            BoundarySlice::Scalar(pt) => pt.flag == RangeFlag::Located,
            BoundarySlice::Binned(b) => b.points.iter().any(|p| p.flag == RangeFlag::Located),
        }
    }
}

/// Exercise boundary over grid indices `0..=n_steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseBoundary {
    pub kind: OptionKind,
    pub strike: f64,
    pub times: Vec<f64>,
    pub slices: Vec<BoundarySlice>,
}

impl ExerciseBoundary {
    /// Boundary that never exercises before expiry, anchored at the strike at expiry.
    pub fn never_exercise(contract: &ContractSpec, grid: &TimeGrid) -> Self {
        let n = grid.n_steps();
        let mut slices = vec![
            BoundarySlice::Scalar(BoundaryPoint::never(contract.kind, contract.strike));
            n + 1
        ];
        slices[n] = expiry_anchor(contract);
        Self {
            kind: contract.kind,
            strike: contract.strike,
            times: grid.times().to_vec(),
            slices,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn exercises(&self, i: usize, state: AugmentedState, payoff: f64) -> bool {
        self.slices[i].exercises(self.kind, state, payoff)
    }

    pub fn compatible_with(&self, contract: &ContractSpec, grid: &TimeGrid) -> bool {
        self.kind == contract.kind
            && self.strike == contract.strike
            && self.slices.len() == grid.n_steps() + 1
            && self
                .times
                .iter()
                .zip(grid.times())
                .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0))
    }

    /// One row per grid index. Binned slices list their bins as
    /// `;`-separated fields.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "index,time,threshold,flag,bin_edges,bin_thresholds,bin_flags")?;
        for (i, slice) in self.slices.iter().enumerate() {
            let t = self.times[i];
            match slice {
                BoundarySlice::Scalar(pt) => {
                    writeln!(out, "{i},{t:?},{:?},{},,,", pt.threshold, pt.flag.as_str())?
                }
                BoundarySlice::Binned(b) => {
                    let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(";");
                    let edges = join(&mut b.edges.iter().map(|e| format!("{e:?}")));
                    let ths = join(&mut b.points.iter().map(|p| format!("{:?}", p.threshold)));
                    let flags = join(&mut b.points.iter().map(|p| {
                        if p.inherited {
                            format!("{}*", p.flag.as_str())
                        } else {
                            p.flag.as_str().to_string()
                        }
                    }));
                    // summary column: the most exercise-friendly located threshold
                    let summary = b
                        .points
                        .iter()
                        .filter(|p| p.flag == RangeFlag::Located)
                        .map(|p| p.threshold)
                        .fold(f64::NAN, f64::max);
                    let flag = slice.uniform_flag().unwrap_or(RangeFlag::Located);
                    writeln!(
                        out,
                        "{i},{t:?},{summary:?},{},{edges},{ths},{flags}",
                        flag.as_str()
                    )?
                }
            }
        }
        Ok(())
    }
}

/// At expiry the boundary is the strike.
pub fn expiry_anchor(contract: &ContractSpec) -> BoundarySlice {
    let pt = BoundaryPoint::located(contract.strike);
    match contract.kind.averaging() {
        Some(_) => BoundarySlice::Binned(BinnedBoundary {
            edges: Vec::new(),
            points: vec![pt],
        }),
        None => BoundarySlice::Scalar(pt),
    }
}

/// Per-path value of optimal exercise at later dates, discounted to
/// `index`, with the first crossing index of each path.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuationTable {
    pub index: usize,
    pub value: Vec<f64>,
    /// Undiscounted payoff collected at the crossing (0 if never exercised).
    pub payoff: Vec<f64>,
    pub stop: Vec<Option<usize>>,
}

impl ContinuationTable {
    /// Expiry payoffs; paths that pay at expiry count as exercised there.
    pub fn at_expiry(n_steps: usize, payoffs: Vec<f64>) -> Self {
        let stop = payoffs
            .iter()
            .map(|&g| (g > 0.0).then_some(n_steps))
            .collect();
        Self {
            index: n_steps,
            value: payoffs.clone(),
            payoff: payoffs,
            stop,
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Moves the table one index back: paths flagged in `exercise` stop at
    /// the new index with payoff `immediate[p]`; the rest are discounted by `disc`.
    pub fn step_back(&mut self, disc: f64, exercise: &[bool], immediate: &[f64]) {
        debug_assert!(self.index > 0);
        self.index -= 1;
        let i = self.index;
        for p in 0..self.value.len() {
            if exercise[p] {
                self.value[p] = immediate[p];
                self.payoff[p] = immediate[p];
                self.stop[p] = Some(i);
            } else {
                self.value[p] *= disc;
            }
        }
    }
}

/// Everything the objective needs at one decision index.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSlice {
    pub kind: OptionKind,
    pub strike: f64,
    /// Boundary-relevant value per path (`S` or running average).
    pub value: Vec<f64>,
    /// Underlying `S_i` per path (used for binning).
    pub spot: Vec<f64>,
    pub exercise: Vec<f64>,
    pub hold: Vec<f64>,
    pub weight: Vec<f64>,
}

impl StepSlice {
    /// Builds the slice at index `continuation.index - 1`.
    pub fn build(
        contract: &ContractSpec,
        states: &[AugmentedState],
        weights: &[f64],
        continuation: &ContinuationTable,
        disc: f64,
    ) -> Self {
        let kind = contract.kind;
        Self {
            kind,
            strike: contract.strike,
            value: states.iter().map(|&s| boundary_value(kind, s)).collect(),
            spot: states.iter().map(|s| s.s).collect(),
            exercise: states.iter().map(|&s| exercise_payoff(contract, s)).collect(),
            hold: continuation.value.iter().map(|v| v * disc).collect(),
            weight: weights.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    fn coord(&self, p: usize) -> f64 {
        to_coord(self.kind, self.value[p])
    }

    fn strike_coord(&self) -> f64 {
        to_coord(self.kind, self.strike)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &[f64]| idx.iter().map(|&p| v[p]).collect::<Vec<_>>();
        Self {
            kind: self.kind,
            strike: self.strike,
            value: pick(&self.value),
            spot: pick(&self.spot),
            exercise: pick(&self.exercise),
            hold: pick(&self.hold),
            weight: pick(&self.weight),
        }
    }

    pub fn extend(&mut self, other: &StepSlice) {
        self.value.extend_from_slice(&other.value);
        self.spot.extend_from_slice(&other.spot);
        self.exercise.extend_from_slice(&other.exercise);
        self.hold.extend_from_slice(&other.hold);
        self.weight.extend_from_slice(&other.weight);
    }

    fn coord_range(&self) -> (f64, f64) {
        (0..self.len()).map(|p| self.coord(p)).fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), c| (lo.min(c), hi.max(c)),
        )
    }

    /// Mean discounted hold value: the objective when nothing is exercised.
    pub fn mean_hold(&self) -> f64 {
        weighted_mean(&self.hold, &self.weight)
    }

    /// Mean immediate payoff: the objective when everything is exercised.
    pub fn mean_exercise(&self) -> f64 {
        weighted_mean(&self.exercise, &self.weight)
    }
}

fn weighted_mean(x: &[f64], w: &[f64]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.iter().zip(w) {
        num += a * b;
        den += b;
    }
    num / den
}

/// Payoff of path `p` under the policy "exercise iff strictly on the
/// exercise side of `candidate`".
pub fn policy_payoff(slice: &StepSlice, p: usize, candidate: f64) -> f64 {
    if slice.coord(p) < to_coord(slice.kind, candidate) {
        slice.exercise[p]
    } else {
        slice.hold[p]
    }
}

/// Weighted mean policy payoff over the slice.
pub fn objective(slice: &StepSlice, candidate: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..slice.len() {
        num += slice.weight[p] * policy_payoff(slice, p, candidate);
        den += slice.weight[p];
    }
    num / den
}

/// Objective evaluated at several candidates, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveCurve {
    pub index: usize,
    pub points: Vec<(f64, f64)>,
}

impl ObjectiveCurve {
    pub fn evaluate(slice: &StepSlice, index: usize, candidates: &[f64]) -> Self {
        Self {
            index,
            points: candidates.iter().map(|&c| (c, objective(slice, c))).collect(),
        }
    }

    pub fn argmax(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .copied()
            .fold(None, |best: Option<(f64, f64)>, (c, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((c, v)),
            })
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "candidate,objective")?;
        for (c, v) in &self.points {
            writeln!(out, "{c:?},{v:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub point: BoundaryPoint,
    pub objective: f64,
    /// All sampled coordinates coincide; the threshold carries no information.
    pub degenerate: bool,
}

fn classify(slice: &StepSlice, threshold_coord: f64, objective: f64) -> Location {
    let (lo, hi) = slice.coord_range();
    let threshold = to_coord(slice.kind, threshold_coord);
    let point = if threshold_coord <= lo {
        BoundaryPoint::never(slice.kind, threshold)
    } else if threshold_coord > hi {
        BoundaryPoint::always(slice.kind, threshold)
    } else {
        BoundaryPoint::located(threshold)
    };
    Location {
        point,
        objective,
        degenerate: lo == hi,
    }
}

fn check_slice(slice: &StepSlice) -> Result<()> {
    if slice.is_empty() {
        return Err(invalid("cannot locate a boundary on an empty sample"));
    }
    Ok(())
}

/// Maximizes the objective over the sampled coordinates (plus the strike).
/// Ties go to the smaller exercise region. Cost is one sort plus a scan.
pub fn locate_boundary_mode_a(slice: &StepSlice) -> Result<Location> {
    check_slice(slice)?;
    let n = slice.len();
    let cx = slice.strike_coord();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| slice.coord(a).total_cmp(&slice.coord(b)).then(a.cmp(&b)));

    let den: f64 = slice.weight.iter().sum();
    let base: f64 = (0..n).map(|p| slice.weight[p] * slice.hold[p]).sum();
    let first = slice.coord(order[0]).min(cx);
    let mut best = (first, base);
    let mut gain = 0.0;
    let mut k = 0;
    while k < n {
        let c = slice.coord(order[k]);
        if c >= cx {
            break;
        }
        // candidate c exercises everything strictly below it: order[..k]
        if base + gain > best.1 {
            best = (c, base + gain);
        }
        while k < n && slice.coord(order[k]) == c {
            let p = order[k];
            gain += slice.weight[p] * (slice.exercise[p] - slice.hold[p]);
            k += 1;
        }
    }
    if base + gain > best.1 {
        best = (cx, base + gain);
    }
    Ok(classify(slice, best.0, best.1 / den))
}

/// Objective at `sites` equally spaced grid candidates starting at `lo`,
/// in O(N + sites).
fn grid_objective(slice: &StepSlice, lo: f64, h: f64, sites: usize) -> Vec<f64> {
    let mut diff = vec![0.0; sites + 1];
    let mut base = 0.0;
    let mut den = 0.0;
    let site = |j: usize| lo + j as f64 * h;
    for p in 0..slice.len() {
        let w = slice.weight[p];
        base += w * slice.hold[p];
        den += w;
        let c = slice.coord(p);
        // first site strictly above c
        let mut j = if h > 0.0 {
            (((c - lo) / h).floor() + 1.0).clamp(0.0, sites as f64) as usize
        } else if c < lo {
            0
        } else {
            sites
        };
        while j > 0 && site(j - 1) > c {
            j -= 1;
        }
        while j < sites && site(j) <= c {
            j += 1;
        }
        diff[j] += w * (slice.exercise[p] - slice.hold[p]);
    }
    let mut out = Vec::with_capacity(sites);
    let mut acc = base;
    for d in diff.iter().take(sites) {
        acc += d;
        out.push(acc / den);
    }
    out
}

/// Number of local maxima, treating runs of equal values as one point.
pub fn count_local_maxima(values: &[f64]) -> usize {
    let mut runs: Vec<f64> = Vec::with_capacity(values.len());
    for &v in values {
        if runs.last() != Some(&v) {
            runs.push(v);
        }
    }
    if runs.len() <= 1 {
        return 1;
    }
    (0..runs.len())
        .filter(|&k| {
            let left = k == 0 || runs[k - 1] < runs[k];
            let right = k + 1 == runs.len() || runs[k + 1] < runs[k];
            left && right
        })
        .count()
}

/// Coarse-to-fine grid search over thresholds spanning the sampled range
/// (capped at the strike). Each level costs O(N); refinement stops when the
/// spacing drops to `tol` or the current grid shows more than one local maximum.
pub fn locate_boundary_mode_b(slice: &StepSlice, tol: f64) -> Result<Location> {
    check_slice(slice)?;
    if !(tol.is_finite() && tol > 0.0) {
        return Err(invalid(format!("grid tolerance must be positive, got {tol}")));
    }
    let (min, max) = slice.coord_range();
    let cx = slice.strike_coord();
    let (lo_bound, hi_bound) = (min, cx);
    if lo_bound >= hi_bound || min == max {
        // nothing in the money, or a single point: the exact search is trivial here
        return locate_boundary_mode_a(slice);
    }
    let sites = GRID_SITES;
    let span = (sites - 1) as f64;
    let mut lo = lo_bound;
    let mut h = (hi_bound - lo_bound) / span;
    loop {
        let values = grid_objective(slice, lo, h, sites);
        let mut jb = 0;
        for j in 1..sites {
            if values[j] > values[jb] {
                jb = j;
            }
        }
        let best = lo + jb as f64 * h;
        if h <= tol || count_local_maxima(&values) > 1 {
            return Ok(classify(slice, best, values[jb]));
        }
        let h_next = h / GRID_REFINE;
        let mut lo_next = (best - 0.5 * span * h_next).max(lo_bound);
        if lo_next + span * h_next > hi_bound {
            lo_next = (hi_bound - span * h_next).max(lo_bound);
        }
        lo = lo_next;
        h = h_next;
    }
}

pub fn locate(slice: &StepSlice, mode: SearchMode, tol: f64) -> Result<Location> {
    match mode {
        SearchMode::Exact => locate_boundary_mode_a(slice),
        SearchMode::Grid => locate_boundary_mode_b(slice, tol),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutoffDecision {
    ContinueTracking,
    /// Every earlier index keeps the boundary outside the sample on this side.
    FreezeOutside(RangeFlag),
}

/// Freezes tracking once the located threshold reaches the lowest or highest
/// sampled value.
pub fn early_cutoff_check(slice: &StepSlice, located: &BoundaryPoint) -> CutoffDecision {
    if slice.is_empty() {
        return CutoffDecision::ContinueTracking;
    }
    let (lo, hi) = slice
        .value
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if located.threshold <= lo {
        CutoffDecision::FreezeOutside(RangeFlag::BelowSample)
    } else if located.threshold >= hi {
        CutoffDecision::FreezeOutside(RangeFlag::AboveSample)
    } else {
        CutoffDecision::ContinueTracking
    }
}

/// Cutoff for a binned slice: freeze only when every bin agrees on the side.
pub fn early_cutoff_binned(binned: &BinnedBoundary) -> CutoffDecision {
    let slice = BoundarySlice::Binned(binned.clone());
    match slice.uniform_flag() {
        Some(RangeFlag::Located) | None => CutoffDecision::ContinueTracking,
        Some(flag) => CutoffDecision::FreezeOutside(flag),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlashlightConfig {
    pub n_aux: usize,
    /// Half-width of the start window in units of `sigma sqrt(dt)` (log space).
    pub width: f64,
}

impl Default for FlashlightConfig {
    fn default() -> Self {
        Self {
            n_aux: 1000,
            width: 4.0,
        }
    }
}

/// Auxiliary path segments started around the boundary estimate of index
/// `i + 1`, evolved to expiry under the later (already fixed) boundary.
/// The returned slice only feeds the objective at index `i`.
#[allow(clippy::too_many_arguments)]
pub fn flashlight_augment(
    i: usize,
    prev_threshold: f64,
    params: &ProcessParams,
    grid: &TimeGrid,
    contract: &ContractSpec,
    later: &ExerciseBoundary,
    config: FlashlightConfig,
    seed: u64,
) -> Result<StepSlice> {
    if contract.kind.averaging().is_some() {
        return Err(invalid("flashlight segments are only defined for vanilla contracts"));
    }
    if !(prev_threshold.is_finite() && prev_threshold > 0.0) {
        return Err(invalid("flashlight needs a positive previous threshold"));
    }
    let n = grid.n_steps();
    let kind = contract.kind;
    let half = config.width * params.sigma * grid.dt(i).sqrt();
    let mu = params.log_drift();
    let center = prev_threshold.ln();
    let mut out = StepSlice {
        kind,
        strike: contract.strike,
        value: Vec::with_capacity(config.n_aux),
        spot: Vec::with_capacity(config.n_aux),
        exercise: Vec::with_capacity(config.n_aux),
        hold: Vec::with_capacity(config.n_aux),
        weight: vec![1.0; config.n_aux],
    };
    for a in 0..config.n_aux {
        let stream = ((i as u64) << 40) | a as u64;
        let mut rng = PathRng::new(seed, DOMAIN_FLASHLIGHT, stream);
        let mut x = center + half * (2.0 * rng.uniform() - 1.0);
        let s_i = x.exp();
        let mut later_value = 0.0;
        let mut disc = 1.0;
        for k in (i + 1)..=n {
            let dt = grid.dt(k - 1);
            x += mu * dt + params.sigma * dt.sqrt() * rng.normal();
            if k > i + 1 {
                disc *= (-params.rate * grid.dt(k - 1)).exp();
            }
            let state = AugmentedState::initial(x.exp());
            let g = exercise_payoff(contract, state);
            if later.exercises(k, state, g) {
                later_value = disc * g;
                break;
            }
        }
        let state = AugmentedState::initial(s_i);
        out.value.push(s_i);
        out.spot.push(s_i);
        out.exercise.push(exercise_payoff(contract, state));
        out.hold.push((-params.rate * grid.dt(i)).exp() * later_value);
    }
    Ok(out)
}

/// Equal-population bins of `S`, each optimized separately over the running average.
pub fn locate_binned_boundary(
    slice: &StepSlice,
    bins: usize,
    min_bin_paths: usize,
    mode: SearchMode,
    tol: f64,
) -> Result<BinnedBoundary> {
    check_slice(slice)?;
    if bins == 0 {
        return Err(invalid("bin count must be at least 1"));
    }
    if slice.kind.averaging().is_none() {
        return Err(invalid("binned boundaries apply to average contracts"));
    }
    let n = slice.len();
    let mut sorted = slice.spot.clone();
    sorted.sort_unstable_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|k| sorted[k * n / bins]).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); bins];
    for p in 0..n {
        members[edges.partition_point(|&e| e <= slice.spot[p])].push(p);
    }
    let mut points: Vec<Option<BoundaryPoint>> = Vec::with_capacity(bins);
    for idx in &members {
        if idx.len() >= min_bin_paths.max(1) {
            let sub = slice.subset(idx);
            points.push(Some(locate(&sub, mode, tol)?.point));
        } else {
            points.push(None);
        }
    }
    if points.iter().all(Option::is_none) {
        let pt = locate(slice, mode, tol)?.point;
        return Ok(BinnedBoundary {
            edges,
            points: vec![pt; bins],
        });
    }
    let filled: Vec<BoundaryPoint> = (0..bins)
        .map(|k| match points[k] {
            Some(pt) => pt,
            None => {
                let src = (1..bins)
                    .flat_map(|d| [k.checked_sub(d), Some(k + d)])
                    .flatten()
                    .find(|&j| j < bins && points[j].is_some())
                    .expect("at least one populated bin");
                BoundaryPoint {
                    inherited: true,
                    ..points[src].expect("populated")
                }
            }
        })
        .collect();
    Ok(BinnedBoundary {
        edges,
        points: filled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::ExerciseStyle;

    fn put_slice(values: &[f64], exercise: &[f64], hold: &[f64]) -> StepSlice {
        StepSlice {
            kind: OptionKind::VanillaPut,
            strike: 100.0,
            value: values.to_vec(),
            spot: values.to_vec(),
            exercise: exercise.to_vec(),
            hold: hold.to_vec(),
            weight: vec![1.0; values.len()],
        }
    }

    fn vanilla_put_slice(spots: &[f64], hold: &[f64]) -> StepSlice {
        let ex: Vec<f64> = spots.iter().map(|s| (100.0 - s).max(0.0)).collect();
        put_slice(spots, &ex, hold)
    }

    #[test]
    fn policy_payoff_single_path() {
        let s = vanilla_put_slice(&[90.0], &[7.0]);
        assert_eq!(policy_payoff(&s, 0, 95.0), 10.0);
        assert_eq!(policy_payoff(&s, 0, 85.0), 7.0);
    }

    #[test]
    fn objective_limits() {
        let s = vanilla_put_slice(&[80.0, 90.0, 95.0], &[15.0, 4.0, 6.0]);
        assert_eq!(objective(&s, 1.0), s.mean_hold());
        assert_eq!(objective(&s, 99.0), s.mean_exercise());
        let two = put_slice(&[1.0, 2.0], &[10.0, 0.0], &[0.0, 0.0]);
        assert_eq!(objective(&two, 1000.0), 5.0);
    }

    #[test]
    fn mode_a_three_paths() {
        // exercising the 80 path gains 5, exercising 90 loses 4, 95 loses 1
        let s = vanilla_put_slice(&[80.0, 90.0, 95.0], &[15.0, 14.0, 6.0]);
        let loc = locate_boundary_mode_a(&s).unwrap();
        assert_eq!(loc.point.threshold, 90.0);
        assert_eq!(loc.point.flag, RangeFlag::Located);
        // brute force over the three sampled candidates
        let best = [80.0, 90.0, 95.0]
            .into_iter()
            .max_by(|a, b| objective(&s, *a).total_cmp(&objective(&s, *b)))
            .unwrap();
        assert_eq!(best, 90.0);
    }

    #[test]
    fn mode_a_never_exercise() {
        let s = vanilla_put_slice(&[80.0, 90.0, 95.0], &[30.0, 30.0, 30.0]);
        let loc = locate_boundary_mode_a(&s).unwrap();
        assert!(loc.point.threshold <= 80.0);
        assert_eq!(loc.point.flag, RangeFlag::BelowSample);
        assert_eq!(
            early_cutoff_check(&s, &loc.point),
            CutoffDecision::FreezeOutside(RangeFlag::BelowSample)
        );
    }

    #[test]
    fn mode_a_prefers_hold_side_on_ties() {
        let s = vanilla_put_slice(&[80.0, 90.0], &[20.0, 10.0]);
        let loc = locate_boundary_mode_a(&s).unwrap();
        assert_eq!(loc.point.flag, RangeFlag::BelowSample);
    }

    #[test]
    fn mode_a_degenerate_sample() {
        let s = vanilla_put_slice(&[90.0; 5], &[0.5; 5]);
        let loc = locate_boundary_mode_a(&s).unwrap();
        assert!(loc.degenerate);
        assert_eq!(loc.point.flag, RangeFlag::AboveSample);
        assert_eq!(loc.point.threshold, 100.0);
    }

    #[test]
    fn expiry_argmax_is_strike() {
        // no later dates: hold value is zero; brute-force over a dense candidate set
        let spots = [70.0, 85.0, 99.0, 101.0, 130.0];
        let s = vanilla_put_slice(&spots, &[0.0; 5]);
        let loc = locate_boundary_mode_a(&s).unwrap();
        assert_eq!(loc.point.threshold, 100.0);
        let best = (0..=2000)
            .map(|k| 50.0 + k as f64 * 0.05)
            .fold((0.0, f64::NEG_INFINITY), |acc, c| {
                let v = objective(&s, c);
                if v > acc.1 {
                    (c, v)
                } else {
                    acc
                }
            });
        // the brute-force maximizer set is (99, 101]; the smallest exercise region containing every paying path ends at X
        assert!(best.0 > 99.0 && best.0 <= 101.0);
        assert_eq!(objective(&s, 100.0), best.1);
    }

    #[test]
    fn interior_threshold_continues() {
        let s = vanilla_put_slice(&[80.0, 90.0, 95.0], &[15.0, 14.0, 6.0]);
        let pt = BoundaryPoint::located(90.0);
        assert_eq!(early_cutoff_check(&s, &pt), CutoffDecision::ContinueTracking);
        let at_min = BoundaryPoint::located(80.0);
        assert_eq!(
            early_cutoff_check(&s, &at_min),
            CutoffDecision::FreezeOutside(RangeFlag::BelowSample)
        );
    }

    #[test]
    fn local_maxima_counting() {
        assert_eq!(count_local_maxima(&[1.0, 2.0, 3.0, 2.0, 1.0]), 1);
        assert_eq!(count_local_maxima(&[1.0, 2.0, 2.0, 2.0, 1.0]), 1);
        assert_eq!(count_local_maxima(&[3.0, 2.0, 3.0]), 2);
        assert_eq!(count_local_maxima(&[1.0, 1.0]), 1);
        assert_eq!(count_local_maxima(&[1.0, 2.0]), 1);
    }

    fn unimodal_slice(n: usize, boundary: f64) -> StepSlice {
        // exercise beats holding by a fixed margin below `boundary`, loses above
        let spots: Vec<f64> = (0..n).map(|k| 60.0 + 40.0 * k as f64 / n as f64).collect();
        let ex: Vec<f64> = spots.iter().map(|s| 100.0 - s).collect();
        let hold: Vec<f64> = spots
            .iter()
            .zip(&ex)
            .map(|(s, e)| if *s < boundary { e - 0.5 } else { e + 0.5 })
            .collect();
        put_slice(&spots, &ex, &hold)
    }

    #[test]
    fn mode_b_matches_exhaustive_grid() {
        let s = unimodal_slice(400, 83.3);
        let tol = 0.01;
        let loc = locate_boundary_mode_b(&s, tol).unwrap();
        let exhaustive = (0..=4000)
            .map(|k| 60.0 + k as f64 * 0.01)
            .fold((0.0, f64::NEG_INFINITY), |acc, c| {
                let v = objective(&s, c);
                if v > acc.1 {
                    (c, v)
                } else {
                    acc
                }
            });
        assert!((loc.objective - exhaustive.1).abs() < 1e-12);
        assert!((loc.point.threshold - exhaustive.0).abs() <= 0.1 + tol);
    }

    #[test]
    fn mode_b_coarse_when_tol_is_wide() {
        let s = unimodal_slice(400, 83.3);
        let loc = locate_boundary_mode_b(&s, 1e6).unwrap();
        let (lo, hi) = (60.0, 100.0);
        let h = (hi - lo) / 63.0;
        let sites: Vec<f64> = (0..64).map(|j| lo + j as f64 * h).collect();
        let best = sites
            .iter()
            .copied()
            .fold((0.0, f64::NEG_INFINITY), |acc, c| {
                let v = objective(&s, c);
                if v > acc.1 {
                    (c, v)
                } else {
                    acc
                }
            });
        assert!((loc.point.threshold - best.0).abs() < 1e-9);
        assert!(locate_boundary_mode_b(&s, 0.0).is_err());
    }

    #[test]
    fn modes_agree_on_unimodal_sample() {
        let s = unimodal_slice(1000, 77.7);
        let a = locate_boundary_mode_a(&s).unwrap();
        let b = locate_boundary_mode_b(&s, 1e-9).unwrap();
        let set = |t: f64| (0..s.len()).filter(|&p| s.value[p] < t).count();
        assert_eq!(set(a.point.threshold), set(b.point.threshold));
        assert!((a.objective - b.objective).abs() < 1e-12);
    }

    #[test]
    fn grid_objective_matches_direct() {
        let s = unimodal_slice(333, 81.0);
        let (lo, h) = (59.0, 0.7);
        let fast = grid_objective(&s, lo, h, 64);
        for (j, v) in fast.iter().enumerate() {
            let direct = objective(&s, lo + j as f64 * h);
            assert!((v - direct).abs() < 1e-12, "site {j}");
        }
    }

    #[test]
    fn call_coordinates_flip() {
        let spots = [90.0, 110.0, 130.0];
        let ex: Vec<f64> = spots.iter().map(|s| (s - 100.0f64).max(0.0)).collect();
        let s = StepSlice {
            kind: OptionKind::VanillaCall,
            strike: 100.0,
            value: spots.to_vec(),
            spot: spots.to_vec(),
            exercise: ex,
            hold: vec![1.0, 5.0, 40.0],
            weight: vec![1.0; 3],
        };
        // exercising 130 loses; exercising nothing is best
        let loc = locate_boundary_mode_a(&s).unwrap();
        assert_eq!(loc.point.flag, RangeFlag::AboveSample);
        assert!(!loc.point.exercises(OptionKind::VanillaCall, 130.0, 30.0));
        // above strike, located call threshold exercises higher spots
        let pt = BoundaryPoint::located(120.0);
        assert!(pt.exercises(OptionKind::VanillaCall, 130.0, 30.0));
        assert!(!pt.exercises(OptionKind::VanillaCall, 115.0, 15.0));
    }

    #[test]
    fn binned_single_bin_reduces_to_one_dimension() {
        let s_bar = [80.0, 90.0, 95.0, 97.0];
        let spot = [70.0, 130.0, 100.0, 85.0];
        let ex: Vec<f64> = s_bar.iter().map(|a| 100.0 - a).collect();
        let slice = StepSlice {
            kind: OptionKind::GeoAvgPut,
            strike: 100.0,
            value: s_bar.to_vec(),
            spot: spot.to_vec(),
            exercise: ex,
            hold: vec![10.0, 11.0, 1.0, 2.0],
            weight: vec![1.0; 4],
        };
        let binned = locate_binned_boundary(&slice, 1, 1, SearchMode::Exact, 1e-3).unwrap();
        let flat = locate_boundary_mode_a(&slice).unwrap();
        assert_eq!(binned.points, vec![flat.point]);
        assert!(binned.edges.is_empty());
    }

    #[test]
    fn starved_bins_inherit() {
        let n = 25;
        let spot: Vec<f64> = (0..n).map(|k| 80.0 + k as f64).collect();
        let s_bar: Vec<f64> = (0..n).map(|k| 85.0 + 0.5 * k as f64).collect();
        let ex: Vec<f64> = s_bar.iter().map(|a| 100.0 - a).collect();
        let slice = StepSlice {
            kind: OptionKind::ArithAvgPut,
            strike: 100.0,
            value: s_bar,
            spot,
            exercise: ex.clone(),
            hold: ex.iter().map(|e| e - 0.1).collect(),
            weight: vec![1.0; n],
        };
        // 5 bins of 5 paths, minimum 10: nothing populated, falls back to one optimization
        let b = locate_binned_boundary(&slice, 5, 10, SearchMode::Exact, 1e-3).unwrap();
        assert_eq!(b.points.len(), 5);
        // 2 bins of 12/13 with minimum 13: one inherits
        let b = locate_binned_boundary(&slice, 2, 13, SearchMode::Exact, 1e-3).unwrap();
        assert_eq!(b.points.iter().filter(|p| p.inherited).count(), 1);
    }

    #[test]
    fn flashlight_lights_an_empty_region() {
        let params = ProcessParams::new(0.10, 0.40, 50.0).unwrap();
        let contract =
            ContractSpec::new(OptionKind::VanillaPut, 50.0, 5.0 / 12.0, ExerciseStyle::American, 50)
                .unwrap();
        let grid = TimeGrid::for_contract(&contract).unwrap();
        let mut later = ExerciseBoundary::never_exercise(&contract, &grid);
        for k in 46..50 {
            later.slices[k] = BoundarySlice::Scalar(BoundaryPoint::located(45.0));
        }
        // original sample far above the boundary: every path holds
        let spots: Vec<f64> = (0..200).map(|k| 70.0 + 0.1 * k as f64).collect();
        let sample = StepSlice {
            strike: 50.0,
            ..put_slice(&spots, &[0.0; 200], &[0.0; 200])
        };
        let plain = locate_boundary_mode_a(&sample).unwrap();
        assert_ne!(plain.point.flag, RangeFlag::Located);

        let cfg = FlashlightConfig { n_aux: 2000, width: 4.0 };
        let aux = flashlight_augment(45, 45.0, &params, &grid, &contract, &later, cfg, 3).unwrap();
        let mut combined = sample.clone();
        combined.extend(&aux);
        let lit = locate_boundary_mode_a(&combined).unwrap();
        assert_eq!(lit.point.flag, RangeFlag::Located);
        assert!(lit.point.threshold > 35.0 && lit.point.threshold < 50.0);

        let none = flashlight_augment(
            45,
            45.0,
            &params,
            &grid,
            &contract,
            &later,
            FlashlightConfig { n_aux: 0, width: 4.0 },
            3,
        )
        .unwrap();
        let mut same = sample.clone();
        same.extend(&none);
        assert_eq!(objective(&same, 72.0), objective(&sample, 72.0));
    }
}
