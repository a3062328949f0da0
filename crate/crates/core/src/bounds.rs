//! Falsification tests and compatibility bounds for the proxy channel.
//!
//! The channel entry q(w0 | r1) is point identified as p(w0 | x1); the other
//! entry q(w0 | r0) is only bounded. All single-indicator computations run on
//! an [`IndicatorView`], so the same code serves the unstratified, stratified,
//! shared-channel and per-indicator MNAR cases.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist::law::{Covariates, IndicatorView, ObservedLaw};
use crate::dist::{BinaryChannel, ProxyChannel};
use crate::error::{Error, Result};
use crate::restore::view_restorable;
use crate::{INPUT_TOL, STRUCT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Mcar,
    /// Channel q(W | R, C) varies by stratum.
    MarStratified,
    /// One channel q(W | R) shared by all strata.
    MarShared,
    /// Per-indicator bounds, every other recorded variable as covariate.
    Mnar,
}

impl Model {
    pub const ALL: [Model; 4] = [Model::Mcar, Model::MarStratified, Model::MarShared, Model::Mnar];

    pub fn name(self) -> &'static str {
        match self {
            Self::Mcar => "mcar",
            Self::MarStratified => "mar-stratified",
            Self::MarShared => "mar-shared",
            Self::Mnar => "mnar",
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL.into_iter().find(|m| m.name() == norm).ok_or_else(|| {
            format!("unknown model `{s}` (expected mcar, mar-stratified, mar-shared or mnar)")
        })
    }
}

/// Interval for q(w0 | r0), with open/closed ends and an optional excluded
/// interior point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInterval {
    pub lower: f64,
    pub upper: f64,
    pub lower_open: bool,
    pub upper_open: bool,
    pub excluded_point: Option<f64>,
    /// Set only in the excluded-point case, where zero inflation cannot occur.
    pub no_inflation: bool,
}

impl BoundInterval {
    pub fn closed(lower: f64, upper: f64) -> Self {
        Self { lower, upper, lower_open: false, upper_open: false, excluded_point: None, no_inflation: false }
    }

    /// (0, 1) minus `p`.
    pub fn punctured(p: f64) -> Self {
        Self { lower: 0.0, upper: 1.0, lower_open: true, upper_open: true, excluded_point: Some(p), no_inflation: true }
    }

    pub fn point(p: f64) -> Self {
        Self::closed(p, p)
    }

    /// Membership with absolute slack on the ends; the excluded point itself
    /// is never a member.
    pub fn contains(&self, q: f64, slack: f64) -> bool {
        if self.excluded_point == Some(q) {
            return false;
        }
        let lo_ok = if self.lower_open { q > self.lower - slack } else { q >= self.lower - slack };
        let hi_ok = if self.upper_open { q < self.upper + slack } else { q <= self.upper + slack };
        lo_ok && hi_ok
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

impl fmt::Display for BoundInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = if self.lower_open { '(' } else { '[' };
        let r = if self.upper_open { ')' } else { ']' };
        write!(f, "{l}{}, {}{r}", self.lower, self.upper)?;
        if let Some(p) = self.excluded_point {
            write!(f, " \\ {{{p}}}")?;
        }
        Ok(())
    }
}

/// Bound for one indicator (and one stratum under a stratified channel).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundEntry {
    /// Zero-based indicator index.
    pub indicator: usize,
    pub stratum: Option<usize>,
    pub q_w0_given_r1: f64,
    pub interval: BoundInterval,
    /// Implied interval for p(Rₖ = 0) (conditional on the stratum when stratified).
    pub r0_interval: Option<BoundInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub model: Model,
    pub entries: Vec<BoundEntry>,
    /// False for the per-indicator MNAR bounds, which are valid but not sharp.
    pub sharp: bool,
    pub falsification: FalsificationReport,
}

impl BoundReport {
    /// The first entry's interval (the only one for single-interval models).
    pub fn interval(&self) -> &BoundInterval {
        &self.entries[0].interval
    }

    pub fn q_w0_given_r1(&self) -> f64 {
        self.entries[0].q_w0_given_r1
    }
}

/// One checked observed-law constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub indicator: usize,
    /// `x=<value>` for an equality constraint on p(w0 | x), or `dichotomy`.
    pub constraint: String,
    pub stratum: Option<usize>,
    pub deviation: f64,
    pub tol: f64,
}

impl Residual {
    pub fn passes(&self) -> bool {
        self.deviation <= self.tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FalsificationReport {
    pub model: Model,
    pub residuals: Vec<Residual>,
    /// Cells left unchecked because they carry no mass.
    pub skipped: Vec<String>,
    pub pass: bool,
}

impl FalsificationReport {
    /// Residual with the largest excess over its tolerance.
    pub fn worst(&self) -> Option<&Residual> {
        self.residuals.iter().max_by(|a, b| (a.deviation - a.tol).total_cmp(&(b.deviation - b.tol)))
    }

    pub fn max_deviation(&self) -> f64 {
        self.residuals.iter().map(|r| r.deviation).fold(0.0, f64::max)
    }

    fn to_error(&self) -> Error {
        let w = self.worst().expect("a failing report has residuals");
        let mut constraint = w.constraint.clone();
        if let Some(c) = w.stratum {
            constraint += &format!(" (stratum {c})");
        }
        if self.model == Model::Mnar {
            constraint = format!("indicator {}: {constraint}", w.indicator + 1);
        }
        Error::FalsifiedModel { model: self.model.to_string(), constraint, deviation: w.deviation }
    }
}

/// Tolerance for falsification residuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Tolerance {
    Absolute(f64),
    /// `k` standard errors of the compared proportions, for a law estimated
    /// from `n` records (never below the input tolerance).
    Sampling { n: f64, k: f64 },
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::Absolute(INPUT_TOL)
    }
}

impl Tolerance {
    /// Tolerance for comparing two conditionals p_a, p_b estimated from cells
    /// of probability mass m_a, m_b.
    fn for_pair(self, pa: f64, ma: f64, pb: f64, mb: f64) -> f64 {
        match self {
            Self::Absolute(t) => t,
            Self::Sampling { n, k } => {
                let (na, nb) = (n * ma, n * mb);
                let pooled = (pa * na + pb * nb) / (na + nb);
                let se = (pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb)).sqrt();
                (k * se).max(INPUT_TOL)
            }
        }
    }
}

fn view_for(law: &ObservedLaw, model: Model, k: usize) -> Result<IndicatorView> {
    if model != Model::Mnar && law.n_indicators() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "the {model} model takes one indicator; use mnar for {}",
            law.n_indicators()
        )));
    }
    Ok(match model {
        Model::Mcar => law.view(k, Covariates::None),
        Model::MarStratified | Model::MarShared => law.view(k, Covariates::C),
        Model::Mnar => law.view(k, Covariates::AllOthers),
    })
}

fn pooled_q1(view: &IndicatorView, k: usize) -> Result<f64> {
    view.pooled_w0_given(1).ok_or_else(|| Error::PositivityViolation(format!("p(X{}=1) = 0", k + 1)))
}

fn stratum_q1(view: &IndicatorView, k: usize, z: usize) -> Result<f64> {
    view.w0_given(z, 1).ok_or_else(|| Error::PositivityViolation(format!("p(X{}=1, C={z}) = 0", k + 1)))
}

/// Checks the observed-law equality (and, for shared channels, dichotomy)
/// constraints implied by `model`.
pub fn falsify(law: &ObservedLaw, model: Model, tol: f64) -> Result<FalsificationReport> {
    falsify_with(law, model, Tolerance::Absolute(tol))
}

pub fn falsify_with(law: &ObservedLaw, model: Model, tol: Tolerance) -> Result<FalsificationReport> {
    let n_ind = if model == Model::Mnar { law.n_indicators() } else { 1 };
    let mut residuals = vec![];
    let mut skipped = vec![];
    for k in 0..n_ind {
        let view = view_for(law, model, k)?;
        let label = |z: usize| if model == Model::Mnar { format!("Z{}={z}", k + 1) } else { format!("C={z}") };
        match model {
            Model::Mcar => {
                let q1 = pooled_q1(&view, k)?;
                let m1 = view.pooled_px(1);
                for x in 2..view.nx() {
                    match view.pooled_w0_given(x) {
                        Some(p) => residuals.push(Residual {
                            indicator: k,
                            constraint: format!("x={x}"),
                            stratum: None,
                            deviation: (p - q1).abs(),
                            tol: tol.for_pair(p, view.pooled_px(x), q1, m1),
                        }),
                        None => skipped.push(format!("X{}={x}", k + 1)),
                    }
                }
            }
            Model::MarStratified => {
                for z in 0..view.nz() {
                    let q1 = stratum_q1(&view, k, z)?;
                    for x in 2..view.nx() {
                        match view.w0_given(z, x) {
                            Some(p) => residuals.push(Residual {
                                indicator: k,
                                constraint: format!("x={x}"),
                                stratum: Some(z),
                                deviation: (p - q1).abs(),
                                tol: tol.for_pair(p, view.px(z, x), q1, view.px(z, 1)),
                            }),
                            None => skipped.push(format!("X{}={x},{}", k + 1, label(z))),
                        }
                    }
                }
            }
            Model::MarShared | Model::Mnar => {
                let q1 = pooled_q1(&view, k)?;
                let m1 = view.pooled_px(1);
                if view.pooled_px(0) <= 0.0 {
                    return Err(Error::PositivityViolation(format!("p(X{}=0) = 0", k + 1)));
                }
                // with a single stratum the x=1 equality is an identity
                let first_x = if view.nz() > 1 { 1 } else { 2 };
                // (signed gap, tolerance) per stratum for the dichotomy
                let mut pos: Option<(f64, f64)> = None;
                let mut neg: Option<(f64, f64)> = None;
                for z in 0..view.nz() {
                    if view.pz(z) <= 0.0 {
                        continue;
                    }
                    for x in first_x..view.nx() {
                        match view.w0_given(z, x) {
                            Some(p) => residuals.push(Residual {
                                indicator: k,
                                constraint: format!("x={x}"),
                                stratum: Some(z),
                                deviation: (p - q1).abs(),
                                tol: tol.for_pair(p, view.px(z, x), q1, m1),
                            }),
                            None => skipped.push(format!("X{}={x},{}", k + 1, label(z))),
                        }
                    }
                    match view.w0_given(z, 0) {
                        Some(p) => {
                            let t = tol.for_pair(p, view.px(z, 0), q1, m1);
                            let d = p - q1;
                            let slot = if d > 0.0 { &mut pos } else { &mut neg };
                            let cur = slot.get_or_insert((0.0, 0.0));
                            if d.abs() > cur.0 {
                                *cur = (d.abs(), t);
                            }
                        }
                        None => skipped.push(format!("X{}=0,{}", k + 1, label(z))),
                    }
                }
                if view.nz() > 1 {
                    let (deviation, t) = match (pos, neg) {
                        (Some(p), Some(n)) => (p.0.min(n.0), p.1.max(n.1)),
                        _ => (0.0, tol.for_pair(0.5, 1.0, 0.5, 1.0)),
                    };
                    residuals.push(Residual {
                        indicator: k,
                        constraint: "dichotomy".into(),
                        stratum: None,
                        deviation,
                        tol: t,
                    });
                }
            }
        }
    }
    let pass = residuals.iter().all(Residual::passes);
    Ok(FalsificationReport { model, residuals, skipped, pass })
}

/// q(w0 | r1) = p(w0 | x1) for the single indicator, pooled over strata.
pub fn point_identify_w0_given_r1(law: &ObservedLaw) -> Result<f64> {
    pooled_q1(&law.view(0, Covariates::None), 0)
}

/// q(w0 | r1, c) = p(w0 | x1, c) for every stratum.
pub fn point_identify_w0_given_r1_stratified(law: &ObservedLaw) -> Result<Vec<f64>> {
    let view = law.view(0, Covariates::C);
    (0..view.nz()).map(|z| stratum_q1(&view, 0, z)).collect()
}

/// Tie tolerance between p(w0 | x0) and q(w0 | r1) deciding the no-inflation case.
const TIE_TOL: f64 = STRUCT_TOL;

/// Interval for q(w0 | r0) given p(w0 | x0, c) over the strata that share one
/// channel entry q1. One stratum gives the unstratified trichotomy.
fn shared_interval(model: Model, p0s: &[f64], q1: f64) -> Result<BoundInterval> {
    let above = p0s.iter().any(|&p| p - q1 > TIE_TOL);
    let below = p0s.iter().any(|&p| p - q1 < -TIE_TOL);
    match (above, below) {
        (true, true) => Err(Error::FalsifiedModel {
            model: model.to_string(),
            constraint: "dichotomy".into(),
            deviation: p0s.iter().map(|p| (p - q1).abs()).fold(f64::INFINITY, f64::min),
        }),
        (true, false) => Ok(BoundInterval::closed(p0s.iter().copied().fold(f64::MIN, f64::max), 1.0)),
        (false, true) => Ok(BoundInterval::closed(0.0, p0s.iter().copied().fold(f64::MAX, f64::min))),
        (false, false) => {
            if let Some(&p) = p0s.iter().find(|&&p| p <= 0.0 || p >= 1.0) {
                return Err(Error::FalsifiedModel {
                    model: model.to_string(),
                    constraint: "no-inflation range 0 < p(w0|x0) < 1".into(),
                    deviation: if p <= 0.0 { -p } else { p - 1.0 },
                });
            }
            Ok(BoundInterval::punctured(q1))
        }
    }
}

/// p(W = 0) over a set of strata, and the mass of those strata.
fn w0_mass(view: &IndicatorView, zs: &[usize]) -> (f64, f64) {
    let mut pw0 = 0.0;
    let mut pz = 0.0;
    for &z in zs {
        for x in 0..view.nx() {
            pw0 += view.p(z, x, 0);
        }
        pz += view.pz(z);
    }
    (pw0, pz)
}

/// Bound options shared by the model entry points.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub tol: Tolerance,
    /// Report bounds even when the falsification test fails.
    pub force: bool,
}

/// Bounds under `model`. MNAR yields one entry per indicator.
pub fn bound(law: &ObservedLaw, model: Model, opts: BoundOptions) -> Result<BoundReport> {
    let falsification = falsify_with(law, model, opts.tol)?;
    if !falsification.pass && !opts.force {
        return Err(falsification.to_error());
    }
    let n_ind = if model == Model::Mnar { law.n_indicators() } else { 1 };
    let mut entries = vec![];
    for k in 0..n_ind {
        let view = view_for(law, model, k)?;
        let p0 = |z: usize| {
            view.w0_given(z, 0).ok_or_else(|| Error::PositivityViolation(format!("p(X{}=0, stratum {z}) = 0", k + 1)))
        };
        if model == Model::MarStratified {
            for z in 0..view.nz() {
                let q1 = stratum_q1(&view, k, z)?;
                let interval = shared_interval(model, &[p0(z)?], q1)?;
                let (pw0, pz) = w0_mass(&view, &[z]);
                let r0 = r0_image(pw0 / pz, q1, &interval).ok();
                entries.push(BoundEntry { indicator: k, stratum: Some(z), q_w0_given_r1: q1, interval, r0_interval: r0 });
            }
        } else {
            let q1 = pooled_q1(&view, k)?;
            let live: Vec<usize> = (0..view.nz()).filter(|&z| view.pz(z) > 0.0).collect();
            let p0s: Vec<f64> = live
                .iter()
                .filter(|&&z| view.px(z, 0) > 0.0 || model == Model::Mcar)
                .map(|&z| p0(z))
                .collect::<Result<_>>()?;
            let interval = shared_interval(model, &p0s, q1)?;
            let (pw0, _) = w0_mass(&view, &live);
            let r0 = r0_image(pw0, q1, &interval).ok();
            entries.push(BoundEntry { indicator: k, stratum: None, q_w0_given_r1: q1, interval, r0_interval: r0 });
        }
    }
    Ok(BoundReport { model, entries, sharp: model != Model::Mnar, falsification })
}

pub fn bound_mcar(law: &ObservedLaw) -> Result<BoundReport> {
    bound(law, Model::Mcar, BoundOptions::default())
}

pub fn bound_mar_stratified(law: &ObservedLaw) -> Result<BoundReport> {
    bound(law, Model::MarStratified, BoundOptions::default())
}

pub fn bound_mar_shared(law: &ObservedLaw) -> Result<BoundReport> {
    bound(law, Model::MarShared, BoundOptions::default())
}

/// Valid but not necessarily sharp bound for indicator `k` (zero-based),
/// treating every other recorded variable as a covariate.
pub fn bound_mnar_per_indicator(law: &ObservedLaw, k: usize) -> Result<BoundReport> {
    if k >= law.n_indicators() {
        return Err(Error::ShapeMismatch(format!("no indicator {}", k + 1)));
    }
    let mut rep = bound(law, Model::Mnar, BoundOptions::default())?;
    rep.entries.retain(|e| e.indicator == k);
    rep.falsification.residuals.retain(|r| r.indicator == k);
    Ok(rep)
}

/// Channel implied by a known p(R = 0): q(w0|r1) = p(w0|x1) and
/// q(w0|r0) = (p(w0) − p(w0|x1)·p(R=1)) / p(R=0).
pub fn channel_from_r0_prob(law: &ObservedLaw, p_r0: f64) -> Result<ProxyChannel> {
    let view = law.view(0, Covariates::None);
    let q1 = pooled_q1(&view, 0)?;
    let q = channel_entry_from_r0(view.p_w0(), q1, p_r0)?;
    ProxyChannel::single(q, q1)
}

pub(crate) fn channel_entry_from_r0(p_w0: f64, q1: f64, p_r0: f64) -> Result<f64> {
    if !(p_r0 > 0.0 && p_r0 < 1.0) {
        return Err(Error::IncompatibleR0 { p_r0, q: f64::NAN });
    }
    let q = (p_w0 - q1 * (1.0 - p_r0)) / p_r0;
    if !(-INPUT_TOL..=1.0 + INPUT_TOL).contains(&q) || (q - q1).abs() <= STRUCT_TOL {
        return Err(Error::IncompatibleR0 { p_r0, q });
    }
    Ok(q.clamp(0.0, 1.0))
}

/// p(R = 0) implied by q(w0 | r0) = q: (p(w0) − q1) / (q − q1).
pub(crate) fn r0_from_channel_entry(p_w0: f64, q1: f64, q: f64) -> f64 {
    (p_w0 - q1) / (q - q1)
}

/// Interval for p(R = 0) implied by an interval for q(w0 | r0).
pub fn r0_bounds_from_channel_bounds(law: &ObservedLaw, interval: &BoundInterval) -> Result<BoundInterval> {
    let view = law.view(0, Covariates::None);
    let q1 = pooled_q1(&view, 0)?;
    r0_image(view.p_w0(), q1, interval)
}

fn r0_image(p_w0: f64, q1: f64, iv: &BoundInterval) -> Result<BoundInterval> {
    if iv.no_inflation {
        return Ok(BoundInterval::point(0.0));
    }
    if iv.lower > iv.upper || (iv.lower < q1 - STRUCT_TOL && iv.upper > q1 + STRUCT_TOL) {
        return Err(Error::DegenerateInterval(format!("{iv} straddles q(w0|r1) = {q1}")));
    }
    let f = |q: f64| r0_from_channel_entry(p_w0, q1, q).clamp(0.0, 1.0);
    let out = if iv.lower >= q1 - STRUCT_TOL {
        // decreasing branch
        BoundInterval {
            lower: f(iv.upper),
            upper: f(iv.lower),
            lower_open: iv.upper_open,
            upper_open: iv.lower_open,
            excluded_point: None,
            no_inflation: false,
        }
    } else {
        BoundInterval { excluded_point: None, no_inflation: false, lower: f(iv.lower), upper: f(iv.upper), ..*iv }
    };
    Ok(out)
}

/// Hull of the feasible grid points q0 = i / grid_n for one channel entry.
fn sweep(grid_n: usize, q1: f64, feasible: impl Fn(f64) -> bool) -> Result<BoundInterval> {
    let mut first: Option<usize> = None;
    let mut last = 0;
    // longest infeasible run strictly inside the feasible hull
    let mut gap: Option<(usize, usize)> = None;
    let mut run_start: Option<usize> = None;
    for i in 0..=grid_n {
        let q0 = i as f64 / grid_n as f64;
        let ok = (q0 - q1).abs() > STRUCT_TOL && feasible(q0);
        if ok {
            if let (Some(s), Some(_)) = (run_start.take(), first) {
                if gap.is_none_or(|(a, b)| i - s > b - a) {
                    gap = Some((s, i));
                }
            }
            first.get_or_insert(i);
            last = i;
        } else if run_start.is_none() {
            run_start = Some(i);
        }
    }
    let first = first.ok_or(Error::NoFeasiblePoint)?;
    let g = grid_n as f64;
    let mut iv = BoundInterval::closed(first as f64 / g, last as f64 / g);
    if let Some((a, b)) = gap {
        let (lo, hi) = ((a as f64 - 1.0) / g, b as f64 / g);
        iv.excluded_point = Some(if q1 > lo && q1 < hi { q1 } else { 0.5 * (lo + hi) });
        iv.no_inflation = true;
    }
    Ok(iv)
}

/// Independent numerical check of the analytic bounds: sweeps q(w0 | r0) over
/// {i / grid_n} with q(w0 | r1) fixed at its identified value, keeps the
/// points where restoration succeeds and returns their hull.
pub fn grid_feasibility_oracle(law: &ObservedLaw, model: Model, grid_n: usize) -> Result<Vec<BoundEntry>> {
    if grid_n < 100 {
        return Err(Error::Unsupported(format!("oracle grid of {grid_n} points; at least 100 are needed")));
    }
    let n_ind = if model == Model::Mnar { law.n_indicators() } else { 1 };
    let mut out = vec![];
    for k in 0..n_ind {
        let view = view_for(law, model, k)?;
        if model == Model::MarStratified {
            for z in 0..view.nz() {
                let q1 = stratum_q1(&view, k, z)?;
                let single = IndicatorView::from_cells(view.nx(), 1, view.cells()[z * view.nx() * 2..(z + 1) * view.nx() * 2].to_vec());
                let iv = sweep(grid_n, q1, |q0| view_restorable(&single, |_| BinaryChannel { w0_r0: q0, w0_r1: q1 }))?;
                out.push(BoundEntry { indicator: k, stratum: Some(z), q_w0_given_r1: q1, interval: iv, r0_interval: None });
            }
        } else {
            let q1 = pooled_q1(&view, k)?;
            let iv = sweep(grid_n, q1, |q0| view_restorable(&view, |_| BinaryChannel { w0_r0: q0, w0_r1: q1 }))?;
            out.push(BoundEntry { indicator: k, stratum: None, q_w0_given_r1: q1, interval: iv, r0_interval: None });
        }
    }
    Ok(out)
}
