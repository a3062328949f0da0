//! From a restored ZI law to the full and target laws, and sensitivity curves
//! that sweep the channel over its compatibility bound.

use serde::{Deserialize, Serialize};

use crate::bounds::{bound, r0_from_channel_entry, BoundInterval, BoundOptions, BoundReport, Model};
use crate::dist::law::{Covariates, FullLaw, ObservedLaw, ZiLaw};
use crate::dist::table::{unravel, Axis, ProbTable, Role};
use crate::dist::{BinaryChannel, ProxyChannel};
use crate::error::{Error, Result};
use crate::graph::{classify_missingness, full_law_identifiable, MDag, MissClass, NodeKind, Verdict};
use crate::restore::restore_general;

fn single_indicator(zi: &ZiLaw) -> Result<()> {
    if zi.n_indicators() != 1 {
        return Err(Error::ShapeMismatch("closed-form identification takes a single indicator".into()));
    }
    Ok(())
}

/// p(x(1), r, w, c) = p(X = x(1) | R = 1, c) · p(r, w, c).
fn full_law_by_stratum(zi: &ZiLaw) -> Result<FullLaw> {
    single_indicator(zi)?;
    let t = zi.table();
    let cards = t.cards();
    let nx = zi.x_card(0);
    let nc = zi.c_card();
    // p(R=1, x, c) and p(r, w, c) (w collapsed to one value when there is no proxy)
    let nw = if zi.has_proxy() { 2 } else { 1 };
    let mut r1xc = vec![0.0; nx * nc];
    let mut rwc = vec![0.0; 2 * nw * nc];
    for (flat, &p) in t.probs().iter().enumerate() {
        let idx = unravel(flat, &cards);
        let (r, x, c) = (idx[0], idx[1], idx[idx.len() - 1]);
        let w = if zi.has_proxy() { idx[2] } else { 0 };
        if r == 1 {
            r1xc[x * nc + c] += p;
        }
        rwc[(r * nw + w) * nc + c] += p;
    }
    for c in 0..nc {
        let pc: f64 = (0..2 * nw).map(|i| rwc[i * nc + c]).sum();
        let pr1: f64 = (0..nx).map(|x| r1xc[x * nc + c]).sum();
        if pc > 0.0 && pr1 <= 0.0 {
            let at = if nc > 1 { format!(" in stratum C={c}") } else { String::new() };
            return Err(Error::PositivityViolation(format!("p(R=1) = 0{at}")));
        }
    }
    let mut axes = vec![Axis::new(Role::Counterfactual(0), nx), Axis::new(Role::R(0), 2)];
    if zi.has_proxy() {
        axes.push(t.axes()[2].clone());
    }
    axes.push(t.axes()[t.axes().len() - 1].clone());
    let mut probs = Vec::with_capacity(nx * 2 * nw * nc);
    for x in 0..nx {
        for r in 0..2 {
            for w in 0..nw {
                for c in 0..nc {
                    let pr1: f64 = (0..nx).map(|x| r1xc[x * nc + c]).sum();
                    let cond = if pr1 > 0.0 { r1xc[x * nc + c] / pr1 } else { 0.0 };
                    probs.push(cond * rwc[(r * nw + w) * nc + c]);
                }
            }
        }
    }
    FullLaw::new(ProbTable::joint(axes, probs)?)
}

/// Full law under MCAR: p(x(1), r, w) = p(X = x(1) | R = 1) · p(r, w).
pub fn full_law_mcar(zi: &ZiLaw) -> Result<FullLaw> {
    if zi.c_card() != 1 {
        return Err(Error::ShapeMismatch("MCAR identification takes a law without covariates".into()));
    }
    full_law_by_stratum(zi)
}

/// Full law under MAR: p(x(1), r, w, c) = p(X = x(1) | R = 1, c) · p(r, w, c).
pub fn full_law_mar(zi: &ZiLaw) -> Result<FullLaw> {
    full_law_by_stratum(zi)
}

/// p(X(1) | C = c) for every stratum, indexed `[c][x]`.
pub fn target_by_stratum(full: &FullLaw) -> Vec<Vec<f64>> {
    let t = full.table();
    let cond = t
        .condition(&[Role::Counterfactual(0)], &[Role::C])
        .expect("single-indicator full law");
    let nx = t.axes()[0].card;
    let nc = t.axes()[t.axes().len() - 1].card;
    (0..nc).map(|c| (0..nx).map(|x| cond.probs()[x * nc + c]).collect()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Identification {
    Identified(FullLaw),
    NotIdentified(Verdict),
    /// The criterion passes but no closed form is implemented for this graph.
    NotImplemented(String),
}

/// Gates on the identifiability criterion, then applies the MCAR or MAR
/// closed form.
pub fn identify(zi: &ZiLaw, g: &MDag) -> Result<Identification> {
    if zi.n_indicators() != g.n_indicators() {
        return Err(Error::ShapeMismatch(format!(
            "law has {} indicators, graph has {}",
            zi.n_indicators(),
            g.n_indicators()
        )));
    }
    if zi.c_card() > 1 && g.ids_of(NodeKind::Covariate).is_empty() {
        return Err(Error::ShapeMismatch("law has covariate strata but the graph has no covariate".into()));
    }
    let verdict = full_law_identifiable(g);
    if verdict != Verdict::Identifiable {
        return Ok(Identification::NotIdentified(verdict));
    }
    if zi.n_indicators() > 1 {
        return Ok(Identification::NotImplemented("no closed form for several indicators".into()));
    }
    Ok(match classify_missingness(g) {
        MissClass::Mcar if zi.c_card() == 1 => Identification::Identified(full_law_mcar(zi)?),
        MissClass::Mcar | MissClass::Mar => Identification::Identified(full_law_mar(zi)?),
        MissClass::Mnar => Identification::NotImplemented("general MNAR identifying functional".into()),
    })
}

/// One evaluated channel value on a sensitivity curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// q(w0 | r0); under a stratified channel, the position t in [0, 1]
    /// along every stratum's interval.
    pub q_w0_r0: f64,
    /// q(w0 | r0, c) per stratum (one entry when the channel is shared).
    pub q_by_stratum: Vec<f64>,
    /// Implied p(R = 0).
    pub p_r0: f64,
    /// p(X(1) = x); empty when infeasible.
    pub target: Vec<f64>,
    /// p(X(1) = x | C = c), `[c][x]`; empty when infeasible.
    pub target_by_stratum: Vec<Vec<f64>>,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityCurve {
    pub model: Model,
    pub grid_n: usize,
    pub no_inflation: bool,
    pub points: Vec<CurvePoint>,
}

impl SensitivityCurve {
    /// Range of p(X(1) = x) over feasible points.
    pub fn target_range(&self, x: usize) -> Option<(f64, f64)> {
        self.points.iter().filter(|p| p.feasible).map(|p| p.target[x]).fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }
}

/// Inward-clamped endpoints of an interval for traversal.
fn traversal_ends(iv: &BoundInterval) -> Result<(f64, f64)> {
    const INWARD: f64 = 1e-12;
    let lo = if iv.lower_open { iv.lower + INWARD } else { iv.lower };
    let hi = if iv.upper_open { iv.upper - INWARD } else { iv.upper };
    if hi < lo {
        return Err(Error::EmptyInterval);
    }
    Ok((lo, hi))
}

/// Evaluates restoration and identification at one channel.
pub fn evaluate_channel(law: &ObservedLaw, model: Model, ch: &ProxyChannel) -> Result<(FullLaw, f64)> {
    let law = if model == Model::Mcar { law.collapse_covariates() } else { law.clone() };
    let zi = restore_general(&law, ch)?;
    let full = if model == Model::Mcar { full_law_mcar(&zi)? } else { full_law_mar(&zi)? };
    Ok((full, zi.p_r0(0)))
}

fn point_at(law: &ObservedLaw, model: Model, param: f64, qs: Vec<f64>, q1s: &[f64], p_r0: f64) -> CurvePoint {
    let ch = if model == Model::MarStratified {
        ProxyChannel::Stratified(vec![qs.iter().zip(q1s).map(|(&q0, &q1)| BinaryChannel { w0_r0: q0, w0_r1: q1 }).collect()])
    } else {
        ProxyChannel::Shared(vec![BinaryChannel { w0_r0: qs[0], w0_r1: q1s[0] }])
    };
    match evaluate_channel(law, model, &ch) {
        Ok((full, p)) => CurvePoint {
            q_w0_r0: param,
            q_by_stratum: qs,
            p_r0: p,
            target: full.target().probs().to_vec(),
            target_by_stratum: if model == Model::Mcar { vec![] } else { target_by_stratum(&full) },
            feasible: true,
        },
        Err(_) => CurvePoint {
            q_w0_r0: param,
            q_by_stratum: qs,
            p_r0,
            target: vec![],
            target_by_stratum: vec![],
            feasible: false,
        },
    }
}

/// Sweeps `grid_n + 1` evenly spaced channel values over the bound and
/// records the implied target law and p(R = 0) at each.
pub fn sensitivity_curve(law: &ObservedLaw, model: Model, grid_n: usize) -> Result<SensitivityCurve> {
    let report = bound(law, model, BoundOptions::default())?;
    sensitivity_curve_from_report(law, &report, grid_n)
}

/// As [`sensitivity_curve`], reusing an existing bound report.
pub fn sensitivity_curve_from_report(law: &ObservedLaw, report: &BoundReport, grid_n: usize) -> Result<SensitivityCurve> {
    let model = report.model;
    if model == Model::Mnar {
        return Err(Error::Unsupported("sensitivity curves need an MCAR or MAR model".into()));
    }
    if grid_n < 1 {
        return Err(Error::Unsupported("grid needs at least two points".into()));
    }
    let view = law.view(0, if model == Model::Mcar { Covariates::None } else { Covariates::C });
    let q1s: Vec<f64> = report.entries.iter().map(|e| e.q_w0_given_r1).collect();
    let all_flat = report.entries.iter().all(|e| e.interval.no_inflation);
    if all_flat {
        let nx = view.nx();
        let target: Vec<f64> = (0..nx).map(|x| view.pooled_px(x)).collect();
        let by_stratum = if model == Model::Mcar {
            vec![]
        } else {
            (0..view.nz()).map(|z| (0..nx).map(|x| view.px(z, x) / view.pz(z).max(f64::MIN_POSITIVE)).collect()).collect()
        };
        let qs: Vec<f64> = report.entries.iter().map(|e| e.interval.excluded_point.unwrap_or(e.q_w0_given_r1)).collect();
        return Ok(SensitivityCurve {
            model,
            grid_n,
            no_inflation: true,
            points: vec![CurvePoint {
                q_w0_r0: qs[0],
                q_by_stratum: qs,
                p_r0: 0.0,
                target,
                target_by_stratum: by_stratum,
                feasible: true,
            }],
        });
    }
    // strata without inflation sit at a fixed channel value away from q1
    let ends: Vec<(f64, f64)> = report
        .entries
        .iter()
        .map(|e| {
            if e.interval.no_inflation {
                let q = if e.q_w0_given_r1 < 0.5 { 1.0 } else { 0.0 };
                Ok((q, q))
            } else {
                traversal_ends(&e.interval)
            }
        })
        .collect::<Result<_>>()?;
    let p_w0 = view.p_w0();
    let points = (0..=grid_n)
        .map(|i| {
            let t = i as f64 / grid_n as f64;
            let qs: Vec<f64> = ends.iter().map(|&(lo, hi)| if i == grid_n { hi } else { lo + t * (hi - lo) }).collect();
            let param = if model == Model::MarStratified { t } else { qs[0] };
            let p_r0 = if model == Model::MarStratified {
                (0..view.nz())
                    .filter(|&z| view.pz(z) > 0.0 && !report.entries[z].interval.no_inflation)
                    .map(|z| {
                        let pw0_z = (0..view.nx()).map(|x| view.p(z, x, 0)).sum::<f64>() / view.pz(z);
                        view.pz(z) * r0_from_channel_entry(pw0_z, q1s[z], qs[z])
                    })
                    .sum()
            } else {
                r0_from_channel_entry(p_w0, q1s[0], qs[0])
            };
            point_at(law, model, param, qs, &q1s, p_r0)
        })
        .collect();
    Ok(SensitivityCurve { model, grid_n, no_inflation: false, points })
}
