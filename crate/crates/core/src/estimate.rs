//! Fitting the observed law from records: saturated counting MLE and an EM
//! fit with the indicator as a latent variable.
//!
//! EM runs on aggregated cell counts, so its cost per iteration does not grow
//! with the number of records. The fitted channel and the R split are not
//! identified; only the fitted observed law is meant for downstream use.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::Model;
use crate::dist::law::ObservedLaw;
use crate::dist::table::ProbTable;
use crate::dist::{BinaryChannel, ProxyChannel};
use crate::error::{Error, Result};
use crate::simulate::{Dgp, DgpModel, DgpParams, RecordSet, REDRAW_DET};

/// Saturated MLE: cell frequencies over `[X.., W.., C]`.
pub fn mle_counting(data: &RecordSet) -> Result<ObservedLaw> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = data.len() as f64;
    let probs = data.counts().into_iter().map(|k| k / n).collect();
    ObservedLaw::new(ProbTable::joint(data.axes(), probs)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the mean log-likelihood changes by less than this.
    pub tol: f64,
    pub n_restarts: usize,
    pub seed: u64,
    /// Pseudo-count added to every observed cell.
    pub alpha: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iter: 5000, tol: 1e-8, n_restarts: 10, seed: 0, alpha: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmFit {
    pub model: Model,
    pub params: DgpParams,
    /// Mean observed-data log-likelihood per record, one entry per iterate
    /// starting from the initial point.
    pub loglik: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Restarts that ended with an invertible channel.
    pub n_restarts_used: usize,
    pub restart: usize,
    pub observed: ObservedLaw,
}

impl EmFit {
    pub fn final_loglik(&self) -> f64 {
        *self.loglik.last().expect("trace starts with the initial point")
    }
}

/// Per-stratum parameters: p(C), p(X(1)|c), p(R=0|c), q(w0|r0,c), q(w0|r1,c).
#[derive(Debug, Clone)]
struct Params {
    pc: Vec<f64>,
    pi: Vec<Vec<f64>>,
    rho: Vec<f64>,
    q0: Vec<f64>,
    q1: Vec<f64>,
}

impl Params {
    fn qw(&self, w: usize, r: usize, c: usize) -> f64 {
        let q = if r == 0 { self.q0[c] } else { self.q1[c] };
        if w == 0 { q } else { 1.0 - q }
    }

    fn cell(&self, x: usize, w: usize, c: usize) -> f64 {
        let obs = (1.0 - self.rho[c]) * self.pi[c][x] * self.qw(w, 1, c);
        let latent = if x == 0 { self.rho[c] * self.qw(w, 0, c) } else { 0.0 };
        self.pc[c] * (obs + latent)
    }

    fn min_det(&self) -> f64 {
        self.q0.iter().zip(&self.q1).map(|(a, b)| (a - b).abs()).fold(f64::INFINITY, f64::min)
    }
}

/// Counts indexed `[c][x][w]`.
struct Counts {
    nx: usize,
    nc: usize,
    n: Vec<Vec<[f64; 2]>>,
    total: f64,
}

impl Counts {
    fn loglik(&self, p: &Params) -> f64 {
        let mut ll = 0.0;
        for c in 0..self.nc {
            for x in 0..self.nx {
                for w in 0..2 {
                    let k = self.n[c][x][w];
                    if k > 0.0 {
                        ll += k * p.cell(x, w, c).ln();
                    }
                }
            }
        }
        ll / self.total
    }
}

fn step(cnt: &Counts, p: &Params, shared: bool) -> Params {
    let (nx, nc) = (cnt.nx, cnt.nc);
    let mut out = p.clone();
    // expected counts with R = 0 and R = 1, by (c, w)
    let mut r0 = vec![[0.0; 2]; nc];
    let mut r1 = vec![[0.0; 2]; nc];
    for c in 0..nc {
        let nc_tot: f64 = cnt.n[c].iter().map(|v| v[0] + v[1]).sum();
        let mut x_r1 = vec![0.0; nx];
        for w in 0..2 {
            let a = p.rho[c] * p.qw(w, 0, c);
            let b = (1.0 - p.rho[c]) * p.pi[c][0] * p.qw(w, 1, c);
            let gamma = if a + b > 0.0 { a / (a + b) } else { 0.0 };
            let k0 = cnt.n[c][0][w];
            r0[c][w] = k0 * gamma;
            r1[c][w] = k0 * (1.0 - gamma);
            x_r1[0] += k0 * (1.0 - gamma);
            for x in 1..nx {
                r1[c][w] += cnt.n[c][x][w];
                x_r1[x] += cnt.n[c][x][w];
            }
        }
        out.pc[c] = nc_tot / cnt.total;
        if nc_tot > 0.0 {
            out.rho[c] = (r0[c][0] + r0[c][1]) / nc_tot;
        }
        let s: f64 = x_r1.iter().sum();
        if s > 0.0 {
            out.pi[c] = x_r1.iter().map(|v| v / s).collect();
        }
    }
    let ratio = |a: f64, b: f64, keep: f64| if a + b > 0.0 { a / (a + b) } else { keep };
    if shared {
        let s0 = r0.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let s1 = r1.iter().fold([0.0, 0.0], |acc, v| [acc[0] + v[0], acc[1] + v[1]]);
        let q0 = ratio(s0[0], s0[1], p.q0[0]);
        let q1 = ratio(s1[0], s1[1], p.q1[0]);
        out.q0 = vec![q0; nc];
        out.q1 = vec![q1; nc];
    } else {
        for c in 0..nc {
            out.q0[c] = ratio(r0[c][0], r0[c][1], p.q0[c]);
            out.q1[c] = ratio(r1[c][0], r1[c][1], p.q1[c]);
        }
    }
    out
}

fn random_init(rng: &mut ChaCha8Rng, cnt: &Counts, shared: bool) -> Params {
    let (nx, nc) = (cnt.nx, cnt.nc);
    let pc = cnt.n.iter().map(|v| v.iter().map(|a| a[0] + a[1]).sum::<f64>() / cnt.total).collect();
    let pi = (0..nc)
        .map(|_| {
            let raw: Vec<f64> = (0..nx).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let rho = (0..nc).map(|_| rng.random()).collect();
    let mut channel = || loop {
        let (a, b): (f64, f64) = (rng.random(), rng.random());
        if (a - b).abs() > 0.05 {
            return (a, b);
        }
    };
    let (q0, q1) = if shared {
        let (a, b) = channel();
        (vec![a; nc], vec![b; nc])
    } else {
        (0..nc).map(|_| channel()).unzip()
    };
    Params { pc, pi, rho, q0, q1 }
}

struct Run {
    restart: usize,
    params: Params,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn run(cnt: &Counts, shared: bool, cfg: &EmConfig, restart: usize) -> Run {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut p = random_init(&mut rng, cnt, shared);
    let mut trace = vec![cnt.loglik(&p)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        p = step(cnt, &p, shared);
        iterations += 1;
        let ll = cnt.loglik(&p);
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() < cfg.tol {
            converged = true;
            break;
        }
    }
    Run { restart, params: p, trace, iterations, converged }
}

fn to_dgp(model: Model, p: &Params) -> Result<Dgp> {
    let (dgp_model, channel) = match model {
        Model::Mcar | Model::MarShared => (
            if model == Model::Mcar { DgpModel::Mcar } else { DgpModel::MarShared },
            ProxyChannel::Shared(vec![BinaryChannel { w0_r0: p.q0[0], w0_r1: p.q1[0] }]),
        ),
        _ => (
            DgpModel::MarStratified,
            ProxyChannel::Stratified(vec![p
                .q0
                .iter()
                .zip(&p.q1)
                .map(|(&w0_r0, &w0_r1)| BinaryChannel { w0_r0, w0_r1 })
                .collect()]),
        ),
    };
    Dgp::stratified(dgp_model, p.pc.clone(), p.pi.clone(), p.rho.clone(), channel)
}

/// Fits the single-indicator model by EM from `n_restarts` random starts and
/// keeps the best final log-likelihood. MCAR ignores C.
pub fn em_fit(data: &RecordSet, model: Model, cfg: &EmConfig) -> Result<EmFit> {
    if model == Model::Mnar {
        return Err(Error::Unsupported("EM fits the single-indicator models only".into()));
    }
    if data.n_indicators() != 1 {
        return Err(Error::ShapeMismatch(format!("EM needs one indicator, data has {}", data.n_indicators())));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if cfg.n_restarts == 0 || !(cfg.tol > 0.0) || cfg.alpha < 0.0 {
        return Err(Error::Unsupported("EM needs n_restarts ≥ 1, tol > 0 and alpha ≥ 0".into()));
    }
    let nx = data.x_cards()[0];
    let nc = if model == Model::Mcar { 1 } else { data.c_card() };
    let mut n = vec![vec![[cfg.alpha; 2]; nx]; nc];
    for row in data.rows() {
        let c = if nc == 1 { 0 } else { row[2] as usize };
        n[c][row[0] as usize][row[1] as usize] += 1.0;
    }
    let total = n.iter().flatten().map(|v| v[0] + v[1]).sum();
    let cnt = Counts { nx, nc, n, total };
    let shared = model != Model::MarStratified;

    let runs: Vec<Run> = (0..cfg.n_restarts).into_par_iter().map(|r| run(&cnt, shared, cfg, r)).collect();
    let usable: Vec<&Run> = runs.iter().filter(|r| r.params.min_det() > REDRAW_DET).collect();
    // ties go to the lowest restart index, so the choice is deterministic
    let best = usable
        .iter()
        .copied()
        .reduce(|a, b| if b.trace.last() > a.trace.last() { b } else { a })
        .ok_or(Error::DegenerateInit)?;
    let dgp = to_dgp(model, &best.params)?;
    Ok(EmFit {
        model,
        params: dgp.params.clone(),
        loglik: best.trace.clone(),
        iterations: best.iterations,
        converged: best.converged,
        n_restarts_used: usable.len(),
        restart: best.restart,
        observed: dgp.observed_law(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::falsify;
    use crate::simulate::{fixtures, sample_dataset};

    #[test]
    fn counting_uniform() {
        let data = RecordSet::from_triples(2, 1, &[(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)]).unwrap();
        let law = mle_counting(&data).unwrap();
        assert!(law.table().probs().iter().all(|&p| p == 0.25));
        assert!(matches!(mle_counting(&RecordSet::new(vec![2], 1)), Err(Error::EmptyData)));
    }

    #[test]
    fn complete_data_reduction() {
        // no X = 0 rows: one M-step gives ρ = 0 and the empirical marginals
        let rows = [(1, 0, 0), (1, 1, 0), (2, 1, 0), (2, 1, 0), (1, 0, 0)];
        let data = RecordSet::from_triples(3, 1, &rows).unwrap();
        let cfg = EmConfig { max_iter: 1, n_restarts: 1, ..Default::default() };
        let fit = em_fit(&data, Model::Mcar, &cfg).unwrap();
        let DgpParams::Single { target, p_r0, channel, .. } = &fit.params else { unreachable!() };
        assert_eq!(p_r0[0], 0.0);
        assert_eq!(target[0], vec![0.0, 0.6, 0.4]);
        assert_eq!(channel.factor(0, 0).w0_r1, 0.4);
    }

    #[test]
    fn monotone_and_constraint_respecting() {
        for (model, dgp) in [
            (Model::Mcar, fixtures::mcar()),
            (Model::MarStratified, fixtures::mar_stratified()),
            (Model::MarShared, fixtures::mar_shared()),
        ] {
            let data = sample_dataset(&dgp, 5000, 3);
            let fit = em_fit(&data, model, &EmConfig { n_restarts: 3, ..Default::default() }).unwrap();
            assert!(fit.loglik.windows(2).all(|w| w[1] >= w[0] - 1e-10), "{model}");
            assert!(falsify(&fit.observed, model, 1e-9).unwrap().pass, "{model}");
        }
    }

    #[test]
    fn restarts_agree_on_loglik() {
        let data = sample_dataset(&fixtures::mar_shared(), 20_000, 9);
        let a = em_fit(&data, Model::MarShared, &EmConfig { seed: 1, ..Default::default() }).unwrap();
        let b = em_fit(&data, Model::MarShared, &EmConfig { seed: 2, ..Default::default() }).unwrap();
        assert!((a.final_loglik() - b.final_loglik()).abs() < 1e-6);
    }
}
