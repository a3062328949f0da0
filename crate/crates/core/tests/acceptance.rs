//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

use std::time::{Duration, Instant};

use zinfer::bounds::{
    bound, channel_from_r0_prob, falsify, grid_feasibility_oracle, r0_bounds_from_channel_bounds, BoundEntry,
    BoundOptions, Model,
};
use zinfer::downstream::sensitivity_curve;
use zinfer::estimate::{em_fit, EmConfig};
use zinfer::graph::{catalog, full_law_identifiable, Verdict};
use zinfer::simulate::{fixtures, nonid_pair, sample_dataset, sample_dgp, validate_bounds_harness, DgpModel, HarnessReport};
use zinfer::ObservedLaw;

const SEED: u64 = 20_240_601;
const N_DGPS: usize = 10_000;
const SINGLE: [DgpModel; 3] = [DgpModel::Mcar, DgpModel::MarStratified, DgpModel::MarShared];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn harness_runs() -> (Vec<HarnessReport>, Duration) {
    let t = Instant::now();
    let reports = DgpModel::ALL.iter().map(|&m| validate_bounds_harness(m, N_DGPS, 101, SEED)).collect();
    (reports, t.elapsed())
}

fn bound_validity(reports: &[HarnessReport], elapsed: Duration) -> Outcome {
    let mut pass = elapsed < Duration::from_secs(120);
    let mut parts = vec![];
    for r in reports.iter().filter(|r| SINGLE.contains(&r.model)) {
        let ok = r.check_passes.identification == r.n_dgps && r.check_passes.containment == r.n_dgps;
        pass &= ok;
        parts.push(format!(
            "{}: {}/{} contained, id err {:.1e}",
            r.model,
            r.check_passes.containment.min(r.check_passes.identification),
            r.n_dgps,
            r.worst.identification
        ));
    }
    outcome(pass, format!("{}; all four models in {}", parts.join("; "), secs(elapsed)))
}

fn model_consistency(reports: &[HarnessReport]) -> Outcome {
    let pass = reports.iter().filter(|r| SINGLE.contains(&r.model)).all(|r| r.check_passes.consistency == r.n_dgps);
    let parts: Vec<String> = reports
        .iter()
        .filter(|r| SINGLE.contains(&r.model))
        .map(|r| format!("{}: {}/{} (worst {:.1e})", r.model, r.check_passes.consistency, r.n_dgps, r.worst.restoration))
        .collect();
    outcome(pass, format!("101 interior points; {}", parts.join("; ")))
}

fn entry_key(e: &BoundEntry) -> (usize, Option<usize>) {
    (e.indicator, e.stratum)
}

fn oracle_agreement() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = vec![];
    for model in SINGLE {
        for i in 0..100 {
            let dgp = sample_dgp(model, SEED ^ 0x0ac1e, i);
            let law = dgp.observed_law();
            let analytic = match bound(&law, model.bound_model(), BoundOptions::default()) {
                Ok(r) => r.entries,
                Err(e) => {
                    failures.push(format!("{model} #{i}: {e}"));
                    continue;
                }
            };
            let mut oracle = match grid_feasibility_oracle(&law, model.bound_model(), 100_000) {
                Ok(v) => v,
                Err(e) => {
                    failures.push(format!("{model} #{i}: {e}"));
                    continue;
                }
            };
            oracle.sort_by_key(entry_key);
            for (a, o) in analytic.iter().zip(&oracle) {
                let gap = (a.interval.lower - o.interval.lower).abs().max((a.interval.upper - o.interval.upper).abs());
                worst = worst.max(gap);
                if entry_key(a) != entry_key(o) || gap > 1e-4 {
                    failures.push(format!("{model} #{i}: gap {gap:.2e}"));
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(300);
    outcome(pass, format!("300 DGPs at grid 1e5, max gap {worst:.2e}, {}{}", secs(elapsed), fail_note(&failures)))
}

fn fail_note(failures: &[String]) -> String {
    if failures.is_empty() {
        String::new()
    } else {
        format!("; {} failures, first: {}", failures.len(), failures[0])
    }
}

fn round_trip(reports: &[HarnessReport]) -> Outcome {
    let pass = reports.iter().all(|r| r.check_passes.round_trip == r.n_dgps);
    let parts: Vec<String> =
        reports.iter().map(|r| format!("{}: {}/{} (worst {:.1e})", r.model, r.check_passes.round_trip, r.n_dgps, r.worst.round_trip)).collect();
    let first = reports.iter().flat_map(|r| r.failures.iter().filter(|f| f.check == "round_trip").map(move |f| (r.model, f))).next();
    let note = first.map(|(m, f)| format!("; {m} #{}: {}", f.index, f.detail)).unwrap_or_default();
    outcome(pass, format!("{}{note}", parts.join("; ")))
}

fn violating_tables() -> Vec<(Model, ObservedLaw, &'static str, Option<usize>)> {
    // ternary MCAR law with p(w0|x2) ≠ p(w0|x1)
    let mcar = ObservedLaw::from_wx([&[0.2, 0.1, 0.3], &[0.2, 0.1, 0.1]]).unwrap();
    // two strata; stratum 1 breaks p(w0|x2,c) = p(w0|x1,c)
    let strat = ObservedLaw::from_fn(3, 2, |x, w, c| {
        let px = [0.3, 0.3, 0.4][x];
        let w0 = match (x, c) {
            (0, _) => 0.5,
            (2, 1) => 0.7,
            _ => 0.3,
        };
        0.5 * px * if w == 0 { w0 } else { 1.0 - w0 }
    })
    .unwrap();
    // shared channel: p(w0|x0,c) on both sides of p(w0|x1)
    let shared = ObservedLaw::from_fn(2, 2, |x, w, c| {
        let w0 = match (x, c) {
            (0, 0) => 0.2,
            (0, 1) => 0.6,
            _ => 0.3,
        };
        0.25 * if w == 0 { w0 } else { 1.0 - w0 }
    })
    .unwrap();
    vec![
        (Model::Mcar, mcar, "x=2", None),
        (Model::MarStratified, strat, "x=2", Some(1)),
        (Model::MarShared, shared, "dichotomy", None),
    ]
}

fn falsification_soundness(reports: &[HarnessReport]) -> Outcome {
    let forward_ok = reports.iter().all(|r| r.check_passes.constraints == r.n_dgps);
    let worst = reports.iter().map(|r| r.worst.constraint).fold(0.0, f64::max);
    let mut parts = vec![format!("forward laws at 1e-12: worst {worst:.1e}")];
    let mut pass = forward_ok;
    for (model, law, want, stratum) in violating_tables() {
        let rep = falsify(&law, model, 1e-9).unwrap();
        let worst = rep.worst().unwrap();
        let ok = !rep.pass && worst.constraint == want && worst.stratum == stratum;
        pass &= ok;
        parts.push(format!("{model}: `{}` {}", worst.constraint, if ok { "caught" } else { "MISSED" }));
    }
    outcome(pass, parts.join("; "))
}

fn known_r0() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut dgps = vec![fixtures::mcar()];
    dgps.extend((0..N_DGPS as u64).map(|i| sample_dgp(DgpModel::Mcar, SEED, i)));
    let mut errors = vec![];
    for d in &dgps {
        match channel_from_r0_prob(&d.observed_law(), d.p_r0(0)) {
            Ok(ch) => worst = worst.max((ch.factor(0, 0).w0_r0 - d.true_q0(0, 0)).abs()),
            Err(e) => errors.push(e.to_string()),
        }
    }
    let law = fixtures::mcar().observed_law();
    let iv = bound(&law, Model::Mcar, BoundOptions::default()).unwrap().entries[0].interval;
    let r0 = r0_bounds_from_channel_bounds(&law, &iv).unwrap();
    let r0_ok = (r0.lower - 0.225).abs() <= 1e-9 && (r0.upper - 0.65).abs() <= 1e-9;
    outcome(
        errors.is_empty() && worst <= 1e-12 && r0_ok,
        format!(
            "{} MCAR laws, worst q0 error {worst:.1e}; fixture p(R=0) in [{:.9}, {:.9}]{}",
            dgps.len(),
            r0.lower,
            r0.upper,
            fail_note(&errors)
        ),
    )
}

fn fixture_curve() -> Outcome {
    let law = fixtures::mcar().observed_law();
    let curve = sensitivity_curve(&law, Model::Mcar, 1000).unwrap();
    let (lo, hi) = curve.target_range(1).unwrap();
    let at = |v: f64| curve.points.iter().find(|p| p.feasible && (p.target[1] - v).abs() < 1e-15).unwrap().q_w0_r0;
    let (q_hi, q_lo) = (at(hi), at(lo));
    let pass = (hi - 1.0).abs() <= 1e-6
        && (lo - 0.451613).abs() <= 1e-6
        && (q_hi - 0.476923).abs() <= 1e-6
        && (q_lo - 1.0).abs() <= 1e-6;
    outcome(pass, format!("p(X(1)=1) from {hi:.6} at q={q_hi:.6} to {lo:.6} at q={q_lo:.6}"))
}

fn nonid_demo() -> Outcome {
    let a = fixtures::mcar();
    let b = nonid_pair(&a, 0.9).unwrap();
    let obs = a.observed_law().table().max_abs_diff(b.observed_law().table());
    let tgt = a.target_law().max_abs_diff(&b.target_law());
    outcome(obs <= 1e-12 && tgt >= 0.05, format!("observed gap {obs:.1e}, target gap {tgt:.4}"))
}

fn graph_verdicts() -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for (name, _) in catalog::ALL {
        let v = full_law_identifiable(&catalog::by_name(name).unwrap());
        let want_colluder = matches!(name, "mnar-chain" | "mnar-colluder");
        let ok = match v {
            Verdict::Identifiable => !want_colluder,
            Verdict::Colluder { .. } => want_colluder,
            Verdict::SelfCensoring { .. } => false,
        };
        pass &= ok;
        parts.push(format!("{name} {v}"));
    }
    outcome(pass, parts.join(", "))
}

fn em_check() -> Outcome {
    let t = Instant::now();
    let dgp = fixtures::mar_shared();
    let data = sample_dataset(&dgp, 100_000, SEED);
    let fit = match em_fit(&data, Model::MarShared, &EmConfig { seed: SEED, ..Default::default() }) {
        Ok(f) => f,
        Err(e) => return outcome(false, format!("EM failed: {e}")),
    };
    let monotone = fit.loglik.windows(2).all(|w| w[1] >= w[0] - 1e-10);
    let falsify_ok = falsify(&fit.observed, Model::MarShared, 1e-9).map(|r| r.pass).unwrap_or(false);
    let est = bound(&fit.observed, Model::MarShared, BoundOptions::default());
    let pop = bound(&dgp.observed_law(), Model::MarShared, BoundOptions::default()).unwrap();
    let elapsed = t.elapsed();
    let (gap, est_iv) = match est {
        Ok(r) => {
            let (a, b) = (r.interval(), pop.interval());
            ((a.lower - b.lower).abs().max((a.upper - b.upper).abs()), a.to_string())
        }
        Err(e) => (f64::INFINITY, e.to_string()),
    };
    let pass = monotone && falsify_ok && gap <= 0.05 && elapsed < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} iterations, monotone {monotone}, falsify {falsify_ok}; estimate {est_iv} vs population {}, gap {gap:.4}, {}",
            fit.iterations,
            pop.interval(),
            secs(elapsed)
        ),
    )
}

fn main() {
    let (reports, harness_time) = harness_runs();
    let results = [
        ("bound validity", bound_validity(&reports, harness_time)),
        ("model consistency", model_consistency(&reports)),
        ("oracle agreement", oracle_agreement()),
        ("restoration round trip", round_trip(&reports)),
        ("falsification soundness", falsification_soundness(&reports)),
        ("known p(R=0)", known_r0()),
        ("fixture sensitivity curve", fixture_curve()),
        ("non-identifiability pair", nonid_demo()),
        ("graph verdicts", graph_verdicts()),
        ("EM fit", em_check()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {} {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("acceptance: {}/{} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
