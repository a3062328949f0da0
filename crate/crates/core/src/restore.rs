//! Restoring the zero-inflated law p(R, X, W, C) from the observed law and a
//! proxy channel, by inverting q(W | R) factor by factor.

use serde::{Deserialize, Serialize};

use crate::dist::law::{IndicatorView, ObservedLaw, ZiLaw};
use crate::dist::table::{describe_cell, unravel, Axis, ProbTable, Role};
use crate::dist::{BinaryChannel, ChannelMode, ProxyChannel};
use crate::error::{Error, Result};
use crate::{INPUT_TOL, STRUCT_TOL};

/// Analytic inverse of one 2×2 channel factor; rows r, columns w.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorInverse {
    pub det: f64,
    pub m: [[f64; 2]; 2],
}

impl FactorInverse {
    pub fn new(f: BinaryChannel) -> Result<Self> {
        let det = f.det();
        if det.abs() <= STRUCT_TOL {
            return Err(Error::SingularChannel { det });
        }
        let (q0, q1) = (f.w0_r0, f.w0_r1);
        Ok(Self { det, m: [[(1.0 - q1) / det, -q1 / det], [(q0 - 1.0) / det, q0 / det]] })
    }

    /// Maps (p(w0), p(w1)) to (q(r0), q(r1)).
    #[inline]
    pub fn apply(&self, p0: f64, p1: f64) -> (f64, f64) {
        (self.m[0][0] * p0 + self.m[0][1] * p1, self.m[1][0] * p0 + self.m[1][1] * p1)
    }
}

/// Per-factor inverses, indexed `[k][c]` (one entry per k when shared).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInverse {
    pub mode: ChannelMode,
    pub factors: Vec<Vec<FactorInverse>>,
}

impl ChannelInverse {
    pub fn factor(&self, k: usize, c: usize) -> &FactorInverse {
        match self.mode {
            ChannelMode::Shared => &self.factors[k][0],
            ChannelMode::Stratified => &self.factors[k][c],
        }
    }
}

pub fn invert_channel(ch: &ProxyChannel) -> Result<ChannelInverse> {
    let factors = match ch {
        ProxyChannel::Shared(fs) => fs.iter().map(|&f| Ok(vec![FactorInverse::new(f)?])).collect::<Result<_>>()?,
        ProxyChannel::Stratified(fs) => fs
            .iter()
            .map(|per_c| per_c.iter().map(|&f| FactorInverse::new(f)).collect::<Result<Vec<_>>>())
            .collect::<Result<_>>()?,
    };
    Ok(ChannelInverse { mode: ch.mode(), factors })
}

/// Single-indicator restoration (no covariates, or covariates summed out).
pub fn restore_mcar(law: &ObservedLaw, ch: &ProxyChannel) -> Result<ZiLaw> {
    if law.n_indicators() != 1 || ch.n_indicators() != 1 {
        return Err(Error::ShapeMismatch("MCAR restoration takes a single indicator".into()));
    }
    if ch.mode() != ChannelMode::Shared {
        return Err(Error::ShapeMismatch("MCAR restoration takes a shared channel".into()));
    }
    restore_general(&law.collapse_covariates(), ch)
}

fn check_shape(law: &ObservedLaw, ch: &ProxyChannel) -> Result<()> {
    let n = law.n_indicators();
    if ch.n_indicators() != n {
        return Err(Error::ShapeMismatch(format!("channel has {} factors for {n} indicators", ch.n_indicators())));
    }
    if let ProxyChannel::Stratified(fs) = ch {
        if fs.iter().any(|per_c| per_c.len() != law.c_card()) {
            return Err(Error::ShapeMismatch(format!("stratified channel needs {} strata per factor", law.c_card())));
        }
    }
    Ok(())
}

/// Restores p(R, X, W, C) from p(X, W, C).
///
/// The inverse is applied along each Wₖ axis in turn, which is the same as
/// applying the inverse of the Kronecker channel but never materializes it.
/// The intermediate q(R, X, C) must be nonnegative (entries down to −1e-9 are
/// clamped) and put no mass on {Rₖ = 0, Xₖ ≠ 0}; otherwise the channel is
/// incompatible with the observed law.
pub fn restore_general(law: &ObservedLaw, ch: &ProxyChannel) -> Result<ZiLaw> {
    check_shape(law, ch)?;
    let inv = invert_channel(ch)?;
    let n = law.n_indicators();
    let src = law.table();
    let cards = src.cards();
    let c_axis = 2 * n;

    // q over [X.., R.., C]: same layout as the observed table with Wₖ read as Rₖ
    let mut q = src.probs().to_vec();
    for k in 0..n {
        let stride: usize = cards[n + k + 1..].iter().product();
        let block = stride * 2;
        for base in (0..q.len()).step_by(block) {
            for off in 0..stride {
                let i0 = base + off;
                let i1 = i0 + stride;
                let c = if inv.mode == ChannelMode::Stratified { unravel(i0, &cards)[c_axis] } else { 0 };
                let (r0, r1) = inv.factor(k, c).apply(q[i0], q[i1]);
                q[i0] = r0;
                q[i1] = r1;
            }
        }
    }

    let mut q_axes: Vec<Axis> = src.axes()[..n].to_vec();
    q_axes.extend((0..n).map(|k| Axis::new(Role::R(k), 2)));
    q_axes.push(src.axes()[c_axis].clone());
    for (flat, v) in q.iter_mut().enumerate() {
        let idx = unravel(flat, &cards);
        let z_cell = (0..n).any(|k| idx[n + k] == 0 && idx[k] != 0);
        if *v < -INPUT_TOL || (z_cell && *v > INPUT_TOL) {
            let what = if *v < 0.0 { "negative" } else { "restriction Z violated" };
            let stratum = if cards[c_axis] > 1 { format!(" in stratum C={}", idx[c_axis]) } else { String::new() };
            return Err(Error::IncompatibleChannel {
                detail: format!("{what}: q({}) = {:e}{stratum}", describe_cell(&q_axes, flat), *v),
            });
        }
        if *v < 0.0 || z_cell {
            *v = 0.0;
        }
    }

    // p(r, x, w, c) = Πₖ q(wₖ | rₖ, c) · q(x, r, c), laid out [R.., X.., W.., C]
    let mut axes: Vec<Axis> = (0..n).map(|k| Axis::new(Role::R(k), 2)).collect();
    axes.extend(src.axes()[..2 * n].iter().cloned());
    axes.push(src.axes()[c_axis].clone());
    let out_cards: Vec<usize> = axes.iter().map(|a| a.card).collect();
    let total: usize = out_cards.iter().product();
    let mut out = Vec::with_capacity(total);
    let q_cards: Vec<usize> = q_axes.iter().map(|a| a.card).collect();
    for flat in 0..total {
        let idx = unravel(flat, &out_cards);
        let (r, rest) = idx.split_at(n);
        let (x, rest) = rest.split_at(n);
        let (w, c) = rest.split_at(n);
        let c = c[0];
        let mut qi = 0;
        for (a, v) in x.iter().chain(r).chain(std::iter::once(&c)).enumerate() {
            qi = qi * q_cards[a] + v;
        }
        let pw: f64 = (0..n).map(|k| ch.factor(k, c).prob(w[k], r[k])).product();
        out.push(pw * q[qi]);
    }
    Ok(ZiLaw::from_valid(ProbTable::from_parts(axes, out, 0), n, true))
}

/// Feasibility of a single-indicator view under per-stratum channels: true iff
/// restoration would succeed in every stratum. Allocation-free; used by the
/// grid oracle and the harness.
pub fn view_restorable(view: &IndicatorView, channel: impl Fn(usize) -> BinaryChannel) -> bool {
    view_violation(view, channel) <= INPUT_TOL
}

/// Largest amount by which restoring `view` breaks nonnegativity or
/// restriction Z (0 when restoration is clean). Infinite for a singular channel.
pub fn view_violation(view: &IndicatorView, channel: impl Fn(usize) -> BinaryChannel) -> f64 {
    let mut worst: f64 = 0.0;
    for z in 0..view.nz() {
        let Ok(inv) = FactorInverse::new(channel(z)) else {
            return f64::INFINITY;
        };
        for x in 0..view.nx() {
            let (r0, r1) = inv.apply(view.p(z, x, 0), view.p(z, x, 1));
            worst = worst.max(-r0).max(-r1);
            if x != 0 {
                worst = worst.max(r0.abs());
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Covariates;

    fn fixture() -> ObservedLaw {
        ObservedLaw::from_wx([&[0.31, 0.07], &[0.34, 0.28]]).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn analytic_inverse() {
        let id = FactorInverse::new(BinaryChannel::identity()).unwrap();
        assert_eq!(id.m, [[1.0, 0.0], [0.0, 1.0]]);
        let f = BinaryChannel::new(0.8, 0.2).unwrap();
        let inv = FactorInverse::new(f).unwrap();
        let expect = [[0.8 / 0.6, -0.2 / 0.6], [-0.2 / 0.6, 0.8 / 0.6]];
        let a = f.matrix();
        for i in 0..2 {
            for j in 0..2 {
                assert!(close(inv.m[i][j], expect[i][j], 1e-15));
                let prod: f64 = (0..2).map(|l| inv.m[i][l] * a[l][j]).sum();
                assert!(close(prod, if i == j { 1.0 } else { 0.0 }, 1e-15));
            }
        }
        let singular = ProxyChannel::single(0.5, 0.5).unwrap();
        assert!(matches!(invert_channel(&singular), Err(Error::SingularChannel { .. })));
    }

    #[test]
    fn fixture_restores_to_known_zi_law() {
        let ch = ProxyChannel::single(0.8, 0.2).unwrap();
        let zi = restore_mcar(&fixture(), &ch).unwrap();
        let rx = zi.table().marginalize(&[Role::R(0), Role::X(0)]).unwrap();
        for (a, b) in rx.probs().iter().zip([0.3, 0.0, 0.35, 0.35]) {
            assert!(close(*a, b, 1e-12), "{a} vs {b}");
        }
        // forward direction reproduces the observed law
        let back = zi.observed().unwrap();
        assert!(back.table().max_abs_diff(fixture().table()) < 1e-12);
    }

    #[test]
    fn identity_channel_relabels() {
        let law = ObservedLaw::from_wx([&[0.4, 0.0], &[0.25, 0.35]]).unwrap();
        let zi = restore_mcar(&law, &ProxyChannel::Shared(vec![BinaryChannel::identity()])).unwrap();
        // R = 1 − W
        assert!(close(zi.table().get(&[0, 0, 0, 0]), 0.4, 1e-15));
        assert!(close(zi.table().get(&[1, 0, 1, 0]), 0.25, 1e-15));
        assert!(close(zi.table().get(&[1, 1, 1, 0]), 0.35, 1e-15));
    }

    #[test]
    fn swapped_identity_is_incompatible() {
        let swap = ProxyChannel::single(0.0, 1.0).unwrap();
        assert!(matches!(restore_mcar(&fixture(), &swap), Err(Error::IncompatibleChannel { .. })));
    }

    #[test]
    fn view_check_agrees_with_restore() {
        let law = fixture();
        let view = law.view(0, Covariates::None);
        for i in 0..=200 {
            let q0 = i as f64 / 200.0;
            if (q0 - 0.2).abs() < 1e-12 {
                continue;
            }
            let f = BinaryChannel::new(q0, 0.2).unwrap();
            let fast = view_restorable(&view, |_| f);
            let slow = restore_mcar(&law, &ProxyChannel::Shared(vec![f])).is_ok();
            assert_eq!(fast, slow, "q0 = {q0}");
        }
    }

    #[test]
    fn relabeling_nonzero_categories_is_equivariant() {
        let law = ObservedLaw::from_wx([&[0.2, 0.05, 0.1], &[0.2, 0.15, 0.3]]).unwrap();
        let swapped = ObservedLaw::from_wx([&[0.2, 0.1, 0.05], &[0.2, 0.3, 0.15]]).unwrap();
        let ch = ProxyChannel::single(0.9, 0.25).unwrap();
        let a = restore_mcar(&law, &ch).unwrap();
        let b = restore_mcar(&swapped, &ch).unwrap();
        for r in 0..2 {
            for w in 0..2 {
                for (xa, xb) in [(0, 0), (1, 2), (2, 1)] {
                    assert!(close(a.table().get(&[r, xa, w, 0]), b.table().get(&[r, xb, w, 0]), 1e-15));
                }
            }
        }
    }
}
