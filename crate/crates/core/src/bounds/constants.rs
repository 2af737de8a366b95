//! The per-problem constant bundle behind the upper rate bound.
//!
//! The search maximizes `min{w/4, log(α↑/α↓)}·min{p_t - q_low, q_high - p_t}`
//! over feasible `(q_low, q_high)` on a 128×128 grid followed by a 17×17
//! refinement around the best cell. Any feasible pair gives a valid bound,
//! so stopping short of the true supremum only loosens it.

use serde::{Deserialize, Serialize};

use super::{b_high, b_low, four_over_sqrt_2pi, q_h, trace_condition, Infeasibility};
use crate::error::{Error, Result};
use crate::es::EsParams;
use crate::parallel::{map_indexed, Execution};
use crate::quadratic::SpectrumStats;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub r: f64,
    pub p_target: f64,
    pub alpha_up: f64,
    pub alpha_down: f64,
    pub q_low: f64,
    pub q_high: f64,
    pub b_high_at_qhigh: f64,
    /// ε attaining `b_high_at_qhigh`.
    pub eps_high: f64,
    pub b_low_at_qlow: f64,
    /// ε attaining `b_low_at_qlow`.
    pub eps_low: f64,
    #[serde(rename = "Q_H")]
    pub q_h: f64,
    pub w: f64,
    pub v: f64,
    pub b_s: f64,
    pub b_l: f64,
    #[serde(rename = "B")]
    pub b: f64,
    /// `Cond(H)/(2(d-3))`; absent for `d ≤ 3`.
    pub lower_rate_constant: Option<f64>,
    /// L
    pub smallest: f64,
    pub trace: f64,
    pub dim: usize,
}

impl TheoryConstants {
    /// `log(α↑/α↓)`.
    pub fn log_ratio(&self) -> f64 {
        self.alpha_up.ln() - self.alpha_down.ln()
    }

    /// Checks every structural invariant; returns the first one violated.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let ratio = self.alpha_up / self.alpha_down;
        let checks = [
            (2.0 * self.r < self.q_low, "2r < q_low"),
            (self.q_low < self.p_target, "q_low < p_target"),
            (self.p_target < self.q_high, "p_target < q_high"),
            (self.q_high < 0.5, "q_high < 1/2"),
            (self.b_low_at_qlow < four_over_sqrt_2pi(), "B_low(q_low) < 4/√(2π)"),
            (self.b_low_at_qlow > ratio * self.b_high_at_qhigh, "B_low(q_low) > (α↑/α↓) B_high(q_high)"),
            (0.0 < self.b_s && self.b_s < self.b_l, "0 < b_s < b_l"),
            (self.w > 0.0, "w > 0"),
            (self.v > 0.0 && self.v <= 1.0, "v in (0, 1]"),
            (self.b > 0.0, "B > 0"),
            (self.q_h > 0.0, "Q_H > 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, name)) => Err(format!("invariant violated: {name}")),
            None => Ok(()),
        }
    }
}

const GRID: usize = 128;
const REFINE: usize = 17;

/// Cached per-`q_low` quantities.
#[derive(Clone, Copy)]
struct LowSide {
    q: f64,
    b: f64,
    eps: f64,
    q_h: f64,
}

#[derive(Clone, Copy)]
struct HighSide {
    q: f64,
    b: f64,
    eps: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    objective: f64,
    gap: f64,
    w: f64,
    i: usize,
    j: usize,
}

fn low_side(stats: &SpectrumStats, q: f64) -> Option<LowSide> {
    let bl = b_low(stats, q).ok()?;
    if bl.value >= four_over_sqrt_2pi() {
        return None;
    }
    let qh = q_h(stats, q).ok()?;
    Some(LowSide {
        q,
        b: bl.value,
        eps: bl.epsilon,
        q_h: qh.value,
    })
}

fn high_side(stats: &SpectrumStats, q: f64) -> Option<HighSide> {
    let bh = b_high(stats, q).ok()?;
    Some(HighSide {
        q,
        b: bh.value,
        eps: bh.epsilon,
    })
}

fn w_of(stats: &SpectrumStats, lo: &LowSide, hi: &HighSide) -> f64 {
    stats.smallest * hi.b / (2.0 * stats.trace) * (four_over_sqrt_2pi() - lo.b) * lo.q_h
}

/// Best feasible pair over the cross product; ties go to the wider gap.
// `!(a > b)` also skips NaN
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn best_pair(
    stats: &SpectrumStats,
    params: &EsParams,
    lows: &[Option<LowSide>],
    highs: &[Option<HighSide>],
) -> Option<Candidate> {
    let p_t = params.p_target();
    let lr = params.log_ratio();
    let ratio = params.alpha_up / params.alpha_down;
    let mut best: Option<Candidate> = None;
    for (i, lo) in lows.iter().enumerate() {
        let Some(lo) = lo else { continue };
        for (j, hi) in highs.iter().enumerate() {
            let Some(hi) = hi else { continue };
            if !(lo.b > ratio * hi.b) {
                continue;
            }
            let w = w_of(stats, lo, hi);
            if !(w > 0.0) {
                continue;
            }
            let objective = (w / 4.0).min(lr) * (p_t - lo.q).min(hi.q - p_t);
            let gap = hi.q - lo.q;
            let better = match best {
                None => true,
                Some(b) => {
                    objective > b.objective
                        || (objective >= b.objective * (1.0 - 1e-12) && objective <= b.objective && gap > b.gap)
                }
            };
            if better {
                best = Some(Candidate { objective, gap, w, i, j });
            }
        }
    }
    best
}

/// Points strictly inside `(lo, hi)`, evenly spaced.
fn interior(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| lo + (hi - lo) * (k as f64 + 1.0) / (n as f64 + 1.0)).collect()
}

/// Fills a [`TheoryConstants`] for `stats` under `params`.
pub fn constants(stats: &SpectrumStats, params: &EsParams) -> Result<TheoryConstants> {
    params.validate()?;
    let tc = trace_condition(stats);
    if !tc.holds {
        return Err(Error::InfeasibleBound(Infeasibility::TraceCondition {
            ratio: stats.ratio,
            threshold: tc.threshold,
        }));
    }
    let p_t = params.p_target();
    let r = stats.ratio;
    if !(2.0 * r < p_t && p_t < 0.5) {
        return Err(Error::InfeasibleBound(Infeasibility::PTargetOutOfRange {
            p_target: p_t,
            lower: 2.0 * r,
            upper: 0.5,
        }));
    }
    let limit = four_over_sqrt_2pi();
    let at_pt = b_low(stats, p_t)?.value;
    if at_pt >= limit {
        return Err(Error::InfeasibleBound(Infeasibility::PTargetCondition {
            b_low_at_ptarget: at_pt,
            limit,
        }));
    }

    // B_low is decreasing, so the feasible q_low form an interval (q_min, p_t).
    let feasible = |q: f64| b_low(stats, q).map(|t| t.value < limit).unwrap_or(false);
    let (mut lo, mut hi) = (2.0 * r, p_t);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let q_min = hi;

    let exec = Execution::Parallel;
    let grid_low = interior(q_min, p_t, GRID);
    let grid_high = interior(p_t, 0.5, GRID);
    let lows = map_indexed(GRID, exec, |i| low_side(stats, grid_low[i]));
    if lows.iter().all(Option::is_none) {
        return Err(Error::InfeasibleBound(Infeasibility::NoFeasibleQLow { p_target: p_t }));
    }
    let highs = map_indexed(GRID, exec, |j| high_side(stats, grid_high[j]));
    let alpha_ratio = params.alpha_up / params.alpha_down;
    let coarse = best_pair(stats, params, &lows, &highs)
        .ok_or(Error::InfeasibleBound(Infeasibility::NoFeasiblePair { alpha_ratio }))?;

    let neighborhood = |grid: &[f64], k: usize, floor: f64, ceil: f64| {
        let a = if k == 0 { floor } else { grid[k - 1] };
        let b = if k + 1 == grid.len() { ceil } else { grid[k + 1] };
        let mut pts = interior(a, b, REFINE);
        pts.push(grid[k]);
        pts
    };
    let fine_low_q = neighborhood(&grid_low, coarse.i, q_min, p_t);
    let fine_high_q = neighborhood(&grid_high, coarse.j, p_t, 0.5);
    let fine_lows = map_indexed(fine_low_q.len(), exec, |i| low_side(stats, fine_low_q[i]));
    let fine_highs = map_indexed(fine_high_q.len(), exec, |j| high_side(stats, fine_high_q[j]));
    let best = best_pair(stats, params, &fine_lows, &fine_highs).unwrap_or(coarse);
    let (lo, hi) = if best.objective > coarse.objective {
        (fine_lows[best.i].unwrap(), fine_highs[best.j].unwrap())
    } else {
        (lows[coarse.i].unwrap(), highs[coarse.j].unwrap())
    };
    let best = if best.objective > coarse.objective { best } else { coarse };

    let lr = params.log_ratio();
    let out = TheoryConstants {
        r,
        p_target: p_t,
        alpha_up: params.alpha_up,
        alpha_down: params.alpha_down,
        q_low: lo.q,
        q_high: hi.q,
        b_high_at_qhigh: hi.b,
        eps_high: hi.eps,
        b_low_at_qlow: lo.b,
        eps_low: lo.eps,
        q_h: lo.q_h,
        w: best.w,
        v: (best.w / (4.0 * lr)).min(1.0),
        b_s: std::f64::consts::SQRT_2 * hi.b * params.alpha_up,
        b_l: std::f64::consts::SQRT_2 * lo.b * params.alpha_down,
        b: best.objective,
        lower_rate_constant: lower_rate_constant(stats),
        smallest: stats.smallest,
        trace: stats.trace,
        dim: stats.dim,
    };
    out.check_invariants().map_err(Error::NumericalFailure)?;
    Ok(out)
}

/// `Cond(H)/(2(d-3))`, the almost-sure cap on the rate exponent.
pub fn lower_rate_constant(stats: &SpectrumStats) -> Option<f64> {
    (stats.dim > 3).then(|| stats.cond / (2.0 * (stats.dim - 3) as f64))
}
