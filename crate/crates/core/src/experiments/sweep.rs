use serde::{Deserialize, Serialize};

use super::{default_state, measure_rate, RateEstimate, RateProtocol};
use crate::bounds::{constants, lower_rate_constant};
use crate::error::{Error, Result};
use crate::es::AlphaSchedule;
use crate::quadratic::QuadraticProblem;
use crate::stochastic::RandomStream;

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub name: String,
    pub problem: QuadraticProblem,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub problem: String,
    pub d: usize,
    pub cond: f64,
    pub trace: f64,
    #[serde(rename = "L")]
    pub smallest: f64,
    pub a_hat: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// `B/2`; empty when the constants are infeasible.
    #[serde(rename = "B_half")]
    pub b_half: Option<f64>,
    /// `Cond(H)/(2(d-3))`; empty for `d ≤ 3`.
    pub lower_const: Option<f64>,
    pub status: String,
    #[serde(skip)]
    pub rate: Option<RateEstimate>,
}

pub const SWEEP_HEADER: &str = "problem,d,cond,trace,L,a_hat,ci_low,ci_high,B_half,lower_const,status";

impl SweepRow {
    /// `B/2 - 3SE ≤ a_hat ≤ Cond/(2(d-3)) + 3SE`, each side only where its
    /// constant exists. `None` when the row has no estimate.
    pub fn bracket_holds(&self) -> Option<bool> {
        let rate = self.rate.as_ref()?;
        let tol = 3.0 * rate.trial_se;
        let upper = self.lower_const.is_none_or(|u| rate.a_hat <= u + tol);
        let lower = self.b_half.is_none_or(|b| rate.a_hat >= b - tol);
        Some(upper && lower)
    }
}

/// Measures every entry under `schedule`. Row `i` draws from
/// `stream.substream(i)`; a failing row is recorded and the sweep goes on.
pub fn sweep(
    entries: &[SweepEntry],
    schedule: AlphaSchedule,
    protocol: &RateProtocol,
    stream: &RandomStream,
) -> Result<Vec<SweepRow>> {
    if entries.is_empty() {
        return Err(Error::InvalidParams("sweep needs at least one problem".into()));
    }
    let rows = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let stats = e.problem.spectrum_stats();
            let mut row = SweepRow {
                problem: e.name.clone(),
                d: stats.dim,
                cond: stats.cond,
                trace: stats.trace,
                smallest: stats.smallest,
                a_hat: None,
                ci_low: None,
                ci_high: None,
                b_half: None,
                lower_const: lower_rate_constant(&stats),
                status: String::new(),
                rate: None,
            };
            let params = match schedule.params(stats.dim) {
                Ok(p) => p,
                Err(err) => {
                    row.status = format!("error: {err}");
                    return row;
                }
            };
            let infeasible = match constants(&stats, &params) {
                Ok(c) => {
                    row.b_half = Some(c.b / 2.0);
                    None
                }
                Err(err) => Some(err.to_string()),
            };
            let state0 = default_state(&e.problem);
            match measure_rate(&e.problem, &params, &state0, protocol, &stream.substream(i as u64)) {
                Ok(rate) => {
                    row.a_hat = Some(rate.a_hat);
                    row.ci_low = Some(rate.ci_low);
                    row.ci_high = Some(rate.ci_high);
                    row.rate = Some(rate);
                    let verdict = if row.bracket_holds() == Some(true) { "ok" } else { "bracket_violated" };
                    row.status = match infeasible {
                        None => verdict.to_string(),
                        Some(why) => format!("{verdict} (upper side only; {why})"),
                    };
                }
                Err(err) => row.status = format!("error: {err}"),
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Renders rows as LF-terminated CSV under [`SWEEP_HEADER`].
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    if rows.is_empty() {
        w.write_record(SWEEP_HEADER.split(',')).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
