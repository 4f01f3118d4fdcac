//! Central finite differences for checking reverse-mode gradients.
//!
//! Evaluates the loss through whatever closure the caller provides, so it
//! does not share any code path with [`Tape::backward`](super::Tape).

use std::collections::BTreeMap;

use super::matrix::Matrix;
use super::params::Parameterized;

const SMOOTHNESS: f64 = 1e-4;

/// Relative error `|a - n| / max(|a| + |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub entries_checked: usize,
    /// Entries where the loss is not smooth within the stencil (estimates
    /// at `h` and `h / 2` disagree), left out of the maximum.
    pub entries_skipped: usize,
}

/// Compares `analytic` (keyed by parameter name) against fourth-order
/// central differences of `loss` with step `h`, for every parameter accepted by
/// `select`. Parameters absent from `analytic` are treated as having zero
/// analytic gradient. Entries whose two step sizes disagree by more than
/// `1e-4` relative are counted in `entries_skipped` instead.
pub fn check_gradients<P, L, S>(
    params: &P,
    analytic: &BTreeMap<String, Matrix>,
    loss: L,
    select: S,
    h: f64,
    floor: f64,
) -> GradCheck
where
    P: Parameterized + Clone,
    L: Fn(&P) -> f64,
    S: Fn(&str) -> bool,
{
    let mut worst =
        GradCheck { max_relative_error: 0.0, worst_param: String::new(), entries_checked: 0, entries_skipped: 0 };
    let mut names = Vec::new();
    params.visit(&mut |n, m| names.push((n.to_string(), m.len())));
    for (name, len) in names {
        if !select(&name) {
            continue;
        }
        for idx in 0..len {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.visit_mut(&mut |n, m| {
                    if n == name {
                        m.data_mut()[idx] += delta;
                    }
                });
                loss(&p)
            };
            let stencil = |h: f64| (eval(-2.0 * h) - 8.0 * eval(-h) + 8.0 * eval(h) - eval(2.0 * h)) / (12.0 * h);
            let numeric = stencil(h);
            if relative_error(numeric, stencil(h / 2.0), floor) > SMOOTHNESS {
                worst.entries_skipped += 1;
                continue;
            }
            let a = analytic.get(&name).map_or(0.0, |g| g.data()[idx]);
            let err = relative_error(a, numeric, floor);
            worst.entries_checked += 1;
            if err > worst.max_relative_error {
                worst.max_relative_error = err;
                worst.worst_param = format!("{}[{}] analytic {:e} numeric {:e}", name, idx, a, numeric);
            }
        }
    }
    worst
}
