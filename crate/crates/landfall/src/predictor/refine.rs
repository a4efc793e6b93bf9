//! Gradient-descent refinement of a seeded depth map.

use serde::{Deserialize, Serialize};

use crate::depth_fusion::SparseDepth;
use crate::geometry::{CameraIntrinsics, Transform};
use crate::grid::{DepthMap, GrayImage, Grid};

use super::losses::{composite_objective, composite_value};
use super::{LossWeights, PredictorError};

const ARMIJO_C1: f64 = 1e-4;
// Deep enough that the L1 terms' linear rise falls below tolerance before
// the ladder runs out, so kink minima read as convergence, not failure.
const MAX_BACKTRACKS: usize = 50;
const MAX_LINE_SEARCH_FAILURES: usize = 10;
const MIN_DEPTH: f64 = 1e-3;
// Passes of the [1,2,1]/4 kernel used to precondition the gradient,
// roughly a 2.8-pixel Gaussian.
const BLUR_PASSES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineOptions {
    pub max_iters: usize,
    /// Largest per-pixel move attempted at each iteration, metres.
    pub step_m: f64,
    /// Converged when an accepted step decreases the objective by less than
    /// this fraction of its magnitude.
    pub tolerance: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            step_m: 0.25,
            tolerance: 1e-7,
        }
    }
}

/// Minimizes the composite loss over the seed's known pixels.
///
/// Preconditioned descent with Armijo backtracking. Each iteration first
/// tries a blurred copy of the gradient, which spreads the pull of isolated
/// sparse returns across their neighbourhoods (a raw per-pixel step out of a
/// constant region is blocked by the smoothness terms, whose linear kink
/// cost beats the data terms' gain); the raw gradient is the fallback for
/// fine detail. A step is accepted only if it decreases the objective, so
/// the objective is non-increasing across accepted steps. Trial steps are
/// scaled so the largest pixel moves `step_m` metres; a failed search halves
/// that budget and retries. The lowest-objective iterate seen is returned,
/// even when it is not the last.
///
/// Ten consecutive line-search failures with rises beyond tolerance abort
/// with [`PredictorError::OptimizerStall`] carrying the best iterate, so
/// callers can still use it.
pub fn refine_depth(
    seed: &DepthMap,
    sparse: &SparseDepth,
    current: Option<&GrayImage>,
    neighbors: &[(GrayImage, Transform)],
    k: &CameraIntrinsics,
    weights: &LossWeights,
    opts: &RefineOptions,
) -> Result<DepthMap, PredictorError> {
    let mut x = seed.clone();
    let support = x.raw().map(|v| !v.is_nan());
    let (mut c, mut grad) = composite_objective(&x, sparse, current, neighbors, k, weights)?;
    let mut best = x.clone();
    let mut best_c = c;
    let mut step = opts.step_m;
    let mut failures = 0usize;

    for _ in 0..opts.max_iters {
        let gmax = grad.as_slice().iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if gmax < 1e-15 {
            break;
        }
        let blurred = blur_within(&grad, &support, BLUR_PASSES);
        let mut accepted = None;
        // Any strict decrease that misses the Armijo bar; taking it keeps
        // the objective non-increasing when the bar is unreachable near an
        // L1 kink.
        let mut plain_decrease: Option<(DepthMap, f64)> = None;
        let mut smallest_rise = f64::INFINITY;
        'directions: for dir in [&blurred, &grad] {
            let dmax = dir.as_slice().iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if dmax < 1e-15 {
                continue;
            }
            let slope: f64 = grad
                .as_slice()
                .iter()
                .zip(dir.as_slice())
                .map(|(g, d)| g * d)
                .sum();
            let mut t = step / dmax;
            for _ in 0..MAX_BACKTRACKS {
                let candidate = move_along(&x, dir, t);
                match composite_value(&candidate, sparse, current, neighbors, k, weights) {
                    Ok(c_new) if c_new <= c - ARMIJO_C1 * t * slope => {
                        accepted = Some((candidate, c_new));
                        break 'directions;
                    }
                    Ok(c_new) => {
                        if c_new < c && plain_decrease.as_ref().map_or(true, |&(_, pc)| c_new < pc) {
                            plain_decrease = Some((candidate, c_new));
                        }
                        smallest_rise = smallest_rise.min(c_new - c);
                        t *= 0.5;
                    }
                    // A candidate that warps off the neighbour images is
                    // just a bad step, not a fatal state.
                    Err(PredictorError::DegenerateWarp) => t *= 0.5,
                    Err(e) => return Err(e),
                }
            }
        }
        match accepted.or(plain_decrease) {
            Some((candidate, c_new)) => {
                failures = 0;
                let decrease = c - c_new;
                x = candidate;
                c = c_new;
                if c < best_c {
                    best_c = c;
                    best = x.clone();
                }
                if decrease < opts.tolerance * c.abs().max(1.0) {
                    break;
                }
                let (_, g) = composite_objective(&x, sparse, current, neighbors, k, weights)?;
                grad = g;
            }
            None => {
                // No probe decreased the objective. If the smallest rise is
                // within tolerance we are at a minimum as far as this
                // tolerance can see; only rises beyond it count as a stall.
                if smallest_rise <= opts.tolerance * c.abs().max(1.0) {
                    break;
                }
                failures += 1;
                step *= 0.5;
                if failures >= MAX_LINE_SEARCH_FAILURES {
                    return Err(PredictorError::OptimizerStall {
                        best: Box::new(best),
                        objective: best_c,
                        failures,
                    });
                }
            }
        }
    }
    Ok(best)
}

fn move_along(x: &DepthMap, dir: &Grid<f64>, t: f64) -> DepthMap {
    let mut out = x.clone();
    for (r, c, d) in x.iter_known() {
        let g = *dir.get(r, c);
        if g != 0.0 {
            out.set(r, c, Some((d - t * g).max(MIN_DEPTH)));
        }
    }
    out
}

/// Separable [1,2,1]/4 blur restricted to the support mask, renormalized so
/// no weight leaks across the boundary.
fn blur_within(g: &Grid<f64>, support: &Grid<bool>, passes: usize) -> Grid<f64> {
    let (w, h) = (g.width(), g.height());
    let mut cur = g.clone();
    let mut next = Grid::filled(w, h, 0.0);
    for pass in 0..2 * passes {
        let horizontal = pass % 2 == 0;
        for r in 0..h {
            for c in 0..w {
                if !*support.get(r, c) {
                    *next.get_mut(r, c) = 0.0;
                    continue;
                }
                let mut sum = 2.0 * *cur.get(r, c);
                let mut norm = 2.0;
                let sides: [(isize, isize); 2] = if horizontal { [(0, -1), (0, 1)] } else { [(-1, 0), (1, 0)] };
                for (dr, dc) in sides {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w && *support.get(rr as usize, cc as usize)
                    {
                        sum += *cur.get(rr as usize, cc as usize);
                        norm += 1.0;
                    }
                }
                *next.get_mut(r, c) = sum / norm;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}
