//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use systolic::interconnect::{Demand, RoutingProblem};

/// Signal carried by one switch output: the source port it belongs to.
type Wire = Option<usize>;

/// Pushes every demand on `plane` through a switch-level model of an
/// `n`-port butterfly. Stage t holds n/2 two-by-two switches pairing rows
/// that differ in bit (log n - 1 - t); a switch output may carry one source
/// only, and a multicast may use both outputs of a switch.
fn plane_ok(n: usize, demands: &[&Demand]) -> bool {
    let bits = n.trailing_zeros() as usize;
    // rows currently reached by each demand, starting at its source
    let mut reach: Vec<Vec<usize>> = demands.iter().map(|d| vec![d.source]).collect();
    for t in 0..bits {
        let bit = 1usize << (bits - 1 - t);
        let mut out: Vec<Wire> = vec![None; n];
        for (di, d) in demands.iter().enumerate() {
            let mut next = Vec::new();
            for &row in &reach[di] {
                // the dests this copy still serves agree with `row` on the
                // bits already resolved
                let resolved_mask = !(2 * bit - 1) & (n - 1);
                for &dst in &d.dests {
                    if dst & resolved_mask != row & resolved_mask {
                        continue;
                    }
                    let to = (row & !bit) | (dst & bit);
                    if !next.contains(&to) {
                        next.push(to);
                    }
                }
            }
            for &to in &next {
                match out[to] {
                    Some(s) if s != d.source => return false,
                    _ => out[to] = Some(d.source),
                }
            }
            reach[di] = next;
        }
    }
    true
}

/// Exhaustive search over every plane assignment of every demand.
pub fn butterfly_feasible(n: usize, k: usize, problem: &RoutingProblem) -> bool {
    let d = problem.demands.len();
    let total = k.pow(d as u32);
    (0..total).any(|mut code| {
        let mut planes = vec![Vec::new(); k];
        for dem in &problem.demands {
            planes[code % k].push(dem);
            code /= k;
        }
        planes.iter().all(|p| plane_ok(n, p))
    })
}

/// Random destination-exclusive demand set with distinct sources; some
/// demands are multicasts.
pub fn random_problem<R: Rng>(rng: &mut R, n: usize) -> RoutingProblem {
    let mut dests: Vec<usize> = (0..n).collect();
    dests.shuffle(rng);
    dests.truncate(rng.gen_range(1..=n));
    let mut sources: Vec<usize> = (0..n).collect();
    sources.shuffle(rng);
    let mut demands = Vec::new();
    let mut rest = dests.as_slice();
    for &s in &sources {
        if rest.is_empty() {
            break;
        }
        let take = if rng.gen_bool(0.25) { rng.gen_range(1..=rest.len().min(3)) } else { 1 };
        demands.push(Demand {
            source: s,
            dests: rest[..take].to_vec(),
        });
        rest = &rest[take..];
    }
    RoutingProblem::new(demands)
}
