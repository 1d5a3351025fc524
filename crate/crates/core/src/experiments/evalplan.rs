//! Assigns crowd raters to word lists for a human evaluation round.
//!
//! Every rater receives a fixed number of distinct lists, and every list
//! is judged by its target number of raters — give or take one on some
//! lists when the two totals cannot match exactly. Construction deals
//! consecutive slots round-robin: list quotas occupy consecutive slot
//! runs, and slot `p` goes to rater `p mod n_raters`, which makes both
//! distinctness invariants hold whenever the quota arithmetic is
//! feasible.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::ExperimentError;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EvalPlanParams {
    pub n_raters: usize,
    /// Distinct lists each rater judges.
    pub per_rater: usize,
    /// Raters each list should get; actual counts land within one.
    pub per_list: usize,
    pub seed: u64,
}

/// How close the plan comes to the per-list target.
#[derive(Debug, Clone, Serialize)]
pub struct PlanCoverage {
    pub n_lists: usize,
    pub n_raters: usize,
    pub per_rater: usize,
    pub target_per_list: usize,
    pub n_at_target: usize,
    pub n_above: usize,
    pub n_below: usize,
    pub fraction_at_target: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationPlan {
    /// One entry per rater: the list ids that rater judges.
    pub raters: Vec<Vec<String>>,
    /// How many raters each list id received.
    pub list_counts: BTreeMap<String, usize>,
    pub coverage: PlanCoverage,
}

fn infeasible(reason: String, minimal: Option<usize>) -> ExperimentError {
    ExperimentError::InfeasiblePlan {
        reason,
        minimal_raters: minimal,
    }
}

/// Whether quota arithmetic works out for `n_raters` at these settings.
fn arithmetic_ok(n_lists: usize, n_raters: usize, per_rater: usize, per_list: usize) -> bool {
    let slots = n_raters * per_rater;
    if slots < n_lists * (per_list - 1) || slots > n_lists * (per_list + 1) {
        return false;
    }
    // Largest quota any list ends up with must not exceed the rater
    // pool, or that list would need the same rater twice.
    let max_quota = if slots > n_lists * per_list {
        per_list + 1
    } else if slots == n_lists * (per_list - 1) {
        per_list - 1
    } else {
        per_list
    };
    max_quota <= n_raters
}

/// Checks that a plan exists for these parameters. On failure the error
/// carries the smallest workable rater count at the same `per_rater` and
/// `per_list`, when one exists.
pub fn check_plan_feasibility(
    n_lists: usize,
    params: &EvalPlanParams,
) -> Result<(), ExperimentError> {
    let EvalPlanParams {
        n_raters,
        per_rater,
        per_list,
        ..
    } = *params;
    if n_lists == 0 || n_raters == 0 || per_rater == 0 || per_list == 0 {
        return Err(infeasible(
            "lists, raters, per_rater and per_list must all be positive".into(),
            None,
        ));
    }
    if per_rater > n_lists {
        return Err(infeasible(
            format!("each rater needs {per_rater} distinct lists but only {n_lists} exist"),
            None,
        ));
    }
    if arithmetic_ok(n_lists, n_raters, per_rater, per_list) {
        return Ok(());
    }
    let lo = (n_lists * (per_list - 1)).div_ceil(per_rater).max(1);
    let hi = n_lists * (per_list + 1) / per_rater;
    let minimal = (lo..=hi).find(|&r| arithmetic_ok(n_lists, r, per_rater, per_list));
    let slots = n_raters * per_rater;
    let reason = if slots < n_lists * (per_list - 1) {
        format!(
            "{n_raters} raters x {per_rater} lists gives {slots} judgments, short of the \
             {} needed to reach {} per list",
            n_lists * (per_list - 1),
            per_list - 1,
        )
    } else if slots > n_lists * (per_list + 1) {
        format!(
            "{n_raters} raters x {per_rater} lists gives {slots} judgments, above the \
             {} that {} per list can absorb",
            n_lists * (per_list + 1),
            per_list + 1,
        )
    } else {
        format!("some list would need more than {n_raters} distinct raters")
    };
    Err(infeasible(reason, minimal))
}

/// Builds the assignment. Deterministic in the seed: the list order and
/// which lists absorb the over- or under-shoot both come from one
/// seeded shuffle.
pub fn build_evaluation_plan(
    list_ids: &[String],
    params: &EvalPlanParams,
) -> Result<EvaluationPlan, ExperimentError> {
    check_plan_feasibility(list_ids.len(), params)?;
    {
        let mut seen = std::collections::BTreeSet::new();
        for id in list_ids {
            if !seen.insert(id) {
                return Err(ExperimentError::Config(format!(
                    "duplicate list id {id:?} in evaluation plan input"
                )));
            }
        }
    }
    let n_lists = list_ids.len();
    let n_raters = params.n_raters;
    let slots = n_raters * params.per_rater;
    let target_total = n_lists * params.per_list;

    let mut order: Vec<usize> = (0..n_lists).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    order.shuffle(&mut rng);

    // The first `adjusted` lists in shuffled order take the +/-1.
    let mut quotas = vec![params.per_list; n_lists];
    if slots >= target_total {
        for &i in order.iter().take(slots - target_total) {
            quotas[i] += 1;
        }
    } else {
        for &i in order.iter().take(target_total - slots) {
            quotas[i] -= 1;
        }
    }

    let mut raters: Vec<Vec<String>> = (0..n_raters)
        .map(|_| Vec::with_capacity(params.per_rater))
        .collect();
    let mut list_counts = BTreeMap::new();
    let mut slot = 0usize;
    for &i in &order {
        for _ in 0..quotas[i] {
            raters[slot % n_raters].push(list_ids[i].clone());
            slot += 1;
        }
        list_counts.insert(list_ids[i].clone(), quotas[i]);
    }
    debug_assert_eq!(slot, slots);

    let n_at_target = quotas.iter().filter(|&&q| q == params.per_list).count();
    let n_above = quotas.iter().filter(|&&q| q > params.per_list).count();
    let n_below = quotas.iter().filter(|&&q| q < params.per_list).count();
    Ok(EvaluationPlan {
        raters,
        list_counts,
        coverage: PlanCoverage {
            n_lists,
            n_raters,
            per_rater: params.per_rater,
            target_per_list: params.per_list,
            n_at_target,
            n_above,
            n_below,
            fraction_at_target: n_at_target as f64 / n_lists as f64,
        },
    })
}
