//! Human-readable explanation sentences composed from per-node marginals.

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchyGraph, Level};
use crate::inference::MarginalVector;
use crate::scalar::Real;

pub const DEFAULT_EXPLAIN_THRESHOLD: f64 = 0.5;

fn join_names(names: &[String]) -> String {
    match names {
        [] => "unspecified".to_string(),
        [one] => one.clone(),
        [a, b] => format!("{a} and {b}"),
        many => {
            let (last, init) = many.split_last().expect("len >= 3");
            format!("{}, and {last}", init.join(", "))
        }
    }
}

/// Sentence describing the prediction: real below the threshold, otherwise a
/// statement naming the global attributes and local regions whose marginals
/// reach the threshold, in graph order. Empty tiers read "unspecified".
pub fn explain<T: Real>(
    graph: &HierarchyGraph,
    marginals: &MarginalVector<T>,
    threshold: f64,
) -> Result<String> {
    if marginals.len() != graph.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            actual: marginals.len(),
        });
    }
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::Domain(format!(
            "explanation threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let thr = T::of(threshold);
    if marginals.get(0) < thr {
        return Ok("The face image is real.".to_string());
    }
    let active = |level: Level| -> Vec<String> {
        graph
            .nodes()
            .iter()
            .filter(|n| n.level == level && marginals.get(n.id) >= thr)
            .map(|n| n.name.replace('_', " "))
            .collect()
    };
    let globals = active(Level::Global);
    let locals = active(Level::Local);
    let (attr_word, verb) = if globals.len() == 1 || globals.is_empty() {
        ("attribute", "is")
    } else {
        ("attributes", "are")
    };
    let region_word = if locals.len() == 1 || locals.is_empty() {
        "region"
    } else {
        "regions"
    };
    Ok(format!(
        "The face image is fake because the global face {attr_word} of {} {verb} altered, \
through manipulation of the local {} {region_word}.",
        join_names(&globals),
        join_names(&locals)
    ))
}
