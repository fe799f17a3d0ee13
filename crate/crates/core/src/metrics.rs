//! ROC AUC via the Mann-Whitney statistic, and per-node model evaluation.

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchyGraph;
use crate::inference::all_marginals;
use crate::loss::LabeledExample;
use crate::scalar::Real;

/// Scores with binary labels (`true` = positive/fake).
#[derive(Debug, Clone)]
pub struct RocInput<T: Real> {
    pub scores: Vec<T>,
    pub labels: Vec<bool>,
}

/// Probability that a random positive outranks a random negative, with half
/// credit for ties. The pair counts are accumulated in integers, so the
/// result is exactly the Mann-Whitney ratio.
pub fn auc<T: Real>(input: &RocInput<T>) -> Result<T> {
    if input.scores.len() != input.labels.len() {
        return Err(Error::DimensionMismatch {
            expected: input.scores.len(),
            actual: input.labels.len(),
        });
    }
    if let Some(i) = input.scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Domain(format!("non-finite score at index {i}")));
    }
    let n_pos = input.labels.iter().filter(|&&l| l).count();
    let n_neg = input.labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Domain(format!(
            "AUC needs both classes, got {n_pos} positive and {n_neg} negative"
        )));
    }

    let mut order: Vec<usize> = (0..input.scores.len()).collect();
    order.sort_by(|&a, &b| {
        input.scores[a]
            .partial_cmp(&input.scores[b])
            .expect("scores are finite")
    });

    // Walk tie groups in ascending score order.
    let mut wins: u128 = 0; // positive strictly above negative
    let mut ties: u128 = 0; // positive tied with negative
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let mut pos_here: u128 = 0;
        let mut neg_here: u128 = 0;
        while j < order.len() && input.scores[order[j]] == input.scores[order[i]] {
            if input.labels[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        wins += pos_here * neg_below;
        ties += pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    let numerator = 2 * wins + ties;
    let denominator = 2 * (n_pos as u128) * (n_neg as u128);
    Ok(T::of(numerator as f64) / T::of(denominator as f64))
}

/// AUC over a per-node report entry.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NodeAuc {
    pub name: String,
    /// None when the observed ground truth does not contain both classes.
    pub auc: Option<f64>,
    pub positives: usize,
    pub negatives: usize,
}

/// Detection report: the primary (root) AUC plus one entry per node.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub examples: usize,
    pub root_auc: Option<f64>,
    pub per_node: Vec<NodeAuc>,
}

/// Scores every example with the model marginals and computes per-node AUC
/// against the observed ground truth.
pub fn evaluate(
    model: &EmbeddingModel<f64>,
    graph: &HierarchyGraph,
    data: &[LabeledExample<f64>],
) -> Result<EvalReport> {
    if model.num_labels() != graph.len() {
        return Err(Error::DimensionMismatch {
            expected: graph.len(),
            actual: model.num_labels(),
        });
    }
    let mut per_node_scores: Vec<RocInput<f64>> = (0..graph.len())
        .map(|_| RocInput {
            scores: Vec::new(),
            labels: Vec::new(),
        })
        .collect();
    for example in data {
        let scores = model.scores(&example.x)?;
        let marginals = all_marginals(graph, &scores)?;
        for i in example.observed.iter() {
            per_node_scores[i].scores.push(marginals.get(i));
            per_node_scores[i].labels.push(example.y.get(i));
        }
    }
    let per_node: Vec<NodeAuc> = per_node_scores
        .iter()
        .enumerate()
        .map(|(i, input)| {
            let positives = input.labels.iter().filter(|&&l| l).count();
            let negatives = input.labels.len() - positives;
            NodeAuc {
                name: graph.node(i).name.clone(),
                auc: if positives > 0 && negatives > 0 {
                    Some(auc(input).expect("both classes present"))
                } else {
                    None
                },
                positives,
                negatives,
            }
        })
        .collect();
    Ok(EvalReport {
        examples: data.len(),
        root_auc: per_node[0].auc,
        per_node,
    })
}
