//! Two-dimensional views of the entities attached to a relation, labelled
//! by the dictionary row their lookup selects.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::data::TripleStore;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::ndmath::{pca2, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPoint {
    pub entity: u32,
    pub x: f32,
    pub y: f32,
    /// Argmax of the entity's lookup distribution.
    pub label: usize,
}

/// PCA projection of the training heads of `rel`.
pub fn project_relation(params: &ModelParams, store: &TripleStore, rel: u32) -> Result<Vec<ProjectedPoint>> {
    let heads = store.train_heads(rel);
    if heads.is_empty() {
        return Err(Error::Invalid(format!(
            "relation '{}' has no training triples",
            store.vocab().relation_name(rel)
        )));
    }
    let labels: Vec<usize> = heads
        .iter()
        .map(|&h| params.lookup(h, rel).map(|t| t.argmax()))
        .collect::<Result<_>>()?;
    let coords = if heads.len() == 1 {
        Mat::zeros(1, 2)
    } else {
        let rows: Vec<Vec<f32>> = heads.iter().map(|&h| params.entity(h).to_vec()).collect();
        pca2(&Mat::from_rows(&rows)?)?
    };
    Ok(heads
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&entity, label))| ProjectedPoint {
            entity,
            x: coords.get(i, 0),
            y: coords.get(i, 1),
            label,
        })
        .collect())
}

pub fn projection_csv(points: &[ProjectedPoint], store: &TripleStore) -> String {
    let mut s = String::from("entity,x,y,label\n");
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            store.vocab().entity_name(p.entity),
            p.x,
            p.y,
            p.label
        );
    }
    s
}

/// Fraction of items whose predicted label agrees with the majority truth of that label.
pub fn purity(predicted: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(predicted.len(), truth.len(), "label lists differ in length");
    if predicted.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<usize, HashMap<usize, usize>> = HashMap::new();
    for (&p, &t) in predicted.iter().zip(truth) {
        *counts.entry(p).or_default().entry(t).or_default() += 1;
    }
    let majority: usize = counts
        .values()
        .map(|c| c.values().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / predicted.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn purity_values() {
        assert_eq!(purity(&[0, 0, 1, 1], &[2, 2, 0, 0]), 1.0);
        assert_eq!(purity(&[0, 0, 0, 0], &[1, 1, 2, 2]), 0.5);
        assert_eq!(purity(&[3, 3, 1], &[0, 1, 1]), 2.0 / 3.0);
    }
}
