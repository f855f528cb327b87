use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::network::argmax;

/// Model output for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: u32,
    /// P_tot over ages `0..=Q`.
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn age(&self) -> u32 {
        argmax(&self.probs) as u32
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mae: f64,
    pub top1: f64,
    /// `confusion[true_age][predicted_age]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Mean absolute error in years of the argmax ages.
pub fn mae(preds: &[Prediction]) -> f64 {
    let total: f64 = preds.iter().map(|p| (p.age() as f64 - p.label as f64).abs()).sum();
    total / preds.len() as f64
}

fn group(groups: &[u32], age: u32) -> usize {
    groups.iter().take_while(|&&b| age >= b).count()
}

/// Fraction of samples whose most probable age group is the labelled one.
/// With no groups every age is its own group.
pub fn top1(preds: &[Prediction], groups: &[u32]) -> f64 {
    let hits = preds
        .iter()
        .filter(|p| {
            if groups.is_empty() {
                return p.age() == p.label;
            }
            let mut mass = vec![0.0; groups.len() + 1];
            for (t, &pr) in p.probs.iter().enumerate() {
                mass[group(groups, t as u32)] += pr;
            }
            argmax(&mass) == group(groups, p.label)
        })
        .count();
    hits as f64 / preds.len() as f64
}

pub fn confusion(preds: &[Prediction], num_ages: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; num_ages]; num_ages];
    for p in preds {
        let (t, a) = (p.label as usize, p.age() as usize);
        if t < num_ages && a < num_ages {
            m[t][a] += 1;
        }
    }
    m
}

pub fn evaluate_predictions(preds: &[Prediction], groups: &[u32], num_ages: usize) -> Result<Metrics, HarnessError> {
    if preds.is_empty() {
        return Err(HarnessError::Config("cannot evaluate an empty dataset".into()));
    }
    Ok(Metrics {
        n: preds.len(),
        mae: mae(preds),
        top1: top1(preds, groups),
        confusion: confusion(preds, num_ages),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(label: u32, age: usize, q1: usize) -> Prediction {
        let mut probs = vec![0.0; q1];
        probs[age] = 1.0;
        Prediction {
            id: String::new(),
            label,
            probs,
        }
    }

    #[test]
    fn perfect_predictions() {
        let preds: Vec<_> = (0..5).map(|a| one_hot(a, a as usize, 5)).collect();
        let m = evaluate_predictions(&preds, &[], 5).unwrap();
        assert_eq!((m.mae, m.top1), (0.0, 1.0));
        assert_eq!(m.confusion[3][3], 1);
    }

    #[test]
    fn single_error() {
        assert_eq!(mae(&[one_hot(5, 2, 8)]), 3.0);
    }

    #[test]
    fn group_mass_decides_top1() {
        // argmax age 0 is in group 0, but group 1 holds more mass.
        let p = Prediction {
            id: String::new(),
            label: 3,
            probs: vec![0.4, 0.0, 0.3, 0.3],
        };
        assert_eq!(top1(&[p], &[2]), 1.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(evaluate_predictions(&[], &[], 3).is_err());
    }
}
