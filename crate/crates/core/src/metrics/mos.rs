//! Mean-opinion-score aggregation.

use crate::error::{Error, Result};

/// Rater scores of one method on one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MosRecord {
    pub scores: Vec<f64>,
    pub method: String,
    pub dataset: String,
}

impl MosRecord {
    pub fn new(scores: Vec<f64>, method: impl Into<String>, dataset: impl Into<String>) -> Result<Self> {
        if let Some(s) = scores.iter().find(|s| !(0.0..=5.0).contains(*s)) {
            return Err(Error::invalid(format!("MOS score {s} outside [0, 5]")));
        }
        Ok(Self { scores, method: method.into(), dataset: dataset.into() })
    }
}

/// Drop one highest and one lowest score and average the rest.
pub fn mos_aggregate(scores: &[f64]) -> Result<f64> {
    if scores.len() < 3 {
        return Err(Error::invalid(format!("MOS aggregation needs at least 3 scores, got {}", scores.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("MOS scores must be finite"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let kept = &sorted[1..sorted.len() - 1];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

impl MosRecord {
    pub fn aggregate(&self) -> Result<f64> {
        mos_aggregate(&self.scores)
    }
}

/// Published aggregated scores: `(dataset, method, score)`. Raw rater
/// scores are not available, so these are stored rather than recomputed.
pub const REFERENCE_MOS: &[(&str, &str, f64)] = &[
    ("CVS", "FZL", 4.48),
    ("CVS", "CSR", 4.46),
    ("CVS", "CVT", 4.41),
    ("CVS", "CNN", 4.64),
    ("CVS", "GTF", 3.70),
    ("CVS", "LATLR", 4.47),
    ("CVS", "RP", 4.65),
    ("CVS", "FUSIONGAN", 3.80),
    ("CVS", "IFCNN", 4.68),
    ("CVS", "MCNN", 4.40),
    ("CVS", "OURS", 4.76),
    ("IR", "FZL", 4.18),
    ("IR", "CSR", 3.74),
    ("IR", "CVT", 4.51),
    ("IR", "CNN", 4.19),
    ("IR", "GTF", 4.08),
    ("IR", "LATLR", 4.43),
    ("IR", "RP", 4.68),
    ("IR", "FUSIONGAN", 4.22),
    ("IR", "IFCNN", 4.63),
    ("IR", "MCNN", 4.10),
    ("IR", "OURS", 4.79),
    ("MF", "FZL", 4.20),
    ("MF", "CSR", 4.35),
    ("MF", "CVT", 4.57),
    ("MF", "CNN", 4.66),
    ("MF", "GTF", 4.25),
    ("MF", "LATLR", 4.34),
    ("MF", "RP", 4.63),
    ("MF", "FUSIONGAN", 4.46),
    ("MF", "IFCNN", 4.70),
    ("MF", "MCNN", 4.67),
    ("MF", "OURS", 4.65),
];

pub fn reference_mos(dataset: &str, method: &str) -> Option<f64> {
    REFERENCE_MOS.iter().find(|(d, m, _)| *d == dataset && *m == method).map(|r| r.2)
}

/// The stored table as text, one dataset per line.
pub fn render_reference_mos() -> String {
    let mut methods: Vec<&str> = Vec::new();
    for (_, m, _) in REFERENCE_MOS {
        if !methods.contains(m) {
            methods.push(m);
        }
    }
    let mut out = format!("{:<6}", "DATA");
    for m in &methods {
        out += &format!(" {m:>9}");
    }
    out.push('\n');
    for d in ["CVS", "IR", "MF"] {
        out += &format!("{d:<6}");
        for m in &methods {
            out += &format!(" {:>9.2}", reference_mos(d, m).unwrap_or(f64::NAN));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn aggregation_examples() {
        assert_eq!(mos_aggregate(&[5.0, 5.0, 5.0, 5.0]).unwrap(), 5.0);
        assert_eq!(mos_aggregate(&[1.0, 2.0, 3.0, 4.0, 10.0]).unwrap(), 3.0);
        assert!(mos_aggregate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_drop_one_instance_each() {
        assert_eq!(mos_aggregate(&[1.0, 1.0, 4.0, 4.0]).unwrap(), 2.5);
    }

    #[test]
    fn stored_values_render() {
        assert_eq!(reference_mos("CVS", "OURS"), Some(4.76));
        assert_eq!(reference_mos("IR", "OURS"), Some(4.79));
        assert_eq!(reference_mos("MF", "IFCNN"), Some(4.70));
        let table = render_reference_mos();
        assert!(table.contains("4.76") && table.contains("4.79") && table.contains("4.70"));
    }

    #[test]
    fn records_validate_range() {
        assert!(MosRecord::new(vec![1.0, 5.5, 2.0], "m", "d").is_err());
        assert_eq!(MosRecord::new(vec![1.0, 3.0, 5.0], "m", "d").unwrap().aggregate().unwrap(), 3.0);
    }

    proptest! {
        #[test]
        fn permutation_invariant(mut scores in prop::collection::vec(0.0f64..=5.0, 3..12), seed in any::<u64>()) {
            let base = mos_aggregate(&scores).unwrap();
            use rand::{seq::SliceRandom, SeedableRng};
            scores.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((mos_aggregate(&scores).unwrap() - base).abs() < 1e-12);
        }
    }
}
