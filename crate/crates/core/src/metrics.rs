//! Diagnostics of part-based representations: Hoyer sparseness of receptive
//! fields, negative-weight statistics, KL sparsity of hidden activity and
//! weight histograms.
//!
//! Hoyer sparseness is (√n − ‖v‖₁/‖v‖₂)/(√n − 1): 1 for a one-hot vector,
//! 0 when every entry has the same magnitude.

use std::io::Write;

use ndarray::ArrayView1;
use serde::Serialize;

use crate::autoencoder::{encode, kl_sparsity, mean_hidden_activation, AutoencoderParams};
use crate::coremath::Matrix;
use crate::deepnet::DeepNetwork;
use crate::error::{Error, Result};

/// Units whose incoming weights all have magnitude below this are dead.
pub const DEAD_UNIT_THRESHOLD: f64 = 1e-8;

pub fn hoyer_sparseness(v: ArrayView1<f64>) -> Result<f64> {
    let n = v.len();
    if n < 2 {
        return Err(Error::Data(format!("sparseness needs at least 2 entries, got {n}")));
    }
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let l2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if l2 == 0.0 {
        return Err(Error::Data("sparseness of an all-zero vector is undefined".into()));
    }
    let root = (n as f64).sqrt();
    Ok(((root - l1 / l2) / (root - 1.0)).clamp(0.0, 1.0))
}

fn is_dead(v: ArrayView1<f64>) -> bool {
    v.iter().all(|w| w.abs() < DEAD_UNIT_THRESHOLD)
}

/// Per-unit sparseness of the incoming weights of each hidden unit (rows of
/// an outputs × inputs matrix). Dead units yield `None`.
pub fn receptive_field_sparseness(w1: &Matrix) -> Vec<Option<f64>> {
    w1.rows()
        .into_iter()
        .map(|row| if is_dead(row) { None } else { hoyer_sparseness(row).ok() })
        .collect()
}

/// Per-unit sparseness of each hidden unit's decoding filter (columns of W2).
pub fn decoding_filter_sparseness(w2: &Matrix) -> Vec<Option<f64>> {
    receptive_field_sparseness(&w2.t().to_owned())
}

/// Sparseness of all weights pooled into one vector.
pub fn pooled_sparseness(w: &Matrix) -> Result<f64> {
    let flat: Vec<f64> = w.iter().copied().collect();
    hoyer_sparseness(ArrayView1::from(&flat))
}

pub fn mean_live(values: &[Option<f64>]) -> Option<f64> {
    let live: Vec<f64> = values.iter().flatten().copied().collect();
    (!live.is_empty()).then(|| live.iter().sum::<f64>() / live.len() as f64)
}

pub fn negative_weight_fraction(w: &Matrix) -> f64 {
    if w.is_empty() {
        return 0.0;
    }
    w.iter().filter(|&&x| x < 0.0).count() as f64 / w.len() as f64
}

/// Models that expose a hidden representation.
pub trait HiddenRepresentation {
    fn hidden(&self, x: &Matrix) -> Result<Matrix>;
}

impl HiddenRepresentation for AutoencoderParams {
    fn hidden(&self, x: &Matrix) -> Result<Matrix> {
        encode(self, x)
    }
}

impl HiddenRepresentation for DeepNetwork {
    fn hidden(&self, x: &Matrix) -> Result<Matrix> {
        self.features(x)
    }
}

/// KL sparsity of the mean hidden activations over `x`.
pub fn representation_kl<M: HiddenRepresentation + ?Sized>(model: &M, x: &Matrix, p: f64) -> Result<f64> {
    kl_sparsity(p, &mean_hidden_activation(&model.hidden(x)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform bins over [min, max] of the data; the last bin is closed.
pub fn weight_histogram<'a>(values: impl IntoIterator<Item = &'a f64>, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let values: Vec<f64> = values.into_iter().copied().collect();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut counts = vec![0; bins];
    if values.is_empty() {
        return Ok(Histogram {
            edges: vec![0.0; bins + 1],
            counts,
        });
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    for v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width).floor() as usize).min(bins - 1)
        } else {
            0
        };
        counts[idx] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityReport {
    /// Sparseness of each receptive field; `None` marks a dead unit.
    pub per_unit_sparseness: Vec<Option<f64>>,
    pub negative_fraction: f64,
    pub kl_divergence: f64,
    pub histogram: Histogram,
}

impl SparsityReport {
    pub fn dead_units(&self) -> usize {
        self.per_unit_sparseness.iter().filter(|v| v.is_none()).count()
    }

    /// One row per unit: `unit,sparseness,dead`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["unit", "sparseness", "dead"]).map_err(csv_err)?;
        for (unit, s) in self.per_unit_sparseness.iter().enumerate() {
            let value = s.map_or(String::new(), |v| format!("{v:.10}"));
            w.write_record([unit.to_string(), value, u8::from(s.is_none()).to_string()])
                .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Report over the encoder weights of an autoencoder. The KL term is computed
/// on `x`; a saturated unit surfaces as an error.
pub fn sparsity_report(params: &AutoencoderParams, x: &Matrix, p: f64, bins: usize) -> Result<SparsityReport> {
    Ok(SparsityReport {
        per_unit_sparseness: receptive_field_sparseness(&params.w1),
        negative_fraction: negative_weight_fraction(&params.w1),
        kl_divergence: representation_kl(params, x, p)?,
        histogram: weight_histogram(params.w1.iter(), bins)?,
    })
}

/// Fraction of negative weights across several matrices taken together.
pub fn pooled_negative_fraction(mats: &[&Matrix]) -> f64 {
    let total: usize = mats.iter().map(|m| m.len()).sum();
    if total == 0 {
        return 0.0;
    }
    let neg: usize = mats.iter().map(|m| m.iter().filter(|&&x| x < 0.0).count()).sum();
    neg as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{arr1, array};
    use proptest::prelude::*;

    #[test]
    fn hoyer_reference_values() {
        assert_eq!(hoyer_sparseness(arr1(&[0.0, 0.0, 5.0, 0.0]).view()).unwrap(), 1.0);
        assert_eq!(hoyer_sparseness(arr1(&[0.3, 0.3, 0.3, 0.3]).view()).unwrap(), 0.0);
        assert_eq!(hoyer_sparseness(arr1(&[-2.0, 2.0, 2.0, -2.0]).view()).unwrap(), 0.0);
        assert_abs_diff_eq!(
            hoyer_sparseness(arr1(&[1.0, 1.0, 0.0, 0.0]).view()).unwrap(),
            0.5857864376269049,
            epsilon = 1e-12
        );
        assert!(hoyer_sparseness(arr1(&[0.0, 0.0]).view()).is_err());
        assert!(hoyer_sparseness(arr1(&[1.0]).view()).is_err());
    }

    #[test]
    fn negative_fraction_cases() {
        assert_eq!(negative_weight_fraction(&array![[1.0, 2.0]]), 0.0);
        let w = array![[-1.0, 2.0], [-3.0, 4.0]];
        assert_eq!(negative_weight_fraction(&w), 0.5);
        let w = array![[-1.0, 2.0, 3.0], [4.0, -5.0, 6.0]];
        assert_abs_diff_eq!(
            negative_weight_fraction(&-&w),
            1.0 - negative_weight_fraction(&w),
            epsilon = 1e-15
        );
    }

    #[test]
    fn dead_units_are_flagged() {
        let w = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let s = receptive_field_sparseness(&w);
        assert_eq!(s, vec![None, Some(1.0)]);
        assert_eq!(mean_live(&s), Some(1.0));
    }

    #[test]
    fn decoding_filters_are_columns() {
        let w2 = array![[1.0, 0.5], [0.0, 0.5]];
        let s = decoding_filter_sparseness(&w2);
        assert_eq!(s[0], Some(1.0));
        assert_abs_diff_eq!(s[1].unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn histogram_cases() {
        let h = weight_histogram([0.4; 7].iter(), 1).unwrap();
        assert_eq!(h.counts, vec![7]);
        let vals: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let h = weight_histogram(vals.iter(), 9).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), 100);
        assert_eq!(h.edges.len(), 10);
        let sym = [-0.9, -0.55, -0.45, -0.1, 0.1, 0.45, 0.55, 0.9, -1.0, 1.0];
        let h = weight_histogram(sym.iter(), 4).unwrap();
        let mut rev = h.counts.clone();
        rev.reverse();
        assert_eq!(h.counts, rev);
        assert!(weight_histogram(sym.iter(), 0).is_err());
    }

    #[test]
    fn kl_is_zero_when_activity_hits_target() {
        // zero weights put every hidden unit at exactly 0.5
        let p = AutoencoderParams::zeros(3, 2);
        let x = Matrix::from_elem((4, 3), 0.2);
        assert_eq!(representation_kl(&p, &x, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn csv_has_one_row_per_unit() {
        let report = SparsityReport {
            per_unit_sparseness: vec![Some(0.5), None],
            negative_fraction: 0.1,
            kl_divergence: 0.2,
            histogram: weight_histogram([0.0, 1.0].iter(), 2).unwrap(),
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "unit,sparseness,dead\n0,0.5000000000,0\n1,,1\n");
        assert_eq!(report.dead_units(), 1);
    }

    proptest! {
        #[test]
        fn hoyer_invariants(v in prop::collection::vec(-10.0f64..10.0, 2..30), c in 0.01f64..100.0, flip in any::<bool>()) {
            let base = arr1(&v);
            prop_assume!(base.iter().any(|x| x.abs() > 1e-6));
            let s = hoyer_sparseness(base.view()).unwrap();
            prop_assert!((0.0..=1.0).contains(&s));
            let c = if flip { -c } else { c };
            let scaled = hoyer_sparseness((&base * c).view()).unwrap();
            prop_assert!((s - scaled).abs() < 1e-9);
            let mut rev = v.clone();
            rev.reverse();
            prop_assert!((s - hoyer_sparseness(arr1(&rev).view()).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn negative_fraction_in_unit_interval(v in prop::collection::vec(-1.0f64..1.0, 1..40)) {
            let n = v.len();
            let f = negative_weight_fraction(&Matrix::from_shape_vec((1, n), v).unwrap());
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
