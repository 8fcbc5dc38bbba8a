//! Layer-wise contribution matrices built from transformed vectors.
//!
//! For an output `o` and transformed vectors `T_j`, the distance is
//! `d_j = |o - T_j|_1` and the contribution is
//! `max(0, |o|_1 - d_j) / sum_k max(0, |o|_1 - d_k)`. A contributor whose
//! transformed vector is exactly zero sits at distance `|o|_1` and therefore
//! receives exactly zero.

use serde::{Serialize, Serializer};

use crate::decomposition::{Attributor, Site, TransformedVectorSet};
use crate::error::{Error, Result};
use crate::scalar::{l1_distance, l1_norm, l2_norm, Scalar};
use crate::tensor::Matrix;

/// One normalized row plus its raw distances.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionRow {
    pub weights: Vec<f64>,
    pub distances: Vec<f64>,
    /// Every raw score clipped to zero; `weights` fell back to uniform.
    pub degenerate: bool,
}

/// Contribution of each `transformed[j]` to `output`.
pub fn contribution_weights<S: Scalar>(output: &[S], transformed: &[Vec<S>]) -> ContributionRow {
    let norm = l1_norm(output);
    let distances: Vec<f64> = transformed.iter().map(|t| l1_distance(output, t)).collect();
    let raw: Vec<f64> = distances.iter().map(|d| (norm - d).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        ContributionRow {
            weights: raw.iter().map(|r| r / total).collect(),
            distances,
            degenerate: false,
        }
    } else {
        let n = transformed.len() as f64;
        ContributionRow {
            weights: vec![1.0 / n; transformed.len()],
            distances,
            degenerate: true,
        }
    }
}

/// Contribution row of one decomposed block output.
pub fn contributions_from_transformed<S: Scalar>(set: &TransformedVectorSet<S>) -> ContributionRow {
    contribution_weights(&set.block_output, &set.transformed)
}

/// Row-stochastic matrix of token-to-token contributions for one block.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMatrix {
    pub site: Site,
    pub layer: usize,
    pub values: Matrix<f64>,
    /// Manhattan distances behind `values`, when they come from transformed vectors.
    pub distances: Option<Matrix<f64>>,
    /// Rows that hit the all-clipped fallback.
    pub degenerate_rows: Vec<usize>,
}

impl ContributionMatrix {
    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_sum_error(&self) -> f64 {
        self.values
            .row_sums()
            .iter()
            .map(|s| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_entry(&self) -> f64 {
        self.values.as_slice().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Row-major CSV. The header holds `col_labels`; with `row_labels`, each
    /// line starts with its label and the header starts with an empty cell.
    pub fn to_csv(&self, col_labels: &[String], row_labels: Option<&[String]>) -> Result<String> {
        matrix_to_csv(&self.values, col_labels, row_labels)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

impl Serialize for ContributionMatrix {
    fn serialize<Ser: Serializer>(&self, serializer: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        #[derive(Serialize)]
        struct Record<'a> {
            site: Site,
            layer: usize,
            shape: [usize; 2],
            values: &'a Matrix<f64>,
        }
        Record {
            site: self.site,
            layer: self.layer,
            shape: [self.rows(), self.cols()],
            values: &self.values,
        }
        .serialize(serializer)
    }
}

fn csv_cell(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn matrix_to_csv(m: &Matrix<f64>, col_labels: &[String], row_labels: Option<&[String]>) -> Result<String> {
    if col_labels.len() != m.cols() {
        return Err(Error::LengthMismatch {
            context: "csv column labels".into(),
            expected: m.cols(),
            found: col_labels.len(),
        });
    }
    if let Some(r) = row_labels {
        if r.len() != m.rows() {
            return Err(Error::LengthMismatch {
                context: "csv row labels".into(),
                expected: m.rows(),
                found: r.len(),
            });
        }
    }
    let mut out = String::new();
    let mut header: Vec<String> = Vec::with_capacity(m.cols() + 1);
    if row_labels.is_some() {
        header.push(String::new());
    }
    header.extend(col_labels.iter().map(|l| csv_cell(l)));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..m.rows() {
        let mut cells: Vec<String> = Vec::with_capacity(m.cols() + 1);
        if let Some(r) = row_labels {
            cells.push(csv_cell(&r[i]));
        }
        cells.extend(m.row(i).iter().map(|v| v.to_string()));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Contributions of one decoder layer, with the residual substituted by the
/// self-attention contributions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecoderLayerContributions {
    pub layer: usize,
    /// `T x J`: encoder outputs to cross block output.
    pub cross_part: Matrix<f64>,
    /// `T`: share of the cross block output owed to its residual.
    pub residual_part: Vec<f64>,
    /// `T x T`: prefix inputs to self-attention block output (causal).
    pub self_part: Matrix<f64>,
    /// `T x (J + T)`: `[cross_part | residual_part * self_part]`.
    pub combined: Matrix<f64>,
}

impl DecoderLayerContributions {
    /// Builds the layer matrix from a causal `T x T` self matrix and a
    /// `T x (J + 1)` cross matrix whose last column is the residual.
    pub fn assemble(layer: usize, self_part: Matrix<f64>, cross_with_residual: &Matrix<f64>) -> Result<Self> {
        let t = self_part.rows();
        if self_part.cols() != t || cross_with_residual.rows() != t || cross_with_residual.cols() < 1 {
            return Err(Error::Shape(format!(
                "self part {}x{} incompatible with cross part {}x{}",
                self_part.rows(),
                self_part.cols(),
                cross_with_residual.rows(),
                cross_with_residual.cols()
            )));
        }
        let j = cross_with_residual.cols() - 1;
        let mut cross_part = Matrix::zeros(t, j);
        let mut residual_part = Vec::with_capacity(t);
        let mut combined = Matrix::zeros(t, j + t);
        for row in 0..t {
            for c in 0..j {
                let v = cross_with_residual.get(row, c);
                cross_part.set(row, c, v);
                combined.set(row, c, v);
            }
            let r = cross_with_residual.get(row, j);
            residual_part.push(r);
            for k in 0..t {
                combined.set(row, j + k, r * self_part.get(row, k));
            }
        }
        Ok(Self {
            layer,
            cross_part,
            residual_part,
            self_part,
            combined,
        })
    }

    pub fn source_len(&self) -> usize {
        self.cross_part.cols()
    }

    pub fn target_len(&self) -> usize {
        self.self_part.rows()
    }

    /// `T x T` target block of `combined` (residual-weighted self part).
    pub fn target_part(&self) -> Matrix<f64> {
        let (t, j) = (self.target_len(), self.source_len());
        let mut m = Matrix::zeros(t, t);
        for r in 0..t {
            m.row_mut(r).copy_from_slice(&self.combined.row(r)[j..j + t]);
        }
        m
    }
}

/// Normalizes each row to sum one; an all-zero row becomes uniform over its
/// first `visible(row)` columns and is reported.
fn normalize_rows(m: &mut Matrix<f64>, visible: impl Fn(usize) -> usize) -> Vec<usize> {
    let mut degenerate = Vec::new();
    for r in 0..m.rows() {
        let n = visible(r);
        let total: f64 = m.row(r).iter().sum();
        let row = m.row_mut(r);
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        } else {
            row[..n].iter_mut().for_each(|v| *v = 1.0 / n as f64);
            degenerate.push(r);
        }
    }
    degenerate
}

impl<S: Scalar> Attributor<'_, S> {
    /// Stacks contribution rows over every position of a site. Rows of the
    /// causal site are zero-padded to `T` columns; the cross site keeps its
    /// residual as the last column.
    pub fn site_matrix(&self, site: Site, layer: usize) -> Result<ContributionMatrix> {
        let sets = self.transformed_vectors_all(site, layer)?;
        let rows = sets.len();
        let cols = sets.iter().map(TransformedVectorSet::len).max().unwrap_or(0);
        let mut values = Matrix::zeros(rows, cols);
        let mut distances = Matrix::zeros(rows, cols);
        let mut degenerate_rows = Vec::new();
        for (i, set) in sets.iter().enumerate() {
            let row = contributions_from_transformed(set);
            if row.degenerate {
                log::warn!("{site} layer {layer} row {i}: every contribution clipped to zero, using uniform row");
                degenerate_rows.push(i);
            }
            values.row_mut(i)[..row.weights.len()].copy_from_slice(&row.weights);
            distances.row_mut(i)[..row.distances.len()].copy_from_slice(&row.distances);
        }
        Ok(ContributionMatrix {
            site,
            layer,
            values,
            distances: Some(distances),
            degenerate_rows,
        })
    }

    /// `J x J` encoder self-attention contributions.
    pub fn encoder_layer_matrix(&self, layer: usize) -> Result<ContributionMatrix> {
        self.site_matrix(Site::EncoderSelf, layer)
    }

    /// Self, cross and residual contributions of one decoder layer.
    pub fn decoder_layer_matrices(&self, layer: usize) -> Result<DecoderLayerContributions> {
        let self_m = self.site_matrix(Site::DecoderSelf, layer)?;
        let cross_m = self.site_matrix(Site::DecoderCross, layer)?;
        DecoderLayerContributions::assemble(layer, self_m.values, &cross_m.values)
    }

    /// Raw attention probabilities averaged over heads.
    pub fn attention_matrix_baseline(&self, layer: usize, site: Site) -> Result<ContributionMatrix> {
        self.check_layer(site, layer)?;
        let attn = match site {
            Site::EncoderSelf => &self.trace.encoder[layer].self_attn,
            Site::DecoderSelf => &self.trace.decoder[layer].self_attn,
            Site::DecoderCross => &self.trace.decoder[layer].cross_attn,
        };
        Ok(ContributionMatrix {
            site,
            layer,
            values: attn.mean_over_heads(),
            distances: None,
            degenerate_rows: Vec::new(),
        })
    }

    /// Euclidean norms of `F_i(x_j)` and of `T_i(x_j)`, each row normalized.
    ///
    /// The `F` matrix covers attended tokens only. The `T` matrix covers all
    /// contributors, so at the cross site it has a trailing residual column.
    pub fn vector_norm_baselines(&self, layer: usize, site: Site) -> Result<(ContributionMatrix, ContributionMatrix)> {
        let sets = self.transformed_vectors_all(site, layer)?;
        let rows = sets.len();
        let f_cols = sets.iter().map(|s| s.mixed.len()).max().unwrap_or(0);
        let t_cols = sets.iter().map(TransformedVectorSet::len).max().unwrap_or(0);
        let mut f = Matrix::zeros(rows, f_cols);
        let mut t = Matrix::zeros(rows, t_cols);
        for (i, set) in sets.iter().enumerate() {
            for (j, v) in set.mixed.iter().enumerate() {
                f.set(i, j, l2_norm(v));
            }
            for (j, v) in set.transformed.iter().enumerate() {
                t.set(i, j, l2_norm(v));
            }
        }
        let f_deg = normalize_rows(&mut f, |r| sets[r].mixed.len());
        let t_deg = normalize_rows(&mut t, |r| sets[r].len());
        let wrap = |values, degenerate_rows| ContributionMatrix {
            site,
            layer,
            values,
            distances: None,
            degenerate_rows,
        };
        Ok((wrap(f, f_deg), wrap(t, t_deg)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    #[test]
    fn single_contributor_is_one() {
        let r = contribution_weights(&[0.3f64, -0.2], &[v(&[0.1, 0.4])]);
        assert_eq!(r.weights, vec![1.0]);
    }

    #[test]
    fn hand_example_exact_and_zero() {
        let r = contribution_weights(&[1.0f64, 0.0], &[v(&[1.0, 0.0]), v(&[0.0, 0.0])]);
        assert_eq!(r.distances, vec![0.0, 1.0]);
        assert_eq!(r.weights, vec![1.0, 0.0]);
        assert!(!r.degenerate);
    }

    #[test]
    fn hand_example_symmetric_halves() {
        let r = contribution_weights(&[1.0f64, 0.0], &[v(&[0.5, 0.0]), v(&[0.5, 0.0])]);
        assert_eq!(r.distances, vec![0.5, 0.5]);
        assert_eq!(r.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn all_clipped_falls_back_to_uniform() {
        let r = contribution_weights(&[1.0f64, 0.0], &[v(&[-3.0, 0.0]), v(&[0.0, 5.0])]);
        assert!(r.degenerate);
        assert_eq!(r.weights, vec![0.5, 0.5]);
    }

    #[test]
    fn assemble_residual_extremes() {
        let self_part = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.25, 0.75]]).unwrap();
        // Row 0: residual 0; row 1: residual 1.
        let cross = Matrix::from_rows(&[vec![0.6, 0.4, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let d = DecoderLayerContributions::assemble(0, self_part, &cross).unwrap();
        assert_eq!(d.combined.row(0), &[0.6, 0.4, 0.0, 0.0]);
        assert_eq!(d.combined.row(1), &[0.0, 0.0, 0.25, 0.75]);
        assert_eq!(d.residual_part, vec![0.0, 1.0]);
    }

    #[test]
    fn csv_and_json_records() {
        let m = ContributionMatrix {
            site: Site::EncoderSelf,
            layer: 1,
            values: Matrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap(),
            distances: None,
            degenerate_rows: vec![],
        };
        let labels = vec!["a".to_string(), "</s>".to_string()];
        assert_eq!(m.to_csv(&labels, None).unwrap(), "a,</s>\n0.5,0.5\n1,0\n");
        assert_eq!(
            m.to_csv(&labels, Some(&labels)).unwrap(),
            ",a,</s>\na,0.5,0.5\n</s>,1,0\n"
        );
        assert_eq!(
            m.to_json().unwrap(),
            r#"{"site":"encoder-self","layer":1,"shape":[2,2],"values":[[0.5,0.5],[1.0,0.0]]}"#
        );
        assert!(m.to_csv(&labels[..1], None).is_err());
    }
}
