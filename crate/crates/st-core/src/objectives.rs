//! The training objective: prediction loss, margin loss with its weight
//! schedule, base-norm regularization, and the optional reconstruction loss.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Element, Tensor};

/// Safe-norm epsilon: norms are computed as `sqrt(sum + EPS)` so gradients
/// stay finite at zero vectors.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WMode {
    /// `1` off the diagonal, `-1` on it: push every class pair apart equally.
    Flat,
    /// Exponential decay `(1/2)^((N-1-|i-j|)/tau)` off the diagonal: nearby
    /// (ordinal) classes are separated less than distant ones.
    Ordinal,
}

/// The `N x N` weight matrix steering the margin loss.
#[derive(Debug, Clone)]
pub struct MarginWeightMatrix {
    pub n: usize,
    pub mode: WMode,
    pub tau: f64,
    w: Vec<f64>,
}

impl MarginWeightMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n + j]
    }
}

/// Build the margin weight matrix. `tau` defaults to `(N - 1) / 2`.
pub fn build_w(n: usize, mode: WMode, tau: Option<f64>) -> Result<MarginWeightMatrix> {
    if n < 2 {
        return Err(Error::Config(format!(
            "margin weights need at least 2 classes, got {n}"
        )));
    }
    let tau = match tau {
        Some(t) if t > 0.0 => t,
        Some(t) => {
            return Err(Error::Config(format!("tau must be positive, got {t}")));
        }
        None => (n as f64 - 1.0) / 2.0,
    };
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] = if i == j {
                -1.0
            } else {
                match mode {
                    WMode::Flat => 1.0,
                    WMode::Ordinal => {
                        let dist = i.abs_diff(j) as f64;
                        0.5f64.powf((n as f64 - 1.0 - dist) / tau)
                    }
                }
            };
        }
    }
    Ok(MarginWeightMatrix { n, mode, tau, w })
}

/// Mean cross-entropy of `logits` `(batch, classes)` against labels.
pub fn prediction_loss<F: Element>(
    g: &mut Graph<F>,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    g.cross_entropy_mean(logits, labels)
}

/// Margin loss over a batch of sparse representations `(batch, m)`.
///
/// Samples are grouped by label and averaged into per-class means; classes
/// absent from the batch are skipped. With `cosine` the means are
/// L2-normalized before the Gram product, so each pairwise term is a cosine
/// similarity; otherwise raw inner products are used. Returns
/// `sum(W ⊙ (Y_c Y_c^T))` restricted to the classes present.
pub fn margin_loss<F: Element>(
    g: &mut Graph<F>,
    reps: NodeId,
    labels: &[usize],
    w: &MarginWeightMatrix,
    cosine: bool,
) -> Result<NodeId> {
    let shape = g.shape(reps).to_vec();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Dim(format!(
            "margin loss needs (batch, m) reps matching {} labels, got {shape:?}",
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("margin loss over an empty batch".into()));
    }
    for &l in labels {
        if l >= w.n {
            return Err(Error::Data(format!(
                "label {l} out of range for {} classes",
                w.n
            )));
        }
    }
    let batch = labels.len();
    let mut present: Vec<usize> = labels.to_vec();
    present.sort_unstable();
    present.dedup();

    // Class means as one constant selector matmul: row k of the selector has
    // 1/count(class_k) at the columns belonging to class k.
    let mut sel = vec![F::zero(); present.len() * batch];
    for (k, &cls) in present.iter().enumerate() {
        let count = labels.iter().filter(|&&l| l == cls).count();
        let inv = F::from_f64(1.0 / count as f64);
        for (i, &l) in labels.iter().enumerate() {
            if l == cls {
                sel[k * batch + i] = inv;
            }
        }
    }
    let sel = g.constant(&Tensor::new(vec![present.len(), batch], sel)?);
    let means = g.matmul(sel, reps)?;
    let targets = if cosine {
        g.l2_normalize_rows(means, NORM_EPS)?
    } else {
        means
    };
    let tt = g.transpose(targets)?;
    let gram = g.matmul(targets, tt)?;

    let mut wsub = vec![F::zero(); present.len() * present.len()];
    for (a, &ca) in present.iter().enumerate() {
        for (b, &cb) in present.iter().enumerate() {
            wsub[a * present.len() + b] = F::from_f64(w.get(ca, cb));
        }
    }
    let wsub = g.constant(&Tensor::new(vec![present.len(), present.len()], wsub)?);
    let weighted = g.mul(gram, wsub)?;
    g.sum(weighted)
}

/// `sum_m (||b_m|| - 1)^2` over the columns of the `(d, m)` basis matrix.
pub fn base_regularization<F: Element>(g: &mut Graph<F>, bases: NodeId) -> Result<NodeId> {
    let cols = g.transpose(bases)?;
    let sq = g.mul(cols, cols)?;
    let sums = g.row_sum(sq)?;
    let norms = g.sqrt_eps(sums, NORM_EPS)?;
    let deviation = g.add_scalar(norms, -1.0)?;
    let dev_sq = g.mul(deviation, deviation)?;
    g.sum(dev_sq)
}

/// The three aligned sequences the reconstruction loss compares, all of
/// length `T` for a sentence of `T` words, plus their reconstructions:
/// word embeddings vs back-transformed word codes, prefix codes vs
/// forward-transformed recurrent states, and recurrent states vs
/// back-transformed prefix codes.
pub struct RlTerms {
    pub dense_words: Vec<NodeId>,
    pub dense_words_recon: Vec<NodeId>,
    pub prefix_codes: Vec<NodeId>,
    pub prefix_codes_recon: Vec<NodeId>,
    pub recurrent_states: Vec<NodeId>,
    pub recurrent_states_recon: Vec<NodeId>,
}

/// `sum_i (||x_i - x_i'||^2 + ||s_i - s_i'||^2 + ||X_i - X_i'||^2)`.
pub fn reconstruction_loss<F: Element>(g: &mut Graph<F>, terms: &RlTerms) -> Result<NodeId> {
    let t = terms.dense_words.len();
    let all_lens = [
        terms.dense_words_recon.len(),
        terms.prefix_codes.len(),
        terms.prefix_codes_recon.len(),
        terms.recurrent_states.len(),
        terms.recurrent_states_recon.len(),
    ];
    if all_lens.iter().any(|&l| l != t) {
        return Err(Error::Data(format!(
            "reconstruction loss term lengths disagree: {t} vs {all_lens:?}"
        )));
    }
    if t == 0 {
        return Err(Error::Data("reconstruction loss over an empty sentence".into()));
    }
    let mut total: Option<NodeId> = None;
    let pairs = terms
        .dense_words
        .iter()
        .zip(&terms.dense_words_recon)
        .chain(terms.prefix_codes.iter().zip(&terms.prefix_codes_recon))
        .chain(
            terms
                .recurrent_states
                .iter()
                .zip(&terms.recurrent_states_recon),
        );
    for (&a, &b) in pairs {
        let diff = g.sub(a, b)?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum(sq)?;
        total = Some(match total {
            Some(acc) => g.add(acc, s)?,
            None => s,
        });
    }
    Ok(total.expect("t > 0"))
}

/// Weighted sum of the loss parts. Parts with a zero weight (or absent
/// parts) are left out of the graph entirely, so disabling a term cannot
/// perturb the gradients of the others.
pub fn total_loss<F: Element>(
    g: &mut Graph<F>,
    parts: &[(Option<NodeId>, f64)],
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for &(part, weight) in parts {
        let Some(node) = part else { continue };
        if weight == 0.0 {
            continue;
        }
        let term = if weight == 1.0 {
            node
        } else {
            g.mul_scalar(node, weight)?
        };
        total = Some(match total {
            Some(acc) => g.add(acc, term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Config("total loss has no active terms".into()))
}
