//! The three semantic transformation operations.
//!
//! - forward transform: dense vector -> sparse code over the learned bases,
//!   `y = S(f(x) w_f B)`
//! - backward transform: sparse code -> dense vector, `x = F(tanh(w_b B y^T))`
//! - sparse-space composition: word codes -> prefix/sentence codes through
//!   preceding elimination, the leaky activation, summation, and clamping.
//!
//! All batched entry points treat the leading axis as the batch; the formulas
//! apply row-wise.

use rand_chacha::ChaCha8Rng;

use crate::activations::DerivMode;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{Act, Embedding, MlpStack, PAD_ID};
use crate::tensor::{Element, ParamId, ParamStore, Tensor};

/// The learned `(dense_dim, count)` matrix whose columns are the semantic
/// basis vectors.
#[derive(Debug, Clone)]
pub struct SemanticBases {
    pub b: ParamId,
    pub dense_dim: usize,
    pub count: usize,
}

impl SemanticBases {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        dense_dim: usize,
        count: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if count < 2 {
            return Err(Error::Config(format!(
                "at least 2 semantic bases required, got {count}"
            )));
        }
        let b = store.add(format!("{name}.b"), crate::layers::glorot(rng, dense_dim, count));
        Ok(SemanticBases {
            b,
            dense_dim,
            count,
        })
    }
}

/// Forward-transform parameters: feature MLP `f`, projection `w_f`, and the
/// sparse-activation hyperparameters.
#[derive(Debug, Clone)]
pub struct SftParams {
    pub f: MlpStack,
    pub w_f: ParamId,
    pub beta: f64,
    pub gamma: f64,
    pub deriv_mode: DerivMode,
}

impl SftParams {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        hidden: usize,
        dense_dim: usize,
        beta: f64,
        gamma: f64,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let f = MlpStack::new(
            store,
            &format!("{name}.f"),
            &[input_dim, hidden],
            Act::Tanh,
            Some(Act::Tanh),
            bias,
            rng,
        );
        let w_f = store.add(
            format!("{name}.w_f"),
            crate::layers::glorot(rng, hidden, dense_dim),
        );
        SftParams {
            f,
            w_f,
            beta,
            gamma,
            deriv_mode: DerivMode::Exact,
        }
    }
}

/// Backward-transform parameters: gain `w_b` (scalar, or one gain per dense
/// dimension) and the reconstruction MLP `F`.
#[derive(Debug, Clone)]
pub struct SbtParams {
    pub f_back: MlpStack,
    pub w_b: ParamId,
    pub per_dim_gain: bool,
}

impl SbtParams {
    pub fn new<F: Element>(
        store: &mut ParamStore<F>,
        name: &str,
        dense_dim: usize,
        hidden: usize,
        out_dim: usize,
        per_dim_gain: bool,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let f_back = MlpStack::new(
            store,
            &format!("{name}.F"),
            &[dense_dim, hidden, hidden, out_dim],
            Act::Tanh,
            None,
            bias,
            rng,
        );
        let w_b = if per_dim_gain {
            let mut t = Tensor::<F>::zeros(vec![1, dense_dim]);
            t.data_mut().iter_mut().for_each(|v| *v = F::one());
            store.add(format!("{name}.w_b"), t)
        } else {
            store.add(format!("{name}.w_b"), Tensor::scalar(F::one()))
        };
        SbtParams {
            f_back,
            w_b,
            per_dim_gain,
        }
    }
}

/// Forward transform of a batch of dense rows: `(batch, in) -> (batch, count)`.
/// Every output component is strictly inside (-1, 1).
pub fn sft_batch<F: Element>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    sft: &SftParams,
    bases: &SemanticBases,
    x: NodeId,
) -> Result<NodeId> {
    let p = sft.f.forward(g, store, x)?;
    let w_f = g.param(store, sft.w_f);
    let proj = g.matmul(p, w_f)?;
    let b = g.param(store, bases.b);
    let pre = g.matmul(proj, b)?;
    g.sparse_act(pre, sft.beta, sft.gamma, sft.deriv_mode)
}

/// Forward transform of a single dense vector: `(in,) -> (count,)`.
pub fn sft_vec<F: Element>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    sft: &SftParams,
    bases: &SemanticBases,
    x: NodeId,
) -> Result<NodeId> {
    let n = g.value(x).len();
    let row = g.reshape(x, vec![1, n])?;
    let y = sft_batch(g, store, sft, bases, row)?;
    let m = g.shape(y)[1];
    g.reshape(y, vec![m])
}

/// Backward transform of a batch of sparse rows: `(batch, count) -> (batch, out)`.
pub fn sbt_batch<F: Element>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    sbt: &SbtParams,
    bases: &SemanticBases,
    y: NodeId,
) -> Result<NodeId> {
    let b = g.param(store, bases.b);
    let bt = g.transpose(b)?;
    let pre = g.matmul(y, bt)?;
    let gain = g.param(store, sbt.w_b);
    let scaled = if sbt.per_dim_gain {
        let rows = g.shape(pre)[0];
        if rows == 1 {
            g.mul(pre, gain)?
        } else {
            let ones = g.constant(&Tensor::new(vec![rows, 1], vec![F::one(); rows])?);
            let tiled = g.matmul(ones, gain)?;
            g.mul(pre, tiled)?
        }
    } else {
        g.mul(gain, pre)?
    };
    let t = g.tanh(scaled)?;
    sbt.f_back.forward(g, store, t)
}

/// Backward transform of a single sparse vector: `(count,) -> (out,)`.
pub fn sbt_vec<F: Element>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    sbt: &SbtParams,
    bases: &SemanticBases,
    y: NodeId,
) -> Result<NodeId> {
    let n = g.value(y).len();
    let row = g.reshape(y, vec![1, n])?;
    let out = sbt_batch(g, store, sbt, bases, row)?;
    let d = g.shape(out)[1];
    g.reshape(out, vec![d])
}

/// `-Relu(-prev) + Relu(cur)`: the previous word's negative components cancel
/// the current word's positive components.
pub fn preceding_elimination<F: Element>(
    g: &mut Graph<F>,
    prev: NodeId,
    cur: NodeId,
) -> Result<NodeId> {
    if g.value(prev).len() != g.value(cur).len() {
        return Err(Error::Dim(format!(
            "preceding elimination on mismatched lengths {} and {}",
            g.value(prev).len(),
            g.value(cur).len()
        )));
    }
    let neg_prev = g.negate(prev)?;
    let relu_neg = g.relu(neg_prev)?;
    let neg_part = g.negate(relu_neg)?;
    let pos_part = g.relu(cur)?;
    g.add(neg_part, pos_part)
}

/// Sparse-space composition: word codes -> all prefix codes `s_1..s_T`.
///
/// `s_t = clamp(sum_{i=1..t} leaky(pe(y_{i-1}, y_i)), -1, 1)` with `y_0 = 0`.
/// With `clamp_per_prefix = false` only the final prefix is clamped and the
/// intermediate ones are returned as raw running sums.
pub fn scss<F: Element>(
    g: &mut Graph<F>,
    ys: &[NodeId],
    kappa: f64,
    theta: f64,
    clamp_per_prefix: bool,
) -> Result<Vec<NodeId>> {
    if ys.is_empty() {
        return Err(Error::Data("composition over an empty sequence".into()));
    }
    let m = g.value(ys[0]).len();
    let mut prev = g.zeros(vec![m]);
    let mut running: Option<NodeId> = None;
    let mut prefixes = Vec::with_capacity(ys.len());
    for (t, &y) in ys.iter().enumerate() {
        let pe = preceding_elimination(g, prev, y)?;
        let term = g.leaky(pe, kappa, theta)?;
        let sum = match running {
            Some(r) => g.add(r, term)?,
            None => term,
        };
        running = Some(sum);
        let is_last = t + 1 == ys.len();
        if clamp_per_prefix || is_last {
            prefixes.push(g.clamp(sum, -1.0, 1.0)?);
        } else {
            prefixes.push(sum);
        }
        prev = y;
    }
    Ok(prefixes)
}

/// Everything produced while encoding one sentence.
pub struct SentenceEncoding {
    /// Tokens that survived PAD stripping.
    pub tokens: Vec<usize>,
    /// Embedded token matrix `(T, emb_dim)`.
    pub embedded: NodeId,
    /// Per-word sparse codes, each `(count,)`.
    pub word_codes: Vec<NodeId>,
    /// Prefix codes `s_1..s_T`, each `(count,)`.
    pub prefixes: Vec<NodeId>,
    /// The sentence code `s_T`.
    pub sentence: NodeId,
}

/// Embed, forward-transform, and compose one sentence. PAD tokens are
/// stripped; a sentence of only PADs is a data error.
#[allow(clippy::too_many_arguments)]
pub fn encode_sentence<F: Element>(
    g: &mut Graph<F>,
    store: &ParamStore<F>,
    embedding: &Embedding,
    sft: &SftParams,
    bases: &SemanticBases,
    tokens: &[usize],
    kappa: f64,
    theta: f64,
    clamp_per_prefix: bool,
) -> Result<SentenceEncoding> {
    let kept: Vec<usize> = tokens.iter().copied().filter(|&t| t != PAD_ID).collect();
    if kept.is_empty() {
        return Err(Error::Data("sentence is empty after PAD stripping".into()));
    }
    let embedded = embedding.embed(g, store, &kept)?;
    let codes_mat = sft_batch(g, store, sft, bases, embedded)?;
    let mut word_codes = Vec::with_capacity(kept.len());
    for t in 0..kept.len() {
        word_codes.push(g.slice_row(codes_mat, t)?);
    }
    let prefixes = scss(g, &word_codes, kappa, theta, clamp_per_prefix)?;
    let sentence = *prefixes.last().expect("non-empty");
    Ok(SentenceEncoding {
        tokens: kept,
        embedded,
        word_codes,
        prefixes,
        sentence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    struct Fixture {
        store: ParamStore<f64>,
        sft: SftParams,
        sbt: SbtParams,
        bases: SemanticBases,
    }

    fn fixture(input_dim: usize, hidden: usize, d: usize, m: usize) -> Fixture {
        let mut r = rng();
        let mut store = ParamStore::new();
        let sft = SftParams::new(&mut store, "sft", input_dim, hidden, d, 1.0, 2.0, true, &mut r);
        let sbt = SbtParams::new(&mut store, "sbt", d, hidden, input_dim, false, true, &mut r);
        let bases = SemanticBases::new(&mut store, "bases", d, m, &mut r).unwrap();
        Fixture {
            store,
            sft,
            sbt,
            bases,
        }
    }

    #[test]
    fn bases_require_at_least_two_columns() {
        let mut r = rng();
        let mut store = ParamStore::<f64>::new();
        assert!(SemanticBases::new(&mut store, "b", 4, 1, &mut r).is_err());
    }

    #[test]
    fn sft_with_zero_feature_weights_is_zero() {
        let mut fx = fixture(4, 5, 6, 8);
        let wid = fx.sft.f.layers[0].w;
        fx.store.get_mut(wid).data_mut().iter_mut().for_each(|v| *v = 0.0);
        if let Some(bid) = fx.sft.f.layers[0].b {
            fx.store.get_mut(bid).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_f64s(vec![4], &[0.3, -0.2, 0.9, 0.1]).unwrap());
        let y = sft_vec(&mut g, &fx.store, &fx.sft, &fx.bases, x).unwrap();
        assert_eq!(g.value(y), &[0.0; 8]);
    }

    #[test]
    fn sft_matches_manual_composition() {
        let fx = fixture(4, 5, 6, 8);
        let mut r = rng();
        let xs: Vec<f64> = (0..4).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let x = g.constant(&Tensor::from_f64s(vec![1, 4], &xs).unwrap());
        let y = sft_batch(&mut g, &fx.store, &fx.sft, &fx.bases, x).unwrap();

        // Manual composition through the public ops.
        let p = fx.sft.f.forward(&mut g, &fx.store, x).unwrap();
        let wf = g.param(&fx.store, fx.sft.w_f);
        let proj = g.matmul(p, wf).unwrap();
        let b = g.param(&fx.store, fx.bases.b);
        let pre = g.matmul(proj, b).unwrap();
        let manual = g
            .sparse_act(pre, 1.0, 2.0, crate::activations::DerivMode::Exact)
            .unwrap();
        for (a, b) in g.value(y).iter().zip(g.value(manual)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sft_outputs_strictly_inside_unit_interval() {
        let fx = fixture(4, 5, 6, 16);
        let mut r = rng();
        let mut g = Graph::new();
        for _ in 0..50 {
            let xs: Vec<f64> = (0..4).map(|_| r.gen_range(-5.0..5.0)).collect();
            let x = g.constant(&Tensor::from_f64s(vec![4], &xs).unwrap());
            let y = sft_vec(&mut g, &fx.store, &fx.sft, &fx.bases, x).unwrap();
            for &v in g.value(y) {
                assert!(v > -1.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn sbt_of_zero_code_is_constant_f_of_zero() {
        let fx = fixture(4, 5, 6, 8);
        let mut g = Graph::new();
        let y = g.zeros(vec![8]);
        let out = sbt_vec(&mut g, &fx.store, &fx.sbt, &fx.bases, y).unwrap();
        let z = g.zeros(vec![1, 6]);
        let expect = fx.sbt.f_back.forward(&mut g, &fx.store, z).unwrap();
        for (a, b) in g.value(out).iter().zip(g.value(expect)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn sbt_with_zero_gain_ignores_the_code() {
        let mut fx = fixture(4, 5, 6, 8);
        fx.store.get_mut(fx.sbt.w_b).data_mut()[0] = 0.0;
        let mut r = rng();
        let mut g = Graph::new();
        let y1: Vec<f64> = (0..8).map(|_| r.gen_range(-0.9..0.9)).collect();
        let y2: Vec<f64> = (0..8).map(|_| r.gen_range(-0.9..0.9)).collect();
        let n1 = g.constant(&Tensor::from_f64s(vec![8], &y1).unwrap());
        let n2 = g.constant(&Tensor::from_f64s(vec![8], &y2).unwrap());
        let o1 = sbt_vec(&mut g, &fx.store, &fx.sbt, &fx.bases, n1).unwrap();
        let o2 = sbt_vec(&mut g, &fx.store, &fx.sbt, &fx.bases, n2).unwrap();
        assert_eq!(g.value(o1), g.value(o2));
    }

    #[test]
    fn sbt_matches_manual_composition() {
        let fx = fixture(4, 5, 6, 8);
        let mut r = rng();
        let ys: Vec<f64> = (0..8).map(|_| r.gen_range(-0.9..0.9)).collect();
        let mut g = Graph::new();
        let y = g.constant(&Tensor::from_f64s(vec![1, 8], &ys).unwrap());
        let out = sbt_batch(&mut g, &fx.store, &fx.sbt, &fx.bases, y).unwrap();

        let b = g.param(&fx.store, fx.bases.b);
        let bt = g.transpose(b).unwrap();
        let pre = g.matmul(y, bt).unwrap();
        let gain = g.param(&fx.store, fx.sbt.w_b);
        let scaled = g.mul(gain, pre).unwrap();
        let t = g.tanh(scaled).unwrap();
        let manual = fx.sbt.f_back.forward(&mut g, &fx.store, t).unwrap();
        for (a, b) in g.value(out).iter().zip(g.value(manual)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn preceding_elimination_hand_cases() {
        let mut g = Graph::<f64>::new();
        let prev = g.constant(&Tensor::from_f64s(vec![3], &[-0.5, 0.2, 0.0]).unwrap());
        let cur = g.constant(&Tensor::from_f64s(vec![3], &[0.8, -0.3, 0.4]).unwrap());
        let out = preceding_elimination(&mut g, prev, cur).unwrap();
        let v = g.value(out);
        assert!((v[0] - 0.3).abs() < 1e-12);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 0.4).abs() < 1e-12);

        // prev all non-negative: nothing is eliminated
        let prev2 = g.constant(&Tensor::from_f64s(vec![3], &[0.1, 0.0, 0.9]).unwrap());
        let out2 = preceding_elimination(&mut g, prev2, cur).unwrap();
        assert_eq!(g.value(out2), &[0.8, 0.0, 0.4]);

        // exact cancellation
        let pos = g.constant(&Tensor::from_f64s(vec![2], &[0.6, 0.2]).unwrap());
        let neg = g.constant(&Tensor::from_f64s(vec![2], &[-0.6, -0.2]).unwrap());
        let out3 = preceding_elimination(&mut g, neg, pos).unwrap();
        assert_eq!(g.value(out3), &[0.0, 0.0]);
    }

    #[test]
    fn preceding_elimination_length_mismatch() {
        let mut g = Graph::<f64>::new();
        let a = g.zeros(vec![3]);
        let b = g.zeros(vec![4]);
        assert!(matches!(
            preceding_elimination(&mut g, a, b),
            Err(Error::Dim(_))
        ));
    }

    #[test]
    fn scss_single_word_matches_direct_evaluation() {
        // s_1 = leaky(Relu(y_1)) with y_0 = 0: only positive parts survive.
        let mut g = Graph::<f64>::new();
        let y = g.constant(&Tensor::from_f64s(vec![3], &[0.3, 0.0, 0.4]).unwrap());
        let prefixes = scss(&mut g, &[y], 10.0, 0.1, true).unwrap();
        let v = g.value(prefixes[0]);
        assert!((v[0] - 0.2642391233933647).abs() < 1e-9);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - 0.3810296507289734).abs() < 1e-9);
    }

    #[test]
    fn scss_clamps_running_sums_to_one() {
        let mut g = Graph::<f64>::new();
        let y1 = g.constant(&Tensor::from_f64s(vec![1], &[0.65]).unwrap());
        let y2 = g.constant(&Tensor::from_f64s(vec![1], &[0.65]).unwrap());
        let prefixes = scss(&mut g, &[y1, y2], 10.0, 0.1, true).unwrap();
        // leaky(0.65) ~ 0.6474 each; the running sum 1.2947 clamps to 1.
        assert!(g.value(prefixes[0])[0] < 1.0);
        assert_eq!(g.value(prefixes[1])[0], 1.0);
    }

    #[test]
    fn scss_is_order_sensitive() {
        let mut r = rng();
        let mut g = Graph::<f64>::new();
        let a_vals: Vec<f64> = (0..6).map(|_| r.gen_range(-0.8..0.8)).collect();
        let b_vals: Vec<f64> = (0..6).map(|_| r.gen_range(-0.8..0.8)).collect();
        let a = g.constant(&Tensor::from_f64s(vec![6], &a_vals).unwrap());
        let b = g.constant(&Tensor::from_f64s(vec![6], &b_vals).unwrap());
        let ab = scss(&mut g, &[a, b], 10.0, 0.1, true).unwrap();
        let ba = scss(&mut g, &[b, a], 10.0, 0.1, true).unwrap();
        let diff = g
            .value(ab[1])
            .iter()
            .zip(g.value(ba[1]))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6, "swapping word order left s_2 unchanged");
    }

    #[test]
    fn scss_prefixes_are_prefix_consistent() {
        let mut r = rng();
        let mut g = Graph::<f64>::new();
        let ys: Vec<NodeId> = (0..5)
            .map(|_| {
                let vals: Vec<f64> = (0..4).map(|_| r.gen_range(-0.9..0.9)).collect();
                g.constant(&Tensor::from_f64s(vec![4], &vals).unwrap())
            })
            .collect();
        let full = scss(&mut g, &ys, 10.0, 0.1, true).unwrap();
        for k in 0..5 {
            let part = scss(&mut g, &ys[..=k], 10.0, 0.1, true).unwrap();
            assert_eq!(g.value(full[k]), g.value(part[k]), "prefix {k}");
        }
    }

    #[test]
    fn scss_prefixes_stay_in_closed_unit_interval() {
        let mut r = rng();
        let mut g = Graph::<f64>::new();
        let ys: Vec<NodeId> = (0..12)
            .map(|_| {
                let vals: Vec<f64> = (0..8).map(|_| r.gen_range(-0.999..0.999)).collect();
                g.constant(&Tensor::from_f64s(vec![8], &vals).unwrap())
            })
            .collect();
        let prefixes = scss(&mut g, &ys, 10.0, 0.1, true).unwrap();
        for p in prefixes {
            for &v in g.value(p) {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn scss_empty_sequence_is_data_error() {
        let mut g = Graph::<f64>::new();
        assert!(matches!(
            scss(&mut g, &[], 10.0, 0.1, true),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn encode_sentence_basics() {
        let mut r = rng();
        let mut store = ParamStore::<f64>::new();
        let emb = Embedding::new(&mut store, "emb", 10, 4, 0.1, &mut r);
        let sft = SftParams::new(&mut store, "sft", 4, 5, 6, 1.0, 2.0, true, &mut r);
        let bases = SemanticBases::new(&mut store, "bases", 6, 8, &mut r).unwrap();

        // one-token sentence: s_T equals s_1
        let mut g = Graph::new();
        let enc = encode_sentence(&mut g, &store, &emb, &sft, &bases, &[3], 10.0, 0.1, true).unwrap();
        assert_eq!(enc.prefixes.len(), 1);
        assert_eq!(g.value(enc.sentence), g.value(enc.prefixes[0]));

        // identical sentences encode identically, bit for bit
        let mut g1 = Graph::new();
        let e1 =
            encode_sentence(&mut g1, &store, &emb, &sft, &bases, &[3, 5, 2], 10.0, 0.1, true)
                .unwrap();
        let mut g2 = Graph::new();
        let e2 =
            encode_sentence(&mut g2, &store, &emb, &sft, &bases, &[3, 5, 2], 10.0, 0.1, true)
                .unwrap();
        assert_eq!(g1.value(e1.sentence), g2.value(e2.sentence));

        // PAD tokens are stripped before encoding
        let mut g3 = Graph::new();
        let e3 = encode_sentence(
            &mut g3,
            &store,
            &emb,
            &sft,
            &bases,
            &[3, PAD_ID, 5, 2, PAD_ID],
            10.0,
            0.1,
            true,
        )
        .unwrap();
        assert_eq!(e3.tokens, vec![3, 5, 2]);
        assert_eq!(g3.value(e3.sentence), g1.value(e1.sentence));

        // all-PAD sentence is a data error
        let mut g4 = Graph::new();
        assert!(matches!(
            encode_sentence(
                &mut g4,
                &store,
                &emb,
                &sft,
                &bases,
                &[PAD_ID, PAD_ID],
                10.0,
                0.1,
                true
            ),
            Err(Error::Data(_))
        ));
    }
}
