use serde::{Deserialize, Serialize};

use super::{attach, dense_layout, dense_stack, FeaturePair, ParamKind, ParamLayout, ParamNodes};
use crate::data::{Triple, Vocabulary};
use crate::error::{Error, Result};
use crate::numcore::{Bindings, Graph, NodeId, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Mean of frozen word vectors, then a tanh MLP. Each side is encoded
    /// on its own.
    BagOfEmbeddings,
    /// Tanh token encoder, one soft cross-alignment between the two
    /// sequences, mean pooling of `[own, aligned]`, tanh output layer.
    AlignPool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorSpec {
    pub encoder: EncoderKind,
    pub embedding_dim: usize,
    /// `K`, the size of the shared feature space.
    pub feature_dim: usize,
    pub hidden_dims: Vec<usize>,
}

impl Default for ProjectorSpec {
    fn default() -> Self {
        ProjectorSpec {
            encoder: EncoderKind::BagOfEmbeddings,
            embedding_dim: 50,
            feature_dim: 32,
            hidden_dims: Vec::new(),
        }
    }
}

impl ProjectorSpec {
    fn token_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.embedding_dim];
        dims.extend(&self.hidden_dims);
        dims.push(self.feature_dim);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 {
            return Err(Error::config("projector.embedding_dim", "must be > 0"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("projector.feature_dim", "must be > 0"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("projector.hidden_dims", "widths must be > 0"));
        }
        Ok(())
    }
}

impl ParamLayout for ProjectorSpec {
    fn layout(&self) -> Vec<(String, Vec<usize>, ParamKind)> {
        let dims = self.token_dims();
        match self.encoder {
            EncoderKind::BagOfEmbeddings => dense_layout("f.dense", &dims),
            EncoderKind::AlignPool => {
                let mut l = dense_layout("f.token", &dims);
                l.extend(dense_layout("f.out", &[2 * self.feature_dim, self.feature_dim]));
                l
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Inputs {
    /// Per-pair mean word vectors, row-major `n x dim`.
    Bag { x: Vec<f64>, y: Vec<f64> },
    /// Per-pair `[len, dim]` word-vector matrices.
    Align { x: Vec<Tensor>, y: Vec<Tensor> },
}

/// Projector inputs looked up once from the frozen embedding table.
#[derive(Clone, Debug)]
pub struct PreparedPairs {
    dim: usize,
    n: usize,
    inputs: Inputs,
}

fn lookup(vocab: &Vocabulary, ids: &[usize], pair: usize, side: &str) -> Result<Vec<f64>> {
    if ids.is_empty() {
        return Err(Error::Data(format!("pair {pair}: empty {side} sequence")));
    }
    let mut rows = Vec::with_capacity(ids.len() * vocab.dim());
    for &id in ids {
        if id >= vocab.len() {
            return Err(Error::Data(format!(
                "pair {pair}: token id {id} out of range for vocabulary of {}",
                vocab.len()
            )));
        }
        rows.extend_from_slice(vocab.row(id));
    }
    Ok(rows)
}

fn mean_rows(rows: &[f64], dim: usize) -> Vec<f64> {
    let n = rows.len() / dim;
    let mut out = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    out
}

impl PreparedPairs {
    pub fn from_sequences<'a>(
        spec: &ProjectorSpec,
        vocab: &Vocabulary,
        pairs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>,
    ) -> Result<Self> {
        let dim = vocab.dim();
        if dim != spec.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding table has dim {dim}, projector expects {}",
                spec.embedding_dim
            )));
        }
        let mut n = 0;
        let inputs = match spec.encoder {
            EncoderKind::BagOfEmbeddings => {
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for (i, (x, y)) in pairs.into_iter().enumerate() {
                    xs.extend(mean_rows(&lookup(vocab, x, i, "X")?, dim));
                    ys.extend(mean_rows(&lookup(vocab, y, i, "Y")?, dim));
                    n += 1;
                }
                Inputs::Bag { x: xs, y: ys }
            }
            EncoderKind::AlignPool => {
                let (mut xs, mut ys) = (Vec::new(), Vec::new());
                for (i, (x, y)) in pairs.into_iter().enumerate() {
                    xs.push(Tensor::matrix(x.len(), dim, lookup(vocab, x, i, "X")?)?);
                    ys.push(Tensor::matrix(y.len(), dim, lookup(vocab, y, i, "Y")?)?);
                    n += 1;
                }
                Inputs::Align { x: xs, y: ys }
            }
        };
        Ok(PreparedPairs { dim, n, inputs })
    }

    pub fn new(spec: &ProjectorSpec, vocab: &Vocabulary, triples: &[Triple]) -> Result<Self> {
        Self::from_sequences(spec, vocab, triples.iter().map(|t| (t.x.as_slice(), t.y.as_slice())))
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// The same pairs with the X and Y roles exchanged.
    pub fn swapped(&self) -> Self {
        let inputs = match &self.inputs {
            Inputs::Bag { x, y } => Inputs::Bag {
                x: y.clone(),
                y: x.clone(),
            },
            Inputs::Align { x, y } => Inputs::Align {
                x: y.clone(),
                y: x.clone(),
            },
        };
        PreparedPairs { inputs, ..*self }
    }
}

/// Appends the projection of the selected pairs; returns `[n, K]` nodes for
/// the X side and the Y side. Both sides consume the same parameter nodes.
pub fn build_projection(
    g: &mut Graph,
    spec: &ProjectorSpec,
    nodes: &ParamNodes,
    prepared: &PreparedPairs,
    indices: &[usize],
) -> Result<(NodeId, NodeId)> {
    if indices.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= prepared.n) {
        return Err(Error::Data(format!("pair index {bad} out of range ({})", prepared.n)));
    }
    let layers = spec.hidden_dims.len() + 1;
    let tanh = |g: &mut Graph, h: NodeId, _| g.tanh(h);
    match &prepared.inputs {
        Inputs::Bag { x, y } => {
            let d = prepared.dim;
            let gather = |src: &Vec<f64>| -> Result<Tensor> {
                let mut data = Vec::with_capacity(indices.len() * d);
                for &i in indices {
                    data.extend_from_slice(&src[i * d..(i + 1) * d]);
                }
                Ok(Tensor::matrix(indices.len(), d, data)?)
            };
            let xin = g.constant(gather(x)?);
            let yin = g.constant(gather(y)?);
            let hx = dense_stack(g, nodes, "f.dense", layers, xin, tanh);
            let hy = dense_stack(g, nodes, "f.dense", layers, yin, tanh);
            Ok((hx, hy))
        }
        Inputs::Align { x, y } => {
            let mut pooled_x = Vec::with_capacity(indices.len());
            let mut pooled_y = Vec::with_capacity(indices.len());
            for &i in indices {
                let xin = g.constant(x[i].clone());
                let yin = g.constant(y[i].clone());
                let px = dense_stack(g, nodes, "f.token", layers, xin, tanh);
                let py = dense_stack(g, nodes, "f.token", layers, yin, tanh);
                let pyt = g.transpose(py);
                let scores = g.matmul(px, pyt);
                let att_x = g.softmax_rows(scores);
                let aligned_x = g.matmul(att_x, py);
                let scores_t = g.transpose(scores);
                let att_y = g.softmax_rows(scores_t);
                let aligned_y = g.matmul(att_y, px);
                let jx = g.concat_cols(&[px, aligned_x]);
                let jy = g.concat_cols(&[py, aligned_y]);
                pooled_x.push(g.mean_rows(jx));
                pooled_y.push(g.mean_rows(jy));
            }
            let mx = g.concat_rows(&pooled_x);
            let my = g.concat_rows(&pooled_y);
            let hx = dense_stack(g, nodes, "f.out", 1, mx, tanh);
            let hy = dense_stack(g, nodes, "f.out", 1, my, tanh);
            Ok((hx, hy))
        }
    }
}

/// Feature vectors of many pairs, row-major `n x K` per side.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    k: usize,
    hx: Vec<f64>,
    hy: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(k: usize, hx: Vec<f64>, hy: Vec<f64>) -> Result<Self> {
        if k == 0 || hx.is_empty() || hx.len() != hy.len() || !hx.len().is_multiple_of(k) {
            return Err(Error::Shape(format!(
                "feature matrices of {} and {} values do not form non-empty n x {k} blocks",
                hx.len(),
                hy.len()
            )));
        }
        if hx.iter().chain(&hy).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("non-finite feature value".into()));
        }
        Ok(FeatureMatrix { k, hx, hy })
    }

    pub fn from_pairs(pairs: &[FeaturePair]) -> Result<Self> {
        let k = pairs.first().map_or(0, |p| p.hx.len());
        if pairs.iter().any(|p| p.hx.len() != k || p.hy.len() != k) {
            return Err(Error::Shape("feature pairs disagree on K".into()));
        }
        let hx = pairs.iter().flat_map(|p| p.hx.iter().copied()).collect();
        let hy = pairs.iter().flat_map(|p| p.hy.iter().copied()).collect();
        FeatureMatrix::new(k, hx, hy)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.hx.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.hx.is_empty()
    }

    pub fn pair(&self, i: usize) -> FeaturePair {
        FeaturePair {
            hx: self.hx[i * self.k..(i + 1) * self.k].to_vec(),
            hy: self.hy[i * self.k..(i + 1) * self.k].to_vec(),
        }
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let k = self.k;
        let mut hx = Vec::with_capacity(indices.len() * k);
        let mut hy = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Data(format!("feature index {i} out of range")));
            }
            hx.extend_from_slice(&self.hx[i * k..(i + 1) * k]);
            hy.extend_from_slice(&self.hy[i * k..(i + 1) * k]);
        }
        FeatureMatrix::new(k, hx, hy)
    }

    pub fn swapped(&self) -> Self {
        FeatureMatrix {
            k: self.k,
            hx: self.hy.clone(),
            hy: self.hx.clone(),
        }
    }

    pub fn hx(&self) -> &[f64] {
        &self.hx
    }

    pub fn hy(&self) -> &[f64] {
        &self.hy
    }

    pub fn hx_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.k, self.hx.clone()).expect("validated")
    }

    pub fn hy_tensor(&self) -> Tensor {
        Tensor::matrix(self.len(), self.k, self.hy.clone()).expect("validated")
    }
}

const PROJECT_CHUNK: usize = 512;

/// Forward-only projection of the selected pairs, in `indices` order.
pub fn project_batch(
    params: &ParamSet,
    spec: &ProjectorSpec,
    prepared: &PreparedPairs,
    indices: &[usize],
) -> Result<FeatureMatrix> {
    if indices.is_empty() {
        return Err(Error::Data("no pairs to project".into()));
    }
    let mut hx = Vec::with_capacity(indices.len() * spec.feature_dim);
    let mut hy = Vec::with_capacity(indices.len() * spec.feature_dim);
    for chunk in indices.chunks(PROJECT_CHUNK) {
        let mut g = Graph::new();
        let nodes = attach(&mut g, params, false);
        let (x, y) = build_projection(&mut g, spec, &nodes, prepared, chunk)?;
        g.set_output("hx", x);
        g.set_output("hy", y);
        let out = g.evaluate(&Bindings::new())?;
        hx.extend_from_slice(out["hx"].data());
        hy.extend_from_slice(out["hy"].data());
    }
    FeatureMatrix::new(spec.feature_dim, hx, hy)
}

pub fn project_all(params: &ParamSet, spec: &ProjectorSpec, prepared: &PreparedPairs) -> Result<FeatureMatrix> {
    let all: Vec<usize> = (0..prepared.len()).collect();
    project_batch(params, spec, prepared, &all)
}

/// `[h^X, h^Y] = F(X, Y)` for a single pair of token-id sequences.
pub fn project(
    params: &ParamSet,
    spec: &ProjectorSpec,
    x: &[usize],
    y: &[usize],
    vocab: &Vocabulary,
) -> Result<FeaturePair> {
    let prepared = PreparedPairs::from_sequences(spec, vocab, [(x, y)])?;
    Ok(project_all(params, spec, &prepared)?.pair(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use crate::rng::{child, Stream};

    fn vocab() -> Vocabulary {
        let mut v = Vocabulary::new(3);
        let mut rng = child(2, Stream::Init);
        for t in ["a", "b", "c", "d", "e"] {
            v.get_or_insert_random(t, &mut rng);
        }
        // Scale rows up so the encoders see non-trivial inputs.
        let mut big = Vocabulary::new(3);
        for id in 1..v.len() {
            let row: Vec<f64> = v.row(id).iter().map(|x| x * 20.0).collect();
            big.insert(v.token(id).unwrap(), &row);
        }
        big
    }

    fn spec(encoder: EncoderKind) -> ProjectorSpec {
        ProjectorSpec {
            encoder,
            embedding_dim: 3,
            feature_dim: 4,
            hidden_dims: vec![5],
        }
    }

    #[test]
    fn identical_inputs_give_identical_halves() {
        let v = vocab();
        for enc in [EncoderKind::BagOfEmbeddings, EncoderKind::AlignPool] {
            let s = spec(enc);
            let p = init_params(&s, 9);
            let fp = project(&p, &s, &[1, 2, 3], &[1, 2, 3], &v).unwrap();
            assert_eq!(fp.hx, fp.hy, "{enc:?}");
            assert_eq!(fp.hx.len(), 4);
        }
    }

    #[test]
    fn output_shape_independent_of_lengths() {
        let v = vocab();
        for enc in [EncoderKind::BagOfEmbeddings, EncoderKind::AlignPool] {
            let s = spec(enc);
            let p = init_params(&s, 1);
            for (x, y) in [(vec![1], vec![2, 3, 4, 5]), (vec![1, 2, 3, 4, 5, 1], vec![2])] {
                let fp = project(&p, &s, &x, &y, &v).unwrap();
                assert_eq!((fp.hx.len(), fp.hy.len()), (4, 4));
            }
        }
    }

    #[test]
    fn align_pool_swap_swaps_outputs() {
        let v = vocab();
        let s = spec(EncoderKind::AlignPool);
        let p = init_params(&s, 4);
        let a = project(&p, &s, &[1, 2], &[3, 4, 5], &v).unwrap();
        let b = project(&p, &s, &[3, 4, 5], &[1, 2], &v).unwrap();
        assert_eq!(a.hx, b.hy);
        assert_eq!(a.hy, b.hx);
    }

    #[test]
    fn bag_is_permutation_invariant() {
        let v = vocab();
        let s = spec(EncoderKind::BagOfEmbeddings);
        let p = init_params(&s, 4);
        let a = project(&p, &s, &[1, 2, 3], &[4], &v).unwrap();
        let b = project(&p, &s, &[3, 1, 2], &[4], &v).unwrap();
        for (x, y) in a.hx.iter().zip(&b.hx) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn bad_sequences_are_data_errors() {
        let v = vocab();
        let s = spec(EncoderKind::BagOfEmbeddings);
        let p = init_params(&s, 4);
        assert!(matches!(project(&p, &s, &[], &[1], &v), Err(Error::Data(_))));
        assert!(matches!(project(&p, &s, &[1], &[99], &v), Err(Error::Data(_))));
    }

    #[test]
    fn align_pool_graph_passes_gradient_check() {
        let v = vocab();
        let s = spec(EncoderKind::AlignPool);
        let p = init_params(&s, 8);
        let seqs: Vec<(Vec<usize>, Vec<usize>)> = vec![(vec![1, 2], vec![3, 4, 5]), (vec![5], vec![1, 4])];
        let prepared =
            PreparedPairs::from_sequences(&s, &v, seqs.iter().map(|(a, b)| (a.as_slice(), b.as_slice()))).unwrap();
        let mut g = Graph::new();
        let nodes = attach(&mut g, &p, true);
        let (hx, hy) = build_projection(&mut g, &s, &nodes, &prepared, &[0, 1]).unwrap();
        let prod = g.mul(hx, hy);
        let loss = g.sum(prod);
        g.set_loss(loss);
        g.evaluate(&Bindings::new()).unwrap();
        assert!(crate::numcore::check_gradients(&mut g, 1e-5).unwrap() < 1e-4);
    }
}
