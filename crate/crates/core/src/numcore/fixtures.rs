//! Randomly generated graphs for gradient verification.
//!
//! Four templates are rotated by seed so that a run of consecutive seeds
//! exercises every op kind the graph supports. Graphs whose non-smooth ops
//! sit closer than [`KINK_MARGIN`] to a kink are rejected and regenerated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Bindings, Graph, NodeId, Reduction, Tensor};

pub const KINK_MARGIN: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).expect("finite")
}

/// Every op kind the generator can emit.
pub const ALL_OP_KINDS: &[&str] = &[
    "param",
    "const",
    "input",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "abs",
    "transpose",
    "concat_cols",
    "concat_rows",
    "sum",
    "mean",
    "mean_rows",
    "softmax_rows",
    "softmax_cross_entropy",
    "sigmoid_bce",
];

/// A small evaluated graph with a scalar loss, differentiable at its point.
pub fn random_graph(seed: u64) -> Graph {
    let mut attempt = 0u64;
    loop {
        let mut r = rng(seed.wrapping_mul(1_000_003).wrapping_add(attempt));
        let (mut g, bindings) = match seed % 4 {
            0 => mlp_classifier(&mut r),
            1 => pair_scorer(&mut r),
            2 => attention_pool(&mut r),
            _ => critic_gap(&mut r),
        };
        if g.evaluate(&bindings).is_ok() && g.min_kink_distance().is_none_or(|d| d > KINK_MARGIN) {
            return g;
        }
        attempt += 1;
    }
}

fn activation(g: &mut Graph, rng: &mut impl Rng, x: NodeId) -> NodeId {
    match rng.random_range(0..5) {
        0 => g.relu(x),
        1 => g.tanh(x),
        2 => g.sigmoid(x),
        3 => g.abs(x),
        _ => {
            let t = g.tanh(x);
            g.exp(t)
        }
    }
}

fn reduction(rng: &mut impl Rng) -> Reduction {
    if rng.random_bool(0.5) {
        Reduction::Mean
    } else {
        Reduction::Sum
    }
}

fn mlp_classifier(rng: &mut ChaCha8Rng) -> (Graph, Bindings) {
    let n = rng.random_range(2..6);
    let d = rng.random_range(2..5);
    let h1 = rng.random_range(2..6);
    let h2 = rng.random_range(2..6);
    let c = rng.random_range(2..5);
    let mut g = Graph::new();
    let x = g.input("x");
    let w1 = g.param("w1", uniform(rng, &[d, h1], 0.9));
    let b1 = g.param("b1", uniform(rng, &[h1], 0.3));
    let w2 = g.param("w2", uniform(rng, &[h1, h2], 0.9));
    let b2 = g.param("b2", uniform(rng, &[1, h2], 0.3));
    let w3 = g.param("w3", uniform(rng, &[h2, c], 0.9));
    let a = g.matmul(x, w1);
    let a = g.add(a, b1);
    let a = activation(&mut g, rng, a);
    let b = g.matmul(a, w2);
    let b = g.add(b, b2);
    let b = activation(&mut g, rng, b);
    let logits = g.matmul(b, w3);
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    let red = reduction(rng);
    let loss = g.softmax_cross_entropy(logits, labels, red);
    g.set_loss(loss);
    let mut bindings = Bindings::new();
    bindings.insert("x".into(), uniform(rng, &[n, d], 1.5));
    (g, bindings)
}

fn pair_scorer(rng: &mut ChaCha8Rng) -> (Graph, Bindings) {
    let n = rng.random_range(2..6);
    let d = rng.random_range(2..5);
    let k = rng.random_range(2..5);
    let mut g = Graph::new();
    let x = g.constant(uniform(rng, &[n, d], 1.0));
    let y = g.constant(uniform(rng, &[n, d], 1.0));
    let w = g.param("w", uniform(rng, &[d, k], 0.9));
    let v = g.param("v", uniform(rng, &[4 * k, 1], 0.7));
    let bias = g.param("bias", uniform(rng, &[1], 0.2));
    let hx = g.matmul(x, w);
    let hx = g.tanh(hx);
    let hy = g.matmul(y, w);
    let hy = g.sigmoid(hy);
    let prod = g.mul(hx, hy);
    let diff = g.sub(hx, hy);
    let gap = g.abs(diff);
    let feats = g.concat_cols(&[hx, hy, prod, gap]);
    let logit = g.matmul(feats, v);
    let logit = g.add(logit, bias);
    let logit = g.scale(logit, rng.random_range(0.5..2.0));
    let targets = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    let red = reduction(rng);
    let loss = g.sigmoid_bce(logit, targets, red);
    g.set_loss(loss);
    (g, Bindings::new())
}

fn attention_pool(rng: &mut ChaCha8Rng) -> (Graph, Bindings) {
    let lx = rng.random_range(2..5);
    let ly = rng.random_range(2..5);
    let d = rng.random_range(2..4);
    let k = rng.random_range(2..4);
    let mut g = Graph::new();
    let x = g.constant(uniform(rng, &[lx, d], 1.0));
    let y = g.constant(uniform(rng, &[ly, d], 1.0));
    let w = g.param("w", uniform(rng, &[d, k], 1.0));
    let o = g.param("o", uniform(rng, &[2 * k, 2], 0.8));
    let px = g.matmul(x, w);
    let px = g.tanh(px);
    let py = g.matmul(y, w);
    let py = g.tanh(py);
    let pyt = g.transpose(py);
    let att = g.matmul(px, pyt);
    let att = g.softmax_rows(att);
    let aligned = g.matmul(att, py);
    let joined = g.concat_cols(&[px, aligned]);
    let mx = g.mean_rows(joined);
    let ax = g.transpose(att);
    let back = g.matmul(ax, px);
    let joined_y = g.concat_cols(&[py, back]);
    let my = g.mean_rows(joined_y);
    let both = g.concat_rows(&[mx, my]);
    let z = g.matmul(both, o);
    let z = g.sigmoid(z);
    let z = g.log(z);
    let s = g.mean(z);
    let s = g.scale(s, -1.0);
    g.set_loss(s);
    (g, Bindings::new())
}

fn critic_gap(rng: &mut ChaCha8Rng) -> (Graph, Bindings) {
    let n = rng.random_range(2..7);
    let k = rng.random_range(1..5);
    let hidden = rng.random_range(2..7);
    let mut g = Graph::new();
    let hx = g.constant(uniform(rng, &[n, k], 1.0));
    let hy = g.constant(uniform(rng, &[n, k], 1.0));
    let w1 = g.param("w1", uniform(rng, &[k, hidden], 0.5));
    let b1 = g.param("b1", uniform(rng, &[hidden], 0.5));
    let w2 = g.param("w2", uniform(rng, &[hidden, 1], 0.5));
    let b2 = g.param("b2", uniform(rng, &[1], 0.5));
    let score = |g: &mut Graph, h: NodeId| {
        let a = g.matmul(h, w1);
        let a = g.add(a, b1);
        let a = g.relu(a);
        let s = g.matmul(a, w2);
        g.add(s, b2)
    };
    let sx = score(&mut g, hx);
    let sy = score(&mut g, hy);
    let d = g.sub(sx, sy);
    let d = g.mul(d, d);
    let red = reduction(rng);
    let loss = g.reduce(d, red);
    let e = g.scale(loss, 0.5);
    let e = g.exp(e);
    g.set_loss(e);
    (g, Bindings::new())
}
