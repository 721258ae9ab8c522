//! Shared helpers for gradient verification: central finite differences as
//! the independent oracle, plus a deterministic random-graph generator that
//! avoids sampling within h of a ReLU/clamp kink (central differences are
//! invalid across a kink).

use fare_core::tensor::{Graph, NodeId, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_H: f64 = 1e-5;
pub const KINK_MARGIN: f64 = 1e-4;

/// d(root)/d(leaf) by central differences, one forward pair per element.
/// Restores the leaf and recomputes the graph before returning.
pub fn fd_grad_leaf(g: &mut Graph, root: NodeId, leaf: NodeId, h: f64) -> Vec<f64> {
    let base = g.output(leaf).clone();
    let n = base.numel();
    let mut out = Vec::with_capacity(n);
    let mut probe = base.clone();
    for i in 0..n {
        probe.data_mut()[i] = base.data()[i] + h;
        g.set_leaf(leaf, &probe).unwrap();
        let fp = g.forward(root).unwrap().item();
        probe.data_mut()[i] = base.data()[i] - h;
        g.set_leaf(leaf, &probe).unwrap();
        let fm = g.forward(root).unwrap().item();
        probe.data_mut()[i] = base.data()[i];
        out.push((fp - fm) / (2.0 * h));
    }
    g.set_leaf(leaf, &base).unwrap();
    g.forward(root).unwrap();
    out
}

/// Largest relative error with the denominator floored, so near-zero
/// gradients are compared absolutely at the floor's scale.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Checks every leaf's backward gradient against finite differences.
/// Returns the worst relative error across all leaves.
pub fn check_all_leaves(g: &mut Graph, root: NodeId, leaves: &[NodeId]) -> f64 {
    g.forward(root).unwrap();
    g.backward(root).unwrap();
    let analytic: Vec<Vec<f64>> = leaves.iter().map(|&l| g.grad(l).data().to_vec()).collect();
    let mut worst = 0.0f64;
    for (&leaf, a) in leaves.iter().zip(&analytic) {
        let numeric = fd_grad_leaf(g, root, leaf, FD_H);
        worst = worst.max(max_rel_err(a, &numeric, 1e-3));
    }
    worst
}

pub struct RandomCase {
    pub graph: Graph,
    pub root: NodeId,
    pub leaves: Vec<NodeId>,
}

/// Deterministic random compute graph: a conv/deconv image pipeline or a
/// dense chain, mixed with elementwise ops, reduced to a scalar.  Resamples
/// (still seed-deterministically) until no ReLU/clamp input sits within
/// `KINK_MARGIN` of its threshold.
pub fn random_case(seed: u64) -> RandomCase {
    for attempt in 0u64..32 {
        let s = seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
        if let Some(case) = try_case(s) {
            return case;
        }
    }
    panic!("no kink-free random case found for seed {seed}");
}

struct Builder {
    g: Graph,
    leaves: Vec<NodeId>,
    // (node whose output must stay away from the thresholds, lo, hi)
    kinks: Vec<(NodeId, f64, f64)>,
}

impl Builder {
    fn leaf(&mut self, rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> NodeId {
        let data: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| rng.random_range(-scale..scale))
            .collect();
        let id = self.g.leaf(Tensor::new(shape.to_vec(), data).unwrap());
        self.leaves.push(id);
        id
    }

    fn activation(&mut self, rng: &mut ChaCha8Rng, x: NodeId) -> NodeId {
        match rng.random_range(0..6) {
            0 => {
                self.kinks.push((x, 0.0, 0.0));
                self.g.relu(x)
            }
            1 => self.g.tanh(x),
            2 => self.g.sigmoid(x),
            3 => self.g.softplus(x),
            4 => {
                self.kinks.push((x, -0.8, 0.8));
                self.g.clamp(x, -0.8, 0.8).unwrap()
            }
            _ => x,
        }
    }

    fn elementwise(&mut self, rng: &mut ChaCha8Rng, x: NodeId) -> NodeId {
        let shape = self.g.shape(x).to_vec();
        match rng.random_range(0..5) {
            0 => self.g.mul(x, x).unwrap(),
            1 => {
                let other = self.leaf(rng, &shape, 1.0);
                self.g.add(x, other).unwrap()
            }
            2 => {
                let other = self.leaf(rng, &shape, 1.0);
                self.g.mul(x, other).unwrap()
            }
            3 => self.g.add_scalar(x, rng.random_range(-0.5..0.5)),
            _ => self.g.mul_scalar(x, rng.random_range(0.5..1.5)),
        }
    }
}

fn try_case(seed: u64) -> Option<RandomCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder {
        g: Graph::new(),
        leaves: Vec::new(),
        kinks: Vec::new(),
    };

    let mut cur = if rng.random_bool(0.5) {
        // Image pipeline.
        let n = rng.random_range(1..=2);
        let mut c = rng.random_range(1..=2);
        let (mut h, mut w) = (rng.random_range(4..=6), rng.random_range(4..=6));
        let mut cur = b.leaf(&mut rng, &[n, c, h, w], 1.0);
        for _ in 0..rng.random_range(1..=2) {
            let co = rng.random_range(1..=3);
            let scale = 0.6 / ((c * 9) as f64).sqrt();
            if rng.random_bool(0.25) && h >= 2 && w >= 2 {
                let weight = b.leaf(&mut rng, &[c, co, 3, 3], scale);
                let bias = b.leaf(&mut rng, &[co], 0.3);
                cur = b.g.deconv2d(cur, weight, bias, 2, 1, 1).unwrap();
            } else {
                let weight = b.leaf(&mut rng, &[co, c, 3, 3], scale);
                let bias = b.leaf(&mut rng, &[co], 0.3);
                let stride = rng.random_range(1..=2);
                let padding = if rng.random_bool(0.5) && h > 3 && w > 3 {
                    Padding::Valid
                } else {
                    Padding::Same
                };
                cur = b.g.conv2d(cur, weight, bias, stride, padding).unwrap();
            }
            let s = b.g.shape(cur).to_vec();
            (c, h, w) = (s[1], s[2], s[3]);
            cur = b.activation(&mut rng, cur);
            if rng.random_bool(0.5) {
                cur = b.elementwise(&mut rng, cur);
            }
        }
        let flat: usize = b.g.shape(cur)[1..].iter().product();
        b.g.reshape(cur, vec![n, flat]).unwrap()
    } else {
        // Dense chain.
        let n = rng.random_range(1..=3);
        let f = rng.random_range(2..=6);
        let mut cur = b.leaf(&mut rng, &[n, f], 1.0);
        for _ in 0..rng.random_range(1..=3) {
            let fi = b.g.shape(cur)[1];
            let fo = rng.random_range(1..=5);
            let weight = b.leaf(&mut rng, &[fo, fi], 0.8 / (fi as f64).sqrt());
            let bias = b.leaf(&mut rng, &[fo], 0.3);
            cur = b.g.linear(cur, weight, bias).unwrap();
            cur = b.activation(&mut rng, cur);
            if rng.random_bool(0.5) {
                cur = b.elementwise(&mut rng, cur);
            }
        }
        cur
    };

    // A bounded exp exercises the remaining smooth op without overflow.
    if rng.random_bool(0.3) {
        cur = b.g.tanh(cur);
        cur = b.g.exp(cur);
    }
    let root = b.g.reduce_sum(cur);

    let mut b = b;
    b.g.forward(root).unwrap();
    for &(id, lo, hi) in &b.kinks {
        for &v in b.g.output(id).data() {
            if (v - lo).abs() < KINK_MARGIN || (v - hi).abs() < KINK_MARGIN {
                return None;
            }
        }
    }
    Some(RandomCase {
        graph: b.g,
        root,
        leaves: b.leaves,
    })
}
