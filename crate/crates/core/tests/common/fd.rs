//! Central finite-difference oracle for the autodiff engine.
//!
//! The oracle only ever evaluates forward passes; gradients it reports come
//! from `(f(x+h) - f(x-h)) / 2h`.

use labelforge::autograd::{Graph, NodeId, Tensor};
use labelforge::rng::Rng;
use rand::Rng as _;

pub const H: f64 = 1e-3;

/// Builds a scalar loss from leaf nodes.
pub type Build<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId + 'a;

fn eval(build: &Build<'_>, leaves: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let l = build(&mut g, &ids);
    g.value(l).data()[0]
}

fn central(build: &Build<'_>, leaves: &mut [Tensor<f64>], li: usize, ci: usize, h: f64) -> f64 {
    let orig = leaves[li].data()[ci];
    leaves[li].data_mut()[ci] = orig + h;
    let up = eval(build, leaves);
    leaves[li].data_mut()[ci] = orig - h;
    let down = eval(build, leaves);
    leaves[li].data_mut()[ci] = orig;
    (up - down) / (2.0 * h)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose stencil straddles a relu/maxpool kink.
    pub skipped: usize,
    /// `(autodiff, finite difference)` at the worst coordinate.
    pub worst: (f64, f64),
}

impl FdReport {
    pub fn merge(self, o: FdReport) -> FdReport {
        FdReport {
            worst: if o.max_rel_err > self.max_rel_err {
                o.worst
            } else {
                self.worst
            },
            max_rel_err: self.max_rel_err.max(o.max_rel_err),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

/// Gradient magnitudes below this are compared in absolute terms: a central
/// difference at `H` cannot resolve them more finely than ~1e-6.
pub const MAGNITUDE_FLOOR: f64 = 1e-3;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(MAGNITUDE_FLOOR)
}

/// Compares autodiff and central differences on up to `per_leaf` random
/// coordinates of every leaf.
pub fn check(build: &Build<'_>, leaves: &[Tensor<f64>], per_leaf: usize, rng: &mut Rng) -> FdReport {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = leaves.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids);
    let grads = g.gradients(loss).expect("scalar loss");
    let mut leaves = leaves.to_vec();
    let mut report = FdReport::default();
    for li in 0..leaves.len() {
        let n = leaves[li].len();
        let coords: Vec<usize> = if n <= per_leaf {
            (0..n).collect()
        } else {
            (0..per_leaf).map(|_| rng.random_range(0..n)).collect()
        };
        let auto = grads.get(ids[li]).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; n]);
        for ci in coords {
            let fd = central(build, &mut leaves, li, ci, H);
            let fd_fine = central(build, &mut leaves, li, ci, H / 1000.0);
            // On a smooth stretch the h and h/1000 estimates agree to O(h²);
            // a relu or maxpool kink inside the stencil breaks that. This
            // judges the stencil only and never looks at the autodiff value.
            if (fd - fd_fine).abs() > 2e-4 * fd.abs().max(MAGNITUDE_FLOOR) {
                report.skipped += 1;
                continue;
            }
            report.checked += 1;
            let e = rel_err(auto[ci], fd);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst = (auto[ci], fd);
            }
        }
    }
    report
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_f64(shape.to_vec(), &data).unwrap()
}

/// Reduces any node to a scalar through a fixed random weighting.
pub fn weighted_sum(g: &mut Graph<f64>, x: NodeId, weights: &Tensor<f64>) -> NodeId {
    let w = g.input(weights.clone());
    let p = g.mul(x, w).unwrap();
    g.sum(p)
}
