//! Finite-difference cases covering every layer kind and whole backbones.

use labelforge::autograd::{Graph, Mode, NodeId, Tensor};
use labelforge::nn::{build_backbone, BackbonePreset, Family};
use labelforge::rng::Rng;
use labelforge::rng_stream;

use super::fd::{check, random_tensor, weighted_sum, Build, FdReport};

pub const SEEDS: u64 = 100;
pub const TOL: f64 = 1e-3;

type Make = Box<dyn Fn(&mut Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) + Sync>;

pub struct Case {
    pub name: String,
    pub seeds: u64,
    pub per_leaf: usize,
    make: Make,
}

fn case(
    name: impl Into<String>,
    seeds: u64,
    per_leaf: usize,
    make: impl Fn(&mut Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>) + Sync + 'static,
) -> Case {
    Case {
        name: name.into(),
        seeds,
        per_leaf,
        make: Box::new(make),
    }
}

impl Case {
    pub fn run(&self) -> FdReport {
        let mut total = FdReport::default();
        for seed in 0..self.seeds {
            let mut rng = rng_stream!(seed, "grad", self.name.as_str());
            let (leaves, build) = (self.make)(&mut rng);
            total = total.merge(check(build.as_ref(), &leaves, self.per_leaf, &mut rng));
        }
        total
    }

    /// Error message if the case fails the tolerance or skips too much.
    pub fn verdict(&self, r: &FdReport) -> Result<(), String> {
        if r.max_rel_err >= TOL {
            return Err(format!(
                "{}: max relative error {:.3e} over {} coordinates (worst {:?})",
                self.name, r.max_rel_err, r.checked, r.worst
            ));
        }
        if r.skipped * 2 > r.checked {
            return Err(format!(
                "{}: {} of {} coordinates straddled a kink",
                self.name,
                r.skipped,
                r.checked + r.skipped
            ));
        }
        Ok(())
    }
}

fn boxed(b: impl Fn(&mut Graph<f64>, &[NodeId]) -> NodeId + 'static) -> Box<Build<'static>> {
    Box::new(b)
}

fn backbone(family: Family) -> Case {
    case(family.name(), SEEDS, 2, move |rng| {
        let preset = BackbonePreset::new(family).with_input_size(8, 8, 3);
        let seed = rand::Rng::random::<u64>(rng);
        let model = build_backbone::<f64>(&preset, seed).unwrap();
        let x = random_tensor(rng, &[8, 3, 8, 8], 1.0);
        let targets: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let leaves = model.params().to_vec();
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let xi = g.input(x.clone());
            let logits = model.logits_node(g, ids, xi, Mode::Train).unwrap();
            g.cross_entropy(logits, &targets).unwrap()
        };
        (leaves, boxed(build))
    })
}

/// All cases; names starting with a layer kind group them for the tests.
pub fn cases() -> Vec<Case> {
    let mut v = vec![case("dense", SEEDS, 16, |rng| {
        let x = random_tensor(rng, &[3, 5], 1.0);
        let w = random_tensor(rng, &[4, 5], 1.0);
        let b = random_tensor(rng, &[4], 1.0);
        let r = random_tensor(rng, &[3, 4], 1.0);
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let y = g.matmul_nt(ids[0], ids[1]).unwrap();
            let y = g.add_bias(y, ids[2]).unwrap();
            weighted_sum(g, y, &r)
        };
        (vec![x, w, b], boxed(build))
    })];
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 2)] {
        v.push(case(format!("conv2d-s{stride}p{pad}"), SEEDS / 4, 12, move |rng| {
            let x = random_tensor(rng, &[2, 3, 6, 5], 1.0);
            let k = random_tensor(rng, &[4, 3, 3, 3], 0.5);
            let b = random_tensor(rng, &[4], 0.5);
            let mut g = Graph::new();
            let xi = g.input(x.clone());
            let ki = g.input(k.clone());
            let yi = g.conv2d(xi, ki, stride, pad).unwrap();
            let shape = g.shape(yi).to_vec();
            let r = random_tensor(rng, &shape, 1.0);
            let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
                let y = g.conv2d(ids[0], ids[1], stride, pad).unwrap();
                let y = g.add_bias(y, ids[2]).unwrap();
                weighted_sum(g, y, &r)
            };
            (vec![x, k, b], boxed(build))
        }));
    }
    v.push(case("relu", SEEDS, 24, |rng| {
        // Keep inputs away from the kink at zero.
        let mut x = random_tensor(rng, &[4, 6], 1.0);
        x.data_mut().iter_mut().for_each(|v| *v = v.signum() * (v.abs() + 0.05));
        let r = random_tensor(rng, &[4, 6], 1.0);
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let y = g.relu(ids[0]);
            weighted_sum(g, y, &r)
        };
        (vec![x], boxed(build))
    }));
    v.push(case("maxpool2", SEEDS, 32, |rng| {
        // Distinct values on a 0.01 grid so no window has a near tie.
        let n = 2 * 2 * 4 * 5;
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        for i in (1..n).rev() {
            let j = rand::Rng::random_range(rng, 0..=i);
            vals.swap(i, j);
        }
        let x = Tensor::from_f64(vec![2, 2, 4, 5], &vals).unwrap();
        let r = random_tensor(rng, &[2, 2, 2, 2], 1.0);
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let y = g.maxpool2(ids[0]).unwrap();
            weighted_sum(g, y, &r)
        };
        (vec![x], boxed(build))
    }));
    v.push(case("gap-flatten", SEEDS, 24, |rng| {
        let x = random_tensor(rng, &[2, 3, 3, 4], 1.0);
        let r = random_tensor(rng, &[2, 3], 1.0);
        let r2 = random_tensor(rng, &[2, 36], 1.0);
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let y = g.global_avg_pool(ids[0]).unwrap();
            let a = weighted_sum(g, y, &r);
            let f = g.flatten(ids[0]).unwrap();
            let b = weighted_sum(g, f, &r2);
            g.add(a, b).unwrap()
        };
        (vec![x], boxed(build))
    }));
    for mode in [Mode::Train, Mode::Eval] {
        v.push(case(format!("batchnorm-{mode:?}"), SEEDS / 2, 24, move |rng| {
            let x = random_tensor(rng, &[4, 3, 2, 2], 2.0);
            let gamma = random_tensor(rng, &[3], 1.0);
            let beta = random_tensor(rng, &[3], 1.0);
            let r = random_tensor(rng, &[4, 3, 2, 2], 1.0);
            let rm = vec![0.1, -0.2, 0.3];
            let rv = vec![0.5, 1.5, 2.0];
            let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
                let y = g.batchnorm(ids[0], ids[1], ids[2], 0, mode, (&rm, &rv)).unwrap();
                weighted_sum(g, y, &r)
            };
            (vec![x, gamma, beta], boxed(build))
        }));
    }
    v.push(case("softmax", SEEDS, 24, |rng| {
        let x = random_tensor(rng, &[3, 4], 2.0);
        let r = random_tensor(rng, &[3, 4], 1.0);
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let y = g.softmax(ids[0]).unwrap();
            weighted_sum(g, y, &r)
        };
        (vec![x], boxed(build))
    }));
    v.push(case("l2norm", SEEDS, 24, |rng| {
        let x = random_tensor(rng, &[3, 5], 2.0);
        let r = random_tensor(rng, &[3, 5], 1.0);
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let y = g.l2_normalize(ids[0]).unwrap();
            weighted_sum(g, y, &r)
        };
        (vec![x], boxed(build))
    }));
    v.push(case("cross-entropy", SEEDS, 24, |rng| {
        let x = random_tensor(rng, &[5, 3], 3.0);
        let t: Vec<usize> = (0..5).map(|i| (i * 7 + 1) % 3).collect();
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| g.cross_entropy(ids[0], &t).unwrap();
        (vec![x], boxed(build))
    }));
    v.push(case("cross-entropy-ntxent", SEEDS, 24, |rng| {
        let e = random_tensor(rng, &[6, 4], 1.0);
        let pairing = vec![3, 4, 5, 0, 1, 2];
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let z = g.l2_normalize(ids[0]).unwrap();
            let s = g.matmul_nt(z, z).unwrap();
            let s = g.scale(s, 2.0);
            g.cross_entropy_offdiag(s, &pairing).unwrap()
        };
        (vec![e], boxed(build))
    }));
    v.push(case("elementwise", SEEDS, 16, |rng| {
        let a = random_tensor(rng, &[2, 3], 1.0);
        let b = random_tensor(rng, &[2, 3], 1.0);
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let p = g.mul(ids[0], ids[1]).unwrap();
            let q = g.add(p, ids[0]).unwrap();
            let q = g.scale(q, -1.5);
            let s = g.sum(q);
            let m = g.mean(p);
            let r = g.reshape(s, vec![1]).unwrap();
            g.add(r, m).unwrap()
        };
        (vec![a, b], boxed(build))
    }));
    v.push(case("stack", SEEDS, 8, |rng| {
        let x = random_tensor(rng, &[8, 2, 5, 5], 1.0);
        let k = random_tensor(rng, &[3, 2, 3, 3], 0.6);
        let w = random_tensor(rng, &[2, 27], 0.4);
        let b = random_tensor(rng, &[2], 0.1);
        let targets: Vec<usize> = (0..8).map(|i| (i * 5) % 2).collect();
        let build = move |g: &mut Graph<f64>, ids: &[NodeId]| {
            let h = g.conv2d(ids[0], ids[1], 1, 0).unwrap();
            let h = g.relu(h);
            let h = g.flatten(h).unwrap();
            let h = g.matmul_nt(h, ids[2]).unwrap();
            let h = g.add_bias(h, ids[3]).unwrap();
            g.cross_entropy(h, &targets).unwrap()
        };
        (vec![x, k, w, b], boxed(build))
    }));
    v.extend(Family::ALL.map(backbone));
    v
}
