mod common;

use common::fd::random_tensor;
use common::grad_cases::cases;
use labelforge::autograd::{Graph, Mode, NodeId};
use labelforge::nn::{build_backbone, BackbonePreset, Family};
use labelforge::rng_stream;

fn run(prefix: &str) {
    let selected: Vec<_> = cases().into_iter().filter(|c| c.name.starts_with(prefix)).collect();
    assert!(!selected.is_empty(), "no case named {prefix}*");
    for case in selected {
        let r = case.run();
        eprintln!(
            "{}: max rel err {:.3e}, {} checked, {} kink-skipped",
            case.name, r.max_rel_err, r.checked, r.skipped
        );
        if let Err(msg) = case.verdict(&r) {
            panic!("{msg}");
        }
    }
}

#[test]
fn dense() {
    run("dense");
}

#[test]
fn conv2d_variants() {
    run("conv2d");
}

#[test]
fn relu() {
    run("relu");
}

#[test]
fn maxpool2() {
    run("maxpool2");
}

#[test]
fn global_avg_pool_and_flatten() {
    run("gap-flatten");
}

#[test]
fn batchnorm_train_and_eval() {
    run("batchnorm");
}

#[test]
fn softmax_and_l2_normalize() {
    run("softmax");
    run("l2norm");
}

#[test]
fn cross_entropy_plain_and_offdiagonal() {
    run("cross-entropy");
}

#[test]
fn elementwise_and_reductions() {
    run("elementwise");
}

#[test]
fn conv_relu_dense_cross_entropy_stack() {
    run("stack");
}

#[test]
fn full_backbones() {
    run("mini-");
}

#[test]
fn scaling_the_loss_scales_gradients() {
    let mut rng = rng_stream!(3, "linearity");
    let model = build_backbone::<f32>(&BackbonePreset::new(Family::MiniRes).with_input_size(8, 8, 3), 1).unwrap();
    let x = random_tensor(&mut rng, &[4, 3, 8, 8], 1.0).cast::<f32>();
    let grads_for = |a: f32| {
        let mut params = model.params().to_vec();
        let mut g = Graph::new();
        let ids: Vec<NodeId> = params.iter().enumerate().map(|(i, p)| g.param(p, i)).collect();
        let xi = g.input(x.clone());
        let l = model.logits_node(&mut g, &ids, xi, Mode::Train).unwrap();
        let l = g.cross_entropy(l, &[0, 1, 1, 0]).unwrap();
        let l = g.scale(l, a);
        g.backward(l, &mut params).unwrap();
        params
            .iter()
            .flat_map(|p| p.grad().unwrap().to_vec())
            .collect::<Vec<f32>>()
    };
    let base = grads_for(1.0);
    let scaled = grads_for(2.5);
    for (b, s) in base.iter().zip(&scaled) {
        assert!((s - 2.5 * b).abs() <= 1e-6 * (1.0 + s.abs()), "{s} vs {}", 2.5 * b);
    }
}
