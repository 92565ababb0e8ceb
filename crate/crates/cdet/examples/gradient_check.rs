//! Verifies analytic gradients against central finite differences: first a
//! single convolution through the shared projection helpers, then the full
//! two-stage training loss with randomly sampled parameters.

use cdet::anchors::generate;
use cdet::data::{generate_in_memory, SyntheticSpec};
use cdet::microdiff::gradcheck::{
    check_tensor_input_grad, rel_error, weighted_sum, weights_for, EPS,
};
use cdet::microdiff::{ops, ParameterStore, Tensor};
use cdet::network::{Network, NetworkConfig};
use cdet::pipeline::{build_plan, ground_truth, plan_losses, StepPlan, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::from_data(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Input gradient of a convolution, reduced to a scalar by a fixed random
/// projection so one backward pass covers every output.
fn conv_input_check() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_tensor(&[2, 6, 6], &mut rng);
    let w = random_tensor(&[3, 2, 3, 3], &mut rng);
    let b = random_tensor(&[3], &mut rng);
    let y = ops::conv3x3_forward(&x, &w, &b, 1);
    let proj = weights_for(y.len(), 7);
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    ops::conv3x3_backward(&x, &w, &proj, 1, &mut gx, &mut gw, &mut gb);
    check_tensor_input_grad(&x, &gx, |probe| {
        weighted_sum(&ops::conv3x3_forward(probe, &w, &b, 1).data, &proj)
    })
}

fn loss_at(net: &Network, store: &ParameterStore, image: &Tensor, plan: &StepPlan) -> f64 {
    let mut state = net.forward(image, store);
    let (arm, odm) = plan_losses(net, &mut state, store, plan, None);
    arm.cls + arm.reg + odm.cls + odm.reg
}

fn main() -> cdet::Result<()> {
    println!("conv3x3 input gradient: worst rel {:.3e} (eps {EPS:.0e})", conv_input_check());

    // Tiny two-level network so the whole loss is cheap to re-evaluate.
    let mut cfg = NetworkConfig::with_defaults((24, 24), 4);
    cfg.strides = vec![4, 8];
    cfg.stem_channels = vec![3];
    cfg.level_channels = vec![4, 6];
    cfg.tcb_channels = 6;
    cfg.l2norm_inits = vec![8.0];
    let tc = TrainConfig::for_network(&cfg);
    let grid = generate(&cfg.anchor_spec())?;

    let spec = SyntheticSpec {
        seed: 5,
        image_count: 1,
        image_size: (24, 24),
        objects_per_image: (2, 2),
        scale_range: (0.3, 0.5),
        ..SyntheticSpec::default()
    };
    let data = generate_in_memory(&spec)?;
    let image = &data.images[0];
    let gt = ground_truth(&data.annotations[0]);

    let mut store = ParameterStore::new();
    let net = Network::build(cfg, &mut store)?;
    net.init_params(&mut store, 0);
    let (mut state, plan) = build_plan(&net, &store, image, &gt, &tc, &grid)?;
    let mut grads = store.grad_buffers();
    plan_losses(&net, &mut state, &store, &plan, Some(&mut grads));

    // Sample parameters across the whole store and compare each analytic
    // entry against a central difference with the plan held fixed.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..12 {
        let pid = rng.gen_range(0..store.len());
        let k = rng.gen_range(0..store.tensor(pid).len());
        let orig = store.tensor(pid).data[k];
        store.entry_mut(pid).tensor.data[k] = orig + EPS;
        let hi = loss_at(&net, &store, image, &plan);
        store.entry_mut(pid).tensor.data[k] = orig - EPS;
        let lo = loss_at(&net, &store, image, &plan);
        store.entry_mut(pid).tensor.data[k] = orig;
        let numeric = (hi - lo) / (2.0 * EPS);
        let re = rel_error(grads[pid][k], numeric);
        println!(
            "  {} [{k}]: analytic {:+.6e} numeric {:+.6e} rel {:.3e}",
            store.entry(pid).name,
            grads[pid][k],
            numeric,
            re
        );
        worst = worst.max(re);
    }
    println!("two-stage loss over 12 sampled parameters: worst rel {worst:.3e}");
    Ok(())
}
