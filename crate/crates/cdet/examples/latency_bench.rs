//! Times the hot ops and the full inference path on synthetic inputs,
//! printing mean/p50/p99 milliseconds per call.

use cdet::microdiff::{ops, ParameterStore, Tensor};
use cdet::network::{Network, NetworkConfig};
use cdet::pipeline::infer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

const REPS: usize = 20;

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len: usize = shape.iter().product();
    Tensor::from_data(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn timed<F: FnMut()>(label: &str, mut f: F) {
    f(); // warmup
    let mut ms: Vec<f64> = (0..REPS)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let p50 = ms[ms.len() / 2];
    let p99 = ms[((ms.len() as f64 * 0.99).ceil() as usize).min(ms.len()) - 1];
    println!("{label:<28}{mean:>10.3}{p50:>10.3}{p99:>10.3}");
}

fn main() -> cdet::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    println!("latency over {REPS} reps (ms)");
    println!("{:<28}{:>10}{:>10}{:>10}", "op", "mean", "p50", "p99");

    let x = random_tensor(&[16, 16, 16], &mut rng);
    let w = random_tensor(&[24, 16, 3, 3], &mut rng);
    let b = random_tensor(&[24], &mut rng);
    timed("conv3x3 16->24 @ 16x16", || {
        std::hint::black_box(ops::conv3x3_forward(&x, &w, &b, 1));
    });

    let xd = random_tensor(&[16, 8, 8], &mut rng);
    let wd = random_tensor(&[16, 16, 2, 2], &mut rng);
    timed("deconv2x 16->16 @ 8x8", || {
        std::hint::black_box(ops::deconv2x_forward(&xd, &wd));
    });

    let scale = random_tensor(&[16], &mut rng);
    timed("l2norm 16 @ 16x16", || {
        std::hint::black_box(ops::l2norm_scale_forward(&x, &scale));
    });

    let cfg = NetworkConfig::with_defaults((128, 128), 4);
    let mut store = ParameterStore::new();
    let net = Network::build(cfg.clone(), &mut store)?;
    net.init_params(&mut store, 0);
    let image = Tensor::from_data(
        &[1, 128, 128],
        (0..128 * 128).map(|_| rng.gen_range(0.0..1.0)).collect(),
    );
    infer(&net, &store, &image)?;
    timed("end-to-end infer @ 128x128", || {
        std::hint::black_box(infer(&net, &store, &image).unwrap());
    });
    Ok(())
}
