//! Trains the architecture ladder on one small synthetic split and prints
//! the comparison table. The budget here is deliberately tiny, so expect
//! noisy numbers; the acceptance suite runs the statistically meaningful
//! version.

use cdet::cli::{render_ablation_table, run_ablation};
use cdet::data::{generate_in_memory, SyntheticSpec};
use cdet::network::NetworkConfig;
use cdet::pipeline::TrainConfig;

fn main() -> cdet::Result<()> {
    let train_spec = SyntheticSpec {
        seed: 40,
        image_count: 24,
        image_size: (64, 64),
        objects_per_image: (1, 2),
        scale_range: (0.25, 0.5),
        ..SyntheticSpec::default()
    };
    let test_spec = SyntheticSpec {
        seed: 41,
        image_count: 8,
        ..train_spec.clone()
    };
    let train_data = generate_in_memory(&train_spec)?;
    let test_data = generate_in_memory(&test_spec)?;

    let mut cfg = NetworkConfig::with_defaults((64, 64), 4);
    cfg.strides = vec![4, 8];
    cfg.stem_channels = vec![4];
    cfg.level_channels = vec![8, 12];
    cfg.tcb_channels = 16;
    cfg.l2norm_inits = vec![10.0];
    let mut tc = TrainConfig::for_network(&cfg);
    tc.max_steps = 80;
    tc.batch_size = 2;
    tc.lr_schedule = vec![(0, 2e-3)];

    let rows = run_ablation(&train_data, &test_data, &cfg, &tc, &[0, 1], 0.5)?;
    print!("{}", render_ablation_table(&rows, 0.5));
    Ok(())
}
