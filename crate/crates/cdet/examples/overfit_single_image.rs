//! Sanity check: a detector that cannot memorize one image is broken.
//! Trains on a single synthetic image until the loss collapses, then checks
//! the top detection against the ground truth box.

use cdet::data::{generate_in_memory, SyntheticSpec};
use cdet::geometry::iou;
use cdet::microdiff::ParameterStore;
use cdet::network::{Network, NetworkConfig};
use cdet::pipeline::{infer, train, TrainConfig};

fn main() -> cdet::Result<()> {
    let spec = SyntheticSpec {
        seed: 3,
        image_count: 1,
        image_size: (64, 64),
        objects_per_image: (1, 1),
        scale_range: (0.3, 0.5),
        ..SyntheticSpec::default()
    };
    let dataset = generate_in_memory(&spec)?;

    let mut cfg = NetworkConfig::with_defaults((64, 64), 4);
    cfg.strides = vec![4, 8];
    cfg.stem_channels = vec![4];
    cfg.level_channels = vec![8, 12];
    cfg.tcb_channels = 16;
    cfg.l2norm_inits = vec![10.0];
    let mut tc = TrainConfig::for_network(&cfg);
    tc.batch_size = 1;
    tc.max_steps = 150;
    tc.augment = false;
    tc.lr_schedule = vec![(0, 2e-3)];

    let mut store = ParameterStore::new();
    let net = Network::build(cfg, &mut store)?;
    net.init_params(&mut store, 0);
    let records = train(&net, &mut store, &dataset, &tc)?;
    let first = records.first().expect("at least one step").loss.total;
    let last = records.last().expect("at least one step").loss.total;
    println!(
        "loss {first:.4} -> {last:.4} over {} steps ({:.1}% drop)",
        records.len(),
        100.0 * (1.0 - last / first)
    );

    let dets = infer(&net, &store, &dataset.images[0])?;
    let truth = &dataset.annotations[0].objects[0];
    match dets.first() {
        Some(top) => println!(
            "top detection: class {} (truth {}), score {:.3}, iou with truth {:.3}",
            top.class_id,
            truth.class_id,
            top.score,
            iou(&top.bbox, &truth.bbox)
        ),
        None => println!("no detections emitted"),
    }
    Ok(())
}
