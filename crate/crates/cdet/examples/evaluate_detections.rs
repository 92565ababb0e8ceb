//! Scores a hand-built set of detections: average precision per class, the
//! precision-recall points behind it, and the false positive taxonomy under
//! similar-class groups.

use cdet::data::{AnnotatedObject, Annotation};
use cdet::eval::{
    evaluate, render_fp_analysis, render_pr_points, render_report, ClassGroups, EvalOptions,
};
use cdet::geometry::{Box, Detection};
use cdet::pipeline::DetectionRecord;

fn object(class_id: usize, bbox: Box) -> AnnotatedObject {
    AnnotatedObject {
        class_id,
        bbox,
        difficult: false,
    }
}

fn record(image_id: u64, class_id: usize, score: f64, bbox: Box) -> DetectionRecord {
    DetectionRecord {
        image_id,
        detection: Detection {
            class_id,
            score,
            bbox,
        },
    }
}

fn main() {
    let gts = vec![
        Annotation {
            image_id: 0,
            width: 100,
            height: 100,
            objects: vec![
                object(1, Box::new(10.0, 10.0, 40.0, 40.0)),
                object(2, Box::new(60.0, 60.0, 90.0, 90.0)),
            ],
        },
        Annotation {
            image_id: 1,
            width: 100,
            height: 100,
            objects: vec![object(3, Box::new(20.0, 20.0, 70.0, 70.0))],
        },
    ];
    let dets = vec![
        // Clean hit, then a duplicate of the same object: the duplicate
        // counts as a localization error.
        record(0, 1, 0.95, Box::new(11.0, 11.0, 41.0, 41.0)),
        record(0, 1, 0.80, Box::new(14.0, 14.0, 44.0, 44.0)),
        // Wrong class on a real object: class 1 and 2 share a group, so
        // this is a similar-class confusion.
        record(0, 1, 0.70, Box::new(61.0, 61.0, 89.0, 89.0)),
        // Hits nothing at all: background confusion.
        record(0, 2, 0.60, Box::new(0.0, 60.0, 20.0, 80.0)),
        record(1, 3, 0.90, Box::new(22.0, 22.0, 72.0, 72.0)),
    ];

    let opts = EvalOptions {
        iou_threshold: 0.5,
        eleven_point: false,
        groups: ClassGroups::from_groups(4, &[vec![1, 2], vec![3]]),
    };
    let report = evaluate(&dets, &gts, 4, &opts);
    print!("{}", render_report(&report));
    println!();
    print!("{}", render_fp_analysis(&report));
    println!();
    println!("class 1 precision-recall points (recall precision interpolated):");
    print!("{}", render_pr_points(&report.per_class[0].pr));
}
