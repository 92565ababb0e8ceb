//! Tiles the multi-level anchor grid at two canonical sizes and prints how
//! the counts decompose per level.

use cdet::anchors::{generate, AnchorSpec};

fn main() -> cdet::Result<()> {
    for size in [(320, 320), (512, 512)] {
        let spec = AnchorSpec::with_defaults(size);
        let grid = generate(&spec)?;
        println!("{}x{}: {} anchors", size.0, size.1, grid.len());
        let offsets = grid.level_offsets();
        let dims = spec.level_dims();
        for (level, pair) in offsets.windows(2).enumerate() {
            let (rows, cols) = dims[level];
            println!(
                "  level {level} (stride {:>2}): {rows}x{cols} cells x {} ratios = {}",
                spec.strides[level],
                spec.aspect_ratios.len(),
                pair[1] - pair[0]
            );
        }
        let b = grid.boxes[0];
        let p = grid.provenance[0];
        println!(
            "  first record: level {} row {} col {} ratio {} -> ({:.1}, {:.1})..({:.1}, {:.1})",
            p.level, p.row, p.col, p.ratio_index, b.xmin, b.ymin, b.xmax, b.ymax
        );
    }
    Ok(())
}
