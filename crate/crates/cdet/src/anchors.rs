//! Regularly tiled multi-level anchor grid generation.

use crate::error::{Error, Result};
use crate::geometry::Box;

/// Tiling parameters: one anchor scale per stride level, split across aspect
/// ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSpec {
    /// Feature strides in pixels, ascending.
    pub strides: Vec<usize>,
    /// Base anchor scale = scale_multiplier * stride.
    pub scale_multiplier: usize,
    pub aspect_ratios: Vec<f64>,
    /// (width, height) in pixels; must be divisible by every stride.
    pub image_size: (usize, usize),
}

impl AnchorSpec {
    pub fn with_defaults(image_size: (usize, usize)) -> AnchorSpec {
        AnchorSpec {
            strides: vec![8, 16, 32, 64],
            scale_multiplier: 4,
            aspect_ratios: vec![0.5, 1.0, 2.0],
            image_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() {
            return Err(Error::config("anchor spec needs at least one stride"));
        }
        if !self.strides.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config(format!(
                "strides must be strictly ascending, got {:?}",
                self.strides
            )));
        }
        let (w, h) = self.image_size;
        for &s in &self.strides {
            if s == 0 || w % s != 0 || h % s != 0 {
                return Err(Error::config(format!(
                    "image size {w}x{h} not divisible by stride {s}"
                )));
            }
        }
        if self.aspect_ratios.is_empty() || self.aspect_ratios.iter().any(|&r| r <= 0.0) {
            return Err(Error::config(format!(
                "aspect ratios must be positive, got {:?}",
                self.aspect_ratios
            )));
        }
        if self.scale_multiplier == 0 {
            return Err(Error::config("scale multiplier must be positive"));
        }
        Ok(())
    }

    /// Grid cells per level: (rows, cols).
    pub fn level_dims(&self) -> Vec<(usize, usize)> {
        let (w, h) = self.image_size;
        self.strides.iter().map(|&s| (h / s, w / s)).collect()
    }

    pub fn anchor_count(&self) -> usize {
        self.level_dims()
            .iter()
            .map(|&(r, c)| r * c * self.aspect_ratios.len())
            .sum()
    }
}

/// Where an anchor came from in the tiling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub level: usize,
    pub row: usize,
    pub col: usize,
    pub ratio_index: usize,
}

/// All anchors in tiling order: level-major, then row, column, ratio.
#[derive(Clone, Debug)]
pub struct AnchorGrid {
    pub boxes: Vec<Box>,
    pub provenance: Vec<Provenance>,
    pub spec: AnchorSpec,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// First anchor index of each level, plus the total as a final sentinel.
    pub fn level_offsets(&self) -> Vec<usize> {
        let mut offsets = vec![0];
        for (rows, cols) in self.spec.level_dims() {
            offsets.push(offsets.last().unwrap() + rows * cols * self.spec.aspect_ratios.len());
        }
        offsets
    }
}

/// Tiles anchors over every level. For stride s the base scale is
/// scale_multiplier * s; the ratio-r anchor is (scale * sqrt(r)) x
/// (scale / sqrt(r)), preserving area across ratios. Centers sit at cell
/// centers ((col + 0.5) * s, (row + 0.5) * s). Anchors are not clipped to the
/// image; only decoded boxes are.
pub fn generate(spec: &AnchorSpec) -> Result<AnchorGrid> {
    spec.validate()?;
    let mut boxes = Vec::with_capacity(spec.anchor_count());
    let mut provenance = Vec::with_capacity(spec.anchor_count());
    for (level, &stride) in spec.strides.iter().enumerate() {
        let scale = (spec.scale_multiplier * stride) as f64;
        let (rows, cols) = spec.level_dims()[level];
        for row in 0..rows {
            for col in 0..cols {
                let cx = (col as f64 + 0.5) * stride as f64;
                let cy = (row as f64 + 0.5) * stride as f64;
                for (ratio_index, &r) in spec.aspect_ratios.iter().enumerate() {
                    let w = scale * r.sqrt();
                    let h = scale / r.sqrt();
                    boxes.push(Box::from_center(cx, cy, w, h));
                    provenance.push(Provenance {
                        level,
                        row,
                        col,
                        ratio_index,
                    });
                }
            }
        }
    }
    Ok(AnchorGrid {
        boxes,
        provenance,
        spec: spec.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_at_320_is_6375() {
        let grid = generate(&AnchorSpec::with_defaults((320, 320))).unwrap();
        assert_eq!(grid.len(), 6375);
        assert_eq!(grid.level_offsets(), vec![0, 4800, 6000, 6300, 6375]);
    }

    #[test]
    fn count_at_512_is_16320() {
        let grid = generate(&AnchorSpec::with_defaults((512, 512))).unwrap();
        assert_eq!(grid.len(), 16320);
    }

    #[test]
    fn count_formula_matches_loop_oracle() {
        // Re-count by brute iteration over admissible sizes.
        for size in [64usize, 128, 192, 320] {
            let spec = AnchorSpec::with_defaults((size, size));
            let grid = generate(&spec).unwrap();
            let mut oracle = 0;
            for &s in &spec.strides {
                for _row in 0..size / s {
                    for _col in 0..size / s {
                        oracle += spec.aspect_ratios.len();
                    }
                }
            }
            assert_eq!(grid.len(), oracle);
            assert_eq!(grid.len(), spec.anchor_count());
        }
    }

    #[test]
    fn stride8_shapes() {
        let grid = generate(&AnchorSpec::with_defaults((320, 320))).unwrap();
        // First cell of level 0: ratios [0.5, 1.0, 2.0] at base scale 32.
        let square = &grid.boxes[1];
        assert!((square.width() - 32.0).abs() < 1e-9);
        assert!((square.height() - 32.0).abs() < 1e-9);
        let wide = &grid.boxes[2];
        assert!((wide.width() - 45.2548).abs() < 1e-4, "w = {}", wide.width());
        assert!((wide.height() - 22.6274).abs() < 1e-4, "h = {}", wide.height());
        let (cx, cy, _, _) = square.center_form();
        assert_eq!((cx, cy), (4.0, 4.0));
    }

    #[test]
    fn ratio_split_preserves_area() {
        let grid = generate(&AnchorSpec::with_defaults((128, 128))).unwrap();
        for (b, p) in grid.boxes.iter().zip(&grid.provenance) {
            let scale = (grid.spec.scale_multiplier * grid.spec.strides[p.level]) as f64;
            assert!((b.area() - scale * scale).abs() < 1e-6);
        }
    }

    #[test]
    fn centers_sit_on_cell_centers() {
        let grid = generate(&AnchorSpec::with_defaults((128, 128))).unwrap();
        for (b, p) in grid.boxes.iter().zip(&grid.provenance) {
            let s = grid.spec.strides[p.level] as f64;
            let (cx, cy, _, _) = b.center_form();
            assert!((cx - (p.col as f64 + 0.5) * s).abs() < 1e-9);
            assert!((cy - (p.row as f64 + 0.5) * s).abs() < 1e-9);
        }
    }

    #[test]
    fn per_area_density_is_ratios_over_stride_squared() {
        let spec = AnchorSpec::with_defaults((256, 256));
        let grid = generate(&spec).unwrap();
        let offsets = grid.level_offsets();
        for (level, &s) in spec.strides.iter().enumerate() {
            let count = offsets[level + 1] - offsets[level];
            let per_pixel2 = count as f64 / (256.0 * 256.0);
            let expected = spec.aspect_ratios.len() as f64 / (s * s) as f64;
            assert!((per_pixel2 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn indivisible_image_size_rejected() {
        let spec = AnchorSpec::with_defaults((100, 100));
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn ordering_is_level_row_col_ratio() {
        let grid = generate(&AnchorSpec::with_defaults((128, 128))).unwrap();
        let mut expected = Vec::new();
        for (level, &(rows, cols)) in grid.spec.level_dims().iter().enumerate() {
            for row in 0..rows {
                for col in 0..cols {
                    for ratio_index in 0..grid.spec.aspect_ratios.len() {
                        expected.push(Provenance {
                            level,
                            row,
                            col,
                            ratio_index,
                        });
                    }
                }
            }
        }
        assert_eq!(grid.provenance, expected);
    }
}
