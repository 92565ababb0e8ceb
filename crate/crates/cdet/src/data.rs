//! Synthetic shapes dataset: generation, plain-text image and annotation I/O,
//! and flip/crop augmentation.
//!
//! All randomness flows from explicit seeds; image `i` of a dataset depends
//! only on (spec.seed, i), so generation order is irrelevant.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, Box};
use crate::microdiff::Tensor;

/// One labeled object; `difficult` mirrors detection-benchmark conventions
/// and is always false for synthetic data.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedObject {
    pub class_id: usize,
    pub bbox: Box,
    pub difficult: bool,
}

/// Ground truth for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Annotation {
    pub image_id: u64,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<AnnotatedObject>,
}

/// Shape classes by id; background is 0.
pub const SHAPE_NAMES: [&str; 3] = ["rectangle", "ellipse", "triangle"];

/// Recipe for a deterministic synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub image_count: usize,
    /// (width, height)
    pub image_size: (usize, usize),
    /// How many of the shape classes to use (1..=3), ids 1..=n.
    pub num_shape_classes: usize,
    /// Inclusive range of objects per image.
    pub objects_per_image: (usize, usize),
    /// Object box side as a fraction of the smaller image dimension.
    pub scale_range: (f64, f64),
    /// Maximum pairwise iou between placed ground-truth boxes.
    pub overlap_cap: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_level: f64,
}

impl Default for SyntheticSpec {
    fn default() -> SyntheticSpec {
        SyntheticSpec {
            seed: 0,
            image_count: 100,
            image_size: (128, 128),
            num_shape_classes: 3,
            objects_per_image: (1, 3),
            scale_range: (0.2, 0.5),
            overlap_cap: 0.2,
            noise_level: 0.03,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.image_size;
        if w < 16 || h < 16 {
            return Err(Error::config("image size must be at least 16x16"));
        }
        if self.image_count == 0 {
            return Err(Error::config("image_count must be positive"));
        }
        if !(1..=3).contains(&self.num_shape_classes) {
            return Err(Error::config("num_shape_classes must be 1..=3"));
        }
        let (lo, hi) = self.objects_per_image;
        if lo == 0 || hi < lo {
            return Err(Error::config("objects_per_image must be a nonempty range"));
        }
        let (slo, shi) = self.scale_range;
        if !(slo > 0.0 && shi < 1.0 && shi >= slo) {
            return Err(Error::config("scale_range must lie within (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.overlap_cap) {
            return Err(Error::config("overlap_cap must be in [0, 1)"));
        }
        if self.noise_level < 0.0 || !self.noise_level.is_finite() {
            return Err(Error::config("noise_level must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Splitmix-style mix of a base seed and a stream index; adjacent streams
/// land far apart.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

enum Shape {
    /// Axis-aligned rectangle, stored as its real-valued rect.
    Rectangle(Box),
    /// Center and semi-axes.
    Ellipse { cx: f64, cy: f64, a: f64, b: f64 },
    /// Apex-up isosceles triangle: apex, base-left, base-right.
    Triangle { v: [(f64, f64); 3] },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Rectangle(r) => x >= r.xmin && x < r.xmax && y >= r.ymin && y < r.ymax,
            Shape::Ellipse { cx, cy, a, b } => {
                let dx = (x - cx) / a;
                let dy = (y - cy) / b;
                dx * dx + dy * dy <= 1.0
            }
            Shape::Triangle { v } => {
                let sign = |p: (f64, f64), q: (f64, f64)| {
                    (x - q.0) * (p.1 - q.1) - (p.0 - q.0) * (y - q.1)
                };
                let d0 = sign(v[0], v[1]);
                let d1 = sign(v[1], v[2]);
                let d2 = sign(v[2], v[0]);
                let has_neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
                let has_pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
                !(has_neg && has_pos)
            }
        }
    }
}

fn make_shape(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Shape {
    match class_id {
        1 => Shape::Rectangle(Box::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)),
        2 => Shape::Ellipse {
            cx,
            cy,
            a: w / 2.0,
            b: h / 2.0,
        },
        3 => Shape::Triangle {
            v: [
                (cx, cy - h / 2.0),
                (cx - w / 2.0, cy + h / 2.0),
                (cx + w / 2.0, cy + h / 2.0),
            ],
        },
        _ => panic!("unknown shape class {class_id}"),
    }
}

/// Paints the shape at pixel centers and returns the painted pixel count plus
/// the mask-extent box (half-open pixel coordinates), or None if no pixel
/// center fell inside.
fn paint(
    pixels: &mut [f64],
    width: usize,
    height: usize,
    shape: &Shape,
    intensity: f64,
) -> Option<Box> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0usize, 0usize);
    let mut any = false;
    for row in 0..height {
        for col in 0..width {
            if shape.contains(col as f64 + 0.5, row as f64 + 0.5) {
                pixels[row * width + col] = intensity;
                any = true;
                x0 = x0.min(col);
                y0 = y0.min(row);
                x1 = x1.max(col);
                y1 = y1.max(row);
            }
        }
    }
    any.then(|| Box::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64))
}

/// Renders image `id` of the dataset described by `spec`. Deterministic in
/// (spec.seed, id) alone.
pub fn render_image(spec: &SyntheticSpec, id: u64) -> (Tensor, Annotation) {
    let (width, height) = spec.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, id));
    let base = rng.gen_range(0.08..0.25);
    let mut pixels = vec![base; width * height];

    let count = rng.gen_range(spec.objects_per_image.0..=spec.objects_per_image.1);
    let min_dim = width.min(height) as f64;
    let mut objects: Vec<AnnotatedObject> = Vec::new();
    for _ in 0..count {
        // Rejection placement: accept the first proposal whose tight box
        // overlaps every placed box by at most the cap.
        for _attempt in 0..40 {
            let class_id = rng.gen_range(1..=spec.num_shape_classes);
            let scale = rng.gen_range(spec.scale_range.0..=spec.scale_range.1) * min_dim;
            let aspect = rng.gen_range(0.6..1.7f64);
            let w = (scale * aspect.sqrt()).min(width as f64 - 2.0).max(3.0);
            let h = (scale / aspect.sqrt()).min(height as f64 - 2.0).max(3.0);
            let cx = rng.gen_range(w / 2.0..width as f64 - w / 2.0);
            let cy = rng.gen_range(h / 2.0..height as f64 - h / 2.0);
            let shape = make_shape(class_id, cx, cy, w, h);
            // Probe the mask extent on a scratch buffer first.
            let mut probe = vec![0.0; width * height];
            let Some(bbox) = paint(&mut probe, width, height, &shape, 1.0) else {
                continue;
            };
            if objects.iter().any(|o| iou(&o.bbox, &bbox) > spec.overlap_cap) {
                continue;
            }
            let intensity = rng.gen_range(0.55..0.95);
            paint(&mut pixels, width, height, &shape, intensity);
            objects.push(AnnotatedObject {
                class_id,
                bbox,
                difficult: false,
            });
            break;
        }
    }

    if spec.noise_level > 0.0 {
        let normal = Normal::new(0.0, spec.noise_level).expect("valid noise level");
        for p in &mut pixels {
            *p = (*p + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }

    let image = Tensor::from_data(&[1, height, width], pixels);
    let annotation = Annotation {
        image_id: id,
        width,
        height,
        objects,
    };
    (image, annotation)
}

/// In-memory dataset: aligned images and annotations.
pub struct Dataset {
    pub images: Vec<Tensor>,
    pub annotations: Vec<Annotation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Renders the whole dataset in memory (images are parallel across workers).
pub fn generate_in_memory(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let rendered: Vec<(Tensor, Annotation)> = (0..spec.image_count as u64)
        .into_par_iter()
        .map(|id| render_image(spec, id))
        .collect();
    let mut images = Vec::with_capacity(rendered.len());
    let mut annotations = Vec::with_capacity(rendered.len());
    for (img, ann) in rendered {
        images.push(img);
        annotations.push(ann);
    }
    Ok(Dataset {
        images,
        annotations,
    })
}

pub fn image_file_name(id: u64) -> String {
    format!("img_{id:05}.pgm")
}

/// Renders and writes `images/img_*.pgm` plus `annotations.txt` under `dir`.
pub fn generate_dataset(spec: &SyntheticSpec, dir: &Path) -> Result<Vec<Annotation>> {
    let dataset = generate_in_memory(spec)?;
    let images_dir = dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    for (img, ann) in dataset.images.iter().zip(&dataset.annotations) {
        let path = images_dir.join(image_file_name(ann.image_id));
        save_pgm(&path, img)?;
    }
    save_annotations(&dir.join("annotations.txt"), &dataset.annotations)?;
    Ok(dataset.annotations)
}

/// Loads a dataset directory written by `generate_dataset`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let annotations = load_annotations(&dir.join("annotations.txt"))?;
    let mut images = Vec::with_capacity(annotations.len());
    for ann in &annotations {
        let path = dir.join("images").join(image_file_name(ann.image_id));
        let img = load_image(&path)?;
        let (_, h, w) = img.dims3();
        if (w, h) != (ann.width, ann.height) {
            return Err(Error::config(format!(
                "image {} is {w}x{h} but its annotation says {}x{}",
                path.display(),
                ann.width,
                ann.height
            )));
        }
        images.push(img);
    }
    Ok(Dataset {
        images,
        annotations,
    })
}

/// Writes a plain-text graymap (P2, maxval 255); values are clamped to [0,1]
/// and quantized.
pub fn save_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (c, h, w) = image.dims3();
    assert_eq!(c, 1, "graymap output needs a single channel");
    let mut out = String::with_capacity(w * h * 4 + 32);
    let _ = writeln!(out, "P2");
    let _ = writeln!(out, "{w} {h}");
    let _ = writeln!(out, "255");
    for row in 0..h {
        let mut line = String::with_capacity(w * 4);
        for col in 0..w {
            let v = (image.data[row * w + col].clamp(0.0, 1.0) * 255.0).round() as u32;
            if col > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{v}");
        }
        out.push_str(&line);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a plain-text graymap (P2) or pixmap (P3, averaged to gray) into a
/// single-channel tensor scaled to [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    // Token stream with '#' comments stripped to end of line.
    let mut tokens: Vec<&str> = Vec::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("");
        tokens.extend(line.split_whitespace());
    }
    let mut it = tokens.into_iter();
    let magic = it
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty image file"))?;
    let channels = match magic {
        "P2" => 1,
        "P3" => 3,
        other => {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported image magic {other:?} (want P2 or P3)"),
            ))
        }
    };
    let mut need = |what: &str| -> Result<u64> {
        it.next()
            .ok_or_else(|| Error::parse(path, 1, format!("missing {what}")))?
            .parse::<u64>()
            .map_err(|_| Error::parse(path, 1, format!("bad {what}")))
    };
    let w = need("width")? as usize;
    let h = need("height")? as usize;
    let maxval = need("maxval")?;
    if w == 0 || h == 0 || maxval == 0 {
        return Err(Error::parse(path, 1, "degenerate image dimensions"));
    }
    let mut pixels = vec![0.0; w * h];
    for p in pixels.iter_mut() {
        let mut acc = 0.0;
        for _ in 0..channels {
            acc += need("pixel value")? as f64;
        }
        *p = acc / channels as f64 / maxval as f64;
    }
    if it.next().is_some() {
        return Err(Error::parse(path, 1, "trailing data after pixel raster"));
    }
    Ok(Tensor::from_data(&[1, h, w], pixels))
}

/// Writes annotations as line-delimited text:
/// `image <id> <width> <height>` followed by one
/// `box <id> <class> <xmin> <ymin> <xmax> <ymax> <difficult>` per object.
/// Coordinates print in shortest-round-trip form, so loading is lossless.
pub fn save_annotations(path: &Path, annotations: &[Annotation]) -> Result<()> {
    let mut out = String::new();
    for ann in annotations {
        let _ = writeln!(out, "image {} {} {}", ann.image_id, ann.width, ann.height);
        for o in &ann.objects {
            let _ = writeln!(
                out,
                "box {} {} {} {} {} {} {}",
                ann.image_id,
                o.class_id,
                o.bbox.xmin,
                o.bbox.ymin,
                o.bbox.xmax,
                o.bbox.ymax,
                u8::from(o.difficult)
            );
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

fn parse_annotations(text: &str, path: &Path) -> Result<Vec<Annotation>> {
    let mut out: Vec<Annotation> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::parse(path, lineno, msg);
        match fields[0] {
            "image" => {
                if fields.len() != 4 {
                    return Err(err(format!(
                        "image record needs 4 fields, got {}",
                        fields.len()
                    )));
                }
                let image_id = fields[1]
                    .parse()
                    .map_err(|_| err(format!("bad image id {:?}", fields[1])))?;
                let width = fields[2]
                    .parse()
                    .map_err(|_| err(format!("bad width {:?}", fields[2])))?;
                let height = fields[3]
                    .parse()
                    .map_err(|_| err(format!("bad height {:?}", fields[3])))?;
                out.push(Annotation {
                    image_id,
                    width,
                    height,
                    objects: Vec::new(),
                });
            }
            "box" => {
                if fields.len() != 8 {
                    return Err(err(format!(
                        "box record needs 8 fields, got {}",
                        fields.len()
                    )));
                }
                let image_id: u64 = fields[1]
                    .parse()
                    .map_err(|_| err(format!("bad image id {:?}", fields[1])))?;
                let current = out
                    .last_mut()
                    .ok_or_else(|| err("box record before any image record".into()))?;
                if current.image_id != image_id {
                    return Err(err(format!(
                        "box references image {image_id} but current image is {}",
                        current.image_id
                    )));
                }
                let class_id: usize = fields[2]
                    .parse()
                    .map_err(|_| err(format!("bad class id {:?}", fields[2])))?;
                if class_id == 0 {
                    return Err(err("class id 0 is reserved for background".into()));
                }
                let mut coords = [0.0f64; 4];
                for (slot, raw) in coords.iter_mut().zip(&fields[3..7]) {
                    *slot = raw
                        .parse()
                        .map_err(|_| err(format!("bad coordinate {raw:?}")))?;
                }
                let difficult = match *fields.last().unwrap() {
                    "0" => false,
                    "1" => true,
                    other => return Err(err(format!("bad difficult flag {other:?}"))),
                };
                let bbox = Box {
                    xmin: coords[0],
                    ymin: coords[1],
                    xmax: coords[2],
                    ymax: coords[3],
                };
                if !(bbox.xmin <= bbox.xmax && bbox.ymin <= bbox.ymax) {
                    return Err(err(format!("inverted box {bbox:?}")));
                }
                if bbox.xmin < 0.0
                    || bbox.ymin < 0.0
                    || bbox.xmax > current.width as f64
                    || bbox.ymax > current.height as f64
                {
                    return Err(err(format!(
                        "box {bbox:?} escapes the {}x{} image",
                        current.width, current.height
                    )));
                }
                current.objects.push(AnnotatedObject {
                    class_id,
                    bbox,
                    difficult,
                });
            }
            other => {
                return Err(err(format!("unknown record type {other:?}")));
            }
        }
    }
    Ok(out)
}

/// Horizontal mirror of image and boxes.
pub fn flip_horizontal(image: &Tensor, annotation: &Annotation) -> (Tensor, Annotation) {
    let (c, h, w) = image.dims3();
    assert_eq!(c, 1);
    let mut pixels = image.data.clone();
    for row in 0..h {
        pixels[row * w..(row + 1) * w].reverse();
    }
    let wf = w as f64;
    let mut ann = annotation.clone();
    for o in &mut ann.objects {
        let (x1, x2) = (o.bbox.xmin, o.bbox.xmax);
        o.bbox.xmin = wf - x2;
        o.bbox.xmax = wf - x1;
    }
    (Tensor::from_data(&[1, h, w], pixels), ann)
}

/// Nearest-neighbor resample of a window back to the full image size, with
/// boxes clipped to the window and rescaled.
fn crop_resize(
    image: &Tensor,
    annotation: &Annotation,
    wx: usize,
    wy: usize,
    ww: usize,
    wh: usize,
) -> (Tensor, Annotation) {
    let (_, h, w) = image.dims3();
    let mut pixels = vec![0.0; w * h];
    for row in 0..h {
        // Source pixel whose center is nearest to this output pixel's center.
        let sy = wy + (((row as f64 + 0.5) * wh as f64 / h as f64) as usize).min(wh - 1);
        for col in 0..w {
            let sx = wx + (((col as f64 + 0.5) * ww as f64 / w as f64) as usize).min(ww - 1);
            pixels[row * w + col] = image.data[sy * w + sx];
        }
    }
    let sx_scale = w as f64 / ww as f64;
    let sy_scale = h as f64 / wh as f64;
    let mut objects = Vec::new();
    for o in &annotation.objects {
        let clipped = Box::new(
            o.bbox.xmin.max(wx as f64),
            o.bbox.ymin.max(wy as f64),
            o.bbox.xmax.min((wx + ww) as f64),
            o.bbox.ymax.min((wy + wh) as f64),
        );
        if clipped.width() <= 0.0 || clipped.height() <= 0.0 {
            continue;
        }
        objects.push(AnnotatedObject {
            class_id: o.class_id,
            bbox: Box::new(
                (clipped.xmin - wx as f64) * sx_scale,
                (clipped.ymin - wy as f64) * sy_scale,
                (clipped.xmax - wx as f64) * sx_scale,
                (clipped.ymax - wy as f64) * sy_scale,
            ),
            difficult: o.difficult,
        });
    }
    (
        Tensor::from_data(&[1, h, w], pixels),
        Annotation {
            image_id: annotation.image_id,
            width: annotation.width,
            height: annotation.height,
            objects,
        },
    )
}

/// Random horizontal flip (probability 1/2) followed by a random crop that
/// keeps at least one ground-truth box; windows that would drop every box are
/// resampled, falling back to the uncropped image.
pub fn augment(image: &Tensor, annotation: &Annotation, seed: u64) -> (Tensor, Annotation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut img, mut ann) = if rng.gen_bool(0.5) {
        flip_horizontal(image, annotation)
    } else {
        (image.clone(), annotation.clone())
    };
    if ann.objects.is_empty() {
        return (img, ann);
    }
    let (_, h, w) = img.dims3();
    for _ in 0..20 {
        let fw = rng.gen_range(0.6..=1.0);
        let fh = rng.gen_range(0.6..=1.0);
        let ww = ((w as f64 * fw) as usize).clamp(8, w);
        let wh = ((h as f64 * fh) as usize).clamp(8, h);
        let wx = rng.gen_range(0..=w - ww);
        let wy = rng.gen_range(0..=h - wh);
        let (cropped_img, cropped_ann) = crop_resize(&img, &ann, wx, wy, ww, wh);
        if !cropped_ann.objects.is_empty() {
            img = cropped_img;
            ann = cropped_ann;
            break;
        }
    }
    (img, ann)
}
