//! Dataset ingestion (Pascal-VOC XML, class-per-directory crop trees),
//! deterministic splits, and the synthetic thin-smear generator.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::CellClass;
use crate::imaging::{PixelBox, RasterImage};
use crate::prng::Prng;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("xml: {0}")]
    Xml(String),
    #[error("annotation schema: {0}")]
    SchemaError(String),
    #[error("unknown class name {0:?}")]
    UnknownClassName(String),
    #[error("inverted box: {0}")]
    InvertedBox(String),
    #[error("dataset at {0} contains no images")]
    EmptyDataset(PathBuf),
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions((f64, f64, f64)),
    #[error("could not place cell {index} after {attempts} attempts")]
    PlacementOverflow { index: usize, attempts: u32 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One image's detection annotations, boxes half-open and 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedImage {
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<(CellClass, PixelBox)>,
}

// ---------------------------------------------------------------------------
// Pascal VOC

/// Map source spelling to a class. Only the BCCD spellings are accepted.
pub fn class_from_name(name: &str) -> Result<CellClass, DatasetError> {
    match name.trim() {
        "RBC" => Ok(CellClass::Rbc),
        "WBC" => Ok(CellClass::Wbc),
        "Platelets" | "Platelet" => Ok(CellClass::Platelet),
        other => Err(DatasetError::UnknownClassName(other.to_string())),
    }
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, name: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn required_text<'a>(node: roxmltree::Node<'a, '_>, path: &str) -> Result<&'a str, DatasetError> {
    let mut cur = node;
    for part in path.split('/') {
        cur = child(cur, part).ok_or_else(|| DatasetError::SchemaError(format!("missing <{path}>")))?;
    }
    cur.text()
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .ok_or_else(|| DatasetError::SchemaError(format!("empty <{path}>")))
}

fn required_int(node: roxmltree::Node<'_, '_>, path: &str) -> Result<i64, DatasetError> {
    let text = required_text(node, path)?;
    // Some exporters write coordinates as "12.0".
    let v: f64 = text
        .parse()
        .map_err(|_| DatasetError::SchemaError(format!("<{path}> is not a number: {text:?}")))?;
    if !v.is_finite() {
        return Err(DatasetError::SchemaError(format!("<{path}> is not finite")));
    }
    Ok(v.round() as i64)
}

/// Parse one Pascal-VOC annotation.
///
/// VOC coordinates are 1-based inclusive; they become half-open 0-based:
/// `top = ymin - 1, left = xmin - 1, bottom = ymax, right = xmax`. Boxes
/// reaching past the declared image size are clipped to it.
pub fn parse_voc_xml(xml: &[u8]) -> Result<AnnotatedImage, DatasetError> {
    let text = std::str::from_utf8(xml).map_err(|e| DatasetError::Xml(e.to_string()))?;
    let doc = roxmltree::Document::parse(text).map_err(|e| DatasetError::Xml(e.to_string()))?;
    let root = doc.root_element();
    if !root.has_tag_name("annotation") {
        return Err(DatasetError::SchemaError(format!(
            "root element is <{}>, expected <annotation>",
            root.tag_name().name()
        )));
    }
    let width = required_int(root, "size/width")?;
    let height = required_int(root, "size/height")?;
    if width <= 0 || height <= 0 || width > u32::MAX as i64 || height > u32::MAX as i64 {
        return Err(DatasetError::SchemaError(format!("bad image size {width}x{height}")));
    }
    let image_path = child(root, "filename")
        .and_then(|n| n.text())
        .map(|t| PathBuf::from(t.trim()))
        .unwrap_or_default();
    let mut objects = Vec::new();
    for obj in root.children().filter(|n| n.has_tag_name("object")) {
        let class = class_from_name(required_text(obj, "name")?)?;
        let xmin = required_int(obj, "bndbox/xmin")?;
        let ymin = required_int(obj, "bndbox/ymin")?;
        let xmax = required_int(obj, "bndbox/xmax")?;
        let ymax = required_int(obj, "bndbox/ymax")?;
        if xmax <= xmin || ymax <= ymin {
            return Err(DatasetError::InvertedBox(format!(
                "xmin={xmin} ymin={ymin} xmax={xmax} ymax={ymax}"
            )));
        }
        let clip = |v: i64, hi: i64| v.clamp(0, hi) as i32;
        let b = PixelBox::new(
            clip(ymin - 1, height),
            clip(xmin - 1, width),
            clip(ymax, height),
            clip(xmax, width),
        );
        if b.area() == 0 {
            return Err(DatasetError::SchemaError(format!(
                "box xmin={xmin} ymin={ymin} xmax={xmax} ymax={ymax} lies outside the image"
            )));
        }
        objects.push((class, b));
    }
    Ok(AnnotatedImage {
        image_path,
        width: width as u32,
        height: height as u32,
        objects,
    })
}

/// Inverse of [`parse_voc_xml`].
pub fn write_voc_xml(ann: &AnnotatedImage) -> String {
    let filename = ann
        .image_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut out = String::new();
    out.push_str("<annotation>\n");
    out.push_str(&format!("\t<filename>{}</filename>\n", xml_escape(&filename)));
    out.push_str(&format!(
        "\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>3</depth>\n\t</size>\n",
        ann.width, ann.height
    ));
    for (class, b) in &ann.objects {
        out.push_str(&format!(
            "\t<object>\n\t\t<name>{}</name>\n\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n\t</object>\n",
            class.name(),
            b.left + 1,
            b.top + 1,
            b.right,
            b.bottom
        ));
    }
    out.push_str("</annotation>\n");
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Load every `*.xml` in `dir` (non-recursive), sorted by file name.
pub fn load_voc_dir(dir: &Path) -> Result<Vec<(PathBuf, AnnotatedImage)>, DatasetError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("xml")))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let ann = parse_voc_xml(&fs::read(&p)?)?;
            Ok((p, ann))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Classification trees

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CropLabel {
    Parasitized,
    Uninfected,
}

impl CropLabel {
    pub fn dir_name(self) -> &'static str {
        match self {
            CropLabel::Parasitized => "Parasitized",
            CropLabel::Uninfected => "Uninfected",
        }
    }

    pub fn is_infected(self) -> bool {
        self == CropLabel::Parasitized
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledCrop {
    pub image_path: PathBuf,
    pub label: CropLabel,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationDataset {
    pub items: Vec<LabeledCrop>,
    pub parasitized: usize,
    pub uninfected: usize,
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "ppm", "pnm", "jpg", "jpeg"];

fn is_image_file(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Flat scan of `root/Parasitized` and `root/Uninfected`, ordered by path.
pub fn load_classification_dataset(root: &Path) -> Result<ClassificationDataset, DatasetError> {
    let mut items = Vec::new();
    for label in [CropLabel::Parasitized, CropLabel::Uninfected] {
        let dir = root.join(label.dir_name());
        if !dir.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if is_image_file(&path) {
                items.push(LabeledCrop { image_path: path, label });
            }
        }
    }
    if items.is_empty() {
        return Err(DatasetError::EmptyDataset(root.to_path_buf()));
    }
    items.sort_by(|a, b| a.image_path.cmp(&b.image_path));
    let parasitized = items.iter().filter(|c| c.label == CropLabel::Parasitized).count();
    Ok(ClassificationDataset {
        uninfected: items.len() - parasitized,
        parasitized,
        items,
    })
}

// ---------------------------------------------------------------------------
// Splits

/// Train, validation and test partitions.
pub type Split<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Seeded shuffle then floor allocation; rounding remainder goes to train.
pub fn split_dataset<T: Clone>(
    items: &[T],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Split<T>, DatasetError> {
    let (ft, fv, fs) = fractions;
    let ok = [ft, fv, fs].iter().all(|f| f.is_finite() && *f >= 0.0) && ((ft + fv + fs) - 1.0).abs() <= 1e-9;
    if !ok {
        return Err(DatasetError::BadFractions(fractions));
    }
    let n = items.len();
    // The epsilon absorbs products like 10 * 0.1 landing just under an integer.
    let alloc = |f: f64| ((n as f64 * f + 1e-9).floor() as usize).min(n);
    let n_val = alloc(fv);
    let n_test = alloc(fs).min(n - n_val);
    let n_train = n - n_val - n_test;
    let mut order: Vec<usize> = (0..n).collect();
    Prng::new(seed).shuffle(&mut order);
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_val]),
        pick(&order[n_train + n_val..]),
    ))
}

// ---------------------------------------------------------------------------
// Synthetic slides

/// Parameters of a generated thin-smear slide. Radii are given at 320 px and
/// scale with `min(width, height) / 320`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSlideSpec {
    pub seed: u64,
    pub n_rbc: usize,
    pub n_wbc: usize,
    pub n_platelet: usize,
    pub parasitized_fraction: f64,
    pub width: u32,
    pub height: u32,
    /// Per-slide stain hue shift, uniform in `[-hue_jitter, hue_jitter]` degrees.
    pub hue_jitter: f64,
    /// Per-slide brightness factor jitter, uniform in `[-j, j]`.
    pub brightness_jitter: f64,
    /// Per-pixel additive noise amplitude (0 disables it).
    pub noise: u8,
    /// Number of dirt speckles, not annotated.
    pub contamination: usize,
    /// Minimum center distance as a multiple of `r_i + r_j`; never below 0.9.
    pub spacing: f64,
}

impl Default for SyntheticSlideSpec {
    fn default() -> Self {
        SyntheticSlideSpec {
            seed: 0,
            n_rbc: 30,
            n_wbc: 1,
            n_platelet: 3,
            parasitized_fraction: 0.1,
            width: 320,
            height: 320,
            hue_jitter: 6.0,
            brightness_jitter: 0.04,
            noise: 3,
            contamination: 4,
            spacing: 1.15,
        }
    }
}

pub const RBC_RADIUS: (f64, f64) = (8.0, 14.0);
pub const WBC_RADIUS: (f64, f64) = (21.0, 26.0);
pub const PLATELET_RADIUS: (f64, f64) = (2.5, 4.0);
const MAX_PLACEMENT_ATTEMPTS: u32 = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlide {
    pub image: RasterImage,
    pub truth: AnnotatedImage,
    /// Aligned with `truth.objects`; always false for non-RBC objects.
    pub parasitized: Vec<bool>,
}

/// Sidecar entry listing an RBC's infection status by annotation index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLabel {
    pub index: usize,
    pub parasitized: bool,
    /// Overrides the oracle verdict when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_infected: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellLabels {
    pub cells: Vec<CellLabel>,
}

impl SyntheticSlide {
    pub fn labels(&self) -> CellLabels {
        CellLabels {
            cells: self
                .truth
                .objects
                .iter()
                .enumerate()
                .filter(|(_, (c, _))| *c == CellClass::Rbc)
                .map(|(i, _)| CellLabel {
                    index: i,
                    parasitized: self.parasitized[i],
                    p_infected: None,
                })
                .collect(),
        }
    }

    pub fn infected_count(&self) -> usize {
        self.parasitized.iter().filter(|&&p| p).count()
    }
}

/// Stain palette after per-slide jitter.
struct Palette {
    background: [f64; 3],
    rbc_rim: [f64; 3],
    rbc_pallor: [f64; 3],
    wbc_cytoplasm: [f64; 3],
    wbc_nucleus: [f64; 3],
    platelet: [f64; 3],
    chromatin: [f64; 3],
    dirt: [f64; 3],
}

impl Palette {
    fn jittered(rng: &mut Prng, hue_jitter: f64, brightness_jitter: f64) -> Self {
        let shift = rng.range_f64(-hue_jitter, hue_jitter);
        let gain = 1.0 + rng.range_f64(-brightness_jitter, brightness_jitter);
        let stain = |rgb: [f64; 3]| rotate_hue(rgb, shift).map(|c| (c * gain).clamp(0.0, 255.0));
        Palette {
            background: stain([236.0, 226.0, 229.0]),
            rbc_rim: stain([214.0, 146.0, 160.0]),
            rbc_pallor: stain([226.0, 172.0, 182.0]),
            wbc_cytoplasm: stain([164.0, 120.0, 196.0]),
            wbc_nucleus: stain([92.0, 42.0, 132.0]),
            platelet: stain([120.0, 66.0, 160.0]),
            chromatin: stain([70.0, 18.0, 112.0]),
            dirt: stain([96.0, 88.0, 80.0]),
        }
    }
}

/// Rotate hue by `deg` degrees around the gray axis (Rodrigues rotation in RGB).
fn rotate_hue(rgb: [f64; 3], deg: f64) -> [f64; 3] {
    let (s, c) = deg.to_radians().sin_cos();
    let k = (1.0 - c) / 3.0;
    let q = (1.0f64 / 3.0).sqrt() * s;
    let m = [
        [c + k, k - q, k + q],
        [k + q, c + k, k - q],
        [k - q, k + q, c + k],
    ];
    let mut out = [0.0; 3];
    for (o, row) in out.iter_mut().zip(m.iter()) {
        *o = row[0] * rgb[0] + row[1] * rgb[1] + row[2] * rgb[2];
    }
    out
}

/// Float canvas that records the painted extent of each shape.
struct Canvas {
    width: u32,
    height: u32,
    px: Vec<[f64; 3]>,
}

impl Canvas {
    fn new(width: u32, height: u32, fill: [f64; 3]) -> Self {
        Canvas { width, height, px: vec![fill; width as usize * height as usize] }
    }

    /// Paint an axis-aligned ellipse; returns the painted pixel bounds (if any).
    fn ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, color: [f64; 3]) -> Option<PixelBox> {
        self.ellipse_where(cx, cy, rx, ry, color, |_| true)
    }

    fn ellipse_where(
        &mut self,
        cx: f64,
        cy: f64,
        rx: f64,
        ry: f64,
        color: [f64; 3],
        keep: impl Fn(f64) -> bool,
    ) -> Option<PixelBox> {
        let y0 = ((cy - ry).floor().max(0.0)) as u32;
        let y1 = ((cy + ry).ceil().min(self.height as f64)) as u32;
        let x0 = ((cx - rx).floor().max(0.0)) as u32;
        let x1 = ((cx + rx).ceil().min(self.width as f64)) as u32;
        let mut bounds: Option<PixelBox> = None;
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = (x as f64 + 0.5 - cx) / rx;
                let dy = (y as f64 + 0.5 - cy) / ry;
                let d2 = dx * dx + dy * dy;
                if d2 <= 1.0 && keep(d2.sqrt()) {
                    self.px[(y * self.width + x) as usize] = color;
                    let b = bounds.get_or_insert(PixelBox::new(y as i32, x as i32, y as i32 + 1, x as i32 + 1));
                    b.top = b.top.min(y as i32);
                    b.left = b.left.min(x as i32);
                    b.bottom = b.bottom.max(y as i32 + 1);
                    b.right = b.right.max(x as i32 + 1);
                }
            }
        }
        bounds
    }

    fn into_image(self, rng: &mut Prng, noise: u8) -> RasterImage {
        let amp = noise as f64;
        let pixels = self
            .px
            .into_iter()
            .flatten()
            .map(|c| {
                let n = if noise == 0 { 0.0 } else { rng.range_f64(-amp, amp + 1.0).floor() };
                (c + n).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        RasterImage::from_raw(self.width, self.height, pixels).expect("canvas dimensions are consistent")
    }
}

struct Placed {
    cx: f64,
    cy: f64,
    r: f64,
}

/// Render a slide with exact ground truth. Deterministic in `spec`.
pub fn generate_synthetic_slide(spec: &SyntheticSlideSpec) -> Result<SyntheticSlide, DatasetError> {
    if spec.width == 0 || spec.height == 0 {
        return Err(DatasetError::InvalidSpec("image size must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.parasitized_fraction) {
        return Err(DatasetError::InvalidSpec("parasitized_fraction must be in [0, 1]".into()));
    }
    if spec.spacing.is_nan() || spec.spacing < 0.9 {
        return Err(DatasetError::InvalidSpec("spacing must be at least 0.9".into()));
    }
    let mut rng = Prng::new(spec.seed);
    let scale = spec.width.min(spec.height) as f64 / 320.0;
    let pal = Palette::jittered(&mut rng, spec.hue_jitter, spec.brightness_jitter);
    let mut canvas = Canvas::new(spec.width, spec.height, pal.background);

    // Placement order: large cells first so they find room.
    let mut kinds = Vec::new();
    kinds.extend(std::iter::repeat_n(CellClass::Wbc, spec.n_wbc));
    kinds.extend(std::iter::repeat_n(CellClass::Rbc, spec.n_rbc));
    kinds.extend(std::iter::repeat_n(CellClass::Platelet, spec.n_platelet));

    let n_infected = (spec.parasitized_fraction * spec.n_rbc as f64).round() as usize;
    let mut infected_flags: Vec<bool> = (0..spec.n_rbc).map(|i| i < n_infected).collect();
    rng.shuffle(&mut infected_flags);
    let mut rbc_seen = 0usize;

    let mut placed: Vec<Placed> = Vec::new();
    let mut truth = Vec::new();
    let mut parasitized = Vec::new();
    for (index, &class) in kinds.iter().enumerate() {
        let (rmin, rmax) = match class {
            CellClass::Rbc => RBC_RADIUS,
            CellClass::Wbc => WBC_RADIUS,
            CellClass::Platelet => PLATELET_RADIUS,
        };
        let r = rng.range_f64(rmin, rmax) * scale;
        // Slight ellipticity, never more than 8%.
        let aspect = rng.range_f64(0.92, 1.0);
        let (rx, ry) = if rng.next_f64() < 0.5 { (r, r * aspect) } else { (r * aspect, r) };
        let margin = r + 1.0;
        if 2.0 * margin >= spec.width as f64 || 2.0 * margin >= spec.height as f64 {
            return Err(DatasetError::PlacementOverflow { index, attempts: 0 });
        }
        let mut spot = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cx = rng.range_f64(margin, spec.width as f64 - margin);
            let cy = rng.range_f64(margin, spec.height as f64 - margin);
            let clear = placed.iter().all(|p| {
                let d = ((p.cx - cx).powi(2) + (p.cy - cy).powi(2)).sqrt();
                d >= (p.r + r) * spec.spacing
            });
            if clear {
                spot = Some((cx, cy));
                break;
            }
        }
        let (cx, cy) = spot.ok_or(DatasetError::PlacementOverflow {
            index,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        placed.push(Placed { cx, cy, r });

        let mut infected = false;
        let bounds = match class {
            CellClass::Rbc => {
                infected = infected_flags[rbc_seen];
                rbc_seen += 1;
                let b = canvas.ellipse(cx, cy, rx, ry, pal.rbc_rim);
                // Central pallor.
                canvas.ellipse(cx, cy, rx * 0.5, ry * 0.5, pal.rbc_pallor);
                if infected {
                    paint_ring_form(&mut canvas, &mut rng, cx, cy, rx.min(ry), scale, pal.chromatin);
                }
                b
            }
            CellClass::Wbc => {
                let b = canvas.ellipse(cx, cy, rx, ry, pal.wbc_cytoplasm);
                // Lobed nucleus: two overlapping blobs.
                let off = r * 0.22;
                let ang = rng.range_f64(0.0, std::f64::consts::TAU);
                let (s, c) = ang.sin_cos();
                canvas.ellipse(cx + off * c, cy + off * s, rx * 0.45, ry * 0.45, pal.wbc_nucleus);
                canvas.ellipse(cx - off * c, cy - off * s, rx * 0.4, ry * 0.4, pal.wbc_nucleus);
                b
            }
            CellClass::Platelet => canvas.ellipse(cx, cy, rx, ry, pal.platelet),
        };
        let b = bounds.ok_or_else(|| DatasetError::InvalidSpec(format!("cell {index} rendered no pixels")))?;
        truth.push((class, b));
        parasitized.push(infected);
    }

    for _ in 0..spec.contamination {
        let r = rng.range_f64(0.8, 1.6) * scale;
        let cx = rng.range_f64(0.0, spec.width as f64);
        let cy = rng.range_f64(0.0, spec.height as f64);
        canvas.ellipse(cx, cy, r, r, pal.dirt);
    }

    let image = canvas.into_image(&mut rng, spec.noise);
    Ok(SyntheticSlide {
        image,
        truth: AnnotatedImage {
            image_path: PathBuf::new(),
            width: spec.width,
            height: spec.height,
            objects: truth,
        },
        parasitized,
    })
}

/// Ring-form trophozoite: a chromatin ring with a dot on its rim, inside the cell.
fn paint_ring_form(canvas: &mut Canvas, rng: &mut Prng, cx: f64, cy: f64, r: f64, scale: f64, color: [f64; 3]) {
    let ring_r = r * rng.range_f64(0.38, 0.48);
    let thickness = (1.4 * scale).max(1.0);
    let max_off = (r - ring_r - thickness - 1.0).max(0.0);
    let ang = rng.range_f64(0.0, std::f64::consts::TAU);
    let off = rng.range_f64(0.0, max_off);
    let (rcx, rcy) = (cx + off * ang.cos(), cy + off * ang.sin());
    let inner = (ring_r - thickness) / ring_r;
    canvas.ellipse_where(rcx, rcy, ring_r, ring_r, color, |d| d >= inner);
    let dot_ang = rng.range_f64(0.0, std::f64::consts::TAU);
    let dot_r = (1.8 * scale).max(1.0);
    canvas.ellipse(
        rcx + ring_r * dot_ang.cos(),
        rcy + ring_r * dot_ang.sin(),
        dot_r,
        dot_r,
        color,
    );
}
