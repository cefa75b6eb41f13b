//! Parametric synthetic faces. A fixed 16-point template is posed by a
//! random similarity transform, jittered, and rasterized as simple shapes.
//! Two styles give two domains with a deliberate appearance gap.

use serde::{Deserialize, Serialize};

use crate::codec::{BBox, LandmarkSet, Point};
use crate::tensor::SeededRng;

use super::{DataError, FlipMap, GrayImage, Result, Sample};

/// Landmark template in unit face coordinates (y grows downward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub version: u32,
    pub names: Vec<String>,
    pub points: Vec<[f64; 2]>,
    /// Render-only points closing the face outline above the brows.
    pub forehead: Vec<[f64; 2]>,
    pub flip: FlipMap,
    /// Outer eye corners, used for inter-ocular normalization.
    pub eyes: [usize; 2],
}

impl Template {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../fixtures/synth_template.json")).expect("valid template fixture")
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if n < 2 || self.names.len() != n || self.flip.len() != n {
            return Err(DataError::Config("template names, points and flip map disagree in length".into()));
        }
        for i in 0..n {
            for j in 0..i {
                if self.points[i] == self.points[j] {
                    return Err(DataError::Config(format!("template points {j} and {i} coincide")));
                }
            }
        }
        if self.eyes[0] == self.eyes[1] || self.eyes.iter().any(|&e| e >= n) {
            return Err(DataError::Config(format!("invalid eye indices {:?}", self.eyes)));
        }
        Ok(())
    }

    pub fn landmark_set(&self) -> LandmarkSet {
        LandmarkSet::from_xy(&self.points.iter().map(|p| (p[0], p[1])).collect::<Vec<_>>()).expect("validated template")
    }

    fn index(&self, name: &str) -> usize {
        self.names.iter().position(|n| n == name).unwrap_or_else(|| panic!("template lacks {name}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DomainStyle {
    /// Flat dark background, mild pose.
    A,
    /// Textured bright background, strong pose, random occluders.
    B,
}

impl DomainStyle {
    pub fn tag(&self) -> &'static str {
        match self {
            DomainStyle::A => "A",
            DomainStyle::B => "B",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub style: DomainStyle,
    /// Side of the square source frame.
    pub frame: usize,
    /// Face box side at scale 1.
    pub face_size: f64,
    pub scale_range: (f64, f64),
    pub rotate_deg: f64,
    pub translate_px: f64,
    /// Per-landmark jitter standard deviation, pixels.
    pub jitter_sigma: f64,
    pub noise_sigma: f64,
    pub max_occluders: usize,
    pub labeled: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::domain_a()
    }
}

impl SynthConfig {
    pub fn domain_a() -> Self {
        Self {
            style: DomainStyle::A,
            frame: 96,
            face_size: 48.0,
            scale_range: (0.8, 1.2),
            rotate_deg: 10.0,
            translate_px: 8.0,
            jitter_sigma: 1.0,
            noise_sigma: 0.02,
            max_occluders: 0,
            labeled: true,
        }
    }

    pub fn domain_b() -> Self {
        Self {
            style: DomainStyle::B,
            rotate_deg: 30.0,
            translate_px: 12.0,
            jitter_sigma: 1.5,
            noise_sigma: 0.05,
            max_occluders: 2,
            ..Self::domain_a()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(DataError::Config(format!("bad scale range {:?}", self.scale_range)));
        }
        if self.frame < 8 || !(self.face_size > 0.0) || self.face_size * hi > self.frame as f64 {
            return Err(DataError::Config("face does not fit the frame".into()));
        }
        for (name, v) in [
            ("rotate_deg", self.rotate_deg),
            ("translate_px", self.translate_px),
            ("jitter_sigma", self.jitter_sigma),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DataError::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        Ok(())
    }
}

struct Pose {
    scale: f64,
    cos: f64,
    sin: f64,
    center: Point,
    face: f64,
}

impl Pose {
    fn apply(&self, u: [f64; 2]) -> Point {
        let (x, y) = ((u[0] - 0.5) * self.face * self.scale, (u[1] - 0.5) * self.face * self.scale);
        Point::new(self.center.x + self.cos * x - self.sin * y, self.center.y + self.sin * x + self.cos * y)
    }
}

fn inside_polygon(poly: &[Point], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Fraction of a pixel's 3x3 sub-samples for which `f` holds.
fn coverage(x: usize, y: usize, f: &impl Fn(f64, f64) -> bool) -> f32 {
    let mut hits = 0;
    for sy in 0..3 {
        for sx in 0..3 {
            if f(x as f64 + (sx as f64 + 0.5) / 3.0, y as f64 + (sy as f64 + 0.5) / 3.0) {
                hits += 1;
            }
        }
    }
    hits as f32 / 9.0
}

fn paint(img: &mut GrayImage, bounds: (Point, Point), value: f32, f: impl Fn(f64, f64) -> bool) {
    let x0 = bounds.0.x.floor().max(0.0) as usize;
    let y0 = bounds.0.y.floor().max(0.0) as usize;
    let x1 = (bounds.1.x.ceil().max(0.0) as usize).min(img.width());
    let y1 = (bounds.1.y.ceil().max(0.0) as usize).min(img.height());
    for y in y0..y1 {
        for x in x0..x1 {
            let a = coverage(x, y, &f);
            if a > 0.0 {
                let v = img.get(x, y);
                img.set(x, y, v + (value - v) * a);
            }
        }
    }
}

fn bounds_of(points: &[Point], pad: f64) -> (Point, Point) {
    let ext = LandmarkSet::new(points.to_vec()).map(|l| l.extent()).unwrap_or(BBox::new(0.0, 0.0, 0.0, 0.0));
    (Point::new(ext.x1 - pad, ext.y1 - pad), Point::new(ext.x2 + pad, ext.y2 + pad))
}

/// Ellipse through two end points `a`, `b` with minor semi-axis `minor`.
fn paint_ellipse(img: &mut GrayImage, a: Point, b: Point, minor: f64, value: f32) {
    let c = Point::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
    let major = (a.dist(&b) / 2.0).max(0.5);
    let minor = minor.max(0.5);
    let (dx, dy) = ((b.x - a.x) / (2.0 * major), (b.y - a.y) / (2.0 * major));
    paint(img, bounds_of(&[a, b], minor + 1.0), value, |x, y| {
        let (px, py) = (x - c.x, y - c.y);
        let u = (px * dx + py * dy) / major;
        let v = (-px * dy + py * dx) / minor;
        u * u + v * v <= 1.0
    });
}

fn paint_segment(img: &mut GrayImage, a: Point, b: Point, half_width: f64, value: f32) {
    let len2 = ((b.x - a.x).powi(2) + (b.y - a.y).powi(2)).max(1e-12);
    paint(img, bounds_of(&[a, b], half_width + 1.0), value, |x, y| {
        let t = (((x - a.x) * (b.x - a.x) + (y - a.y) * (b.y - a.y)) / len2).clamp(0.0, 1.0);
        let (qx, qy) = (a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
        (x - qx).powi(2) + (y - qy).powi(2) <= half_width * half_width
    });
}

fn background(style: DomainStyle, frame: usize, rng: &mut SeededRng) -> GrayImage {
    match style {
        DomainStyle::A => GrayImage::filled(frame, frame, 0.12 + 0.06 * rng.uniform() as f32),
        DomainStyle::B => {
            let (fx, fy) = (rng.range(0.1, 0.6), rng.range(0.1, 0.6));
            let phase = rng.range(0.0, std::f64::consts::TAU);
            let base = rng.range(0.45, 0.6);
            let mut img = GrayImage::zeros(frame, frame);
            for y in 0..frame {
                for x in 0..frame {
                    let v = base + 0.15 * (fx * x as f64 + fy * y as f64 + phase).sin();
                    img.set(x, y, v as f32);
                }
            }
            img
        }
    }
}

fn render(points: &[Point], outline: &[Point], cfg: &SynthConfig, t: &Template, rng: &mut SeededRng) -> GrayImage {
    let mut img = background(cfg.style, cfg.frame, rng);
    let (skin, dark) = match cfg.style {
        DomainStyle::A => (0.62 + 0.08 * rng.uniform() as f32, 0.08),
        DomainStyle::B => (0.78 + 0.1 * rng.uniform() as f32, 0.2),
    };
    let b = bounds_of(outline, 1.0);
    paint(&mut img, b, skin, |x, y| inside_polygon(outline, x, y));
    let p = |name: &str| points[t.index(name)];
    let scale = p("eye_left_outer").dist(&p("eye_right_outer")).max(1.0);
    // jaw line
    for w in outline.windows(2).take(4) {
        paint_segment(&mut img, w[0], w[1], 0.04 * scale, skin * 0.7);
    }
    for side in ["left", "right"] {
        let (o, i) = (p(&format!("eye_{side}_outer")), p(&format!("eye_{side}_inner")));
        paint_ellipse(&mut img, o, i, 0.07 * scale, dark);
        let brow = p(&format!("brow_{side}"));
        let dir = Point::new((i.x - o.x) * 0.6, (i.y - o.y) * 0.6);
        paint_segment(
            &mut img,
            Point::new(brow.x - dir.x, brow.y - dir.y),
            Point::new(brow.x + dir.x, brow.y + dir.y),
            0.035 * scale,
            dark + 0.1,
        );
    }
    paint_ellipse(
        &mut img,
        Point::new(p("nose_tip").x - 0.06 * scale, p("nose_tip").y),
        Point::new(p("nose_tip").x + 0.06 * scale, p("nose_tip").y),
        0.04 * scale,
        skin * 0.55,
    );
    let (ml, mr) = (p("mouth_left"), p("mouth_right"));
    let open = p("mouth_top").dist(&p("mouth_bottom")) / 2.0;
    paint_ellipse(&mut img, ml, mr, open, dark + 0.15);

    if cfg.max_occluders > 0 {
        let k = rng.below(cfg.max_occluders + 1);
        for _ in 0..k {
            let (w, h) = (rng.range(6.0, 20.0) as usize, rng.range(6.0, 20.0) as usize);
            let (x0, y0) = (rng.below(cfg.frame), rng.below(cfg.frame));
            img.fill_rect(x0, y0, x0 + w, y0 + h, rng.range(0.2, 0.9) as f32);
        }
    }
    if cfg.noise_sigma > 0.0 {
        for v in img.data_mut() {
            *v += (cfg.noise_sigma * rng.normal()) as f32;
        }
    }
    img.clamp01();
    img
}

fn generate_one(cfg: &SynthConfig, t: &Template, rng: &mut SeededRng) -> Result<Sample> {
    let (lo, hi) = cfg.scale_range;
    let scale = rng.range(lo, hi);
    let angle = rng.range(-cfg.rotate_deg, cfg.rotate_deg).to_radians();
    let half = cfg.frame as f64 / 2.0;
    let center = Point::new(
        half + rng.range(-cfg.translate_px, cfg.translate_px),
        half + rng.range(-cfg.translate_px, cfg.translate_px),
    );
    let pose = Pose { scale, cos: angle.cos(), sin: angle.sin(), center, face: cfg.face_size };
    let limit = cfg.frame as f64 - 1e-3;
    let points: Vec<Point> = t
        .points
        .iter()
        .map(|&u| {
            let p = pose.apply(u);
            Point::new(
                (p.x + cfg.jitter_sigma * rng.normal()).clamp(0.0, limit),
                (p.y + cfg.jitter_sigma * rng.normal()).clamp(0.0, limit),
            )
        })
        .collect();
    let pick = |name: &str| points[t.index(name)];
    let mut outline = vec![
        pick("jaw_right_upper"),
        pick("jaw_right_lower"),
        pick("chin"),
        pick("jaw_left_lower"),
        pick("jaw_left_upper"),
    ];
    outline.extend(t.forehead.iter().map(|&u| pose.apply(u)));
    let image = render(&points, &outline, cfg, t, rng);
    let landmarks = LandmarkSet::new(points)?;
    let e = landmarks.extent();
    let (mx, my) = (e.width() * 0.1, e.height() * 0.1);
    let bbox = BBox::new(e.x1 - mx, e.y1 - my, e.x2 + mx, e.y2 + my);
    Ok(Sample { image, landmarks, bbox, domain: cfg.style.tag().to_string(), labeled: cfg.labeled })
}

/// `count` samples; sample `k` uses its own stream derived from `rng`, so a
/// prefix of a larger set equals a smaller set with the same seed.
pub fn synth_generate(cfg: &SynthConfig, template: &Template, count: usize, rng: &mut SeededRng) -> Result<Vec<Sample>> {
    cfg.validate()?;
    template.validate()?;
    let base = rng.next_u64();
    let root = SeededRng::new(base);
    (0..count).map(|k| generate_one(cfg, template, &mut root.derive(k as u64))).collect()
}

/// Faceless images (noise and stripe textures) for probing the prior a
/// detector has learned.
pub fn nonface_images(count: usize, size: usize, rng: &mut SeededRng) -> Vec<GrayImage> {
    (0..count)
        .map(|k| {
            let mut img = GrayImage::zeros(size, size);
            if k % 2 == 0 {
                for v in img.data_mut() {
                    *v = rng.uniform() as f32;
                }
            } else {
                let (fx, fy, ph) = (rng.range(0.05, 0.8), rng.range(0.05, 0.8), rng.range(0.0, 6.3));
                for y in 0..size {
                    for x in 0..size {
                        img.set(x, y, (0.5 + 0.4 * (fx * x as f64 + fy * y as f64 + ph).sin()) as f32);
                    }
                }
            }
            img
        })
        .collect()
}
