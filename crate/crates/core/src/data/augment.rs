use serde::{Deserialize, Serialize};

use crate::codec::{clamp_to_frame, Point};
use crate::tensor::SeededRng;

use super::{DataError, FlipMap, Result, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub translate_px: f64,
    pub translate_p: f64,
    /// Largest side of the black occluding rectangle.
    pub occlude_max_px: f64,
    pub occlude_p: f64,
    pub flip_p: f64,
    /// Landmark pairing applied when flipping; required when `flip_p > 0`.
    pub flip_map: Option<FlipMap>,
    pub rotate_deg: f64,
    pub rotate_p: f64,
    pub blur_max: f64,
    pub blur_p: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            translate_px: 8.0,
            translate_p: 0.5,
            occlude_max_px: 25.0,
            occlude_p: 0.5,
            flip_p: 0.5,
            flip_map: None,
            rotate_deg: 30.0,
            rotate_p: 0.5,
            blur_max: 1.25,
            blur_p: 0.3,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self { translate_p: 0.0, occlude_p: 0.0, flip_p: 0.0, rotate_p: 0.0, blur_p: 0.0, ..Self::default() }
    }

    pub fn with_flip_map(self, flip: FlipMap) -> Self {
        Self { flip_map: Some(flip), ..self }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("translate_p", self.translate_p),
            ("occlude_p", self.occlude_p),
            ("flip_p", self.flip_p),
            ("rotate_p", self.rotate_p),
            ("blur_p", self.blur_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DataError::Config(format!("{name} = {p} is not a probability")));
            }
        }
        for (name, v) in [
            ("translate_px", self.translate_px),
            ("occlude_max_px", self.occlude_max_px),
            ("rotate_deg", self.rotate_deg),
            ("blur_max", self.blur_max),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DataError::Config(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if self.flip_p > 0.0 && self.flip_map.is_none() {
            return Err(DataError::Config("flipping needs a flip map".into()));
        }
        Ok(())
    }
}

/// `p -> [a b; c d] p + [e f]`
#[derive(Clone, Copy, Debug, PartialEq)]
struct Affine([f64; 6]);

impl Affine {
    const ID: Affine = Affine([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);

    fn apply(&self, p: Point) -> Point {
        let [a, b, c, d, e, f] = self.0;
        Point::new(a * p.x + b * p.y + e, c * p.x + d * p.y + f)
    }

    /// `other` after `self`.
    fn then(&self, other: &Affine) -> Affine {
        let [a, b, c, d, e, f] = self.0;
        let [a2, b2, c2, d2, e2, f2] = other.0;
        Affine([
            a2 * a + b2 * c,
            a2 * b + b2 * d,
            c2 * a + d2 * c,
            c2 * b + d2 * d,
            a2 * e + b2 * f + e2,
            c2 * e + d2 * f + f2,
        ])
    }

    fn inverse(&self) -> Affine {
        let [a, b, c, d, e, f] = self.0;
        let det = a * d - b * c;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Affine([ia, ib, ic, id, -(ia * e + ib * f), -(ic * e + id * f)])
    }

    fn rotation_about(c: Point, deg: f64) -> Affine {
        let (s, co) = deg.to_radians().sin_cos();
        Affine([co, -s, s, co, c.x - co * c.x + s * c.y, c.y - s * c.x - co * c.y])
    }
}

/// Applies each enabled transform with its probability: translation, flip
/// and rotation as one resampling, then occlusion, then blur. Landmarks
/// follow the geometry and are clamped into the frame.
pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut SeededRng) -> Result<Sample> {
    cfg.validate()?;
    let (w, h) = (sample.image.width(), sample.image.height());
    let center = Point::new(w as f64 / 2.0, h as f64 / 2.0);
    let mut geo = Affine::ID;
    if rng.chance(cfg.translate_p) {
        let dx = rng.range(-cfg.translate_px, cfg.translate_px);
        let dy = rng.range(-cfg.translate_px, cfg.translate_px);
        geo = geo.then(&Affine([1.0, 0.0, 0.0, 1.0, dx, dy]));
    }
    let flipped = rng.chance(cfg.flip_p);
    if flipped {
        geo = geo.then(&Affine([-1.0, 0.0, 0.0, 1.0, w as f64, 0.0]));
    }
    if rng.chance(cfg.rotate_p) {
        let deg = rng.range(-cfg.rotate_deg, cfg.rotate_deg);
        geo = geo.then(&Affine::rotation_about(center, deg));
    }

    let mut image = if geo == Affine::ID {
        sample.image.clone()
    } else {
        let inv = geo.inverse();
        sample.image.warp(w, h, |x, y| {
            let p = inv.apply(Point::new(x, y));
            (p.x, p.y)
        })
    };
    let mut landmarks = sample.landmarks.map(|p| geo.apply(p));
    if flipped {
        let map = cfg.flip_map.as_ref().expect("validated");
        if map.len() != landmarks.len() {
            return Err(DataError::Config(format!(
                "flip map covers {} landmarks, sample has {}",
                map.len(),
                landmarks.len()
            )));
        }
        landmarks = landmarks.permute(map.as_slice());
    }
    let landmarks = clamp_to_frame(&landmarks, w, h);

    if rng.chance(cfg.occlude_p) && cfg.occlude_max_px >= 1.0 {
        let ow = rng.range(1.0, cfg.occlude_max_px).round() as usize;
        let oh = rng.range(1.0, cfg.occlude_max_px).round() as usize;
        let x0 = rng.below(w);
        let y0 = rng.below(h);
        image.fill_rect(x0, y0, x0 + ow, y0 + oh, 0.0);
    }
    if rng.chance(cfg.blur_p) {
        let sigma = rng.range(0.0, cfg.blur_max);
        image = image.blur(sigma);
    }
    Ok(Sample { image, landmarks, bbox: sample.bbox, domain: sample.domain.clone(), labeled: sample.labeled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{BBox, LandmarkSet};
    use crate::data::GrayImage;

    fn sample() -> Sample {
        let mut img = GrayImage::zeros(64, 64);
        img.fill_rect(5, 10, 20, 30, 0.8);
        Sample {
            image: img,
            landmarks: LandmarkSet::from_xy(&[(10.0, 20.0), (50.0, 20.0), (32.0, 50.0)]).unwrap(),
            bbox: BBox::new(0.0, 0.0, 64.0, 64.0),
            domain: "t".into(),
            labeled: true,
        }
    }

    fn only(cfg: AugmentConfig) -> AugmentConfig {
        AugmentConfig { flip_map: Some(FlipMap::new(vec![1, 0, 2]).unwrap()), ..cfg }
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let s = sample();
        let out = augment(&s, &AugmentConfig::none(), &mut SeededRng::new(3)).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn double_flip_restores() {
        let s = sample();
        let cfg = only(AugmentConfig { flip_p: 1.0, ..AugmentConfig::none() });
        let once = augment(&s, &cfg, &mut SeededRng::new(1)).unwrap();
        assert_eq!(once.landmarks.get(0), Point::new(14.0, 20.0));
        assert_eq!(once.image, s.image.mirror());
        let twice = augment(&once, &cfg, &mut SeededRng::new(2)).unwrap();
        assert_eq!(twice.landmarks, s.landmarks);
        assert_eq!(twice.image, s.image);
    }

    fn rotate(p: Point, c: Point, deg: f64) -> Point {
        let (sn, cs) = deg.to_radians().sin_cos();
        let (dx, dy) = (p.x - c.x, p.y - c.y);
        Point::new(c.x + cs * dx - sn * dy, c.y + sn * dx + cs * dy)
    }

    #[test]
    fn rotation_by_thirty_degrees_matches_closed_form() {
        let c = Point::new(32.0, 32.0);
        let r = Affine::rotation_about(c, 30.0);
        for p in sample().landmarks.points() {
            assert!(r.apply(*p).dist(&rotate(*p, c, 30.0)) < 1e-9);
        }
        let q = r.apply(Point::new(42.0, 32.0));
        assert!((q.x - (32.0 + 10.0 * 3f64.sqrt() / 2.0)).abs() < 1e-12 && (q.y - 37.0).abs() < 1e-12);
    }

    #[test]
    fn augmented_rotation_moves_landmarks_rigidly() {
        let s = sample();
        let cfg = AugmentConfig { rotate_p: 1.0, rotate_deg: 30.0, ..AugmentConfig::none() };
        let mut r = SeededRng::new(5);
        r.chance(0.0);
        r.chance(0.0);
        r.chance(1.0);
        let deg = r.range(-30.0, 30.0);
        let out = augment(&s, &cfg, &mut SeededRng::new(5)).unwrap();
        for (p, q) in s.landmarks.points().iter().zip(out.landmarks.points()) {
            assert!(rotate(*p, Point::new(32.0, 32.0), deg).dist(q) < 1e-6);
        }
    }

    #[test]
    fn affine_inverse() {
        let a = Affine::rotation_about(Point::new(3.0, 4.0), 17.0).then(&Affine([1.0, 0.0, 0.0, 1.0, 2.0, -1.0]));
        let p = Point::new(-7.5, 11.25);
        assert!(a.inverse().apply(a.apply(p)).dist(&p) < 1e-12);
    }

    #[test]
    fn landmarks_stay_in_frame() {
        let cfg = only(AugmentConfig { translate_px: 40.0, ..AugmentConfig::default() });
        let mut rng = SeededRng::new(11);
        for _ in 0..50 {
            let out = augment(&sample(), &cfg, &mut rng).unwrap();
            for p in out.landmarks.points() {
                assert!(p.x >= 0.0 && p.x < 64.0 && p.y >= 0.0 && p.y < 64.0);
            }
        }
        assert!(augment(&sample(), &AugmentConfig { flip_p: 0.5, ..AugmentConfig::none() }, &mut rng).is_err());
    }
}
