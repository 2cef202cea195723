//! Procedural face renderer used to build desk-scale datasets.
//!
//! Faces are drawn in a face-local frame (pixels, y down, origin at the
//! face-ellipse center) and placed into the canvas by a [`Pose`]. Feature
//! colors are chosen so that the built-in chroma detector can separate skin,
//! lips and dark features; shapes are supersampled on their edges so feature
//! centroids are recoverable to sub-pixel accuracy.

use image::RgbImage;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Gender;
use crate::imaging::{quantize_rgb, Point};

/// Nostrils sit this many nostril-spacings below the nose tip.
pub const NOSTRIL_DROP: f64 = 0.35;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceGeometry {
    pub face_center: Point,
    pub face_half_w: f64,
    pub face_half_h: f64,
    /// Image-left eye first.
    pub eyes: [Point; 2],
    pub eye_rx: f64,
    pub eye_ry: f64,
    pub brow_lift: f64,
    pub brow_half_len: f64,
    pub brow_half_thick: f64,
    pub nose_tip: Point,
    pub nostril_spacing: f64,
    pub nostril_r: f64,
    /// Image-left corner first.
    pub mouth_corners: [Point; 2],
    pub mouth_half_h: f64,
}

impl FaceGeometry {
    pub fn up(&self) -> Point {
        let eye_mid = self.eyes[0].lerp(self.eyes[1], 0.5);
        let mouth_mid = self.mouth_corners[0].lerp(self.mouth_corners[1], 0.5);
        eye_mid.sub(mouth_mid).normalized()
    }

    pub fn right(&self) -> Point {
        self.up().perp()
    }

    pub fn brows(&self) -> [Point; 2] {
        let lift = self.up().scale(self.brow_lift);
        [self.eyes[0].add(lift), self.eyes[1].add(lift)]
    }

    pub fn nostrils(&self) -> [Point; 2] {
        let r = self.right().scale(self.nostril_spacing / 2.0);
        let drop = self.up().scale(-NOSTRIL_DROP * self.nostril_spacing);
        let base = self.nose_tip.add(drop);
        [base.sub(r), base.add(r)]
    }

    pub fn mouth_center(&self) -> Point {
        self.mouth_corners[0].lerp(self.mouth_corners[1], 0.5)
    }

    /// Eye centers, nose tip, mouth corners.
    pub fn landmarks5(&self) -> [Point; 5] {
        [
            self.eyes[0],
            self.eyes[1],
            self.nose_tip,
            self.mouth_corners[0],
            self.mouth_corners[1],
        ]
    }

    /// Base geometry of a neutral face, sized for a 1.0 pose scale.
    pub fn neutral(gender: Gender) -> Self {
        let (hw, hh) = match gender {
            Gender::Male => (58.0, 72.0),
            Gender::Female => (53.0, 69.0),
            Gender::Unknown => (55.5, 70.5),
        };
        FaceGeometry {
            face_center: Point::new(0.0, 0.0),
            face_half_w: hw,
            face_half_h: hh,
            eyes: [Point::new(-25.0, -20.0), Point::new(25.0, -20.0)],
            eye_rx: 9.0,
            eye_ry: 4.5,
            brow_lift: 12.5,
            brow_half_len: 12.0,
            brow_half_thick: if gender == Gender::Female { 1.6 } else { 2.2 },
            nose_tip: Point::new(0.0, 9.0),
            nostril_spacing: 11.0,
            nostril_r: 2.3,
            mouth_corners: [Point::new(-21.0, 38.0), Point::new(21.0, 38.0)],
            mouth_half_h: 5.5,
        }
    }

    /// Random perturbation; `strength` 1.0 is the between-identity spread.
    pub fn perturbed<R: Rng>(&self, rng: &mut R, strength: f64) -> Self {
        let mut n = |sd: f64| -> f64 {
            let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut *rng);
            (z.clamp(-2.5, 2.5)) * sd * strength
        };
        let mut g = self.clone();
        g.face_half_w += n(2.5);
        g.face_half_h += n(2.0);
        let eye_dx = 25.0 + n(1.4);
        let eye_y = (self.eyes[0].y + self.eyes[1].y) / 2.0 + n(1.3);
        let asym = n(0.3);
        let centre_x = (self.eyes[0].x + self.eyes[1].x) / 2.0;
        let half = (self.eyes[1].x - self.eyes[0].x) / 2.0 * (eye_dx / 25.0);
        g.eyes = [
            Point::new(centre_x - half, eye_y + asym),
            Point::new(centre_x + half, eye_y - asym),
        ];
        g.eye_rx = (self.eye_rx + n(0.7)).max(6.5);
        g.eye_ry = (self.eye_ry + n(0.4)).max(3.2);
        g.brow_half_len = (self.brow_half_len + n(1.0)).max(8.0);
        g.brow_half_thick = (self.brow_half_thick + n(0.25)).max(1.2);
        g.brow_lift = (self.brow_lift + n(0.9)).max(g.eye_ry + g.brow_half_thick + 5.0);
        g.nose_tip = Point::new(self.nose_tip.x + n(0.3), self.nose_tip.y + n(1.6));
        g.nostril_spacing = (self.nostril_spacing + n(0.8)).max(8.0);
        g.nostril_r = (self.nostril_r + n(0.2)).clamp(1.8, 3.0);
        let mouth_c = Point::new(self.mouth_center().x + n(0.3), self.mouth_center().y + n(1.6));
        let mouth_half_w = ((self.mouth_corners[1].x - self.mouth_corners[0].x) / 2.0 + n(1.3)).max(15.0);
        g.mouth_corners = [
            Point::new(mouth_c.x - mouth_half_w, mouth_c.y),
            Point::new(mouth_c.x + mouth_half_w, mouth_c.y),
        ];
        g.mouth_half_h = (self.mouth_half_h + n(0.5)).clamp(3.8, 7.5);
        g.face_half_h = g.face_half_h.max(mouth_c.y + g.mouth_half_h + 24.0);
        g
    }

    /// Applies a capture-time expression.
    pub fn with_expression(&self, e: &Expression) -> Self {
        let mut g = self.clone();
        let c = self.mouth_center();
        g.mouth_corners = [
            c.add(self.mouth_corners[0].sub(c).scale(e.mouth_stretch)),
            c.add(self.mouth_corners[1].sub(c).scale(e.mouth_stretch)),
        ];
        g.mouth_half_h *= e.mouth_open;
        g.brow_lift += e.brow_raise;
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expression {
    pub mouth_stretch: f64,
    pub mouth_open: f64,
    pub brow_raise: f64,
}

impl Default for Expression {
    fn default() -> Self {
        Expression {
            mouth_stretch: 1.0,
            mouth_open: 1.0,
            brow_raise: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mole {
    pub at: Point,
    pub radius: f64,
    pub darkness: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub skin: [f32; 3],
    pub lips: [f32; 3],
    pub eyes: [f32; 3],
    pub brows: [f32; 3],
    pub nostrils: [f32; 3],
    pub hair: [f32; 3],
    pub texture_seed: u64,
    /// Peak amplitude of the fine skin texture, 8-bit units.
    pub texture_amp: f32,
    pub shading: [(f64, f64, f64); 2],
    pub moles: Vec<Mole>,
}

impl Appearance {
    /// Flat-colored appearance without texture; useful for exact fixtures.
    pub fn plain() -> Self {
        Appearance {
            skin: [205.0, 150.0, 118.0],
            lips: [165.0, 45.0, 60.0],
            eyes: [45.0, 34.0, 32.0],
            brows: [72.0, 50.0, 38.0],
            nostrils: [65.0, 39.0, 36.0],
            hair: [50.0, 36.0, 26.0],
            texture_seed: 0,
            texture_amp: 0.0,
            shading: [(0.0, 0.0, 0.0), (0.0, 0.0, 0.0)],
            moles: Vec::new(),
        }
    }

    pub fn random<R: Rng>(rng: &mut R, geometry: &FaceGeometry) -> Self {
        let r = rng.gen_range(185.0..230.0f32);
        let g = r - rng.gen_range(45.0..70.0f32);
        let b = g - rng.gen_range(20.0..40.0f32);
        let hair_r = rng.gen_range(35.0..70.0f32);
        let hair = [hair_r, hair_r * rng.gen_range(0.62..0.72), hair_r * rng.gen_range(0.42..0.5)];
        let n_moles = rng.gen_range(4..11);
        let moles = (0..n_moles)
            .map(|_| {
                let ang = rng.gen_range(0.0..std::f64::consts::TAU);
                let rad = rng.gen_range(0.15..0.85f64).sqrt();
                Mole {
                    at: Point::new(
                        geometry.face_center.x + rad * ang.cos() * geometry.face_half_w * 0.85,
                        geometry.face_center.y + rad * ang.sin() * geometry.face_half_h * 0.85,
                    ),
                    radius: rng.gen_range(1.0..2.0),
                    darkness: rng.gen_range(0.85..0.92),
                }
            })
            .collect();
        Appearance {
            skin: [r, g, b],
            lips: [rng.gen_range(150.0..175.0), rng.gen_range(38.0..52.0), rng.gen_range(55.0..70.0)],
            eyes: [rng.gen_range(35.0..55.0), rng.gen_range(28.0..40.0), rng.gen_range(25.0..40.0)],
            brows: hair,
            nostrils: [rng.gen_range(60.0..70.0), rng.gen_range(36.0..42.0), rng.gen_range(34.0..40.0)],
            hair,
            texture_seed: rng.gen(),
            texture_amp: rng.gen_range(6.0..10.0),
            shading: [
                (rng.gen_range(0.015..0.035), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)),
                (rng.gen_range(0.015..0.035), rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)),
            ],
            moles,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Identity {
    pub id: String,
    pub gender: Gender,
    pub geometry: FaceGeometry,
    pub appearance: Appearance,
}

impl Identity {
    pub fn random<R: Rng>(id: impl Into<String>, gender: Gender, rng: &mut R) -> Self {
        let geometry = FaceGeometry::neutral(gender).perturbed(rng, 1.0);
        let appearance = Appearance::random(rng, &geometry);
        Identity {
            id: id.into(),
            gender,
            geometry,
            appearance,
        }
    }

    /// A visually similar identity: small geometric and color offsets, fresh
    /// fine texture and moles.
    pub fn look_alike<R: Rng>(&self, id: impl Into<String>, rng: &mut R, strength: f64) -> Self {
        let geometry = self.geometry.perturbed(rng, strength);
        let mut appearance = Appearance::random(rng, &geometry);
        for k in 0..3 {
            appearance.skin[k] = self.appearance.skin[k] + rng.gen_range(-8.0..8.0f32) * strength as f32;
            appearance.hair[k] = self.appearance.hair[k];
            appearance.brows[k] = self.appearance.brows[k];
        }
        // keep the skin rule margins: r - b >= 60, g - b >= 15
        appearance.skin[0] = appearance.skin[0].clamp(180.0, 232.0);
        appearance.skin[2] = appearance.skin[2].min(appearance.skin[0] - 62.0).min(appearance.skin[1] - 16.0);
        Identity {
            id: id.into(),
            gender: self.gender,
            geometry,
            appearance,
        }
    }
}

/// Placement of the face-local frame in the canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub center: Point,
    pub scale: f64,
    /// Radians, counter-clockwise on screen.
    pub angle: f64,
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            center: Point::new(0.0, 0.0),
            scale: 1.0,
            angle: 0.0,
        }
    }

    pub fn to_image(&self, q: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        // screen CCW rotation with y down
        let x = c * q.x + s * q.y;
        let y = -s * q.x + c * q.y;
        Point::new(self.center.x + self.scale * x, self.center.y + self.scale * y)
    }

    pub fn to_local(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        let dx = (p.x - self.center.x) / self.scale;
        let dy = (p.y - self.center.y) / self.scale;
        Point::new(c * dx - s * dy, s * dx + c * dy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capture {
    pub background: [f32; 3],
    pub gain: f32,
    /// Relative brightness change per 128 px, image axes.
    pub gradient: [f32; 2],
    pub noise_sigma: f32,
    pub noise_seed: u64,
}

impl Capture {
    pub fn clean() -> Self {
        Capture {
            background: [120.0, 150.0, 185.0],
            gain: 1.0,
            gradient: [0.0, 0.0],
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }

    /// Passport-style capture: neutral background, little variation.
    pub fn reference<R: Rng>(rng: &mut R) -> Self {
        let base = rng.gen_range(150.0..175.0f32);
        Capture {
            background: [base - 15.0, base, base + 25.0],
            gain: rng.gen_range(0.97..1.03),
            gradient: [0.0, 0.0],
            noise_sigma: 2.0,
            noise_seed: rng.gen(),
        }
    }

    pub fn probe<R: Rng>(rng: &mut R) -> Self {
        let palette = [
            [95.0, 120.0, 160.0],
            [110.0, 150.0, 120.0],
            [140.0, 140.0, 150.0],
            [80.0, 100.0, 130.0],
            [150.0, 170.0, 200.0],
        ];
        let mut bg = palette[rng.gen_range(0..palette.len())];
        for v in bg.iter_mut() {
            *v += rng.gen_range(-12.0..12.0f32);
        }
        bg[2] = bg[2].max(bg[0] + 10.0);
        Capture {
            background: bg,
            gain: rng.gen_range(0.9..1.08),
            gradient: [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)],
            noise_sigma: rng.gen_range(2.0..3.2),
            noise_seed: rng.gen(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaceInstance<'a> {
    pub identity: &'a Identity,
    pub pose: Pose,
    pub expression: Expression,
}

impl FaceInstance<'_> {
    pub fn geometry(&self) -> FaceGeometry {
        self.identity.geometry.with_expression(&self.expression)
    }

    pub fn landmarks5(&self) -> [Point; 5] {
        self.geometry().landmarks5().map(|p| self.pose.to_image(p))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Region {
    Background,
    Hair,
    Skin,
    Brow,
    Eye,
    Nostril,
    Mouth,
}

#[inline]
fn in_ellipse(q: Point, c: Point, axis: Point, a: f64, b: f64) -> bool {
    let d = q.sub(c);
    let u = d.dot(axis);
    let v = d.dot(axis.perp());
    (u / a).powi(2) + (v / b).powi(2) <= 1.0
}

fn hash2(ix: i64, iy: i64, seed: u64) -> f32 {
    let mut h = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^= h >> 33;
    (h >> 40) as f32 / (1u64 << 24) as f32 * 2.0 - 1.0
}

fn value_noise(q: Point, cell: f64, seed: u64) -> f32 {
    let x = q.x / cell;
    let y = q.y / cell;
    let (x0, y0) = (x.floor(), y.floor());
    let fx = (x - x0) as f32;
    let fy = (y - y0) as f32;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = hash2(ix, iy, seed);
    let b = hash2(ix + 1, iy, seed);
    let c = hash2(ix, iy + 1, seed);
    let d = hash2(ix + 1, iy + 1, seed);
    (a * (1.0 - sx) + b * sx) * (1.0 - sy) + (c * (1.0 - sx) + d * sx) * sy
}

struct PreparedFace<'a> {
    pose: Pose,
    g: FaceGeometry,
    app: &'a Appearance,
    axis: Point,
    brows: [Point; 2],
    nostrils: [Point; 2],
    mouth_c: Point,
    mouth_axis: Point,
    mouth_half_w: f64,
}

impl<'a> PreparedFace<'a> {
    fn new(f: &FaceInstance<'a>) -> Self {
        let g = f.geometry();
        let axis = g.right();
        let mouth_c = g.mouth_center();
        let mouth_vec = g.mouth_corners[1].sub(g.mouth_corners[0]);
        PreparedFace {
            pose: f.pose,
            axis,
            brows: g.brows(),
            nostrils: g.nostrils(),
            mouth_c,
            mouth_axis: mouth_vec.normalized(),
            mouth_half_w: mouth_vec.norm() / 2.0,
            app: &f.identity.appearance,
            g,
        }
    }

    fn region(&self, q: Point) -> Region {
        let g = &self.g;
        let fc = g.face_center;
        let in_face = ((q.x - fc.x) / g.face_half_w).powi(2) + ((q.y - fc.y) / g.face_half_h).powi(2) <= 1.0;
        if !in_face {
            let hc = Point::new(fc.x, fc.y - 0.22 * g.face_half_h);
            let in_hair = ((q.x - hc.x) / (g.face_half_w * 1.16)).powi(2) + ((q.y - hc.y) / (g.face_half_h * 0.98)).powi(2) <= 1.0
                && q.y < fc.y + 0.15 * g.face_half_h;
            return if in_hair { Region::Hair } else { Region::Background };
        }
        if in_ellipse(q, self.mouth_c, self.mouth_axis, self.mouth_half_w, g.mouth_half_h) {
            return Region::Mouth;
        }
        for e in &g.eyes {
            if in_ellipse(q, *e, self.axis, g.eye_rx, g.eye_ry) {
                return Region::Eye;
            }
        }
        for b in &self.brows {
            if in_ellipse(q, *b, self.axis, g.brow_half_len, g.brow_half_thick) {
                return Region::Brow;
            }
        }
        for n in &self.nostrils {
            if q.dist(*n) <= g.nostril_r {
                return Region::Nostril;
            }
        }
        Region::Skin
    }

    fn skin(&self, q: Point) -> [f32; 3] {
        let app = self.app;
        let mut shade = 1.0f64;
        for (amp, ph, dir) in app.shading {
            let u = q.x * dir.cos() + q.y * dir.sin();
            shade += amp * (u / 23.0 + ph).cos();
        }
        let tex = if app.texture_amp > 0.0 {
            app.texture_amp * (0.7 * value_noise(q, 2.2, app.texture_seed) + 0.3 * value_noise(q, 6.0, app.texture_seed ^ 0x5bd1))
        } else {
            0.0
        };
        let mut mole = 1.0f32;
        for m in &app.moles {
            if q.dist(m.at) <= m.radius {
                mole = m.darkness;
            }
        }
        let mut c = [0.0f32; 3];
        for k in 0..3 {
            c[k] = (app.skin[k] * shade as f32 + tex) * mole;
        }
        c
    }

    fn color(&self, q: Point, region: Region) -> [f32; 3] {
        let app = self.app;
        match region {
            Region::Background => unreachable!(),
            Region::Hair => {
                let t = 1.0 + 0.08 * value_noise(q, 3.0, app.texture_seed ^ 0xA11);
                app.hair.map(|v| v * t)
            }
            Region::Skin => self.skin(q),
            Region::Brow => app.brows,
            Region::Eye => app.eyes,
            Region::Nostril => app.nostrils,
            Region::Mouth => app.lips,
        }
    }
}

fn background(capture: &Capture, p: Point, h: f64) -> [f32; 3] {
    let t = (p.y / h.max(1.0)) as f32 - 0.5;
    capture.background.map(|v| v * (1.0 - 0.06 * t))
}

/// Renders faces (later entries on top) into a canvas.
pub fn render_scene(width: u32, height: u32, faces: &[FaceInstance<'_>], capture: &Capture) -> RgbImage {
    const SS: usize = 4;
    let prepared: Vec<PreparedFace<'_>> = faces.iter().map(PreparedFace::new).collect();
    let cx = width as f64 / 2.0;
    let cy = height as f64 / 2.0;
    let eval = |p: Point| -> ([f32; 3], u32) {
        let mut col = background(capture, p, height as f64);
        let mut code = 0u32;
        for (i, f) in prepared.iter().enumerate() {
            let q = f.pose.to_local(p);
            let r = f.region(q);
            if r != Region::Background {
                col = f.color(q, r);
                code = (i as u32 + 1) * 16 + r as u32;
            }
        }
        (col, code)
    };
    let mut noise_rng = ChaCha8Rng::seed_from_u64(capture.noise_seed);
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mut img = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            let p = Point::new(x as f64, y as f64);
            let (centre, code) = eval(p);
            let uniform = [(-0.5, -0.5), (0.5, -0.5), (-0.5, 0.5), (0.5, 0.5)]
                .iter()
                .all(|(dx, dy)| eval(Point::new(p.x + dx, p.y + dy)).1 == code);
            let mut c = if uniform {
                centre
            } else {
                let mut acc = [0.0f32; 3];
                for sy in 0..SS {
                    for sx in 0..SS {
                        let q = Point::new(
                            p.x - 0.5 + (sx as f64 + 0.5) / SS as f64,
                            p.y - 0.5 + (sy as f64 + 0.5) / SS as f64,
                        );
                        let (v, _) = eval(q);
                        for k in 0..3 {
                            acc[k] += v[k];
                        }
                    }
                }
                acc.map(|v| v / (SS * SS) as f32)
            };
            let light = capture.gain
                * (1.0 + capture.gradient[0] * ((p.x - cx) / 128.0) as f32 + capture.gradient[1] * ((p.y - cy) / 128.0) as f32);
            for v in c.iter_mut() {
                *v *= light;
                if capture.noise_sigma > 0.0 {
                    *v += capture.noise_sigma * normal.sample(&mut noise_rng);
                }
            }
            img.put_pixel(x, y, quantize_rgb(c));
        }
    }
    img
}

#[derive(Clone, Debug)]
pub struct RenderedFace {
    pub image: RgbImage,
    /// Ground-truth five-point landmarks in canvas coordinates.
    pub landmarks5: [Point; 5],
}

pub fn render_face(identity: &Identity, pose: Pose, expression: Expression, capture: &Capture, width: u32, height: u32) -> RenderedFace {
    let inst = FaceInstance {
        identity,
        pose,
        expression,
    };
    let image = render_scene(width, height, std::slice::from_ref(&inst), capture);
    RenderedFace {
        image,
        landmarks5: inst.landmarks5(),
    }
}

/// Side of the raw capture canvas used by the desk-scale testbed.
pub const CANVAS: u32 = 256;

/// Standardized, passport-style pose used for reference images and morph sources.
pub fn reference_pose<R: Rng>(rng: &mut R) -> Pose {
    Pose {
        center: Point::new(128.0 + rng.gen_range(-1.5..1.5), 124.0 + rng.gen_range(-1.5..1.5)),
        scale: 1.15 + rng.gen_range(-0.015..0.015),
        angle: rng.gen_range(-0.012..0.012),
    }
}

pub fn probe_pose<R: Rng>(rng: &mut R) -> Pose {
    Pose {
        center: Point::new(128.0 + rng.gen_range(-8.0..8.0), 124.0 + rng.gen_range(-8.0..8.0)),
        scale: 1.15 + rng.gen_range(-0.07..0.07),
        angle: rng.gen_range(-0.14..0.14),
    }
}

pub fn probe_expression<R: Rng>(rng: &mut R) -> Expression {
    Expression {
        mouth_stretch: rng.gen_range(0.94..1.08),
        mouth_open: rng.gen_range(0.85..1.2),
        brow_raise: rng.gen_range(-0.6..1.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_round_trip() {
        let pose = Pose {
            center: Point::new(100.0, 90.0),
            scale: 1.3,
            angle: 0.3,
        };
        let q = Point::new(12.0, -7.0);
        let back = pose.to_local(pose.to_image(q));
        assert!(back.dist(q) < 1e-9);
    }

    #[test]
    fn render_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let id = Identity::random("a", Gender::Female, &mut rng);
        let cap = Capture::probe(&mut rng);
        let pose = probe_pose(&mut rng);
        let a = render_face(&id, pose, Expression::default(), &cap, 128, 128);
        let b = render_face(&id, pose, Expression::default(), &cap, 128, 128);
        assert_eq!(a.image, b.image);
    }

    #[test]
    fn landmarks_follow_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let id = Identity::random("a", Gender::Male, &mut rng);
        let pose = Pose {
            center: Point::new(128.0, 128.0),
            scale: 1.0,
            angle: 0.0,
        };
        let inst = FaceInstance {
            identity: &id,
            pose,
            expression: Expression::default(),
        };
        let lm = inst.landmarks5();
        assert!(lm[0].x < lm[1].x);
        assert!(lm[2].y > lm[0].y && lm[3].y > lm[2].y);
    }
}
