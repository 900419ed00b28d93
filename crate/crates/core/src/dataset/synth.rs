//! Procedural person renderer with exact 68-point ground-truth landmarks.
//!
//! Faces are a parametric 3-D template (jaw arc, brows, nose, eyes, mouth)
//! morphed per identity, posed per instance (yaw/pitch/roll), and projected
//! orthographically into the source image. Everything visible is rasterized
//! from the same projected geometry, so landmarks are consistent with the
//! pixels by construction. Head pose is correlated with the rendered body
//! (torso offset, shoulder tilt, arm poses) so that landmark generation from
//! body context has signal to learn from.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::img::RgbImage;
use crate::landmark::rotation::{mat_mul, mat_vec, Mat3};
use crate::landmark::{LandmarkSet, BROWS, JAW, LEFT_EYE, NUM_LANDMARKS, RIGHT_EYE};

use super::{HeadBox, PersonInstance, Split};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub instances_per_identity: usize,
    /// Target crop resolution S; the rendered source image is 1.5 S x 2 S.
    pub resolution: usize,
    pub rng_seed: u64,
    /// Yaw limit in radians (|yaw| <= this keeps both eyes visible, so no
    /// profile-view pruning pass is needed).
    pub yaw_range: f64,
    pub roll_range: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_identities: 50,
            instances_per_identity: 40,
            resolution: 64,
            rng_seed: 0,
            yaw_range: 60f64.to_radians(),
            roll_range: 0.35,
        }
    }
}

pub const GENERATOR_VERSION: &str = "synth-v1";

/// Persistent per-identity appearance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Appearance {
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    pub iris: [f64; 3],
    pub clothing: [f64; 3],
    pub collar: [f64; 3],
    pub pants: [f64; 3],
    pub face_w: f64,
    pub face_h: f64,
    pub eye_sep: f64,
    pub eye_size: f64,
    pub mouth_w: f64,
    pub nose_len: f64,
    pub brow_h: f64,
    pub hair_len: f64,
    pub hair_side: f64,
    pub head_size: f64,
}

/// Per-instance pose and scene parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Pose {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub mouth_open: f64,
    pub brow_raise: f64,
    pub head_cx: f64,
    pub head_cy: f64,
    pub torso_dx: f64,
    pub shoulder_tilt: f64,
    pub arm_left: f64,
    pub arm_right: f64,
    pub bg: BgParams,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BgParams {
    pub c0: [f64; 3],
    pub c1: [f64; 3],
    pub dir: [f64; 2],
    pub freq: [f64; 2],
    pub phase: f64,
}

/// Everything needed to re-derive what an instance looks like.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderParams {
    pub appearance: Appearance,
    pub pose: Pose,
}

// Clothing palette is intentionally small so that identities collide on
// body cues and a recognizer must look at heads to disambiguate fully.
const CLOTHING_ANCHORS: [[f64; 3]; 6] = [
    [0.75, 0.15, 0.15],
    [0.15, 0.25, 0.70],
    [0.15, 0.55, 0.25],
    [0.80, 0.70, 0.20],
    [0.50, 0.20, 0.60],
    [0.85, 0.85, 0.85],
];
const HAIR_ANCHORS: [[f64; 3]; 5] = [
    [0.10, 0.08, 0.07],
    [0.35, 0.22, 0.12],
    [0.80, 0.64, 0.34],
    [0.52, 0.22, 0.10],
    [0.64, 0.64, 0.66],
];
const IRIS_ANCHORS: [[f64; 3]; 3] = [
    [0.30, 0.18, 0.08],
    [0.20, 0.35, 0.60],
    [0.22, 0.42, 0.25],
];
const PANTS_ANCHORS: [[f64; 3]; 4] = [
    [0.12, 0.15, 0.30],
    [0.10, 0.10, 0.10],
    [0.35, 0.35, 0.38],
    [0.30, 0.20, 0.12],
];
const SCLERA: [f64; 3] = [0.93, 0.93, 0.90];
const LIP: [f64; 3] = [0.70, 0.32, 0.30];

fn jitter3(rng: &mut ChaCha8Rng, base: [f64; 3], amount: f64) -> [f64; 3] {
    [
        (base[0] + rng.random_range(-amount..amount)).clamp(0.0, 1.0),
        (base[1] + rng.random_range(-amount..amount)).clamp(0.0, 1.0),
        (base[2] + rng.random_range(-amount..amount)).clamp(0.0, 1.0),
    ]
}

fn sample_appearance(rng: &mut ChaCha8Rng) -> Appearance {
    let tone: f64 = rng.random_range(0.45..1.0);
    let skin = [
        (0.98 * tone).min(1.0_f64),
        0.80 * tone,
        0.64 * tone * rng.random_range(0.9..1.05),
    ];
    let hair_anchor = HAIR_ANCHORS[rng.random_range(0..HAIR_ANCHORS.len())];
    let iris_anchor = IRIS_ANCHORS[rng.random_range(0..IRIS_ANCHORS.len())];
    let clothing_anchor = CLOTHING_ANCHORS[rng.random_range(0..CLOTHING_ANCHORS.len())];
    let collar_anchor = CLOTHING_ANCHORS[rng.random_range(0..CLOTHING_ANCHORS.len())];
    let pants_anchor = PANTS_ANCHORS[rng.random_range(0..PANTS_ANCHORS.len())];
    Appearance {
        skin,
        hair: jitter3(rng, hair_anchor, 0.04),
        iris: jitter3(rng, iris_anchor, 0.04),
        clothing: jitter3(rng, clothing_anchor, 0.05),
        collar: jitter3(rng, collar_anchor, 0.05),
        pants: jitter3(rng, pants_anchor, 0.04),
        face_w: rng.random_range(0.88..1.12),
        face_h: rng.random_range(0.88..1.12),
        eye_sep: rng.random_range(0.36..0.48),
        eye_size: rng.random_range(0.80..1.25),
        mouth_w: rng.random_range(0.80..1.20),
        nose_len: rng.random_range(0.80..1.20),
        brow_h: rng.random_range(0.10..0.20),
        hair_len: rng.random_range(0.15..0.34),
        hair_side: rng.random_range(0.0..0.30),
        head_size: rng.random_range(0.90..1.10),
    }
}

fn sample_pose(rng: &mut ChaCha8Rng, cfg: &SynthConfig, w: f64, h: f64) -> Pose {
    let yaw = rng.random_range(-cfg.yaw_range..cfg.yaw_range);
    let roll = rng.random_range(-cfg.roll_range..cfg.roll_range);
    Pose {
        yaw,
        pitch: rng.random_range(-0.10..0.10),
        roll,
        mouth_open: rng.random_range(0.0..0.5),
        brow_raise: rng.random_range(-0.03..0.05),
        // Head placement and body configuration carry the pose signal the
        // stage-I encoder learns from.
        head_cx: w * (0.5 + 0.10 * yaw.sin() + rng.random_range(-0.03..0.03)),
        head_cy: h * (0.21 + rng.random_range(-0.025..0.025)),
        torso_dx: w * (-0.07 * yaw.sin() + rng.random_range(-0.015..0.015)),
        shoulder_tilt: roll * 0.65 + rng.random_range(-0.05..0.05),
        arm_left: 0.35 * yaw + rng.random_range(-0.12..0.12),
        arm_right: -0.35 * yaw + rng.random_range(-0.12..0.12),
        bg: BgParams {
            c0: jitter3(rng, [0.45, 0.50, 0.55], 0.25),
            c1: jitter3(rng, [0.65, 0.60, 0.50], 0.25),
            dir: {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                [a.cos(), a.sin()]
            },
            freq: [rng.random_range(0.02..0.08), rng.random_range(0.02..0.08)],
            phase: rng.random_range(0.0..std::f64::consts::TAU),
        },
    }
}

/// 3-D face template in face units (x right, y down, z toward the viewer),
/// morphed by identity appearance and instance expression.
fn face_template(a: &Appearance, mouth_open: f64, brow_raise: f64) -> Vec<[f64; 3]> {
    let mut pts = Vec::with_capacity(NUM_LANDMARKS);
    // jaw 0..17
    for i in 0..17 {
        let phi = i as f64 / 16.0 * std::f64::consts::PI;
        let x = -phi.cos() * a.face_w;
        let y = (-0.10 + 1.10 * phi.sin()) * a.face_h + mouth_open * 0.04;
        let z = -0.45 * phi.cos().abs().powf(1.2);
        pts.push([x, y, z]);
    }
    let eye_y = -0.28 * a.face_h;
    // brows 17..27 (left outer->inner, right inner->outer)
    for k in 0..5 {
        let u = k as f64 / 4.0;
        let x = (-a.eye_sep - 0.26 + 0.52 * u) * a.face_w;
        let y = eye_y - (a.brow_h + 0.06 * (std::f64::consts::PI * u).sin() + brow_raise) * a.face_h;
        pts.push([x, y, 0.10]);
    }
    for k in 0..5 {
        let u = k as f64 / 4.0;
        let x = (a.eye_sep - 0.26 + 0.52 * u) * a.face_w;
        let v = 1.0 - u;
        let y = eye_y - (a.brow_h + 0.06 * (std::f64::consts::PI * v).sin() + brow_raise) * a.face_h;
        pts.push([x, y, 0.10]);
    }
    // nose bridge 27..31
    for k in 0..4 {
        let t = k as f64 / 3.0;
        pts.push([
            0.0,
            (-0.18 + 0.32 * t * a.nose_len) * a.face_h,
            0.14 + 0.26 * t,
        ]);
    }
    // nose base 31..36
    for k in 0..5 {
        let x = (-0.14 + 0.07 * k as f64) * a.face_w;
        let z = if k == 2 { 0.30 } else { 0.18 };
        pts.push([x, 0.24 * a.nose_len * a.face_h, z]);
    }
    // eyes 36..48
    let we = 0.17 * a.eye_size * a.face_w;
    let he = 0.07 * a.eye_size * a.face_h;
    for side in [-1.0f64, 1.0] {
        let cx = side * a.eye_sep * a.face_w;
        let local = [
            [-we, 0.0],
            [-we / 3.0, -he],
            [we / 3.0, -he],
            [we, 0.0],
            [we / 3.0, he],
            [-we / 3.0, he],
        ];
        for l in local {
            pts.push([cx + l[0], eye_y + l[1], 0.05]);
        }
    }
    // mouth 48..68
    let mcy = 0.52 * a.face_h + mouth_open * 0.03;
    let rx = 0.30 * a.mouth_w * a.face_w;
    let ry = 0.12 * a.face_h * (1.0 + 0.3 * mouth_open);
    for k in 0..12 {
        let ang = std::f64::consts::PI - k as f64 * std::f64::consts::TAU / 12.0;
        let s = ang.sin();
        let r = if s >= 0.0 { ry } else { ry * 1.25 };
        pts.push([ang.cos() * rx, mcy - s * r, 0.12]);
    }
    for k in 0..8 {
        let ang = std::f64::consts::PI - k as f64 * std::f64::consts::TAU / 8.0;
        let s = ang.sin();
        let r = ry * (0.30 + 0.45 * mouth_open);
        pts.push([ang.cos() * rx * 0.62, mcy - s * r, 0.12]);
    }
    debug_assert_eq!(pts.len(), NUM_LANDMARKS);
    pts
}

fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    angle: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let lx = c * dx + s * dy;
        let ly = -s * dx + c * dy;
        (lx / self.rx).powi(2) + (ly / self.ry).powi(2) <= 1.0
    }

    /// Local (rotation-removed) coordinates of a point.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        (c * dx + s * dy, -s * dx + c * dy)
    }
}

struct FaceGeometry {
    landmarks: Vec<[f64; 2]>,
    head: Ellipse,
    hairline_local_y: f64,
}

/// Project the template with the given pose, derive the head outline from
/// the projected landmarks (so features always sit inside it), and return
/// final image-space geometry.
fn face_geometry(a: &Appearance, pose: &Pose, head_radius: f64) -> FaceGeometry {
    let template = face_template(a, pose.mouth_open, pose.brow_raise);
    let r_yaw_pitch = mat_mul(&rot_y(pose.yaw), &rot_x(pose.pitch));
    // Roll-free frame: project with yaw and pitch only.
    let flat: Vec<[f64; 2]> = template
        .iter()
        .map(|p| {
            let v = mat_vec(&r_yaw_pitch, &[p[0] * head_radius, p[1] * head_radius, p[2] * head_radius]);
            [v[0], v[1]]
        })
        .collect();
    let jaw_brow: Vec<&[f64; 2]> = flat[JAW]
        .iter()
        .chain(flat[BROWS].iter())
        .collect();
    let min_x = jaw_brow.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
    let max_x = jaw_brow.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
    let chin = flat[JAW].iter().map(|p| p[1]).fold(f64::MIN, f64::max);
    let brow_top = flat[BROWS].iter().map(|p| p[1]).fold(f64::MAX, f64::min);
    let face_h = chin - brow_top;
    let top = brow_top - 0.60 * face_h;
    let cx = (min_x + max_x) / 2.0;
    let cy = (chin + top) / 2.0;
    let rx = (max_x - min_x) / 2.0 * 1.12 + 0.05 * head_radius;
    let ry = (chin - top) / 2.0 * 1.05;

    let (s, c) = pose.roll.sin_cos();
    let rot2 = |p: [f64; 2]| {
        [
            c * p[0] - s * p[1] + pose.head_cx,
            s * p[0] + c * p[1] + pose.head_cy,
        ]
    };
    let landmarks: Vec<[f64; 2]> = flat.iter().map(|&p| rot2(p)).collect();
    let center = rot2([cx, cy]);
    let head = Ellipse {
        cx: center[0],
        cy: center[1],
        rx,
        ry,
        angle: pose.roll,
    };
    // Hairline in the ellipse's local frame, measured from the top.
    let hairline_local_y = -ry + a.hair_len * 2.0 * ry;
    FaceGeometry {
        landmarks,
        head,
        hairline_local_y,
    }
}

fn fill_ellipse(img: &mut RgbImage, e: &Ellipse, color: [f64; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = e.rx.max(e.ry) + 1.0;
    let x0 = ((e.cx - r).floor() as i64).max(0);
    let x1 = ((e.cx + r).ceil() as i64).min(w - 1);
    let y0 = ((e.cy - r).floor() as i64).max(0);
    let y1 = ((e.cy + r).ceil() as i64).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if e.contains(x as f64, y as f64) {
                img.set(x as usize, y as usize, color);
            }
        }
    }
}

fn fill_polygon(img: &mut RgbImage, pts: &[[f64; 2]], color: [f64; 3]) {
    if pts.len() < 3 {
        return;
    }
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = (pts.iter().map(|p| p[0]).fold(f64::MAX, f64::min).floor() as i64).max(0);
    let x1 = (pts.iter().map(|p| p[0]).fold(f64::MIN, f64::max).ceil() as i64).min(w - 1);
    let y0 = (pts.iter().map(|p| p[1]).fold(f64::MAX, f64::min).floor() as i64).max(0);
    let y1 = (pts.iter().map(|p| p[1]).fold(f64::MIN, f64::max).ceil() as i64).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64, y as f64);
            let mut inside = false;
            let mut j = pts.len() - 1;
            for i in 0..pts.len() {
                let (xi, yi) = (pts[i][0], pts[i][1]);
                let (xj, yj) = (pts[j][0], pts[j][1]);
                if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
                    inside = !inside;
                }
                j = i;
            }
            if inside {
                img.set(x as usize, y as usize, color);
            }
        }
    }
}

fn stroke_capsule(img: &mut RgbImage, p0: [f64; 2], p1: [f64; 2], thickness: f64, color: [f64; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = thickness / 2.0;
    let x0 = ((p0[0].min(p1[0]) - r).floor() as i64).max(0);
    let x1 = ((p0[0].max(p1[0]) + r).ceil() as i64).min(w - 1);
    let y0 = ((p0[1].min(p1[1]) - r).floor() as i64).max(0);
    let y1 = ((p0[1].max(p1[1]) + r).ceil() as i64).min(h - 1);
    let dx = p1[0] - p0[0];
    let dy = p1[1] - p0[1];
    let len2 = (dx * dx + dy * dy).max(1e-12);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let t = (((x as f64 - p0[0]) * dx + (y as f64 - p0[1]) * dy) / len2).clamp(0.0, 1.0);
            let qx = p0[0] + t * dx;
            let qy = p0[1] + t * dy;
            let d2 = (x as f64 - qx).powi(2) + (y as f64 - qy).powi(2);
            if d2 <= r * r {
                img.set(x as usize, y as usize, color);
            }
        }
    }
}

fn render_background(img: &mut RgbImage, bg: &BgParams) {
    let (w, h) = (img.width(), img.height());
    let diag = ((w * w + h * h) as f64).sqrt();
    for y in 0..h {
        for x in 0..w {
            let proj = (x as f64 * bg.dir[0] + y as f64 * bg.dir[1]) / diag + 0.5;
            let u = proj.clamp(0.0, 1.0);
            let tex = 0.05 * (bg.freq[0] * x as f64 + bg.freq[1] * y as f64 + bg.phase).sin();
            let mut c = [0.0; 3];
            for ch in 0..3 {
                c[ch] = (bg.c0[ch] + (bg.c1[ch] - bg.c0[ch]) * u + tex).clamp(0.0, 1.0);
            }
            img.set(x, y, c);
        }
    }
}

/// Render one person; returns the image, the ground-truth landmarks, and the
/// head bounding box.
pub fn render_person(
    a: &Appearance,
    pose: &Pose,
    width: usize,
    height: usize,
) -> (RgbImage, LandmarkSet, HeadBox) {
    let head_radius = width as f64 * 0.145 * a.head_size;
    let geo = face_geometry(a, pose, head_radius);
    let mut img = RgbImage::new(height, width);
    render_background(&mut img, &pose.bg);

    // Head box: AABB of the rotated head ellipse plus a small margin.
    let (s, c) = geo.head.angle.sin_cos();
    let half_w = ((geo.head.rx * c).powi(2) + (geo.head.ry * s).powi(2)).sqrt() * 1.05;
    let half_h = ((geo.head.rx * s).powi(2) + (geo.head.ry * c).powi(2)).sqrt() * 1.05;
    let head_box = HeadBox {
        x: (geo.head.cx - half_w).round() as i32,
        y: (geo.head.cy - half_h).round() as i32,
        w: (2.0 * half_w).round() as i32,
        h: (2.0 * half_h).round() as i32,
    };

    // --- body ---
    let torso_cx = pose.head_cx + pose.torso_dx;
    let shoulder_y = geo.head.cy + half_h + 0.02 * height as f64;
    let shoulder_half = head_radius * 1.9;
    let waist_y = shoulder_y + 0.30 * height as f64;
    let waist_half = shoulder_half * 0.85;
    let tilt = pose.shoulder_tilt;
    let sl = [
        torso_cx - shoulder_half,
        shoulder_y + shoulder_half * tilt,
    ];
    let sr = [
        torso_cx + shoulder_half,
        shoulder_y - shoulder_half * tilt,
    ];
    // neck before torso so the collar overlaps it
    stroke_capsule(
        &mut img,
        [geo.head.cx, geo.head.cy + geo.head.ry * 0.7],
        [torso_cx, shoulder_y + 0.02 * height as f64],
        head_radius * 0.55,
        a.skin,
    );
    fill_polygon(
        &mut img,
        &[
            sl,
            sr,
            [torso_cx + waist_half, waist_y],
            [torso_cx - waist_half, waist_y],
        ],
        a.clothing,
    );
    // collar
    fill_polygon(
        &mut img,
        &[
            [torso_cx - 0.45 * head_radius, shoulder_y - 0.05 * head_radius],
            [torso_cx + 0.45 * head_radius, shoulder_y - 0.05 * head_radius],
            [torso_cx, shoulder_y + 0.9 * head_radius],
        ],
        a.collar,
    );
    // arms
    let arm_len = 0.26 * height as f64;
    let arm_th = head_radius * 0.58;
    for (anchor, ang) in [(sl, pose.arm_left), (sr, pose.arm_right)] {
        let dir = [ang.sin(), ang.cos()];
        let end = [anchor[0] + dir[0] * arm_len, anchor[1] + dir[1] * arm_len];
        stroke_capsule(&mut img, anchor, end, arm_th, a.clothing);
        // hand
        let hand = Ellipse {
            cx: end[0],
            cy: end[1],
            rx: arm_th * 0.45,
            ry: arm_th * 0.45,
            angle: 0.0,
        };
        fill_ellipse(&mut img, &hand, a.skin);
    }
    // pants
    fill_polygon(
        &mut img,
        &[
            [torso_cx - waist_half * 0.95, waist_y],
            [torso_cx + waist_half * 0.95, waist_y],
            [torso_cx + waist_half * 0.95, height as f64],
            [torso_cx - waist_half * 0.95, height as f64],
        ],
        a.pants,
    );

    // --- head ---
    fill_ellipse(&mut img, &geo.head, a.skin);
    // hair: cap above the hairline plus a band on the side away from gaze
    {
        let e = &geo.head;
        let r = e.rx.max(e.ry) + 1.0;
        let x0 = ((e.cx - r).floor() as i64).max(0);
        let x1 = ((e.cx + r).ceil() as i64).min(img.width() as i64 - 1);
        let y0 = ((e.cy - r).floor() as i64).max(0);
        let y1 = ((e.cy + r).ceil() as i64).min(img.height() as i64 - 1);
        let side_limit = e.rx * (1.0 - 0.35 * a.hair_side);
        let side_sign = if pose.yaw >= 0.0 { -1.0 } else { 1.0 };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if !e.contains(x as f64, y as f64) {
                    continue;
                }
                let (lx, ly) = e.local(x as f64, y as f64);
                let cap = ly < geo.hairline_local_y;
                let band = a.hair_side > 0.01 && lx * side_sign > side_limit;
                if cap || band {
                    img.set(x as usize, y as usize, a.hair);
                }
            }
        }
    }

    let lm = &geo.landmarks;
    // brows
    for range in [17..22usize, 22..27usize] {
        for wdw in lm[range].windows(2) {
            stroke_capsule(
                &mut img,
                wdw[0],
                wdw[1],
                head_radius * 0.10,
                [a.hair[0] * 0.8, a.hair[1] * 0.8, a.hair[2] * 0.8],
            );
        }
    }
    // nose
    let nose_color = [a.skin[0] * 0.82, a.skin[1] * 0.78, a.skin[2] * 0.76];
    for wdw in lm[27..31].windows(2) {
        stroke_capsule(&mut img, wdw[0], wdw[1], head_radius * 0.07, nose_color);
    }
    for wdw in lm[31..36].windows(2) {
        stroke_capsule(&mut img, wdw[0], wdw[1], head_radius * 0.06, nose_color);
    }
    // mouth
    let outer: Vec<[f64; 2]> = lm[48..60].to_vec();
    fill_polygon(&mut img, &outer, LIP);
    if pose.mouth_open > 0.15 {
        let inner: Vec<[f64; 2]> = lm[60..68].to_vec();
        fill_polygon(&mut img, &inner, [0.22, 0.10, 0.10]);
    }
    // eyes: sclera ellipse from the eye corner landmarks, then iris + pupil
    for range in [LEFT_EYE, RIGHT_EYE] {
        let pts = &lm[range];
        let outer = pts[0];
        let inner = pts[3];
        let cx = pts.iter().map(|p| p[0]).sum::<f64>() / 6.0;
        let cy = pts.iter().map(|p| p[1]).sum::<f64>() / 6.0;
        let half = (((inner[0] - outer[0]).powi(2) + (inner[1] - outer[1]).powi(2)).sqrt() / 2.0)
            .max(0.75);
        let vert = pts
            .iter()
            .map(|p| {
                // distance from the corner-to-corner axis
                let ax = inner[0] - outer[0];
                let ay = inner[1] - outer[1];
                let n = (ax * ax + ay * ay).sqrt().max(1e-9);
                ((p[0] - outer[0]) * (-ay) + (p[1] - outer[1]) * ax).abs() / n
            })
            .fold(0.0, f64::max);
        let angle = (inner[1] - outer[1]).atan2(inner[0] - outer[0]);
        let sclera_e = Ellipse {
            cx,
            cy,
            rx: half * 1.2,
            ry: (vert * 1.5).max(0.75),
            angle,
        };
        fill_ellipse(&mut img, &sclera_e, SCLERA);
        let iris = Ellipse {
            cx,
            cy,
            rx: (sclera_e.ry * 0.85).max(0.6),
            ry: (sclera_e.ry * 0.85).max(0.6),
            angle: 0.0,
        };
        fill_ellipse(&mut img, &iris, a.iris);
        let pupil = Ellipse {
            cx,
            cy,
            rx: (iris.rx * 0.45).max(0.35),
            ry: (iris.rx * 0.45).max(0.35),
            angle: 0.0,
        };
        fill_ellipse(&mut img, &pupil, [0.05, 0.05, 0.05]);
    }

    let landmarks = LandmarkSet::new(geo.landmarks.clone()).expect("template has 68 points");
    (img, landmarks, head_box)
}

/// Generate the synthetic dataset. Deterministic for a fixed config.
pub fn synth_generate(cfg: &SynthConfig) -> Vec<PersonInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let width = cfg.resolution * 3 / 2;
    let height = cfg.resolution * 2;
    let appearances: Vec<Appearance> = (0..cfg.num_identities)
        .map(|_| sample_appearance(&mut rng))
        .collect();
    let mut out = Vec::with_capacity(cfg.num_identities * cfg.instances_per_identity);
    let mut id = 0u64;
    for (identity, a) in appearances.iter().enumerate() {
        for _ in 0..cfg.instances_per_identity {
            let pose = sample_pose(&mut rng, cfg, width as f64, height as f64);
            let (image, landmarks, head_box) = render_person(a, &pose, width, height);
            out.push(PersonInstance {
                id,
                image,
                head_box,
                identity: identity as u32,
                landmarks_gt: Some(landmarks),
                split: Split::Train,
                render: Some(RenderParams {
                    appearance: a.clone(),
                    pose,
                }),
            });
            id += 1;
        }
    }
    out
}

/// Grayscale face chip of a canonical (average-morph, neutral-appearance)
/// face at the given yaw, used as a template by the bundled landmark
/// detector. The chip covers the head box.
pub fn canonical_face_chip(size: usize, yaw: f64) -> ndarray::Array2<f64> {
    canonical_face_chip_posed(size, yaw, 0.0)
}

pub fn canonical_face_chip_posed(size: usize, yaw: f64, roll: f64) -> ndarray::Array2<f64> {
    let a = Appearance {
        skin: [0.80, 0.66, 0.55],
        hair: [0.20, 0.15, 0.12],
        iris: [0.25, 0.25, 0.30],
        clothing: [0.5, 0.5, 0.5],
        collar: [0.5, 0.5, 0.5],
        pants: [0.3, 0.3, 0.3],
        face_w: 1.0,
        face_h: 1.0,
        eye_sep: 0.42,
        eye_size: 1.0,
        mouth_w: 1.0,
        nose_len: 1.0,
        brow_h: 0.15,
        hair_len: 0.25,
        hair_side: 0.0,
        head_size: 1.0,
    };
    let dim = size * 4;
    let pose = Pose {
        yaw,
        pitch: 0.0,
        roll,
        mouth_open: 0.1,
        brow_raise: 0.0,
        head_cx: dim as f64 / 2.0,
        head_cy: dim as f64 / 2.0,
        torso_dx: 0.0,
        shoulder_tilt: 0.0,
        arm_left: 0.0,
        arm_right: 0.0,
        bg: BgParams {
            c0: [0.5, 0.5, 0.5],
            c1: [0.5, 0.5, 0.5],
            dir: [1.0, 0.0],
            freq: [0.0, 0.0],
            phase: 0.0,
        },
    };
    // Render at 4x the chip size relative to a head radius chosen so the
    // head box roughly fills the chip.
    let (img, _, hb) = render_person(&a, &pose, dim, dim);
    let gray = img.gray();
    let mut chip = ndarray::Array2::<f64>::zeros((size, size));
    for y in 0..size {
        for x in 0..size {
            let sx = hb.x as f64 + (x as f64 + 0.5) / size as f64 * hb.w as f64 - 0.5;
            let sy = hb.y as f64 + (y as f64 + 0.5) / size as f64 * hb.h as f64 - 0.5;
            let sxc = sx.clamp(0.0, (dim - 1) as f64);
            let syc = sy.clamp(0.0, (dim - 1) as f64);
            let x0 = sxc.floor() as usize;
            let y0 = syc.floor() as usize;
            let x1 = (x0 + 1).min(dim - 1);
            let y1 = (y0 + 1).min(dim - 1);
            let fx = sxc - x0 as f64;
            let fy = syc - y0 as f64;
            chip[[y, x]] = gray[[y0, x0]] * (1.0 - fx) * (1.0 - fy)
                + gray[[y0, x1]] * fx * (1.0 - fy)
                + gray[[y1, x0]] * (1.0 - fx) * fy
                + gray[[y1, x1]] * fx * fy;
        }
    }
    chip
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(seed: u64) -> SynthConfig {
        SynthConfig {
            num_identities: 3,
            instances_per_identity: 2,
            resolution: 64,
            rng_seed: seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let a = synth_generate(&small_cfg(9));
        let b = synth_generate(&small_cfg(9));
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data(), y.image.data());
            assert_eq!(x.head_box, y.head_box);
            assert_eq!(
                x.landmarks_gt.as_ref().unwrap().points(),
                y.landmarks_gt.as_ref().unwrap().points()
            );
        }
        let c = synth_generate(&small_cfg(10));
        assert_ne!(
            a[0].image.data(),
            c[0].image.data(),
            "different seeds must differ"
        );
    }

    #[test]
    fn frontal_pose_landmarks_are_bilaterally_symmetric() {
        let cfg = small_cfg(3);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let a = sample_appearance(&mut rng);
        let mut pose = sample_pose(&mut rng, &cfg, 96.0, 128.0);
        pose.yaw = 0.0;
        pose.roll = 0.0;
        pose.pitch = 0.0;
        let (_, lm, _) = render_person(&a, &pose, 96, 128);
        // Midline is the mean x of the unmirrored set; each point's mirror
        // must be present within 1 px.
        let pts = lm.points();
        let mid = pts.iter().map(|p| p[0]).sum::<f64>() / pts.len() as f64;
        for p in pts {
            let mirror = [2.0 * mid - p[0], p[1]];
            let best = pts
                .iter()
                .map(|q| ((q[0] - mirror[0]).powi(2) + (q[1] - mirror[1]).powi(2)).sqrt())
                .fold(f64::MAX, f64::min);
            assert!(best < 1.0, "no mirror partner for {p:?} (best {best})");
        }
    }

    #[test]
    fn eye_center_landmarks_lie_inside_rendered_eye_regions() {
        // Rasterization-membership oracle: the rounded eye-centroid pixel
        // must carry one of the eye colors (iris, pupil, or sclera), i.e.
        // the eye was actually drawn there.
        let insts = synth_generate(&SynthConfig {
            num_identities: 6,
            instances_per_identity: 3,
            resolution: 64,
            rng_seed: 17,
            ..SynthConfig::default()
        });
        for inst in &insts {
            let lm = inst.landmarks_gt.as_ref().unwrap();
            let rp = inst.render.as_ref().unwrap();
            for range in [LEFT_EYE, RIGHT_EYE] {
                let pts = &lm.points()[range];
                let cx = pts.iter().map(|p| p[0]).sum::<f64>() / 6.0;
                let cy = pts.iter().map(|p| p[1]).sum::<f64>() / 6.0;
                let x = cx.round() as usize;
                let y = cy.round() as usize;
                let px = inst.image.get(x, y);
                let close = |c: [f64; 3]| {
                    (px[0] - c[0]).abs() + (px[1] - c[1]).abs() + (px[2] - c[2]).abs() < 0.05
                };
                assert!(
                    close([0.05, 0.05, 0.05]) || close(rp.appearance.iris) || close(SCLERA),
                    "instance {}: pixel at eye centroid ({x},{y}) is {px:?}",
                    inst.id
                );
            }
        }
    }

    #[test]
    fn head_box_is_valid_and_contains_face_landmarks() {
        let insts = synth_generate(&small_cfg(5));
        for inst in &insts {
            inst.head_box
                .validate(inst.image.width(), inst.image.height())
                .unwrap();
            let lm = inst.landmarks_gt.as_ref().unwrap();
            for p in &lm.points()[27..48] {
                // nose and eyes must sit inside the head box
                assert!(p[0] >= inst.head_box.x as f64 - 0.5);
                assert!(p[0] <= (inst.head_box.x + inst.head_box.w) as f64 + 0.5);
                assert!(p[1] >= inst.head_box.y as f64 - 0.5);
                assert!(p[1] <= (inst.head_box.y + inst.head_box.h) as f64 + 0.5);
            }
        }
    }

    #[test]
    fn canonical_chip_has_face_contrast() {
        let chip = canonical_face_chip(24, 0.0);
        let mean = chip.iter().sum::<f64>() / chip.len() as f64;
        let var = chip.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / chip.len() as f64;
        assert!(var > 1e-3, "template should not be flat (var {var})");
    }
}
