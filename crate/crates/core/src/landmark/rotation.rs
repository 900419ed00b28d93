//! Axis-angle rotation helpers for the shape model.
//!
//! Rotations are parameterized by the axis-angle vector `w` (rotation by
//! `|w|` radians about `w/|w|`). The forward map is the closed-form
//! Rodrigues formula; the test suites compare it against a Taylor-series
//! matrix exponential.

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn skew(w: &[f64; 3]) -> Mat3 {
    [
        [0.0, -w[2], w[1]],
        [w[2], 0.0, -w[0]],
        [-w[1], w[0], 0.0],
    ]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i] += a[i][j] * v[j];
        }
    }
    out
}

pub fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Rodrigues: `R = I + sin(t)/t [w]x + (1-cos(t))/t^2 [w]x^2`.
/// The coefficients switch to their series expansions near `t = 0` so the
/// map stays smooth there.
pub fn rotation_from_axis_angles(w: &[f64; 3]) -> Mat3 {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let t = t2.sqrt();
    let (a, b) = if t < 1e-6 {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (t.sin() / t, (1.0 - t.cos()) / t2)
    };
    let k = skew(w);
    let kk = mat_mul(&k, &k);
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += a * k[i][j] + b * kk[i][j];
        }
    }
    r
}

/// Log map: axis-angle vector of a proper rotation matrix. Robust near both
/// `t = 0` and `t = pi`.
pub fn axis_angles_from_rotation(r: &Mat3) -> [f64; 3] {
    let trace = r[0][0] + r[1][1] + r[2][2];
    let c = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let t = c.acos();
    let vee = [
        r[2][1] - r[1][2],
        r[0][2] - r[2][0],
        r[1][0] - r[0][1],
    ];
    if t < 1e-7 {
        return [vee[0] / 2.0, vee[1] / 2.0, vee[2] / 2.0];
    }
    if t < std::f64::consts::PI - 1e-5 {
        let s = t / (2.0 * t.sin());
        return [vee[0] * s, vee[1] * s, vee[2] * s];
    }
    // Near pi the vee part vanishes; recover the axis from (R + I)/2 = nn^T.
    let mut i = 0;
    for k in 1..3 {
        if r[k][k] > r[i][i] {
            i = k;
        }
    }
    let mut n = [0.0; 3];
    n[i] = (((r[i][i] + 1.0) / 2.0).max(0.0)).sqrt();
    for j in 0..3 {
        if j != i {
            n[j] = (r[i][j] + r[j][i]) / (4.0 * n[i]);
        }
    }
    let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    [t * n[0] / norm, t * n[1] / norm, t * n[2] / norm]
}

/// Partial derivatives of `rotation_from_axis_angles` with respect to each
/// axis-angle component (Gallego & Yezzi closed form).
pub fn rotation_jacobian(w: &[f64; 3]) -> [Mat3; 3] {
    let r = rotation_from_axis_angles(w);
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    if t2 < 1e-12 {
        let e = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
        ];
        return [skew(&e[0]), skew(&e[1]), skew(&e[2])];
    }
    let mut out = [IDENTITY; 3];
    for i in 0..3 {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        // (I - R) e_i
        let re = mat_vec(&r, &e);
        let ime = [e[0] - re[0], e[1] - re[1], e[2] - re[2]];
        let wx_ime = cross(w, &ime);
        // (w_i [w]x + [w x (I-R)e_i]x) / |w|^2 * R
        let kw = skew(w);
        let kc = skew(&wx_ime);
        let mut a = [[0.0; 3]; 3];
        for p in 0..3 {
            for q in 0..3 {
                a[p][q] = (w[i] * kw[p][q] + kc[p][q]) / t2;
            }
        }
        out[i] = mat_mul(&a, &r);
    }
    out
}
