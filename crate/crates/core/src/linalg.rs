//! Small dense-vector helpers over `f64` slices.
//!
//! Points and velocities are plain `Vec<f64>`; the dimension is fixed per
//! scenario at runtime, so there is no const-generic machinery here.

pub type Point = Vec<f64>;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
pub fn sub(a: &[f64], b: &[f64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[inline]
pub fn add(a: &[f64], b: &[f64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

#[inline]
pub fn scale(a: &[f64], s: f64) -> Point {
    a.iter().map(|x| x * s).collect()
}

/// `a + s * b`
#[inline]
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Point {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

#[inline]
pub fn add_assign(acc: &mut [f64], b: &[f64]) {
    for (x, y) in acc.iter_mut().zip(b) {
        *x += y;
    }
}

#[inline]
/// Borrowed views of a list of points.
pub fn as_refs(v: &[Point]) -> Vec<&[f64]> {
    v.iter().map(|p| p.as_slice()).collect()
}

pub fn zeros(n: usize) -> Point {
    vec![0.0; n]
}

/// Volume of the unit ball in `n` dimensions.
pub fn unit_ball_volume(n: usize) -> f64 {
    // V_0 = 1, V_1 = 2, V_n = V_{n-2} * 2π / n
    let mut v = [1.0, 2.0];
    if n < 2 {
        return v[n];
    }
    let mut out = 0.0;
    for k in 2..=n {
        out = v[k % 2] * 2.0 * std::f64::consts::PI / k as f64;
        v[k % 2] = out;
    }
    out
}
