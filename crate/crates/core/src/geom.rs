//! Small fixed-size vector helpers and angle conventions.

use std::f64::consts::PI;

pub type Vec3 = [f64; 3];

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn norm(a: Vec3) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Clamps `a` to at most `max_norm` in Euclidean norm.
pub fn clamp_norm(a: Vec3, max_norm: f64) -> Vec3 {
    let n = norm(a);
    if n > max_norm && n > 0.0 {
        scale(a, max_norm / n)
    } else {
        a
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Componentwise Euler-angle wrap into (-pi, pi].
pub fn wrap_euler(e: Vec3) -> Vec3 {
    [wrap_angle(e[0]), wrap_angle(e[1]), wrap_angle(e[2])]
}

pub fn is_finite(a: Vec3) -> bool {
    a.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_convention() {
        assert!((wrap_angle(PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(PI + PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
    }

    #[test]
    fn clamp_norm_limits() {
        let v = clamp_norm([3.0, 4.0, 0.0], 1.0);
        assert!((norm(v) - 1.0).abs() < 1e-12);
        let w = clamp_norm([0.1, 0.0, 0.0], 1.0);
        assert_eq!(w, [0.1, 0.0, 0.0]);
    }
}
