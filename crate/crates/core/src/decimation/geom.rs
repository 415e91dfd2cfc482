use crate::scalar::Real;

pub(crate) fn sub<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot<T: Real>(a: [T; 3], b: [T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross<T: Real>(a: [T; 3], b: [T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn face_normal<T: Real>(a: [T; 3], b: [T; 3], c: [T; 3]) -> [T; 3] {
    cross(sub(b, a), sub(c, a))
}

/// Barycentric weights of the point of triangle `abc` closest to `p`.
pub(crate) fn closest_point_weights<T: Real>(p: [T; 3], a: [T; 3], b: [T; 3], c: [T; 3]) -> [T; 3] {
    let (zero, one) = (T::zero(), T::one());
    let ab = sub(b, a);
    let ac = sub(c, a);
    let ap = sub(p, a);
    let d1 = dot(ab, ap);
    let d2 = dot(ac, ap);
    if d1 <= zero && d2 <= zero {
        return [one, zero, zero];
    }
    let bp = sub(p, b);
    let d3 = dot(ab, bp);
    let d4 = dot(ac, bp);
    if d3 >= zero && d4 <= d3 {
        return [zero, one, zero];
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= zero && d1 >= zero && d3 <= zero {
        let v = d1 / (d1 - d3);
        return [one - v, v, zero];
    }
    let cp = sub(p, c);
    let d5 = dot(ab, cp);
    let d6 = dot(ac, cp);
    if d6 >= zero && d5 <= d6 {
        return [zero, zero, one];
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= zero && d2 >= zero && d6 <= zero {
        let w = d2 / (d2 - d6);
        return [one - w, zero, w];
    }
    let va = d3 * d6 - d5 * d4;
    if va <= zero && d4 - d3 >= zero && d5 - d6 >= zero {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return [zero, one - w, w];
    }
    let total = va + vb + vc;
    if !(total > zero) {
        // degenerate triangle: fall back to the nearest corner
        let da = dot(ap, ap);
        let db = dot(bp, bp);
        let dc = dot(cp, cp);
        return if da <= db && da <= dc {
            [one, zero, zero]
        } else if db <= dc {
            [zero, one, zero]
        } else {
            [zero, zero, one]
        };
    }
    let v = vb / total;
    let w = vc / total;
    [one - v - w, v, w]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_and_outside_projections() {
        let (a, b, c): ([f64; 3], [f64; 3], [f64; 3]) = ([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let w = closest_point_weights([0.25, 0.25, 3.0], a, b, c);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15);
        assert_eq!(closest_point_weights([-1.0, -1.0, 0.0], a, b, c), [1.0, 0.0, 0.0]);
        assert_eq!(closest_point_weights([2.0, -0.5, 0.0], a, b, c), [0.0, 1.0, 0.0]);
        assert_eq!(closest_point_weights([0.0, 1.0, 0.0], a, b, c), [0.0, 0.0, 1.0]);
        let e = closest_point_weights([0.5, -2.0, 0.0], a, b, c);
        assert_eq!(e, [0.5, 0.5, 0.0]);
    }
}
