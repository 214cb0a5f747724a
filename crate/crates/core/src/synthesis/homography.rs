//! Four-point projective transforms.

use serde::{Deserialize, Serialize};

use super::SynthesisError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Corner points ordered top-left, top-right, bottom-right, bottom-left.
pub type Quad = [Point; 4];

const UNIT_SQUARE: Quad = [
    Point::new(0.0, 0.0),
    Point::new(1.0, 0.0),
    Point::new(1.0, 1.0),
    Point::new(0.0, 1.0),
];

/// Row-major 3x3 projective matrix with the bottom-right entry fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        Point {
            x: (m[0][0] * p.x + m[0][1] * p.y + m[0][2]) / w,
            y: (m[1][0] * p.x + m[1][1] * p.y + m[1][2]) / w,
        }
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Option<Homography> {
        let det = self.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return None;
        }
        let m = &self.m;
        let mut inv = [[0.0; 3]; 3];
        inv[0][0] = m[1][1] * m[2][2] - m[1][2] * m[2][1];
        inv[0][1] = m[0][2] * m[2][1] - m[0][1] * m[2][2];
        inv[0][2] = m[0][1] * m[1][2] - m[0][2] * m[1][1];
        inv[1][0] = m[1][2] * m[2][0] - m[1][0] * m[2][2];
        inv[1][1] = m[0][0] * m[2][2] - m[0][2] * m[2][0];
        inv[1][2] = m[0][2] * m[1][0] - m[0][0] * m[1][2];
        inv[2][0] = m[1][0] * m[2][1] - m[1][1] * m[2][0];
        inv[2][1] = m[0][1] * m[2][0] - m[0][0] * m[2][1];
        inv[2][2] = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let s = inv[2][2];
        if s.abs() < 1e-15 {
            return None;
        }
        for row in &mut inv {
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        Some(Homography { m: inv })
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Reject quads with (near-)collinear corner triples or non-convex outline.
pub fn check_quad(quad: &Quad) -> Result<(), SynthesisError> {
    let scale = quad
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0f64, f64::max);
    let tol = 1e-9 * scale * scale;
    let mut sign = 0.0;
    for i in 0..4 {
        let c = cross(quad[i], quad[(i + 1) % 4], quad[(i + 2) % 4]);
        if c.abs() <= tol {
            return Err(SynthesisError::DegenerateQuad);
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return Err(SynthesisError::DegenerateQuad);
        }
    }
    Ok(())
}

/// Solve for the homography taking the unit square corners
/// (0,0), (1,0), (1,1), (0,1) onto `quad` in order.
pub fn homography_from_quad(quad: &Quad) -> Result<Homography, SynthesisError> {
    check_quad(quad)?;
    // Unknowns h00 h01 h02 h10 h11 h12 h20 h21; two equations per corner.
    let mut a = [[0.0f64; 9]; 8];
    for (i, (src, dst)) in UNIT_SQUARE.iter().zip(quad).enumerate() {
        let (u, v, x, y) = (src.x, src.y, dst.x, dst.y);
        a[2 * i] = [u, v, 1.0, 0.0, 0.0, 0.0, -u * x, -v * x, x];
        a[2 * i + 1] = [0.0, 0.0, 0.0, u, v, 1.0, -u * y, -v * y, y];
    }
    let h = solve_augmented(a).ok_or(SynthesisError::DegenerateQuad)?;
    let hom = Homography {
        m: [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]],
    };
    if hom.inverse().is_none() {
        return Err(SynthesisError::DegenerateQuad);
    }
    Ok(hom)
}

/// Gaussian elimination with partial pivoting on an 8x9 augmented system.
fn solve_augmented(mut a: [[f64; 9]; 8]) -> Option<[f64; 8]> {
    const N: usize = 8;
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..N {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for k in col..=N {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = [0.0; N];
    for row in (0..N).rev() {
        let mut s = a[row][N];
        for k in row + 1..N {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(dx: f64, dy: f64) -> Quad {
        UNIT_SQUARE.map(|p| Point::new(p.x + dx, p.y + dy))
    }

    #[test]
    fn unit_square_gives_identity() {
        let h = homography_from_quad(&UNIT_SQUARE).unwrap();
        for (r, row) in h.m.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12, "m[{r}][{c}] = {v}");
            }
        }
    }

    #[test]
    fn translated_square_puts_offset_in_last_column() {
        // Hand solution: u + 10 = x, v + 20 = y with no projective terms,
        // so H = [[1,0,10],[0,1,20],[0,0,1]].
        let h = homography_from_quad(&square(10.0, 20.0)).unwrap();
        let expect = [[1.0, 0.0, 10.0], [0.0, 1.0, 20.0], [0.0, 0.0, 1.0]];
        for r in 0..3 {
            for c in 0..3 {
                assert!((h.m[r][c] - expect[r][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn collinear_corners_are_degenerate() {
        let quad = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(0.0, 1.0),
        ];
        assert!(matches!(homography_from_quad(&quad), Err(SynthesisError::DegenerateQuad)));
    }

    #[test]
    fn bowtie_is_rejected() {
        let quad = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ];
        assert!(homography_from_quad(&quad).is_err());
    }

    fn arb_quad() -> impl Strategy<Value = Quad> {
        // jittered rectangles stay convex
        (
            10.0..60.0f64,
            10.0..60.0f64,
            20.0..80.0f64,
            20.0..80.0f64,
            prop::array::uniform8(-4.0..4.0f64),
        )
            .prop_map(|(x, y, w, h, j)| {
                [
                    Point::new(x + j[0], y + j[1]),
                    Point::new(x + w + j[2], y + j[3]),
                    Point::new(x + w + j[4], y + h + j[5]),
                    Point::new(x + j[6], y + h + j[7]),
                ]
            })
    }

    proptest! {
        #[test]
        fn corners_round_trip(quad in arb_quad()) {
            let h = homography_from_quad(&quad).unwrap();
            for (src, dst) in UNIT_SQUARE.iter().zip(&quad) {
                let p = h.apply(*src);
                prop_assert!((p.x - dst.x).abs() < 1e-6 && (p.y - dst.y).abs() < 1e-6);
            }
            let inv = h.inverse().unwrap();
            for (src, dst) in UNIT_SQUARE.iter().zip(&quad) {
                let p = inv.apply(*dst);
                prop_assert!((p.x - src.x).abs() < 1e-6 && (p.y - src.y).abs() < 1e-6);
            }
        }
    }
}
