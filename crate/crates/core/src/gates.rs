//! Small dense gate matrices used by every engine.
//!
//! Two-site matrices act on the local basis `|a, b⟩` with local index `2a + b`,
//! where `a` is the bit of the left site of the bond and `b` the bit of the
//! right site. Bit value 0 is the occupied state.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

pub type Mat2 = [[C64; 2]; 2];
pub type Mat4 = [[C64; 4]; 4];

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Order of the rotation and CZ parts inside one bond block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOrder {
    /// `CZ · (R ⊗ R)`: rotations act first.
    #[default]
    RotationsFirst,
    /// `(R ⊗ R) · CZ`: CZ acts first.
    CzFirst,
}

pub fn identity2() -> Mat2 {
    [[ONE, ZERO], [ZERO, ONE]]
}

pub fn identity4() -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = ONE;
    }
    m
}

/// `exp(-i θ X / 2)`.
pub fn rx(theta: f64) -> Mat2 {
    let c = C64::new((theta / 2.0).cos(), 0.0);
    let s = C64::new(0.0, -(theta / 2.0).sin());
    [[c, s], [s, c]]
}

pub fn pauli_x() -> Mat2 {
    [[ZERO, ONE], [ONE, ZERO]]
}

pub fn sqrt_x() -> Mat2 {
    let a = C64::new(0.5, 0.5);
    let b = C64::new(0.5, -0.5);
    [[a, b], [b, a]]
}

/// Projector onto outcome `m` of a Z-basis measurement.
pub fn projector(m: u8) -> Mat2 {
    if m == 0 {
        [[ONE, ZERO], [ZERO, ZERO]]
    } else {
        [[ZERO, ZERO], [ZERO, ONE]]
    }
}

pub fn cz() -> Mat4 {
    let mut m = identity4();
    m[3][3] = -ONE;
    m
}

pub fn swap() -> Mat4 {
    let mut m = [[ZERO; 4]; 4];
    m[0][0] = ONE;
    m[1][2] = ONE;
    m[2][1] = ONE;
    m[3][3] = ONE;
    m
}

pub fn scale2(a: &Mat2, s: f64) -> Mat2 {
    let mut out = *a;
    out.iter_mut().flatten().for_each(|z| *z *= s);
    out
}

pub fn scale4(a: &Mat4, s: f64) -> Mat4 {
    let mut out = *a;
    out.iter_mut().flatten().for_each(|z| *z *= s);
    out
}

pub fn mul2(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut out = [[ZERO; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn dagger2(a: &Mat2) -> Mat2 {
    [[a[0][0].conj(), a[1][0].conj()], [a[0][1].conj(), a[1][1].conj()]]
}

pub fn dagger4(a: &Mat4) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i].conj();
        }
    }
    out
}

/// `a ⊗ b`, with `a` on the left site of the bond.
pub fn kron(a: &Mat2, b: &Mat2) -> Mat4 {
    let mut out = [[ZERO; 4]; 4];
    for (i, j, k, l) in bit_quads() {
        out[2 * i + k][2 * j + l] = a[i][j] * b[k][l];
    }
    out
}

fn bit_quads() -> impl Iterator<Item = (usize, usize, usize, usize)> {
    (0..16).map(|n| (n >> 3 & 1, n >> 2 & 1, n >> 1 & 1, n & 1))
}

/// Scrambling block on one bond with the two sites' own rotation angles.
pub fn bond_block(theta_left: f64, theta_right: f64, order: BlockOrder) -> Mat4 {
    let rot = kron(&rx(theta_left), &rx(theta_right));
    match order {
        BlockOrder::RotationsFirst => mul4(&cz(), &rot),
        BlockOrder::CzFirst => mul4(&rot, &cz()),
    }
}

/// Max-norm distance between `a` and `e^{iφ} b`, with φ fixed by the largest entry of `b`.
pub fn distance_up_to_phase(a: &Mat4, b: &Mat4) -> f64 {
    let (mut bi, mut bj, mut best) = (0, 0, 0.0);
    for i in 0..4 {
        for j in 0..4 {
            if b[i][j].norm() > best {
                best = b[i][j].norm();
                bi = i;
                bj = j;
            }
        }
    }
    if best == 0.0 {
        return a.iter().flatten().map(|z| z.norm()).fold(0.0, f64::max);
    }
    let ratio = a[bi][bj] / b[bi][bj];
    let phase = if ratio.norm() > 0.0 { ratio / ratio.norm() } else { ONE };
    let mut worst: f64 = 0.0;
    for i in 0..4 {
        for j in 0..4 {
            worst = worst.max((a[i][j] - phase * b[i][j]).norm());
        }
    }
    worst
}

pub fn is_unitary4(a: &Mat4, tol: f64) -> bool {
    let p = mul4(&dagger4(a), a);
    let id = identity4();
    p.iter()
        .flatten()
        .zip(id.iter().flatten())
        .all(|(x, y)| (x - y).norm() < tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn rx_pi_is_x_up_to_phase() {
        let r = rx(PI);
        assert!((r[0][1] - C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!(r[0][0].norm() < 1e-15);
    }

    #[test]
    fn sqrt_x_squares_to_x() {
        let s = mul2(&sqrt_x(), &sqrt_x());
        let x = pauli_x();
        for i in 0..2 {
            for j in 0..2 {
                assert!((s[i][j] - x[i][j]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn kron_places_left_factor_on_high_local_bit() {
        let k = kron(&pauli_x(), &identity2());
        // |0,0⟩ -> |1,0⟩ i.e. local index 0 -> 2
        assert_eq!(k[2][0], ONE);
        assert_eq!(k[1][1], ZERO);
    }

    #[test]
    fn blocks_are_unitary() {
        for order in [BlockOrder::RotationsFirst, BlockOrder::CzFirst] {
            assert!(is_unitary4(&bond_block(0.3, 0.9, order), 1e-14));
        }
        assert!(is_unitary4(&swap(), 1e-15));
    }
}
