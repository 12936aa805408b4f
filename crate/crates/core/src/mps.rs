//! Matrix-product-state trajectory engine.
//!
//! Each site holds one `χ_left × χ_right` matrix per physical state. The state
//! is kept in mixed-canonical form around an explicit orthogonality center,
//! which is moved with thin QR factorizations. Two-site gates contract the
//! pair, apply the gate, and split it again with a truncated SVD.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::circuit::{build_program, CircuitProgram, CircuitSpec};
use crate::error::{Error, Result};
use crate::gates::{Mat2, Mat4};
use crate::trajectory::{self, TrajectoryRecord, TrajectoryState, TruncationStats};

type Mat = DMatrix<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpsConfig {
    pub chi_max: usize,
    /// Largest relative discarded weight `Σ dropped s² / Σ s²` per split.
    pub trunc_tol: f64,
}

impl Default for MpsConfig {
    fn default() -> Self {
        MpsConfig { chi_max: 64, trunc_tol: 1e-10 }
    }
}

impl MpsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chi_max == 0 {
            return Err(Error::InvalidSpec("chi_max must be at least 1".into()));
        }
        if !(self.trunc_tol >= 0.0 && self.trunc_tol < 1.0) {
            return Err(Error::InvalidSpec(format!("trunc_tol {} outside [0, 1)", self.trunc_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MpsState {
    tensors: Vec<[Mat; 2]>,
    center: usize,
    config: MpsConfig,
    total: TruncationStats,
    pending: TruncationStats,
}

fn zeros(r: usize, c: usize) -> Mat {
    Mat::zeros(r, c)
}

impl MpsState {
    pub fn from_bits(bits: &[u8], config: MpsConfig) -> Self {
        let one = Mat::from_element(1, 1, C64::new(1.0, 0.0));
        let tensors = bits
            .iter()
            .map(|&b| if b == 0 { [one.clone(), zeros(1, 1)] } else { [zeros(1, 1), one.clone()] })
            .collect();
        MpsState {
            tensors,
            center: 0,
            config,
            total: TruncationStats { max_bond: 1, ..Default::default() },
            pending: TruncationStats::default(),
        }
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.tensors.len() - 1].iter().map(|t| t[0].ncols()).collect()
    }

    pub fn max_bond(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Cumulative truncation statistics since construction.
    pub fn truncation_totals(&self) -> TruncationStats {
        TruncationStats { max_bond: self.total.max_bond.max(self.max_bond()), ..self.total }
    }

    /// Statistics accumulated since the previous call.
    pub fn take_layer_stats(&mut self) -> TruncationStats {
        let mut s = std::mem::take(&mut self.pending);
        s.max_bond = self.max_bond();
        s
    }

    /// `⟨ψ|ψ⟩`, read at the orthogonality center.
    pub fn norm_sqr(&self) -> f64 {
        let t = &self.tensors[self.center];
        t[0].norm_squared() + t[1].norm_squared()
    }

    fn move_right(&mut self) {
        let j = self.center;
        let (cl, cr) = (self.tensors[j][0].nrows(), self.tensors[j][0].ncols());
        let mut m = zeros(2 * cl, cr);
        for s in 0..2 {
            m.view_mut((s * cl, 0), (cl, cr)).copy_from(&self.tensors[j][s]);
        }
        let qr = m.qr();
        let (q, r) = (qr.q(), qr.r());
        let k = q.ncols();
        for s in 0..2 {
            self.tensors[j][s] = q.view((s * cl, 0), (cl, k)).into_owned();
            self.tensors[j + 1][s] = &r * &self.tensors[j + 1][s];
        }
        self.center = j + 1;
    }

    fn move_left(&mut self) {
        let j = self.center;
        let (cl, cr) = (self.tensors[j][0].nrows(), self.tensors[j][0].ncols());
        let mut m = zeros(cl, 2 * cr);
        for s in 0..2 {
            m.view_mut((0, s * cr), (cl, cr)).copy_from(&self.tensors[j][s]);
        }
        // M = R† Q† from the QR of M†
        let qr = m.adjoint().qr();
        let (q, r) = (qr.q().adjoint(), qr.r().adjoint());
        let k = q.nrows();
        for s in 0..2 {
            self.tensors[j][s] = q.view((0, s * cr), (k, cr)).into_owned();
            self.tensors[j - 1][s] = &self.tensors[j - 1][s] * &r;
        }
        self.center = j - 1;
    }

    pub fn move_center(&mut self, site: usize) {
        while self.center < site {
            self.move_right();
        }
        while self.center > site {
            self.move_left();
        }
    }

    /// `⟨Z_x⟩ = P[0] − P[1]`, in `[−1, 1]`.
    pub fn local_z_expectation(&mut self, site: usize) -> Result<f64> {
        self.check_site(site)?;
        self.move_center(site);
        let t = &self.tensors[site];
        let (a, b) = (t[0].norm_squared(), t[1].norm_squared());
        Ok((a - b) / (a + b))
    }

    fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.tensors.len() {
            return Err(Error::OutOfRange { what: "site", index: site, limit: self.tensors.len() });
        }
        Ok(())
    }

    /// Contracts sites `bond`, `bond + 1`, applies `gate`, and splits with truncation.
    pub fn apply_two_site_gate(&mut self, bond: usize, gate: &Mat4) -> Result<()> {
        if bond + 1 >= self.tensors.len() {
            return Err(Error::OutOfRange { what: "bond", index: bond, limit: self.tensors.len() - 1 });
        }
        self.move_center(bond);
        let (cl, cr) = (self.tensors[bond][0].nrows(), self.tensors[bond + 1][0].ncols());
        let pairs: [[Mat; 2]; 2] = std::array::from_fn(|s1| {
            std::array::from_fn(|s2| &self.tensors[bond][s1] * &self.tensors[bond + 1][s2])
        });
        let mut theta = zeros(2 * cl, 2 * cr);
        for t1 in 0..2 {
            for t2 in 0..2 {
                let mut block = theta.view_mut((t1 * cl, t2 * cr), (cl, cr));
                for s1 in 0..2 {
                    for s2 in 0..2 {
                        let g = gate[2 * t1 + t2][2 * s1 + s2];
                        if g != C64::new(0.0, 0.0) {
                            block += &pairs[s1][s2] * g;
                        }
                    }
                }
            }
        }
        let (u, s, v_t) = sorted_svd(&theta, bond)?;
        let weights: Vec<f64> = s.iter().map(|x| x * x).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !(s[0] > f64::MIN_POSITIVE) {
            return Err(Error::RankCollapse { bond });
        }
        // smallest rank whose tail weight is within tolerance
        let mut keep = weights.len();
        let mut tail = 0.0;
        while keep > 1 && (tail + weights[keep - 1]) / total <= self.config.trunc_tol {
            tail += weights[keep - 1];
            keep -= 1;
        }
        if keep > self.config.chi_max {
            tail += weights[self.config.chi_max..keep].iter().sum::<f64>();
            keep = self.config.chi_max;
            self.pending.truncation_events += 1;
            self.total.truncation_events += 1;
        }
        let discarded = tail / total;
        self.pending.discarded_weight += discarded;
        self.total.discarded_weight += discarded;

        let kept_norm = (total - tail).sqrt();
        for t in 0..2 {
            let mut a = zeros(cl, keep);
            let mut b = zeros(keep, cr);
            for k in 0..keep {
                a.column_mut(k).copy_from(&u.view((t * cl, k), (cl, 1)));
                let scale = s[k] / kept_norm;
                for c in 0..cr {
                    b[(k, c)] = v_t[(k, t * cr + c)] * scale;
                }
            }
            self.tensors[bond][t] = a;
            self.tensors[bond + 1][t] = b;
        }
        self.center = bond + 1;
        self.total.max_bond = self.total.max_bond.max(keep);
        Ok(())
    }

    /// Single-site gates act on the local tensor directly, without truncation.
    pub fn apply_single_site_gate(&mut self, site: usize, gate: &Mat2) -> Result<()> {
        self.check_site(site)?;
        let [a, b] = &self.tensors[site];
        let na = a * gate[0][0] + b * gate[0][1];
        let nb = a * gate[1][0] + b * gate[1][1];
        self.tensors[site] = [na, nb];
        Ok(())
    }
}

/// Thin SVD `θ = U S V†` with singular values in non-increasing order;
/// returns `(U, S, V†)`.
fn sorted_svd(theta: &Mat, bond: usize) -> Result<(Mat, Vec<f64>, Mat)> {
    let (r, c) = theta.shape();
    let m = faer::Mat::<C64>::from_fn(r, c, |i, j| theta[(i, j)]);
    let svd = m.thin_svd().map_err(|_| Error::RankCollapse { bond })?;
    let (u, v) = (svd.U(), svd.V());
    let sv = svd.S().column_vector();
    let k = sv.nrows();
    let mut order: Vec<usize> = (0..k).collect();
    let s_raw: Vec<f64> = (0..k).map(|i| sv[i].re).collect();
    order.sort_by(|&a, &b| s_raw[b].total_cmp(&s_raw[a]));
    let s = order.iter().map(|&i| s_raw[i]).collect();
    let u_out = Mat::from_fn(r, k, |i, j| u[(i, order[j])]);
    let v_t = Mat::from_fn(k, c, |i, j| v[(j, order[i])].conj());
    Ok((u_out, s, v_t))
}

impl TrajectoryState for MpsState {
    fn sites(&self) -> usize {
        self.tensors.len()
    }

    fn apply_site_gate(&mut self, site: usize, gate: &Mat2) -> Result<()> {
        self.apply_single_site_gate(site, gate)
    }

    fn apply_bond_gate(&mut self, bond: usize, gate: &Mat4) -> Result<()> {
        self.apply_two_site_gate(bond, gate)
    }

    fn prob_zero(&mut self, site: usize) -> Result<f64> {
        Ok((1.0 + self.local_z_expectation(site)?) / 2.0)
    }

    fn project(&mut self, site: usize, outcome: u8, prob: f64) -> Result<()> {
        self.check_site(site)?;
        self.move_center(site);
        let keep = outcome as usize;
        let (r, c) = self.tensors[site][0].shape();
        self.tensors[site][1 - keep] = zeros(r, c);
        self.tensors[site][keep] /= C64::new(prob.sqrt(), 0.0);
        Ok(())
    }

    fn occupations(&mut self) -> Result<Vec<f64>> {
        let sites = self.tensors.len();
        let mut out = vec![0.0; sites];
        let sweep: Vec<usize> = if self.center <= sites / 2 {
            (0..sites).collect()
        } else {
            (0..sites).rev().collect()
        };
        for x in sweep {
            out[x] = self.prob_zero(x)?;
        }
        Ok(out)
    }
}

pub fn run_program_trajectory(
    program: &CircuitProgram,
    config: MpsConfig,
    master_seed: u64,
    realization: usize,
    trajectory: usize,
) -> Result<TrajectoryRecord> {
    config.validate()?;
    let mut state = MpsState::from_bits(&program.initial_bits, config);
    let mut stats = Vec::with_capacity(program.depth());
    let mut record = trajectory::run_program(&mut state, program, master_seed, realization, trajectory, |s| {
        stats.push(s.take_layer_stats())
    })?;
    record.truncation = Some(stats);
    Ok(record)
}

pub fn run_trajectory_mps(
    spec: &CircuitSpec,
    config: MpsConfig,
    realization: usize,
    trajectory: usize,
) -> Result<TrajectoryRecord> {
    let program = build_program(spec, realization)?;
    run_program_trajectory(&program, config, spec.master_seed, realization, trajectory)
}
