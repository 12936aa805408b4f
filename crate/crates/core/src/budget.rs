//! Calibration-based time, error and survival-fidelity estimates, and
//! readout-aware selection of measurement patterns.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Median device calibration. Times in the units named by each field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationData {
    pub t1_us: f64,
    pub t2_us: f64,
    pub tau_1q_ns: f64,
    pub tau_2q_ns: f64,
    pub tau_m_ns: f64,
    pub r_2q: f64,
    pub r_m: f64,
}

impl CalibrationData {
    /// Calibration used when no file is given.
    pub fn reference() -> Self {
        CalibrationData {
            t1_us: 142.5,
            t2_us: 95.1,
            tau_1q_ns: 24.0,
            tau_2q_ns: 68.0,
            tau_m_ns: 1560.0,
            r_2q: 2.6e-3,
            r_m: 9.4e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let times = [
            ("t1_us", self.t1_us),
            ("t2_us", self.t2_us),
            ("tau_1q_ns", self.tau_1q_ns),
            ("tau_2q_ns", self.tau_2q_ns),
            ("tau_m_ns", self.tau_m_ns),
        ];
        for (name, v) in times {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("r_2q", self.r_2q), ("r_m", self.r_m)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Validation(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// Parses a TOML document holding exactly the seven calibration keys.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let calib: CalibrationData = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        calib.validate()?;
        Ok(calib)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackKind {
    CondX,
    CondSwap,
}

impl std::str::FromStr for FeedbackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cond_x" => Ok(FeedbackKind::CondX),
            "cond_swap" => Ok(FeedbackKind::CondSwap),
            other => Err(Error::Parse(format!("unknown feedback kind {other:?} (expected cond_x or cond_swap)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerDuration {
    pub tau_u_ns: f64,
    pub tau_cond_ns: f64,
    pub tau_layer_us: f64,
}

/// `τ_U = 2τ_2q + 2τ_1q`, `τ_layer = τ_U + τ_m + τ_cond`. The conditional
/// step costs one single-qubit gate for X and the native SWAP
/// (3 CZ + 6 √X) for SWAP.
pub fn layer_duration(calib: &CalibrationData, feedback: FeedbackKind) -> LayerDuration {
    let tau_u_ns = 2.0 * calib.tau_2q_ns + 2.0 * calib.tau_1q_ns;
    let tau_cond_ns = match feedback {
        FeedbackKind::CondX => calib.tau_1q_ns,
        FeedbackKind::CondSwap => 3.0 * calib.tau_2q_ns + 6.0 * calib.tau_1q_ns,
    };
    LayerDuration { tau_u_ns, tau_cond_ns, tau_layer_us: (tau_u_ns + calib.tau_m_ns + tau_cond_ns) / 1000.0 }
}

/// `ε = (L − 1) r_2q + p L r_m + τ_layer / T2` with the conditional-X layer time.
pub fn layer_error(calib: &CalibrationData, sites: usize, p: f64) -> Result<f64> {
    layer_error_for(calib, sites, p, FeedbackKind::CondX)
}

/// Same as [`layer_error`] with the layer time of the given feedback kind.
pub fn layer_error_for(calib: &CalibrationData, sites: usize, p: f64, feedback: FeedbackKind) -> Result<f64> {
    if sites < 2 {
        return Err(Error::InvalidSpec(format!("need at least 2 sites, got {sites}")));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidSpec(format!("measurement probability {p} outside [0, 1]")));
    }
    let tau = layer_duration(calib, feedback).tau_layer_us;
    Ok((sites - 1) as f64 * calib.r_2q + p * sites as f64 * calib.r_m + tau / calib.t2_us)
}

/// `F = exp(−n ε)`.
pub fn survival_fidelity(layers: usize, sites: usize, p: f64, calib: &CalibrationData) -> Result<f64> {
    Ok((-(layers as f64) * layer_error(calib, sites, p)?).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub sites: usize,
    pub p: f64,
    pub depth: usize,
    pub feedback: FeedbackKind,
    pub tau_u_ns: f64,
    pub tau_cond_ns: f64,
    pub tau_layer_us: f64,
    pub n_2q: usize,
    pub n_m: f64,
    pub eps_layer: f64,
    pub fidelity: f64,
}

impl BudgetReport {
    pub fn to_text(&self) -> String {
        let rows = [
            ("sites", self.sites.to_string()),
            ("p", format!("{}", self.p)),
            ("depth", self.depth.to_string()),
            ("feedback", format!("{:?}", self.feedback)),
            ("tau_U [ns]", format!("{:.1}", self.tau_u_ns)),
            ("tau_cond [ns]", format!("{:.1}", self.tau_cond_ns)),
            ("tau_layer [us]", format!("{:.4}", self.tau_layer_us)),
            ("N_2q", self.n_2q.to_string()),
            ("N_m", format!("{:.3}", self.n_m)),
            ("eps_layer", format!("{:.4}", self.eps_layer)),
            ("F(depth)", format!("{:.4e}", self.fidelity)),
            ("note", "T1 is stored but does not enter eps_layer".to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k:<16}{v}\n")).collect()
    }
}

pub fn budget_report(
    calib: &CalibrationData,
    sites: usize,
    p: f64,
    depth: usize,
    feedback: FeedbackKind,
) -> Result<BudgetReport> {
    calib.validate()?;
    let duration = layer_duration(calib, feedback);
    let eps = layer_error_for(calib, sites, p, feedback)?;
    Ok(BudgetReport {
        sites,
        p,
        depth,
        feedback,
        tau_u_ns: duration.tau_u_ns,
        tau_cond_ns: duration.tau_cond_ns,
        tau_layer_us: duration.tau_layer_us,
        n_2q: sites - 1,
        n_m: p * sites as f64,
        eps_layer: eps,
        fidelity: (-(depth as f64) * eps).exp(),
    })
}

/// Total readout error of a pattern: the sum over layers and measured sites.
pub fn pattern_readout_cost(pattern: &[Vec<usize>], readout: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &site in pattern.iter().flatten() {
        total += *readout
            .get(site)
            .ok_or(Error::OutOfRange { what: "site", index: site, limit: readout.len() })?;
    }
    Ok(total)
}

/// Index of the candidate with the least total readout error; ties go to the
/// lowest index.
pub fn select_measurement_pattern(candidates: &[Vec<Vec<usize>>], readout: &[f64]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let cost = pattern_readout_cost(c, readout)?;
        if cost < best.1 {
            best = (i, cost);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn reference_durations() {
        let d = layer_duration(&CalibrationData::reference(), FeedbackKind::CondX);
        assert!((d.tau_u_ns - 184.0).abs() < 1e-12);
        assert!((d.tau_layer_us - 1.768).abs() < 1e-12);
        let swap = layer_duration(&CalibrationData::reference(), FeedbackKind::CondSwap);
        assert!((swap.tau_cond_ns - (3.0 * 68.0 + 6.0 * 24.0)).abs() < 1e-12);
        let bare = CalibrationData { tau_m_ns: 1e-300, ..CalibrationData::reference() };
        let d = layer_duration(&bare, FeedbackKind::CondX);
        assert!((d.tau_layer_us * 1000.0 - d.tau_u_ns - d.tau_cond_ns).abs() < 1e-9);
    }

    #[test]
    fn printed_layer_errors() {
        let c = CalibrationData::reference();
        let printed = [(50, 0.01, 0.151), (80, 0.01, 0.232), (100, 0.01, 0.285), (50, 0.1, 0.193), (80, 0.1, 0.299), (100, 0.1, 0.370)];
        for (l, p, want) in printed {
            let eps = layer_error(&c, l, p).unwrap();
            assert!((eps - want).abs() <= 0.002, "L={l} p={p}: {eps}");
        }
    }

    #[test]
    fn vanishing_error_rates_give_vanishing_eps() {
        let c = CalibrationData { r_2q: 1e-300, r_m: 1e-300, t2_us: 1e300, ..CalibrationData::reference() };
        assert!(layer_error(&c, 100, 0.5).unwrap() < 1e-200);
    }

    #[test]
    fn fidelity_examples() {
        let c = CalibrationData::reference();
        assert_eq!(survival_fidelity(0, 50, 0.01, &c).unwrap(), 1.0);
        let f = survival_fidelity(10, 50, 0.01, &c).unwrap();
        assert!((f - (-1.51f64).exp()).abs() < 0.01);
    }

    #[test]
    fn calibration_file_parsing() {
        let text = "t1_us = 142.5\nt2_us = 95.1\ntau_1q_ns = 24\ntau_2q_ns = 68\ntau_m_ns = 1560\nr_2q = 0.0026\nr_m = 0.0094\n";
        assert_eq!(CalibrationData::from_toml_str(text).unwrap(), CalibrationData::reference());
        let extra = format!("{text}r_1q = 0.001\n");
        assert!(matches!(CalibrationData::from_toml_str(&extra), Err(Error::Parse(m)) if m.contains("r_1q")));
        let bad = text.replace("r_m = 0.0094", "r_m = 1.5");
        assert!(matches!(CalibrationData::from_toml_str(&bad), Err(Error::Validation(_))));
    }

    #[test]
    fn pattern_selection() {
        let readout = [0.01, 0.02, 0.05];
        assert_eq!(select_measurement_pattern(&[vec![vec![2]]], &readout).unwrap(), 0);
        let dominated = vec![vec![1, 2]];
        let better = vec![vec![0, 1]];
        assert_eq!(select_measurement_pattern(&[dominated.clone(), better.clone()], &readout).unwrap(), 1);
        assert_eq!(select_measurement_pattern(&[better.clone(), better], &readout).unwrap(), 0);
        assert_eq!(select_measurement_pattern(&[], &readout), Err(Error::EmptyPool));
    }

    #[test]
    fn random_pools_match_exhaustive_minimum() {
        let mut rng = stream_rng(77);
        for _ in 0..20 {
            let sites = 12;
            let readout: Vec<f64> = (0..sites).map(|_| rng.random::<f64>() * 0.05).collect();
            let pool: Vec<Vec<Vec<usize>>> = (0..100)
                .map(|_| {
                    (0..4)
                        .map(|_| (0..sites).filter(|_| rng.random::<f64>() < 0.3).collect())
                        .collect()
                })
                .collect();
            let costs: Vec<f64> = pool.iter().map(|c| pattern_readout_cost(c, &readout).unwrap()).collect();
            let min = costs.iter().cloned().fold(f64::INFINITY, f64::min);
            let chosen = select_measurement_pattern(&pool, &readout).unwrap();
            assert_eq!(costs[chosen], min);
            assert!(costs[..chosen].iter().all(|&c| c > min));
        }
    }

    proptest! {
        #[test]
        fn eps_is_affine_in_sites_and_p(l in 2usize..200, p in 0.0f64..1.0) {
            let c = CalibrationData::reference();
            let e = |l: usize, p: f64| layer_error(&c, l, p).unwrap();
            // second differences vanish for an affine function
            prop_assert!((e(l + 2, p) - 2.0 * e(l + 1, p) + e(l, p)).abs() < 1e-12);
            let q = p / 2.0;
            prop_assert!((e(l, p) - 2.0 * e(l, (p + q) / 2.0) + e(l, q)).abs() < 1e-12);
        }

        #[test]
        fn fidelity_is_monotone(n in 0usize..50, l in 2usize..150, p in 0.0f64..0.9) {
            let c = CalibrationData::reference();
            let f = survival_fidelity(n, l, p, &c).unwrap();
            prop_assert!(f > 0.0 && f <= 1.0);
            prop_assert!(survival_fidelity(n + 1, l, p, &c).unwrap() <= f);
            prop_assert!(survival_fidelity(n, l + 1, p, &c).unwrap() <= f);
            prop_assert!(survival_fidelity(n, l, p + 0.1, &c).unwrap() <= f);
        }

        #[test]
        fn selection_ignores_order_up_to_ties(seed in 0u64..1000) {
            let mut rng = stream_rng(seed);
            let readout: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
            let pool: Vec<Vec<Vec<usize>>> = (0..10)
                .map(|_| vec![(0..8).filter(|_| rng.random::<f64>() < 0.5).collect()])
                .collect();
            let mut reversed = pool.clone();
            reversed.reverse();
            let a = select_measurement_pattern(&pool, &readout).unwrap();
            let b = select_measurement_pattern(&reversed, &readout).unwrap();
            let cost = |c: &Vec<Vec<usize>>| pattern_readout_cost(c, &readout).unwrap();
            prop_assert_eq!(cost(&pool[a]), cost(&reversed[b]));
        }
    }
}
