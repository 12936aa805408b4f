//! Density series and the scalar diagnostics derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard on the total density below which normalized observables are undefined.
pub const VANISHING_DENSITY: f64 = 1e-9;

/// Per-layer, per-site occupations `⟨n_x(i)⟩` for `i = 0..=depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySeries {
    pub engine: String,
    pub sites: usize,
    pub depth: usize,
    pub values: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub realizations: usize,
}

impl DensitySeries {
    pub fn new(
        engine: impl Into<String>,
        values: Vec<Vec<f64>>,
        stderr: Vec<Vec<f64>>,
        realizations: usize,
    ) -> Result<Self> {
        let sites = values.first().map_or(0, Vec::len);
        if values.is_empty() || sites == 0 {
            return Err(Error::ShapeMismatch("density series needs at least one layer of sites".into()));
        }
        if values.iter().chain(stderr.iter()).any(|row| row.len() != sites) || stderr.len() != values.len() {
            return Err(Error::ShapeMismatch("density series is not rectangular".into()));
        }
        if let Some(v) = values.iter().flatten().find(|v| !(-1e-9..=1.0 + 1e-9).contains(*v)) {
            return Err(Error::ShapeMismatch(format!("density {v} outside [0, 1]")));
        }
        Ok(DensitySeries {
            engine: engine.into(),
            sites,
            depth: values.len() - 1,
            values,
            stderr,
            realizations,
        })
    }

    /// Series with zero standard error (exact engines).
    pub fn exact(engine: impl Into<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let stderr = values.iter().map(|r| vec![0.0; r.len()]).collect();
        Self::new(engine, values, stderr, 1)
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn center_of_mass(&self) -> Result<Vec<f64>> {
        self.values.iter().map(|d| center_of_mass(d)).collect()
    }

    pub fn polarization(&self) -> Result<Vec<f64>> {
        self.values.iter().map(|d| polarization(d)).collect()
    }

    pub fn com_shift(&self) -> Result<Vec<f64>> {
        com_shift(self)
    }
}

fn total_density(densities: &[f64]) -> Result<f64> {
    let total: f64 = densities.iter().sum();
    if total <= VANISHING_DENSITY {
        return Err(Error::VanishingDensity { total });
    }
    Ok(total)
}

/// `N^c = Σ x n_x / Σ n_x`.
pub fn center_of_mass(densities: &[f64]) -> Result<f64> {
    let total = total_density(densities)?;
    let weighted: f64 = densities.iter().enumerate().map(|(x, n)| x as f64 * n).sum();
    Ok(weighted / total)
}

/// `J^c = (n_{L−1} − n_0) / Σ n_x`.
pub fn polarization(densities: &[f64]) -> Result<f64> {
    let total = total_density(densities)?;
    let last = *densities.last().unwrap_or(&0.0);
    Ok((last - densities[0]) / total)
}

/// `δN^c(i) = L·(N^c(i) − N^c(1))`, referenced to the first evolved layer.
pub fn com_shift(series: &DensitySeries) -> Result<Vec<f64>> {
    if series.depth < 1 {
        return Err(Error::ShapeMismatch("center-of-mass shift needs depth ≥ 1".into()));
    }
    let com = series.center_of_mass()?;
    let reference = com[1];
    Ok(com.iter().map(|c| series.sites as f64 * (c - reference)).collect())
}

/// A per-layer scalar observable with its spread across realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarSeries {
    pub name: String,
    pub values: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub mean_abs_dev: Vec<f64>,
    pub n_realizations: usize,
}

impl ScalarSeries {
    /// Standard error of the mean across realizations.
    pub fn std_err(&self) -> Vec<f64> {
        let n = self.n_realizations.max(1) as f64;
        self.std_dev.iter().map(|s| s / n.sqrt()).collect()
    }

    fn from_samples(name: &str, samples: &[Vec<f64>]) -> Self {
        let layers = samples[0].len();
        let mut out = ScalarSeries {
            name: name.to_string(),
            values: Vec::with_capacity(layers),
            std_dev: Vec::with_capacity(layers),
            mean_abs_dev: Vec::with_capacity(layers),
            n_realizations: samples.len(),
        };
        for i in 0..layers {
            let column: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            let stats = Stats::of(&column);
            out.values.push(stats.mean);
            out.std_dev.push(stats.std_dev);
            out.mean_abs_dev.push(stats.mean_abs_dev);
        }
        out
    }
}

/// Mean, sample standard deviation (zero for a single sample) and mean absolute deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std_dev: f64,
    pub mean_abs_dev: f64,
}

impl Stats {
    pub fn of(samples: &[f64]) -> Stats {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
        let std_dev = if samples.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
        let mean_abs_dev = samples.iter().map(|x| (x - mean).abs()).sum::<f64>() / n;
        Stats { mean, std_dev, mean_abs_dev }
    }
}

/// Realization-averaged profile plus per-realization scalar observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationSummary {
    /// Mean profile; `stderr` holds the standard deviation across realizations.
    pub mean: DensitySeries,
    pub center_of_mass: ScalarSeries,
    pub com_shift: Option<ScalarSeries>,
    pub polarization: ScalarSeries,
}

impl RealizationSummary {
    pub fn scalars(&self) -> Vec<&ScalarSeries> {
        let mut out = vec![&self.center_of_mass];
        if let Some(s) = &self.com_shift {
            out.push(s);
        }
        out.push(&self.polarization);
        out
    }
}

/// Aggregates independent realizations. Scalars are evaluated on each
/// realization first and then averaged, because the normalization in
/// `N^c` and `J^c` is nonlinear.
pub fn aggregate_realizations(series: &[DensitySeries]) -> Result<RealizationSummary> {
    let first = series
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no realizations to aggregate".into()))?;
    if let Some(bad) = series.iter().find(|s| s.sites != first.sites || s.depth != first.depth) {
        return Err(Error::ShapeMismatch(format!(
            "realization shape ({}, {}) differs from ({}, {})",
            bad.sites, bad.depth, first.sites, first.depth
        )));
    }
    let mut values = vec![vec![0.0; first.sites]; first.depth + 1];
    let mut spread = values.clone();
    for i in 0..=first.depth {
        for x in 0..first.sites {
            let column: Vec<f64> = series.iter().map(|s| s.values[i][x]).collect();
            let stats = Stats::of(&column);
            values[i][x] = stats.mean;
            spread[i][x] = stats.std_dev;
        }
    }
    let mean = DensitySeries::new(first.engine.clone(), values, spread, series.len())?;

    let com: Vec<Vec<f64>> = series.iter().map(|s| s.center_of_mass()).collect::<Result<_>>()?;
    let pol: Vec<Vec<f64>> = series.iter().map(|s| s.polarization()).collect::<Result<_>>()?;
    let shift = if first.depth >= 1 {
        let shifts: Vec<Vec<f64>> = series.iter().map(com_shift).collect::<Result<_>>()?;
        Some(ScalarSeries::from_samples("com_shift", &shifts))
    } else {
        None
    };
    Ok(RealizationSummary {
        mean,
        center_of_mass: ScalarSeries::from_samples("center_of_mass", &com),
        com_shift: shift,
        polarization: ScalarSeries::from_samples("polarization", &pol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(values: Vec<Vec<f64>>) -> DensitySeries {
        DensitySeries::exact("test", values).unwrap()
    }

    #[test]
    fn center_of_mass_examples() {
        assert!((center_of_mass(&[0.3; 9]).unwrap() - 4.0).abs() < 1e-15);
        let mut d = vec![0.0; 10];
        d[5] = 0.7;
        assert!((center_of_mass(&d).unwrap() - 5.0).abs() < 1e-15);
        let d = [0.2, 0.0, 0.0, 0.6];
        assert!((center_of_mass(&d).unwrap() - 2.25).abs() < 1e-15);
        assert!(matches!(center_of_mass(&[0.0; 4]), Err(Error::VanishingDensity { .. })));
    }

    #[test]
    fn polarization_examples() {
        assert!(polarization(&[0.2, 0.5, 0.2]).unwrap().abs() < 1e-15);
        let d = [0.1, 0.3, 0.2, 0.4];
        assert!((polarization(&d).unwrap() - 0.3).abs() < 1e-15);
        assert!((polarization(&[0.0, 0.0, 0.8]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn com_shift_is_referenced_to_layer_one() {
        // N^c(1) = 10.0, N^c(2) = 10.5 on a 100-site chain.
        let mut l0 = vec![0.0; 100];
        l0[3] = 1.0;
        let mut l1 = vec![0.0; 100];
        l1[10] = 1.0;
        let mut l2 = vec![0.0; 100];
        l2[10] = 0.5;
        l2[11] = 0.5;
        let s = series(vec![l0, l1, l2]);
        let shift = com_shift(&s).unwrap();
        assert_eq!(shift[1], 0.0);
        assert!((shift[2] - 50.0).abs() < 1e-12);
        let flat = series(vec![vec![0.5; 4]; 3]);
        assert!(com_shift(&flat).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(com_shift(&series(vec![vec![0.5; 4]])).is_err());
    }

    #[test]
    fn aggregate_of_identical_series_has_zero_spread() {
        let s = series(vec![vec![0.1, 0.5, 0.2], vec![0.3, 0.3, 0.4]]);
        let agg = aggregate_realizations(&[s.clone(), s.clone()]).unwrap();
        assert_eq!(agg.mean.values, s.values);
        assert!(agg.mean.stderr.iter().flatten().all(|&v| v == 0.0));
        let single = aggregate_realizations(&[s]).unwrap();
        assert!(single.center_of_mass.std_dev.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn aggregate_recovers_known_spread() {
        // Ten series whose site-0 density at layer 0 is 0.1 + 0.01·k, k = 0..9.
        let list: Vec<DensitySeries> = (0..10)
            .map(|k| series(vec![vec![0.1 + 0.01 * k as f64, 0.5], vec![0.5, 0.5]]))
            .collect();
        let agg = aggregate_realizations(&list).unwrap();
        // Sample variance of 0.01·k over k = 0..9 is 0.01²·55/6.
        let expected = 0.01 * (55.0f64 / 6.0).sqrt();
        assert!((agg.mean.stderr[0][0] - expected).abs() < 1e-12);
        assert!((agg.mean.values[0][0] - 0.145).abs() < 1e-12);
    }

    #[test]
    fn aggregate_rejects_shape_mismatch() {
        let a = series(vec![vec![0.5; 3]]);
        let b = series(vec![vec![0.5; 4]]);
        assert!(matches!(aggregate_realizations(&[a, b]), Err(Error::ShapeMismatch(_))));
    }

    proptest! {
        #[test]
        fn bounds_and_mirror_symmetry(d in proptest::collection::vec(0.0f64..1.0, 2..30)) {
            prop_assume!(d.iter().sum::<f64>() > 1e-3);
            let l = d.len();
            let com = center_of_mass(&d).unwrap();
            let pol = polarization(&d).unwrap();
            prop_assert!((0.0..=(l - 1) as f64 + 1e-12).contains(&com));
            prop_assert!((-1.0..=1.0).contains(&pol));
            let mirrored: Vec<f64> = d.iter().rev().copied().collect();
            prop_assert!((center_of_mass(&mirrored).unwrap() - ((l - 1) as f64 - com)).abs() < 1e-10);
            prop_assert!((polarization(&mirrored).unwrap() + pol).abs() < 1e-12);
        }

        #[test]
        fn translation_shifts_center_of_mass(d in proptest::collection::vec(0.0f64..1.0, 2..12), k in 0usize..8) {
            prop_assume!(d.iter().sum::<f64>() > 1e-3);
            let mut shifted = vec![0.0; k];
            shifted.extend_from_slice(&d);
            prop_assert!((center_of_mass(&shifted).unwrap() - center_of_mass(&d).unwrap() - k as f64).abs() < 1e-10);
        }
    }
}
