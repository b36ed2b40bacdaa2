use crate::error::{Error, Result};
use crate::Tensor;

use super::{BandRole, SampleSet};

/// Appended channel names, in order.
pub const INDEX_NAMES: [&str; 8] = ["NDVI", "SAVI", "SR", "RECI", "NDRE", "MSAVI", "NDWI", "GCI"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureConfig {
    /// Soil brightness factor `L` of SAVI, in `[0, 1]`.
    pub savi_l: f64,
    /// Denominators with magnitude below this give an index value of 0.
    pub denom_guard: f64,
    /// Use the red-edge band in NDRE and RECI instead of the red band.
    pub corrected_red_edge: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            savi_l: 0.5,
            denom_guard: 1e-12,
            corrected_red_edge: false,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.savi_l) {
            return Err(Error::Config(format!("savi_l {} outside [0, 1]", self.savi_l)));
        }
        if !(self.denom_guard > 0.0 && self.denom_guard.is_finite()) {
            return Err(Error::Config(format!("denom_guard {} must be positive", self.denom_guard)));
        }
        Ok(())
    }
}

fn ratio(num: f64, den: f64, guard: f64) -> f64 {
    if den.abs() < guard {
        0.0
    } else {
        num / den
    }
}

/// The eight indices for one pixel, in [`INDEX_NAMES`] order. `re` is only read when
/// `cfg.corrected_red_edge` is set.
pub fn index_values(nir: f64, r: f64, g: f64, re: f64, cfg: &FeatureConfig) -> [f64; 8] {
    let eps = cfg.denom_guard;
    let l = cfg.savi_l;
    let edge = if cfg.corrected_red_edge { re } else { r };
    let ndvi = ratio(nir - r, nir + r, eps);
    let savi = ratio(nir - r, nir + r + l, eps) * (1.0 + l);
    let sr = ratio(nir, r, eps);
    let reci = if edge.abs() < eps { 0.0 } else { nir / edge - 1.0 };
    let ndre = ratio(nir - edge, nir + edge, eps);
    let lead = 2.0 * nir + 1.0;
    let msavi = (lead - (lead * lead - 8.0 * (nir - r)).max(0.0).sqrt()) / 2.0;
    let ndwi = ratio(g - nir, nir + g, eps);
    let gci = if g.abs() < eps { 0.0 } else { nir / g - 1.0 };
    [ndvi, savi, sr, reci, ndre, msavi, ndwi, gci]
}

/// Appends the eight index channels to every (sample, time step).
///
/// Existing channels are copied unchanged. Fails when a needed role is missing or a
/// reflectance channel leaves `[0, 1]`.
pub fn compute_indices(s: &SampleSet, cfg: &FeatureConfig) -> Result<SampleSet> {
    cfg.validate()?;
    let nir = s.manifest.column_of(BandRole::Nir)?;
    let red = s.manifest.column_of(BandRole::Red)?;
    let green = s.manifest.column_of(BandRole::Green)?;
    let edge = if cfg.corrected_red_edge {
        Some(s.manifest.column_of(BandRole::RedEdge)?)
    } else {
        None
    };
    let c = s.channels();
    for band in s.manifest.bands().iter().filter(|b| b.role.is_some()) {
        let col = band.column;
        if let Some((i, v)) = s
            .values
            .data()
            .iter()
            .enumerate()
            .skip(col)
            .step_by(c)
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            let row = i / c;
            return Err(Error::invalid(format!(
                "reflectance band {} = {v} outside [0, 1] at sample {}, step {}",
                band.name,
                row / s.steps(),
                row % s.steps()
            )));
        }
    }

    let rows = s.samples() * s.steps();
    let mut data = Vec::with_capacity(rows * (c + INDEX_NAMES.len()));
    for row in s.values.data().chunks(c) {
        data.extend_from_slice(row);
        let re = edge.map_or(0.0, |e| row[e]);
        data.extend_from_slice(&index_values(row[nir], row[red], row[green], re, cfg));
    }
    let mut manifest = s.manifest.clone();
    for name in INDEX_NAMES {
        manifest.push_derived(name)?;
    }
    SampleSet::new(
        Tensor::new(vec![s.samples(), s.steps(), c + INDEX_NAMES.len()], data)?,
        s.labels.clone(),
        manifest,
        s.ids.clone(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Band, BandManifest};
    use proptest::prelude::*;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn hand_values() {
        let cfg = FeatureConfig::default();
        let v = index_values(0.5, 0.1, 0.2, 0.0, &cfg);
        close(v[0], 0.666667);
        close(v[1], 0.545455);
        close(v[2], 5.0);
        close(v[3], 4.0);
        close(v[5], 0.552786);
        close(v[6], -0.428571);
        close(v[7], 1.5);

        let v = index_values(0.3, 0.3, 0.2, 0.0, &cfg);
        assert_eq!((v[0], v[4]), (0.0, 0.0));

        let v = index_values(0.4, 0.0, 0.2, 0.0, &cfg);
        assert_eq!((v[2], v[3]), (0.0, 0.0));

        let v = index_values(0.0, 0.0, 0.0, 0.0, &cfg);
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn savi_without_soil_factor_is_ndvi() {
        let cfg = FeatureConfig {
            savi_l: 0.0,
            ..FeatureConfig::default()
        };
        let v = index_values(0.7, 0.2, 0.1, 0.0, &cfg);
        assert_eq!(v[0], v[1]);
    }

    #[test]
    fn corrected_mode_reads_red_edge() {
        let cfg = FeatureConfig {
            corrected_red_edge: true,
            ..FeatureConfig::default()
        };
        let v = index_values(0.6, 0.1, 0.2, 0.3, &cfg);
        close(v[4], 0.3 / 0.9);
        close(v[3], 1.0);
    }

    fn set(rows: &[[f64; 4]]) -> SampleSet {
        let bands = [("B8", BandRole::Nir), ("B4", BandRole::Red), ("B3", BandRole::Green), ("B5", BandRole::RedEdge)]
            .iter()
            .enumerate()
            .map(|(column, (name, role))| Band {
                name: name.to_string(),
                column,
                wavelength_nm: Some(role.wavelength_nm()),
                role: Some(*role),
            })
            .collect();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        SampleSet::new(
            Tensor::from_slice(&[1, rows.len(), 4], &flat).unwrap(),
            vec![1],
            BandManifest::new(bands).unwrap(),
            vec!["p".into()],
        )
        .unwrap()
    }

    #[test]
    fn appends_eight_channels() {
        let s = set(&[[0.5, 0.1, 0.2, 0.3], [0.4, 0.2, 0.1, 0.3]]);
        let out = compute_indices(&s, &FeatureConfig::default()).unwrap();
        assert_eq!(out.values.shape(), &[1, 2, 12]);
        assert_eq!(&out.values.data()[..4], &[0.5, 0.1, 0.2, 0.3]);
        assert_eq!(out.manifest.names()[4..], INDEX_NAMES.map(String::from));
        assert!(compute_indices(&out, &FeatureConfig::default()).is_err());
    }

    #[test]
    fn rejects_missing_role_and_out_of_range() {
        let s = set(&[[1.5, 0.1, 0.2, 0.3]]);
        assert!(compute_indices(&s, &FeatureConfig::default()).is_err());
        let mut s = set(&[[0.5, 0.1, 0.2, 0.3]]);
        s.manifest = s.manifest.without_roles();
        assert!(compute_indices(&s, &FeatureConfig::default()).is_err());
        let bad = FeatureConfig {
            denom_guard: 0.0,
            ..FeatureConfig::default()
        };
        assert!(compute_indices(&set(&[[0.5, 0.1, 0.2, 0.3]]), &bad).is_err());
    }

    proptest! {
        #[test]
        fn printed_identities_and_ranges(nir in 0.0f64..=1.0, r in 0.0f64..=1.0, g in 0.0f64..=1.0) {
            let v = index_values(nir, r, g, 0.0, &FeatureConfig::default());
            prop_assert_eq!(v[4], v[0]);
            if r >= 1e-12 {
                prop_assert_eq!(v[3], v[2] - 1.0);
            }
            prop_assert!((-1.0..=1.0).contains(&v[0]));
            prop_assert!((-1.0..=1.0).contains(&v[6]));
            prop_assert!((2.0 * nir + 1.0).powi(2) - 8.0 * (nir - r) >= 0.0);
        }
    }
}
