//! Spectral band bookkeeping, vegetation indices, channel normalisation, the CSV
//! dataset format and seeded synthetic tasks. Everything here works in `f64`.

mod csv_io;
mod indices;
mod synth;

pub use csv_io::{load_csv, load_csv_unassigned, save_csv};
pub use indices::{compute_indices, index_values, FeatureConfig, INDEX_NAMES};
pub use synth::{synth, SynthTask, SYNTH_BUMP_AMPLITUDE, SYNTH_NOISE_STD, SYNTH_SHIFT};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::Tensor;

/// Spectral role a band plays in the index formulas.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BandRole {
    Nir,
    Red,
    Green,
    RedEdge,
}

impl BandRole {
    pub const ALL: [BandRole; 4] = [BandRole::Nir, BandRole::Red, BandRole::Green, BandRole::RedEdge];

    pub fn as_str(self) -> &'static str {
        match self {
            BandRole::Nir => "NIR",
            BandRole::Red => "R",
            BandRole::Green => "G",
            BandRole::RedEdge => "RE",
        }
    }

    /// Nominal centre wavelength in nanometres.
    pub fn wavelength_nm(self) -> f64 {
        match self {
            BandRole::Nir => 835.0,
            BandRole::Red => 665.0,
            BandRole::Green => 560.0,
            BandRole::RedEdge => 740.0,
        }
    }
}

impl fmt::Display for BandRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BandRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BandRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown band role {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub name: String,
    pub column: usize,
    /// `None` for derived channels such as indices.
    pub wavelength_nm: Option<f64>,
    pub role: Option<BandRole>,
}

/// Ordered channel descriptors. Columns are dense from 0; each role is held by at most
/// one band.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct BandManifest {
    bands: Vec<Band>,
}

impl BandManifest {
    pub fn new(mut bands: Vec<Band>) -> Result<Self> {
        bands.sort_by_key(|b| b.column);
        for (i, b) in bands.iter().enumerate() {
            if b.column != i {
                return Err(Error::invalid(format!(
                    "band columns must be unique and dense from 0; band {:?} has column {}",
                    b.name, b.column
                )));
            }
            if b.name.is_empty() || b.name.contains([',', '\n', '\r', '"']) {
                return Err(Error::invalid(format!("unusable band name {:?}", b.name)));
            }
            if let Some(w) = b.wavelength_nm {
                if !(w > 0.0 && w.is_finite()) {
                    return Err(Error::invalid(format!("band {:?} wavelength {w}", b.name)));
                }
            }
        }
        for (i, b) in bands.iter().enumerate() {
            if bands[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::invalid(format!("duplicate band name {:?}", b.name)));
            }
            if b.role.is_some() && bands[..i].iter().any(|o| o.role == b.role) {
                return Err(Error::invalid(format!(
                    "role {} assigned to more than one band",
                    b.role.unwrap()
                )));
            }
        }
        Ok(BandManifest { bands })
    }

    /// Plain channels with no spectral role, e.g. for synthetic data.
    pub fn unassigned(names: &[String]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(column, name)| Band {
                    name: name.clone(),
                    column,
                    wavelength_nm: None,
                    role: None,
                })
                .collect(),
        )
    }

    /// Parses sidecar text, one `name,column,wavelength_nm,role` line per band. Blank
    /// lines and lines starting with `#` are skipped; `-` marks a missing wavelength or role.
    pub fn parse(text: &str) -> Result<Self> {
        let mut bands = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |message: String| Error::Parse {
                path: "manifest".into(),
                line: i as u64 + 1,
                message,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, found {}", fields.len())));
            }
            let column = fields[1]
                .parse()
                .map_err(|_| bad(format!("bad column index {:?}", fields[1])))?;
            let wavelength_nm = match fields[2] {
                "-" => None,
                w => Some(w.parse().map_err(|_| bad(format!("bad wavelength {w:?}")))?),
            };
            let role = match fields[3] {
                "-" => None,
                r => Some(r.parse().map_err(|e: Error| bad(e.to_string()))?),
            };
            bands.push(Band {
                name: fields[0].to_string(),
                column,
                wavelength_nm,
                role,
            });
        }
        Self::new(bands)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for b in &self.bands {
            let w = b.wavelength_nm.map_or("-".to_string(), |w| w.to_string());
            let r = b.role.map_or("-", BandRole::as_str);
            out.push_str(&format!("{},{},{},{}\n", b.name, b.column, w, r));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    /// Column holding `role`.
    pub fn column_of(&self, role: BandRole) -> Result<usize> {
        self.bands
            .iter()
            .find(|b| b.role == Some(role))
            .map(|b| b.column)
            .ok_or_else(|| Error::invalid(format!("manifest has no band with role {role}")))
    }

    /// Appends a derived channel (no wavelength, no role).
    pub fn push_derived(&mut self, name: &str) -> Result<()> {
        let mut bands = self.bands.clone();
        bands.push(Band {
            name: name.to_string(),
            column: bands.len(),
            wavelength_nm: None,
            role: None,
        });
        *self = Self::new(bands)?;
        Ok(())
    }

    /// The same channels with every role removed.
    pub fn without_roles(&self) -> Self {
        BandManifest {
            bands: self
                .bands
                .iter()
                .map(|b| Band { role: None, ..b.clone() })
                .collect(),
        }
    }
}

/// `N` labelled multivariate series, `values [N, T, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub values: Tensor,
    pub labels: Vec<u8>,
    pub manifest: BandManifest,
    pub ids: Vec<String>,
}

impl SampleSet {
    pub fn new(values: Tensor, labels: Vec<u8>, manifest: BandManifest, ids: Vec<String>) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 {
            return Err(Error::shape(format!("sample values must be [N, T, C], got {shape:?}")));
        }
        if labels.len() != shape[0] || ids.len() != shape[0] {
            return Err(Error::shape(format!(
                "{} samples but {} labels and {} ids",
                shape[0],
                labels.len(),
                ids.len()
            )));
        }
        if manifest.len() != shape[2] {
            return Err(Error::shape(format!(
                "{} channels but the manifest lists {} bands",
                shape[2],
                manifest.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("label {bad} is not 0 or 1")));
        }
        Ok(SampleSet {
            values,
            labels,
            manifest,
            ids,
        })
    }

    pub fn samples(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| f64::from(l)).collect()
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let per = self.steps() * self.channels();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            if i >= self.samples() {
                return Err(Error::invalid(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(&self.values.data()[i * per..(i + 1) * per]);
        }
        Self::new(
            Tensor::new(vec![indices.len(), self.steps(), self.channels()], data)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.manifest.clone(),
            indices.iter().map(|&i| self.ids[i].clone()).collect(),
        )
    }

    /// First `round(fraction·N)` samples and the rest, in stored order.
    pub fn split(&self, fraction: f64) -> Result<(Self, Self)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::invalid(format!("split fraction {fraction} outside [0, 1]")));
        }
        let n = self.samples();
        let head = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
        let first: Vec<usize> = (0..head).collect();
        let rest: Vec<usize> = (head..n).collect();
        if rest.is_empty() {
            return Err(Error::invalid("split leaves an empty part"));
        }
        Ok((self.subset(&first)?, self.subset(&rest)?))
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Channels whose standard deviation is below this are only mean-subtracted.
pub const MIN_SCALED_STD: f64 = 1e-8;

impl ChannelStats {
    /// Statistics over every sample and time step.
    pub fn compute(s: &SampleSet) -> Self {
        let c = s.channels();
        let count = (s.samples() * s.steps()) as f64;
        let mut mean = vec![0.0; c];
        for row in s.values.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for row in s.values.data().chunks(c) {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|v| (v / count).sqrt()).collect();
        ChannelStats { mean, std }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

/// Z-scores each channel with `stats`, or with statistics of `s` itself when none are
/// given; returns the statistics used. Roles are dropped from the manifest because the
/// result is no longer reflectance.
pub fn normalize(s: &SampleSet, stats: Option<&ChannelStats>) -> Result<(SampleSet, ChannelStats)> {
    let stats = match stats {
        Some(st) => {
            if st.channels() != s.channels() || st.std.len() != st.channels() {
                return Err(Error::shape(format!(
                    "normalisation statistics for {} channels applied to {}",
                    st.channels(),
                    s.channels()
                )));
            }
            st.clone()
        }
        None => ChannelStats::compute(s),
    };
    let c = s.channels();
    let data: Vec<f64> = s
        .values
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (m, sd) = (stats.mean[i % c], stats.std[i % c]);
            if sd < MIN_SCALED_STD {
                v - m
            } else {
                (v - m) / sd
            }
        })
        .collect();
    let out = SampleSet::new(
        Tensor::new(s.values.shape().to_vec(), data)?,
        s.labels.clone(),
        s.manifest.without_roles(),
        s.ids.clone(),
    )?;
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_channel(values: &[f64]) -> SampleSet {
        SampleSet::new(
            Tensor::from_slice(&[1, values.len(), 1], values).unwrap(),
            vec![0],
            BandManifest::unassigned(&["x".into()]).unwrap(),
            vec!["a".into()],
        )
        .unwrap()
    }

    #[test]
    fn manifest_round_trip() {
        let text = "B8,0,835,NIR\nB4,1,665,R\nB3,2,560,G\nB5,3,740,RE\nelev,4,-,-\n";
        let m = BandManifest::parse(text).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.column_of(BandRole::RedEdge).unwrap(), 3);
        assert_eq!(m.to_text(), text);
        assert_eq!(BandManifest::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_bad_layouts() {
        assert!(BandManifest::parse("a,0,835,NIR\nb,2,665,R\n").is_err());
        assert!(BandManifest::parse("a,0,835,NIR\nb,0,665,R\n").is_err());
        assert!(BandManifest::parse("a,0,835,NIR\nb,1,665,NIR\n").is_err());
        assert!(BandManifest::parse("a,0,835,XX\n").is_err());
        assert!(BandManifest::parse("a,0,-5,-\n").is_err());
        match BandManifest::parse("a,0,835,NIR\nb,1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let m = BandManifest::parse("a,0,-,-\n").unwrap();
        assert!(m.column_of(BandRole::Nir).is_err());
    }

    #[test]
    fn normalize_hand_values() {
        let (out, stats) = normalize(&one_channel(&[1.0, 2.0, 3.0]), None).unwrap();
        let expected = [-1.224745, 0.0, 1.224745];
        for (v, e) in out.values.data().iter().zip(expected) {
            assert!((v - e).abs() < 1e-6);
        }
        assert_eq!(stats.mean, vec![2.0]);

        let (flat, stats) = normalize(&one_channel(&[5.0, 5.0, 5.0]), None).unwrap();
        assert_eq!(flat.values.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(stats.std, vec![0.0]);
    }

    #[test]
    fn normalize_with_training_stats() {
        let (_, stats) = normalize(&one_channel(&[1.0, 2.0, 3.0]), None).unwrap();
        let (test, _) = normalize(&one_channel(&[4.0, 5.0, 6.0]), Some(&stats)).unwrap();
        let mean: f64 = test.values.data().iter().sum::<f64>() / 3.0;
        assert!(mean.abs() > 1.0);

        let wrong = ChannelStats {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 1.0],
        };
        assert!(normalize(&one_channel(&[1.0]), Some(&wrong)).is_err());
    }

    #[test]
    fn sample_set_checks() {
        let m = BandManifest::unassigned(&["x".into()]).unwrap();
        let v = Tensor::zeros(&[2, 3, 1]).unwrap();
        assert!(SampleSet::new(v.clone(), vec![0, 2], m.clone(), vec!["a".into(), "b".into()]).is_err());
        assert!(SampleSet::new(v.clone(), vec![0], m.clone(), vec!["a".into()]).is_err());
        let s = SampleSet::new(v, vec![0, 1], m, vec!["a".into(), "b".into()]).unwrap();
        let (a, b) = s.split(0.5).unwrap();
        assert_eq!((a.samples(), b.samples()), (1, 1));
        assert_eq!(b.labels, vec![1]);
    }
}
