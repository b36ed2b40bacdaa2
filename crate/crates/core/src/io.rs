//! Binary model files and the flat `key=value` run configuration.
//!
//! Model file layout, all integers and floats little-endian:
//!
//! ```text
//! "TGCN"  u32 version (1)
//! config: u64 time_steps, channels, window, filters, hidden, gate_hidden, blocks,
//!         u8 branch mode (0 full, 1 stepwise_only, 2 channelwise_only), u64 seed
//! u64 tensor count
//! per tensor: u32 name length, name (UTF-8), u32 rank, u64 dims[rank], f64 values
//! u64 checksum: wrapping sum of the bit patterns of every value
//! ```
//!
//! Besides the model parameters a file may carry the input normalisation statistics
//! as the tensors [`INPUT_MEAN`] and [`INPUT_STD`].

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::ChannelStats;
use crate::model::{BranchMode, TgcnnConfig, TgcnnModel};
use crate::nn::Parameters;
use crate::train::{OptimizerKind, TrainConfig};
use crate::Tensor;

pub const MODEL_MAGIC: &[u8; 4] = b"TGCN";
pub const MODEL_VERSION: u32 = 1;
pub const INPUT_MEAN: &str = "input.mean";
pub const INPUT_STD: &str = "input.std";

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub config: TgcnnConfig,
    pub tensors: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CorruptModel(format!("truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::CorruptModel(format!("size {v} out of range")))
    }
}

impl ModelFile {
    pub fn from_model(model: &TgcnnModel<f64>, stats: Option<&ChannelStats>) -> Result<Self> {
        let mut tensors: Vec<(String, Tensor)> = model
            .named_parameters("")
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        if let Some(st) = stats {
            tensors.push((INPUT_MEAN.into(), Tensor::new(vec![st.channels()], st.mean.clone())?));
            tensors.push((INPUT_STD.into(), Tensor::new(vec![st.channels()], st.std.clone())?));
        }
        Ok(ModelFile {
            config: model.config().clone(),
            tensors,
        })
    }

    /// Rebuilds the model and, when present, the normalisation statistics.
    pub fn to_model(&self) -> Result<(TgcnnModel<f64>, Option<ChannelStats>)> {
        let mut model = TgcnnModel::build(self.config.clone())
            .map_err(|e| Error::CorruptModel(format!("stored config rejected: {e}")))?;
        let find = |name: &str| self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        let stats = match (find(INPUT_MEAN), find(INPUT_STD)) {
            (Some(m), Some(s)) if m.len() == self.config.channels && s.len() == m.len() => Some(ChannelStats {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            }),
            (None, None) => None,
            _ => return Err(Error::CorruptModel("incomplete normalisation statistics".into())),
        };
        let params: Vec<(String, Tensor)> = self
            .tensors
            .iter()
            .filter(|(n, _)| n != INPUT_MEAN && n != INPUT_STD)
            .cloned()
            .collect();
        model
            .load_parameters(&params)
            .map_err(|e| Error::CorruptModel(e.to_string()))?;
        Ok((model, stats))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let c = &self.config;
        for v in [c.time_steps, c.channels, c.window, c.filters, c.hidden, c.gate_hidden, c.blocks] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(c.branch_mode.code());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        let mut checksum = 0u64;
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                checksum = checksum.wrapping_add(v.to_bits());
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&checksum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::CorruptModel("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::CorruptModel(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 7];
        for d in &mut dims {
            *d = r.usize()?;
        }
        let code = r.u8()?;
        let branch_mode =
            BranchMode::from_code(code).ok_or_else(|| Error::CorruptModel(format!("branch mode code {code}")))?;
        let config = TgcnnConfig {
            time_steps: dims[0],
            channels: dims[1],
            window: dims[2],
            filters: dims[3],
            hidden: dims[4],
            gate_hidden: dims[5],
            blocks: dims[6],
            branch_mode,
            seed: r.u64()?,
        };
        let count = r.usize()?;
        let mut tensors = Vec::new();
        let mut checksum = 0u64;
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::CorruptModel("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.usize()?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::CorruptModel(format!("tensor {name} has implausible shape {shape:?}")))?;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                let bits = r.u64()?;
                checksum = checksum.wrapping_add(bits);
                values.push(f64::from_bits(bits));
            }
            let t = Tensor::new(shape, values).map_err(|e| Error::CorruptModel(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        let stored = r.u64()?;
        if stored != checksum {
            return Err(Error::CorruptModel(format!(
                "checksum mismatch: stored {stored:#018x}, computed {checksum:#018x}"
            )));
        }
        if r.at != bytes.len() {
            return Err(Error::CorruptModel(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(ModelFile { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Model and training settings read from `key=value` text.
///
/// `time_steps` and `channels` are optional; when given they must match the data.
/// `gate_hidden` defaults to `hidden`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub time_steps: Option<usize>,
    pub channels: Option<usize>,
    pub window: usize,
    pub filters: usize,
    pub hidden: usize,
    pub gate_hidden: Option<usize>,
    pub blocks: usize,
    pub branch_mode: BranchMode,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = TgcnnConfig::new(2, 1);
        RunConfig {
            time_steps: None,
            channels: None,
            window: m.window,
            filters: m.filters,
            hidden: m.hidden,
            gate_hidden: None,
            blocks: m.blocks,
            branch_mode: m.branch_mode,
            seed: m.seed,
            train: TrainConfig {
                seed: m.seed,
                ..TrainConfig::default()
            },
        }
    }
}

/// Keys accepted by [`RunConfig::parse`].
pub const CONFIG_KEYS: [&str; 17] = [
    "time_steps",
    "channels",
    "window",
    "filters",
    "hidden",
    "gate_hidden",
    "blocks",
    "branch_mode",
    "seed",
    "learning_rate",
    "epochs",
    "batch_size",
    "optimizer",
    "beta1",
    "beta2",
    "adam_eps",
    "early_stop_patience",
];

fn value<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {raw:?}")))
}

impl RunConfig {
    /// One `key=value` per line; blank lines and `#` comments are ignored. Unknown and
    /// repeated keys are errors. `seed` drives both initialisation and the shuffle.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, found {line:?}", i + 1)))?;
            if !CONFIG_KEYS.contains(&key) {
                return Err(Error::Config(format!("unknown key {key:?} on line {}", i + 1)));
            }
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!("key {key:?} given twice")));
            }
            seen.push(key.to_string());
            match key {
                "time_steps" => cfg.time_steps = Some(value(key, val)?),
                "channels" => cfg.channels = Some(value(key, val)?),
                "window" => cfg.window = value(key, val)?,
                "filters" => cfg.filters = value(key, val)?,
                "hidden" => cfg.hidden = value(key, val)?,
                "gate_hidden" => cfg.gate_hidden = Some(value(key, val)?),
                "blocks" => cfg.blocks = value(key, val)?,
                "branch_mode" => cfg.branch_mode = val.parse()?,
                "seed" => {
                    cfg.seed = value(key, val)?;
                    cfg.train.seed = cfg.seed;
                }
                "learning_rate" => cfg.train.learning_rate = value(key, val)?,
                "epochs" => cfg.train.epochs = value(key, val)?,
                "batch_size" => cfg.train.batch_size = value(key, val)?,
                "optimizer" => cfg.train.optimizer = val.parse::<OptimizerKind>()?,
                "beta1" => cfg.train.beta1 = value(key, val)?,
                "beta2" => cfg.train.beta2 = value(key, val)?,
                "adam_eps" => cfg.train.adam_eps = value(key, val)?,
                "early_stop_patience" => {
                    cfg.train.early_stop_patience = match val {
                        "none" => None,
                        v => Some(value(key, v)?),
                    }
                }
                _ => unreachable!("key list checked above"),
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Model configuration for data of `time_steps × channels`.
    pub fn model_config(&self, time_steps: usize, channels: usize) -> Result<TgcnnConfig> {
        for (name, want, got) in [
            ("time_steps", self.time_steps, time_steps),
            ("channels", self.channels, channels),
        ] {
            if want.is_some_and(|w| w != got) {
                return Err(Error::shape(format!(
                    "config sets {name}={} but the data has {got}",
                    want.unwrap()
                )));
            }
        }
        let config = TgcnnConfig {
            time_steps,
            channels,
            window: self.window,
            filters: self.filters,
            hidden: self.hidden,
            gate_hidden: self.gate_hidden.unwrap_or(self.hidden),
            blocks: self.blocks,
            branch_mode: self.branch_mode,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model() -> TgcnnModel<f64> {
        TgcnnModel::build(TgcnnConfig {
            filters: 2,
            hidden: 4,
            gate_hidden: 4,
            blocks: 1,
            ..TgcnnConfig::new(6, 3)
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = small_model();
        let stats = ChannelStats {
            mean: vec![0.1, 0.2, 0.3],
            std: vec![1.0, 2.0, 0.0],
        };
        let file = ModelFile::from_model(&model, Some(&stats)).unwrap();
        let bytes = file.to_bytes();
        assert_eq!(&bytes[..4], b"TGCN");
        let back = ModelFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, file);
        let (m, s) = back.to_model().unwrap();
        assert_eq!(m, model);
        assert_eq!(s, Some(stats));
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn detects_corruption() {
        let bytes = ModelFile::from_model(&small_model(), None).unwrap().to_bytes();
        let mut flipped = bytes.clone();
        let at = bytes.len() - 20;
        flipped[at] ^= 0x10;
        assert!(matches!(ModelFile::from_bytes(&flipped), Err(Error::CorruptModel(_))));
        assert!(matches!(ModelFile::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::CorruptModel(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(ModelFile::from_bytes(&magic), Err(Error::CorruptModel(_))));
        let mut version = bytes.clone();
        version[4] = 2;
        assert!(matches!(ModelFile::from_bytes(&version), Err(Error::CorruptModel(_))));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(ModelFile::from_bytes(&extra), Err(Error::CorruptModel(_))));
    }

    #[test]
    fn config_parsing() {
        let cfg = RunConfig::parse("# run\nhidden = 8\nbranch_mode=stepwise_only\nseed=7\nepochs=3\noptimizer=sgd\nearly_stop_patience=2\n").unwrap();
        assert_eq!(cfg.hidden, 8);
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.optimizer, OptimizerKind::Sgd);
        let m = cfg.model_config(12, 5).unwrap();
        assert_eq!((m.gate_hidden, m.branch_mode, m.seed), (8, BranchMode::StepwiseOnly, 7));

        match RunConfig::parse("hiden=3\n") {
            Err(Error::Config(msg)) => assert!(msg.contains("hiden")),
            other => panic!("{other:?}"),
        }
        assert!(RunConfig::parse("hidden=3\nhidden=4\n").is_err());
        assert!(RunConfig::parse("hidden\n").is_err());
        assert!(RunConfig::parse("learning_rate=-1\n").is_err());
        assert!(RunConfig::parse("window=4\n").unwrap().model_config(12, 3).is_err());
        assert!(matches!(
            RunConfig::parse("channels=4\n").unwrap().model_config(12, 3),
            Err(Error::Shape(_))
        ));
    }
}
