use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Parameters;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Config(format!("unknown optimizer {other:?} (adam, sgd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// SGD or Adam with bias-corrected moments. Moment buffers are created on the first step
/// and tied to the order of the parameter list.
#[derive(Clone, Debug)]
pub struct Optimizer<S: Scalar> {
    settings: OptimizerSettings,
    steps: i32,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(settings: OptimizerSettings) -> Self {
        Optimizer {
            settings,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn settings(&self) -> &OptimizerSettings {
        &self.settings
    }

    pub fn steps_taken(&self) -> i32 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        self.begin(&shapes, grads)?;
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.update(k, p, g)?;
        }
        Ok(())
    }

    /// Updates every parameter of `model`, in visit order, with the matching gradient.
    pub fn apply<P: Parameters<S>>(&mut self, model: &mut P, grads: &[Tensor<S>]) -> Result<()> {
        let shapes: Vec<Vec<usize>> = model
            .named_parameters("")
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect();
        let shapes: Vec<&[usize]> = shapes.iter().map(Vec::as_slice).collect();
        self.begin(&shapes, grads)?;
        let mut k = 0;
        let mut failure = None;
        model.visit_mut(&mut |p| {
            if failure.is_none() {
                if let Err(e) = self.update(k, p, &grads[k]) {
                    failure = Some(e);
                }
            }
            k += 1;
        });
        failure.map_or(Ok(()), Err)
    }

    fn begin(&mut self, shapes: &[&[usize]], grads: &[Tensor<S>]) -> Result<()> {
        if shapes.len() != grads.len() {
            return Err(Error::shape(format!(
                "{} parameters but {} gradients",
                shapes.len(),
                grads.len()
            )));
        }
        for (p, g) in shapes.iter().zip(grads) {
            if *p != g.shape() {
                return Err(Error::shape(format!(
                    "parameter {p:?} with gradient {:?}",
                    g.shape()
                )));
            }
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![S::zero(); g.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != grads.len()
            || self.first.iter().zip(grads).any(|(m, g)| m.len() != g.len())
        {
            return Err(Error::shape("parameter list changed between optimizer steps"));
        }
        self.steps += 1;
        Ok(())
    }

    fn update(&mut self, k: usize, p: &mut Tensor<S>, g: &Tensor<S>) -> Result<()> {
        let st = self.settings;
        let lr = S::lit(st.learning_rate);
        let updated: Vec<S> = match st.kind {
            OptimizerKind::Sgd => p
                .data()
                .iter()
                .zip(g.data())
                .map(|(&w, &d)| w - lr * d)
                .collect(),
            OptimizerKind::Adam => {
                let (b1, b2) = (S::lit(st.beta1), S::lit(st.beta2));
                let c1 = S::one() - b1.powi(self.steps);
                let c2 = S::one() - b2.powi(self.steps);
                let eps = S::lit(st.eps);
                let (m, v) = (&mut self.first[k], &mut self.second[k]);
                p.data()
                    .iter()
                    .zip(g.data())
                    .enumerate()
                    .map(|(j, (&w, &d))| {
                        m[j] = b1 * m[j] + (S::one() - b1) * d;
                        v[j] = b2 * v[j] + (S::one() - b2) * d * d;
                        w - lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps)
                    })
                    .collect()
            }
        };
        *p = Tensor::new(p.shape().to_vec(), updated)
            .map_err(|e| Error::Numeric(format!("optimizer produced {e}")))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Tensor<f64> {
        Tensor::from_slice(&[1], &[v]).unwrap()
    }

    fn run(kind: OptimizerKind, lr: f64, p: f64, g: f64) -> f64 {
        let mut opt = Optimizer::new(OptimizerSettings {
            kind,
            learning_rate: lr,
            ..OptimizerSettings::default()
        });
        let mut w = one(p);
        opt.step(&mut [&mut w], &[one(g)]).unwrap();
        w.data()[0]
    }

    #[test]
    fn hand_values() {
        assert!((run(OptimizerKind::Sgd, 0.1, 1.0, 2.0) - 0.8).abs() < 1e-15);
        assert!((run(OptimizerKind::Adam, 1e-3, 0.0, 1.0) + 1e-3).abs() < 1e-10);
        assert_eq!(run(OptimizerKind::Sgd, 0.1, 1.5, 0.0), 1.5);
        assert_eq!(run(OptimizerKind::Adam, 0.1, 1.5, 0.0), 1.5);
    }

    #[test]
    fn adam_matches_reference_sequence() {
        // Reference: scalar Adam written out directly.
        let grads = [0.5, -1.0, 2.0, 0.25];
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (mut p, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut opt = Optimizer::new(OptimizerSettings {
            learning_rate: lr,
            ..OptimizerSettings::default()
        });
        let mut w = one(1.0);
        for (t, &g) in grads.iter().enumerate() {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32 + 1));
            let vh = v / (1.0 - b2.powi(t as i32 + 1));
            p -= lr * mh / (vh.sqrt() + eps);
            opt.step(&mut [&mut w], &[one(g)]).unwrap();
            assert!((w.data()[0] - p).abs() < 1e-14);
        }
    }

    #[test]
    fn shape_errors() {
        let mut opt = Optimizer::<f64>::new(OptimizerSettings::default());
        let mut w = one(1.0);
        assert!(opt.step(&mut [&mut w], &[]).is_err());
        assert!(opt.step(&mut [&mut w], &[Tensor::zeros(&[2]).unwrap()]).is_err());
        assert!("rmsprop".parse::<OptimizerKind>().is_err());
    }
}
