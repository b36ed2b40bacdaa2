//! The full network: channel-wise and step-wise convolutional branches, a
//! convolutional trunk, the gating module and a pooled single-logit head.
//!
//! Shapes for an input `x [B, T, C]`:
//!
//! ```text
//! channel branch   [B,1,T,C] -conv2d(w×1)-> [B,F,T,C] -norm-relu-> -conv2d(1×1)-> [B,T,C]
//! temporal branch  [B,C,T]   -conv1d(w)->   [B,F,T]   -norm-relu-> -conv1d(1)->   [B,T,1]
//! concat           [B,T,C+1]                (C for channel-only, 1 for step-wise-only)
//! trunk            -conv1d(w)-> [B,H,T] -norm-relu-> [B,T,H]
//! gating           N blocks, then tanh          [B,T,H]
//! head             mean over T -> dense(H→1) ->  [B] logits
//! ```

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::nn::{
    Binder, Conv1d, Conv2d, Dense, GatingBlock, GatingModule, InstanceNorm, Padding, Parameters,
};
use crate::rng::{derive_seed, SeededRng};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum BranchMode {
    #[default]
    Full,
    StepwiseOnly,
    ChannelwiseOnly,
}

impl BranchMode {
    pub const ALL: [BranchMode; 3] = [
        BranchMode::Full,
        BranchMode::StepwiseOnly,
        BranchMode::ChannelwiseOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BranchMode::Full => "full",
            BranchMode::StepwiseOnly => "stepwise_only",
            BranchMode::ChannelwiseOnly => "channelwise_only",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            BranchMode::Full => 0,
            BranchMode::StepwiseOnly => 1,
            BranchMode::ChannelwiseOnly => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn has_channel_branch(self) -> bool {
        self != BranchMode::StepwiseOnly
    }

    pub fn has_temporal_branch(self) -> bool {
        self != BranchMode::ChannelwiseOnly
    }
}

impl fmt::Display for BranchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BranchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown branch_mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TgcnnConfig {
    /// Time steps `T`.
    pub time_steps: usize,
    /// Input channels `C`.
    pub channels: usize,
    /// Odd temporal window `w` shared by every non-pointwise convolution.
    pub window: usize,
    /// Filters `F` in each branch convolution.
    pub filters: usize,
    /// Trunk width `H`.
    pub hidden: usize,
    /// Half-width `H'` of the gating projections.
    pub gate_hidden: usize,
    /// Number of gating blocks `N`.
    pub blocks: usize,
    pub branch_mode: BranchMode,
    pub seed: u64,
}

impl TgcnnConfig {
    /// Defaults for a `T × C` input: `w = 3`, `F = 16`, `H = H' = 32`, `N = 2`.
    pub fn new(time_steps: usize, channels: usize) -> Self {
        TgcnnConfig {
            time_steps,
            channels,
            window: 3,
            filters: 16,
            hidden: 32,
            gate_hidden: 32,
            blocks: 2,
            branch_mode: BranchMode::Full,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.time_steps < 2 {
            return fail(format!("time_steps {} must be at least 2", self.time_steps));
        }
        if self.window % 2 == 0 {
            return fail(format!("window {} must be odd", self.window));
        }
        if self.window > self.time_steps {
            return fail(format!(
                "window {} exceeds time_steps {}",
                self.window, self.time_steps
            ));
        }
        for (name, v) in [
            ("channels", self.channels),
            ("filters", self.filters),
            ("hidden", self.hidden),
            ("gate_hidden", self.gate_hidden),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Width of the concatenated branch map fed to the trunk.
    pub fn trunk_input_width(&self) -> usize {
        let mut w = 0;
        if self.branch_mode.has_channel_branch() {
            w += self.channels;
        }
        if self.branch_mode.has_temporal_branch() {
            w += 1;
        }
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelBranch<S: Scalar> {
    pub conv: Conv2d<S>,
    pub norm: InstanceNorm<S>,
    pub reduce: Conv2d<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalBranch<S: Scalar> {
    pub conv: Conv1d<S>,
    pub norm: InstanceNorm<S>,
    pub reduce: Conv1d<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TgcnnModel<S: Scalar> {
    config: TgcnnConfig,
    pub channel_branch: Option<ChannelBranch<S>>,
    pub temporal_branch: Option<TemporalBranch<S>>,
    pub trunk_conv: Conv1d<S>,
    pub trunk_norm: InstanceNorm<S>,
    pub gating: GatingModule<S>,
    pub head: Dense<S>,
}

/// Graph nodes for every named intermediate of one forward pass.
#[derive(Clone, Debug)]
pub struct FeatureNodes {
    pub channel_map: Option<NodeId>,
    pub temporal_map: Option<NodeId>,
    pub concatenated: NodeId,
    pub trunk: NodeId,
    pub blocks: Vec<NodeId>,
    pub gated: NodeId,
    pub pooled: NodeId,
    pub logits: NodeId,
}

/// Intermediate maps of one forward pass.
#[derive(Clone, Debug)]
pub struct FeatureMaps<S: Scalar> {
    /// `[B, T, C]`, absent in step-wise-only mode.
    pub channel_map: Option<Tensor<S>>,
    /// `[B, T, 1]`, absent in channel-wise-only mode.
    pub temporal_map: Option<Tensor<S>>,
    /// `[B, T, trunk_input_width]`.
    pub concatenated: Tensor<S>,
    /// `[B, T, H]` after conv, norm and ReLU.
    pub trunk: Tensor<S>,
    /// `[B, T, H]` output of each gating block, before the final tanh.
    pub blocks: Vec<Tensor<S>>,
    /// `[B, T, H]` after the final tanh.
    pub gated: Tensor<S>,
    /// `[B, H]`.
    pub pooled: Tensor<S>,
    /// `[B]`.
    pub logits: Tensor<S>,
}

impl<S: Scalar> TgcnnModel<S> {
    /// Deterministic construction; each component draws from its own stream derived from `config.seed`.
    pub fn build(config: TgcnnConfig) -> Result<Self> {
        config.validate()?;
        let (t, c, w, f, h) = (
            config.time_steps,
            config.channels,
            config.window,
            config.filters,
            config.hidden,
        );
        let pad = Padding::SameZero;
        let stream = |k: u64| SeededRng::new(derive_seed(config.seed, k));

        let channel_branch = if config.branch_mode.has_channel_branch() {
            let mut rng = stream(1);
            Some(ChannelBranch {
                conv: Conv2d::init(1, f, w, pad, &mut rng)?.without_bias(),
                norm: InstanceNorm::identity(f)?,
                reduce: Conv2d::init(f, 1, 1, pad, &mut rng)?,
            })
        } else {
            None
        };
        let temporal_branch = if config.branch_mode.has_temporal_branch() {
            let mut rng = stream(2);
            Some(TemporalBranch {
                conv: Conv1d::init(c, f, w, pad, &mut rng)?.without_bias(),
                norm: InstanceNorm::identity(f)?,
                reduce: Conv1d::init(f, 1, 1, pad, &mut rng)?,
            })
        } else {
            None
        };
        let mut rng = stream(3);
        let trunk_conv = Conv1d::init(config.trunk_input_width(), h, w, pad, &mut rng)?.without_bias();
        let trunk_norm = InstanceNorm::identity(h)?;
        let mut rng = stream(4);
        let blocks = (0..config.blocks)
            .map(|_| GatingBlock::init(t, h, config.gate_hidden, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let mut rng = stream(5);
        let head = Dense::init(h, 1, &mut rng)?;
        Ok(TgcnnModel {
            config,
            channel_branch,
            temporal_branch,
            trunk_conv,
            trunk_norm,
            gating: GatingModule::new(blocks)?,
            head,
        })
    }

    pub fn config(&self) -> &TgcnnConfig {
        &self.config
    }

    /// Replaces every parameter, in [`Parameters::visit`] order, checking names and shapes.
    pub fn load_parameters(&mut self, named: &[(String, Tensor<S>)]) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .named_parameters("")
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != named.len() {
            return Err(Error::shape(format!(
                "model has {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((name, shape), (got_name, t)) in expected.iter().zip(named) {
            if name != got_name || shape.as_slice() != t.shape() {
                return Err(Error::shape(format!(
                    "parameter {name} {shape:?} does not match {got_name} {:?}",
                    t.shape()
                )));
            }
        }
        let mut source = named.iter();
        self.visit_mut(&mut |p| *p = source.next().expect("length checked").1.clone());
        Ok(())
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 3 || shape[1] != c.time_steps || shape[2] != c.channels {
            return Err(Error::shape(format!(
                "model expects [B, {}, {}], got {shape:?}",
                c.time_steps, c.channels
            )));
        }
        Ok(())
    }

    /// Records the whole network for `x [B, T, C]`, binding parameters in visit order.
    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        x: NodeId,
        binder: &mut Binder,
    ) -> Result<FeatureNodes> {
        let shape = g.value(x).shape().to_vec();
        self.check_input(&shape)?;
        let (b, t, c) = (shape[0], shape[1], shape[2]);

        let channel_map = match &self.channel_branch {
            Some(br) => {
                let maps = g.reshape(x, &[b, 1, t, c])?;
                let h = br.conv.forward_graph(g, maps, binder)?;
                let h = br.norm.forward_graph(g, h, binder)?;
                let h = g.relu(h)?;
                let h = br.reduce.forward_graph(g, h, binder)?;
                Some(g.reshape(h, &[b, t, c])?)
            }
            None => None,
        };
        let temporal_map = match &self.temporal_branch {
            Some(br) => {
                let seq = g.permute(x, &[0, 2, 1])?;
                let h = br.conv.forward_graph(g, seq, binder)?;
                let h = br.norm.forward_graph(g, h, binder)?;
                let h = g.relu(h)?;
                let h = br.reduce.forward_graph(g, h, binder)?;
                Some(g.permute(h, &[0, 2, 1])?)
            }
            None => None,
        };
        let concatenated = match (channel_map, temporal_map) {
            (Some(cm), Some(tm)) => g.concat(2, &[cm, tm])?,
            (Some(cm), None) => cm,
            (None, Some(tm)) => tm,
            (None, None) => unreachable!("every branch mode keeps at least one branch"),
        };

        let seq = g.permute(concatenated, &[0, 2, 1])?;
        let h = self.trunk_conv.forward_graph(g, seq, binder)?;
        let h = self.trunk_norm.forward_graph(g, h, binder)?;
        let h = g.relu(h)?;
        let trunk = g.permute(h, &[0, 2, 1])?;

        let (blocks, gated) = self.gating.forward_graph_traced(g, trunk, binder)?;
        let pooled = g.mean(Axis::Index(1), gated)?;
        let head = self.head.forward_graph(g, pooled, binder)?;
        let logits = g.reshape(head, &[b])?;
        Ok(FeatureNodes {
            channel_map,
            temporal_map,
            concatenated,
            trunk,
            blocks,
            gated,
            pooled,
            logits,
        })
    }

    pub fn forward_features(&self, x: &Tensor<S>) -> Result<FeatureMaps<S>> {
        let mut g = Graph::new();
        let input = g.constant(x.clone());
        let nodes = self.forward_graph(&mut g, input, &mut Binder::frozen())?;
        let v = |id: NodeId| g.value(id).clone();
        Ok(FeatureMaps {
            channel_map: nodes.channel_map.map(v),
            temporal_map: nodes.temporal_map.map(v),
            concatenated: v(nodes.concatenated),
            trunk: v(nodes.trunk),
            blocks: nodes.blocks.iter().map(|&id| v(id)).collect(),
            gated: v(nodes.gated),
            pooled: v(nodes.pooled),
            logits: v(nodes.logits),
        })
    }

    /// Logits `[B]` for `x [B, T, C]`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut g = Graph::new();
        let input = g.constant(x.clone());
        let nodes = self.forward_graph(&mut g, input, &mut Binder::frozen())?;
        Ok(g.value(nodes.logits).clone())
    }
}

impl<S: Scalar> Parameters<S> for TgcnnModel<S> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<S>)) {
        let p = |name: &str| crate::nn::join(prefix, name);
        if let Some(br) = &self.channel_branch {
            br.conv.visit(&p("channel.conv"), f);
            br.norm.visit(&p("channel.norm"), f);
            br.reduce.visit(&p("channel.reduce"), f);
        }
        if let Some(br) = &self.temporal_branch {
            br.conv.visit(&p("temporal.conv"), f);
            br.norm.visit(&p("temporal.norm"), f);
            br.reduce.visit(&p("temporal.reduce"), f);
        }
        self.trunk_conv.visit(&p("trunk.conv"), f);
        self.trunk_norm.visit(&p("trunk.norm"), f);
        self.gating.visit(&p("gating"), f);
        self.head.visit(&p("head"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor<S>)) {
        if let Some(br) = &mut self.channel_branch {
            br.conv.visit_mut(f);
            br.norm.visit_mut(f);
            br.reduce.visit_mut(f);
        }
        if let Some(br) = &mut self.temporal_branch {
            br.conv.visit_mut(f);
            br.norm.visit_mut(f);
            br.reduce.visit_mut(f);
        }
        self.trunk_conv.visit_mut(f);
        self.trunk_norm.visit_mut(f);
        self.gating.visit_mut(f);
        self.head.visit_mut(f);
    }
}
