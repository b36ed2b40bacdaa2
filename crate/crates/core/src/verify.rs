//! Finite-difference verification of every differentiable primitive, layer and the
//! end-to-end model.

use crate::autodiff::{finite_difference_check, Graph, NodeId};
use crate::error::Result;
use crate::model::{BranchMode, TgcnnConfig, TgcnnModel};
use crate::nn::{Binder, Dense, GatingBlock, InstanceNorm, Parameters};
use crate::ops::Padding;
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::{Axis, ReduceOp, Tensor};

/// Tolerance on the maximum relative error for a component to pass.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_SEEDS: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ComponentCheck {
    pub name: String,
    pub max_relative_error: f64,
}

impl ComponentCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

fn normal(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal(0.0, 1.0)).collect())
}

/// Values bounded away from zero, for divisors.
fn away_from_zero(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor<f64>> {
    normal(shape, rng)?.map(|v| v.signum() * (0.5 + v.abs()))
}

/// Reduces an arbitrary node to a nonlinear scalar: `Σ r ⊙ tanh(out)` with fixed random `r`.
fn probe(g: &mut Graph<f64>, out: NodeId, rng_seed: u64) -> Result<NodeId> {
    let mut rng = SeededRng::new(rng_seed);
    let weights = normal(g.value(out).shape(), &mut rng)?;
    let r = g.constant(weights);
    let squashed = g.tanh(out)?;
    let weighted = g.mul(squashed, r)?;
    g.sum(weighted)
}

type Builder = Box<dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>>;

struct Case {
    name: &'static str,
    params: Vec<Tensor<f64>>,
    f: Builder,
}

fn cases(seed: u64) -> Result<Vec<Case>> {
    let mut rng = SeededRng::new(seed);
    let ps = derive_seed(seed, 99);
    let mut out = Vec::new();
    let mut push = |name, params, f: Builder| out.push(Case { name, params, f });

    let a = normal(&[3, 4], &mut rng)?;
    let b = normal(&[3, 4], &mut rng)?;
    let row = normal(&[4], &mut rng)?;
    push("add", vec![a.clone(), row.clone()], Box::new(move |g, p| {
        let o = g.add(p[0], p[1])?;
        probe(g, o, ps)
    }));
    push("sub", vec![a.clone(), b.clone()], Box::new(move |g, p| {
        let o = g.sub(p[0], p[1])?;
        probe(g, o, ps)
    }));
    push("mul", vec![a.clone(), row.clone()], Box::new(move |g, p| {
        let o = g.mul(p[0], p[1])?;
        probe(g, o, ps)
    }));
    push(
        "div",
        vec![a.clone(), away_from_zero(&[4], &mut rng)?],
        Box::new(move |g, p| {
            let o = g.div(p[0], p[1])?;
            probe(g, o, ps)
        }),
    );
    push(
        "matmul",
        vec![a.clone(), normal(&[4, 2], &mut rng)?],
        Box::new(move |g, p| {
            let o = g.matmul(p[0], p[1])?;
            probe(g, o, ps)
        }),
    );
    push(
        "concat",
        vec![a.clone(), normal(&[3, 2], &mut rng)?],
        Box::new(move |g, p| {
            let o = g.concat(1, &[p[0], p[1]])?;
            probe(g, o, ps)
        }),
    );
    push("split_half", vec![a.clone()], Box::new(move |g, p| {
        let (u, v) = g.split_half(1, p[0])?;
        let o = g.mul(u, v)?;
        probe(g, o, ps)
    }));
    push("sum", vec![a.clone()], Box::new(move |g, p| {
        let o = g.reduce(ReduceOp::Sum, Axis::Index(0), p[0])?;
        probe(g, o, ps)
    }));
    push("mean", vec![a.clone()], Box::new(move |g, p| {
        let o = g.reduce(ReduceOp::Mean, Axis::Index(1), p[0])?;
        probe(g, o, ps)
    }));
    push("reshape_permute", vec![normal(&[2, 3, 4], &mut rng)?], Box::new(move |g, p| {
        let o = g.permute(p[0], &[2, 0, 1])?;
        let o = g.reshape(o, &[4, 6])?;
        probe(g, o, ps)
    }));
    push(
        "conv1d",
        vec![
            normal(&[2, 3, 7], &mut rng)?,
            normal(&[4, 3, 3], &mut rng)?,
            normal(&[4], &mut rng)?,
        ],
        Box::new(move |g, p| {
            let o = g.conv1d(p[0], p[1], p[2], Padding::SameZero)?;
            probe(g, o, ps)
        }),
    );
    push(
        "conv2d",
        vec![
            normal(&[2, 2, 6, 3], &mut rng)?,
            normal(&[3, 2, 3, 1], &mut rng)?,
            normal(&[3], &mut rng)?,
        ],
        Box::new(move |g, p| {
            let o = g.conv2d(p[0], p[1], p[2], Padding::Valid)?;
            probe(g, o, ps)
        }),
    );
    push(
        "instance_norm",
        vec![
            normal(&[2, 3, 5], &mut rng)?,
            normal(&[3], &mut rng)?,
            normal(&[3], &mut rng)?,
        ],
        Box::new(move |g, p| {
            let o = g.instance_norm(p[0], p[1], p[2], 1e-5)?;
            probe(g, o, ps)
        }),
    );
    for (name, kind) in [
        ("relu", crate::ops::Activation::Relu),
        ("gelu", crate::ops::Activation::Gelu),
        ("tanh", crate::ops::Activation::Tanh),
        ("sigmoid", crate::ops::Activation::Sigmoid),
    ] {
        push(name, vec![normal(&[3, 4], &mut rng)?], Box::new(move |g, p| {
            let o = g.activation(kind, p[0])?;
            probe(g, o, ps)
        }));
    }
    push(
        "dense",
        vec![
            normal(&[2, 3, 4], &mut rng)?,
            normal(&[5, 4], &mut rng)?,
            normal(&[5], &mut rng)?,
        ],
        Box::new(move |g, p| {
            let o = g.dense(p[0], p[1], p[2])?;
            probe(g, o, ps)
        }),
    );
    push(
        "time_mix",
        vec![
            normal(&[2, 5, 3], &mut rng)?,
            normal(&[5, 5], &mut rng)?,
            normal(&[5], &mut rng)?,
        ],
        Box::new(move |g, p| {
            let o = g.time_mix(p[0], p[1], p[2])?;
            probe(g, o, ps)
        }),
    );
    let labels: Vec<f64> = (0..6).map(|_| (rng.below(2)) as f64).collect();
    push("bce_with_logits", vec![normal(&[6], &mut rng)?], Box::new(move |g, p| {
        g.bce_with_logits(p[0], &labels)
    }));

    // A gating block with non-trivial time mixing, differentiated through every parameter.
    let mut block = GatingBlock::<f64>::init(5, 3, 2, &mut rng)?;
    block.norm = InstanceNorm::new(normal(&[3], &mut rng)?, normal(&[3], &mut rng)?, 1e-5)?;
    block.time_mix_weight = normal(&[5, 5], &mut rng)?.map(|v| 0.3 * v)?;
    block.proj_out = Dense::init(2, 3, &mut rng)?;
    let mut params = vec![normal(&[2, 5, 3], &mut rng)?];
    block.visit("", &mut |_, t| params.push(t.clone()));
    push("gating_block", params, Box::new(move |g, p| {
        let o = block.forward_graph(g, p[0], &mut Binder::replay(p[1..].to_vec()))?;
        probe(g, o, ps)
    }));
    Ok(out)
}

/// The smallest configuration that exercises every model component.
pub fn gradcheck_model_config(mode: BranchMode, seed: u64) -> TgcnnConfig {
    TgcnnConfig {
        time_steps: 6,
        channels: 4,
        window: 3,
        filters: 2,
        hidden: 4,
        gate_hidden: 4,
        blocks: 1,
        branch_mode: mode,
        seed,
    }
}

/// End-to-end check: BCE of the model's logits on a random batch.
///
/// The loss is taken relative to the logits at the unperturbed parameters. That leaves
/// every gradient unchanged but spares the central differences the rounding of a loss
/// near ln 2, which is otherwise a whole ulp per evaluation.
pub fn model_gradcheck(config: TgcnnConfig, data_seed: u64, eps: f64) -> Result<f64> {
    let mut model = TgcnnModel::<f64>::build(config.clone())?;
    let mut rng = SeededRng::new(data_seed);
    // Exercise non-trivial time mixing rather than the zero initialisation.
    for block in &mut model.gating.blocks {
        block.time_mix_weight = normal(block.time_mix_weight.shape(), &mut rng)?.map(|v| 0.3 * v)?;
    }
    let batch = 3;
    let x = normal(&[batch, config.time_steps, config.channels], &mut rng)?;
    let labels: Vec<f64> = (0..batch).map(|i| (i % 2) as f64).collect();
    let params: Vec<Tensor<f64>> = model
        .named_parameters("")
        .into_iter()
        .map(|(_, t)| t.clone())
        .collect();
    let reference = model.forward(&x)?;
    let f = move |g: &mut Graph<f64>, p: &[NodeId]| {
        let input = g.constant(x.clone());
        let nodes = model.forward_graph(g, input, &mut Binder::replay(p.to_vec()))?;
        g.bce_with_logits_excess(nodes.logits, &labels, &reference)
    };
    finite_difference_check(f, &params, eps)
}

/// Runs every component over `GRADCHECK_SEEDS` consecutive seeds and reports the worst error of each.
pub fn gradient_suite(seed: u64, eps: f64) -> Result<Vec<ComponentCheck>> {
    let mut report: Vec<ComponentCheck> = Vec::new();
    let mut record = |name: &str, err: f64| match report.iter_mut().find(|c| c.name == name) {
        Some(c) => c.max_relative_error = c.max_relative_error.max(err),
        None => report.push(ComponentCheck {
            name: name.to_string(),
            max_relative_error: err,
        }),
    };
    for s in seed..seed + GRADCHECK_SEEDS {
        for case in cases(s)? {
            let err = finite_difference_check(&case.f, &case.params, eps)?;
            record(case.name, err);
        }
        for mode in BranchMode::ALL {
            let name = format!("model_{mode}");
            let err = model_gradcheck(gradcheck_model_config(mode, s), derive_seed(s, 7), eps)?;
            record(&name, err);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_one_seed() {
        let mut worst = Vec::new();
        for case in cases(17).unwrap() {
            let err = finite_difference_check(&case.f, &case.params, 1e-5).unwrap();
            worst.push((case.name, err));
        }
        for mode in BranchMode::ALL {
            let err = model_gradcheck(gradcheck_model_config(mode, 17), 3, 1e-5).unwrap();
            worst.push(("model", err));
        }
        for (name, err) in &worst {
            eprintln!("{name}: {err:e}");
        }
        assert!(worst.iter().all(|(_, e)| *e < GRADCHECK_TOLERANCE));
    }

    #[test]
    fn huge_step_fails() {
        let report = gradient_suite(0, 10.0).unwrap();
        assert!(report.iter().any(|c| !c.passed()));
    }
}
