//! Finite-difference verification of every differentiable operation, the
//! attention layer and the training objectives.
//!
//! Each check draws random instances, reduces the output to a scalar by a
//! fixed random projection, and compares the tape's adjoints against
//! central differences of the forward pass.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gnn::{Activation, AttentionEdges, GatConfig, GatLayer};
use crate::graph::Adjacency;
use crate::objectives;
use crate::tensor::{Binding, OpKind, ParamStore, Segments, Tape, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const MIN_INSTANCES: usize = 20;

/// `|a − n| / (max(|a|, |n|) + 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + 1e-6)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One random problem: leaf values and the function of them to check.
pub struct Instance {
    inputs: Vec<Array2<f64>>,
    build: Build,
}

impl Instance {
    fn new(inputs: Vec<Array2<f64>>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Self {
        Self {
            inputs,
            build: Box::new(build),
        }
    }
}

type Generator = fn(&mut ChaCha8Rng, usize) -> Instance;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_error: f64,
    pub passed: bool,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} instances={:<3} max_rel_err={:.3e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.max_error
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub checks: Vec<CheckResult>,
    /// Differentiable operations no check exercised.
    pub uncovered: Vec<OpKind>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.uncovered.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteOptions {
    pub instances: usize,
    pub seed: u64,
    /// Operation whose adjoint is deliberately corrupted.
    pub corrupt: Option<OpKind>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            instances: MIN_INSTANCES,
            seed: 0,
            corrupt: None,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

/// Entries at least `margin` away from `center`, within `spread` of it.
fn away_from(rng: &mut ChaCha8Rng, shape: (usize, usize), center: f64, margin: f64, spread: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || {
        let magnitude = rng.random_range(margin..spread);
        if rng.random_bool(0.5) {
            center + magnitude
        } else {
            center - magnitude
        }
    })
}

fn project(tape: &mut Tape, out: Var, projection: &Array2<f64>) -> Result<Var> {
    if tape.shape(out) == (1, 1) {
        return Ok(out);
    }
    let r = tape.constant(projection.clone());
    let weighted = tape.mul(out, r)?;
    Ok(tape.sum(weighted))
}

fn evaluate(instance: &Instance, inputs: &[Array2<f64>], projection: &Array2<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let leaves: Vec<Var> = inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = (instance.build)(&mut tape, &leaves)?;
    let loss = project(&mut tape, out, projection)?;
    Ok(tape.scalar(loss))
}

/// Largest relative error over every input entry of one instance, plus
/// the operation kinds recorded by the analytic pass.
fn check_instance(instance: &Instance, rng: &mut ChaCha8Rng, corrupt: Option<OpKind>) -> Result<(f64, Vec<OpKind>)> {
    let mut tape = Tape::new();
    tape.corrupt_adjoint(corrupt);
    let leaves: Vec<Var> = instance.inputs.iter().map(|v| tape.leaf(v.clone(), true)).collect();
    let out = (instance.build)(&mut tape, &leaves)?;
    let projection = uniform(rng, tape.shape(out), -1.0, 1.0);
    let loss = project(&mut tape, out, &projection)?;
    let grads = tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    let mut inputs = instance.inputs.clone();
    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get(*leaf).cloned().unwrap_or_else(|| Array2::zeros(inputs[k].dim()));
        for idx in ndarray::indices(inputs[k].dim()) {
            let original = inputs[k][idx];
            inputs[k][idx] = original + STEP;
            let up = evaluate(instance, &inputs, &projection)?;
            inputs[k][idx] = original - STEP;
            let down = evaluate(instance, &inputs, &projection)?;
            inputs[k][idx] = original;
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[idx], numeric));
        }
    }
    Ok((worst, tape.op_kinds()))
}

fn broadcast_partner(rng: &mut ChaCha8Rng, i: usize, shape: (usize, usize)) -> Array2<f64> {
    match i % 4 {
        0 => uniform(rng, shape, -1.0, 1.0),
        1 => uniform(rng, (1, shape.1), -1.0, 1.0),
        2 => uniform(rng, (shape.0, 1), -1.0, 1.0),
        _ => uniform(rng, (1, 1), -1.0, 1.0),
    }
}

fn random_segments(rng: &mut ChaCha8Rng, rows: usize, count: usize) -> Segments {
    let ids = (0..rows).map(|_| rng.random_range(0..count)).collect();
    Segments::new(ids, count).expect("ids in range")
}

fn random_adjacency(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Adjacency {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Adjacency::from_edges(n, &edges).expect("edges in range")
}

fn gat_instance(rng: &mut ChaCha8Rng, concat: bool) -> Instance {
    let (n, in_dim) = (5, 3);
    let mut store = ParamStore::new();
    let config = GatConfig {
        heads: 2,
        head_dim: 2,
        activation: if concat { Activation::Elu } else { Activation::Identity },
        concat,
    };
    let layer = GatLayer::new(&mut store, rng, "g", in_dim, config);
    let edges = AttentionEdges::from_adjacency(&random_adjacency(rng, n, 0.4));
    let mut inputs = vec![uniform(rng, (n, in_dim), -1.0, 1.0)];
    // Attention vectors scaled up so the attention logits are not all
    // near the LeakyReLU kink.
    inputs.extend(store.iter().map(|(name, p)| {
        if name.ends_with(".a") {
            uniform(rng, p.shape(), -1.5, 1.5)
        } else {
            p.value.clone()
        }
    }));
    Instance::new(inputs, move |tape, v| {
        let binding = Binding::from_vars(v[1..].to_vec());
        layer.forward(tape, &binding, v[0], &edges)
    })
}

fn composite_instance(rng: &mut ChaCha8Rng) -> Instance {
    let shape = (4, 3);
    let steps: Vec<usize> = (0..6).map(|_| rng.random_range(0..11)).collect();
    let m = uniform(rng, (3, 3), -1.0, 1.0);
    let segments = random_segments(rng, 4, 2);
    let inputs = vec![uniform(rng, shape, -1.0, 1.0), uniform(rng, shape, -1.0, 1.0)];
    Instance::new(inputs, move |tape, v| {
        let (mut c, y) = (v[0], v[1]);
        for &step in &steps {
            c = match step {
                0 => tape.tanh(c),
                1 => tape.sigmoid(c),
                2 => tape.mul(c, y)?,
                3 => tape.add(c, y)?,
                4 => {
                    let m = tape.constant(m.clone());
                    tape.matmul(c, m)?
                }
                5 => {
                    let t = tape.tanh(c);
                    tape.exp(t)
                }
                6 => tape.log_softmax_rows(c),
                7 => {
                    let s = tape.sigmoid(c);
                    let s = tape.add_scalar(s, 0.5);
                    tape.log(s)?
                }
                8 => {
                    let half = tape.scale(y, 0.5);
                    tape.sub(c, half)?
                }
                9 => {
                    let s = tape.sigmoid(c);
                    let s = tape.add_scalar(s, 0.5);
                    tape.powf(s, 1.7)
                }
                _ => tape.softmax_over_segments(c, &segments)?,
            };
        }
        Ok(c)
    })
}

fn checks() -> Vec<(&'static str, Generator)> {
    vec![
        ("matmul", |rng, _| {
            let inputs = vec![uniform(rng, (3, 4), -1.0, 1.0), uniform(rng, (4, 2), -1.0, 1.0)];
            Instance::new(inputs, |t, v| t.matmul(v[0], v[1]))
        }),
        ("transpose", |rng, _| {
            Instance::new(vec![uniform(rng, (3, 2), -1.0, 1.0)], |t, v| Ok(t.transpose(v[0])))
        }),
        ("add", |rng, i| {
            let inputs = vec![uniform(rng, (3, 4), -1.0, 1.0), broadcast_partner(rng, i, (3, 4))];
            Instance::new(inputs, move |t, v| if i % 2 == 0 { t.add(v[0], v[1]) } else { t.add(v[1], v[0]) })
        }),
        ("sub", |rng, i| {
            let inputs = vec![uniform(rng, (3, 4), -1.0, 1.0), broadcast_partner(rng, i, (3, 4))];
            Instance::new(inputs, move |t, v| if i % 2 == 0 { t.sub(v[0], v[1]) } else { t.sub(v[1], v[0]) })
        }),
        ("elementwise_mul", |rng, i| {
            let inputs = vec![uniform(rng, (3, 4), -1.0, 1.0), broadcast_partner(rng, i, (3, 4))];
            Instance::new(inputs, move |t, v| if i % 2 == 0 { t.mul(v[0], v[1]) } else { t.mul(v[1], v[0]) })
        }),
        ("scale", |rng, _| {
            let f = rng.random_range(-3.0..3.0);
            Instance::new(vec![uniform(rng, (3, 3), -1.0, 1.0)], move |t, v| Ok(t.scale(v[0], f)))
        }),
        ("add_scalar", |rng, _| {
            let s = rng.random_range(-3.0..3.0);
            Instance::new(vec![uniform(rng, (2, 3), -1.0, 1.0)], move |t, v| Ok(t.add_scalar(v[0], s)))
        }),
        ("concat_cols", |rng, _| {
            let inputs = vec![
                uniform(rng, (3, 1), -1.0, 1.0),
                uniform(rng, (3, 2), -1.0, 1.0),
                uniform(rng, (3, 3), -1.0, 1.0),
            ];
            Instance::new(inputs, |t, v| t.concat_cols(v))
        }),
        ("gather_rows", |rng, _| {
            let index: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
            Instance::new(vec![uniform(rng, (4, 2), -1.0, 1.0)], move |t, v| t.gather_rows(v[0], index.clone()))
        }),
        ("segment_sum", |rng, _| {
            let segments = random_segments(rng, 7, 3);
            Instance::new(vec![uniform(rng, (7, 2), -1.0, 1.0)], move |t, v| t.segment_sum(v[0], &segments))
        }),
        ("exp", |rng, _| Instance::new(vec![uniform(rng, (3, 3), -2.0, 2.0)], |t, v| Ok(t.exp(v[0])))),
        ("log", |rng, _| Instance::new(vec![uniform(rng, (3, 3), 0.2, 3.0)], |t, v| t.log(v[0]))),
        ("powf", |rng, i| {
            let exponent = [-1.0, 0.5, 2.0, 2.5, -0.5][i % 5];
            Instance::new(vec![uniform(rng, (3, 3), 0.5, 2.0)], move |t, v| Ok(t.powf(v[0], exponent)))
        }),
        ("clamp_min", |rng, _| {
            Instance::new(vec![away_from(rng, (3, 4), 0.2, 0.01, 1.0)], |t, v| Ok(t.clamp_min(v[0], 0.2)))
        }),
        ("leaky_relu", |rng, _| {
            Instance::new(vec![away_from(rng, (3, 4), 0.0, 0.01, 2.0)], |t, v| Ok(t.leaky_relu(v[0], 0.2)))
        }),
        ("elu", |rng, _| Instance::new(vec![away_from(rng, (3, 4), 0.0, 0.01, 2.0)], |t, v| Ok(t.elu(v[0])))),
        ("sigmoid", |rng, _| Instance::new(vec![uniform(rng, (3, 3), -4.0, 4.0)], |t, v| Ok(t.sigmoid(v[0])))),
        ("tanh", |rng, _| Instance::new(vec![uniform(rng, (3, 3), -3.0, 3.0)], |t, v| Ok(t.tanh(v[0])))),
        ("log_sigmoid", |rng, _| {
            Instance::new(vec![uniform(rng, (3, 3), -6.0, 6.0)], |t, v| Ok(t.log_sigmoid(v[0])))
        }),
        ("softmax_over_segments", |rng, _| {
            let segments = random_segments(rng, 8, 3);
            Instance::new(vec![uniform(rng, (8, 1), -2.0, 2.0)], move |t, v| {
                t.softmax_over_segments(v[0], &segments)
            })
        }),
        ("log_softmax_rows", |rng, _| {
            Instance::new(vec![uniform(rng, (3, 4), -2.0, 2.0)], |t, v| Ok(t.log_softmax_rows(v[0])))
        }),
        ("sum", |rng, _| Instance::new(vec![uniform(rng, (3, 4), -1.0, 1.0)], |t, v| Ok(t.sum(v[0])))),
        ("sum_rows", |rng, _| Instance::new(vec![uniform(rng, (3, 4), -1.0, 1.0)], |t, v| Ok(t.sum_rows(v[0])))),
        ("sum_cols", |rng, _| Instance::new(vec![uniform(rng, (3, 4), -1.0, 1.0)], |t, v| Ok(t.sum_cols(v[0])))),
        ("frobenius_sq", |rng, _| {
            Instance::new(vec![uniform(rng, (3, 4), -1.0, 1.0)], |t, v| Ok(t.frobenius_sq(v[0])))
        }),
        ("bce_with_logits", |rng, _| {
            let targets = Arc::new(Array2::from_shape_simple_fn((4, 3), || f64::from(rng.random_bool(0.4))));
            let weight = rng.random_range(0.5..3.0);
            Instance::new(vec![uniform(rng, (4, 3), -3.0, 3.0)], move |t, v| {
                t.bce_with_logits(v[0], targets.clone(), weight)
            })
        }),
        ("gat_layer_hidden", |rng, _| gat_instance(rng, true)),
        ("gat_layer_output", |rng, _| gat_instance(rng, false)),
        ("reconstruction_loss", |rng, _| {
            let adj = random_adjacency(rng, 6, 0.3);
            Instance::new(vec![uniform(rng, (6, 3), -1.0, 1.0)], move |t, v| {
                objectives::reconstruction_loss_tape(t, v[0], &adj)
            })
        }),
        ("soft_assignment", |rng, _| {
            let inputs = vec![uniform(rng, (6, 2), -2.0, 2.0), uniform(rng, (3, 2), -2.0, 2.0)];
            Instance::new(inputs, |t, v| objectives::soft_assign_tape(t, v[0], v[1]))
        }),
        ("clustering_loss", |rng, _| {
            let (z, mu) = (uniform(rng, (6, 2), -2.0, 2.0), uniform(rng, (3, 2), -2.0, 2.0));
            let p = objectives::target_distribution(&objectives::soft_assign(&z, &mu).expect("shapes agree"));
            Instance::new(vec![z, mu], move |t, v| {
                let q = objectives::soft_assign_tape(t, v[0], v[1])?;
                Ok(objectives::clustering_loss_tape(t, &p, q)?.0)
            })
        }),
        ("total_loss", |rng, _| {
            let adj = random_adjacency(rng, 6, 0.3);
            let (z, mu) = (uniform(rng, (6, 2), -2.0, 2.0), uniform(rng, (3, 2), -2.0, 2.0));
            let p = objectives::target_distribution(&objectives::soft_assign(&z, &mu).expect("shapes agree"));
            Instance::new(vec![z, mu], move |t, v| {
                let rec = objectives::reconstruction_loss_tape(t, v[0], &adj)?;
                let q = objectives::soft_assign_tape(t, v[0], v[1])?;
                let (kl, _) = objectives::clustering_loss_tape(t, &p, q)?;
                objectives::total_loss_tape(t, rec, kl, 10.0)
            })
        }),
        ("cross_entropy", |rng, _| {
            let rows: Vec<usize> = (0..4).map(|_| rng.random_range(0..6)).collect();
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..3)).collect();
            Instance::new(vec![uniform(rng, (6, 3), -2.0, 2.0)], move |t, v| {
                objectives::cross_entropy_tape(t, v[0], &rows, &labels)
            })
        }),
        ("composite_depth6", |rng, _| composite_instance(rng)),
    ]
}

/// Names of every check in the suite, in run order.
pub fn check_names() -> Vec<&'static str> {
    checks().into_iter().map(|(name, _)| name).collect()
}

/// Runs every check and reports per-check errors and operation coverage.
pub fn run_suite(options: SuiteOptions) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut covered = BTreeSet::new();
    let mut results = Vec::new();
    for (name, generate) in checks() {
        let mut max_error: f64 = 0.0;
        for i in 0..options.instances {
            let instance = generate(&mut rng, i);
            let (error, kinds) = check_instance(&instance, &mut rng, options.corrupt)?;
            max_error = max_error.max(error);
            covered.extend(kinds.into_iter().map(|k| k.name()));
        }
        let passed = max_error < TOLERANCE && options.instances >= MIN_INSTANCES;
        log::debug!("gradcheck {name}: max relative error {max_error:.3e}");
        results.push(CheckResult {
            name,
            instances: options.instances,
            max_error,
            passed,
        });
    }
    let uncovered = OpKind::DIFFERENTIABLE
        .into_iter()
        .filter(|k| !covered.contains(k.name()))
        .collect();
    Ok(SuiteReport {
        checks: results,
        uncovered,
    })
}
