use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::error::{Error, Result};
use crate::gnn::{glorot_uniform, Activation, AttentionEdges, Encoder, GatConfig, GatLayer};
use crate::graph::{compute_snn, Adjacency, AttributedGraph, SnnTable};
use crate::metrics::ClusterMetrics;
use crate::objectives::{self, ClusterState};
use crate::pool::{kmeans, ncpool, topk_gate_on_tape, topk_pool_baseline, PoolMode, PooledGraph};
use crate::tensor::{Adam, Binding, Gradients, ParamStore, Tape, Var};

/// Training stage a loss value or timing belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Pretrain,
    Warmup,
    Train,
    Classifier,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::Warmup => "warmup",
            Phase::Train => "train",
            Phase::Classifier => "classifier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub loss: f64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: TrainConfig,
    pub clusters: usize,
    /// Final cluster of every node.
    pub labels: Vec<usize>,
    /// Scores of `labels` against the ground truth, when there is one.
    pub metrics: Option<ClusterMetrics>,
    /// Scores of the local K-means labels on the selected nodes.
    pub selected_metrics: Option<ClusterMetrics>,
    pub losses: Vec<LossRecord>,
    pub selected: Vec<usize>,
    pub selected_labels: Vec<usize>,
    pub timings: Vec<(Phase, Duration)>,
    pub warnings: Vec<String>,
    /// Global embedding of every node.
    pub global_embedding: Array2<f64>,
    /// Local embedding of the selected nodes, in `selected` order.
    pub local_embedding: Array2<f64>,
}

impl RunReport {
    pub fn phase_losses(&self, phase: Phase) -> Vec<f64> {
        self.losses.iter().filter(|r| r.phase == phase).map(|r| r.loss).collect()
    }
}

/// Result of joint training.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub z: Array2<f64>,
    pub pooled: PooledGraph,
    pub state: ClusterState,
    pub losses: Vec<f64>,
    pub warnings: Vec<String>,
}

fn finite(phase: Phase, epoch: usize, loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            phase: phase.name(),
            epoch,
            loss,
        })
    }
}

fn apply(store: &mut ParamStore, adam: &mut Adam, grads: &Gradients, binding: &Binding) -> Result<()> {
    store.zero_grad();
    store.accumulate(grads, binding)?;
    adam.step(store)
}

/// Distinct stream per use of the run seed.
fn derived_seed(seed: u64, stream: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(step)
}

const KMEANS_POOL: u64 = 1;
const KMEANS_CENTERS: u64 = 2;
const KMEANS_LOCAL: u64 = 3;

/// Collapse warning: a cluster's share of the soft assignment stays below
/// `1 / (10 C)` for this many consecutive target refreshes.
const COLLAPSE_REFRESHES: usize = 10;

/// Global and local encoders, trainable cluster centers and the top-k
/// projection, with their optimizers.
pub struct Dgen {
    config: TrainConfig,
    clusters: usize,
    global_store: ParamStore,
    global: Encoder,
    global_adam: Adam,
    local_store: ParamStore,
    local: Encoder,
    local_adam: Adam,
    centers_store: ParamStore,
    centers_adam: Adam,
    projection_store: ParamStore,
    projection_adam: Adam,
    edges: AttentionEdges,
    snn: SnnTable,
}

struct Selection {
    pooled: PooledGraph,
    edges: AttentionEdges,
}

impl Dgen {
    pub fn new(graph: &AttributedGraph, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let clusters = config.resolve_clusters(graph)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut global_store = ParamStore::new();
        let global = Encoder::two_layer(&mut global_store, &mut rng, "global", graph.feature_dim(), config.encoder);
        let mut local_store = ParamStore::new();
        let local = Encoder::two_layer(&mut local_store, &mut rng, "local", global.out_dim(), config.encoder);
        let mut centers_store = ParamStore::new();
        centers_store.add("centers", Array2::zeros((clusters, local.out_dim())));
        let mut projection_store = ParamStore::new();
        if config.pool == PoolMode::TopK {
            projection_store.add("pool.p", glorot_uniform(&mut rng, global.out_dim(), 1));
        }
        Ok(Self {
            config: config.clone(),
            clusters,
            global_store,
            global,
            global_adam: Adam::new(config.learning_rate),
            local_store,
            local,
            local_adam: Adam::new(config.learning_rate),
            centers_store,
            centers_adam: Adam::new(config.learning_rate),
            projection_store,
            projection_adam: Adam::new(config.learning_rate),
            edges: AttentionEdges::from_adjacency(graph.adjacency()),
            snn: compute_snn(graph),
        })
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn global_params(&self) -> &ParamStore {
        &self.global_store
    }

    pub fn local_params(&self) -> &ParamStore {
        &self.local_store
    }

    pub fn centers(&self) -> &Array2<f64> {
        &self.centers_store.get(self.centers_store.find("centers").expect("centers")).value
    }

    /// Trains the global encoder to reconstruct `A + I` of the whole graph.
    pub fn pretrain(&mut self, graph: &AttributedGraph) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.config.pretrain_epochs);
        for epoch in 0..self.config.pretrain_epochs {
            let mut tape = Tape::new();
            let binding = self.global_store.bind(&mut tape);
            let x = tape.constant(graph.features().clone());
            let h = self.global.encode(&mut tape, &binding, x, &self.edges)?;
            let loss = objectives::reconstruction_loss_tape(&mut tape, h, graph.adjacency())?;
            losses.push(finite(Phase::Pretrain, epoch, tape.scalar(loss))?);
            let grads = tape.backward(loss)?;
            apply(&mut self.global_store, &mut self.global_adam, &grads, &binding)?;
        }
        Ok(losses)
    }

    /// Global embedding `H_g` of every node.
    pub fn global_embedding(&self, graph: &AttributedGraph) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let binding = self.global_store.bind(&mut tape);
        let x = tape.constant(graph.features().clone());
        let h = self.global.encode(&mut tape, &binding, x, &self.edges)?;
        Ok(tape.value(h).clone())
    }

    fn select(&self, h: &Array2<f64>, adj: &Adjacency, refresh: u64) -> Result<Selection> {
        let pooled = match self.config.pool {
            PoolMode::None => PooledGraph::identity(h, adj),
            PoolMode::NcPool => {
                let km = kmeans(
                    h,
                    self.clusters,
                    derived_seed(self.config.seed, KMEANS_POOL, refresh),
                    self.config.kmeans_max_iter,
                    self.config.kmeans_tol,
                )?;
                ncpool(h, adj, self.config.ratio, &km, &self.snn)?
            }
            PoolMode::TopK => {
                let id = self.projection_store.find("pool.p").expect("projection");
                let p = self.projection_store.get(id).value.column(0).to_owned();
                topk_pool_baseline(h, adj, self.config.ratio, &p)?
            }
        };
        let edges = AttentionEdges::from_adjacency(&pooled.adjacency);
        Ok(Selection { pooled, edges })
    }

    /// Gated pooled features on the tape.
    fn gate(&self, tape: &mut Tape, h: Var, pooled: &PooledGraph, projection: Option<&Binding>) -> Result<Var> {
        match (self.config.pool, projection) {
            (PoolMode::TopK, Some(binding)) => {
                let id = self.projection_store.find("pool.p").expect("projection");
                topk_gate_on_tape(tape, h, binding[id], &pooled.selected)
            }
            _ => pooled.gate_on_tape(tape, h),
        }
    }

    /// Fits the local encoder to reconstruct the initial pooled graph so
    /// its embedding is meaningful before the centers are placed.
    fn warm_up(&mut self, h: &Array2<f64>, selection: &Selection) -> Result<Vec<f64>> {
        let mut losses = Vec::with_capacity(self.config.pretrain_epochs);
        for epoch in 0..self.config.pretrain_epochs {
            let mut tape = Tape::new();
            let binding = self.local_store.bind(&mut tape);
            let projection = self.projection_store.bind(&mut tape);
            let hv = tape.constant(h.clone());
            let gated = self.gate(&mut tape, hv, &selection.pooled, Some(&projection))?;
            let z = self.local.encode(&mut tape, &binding, gated, &selection.edges)?;
            let loss = objectives::reconstruction_loss_tape(&mut tape, z, &selection.pooled.adjacency)?;
            losses.push(finite(Phase::Warmup, epoch, tape.scalar(loss))?);
            let grads = tape.backward(loss)?;
            apply(&mut self.local_store, &mut self.local_adam, &grads, &binding)?;
        }
        Ok(losses)
    }

    fn local_embedding(&self, h: &Array2<f64>, selection: &Selection) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let binding = self.local_store.bind(&mut tape);
        let projection = self.projection_store.bind(&mut tape);
        let hv = tape.constant(h.clone());
        let gated = self.gate(&mut tape, hv, &selection.pooled, Some(&projection))?;
        let z = self.local.encode(&mut tape, &binding, gated, &selection.edges)?;
        Ok(tape.value(z).clone())
    }

    /// Joint self-optimizing training through pooling and the local
    /// encoder. Returns warm-up losses and the training outcome.
    pub fn train(&mut self, graph: &AttributedGraph) -> Result<(Vec<f64>, TrainOutcome)> {
        let config = self.config.clone();
        let adj = graph.adjacency();
        let h0 = self.global_embedding(graph)?;
        let mut selection = self.select(&h0, adj, 0)?;
        let warmup = self.warm_up(&h0, &selection)?;

        let z0 = self.local_embedding(&h0, &selection)?;
        let init = kmeans(
            &z0,
            self.clusters.min(z0.nrows()),
            derived_seed(config.seed, KMEANS_CENTERS, 0),
            config.kmeans_max_iter,
            config.kmeans_tol,
        )?;
        if init.num_clusters() < self.clusters {
            return Err(Error::contract(format!(
                "{} pooled nodes cannot hold {} clusters",
                z0.nrows(),
                self.clusters
            )));
        }
        let centers_id = self.centers_store.find("centers").expect("centers");
        self.centers_store.get_mut(centers_id).value = init.centers;

        let mut p = objectives::target_distribution(&objectives::soft_assign(&z0, self.centers())?);
        let mut losses = Vec::with_capacity(config.train_epochs);
        let mut warnings = Vec::new();
        let mut low_mass_streak = 0;
        let mut refreshes = 0u64;
        let floor = 1.0 / (10.0 * self.clusters as f64);

        for epoch in 0..config.train_epochs {
            let mut tape = Tape::new();
            let gb = self.global_store.bind(&mut tape);
            let lb = self.local_store.bind(&mut tape);
            let cb = self.centers_store.bind(&mut tape);
            let pb = self.projection_store.bind(&mut tape);
            let x = tape.constant(graph.features().clone());
            let h = self.global.encode(&mut tape, &gb, x, &self.edges)?;

            let mut selection_changed = false;
            if epoch > 0 && epoch % config.center_refresh == 0 && config.pool != PoolMode::None {
                refreshes += 1;
                let next = self.select(tape.value(h), adj, refreshes)?;
                selection_changed = next.pooled.selected != selection.pooled.selected;
                selection = next;
            }

            let gated = self.gate(&mut tape, h, &selection.pooled, Some(&pb))?;
            let z = self.local.encode(&mut tape, &lb, gated, &selection.edges)?;
            let q = objectives::soft_assign_tape(&mut tape, z, cb[centers_id])?;
            if epoch % config.target_refresh == 0 || selection_changed {
                let qv = tape.value(q);
                p = objectives::target_distribution(qv);
                let n = qv.nrows() as f64;
                let starved = qv.sum_axis(ndarray::Axis(0)).iter().any(|&m| m / n < floor);
                low_mass_streak = if starved { low_mass_streak + 1 } else { 0 };
                if low_mass_streak == COLLAPSE_REFRESHES {
                    let message = format!(
                        "cluster collapse: some cluster held under {floor:.4} of the soft assignment for {COLLAPSE_REFRESHES} refreshes (epoch {epoch})"
                    );
                    log::warn!("{message}");
                    warnings.push(message);
                }
            }
            let rec = objectives::reconstruction_loss_tape(&mut tape, z, &selection.pooled.adjacency)?;
            let (kl, _) = objectives::clustering_loss_tape(&mut tape, &p, q)?;
            let kl = tape.scale(kl, 1.0 / selection.pooled.len() as f64);
            let loss = objectives::total_loss_tape(&mut tape, rec, kl, config.lambda)?;
            losses.push(finite(Phase::Train, epoch, tape.scalar(loss))?);

            let grads = tape.backward(loss)?;
            apply(&mut self.global_store, &mut self.global_adam, &grads, &gb)?;
            apply(&mut self.local_store, &mut self.local_adam, &grads, &lb)?;
            apply(&mut self.centers_store, &mut self.centers_adam, &grads, &cb)?;
            if !self.projection_store.is_empty() {
                apply(&mut self.projection_store, &mut self.projection_adam, &grads, &pb)?;
            }
        }

        let h = self.global_embedding(graph)?;
        let z = self.local_embedding(&h, &selection)?;
        let state = ClusterState::from_embedding(&z, self.centers().clone())?;
        Ok((
            warmup,
            TrainOutcome {
                z,
                pooled: selection.pooled,
                state,
                losses,
                warnings,
            },
        ))
    }
}

/// K-means labels of the local embedding.
pub fn local_cluster(z: &Array2<f64>, clusters: usize, config: &TrainConfig) -> Result<Vec<usize>> {
    if z.nrows() == 0 {
        return Err(Error::EmptyInput("no selected nodes to cluster".into()));
    }
    let model = kmeans(
        z,
        clusters,
        derived_seed(config.seed, KMEANS_LOCAL, 0),
        config.kmeans_max_iter,
        config.kmeans_tol,
    )?;
    Ok(model.assignments)
}

/// Two-layer attention classifier over raw features and the full graph.
pub struct Classifier {
    store: ParamStore,
    encoder: Encoder,
    edges: AttentionEdges,
}

impl Classifier {
    pub fn new(graph: &AttributedGraph, classes: usize, config: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(config.seed, 4, 0));
        let mut store = ParamStore::new();
        let hidden = GatLayer::new(
            &mut store,
            &mut rng,
            "classifier.l0",
            graph.feature_dim(),
            GatConfig {
                heads: config.classifier_hidden_heads,
                head_dim: config.classifier_hidden_dim,
                activation: Activation::Elu,
                concat: true,
            },
        );
        let output = GatLayer::new(
            &mut store,
            &mut rng,
            "classifier.l1",
            hidden.out_dim(),
            GatConfig {
                heads: 1,
                head_dim: classes,
                activation: Activation::Identity,
                concat: false,
            },
        );
        Ok(Self {
            store,
            encoder: Encoder::from_layers(vec![hidden, output])?,
            edges: AttentionEdges::from_adjacency(graph.adjacency()),
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn logits(&self, graph: &AttributedGraph) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let x = tape.constant(graph.features().clone());
        let out = self.encoder.encode(&mut tape, &binding, x, &self.edges)?;
        Ok(tape.value(out).clone())
    }

    /// Highest-scoring class of every node, lowest index on ties.
    pub fn predict_all(&self, graph: &AttributedGraph) -> Result<Vec<usize>> {
        Ok(objectives::hard_labels(&self.logits(graph)?))
    }
}

/// Trains a classifier on the labels of the selected nodes. Attention
/// runs over the whole graph; only the selected nodes enter the loss.
pub fn train_classifier(
    graph: &AttributedGraph,
    selected: &[usize],
    labels: &[usize],
    classes: usize,
    config: &TrainConfig,
) -> Result<(Classifier, Vec<f64>)> {
    if selected.len() != labels.len() {
        return Err(Error::contract("one label per selected node is required"));
    }
    let distinct: std::collections::BTreeSet<_> = labels.iter().collect();
    if distinct.len() < 2 {
        return Err(Error::DegenerateLabels(format!(
            "{} selected nodes carry {} distinct label(s)",
            labels.len(),
            distinct.len()
        )));
    }
    let mut classifier = Classifier::new(graph, classes, config)?;
    let mut adam = Adam::new(config.classifier_learning_rate);
    let mut losses = Vec::with_capacity(config.classifier_epochs);
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..config.classifier_epochs {
        let mut tape = Tape::new();
        let binding = classifier.store.bind(&mut tape);
        let x = tape.constant(graph.features().clone());
        let logits = classifier.encoder.encode(&mut tape, &binding, x, &classifier.edges)?;
        let loss = objectives::cross_entropy_tape(&mut tape, logits, selected, labels)?;
        let value = finite(Phase::Classifier, epoch, tape.scalar(loss))?;
        losses.push(value);
        if value < best - 1e-6 {
            best = value;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.classifier_patience {
                log::info!("classifier plateaued at epoch {epoch}");
                break;
            }
        }
        let grads = tape.backward(loss)?;
        apply(&mut classifier.store, &mut adam, &grads, &binding)?;
    }
    Ok((classifier, losses))
}

/// The full procedure: pretraining, joint training, local clustering and
/// the classifier that labels every node.
pub fn run(graph: &AttributedGraph, config: &TrainConfig) -> Result<RunReport> {
    let mut timings = Vec::new();
    let mut losses = Vec::new();
    let record = |losses: &mut Vec<LossRecord>, phase: Phase, values: &[f64]| {
        losses.extend(values.iter().enumerate().map(|(epoch, &loss)| LossRecord { phase, epoch, loss }));
    };

    let mut model = Dgen::new(graph, config)?;
    let clusters = model.clusters();

    let start = Instant::now();
    let pretrain = model.pretrain(graph)?;
    record(&mut losses, Phase::Pretrain, &pretrain);
    timings.push((Phase::Pretrain, start.elapsed()));

    let start = Instant::now();
    let (warmup, outcome) = model.train(graph)?;
    record(&mut losses, Phase::Warmup, &warmup);
    record(&mut losses, Phase::Train, &outcome.losses);
    timings.push((Phase::Train, start.elapsed()));

    let start = Instant::now();
    let selected_labels = local_cluster(&outcome.z, clusters, config)?;
    let (classifier, clf_losses) = train_classifier(graph, &outcome.pooled.selected, &selected_labels, clusters, config)?;
    let labels = classifier.predict_all(graph)?;
    record(&mut losses, Phase::Classifier, &clf_losses);
    timings.push((Phase::Classifier, start.elapsed()));

    let (metrics, selected_metrics) = match graph.labels() {
        Some(truth) => {
            let picked: Vec<usize> = outcome.pooled.selected.iter().map(|&i| truth[i]).collect();
            (
                Some(ClusterMetrics::evaluate(&labels, truth)?),
                Some(ClusterMetrics::evaluate(&selected_labels, &picked)?),
            )
        }
        None => (None, None),
    };

    Ok(RunReport {
        config: config.clone(),
        clusters,
        labels,
        metrics,
        selected_metrics,
        losses,
        selected: outcome.pooled.selected,
        selected_labels,
        timings,
        warnings: outcome.warnings,
        global_embedding: model.global_embedding(graph)?,
        local_embedding: outcome.z,
    })
}

/// Runs the same configuration once per pooling mode.
pub fn run_ablation(graph: &AttributedGraph, config: &TrainConfig, variants: &[PoolMode]) -> Result<Vec<RunReport>> {
    variants
        .iter()
        .map(|&pool| run(graph, &TrainConfig { pool, ..config.clone() }))
        .collect()
}
