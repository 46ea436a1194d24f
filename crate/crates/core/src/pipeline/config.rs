use crate::error::{Error, Result};
use crate::gnn::EncoderShape;
use crate::graph::AttributedGraph;
use crate::pool::PoolMode;

/// Hyperparameters of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub pool: PoolMode,
    /// Fraction of nodes kept by pooling.
    pub ratio: f64,
    /// Weight of the clustering loss.
    pub lambda: f64,
    pub pretrain_epochs: usize,
    pub train_epochs: usize,
    pub classifier_epochs: usize,
    pub learning_rate: f64,
    pub classifier_learning_rate: f64,
    pub seed: u64,
    /// Epochs between K-means refits that redo the pooling selection.
    pub center_refresh: usize,
    /// Epochs between recomputations of the target distribution.
    pub target_refresh: usize,
    /// Cluster count; taken from the ground-truth labels when unset.
    pub clusters: Option<usize>,
    pub encoder: EncoderShape,
    pub classifier_hidden_heads: usize,
    pub classifier_hidden_dim: usize,
    /// Classifier epochs without improvement before stopping.
    pub classifier_patience: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pool: PoolMode::NcPool,
            ratio: 0.6,
            lambda: 10.0,
            pretrain_epochs: 200,
            train_epochs: 200,
            classifier_epochs: 100,
            learning_rate: 5e-3,
            classifier_learning_rate: 1e-2,
            seed: 0,
            center_refresh: 20,
            target_refresh: 5,
            clusters: None,
            encoder: EncoderShape::EMBEDDING,
            classifier_hidden_heads: 8,
            classifier_hidden_dim: 8,
            classifier_patience: 10,
            kmeans_max_iter: 300,
            kmeans_tol: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pretrain epochs", self.pretrain_epochs),
            ("train epochs", self.train_epochs),
            ("classifier epochs", self.classifier_epochs),
            ("center refresh", self.center_refresh),
            ("target refresh", self.target_refresh),
            ("classifier patience", self.classifier_patience),
            ("k-means iterations", self.kmeans_max_iter),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::contract(format!("{name} must be positive")));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(Error::contract(format!("ratio {} is outside (0, 1]", self.ratio)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::contract(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        for (name, lr) in [
            ("learning rate", self.learning_rate),
            ("classifier learning rate", self.classifier_learning_rate),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::contract(format!("{name} {lr} must be positive")));
            }
        }
        if self.clusters == Some(0) {
            return Err(Error::contract("cluster count must be positive"));
        }
        Ok(())
    }

    /// Cluster count for `graph`: the explicit setting, else the number of
    /// ground-truth classes.
    pub fn resolve_clusters(&self, graph: &AttributedGraph) -> Result<usize> {
        let c = self
            .clusters
            .or_else(|| graph.num_classes())
            .ok_or_else(|| Error::contract("cluster count is required for unlabeled graphs"))?;
        if c == 0 || c > graph.num_nodes() {
            return Err(Error::contract(format!(
                "cannot form {c} clusters from {} nodes",
                graph.num_nodes()
            )));
        }
        Ok(c)
    }

    /// `key = value` lines describing every setting.
    pub fn describe(&self) -> Vec<String> {
        let clusters = self.clusters.map_or_else(|| "from labels".to_string(), |c| c.to_string());
        vec![
            format!("pool = {}", self.pool),
            format!("ratio = {}", self.ratio),
            format!("lambda = {}", self.lambda),
            format!("epochs_pretrain = {}", self.pretrain_epochs),
            format!("epochs_train = {}", self.train_epochs),
            format!("epochs_clf = {}", self.classifier_epochs),
            format!("learning_rate = {}", self.learning_rate),
            format!("classifier_learning_rate = {}", self.classifier_learning_rate),
            format!("seed = {}", self.seed),
            format!("center_refresh = {}", self.center_refresh),
            format!("target_refresh = {}", self.target_refresh),
            format!("clusters = {clusters}"),
            format!(
                "encoder = {}x{} hidden, {}x{} output",
                self.encoder.hidden_heads, self.encoder.hidden_head_dim, self.encoder.out_heads, self.encoder.out_dim
            ),
            format!(
                "classifier = {}x{} hidden, patience {}",
                self.classifier_hidden_heads, self.classifier_hidden_dim, self.classifier_patience
            ),
            format!("kmeans = {} restarts, max_iter {}, tol {}", crate::pool::RESTARTS, self.kmeans_max_iter, self.kmeans_tol),
        ]
    }
}
