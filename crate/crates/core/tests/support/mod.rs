//! Brute-force reference implementations and randomized comparison
//! suites, shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::HashMap;

use dgen::graph::{compute_snn, AttributedGraph};
use dgen::metrics::{accuracy, ari, nmi};
use dgen::objectives::{clustering_loss, soft_assign, target_distribution};
use dgen::pool::{assign, kmeans, ncpool, node_scores, topk_pool_baseline};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of a randomized comparison.
#[derive(Debug, Default)]
pub struct Tally {
    pub instances: usize,
    pub mismatches: Vec<String>,
}

impl Tally {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok && self.mismatches.len() < 10 {
            self.mismatches.push(what());
        }
    }

    pub fn summary(&self) -> String {
        if self.passed() {
            format!("{} instances, no mismatch", self.instances)
        } else {
            format!("{} instances, first mismatches: {:?}", self.instances, self.mismatches)
        }
    }
}

pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64, dim: usize) -> AttributedGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let x = Array2::from_shape_simple_fn((n, dim), || rng.random_range(-2.0..2.0));
    AttributedGraph::new(x, &edges, None).unwrap()
}

pub fn dense(graph: &AttributedGraph) -> Vec<Vec<bool>> {
    let n = graph.num_nodes();
    let mut a = vec![vec![false; n]; n];
    for (u, v) in graph.edges() {
        a[u][v] = true;
        a[v][u] = true;
    }
    a
}

/// Shared-neighbor counts for adjacent pairs and the best neighbor of
/// each node, by direct set intersection.
pub fn brute_snn(a: &[Vec<bool>]) -> (Vec<Vec<u32>>, Vec<usize>) {
    let n = a.len();
    let mut sim = vec![vec![0u32; n]; n];
    for i in 0..n {
        for j in 0..n {
            if a[i][j] {
                sim[i][j] = (0..n).filter(|&k| k != i && k != j && a[i][k] && a[j][k]).count() as u32;
            }
        }
    }
    let nearest = (0..n)
        .map(|i| {
            let mut best: Option<usize> = None;
            for j in 0..n {
                if a[i][j] && best.is_none_or(|b| sim[i][j] > sim[i][b]) {
                    best = Some(j);
                }
            }
            best.unwrap_or(i)
        })
        .collect();
    (sim, nearest)
}

pub fn snn_suite(seed: u64, instances: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for t in 0..instances {
        let n = rng.random_range(1..=50);
        let p = rng.random_range(0.0..0.5);
        let g = random_graph(&mut rng, n, p, 1);
        let table = compute_snn(&g);
        let (sim, nearest) = brute_snn(&dense(&g));
        for i in 0..n {
            tally.check(table.nearest_neighbor(i) == nearest[i], || format!("instance {t}: nearest of {i}"));
            for j in 0..n {
                tally.check(table.similarity(i, j) == sim[i][j], || format!("instance {t}: sim({i},{j})"));
            }
        }
        tally.instances += 1;
    }
    tally
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `⌈num/den · n⌉` in integer arithmetic.
pub fn exact_ceil(n: usize, num: usize, den: usize) -> usize {
    (num * n).div_ceil(den)
}

pub struct BrutePool {
    pub selected: Vec<usize>,
    pub gates: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    pub adjacency: Vec<Vec<bool>>,
}

fn brute_assemble(h: &Array2<f64>, a: &[Vec<bool>], selected: Vec<usize>, gates: Vec<f64>) -> BrutePool {
    let features = selected
        .iter()
        .zip(&gates)
        .map(|(&i, g)| h.row(i).iter().map(|v| v * g).collect())
        .collect();
    let adjacency = selected
        .iter()
        .map(|&u| selected.iter().map(|&v| a[u][v]).collect())
        .collect();
    BrutePool {
        selected,
        gates,
        features,
        adjacency,
    }
}

/// Scores from the definition: own distance to the nearest center plus
/// the nearest neighbor's distance to that same center.
pub fn brute_scores(h: &Array2<f64>, centers: &Array2<f64>, nearest: &[usize]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = h.rows().into_iter().map(|r| r.to_vec()).collect();
    let cs: Vec<Vec<f64>> = centers.rows().into_iter().map(|r| r.to_vec()).collect();
    (0..rows.len())
        .map(|i| {
            let mut c = 0;
            for j in 1..cs.len() {
                if sq(&rows[i], &cs[j]) < sq(&rows[i], &cs[c]) {
                    c = j;
                }
            }
            sq(&rows[i], &cs[c]) + sq(&rows[nearest[i]], &cs[c])
        })
        .collect()
}

pub fn brute_ncpool(h: &Array2<f64>, a: &[Vec<bool>], size: usize, scores: &[f64]) -> BrutePool {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Insertion sort on (score, index).
    for i in 1..order.len() {
        let mut j = i;
        while j > 0 && (scores[order[j]], order[j]) < (scores[order[j - 1]], order[j - 1]) {
            order.swap(j, j - 1);
            j -= 1;
        }
    }
    order.truncate(size);
    let gates = order.iter().map(|&i| 1.0 / (1.0 + scores[i])).collect();
    brute_assemble(h, a, order, gates)
}

fn compare_pool(tally: &mut Tally, t: usize, got: &dgen::pool::PooledGraph, want: &BrutePool) {
    tally.check(got.selected == want.selected, || {
        format!("instance {t}: selected {:?} vs {:?}", got.selected, want.selected)
    });
    if got.selected != want.selected {
        return;
    }
    for p in 0..want.selected.len() {
        tally.check((got.gates[p] - want.gates[p]).abs() < 1e-9, || format!("instance {t}: gate {p}"));
        for (c, w) in want.features[p].iter().enumerate() {
            tally.check((got.features[[p, c]] - w).abs() < 1e-9, || format!("instance {t}: feature ({p},{c})"));
        }
        for q in 0..want.selected.len() {
            tally.check(got.adjacency.contains(p, q) == want.adjacency[p][q], || {
                format!("instance {t}: induced edge ({p},{q})")
            });
        }
    }
}

pub fn ncpool_suite(seed: u64, instances: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for t in 0..instances {
        let n = rng.random_range(1..=50);
        let dim = rng.random_range(1..=4);
        let p = rng.random_range(0.0..0.4);
        let g = random_graph(&mut rng, n, p, dim);
        let h = g.features().clone();
        let km = kmeans(&h, rng.random_range(1..=n.min(4)), t as u64, 100, 1e-9).unwrap();
        let tenths = rng.random_range(1..=10);
        let got = ncpool(&h, g.adjacency(), tenths as f64 / 10.0, &km, &compute_snn(&g)).unwrap();
        let a = dense(&g);
        let (_, nearest) = brute_snn(&a);
        let scores = brute_scores(&h, &km.centers, &nearest);
        let lib_scores = node_scores(&h, &km, &compute_snn(&g)).unwrap();
        for i in 0..n {
            tally.check((scores[i] - lib_scores[i]).abs() < 1e-9, || format!("instance {t}: score {i}"));
        }
        let want = brute_ncpool(&h, &a, exact_ceil(n, tenths, 10), &scores);
        compare_pool(&mut tally, t, &got, &want);
        tally.instances += 1;
    }
    tally
}

pub fn topk_suite(seed: u64, instances: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for t in 0..instances {
        let n = rng.random_range(1..=50);
        let dim = rng.random_range(1..=4);
        let p = rng.random_range(0.0..0.4);
        let g = random_graph(&mut rng, n, p, dim);
        let h = g.features().clone();
        let p = Array1::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0));
        let tenths = rng.random_range(1..=10);
        let got = topk_pool_baseline(&h, g.adjacency(), tenths as f64 / 10.0, &p).unwrap();

        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y: Vec<f64> = h
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() / norm)
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| y[b].partial_cmp(&y[a]).unwrap().then(a.cmp(&b)));
        order.truncate(exact_ceil(n, tenths, 10));
        let gates = order.iter().map(|&i| y[i].tanh()).collect();
        let want = brute_assemble(&h, &dense(&g), order, gates);
        compare_pool(&mut tally, t, &got, &want);
        tally.instances += 1;
    }
    tally
}

pub fn assignment_suite(seed: u64, instances: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for t in 0..instances {
        let n = rng.random_range(1..=50);
        let dim = rng.random_range(1..=4);
        let c = rng.random_range(1..=6);
        let points = Array2::from_shape_simple_fn((n, dim), || rng.random_range(-3.0..3.0));
        let centers = Array2::from_shape_simple_fn((c, dim), || rng.random_range(-3.0..3.0));
        let (labels, inertia) = assign(&points, &centers);
        let mut total = 0.0;
        for i in 0..n {
            let d: Vec<f64> = (0..c)
                .map(|j| sq(&points.row(i).to_vec(), &centers.row(j).to_vec()))
                .collect();
            let best = (0..c).fold(0, |b, j| if d[j] < d[b] { j } else { b });
            total += d[best];
            tally.check(labels[i] == best, || format!("instance {t}: point {i}"));
        }
        tally.check((inertia - total).abs() < 1e-9, || format!("instance {t}: inertia"));
        tally.instances += 1;
    }
    tally
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn relabel(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = HashMap::new();
    let out = labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(*l).or_insert(next)
        })
        .collect();
    (out, ids.len())
}

/// Best accuracy over every bijection of (padded) cluster ids to class ids.
pub fn brute_accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    let (p, cp) = relabel(pred);
    let (t, ct) = relabel(truth);
    let k = cp.max(ct);
    permutations(k)
        .iter()
        .map(|perm| p.iter().zip(&t).filter(|(a, b)| perm[**a] == **b).count())
        .max()
        .unwrap() as f64
        / pred.len() as f64
}

fn same_partition(pred: &[usize], truth: &[usize]) -> bool {
    let n = pred.len();
    (0..n).all(|i| (0..n).all(|j| (pred[i] == pred[j]) == (truth[i] == truth[j])))
}

/// Mutual information and entropies from joint frequencies.
pub fn brute_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in pred.iter().zip(truth) {
        *joint.entry((a, b)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cb.entry(b).or_default() += 1;
    }
    let freq = |m: &HashMap<usize, usize>| -> HashMap<usize, f64> { m.iter().map(|(&k, &c)| (k, c as f64 / n)).collect() };
    let (pa, pb) = (freq(&ca), freq(&cb));
    let joint: HashMap<(usize, usize), f64> = joint.into_iter().map(|(k, c)| (k, c as f64 / n)).collect();
    let h = |m: &HashMap<usize, f64>| -m.values().map(|p| p * p.ln()).sum::<f64>();
    let (ha, hb) = (h(&pa), h(&pb));
    if ha + hb == 0.0 {
        return if same_partition(pred, truth) { 1.0 } else { 0.0 };
    }
    let mi: f64 = joint.iter().map(|(&(a, b), &p)| p * (p / (pa[&a] * pb[&b])).ln()).sum();
    mi / ((ha + hb) / 2.0)
}

/// Adjusted Rand index from the four pair counts over all point pairs.
pub fn brute_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut only_pred, mut only_truth, mut neither) = (0f64, 0f64, 0f64, 0f64);
    for i in 0..n {
        for j in (i + 1)..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_pred += 1.0,
                (false, true) => only_truth += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let denom = (both + only_pred) * (only_pred + neither) + (both + only_truth) * (only_truth + neither);
    if denom == 0.0 {
        return if same_partition(pred, truth) { 1.0 } else { 0.0 };
    }
    2.0 * (both * neither - only_pred * only_truth) / denom
}

pub fn metrics_suite(seed: u64, instances: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for t in 0..instances {
        let n = rng.random_range(1..=50);
        let cp = rng.random_range(1..=5);
        let ct = rng.random_range(1..=5);
        let truth: Vec<usize> = (0..n).map(|_| rng.random_range(0..ct)).collect();
        let pred: Vec<usize> = match t % 4 {
            // Noisy copy of the truth under a relabeling.
            0 => truth
                .iter()
                .map(|&l| if rng.random_bool(0.8) { (l + 2) % 5 } else { rng.random_range(0..cp) })
                .collect(),
            1 => vec![rng.random_range(0..9); n],
            _ => (0..n).map(|_| rng.random_range(0..cp) * 3).collect(),
        };
        let pairs = [
            ("acc", accuracy(&pred, &truth).unwrap(), brute_accuracy(&pred, &truth)),
            ("nmi", nmi(&pred, &truth).unwrap(), brute_nmi(&pred, &truth)),
            ("ari", ari(&pred, &truth).unwrap(), brute_ari(&pred, &truth)),
        ];
        for (name, got, want) in pairs {
            tally.check((got - want).abs() < 1e-9, || format!("instance {t}: {name} {got} vs {want}"));
        }
        tally.instances += 1;
    }
    tally
}

fn random_q(rng: &mut ChaCha8Rng, t: usize) -> Array2<f64> {
    let n = rng.random_range(1..=30);
    let c = rng.random_range(1..=6);
    let dim = rng.random_range(1..=4);
    let scale = [0.1, 1.0, 10.0][t % 3];
    let z = Array2::from_shape_simple_fn((n, dim), || rng.random_range(-scale..scale));
    let mu = Array2::from_shape_simple_fn((c, dim), || rng.random_range(-scale..scale));
    soft_assign(&z, &mu).unwrap()
}

/// Stacks every cyclic column rotation of `q`, so all clusters carry the
/// same total mass.
pub fn balanced(q: &Array2<f64>) -> Array2<f64> {
    let (n, c) = q.dim();
    Array2::from_shape_fn((n * c, c), |(r, j)| q[[r % n, (j + r / n) % c]])
}

fn row_max(m: &Array2<f64>, i: usize) -> f64 {
    m.row(i).iter().cloned().fold(f64::MIN, f64::max)
}

/// Row sums of Q and P, non-negativity of the divergence, and the
/// sharpening property on soft assignments whose clusters carry equal
/// mass.
pub fn distribution_suite(seed: u64, instances: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for t in 0..instances {
        let q = random_q(&mut rng, t);
        let p = target_distribution(&q);
        for (name, m) in [("Q", &q), ("P", &p)] {
            for (i, row) in m.rows().into_iter().enumerate() {
                let s = row.sum();
                tally.check((s - 1.0).abs() <= 1e-9, || format!("instance {t}: {name} row {i} sums to {s}"));
            }
        }
        let kl = clustering_loss(&p, &q).unwrap().value;
        tally.check(kl >= -1e-12, || format!("instance {t}: KL {kl}"));
        let self_kl = clustering_loss(&q, &q).unwrap().value;
        tally.check(self_kl.abs() < 1e-9, || format!("instance {t}: KL(Q||Q) {self_kl}"));

        let qb = balanced(&q);
        let pb = target_distribution(&qb);
        for i in 0..qb.nrows() {
            tally.check(row_max(&pb, i) >= row_max(&qb, i) - 1e-12, || {
                format!("instance {t}: balanced row {i} not sharpened")
            });
        }
        tally.instances += 1;
    }
    tally
}

/// Matrices, out of `instances` unconstrained soft assignments, with a row
/// whose largest target probability falls below its largest assignment.
pub fn unbalanced_sharpening_violations(seed: u64, instances: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..instances)
        .filter(|&t| {
            let q = random_q(&mut rng, t);
            let p = target_distribution(&q);
            (0..q.nrows()).any(|i| row_max(&p, i) < row_max(&q, i) - 1e-12)
        })
        .count()
}

/// Selection size, gate range and exact induced adjacency for every
/// ratio in {0.2, …, 0.9}.
pub fn pooling_contract_suite(seed: u64, graphs: usize) -> Tally {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tally = Tally::default();
    for t in 0..graphs {
        let n = rng.random_range(1..=60);
        let p = rng.random_range(0.0..0.3);
        let g = random_graph(&mut rng, n, p, 3);
        let h = g.features().clone();
        let km = kmeans(&h, rng.random_range(1..=n.min(5)), t as u64, 100, 1e-9).unwrap();
        let snn = compute_snn(&g);
        let a = dense(&g);
        for tenths in 2..=9 {
            let pooled = ncpool(&h, g.adjacency(), tenths as f64 / 10.0, &km, &snn).unwrap();
            let want = exact_ceil(n, tenths, 10);
            tally.check(pooled.len() == want, || format!("graph {t}, k=0.{tenths}: {} nodes, want {want}", pooled.len()));
            tally.check(pooled.gates.iter().all(|&g| g > 0.0 && g <= 1.0), || {
                format!("graph {t}, k=0.{tenths}: gate outside (0,1]")
            });
            let mut distinct = pooled.selected.clone();
            distinct.sort_unstable();
            distinct.dedup();
            tally.check(distinct.len() == pooled.len(), || format!("graph {t}: repeated node"));
            for (p, &u) in pooled.selected.iter().enumerate() {
                for (q, &v) in pooled.selected.iter().enumerate() {
                    tally.check(pooled.adjacency.contains(p, q) == a[u][v], || {
                        format!("graph {t}, k=0.{tenths}: edge ({u},{v})")
                    });
                }
            }
        }
        tally.instances += 1;
    }
    tally
}
