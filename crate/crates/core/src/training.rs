//! Dual-level contrastive training of the toy encoder: a case-level loss
//! over in-batch negatives plus a sub-fact-level loss over labeled cells,
//! with analytic gradients and a finite-difference verification harness.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::encoder::{featurize, l2_norm, Embedding, EncodeError, SparseFeatures, ToyEncoderModel, MIN_NORM};
use crate::labeling::{build_batch_labels, DocCrimes, LabelingError, PairLabel, QueryGroup};
use crate::reformulate::ReformulatedCase;
use crate::scoring::{maxsim_sum, ScoringError, SimilarityMatrix};

/// Aborting threshold for a runaway loss.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("temperature {tau} must be positive")]
    BadTemperature { tau: f64 },
    #[error("loss weight {alpha} must be non-negative")]
    BadAlpha { alpha: f64 },
    #[error("batch size {size} must be at least 2")]
    BadBatchSize { size: usize },
    #[error("case-level loss needs at least one negative score")]
    NoNegatives,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("in-batch negatives need at least 2 distinct queries, found {found}")]
    QueryShortage { found: usize },
    #[error("no (query, positive) training pairs")]
    NoTrainingData,
    #[error("non-finite loss: {detail}")]
    NonFinite { detail: String },
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
}

/// Hyperparameters for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Softmax temperature for both losses.
    pub temperature: f64,
    /// Weight of the sub-fact loss in the total.
    pub alpha: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    /// Ablation switches: a disabled term contributes 0 to loss and grad.
    pub case_loss_enabled: bool,
    pub subfact_loss_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            temperature: 0.01,
            alpha: 0.9,
            batch_size: 8,
            learning_rate: 0.05,
            steps: 200,
            seed: 0,
            case_loss_enabled: true,
            subfact_loss_enabled: true,
        }
    }
}

impl TrainConfig {
    // `!(x > 0.0)` rather than `x <= 0.0`: a NaN value must also fail.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.temperature > 0.0) {
            return Err(TrainingError::BadTemperature {
                tau: self.temperature,
            });
        }
        if !(self.alpha >= 0.0) {
            return Err(TrainingError::BadAlpha { alpha: self.alpha });
        }
        if self.batch_size < 2 {
            return Err(TrainingError::BadBatchSize {
                size: self.batch_size,
            });
        }
        Ok(())
    }
}

/// Per-batch loss decomposition. A disabled term reports 0, so the
/// `total = case + alpha * subfact` identity always holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub case_loss: f64,
    pub subfact_loss: f64,
    pub total: f64,
    pub grad_norm: f64,
    /// Set when the sub-fact loss found no usable anchor cell.
    pub subfact_anchorless: bool,
}

/// One training-log line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(rename = "L_R")]
    pub case_loss: f64,
    #[serde(rename = "L_S")]
    pub subfact_loss: f64,
    #[serde(rename = "L")]
    pub total: f64,
    pub grad_norm: f64,
}

pub fn steps_to_jsonl(steps: &[StepRecord]) -> String {
    let mut out = String::new();
    for s in steps {
        out.push_str(&serde_json::to_string(s).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// A query case with one of its positive documents, both reformulated.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub query: ReformulatedCase,
    pub positive: ReformulatedCase,
}

/// Stable softmax negative log-likelihood of option 0 among
/// `[pos, negs...]` at temperature `tau`; also returns the probabilities.
fn softmax_nll(pos: f64, negs: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let mut z = Vec::with_capacity(negs.len() + 1);
    z.push(pos / tau);
    z.extend(negs.iter().map(|s| s / tau));
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    // Group (max - z[0]) first: both live on the score scale, and adding
    // ln(sum) to `max` alone would wipe out small losses.
    let loss = sum.ln() + (max - z[0]);
    let probs = exps.iter().map(|e| e / sum).collect();
    (loss, probs)
}

/// Case-level contrastive loss: the positive's score against in-batch
/// negatives, softmaxed at temperature `tau`.
// `!(x > 0.0)` rather than `x <= 0.0`: a NaN temperature must also fail.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn case_level_loss(s_pos: f64, s_negs: &[f64], tau: f64) -> Result<f64, TrainingError> {
    if !(tau > 0.0) {
        return Err(TrainingError::BadTemperature { tau });
    }
    if s_negs.is_empty() {
        return Err(TrainingError::NoNegatives);
    }
    Ok(softmax_nll(s_pos, s_negs, tau).0)
}

/// Sub-fact-level contrastive loss: mean over anchors of the softmax NLL
/// of the anchor cell against its row's negative cells. Anchors without
/// negatives are skipped; zero usable anchors yield `(0.0, true)`.
// `!(x > 0.0)` rather than `x <= 0.0`: a NaN temperature must also fail.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn subfact_level_loss(
    anchors: &[(f64, Vec<f64>)],
    tau: f64,
) -> Result<(f64, bool), TrainingError> {
    if !(tau > 0.0) {
        return Err(TrainingError::BadTemperature { tau });
    }
    let mut sum = 0.0;
    let mut usable = 0usize;
    for (pos, negs) in anchors {
        if negs.is_empty() {
            continue;
        }
        sum += softmax_nll(*pos, negs, tau).0;
        usable += 1;
    }
    if usable == 0 {
        return Ok((0.0, true));
    }
    Ok((sum / usable as f64, false))
}

/// One encoded case in the computation graph; shared between its uses as
/// query and document so gradients accumulate on a single node.
struct Node {
    crimes: Vec<String>,
    features: Vec<SparseFeatures>,
    norms: Vec<f64>,
    units: Vec<Embedding>,
}

fn encode_node(case: &ReformulatedCase, model: &ToyEncoderModel) -> Result<Node, TrainingError> {
    if case.subfacts.is_empty() {
        return Err(TrainingError::Encode(EncodeError::NoSubfacts));
    }
    let mut features = Vec::with_capacity(case.subfacts.len());
    let mut norms = Vec::with_capacity(case.subfacts.len());
    let mut units = Vec::with_capacity(case.subfacts.len());
    for sf in &case.subfacts {
        let f = featurize(&sf.full_text(), model.vocab_dim);
        if f.is_empty() {
            return Err(TrainingError::Encode(EncodeError::EmptyText));
        }
        let raw = model.project(&f);
        let norm = l2_norm(&raw);
        if norm < MIN_NORM {
            return Err(TrainingError::Encode(EncodeError::DegenerateVector { norm }));
        }
        units.push(Embedding {
            values: raw.iter().map(|x| x / norm).collect(),
        });
        features.push(f);
        norms.push(norm);
    }
    Ok(Node {
        crimes: case.subfacts.iter().map(|s| s.crime.clone()).collect(),
        features,
        norms,
        units,
    })
}

/// Loss and exact gradient (dense, row-major like the projection) for one
/// batch, differentiated through projection, normalization, dot products,
/// row-max selection (credit to the tie-broken argmax), and both softmax
/// losses.
// `!(x > 0.0)` rather than `x <= 0.0`: NaN config values must also fail.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn total_loss_and_grad(
    batch: &[TrainPair],
    model: &ToyEncoderModel,
    config: &TrainConfig,
) -> Result<(LossReport, Vec<f64>), TrainingError> {
    if !(config.temperature > 0.0) {
        return Err(TrainingError::BadTemperature {
            tau: config.temperature,
        });
    }
    if !(config.alpha >= 0.0) {
        return Err(TrainingError::BadAlpha {
            alpha: config.alpha,
        });
    }
    if batch.is_empty() {
        return Err(TrainingError::EmptyBatch);
    }
    if config.case_loss_enabled && batch.len() < 2 {
        return Err(TrainingError::QueryShortage { found: batch.len() });
    }
    let b_count = batch.len();
    let tau = config.temperature;

    // Shared embedding nodes, deduplicated by case id.
    let mut node_of: HashMap<String, usize> = HashMap::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut intern = |case: &ReformulatedCase, nodes: &mut Vec<Node>| -> Result<usize, TrainingError> {
        if let Some(&idx) = node_of.get(&case.case_id) {
            return Ok(idx);
        }
        nodes.push(encode_node(case, model)?);
        let idx = nodes.len() - 1;
        node_of.insert(case.case_id.clone(), idx);
        Ok(idx)
    };
    let mut q_nodes = Vec::with_capacity(b_count);
    let mut d_nodes = Vec::with_capacity(b_count);
    for pair in batch {
        q_nodes.push(intern(&pair.query, &mut nodes)?);
        d_nodes.push(intern(&pair.positive, &mut nodes)?);
    }

    // Similarity matrices and scores for every (query, in-batch doc) pair.
    let mut mats: Vec<Vec<SimilarityMatrix>> = Vec::with_capacity(b_count);
    let mut scores = vec![vec![0.0; b_count]; b_count];
    for b in 0..b_count {
        let mut row = Vec::with_capacity(b_count);
        for c in 0..b_count {
            let m = SimilarityMatrix::new(&nodes[q_nodes[b]].units, &nodes[d_nodes[c]].units)?;
            scores[b][c] = maxsim_sum(&m).value;
            row.push(m);
        }
        mats.push(row);
    }

    // dL/dM accumulator per pair, row-major.
    let mut dm: Vec<Vec<Vec<f64>>> = (0..b_count)
        .map(|b| (0..b_count).map(|c| vec![0.0; mats[b][c].rows() * mats[b][c].cols()]).collect())
        .collect();

    // Case-level term: each query's positive against the other queries'
    // positives, averaged over the batch.
    let mut case_loss = 0.0;
    if config.case_loss_enabled {
        for b in 0..b_count {
            let negs: Vec<f64> = (0..b_count).filter(|&c| c != b).map(|c| scores[b][c]).collect();
            let (loss, probs) = softmax_nll(scores[b][b], &negs, tau);
            case_loss += loss / b_count as f64;
            // dL/ds for each option, then route into the argmax cells.
            let options = (0..b_count)
                .filter(|&c| c == b)
                .chain((0..b_count).filter(|&c| c != b));
            for (option, c) in options.enumerate() {
                let target = if option == 0 { 1.0 } else { 0.0 };
                let ds = (probs[option] - target) / tau / b_count as f64;
                if ds == 0.0 {
                    continue;
                }
                let mat = &mats[b][c];
                for i in 0..mat.rows() {
                    dm[b][c][i * mat.cols() + mat.row_argmax(i)] += ds;
                }
            }
        }
    }

    // Sub-fact-level term: anchors are Positive cells of each query's
    // positive-document matrix; negatives are the Negative cells in the
    // same query row across all of that query's matrices.
    let mut subfact_loss = 0.0;
    let mut anchorless = false;
    if config.subfact_loss_enabled {
        let groups: Vec<QueryGroup> = (0..b_count)
            .map(|b| QueryGroup {
                query_id: batch[b].query.case_id.clone(),
                q_crimes: nodes[q_nodes[b]].crimes.clone(),
                positive: DocCrimes {
                    doc_id: batch[b].positive.case_id.clone(),
                    crimes: nodes[d_nodes[b]].crimes.clone(),
                },
                positive_matrix: mats[b][b].clone(),
                negatives: (0..b_count)
                    .filter(|&c| c != b)
                    .map(|c| DocCrimes {
                        doc_id: batch[c].positive.case_id.clone(),
                        crimes: nodes[d_nodes[c]].crimes.clone(),
                    })
                    .collect(),
            })
            .collect();
        let label_mats = build_batch_labels(&groups)?;
        // Group b's matrices sit at base b*b_count: positive first, then
        // negatives in ascending batch order skipping b.
        let doc_index = |b: usize, offset: usize| -> usize {
            if offset == 0 {
                b
            } else {
                let c = offset - 1;
                if c < b {
                    c
                } else {
                    c + 1
                }
            }
        };

        // Collect anchors: (pair of the anchor cell, cell, negative cells).
        struct Anchor {
            cell: (usize, usize, usize), // (doc batch index, i, j) with query b
            b: usize,
            negatives: Vec<(usize, usize, usize)>,
        }
        let mut anchors: Vec<Anchor> = Vec::new();
        for b in 0..b_count {
            let base = b * b_count;
            let group_mats = &label_mats[base..base + b_count];
            for i in 0..group_mats[0].rows() {
                // Negatives for row i across the whole group, fixed order.
                let mut negatives = Vec::new();
                for (offset, lm) in group_mats.iter().enumerate() {
                    let c = doc_index(b, offset);
                    for j in 0..lm.cols() {
                        if lm.get(i, j) == PairLabel::Negative {
                            negatives.push((c, i, j));
                        }
                    }
                }
                for j in 0..group_mats[0].cols() {
                    if group_mats[0].get(i, j) == PairLabel::Positive {
                        anchors.push(Anchor {
                            cell: (b, i, j),
                            b,
                            negatives: negatives.clone(),
                        });
                    }
                }
            }
        }
        let usable: Vec<&Anchor> = anchors.iter().filter(|a| !a.negatives.is_empty()).collect();
        if usable.is_empty() {
            anchorless = true;
        } else {
            let count = usable.len() as f64;
            for anchor in usable {
                let b = anchor.b;
                let (pc, pi, pj) = anchor.cell;
                let pos = mats[b][pc].get(pi, pj);
                let negs: Vec<f64> = anchor
                    .negatives
                    .iter()
                    .map(|&(c, i, j)| mats[b][c].get(i, j))
                    .collect();
                let (loss, probs) = softmax_nll(pos, &negs, tau);
                subfact_loss += loss / count;
                let scale = config.alpha / tau / count;
                dm[b][pc][pi * mats[b][pc].cols() + pj] += (probs[0] - 1.0) * scale;
                for (k, &(c, i, j)) in anchor.negatives.iter().enumerate() {
                    dm[b][c][i * mats[b][c].cols() + j] += probs[k + 1] * scale;
                }
            }
        }
    }

    let total = case_loss + config.alpha * subfact_loss;
    if !total.is_finite() {
        return Err(TrainingError::NonFinite {
            detail: format!("case {case_loss}, subfact {subfact_loss}"),
        });
    }

    // Backward: dM -> unit embeddings -> raw projections -> weights.
    let mut grad_u: Vec<Vec<Vec<f64>>> = nodes
        .iter()
        .map(|n| vec![vec![0.0; model.embed_dim]; n.units.len()])
        .collect();
    for b in 0..b_count {
        for c in 0..b_count {
            let mat = &mats[b][c];
            let (qn, dn) = (q_nodes[b], d_nodes[c]);
            for i in 0..mat.rows() {
                for j in 0..mat.cols() {
                    let g = dm[b][c][i * mat.cols() + j];
                    if g == 0.0 {
                        continue;
                    }
                    for (gu, dv) in grad_u[qn][i].iter_mut().zip(&nodes[dn].units[j].values) {
                        *gu += g * dv;
                    }
                    for (gu, qv) in grad_u[dn][j].iter_mut().zip(&nodes[qn].units[i].values) {
                        *gu += g * qv;
                    }
                }
            }
        }
    }

    let mut grad = vec![0.0; model.vocab_dim * model.embed_dim];
    for (node, node_grads) in nodes.iter().zip(&grad_u) {
        for (sf, gu) in node_grads.iter().enumerate() {
            let u = &node.units[sf].values;
            let norm = node.norms[sf];
            let u_dot_g: f64 = u.iter().zip(gu).map(|(a, b)| a * b).sum();
            // d(e/|e|)/de applied to the incoming gradient.
            let de: Vec<f64> = gu
                .iter()
                .zip(u)
                .map(|(g, uk)| (g - u_dot_g * uk) / norm)
                .collect();
            for &(bucket, count) in &node.features[sf] {
                let base = bucket as usize * model.embed_dim;
                for (k, d) in de.iter().enumerate() {
                    grad[base + k] += count * d;
                }
            }
        }
    }

    let report = LossReport {
        case_loss,
        subfact_loss,
        total,
        grad_norm: l2_norm(&grad),
        subfact_anchorless: anchorless,
    };
    Ok((report, grad))
}

/// A finished training run: the final model plus one record per step.
#[derive(Debug)]
pub struct TrainRun {
    pub model: ToyEncoderModel,
    pub steps: Vec<StepRecord>,
}

/// Plain gradient descent over sampled batches. Fully deterministic for a
/// fixed config; aborts when the loss passes [`DIVERGENCE_LIMIT`].
pub fn train(
    pairs: &[TrainPair],
    vocab_dim: usize,
    embed_dim: usize,
    config: &TrainConfig,
) -> Result<TrainRun, TrainingError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(TrainingError::NoTrainingData);
    }
    // One slot per distinct query; a step samples queries, then one of the
    // query's positives, so a batch never repeats a query.
    let mut by_query: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (idx, pair) in pairs.iter().enumerate() {
        by_query.entry(&pair.query.case_id).or_default().push(idx);
    }
    let query_slots: Vec<&Vec<usize>> = by_query.values().collect();
    if config.case_loss_enabled && query_slots.len() < 2 {
        return Err(TrainingError::QueryShortage {
            found: query_slots.len(),
        });
    }

    let mut model = ToyEncoderModel::new(vocab_dim, embed_dim, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut steps = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let take = config.batch_size.min(query_slots.len());
        let picked = rand::seq::index::sample(&mut rng, query_slots.len(), take);
        let mut batch = Vec::with_capacity(take);
        for q in picked.iter() {
            let slots = query_slots[q];
            let pick = if slots.len() == 1 {
                slots[0]
            } else {
                slots[rng.gen_range(0..slots.len())]
            };
            batch.push(pairs[pick].clone());
        }
        let (report, grad) = total_loss_and_grad(&batch, &model, config).map_err(|e| match e {
            TrainingError::NonFinite { detail } => TrainingError::NonFinite {
                detail: format!("step {step}: {detail}"),
            },
            other => other,
        })?;
        if report.total > DIVERGENCE_LIMIT {
            return Err(TrainingError::Diverged {
                step,
                loss: report.total,
            });
        }
        for (w, g) in model.projection.iter_mut().zip(&grad) {
            *w -= config.learning_rate * g;
        }
        steps.push(StepRecord {
            step,
            case_loss: report.case_loss,
            subfact_loss: report.subfact_loss,
            total: report.total,
            grad_norm: report.grad_norm,
        });
    }
    Ok(TrainRun { model, steps })
}

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOutcome {
    pub max_rel_err: f64,
    pub probed: usize,
    /// A row-max (or label-deciding global-max) margin fell under the gap
    /// threshold; the subgradient is not comparable there, skip the batch.
    pub near_tie: bool,
}

/// Compare the analytic gradient against central finite differences over
/// every weight actually touched by the batch. Batches whose max
/// selections sit within `tie_gap` of a tie are reported, not checked.
pub fn gradient_check(
    batch: &[TrainPair],
    model: &ToyEncoderModel,
    config: &TrainConfig,
    h: f64,
    tie_gap: f64,
) -> Result<GradCheckOutcome, TrainingError> {
    // Re-derive the matrices to test the margins.
    let mut node_cache: HashMap<String, Vec<Embedding>> = HashMap::new();
    let mut units_of = |case: &ReformulatedCase| -> Result<Vec<Embedding>, TrainingError> {
        if let Some(u) = node_cache.get(&case.case_id) {
            return Ok(u.clone());
        }
        let node = encode_node(case, model)?;
        node_cache.insert(case.case_id.clone(), node.units.clone());
        Ok(node.units)
    };
    for pair_q in batch {
        let qu = units_of(&pair_q.query)?;
        for pair_d in batch {
            let du = units_of(&pair_d.positive)?;
            let mat = SimilarityMatrix::new(&qu, &du)?;
            for i in 0..mat.rows() {
                if mat.cols() < 2 {
                    continue;
                }
                let mut row: Vec<f64> = mat.row(i).to_vec();
                row.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if row[0] - row[1] < tie_gap {
                    return Ok(GradCheckOutcome {
                        max_rel_err: 0.0,
                        probed: 0,
                        near_tie: true,
                    });
                }
            }
            // The no-shared-crime labeling rule keys off the global max.
            if mat.rows() * mat.cols() >= 2 {
                let mut all: Vec<f64> = (0..mat.rows()).flat_map(|i| mat.row(i).to_vec()).collect();
                all.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if all[0] - all[1] < tie_gap {
                    return Ok(GradCheckOutcome {
                        max_rel_err: 0.0,
                        probed: 0,
                        near_tie: true,
                    });
                }
            }
        }
    }

    let (_, analytic) = total_loss_and_grad(batch, model, config)?;

    // Probe only rows some feature touches; untouched weights have an
    // exactly-zero gradient on both sides.
    let mut buckets: Vec<u32> = Vec::new();
    for pair in batch {
        for case in [&pair.query, &pair.positive] {
            for sf in &case.subfacts {
                for (bucket, _) in featurize(&sf.full_text(), model.vocab_dim) {
                    buckets.push(bucket);
                }
            }
        }
    }
    buckets.sort_unstable();
    buckets.dedup();

    let mut probe = model.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut probed = 0;
    for bucket in buckets {
        for k in 0..model.embed_dim {
            let idx = bucket as usize * model.embed_dim + k;
            let w = model.projection[idx];
            probe.projection[idx] = w + h;
            let up = total_loss_and_grad(batch, &probe, config)?.0.total;
            probe.projection[idx] = w - h;
            let down = total_loss_and_grad(batch, &probe, config)?.0.total;
            probe.projection[idx] = w;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[idx];
            // Floor keeps finite-difference round-off (~1e-10 here) from
            // dominating the ratio for near-zero gradients.
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-5);
            max_rel_err = max_rel_err.max(rel);
            probed += 1;
        }
    }
    Ok(GradCheckOutcome {
        max_rel_err,
        probed,
        near_tie: false,
    })
}
