//! Downstream probes: a multinomial logistic-regression classifier of POS
//! templates, and paraphrase retrieval (recall@k) by cosine similarity.

mod lbfgs;
mod recall;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensorstore::{center_global, read_tensor, unit_normalize, write_tensor, Aggregation, DType, RepresentationMatrix};

pub use lbfgs::{minimize, LbfgsOptions, LbfgsOutcome};
pub use recall::{recall_at_k, recall_curve, true_match_ranks, RecallReport};

/// Centers by the matrix's own global mean, then scales rows to unit norm.
pub fn probe_inputs(m: &RepresentationMatrix) -> Result<RepresentationMatrix> {
    let (centered, _) = center_global(m)?;
    unit_normalize(&centered)
}

/// Maps template names to class indices. Classes are the sorted distinct
/// training names; unseen names in `test` get `usize::MAX`, which no model
/// ever predicts.
pub fn encode_labels(train: &[&str], test: &[&str]) -> (Vec<String>, Vec<usize>, Vec<usize>) {
    let mut classes: Vec<String> = train.iter().map(|s| s.to_string()).collect();
    classes.sort();
    classes.dedup();
    let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let enc = |names: &[&str]| names.iter().map(|n| index.get(n).copied().unwrap_or(usize::MAX)).collect();
    let (a, b) = (enc(train), enc(test));
    (classes, a, b)
}

/// Summed multinomial cross-entropy plus `(1/C) * 0.5 * |W|^2`. Parameters
/// are laid out as the row-major `[K, D]` weights followed by the `K` biases;
/// biases are not penalized.
pub struct LogisticObjective<'a> {
    x: ArrayView2<'a, f64>,
    labels: &'a [usize],
    n_classes: usize,
    inv_c: f64,
}

impl<'a> LogisticObjective<'a> {
    pub fn new(x: ArrayView2<'a, f64>, labels: &'a [usize], n_classes: usize, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(Error::Parameter(format!("regularization C must be positive, got {c}")));
        }
        if labels.len() != x.nrows() {
            return Err(Error::DimensionMismatch {
                expected: x.nrows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Parameter(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(LogisticObjective {
            x,
            labels,
            n_classes,
            inv_c: if c.is_infinite() { 0.0 } else { 1.0 / c },
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_classes * (self.x.ncols() + 1)
    }

    pub fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        let (k, d) = (self.n_classes, self.x.ncols());
        let w = ArrayView2::from_shape((k, d), &params[..k * d]).expect("parameter layout");
        let b = &params[k * d..];
        let mut z = self.x.dot(&w.t());
        let mut loss = 0.0;
        for (mut row, &y) in z.axis_iter_mut(Axis(0)).zip(self.labels) {
            row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
            let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let zy = row[y];
            let mut sum = 0.0;
            row.mapv_inplace(|v| {
                let e = (v - m).exp();
                sum += e;
                e
            });
            loss += m + sum.ln() - zy;
            // softmax minus one-hot
            row.mapv_inplace(|v| v / sum);
            row[y] -= 1.0;
        }
        let gw = z.t().dot(&self.x);
        let gb = z.sum_axis(Axis(0));
        let mut penalty = 0.0;
        for ((g, gwv), wv) in grad[..k * d].iter_mut().zip(gw.iter()).zip(w.iter()) {
            *g = gwv + self.inv_c * wv;
            penalty += wv * wv;
        }
        grad[k * d..].iter_mut().zip(gb.iter()).for_each(|(g, v)| *g = *v);
        loss + 0.5 * self.inv_c * penalty
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingStats {
    pub layer: usize,
    pub aggregation: Aggregation,
    pub iterations: usize,
    pub grad_norm: f64,
    pub loss: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub c: f64,
    /// Class names, when known; index `k` names row `k` of `weights`.
    pub classes: Vec<String>,
    pub stats: TrainingStats,
}

impl ProbeModel {
    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn with_classes(mut self, classes: Vec<String>) -> Self {
        self.classes = classes;
        self
    }

    /// Argmax class per row; ties go to the lower index.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.ncols(),
            });
        }
        let z = x.dot(&self.weights.t()) + &self.biases;
        Ok(z
            .axis_iter(Axis(0))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect())
    }
}

fn class_count(labels: &[usize]) -> Result<usize> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; n_classes];
    labels.iter().for_each(|&l| seen[l] = true);
    if n_classes < 2 {
        return Err(Error::Parameter("a probe needs at least 2 classes".into()));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::Parameter(format!("class {missing} has no training rows")));
    }
    Ok(n_classes)
}

/// Trains without failing on an exhausted budget; `stats.converged` says
/// whether the tolerance was met.
pub fn fit_probe(train: &RepresentationMatrix, labels: &[usize], c: f64, opts: &LbfgsOptions) -> Result<ProbeModel> {
    let n_classes = class_count(labels)?;
    let objective = LogisticObjective::new(train.data.view(), labels, n_classes, c)?;
    let out = minimize(|p, g| objective.evaluate(p, g), vec![0.0; objective.n_params()], opts);
    let d = train.ncols();
    let weights = Array2::from_shape_vec((n_classes, d), out.x[..n_classes * d].to_vec()).expect("shape");
    let biases = Array1::from(out.x[n_classes * d..].to_vec());
    if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Contract("probe parameters are not finite".into()));
    }
    Ok(ProbeModel {
        weights,
        biases,
        c,
        classes: Vec::new(),
        stats: TrainingStats {
            layer: train.layer,
            aggregation: train.aggregation,
            iterations: out.iterations,
            grad_norm: out.grad_norm,
            loss: out.loss,
            converged: out.converged,
        },
    })
}

/// Fits the probe and fails if the gradient tolerance is not reached within
/// the iteration budget. `labels` are class indices `0..K`, each present.
pub fn train_pos_probe(train: &RepresentationMatrix, labels: &[usize], c: f64, opts: &LbfgsOptions) -> Result<ProbeModel> {
    let model = fit_probe(train, labels, c, opts)?;
    if !model.stats.converged {
        return Err(Error::NotConverged {
            iterations: model.stats.iterations,
            grad_norm: model.stats.grad_norm,
        });
    }
    Ok(model)
}

pub fn eval_accuracy(model: &ProbeModel, test: &RepresentationMatrix, labels: &[usize]) -> Result<f64> {
    if test.nrows() == 0 {
        return Err(Error::Parameter("empty test set".into()));
    }
    if labels.len() != test.nrows() {
        return Err(Error::DimensionMismatch {
            expected: test.nrows(),
            found: labels.len(),
        });
    }
    let predicted = model.predict(test.data.view())?;
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `{1e-3, 1e-2, ..., 1e4, inf}`.
pub fn default_c_grid() -> Vec<f64> {
    (-3..=4).map(|e| 10f64.powi(e)).chain(std::iter::once(f64::INFINITY)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub best_c: f64,
    /// `(C, validation accuracy)` in grid order.
    pub accuracies: Vec<(f64, f64)>,
}

/// Trains one model per grid value (in parallel) and picks the best
/// validation accuracy; ties go to the smaller C. Models that exhaust the
/// iteration budget are still scored.
pub fn sweep_c(
    train: &RepresentationMatrix,
    train_labels: &[usize],
    validation: &RepresentationMatrix,
    validation_labels: &[usize],
    grid: &[f64],
    opts: &LbfgsOptions,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::Parameter("empty C grid".into()));
    }
    let accuracies = grid
        .par_iter()
        .map(|&c| {
            let model = fit_probe(train, train_labels, c, opts)?;
            if !model.stats.converged {
                log::warn!("probe with C={c} stopped at gradient norm {:.3e}", model.stats.grad_norm);
            }
            Ok((c, eval_accuracy(&model, validation, validation_labels)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let best_c = accuracies
        .iter()
        .copied()
        .reduce(|best, cand| {
            if cand.1 > best.1 || (cand.1 == best.1 && cand.0 < best.0) {
                cand
            } else {
                best
            }
        })
        .expect("grid is nonempty")
        .0;
    Ok(SweepResult { best_c, accuracies })
}

/// Seeded 80/20 split of `0..n` into sorted (train, validation) indices.
pub fn train_validation_split(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (n * 4).div_ceil(5);
    let (mut train, mut val) = (idx[..n_train].to_vec(), idx[n_train..].to_vec());
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Writes `<stem>.bin`, a `[K, D + 1]` tensor whose last column holds the
/// biases, and `<stem>_meta.tsv`.
pub fn write_probe(model: &ProbeModel, dir: &Path, stem: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (k, d) = model.weights.dim();
    let mut data = Vec::with_capacity(k * (d + 1));
    for (row, b) in model.weights.axis_iter(Axis(0)).zip(model.biases.iter()) {
        data.extend(row.iter().map(|&v| v as f32));
        data.push(*b as f32);
    }
    write_tensor(&dir.join(format!("{stem}.bin")), DType::F32, &[k, d + 1], &data)?;
    let s = &model.stats;
    let meta = format!(
        "c\t{}\nclasses\t{}\nlayer\t{}\naggregation\t{}\niterations\t{}\ngrad_norm\t{}\nloss\t{}\nconverged\t{}\n",
        model.c,
        model.classes.join(","),
        s.layer,
        s.aggregation.as_str(),
        s.iterations,
        s.grad_norm,
        s.loss,
        s.converged
    );
    let path = dir.join(format!("{stem}_meta.tsv"));
    fs::write(&path, meta).map_err(|e| Error::io(&path, e))
}

/// Reads a probe written by [`write_probe`]. Parameters come back at f32
/// precision.
pub fn read_probe(dir: &Path, stem: &str) -> Result<ProbeModel> {
    let (header, data) = read_tensor(&dir.join(format!("{stem}.bin")))?;
    let [k, d1] = header.shape[..] else {
        return Err(Error::Format(format!("probe tensor must be rank 2, got {:?}", header.shape)));
    };
    if d1 < 2 {
        return Err(Error::Format("probe tensor has no weight columns".into()));
    }
    let full = Array2::from_shape_vec((k, d1), data.into_iter().map(f64::from).collect()).expect("shape");
    let weights = full.slice(ndarray::s![.., ..d1 - 1]).to_owned();
    let biases = full.column(d1 - 1).to_owned();

    let path = dir.join(format!("{stem}_meta.tsv"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('\t')).collect();
    let field = |key: &str| {
        meta.get(key)
            .copied()
            .ok_or_else(|| Error::Format(format!("probe metadata lacks `{key}`")))
    };
    fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
        v.parse().map_err(|_| Error::Format(format!("bad probe metadata `{key}`: `{v}`")))
    }
    let classes: Vec<String> = field("classes")?
        .split(',')
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    Ok(ProbeModel {
        weights,
        biases,
        c: parse("c", field("c")?)?,
        classes,
        stats: TrainingStats {
            layer: parse("layer", field("layer")?)?,
            aggregation: field("aggregation")?.parse()?,
            iterations: parse("iterations", field("iterations")?)?,
            grad_norm: parse("grad_norm", field("grad_norm")?)?,
            loss: parse("loss", field("loss")?)?,
            converged: parse("converged", field("converged")?)?,
        },
    })
}
