//! Losses, metrics, dataset splits, the regression training loop and
//! training reports.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{FeaturizerConfig, Graph};
use crate::model::{Batch, InputDims, ModelConfig, MoleculeFeatures, PathMpnn};
use crate::tensor::{Adam, AdamConfig, Checkpoint, Tape, Tensor, Var};

/// `sqrt(mean((pred - target)²))` on the tape.
pub fn rmse_loss(tape: &mut Tape, pred: Var, target: Var) -> Result<Var> {
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff);
    let mse = tape.mean(sq)?;
    tape.sqrt(mse)
}

fn check_pair(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::InvalidArgument {
            op: "metric",
            msg: format!("{} predictions for {} targets", pred.len(), target.len()),
        });
    }
    Ok(())
}

pub fn mae_metric(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse_metric(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_pair(pred, target)?;
    Ok((pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it by `fractions` (train, val, test).
/// Train and validation sizes are rounded; the test split takes the rest.
pub fn split_dataset(n: usize, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fractions[0] * n as f64).round() as usize).min(n);
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok(Split { train: idx, val, test })
}

/// Per-target standardisation fitted on the training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl TargetScaler {
    pub fn fit(targets: &[&[f64]]) -> Result<Self> {
        let first = targets.first().ok_or(Error::EmptySplit("train"))?;
        let t = first.len();
        let n = targets.len() as f64;
        let mut mean = vec![0.0; t];
        for row in targets {
            for (m, v) in mean.iter_mut().zip(row.iter()) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; t];
        for row in targets {
            for ((s, v), m) in std.iter_mut().zip(row.iter()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Ok(TargetScaler { mean, std })
    }

    pub fn identity(targets: usize) -> Self {
        TargetScaler {
            mean: vec![0.0; targets],
            std: vec![1.0; targets],
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub optimizer: AdamConfig,
    pub split: [f64; 3],
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 300,
            batch_size: 16,
            patience: 25,
            optimizer: AdamConfig::default(),
            split: [0.8, 0.1, 0.1],
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("max_epochs and batch_size must be positive"));
        }
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    /// Validation MAE for regression, validation accuracy for classification.
    pub val_metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalMetrics {
    pub best_epoch: usize,
    pub best_val_metric: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_rmse: Option<f64>,
    /// Test MAE for targets measured in percent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_percent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_rmse: Option<f64>,
    pub wall_seconds: f64,
    pub seed: u64,
    /// The configuration the run was started from.
    pub config: serde_json::Value,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub final_metrics: FinalMetrics,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum ReportLine {
    Epoch(EpochMetrics),
    Final(FinalMetrics),
}

impl TrainReport {
    /// One JSON object per epoch followed by the final block.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(Error::NonFinite(format!("{what} in report")))
            }
        };
        for e in &self.epochs {
            finite(e.train_loss, "train loss")?;
            finite(e.val_metric, "validation metric")?;
            out.push_str(&serde_json::to_string(&ReportLine::Epoch(e.clone())).unwrap());
            out.push('\n');
        }
        let f = &self.final_metrics;
        for v in [f.test_mae, f.test_rmse, f.test_percent, f.test_accuracy, f.baseline_rmse].into_iter().flatten() {
            finite(v, "test metric")?;
        }
        finite(f.best_val_metric, "best validation metric")?;
        out.push_str(&serde_json::to_string(&ReportLine::Final(f.clone())).unwrap());
        out.push('\n');
        Ok(out)
    }

    /// Parses one or more concatenated reports; each ends at its final block.
    pub fn parse_jsonl(text: &str) -> Result<Vec<TrainReport>> {
        let mut reports = Vec::new();
        let mut current = Vec::new();
        let mut last_epoch = 0;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ReportLine =
                serde_json::from_str(line).map_err(|e| Error::parse(lineno, e.to_string()))?;
            match parsed {
                ReportLine::Epoch(e) => {
                    if e.epoch <= last_epoch {
                        return Err(Error::parse(lineno, format!("epoch {} after epoch {last_epoch}", e.epoch)));
                    }
                    last_epoch = e.epoch;
                    current.push(e);
                }
                ReportLine::Final(f) => {
                    reports.push(TrainReport {
                        epochs: std::mem::take(&mut current),
                        final_metrics: f,
                    });
                    last_epoch = 0;
                }
            }
        }
        if !current.is_empty() {
            return Err(Error::parse(text.lines().count(), "report ends without a final block"));
        }
        Ok(reports)
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// A trained regressor with everything needed to reuse it.
#[derive(Clone, Debug)]
pub struct RegressionRun {
    pub model: PathMpnn,
    pub scaler: TargetScaler,
    pub report: TrainReport,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    model: ModelConfig,
    dims: InputDims,
    featurizer: FeaturizerConfig,
    scaler: TargetScaler,
}

impl RegressionRun {
    pub fn checkpoint(&self, featurizer: &FeaturizerConfig) -> Checkpoint {
        let meta = CheckpointMeta {
            model: self.model.config().clone(),
            dims: self.model.dims(),
            featurizer: featurizer.clone(),
            scaler: self.scaler.clone(),
        };
        Checkpoint::from_store(self.model.params(), serde_json::to_value(meta).unwrap())
    }
}

/// Rebuilds a model, its featurizer and target scaling from a checkpoint.
pub fn load_regression(ck: &Checkpoint) -> Result<(PathMpnn, FeaturizerConfig, TargetScaler)> {
    let meta: CheckpointMeta =
        serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint(format!("metadata: {e}")))?;
    let mut model = PathMpnn::new(meta.model, meta.dims)?;
    ck.apply_to(model.params_mut())?;
    Ok((model, meta.featurizer, meta.scaler))
}

/// Predictions in original target units, one row per molecule.
pub fn predict(model: &PathMpnn, feats: &[&MoleculeFeatures], scaler: &TargetScaler) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(feats.len());
    for chunk in feats.chunks(64) {
        let batch = Batch::new(chunk)?;
        let mut tape = Tape::new();
        let y = model.forward(&mut tape, &batch)?;
        let y = tape.value(y);
        for r in 0..y.rows() {
            out.push(scaler.inverse(y.row_slice(r)));
        }
    }
    Ok(out)
}

fn flat_metrics(pred: &[Vec<f64>], target: &[&[f64]]) -> Result<(f64, f64)> {
    let p: Vec<f64> = pred.iter().flatten().copied().collect();
    let t: Vec<f64> = target.iter().flat_map(|r| r.iter().copied()).collect();
    Ok((mae_metric(&p, &t)?, rmse_metric(&p, &t)?))
}

/// Mini-batch training with early stopping on validation MAE.
///
/// The parameters with the best validation MAE are restored before the
/// test split is scored. `report.final_metrics.config` is left as
/// `null` for the caller to fill in.
pub fn train_regression(
    graphs: &[Graph],
    targets: &[Vec<f64>],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    split: &Split,
) -> Result<RegressionRun> {
    let start = Instant::now();
    train_config.validate()?;
    if graphs.len() != targets.len() {
        return Err(Error::config("one target row per graph is required"));
    }
    for (name, s) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        if s.is_empty() {
            return Err(Error::EmptySplit(name));
        }
        if let Some(&bad) = s.iter().find(|&&i| i >= graphs.len()) {
            return Err(Error::config(format!("split index {bad} out of range")));
        }
    }
    let first = &graphs[split.train[0]];
    let dims = InputDims {
        node_dim: first.node_dim(),
        edge_dim: first.edge_dim(),
        targets: targets[split.train[0]].len(),
    };
    let mut model = PathMpnn::new(model_config.clone(), dims)?;
    let train_targets: Vec<&[f64]> = split.train.iter().map(|&i| targets[i].as_slice()).collect();
    let scaler = if train_config.standardize {
        TargetScaler::fit(&train_targets)?
    } else {
        TargetScaler::identity(dims.targets)
    };
    let feats = graphs
        .iter()
        .zip(targets)
        .map(|(g, t)| model.featurize(g, scaler.transform(t)))
        .collect::<Result<Vec<_>>>()?;
    let pick = |s: &[usize]| -> Vec<&MoleculeFeatures> { s.iter().map(|&i| &feats[i]).collect() };
    let raw = |s: &[usize]| -> Vec<&[f64]> { s.iter().map(|&i| targets[i].as_slice()).collect() };
    let (val_feats, val_targets) = (pick(&split.val), raw(&split.val));

    let mut rng = ChaCha8Rng::seed_from_u64(model_config.seed ^ 0x5eed_0f_ba7c4);
    let mut adam = Adam::new(train_config.optimizer);
    let mut order = split.train.clone();
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, 0usize, model.params().snapshot());

    for epoch in 1..=train_config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(train_config.batch_size) {
            let refs: Vec<&MoleculeFeatures> = chunk.iter().map(|&i| &feats[i]).collect();
            let batch = Batch::new(&refs)?;
            let mut tape = Tape::new();
            let pred = model.forward(&mut tape, &batch)?;
            let target = tape.constant(batch.targets.clone());
            let loss = rmse_loss(&mut tape, pred, target)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
            }
            let grads = tape.backward(loss)?;
            let store = model.params_mut();
            store.zero_grad();
            store.accumulate(&grads);
            adam.step(store);
            loss_sum += value;
            batches += 1;
        }
        let val_pred = predict(&model, &val_feats, &scaler)?;
        let (val_mae, _) = flat_metrics(&val_pred, &val_targets)?;
        report.epochs.push(EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_metric: val_mae,
        });
        if val_mae < best.0 {
            best = (val_mae, epoch, model.params().snapshot());
        } else if epoch - best.1 >= train_config.patience {
            break;
        }
    }
    model.params_mut().restore(&best.2)?;

    let test_pred = predict(&model, &pick(&split.test), &scaler)?;
    let test_targets = raw(&split.test);
    let (test_mae, test_rmse) = flat_metrics(&test_pred, &test_targets)?;
    let baseline: Vec<Vec<f64>> = vec![scaler_mean(&train_targets); test_targets.len()];
    let (_, baseline_rmse) = flat_metrics(&baseline, &test_targets)?;
    report.final_metrics = FinalMetrics {
        best_epoch: best.1,
        best_val_metric: best.0,
        test_mae: Some(test_mae),
        test_rmse: Some(test_rmse),
        test_percent: None,
        test_accuracy: None,
        baseline_rmse: Some(baseline_rmse),
        wall_seconds: start.elapsed().as_secs_f64(),
        seed: model_config.seed,
        config: serde_json::Value::Null,
    };
    Ok(RegressionRun { model, scaler, report })
}

// Mean training target: the constant predictor the baseline RMSE refers to.
fn scaler_mean(train: &[&[f64]]) -> Vec<f64> {
    let n = train.len() as f64;
    let mut m = vec![0.0; train[0].len()];
    for row in train {
        for (a, v) in m.iter_mut().zip(row.iter()) {
            *a += v / n;
        }
    }
    m
}

/// Convenience: scores `model` on labelled graphs in original units.
pub fn evaluate(model: &PathMpnn, scaler: &TargetScaler, graphs: &[Graph], targets: &[Vec<f64>]) -> Result<(f64, f64)> {
    let feats = graphs
        .iter()
        .zip(targets)
        .map(|(g, t)| model.featurize(g, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&MoleculeFeatures> = feats.iter().collect();
    let pred = predict(model, &refs, scaler)?;
    let t: Vec<&[f64]> = targets.iter().map(|r| r.as_slice()).collect();
    flat_metrics(&pred, &t)
}

/// Forward and backward once, returning the loss; used by sanity checks.
pub fn batch_loss(model: &PathMpnn, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::new();
    let pred = model.forward(&mut tape, batch)?;
    let target = tape.constant(batch.targets.clone());
    let loss = rmse_loss(&mut tape, pred, target)?;
    Ok(tape.value(loss).item())
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

/// Fraction of rows of `logits` whose argmax equals the label, over `nodes`.
pub fn accuracy(logits: &Tensor, labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let hits = nodes.iter().filter(|&&v| argmax(logits.row_slice(v)) == labels[v]).count();
    hits as f64 / nodes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{check_gradients, DEFAULT_STEP, DEFAULT_TOLERANCE};
    use crate::tensor::ParamStore;

    fn loss_of(pred: &[f64], target: &[f64]) -> f64 {
        let mut t = Tape::new();
        let p = t.constant(Tensor::column(pred));
        let y = t.constant(Tensor::column(target));
        let l = rmse_loss(&mut t, p, y).unwrap();
        t.value(l).item()
    }

    #[test]
    fn rmse_cases() {
        assert_eq!(loss_of(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((loss_of(&[1.5, -0.5, 3.5], &[0.0, -2.0, 2.0]) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rmse_gradient_at_zero_loss_is_zero() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::column(&[1.0, 2.0]));
        let mut t = Tape::new();
        let pv = t.param(&store, p);
        let y = t.constant(Tensor::column(&[1.0, 2.0]));
        let l = rmse_loss(&mut t, pv, y).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.wrt(pv).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn rmse_gradcheck() {
        let mut store = ParamStore::new();
        store.add("p", Tensor::column(&[0.3, -1.1, 2.4]));
        let r = check_gradients(&mut store, DEFAULT_STEP, |t, s| {
            let p = t.param(s, s.ids().next().unwrap());
            let y = t.constant(Tensor::column(&[0.0, 0.5, 1.0]));
            rmse_loss(t, p, y)
        })
        .unwrap();
        assert!(r.passed(DEFAULT_TOLERANCE), "{r:?}");
    }

    #[test]
    fn mae_cases() {
        assert_eq!(mae_metric(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae_metric(&[3.0], &[1.0]).unwrap(), 2.0);
        assert!(mae_metric(&[], &[]).is_err());
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_seeded() {
        let s = split_dataset(103, [0.8, 0.1, 0.1], 7).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert_eq!((s.train.len(), s.val.len()), (82, 10));
        assert_eq!(s, split_dataset(103, [0.8, 0.1, 0.1], 7).unwrap());
        assert_ne!(s, split_dataset(103, [0.8, 0.1, 0.1], 8).unwrap());
        assert!(split_dataset(10, [0.5, 0.2, 0.2], 0).is_err());
    }

    #[test]
    fn scaler_round_trip() {
        let rows = [vec![1.0, 10.0], vec![3.0, 10.0]];
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = TargetScaler::fit(&refs).unwrap();
        assert_eq!(s.transform(&rows[0]), vec![-1.0, 0.0]);
        assert_eq!(s.inverse(&s.transform(&rows[1])), rows[1]);
    }

    #[test]
    fn report_round_trip_is_exact() {
        let report = TrainReport {
            epochs: vec![
                EpochMetrics {
                    epoch: 1,
                    train_loss: 0.1 + 0.2,
                    val_metric: 1.0 / 3.0,
                },
                EpochMetrics {
                    epoch: 2,
                    train_loss: 1e-300,
                    val_metric: 2.5,
                },
            ],
            final_metrics: FinalMetrics {
                best_epoch: 1,
                best_val_metric: 1.0 / 3.0,
                test_mae: Some(std::f64::consts::PI),
                test_accuracy: Some(0.815),
                wall_seconds: 0.25,
                seed: 9,
                config: serde_json::json!({"model": {"hidden_dim": 8}}),
                ..FinalMetrics::default()
            },
        };
        let text = report.to_jsonl().unwrap();
        let back = TrainReport::parse_jsonl(&text).unwrap();
        assert_eq!(back, vec![report.clone()]);
        assert_eq!(back[0].to_jsonl().unwrap(), text);
        let two = format!("{text}{text}");
        assert_eq!(TrainReport::parse_jsonl(&two).unwrap().len(), 2);
    }

    #[test]
    fn report_rejects_nan_and_truncation() {
        let mut r = TrainReport::default();
        r.epochs.push(EpochMetrics {
            epoch: 1,
            train_loss: f64::NAN,
            val_metric: 0.0,
        });
        assert!(r.to_jsonl().is_err());
        r.epochs[0].train_loss = 1.0;
        let text = r.to_jsonl().unwrap();
        let first_line = text.lines().next().unwrap();
        assert!(TrainReport::parse_jsonl(first_line).is_err());
    }

    #[test]
    fn mean_std_of_constant() {
        assert_eq!(mean_std(&[2.0, 2.0, 2.0]), (2.0, 0.0));
    }
}
