//! Mini-batch training and prediction over shared data, with a plaintext
//! twin driven by the same seeds.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{
    ingest_vertical, one_hot, split_indices, Dataset, ProviderBlock, SharedData, VerticalLayout,
};
use super::model::{backward_and_step, forward, mean_neg_log, MlpConfig, PlainModel, SharedModel};
use crate::error::{Error, Result};
use crate::protocols::hadamard;
use crate::runtime::{
    run_inprocess, run_loopback_sockets, totals, Session, SessionConfig, TransportMode,
};
use crate::sharing::{reconstruct, AdditiveShare, PartyId, Reveal, RevealPurpose};
use crate::tensor::Matrix;

/// Party that learns losses and test accuracy.
pub const EVALUATOR: PartyId = PartyId::P0;

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training cross-entropy; known to the evaluator only.
    pub loss: Option<f64>,
    /// Test accuracy; known to the evaluator only.
    pub accuracy: Option<f64>,
    /// Cumulative payload bytes. Per party inside a session, summed over
    /// parties once [`run_training`] merges the three views.
    pub bytes_total: u64,
    pub rounds_total: u64,
    pub wall_ms: f64,
}

/// What each party ends up with.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyTraining {
    pub model: SharedModel,
    pub metrics: Vec<EpochMetrics>,
    /// Final test-set predictions, at the evaluator.
    pub predictions: Option<Vec<usize>>,
    pub test_rows: Vec<usize>,
}

/// Epoch order of the training positions `0..n`.
pub fn epoch_orders(n: usize, epochs: usize, shuffle_seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// Argmax of the scores opened to `user`; `None` at every other party.
pub fn predict(
    sess: &mut Session,
    model: &SharedModel,
    x: &AdditiveShare,
    config: &MlpConfig,
    user: PartyId,
) -> Result<Option<Vec<usize>>> {
    let fwd = forward(sess, model, x, config)?;
    let scores = reconstruct(
        sess,
        &fwd.output,
        Reveal::To(user),
        RevealPurpose::Prediction,
    )?;
    Ok(scores.map(|s| s.argmax_rows()))
}

fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

/// Test labels at the evaluator: read from its own block if it is the
/// label provider, otherwise opened from the sharing.
fn evaluator_labels(
    sess: &mut Session,
    layout: &VerticalLayout,
    own: Option<&ProviderBlock>,
    shared: &AdditiveShare,
    rows: &[usize],
) -> Result<Option<Vec<usize>>> {
    if layout.label_provider == EVALUATOR {
        if sess.id() != EVALUATOR {
            return Ok(None);
        }
        let labels = own
            .and_then(|b| b.labels.as_ref())
            .ok_or_else(|| Error::Config("label provider has no labels".into()))?;
        return Ok(Some(rows.iter().map(|&r| labels[r]).collect()));
    }
    let y = shared.select_rows(rows)?;
    let opened = reconstruct(sess, &y, Reveal::To(EVALUATOR), RevealPurpose::Evaluation)?;
    Ok(opened.map(|m| m.argmax_rows()))
}

/// One party's side of training. `own` is this party's (already
/// standardized) block; every party passes the same `layout` and `config`.
pub fn train_party(
    sess: &mut Session,
    config: &MlpConfig,
    layout: &VerticalLayout,
    own: Option<&ProviderBlock>,
) -> Result<PartyTraining> {
    config.validate()?;
    if config.layer_sizes[0] != layout.features() || config.classes() != layout.classes {
        return Err(Error::Config(format!(
            "layer sizes {:?} do not fit {} features and {} classes",
            config.layer_sizes,
            layout.features(),
            layout.classes
        )));
    }
    let SharedData { features, labels } = ingest_vertical(sess, layout, own)?;
    let (train_rows, test_rows) = split_indices(layout.rows, config.train_size, config.split_seed)?;
    let x_train = features.select_rows(&train_rows)?;
    let y_train = labels.select_rows(&train_rows)?;
    let x_test = features.select_rows(&test_rows)?;
    let test_labels = evaluator_labels(sess, layout, own, &labels, &test_rows)?;

    let plain = if sess.id() == EVALUATOR {
        Some(PlainModel::init(config)?)
    } else {
        None
    };
    let mut model = SharedModel::share(sess, EVALUATOR, plain.as_ref(), config)?;

    let mut metrics = Vec::with_capacity(config.epochs);
    let mut predictions = None;
    for (epoch, order) in epoch_orders(train_rows.len(), config.epochs, config.shuffle_seed)
        .into_iter()
        .enumerate()
    {
        let start = Instant::now();
        let mut picked = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let xb = x_train.select_rows(batch)?;
            let yb = y_train.select_rows(batch)?;
            let fwd = forward(sess, &model, &xb, config)
                .map_err(|e| e.context(format!("epoch {}", epoch + 1)))?;
            // probability of the true class, opened to the evaluator
            let p = hadamard(sess, &yb, &fwd.output)?
                .rowsum_broadcast()
                .column_slice(0, 1)?;
            if let Some(p) = reconstruct(sess, &p, Reveal::To(EVALUATOR), RevealPurpose::Loss)? {
                picked.extend_from_slice(p.as_slice());
            }
            backward_and_step(sess, &mut model, &fwd, &yb, config)?;
        }
        let pred = predict(sess, &model, &x_test, config, EVALUATOR)?;
        let acc = match (&pred, &test_labels) {
            (Some(p), Some(l)) => Some(accuracy(p, l)),
            _ => None,
        };
        predictions = pred;
        let (bytes, rounds) = totals(sess.stats_log());
        metrics.push(EpochMetrics {
            epoch: epoch + 1,
            loss: (!picked.is_empty()).then(|| mean_neg_log(&picked)),
            accuracy: acc,
            bytes_total: bytes,
            rounds_total: rounds,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(PartyTraining {
        model,
        metrics,
        predictions,
        test_rows,
    })
}

/// How a dataset is cut across the providers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub widths: [usize; 3],
    pub label_provider: PartyId,
}

impl Partition {
    /// Columns spread as evenly as possible, labels at `P0`.
    pub fn even(features: usize) -> Self {
        let base = features / 3;
        let extra = features % 3;
        Self {
            widths: [0, 1, 2].map(|i| base + usize::from(i < extra)),
            label_provider: PartyId::P0,
        }
    }
}

/// Standardized provider blocks and the public layout.
pub fn prepare_blocks(
    data: &Dataset,
    partition: Partition,
) -> Result<(VerticalLayout, [ProviderBlock; 3])> {
    let blocks = data.split_vertical(partition.widths, partition.label_provider)?;
    let layout = VerticalLayout {
        rows: data.rows(),
        widths: partition.widths,
        classes: data.classes,
        label_provider: partition.label_provider,
    };
    Ok((layout, blocks.map(|b| b.standardized())))
}

/// Training result with the three views merged.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// Evaluator loss/accuracy with bytes summed over parties.
    pub metrics: Vec<EpochMetrics>,
    pub predictions: Vec<usize>,
    pub test_rows: Vec<usize>,
    pub final_accuracy: f64,
    pub models: [SharedModel; 3],
}

/// Runs all three parties locally.
pub fn run_training(
    data: &Dataset,
    partition: Partition,
    config: &MlpConfig,
    session: &SessionConfig,
    mode: TransportMode,
    seeds: [u64; 3],
) -> Result<TrainingReport> {
    let (layout, blocks) = prepare_blocks(data, partition)?;
    let program = |s: &mut Session| train_party(s, config, &layout, Some(&blocks[s.id().index()]));
    let out = match mode {
        TransportMode::InProcess => run_inprocess(session, seeds, program)?,
        TransportMode::Socket => run_loopback_sockets(session, seeds, program)?,
    };
    let [a, b, c] = out.into_outputs();
    let mut metrics = a.metrics.clone();
    for (m, (mb, mc)) in metrics.iter_mut().zip(b.metrics.iter().zip(&c.metrics)) {
        m.bytes_total += mb.bytes_total + mc.bytes_total;
        m.wall_ms = m.wall_ms.max(mb.wall_ms).max(mc.wall_ms);
    }
    let final_accuracy = metrics
        .last()
        .and_then(|m| m.accuracy)
        .ok_or_else(|| Error::Protocol("evaluator reported no accuracy".into()))?;
    let predictions = a
        .predictions
        .clone()
        .ok_or_else(|| Error::Protocol("evaluator reported no predictions".into()))?;
    Ok(TrainingReport {
        metrics,
        predictions,
        test_rows: a.test_rows.clone(),
        final_accuracy,
        models: [a.model, b.model, c.model],
    })
}

/// Plaintext twin of [`run_training`]: same standardization, split,
/// initialization, shuffle and update rule.
#[derive(Debug, Clone, PartialEq)]
pub struct PlainTraining {
    pub model: PlainModel,
    /// `(loss, accuracy)` per epoch.
    pub epochs: Vec<(f64, f64)>,
    pub predictions: Vec<usize>,
    pub test_rows: Vec<usize>,
}

pub fn train_plain(data: &Dataset, config: &MlpConfig) -> Result<PlainTraining> {
    config.validate()?;
    let block = ProviderBlock {
        columns: (0..data.features.cols()).map(|c| format!("f{c}")).collect(),
        features: Some(data.features.clone()),
        labels: Some(data.labels.clone()),
        rows: data.rows(),
    }
    .standardized();
    let x = block.features.expect("features present");
    let y = one_hot(&data.labels, data.classes)?;
    let (train_rows, test_rows) = split_indices(data.rows(), config.train_size, config.split_seed)?;
    let (x_train, y_train) = (x.select_rows(&train_rows)?, y.select_rows(&train_rows)?);
    let x_test = x.select_rows(&test_rows)?;
    let test_labels: Vec<usize> = test_rows.iter().map(|&r| data.labels[r]).collect();

    let mut model = PlainModel::init(config)?;
    let mut epochs = Vec::new();
    let mut predictions = Vec::new();
    for order in epoch_orders(train_rows.len(), config.epochs, config.shuffle_seed) {
        let mut picked = Vec::new();
        for batch in order.chunks(config.batch_size) {
            let xb = x_train.select_rows(batch)?;
            let yb = y_train.select_rows(batch)?;
            let fwd = model.forward(&xb)?;
            let p = fwd.output.hadamard(&yb)?;
            picked.extend((0..p.rows()).map(|r| p.row(r).iter().sum::<f64>()));
            let grads = model.gradients(&fwd, &yb)?;
            model.step(&grads, config.step_factor(batch.len()))?;
        }
        predictions = model.predict(&x_test)?;
        epochs.push((mean_neg_log(&picked), accuracy(&predictions, &test_labels)));
    }
    Ok(PlainTraining {
        model,
        epochs,
        predictions,
        test_rows,
    })
}

/// Largest `|secure - plain| / |plain|` over all weights, with the
/// denominator floored at `floor`.
pub fn weight_divergence(secure: &[Matrix], plain: &[Matrix], floor: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (s, p) in secure.iter().zip(plain) {
        s.check_same_shape(p, "weight divergence")?;
        for (a, b) in s.as_slice().iter().zip(p.as_slice()) {
            worst = worst.max((a - b).abs() / b.abs().max(floor));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::open_additive;

    #[test]
    fn epoch_orders_are_permutations() {
        let o = epoch_orders(10, 3, 7);
        assert_eq!(o.len(), 3);
        for p in &o {
            let mut s = p.clone();
            s.sort();
            assert_eq!(s, (0..10).collect::<Vec<_>>());
        }
        assert_ne!(o[0], o[1]);
        assert_eq!(o, epoch_orders(10, 3, 7));
    }

    #[test]
    fn even_partition() {
        assert_eq!(Partition::even(4).widths, [2, 1, 1]);
        assert_eq!(Partition::even(13).widths, [5, 4, 4]);
        assert_eq!(Partition::even(2).widths, [1, 1, 0]);
    }

    #[test]
    fn short_iris_run_tracks_plaintext() {
        let data = Dataset::builtin("iris").unwrap();
        let mut cfg = MlpConfig::iris().with_seed(2);
        cfg.epochs = 1;
        let rep = run_training(
            &data,
            Partition::even(4),
            &cfg,
            &SessionConfig::default(),
            TransportMode::InProcess,
            [1, 2, 3],
        )
        .unwrap();
        let plain = train_plain(&data, &cfg).unwrap();
        assert_eq!(rep.test_rows, plain.test_rows);
        assert_eq!(rep.predictions, plain.predictions);
        let w: Vec<Matrix> = (0..3)
            .map(|l| open_additive(&rep.models.clone().map(|m| m.weights[l].clone())).unwrap())
            .collect();
        let d = weight_divergence(&w, &plain.model.weights, 1e-3).unwrap();
        assert!(d < 1e-6, "divergence {d}");
        let m = &rep.metrics[0];
        assert!((m.loss.unwrap() - plain.epochs[0].0).abs() < 1e-6);
        assert!(m.bytes_total > 0 && m.rounds_total > 0);
    }

    #[test]
    fn label_provider_other_than_evaluator() {
        let data = Dataset::builtin("iris").unwrap();
        let mut cfg = MlpConfig::iris().with_seed(5);
        cfg.epochs = 1;
        let part = Partition {
            widths: [0, 4, 0],
            label_provider: PartyId::P2,
        };
        let rep = run_training(
            &data,
            part,
            &cfg,
            &SessionConfig::default(),
            TransportMode::InProcess,
            [4, 5, 6],
        )
        .unwrap();
        let plain = train_plain(&data, &cfg).unwrap();
        assert_eq!(rep.predictions, plain.predictions);
        assert!((rep.final_accuracy - plain.epochs[0].1).abs() < 1e-12);
    }

    #[test]
    fn mismatched_layout_is_rejected() {
        let data = Dataset::builtin("wine").unwrap();
        let err = run_training(
            &data,
            Partition::even(13),
            &MlpConfig::iris(),
            &SessionConfig::default(),
            TransportMode::InProcess,
            [1, 2, 3],
        )
        .unwrap_err();
        assert!(matches!(err.root(), Error::Config(_)), "{err}");
    }
}
