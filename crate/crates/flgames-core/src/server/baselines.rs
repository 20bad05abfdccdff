//! FedSGD and FedAvg baselines: a single shared model trained end-to-end,
//! with per-round weighted aggregation across clients.

use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::data::FederatedData;
use crate::error::{Error, Result};
use crate::game::{BatchCursor, OptimKind};
use crate::nn::{
    accuracy, backward, forward, forward_logits, sgd_step, softmax_cross_entropy, AdamHyper,
    Batch, MlpParams, OptimState,
};
use crate::seed;

use super::{RoundLog, TrainingRun};

/// Hyperparameters of a baseline run.
#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub rounds: u64,
    /// Local epochs per round (FedAvg only).
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Optimizer for FedAvg's local training; FedSGD always applies the
    /// plain weighted-gradient step.
    pub optimizer: OptimKind,
    pub hidden: Vec<usize>,
    pub eval_cap: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            epochs_per_round: 1,
            batch_size: 256,
            lr: 2.5e-4,
            optimizer: OptimKind::Adam,
            hidden: vec![390, 390],
            eval_cap: 10_000,
        }
    }
}

impl BaselineConfig {
    fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.epochs_per_round == 0 {
            return Err(Error::Config("epochs_per_round must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr <= 0.0 {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    fn model_dims(&self, input_dim: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(classes);
        dims
    }
}

fn model_loss_and_grads(model: &MlpParams, batch: &Batch) -> Result<(f64, MlpParams)> {
    let (logits, cache) = forward(model, &batch.inputs)?;
    let (loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels)?;
    let (grads, _) = backward(model, &cache, &dlogits)?;
    Ok((loss, grads))
}

/// One FedSGD round on explicit per-client batches: every batch yields one
/// gradient of the shared model, and the model takes a single step along
/// the sample-count-weighted aggregate. Returns per-client losses.
pub fn fedsgd_step(
    model: &mut MlpParams,
    client_batches: &[(usize, Batch)],
    lr: f64,
) -> Result<Vec<f64>> {
    if client_batches.is_empty() {
        return Err(Error::Config("no client batches".into()));
    }
    let total: usize = client_batches.iter().map(|(n, _)| n).sum();
    let mut acc = model.zeros_like();
    let mut losses = Vec::with_capacity(client_batches.len());
    for (n_k, batch) in client_batches {
        let (loss, grads) = model_loss_and_grads(model, batch)?;
        acc.add_scaled(&grads, *n_k as f64 / total as f64)?;
        losses.push(loss);
    }
    sgd_step(model, &acc, lr)?;
    Ok(losses)
}

fn eval_logs(
    model: &MlpParams,
    train_eval: &Batch,
    test_eval: &Batch,
    round: u64,
    n_clients: usize,
    losses: Vec<f64>,
    started: Instant,
) -> Result<RoundLog> {
    let train_logits = forward_logits(model, &train_eval.inputs)?;
    let test_logits = forward_logits(model, &test_eval.inputs)?;
    Ok(RoundLog {
        round,
        predictor_round: round,
        acting: (1..=n_clients).collect(),
        train_acc: accuracy(&train_logits, &train_eval.labels),
        test_acc: accuracy(&test_logits, &test_eval.labels),
        client_losses: losses,
        phi_round: false,
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// FedSGD: every round each client computes one minibatch gradient of the
/// shared model and the server applies the weighted aggregate step.
pub fn run_fedsgd_baseline(
    data: &FederatedData,
    config: &BaselineConfig,
    master_seed: u64,
) -> Result<TrainingRun> {
    config.validate()?;
    data.validate()?;
    let n = data.train.len();
    let mut model = MlpParams::init(
        &config.model_dims(data.input_dim(), data.classes()),
        seed::derive(master_seed, 0),
    )?;
    let mut cursors: Vec<BatchCursor> = data
        .train
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            BatchCursor::new(
                ds.len(),
                config.batch_size,
                seed::derive(master_seed, 1000 + i as u64 + 1),
            )
        })
        .collect();
    let train_eval = super::stratified_eval_batch(data, config.eval_cap);
    let test_eval = data
        .test
        .batch(&(0..data.test.len().min(config.eval_cap)).collect::<Vec<_>>());

    let mut logs = Vec::with_capacity(config.rounds as usize);
    for round in 1..=config.rounds {
        let started = Instant::now();
        let batches: Vec<(usize, Batch)> = data
            .train
            .iter()
            .zip(&mut cursors)
            .map(|(ds, cursor)| (ds.len(), ds.batch(&cursor.next_indices())))
            .collect();
        let losses = fedsgd_step(&mut model, &batches, config.lr)?;
        logs.push(eval_logs(
            &model, &train_eval, &test_eval, round, n, losses, started,
        )?);
    }
    let last = logs.last().expect("at least one round");
    Ok(TrainingRun {
        stopped: true,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        logs,
    })
}

fn local_train(
    global: &MlpParams,
    ds: &crate::data::SpuriousDataset,
    cursor: &mut BatchCursor,
    config: &BaselineConfig,
) -> Result<(MlpParams, f64)> {
    let mut local = global.clone();
    let mut optim = OptimState::new(&local, AdamHyper::with_lr(config.lr));
    let steps = cursor.batches_per_epoch() * config.epochs_per_round;
    let mut last_loss = 0.0;
    for _ in 0..steps {
        let batch = ds.batch(&cursor.next_indices());
        let (loss, grads) = model_loss_and_grads(&local, &batch)?;
        match config.optimizer {
            OptimKind::Adam => crate::nn::adam_step(&mut local, &grads, &mut optim)?,
            OptimKind::Sgd => sgd_step(&mut local, &grads, config.lr)?,
        }
        last_loss = loss;
    }
    Ok((local, last_loss))
}

/// FedAvg: every round each client trains a copy of the global model for
/// `epochs_per_round` local epochs; the server replaces the global model
/// with the sample-count-weighted parameter average, ascending client id.
pub fn run_fedavg_baseline(
    data: &FederatedData,
    config: &BaselineConfig,
    master_seed: u64,
) -> Result<TrainingRun> {
    config.validate()?;
    data.validate()?;
    let n = data.train.len();
    let mut model = MlpParams::init(
        &config.model_dims(data.input_dim(), data.classes()),
        seed::derive(master_seed, 0),
    )?;
    let mut cursors: Vec<BatchCursor> = data
        .train
        .iter()
        .enumerate()
        .map(|(i, ds)| {
            BatchCursor::new(
                ds.len(),
                config.batch_size,
                seed::derive(master_seed, 2000 + i as u64 + 1),
            )
        })
        .collect();
    let train_eval = super::stratified_eval_batch(data, config.eval_cap);
    let test_eval = data
        .test
        .batch(&(0..data.test.len().min(config.eval_cap)).collect::<Vec<_>>());
    let total: usize = data.train.iter().map(|d| d.len()).sum();

    let mut logs = Vec::with_capacity(config.rounds as usize);
    for round in 1..=config.rounds {
        let started = Instant::now();
        let jobs: Vec<(&crate::data::SpuriousDataset, &mut BatchCursor)> =
            data.train.iter().zip(cursors.iter_mut()).collect();
        #[cfg(feature = "parallel")]
        let results: Result<Vec<(MlpParams, f64)>> = jobs
            .into_par_iter()
            .map(|(ds, cursor)| local_train(&model, ds, cursor, config))
            .collect();
        #[cfg(not(feature = "parallel"))]
        let results: Result<Vec<(MlpParams, f64)>> = jobs
            .into_iter()
            .map(|(ds, cursor)| local_train(&model, ds, cursor, config))
            .collect();
        let results = results?;

        let mut avg = model.zeros_like();
        let mut losses = Vec::with_capacity(n);
        for ((local, loss), ds) in results.iter().zip(&data.train) {
            avg.add_scaled(local, ds.len() as f64 / total as f64)?;
            losses.push(*loss);
        }
        model = avg;
        logs.push(eval_logs(
            &model, &train_eval, &test_eval, round, n, losses, started,
        )?);
    }
    let last = logs.last().expect("at least one round");
    Ok(TrainingRun {
        stopped: true,
        final_train_acc: last.train_acc,
        final_test_acc: last.test_acc,
        logs,
    })
}
