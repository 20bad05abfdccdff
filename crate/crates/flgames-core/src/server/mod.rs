//! The server loop: playing sequences, round parity between representation
//! updates and predictor updates, weighted gradient aggregation over
//! clients, warm-start stopping, and full training runs.
//!
//! Rounds are 1-based. Odd rounds are predictor rounds: the playing
//! sequence picks the acting clients, each acting client best-responds
//! against its opponent snapshots, and the server then re-communicates
//! everyone's predictors (and, in smooth variants, buffer averages). Even
//! rounds update the shared representation — a no-op when it is fixed to
//! the identity, unless `skip_phi_rounds` collapses them entirely.
//!
//! With the `parallel` feature, per-client work inside a round fans out
//! across the rayon pool; every reduction happens afterwards in ascending
//! client id, so results are identical to the sequential build.

pub mod baselines;

use std::sync::Arc;
use std::time::Instant;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use serde::Serialize;

use crate::data::FederatedData;
use crate::error::{Error, Result};
use crate::game::{
    ensemble_logits, exact_predictor_update, predictor_update, ClientState, DivisorMode,
    OptimKind, UpdateOpts,
};
use crate::nn::{
    accuracy, backward, forward, softmax_cross_entropy, AdamHyper, Batch, MlpParams,
    Representation,
};
use crate::seed;

/// Whether the shared representation is trained or fixed to the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhiVariant {
    Fixed,
    Variable,
}

/// Best-response playing schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    /// Clockwise turns: one client acts per predictor round.
    Sequential,
    /// Simultaneous updates against previous-round snapshots.
    Parallel,
}

/// Algorithm-variant switches and hyperparameters of one training run.
#[derive(Debug, Clone)]
pub struct GameConfig {
    pub variant_phi: PhiVariant,
    pub schedule: Schedule,
    pub smooth: bool,
    /// Full-pass representation gradients (forces `c_percent = 100`).
    pub fast_phi: bool,
    pub buffer_capacity: usize,
    /// Share of an epoch covered by each representation-gradient
    /// collection.
    pub c_percent: f64,
    /// Minibatch steps per predictor update.
    pub local_steps: usize,
    /// When set, predictor updates run `ceil(c% * batches_per_epoch)`
    /// steps instead of `local_steps` (the exact best-response flavor).
    pub predictor_c_percent: Option<f64>,
    pub batch_size: usize,
    /// Predictor learning rate.
    pub lr_w: f64,
    /// Representation learning rate.
    pub lr_phi: f64,
    pub max_rounds: u64,
    /// Training-accuracy fraction under which the run stops (after warm
    /// start).
    pub stop_threshold: f64,
    pub warm_start_override: Option<u64>,
    /// Collapse the no-op representation rounds of the fixed variant so
    /// the round counter counts predictor rounds only.
    pub skip_phi_rounds: bool,
    pub optimizer: OptimKind,
    pub divisor_mode: DivisorMode,
    /// Hidden widths of each predictor head.
    pub predictor_hidden: Vec<usize>,
    /// Hidden widths of the representation network (variable variant).
    pub repr_hidden: Vec<usize>,
    /// Evaluation subsets are capped at this many samples.
    pub eval_cap: usize,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            variant_phi: PhiVariant::Fixed,
            schedule: Schedule::Parallel,
            smooth: true,
            fast_phi: false,
            buffer_capacity: 5,
            c_percent: 100.0,
            local_steps: 1,
            predictor_c_percent: None,
            batch_size: 256,
            lr_w: 2.5e-4,
            lr_phi: 2.5e-5,
            max_rounds: 2000,
            stop_threshold: 0.6,
            warm_start_override: None,
            skip_phi_rounds: false,
            optimizer: OptimKind::Adam,
            divisor_mode: DivisorMode::ClientCount,
            predictor_hidden: vec![390, 390],
            repr_hidden: vec![390],
            eval_cap: 10_000,
        }
    }
}

impl GameConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be at least 1".into()));
        }
        if !(self.c_percent > 0.0 && self.c_percent <= 100.0) {
            return Err(Error::Config(format!(
                "c_percent {} not in (0, 100]",
                self.c_percent
            )));
        }
        if let Some(c) = self.predictor_c_percent {
            if !(c > 0.0 && c <= 100.0) {
                return Err(Error::Config(format!(
                    "predictor_c_percent {c} not in (0, 100]"
                )));
            }
        }
        if !(self.stop_threshold > 0.0 && self.stop_threshold < 1.0) {
            return Err(Error::Config(format!(
                "stop_threshold {} not in (0, 1)",
                self.stop_threshold
            )));
        }
        if self.local_steps == 0 {
            return Err(Error::Config("local_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.max_rounds == 0 {
            return Err(Error::Config("max_rounds must be at least 1".into()));
        }
        if self.lr_w <= 0.0 || self.lr_phi <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    fn update_opts(&self) -> UpdateOpts {
        UpdateOpts {
            smooth: self.smooth,
            divisor_mode: self.divisor_mode,
            optimizer: self.optimizer,
        }
    }
}

/// Per-round record emitted to the harness.
#[derive(Debug, Clone, Serialize)]
pub struct RoundLog {
    pub round: u64,
    /// Predictor rounds completed so far (the second rounds counter).
    pub predictor_round: u64,
    pub acting: Vec<usize>,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Last known local loss per client, ascending id.
    pub client_losses: Vec<f64>,
    pub phi_round: bool,
    /// Not serialized into run artifacts; reruns must be byte-identical.
    #[serde(skip)]
    pub wall_clock_ms: f64,
}

/// Server-side state of a training run.
pub struct ServerState {
    pub phi: Representation,
    pub clients: Vec<ClientState>,
    /// Completed rounds.
    pub round: u64,
    /// Completed predictor rounds.
    pub predictor_rounds: u64,
    /// Ensemble train accuracy after each predictor round; drives stopping.
    pub accuracy_history: Vec<f64>,
    last_losses: Vec<f64>,
    train_eval: Batch,
    test_eval: Batch,
}

/// Set of clients acting at predictor-round `t` (both 1-based).
/// Sequential schedules rotate clockwise through `1 + (t-1) mod n`;
/// parallel schedules pick everyone.
pub fn playing_sequence(schedule: Schedule, t: u64, n_clients: usize) -> Vec<usize> {
    assert!(t >= 1 && n_clients >= 1);
    match schedule {
        Schedule::Sequential => vec![1 + ((t - 1) % n_clients as u64) as usize],
        Schedule::Parallel => (1..=n_clients).collect(),
    }
}

/// Warm-start length: the stopping rule stays silent for this many
/// predictor rounds. Fixed representation: the client count (one full
/// clockwise cycle). Variable: the number of training steps in an epoch
/// over the pooled data.
pub fn warm_start_len(
    variant: PhiVariant,
    n_clients: usize,
    total_train_samples: usize,
    batch_size: usize,
) -> u64 {
    match variant {
        PhiVariant::Fixed => n_clients as u64,
        PhiVariant::Variable => (total_train_samples / batch_size) as u64,
    }
}

/// Stop once the latest train accuracy drops below the threshold, but never
/// during the warm start.
pub fn stopping_check(history: &[f64], stop_threshold: f64, warm_start: u64) -> bool {
    match history.last() {
        Some(&latest) => history.len() as u64 > warm_start && latest < stop_threshold,
        None => false,
    }
}

/// Sum of per-batch gradients of the ensemble loss with respect to the
/// representation, over `ceil(c% * batches_per_epoch)` of the client's
/// batches. Errors under a fixed representation.
pub fn representation_gradient(
    client: &mut ClientState,
    phi: &Representation,
    predictors: &[MlpParams],
    c_percent: f64,
) -> Result<MlpParams> {
    let phi_params = match phi {
        Representation::Identity => return Err(Error::FixedRepresentation),
        Representation::Mlp(p) => p,
    };
    if !(c_percent > 0.0 && c_percent <= 100.0) {
        return Err(Error::Config(format!(
            "c_percent {c_percent} not in (0, 100]"
        )));
    }
    let steps = crate::game::steps_for_percent(c_percent, client.phi_cursor.batches_per_epoch());
    let inv_n = 1.0 / predictors.len() as f64;
    let mut acc = phi_params.zeros_like();
    for _ in 0..steps.max(1) {
        let indices = client.phi_cursor.next_indices();
        let batch = client.data.batch(&indices);
        let (features, phi_cache) = forward(phi_params, &batch.inputs)?;
        let mut caches = Vec::with_capacity(predictors.len());
        let mut ensemble = None;
        for p in predictors {
            let (logits, cache) = forward(p, &features)?;
            caches.push(cache);
            match &mut ensemble {
                None => ensemble = Some(logits),
                Some(acc) => acc.add_scaled(&logits, 1.0)?,
            }
        }
        let mut ensemble = ensemble.ok_or_else(|| Error::Config("no predictors".into()))?;
        ensemble.scale(inv_n);
        let (_, mut dlogits) = softmax_cross_entropy(&ensemble, &batch.labels)?;
        dlogits.scale(inv_n);
        let mut dfeatures = None;
        for (p, cache) in predictors.iter().zip(&caches) {
            let (_, dfeat) = backward(p, cache, &dlogits)?;
            match &mut dfeatures {
                None => dfeatures = Some(dfeat),
                Some(acc) => acc.add_scaled(&dfeat, 1.0)?,
            }
        }
        let (phi_grads, _) = backward(phi_params, &phi_cache, &dfeatures.unwrap())?;
        acc.add_scaled(&phi_grads, 1.0)?;
    }
    Ok(acc)
}

/// One client's contribution to the representation update.
pub struct PhiContribution {
    pub client_id: usize,
    pub gradient: MlpParams,
    pub n_samples: usize,
}

/// Exact weighted update `phi -= eta * sum_k (N_k / N) g_k`, summed in
/// ascending client id. Every client in `1..=n_expected` must contribute.
pub fn aggregate_phi(
    phi: &mut MlpParams,
    contributions: &[PhiContribution],
    eta: f64,
    n_expected: usize,
) -> Result<()> {
    for id in 1..=n_expected {
        if !contributions.iter().any(|c| c.client_id == id) {
            return Err(Error::MissingGradient(id));
        }
    }
    let mut sorted: Vec<&PhiContribution> = contributions.iter().collect();
    sorted.sort_by_key(|c| c.client_id);
    let total: usize = sorted.iter().map(|c| c.n_samples).sum();
    if total == 0 {
        return Err(Error::Config("sample counts must be positive".into()));
    }
    let mut acc = phi.zeros_like();
    for c in sorted {
        let weight = c.n_samples as f64 / total as f64;
        acc.add_scaled(&c.gradient, weight)?;
    }
    phi.add_scaled(&acc, -eta)
}

pub(crate) fn stratified_eval_batch(data: &FederatedData, cap: usize) -> Batch {
    let n = data.train.len();
    let per_client = cap.div_ceil(n);
    let mut labels = Vec::new();
    let dim = data.input_dim();
    let mut flat = Vec::new();
    let mut total = 0usize;
    for ds in &data.train {
        let take = per_client.min(ds.len());
        let indices: Vec<usize> = (0..take).collect();
        let batch = ds.batch(&indices);
        flat.extend_from_slice(batch.inputs.data());
        labels.extend(batch.labels);
        total += take;
    }
    Batch {
        inputs: crate::nn::Matrix::from_vec(total, dim, flat).expect("consistent dims"),
        labels,
    }
}

impl ServerState {
    /// Initializes predictors, the representation, opponent snapshots, and
    /// the fixed evaluation subsets.
    pub fn init(data: &FederatedData, config: &GameConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        let n = data.train.len();
        if n == 0 {
            return Err(Error::Config("need at least one training client".into()));
        }
        let input_dim = data.input_dim();
        let classes = data.classes();

        let phi = match config.variant_phi {
            PhiVariant::Fixed => Representation::Identity,
            PhiVariant::Variable => {
                let mut dims = vec![input_dim];
                dims.extend_from_slice(&config.repr_hidden);
                Representation::Mlp(MlpParams::init_with_final(
                    &dims,
                    seed::derive(master_seed, 0),
                    crate::nn::Activation::Elu,
                )?)
            }
        };
        let feat_dim = phi.feature_dim(input_dim);

        let mut predictor_dims = vec![feat_dim];
        predictor_dims.extend_from_slice(&config.predictor_hidden);
        predictor_dims.push(classes);

        let mut clients = Vec::with_capacity(n);
        for (i, ds) in data.train.iter().enumerate() {
            let id = i + 1;
            let predictor = MlpParams::init(&predictor_dims, seed::derive(master_seed, id as u64))?;
            clients.push(ClientState::new(
                id,
                predictor,
                AdamHyper::with_lr(config.lr_w),
                config.buffer_capacity,
                Arc::new(ds.clone()),
                config.batch_size,
                seed::derive(master_seed, 1000 + id as u64),
            )?);
        }

        let train_eval = stratified_eval_batch(data, config.eval_cap);
        let test_indices: Vec<usize> = (0..data.test.len().min(config.eval_cap)).collect();
        let test_eval = data.test.batch(&test_indices);

        let mut state = Self {
            phi,
            clients,
            round: 0,
            predictor_rounds: 0,
            accuracy_history: Vec::new(),
            last_losses: vec![0.0; n],
            train_eval,
            test_eval,
        };
        state.communicate(config.smooth)?;
        Ok(state)
    }

    /// Refreshes every client's opponent snapshots from current predictors
    /// (and buffer averages under smoothing).
    pub fn communicate(&mut self, smooth: bool) -> Result<()> {
        let snapshot: Vec<(usize, MlpParams, Option<MlpParams>)> = self
            .clients
            .iter()
            .map(|c| {
                let avg = if smooth { c.buffer.average().ok() } else { None };
                (c.id, c.predictor.clone(), avg)
            })
            .collect();
        for client in &mut self.clients {
            client.opponent_predictors.clear();
            client.opponent_buffer_avgs.clear();
            for (id, pred, avg) in &snapshot {
                if *id == client.id {
                    continue;
                }
                client.opponent_predictors.insert(*id, pred.clone());
                if let Some(avg) = avg {
                    client.opponent_buffer_avgs.insert(*id, avg.clone());
                }
            }
        }
        Ok(())
    }

    /// Ensemble accuracy of the current predictors on the fixed eval sets.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        let predictors: Vec<&MlpParams> = self.clients.iter().map(|c| &c.predictor).collect();
        let train_logits = ensemble_logits(&predictors, &self.phi, &self.train_eval.inputs)?;
        let test_logits = ensemble_logits(&predictors, &self.phi, &self.test_eval.inputs)?;
        Ok((
            accuracy(&train_logits, &self.train_eval.labels),
            accuracy(&test_logits, &self.test_eval.labels),
        ))
    }
}

fn update_acting_clients(
    clients: &mut [ClientState],
    acting: &[usize],
    phi: &Representation,
    config: &GameConfig,
) -> Result<Vec<(usize, f64)>> {
    let opts = config.update_opts();
    let step = |client: &mut ClientState| -> Result<(usize, f64)> {
        let loss = match config.predictor_c_percent {
            Some(c) => exact_predictor_update(client, phi, &opts, c)?,
            None => predictor_update(client, phi, &opts, config.local_steps)?,
        };
        Ok((client.id, loss))
    };
    #[cfg(feature = "parallel")]
    {
        clients
            .par_iter_mut()
            .filter(|c| acting.contains(&c.id))
            .map(step)
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        clients
            .iter_mut()
            .filter(|c| acting.contains(&c.id))
            .map(step)
            .collect()
    }
}

fn collect_phi_gradients(
    clients: &mut [ClientState],
    phi: &Representation,
    predictors: &[MlpParams],
    c_percent: f64,
) -> Result<Vec<PhiContribution>> {
    let grad = |client: &mut ClientState| -> Result<PhiContribution> {
        let gradient = representation_gradient(client, phi, predictors, c_percent)?;
        Ok(PhiContribution {
            client_id: client.id,
            gradient,
            n_samples: client.data.len(),
        })
    };
    #[cfg(feature = "parallel")]
    {
        clients.par_iter_mut().map(grad).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        clients.iter_mut().map(grad).collect()
    }
}

/// Advances the state by one round and logs it.
pub fn run_round(state: &mut ServerState, config: &GameConfig) -> Result<RoundLog> {
    let started = Instant::now();
    let t = state.round + 1;
    let n = state.clients.len();
    let phi_round = if config.skip_phi_rounds && config.variant_phi == PhiVariant::Fixed {
        false
    } else {
        t % 2 == 0
    };

    let mut acting: Vec<usize> = Vec::new();
    if phi_round {
        if config.variant_phi == PhiVariant::Variable {
            acting = (1..=n).collect();
            let predictors: Vec<MlpParams> =
                state.clients.iter().map(|c| c.predictor.clone()).collect();
            let c = if config.fast_phi { 100.0 } else { config.c_percent };
            let contributions =
                collect_phi_gradients(&mut state.clients, &state.phi, &predictors, c)?;
            let phi_params = match &mut state.phi {
                Representation::Mlp(p) => p,
                Representation::Identity => unreachable!("variable variant has a network"),
            };
            aggregate_phi(phi_params, &contributions, config.lr_phi, n)?;
        }
    } else {
        let t_pred = state.predictor_rounds + 1;
        acting = playing_sequence(config.schedule, t_pred, n);
        let losses = update_acting_clients(&mut state.clients, &acting, &state.phi, config)?;
        for (id, loss) in losses {
            state.last_losses[id - 1] = loss;
        }
        state.predictor_rounds += 1;
        state.communicate(config.smooth)?;
    }

    state.round = t;
    let (train_acc, test_acc) = state.evaluate()?;
    if !phi_round {
        state.accuracy_history.push(train_acc);
    }

    Ok(RoundLog {
        round: t,
        predictor_round: state.predictor_rounds,
        acting,
        train_acc,
        test_acc,
        client_losses: state.last_losses.clone(),
        phi_round,
        wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub logs: Vec<RoundLog>,
    /// Whether the stopping rule fired before `max_rounds`.
    pub stopped: bool,
    pub final_train_acc: f64,
    pub final_test_acc: f64,
}

impl TrainingRun {
    pub fn rounds(&self) -> u64 {
        self.logs.last().map_or(0, |l| l.round)
    }

    pub fn predictor_rounds(&self) -> u64 {
        self.logs.last().map_or(0, |l| l.predictor_round)
    }
}

/// Runs the full training loop: alternating rounds until the stopping rule
/// fires or `max_rounds` is reached (the latter is flagged, not an error).
pub fn run_training(
    data: &FederatedData,
    config: &GameConfig,
    master_seed: u64,
) -> Result<(ServerState, TrainingRun)> {
    let mut state = ServerState::init(data, config, master_seed)?;
    let warm_start = config.warm_start_override.unwrap_or_else(|| {
        warm_start_len(
            config.variant_phi,
            data.train.len(),
            data.total_train_samples(),
            config.batch_size,
        )
    });
    let mut logs = Vec::new();
    let mut stopped = false;
    while state.round < config.max_rounds {
        let log = run_round(&mut state, config)?;
        logs.push(log);
        if stopping_check(&state.accuracy_history, config.stop_threshold, warm_start) {
            stopped = true;
            break;
        }
    }
    let (train_acc, test_acc) = state.evaluate()?;
    Ok((
        state,
        TrainingRun {
            logs,
            stopped,
            final_train_acc: train_acc,
            final_test_acc: test_acc,
        },
    ))
}
