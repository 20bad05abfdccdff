//! Per-client game mechanics: the ensemble predictor, the buffer-smoothed
//! local objective, and one-minibatch or full-pass best-response steps.
//!
//! Each client plays against snapshots of its opponents. The acting
//! client's candidate predictor is the only branch that receives gradient;
//! opponent predictors and buffer averages enter the ensemble as constants.

use std::collections::BTreeMap;
use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::SpuriousDataset;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, backward, forward, forward_logits, sgd_step, softmax_cross_entropy, AdamHyper,
    Batch, Matrix, MlpParams, OptimState, Representation,
};
use crate::seed;

/// FIFO of a client's historically played predictors with an incrementally
/// maintained parameter sum, so the uniform average over the buffer costs
/// one scale per query regardless of capacity.
#[derive(Debug, Clone)]
pub struct ParamBuffer {
    capacity: usize,
    items: VecDeque<MlpParams>,
    sum: Option<MlpParams>,
}

impl ParamBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity must be at least 1".into()));
        }
        Ok(Self {
            capacity,
            items: VecDeque::with_capacity(capacity + 1),
            sum: None,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &MlpParams> {
        self.items.iter()
    }

    /// Inserts a predictor, evicting the oldest one when full.
    pub fn push(&mut self, params: MlpParams) -> Result<()> {
        match &mut self.sum {
            Some(sum) => sum.add_scaled(&params, 1.0)?,
            None => self.sum = Some(params.clone()),
        }
        self.items.push_back(params);
        if self.items.len() > self.capacity {
            let evicted = self.items.pop_front().unwrap();
            self.sum.as_mut().unwrap().add_scaled(&evicted, -1.0)?;
        }
        Ok(())
    }

    /// Uniform average of the buffered predictors; `EmptyBuffer` when none.
    pub fn average(&self) -> Result<MlpParams> {
        let sum = self.sum.as_ref().ok_or(Error::EmptyBuffer)?;
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let mut avg = sum.clone();
        avg.scale(1.0 / self.items.len() as f64);
        Ok(avg)
    }

    /// Recomputes the average from scratch; test oracle for the running sum.
    pub fn average_recomputed(&self) -> Result<MlpParams> {
        let first = self.items.front().ok_or(Error::EmptyBuffer)?;
        let mut acc = first.zeros_like();
        for p in &self.items {
            acc.add_scaled(p, 1.0)?;
        }
        acc.scale(1.0 / self.items.len() as f64);
        Ok(acc)
    }
}

/// Seeded minibatch scheduler: shuffles once per epoch, yields batches of
/// at most `batch_size` indices, final partial batch included.
#[derive(Debug, Clone)]
pub struct BatchCursor {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchCursor {
    pub fn new(n: usize, batch_size: usize, cursor_seed: u64) -> Self {
        let mut cursor = Self {
            order: (0..n).collect(),
            pos: 0,
            batch_size: batch_size.max(1),
            rng: ChaCha8Rng::seed_from_u64(cursor_seed),
        };
        cursor.reshuffle();
        cursor
    }

    fn reshuffle(&mut self) {
        for i in (1..self.order.len()).rev() {
            let j = self.rng.gen_range(0..=i);
            self.order.swap(i, j);
        }
        self.pos = 0;
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Indices of the next minibatch, reshuffling at epoch boundaries.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.reshuffle();
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

impl SpuriousDataset {
    /// Gathers the given rows into a training batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        Batch {
            inputs: self.inputs.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// How the ensemble sum is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DivisorMode {
    /// Divide by the total client count, independent of buffer occupancy.
    #[default]
    ClientCount,
    /// Divide by the actual number of summed terms; exposed for
    /// experimentation only.
    TermCount,
}

/// Everything a client combines into one ensemble evaluation: its candidate
/// predictor, opponent snapshots, and the opponents' buffer averages.
#[derive(Debug)]
pub struct EnsembleView<'a> {
    pub candidate: &'a MlpParams,
    /// Opponent predictors in ascending client id.
    pub opponents: Vec<(usize, &'a MlpParams)>,
    /// Buffer averages of opponents with non-empty buffers, ascending id.
    /// Opponents whose buffers are empty simply contribute no term.
    pub buffer_averages: Vec<(usize, &'a MlpParams)>,
    pub divisor: f64,
}

/// One client of the ensemble game.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub predictor: MlpParams,
    pub optimizer: OptimState,
    pub buffer: ParamBuffer,
    /// Snapshot of opponents' predictors from the last communication;
    /// never contains this client's own predictor.
    pub opponent_predictors: BTreeMap<usize, MlpParams>,
    /// Snapshot of opponents' buffer averages from the last communication.
    pub opponent_buffer_avgs: BTreeMap<usize, MlpParams>,
    pub data: Arc<SpuriousDataset>,
    pub cursor: BatchCursor,
    /// Separate stream for representation-gradient batches so toggling the
    /// representation variant does not perturb predictor batches.
    pub phi_cursor: BatchCursor,
}

impl ClientState {
    pub fn new(
        id: usize,
        predictor: MlpParams,
        hyper: AdamHyper,
        buffer_capacity: usize,
        data: Arc<SpuriousDataset>,
        batch_size: usize,
        client_seed: u64,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Config(format!("client {id} has an empty dataset")));
        }
        let optimizer = OptimState::new(&predictor, hyper);
        Ok(Self {
            id,
            predictor,
            optimizer,
            buffer: ParamBuffer::new(buffer_capacity)?,
            opponent_predictors: BTreeMap::new(),
            opponent_buffer_avgs: BTreeMap::new(),
            data: Arc::clone(&data),
            cursor: BatchCursor::new(data.len(), batch_size, seed::derive(client_seed, 1)),
            phi_cursor: BatchCursor::new(data.len(), batch_size, seed::derive(client_seed, 2)),
        })
    }

    /// Total client count: this client plus every snapshot opponent.
    pub fn total_clients(&self) -> usize {
        self.opponent_predictors.len() + 1
    }

    /// Builds the ensemble view for the current candidate predictor.
    pub fn view(&self, mode: DivisorMode) -> EnsembleView<'_> {
        let opponents: Vec<(usize, &MlpParams)> = self
            .opponent_predictors
            .iter()
            .map(|(&id, p)| (id, p))
            .collect();
        let buffer_averages: Vec<(usize, &MlpParams)> = self
            .opponent_buffer_avgs
            .iter()
            .map(|(&id, p)| (id, p))
            .collect();
        let divisor = match mode {
            DivisorMode::ClientCount => self.total_clients() as f64,
            DivisorMode::TermCount => (1 + opponents.len() + buffer_averages.len()) as f64,
        };
        EnsembleView {
            candidate: &self.predictor,
            opponents,
            buffer_averages,
            divisor,
        }
    }
}

/// Mean of the predictors' logits on the shared features. With an identity
/// representation the predictors read the raw inputs.
pub fn ensemble_logits(
    predictors: &[&MlpParams],
    phi: &Representation,
    inputs: &Matrix,
) -> Result<Matrix> {
    if predictors.is_empty() {
        return Err(Error::Config("ensemble needs at least one predictor".into()));
    }
    let features = phi.features(inputs)?;
    let mut acc = forward_logits(predictors[0], &features)?;
    for p in &predictors[1..] {
        let logits = forward_logits(p, &features)?;
        acc.add_scaled(&logits, 1.0)?;
    }
    acc.scale(1.0 / predictors.len() as f64);
    Ok(acc)
}

/// Buffer-smoothed ensemble: candidate logits plus current-opponent logits
/// plus each opponent's buffer-average logits, divided by the view's
/// divisor. With all buffers empty this is bit-equal to [`ensemble_logits`]
/// over `{candidate, opponents}` with the client-count divisor.
pub fn smoothed_ensemble_logits(
    view: &EnsembleView<'_>,
    phi: &Representation,
    inputs: &Matrix,
) -> Result<Matrix> {
    let features = phi.features(inputs)?;
    let mut acc = forward_logits(view.candidate, &features)?;
    for (_, p) in &view.opponents {
        let logits = forward_logits(p, &features)?;
        acc.add_scaled(&logits, 1.0)?;
    }
    for (_, avg) in &view.buffer_averages {
        let logits = forward_logits(avg, &features)?;
        acc.add_scaled(&logits, 1.0)?;
    }
    acc.scale(1.0 / view.divisor);
    Ok(acc)
}

/// Cross-entropy of the smoothed ensemble on the client's own batch, with
/// the exact gradient w.r.t. the candidate predictor only. Opponents and
/// buffers are constants; the candidate branch carries the `1/divisor`
/// factor of the ensemble mean.
pub fn local_objective(
    view: &EnsembleView<'_>,
    phi: &Representation,
    batch: &Batch,
) -> Result<(f64, MlpParams)> {
    let features = phi.features(&batch.inputs)?;
    let (cand_logits, cache) = forward(view.candidate, &features)?;
    let mut acc = cand_logits;
    for (_, p) in &view.opponents {
        let logits = forward_logits(p, &features)?;
        acc.add_scaled(&logits, 1.0)?;
    }
    for (_, avg) in &view.buffer_averages {
        let logits = forward_logits(avg, &features)?;
        acc.add_scaled(&logits, 1.0)?;
    }
    acc.scale(1.0 / view.divisor);
    let (loss, mut dlogits) = softmax_cross_entropy(&acc, &batch.labels)?;
    dlogits.scale(1.0 / view.divisor);
    let (grads, _) = backward(view.candidate, &cache, &dlogits)?;
    Ok((loss, grads))
}

/// Which optimizer drives predictor steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimKind {
    #[default]
    Adam,
    Sgd,
}

/// Per-step options shared by the update entry points.
#[derive(Debug, Clone, Copy)]
pub struct UpdateOpts {
    pub smooth: bool,
    pub divisor_mode: DivisorMode,
    pub optimizer: OptimKind,
}

fn run_predictor_steps(
    state: &mut ClientState,
    phi: &Representation,
    opts: &UpdateOpts,
    steps: usize,
) -> Result<f64> {
    let mut last_loss = 0.0;
    for _ in 0..steps {
        let indices = state.cursor.next_indices();
        let batch = state.data.batch(&indices);
        let (loss, grads) = {
            let view = state.view(opts.divisor_mode);
            local_objective(&view, phi, &batch)?
        };
        match opts.optimizer {
            OptimKind::Adam => adam_step(&mut state.predictor, &grads, &mut state.optimizer)?,
            OptimKind::Sgd => {
                let lr = state.optimizer.hyper.lr;
                sgd_step(&mut state.predictor, &grads, lr)?;
                state.optimizer.t += 1;
            }
        }
        last_loss = loss;
    }
    Ok(last_loss)
}

/// Best-response approximation: `local_steps` optimizer steps of the local
/// objective on successive minibatches, then (in smooth variants) the new
/// predictor is inserted into the client's buffer. Returns the last
/// minibatch loss.
pub fn predictor_update(
    state: &mut ClientState,
    phi: &Representation,
    opts: &UpdateOpts,
    local_steps: usize,
) -> Result<f64> {
    if local_steps == 0 {
        return Err(Error::Config("local_steps must be at least 1".into()));
    }
    let loss = run_predictor_steps(state, phi, opts, local_steps)?;
    if opts.smooth {
        state.buffer.push(state.predictor.clone())?;
    }
    Ok(loss)
}

/// Number of minibatch steps that cover `c_percent` of one epoch.
pub fn steps_for_percent(c_percent: f64, batches_per_epoch: usize) -> usize {
    ((c_percent / 100.0) * batches_per_epoch as f64).ceil() as usize
}

/// Exact best-response flavor: runs `ceil(c% * batches_per_epoch)`
/// sequential minibatch steps; `c = 100` is one full pass over the client's
/// data.
pub fn exact_predictor_update(
    state: &mut ClientState,
    phi: &Representation,
    opts: &UpdateOpts,
    c_percent: f64,
) -> Result<f64> {
    if !(c_percent > 0.0 && c_percent <= 100.0) {
        return Err(Error::Config(format!(
            "c_percent {c_percent} not in (0, 100]"
        )));
    }
    let steps = steps_for_percent(c_percent, state.cursor.batches_per_epoch());
    let loss = run_predictor_steps(state, phi, opts, steps.max(1))?;
    if opts.smooth {
        state.buffer.push(state.predictor.clone())?;
    }
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EnvSpec, Role, SemLayout};
    use crate::nn::gradcheck;

    fn params(dims: &[usize], s: u64) -> MlpParams {
        MlpParams::init(dims, s).unwrap()
    }

    fn marker(dims: &[usize], value: f64) -> MlpParams {
        let mut p = params(dims, 0).zeros_like();
        p.layers[0].weights.set(0, 0, value);
        p
    }

    fn inputs(rows: usize, cols: usize, s: u64) -> Matrix {
        let mut state = s;
        let data = (0..rows * cols)
            .map(|_| {
                state = crate::seed::splitmix64(state);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn sem_data(n: usize, seed_val: u64) -> Arc<SpuriousDataset> {
        let spec = EnvSpec {
            client_id: 1,
            delta: 0.25,
            p_spurious: 0.2,
            n_samples: n,
            role: Role::Train,
        };
        Arc::new(crate::data::synth_sem_generate(&spec, SemLayout::default(), seed_val).unwrap())
    }

    #[test]
    fn buffer_fifo_evicts_oldest() {
        let dims = [2, 2];
        let mut buf = ParamBuffer::new(5).unwrap();
        for v in 1..=7 {
            buf.push(marker(&dims, v as f64)).unwrap();
        }
        assert_eq!(buf.len(), 5);
        let held: Vec<f64> = buf.iter().map(|p| p.layers[0].weights.get(0, 0)).collect();
        assert_eq!(held, vec![3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn buffer_average_small_cases() {
        let dims = [2, 2];
        let mut buf = ParamBuffer::new(3).unwrap();
        assert!(matches!(buf.average(), Err(Error::EmptyBuffer)));
        buf.push(marker(&dims, 2.0)).unwrap();
        assert_eq!(buf.average().unwrap().layers[0].weights.get(0, 0), 2.0);
        buf.push(marker(&dims, 4.0)).unwrap();
        assert_eq!(buf.average().unwrap().layers[0].weights.get(0, 0), 3.0);
    }

    #[test]
    fn buffer_zero_capacity_rejected() {
        assert!(ParamBuffer::new(0).is_err());
    }

    #[test]
    fn running_sum_tracks_recomputed_average() {
        let dims = [4, 3];
        let mut buf = ParamBuffer::new(7).unwrap();
        for i in 0..1000u64 {
            buf.push(params(&dims, i)).unwrap();
            if i % 13 == 0 {
                let fast = buf.average().unwrap();
                let slow = buf.average_recomputed().unwrap();
                assert!(fast.max_abs_diff(&slow) < 1e-9);
            }
        }
        let fast = buf.average().unwrap();
        let slow = buf.average_recomputed().unwrap();
        assert!(fast.max_abs_diff(&slow) < 1e-9);
    }

    #[test]
    fn cursor_covers_epoch_and_reshuffles() {
        let mut cursor = BatchCursor::new(10, 4, 3);
        assert_eq!(cursor.batches_per_epoch(), 3);
        let mut seen: Vec<usize> = Vec::new();
        for _ in 0..3 {
            seen.extend(cursor.next_indices());
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        // Next epoch starts over with all ten indices again.
        let mut second: Vec<usize> = Vec::new();
        for _ in 0..3 {
            second.extend(cursor.next_indices());
        }
        second.sort_unstable();
        assert_eq!(second, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn ensemble_of_identical_predictors_is_one_predictor() {
        let p = params(&[3, 4, 2], 5);
        let x = inputs(4, 3, 1);
        let single = forward_logits(&p, &x).unwrap();
        let trio = ensemble_logits(&[&p, &p, &p], &Representation::Identity, &x).unwrap();
        for (a, b) in trio.data().iter().zip(single.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_predictors_cancel() {
        let p = params(&[3, 2], 5);
        let mut neg = p.clone();
        neg.scale(-1.0);
        let x = inputs(4, 3, 2);
        let logits = ensemble_logits(&[&p, &neg], &Representation::Identity, &x).unwrap();
        assert!(logits.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn ensemble_matches_bruteforce_average() {
        let ps = [params(&[3, 4, 2], 1), params(&[3, 4, 2], 2), params(&[3, 4, 2], 3)];
        let x = inputs(5, 3, 9);
        let got = ensemble_logits(&[&ps[0], &ps[1], &ps[2]], &Representation::Identity, &x).unwrap();
        for r in 0..5 {
            for c in 0..2 {
                let mut want = 0.0;
                for p in &ps {
                    want += forward_logits(p, &x).unwrap().get(r, c);
                }
                want /= 3.0;
                assert!((got.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_buffers_reduce_to_plain_ensemble() {
        let cand = params(&[3, 4, 2], 1);
        let opp1 = params(&[3, 4, 2], 2);
        let opp2 = params(&[3, 4, 2], 3);
        let view = EnsembleView {
            candidate: &cand,
            opponents: vec![(2, &opp1), (3, &opp2)],
            buffer_averages: vec![],
            divisor: 3.0,
        };
        let x = inputs(4, 3, 4);
        let smoothed = smoothed_ensemble_logits(&view, &Representation::Identity, &x).unwrap();
        let plain = ensemble_logits(&[&cand, &opp1, &opp2], &Representation::Identity, &x).unwrap();
        assert_eq!(smoothed, plain);
    }

    #[test]
    fn singleton_view_scales_candidate_only() {
        let cand = params(&[3, 2], 1);
        let view = EnsembleView {
            candidate: &cand,
            opponents: vec![],
            buffer_averages: vec![],
            divisor: 1.0,
        };
        let x = inputs(4, 3, 4);
        let got = smoothed_ensemble_logits(&view, &Representation::Identity, &x).unwrap();
        assert_eq!(got, forward_logits(&cand, &x).unwrap());
    }

    #[test]
    fn two_client_buffer_case_matches_hand_computation() {
        let cand = params(&[3, 2], 1);
        let opp = params(&[3, 2], 2);
        let old_a = params(&[3, 2], 3);
        let old_b = params(&[3, 2], 4);
        let mut buf = ParamBuffer::new(5).unwrap();
        buf.push(old_a.clone()).unwrap();
        buf.push(old_b.clone()).unwrap();
        let avg = buf.average().unwrap();
        let view = EnsembleView {
            candidate: &cand,
            opponents: vec![(2, &opp)],
            buffer_averages: vec![(2, &avg)],
            divisor: 2.0,
        };
        let x = inputs(4, 3, 7);
        let got = smoothed_ensemble_logits(&view, &Representation::Identity, &x).unwrap();
        // Hand computation: (cand + opp + forward((old_a+old_b)/2)) / 2.
        let mut hand_avg = old_a.clone();
        hand_avg.add_scaled(&old_b, 1.0).unwrap();
        hand_avg.scale(0.5);
        for r in 0..4 {
            for c in 0..2 {
                let want = (forward_logits(&cand, &x).unwrap().get(r, c)
                    + forward_logits(&opp, &x).unwrap().get(r, c)
                    + forward_logits(&hand_avg, &x).unwrap().get(r, c))
                    / 2.0;
                assert!((got.get(r, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn argmax_is_invariant_to_common_logit_scale() {
        let mut ps = vec![params(&[3, 4, 3], 1), params(&[3, 4, 3], 2)];
        let x = inputs(6, 3, 5);
        let before = ensemble_logits(&[&ps[0], &ps[1]], &Representation::Identity, &x).unwrap();
        // Scaling every predictor's final linear layer scales all logits.
        for p in &mut ps {
            let last = p.layers.last_mut().unwrap();
            last.weights.scale(3.0);
            for b in &mut last.bias {
                *b *= 3.0;
            }
        }
        let after = ensemble_logits(&[&ps[0], &ps[1]], &Representation::Identity, &x).unwrap();
        for r in 0..6 {
            let argmax = |m: &Matrix| {
                let row = m.row(r);
                (0..row.len()).max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap()).unwrap()
            };
            assert_eq!(argmax(&before), argmax(&after));
        }
    }

    #[test]
    fn candidate_gradient_matches_finite_differences() {
        let cand = params(&[4, 3, 2], 10);
        let opp = params(&[4, 3, 2], 11);
        let old = params(&[4, 3, 2], 12);
        let mut buf = ParamBuffer::new(5).unwrap();
        buf.push(old).unwrap();
        let avg = buf.average().unwrap();
        let batch = Batch {
            inputs: inputs(3, 4, 20),
            labels: vec![0, 1, 1],
        };
        let view = EnsembleView {
            candidate: &cand,
            opponents: vec![(2, &opp)],
            buffer_averages: vec![(2, &avg)],
            divisor: 2.0,
        };
        let (_, analytic) = local_objective(&view, &Representation::Identity, &batch).unwrap();
        let numeric = gradcheck::numeric_grads(&cand, 1e-5, |probe| {
            let view = EnsembleView {
                candidate: probe,
                opponents: vec![(2, &opp)],
                buffer_averages: vec![(2, &avg)],
                divisor: 2.0,
            };
            local_objective(&view, &Representation::Identity, &batch)
                .unwrap()
                .0
        });
        let err = gradcheck::max_rel_err(&analytic, &numeric, 1e-3);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn opponents_receive_no_gradient_but_shape_candidate_gradient() {
        let cand = params(&[4, 3, 2], 1);
        let opp_a = params(&[4, 3, 2], 2);
        let opp_b = params(&[4, 3, 2], 3);
        let batch = Batch {
            inputs: inputs(3, 4, 6),
            labels: vec![0, 1, 0],
        };
        let grad_with = |opp: &MlpParams| {
            let view = EnsembleView {
                candidate: &cand,
                opponents: vec![(2, opp)],
                buffer_averages: vec![],
                divisor: 2.0,
            };
            local_objective(&view, &Representation::Identity, &batch)
                .unwrap()
                .1
        };
        let g_a = grad_with(&opp_a);
        let g_b = grad_with(&opp_b);
        // The only gradient produced is candidate-shaped...
        cand.check_same_shape(&g_a).unwrap();
        // ...and it depends on the opponents' (constant) parameters.
        assert!(g_a.max_abs_diff(&g_b) > 0.0);
    }

    fn test_client(n: usize, batch_size: usize) -> ClientState {
        let data = sem_data(n, 8);
        let predictor = params(&[12, 6, 2], 21);
        ClientState::new(
            1,
            predictor,
            AdamHyper::with_lr(1e-3),
            5,
            data,
            batch_size,
            77,
        )
        .unwrap()
    }

    #[test]
    fn single_step_update_counts_and_buffer_growth() {
        let mut state = test_client(64, 16);
        let opts = UpdateOpts {
            smooth: true,
            divisor_mode: DivisorMode::ClientCount,
            optimizer: OptimKind::Adam,
        };
        predictor_update(&mut state, &Representation::Identity, &opts, 1).unwrap();
        assert_eq!(state.optimizer.t, 1);
        assert_eq!(state.buffer.len(), 1);
        for _ in 0..6 {
            predictor_update(&mut state, &Representation::Identity, &opts, 1).unwrap();
        }
        assert_eq!(state.buffer.len(), 5);
        assert_eq!(state.optimizer.t, 7);
    }

    #[test]
    fn non_smooth_updates_leave_buffer_empty() {
        let mut state = test_client(64, 16);
        let opts = UpdateOpts {
            smooth: false,
            divisor_mode: DivisorMode::ClientCount,
            optimizer: OptimKind::Adam,
        };
        predictor_update(&mut state, &Representation::Identity, &opts, 1).unwrap();
        assert!(state.buffer.is_empty());
    }

    #[test]
    fn convex_head_loss_non_increasing_on_same_batch() {
        // Full-batch cursor on a linear predictor: one small SGD step must
        // not increase the loss on that same batch.
        let data = sem_data(32, 5);
        let predictor = params(&[12, 2], 3);
        let mut state = ClientState::new(
            1,
            predictor,
            AdamHyper::with_lr(0.01),
            5,
            Arc::clone(&data),
            32,
            9,
        )
        .unwrap();
        let opts = UpdateOpts {
            smooth: false,
            divisor_mode: DivisorMode::ClientCount,
            optimizer: OptimKind::Sgd,
        };
        let full = data.batch(&(0..32).collect::<Vec<_>>());
        let loss_of = |p: &MlpParams| {
            let view = EnsembleView {
                candidate: p,
                opponents: vec![],
                buffer_averages: vec![],
                divisor: 1.0,
            };
            local_objective(&view, &Representation::Identity, &full)
                .unwrap()
                .0
        };
        let before = loss_of(&state.predictor);
        predictor_update(&mut state, &Representation::Identity, &opts, 1).unwrap();
        let after = loss_of(&state.predictor);
        assert!(after <= before + 1e-12, "{after} > {before}");
    }

    #[test]
    fn exact_update_boundary_equals_single_step() {
        let mut a = test_client(64, 16);
        let mut b = a.clone();
        let opts = UpdateOpts {
            smooth: false,
            divisor_mode: DivisorMode::ClientCount,
            optimizer: OptimKind::Adam,
        };
        // c covering exactly one batch out of four.
        exact_predictor_update(&mut a, &Representation::Identity, &opts, 25.0).unwrap();
        predictor_update(&mut b, &Representation::Identity, &opts, 1).unwrap();
        assert_eq!(a.predictor, b.predictor);
    }

    #[test]
    fn exact_update_full_pass_step_count() {
        // 512 samples at batch 256: a full pass is exactly 2 steps.
        let data = sem_data(512, 6);
        let mut state = ClientState::new(
            1,
            params(&[12, 4, 2], 2),
            AdamHyper::with_lr(1e-3),
            5,
            data,
            256,
            3,
        )
        .unwrap();
        let opts = UpdateOpts {
            smooth: false,
            divisor_mode: DivisorMode::ClientCount,
            optimizer: OptimKind::Adam,
        };
        exact_predictor_update(&mut state, &Representation::Identity, &opts, 100.0).unwrap();
        assert_eq!(state.optimizer.t, 2);
        assert!(exact_predictor_update(&mut state, &Representation::Identity, &opts, 0.0).is_err());
    }

    #[test]
    fn term_count_divisor_counts_present_terms() {
        let data = sem_data(32, 5);
        let mut state = ClientState::new(
            1,
            params(&[12, 2], 3),
            AdamHyper::with_lr(1e-3),
            5,
            data,
            16,
            9,
        )
        .unwrap();
        state.opponent_predictors.insert(2, params(&[12, 2], 4));
        assert_eq!(state.view(DivisorMode::ClientCount).divisor, 2.0);
        assert_eq!(state.view(DivisorMode::TermCount).divisor, 2.0);
        state.opponent_buffer_avgs.insert(2, params(&[12, 2], 5));
        assert_eq!(state.view(DivisorMode::ClientCount).divisor, 2.0);
        assert_eq!(state.view(DivisorMode::TermCount).divisor, 3.0);
    }
}
