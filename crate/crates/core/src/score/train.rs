use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{dsm_loss_with, storm_loss_with, supervised_loss, DsmWeighting};
use super::net::{TinyPredictor, TinyScoreNet};
use super::optim::{ema_update, Adam, AdamState};
use crate::error::{Error, Result};
use crate::sde::OuveParams;
use crate::signal::{crop_frames, ComplexSpectrogram};

/// Clean target and noisy observation, both in the (warped) model domain.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub clean: ComplexSpectrogram,
    pub noisy: ComplexSpectrogram,
}

impl TrainingPair {
    pub fn new(clean: ComplexSpectrogram, noisy: ComplexSpectrogram) -> Result<Self> {
        clean.check_same_shape(&noisy, "training pair")?;
        Ok(Self { clean, noisy })
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<TrainingPair>,
    /// Held-out pairs for early stopping; the training pairs are used when
    /// empty.
    pub valid: Vec<TrainingPair>,
}

impl Dataset {
    pub fn new(train: Vec<TrainingPair>, valid: Vec<TrainingPair>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { train, valid })
    }

    fn validation(&self) -> &[TrainingPair] {
        if self.valid.is_empty() {
            &self.train
        } else {
            &self.valid
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch: usize,
    pub ema_decay: f64,
    /// Epochs without validation improvement before a phase ends.
    pub patience: usize,
    /// Weight of the supervised term in the joint objective.
    pub alpha: f64,
    /// Epoch limit of the joint phase.
    pub max_epochs: usize,
    /// Epoch limit of predictor pre-training.
    pub pretrain_epochs: usize,
    /// Frames per training excerpt.
    pub crop_frames: usize,
    pub weighting: DsmWeighting,
    /// Seed of the fixed validation excerpts and diffusion draws.
    pub valid_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch: 4,
            ema_decay: 0.999,
            patience: 10,
            alpha: 1.0,
            max_epochs: 500,
            pretrain_epochs: 500,
            crop_frames: 64,
            weighting: DsmWeighting::SigmaSquared,
            valid_seed: 0x5eed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch == 0 || self.crop_frames == 0 {
            return Err(Error::Parameter("batch and crop length must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Parameter(format!(
                "EMA decay must lie in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Parameter(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.patience == 0 {
            return Err(Error::Parameter("patience must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Predictor only, supervised loss.
    Pretrain,
    /// Score network (and predictor, if any) on the joint objective.
    Joint,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Joint => "joint",
        }
    }
}

/// Optimization state of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub params: Vec<f64>,
    pub ema: Vec<f64>,
    pub adam: AdamState,
    /// Moving average at the best validation loss of the current phase.
    pub best: Vec<f64>,
}

impl ModelState {
    pub fn new(params: &[f64]) -> Self {
        Self {
            params: params.to_vec(),
            ema: params.to_vec(),
            adam: AdamState::new(params.len()),
            best: params.to_vec(),
        }
    }

    fn restart_from_best(&mut self) {
        self.params.clone_from(&self.best);
        self.ema.clone_from(&self.best);
        self.adam = AdamState::new(self.params.len());
    }

    fn is_finite(&self) -> bool {
        self.params.iter().chain(&self.ema).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub phase: Phase,
    /// Epoch index within the phase, from 0.
    pub epoch: usize,
    /// Mean per-excerpt training loss.
    pub train_loss: f64,
    /// Mean per-excerpt validation loss under the moving-average weights.
    pub valid_loss: f64,
    pub improved: bool,
    /// Per-step mean batch losses.
    pub step_losses: Vec<f64>,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub score: ModelState,
    pub predictor: Option<ModelState>,
    pub phase: Phase,
    /// Epochs completed in the current phase.
    pub epoch: usize,
    pub steps: u64,
    pub best_valid: f64,
    pub stale_epochs: usize,
    pub finished: bool,
    pub history: Vec<EpochRecord>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(score: &TinyScoreNet, predictor: Option<&TinyPredictor>, seed: u64) -> Self {
        Self {
            score: ModelState::new(score.params()),
            predictor: predictor.map(|p| ModelState::new(p.params())),
            phase: if predictor.is_some() {
                Phase::Pretrain
            } else {
                Phase::Joint
            },
            epoch: 0,
            steps: 0,
            best_valid: f64::INFINITY,
            stale_epochs: 0,
            finished: false,
            history: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainOutcome {
    /// Both phases ended (early stop or epoch limit).
    Completed,
    /// The epoch budget of this call ran out; the state can be resumed.
    Paused,
    /// A non-finite loss or parameter appeared; the state was rolled back to
    /// the start of the failing epoch.
    Diverged {
        phase: Phase,
        epoch: usize,
        step: u64,
        what: String,
    },
}

/// Drives the two-phase schedule over a dataset.
pub struct Trainer<'a> {
    score: &'a mut TinyScoreNet,
    predictor: Option<&'a mut TinyPredictor>,
    data: &'a Dataset,
    cfg: TrainConfig,
    process: OuveParams,
}

enum StepError {
    Diverged(Error),
    Fatal(Error),
}

impl From<Error> for StepError {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical { .. } | Error::Divergence { .. } => Self::Diverged(e),
            other => Self::Fatal(other),
        }
    }
}

impl<'a> Trainer<'a> {
    pub fn new(
        score: &'a mut TinyScoreNet,
        predictor: Option<&'a mut TinyPredictor>,
        data: &'a Dataset,
        cfg: TrainConfig,
        process: OuveParams,
    ) -> Result<Self> {
        cfg.validate()?;
        process.validate()?;
        let want = if predictor.is_some() { 2 } else { 1 };
        if score.n_cond() != want {
            return Err(Error::Architecture {
                expected: format!("score network with {want} conditioning inputs"),
                found: format!("{} conditioning inputs", score.n_cond()),
            });
        }
        Ok(Self {
            score,
            predictor,
            data,
            cfg,
            process,
        })
    }

    /// Runs until both phases end or `epoch_budget` epochs have been spent,
    /// calling `on_epoch` after each epoch. On return the networks hold the
    /// best moving-average weights seen so far.
    pub fn run(
        &mut self,
        state: &mut TrainState,
        epoch_budget: Option<usize>,
        on_epoch: &mut dyn FnMut(&EpochRecord),
    ) -> Result<TrainOutcome> {
        if state.predictor.is_some() != self.predictor.is_some() {
            return Err(Error::State("training state and models disagree on the predictor".into()));
        }
        let mut spent = 0;
        let outcome = loop {
            if state.finished {
                break TrainOutcome::Completed;
            }
            if epoch_budget.is_some_and(|b| spent >= b) {
                break TrainOutcome::Paused;
            }
            let snapshot = state.clone();
            match self.epoch(state) {
                Ok(record) => {
                    on_epoch(&record);
                    state.history.push(record);
                    self.advance(state);
                }
                Err(StepError::Diverged(e)) => {
                    let (phase, epoch, step) = (state.phase, state.epoch, state.steps);
                    *state = snapshot;
                    break TrainOutcome::Diverged {
                        phase,
                        epoch,
                        step,
                        what: e.to_string(),
                    };
                }
                Err(StepError::Fatal(e)) => {
                    *state = snapshot;
                    return Err(e);
                }
            }
            spent += 1;
        };
        self.load_best(state)?;
        Ok(outcome)
    }

    fn load_best(&mut self, state: &TrainState) -> Result<()> {
        self.score.set_params(&state.score.best)?;
        if let (Some(net), Some(ms)) = (self.predictor.as_deref_mut(), &state.predictor) {
            net.set_params(&ms.best)?;
        }
        Ok(())
    }

    fn advance(&self, state: &mut TrainState) {
        state.epoch += 1;
        let limit = match state.phase {
            Phase::Pretrain => self.cfg.pretrain_epochs,
            Phase::Joint => self.cfg.max_epochs,
        };
        if state.stale_epochs < self.cfg.patience && state.epoch < limit {
            return;
        }
        match state.phase {
            Phase::Pretrain => {
                if let Some(ms) = state.predictor.as_mut() {
                    ms.restart_from_best();
                }
                state.phase = Phase::Joint;
                state.epoch = 0;
                state.best_valid = f64::INFINITY;
                state.stale_epochs = 0;
                if self.cfg.max_epochs == 0 {
                    state.finished = true;
                }
            }
            Phase::Joint => state.finished = true,
        }
    }

    fn excerpt<R: Rng + ?Sized>(&self, pair: &TrainingPair, rng: &mut R) -> Result<TrainingPair> {
        let frames = self.cfg.crop_frames;
        let n = pair.clean.n_frames();
        let offset = if n > frames { rng.gen_range(0..=n - frames) } else { 0 };
        Ok(TrainingPair {
            clean: crop_frames(&pair.clean, offset, frames)?.spec,
            noisy: crop_frames(&pair.noisy, offset, frames)?.spec,
        })
    }

    // Loss and gradients (score, predictor) on one excerpt under `score`
    // and `predictor`.
    fn sample_loss<R: Rng + ?Sized>(
        &self,
        phase: Phase,
        score: &TinyScoreNet,
        predictor: Option<&TinyPredictor>,
        pair: &TrainingPair,
        rng: &mut R,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let (x0, y) = (&pair.clean, &pair.noisy);
        match (phase, predictor) {
            (Phase::Pretrain, Some(pred)) => {
                let out = supervised_loss(pred, x0, y)?;
                Ok((out.loss, Vec::new(), out.grad))
            }
            (Phase::Pretrain, None) => Err(Error::State("pre-training needs a predictor".into())),
            (Phase::Joint, Some(pred)) => {
                let out = storm_loss_with(
                    score,
                    pred,
                    x0,
                    y,
                    &self.process,
                    self.cfg.alpha,
                    self.cfg.weighting,
                    rng,
                )?;
                Ok((out.loss, out.score_grad, out.predictor_grad))
            }
            (Phase::Joint, None) => {
                let out = dsm_loss_with(score, x0, y, &self.process, self.cfg.weighting, rng)?;
                Ok((out.loss, out.grad, Vec::new()))
            }
        }
    }

    fn epoch(&mut self, state: &mut TrainState) -> std::result::Result<EpochRecord, StepError> {
        let phase = state.phase;
        let adam = Adam::new(self.cfg.learning_rate);
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut state.rng);
        let mut step_losses = Vec::new();
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch) {
            self.score.set_params(&state.score.params)?;
            if let (Some(net), Some(ms)) = (self.predictor.as_deref_mut(), &state.predictor) {
                net.set_params(&ms.params)?;
            }
            let mut g_score = vec![0.0; state.score.params.len()];
            let mut g_pred = vec![0.0; state.predictor.as_ref().map_or(0, |m| m.params.len())];
            let mut batch_loss = 0.0;
            for &i in batch {
                let pair = self.excerpt(&self.data.train[i], &mut state.rng)?;
                let (loss, gs, gp) = self.sample_loss(
                    phase,
                    self.score,
                    self.predictor.as_deref(),
                    &pair,
                    &mut state.rng,
                )?;
                batch_loss += loss;
                g_score.iter_mut().zip(&gs).for_each(|(a, b)| *a += b);
                g_pred.iter_mut().zip(&gp).for_each(|(a, b)| *a += b);
            }
            let scale = 1.0 / batch.len() as f64;
            state.steps += 1;
            let step = state.steps;
            let diverged = |what: &str| {
                StepError::Diverged(Error::Divergence {
                    step,
                    what: what.into(),
                })
            };
            if !batch_loss.is_finite() {
                return Err(diverged("non-finite batch loss"));
            }
            let update = |ms: &mut ModelState, g: &mut [f64]| -> Result<()> {
                g.iter_mut().for_each(|v| *v *= scale);
                adam.step(&mut ms.params, g, &mut ms.adam)?;
                ema_update(&mut ms.ema, &ms.params, self.cfg.ema_decay)
            };
            if phase == Phase::Joint {
                update(&mut state.score, &mut g_score)?;
            }
            if let Some(ms) = state.predictor.as_mut() {
                update(ms, &mut g_pred)?;
            }
            if !state.score.is_finite() || state.predictor.as_ref().is_some_and(|m| !m.is_finite()) {
                return Err(diverged("non-finite parameters after update"));
            }
            step_losses.push(batch_loss * scale);
            total += batch_loss;
        }
        let train_loss = total / self.data.train.len() as f64;
        let valid_loss = self.validate_ema(state)?;
        let improved = valid_loss < state.best_valid;
        if improved {
            state.best_valid = valid_loss;
            state.stale_epochs = 0;
            if phase == Phase::Joint {
                state.score.best.clone_from(&state.score.ema);
            }
            if let Some(ms) = state.predictor.as_mut() {
                ms.best.clone_from(&ms.ema);
            }
        } else {
            state.stale_epochs += 1;
        }
        Ok(EpochRecord {
            phase,
            epoch: state.epoch,
            train_loss,
            valid_loss,
            improved,
            step_losses,
        })
    }

    fn validate_ema(&mut self, state: &TrainState) -> std::result::Result<f64, StepError> {
        self.score.set_params(&state.score.ema)?;
        if let (Some(net), Some(ms)) = (self.predictor.as_deref_mut(), &state.predictor) {
            net.set_params(&ms.ema)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.valid_seed);
        let pairs = self.data.validation();
        let mut total = 0.0;
        for pair in pairs {
            let ex = self.excerpt(pair, &mut rng)?;
            let (loss, _, _) =
                self.sample_loss(state.phase, self.score, self.predictor.as_deref(), &ex, &mut rng)?;
            total += loss;
        }
        let mean = total / pairs.len() as f64;
        if !mean.is_finite() {
            return Err(StepError::Diverged(Error::Divergence {
                step: state.steps,
                what: "non-finite validation loss".into(),
            }));
        }
        Ok(mean)
    }
}

/// Full two-phase training from scratch (a single joint denoising phase
/// without a predictor). The networks end up holding the best
/// moving-average weights.
pub fn train(
    score: &mut TinyScoreNet,
    predictor: Option<&mut TinyPredictor>,
    data: &Dataset,
    cfg: &TrainConfig,
    p: &OuveParams,
    seed: u64,
) -> Result<(TrainState, TrainOutcome)> {
    let mut state = TrainState::new(score, predictor.as_deref(), seed);
    let mut trainer = Trainer::new(score, predictor, data, cfg.clone(), *p)?;
    let outcome = trainer.run(&mut state, None, &mut |_| {})?;
    Ok((state, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::NetConfig;
    use crate::signal::StftConfig;
    use num_complex::Complex64;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            hidden: 4,
            dilations: vec![1, 2, 4],
            embed_dim: 4,
        }
    }

    fn pair(seed: u64, n_freq: usize, n_frames: usize) -> TrainingPair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean: Vec<Complex64> = (0..n_freq * n_frames)
            .map(|_| Complex64::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)))
            .collect();
        let noisy = clean
            .iter()
            .map(|c| c + Complex64::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)))
            .collect();
        let mk = |d| ComplexSpectrogram::from_bins(d, n_freq, n_frames, StftConfig::default(), 16_000).unwrap();
        TrainingPair::new(mk(clean), mk(noisy)).unwrap()
    }

    fn nets(seed: u64) -> (TinyScoreNet, TinyPredictor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = TinyScoreNet::new(tiny_cfg(), 2, 1.5, &mut rng).unwrap();
        let p = TinyPredictor::new(tiny_cfg(), &mut rng).unwrap();
        (s, p)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            learning_rate: 1e-3,
            batch: 2,
            patience: 3,
            max_epochs: 3,
            pretrain_epochs: 2,
            crop_frames: 6,
            ema_decay: 0.9,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(Dataset::new(Vec::new(), Vec::new()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn runs_both_phases_deterministically() {
        let data = Dataset::new((0..4).map(|i| pair(i, 8, 10)).collect(), vec![pair(9, 8, 10)]).unwrap();
        let run = || {
            let (mut s, mut p) = nets(1);
            let (state, outcome) =
                train(&mut s, Some(&mut p), &data, &quick(), &OuveParams::storm(), 7).unwrap();
            (state, outcome, s.params().to_vec(), p.params().to_vec())
        };
        let a = run();
        let b = run();
        assert_eq!(a.1, TrainOutcome::Completed);
        assert_eq!(a.0, b.0);
        assert_eq!(a.2, b.2);
        assert_eq!(a.3, b.3);
        let phases: Vec<Phase> = a.0.history.iter().map(|r| r.phase).collect();
        assert_eq!(phases, vec![Phase::Pretrain, Phase::Pretrain, Phase::Joint, Phase::Joint, Phase::Joint]);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = Dataset::new((0..3).map(|i| pair(i, 8, 10)).collect(), Vec::new()).unwrap();
        let cfg = quick();
        let p = OuveParams::storm();
        let (mut s1, mut p1) = nets(2);
        let (full, _) = train(&mut s1, Some(&mut p1), &data, &cfg, &p, 3).unwrap();

        let (mut s2, mut p2) = nets(2);
        let mut state = TrainState::new(&s2, Some(&p2), 3);
        let mut trainer = Trainer::new(&mut s2, Some(&mut p2), &data, cfg.clone(), p).unwrap();
        assert_eq!(trainer.run(&mut state, Some(3), &mut |_| {}).unwrap(), TrainOutcome::Paused);
        let mut resumed = state.clone();
        let (mut s3, mut p3) = nets(99);
        let mut trainer = Trainer::new(&mut s3, Some(&mut p3), &data, cfg, p).unwrap();
        assert_eq!(trainer.run(&mut resumed, None, &mut |_| {}).unwrap(), TrainOutcome::Completed);
        assert_eq!(resumed, full);
        assert_eq!(s3.params(), s1.params());
    }

    #[test]
    fn zero_decay_tracks_parameters() {
        let data = Dataset::new(vec![pair(0, 6, 6)], Vec::new()).unwrap();
        let (mut s, mut p) = nets(3);
        let cfg = TrainConfig {
            ema_decay: 0.0,
            pretrain_epochs: 2,
            max_epochs: 1,
            ..quick()
        };
        let mut state = TrainState::new(&s, Some(&p), 0);
        let mut trainer = Trainer::new(&mut s, Some(&mut p), &data, cfg, OuveParams::storm()).unwrap();
        trainer.run(&mut state, Some(1), &mut |_| {}).unwrap();
        let ms = state.predictor.as_ref().unwrap();
        assert_eq!(ms.ema, ms.params);
    }

    #[test]
    fn generative_training_without_predictor() {
        let data = Dataset::new(vec![pair(0, 6, 6), pair(1, 6, 6)], Vec::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = TinyScoreNet::new(tiny_cfg(), 1, 2.5, &mut rng).unwrap();
        let (state, outcome) =
            train(&mut s, None, &data, &quick(), &OuveParams::generative_baseline(), 1).unwrap();
        assert_eq!(outcome, TrainOutcome::Completed);
        assert!(state.history.iter().all(|r| r.phase == Phase::Joint));
        let mut wrong = TinyScoreNet::new(tiny_cfg(), 2, 2.5, &mut rng).unwrap();
        assert!(train(&mut wrong, None, &data, &quick(), &OuveParams::generative_baseline(), 1).is_err());
    }

    #[test]
    fn divergence_rolls_back() {
        let data = Dataset::new(vec![pair(0, 6, 6)], Vec::new()).unwrap();
        let (mut s, mut p) = nets(5);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            ..quick()
        };
        let mut state = TrainState::new(&s, Some(&p), 0);
        let before = state.clone();
        let mut trainer = Trainer::new(&mut s, Some(&mut p), &data, cfg, OuveParams::storm()).unwrap();
        let outcome = trainer.run(&mut state, None, &mut |_| {}).unwrap();
        assert!(matches!(outcome, TrainOutcome::Diverged { .. }), "{outcome:?}");
        assert!(state.predictor.as_ref().unwrap().is_finite());
        assert!(state.history.len() >= before.history.len());
    }
}
