use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::AmpModel;
use super::optim::{adam_step, AdamState, TrainConfig};
use super::tensor::Mat;
use crate::dataset::PairedExample;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::signal::Frames;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.train_loss, r.val_loss);
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Patience counter over validation losses; lower is better, ties do not improve.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_loss: f64,
    pub best_epoch: usize,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best_loss: f64::INFINITY, best_epoch: 0, bad_epochs: 0 }
    }

    /// Records an epoch's validation loss; returns true when it is a new best.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> bool {
        if val_loss < self.best_loss {
            self.best_loss = val_loss;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.bad_epochs >= self.patience
    }
}

fn to_mat<T: Real>(f: &Frames<T>) -> Mat<T> {
    Mat { rows: f.n_frames, cols: f.n_bins, data: f.data.clone() }
}

/// Mean loss over a set of examples.
pub fn mean_loss<T: Real>(model: &AmpModel<T>, examples: &[PairedExample<T>]) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += model.loss(&to_mat(&ex.input_logmag), &to_mat(&ex.target_logmag), &ex.audiogram)?;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Adam training with seeded shuffling and early stopping on validation loss.
/// On return the model holds the best-validation weights.
pub fn train<T: Real>(
    model: &mut AmpModel<T>,
    train_set: &[PairedExample<T>],
    val_set: &[PairedExample<T>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    let pairs: Vec<(Mat<T>, Mat<T>)> = train_set.iter().map(|e| (to_mat(&e.input_logmag), to_mat(&e.target_logmag))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.params.values());
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience);
    let mut best = model.params.clone();
    let mut records = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Mat<T>>> = None;
            for &i in batch {
                let (x, y) = &pairs[i];
                let (loss, grads) = model.loss_and_grads(x, y, &train_set[i].audiogram)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                total += loss;
                match &mut acc {
                    Some(a) => a.iter_mut().zip(&grads).for_each(|(a, g)| a.add_assign(g)),
                    None => acc = Some(grads),
                }
            }
            let mut grads = acc.expect("nonempty batch");
            if batch.len() > 1 {
                let k = T::lit(1.0 / batch.len() as f64);
                grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= k));
            }
            adam_step(model.params.values_mut(), &grads, &mut state, cfg)?;
        }
        let val_loss = mean_loss(model, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let rec = EpochRecord { epoch, train_loss: total / train_set.len() as f64, val_loss };
        log::info!("epoch {epoch}: train {:.5} val {:.5}", rec.train_loss, rec.val_loss);
        on_epoch(&rec);
        records.push(rec);
        if stopper.observe(epoch, val_loss) {
            best = model.params.clone();
        }
        if stopper.should_stop() {
            stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.params = best;
    Ok(History { records, best_epoch: stopper.best_epoch, stopped_early })
}
