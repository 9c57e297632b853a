//! Training loop: one video per step, AdamW, memory-bank refresh between
//! epochs, plateau lr halving.

use dsgg_autodiff::{seed, AdamW, AdamWConfig, Graph};
use rand::seq::SliceRandom;

use crate::config::TrainConfig;
use crate::gmm;
use crate::memory::{mdu_schedule, MduMode, MemoryBank};
use crate::model::{compute_memory_bank, Model, Pass, VideoBatch};
use crate::{Error, Result};

/// Column names of the training log.
pub const LOG_HEADER: &str = "epoch\tlr\tloss\tloss_pred\tloss_obj\tloss_intra\tu_al\tu_ep";

/// Per-epoch means over the training steps of that epoch. Uncertainties are
/// means over every (pair, class) entry and NaN without the mixture head.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_pred: f64,
    pub loss_obj: f64,
    pub loss_intra: f64,
    pub u_al: f64,
    pub u_ep: f64,
}

impl EpochLog {
    /// Floats use the shortest representation that parses back exactly.
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.epoch, self.lr, self.loss, self.loss_pred, self.loss_obj, self.loss_intra, self.u_al, self.u_ep
        )
    }

    pub fn from_tsv(line: &str) -> Result<Self> {
        let bad = || Error::Contract(format!("malformed log row `{}`", line));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 8 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(EpochLog {
            epoch: f[0].parse().map_err(|_| bad())?,
            lr: num(1)?,
            loss: num(2)?,
            loss_pred: num(3)?,
            loss_obj: num(4)?,
            loss_intra: num(5)?,
            u_al: num(6)?,
            u_ep: num(7)?,
        })
    }
}

pub fn format_log(logs: &[EpochLog]) -> String {
    let mut s = format!("{}\n", LOG_HEADER);
    for l in logs {
        s.push_str(&l.to_tsv());
        s.push('\n');
    }
    s
}

pub fn parse_log(text: &str) -> Result<Vec<EpochLog>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Contract("training log header missing".into()));
    }
    lines.filter(|l| !l.is_empty()).map(EpochLog::from_tsv).collect()
}

/// Halves the lr after `patience` consecutive epochs without an improvement
/// of more than `min_delta` over the best loss so far.
#[derive(Clone, Debug)]
pub struct Plateau {
    best: f64,
    stale: usize,
    patience: usize,
    min_delta: f64,
}

impl Plateau {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self { best: f64::INFINITY, stale: 0, patience, min_delta }
    }

    /// Records an epoch loss; true when the lr should be halved now.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta {
            self.best = loss;
            self.stale = 0;
            return false;
        }
        self.stale += 1;
        if self.patience > 0 && self.stale >= self.patience {
            self.stale = 0;
            return true;
        }
        false
    }
}

/// What the per-epoch callback sees.
pub struct EpochEvent<'a> {
    pub log: &'a EpochLog,
    pub model: &'a Model,
    /// Bank built from the weights after this epoch, for the next one.
    pub next_bank: Option<&'a MemoryBank>,
}

#[derive(Default)]
struct Sums {
    steps: usize,
    pred_steps: usize,
    loss: f64,
    pred: f64,
    obj: f64,
    intra: f64,
    u_al: f64,
    u_ep: f64,
    u_n: usize,
}

/// Tags numeric failures from the autodiff layer with the training step.
fn at_step(e: Error, epoch: usize, step: u64, video: u64) -> Error {
    match e {
        Error::Autodiff(dsgg_autodiff::Error::Numeric { op, detail }) => {
            log::error!("numeric failure in {} at epoch {} step {} (video {})", op, epoch, step, video);
            Error::Numeric { epoch, step, detail: format!("{}: {} on video {}", op, detail, video) }
        }
        other => other,
    }
}

/// Trains `model` in place and returns the per-epoch log.
///
/// Epoch `α ≥ 2` runs with the memory bank computed from the weights at the
/// end of epoch `α − 1`. A non-finite loss aborts with [`Error::Numeric`].
pub fn train(
    model: &mut Model,
    batches: &[VideoBatch],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochEvent) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() });
    let mut plateau = Plateau::new(cfg.plateau_patience, cfg.plateau_min_delta);
    let mut lr = cfg.lr;
    let mut bank: Option<MemoryBank> = None;
    let mut logs = Vec::new();
    let mut step = 0u64;
    let gcfg = model.config.gmm();
    let usable: Vec<usize> = (0..batches.len()).filter(|&i| !batches[i].objects.is_empty()).collect();

    for epoch in 1..=cfg.epochs {
        let active = match mdu_schedule(epoch, false) {
            MduMode::Diffuse { source_epoch } if model.config.toggles.mdu => {
                let b = bank.as_ref().ok_or_else(|| Error::Contract("memory bank missing".into()))?;
                debug_assert_eq!(b.source_epoch, source_epoch);
                Some(b)
            }
            _ => None,
        };
        let mut order = usable.clone();
        order.shuffle(&mut seed::keyed_stream(cfg.seed, seed::streams::SHUFFLE, epoch as u64));
        let mut s = Sums::default();
        for &vi in &order {
            let batch = &batches[vi];
            let eps =
                model.config.toggles.gmm.then(|| {
                    gcfg.sample_eps(batch.pairs(), &mut seed::keyed_stream(cfg.seed, seed::streams::NOISE, step))
                });
            let mut g = Graph::new();
            let b = model.params.bind(&mut g);
            let f = model
                .forward(&mut g, &b, batch, Pass::Train { eps: eps.as_ref(), bank: active })
                .map_err(|e| at_step(e, epoch, step, batch.video_id))?;
            let losses = f.losses.expect("training pass builds losses");
            let total = g.value(losses.total).item();
            if !total.is_finite() {
                log::error!("non-finite loss {} at epoch {} step {} (video {})", total, epoch, step, batch.video_id);
                return Err(Error::Numeric {
                    epoch,
                    step,
                    detail: format!("loss {} on video {}", total, batch.video_id),
                });
            }
            s.steps += 1;
            s.loss += total;
            s.obj += g.value(losses.object).item();
            if let Some(l) = losses.intra {
                s.intra += g.value(l).item();
            }
            if let Some(l) = losses.predicate {
                s.pred_steps += 1;
                s.pred += g.value(l).item();
            }
            if let Some(v) = f.gmm {
                let k = gcfg.components;
                let (pi, sigma, mu) = (g.value(v.pi).data(), g.value(v.sigma).data(), g.value(v.mu).data());
                let al = gmm::aleatoric(pi, sigma, k);
                let ep = gmm::epistemic(pi, mu, k);
                s.u_n += al.len();
                s.u_al += al.iter().sum::<f64>();
                s.u_ep += ep.iter().sum::<f64>();
            }
            let mut grads = g.backward(losses.total).map_err(|e| at_step(e.into(), epoch, step, batch.video_id))?;
            let grads = b.gradients(&mut grads);
            opt.step(&mut model.params, &grads).map_err(|e| at_step(e.into(), epoch, step, batch.video_id))?;
            step += 1;
        }
        let mean = |x: f64, n: usize| if n == 0 { f64::NAN } else { x / n as f64 };
        let log = EpochLog {
            epoch,
            lr,
            loss: mean(s.loss, s.steps),
            loss_pred: mean(s.pred, s.pred_steps),
            loss_obj: mean(s.obj, s.steps),
            loss_intra: mean(s.intra, s.steps),
            u_al: mean(s.u_al, s.u_n),
            u_ep: mean(s.u_ep, s.u_n),
        };
        log::info!(
            "epoch {} lr {:.3e} loss {:.5} (pred {:.5} obj {:.5} intra {:.5}) u_al {:.5}",
            epoch,
            lr,
            log.loss,
            log.loss_pred,
            log.loss_obj,
            log.loss_intra,
            log.u_al
        );
        bank = if model.config.toggles.mdu && epoch < cfg.epochs {
            Some(compute_memory_bank(model, batches, epoch + 1)?)
        } else {
            None
        };
        on_epoch(&EpochEvent { log: &log, model, next_bank: bank.as_ref() })?;
        if plateau.observe(log.loss) {
            lr *= 0.5;
            opt.set_lr(lr);
            log::info!("loss plateaued, lr now {:e}", lr);
        }
        logs.push(log);
    }
    Ok(logs)
}
