//! Teacher-forced SGD training and fine-tuning.

use std::io::Write;

use hseq_numcore::{clip_store_grads, lr_at_step, sgd_step, Graph, SgdSchedule};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decoder::IdPair;
use crate::error::{HseqError, Result};
use crate::network::{NetworkSpec, Seq2Seq, INIT_SCALE};

/// Source and target ids of one training example, without SOS or EOS.
pub type Example = (Vec<usize>, Vec<usize>);

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub spec: NetworkSpec,
    pub schedule: SgdSchedule,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    pub init_scale: f64,
}

impl TrainingRun {
    pub fn new(spec: NetworkSpec, max_steps: u64, seed: u64) -> Self {
        Self {
            spec,
            schedule: SgdSchedule::default(),
            batch_size: 256,
            max_steps,
            seed,
            init_scale: INIT_SCALE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.schedule.validate().map_err(HseqError::Config)?;
        if self.batch_size == 0 {
            return Err(HseqError::Config("batch_size must be at least 1".into()));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(HseqError::Config("init_scale must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Trained model with the mean loss of every step.
#[derive(Clone, Debug)]
pub struct TrainingOutcome {
    pub model: Seq2Seq<f32>,
    pub losses: Vec<f64>,
}

impl TrainingOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }
}

/// Trains a freshly initialized network.
pub fn train(run: &TrainingRun, dataset: &[Example], metrics: Option<&mut dyn Write>) -> Result<TrainingOutcome> {
    run.validate()?;
    let model = Seq2Seq::with_init_scale(run.spec.clone(), run.seed, run.init_scale)?;
    optimize(model, run, dataset, metrics)
}

/// Continues training from `base`, whose spec must equal the run's spec.
pub fn fine_tune(
    base: &Seq2Seq<f32>,
    run: &TrainingRun,
    dataset: &[Example],
    metrics: Option<&mut dyn Write>,
) -> Result<TrainingOutcome> {
    run.validate()?;
    if base.spec() != &run.spec {
        return Err(HseqError::Incompatible(spec_diff(base.spec(), &run.spec)));
    }
    let model = Seq2Seq::from_store(run.spec.clone(), base.params().clone())?;
    optimize(model, run, dataset, metrics)
}

fn spec_diff(base: &NetworkSpec, run: &NetworkSpec) -> String {
    let mut diffs = Vec::new();
    if base.role != run.role {
        diffs.push(format!("role {:?} vs {:?}", base.role, run.role));
    }
    if base.encoder != run.encoder {
        diffs.push(format!("encoder {:?} vs {:?}", base.encoder, run.encoder));
    }
    if base.decoder != run.decoder {
        diffs.push(format!("decoder {:?} vs {:?}", base.decoder, run.decoder));
    }
    if base.source_vocab != run.source_vocab {
        diffs.push(format!(
            "source vocabulary ({} vs {} entries)",
            base.source_vocab.len(),
            run.source_vocab.len()
        ));
    }
    if base.target_vocab != run.target_vocab {
        diffs.push(format!(
            "target vocabulary ({} vs {} entries)",
            base.target_vocab.len(),
            run.target_vocab.len()
        ));
    }
    format!("base model differs from run: {}", diffs.join("; "))
}

/// Seeded epoch-wise shuffler yielding index batches.
struct BatchSampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ba7c),
            order: (0..n).collect(),
            cursor: n,
            batch_size,
        }
    }

    fn next_batch(&mut self) -> &[usize] {
        if self.cursor >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.batch_size).min(self.order.len());
        let batch = &self.order[self.cursor..end];
        self.cursor = end;
        batch
    }
}

fn optimize(
    mut model: Seq2Seq<f32>,
    run: &TrainingRun,
    dataset: &[Example],
    mut metrics: Option<&mut dyn Write>,
) -> Result<TrainingOutcome> {
    if dataset.is_empty() && run.max_steps > 0 {
        return Err(HseqError::Empty("training dataset".into()));
    }
    let mut sampler = BatchSampler::new(dataset.len(), run.batch_size, run.seed);
    let mut losses = Vec::with_capacity(run.max_steps as usize);
    for step in 0..run.max_steps {
        let pairs: Vec<IdPair> = sampler
            .next_batch()
            .iter()
            .map(|&i| (&dataset[i].0[..], &dataset[i].1[..]))
            .collect();
        let mut g = Graph::new();
        let (sum, count) = model.batch_loss_on(&mut g, model.params(), &pairs)?;
        // Summed over tokens, averaged over sentences.
        let loss = g.scale(sum, 1.0 / pairs.len() as f32);
        let value = f64::from(g.value(sum).data()[0]) / count as f64;
        if !value.is_finite() {
            return Err(HseqError::Divergence { step, loss: value });
        }
        let grads = g.backward(loss)?;
        drop(pairs);
        let store = model.params_mut();
        grads.accumulate_into(store);
        clip_store_grads(store, run.schedule.clip_norm as f32);
        let lr = lr_at_step(&run.schedule, step);
        sgd_step(store, lr as f32);
        if let Some(w) = metrics.as_deref_mut() {
            writeln!(w, "{step}\t{lr}\t{value}")?;
        }
        losses.push(value);
    }
    Ok(TrainingOutcome { model, losses })
}
