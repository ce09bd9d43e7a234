//! Training: the supervised and partially supervised objectives, the Adam
//! optimizer, and the epoch loop with dev-set model selection.

use crate::baselines::{bio_logits, ctc_frame_log_probs, ctc_log_marginal, segments_to_bio};
use crate::data_eval::{evaluate, Corpus, Instance, Prediction};
use crate::diffgraph::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::model::{gold_label_ids, gold_segments, AnyModel, BioModel, CtcModel, ModelKind, SrnnModel};
use crate::params::ModelParams;
use crate::rng::named_stream;
use crate::segcrf::{log_constrained, log_partition, log_path_score};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Supervised: boundaries and labels observed.
    Full,
    /// Partially supervised: labels observed, boundaries marginalized.
    Partial,
    Bio,
    Ctc,
}

impl TrainMode {
    pub fn model_kind(self) -> ModelKind {
        match self {
            TrainMode::Full | TrainMode::Partial => ModelKind::Srnn,
            TrainMode::Bio => ModelKind::Bio,
            TrainMode::Ctc => ModelKind::Ctc,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    /// L2 strength λ, added to gradients as λθ.
    pub l2: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub workers: usize,
}

impl TrainConfig {
    pub fn new(mode: TrainMode) -> Self {
        TrainConfig {
            mode,
            learning_rate: 1e-3,
            l2: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 50,
            patience: 10,
            seed: 1,
            workers: 1,
        }
    }

    fn check(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Validation("beta coefficients must lie in [0, 1)".into()));
        }
        if self.patience == 0 {
            return Err(Error::Validation("patience must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(Error::Validation("workers must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// log Z(x) − log Z(x, y, z); non-negative since the path is one summand of
/// the partition.
pub fn supervised_loss(model: &SrnnModel, tape: &mut Tape, instance: &Instance) -> Result<NodeId> {
    let gold = gold_segments(&model.labels, instance)?;
    let pots = model.potentials(tape, instance)?;
    let z = log_partition(tape, &pots)?;
    let path = log_path_score(tape, &pots, &gold)?;
    tape.sub(z, path)
}

/// log Z(x) − log Z(x, y); durations are never consulted, only the label
/// sequence.
pub fn partial_loss(model: &SrnnModel, tape: &mut Tape, instance: &Instance) -> Result<NodeId> {
    let reference = gold_label_ids(&model.labels, instance)?;
    let pots = model.potentials(tape, instance)?;
    let constrained = log_constrained(tape, &pots, &reference)?;
    if tape.scalar_value(constrained) == f64::NEG_INFINITY {
        return Err(Error::Validation(format!(
            "no segmentation of {} tokens is compatible with {} labels under max segment length {}",
            instance.tokens.len(),
            reference.len(),
            model.max_seg_len
        )));
    }
    let z = log_partition(tape, &pots)?;
    tape.sub(z, constrained)
}

pub fn bio_tagging_loss(model: &BioModel, tape: &mut Tape, instance: &Instance) -> Result<NodeId> {
    let gold = gold_segments(&model.labels, instance)?;
    let tags = segments_to_bio(&gold);
    let ctx = model.front.encode(tape, &model.params, instance)?;
    let logits = bio_logits(tape, &model.params, &model.head, &ctx)?;
    crate::baselines::bio_loss(tape, &logits, &tags)
}

/// Negative CTC marginal log likelihood of the reference labels.
pub fn ctc_loss(model: &CtcModel, tape: &mut Tape, instance: &Instance) -> Result<NodeId> {
    let reference = gold_label_ids(&model.labels, instance)?;
    let ctx = model.front.encode(tape, &model.params, instance)?;
    let probs = ctc_frame_log_probs(tape, &model.params, &model.head, &ctx)?;
    let marginal = ctc_log_marginal(tape, &probs, &reference)?;
    if tape.scalar_value(marginal) == f64::NEG_INFINITY {
        return Err(Error::Validation(format!(
            "reference of {} labels cannot align to {} frames",
            reference.len(),
            instance.tokens.len()
        )));
    }
    Ok(tape.scale(marginal, -1.0))
}

/// Dispatch an instance loss for a model/mode pair.
pub fn instance_loss(
    model: &AnyModel,
    tape: &mut Tape,
    instance: &Instance,
    mode: TrainMode,
) -> Result<NodeId> {
    match (model, mode) {
        (AnyModel::Srnn(m), TrainMode::Full) => supervised_loss(m, tape, instance),
        (AnyModel::Srnn(m), TrainMode::Partial) => partial_loss(m, tape, instance),
        (AnyModel::Bio(m), TrainMode::Bio) => bio_tagging_loss(m, tape, instance),
        (AnyModel::Ctc(m), TrainMode::Ctc) => ctc_loss(m, tape, instance),
        _ => Err(Error::Validation(format!(
            "training mode {mode:?} does not match the model kind {:?}",
            model.kind()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Gradients contained non-finite values; parameters untouched.
    SkippedNonFinite,
}

/// One Adam update with bias correction over every registered tensor. The
/// L2 term λθ joins the raw gradient before the moment updates.
pub fn adam_step(params: &mut ModelParams, cfg: &TrainConfig) -> StepOutcome {
    if !params.grads_are_finite() {
        return StepOutcome::SkippedNonFinite;
    }
    params.step += 1;
    let t = params.step as i32;
    let bias1 = 1.0 - cfg.beta1.powi(t);
    let bias2 = 1.0 - cfg.beta2.powi(t);
    for entry in params.entries_mut() {
        let data = entry.value.data_mut();
        for (((theta, grad), m), v) in
            data.iter_mut().zip(&entry.grad).zip(&mut entry.m).zip(&mut entry.v)
        {
            let g = grad + cfg.l2 * *theta;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    StepOutcome::Applied
}

// ---------------------------------------------------------------------------
// The training loop
// ---------------------------------------------------------------------------

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct GradCheckReport {
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: String,
    /// Coordinates whose probes evaluated non-finite, or that exceeded the
    /// tolerance.
    pub failures: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.failures.is_empty() && self.max_rel_error < tolerance
    }
}

/// Compare reverse-mode gradients of an instance loss against central finite
/// differences on sampled coordinates. At least one coordinate is drawn from
/// every parameter tensor. `corrupt_backward` feeds the tape's
/// negative-control hook.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &mut AnyModel,
    instance: &Instance,
    mode: TrainMode,
    min_coordinates: usize,
    step: f64,
    tolerance: f64,
    corrupt_backward: Option<f64>,
    seed: u64,
) -> Result<GradCheckReport> {
    // Analytic pass.
    {
        let mut tape = Tape::new();
        if let Some(factor) = corrupt_backward {
            tape.corrupt_tanh_backward(factor);
        }
        let loss = instance_loss(model, &mut tape, instance, mode)?;
        tape.backward(loss)?;
        let params = model.params_mut();
        params.zero_grads();
        params.accumulate_grads(&tape);
    }

    // Deterministic coordinate sample spanning every tensor.
    let mut flats: Vec<usize> = Vec::new();
    {
        use rand::Rng;
        let mut rng = named_stream(seed, "gradcheck");
        let params = model.params();
        let mut offset = 0;
        for id in params.ids() {
            let numel = params.value(id).numel();
            flats.push(offset + rng.gen_range(0..numel));
            offset += numel;
        }
        let total = params.coordinate_count();
        while flats.len() < min_coordinates {
            flats.push(rng.gen_range(0..total));
        }
        flats.sort_unstable();
        flats.dedup();
    }

    let names: Vec<String> = flats
        .iter()
        .map(|&f| model.params().coordinate_name(f))
        .collect();
    let analytic: Vec<f64> = flats
        .iter()
        .map(|&f| model.params().grad_coordinate(f))
        .collect();

    let estimates = crate::numerics::finite_difference_gradient(&names, step, |k, h| {
        model.params_mut().nudge_coordinate(flats[k], h);
        let mut tape = Tape::new();
        let value = instance_loss(model, &mut tape, instance, mode)
            .map(|loss| tape.scalar_value(loss))
            .unwrap_or(f64::NAN);
        model.params_mut().nudge_coordinate(flats[k], -h);
        value
    });

    let mut max_rel = 0.0;
    let mut worst = String::new();
    let mut failures = Vec::new();
    for (fd, &a) in estimates.iter().zip(&analytic) {
        if let Some(why) = &fd.failure {
            failures.push(format!("{}: {}", fd.name, why));
            continue;
        }
        let rel = crate::numerics::relative_error(a, fd.estimate);
        if rel > max_rel {
            max_rel = rel;
            worst = fd.name.clone();
        }
        if rel >= tolerance {
            failures.push(format!(
                "{}: analytic {a} vs finite-difference {} (rel {rel:.3e})",
                fd.name, fd.estimate
            ));
        }
    }
    Ok(GradCheckReport {
        coordinates: flats.len(),
        max_rel_error: max_rel,
        worst_coordinate: worst,
        failures,
    })
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_metric: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.3}",
            self.epoch, self.train_loss, self.dev_metric, self.seconds
        )
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_dev_metric: f64,
    pub log: Vec<EpochLog>,
}

/// Dev metric for model selection: joint tag F₁ when the dev set carries
/// segmentations a model can predict (the pure-segmentation task uses one
/// dummy label, where tag F₁ equals segment F₁), label accuracy
/// (1 − error rate) for CTC, for the handwriting task, and whenever the dev
/// set has no gold boundaries.
pub fn dev_metric(model: &AnyModel, dev: &Corpus) -> Result<f64> {
    let preds: Vec<Prediction> = dev
        .instances
        .iter()
        .map(|i| model.predict(i))
        .collect::<Result<_>>()?;
    let refs: Vec<&Instance> = dev.instances.iter().collect();
    let metrics = evaluate(&preds, &refs)?;
    let segmental = model.kind() != ModelKind::Ctc
        && model.front().input_kind != crate::model::InputKind::Strokes
        && dev.instances.iter().all(|i| i.durations.is_some());
    Ok(if segmental { metrics.f_tag } else { 1.0 - metrics.error_rate })
}

fn validate_corpus_for_mode(model: &AnyModel, corpus: &Corpus, mode: TrainMode) -> Result<()> {
    let inventory = model.labels();
    for (idx, inst) in corpus.instances.iter().enumerate() {
        let labels = inst
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("instance {idx} has no gold labels")))?;
        if labels.is_empty() {
            return Err(Error::Validation(format!("instance {idx} has an empty gold labeling")));
        }
        for l in labels {
            if !inventory.contains(l) {
                return Err(Error::Validation(format!(
                    "instance {idx} uses label {l:?} outside the model inventory"
                )));
            }
        }
        let needs_durations = matches!(mode, TrainMode::Full | TrainMode::Bio);
        if needs_durations {
            if inst.durations.is_none() {
                return Err(Error::Validation(format!(
                    "instance {idx} has no gold durations, required by mode {mode:?}"
                )));
            }
            if let (AnyModel::Srnn(m), Some(durs)) = (model, &inst.durations) {
                if let Some(&bad) = durs.iter().find(|&&d| d > m.max_seg_len) {
                    return Err(Error::Validation(format!(
                        "instance {idx} has a gold segment of length {bad}, over the maximum {}",
                        m.max_seg_len
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Loss value plus per-parameter gradients in tape order.
type LossGradients = (f64, Vec<(crate::diffgraph::ParamId, Vec<f64>)>);

/// Gradients of one instance's loss, evaluated on a private tape.
fn instance_gradients(
    model: &AnyModel,
    instance: &Instance,
    mode: TrainMode,
) -> Result<LossGradients> {
    let mut tape = Tape::new();
    let loss = instance_loss(model, &mut tape, instance, mode)?;
    let value = tape.scalar_value(loss);
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    tape.backward(loss)?;
    Ok((value, tape.param_grads()))
}

/// Train until the epoch budget or patience runs out, keeping the
/// parameters from the epoch with the best dev metric. Updates are
/// per-instance; with `workers > 1`, each group of that many instances is
/// evaluated concurrently and reduced in instance order before one step.
pub fn train(
    model: &mut AnyModel,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, train_corpus, dev_corpus, config, |_| {})
}

/// [`train`] with a per-epoch callback, e.g. for appending to a metrics log
/// while training runs.
pub fn train_with_progress(
    model: &mut AnyModel,
    train_corpus: &Corpus,
    dev_corpus: &Corpus,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.check()?;
    if train_corpus.is_empty() || dev_corpus.is_empty() {
        return Err(Error::Validation("training and dev corpora must be non-empty".into()));
    }
    if config.mode.model_kind() != model.kind() {
        return Err(Error::Validation(format!(
            "mode {:?} cannot train a {:?} model",
            config.mode,
            model.kind()
        )));
    }
    validate_corpus_for_mode(model, train_corpus, config.mode)?;

    let mut best_snapshot = model.params().snapshot();
    let mut best_metric = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut epochs_since_best = 0;
    let mut log = Vec::new();
    let mut consecutive_bad = 0usize;

    for epoch in 1..=config.epochs {
        let started = std::time::Instant::now();
        let mut order: Vec<usize> = (0..train_corpus.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = named_stream(config.seed, &format!("shuffle-{epoch}"));
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for group in order.chunks(config.workers) {
            let results: Vec<Result<LossGradients>> =
                if config.workers == 1 {
                    group
                        .iter()
                        .map(|&i| instance_gradients(model, &train_corpus.instances[i], config.mode))
                        .collect()
                } else {
                    std::thread::scope(|scope| {
                        let handles: Vec<_> = group
                            .iter()
                            .map(|&i| {
                                let model = &*model;
                                let inst = &train_corpus.instances[i];
                                let mode = config.mode;
                                scope.spawn(move || instance_gradients(model, inst, mode))
                            })
                            .collect();
                        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
                    })
                };

            // Serialized reduction in instance order.
            let params = model.params_mut();
            params.zero_grads();
            let mut group_ok = false;
            for result in results {
                let (value, grads) = result?;
                if !value.is_finite() {
                    consecutive_bad += 1;
                    if consecutive_bad >= 10 {
                        return Err(Error::Divergence(format!(
                            "{consecutive_bad} consecutive non-finite losses at epoch {epoch}"
                        )));
                    }
                    continue;
                }
                loss_sum += value;
                loss_count += 1;
                group_ok = true;
                for (pid, g) in grads {
                    let slot = params.entries_mut();
                    let data = &mut slot[pid.0].grad;
                    for (s, gi) in data.iter_mut().zip(&g) {
                        *s += gi;
                    }
                }
            }
            if !group_ok {
                continue;
            }
            match adam_step(params, config) {
                StepOutcome::Applied => consecutive_bad = 0,
                StepOutcome::SkippedNonFinite => {
                    consecutive_bad += 1;
                    if consecutive_bad >= 10 {
                        return Err(Error::Divergence(format!(
                            "{consecutive_bad} consecutive non-finite gradients at epoch {epoch}"
                        )));
                    }
                }
            }
        }

        let metric = dev_metric(model, dev_corpus)?;
        let entry = EpochLog {
            epoch,
            train_loss: if loss_count == 0 { f64::NAN } else { loss_sum / loss_count as f64 },
            dev_metric: metric,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        if metric > best_metric {
            best_metric = metric;
            best_epoch = epoch;
            best_snapshot = model.params().snapshot();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    model.params_mut().restore(&best_snapshot);
    Ok(TrainOutcome { best_epoch, best_dev_metric: best_metric, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_eval::{gen_synthetic_segmental, SegmentalGenConfig, Tokens};
    use crate::model::{Dims, InputSpec};

    fn small_dims() -> Dims {
        Dims {
            ctx: 8,
            seg: 5,
            stroke: 3,
            label_embed: 3,
            dur_embed: 2,
            phi: 6,
            sym_embed: 8,
            bio_hidden: 10,
        }
    }

    fn small_model(n_labels: usize, max_len: usize, dim: usize, seed: u64) -> SrnnModel {
        let labels = (0..n_labels).map(crate::data_eval::label_name).collect();
        SrnnModel::new(small_dims(), max_len, labels, &InputSpec::Vectors { dim }, seed).unwrap()
    }

    fn one_instance(seed: u64) -> Instance {
        let mut cfg = SegmentalGenConfig::new(1, 2);
        cfg.dur_ranges = vec![(1, 2), (1, 3)];
        cfg.segments = (2, 3);
        gen_synthetic_segmental(&cfg, seed).instances.remove(0)
    }

    #[test]
    fn zero_potential_loss_is_the_partition_count() {
        // Zero w and b make every potential zero, so the supervised loss is
        // exactly log of the number of labeled segmentations: ln 18 for
        // |x| = 3, |Y| = 2, unpruned.
        let mut model = small_model(2, 3, 2, 1);
        let zero: Vec<Vec<f64>> = model
            .params
            .snapshot()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        model.params.restore(&zero);
        let inst = Instance {
            tokens: Tokens::Vectors(vec![vec![0.1, 0.2]; 3]),
            labels: Some(vec!["L0".into(), "L1".into()]),
            durations: Some(vec![2, 1]),
        };
        let mut tape = Tape::new();
        let loss = supervised_loss(&model, &mut tape, &inst).unwrap();
        assert!((tape.scalar_value(loss) - 18f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn losses_are_non_negative_and_ordered() {
        for seed in 0..20 {
            let model = small_model(2, 3, 2, seed);
            let inst = one_instance(seed + 100);
            let mut tape = Tape::new();
            let sup = supervised_loss(&model, &mut tape, &inst).unwrap();
            let mut tape2 = Tape::new();
            let part = partial_loss(&model, &mut tape2, &inst).unwrap();
            let s = tape.scalar_value(sup);
            let p = tape2.scalar_value(part);
            assert!(s >= 0.0, "supervised loss {s} negative");
            assert!(p >= 0.0, "partial loss {p} negative");
            assert!(p <= s + 1e-12, "partial {p} exceeds supervised {s}");
        }
    }

    #[test]
    fn unit_length_reference_equals_full_supervision() {
        // When |y| = |x| the only compatible segmentation is all-unit, so
        // the partial loss equals the supervised loss on that gold.
        let model = small_model(2, 3, 2, 3);
        let inst = Instance {
            tokens: Tokens::Vectors(vec![vec![0.3, -0.1]; 3]),
            labels: Some(vec!["L0".into(), "L1".into(), "L0".into()]),
            durations: Some(vec![1, 1, 1]),
        };
        let mut t1 = Tape::new();
        let sup = supervised_loss(&model, &mut t1, &inst).unwrap();
        let mut t2 = Tape::new();
        let part = partial_loss(&model, &mut t2, &inst).unwrap();
        assert!((t1.scalar_value(sup) - t2.scalar_value(part)).abs() < 1e-10);
    }

    #[test]
    fn incompatible_reference_is_a_validation_error() {
        let model = small_model(2, 2, 2, 4);
        // 5 tokens, 2 labels, L = 2 → at most 4 tokens coverable.
        let inst = Instance {
            tokens: Tokens::Vectors(vec![vec![0.0, 0.0]; 5]),
            labels: Some(vec!["L0".into(), "L1".into()]),
            durations: None,
        };
        let mut tape = Tape::new();
        assert!(partial_loss(&model, &mut tape, &inst).is_err());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = ModelParams::new();
        let p = params.register("p", vec![1]);
        params.fill(p, 1.0);
        let mut cfg = TrainConfig::new(TrainMode::Full);
        cfg.l2 = 0.0;
        // Install a gradient of 0.5 by hand.
        params.entries_mut()[0].grad[0] = 0.5;
        assert_eq!(adam_step(&mut params, &cfg), StepOutcome::Applied);
        let moved = 1.0 - params.value(p).data()[0];
        assert!((moved - cfg.learning_rate).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn adam_zero_gradient_leaves_parameters() {
        let mut params = ModelParams::new();
        let p = params.register("p", vec![2]);
        params.fill(p, 0.7);
        let mut cfg = TrainConfig::new(TrainMode::Full);
        cfg.l2 = 0.0;
        adam_step(&mut params, &cfg);
        assert_eq!(params.value(p).data(), &[0.7, 0.7]);
    }

    #[test]
    fn adam_skips_non_finite_gradients() {
        let mut params = ModelParams::new();
        let p = params.register("p", vec![1]);
        params.fill(p, 0.3);
        params.entries_mut()[0].grad[0] = f64::NAN;
        let cfg = TrainConfig::new(TrainMode::Full);
        assert_eq!(adam_step(&mut params, &cfg), StepOutcome::SkippedNonFinite);
        assert_eq!(params.value(p).data(), &[0.3]);
    }

    #[test]
    fn one_epoch_one_instance_takes_one_optimizer_step() {
        let mut cfg = SegmentalGenConfig::new(1, 2);
        cfg.dur_ranges = vec![(1, 2), (1, 2)];
        let corpus = gen_synthetic_segmental(&cfg, 21);
        let mut model = AnyModel::Srnn(small_model(2, 2, 2, 21));
        let mut tc = TrainConfig::new(TrainMode::Full);
        tc.epochs = 1;
        tc.patience = 1;
        train(&mut model, &corpus, &corpus, &tc).unwrap();
        assert_eq!(model.params().step, 1);
    }

    #[test]
    fn early_training_loss_is_mostly_non_increasing() {
        // Over the first five epochs of a 50-instance corpus, at least four
        // of the five transitions must not increase the training loss.
        let mut cfg = SegmentalGenConfig::new(50, 3);
        cfg.dur_ranges = vec![(1, 2), (2, 3), (1, 3)];
        let corpus = gen_synthetic_segmental(&cfg, 22);
        let mut model = AnyModel::Srnn(small_model(3, 3, 3, 22));
        let mut tc = TrainConfig::new(TrainMode::Full);
        tc.epochs = 6;
        tc.learning_rate = 0.01;
        tc.seed = 22;
        let outcome = train(&mut model, &corpus, &corpus, &tc).unwrap();
        let losses: Vec<f64> = outcome.log.iter().take(6).map(|e| e.train_loss).collect();
        let non_increasing = losses
            .windows(2)
            .take(5)
            .filter(|w| w[1] <= w[0] + 1e-9)
            .count();
        assert!(non_increasing >= 4, "losses {losses:?}");
    }

    #[test]
    fn divergent_training_aborts_with_an_error() {
        let mut cfg = SegmentalGenConfig::new(12, 2);
        cfg.dur_ranges = vec![(1, 2), (1, 2)];
        let corpus = gen_synthetic_segmental(&cfg, 23);
        let mut model = AnyModel::Srnn(small_model(2, 2, 2, 23));
        let mut tc = TrainConfig::new(TrainMode::Full);
        tc.epochs = 3;
        // A non-finite learning rate poisons the parameters on the first
        // step; the run must abort instead of looping on NaN losses.
        tc.learning_rate = f64::INFINITY;
        let err = train(&mut model, &corpus, &corpus, &tc).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut params = ModelParams::new();
        let p = params.register("p", vec![1]);
        let mut cfg = TrainConfig::new(TrainMode::Full);
        cfg.learning_rate = 0.05;
        cfg.l2 = 0.0;
        for _ in 0..200 {
            let theta = params.value(p).data()[0];
            params.zero_grads();
            params.entries_mut()[0].grad[0] = 2.0 * (theta - 3.0);
            adam_step(&mut params, &cfg);
        }
        let theta = params.value(p).data()[0];
        assert!((theta - 3.0).abs() < 0.05, "theta = {theta}");
    }
}
