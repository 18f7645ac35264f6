//! Two-phase optimization loop, checkpoints, run logs and the gradient-check
//! harness.

pub mod checkpoint;
pub mod evaluate;
pub mod gradcheck;
pub mod optim;
pub mod runlog;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Tensor, Var};
use crate::camgeom::{DepthMap, PoseSE3, PoseVars};
use crate::error::{invalid, Error, Result};
use crate::evalmetrics::{eigen_crop_mask, evaluate_depth, translation_angle_deg, MetricsReport, KITTI_DEPTH_CAP};
use crate::kittidata::{
    augment, index_sequences, load_split, AugmentConfig, FrameSample, LoadOptions, SourceRole, SplitRole,
};
use crate::networks::layers::{Mode, ParamId, Session};
use crate::networks::{batch_one, disparity_to_depth, prediction_to_pose, DepthPoseNet, JointInput, Model, NetConfig};
use crate::photoloss::{total_loss_graph, LossBreakdown, LossConfig, LossInputs};
use crate::synthdata::{synth_sample, SceneGenerator, SynthSpecFile};

pub use checkpoint::Checkpoint;
pub use optim::{Adam, AdamSettings};
pub use runlog::{EpochRecord, LogRecord, RunLog, StepRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Depth and pose networks with attention; the cue bridge is excluded.
    BaselineHam,
    /// Everything, starting from a `BaselineHam` checkpoint.
    Joint,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetChoice {
    Kitti,
    Synth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KittiConfig {
    pub root: PathBuf,
    pub train_split: Option<PathBuf>,
    pub val_split: Option<PathBuf>,
    /// Adds the other camera of the stereo pair as a source with a fixed pose.
    pub use_stereo: bool,
}

impl Default for KittiConfig {
    fn default() -> Self {
        Self { root: PathBuf::from("kitti_raw"), train_split: None, val_split: None, use_stereo: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Explicit scene file; when absent, `count` scenes are generated.
    pub spec_file: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub generator: SceneGenerator,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { spec_file: None, count: 10, seed: 0, generator: SceneGenerator::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub phase: Phase,
    pub seed: u64,
    pub dataset: DatasetChoice,
    pub kitti: KittiConfig,
    pub synth: SynthConfig,
    pub loss: LossConfig,
    pub net: NetConfig,
    /// Overrides the number of steps per epoch (otherwise one pass over the data).
    pub steps_per_epoch: Option<usize>,
    pub augmentation: bool,
    pub augment: AugmentConfig,
    /// Global gradient-norm ceiling; off when absent.
    pub grad_clip: Option<f64>,
    /// Keeps the attention scale at its initial value of zero.
    pub freeze_beta: bool,
    /// Required to start the joint phase.
    pub phase1_checkpoint: Option<PathBuf>,
    /// Where checkpoints and `log.ndjson` go; nothing is written when absent.
    pub output_dir: Option<PathBuf>,
    pub validate_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            lr_drop_epoch: 15,
            lr_drop_factor: 0.1,
            epochs: 20,
            batch_size: 8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 1e-4,
            phase: Phase::BaselineHam,
            seed: 0,
            dataset: DatasetChoice::Kitti,
            kitti: KittiConfig::default(),
            synth: SynthConfig::default(),
            loss: LossConfig::default(),
            net: NetConfig::default(),
            steps_per_epoch: None,
            augmentation: true,
            augment: AugmentConfig::default(),
            grad_clip: None,
            freeze_beta: false,
            phase1_checkpoint: None,
            output_dir: None,
            validate_each_epoch: true,
        }
    }
}

impl TrainConfig {
    /// Small network on generated 64×64 scenes, with epochs measured in steps.
    pub fn toy_synth() -> Self {
        Self {
            lr: 1e-3,
            batch_size: 4,
            dataset: DatasetChoice::Synth,
            net: NetConfig::toy(64, 64),
            steps_per_epoch: Some(100),
            augmentation: false,
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !(self.lr_drop_factor > 0.0) {
            return bad("learning rate and drop factor must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch must be positive".into());
        }
        if self.loss.num_scales != self.net.num_scales {
            return bad(format!("loss uses {} scales, network {}", self.loss.num_scales, self.net.num_scales));
        }
        if self.dataset == DatasetChoice::Synth {
            let g = &self.synth.generator;
            if self.synth.spec_file.is_none() && (g.height, g.width) != self.net.input_resolution {
                return bad(format!(
                    "generated scenes are {}x{} but the network expects {:?}",
                    g.height, g.width, self.net.input_resolution
                ));
            }
        }
        self.loss.validate()?;
        self.net.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.lr_drop_epoch {
            self.lr
        } else {
            self.lr * self.lr_drop_factor
        }
    }

    fn adam_settings(&self) -> AdamSettings {
        AdamSettings {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Epoch at which `phase` stops.
    pub fn phase_end_epoch(&self, phase: Phase) -> usize {
        match phase {
            Phase::BaselineHam => self.lr_drop_epoch.min(self.epochs),
            Phase::Joint => self.epochs,
        }
    }
}

/// Training and validation samples for a configuration.
pub fn load_datasets(cfg: &TrainConfig) -> Result<(Vec<FrameSample>, Vec<FrameSample>)> {
    match cfg.dataset {
        DatasetChoice::Synth => {
            let scenes = match &cfg.synth.spec_file {
                Some(p) => SynthSpecFile::load(p)?.all_scenes(),
                None => (0..cfg.synth.count)
                    .map(|k| cfg.synth.generator.scene(cfg.synth.seed.wrapping_add(k as u64)))
                    .collect(),
            };
            let samples = scenes
                .iter()
                .enumerate()
                .map(|(k, s)| synth_sample(s, &format!("synth_{k:04}"), cfg.loss.num_scales))
                .collect::<Result<Vec<_>>>()?;
            if let Some(s) = samples.iter().find(|s| (s.height(), s.width()) != cfg.net.input_resolution) {
                return Err(invalid(format!("scene {} does not match the network resolution", s.id)));
            }
            Ok((samples.clone(), samples))
        }
        DatasetChoice::Kitti => {
            let k = &cfg.kitti;
            let mut roles = vec![SourceRole::Prev, SourceRole::Next];
            if k.use_stereo {
                roles.push(SourceRole::Stereo);
            }
            let opts = LoadOptions {
                resolution: cfg.net.input_resolution,
                roles,
                num_scales: cfg.loss.num_scales,
                evaluation: false,
            };
            let train_idx = index_sequences(&k.root, k.train_split.as_deref(), SplitRole::Train)?;
            let val = match &k.val_split {
                Some(p) => {
                    let val_idx = index_sequences(&k.root, Some(p), SplitRole::Val)?;
                    if val_idx.overlaps(&train_idx) {
                        return Err(invalid("train and validation splits overlap"));
                    }
                    load_split(&k.root, &val_idx, &opts)?
                }
                None => Vec::new(),
            };
            Ok((load_split(&k.root, &train_idx, &opts)?, val))
        }
    }
}

fn stack(tensors: impl Iterator<Item = Tensor>) -> Tensor {
    Tensor::stack_batch(&tensors.map(|t| batch_one(&t)).collect::<Vec<_>>())
}

/// Forward pass and multi-scale loss for a batch. The loss compares against
/// the unjittered colours; the networks see the jittered ones.
pub fn batch_loss(
    net: &DepthPoseNet,
    s: &mut Session<'_>,
    samples: &[&FrameSample],
    loss: &LossConfig,
    use_stereo: bool,
) -> Result<(Var, LossBreakdown)> {
    let input = JointInput::from_samples(samples, false)?;
    let out = net.forward_joint(s, &input)?;
    let target = s.input(stack(samples.iter().map(|x| x.target.clone())));
    let mut sources = Vec::new();
    let mut poses = Vec::new();
    for p in &out.poses {
        let imgs: Option<Vec<Tensor>> = samples.iter().map(|x| x.source(p.role).cloned()).collect();
        let imgs = imgs.ok_or_else(|| invalid(format!("batch lacks {:?} sources", p.role)))?;
        sources.push(s.input(stack(imgs.into_iter())));
        poses.push(p.transform);
    }
    if use_stereo {
        let stereo: Option<Vec<(Tensor, PoseSE3)>> = samples
            .iter()
            .map(|x| Some((x.source(SourceRole::Stereo)?.clone(), x.stereo_pose?)))
            .collect();
        if let Some(pairs) = stereo {
            let fixed: Vec<PoseSE3> = pairs.iter().map(|p| p.1).collect();
            sources.push(s.input(stack(pairs.into_iter().map(|p| p.0))));
            poses.push(PoseVars::constant(&mut s.g, &fixed));
        }
    }
    let intrinsics: Vec<_> = samples.iter().map(|x| x.intrinsics[0]).collect();
    let inputs = LossInputs { target, sources: &sources, poses: &poses, intrinsics: &intrinsics };
    total_loss_graph(&mut s.g, &out.disparities, &inputs, net.cfg.depth_range, loss)
}

/// Network outputs for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub disparity: Tensor,
    pub depth: DepthMap,
    /// Predicted target-to-source transforms.
    pub poses: Vec<(SourceRole, PoseSE3)>,
}

/// Inference with running normalization statistics, `batch` samples at a time.
pub fn predict(model: &Model, net: &DepthPoseNet, samples: &[&FrameSample], batch: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        let mut s = Session::new(&model.store, Mode::Eval);
        let input = JointInput::from_samples(chunk, true)?;
        let joint = net.forward_joint(&mut s, &input)?;
        let disp = s.g.value(joint.disparities[0]).clone();
        for (k, _) in chunk.iter().enumerate() {
            let d = disp.batch_item(k);
            let depth = disparity_to_depth(&d, net.cfg.depth_range)?;
            let poses = joint
                .poses
                .iter()
                .map(|p| {
                    let aa = s.g.value(p.axisangle).batch_item(k);
                    let t = s.g.value(p.translation).batch_item(k);
                    (p.role, prediction_to_pose(aa.data(), t.data(), p.inverted))
                })
                .collect();
            out.push(Prediction { disparity: d, depth, poses });
        }
    }
    Ok(out)
}

/// Validation summary: mean median-scaled depth metrics over samples with
/// ground truth, and the mean translation-direction error of the `Next` pose.
pub fn validate_samples(
    model: &Model,
    net: &DepthPoseNet,
    samples: &[FrameSample],
    crop: bool,
    batch: usize,
) -> Result<(Option<MetricsReport>, Option<f64>)> {
    if samples.is_empty() {
        return Ok((None, None));
    }
    let refs: Vec<&FrameSample> = samples.iter().collect();
    let preds = predict(model, net, &refs, batch)?;
    let mut reports = Vec::new();
    let mut angles = Vec::new();
    for (sample, pred) in samples.iter().zip(&preds) {
        if let Some(gt) = &sample.gt_depth {
            let mask = if crop { eigen_crop_mask(gt.height(), gt.width()) } else { vec![true; gt.values().len()] };
            reports.push(evaluate_depth(&pred.depth, gt, &mask, KITTI_DEPTH_CAP)?);
        }
        let gt_next = sample.gt_poses.iter().find(|(r, _)| *r == SourceRole::Next);
        let pred_next = pred.poses.iter().find(|(r, _)| *r == SourceRole::Next);
        if let (Some((_, g)), Some((_, p))) = (gt_next, pred_next) {
            angles.push(translation_angle_deg(&p.translation, &g.translation));
        }
    }
    let angle = (!angles.is_empty()).then(|| angles.iter().sum::<f64>() / angles.len() as f64);
    Ok((MetricsReport::mean(&reports), angle))
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_e90c);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Owns the model, optimizer state, data and log of one run.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    net: DepthPoseNet,
    phase: Phase,
    adam: Adam,
    step: u64,
    frozen: Vec<ParamId>,
    train_set: Vec<FrameSample>,
    val_set: Vec<FrameSample>,
    log: RunLog,
    sink: Option<runlog::NdjsonSink>,
    started: Instant,
}

impl Trainer {
    /// Starts a run from `cfg.phase`. The joint phase loads
    /// `cfg.phase1_checkpoint`.
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, val) = load_datasets(&cfg)?;
        Self::with_data(cfg, train, val)
    }

    pub fn with_data(cfg: TrainConfig, train_set: Vec<FrameSample>, val_set: Vec<FrameSample>) -> Result<Self> {
        cfg.validate()?;
        if train_set.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let model = Model::new(&cfg.net, cfg.seed)?;
        let mut t = Self::assemble(cfg.clone(), model, Phase::BaselineHam, train_set, val_set)?;
        if cfg.phase == Phase::Joint {
            let path = cfg
                .phase1_checkpoint
                .clone()
                .ok_or_else(|| Error::Config("the joint phase requires phase1_checkpoint".into()))?;
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.manifest.phase != Phase::BaselineHam {
                return Err(Error::Checkpoint(format!("{} is not a phase-1 checkpoint", path.display())));
            }
            t.restore_params(&ckpt, true)?;
            t.step = ckpt.manifest.step;
            t = t.into_joint()?;
        }
        Ok(t)
    }

    /// Continues from a checkpoint. A phase-1 checkpoint with a joint
    /// configuration starts the joint phase; otherwise the run resumes
    /// exactly, optimizer state included.
    pub fn resume(cfg: TrainConfig, path: &Path) -> Result<Self> {
        cfg.validate()?;
        let ckpt = Checkpoint::load(path)?;
        let (train, val) = load_datasets(&cfg)?;
        let model = Model::new(&cfg.net, cfg.seed)?;
        let mut t = Self::assemble(cfg.clone(), model, ckpt.manifest.phase, train, val)?;
        t.step = ckpt.manifest.step;
        match (ckpt.manifest.phase, cfg.phase) {
            (a, b) if a == b => {
                t.restore_params(&ckpt, false)?;
                t.restore_adam(&ckpt)?;
                Ok(t)
            }
            (Phase::BaselineHam, Phase::Joint) => {
                t.restore_params(&ckpt, true)?;
                t.into_joint()
            }
            (a, b) => Err(Error::Checkpoint(format!("cannot continue a {a:?} checkpoint as {b:?}"))),
        }
    }

    fn assemble(
        cfg: TrainConfig,
        model: Model,
        phase: Phase,
        train_set: Vec<FrameSample>,
        val_set: Vec<FrameSample>,
    ) -> Result<Self> {
        let mut net = model.net.clone();
        let mut frozen = Vec::new();
        if phase == Phase::BaselineHam {
            net.cfg.use_idce = false;
            frozen.extend(model.store.with_prefix(Model::idce_prefix()));
        }
        if cfg.freeze_beta {
            frozen.push(net.pose_decoder.ham.beta);
        }
        let sink = match &cfg.output_dir {
            Some(dir) => Some(runlog::NdjsonSink::append(&dir.join("log.ndjson"))?),
            None => None,
        };
        Ok(Self {
            cfg,
            model,
            net,
            phase,
            adam: Adam::default(),
            step: 0,
            frozen,
            train_set,
            val_set,
            log: RunLog::default(),
            sink,
            started: Instant::now(),
        })
    }

    /// Switches a phase-1 trainer to the joint phase: fresh cue-bridge
    /// weights and a fresh optimizer, keeping the step counter and log.
    pub fn into_joint(self) -> Result<Self> {
        if self.phase != Phase::BaselineHam {
            return Err(invalid("already in the joint phase"));
        }
        let fresh = Model::new(&self.cfg.net, self.cfg.seed)?;
        let mut model = self.model;
        let idce: Vec<(String, Tensor)> = fresh
            .store
            .entries()
            .filter(|(_, e)| e.name.starts_with(Model::idce_prefix()))
            .map(|(_, e)| (e.name.clone(), e.value.clone()))
            .collect();
        model.store.load_values(&idce)?;
        let cfg = TrainConfig { phase: Phase::Joint, ..self.cfg };
        let mut t = Self::assemble(cfg, model, Phase::Joint, self.train_set, self.val_set)?;
        t.step = self.step;
        t.log = self.log;
        t.started = self.started;
        t.sink = self.sink;
        Ok(t)
    }

    fn restore_params(&mut self, ckpt: &Checkpoint, skip_idce: bool) -> Result<()> {
        let values: Vec<(String, Tensor)> = ckpt
            .arrays
            .iter()
            .filter(|(n, _)| self.model.store.id(n).is_some())
            .filter(|(n, _)| !(skip_idce && n.starts_with(Model::idce_prefix())))
            .cloned()
            .collect();
        let expected = self.model.store.len()
            - if skip_idce { self.model.store.with_prefix(Model::idce_prefix()).len() } else { 0 };
        if values.len() != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} of {expected} parameters",
                values.len()
            )));
        }
        self.model.store.load_values(&values)
    }

    fn restore_adam(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.adam = Adam { steps: ckpt.manifest.adam_steps, ..Adam::default() };
        for (id, e) in self.model.store.entries() {
            let first = ckpt.array(&format!("adam.first/{}", e.name));
            let second = ckpt.array(&format!("adam.second/{}", e.name));
            if let (Some(first), Some(second)) = (first, second) {
                self.adam
                    .moments
                    .insert(id, optim::MomentPair { first: first.clone(), second: second.clone() });
            }
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut arrays: Vec<(String, Tensor)> =
            self.model.store.entries().map(|(_, e)| (e.name.clone(), e.value.clone())).collect();
        for (id, m) in &self.adam.moments {
            let name = &self.model.store.entry(*id).name;
            arrays.push((format!("adam.first/{name}"), m.first.clone()));
            arrays.push((format!("adam.second/{name}"), m.second.clone()));
        }
        let cfg = TrainConfig { phase: self.phase, ..self.cfg.clone() };
        Checkpoint::new(self.phase, self.step, self.adam.steps, cfg, arrays)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn net(&self) -> &DepthPoseNet {
        &self.net
    }

    pub fn train_set(&self) -> &[FrameSample] {
        &self.train_set
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.cfg.steps_per_epoch.unwrap_or_else(|| self.train_set.len().div_ceil(self.cfg.batch_size))
    }

    pub fn epoch(&self) -> usize {
        (self.step / self.steps_per_epoch() as u64) as usize
    }

    fn batch_indices(&self) -> Vec<usize> {
        let spe = self.steps_per_epoch() as u64;
        let within = (self.step % spe) as usize;
        let n = self.train_set.len();
        let order = epoch_order(self.cfg.seed, self.epoch(), n);
        (0..self.cfg.batch_size).map(|i| order[(within * self.cfg.batch_size + i) % n]).collect()
    }

    /// One optimizer step.
    pub fn step_once(&mut self) -> Result<StepRecord> {
        let epoch = self.epoch();
        let lr = self.cfg.lr_at(epoch);
        let mut rng = step_rng(self.cfg.seed, self.step);
        let batch: Vec<FrameSample> = self
            .batch_indices()
            .into_iter()
            .map(|i| {
                let seed: u64 = rng.random();
                if self.cfg.augmentation {
                    augment(&self.train_set[i], &self.cfg.augment, seed)
                } else {
                    self.train_set[i].clone()
                }
            })
            .collect();
        let refs: Vec<&FrameSample> = batch.iter().collect();

        let mut s = Session::new(&self.model.store, Mode::Train).with_frozen(self.frozen.iter().copied());
        let (total, breakdown) = batch_loss(&self.net, &mut s, &refs, &self.cfg.loss, self.cfg.kitti.use_stereo)?;
        if !breakdown.total.is_finite() {
            return Err(invalid(format!("non-finite loss at step {}", self.step)));
        }
        let grads = s.g.backward(total);
        let mut param_grads = s.param_grads(&grads);
        let norm_updates = s.take_norm_updates();
        drop(s);

        if let Some(max) = self.cfg.grad_clip {
            optim::clip_global_norm(&mut param_grads, max);
        }
        let settings = self.cfg.adam_settings();
        self.adam.step(&mut self.model.store, param_grads, lr, &settings);
        self.model.store.apply_norm_updates(&norm_updates);
        self.step += 1;

        let record = StepRecord {
            step: self.step,
            epoch,
            phase: self.phase,
            lr,
            loss: breakdown,
            wall_time: self.started.elapsed().as_secs_f64(),
        };
        self.push(LogRecord::Step(record.clone()))?;
        Ok(record)
    }

    fn push(&mut self, record: LogRecord) -> Result<()> {
        if let Some(sink) = &mut self.sink {
            sink.write(&record)?;
        }
        self.log.records.push(record);
        Ok(())
    }

    /// Validation on the held-out set (the training scenes for synthetic data).
    pub fn validate(&self) -> Result<(Option<MetricsReport>, Option<f64>)> {
        let crop = self.cfg.dataset == DatasetChoice::Kitti;
        validate_samples(&self.model, &self.net, &self.val_set, crop, self.cfg.batch_size)
    }

    fn end_epoch(&mut self, epoch: usize) -> Result<()> {
        let (metrics, pose_angle_deg) =
            if self.cfg.validate_each_epoch { self.validate()? } else { (None, None) };
        if let Some(m) = &metrics {
            info!("epoch {epoch}: abs_rel {:.4} delta1 {:.3}", m.abs_rel, m.delta1);
        }
        let record = EpochRecord { epoch, phase: self.phase, step: self.step, metrics, pose_angle_deg };
        self.push(LogRecord::Epoch(record))?;
        if let Some(dir) = &self.cfg.output_dir {
            let name = match self.phase {
                Phase::BaselineHam => format!("baseline_ham_epoch{epoch:03}.ckpt"),
                Phase::Joint => format!("joint_epoch{epoch:03}.ckpt"),
            };
            self.checkpoint().save(&dir.join(name))?;
        }
        Ok(())
    }

    /// Trains until the current phase's final epoch.
    pub fn run(&mut self) -> Result<()> {
        let spe = self.steps_per_epoch() as u64;
        let end = self.cfg.phase_end_epoch(self.phase) as u64 * spe;
        while self.step < end {
            let r = self.step_once()?;
            if self.step % spe == 0 {
                info!("step {} loss {:.5}", r.step, r.loss.total);
                self.end_epoch(r.epoch)?;
            }
        }
        Ok(())
    }
}

/// Runs the phase given by `cfg.phase`.
pub fn train(cfg: TrainConfig) -> Result<Trainer> {
    let mut t = Trainer::new(cfg)?;
    t.run()?;
    Ok(t)
}

/// Phase one followed directly by the joint phase.
pub fn train_two_phase(cfg: TrainConfig) -> Result<Trainer> {
    let cfg = TrainConfig { phase: Phase::BaselineHam, ..cfg };
    let mut t = Trainer::new(cfg)?;
    t.run()?;
    let mut t = t.into_joint()?;
    t.run()?;
    Ok(t)
}
