//! Stage-wise adversarial training, checkpointing and inference.
//!
//! Each step on one sample: the generator produces the active-scale output,
//! the discriminator takes one Adam step on real and fake pairs, then the
//! active generator scale takes one step on `g_adv + λ·L1`. At the small
//! scale the FOV classifier is trained alongside on the same sample.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{params_of, CheckpointMeta, OptimizerState, StageCheckpoint};
use crate::dataset::{denormalize, normalize, DatasetManifest, ManifestRecord, Split};
use crate::discriminator::{Discriminator, DiscriminatorConfig};
use crate::fov::{constrain_views, fov_loss, FovClassSpec, FovNet, FovPrediction, FOV_GROUP};
use crate::generator::{load_module, unify, Generator, GeneratorConfig};
use crate::geometry::{EquirectPanorama, FovScaleLaw, ValueRange, ViewSet};
use crate::image::Image;
use crate::nn::loss::{bce_fake, bce_real, l1};
use crate::nn::{Adam, AdamConfig, Module, Tensor};
use crate::{Error, Result, Stage};

pub use crate::nn::loss::total_loss;

/// Side length the four views are resized to before the FOV classifier.
pub const FOV_INPUT_SIZE: usize = 128;

/// Mean absolute difference between prediction and ground truth.
pub fn pixel_loss(pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    Ok(l1(pred, gt)?.0)
}

/// Training hyperparameters, read from a flat `key = value` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub lambda_pix: f64,
    /// Steps for the small, medium and large stages.
    pub steps_per_stage: [u64; 3],
    pub stage_order: Vec<Stage>,
    pub seed: u64,
    /// Interval checkpoints every this many steps; 0 disables them.
    pub checkpoint_every: u64,
    pub horizontal_wrap: bool,
    pub skip_connections: bool,
    pub base_channels: usize,
    pub disc_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.99,
            batch_size: 1,
            lambda_pix: 100.0,
            steps_per_stage: [2000, 1000, 500],
            stage_order: Stage::ALL.to_vec(),
            seed: 0,
            checkpoint_every: 500,
            horizontal_wrap: true,
            skip_connections: true,
            base_channels: 64,
            disc_channels: 64,
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("`{key}` expects a boolean, got `{v}`"))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}` has an invalid value `{v}`")))
}

impl TrainConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unknown or repeated
    /// keys are errors; absent keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = TrainConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", n + 1)));
            }
            match key {
                "lr" => c.lr = parse_num(key, value)?,
                "beta1" => c.beta1 = parse_num(key, value)?,
                "beta2" => c.beta2 = parse_num(key, value)?,
                "batch_size" => c.batch_size = parse_num(key, value)?,
                "lambda_pix" => c.lambda_pix = parse_num(key, value)?,
                "steps_per_stage" => {
                    let v: Vec<u64> = value
                        .split(',')
                        .map(|s| parse_num(key, s.trim()))
                        .collect::<Result<_>>()?;
                    c.steps_per_stage = v
                        .try_into()
                        .map_err(|_| Error::Config("`steps_per_stage` needs three counts".into()))?;
                }
                "stage_order" => {
                    c.stage_order = value
                        .split(',')
                        .map(|s| s.trim().parse().map_err(|e: Error| Error::Config(e.to_string())))
                        .collect::<Result<_>>()?;
                }
                "seed" => c.seed = parse_num(key, value)?,
                "checkpoint_every" => c.checkpoint_every = parse_num(key, value)?,
                "horizontal_wrap" => c.horizontal_wrap = parse_bool(key, value)?,
                "skip_connections" => c.skip_connections = parse_bool(key, value)?,
                "base_channels" => c.base_channels = parse_num(key, value)?,
                "disc_channels" => c.disc_channels = parse_num(key, value)?,
                other => return Err(Error::Config(format!("line {}: unknown key `{other}`", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size != 1 {
            return bad(format!("batch_size must be 1, got {}", self.batch_size));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{k} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.lambda_pix >= 0.0 && self.lambda_pix.is_finite()) {
            return bad(format!(
                "lambda_pix must be a finite non-negative number, got {}",
                self.lambda_pix
            ));
        }
        if self.stage_order.is_empty() || self.stage_order.iter().enumerate().any(|(i, s)| s.index() != i) {
            return bad("stage_order must be a prefix of small,medium,large".into());
        }
        if self.base_channels == 0 || self.disc_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        Ok(())
    }

    /// The same `key = value` form [`TrainConfig::parse`] reads.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let order: Vec<&str> = self.stage_order.iter().map(|s| s.name()).collect();
        let [a, b, c] = self.steps_per_stage;
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "beta1 = {}", self.beta1);
        let _ = writeln!(s, "beta2 = {}", self.beta2);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "lambda_pix = {}", self.lambda_pix);
        let _ = writeln!(s, "steps_per_stage = {a},{b},{c}");
        let _ = writeln!(s, "stage_order = {}", order.join(","));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "checkpoint_every = {}", self.checkpoint_every);
        let _ = writeln!(s, "horizontal_wrap = {}", self.horizontal_wrap);
        let _ = writeln!(s, "skip_connections = {}", self.skip_connections);
        let _ = writeln!(s, "base_channels = {}", self.base_channels);
        let _ = writeln!(s, "disc_channels = {}", self.disc_channels);
        s
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            ..AdamConfig::default()
        }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            base_channels: self.base_channels,
            skip_connections: self.skip_connections,
            horizontal_wrap: self.horizontal_wrap,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            base_channels: self.disc_channels,
            horizontal_wrap: self.horizontal_wrap,
            ..DiscriminatorConfig::default()
        }
    }

    pub fn steps(&self, stage: Stage) -> u64 {
        self.steps_per_stage[stage.index()]
    }
}

/// One row of the loss log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub pix: f64,
    /// Zero outside the small stage.
    pub fov_ce: f64,
    pub total: f64,
}

pub const LOG_HEADER: &str = "step,d_loss,g_adv,pix,fov_ce,total";

impl StepLosses {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.step, self.d_loss, self.g_adv, self.pix, self.fov_ce, self.total
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub stage: Stage,
    pub manifest: PathBuf,
    pub config: TrainConfig,
    /// A checkpoint of the same stage resumes it; one of the previous stage
    /// is unified into the next.
    pub init: Option<StageCheckpoint>,
    pub out: PathBuf,
    /// CSV loss log; appended to when resuming.
    pub log: Option<PathBuf>,
    /// Where interval and diagnostic checkpoints go; defaults to the
    /// directory of `out`.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: StageCheckpoint,
    pub losses: Vec<StepLosses>,
}

/// Deterministic per-purpose random streams derived from the run seed.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 1 << 32;
const STREAM_ORDER: u64 = 2 << 32;

/// Training-order permutation for one epoch of one stage.
fn epoch_order(seed: u64, stage: Stage, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, STREAM_ORDER + ((stage.index() as u64) << 24) + epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Network inputs for one record.
struct Prepared {
    inputs: Vec<Tensor<f32>>,
    gt: Tensor<f32>,
    fov_x: Option<Tensor<f32>>,
    label: usize,
}

/// The FOV-constrained equirect input at every scale up to `stage`.
pub fn constrained_inputs(
    views: &ViewSet,
    fov_deg: f64,
    stage: Stage,
    fill: f32,
    law: FovScaleLaw,
) -> Result<Vec<Tensor<f32>>> {
    stage
        .up_to()
        .iter()
        .map(|s| {
            let h = s.height();
            let c = constrain_views(views, fov_deg, h / 2, fill, h, law)?;
            Ok(c.panorama.image().to_tensor())
        })
        .collect()
}

fn prepare(
    manifest: &DatasetManifest,
    r: &ManifestRecord,
    stage: Stage,
    meta: &CheckpointMeta,
    fov: Option<&FovNet<f32>>,
) -> Result<Prepared> {
    let views = manifest.load_views(r)?;
    Ok(Prepared {
        inputs: constrained_inputs(&views, r.fov_deg, stage, meta.fill_value, meta.fov_law)?,
        gt: normalize(&manifest.load_gt(r, stage)?).to_tensor(),
        fov_x: fov.map(|f| f.prepare(&views)),
        label: meta.fov_classes.class_of(r.fov_deg),
    })
}

struct Nets {
    g: Generator<f32>,
    d: Discriminator<f32>,
    fov: FovNet<f32>,
    adam_g: Adam<f32>,
    adam_d: Adam<f32>,
    adam_fov: Adam<f32>,
    start: u64,
}

fn check_arch(meta: &CheckpointMeta, config: &TrainConfig) -> Result<()> {
    if meta.generator != config.generator() || meta.discriminator != config.discriminator() {
        return Err(Error::Config(
            "network widths or flags differ from the initial checkpoint".into(),
        ));
    }
    Ok(())
}

fn build_nets(
    stage: Stage,
    config: &TrainConfig,
    meta: &CheckpointMeta,
    init: Option<&StageCheckpoint>,
) -> Result<Nets> {
    let seed = config.seed;
    let adam = config.adam();
    let salt = STREAM_INIT + ((stage.index() as u64) << 8);
    let mut d_rng = stream_rng(seed, salt + 1);
    let mut d = Discriminator::new(stage, meta.discriminator, &mut d_rng);
    let mut fov_rng = stream_rng(seed, salt + 2);
    let mut fov = FovNet::new(meta.fov_classes.clone(), meta.fov_input_size, &mut fov_rng);
    let mut g_rng = stream_rng(seed, salt);
    match init {
        None if stage == Stage::Small => Ok(Nets {
            g: Generator::new(meta.generator, stage, &mut g_rng),
            d,
            fov,
            adam_g: Adam::new(adam),
            adam_d: Adam::new(adam),
            adam_fov: Adam::new(adam),
            start: 0,
        }),
        None => Err(Error::Precondition(format!(
            "the {stage} stage needs the {} checkpoint (--init)",
            stage.previous().expect("not small")
        ))),
        Some(ck) if ck.stage == stage => {
            check_arch(&ck.meta, config)?;
            let mut g = Generator::new(meta.generator, stage, &mut g_rng);
            g.load_named(&ck.params)?;
            load_module(&mut d, "", &ck.params)?;
            load_module(&mut fov, FOV_GROUP, &ck.params)?;
            let opt = |role: &str| {
                ck.optimizers
                    .get(role)
                    .cloned()
                    .map(OptimizerState::into_adam)
                    .unwrap_or_else(|| Adam::new(adam))
            };
            Ok(Nets {
                g,
                d,
                fov,
                adam_g: opt("g"),
                adam_d: opt("d"),
                adam_fov: opt("fov"),
                start: ck.step,
            })
        }
        Some(ck) if Some(ck.stage) == stage.previous() => {
            check_arch(&ck.meta, config)?;
            let g = unify(meta.generator, &ck.params, stage, &mut g_rng)?;
            load_module(&mut fov, FOV_GROUP, &ck.params)?;
            Ok(Nets {
                g,
                d,
                fov,
                adam_g: Adam::new(adam),
                adam_d: Adam::new(adam),
                adam_fov: Adam::new(adam),
                start: 0,
            })
        }
        Some(ck) => Err(Error::Precondition(format!(
            "cannot start the {stage} stage from a {} checkpoint",
            ck.stage
        ))),
    }
}

fn snapshot(
    stage: Stage,
    step: u64,
    meta: &CheckpointMeta,
    base: Option<&StageCheckpoint>,
    nets: &Nets,
) -> StageCheckpoint {
    let mut params = base.map(|b| b.params.clone()).unwrap_or_default();
    params.extend(params_of(&nets.g));
    params.extend(params_of(&nets.d));
    params.extend(nets.fov.named_values(FOV_GROUP));
    let mut optimizers = BTreeMap::new();
    optimizers.insert("g".to_string(), OptimizerState::from_adam(&nets.adam_g));
    optimizers.insert("d".to_string(), OptimizerState::from_adam(&nets.adam_d));
    if stage == Stage::Small {
        optimizers.insert("fov".to_string(), OptimizerState::from_adam(&nets.adam_fov));
    }
    StageCheckpoint {
        stage,
        step,
        meta: meta.clone(),
        params,
        optimizers,
    }
}

fn checkpoint_path(dir: &Path, out: &Path, tag: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    dir.join(format!("{stem}.{tag}.ckpt"))
}

/// Train one stage to the configured step count and write the final
/// checkpoint to `opts.out`.
pub fn train_stage(opts: &TrainOptions) -> Result<TrainOutcome> {
    let stage = opts.stage;
    let config = &opts.config;
    config.validate()?;
    if !config.stage_order.contains(&stage) {
        return Err(Error::Config(format!("the {stage} stage is not in stage_order")));
    }
    let manifest = DatasetManifest::load(&opts.manifest)?;
    let records = manifest.split(Split::Train);
    if records.is_empty() {
        return Err(Error::Data("the manifest has no training records".into()));
    }
    let meta = CheckpointMeta {
        generator: config.generator(),
        discriminator: config.discriminator(),
        fov_classes: manifest.header.fov_classes.clone(),
        fov_input_size: FOV_INPUT_SIZE,
        fov_law: manifest.header.fov_law,
        fill_value: manifest.header.fill_value,
        train: config.clone(),
    };
    let mut nets = build_nets(stage, config, &meta, opts.init.as_ref())?;
    let total_steps = config.steps(stage);
    let cache_dir = opts
        .cache_dir
        .clone()
        .unwrap_or_else(|| opts.out.parent().map(Path::to_path_buf).unwrap_or_default());

    let mut log = match &opts.log {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let fresh = nets.start == 0 || !p.exists();
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .write(true)
                .append(!fresh)
                .truncate(fresh)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            if fresh {
                writeln!(f, "{LOG_HEADER}").map_err(|e| Error::io(p, e))?;
            }
            Some((p.clone(), f))
        }
        None => None,
    };

    // small manifests are held in memory; larger ones are re-read per step
    let cache_all = records.len() <= 32;
    let mut cache: BTreeMap<usize, Prepared> = BTreeMap::new();
    let n = records.len();
    let mut order: Option<(u64, Vec<usize>)> = None;
    let lambda = config.lambda_pix;
    let lam = lambda as f32;
    let mut losses = Vec::new();

    for step in nets.start + 1..=total_steps {
        let k = step - 1;
        let epoch = k / n as u64;
        if order.as_ref().map(|o| o.0) != Some(epoch) {
            order = Some((epoch, epoch_order(config.seed, stage, epoch, n)));
        }
        let idx = order.as_ref().expect("set above").1[(k % n as u64) as usize];
        let fov_ref = (stage == Stage::Small).then_some(&nets.fov);
        let fresh;
        let sample = if cache_all {
            if let std::collections::btree_map::Entry::Vacant(e) = cache.entry(idx) {
                e.insert(prepare(&manifest, records[idx], stage, &meta, fov_ref)?);
            }
            &cache[&idx]
        } else {
            fresh = prepare(&manifest, records[idx], stage, &meta, fov_ref)?;
            &fresh
        };
        let cond = &sample.inputs[stage.index()];

        let fake = nets.g.forward_active_train(stage, &sample.inputs)?;

        nets.d.zero_grad();
        let real_logits = nets.d.forward_train(cond, &sample.gt)?;
        let (d_real, g_real) = bce_real(&real_logits);
        nets.d.backward(&g_real);
        let fake_logits = nets.d.forward_train(cond, &fake)?;
        let (d_fake, g_fake) = bce_fake(&fake_logits);
        nets.d.backward(&g_fake);
        nets.adam_d.step(&mut nets.d, "");
        let d_loss = d_real + d_fake;

        nets.g.zero_grad();
        let logits = nets.d.forward_train(cond, &fake)?;
        let (g_adv, g_logits) = bce_real(&logits);
        let mut g_out = nets.d.backward(&g_logits);
        let (pix, g_pix) = l1(&fake, &sample.gt)?;
        for (a, b) in g_out.data_mut().iter_mut().zip(g_pix.data()) {
            *a += lam * *b;
        }
        nets.g.backward_active(stage, &g_out);
        nets.adam_g.step(nets.g.scale_mut(stage).expect("active scale"), "");

        let mut fov_ce = 0.0;
        if let Some(x) = &sample.fov_x {
            nets.fov.zero_grad();
            let logits = nets.fov.forward_train(x);
            let (ce, g) = fov_loss(&logits, sample.label)?;
            nets.fov.backward(&g);
            nets.adam_fov.step(&mut nets.fov, FOV_GROUP);
            fov_ce = ce;
        }

        let row = StepLosses {
            step,
            d_loss,
            g_adv,
            pix,
            fov_ce,
            total: total_loss(g_adv, pix, lambda),
        };
        let bad = [
            ("d_loss", d_loss),
            ("g_adv", g_adv),
            ("pix", pix),
            ("fov_ce", fov_ce),
            ("total", row.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite());
        let params_finite = {
            let mut ok = true;
            nets.g
                .scale(stage)
                .expect("active scale")
                .visit("", &mut |_, p| ok &= p.value.data().iter().all(|v| v.is_finite()));
            ok
        };
        let bad = bad
            .map(|(w, _)| w.to_string())
            .or((!params_finite).then(|| "generator weights".into()));
        if let Some(what) = bad {
            let path = checkpoint_path(&cache_dir, &opts.out, &format!("diagnostic.step{step}"));
            snapshot(stage, step, &meta, opts.init.as_ref(), &nets).save(&path)?;
            return Err(Error::NonFinite {
                step,
                what,
                diagnostic: path.display().to_string(),
            });
        }
        if let Some((p, f)) = &mut log {
            writeln!(f, "{}", row.csv_row()).map_err(|e| Error::io(&*p, e))?;
        }
        log::debug!("{stage} step {step}: {}", row.csv_row());
        losses.push(row);

        if config.checkpoint_every > 0 && step % config.checkpoint_every == 0 && step < total_steps {
            let path = checkpoint_path(&cache_dir, &opts.out, &format!("step{step}"));
            snapshot(stage, step, &meta, opts.init.as_ref(), &nets).save(&path)?;
        }
    }
    if let Some((p, f)) = &mut log {
        f.flush().map_err(|e| Error::io(&*p, e))?;
    }
    let done = snapshot(stage, total_steps.max(nets.start), &meta, opts.init.as_ref(), &nets);
    done.save(&opts.out)?;
    Ok(TrainOutcome {
        checkpoint: done,
        losses,
    })
}

/// Networks rebuilt from a checkpoint for inference at one scale.
#[derive(Clone, Debug)]
pub struct Pipeline {
    stage: Stage,
    generator: Generator<f32>,
    fov: FovNet<f32>,
    meta: CheckpointMeta,
}

#[derive(Clone, Debug)]
pub struct Inference {
    /// `[0, 255]` panorama at the target scale.
    pub panorama: EquirectPanorama,
    pub prediction: FovPrediction,
    /// The FOV the views were embedded with.
    pub fov_deg: f64,
}

impl Pipeline {
    pub fn from_checkpoint(ckpt: &StageCheckpoint, stage: Stage) -> Result<Self> {
        let meta = ckpt.meta.clone();
        let mut scratch = ChaCha8Rng::seed_from_u64(0);
        let mut generator = Generator::new(meta.generator, stage, &mut scratch);
        generator.load_named(&ckpt.params)?;
        let mut fov = FovNet::new(meta.fov_classes.clone(), meta.fov_input_size, &mut scratch);
        load_module(&mut fov, FOV_GROUP, &ckpt.params)?;
        Ok(Self {
            stage,
            generator,
            fov,
            meta,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn fov_classes(&self) -> &FovClassSpec {
        &self.meta.fov_classes
    }

    pub fn predict_fov(&self, views: &ViewSet) -> FovPrediction {
        self.fov.predict(views)
    }

    /// Normalized output at the pipeline's scale for an explicit FOV.
    pub fn synthesize(&self, views: &ViewSet, fov_deg: f64) -> Result<Tensor<f32>> {
        let inputs = constrained_inputs(views, fov_deg, self.stage, self.meta.fill_value, self.meta.fov_law)?;
        let mut outs = self.generator.forward(self.stage, &inputs)?;
        Ok(outs.pop().expect("one output per scale"))
    }

    /// Predict the FOV (unless overridden), embed, synthesize, denormalize.
    pub fn run(&self, views: &ViewSet, fov_override: Option<f64>) -> Result<Inference> {
        let prediction = self.predict_fov(views);
        let fov_deg = fov_override.unwrap_or(prediction.predicted_fov);
        let out = self.synthesize(views, fov_deg)?;
        let img = denormalize(&Image::from_tensor(&out)?).map(|v| v.clamp(0.0, 255.0).round());
        Ok(Inference {
            panorama: EquirectPanorama::new(img, ValueRange::Unit8)?,
            prediction,
            fov_deg,
        })
    }
}

/// Views (normalized) → panorama at `target`, `[0, 255]`.
pub fn infer(views: &ViewSet, ckpt: &StageCheckpoint, target: Stage, fov_override: Option<f64>) -> Result<Inference> {
    Pipeline::from_checkpoint(ckpt, target)?.run(views, fov_override)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_round_trip() {
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.beta1, c.beta2, c.batch_size), (2e-4, 0.5, 0.99, 1));
        assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(TrainConfig::parse("").unwrap(), c);
    }

    #[test]
    fn config_parses_and_rejects() {
        let c =
            TrainConfig::parse("lr = 0.001 # faster\nsteps_per_stage = 10, 5, 2\nhorizontal_wrap = false\n").unwrap();
        assert_eq!(c.lr, 0.001);
        assert_eq!(c.steps_per_stage, [10, 5, 2]);
        assert!(!c.horizontal_wrap);
        for bad in [
            "learning_rate = 1",
            "lr = 1\nlr = 2",
            "batch_size = 4",
            "lr",
            "steps_per_stage = 1,2",
            "stage_order = medium,small",
            "beta2 = 1.0",
            "horizontal_wrap = maybe",
        ] {
            assert!(matches!(TrainConfig::parse(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn pixel_and_total_loss_closed_forms() {
        let gt = Tensor::<f32>::from_vec(&[1, 1, 4], vec![0.1, -0.2, 0.3, 0.9]).unwrap();
        assert_eq!(pixel_loss(&gt, &gt).unwrap(), 0.0);
        let off = gt.map(|v| v + 0.1);
        assert!((pixel_loss(&off, &gt).unwrap() - 0.1).abs() < 1e-7);
        assert_eq!(total_loss(1.0, 0.2, 100.0), 21.0);
    }

    #[test]
    fn epoch_orders_are_permutations_and_seeded() {
        let a = epoch_order(3, Stage::Small, 0, 10);
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(a, epoch_order(3, Stage::Small, 0, 10));
        assert_ne!(a, epoch_order(3, Stage::Small, 1, 10));
    }

    #[test]
    fn small_step_descends_with_a_frozen_discriminator() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gcfg = GeneratorConfig {
            base_channels: 2,
            ..GeneratorConfig::default()
        };
        let dcfg = DiscriminatorConfig {
            base_channels: 2,
            ..DiscriminatorConfig::default()
        };
        let mut g = Generator::<f64>::new(gcfg, Stage::Small, &mut rng);
        let mut d = Discriminator::<f64>::new(Stage::Small, dcfg, &mut rng);
        let x = Tensor::from_vec(
            &[3, 16, 32],
            (0..1536).map(|i| ((i * 29 % 97) as f64 / 48.0) - 1.0).collect(),
        )
        .unwrap();
        let gt = x.map(|v| 0.5 * v + 0.1);
        let objective = |g: &Generator<f64>, d: &Discriminator<f64>| {
            let y = g.forward(Stage::Small, std::slice::from_ref(&x)).unwrap().remove(0);
            total_loss(bce_real(&d.forward(&x, &y).unwrap()).0, l1(&y, &gt).unwrap().0, 100.0)
        };
        let before = objective(&g, &d);
        g.zero_grad();
        let y = g.forward_active_train(Stage::Small, std::slice::from_ref(&x)).unwrap();
        let adv = bce_real(&d.forward_train(&x, &y).unwrap()).1;
        let mut grad = d.backward(&adv);
        let pix = l1(&y, &gt).unwrap().1;
        for (a, b) in grad.data_mut().iter_mut().zip(pix.data()) {
            *a += 100.0 * b;
        }
        g.backward_active(Stage::Small, &grad);
        g.visit_mut("", &mut |_, p| {
            let step = p.grad.map(|v| 1e-5 * v);
            for (w, s) in p.value.data_mut().iter_mut().zip(step.data()) {
                *w -= s;
            }
        });
        let after = objective(&g, &d);
        assert!(after < before, "{before} -> {after}");
    }
}
