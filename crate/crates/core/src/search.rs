//! The search pipeline: train augmentation-wise shared weights once under
//! uniform sampling, then repeatedly fine-tune from that checkpoint to score
//! policies and optimize theta with PPO. Also houses the proxy-fidelity
//! comparison and the early-vs-late augmentation schedule experiment.

use crate::augment::PreprocessConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{
    cosine_lr, evaluate, load_checkpoint, save_checkpoint, Arch, ModelState, PolicyMode,
    TrainConfig, Trainer,
};
use crate::optim::{
    baseline_update, ppo_update, AdamState, BaselineState, PpoBatch, PpoConfig,
};
use crate::policy::{write_policy, OpCounts, PolicyParams, PolicySampler};
use crate::rng::{derive_rng, derive_seed, stream};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub use crate::stats::pearson;

/// Train/validation pair the search operates on.
#[derive(Clone, Debug)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
}

/// The four proxy tasks: how stage-one weights are obtained and whether the
/// policy is scored by fine-tuning or by evaluating on an augmented
/// validation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyVariant {
    /// Stage one trained with uniform augmentation; fine-tune + evaluate.
    AugmentFinetune,
    /// Stage one trained without augmentation; fine-tune + evaluate.
    NoaugFinetune,
    /// No stage one; fine-tune from random initialization.
    InitFinetune,
    /// Stage one trained with uniform augmentation; no fine-tuning, evaluate
    /// on a validation set augmented by sampled operations.
    AugmentedEval,
}

impl ProxyVariant {
    pub const ALL: [ProxyVariant; 4] = [
        ProxyVariant::AugmentFinetune,
        ProxyVariant::NoaugFinetune,
        ProxyVariant::InitFinetune,
        ProxyVariant::AugmentedEval,
    ];

    /// Short code used in CSV output.
    pub fn code(self) -> &'static str {
        match self {
            ProxyVariant::AugmentFinetune => "AF",
            ProxyVariant::NoaugFinetune => "NF",
            ProxyVariant::InitFinetune => "IT",
            ProxyVariant::AugmentedEval => "AV",
        }
    }

    pub fn from_code(code: &str) -> Result<Self> {
        match code.to_ascii_uppercase().as_str() {
            "AF" => Ok(ProxyVariant::AugmentFinetune),
            "NF" => Ok(ProxyVariant::NoaugFinetune),
            "IT" => Ok(ProxyVariant::InitFinetune),
            "AV" => Ok(ProxyVariant::AugmentedEval),
            other => Err(Error::InvalidConfig(format!("unknown proxy variant `{other}`"))),
        }
    }
}

/// Everything the search loop needs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Stage-one epochs for the shared weights.
    pub n_early: usize,
    /// Fine-tuning epochs per policy evaluation.
    pub n_late: usize,
    /// Search iterations.
    pub t_max: usize,
    pub proxy: ProxyVariant,
    pub ppo: PpoConfig,
    pub train: TrainConfig,
    pub pre: PreprocessConfig,
    pub seed: u64,
    /// Constant fine-tuning learning rate; when absent, the cosine value of
    /// the full-training schedule at the stage-one handoff epoch.
    pub ft_lr: Option<f64>,
}

impl SearchConfig {
    /// Epoch count the cosine schedule spans; stage one runs its first
    /// `n_early` epochs.
    pub fn schedule_total(&self) -> usize {
        self.train.epochs.max(self.n_early)
    }

    pub fn finetune_lr(&self) -> f64 {
        self.ft_lr.unwrap_or_else(|| {
            cosine_lr(self.train.lr_max, self.n_early.min(self.schedule_total()), self.schedule_total())
        })
    }
}

/// Stage one: the shared checkpoint. `AugmentFinetune` / `AugmentedEval`
/// train under uniform operation sampling, `NoaugFinetune` without policy
/// augmentation, and `InitFinetune` skips training entirely.
pub fn train_shared(cfg: &SearchConfig, arch: &Arch, data: &SplitData) -> Result<ModelState> {
    let mut model = ModelState::init(arch.clone(), derive_seed(cfg.seed, stream::MODEL_INIT, 0))?;
    if cfg.proxy == ProxyVariant::InitFinetune || cfg.n_early == 0 {
        return Ok(model);
    }
    let uniform = PolicyParams::uniform(crate::augment::NUM_OPS);
    let mode = match cfg.proxy {
        ProxyVariant::NoaugFinetune => PolicyMode::None,
        _ => PolicyMode::Policy(&uniform),
    };
    let mut trainer = Trainer::new(&model)?;
    let mut rng = derive_rng(cfg.seed, stream::SHARED_TRAIN, 0);
    let total = cfg.schedule_total();
    for epoch in 0..cfg.n_early {
        let lr = match cfg.train.schedule {
            crate::model::Schedule::Cosine => cosine_lr(cfg.train.lr_max, epoch, total),
            crate::model::Schedule::Constant => cfg.train.lr_max,
        };
        trainer.epoch(&mut model, &data.train, &mode, &cfg.train, &cfg.pre, lr, &mut rng, None)?;
    }
    Ok(model)
}

/// Score one policy under a proxy variant. Fine-tuning variants copy the
/// checkpoint, fine-tune `n_late` epochs with operations sampled from the
/// policy (recording counts), and report validation accuracy. The
/// augmented-eval variant classifies validation images after applying one
/// sampled operation each.
pub fn evaluate_policy(
    omega_share: &ModelState,
    p: &PolicyParams,
    variant: ProxyVariant,
    cfg: &SearchConfig,
    data: &SplitData,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, OpCounts)> {
    let mut counts = OpCounts::new(p.k());
    match variant {
        ProxyVariant::AugmentedEval => {
            let sampler = PolicySampler::new(p);
            let ops = crate::augment::op_table();
            let net = crate::model::Net::new(&omega_share.arch)?;
            let mut correct = 0usize;
            for (img, &label) in data.val.images.iter().zip(&data.val.labels) {
                let id = sampler.sample(rng);
                counts.record(id);
                let augmented = crate::augment::apply_op_with_fill(img, &ops[id], cfg.pre.fill, rng);
                let logits = net.forward(&omega_share.params, &net.image_to_input(&augmented)?);
                let pred = logits
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap();
                if pred == label as usize {
                    correct += 1;
                }
            }
            Ok((correct as f64 / data.val.len() as f64, counts))
        }
        _ => {
            let mut model = match variant {
                ProxyVariant::InitFinetune => {
                    ModelState::init(omega_share.arch.clone(), rng.random())?
                }
                _ => omega_share.clone(),
            };
            let lr = cfg.finetune_lr();
            let mut trainer = Trainer::new(&model)?;
            let mode = PolicyMode::Policy(p);
            for _ in 0..cfg.n_late {
                trainer.epoch(
                    &mut model,
                    &data.train,
                    &mode,
                    &cfg.train,
                    &cfg.pre,
                    lr,
                    rng,
                    Some(&mut counts),
                )?;
            }
            Ok((evaluate(&model, &data.val)?, counts))
        }
    }
}

/// Reward source for the search loop. The iteration index is the only rng
/// seed input, which keeps interrupted runs resumable.
pub trait PolicyEvaluator {
    fn evaluate(&mut self, p: &PolicyParams, iteration: usize) -> Result<(f64, OpCounts)>;
}

/// The real evaluator: fine-tune the shared checkpoint under the policy.
pub struct ProxyEvaluator<'a> {
    pub omega_share: &'a ModelState,
    pub data: &'a SplitData,
    pub cfg: &'a SearchConfig,
}

impl PolicyEvaluator for ProxyEvaluator<'_> {
    fn evaluate(&mut self, p: &PolicyParams, iteration: usize) -> Result<(f64, OpCounts)> {
        let mut rng = derive_rng(self.cfg.seed, stream::SEARCH_ITER, iteration as u64);
        evaluate_policy(self.omega_share, p, self.cfg.proxy, self.cfg, self.data, &mut rng)
    }
}

/// Per-iteration log entry.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchRecord {
    pub iteration: usize,
    pub counts: OpCounts,
    pub acc: f64,
    pub baseline_before: f64,
    pub theta_snapshot_ref: Option<String>,
}

/// Resumable search state, written after every iteration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchState {
    pub seed: u64,
    pub next_iteration: usize,
    pub policy: PolicyParams,
    pub adam: AdamState,
    pub baseline: BaselineState,
    pub records: Vec<SearchRecord>,
}

pub struct SearchOutcome {
    pub policy: PolicyParams,
    pub records: Vec<SearchRecord>,
}

/// Output-directory layout for a search run.
pub struct SearchIo {
    pub dir: PathBuf,
}

impl SearchIo {
    pub fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir.join("policies"))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn state_path(&self) -> PathBuf {
        self.dir.join("state.json")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join("omega_share.ckpt")
    }

    pub fn snapshot_path(&self, iteration: usize) -> PathBuf {
        self.dir.join("policies").join(format!("iter_{iteration:05}.policy"))
    }

    fn save_state(&self, state: &SearchState) -> Result<()> {
        let tmp = self.state_path().with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(state).expect("state serializes"))?;
        std::fs::rename(tmp, self.state_path())?;
        Ok(())
    }

    pub fn load_state(&self) -> Result<SearchState> {
        let bytes = std::fs::read(self.state_path())?;
        serde_json::from_slice(&bytes).map_err(|e| Error::MalformedState(e.to_string()))
    }
}

/// The search loop: evaluate the current policy, form the advantage against
/// the EMA baseline (read before its update), take the PPO step, and log.
/// With `io` set, a policy snapshot and a resumable state file are written
/// every iteration; `resume` continues from a prior state file.
pub fn run_search(
    cfg: &SearchConfig,
    evaluator: &mut dyn PolicyEvaluator,
    io: Option<&SearchIo>,
    resume: bool,
) -> Result<SearchOutcome> {
    if cfg.t_max == 0 {
        return Err(Error::InvalidConfig("t_max must be at least 1".into()));
    }
    let k = crate::augment::NUM_OPS;
    let mut state = match (resume, io) {
        (true, Some(io)) if io.state_path().exists() => {
            let state = io.load_state()?;
            if state.seed != cfg.seed {
                return Err(Error::MalformedState(format!(
                    "state file was produced with seed {}, config has {}",
                    state.seed, cfg.seed
                )));
            }
            state
        }
        _ => SearchState {
            seed: cfg.seed,
            next_iteration: 0,
            policy: PolicyParams::uniform(k),
            adam: AdamState::new(k, cfg.ppo.lr_theta, cfg.ppo.beta1, cfg.ppo.beta2),
            baseline: BaselineState::default(),
            records: Vec::new(),
        },
    };

    for t in state.next_iteration..cfg.t_max {
        let (acc, counts) = evaluator.evaluate(&state.policy, t)?;
        let baseline_before = if state.baseline.initialized { state.baseline.value } else { acc };
        let batch = PpoBatch::collect(&state.policy, counts.clone(), acc, baseline_before);
        let (next_policy, next_adam) = ppo_update(&state.policy, &batch, state.adam.clone(), &cfg.ppo)?;
        state.policy = next_policy;
        state.adam = next_adam;
        state.baseline = baseline_update(state.baseline, acc);
        let snapshot = match io {
            Some(io) => {
                let path = io.snapshot_path(t);
                write_policy(&state.policy, &path)?;
                Some(format!("policies/iter_{t:05}.policy"))
            }
            None => None,
        };
        state.records.push(SearchRecord {
            iteration: t,
            counts,
            acc,
            baseline_before,
            theta_snapshot_ref: snapshot,
        });
        state.next_iteration = t + 1;
        if let Some(io) = io {
            io.save_state(&state)?;
        }
    }
    Ok(SearchOutcome { policy: state.policy, records: state.records })
}

/// Stage one plus the full loop against the proxy evaluator. Reuses the
/// checkpoint file on resume so the shared weights are obtained exactly once.
pub fn run_search_on_data(
    cfg: &SearchConfig,
    arch: &Arch,
    data: &SplitData,
    io: Option<&SearchIo>,
    resume: bool,
) -> Result<(SearchOutcome, ModelState)> {
    let omega_share = match io {
        Some(io) if resume && io.checkpoint_path().exists() => {
            load_checkpoint(&io.checkpoint_path())?
        }
        Some(io) => {
            let m = train_shared(cfg, arch, data)?;
            save_checkpoint(&m, &io.checkpoint_path())?;
            m
        }
        None => train_shared(cfg, arch, data)?,
    };
    let mut evaluator = ProxyEvaluator { omega_share: &omega_share, data, cfg };
    let outcome = run_search(cfg, &mut evaluator, io, resume)?;
    Ok((outcome, omega_share))
}

/// Random concentrated policy: a handful of operations at high theta, the
/// rest far below. Mirrors the shape of searched policies, and makes the
/// sampled policies differ enough in quality for correlation analysis.
pub fn random_concentrated_policy(k: usize, rng: &mut ChaCha8Rng) -> PolicyParams {
    let m = rng.random_range(2..=12u64) as usize;
    let mut theta: Vec<f64> = (0..k).map(|_| -9.0 + rng.random_range(-0.5..0.5)).collect();
    let mut chosen = std::collections::BTreeSet::new();
    while chosen.len() < m {
        chosen.insert(rng.random_range(0..k as u64) as usize);
    }
    for &id in &chosen {
        theta[id] = 6.0 + rng.random_range(-0.5..0.5);
    }
    PolicyParams::new(theta, vec![true; k]).expect("finite theta")
}

/// Result table of the proxy comparison.
#[derive(Clone, Debug)]
pub struct ProxyComparison {
    /// Pearson r per variant; `None` when the proxy scores had zero variance.
    pub rows: Vec<(ProxyVariant, Option<f64>)>,
    pub full_accs: Vec<f64>,
    /// Proxy accuracies aligned with `full_accs`, keyed like `ProxyVariant::ALL`.
    pub proxy_accs: Vec<Vec<f64>>,
}

/// Sample `n_policies` random fixed policies; score each by full training
/// (the expensive ground truth) and by every proxy variant, using identical
/// policy samples across variants; report Pearson r per variant.
pub fn compare_proxies(
    cfg: &SearchConfig,
    arch: &Arch,
    data: &SplitData,
    n_policies: usize,
    workers: usize,
) -> Result<ProxyComparison> {
    if n_policies < 5 {
        return Err(Error::InvalidConfig("compare_proxies needs n_policies >= 5".into()));
    }
    let k = crate::augment::NUM_OPS;
    let policies: Vec<PolicyParams> = (0..n_policies)
        .map(|i| {
            let mut rng = derive_rng(cfg.seed, stream::PROXY_RUN, 10_000 + i as u64);
            random_concentrated_policy(k, &mut rng)
        })
        .collect();

    // Stage-one checkpoints shared by the fine-tuning proxies.
    let shared_aug = train_shared(&SearchConfig { proxy: ProxyVariant::AugmentFinetune, ..cfg.clone() }, arch, data)?;
    let shared_noaug = train_shared(&SearchConfig { proxy: ProxyVariant::NoaugFinetune, ..cfg.clone() }, arch, data)?;

    let score_one = |(i, policy): (usize, &PolicyParams)| -> Result<(f64, [f64; 4])> {
        // ground truth: full training from scratch under this policy
        let mut model =
            ModelState::init(arch.clone(), derive_seed(cfg.seed, stream::PROXY_RUN, 100 + i as u64))?;
        let mut trainer = Trainer::new(&model)?;
        let mut rng = derive_rng(cfg.seed, stream::PROXY_RUN, 200 + i as u64);
        let mode = PolicyMode::Policy(policy);
        for epoch in 0..cfg.train.epochs {
            let lr = cosine_lr(cfg.train.lr_max, epoch, cfg.train.epochs);
            trainer.epoch(&mut model, &data.train, &mode, &cfg.train, &cfg.pre, lr, &mut rng, None)?;
        }
        let full = evaluate(&model, &data.val)?;

        let mut proxy_scores = [0.0; 4];
        for (vi, &variant) in ProxyVariant::ALL.iter().enumerate() {
            let checkpoint = match variant {
                ProxyVariant::NoaugFinetune => &shared_noaug,
                _ => &shared_aug,
            };
            let mut rng =
                derive_rng(cfg.seed, stream::PROXY_RUN, 300 + (i * 4 + vi) as u64);
            let (acc, _) = evaluate_policy(checkpoint, policy, variant, cfg, data, &mut rng)?;
            proxy_scores[vi] = acc;
        }
        Ok((full, proxy_scores))
    };

    let indexed: Vec<(usize, &PolicyParams)> = policies.iter().enumerate().collect();
    let results: Vec<Result<(f64, [f64; 4])>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| indexed.par_iter().map(|&entry| score_one(entry)).collect())
    } else {
        indexed.iter().map(|&entry| score_one(entry)).collect()
    };

    let mut full_accs = Vec::with_capacity(n_policies);
    let mut proxy_accs = vec![Vec::with_capacity(n_policies); 4];
    for r in results {
        let (full, scores) = r?;
        full_accs.push(full);
        for (vi, &s) in scores.iter().enumerate() {
            proxy_accs[vi].push(s);
        }
    }
    let rows = ProxyVariant::ALL
        .iter()
        .enumerate()
        .map(|(vi, &v)| {
            let r = match pearson(&proxy_accs[vi], &full_accs) {
                Ok(r) => Some(r),
                Err(Error::ZeroVariance) => None,
                Err(e) => return Err(e),
            };
            Ok((v, r))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProxyComparison { rows, full_accs, proxy_accs })
}

/// Which end of training gets the augmented epochs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Start,
    End,
}

impl Placement {
    pub fn code(self) -> &'static str {
        match self {
            Placement::Start => "start",
            Placement::End => "end",
        }
    }
}

/// Boolean per epoch: is the policy applied during this epoch?
pub fn augmented_epochs(placement: Placement, n_aug: usize, total: usize) -> Vec<bool> {
    (0..total)
        .map(|e| match placement {
            Placement::Start => e < n_aug,
            Placement::End => e >= total - n_aug.min(total),
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ScheduleRow {
    pub n_aug: usize,
    pub placement: Placement,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub accs: Vec<f64>,
}

/// Train from scratch with a fixed policy applied only during the designated
/// epochs, repeated over seeds; per-run rng streams depend on the grid point
/// and seed but not the placement, so `n_aug = total` makes both placements
/// identical runs.
pub fn schedule_experiment(
    cfg: &SearchConfig,
    arch: &Arch,
    data: &SplitData,
    n_aug_grid: &[usize],
    placement: Placement,
    policy: &PolicyParams,
    n_seeds: usize,
    workers: usize,
) -> Result<Vec<ScheduleRow>> {
    let total = cfg.train.epochs;
    if let Some(&bad) = n_aug_grid.iter().find(|&&n| n > total) {
        return Err(Error::InvalidConfig(format!(
            "n_aug {bad} exceeds total epochs {total}"
        )));
    }
    let runs: Vec<(usize, usize)> = n_aug_grid
        .iter()
        .enumerate()
        .flat_map(|(gi, _)| (0..n_seeds).map(move |si| (gi, si)))
        .collect();
    let run_one = |&(gi, si): &(usize, usize)| -> Result<f64> {
        let n_aug = n_aug_grid[gi];
        let run_tag = (gi * 1000 + si) as u64;
        let mut model =
            ModelState::init(arch.clone(), derive_seed(cfg.seed, stream::SCHEDULE_RUN, run_tag))?;
        let mut trainer = Trainer::new(&model)?;
        let mut rng = derive_rng(cfg.seed, stream::SCHEDULE_RUN, 500_000 + run_tag);
        let plan = augmented_epochs(placement, n_aug, total);
        for (epoch, &augmented) in plan.iter().enumerate() {
            let lr = cosine_lr(cfg.train.lr_max, epoch, total);
            let mode = if augmented { PolicyMode::Policy(policy) } else { PolicyMode::None };
            trainer.epoch(&mut model, &data.train, &mode, &cfg.train, &cfg.pre, lr, &mut rng, None)?;
        }
        evaluate(&model, &data.val)
    };
    let accs: Vec<Result<f64>> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
        pool.install(|| runs.par_iter().map(run_one).collect())
    } else {
        runs.iter().map(run_one).collect()
    };
    let accs = accs.into_iter().collect::<Result<Vec<f64>>>()?;
    let rows = n_aug_grid
        .iter()
        .enumerate()
        .map(|(gi, &n_aug)| {
            let slice: Vec<f64> = (0..n_seeds).map(|si| accs[gi * n_seeds + si]).collect();
            ScheduleRow {
                n_aug,
                placement,
                mean_acc: crate::stats::mean(&slice),
                std_acc: crate::stats::std_dev(&slice),
                accs: slice,
            }
        })
        .collect();
    Ok(rows)
}
