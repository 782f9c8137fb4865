//! One-shot global unstructured pruning.
//!
//! Scores every live weight, removes the lowest-scoring ones across all
//! layers so that `round(N / t)` of the `N` eligible weights survive, then
//! fine-tunes with the pruned positions held at zero.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{bail, Error, Result};
use crate::nn::{full_gradient, train, EpochRecord, GradientSet, Model, TrainConfig};
use crate::rng::{purpose, stream};

/// Short name of a scoring rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodTag {
    MP,
    GP,
    UP,
    RP,
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodTag::MP => "MP",
            MethodTag::GP => "GP",
            MethodTag::UP => "UP",
            MethodTag::RP => "RP",
        })
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "MP" => Ok(MethodTag::MP),
            "GP" => Ok(MethodTag::GP),
            "UP" => Ok(MethodTag::UP),
            "RP" => Ok(MethodTag::RP),
            other => bail!(Config, "unknown pruning method {other:?} (expected MP, GP, UP or RP)"),
        }
    }
}

/// Scoring rule with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PruneMethod {
    /// `|θ|`
    Magnitude,
    /// `|−θ·∇L|`, with `L` the regularized loss.
    Gradient,
    /// `|−θ·∇L + ε·θ²|`: the gradient score with weight decay `ε` deducted.
    Undecayed { decay: f64 },
    /// Uniform random scores from the given seed.
    Random { seed: u64 },
}

impl PruneMethod {
    /// Builds the method for `tag`; UP takes `decay` as its ε and RP takes `seed`.
    pub fn from_tag(tag: MethodTag, decay: f64, seed: u64) -> Self {
        match tag {
            MethodTag::MP => PruneMethod::Magnitude,
            MethodTag::GP => PruneMethod::Gradient,
            MethodTag::UP => PruneMethod::Undecayed { decay },
            MethodTag::RP => PruneMethod::Random { seed },
        }
    }

    pub fn tag(&self) -> MethodTag {
        match self {
            PruneMethod::Magnitude => MethodTag::MP,
            PruneMethod::Gradient => MethodTag::GP,
            PruneMethod::Undecayed { .. } => MethodTag::UP,
            PruneMethod::Random { .. } => MethodTag::RP,
        }
    }

    pub fn needs_gradient(&self) -> bool {
        matches!(self, PruneMethod::Gradient | PruneMethod::Undecayed { .. })
    }
}

/// Per-weight scores in layer-major flat order. Masked weights are ineligible.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub eligible: Vec<bool>,
    layer_sizes: Vec<usize>,
    mask_fingerprint: u64,
}

impl ScoreSet {
    pub fn eligible_count(&self) -> usize {
        self.eligible.iter().filter(|&&e| e).count()
    }

    /// Parameter layer holding flat index `i`.
    pub fn layer_of(&self, mut i: usize) -> usize {
        for (l, &n) in self.layer_sizes.iter().enumerate() {
            if i < n {
                return l;
            }
            i -= n;
        }
        self.layer_sizes.len()
    }
}

fn fingerprint(mask: &[bool]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ mask.len() as u64;
    for &m in mask {
        h ^= u64::from(m) + 1;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn score(model: &Model, method: PruneMethod, grads: Option<&GradientSet>) -> Result<ScoreSet> {
    let weights = model.flat_weights();
    let eligible = model.flat_mask();
    let grad = match (method.needs_gradient(), grads) {
        (true, None) => bail!(Usage, "{} scoring needs a full training-set gradient", method.tag()),
        (true, Some(g)) => {
            if g.weights.len() != model.layers().len()
                || g.weights.iter().zip(model.layers()).any(|(g, l)| g.dim() != l.weight().dim())
            {
                bail!(Shape, "gradient set does not match the model");
            }
            let flat = g.flat_weights();
            if flat.iter().zip(&eligible).any(|(v, &e)| e && !v.is_finite()) {
                bail!(Numeric, "non-finite gradient entry");
            }
            flat
        }
        (false, _) => Vec::new(),
    };
    let scores: Vec<f64> = match method {
        PruneMethod::Magnitude => weights.iter().map(|w| w.abs()).collect(),
        PruneMethod::Gradient => weights.iter().zip(&grad).map(|(w, g)| (-w * g).abs()).collect(),
        PruneMethod::Undecayed { decay } => {
            if !(decay >= 0.0 && decay.is_finite()) {
                bail!(Config, "UP decay must be finite and nonnegative, got {decay}");
            }
            weights
                .iter()
                .zip(&grad)
                .map(|(w, g)| (-w * g + decay * w * w).abs())
                .collect()
        }
        PruneMethod::Random { seed } => {
            let mut rng = stream(seed, purpose::RANDOM_PRUNE, 0);
            weights.iter().map(|_| rng.random::<f64>()).collect()
        }
    };
    if scores.iter().zip(&eligible).any(|(s, &e)| e && !s.is_finite()) {
        bail!(Numeric, "non-finite score");
    }
    Ok(ScoreSet {
        scores,
        mask_fingerprint: fingerprint(&eligible),
        eligible,
        layer_sizes: model.layers().iter().map(|l| l.weight().len()).collect(),
    })
}

/// Which weights to remove for a target pruning ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct PrunePlan {
    pub ratio: f64,
    /// Eligible weights before pruning (`N`).
    pub eligible: usize,
    /// `round(N / t)`, half-up.
    pub keep: usize,
    /// Flat indices to prune, lowest score first.
    pub prune: Vec<usize>,
    mask_fingerprint: u64,
}

impl PrunePlan {
    pub fn prune_count(&self) -> usize {
        self.prune.len()
    }
}

/// Selects the `N − round(N/t)` lowest-scoring eligible weights across all
/// layers. Ties go to the lower flat index.
pub fn plan(scores: &ScoreSet, ratio: f64) -> Result<PrunePlan> {
    if !(ratio > 1.0 && ratio.is_finite()) {
        bail!(Config, "pruning ratio must exceed 1, got {ratio}");
    }
    let n = scores.eligible_count();
    if n == 0 {
        bail!(Usage, "no eligible weights to prune");
    }
    let keep = (n as f64 / ratio + 0.5).floor() as usize;
    if keep == 0 {
        bail!(Config, "ratio {ratio} would prune all {n} eligible weights");
    }
    let mut order: Vec<usize> = (0..scores.scores.len()).filter(|&i| scores.eligible[i]).collect();
    order.sort_by(|&a, &b| scores.scores[a].total_cmp(&scores.scores[b]).then(a.cmp(&b)));
    order.truncate(n - keep);
    Ok(PrunePlan {
        ratio,
        eligible: n,
        keep,
        prune: order,
        mask_fingerprint: scores.mask_fingerprint,
    })
}

/// Zeroes and masks the planned weights. Returns the achieved ratio
/// (eligible before / live after).
pub fn apply(model: &mut Model, plan: &PrunePlan) -> Result<f64> {
    let mask = model.flat_mask();
    if fingerprint(&mask) != plan.mask_fingerprint || plan.prune.iter().any(|&i| !mask.get(i).copied().unwrap_or(false)) {
        bail!(Usage, "stale plan: the model's masks changed since the plan was made");
    }
    for &i in &plan.prune {
        model.clear_weight(i);
    }
    Ok(plan.eligible as f64 / model.live_weight_count() as f64)
}

/// Result of the prune-then-fine-tune pipeline.
#[derive(Clone, Debug)]
pub struct PruneOutcome {
    pub model: Model,
    pub plan: PrunePlan,
    pub achieved_ratio: f64,
    pub history: Vec<EpochRecord>,
}

/// Scores `model` for `method`, computing the full training-split gradient
/// when the method needs one. GP differentiates the loss with weight decay
/// `decay`; UP uses its own ε for both the gradient and the correction term.
pub fn dataset_scores(model: &Model, method: PruneMethod, dataset: &Dataset, decay: f64) -> Result<ScoreSet> {
    let grads = match method {
        PruneMethod::Gradient => Some(full_gradient(model, dataset, Split::Train, decay)?),
        PruneMethod::Undecayed { decay } => Some(full_gradient(model, dataset, Split::Train, decay)?),
        _ => None,
    };
    score(model, method, grads.as_ref())
}

/// Scores, plans, applies and fine-tunes. GP uses the fine-tune config's
/// weight decay in its gradient.
pub fn prune_and_finetune(
    model: &Model,
    method: PruneMethod,
    ratio: f64,
    dataset: &Dataset,
    ft_cfg: &TrainConfig,
) -> Result<PruneOutcome> {
    ft_cfg.validate()?;
    let scores = dataset_scores(model, method, dataset, ft_cfg.weight_decay)?;
    let plan = plan(&scores, ratio)?;
    let mut pruned = model.clone();
    let achieved_ratio = apply(&mut pruned, &plan)?;
    let (model, history) = train(&pruned, dataset, ft_cfg)?;
    Ok(PruneOutcome {
        model,
        plan,
        achieved_ratio,
        history,
    })
}

/// Audit CSV: one row per eligible weight.
pub fn write_plan_csv<W: Write>(scores: &ScoreSet, plan: &PrunePlan, out: W) -> Result<()> {
    let mut pruned = vec![false; scores.scores.len()];
    for &i in &plan.prune {
        pruned[i] = true;
    }
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Format(format!("plan csv: {e}"));
    w.write_record(["layer", "flat_index", "score", "pruned"]).map_err(io)?;
    for (i, &s) in scores.scores.iter().enumerate() {
        if !scores.eligible[i] {
            continue;
        }
        w.write_record([
            scores.layer_of(i).to_string(),
            i.to_string(),
            s.to_string(),
            u8::from(pruned[i]).to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Format(format!("plan csv: {e}")))?;
    Ok(())
}
