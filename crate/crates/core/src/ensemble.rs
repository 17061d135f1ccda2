//! Stratified k-fold planning, per-fold training and ensemble prediction.
//!
//! Member probabilities are averaged uniformly in probability space, first
//! over test-time views and then over members. Averages are order-free: the
//! values are sorted before summing, so permuting members cannot change a
//! single bit of the output.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{tta_views, AugConfig};
use crate::imagedata::{normalize, write_labels_csv, Class, Dataset, Image, NormStats, SoftLabel, CLASS_COUNT};
use crate::meanteacher::{train_fold, EpochRecord, MeanTeacherConfig};
use crate::metrics::{balanced_accuracy, confusion_matrix};
use crate::nn::{images_to_batch, predict_logits, read_params_file, softmax, write_params_file, ModelSpec, ParamSet};
use crate::rng::RngStream;
use crate::{Error, Result};

const TAG_FOLD: u64 = 0x20;
const TAG_MEMBER: u64 = 0x21;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Sorted labelled-dataset positions per fold.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Everything outside fold `i`, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }

    /// Checks the folds partition `0..n`.
    pub fn check_partition(&self, n: usize) -> Result<()> {
        if self.folds.len() != self.k {
            return Err(Error::Invariant(format!("plan declares k = {} but has {} folds", self.k, self.folds.len())));
        }
        let mut seen = vec![false; n];
        for (f, fold) in self.folds.iter().enumerate() {
            for &i in fold {
                match seen.get_mut(i) {
                    None => return Err(Error::Data(format!("fold {f} holds index {i}, dataset has {n} samples"))),
                    Some(true) => return Err(Error::Data(format!("index {i} appears in more than one fold"))),
                    Some(s) => *s = true,
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("index {i} is in no fold")));
        }
        Ok(())
    }
}

/// Per class, shuffles that class's indices and deals them round-robin.
///
/// The dealer position carries over from one class to the next, so fold
/// sizes differ by at most one as well. Classes rarer than `k` are absent
/// from some validation folds; that is logged, not rejected.
pub fn stratified_kfold(labels: &[SoftLabel], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config("k", format!("need at least 2 folds, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Data(format!("cannot split {} labelled samples into {k} folds", labels.len())));
    }
    let mut folds = vec![Vec::new(); k];
    let mut dealer = 0;
    for class in Class::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i].argmax() == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            log::warn!(
                "class {} has {} samples, fewer than k = {k}; some validation folds will lack it",
                class.name(),
                members.len()
            );
        }
        RngStream::derive(seed, &[TAG_FOLD, class.index() as u64]).shuffle(&mut members);
        for i in members {
            folds[dealer % k].push(i);
            dealer += 1;
        }
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    Ok(FoldPlan { k, folds })
}

/// One trained model with the statistics of its own training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub params: ParamSet,
    pub norm: NormStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    spec: ModelSpec,
    members: Vec<Member>,
}

impl EnsembleModel {
    pub fn new(spec: ModelSpec, members: Vec<Member>) -> Result<Self> {
        spec.validate()?;
        if members.is_empty() {
            return Err(Error::Data("an ensemble needs at least one member".into()));
        }
        for (i, m) in members.iter().enumerate() {
            spec.check_params(&m.params)
                .map_err(|e| Error::Data(format!("member {i}: {e}")))?;
            m.norm.validate()?;
        }
        Ok(Self { spec, members })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }
}

/// Mean of `values` that is exact for equal inputs, bounded by the inputs'
/// range, and independent of their order.
fn order_free_mean(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let (lo, hi) = (values[0], values[values.len() - 1]);
    if lo == hi {
        return lo;
    }
    (values.iter().sum::<f64>() / values.len() as f64).clamp(lo, hi)
}

fn average_rows(rows: &[[f64; CLASS_COUNT]]) -> [f64; CLASS_COUNT] {
    std::array::from_fn(|c| {
        let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        order_free_mean(&mut col)
    })
}

/// One member's class probabilities on the centre crop of `image`, averaged
/// over the 8 dihedral views when `use_tta` is set.
pub fn member_probs(member: &Member, spec: &ModelSpec, image: &Image, use_tta: bool) -> Result<[f64; CLASS_COUNT]> {
    let s = spec.input_size;
    if image.height() < s || image.width() < s {
        return Err(Error::shape(
            "predict",
            format!("image is {}x{}, model expects at least {s}x{s}", image.height(), image.width()),
        ));
    }
    let normalized = normalize(&image.center_crop(s, s)?, &member.norm);
    let views = if use_tta { tta_views(&normalized) } else { vec![normalized] };
    let probs = softmax(&predict_logits(&member.params, spec, &images_to_batch(&views)?)?)?;
    let rows: Vec<[f64; CLASS_COUNT]> = (0..views.len())
        .map(|i| probs.row(i).try_into().expect("seven classes"))
        .collect();
    Ok(average_rows(&rows))
}

pub fn predict(model: &EnsembleModel, image: &Image, use_tta: bool) -> Result<SoftLabel> {
    let rows = model
        .members
        .iter()
        .map(|m| member_probs(m, &model.spec, image, use_tta))
        .collect::<Result<Vec<_>>>()?;
    SoftLabel::new(average_rows(&rows))
}

/// Predicts every sample, in dataset order. Errors name the sample.
pub fn predict_dataset(model: &EnsembleModel, data: &Dataset, use_tta: bool) -> Result<Vec<(String, SoftLabel)>> {
    data.entries()
        .par_iter()
        .map(|e| {
            predict(model, &e.sample.image, use_tta)
                .map(|p| (e.id.clone(), p))
                .map_err(|err| Error::Data(format!("sample `{}`: {err}", e.id)))
        })
        .collect()
}

/// Predictions in the ground-truth CSV layout.
pub fn predictions_csv(rows: &[(String, SoftLabel)]) -> String {
    write_labels_csv(rows.iter().map(|(id, p)| (id.as_str(), p)))
}

/// Balanced accuracy of an ensemble on a labelled dataset.
pub fn ensemble_balanced_accuracy(model: &EnsembleModel, data: &Dataset, use_tta: bool) -> Result<f64> {
    let preds: Vec<SoftLabel> = predict_dataset(model, data, use_tta)?.into_iter().map(|(_, p)| p).collect();
    balanced_accuracy(&confusion_matrix(&preds, &data.labels())?)
}

#[derive(Debug, Clone)]
pub struct MemberReport {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    /// Teacher balanced accuracy on the member's own validation fold.
    pub val_bacc: f64,
    pub history: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct EnsembleTraining {
    pub model: EnsembleModel,
    pub reports: Vec<MemberReport>,
}

/// Trains one mean-teacher member per fold, each on every labelled sample
/// outside its fold and with normalization statistics of that split alone.
#[allow(clippy::too_many_arguments)]
pub fn train_ensemble(
    labeled: &Dataset,
    unlabeled: &Dataset,
    plan: &FoldPlan,
    spec: &ModelSpec,
    cfg: &MeanTeacherConfig,
    aug: &AugConfig,
    use_tta: bool,
    seed: u64,
) -> Result<EnsembleTraining> {
    plan.check_partition(labeled.len())?;
    if let Some(e) = labeled.entries().iter().find(|e| e.sample.label.is_none()) {
        return Err(Error::Data(format!("sample `{}` in the labelled set has no label", e.id)));
    }
    let results: Vec<(Member, MemberReport)> = (0..plan.k)
        .into_par_iter()
        .map(|fold| -> Result<(Member, MemberReport)> {
            let train_indices = plan.train_indices(fold);
            let val_indices = plan.folds[fold].clone();
            let train = labeled.select(&train_indices)?;
            let val = labeled.select(&val_indices)?;
            let member_seed = RngStream::derive(seed, &[TAG_MEMBER, fold as u64]).next_u64();
            let out = train_fold(&train, unlabeled, spec, cfg, aug, member_seed, &mut |_| {})
                .map_err(|e| Error::Data(format!("fold {fold}: {e}")))?;
            let member = Member {
                params: out.teacher,
                norm: out.norm,
            };
            let single = EnsembleModel::new(spec.clone(), vec![member.clone()])?;
            let val_bacc = ensemble_balanced_accuracy(&single, &val, use_tta)?;
            log::info!(
                "fold {fold}: trained on {} samples, held-out balanced accuracy {val_bacc:.4} on {}",
                train_indices.len(),
                val_indices.len()
            );
            Ok((
                member,
                MemberReport {
                    fold,
                    train_indices,
                    val_indices,
                    val_bacc,
                    history: out.history,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (members, reports): (Vec<Member>, Vec<MemberReport>) = results.into_iter().unzip();
    Ok(EnsembleTraining {
        model: EnsembleModel::new(spec.clone(), members)?,
        reports,
    })
}

pub const MANIFEST_FORMAT: &str = "dermaug-ensemble-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMember {
    /// Relative to the manifest's directory.
    pub checkpoint: String,
    pub norm: NormStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_bacc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub spec: ModelSpec,
    pub members: Vec<ManifestMember>,
}

/// Writes `member_<i>.params` checkpoints and `manifest.json` into `dir`.
/// Returns the manifest path.
pub fn save_ensemble(model: &EnsembleModel, val_bacc: &[f64], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut members = Vec::with_capacity(model.members.len());
    for (i, m) in model.members.iter().enumerate() {
        let name = format!("member_{i}.params");
        write_params_file(&dir.join(&name), &m.params)?;
        members.push(ManifestMember {
            checkpoint: name,
            norm: m.norm,
            val_bacc: val_bacc.get(i).copied(),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        spec: model.spec.clone(),
        members,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn load_ensemble(manifest_path: &Path) -> Result<EnsembleModel> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", manifest_path.display())))?;
    if manifest.format != MANIFEST_FORMAT {
        return Err(Error::Data(format!(
            "{}: unsupported manifest format `{}`",
            manifest_path.display(),
            manifest.format
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let members = manifest
        .members
        .into_iter()
        .map(|m| {
            Ok(Member {
                params: read_params_file(&base.join(&m.checkpoint))?,
                norm: m.norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(manifest.spec, members)
}
