use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::train::TrainOptions;
use super::{train, Dataset, HarnessError, Modality, TrainConfig, Variant, VariantFlags};

/// Which split the ablation table reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Train,
    Val,
}

impl FromStr for EvalSplit {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            _ => Err(HarnessError::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub selection: bool,
    pub modality: Modality,
    pub mae: f64,
    pub top1: f64,
    pub split_hash: String,
}

/// The four architectures with and without keypoint selection, then the
/// facial modality rows (FK, FPP, FK+FPP) of the full model.
pub fn default_ablation_flags() -> Vec<VariantFlags> {
    let mut out = Vec::new();
    for selection in [true, false] {
        for v in Variant::ALL {
            out.push(VariantFlags {
                use_keypoint_selection: selection,
                ..VariantFlags::named(v)
            });
        }
    }
    for modality in [Modality::Fk, Modality::Fpp, Modality::FkFpp] {
        out.push(VariantFlags {
            modality,
            ..VariantFlags::named(Variant::TaaGcn)
        });
    }
    out
}

/// Trains one model per flag set on the same split and seed; metrics are
/// those of the final epoch on `split`.
pub fn run_ablation(
    data: &Dataset,
    base: &TrainConfig,
    flags: &[VariantFlags],
    split: EvalSplit,
    opts: &TrainOptions,
) -> Result<Vec<AblationRow>, HarnessError> {
    let mut rows: Vec<AblationRow> = Vec::with_capacity(flags.len());
    for f in flags {
        let cfg = TrainConfig {
            variant: *f,
            ..base.clone()
        };
        let out = train(data, &cfg, opts)?;
        let m = match split {
            EvalSplit::Train => out.train,
            EvalSplit::Val => out
                .val
                .ok_or_else(|| HarnessError::Config("val split is empty; set val_fraction > 0".into()))?,
        };
        if let Some(first) = rows.first() {
            if first.split_hash != out.split_hash {
                return Err(HarnessError::Config("variants trained on different splits".into()));
            }
        }
        rows.push(AblationRow {
            variant: f.variant().name().to_string(),
            selection: f.use_keypoint_selection,
            modality: f.modality,
            mae: m.mae,
            top1: m.top1,
            split_hash: out.split_hash,
        });
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,selection,modality,mae,top1\n");
    for r in rows {
        let sel = if r.selection { "on" } else { "off" };
        s.push_str(&format!("{},{},{},{},{}\n", r.variant, sel, r.modality, r.mae, r.top1));
    }
    s
}
