//! The proposed pseudo-unit model and the models it is compared with.
//!
//! | kind       | data             | random terms                   |
//! |------------|------------------|--------------------------------|
//! | `fixed`    | observations     | none                           |
//! | `randint`  | observations     | experimental unit              |
//! | `deaton`   | cell means       | experimental unit              |
//! | `proposed` | observations     | experimental unit, pseudo-unit |
//! | `manova`   | group trajectories | none (multivariate)          |
//!
//! Fitted values are always reported per observation, so every MSE is on
//! the same scale.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{build_design, DesignMatrices, LongDataset, RandomTerm, Term};
use crate::grouping::PseudoUnitAssignment;
use crate::lmm::{self, mse_of, Criterion, FittedLmm, VarianceComponents};
use crate::manova::{build_manova_responses, fitted_trajectories, hypotheses_for};
use crate::simulate::SimulationConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Proposed,
    RandInt,
    Deaton,
    Fixed,
    Manova,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Proposed,
        ModelKind::RandInt,
        ModelKind::Deaton,
        ModelKind::Fixed,
        ModelKind::Manova,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Proposed => "proposed",
            ModelKind::RandInt => "randint",
            ModelKind::Deaton => "deaton",
            ModelKind::Fixed => "fixed",
            ModelKind::Manova => "manova",
        }
    }

    pub fn needs_grouping(self) -> bool {
        matches!(self, ModelKind::Proposed | ModelKind::Manova)
    }

    pub fn random_terms(self) -> &'static [RandomTerm] {
        match self {
            ModelKind::Proposed => &[RandomTerm::ExperimentalUnit, RandomTerm::PseudoUnit],
            ModelKind::RandInt | ModelKind::Deaton => &[RandomTerm::ExperimentalUnit],
            ModelKind::Fixed | ModelKind::Manova => &[],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFit {
    pub kind: ModelKind,
    /// One value per observation of the input dataset.
    pub fitted: Vec<f64>,
    pub mse: f64,
    /// `cor(y, ŷ)`; 0 when either side is constant.
    pub correlation: f64,
    pub pseudo_r2: f64,
    /// The mixed-model fit behind the values (on cell means for `deaton`).
    pub lmm: Option<FittedLmm>,
}

fn correlation(y: &[f64], f: &[f64]) -> f64 {
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mf = f.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(f) {
        sxy += (a - my) * (b - mf);
        sxx += (a - my) * (a - my);
        syy += (b - mf) * (b - mf);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }
}

fn finish(kind: ModelKind, ds: &LongDataset, fitted: Vec<f64>, lmm: Option<FittedLmm>) -> ModelFit {
    let y = ds.responses();
    let r = correlation(&y, &fitted);
    ModelFit {
        kind,
        mse: mse_of(&y, &fitted),
        correlation: r,
        pseudo_r2: r * r,
        fitted,
        lmm,
    }
}

fn grouping_for(kind: ModelKind, pa: Option<&PseudoUnitAssignment>) -> Result<Option<&PseudoUnitAssignment>> {
    if kind.needs_grouping() && pa.is_none() {
        return Err(Error::Invalid(format!("the {kind} model needs a pseudo-unit assignment")));
    }
    Ok(pa.filter(|_| kind.needs_grouping()))
}

/// Fits one model with the fixed terms `fixed` (intercept implied).
pub fn fit_model(
    kind: ModelKind,
    ds: &LongDataset,
    fixed: &[Term],
    pa: Option<&PseudoUnitAssignment>,
    criterion: Criterion,
) -> Result<ModelFit> {
    fit_with(kind, ds, fixed, pa, criterion, None)
}

/// As [`fit_model`] with the variance ratios held at `vc`. `vc` must list
/// the model's random terms; `fixed` and `manova` ignore it.
pub fn fit_model_at(
    kind: ModelKind,
    ds: &LongDataset,
    fixed: &[Term],
    pa: Option<&PseudoUnitAssignment>,
    criterion: Criterion,
    vc: &VarianceComponents,
) -> Result<ModelFit> {
    fit_with(kind, ds, fixed, pa, criterion, Some(vc))
}

fn fit_with(
    kind: ModelKind,
    ds: &LongDataset,
    fixed: &[Term],
    pa: Option<&PseudoUnitAssignment>,
    criterion: Criterion,
    vc: Option<&VarianceComponents>,
) -> Result<ModelFit> {
    let pa = grouping_for(kind, pa)?;
    let run = |data: &LongDataset| -> Result<FittedLmm> {
        let dm = build_design(data, fixed, kind.random_terms(), pa)?;
        let y = data.responses();
        match vc {
            Some(vc) if !kind.random_terms().is_empty() => lmm::fit_at(&dm, &y, criterion, vc),
            _ => lmm::fit(&dm, &y, criterion),
        }
    };
    match kind {
        ModelKind::Fixed | ModelKind::RandInt | ModelKind::Proposed => {
            let fm = run(ds)?;
            Ok(finish(kind, ds, fm.fitted.clone(), Some(fm)))
        }
        ModelKind::Deaton => {
            let (cells, map) = ds.average_cells()?;
            let fm = run(&cells)?;
            let fitted = map.iter().map(|&c| fm.fitted[c]).collect();
            Ok(finish(kind, ds, fitted, Some(fm)))
        }
        ModelKind::Manova => {
            let pa = pa.expect("checked above");
            let mr = build_manova_responses(ds, pa)?;
            let (between, _) = hypotheses_for(fixed);
            let traj = fitted_trajectories(&mr, &between)?;
            let fitted = mr.observation_fitted(ds, pa, &traj);
            Ok(finish(kind, ds, fitted, None))
        }
    }
}

/// Design behind the mixed-model part of a fit, `None` for `manova`.
/// For `deaton` the rows are the cell means.
pub fn model_design(
    kind: ModelKind,
    ds: &LongDataset,
    fixed: &[Term],
    pa: Option<&PseudoUnitAssignment>,
) -> Result<Option<DesignMatrices>> {
    let pa = grouping_for(kind, pa)?;
    match kind {
        ModelKind::Manova => Ok(None),
        ModelKind::Deaton => Ok(Some(build_design(&ds.average_cells()?.0, fixed, kind.random_terms(), None)?)),
        _ => Ok(Some(build_design(ds, fixed, kind.random_terms(), pa)?)),
    }
}

/// Variance components each model would have if the generator's settings
/// were known, expressed on that model's own error scale.
///
/// `randint` absorbs the unit-level variance into its residual; `deaton`
/// sees the variance of a cell mean over `K` units with `L` replicates.
pub fn truth_components(kind: ModelKind, cfg: &SimulationConfig) -> Result<Option<VarianceComponents>> {
    let terms = kind.random_terms();
    let (b, eta, eps) = (cfg.sigma_b2, cfg.sigma_eta2, cfg.sigma_eps2);
    let vc = match kind {
        ModelKind::Fixed | ModelKind::Manova => return Ok(None),
        ModelKind::Proposed => VarianceComponents::new(terms, b, eta, eps)?,
        ModelKind::RandInt => VarianceComponents::new(terms, b, 0.0, eta + eps)?,
        ModelKind::Deaton => {
            let k = cfg.k as f64;
            let kl = (cfg.k * cfg.l) as f64;
            VarianceComponents::new(terms, b, 0.0, eta / k + eps / kl)?
        }
    };
    Ok(Some(vc))
}

/// MSE of each model on one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseSet {
    pub proposed: f64,
    pub randint: f64,
    pub deaton: f64,
    pub fixed: f64,
    pub manova: f64,
}

impl MseSet {
    pub fn get(&self, kind: ModelKind) -> f64 {
        match kind {
            ModelKind::Proposed => self.proposed,
            ModelKind::RandInt => self.randint,
            ModelKind::Deaton => self.deaton,
            ModelKind::Fixed => self.fixed,
            ModelKind::Manova => self.manova,
        }
    }

    /// `proposed ≤ randint ≤ deaton ≤ fixed`, each step allowed `slack`.
    pub fn ordering_holds(&self, slack: f64) -> bool {
        self.proposed <= self.randint + slack && self.randint <= self.deaton + slack && self.deaton <= self.fixed + slack
    }
}

/// Fits all five models and collects their MSEs. With `truth`, the variance
/// ratios are held at [`truth_components`] instead of being estimated.
pub fn compare_mse(
    ds: &LongDataset,
    fixed: &[Term],
    pa: &PseudoUnitAssignment,
    criterion: Criterion,
    truth: Option<&SimulationConfig>,
) -> Result<MseSet> {
    let mut out = [0.0; 5];
    for (slot, kind) in out.iter_mut().zip(ModelKind::ALL) {
        let fit = match truth {
            Some(cfg) => match truth_components(kind, cfg)? {
                Some(vc) => fit_model_at(kind, ds, fixed, Some(pa), criterion, &vc)?,
                None => fit_model(kind, ds, fixed, Some(pa), criterion)?,
            },
            None => fit_model(kind, ds, fixed, Some(pa), criterion)?,
        };
        *slot = fit.mse;
    }
    Ok(MseSet {
        proposed: out[0],
        randint: out[1],
        deaton: out[2],
        fixed: out[3],
        manova: out[4],
    })
}
