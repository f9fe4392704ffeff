//! Pseudo-observational units.
//!
//! Under destructive sampling an observational unit never reappears, so its
//! own random effect cannot be estimated. Instead, inside every
//! (experimental unit, time) cell the observations are split into `G` groups
//! that are matched across times (lowest responses with lowest responses and
//! so on), giving each experimental unit `G` trajectories that span all times.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // unused when std is in the build graph
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::data::{natural_cmp, LongDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupingStrategy {
    /// Sort each cell ascending and cut into `G` contiguous blocks.
    Rank,
    /// Equal-probability percentile cuts of each cell's responses.
    Quantile,
    /// Groups are the levels of an auxiliary factor.
    Covariate,
    /// Each observational unit is its own group (complete panels only).
    Unit,
}

/// Group `r ∈ 1..=g` of every observation of the dataset it was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoUnitAssignment {
    pub g: usize,
    pub strategy: GroupingStrategy,
    pub groups: Vec<usize>,
}

/// Sizes of `G` contiguous blocks over `c` sorted items: the first `c mod G`
/// blocks get one extra item.
fn block_sizes(c: usize, g: usize) -> Vec<usize> {
    (0..g).map(|r| c / g + usize::from(r < c % g)).collect()
}

/// Builds pseudo-observational units inside every experimental unit.
///
/// `Rank` and `Quantile` need at least `g` observations in each
/// `(eu, time)` cell. `Covariate` needs the named factor to have exactly
/// `g` levels.
pub fn assign_pseudo_units(
    ds: &LongDataset,
    g: usize,
    strategy: GroupingStrategy,
    covariate: Option<&str>,
) -> Result<PseudoUnitAssignment> {
    if g < 1 {
        return Err(Error::Invalid("number of groups must be at least 1".into()));
    }
    let obs = ds.observations();
    let mut groups = vec![0usize; ds.len()];
    match strategy {
        GroupingStrategy::Rank | GroupingStrategy::Quantile => {
            for (e, per_time) in ds.cells().into_iter().enumerate() {
                for (k, mut idx) in per_time.into_iter().enumerate() {
                    let c = idx.len();
                    if c < g {
                        return Err(Error::CellTooSmall {
                            eu: ds.eu_ids()[e].clone(),
                            time: (k + 1) as u32,
                            count: c,
                            needed: g,
                        });
                    }
                    idx.sort_by(|&a, &b| {
                        obs[a]
                            .y
                            .total_cmp(&obs[b].y)
                            .then_with(|| obs[a].obs_id().cmp(obs[b].obs_id()))
                            .then_with(|| obs[a].rep.cmp(&obs[b].rep))
                    });
                    if strategy == GroupingStrategy::Rank {
                        let mut pos = 0;
                        for (r, size) in block_sizes(c, g).into_iter().enumerate() {
                            for &row in &idx[pos..pos + size] {
                                groups[row] = r + 1;
                            }
                            pos += size;
                        }
                    } else {
                        for (i, &row) in idx.iter().enumerate() {
                            let u = (i as f64 + 0.5) / c as f64;
                            groups[row] = ((u * g as f64).ceil() as usize).clamp(1, g);
                        }
                    }
                }
            }
        }
        GroupingStrategy::Covariate => {
            let name = covariate.ok_or_else(|| Error::Invalid("covariate grouping needs a factor name".into()))?;
            let f = ds.factor_index(name).ok_or_else(|| Error::UnknownFactor(name.to_string()))?;
            let levels = ds.factors()[f].n_levels();
            if levels != g {
                return Err(Error::Invalid(format!("factor `{name}` has {levels} levels, expected {g}")));
            }
            for (row, o) in obs.iter().enumerate() {
                groups[row] = o.levels[f] + 1;
            }
        }
        GroupingStrategy::Unit => return assign_by_unit(ds),
    }
    Ok(PseudoUnitAssignment { g, strategy, groups })
}

/// One group per observational unit, numbered in natural `obs` order within
/// each experimental unit. Meant for complete (non-destroyed) panels.
pub fn assign_by_unit(ds: &LongDataset) -> Result<PseudoUnitAssignment> {
    let mut units: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); ds.n_eu()];
    for (row, o) in ds.observations().iter().enumerate() {
        units[ds.eu_index()[row]].insert(o.obs_id(), 0);
    }
    let mut g = 0;
    for map in &mut units {
        let mut ids: Vec<&str> = map.keys().copied().collect();
        ids.sort_by(|a, b| natural_cmp(a, b));
        for (r, id) in ids.into_iter().enumerate() {
            map.insert(id, r + 1);
        }
        g = g.max(map.len());
    }
    let groups = ds
        .observations()
        .iter()
        .enumerate()
        .map(|(row, o)| units[ds.eu_index()[row]][o.obs_id()])
        .collect();
    Ok(PseudoUnitAssignment {
        g,
        strategy: GroupingStrategy::Unit,
        groups,
    })
}

/// Per-(eu, group, time) observation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub g: usize,
    pub eu_ids: Vec<String>,
    /// `counts[eu][group - 1][time - 1]`.
    pub counts: Vec<Vec<Vec<usize>>>,
    /// `(eu, group, time)` cells without observations.
    pub empty: Vec<(String, usize, u32)>,
    /// Some `(eu, time)` cell has groups of different sizes.
    pub unequal: bool,
}

impl BalanceReport {
    pub fn all_present(&self) -> bool {
        self.empty.is_empty()
    }
}

pub fn pseudo_unit_summary(pa: &PseudoUnitAssignment, ds: &LongDataset) -> BalanceReport {
    let t = ds.times() as usize;
    let mut counts = vec![vec![vec![0usize; t]; pa.g]; ds.n_eu()];
    for (row, o) in ds.observations().iter().enumerate() {
        if let Some(&r) = pa.groups.get(row) {
            if (1..=pa.g).contains(&r) {
                counts[ds.eu_index()[row]][r - 1][(o.time - 1) as usize] += 1;
            }
        }
    }
    let mut empty = Vec::new();
    let mut unequal = false;
    for (e, per_group) in counts.iter().enumerate() {
        for k in 0..t {
            let sizes: Vec<usize> = per_group.iter().map(|c| c[k]).collect();
            if sizes.iter().any(|&s| s != sizes[0]) {
                unequal = true;
            }
            for (r, &s) in sizes.iter().enumerate() {
                if s == 0 {
                    empty.push((ds.eu_ids()[e].clone(), r + 1, (k + 1) as u32));
                }
            }
        }
    }
    BalanceReport {
        g: pa.g,
        eu_ids: ds.eu_ids().to_vec(),
        counts,
        empty,
        unequal,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Factor, Observation};

    fn cell(values: &[f64]) -> LongDataset {
        let rows = values
            .iter()
            .enumerate()
            .map(|(j, &y)| Observation {
                eu: "1".into(),
                obs: Some(format!("{j}")),
                time: 1,
                rep: 1,
                levels: vec![],
                y,
            })
            .collect();
        LongDataset::new(Vec::<Factor>::new(), rows).unwrap()
    }

    #[test]
    fn rank_split_of_four() {
        let ds = cell(&[5.0, 1.0, 9.0, 3.0]);
        let pa = assign_pseudo_units(&ds, 2, GroupingStrategy::Rank, None).unwrap();
        assert_eq!(pa.groups, vec![2, 1, 2, 1]);
    }

    #[test]
    fn single_group_is_trivial() {
        let ds = cell(&[5.0, 1.0, 9.0]);
        let pa = assign_pseudo_units(&ds, 1, GroupingStrategy::Rank, None).unwrap();
        assert!(pa.groups.iter().all(|&g| g == 1));
    }

    #[test]
    fn uneven_cells_fill_from_the_bottom() {
        let ds = cell(&[4.0, 3.0, 2.0, 1.0]);
        let pa = assign_pseudo_units(&ds, 3, GroupingStrategy::Rank, None).unwrap();
        assert_eq!(pa.groups, vec![3, 2, 1, 1]);
        let report = pseudo_unit_summary(&pa, &ds);
        assert_eq!(report.counts[0].iter().map(|c| c[0]).collect::<Vec<_>>(), vec![2, 1, 1]);
        assert!(report.unequal);
    }

    #[test]
    fn ties_use_obs_id() {
        let ds = cell(&[2.0, 2.0, 2.0, 2.0]);
        let pa = assign_pseudo_units(&ds, 2, GroupingStrategy::Rank, None).unwrap();
        assert_eq!(pa.groups, vec![1, 1, 2, 2]);
    }

    #[test]
    fn quantile_sizes_differ_by_at_most_one() {
        let ds = cell(&[4.0, 3.0, 2.0, 1.0]);
        let pa = assign_pseudo_units(&ds, 3, GroupingStrategy::Quantile, None).unwrap();
        let report = pseudo_unit_summary(&pa, &ds);
        let sizes: Vec<usize> = report.counts[0].iter().map(|c| c[0]).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 4);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn errors() {
        let ds = cell(&[1.0]);
        assert!(matches!(
            assign_pseudo_units(&ds, 2, GroupingStrategy::Rank, None),
            Err(Error::CellTooSmall { .. })
        ));
        assert!(assign_pseudo_units(&ds, 0, GroupingStrategy::Rank, None).is_err());
        assert_eq!(
            assign_pseudo_units(&ds, 1, GroupingStrategy::Covariate, Some("sex")).unwrap_err(),
            Error::UnknownFactor("sex".into())
        );
    }
}
