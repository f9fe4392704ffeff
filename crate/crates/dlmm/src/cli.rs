//! Command-line surface: `simulate`, `group`, `fit`, `anova`, `manova`,
//! `compare` and `diagnose`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dlmm_core::anova::{anova_deaton, anova_fixed, anova_proposed};
use dlmm_core::data::TIME;
use dlmm_core::diagnostics::{diagnose, DEFAULT_BINS};
use dlmm_core::experiments::{Protocol, ScenarioGrid, Sweep, DEFAULT_REPS};
use dlmm_core::grouping::assign_pseudo_units;
use dlmm_core::manova::{build_manova_responses, manova_all};
use dlmm_core::models::{fit_model, model_design, ModelKind};
use dlmm_core::simulate::{destructive_sample, simulate_complete};
use dlmm_core::{Criterion, GroupingStrategy, Hypothesis, LongDataset, PseudoUnitAssignment, Term};

use crate::error::{Error, Result};
use crate::io::{assignment_csv, dataset_csv, load_config, load_csv, to_json, write_atomic, Schema};
use crate::report::{fit_report, manova_csv, manova_text, write_comparison, write_diagnostics};
use crate::run::run_parallel;

#[derive(Debug, Parser)]
#[command(name = "dlmm", version, about = "Mixed models for longitudinal data with destructive sampling")]
pub struct Cli {
    /// Worker threads for replicate execution [default: all cores]
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Report progress and written files on standard error
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a panel and write its destructive sample as long-format CSV
    Simulate(SimulateArgs),
    /// Form pseudo-observational units and write the assignment CSV
    Group(GroupArgs),
    /// Fit one model and write coefficients and variance components as JSON
    Fit(FitArgs),
    /// Balanced ANOVA table of the fixed, Deaton or proposed model
    Anova(AnovaArgs),
    /// Repeated-measures MANOVA over pseudo-unit trajectories
    Manova(ManovaArgs),
    /// Monte Carlo comparison of the models over a parameter sweep
    Compare(CompareArgs),
    /// Residual correlograms and normality/equal-variance tests of a fit
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Long-format CSV input
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Experimental-unit column
    #[arg(long, default_value = "eu", value_name = "NAME")]
    pub eu_col: String,
    /// Observational-unit column (optional in the file)
    #[arg(long, default_value = "obs", value_name = "NAME")]
    pub obs_col: String,
    /// Time column, integers 1..t
    #[arg(long, default_value = "time", value_name = "NAME")]
    pub time_col: String,
    /// Replicate column (optional in the file)
    #[arg(long, default_value = "rep", value_name = "NAME")]
    pub rep_col: String,
    /// Response column
    #[arg(long, default_value = "y", value_name = "NAME")]
    pub y_col: String,
    /// Comma-separated factor columns [default: every other column]
    #[arg(long, value_delimiter = ',', value_name = "NAMES")]
    pub factors: Option<Vec<String>>,
    /// Reject units measured at more than one time
    #[arg(long)]
    pub destructive: bool,
}

impl InputArgs {
    fn schema(&self) -> Schema {
        Schema {
            eu: self.eu_col.clone(),
            obs: self.obs_col.clone(),
            time: self.time_col.clone(),
            rep: self.rep_col.clone(),
            y: self.y_col.clone(),
            factors: self.factors.clone(),
        }
    }

    fn load(&self) -> Result<LongDataset> {
        load_csv(&self.input, &self.schema(), self.destructive)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Rank,
    Quantile,
    Covariate,
    Unit,
}

impl From<StrategyArg> for GroupingStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Rank => GroupingStrategy::Rank,
            StrategyArg::Quantile => GroupingStrategy::Quantile,
            StrategyArg::Covariate => GroupingStrategy::Covariate,
            StrategyArg::Unit => GroupingStrategy::Unit,
        }
    }
}

#[derive(Debug, Args)]
pub struct GroupingArgs {
    /// Pseudo-observational units per experimental unit
    #[arg(long, default_value_t = 2, value_name = "G")]
    pub groups: usize,
    /// How units are grouped inside each experimental unit
    #[arg(long, value_enum, default_value_t = StrategyArg::Rank)]
    pub strategy: StrategyArg,
    /// Factor whose levels define the groups (covariate strategy)
    #[arg(long, value_name = "NAME")]
    pub covariate: Option<String>,
}

impl GroupingArgs {
    fn assign(&self, ds: &LongDataset) -> Result<PseudoUnitAssignment> {
        Ok(assign_pseudo_units(
            ds,
            self.groups,
            self.strategy.into(),
            self.covariate.as_deref(),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Fixed,
    Deaton,
    Proposed,
    #[value(name = "randint")]
    RandInt,
    Manova,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Fixed => ModelKind::Fixed,
            ModelArg::Deaton => ModelKind::Deaton,
            ModelArg::Proposed => ModelKind::Proposed,
            ModelArg::RandInt => ModelKind::RandInt,
            ModelArg::Manova => ModelKind::Manova,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CriterionArg {
    Reml,
    Ml,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Reml => Criterion::Reml,
            CriterionArg::Ml => Criterion::Ml,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Text,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation config JSON
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Output CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Seed overriding the config's
    #[arg(long, env = "DLMM_SEED")]
    pub seed: Option<u64>,
    /// Write the complete panel instead of the destructive sample
    #[arg(long)]
    pub complete: bool,
}

#[derive(Debug, Args)]
pub struct GroupArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Output assignment CSV (eu,time,obs,group)
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model to fit
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Variance-component criterion
    #[arg(long, value_enum, default_value_t = CriterionArg::Reml)]
    pub criterion: CriterionArg,
    /// Fixed terms such as `A+T+A:T`, or `1` for intercept only [default:
    /// every factor, T and each factor:T; intercept only without factors]
    #[arg(long, value_name = "TERMS")]
    pub formula: Option<String>,
    /// Output JSON
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnovaModelArg {
    Fixed,
    Deaton,
    Proposed,
}

#[derive(Debug, Args)]
pub struct AnovaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model whose table is computed
    #[arg(long, value_enum)]
    pub model: AnovaModelArg,
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Output format
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    pub format: TableFormat,
    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ManovaArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Terms tested, as in `fit`
    #[arg(long, value_name = "TERMS")]
    pub formula: Option<String>,
    /// Output format
    #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
    pub format: TableFormat,
    /// Output file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Base simulation config JSON
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Swept parameter and values, e.g. `dAT=0,0.5,1`; `dA`, `dT` or `dAT`
    /// alone uses the default grid
    #[arg(long, default_value = "dAT", value_name = "PARAM[=V,...]")]
    pub sweep: String,
    /// Replicates per scenario
    #[arg(long, default_value_t = DEFAULT_REPS, value_name = "N")]
    pub reps: usize,
    /// Hypotheses tested: 1 = A:T, 2 = A, 3 = T [default: the one matching the sweep]
    #[arg(long, value_delimiter = ',', value_name = "H")]
    pub hypothesis: Vec<u8>,
    /// Skip the MSE comparison
    #[arg(long)]
    pub no_mse: bool,
    /// Skip the fits at the true variance components
    #[arg(long)]
    pub no_truth: bool,
    /// Seed overriding the config's
    #[arg(long, env = "DLMM_SEED")]
    pub seed: Option<u64>,
    /// Variance-component criterion
    #[arg(long, value_enum, default_value_t = CriterionArg::Reml)]
    pub criterion: CriterionArg,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DiagnoseModelArg {
    Proposed,
    #[value(name = "randint")]
    RandInt,
    Fixed,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model whose residuals are checked
    #[arg(long, value_enum, default_value_t = DiagnoseModelArg::Proposed)]
    pub model: DiagnoseModelArg,
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Variance-component criterion
    #[arg(long, value_enum, default_value_t = CriterionArg::Reml)]
    pub criterion: CriterionArg,
    /// Fixed terms, as in `fit`
    #[arg(long, value_name = "TERMS")]
    pub formula: Option<String>,
    /// Largest lag [default: min(t-1, 10 log10 t)]
    #[arg(long, value_name = "H")]
    pub max_lag: Option<usize>,
    /// Random bins for Bartlett's test
    #[arg(long, default_value_t = DEFAULT_BINS, value_name = "N")]
    pub bins: usize,
    /// Seed of the random binning
    #[arg(long, env = "DLMM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// Every factor, `T` and each factor-by-time interaction; intercept only
/// when the dataset has no factor columns.
pub fn default_formula(ds: &LongDataset) -> Vec<Term> {
    let names: Vec<&str> = ds.factors().iter().map(|f| f.name.as_str()).collect();
    if names.is_empty() {
        return Vec::new();
    }
    let mut terms: Vec<Term> = names.iter().map(|f| Term::new(&[f])).collect();
    terms.push(Term::new(&[TIME]));
    terms.extend(names.iter().map(|f| Term::new(&[f, &TIME])));
    terms
}

fn formula(text: Option<&str>, ds: &LongDataset) -> Result<Vec<Term>> {
    match text {
        Some(s) => Ok(Term::parse_formula(s)?),
        None => Ok(default_formula(ds)),
    }
}

fn written(verbose: bool, path: &Path) {
    if verbose {
        eprintln!("wrote {}", path.display());
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let v = cli.verbose;
    match &cli.command {
        Command::Simulate(a) => {
            let mut cfg = load_config(&a.config)?;
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            let complete = simulate_complete(&cfg)?;
            let ds = if a.complete {
                complete
            } else {
                destructive_sample(&complete, cfg.k, cfg.seed)?
            };
            write_atomic(&a.out, dataset_csv(&ds).as_bytes())?;
            written(v, &a.out);
        }
        Command::Group(a) => {
            let ds = a.input.load()?;
            let pa = a.grouping.assign(&ds)?;
            write_atomic(&a.out, assignment_csv(&ds, &pa).as_bytes())?;
            written(v, &a.out);
        }
        Command::Fit(a) => {
            let ds = a.input.load()?;
            let kind = ModelKind::from(a.model);
            let terms = formula(a.formula.as_deref(), &ds)?;
            let pa = if kind.needs_grouping() {
                Some(a.grouping.assign(&ds)?)
            } else {
                None
            };
            let criterion = a.criterion.into();
            let fit = fit_model(kind, &ds, &terms, pa.as_ref(), criterion)?;
            let design = model_design(kind, &ds, &terms, pa.as_ref())?;
            let report = fit_report(&ds, &fit, design.as_ref(), &terms, criterion, pa.map(|p| p.g))?;
            write_atomic(&a.out, to_json(&report).as_bytes())?;
            written(v, &a.out);
        }
        Command::Anova(a) => {
            let ds = a.input.load()?;
            let table = match a.model {
                AnovaModelArg::Fixed => anova_fixed(&ds)?,
                AnovaModelArg::Deaton => anova_deaton(&ds)?,
                AnovaModelArg::Proposed => anova_proposed(&ds, &a.grouping.assign(&ds)?)?,
            };
            let text = match a.format {
                TableFormat::Csv => table.to_csv(),
                TableFormat::Text => table.to_string(),
            };
            write_atomic(&a.out, text.as_bytes())?;
            written(v, &a.out);
        }
        Command::Manova(a) => {
            let ds = a.input.load()?;
            let pa = a.grouping.assign(&ds)?;
            let terms = formula(a.formula.as_deref(), &ds)?;
            let mr = build_manova_responses(&ds, &pa)?;
            let results = manova_all(&mr, &terms)?;
            let text = match a.format {
                TableFormat::Csv => manova_csv(&results),
                TableFormat::Text => manova_text(&results),
            };
            write_atomic(&a.out, text.as_bytes())?;
            written(v, &a.out);
        }
        Command::Compare(a) => {
            let mut base = load_config(&a.config)?;
            if let Some(seed) = a.seed {
                base.seed = seed;
            }
            let sweep = Sweep::parse(&a.sweep)?;
            let hypotheses = if a.hypothesis.is_empty() {
                vec![sweep.parameter.hypothesis()]
            } else {
                a.hypothesis
                    .iter()
                    .map(|&h| {
                        Hypothesis::from_index(h)
                            .ok_or_else(|| Error::Usage(format!("unknown hypothesis {h}; use 1, 2 or 3")))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let protocol = Protocol {
                mse: !a.no_mse,
                truth: !a.no_truth,
                hypotheses,
            };
            let mut grid = ScenarioGrid::new(base, sweep, a.reps);
            grid.criterion = a.criterion.into();
            if v {
                eprintln!(
                    "running {} scenarios x {} replicates",
                    grid.n_scenarios(),
                    grid.reps
                );
            }
            let report = run_parallel(&grid, &protocol, cli.threads)?;
            for name in write_comparison(&a.out, &report)? {
                written(v, &a.out.join(name));
            }
            if v && !report.failures.is_empty() {
                eprintln!("{} replicate steps failed; see report.json", report.failures.len());
            }
        }
        Command::Diagnose(a) => {
            let ds = a.input.load()?;
            let kind = match a.model {
                DiagnoseModelArg::Proposed => ModelKind::Proposed,
                DiagnoseModelArg::RandInt => ModelKind::RandInt,
                DiagnoseModelArg::Fixed => ModelKind::Fixed,
            };
            let terms = formula(a.formula.as_deref(), &ds)?;
            let pa = a.grouping.assign(&ds)?;
            let fit = fit_model(kind, &ds, &terms, Some(&pa), a.criterion.into())?;
            let fm = fit.lmm.as_ref().expect("observation-level models carry a mixed-model fit");
            let d = diagnose(fm, &ds, &pa, a.max_lag, a.bins, a.seed)?;
            write_diagnostics(&a.out, &d)?;
            written(v, &a.out);
        }
    }
    Ok(())
}
