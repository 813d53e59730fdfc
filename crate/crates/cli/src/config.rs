//! Run configuration: TOML file layered over a preset, then command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use khorder::problems::{ProblemOptions, RhsMode, DEFAULT_JMAX};
use khorder::theory::SweepKind;
use khorder::training::{AdamConfig, BetaMode, LossKind, TrainConfig};
use khorder::{Activation, ModelSpec, Problem};
use serde::{Deserialize, Serialize};

pub const DEFAULT_PROBLEM: &str = "fit2d_eq41";
pub const OUT_ENV: &str = "KHORDER_OUT";
pub const DEFAULT_OUT_ROOT: &str = "runs";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Reduced scale: jmax 2, 5000 epochs, halved widths.
    Desk,
    /// Full-scale settings: jmax 5, 50000 epochs.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Pinn,
    Horder,
    Khorder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub id: String,
    pub jmax: u32,
    /// Dimension for problems that accept several; the registry default otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub rhs: RhsMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub family: Family,
    pub activation: Activation,
    pub p: usize,
    /// PINN / HOrderDNN hidden layers and width.
    pub depth: usize,
    pub width: usize,
    pub hd: usize,
    pub hw: usize,
    pub gd: usize,
    pub gw: usize,
    pub interval: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr0: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub n_f: usize,
    pub n_b: usize,
    pub rel_every: usize,
    pub chunk: usize,
    pub beta: BetaMode,
    pub adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesSection {
    pub sweep: SweepKind,
    pub sizes: Vec<usize>,
    /// Injected errors, one per size; skips training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errors: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSection {
    pub n: usize,
    pub gammas: Vec<usize>,
}

/// Fully resolved configuration; this is also the manifest format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub threads: usize,
    pub precision: Precision,
    pub problem: ProblemSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub rates: RatesSection,
    pub spectrum: SpectrumSection,
}

/// Full-scale K-HOrderDNN shape, activation and sample sizes per problem.
struct ProblemDefaults {
    p: usize,
    hd: usize,
    hw: usize,
    gd: usize,
    gw: usize,
    activation: Activation,
    n_f: usize,
    n_b: usize,
}

fn problem_defaults(id: &str, d: Option<usize>) -> ProblemDefaults {
    let tanh = |p, hd, hw, gd, gw, n_f, n_b| ProblemDefaults { p, hd, hw, gd, gw, activation: Activation::Tanh, n_f, n_b };
    match id {
        "fit2d_eq41" => ProblemDefaults { activation: Activation::Relu, ..tanh(5, 3, 45, 2, 90, 16_000, 0) },
        "fit_eq43" => {
            let w = match d.unwrap_or(10) {
                d if d <= 10 => 210,
                d if d <= 20 => 205,
                _ => 202,
            };
            ProblemDefaults { activation: Activation::Relu, ..tanh(5, 1, w, 2, w, 35_000, 0) }
        }
        "poisson_lshape" => tanh(5, 3, 90, 3, 90, 6000, 400),
        "poisson_tensor_dD" => {
            let w = if d.unwrap_or(5) <= 5 { 105 } else { 210 };
            tanh(5, 1, w, 2, w, 8000, 2000)
        }
        "poisson_nontensor_dD" => {
            let w = if d.unwrap_or(5) <= 5 { 220 } else { 315 };
            tanh(5, 1, w, 2, w, 8000, 2000)
        }
        id if id.contains("10d") => tanh(5, 1, 210, 2, 210, 8000, 2000),
        _ => tanh(7, 3, 45, 2, 90, 5000, 1000),
    }
}

impl RunConfig {
    /// Preset values for a problem and model family.
    pub fn preset(preset: Preset, problem: &str, d: Option<usize>, family: Family) -> Self {
        let base = problem_defaults(problem, d);
        let (hw, gw) = match preset {
            Preset::Paper => (base.hw, base.gw),
            Preset::Desk => (base.hw.div_ceil(2), base.gw.div_ceil(2)),
        };
        let (epochs, jmax) = match preset {
            Preset::Paper => (50_000, DEFAULT_JMAX),
            Preset::Desk => (5000, 2),
        };
        let defaults = TrainConfig::default();
        RunConfig {
            preset,
            seeds: vec![0],
            out: None,
            threads: 1,
            precision: Precision::F64,
            problem: ProblemSection { id: problem.to_string(), jmax, d, rhs: RhsMode::Analytic },
            model: ModelSection {
                family,
                activation: base.activation,
                p: base.p,
                depth: base.hd + base.gd + 1,
                width: hw.max(gw),
                hd: base.hd,
                hw,
                gd: base.gd,
                gw,
                interval: [0.0, 1.0],
            },
            train: TrainSection {
                epochs,
                lr0: defaults.lr0,
                decay: defaults.decay,
                decay_every: defaults.decay_every,
                n_f: base.n_f,
                n_b: base.n_b,
                rel_every: defaults.rel_every,
                chunk: defaults.chunk,
                beta: defaults.beta_mode,
                adam: defaults.adam,
            },
            rates: RatesSection { sweep: SweepKind::VaryN, sizes: vec![5, 15, 30], errors: None },
            spectrum: SpectrumSection { n: 100, gammas: vec![2, 4, 8, 16] },
        }
    }

    /// Parses a config text over its preset. `preset` and `problem` override the file.
    pub fn from_toml(text: &str, preset: Option<Preset>, problem: Option<&str>) -> Result<Self> {
        let mut file: toml::Table = text.parse().context("config is not valid TOML")?;
        if let Some(id) = problem {
            let section = file.entry("problem").or_insert_with(|| toml::Value::Table(Default::default()));
            section.as_table_mut().context("`problem` must be a table")?.insert("id".into(), id.into());
        }
        let lookup = |section: &str, key: &str| file.get(section).and_then(|s| s.get(key)).cloned();
        let preset = match preset {
            Some(p) => p,
            None => match file.get("preset") {
                Some(v) => v.clone().try_into().context("preset must be \"desk\" or \"paper\"")?,
                None => Preset::Desk,
            },
        };
        let problem = match lookup("problem", "id") {
            Some(v) => v.as_str().context("problem.id must be a string")?.to_string(),
            None => DEFAULT_PROBLEM.to_string(),
        };
        let d = match lookup("problem", "d") {
            Some(v) => Some(v.try_into::<usize>().context("problem.d must be a positive integer")?),
            None => None,
        };
        let family = match lookup("model", "family") {
            Some(v) => v.try_into().context("model.family must be pinn, horder or khorder")?,
            None => Family::Khorder,
        };
        let mut merged = toml::Table::try_from(Self::preset(preset, &problem, d, family))?;
        merge(&mut merged, file);
        merged.insert("preset".into(), toml::Value::try_from(preset)?);
        let config: RunConfig = merged.try_into().context("invalid configuration")?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, preset: Option<Preset>, problem: Option<&str>) -> Result<Self> {
        let text = match path {
            Some(path) => std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?,
            None => String::new(),
        };
        Self::from_toml(&text, preset, problem)
    }

    fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if let Some(errors) = &self.rates.errors {
            if errors.len() != self.rates.sizes.len() {
                bail!("rates.errors needs one value per size ({} sizes, {} errors)", self.rates.sizes.len(), errors.len());
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let opts = ProblemOptions { jmax: Some(self.problem.jmax), d: self.problem.d, rhs_mode: self.problem.rhs };
        Ok(Problem::from_id(&self.problem.id, opts)?)
    }

    pub fn model_spec(&self, d: usize) -> ModelSpec {
        let m = &self.model;
        let spec = match m.family {
            Family::Pinn => ModelSpec::pinn(d, m.depth, m.width, m.activation),
            Family::Horder => ModelSpec::horder(m.p, d, m.depth, m.width, m.activation),
            Family::Khorder => ModelSpec::khorder(m.p, d, m.hd, m.hw, m.gd, m.gw, m.activation),
        };
        spec.with_interval(m.interval[0], m.interval[1])
    }

    pub fn train_config(&self, problem: &Problem, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            lr0: t.lr0,
            decay: t.decay,
            decay_every: t.decay_every,
            n_f: t.n_f,
            n_b: if problem.is_fit() { 0 } else { t.n_b },
            beta_mode: t.beta,
            adam: t.adam,
            seed,
            loss_kind: LossKind::for_problem(problem),
            threads: self.threads,
            chunk: t.chunk,
            rel_every: t.rel_every,
        }
    }

    /// Output directory: explicit setting, else `$KHORDER_OUT/<problem>`.
    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let root = std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUT_ROOT.into());
            root.join(&self.problem.id)
        })
    }
}

/// Recursive table overlay; `over` wins on conflicts.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if key != "beta" => merge(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_desk_preset() {
        let c = RunConfig::from_toml("", None, None).unwrap();
        assert_eq!(c, RunConfig::preset(Preset::Desk, DEFAULT_PROBLEM, None, Family::Khorder));
        assert_eq!((c.problem.jmax, c.train.epochs, c.model.hw, c.model.gw), (2, 5000, 23, 45));
    }

    #[test]
    fn paper_preset_values() {
        let c = RunConfig::from_toml("preset = \"paper\"\n[problem]\nid = \"poisson2d_sin8\"", None, None).unwrap();
        assert_eq!((c.train.epochs, c.train.lr0, c.train.decay, c.train.decay_every), (50_000, 4e-3, 0.9, 1000));
        assert_eq!((c.train.n_f, c.train.n_b), (5000, 1000));
        assert_eq!((c.model.hd, c.model.hw, c.model.gd, c.model.gw), (3, 45, 2, 90));
        assert_eq!((c.model.depth, c.model.width), (6, 90));
    }

    #[test]
    fn file_overrides_preset_and_flag_overrides_file() {
        let text = "preset = \"paper\"\nseeds = [1, 2]\n[train]\nepochs = 7\n[model]\nfamily = \"pinn\"\nwidth = 12";
        let c = RunConfig::from_toml(text, None, None).unwrap();
        assert_eq!((c.train.epochs, c.train.lr0, c.model.width, c.seeds.clone()), (7, 4e-3, 12, vec![1, 2]));
        assert_eq!(c.model.family, Family::Pinn);
        let c = RunConfig::from_toml(text, Some(Preset::Desk), None).unwrap();
        assert_eq!((c.preset, c.problem.jmax), (Preset::Desk, 2));
    }

    #[test]
    fn beta_table_is_replaced_whole() {
        let c = RunConfig::from_toml("[train.beta]\nmode = \"fixed\"\nbeta = 10000.0", None, None).unwrap();
        assert_eq!(c.train.beta, BetaMode::Fixed { beta: 1e4 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[train]\nepoch = 3", "[model]\nwidht = 3", "[extra]\na = 1", "[train.adam]\nbeta3 = 0.5"] {
            assert!(RunConfig::from_toml(text, None, None).is_err(), "{text}");
        }
        assert!(RunConfig::from_toml("seeds = []", None, None).is_err());
        assert!(RunConfig::from_toml("[rates]\nsizes = [1, 2]\nerrors = [0.1]", None, None).is_err());
    }

    #[test]
    fn manifest_round_trips() {
        let text = "seeds = [3]\nout = \"somewhere\"\n[problem]\nid = \"fit_eq43\"\nd = 20\n[rates]\nsizes = [2, 4, 8]\nerrors = [1.0, 0.5, 0.25]";
        let c = RunConfig::from_toml(text, None, None).unwrap();
        assert_eq!(c.model.hw, 103);
        let again = RunConfig::from_toml(&c.to_toml().unwrap(), None, None).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn problem_override_follows_presets() {
        let c = RunConfig::from_toml("[problem]\nid = \"fit2d_eq41\"", None, Some("poisson_lshape")).unwrap();
        assert_eq!((c.problem.id.as_str(), c.train.n_b, c.model.gd), ("poisson_lshape", 400, 3));
    }

    #[test]
    fn desk_widths_halve_up() {
        let c = RunConfig::preset(Preset::Desk, "poisson_lshape", None, Family::Khorder);
        assert_eq!((c.model.hw, c.model.gw, c.model.width), (45, 45, 45));
    }
}
