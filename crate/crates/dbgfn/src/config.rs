//! Experiment configuration files.
//!
//! Configs are TOML. Every section is optional except `[env]` and
//! `[env.reward]`; unknown keys are errors. Options for a search mode may
//! only appear when that mode is selected.
//!
//! ```toml
//! seed = 0
//! out_dir = "runs/motif"
//!
//! [env]
//! vocab_size = 4
//! seq_len = 8
//! mode_threshold = 4.0        # optional, see below
//!
//! [env.reward]
//! kind = "motif"              # "motif" | "separable" | "table"
//! count = 8
//!
//! [train]
//! objective = "tb"            # "tb" | "db" | "maxent"
//! batch_size = 32
//! rounds = 2000
//!
//! [search]
//! mode = "dbgfn"              # "none" | "ls" | "dbgfn"
//! tg = 20.0
//! choose = "reward"           # "reward" | "pearson" | "mh"
//! ```
//!
//! When `mode_threshold` is omitted it defaults to the smallest in-motif
//! reward for `motif`, and otherwise to the reward at the 98th percentile
//! of the enumerated terminals.

use std::fs;
use std::path::{Path, PathBuf};

use dbgfn_core::backtrack::AffineRescale;
use dbgfn_core::env::{
    MotifParams, MotifReward, SeparableParams, SeparableReward, DEFAULT_ENUMERATION_CAP, DEFAULT_REWARD_FLOOR,
};
use dbgfn_core::policy::BackwardMode;
use dbgfn_core::train::ReplayConfig;
use dbgfn_core::{
    AdamConfig, BacktrackConfig, ChooseRule, EnvSpec, LsConfig, LsFilter, ObjectiveKind, PolicyConfig, RewardSource,
    SearchMode, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::table::{load_reward_table, SymbolMap, DNA};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Write `checkpoint.json` next to the metrics.
    #[serde(default = "yes")]
    pub checkpoint: bool,
    pub env: EnvSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub replay: ReplaySection,
    /// Directory relative table paths resolve against; set by [`Self::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub vocab_size: usize,
    pub seq_len: usize,
    #[serde(default = "default_floor")]
    pub reward_floor: f64,
    #[serde(default = "default_cap")]
    pub enumeration_cap: u64,
    #[serde(default)]
    pub mode_threshold: Option<f64>,
    pub reward: RewardSection,
}

fn default_floor() -> f64 {
    DEFAULT_REWARD_FLOOR
}

fn default_cap() -> u64 {
    DEFAULT_ENUMERATION_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RewardSection {
    Motif(MotifSection),
    Separable(SeparableSection),
    Table(TableSection),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotifSection {
    pub count: usize,
    pub base: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
    pub radius_min: usize,
    pub radius_max: usize,
    pub seed: u64,
}

impl Default for MotifSection {
    fn default() -> Self {
        let p = MotifParams::default();
        Self {
            count: p.count,
            base: p.base,
            amplitude_min: p.amplitude_min,
            amplitude_max: p.amplitude_max,
            radius_min: p.radius_min,
            radius_max: p.radius_max,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparableSection {
    pub weight_min: f64,
    pub weight_max: f64,
    pub seed: u64,
}

impl Default for SeparableSection {
    fn default() -> Self {
        let p = SeparableParams::default();
        Self {
            weight_min: p.weight_min,
            weight_max: p.weight_max,
            seed: p.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableSection {
    pub path: PathBuf,
    /// Symbol `i` is token `i`; the alphabet size must equal `vocab_size`.
    #[serde(default = "dna")]
    pub symbols: String,
}

fn dna() -> String {
    DNA.into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardName {
    Uniform,
    Learned,
}

impl From<BackwardMode> for BackwardName {
    fn from(m: BackwardMode) -> Self {
        match m {
            BackwardMode::Uniform => Self::Uniform,
            BackwardMode::Learned => Self::Learned,
        }
    }
}

impl From<BackwardName> for BackwardMode {
    fn from(m: BackwardName) -> Self {
        match m {
            BackwardName::Uniform => Self::Uniform,
            BackwardName::Learned => Self::Learned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub hidden_units: usize,
    pub hidden_layers: usize,
    pub backward: BackwardName,
}

impl Default for PolicySection {
    fn default() -> Self {
        let p = PolicyConfig::default();
        Self {
            hidden_units: p.hidden_units,
            hidden_layers: p.hidden_layers,
            backward: p.backward.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    pub lr: f64,
    /// Defaults to ten times `lr`.
    pub log_z_lr: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            lr: a.lr,
            log_z_lr: a.log_z_lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveName {
    Tb,
    Db,
    Maxent,
}

impl From<ObjectiveName> for ObjectiveKind {
    fn from(o: ObjectiveName) -> Self {
        match o {
            ObjectiveName::Tb => Self::Tb,
            ObjectiveName::Db => Self::Db,
            ObjectiveName::Maxent => Self::MaxEnt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub objective: ObjectiveName,
    pub batch_size: usize,
    pub rounds: u64,
    pub eval_every: u64,
    pub eval_batch: usize,
    pub topk: usize,
    /// Stop early once training has spent this many reward evaluations.
    pub reward_budget: Option<u64>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            objective: ObjectiveName::Tb,
            batch_size: t.batch_size,
            rounds: t.rounds,
            eval_every: t.eval_every,
            eval_batch: t.eval_batch,
            topk: t.topk,
            reward_budget: t.reward_budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChooseName {
    Reward,
    Pearson,
    Mh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterName {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SearchSection {
    None(NoSearch),
    Ls(LsSection),
    Dbgfn(DbgfnSection),
}

impl Default for SearchSection {
    fn default() -> Self {
        Self::None(NoSearch {})
    }
}

/// `mode = "none"` takes no options.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoSearch {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LsSection {
    pub k_steps: usize,
    pub iterations: usize,
    pub filter: FilterName,
}

impl Default for LsSection {
    fn default() -> Self {
        let ls = LsConfig::default();
        Self {
            k_steps: ls.k_steps,
            iterations: ls.iterations,
            filter: match ls.filter {
                LsFilter::Deterministic => FilterName::Deterministic,
                LsFilter::Stochastic => FilterName::Stochastic,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbgfnSection {
    pub tg: f64,
    pub s_max: usize,
    pub s_min: usize,
    pub t_max: f64,
    pub t_min: f64,
    pub choose: ChooseName,
    /// Rewards are mapped through `scale * r + offset` before the schedule.
    pub rescale_scale: Option<f64>,
    pub rescale_offset: Option<f64>,
}

impl Default for DbgfnSection {
    fn default() -> Self {
        let b = BacktrackConfig::default();
        Self {
            tg: b.tg,
            s_max: b.s_max,
            s_min: b.s_min,
            t_max: b.t_max,
            t_min: b.t_min,
            choose: match b.choose {
                ChooseRule::Reward => ChooseName::Reward,
                ChooseRule::Pearson => ChooseName::Pearson,
                ChooseRule::MetropolisHastings => ChooseName::Mh,
            },
            rescale_scale: None,
            rescale_offset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub enabled: bool,
    pub capacity: usize,
    pub fraction: f64,
    pub exponent: f64,
}

impl Default for ReplaySection {
    fn default() -> Self {
        let r = ReplayConfig::default();
        Self {
            enabled: r.enabled,
            capacity: r.capacity,
            fraction: r.fraction,
            exponent: r.exponent,
        }
    }
}

/// A validated config: the environment plus everything the trainer needs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub env: EnvSpec,
    pub train: TrainConfig,
}

fn invalid(e: impl std::fmt::Display) -> Error {
    Error::ConfigInvalid(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(invalid)
    }

    /// Parse `path`; relative table paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(invalid)
    }

    pub fn build_env(&self) -> Result<EnvSpec> {
        let e = &self.env;
        let (v, l) = (e.vocab_size, e.seq_len);
        let source = match &e.reward {
            RewardSection::Motif(m) => {
                let p = MotifParams {
                    count: m.count,
                    base: m.base,
                    amplitude_min: m.amplitude_min,
                    amplitude_max: m.amplitude_max,
                    radius_min: m.radius_min,
                    radius_max: m.radius_max,
                    seed: m.seed,
                };
                RewardSource::Motif(MotifReward::generate(v, l, &p).map_err(invalid)?)
            }
            RewardSection::Separable(s) => {
                let p = SeparableParams {
                    weight_min: s.weight_min,
                    weight_max: s.weight_max,
                    seed: s.seed,
                };
                RewardSource::Separable(SeparableReward::generate(v, l, &p).map_err(invalid)?)
            }
            RewardSection::Table(t) => {
                let symbols = SymbolMap::new(&t.symbols)?;
                if symbols.len() != v {
                    return Err(Error::ConfigInvalid(format!(
                        "alphabet {:?} has {} symbols but vocab_size is {v}",
                        t.symbols,
                        symbols.len()
                    )));
                }
                RewardSource::Table(load_reward_table(&self.base_dir.join(&t.path), l, &symbols)?)
            }
        };
        EnvSpec::new(v, l, source)
            .and_then(|env| env.with_reward_floor(e.reward_floor))
            .map(|env| env.with_enumeration_cap(e.enumeration_cap))
            .map_err(invalid)
    }

    fn mode_threshold(&self, env: &EnvSpec) -> Result<f64> {
        if let Some(t) = self.env.mode_threshold {
            return if t.is_finite() && t >= 0.0 {
                Ok(t)
            } else {
                Err(Error::ConfigInvalid("mode_threshold must be finite and >= 0".into()))
            };
        }
        if let RewardSection::Motif(m) = &self.env.reward {
            return Ok(m.base + m.amplitude_min + env.reward_floor());
        }
        let mut rewards = env.all_rewards().map_err(|_| {
            Error::ConfigInvalid("mode_threshold is required when the space is too large to enumerate".into())
        })?;
        rewards.sort_by(f64::total_cmp);
        let at = ((rewards.len() as f64) * 0.98) as usize;
        Ok(rewards[at.min(rewards.len() - 1)])
    }

    pub fn train_config(&self, env: &EnvSpec) -> Result<TrainConfig> {
        let search = match &self.search {
            SearchSection::None(_) => SearchMode::None,
            SearchSection::Ls(ls) => SearchMode::LocalSearch(LsConfig {
                k_steps: ls.k_steps,
                iterations: ls.iterations,
                filter: match ls.filter {
                    FilterName::Deterministic => LsFilter::Deterministic,
                    FilterName::Stochastic => LsFilter::Stochastic,
                },
            }),
            SearchSection::Dbgfn(d) => SearchMode::DbGfn(BacktrackConfig {
                tg: d.tg,
                s_max: d.s_max,
                s_min: d.s_min,
                t_max: d.t_max,
                t_min: d.t_min,
                choose: match d.choose {
                    ChooseName::Reward => ChooseRule::Reward,
                    ChooseName::Pearson => ChooseRule::Pearson,
                    ChooseName::Mh => ChooseRule::MetropolisHastings,
                },
                schedule_rescale: match (d.rescale_scale, d.rescale_offset) {
                    (None, None) => None,
                    (scale, offset) => Some(AffineRescale {
                        scale: scale.unwrap_or(1.0),
                        offset: offset.unwrap_or(0.0),
                    }),
                },
            }),
        };
        let o = &self.optimizer;
        let t = &self.train;
        let cfg = TrainConfig {
            objective: t.objective.into(),
            search,
            policy: PolicyConfig {
                hidden_units: self.policy.hidden_units,
                hidden_layers: self.policy.hidden_layers,
                backward: self.policy.backward.into(),
                ..PolicyConfig::default()
            },
            optimizer: AdamConfig {
                lr: o.lr,
                log_z_lr: o.log_z_lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            replay: ReplayConfig {
                enabled: self.replay.enabled,
                capacity: self.replay.capacity,
                fraction: self.replay.fraction,
                exponent: self.replay.exponent,
            },
            batch_size: t.batch_size,
            rounds: t.rounds,
            eval_every: t.eval_every,
            eval_batch: t.eval_batch,
            seed: self.seed,
            mode_threshold: self.mode_threshold(env)?,
            topk: t.topk,
            reward_budget: t.reward_budget,
        };
        cfg.validate(env).map_err(invalid)?;
        if self.replay.enabled && self.replay.capacity == 0 {
            return Err(Error::ConfigInvalid("replay capacity must be positive".into()));
        }
        if !(o.beta1 >= 0.0 && o.beta1 < 1.0 && o.beta2 >= 0.0 && o.beta2 < 1.0 && o.eps > 0.0) {
            return Err(Error::ConfigInvalid(
                "Adam betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        Ok(cfg)
    }

    pub fn build(&self) -> Result<Experiment> {
        let env = self.build_env()?;
        let train = self.train_config(&env)?;
        Ok(Experiment { env, train })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [env]
        vocab_size = 4
        seq_len = 8
        [env.reward]
        kind = "motif"
    "#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str(MINIMAL).unwrap();
        let exp = cfg.build().unwrap();
        assert_eq!(exp.train.batch_size, 32);
        assert_eq!(exp.train.rounds, 2000);
        assert_eq!(exp.train.eval_every, 10);
        assert_eq!(exp.train.eval_batch, 128);
        assert_eq!(exp.train.search, SearchMode::None);
        assert_eq!(exp.train.objective, ObjectiveKind::Tb);
        assert_eq!(exp.env.num_terminals(), 65_536);
        let share = exp
            .env
            .all_rewards()
            .unwrap()
            .iter()
            .filter(|&&r| r >= exp.train.mode_threshold)
            .count() as f64
            / 65_536.0;
        assert!((0.01..=0.05).contains(&share), "{share}");
    }

    #[test]
    fn unknown_keys_are_errors() {
        let typo = format!("{MINIMAL}\n[train]\nbatch_sise = 8\n");
        assert!(matches!(
            ExperimentConfig::from_toml_str(&typo),
            Err(Error::ConfigInvalid(_))
        ));
        let top = format!("sed = 1\n{MINIMAL}");
        assert!(ExperimentConfig::from_toml_str(&top).is_err());
        let reward = MINIMAL.replace("kind = \"motif\"", "kind = \"motif\"\nradius = 2");
        assert!(ExperimentConfig::from_toml_str(&reward).is_err());
    }

    #[test]
    fn search_options_only_for_their_mode() {
        let ok = format!("{MINIMAL}\n[search]\nmode = \"dbgfn\"\ntg = 2.0\nchoose = \"mh\"\n");
        let exp = ExperimentConfig::from_toml_str(&ok).unwrap().build().unwrap();
        match exp.train.search {
            SearchMode::DbGfn(b) => {
                assert_eq!(b.tg, 2.0);
                assert_eq!(b.choose, ChooseRule::MetropolisHastings);
                assert_eq!(b.s_max, 6);
            }
            other => panic!("{other:?}"),
        }
        let mixed = format!("{MINIMAL}\n[search]\nmode = \"ls\"\ntg = 2.0\n");
        assert!(ExperimentConfig::from_toml_str(&mixed).is_err());
        let none = format!("{MINIMAL}\n[search]\nmode = \"none\"\nk_steps = 2\n");
        assert!(ExperimentConfig::from_toml_str(&none).is_err());
    }

    #[test]
    fn out_of_range_values_rejected() {
        for extra in [
            "[train]\nbatch_size = 0\n",
            "[replay]\nfraction = 1.5\n",
            "[search]\nmode = \"dbgfn\"\ns_max = 9\n",
            "[search]\nmode = \"dbgfn\"\nt_min = 6.0\n",
            "[optimizer]\nbeta1 = 1.0\n",
        ] {
            let cfg = ExperimentConfig::from_toml_str(&format!("{MINIMAL}\n{extra}")).unwrap();
            assert!(matches!(cfg.build(), Err(Error::ConfigInvalid(_))), "{extra}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg =
            ExperimentConfig::from_toml_str(&format!("{MINIMAL}\n[search]\nmode = \"ls\"\nk_steps = 3\n")).unwrap();
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn separable_threshold_is_top_two_percent() {
        let text = "[env]\nvocab_size = 4\nseq_len = 6\n[env.reward]\nkind = \"separable\"\n";
        let exp = ExperimentConfig::from_toml_str(text).unwrap().build().unwrap();
        let n = exp
            .env
            .all_rewards()
            .unwrap()
            .iter()
            .filter(|&&r| r >= exp.train.mode_threshold)
            .count();
        assert_eq!(n, 4096 - (4096.0f64 * 0.98) as usize);
    }
}
