//! Run configuration: a JSON file overlaid with command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use mmqo_core::cost::{Catalog, CostParams};
use mmqo_core::gcd::{DEFAULT_ITERATION_CAP, DEFAULT_K, DEFAULT_TOLERANCE};
use mmqo_core::llm::{ChatClient, ChatClientConfig, HttpChatClient};
use mmqo_core::monitor::{Lexicon, PhraseMatcher};
use mmqo_core::workload::{demo_catalog, SimProfile, DEFAULT_JITTER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Gcd,
    GcdLite,
    GcdAgg,
    GcdLiteAgg,
    Greedy,
    Exhaustive,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Gcd => "gcd",
            Method::GcdLite => "gcd-lite",
            Method::GcdAgg => "gcd-agg",
            Method::GcdLiteAgg => "gcd-lite-agg",
            Method::Greedy => "greedy",
            Method::Exhaustive => "exhaustive",
        }
    }

    pub fn is_gcd(self) -> bool {
        matches!(self, Method::Gcd | Method::GcdLite | Method::GcdAgg | Method::GcdLiteAgg)
    }

    pub fn is_lite(self) -> bool {
        matches!(self, Method::GcdLite | Method::GcdLiteAgg)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProposerKind {
    Rule,
    Llm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Catalog JSON; the built-in demo catalog when absent.
    pub catalog: Option<PathBuf>,
    /// Cost parameters JSON; the defaults when absent.
    pub params: Option<PathBuf>,
    /// Synonym lexicon JSON for the phrase matcher.
    pub lexicon: Option<PathBuf>,
    pub method: Method,
    pub proposer: ProposerKind,
    pub k: usize,
    pub tolerance: usize,
    pub iteration_cap: usize,
    pub seed: u64,
    pub sim: SimProfile,
    pub llm: Option<ChatClientConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            catalog: None,
            params: None,
            lexicon: None,
            method: Method::Gcd,
            proposer: ProposerKind::Rule,
            k: DEFAULT_K,
            tolerance: DEFAULT_TOLERANCE,
            iteration_cap: DEFAULT_ITERATION_CAP,
            seed: 0,
            sim: SimProfile::Matched,
            llm: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SimMode {
    Matched,
    Unmatched,
}

/// Flags shared by every subcommand that builds a run configuration.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[arg(long, value_enum)]
    pub proposer: Option<ProposerKind>,
    /// Runs per query for the aggregated methods.
    #[arg(long)]
    pub k: Option<usize>,
    /// Consecutive non-improving iterations before the loop stops.
    #[arg(long)]
    pub tolerance: Option<usize>,
    #[arg(long)]
    pub iteration_cap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Relationship between true and estimated execution parameters.
    #[arg(long, value_enum)]
    pub sim: Option<SimMode>,
    #[arg(long)]
    pub sim_seed: Option<u64>,
    #[arg(long)]
    pub sim_jitter: Option<f64>,
    /// Chat completions endpoint URL.
    #[arg(long)]
    pub llm_url: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Name of the environment variable holding the API key.
    #[arg(long)]
    pub llm_api_key_env: Option<String>,
    #[arg(long)]
    pub llm_temperature: Option<f64>,
    #[arg(long)]
    pub llm_timeout_secs: Option<u64>,
    #[arg(long)]
    pub llm_max_in_flight: Option<usize>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = &self.$field {
                    c.$field = v.clone().into();
                }
            };
        }
        set!(catalog);
        set!(params);
        set!(lexicon);
        set!(method);
        set!(proposer);
        set!(k);
        set!(tolerance);
        set!(iteration_cap);
        set!(seed);

        let (old_seed, old_jitter) = match c.sim {
            SimProfile::Matched => (0, DEFAULT_JITTER),
            SimProfile::Unmatched { seed, jitter } => (seed, jitter),
        };
        let unmatched = match self.sim {
            Some(SimMode::Matched) => false,
            Some(SimMode::Unmatched) => true,
            None => matches!(c.sim, SimProfile::Unmatched { .. }),
        };
        if unmatched {
            c.sim = SimProfile::Unmatched {
                seed: self.sim_seed.unwrap_or(old_seed),
                jitter: self.sim_jitter.unwrap_or(old_jitter),
            };
        } else if self.sim_seed.is_some() || self.sim_jitter.is_some() {
            bail!("--sim-seed and --sim-jitter need --sim unmatched");
        }

        if let Some(url) = &self.llm_url {
            let model = self
                .llm_model
                .clone()
                .or_else(|| c.llm.as_ref().map(|l| l.model.clone()))
                .unwrap_or_default();
            let mut l = c.llm.take().unwrap_or_else(|| ChatClientConfig::new(url.clone(), model.clone()));
            l.url = url.clone();
            l.model = model;
            c.llm = Some(l);
        } else if let (Some(model), Some(l)) = (&self.llm_model, c.llm.as_mut()) {
            l.model = model.clone();
        }
        let llm_flags = self.llm_model.is_some()
            || self.llm_api_key_env.is_some()
            || self.llm_temperature.is_some()
            || self.llm_timeout_secs.is_some()
            || self.llm_max_in_flight.is_some();
        match c.llm.as_mut() {
            Some(l) => {
                if let Some(v) = &self.llm_api_key_env {
                    l.api_key_env = v.clone();
                }
                if let Some(v) = self.llm_temperature {
                    l.temperature = v;
                }
                if let Some(v) = self.llm_timeout_secs {
                    l.timeout_secs = v;
                }
                if let Some(v) = self.llm_max_in_flight {
                    l.max_in_flight = v;
                }
            }
            None if llm_flags => bail!("LLM options given without --llm-url"),
            None => {}
        }
        c.validate()?;
        Ok(c)
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.tolerance == 0 {
            bail!("tolerance must be at least 1");
        }
        if self.iteration_cap == 0 {
            bail!("iteration cap must be at least 1");
        }
        if let SimProfile::Unmatched { jitter, .. } = self.sim {
            if !(jitter.is_finite() && jitter >= 0.0) {
                bail!("sim jitter must be a non-negative number");
            }
        }
        if let Some(l) = &self.llm {
            if l.url.is_empty() {
                bail!("LLM endpoint URL is empty");
            }
            if l.max_in_flight == 0 {
                bail!("LLM max_in_flight must be at least 1");
            }
        }
        if self.method.is_gcd() && self.proposer == ProposerKind::Llm && self.llm.is_none() {
            bail!("the llm proposer needs an endpoint (--llm-url or \"llm\" in the config)");
        }
        Ok(())
    }

    pub fn load_catalog(&self) -> Result<Catalog> {
        match &self.catalog {
            Some(p) => Catalog::load(p).with_context(|| format!("loading catalog {}", p.display())),
            None => Ok(demo_catalog()),
        }
    }

    pub fn load_params(&self) -> Result<CostParams> {
        match &self.params {
            Some(p) => CostParams::load(p).with_context(|| format!("loading cost parameters {}", p.display())),
            None => Ok(CostParams::default()),
        }
    }

    pub fn load_matcher(&self) -> Result<PhraseMatcher> {
        match &self.lexicon {
            Some(p) => Ok(PhraseMatcher::with_lexicon(
                Lexicon::load(p).with_context(|| format!("loading lexicon {}", p.display()))?,
            )),
            None => Ok(PhraseMatcher::default()),
        }
    }

    pub fn chat_client(&self) -> Result<Arc<dyn ChatClient>> {
        match &self.llm {
            Some(l) => Ok(Arc::new(HttpChatClient::new(l.clone()))),
            None => bail!("no LLM endpoint configured (--llm-url)"),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args() -> ConfigArgs {
        ConfigArgs::default()
    }

    #[test]
    fn defaults_validate() {
        let c = args().resolve().unwrap();
        assert_eq!((c.k, c.tolerance, c.iteration_cap), (5, 3, 25));
        assert_eq!(c.sim, SimProfile::Matched);
        assert!(c.llm.is_none());
    }

    #[test]
    fn flags_override_the_file() {
        let dir = std::env::temp_dir().join(format!("mmqo-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.json");
        std::fs::write(
            &path,
            r#"{"k": 7, "tolerance": 4, "sim": {"mode": "unmatched", "seed": 3},
                "llm": {"url": "http://a/v1/chat/completions", "model": "m1"}}"#,
        )
        .unwrap();
        let c = ConfigArgs {
            config: Some(path),
            k: Some(2),
            sim_jitter: Some(0.25),
            llm_model: Some("m2".into()),
            ..args()
        }
        .resolve()
        .unwrap();
        assert_eq!((c.k, c.tolerance), (2, 4));
        assert_eq!(c.sim, SimProfile::Unmatched { seed: 3, jitter: 0.25 });
        let l = c.llm.unwrap();
        assert_eq!((l.url.as_str(), l.model.as_str()), ("http://a/v1/chat/completions", "m2"));
        std::fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn inconsistent_flags_are_rejected() {
        for bad in [
            ConfigArgs { sim_seed: Some(1), ..args() },
            ConfigArgs { llm_model: Some("m".into()), ..args() },
            ConfigArgs { k: Some(0), ..args() },
            ConfigArgs { tolerance: Some(0), ..args() },
            ConfigArgs { proposer: Some(ProposerKind::Llm), ..args() },
            ConfigArgs { sim: Some(SimMode::Unmatched), sim_jitter: Some(-1.0), ..args() },
            ConfigArgs { llm_url: Some("http://x".into()), llm_max_in_flight: Some(0), ..args() },
        ] {
            assert!(bad.resolve().is_err(), "{bad:?}");
        }
        // The rule-based methods never call the model.
        let greedy = ConfigArgs { proposer: Some(ProposerKind::Llm), method: Some(Method::Greedy), ..args() };
        assert!(greedy.resolve().is_ok());
    }
}
