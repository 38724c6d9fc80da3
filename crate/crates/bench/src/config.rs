//! Run configuration: `key = value` files with `#` comments and dotted keys.
//!
//! Values are resolved in order: built-in defaults, the `--paper-scale`
//! preset, the config file, then command-line flags. [`RunConfig::manifest`]
//! writes every key with its resolved value, and the result parses back to
//! the same configuration.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use rff_core::data::SyntheticSpec;
use rff_core::embed::EmbedConfig;
use rff_core::gen::{AdversarialMode, GenConfig};

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    NoMi,
    NoCenter,
    Minimax,
}

impl FromStr for Ablation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "no-mi" => Ok(Ablation::NoMi),
            "no-center" => Ok(Ablation::NoCenter),
            "minimax" => Ok(Ablation::Minimax),
            other => Err(format!(
                "unknown ablation {other:?} (expected no-mi, no-center or minimax)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub seed: u64,
    /// Dataset directory; `None` synthesizes one from `synth`.
    pub data: Option<PathBuf>,
    /// Directory of a finished training run.
    pub model: Option<PathBuf>,
    pub synth: SyntheticSpec,
    /// Seed of the synthetic benchmark; follows `seed` unless set.
    pub synth_seed: Option<u64>,
    pub embed: EmbedConfig,
    pub gen: GenConfig,
    pub eval_counts: Vec<usize>,
    pub gradcheck_seeds: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            seed: 0,
            data: None,
            model: None,
            synth: SyntheticSpec::default(),
            synth_seed: None,
            embed: EmbedConfig::default(),
            gen: GenConfig::default(),
            eval_counts: vec![10, 50, 200, 400],
            gradcheck_seeds: 20,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| format!("bad value {value:?} for {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("bad value {value:?} for {key}: expected true or false")),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Desk-scale defaults with the paper's network sizes, batch, step size and bound.
    pub fn paper_scale() -> Self {
        let mut c = Self::default();
        let g = &mut c.gen;
        g.z_dim = 1024;
        g.generator_hidden = 4096;
        g.critic_hidden = 1024;
        g.mapper_hidden = 2048;
        g.batch_size = 512;
        g.bound = 0.1;
        g.lambda_r = 0.1;
        for lr in [&mut g.lr_generator, &mut g.lr_mapper, &mut g.lr_critic, &mut g.lr_centers] {
            *lr = 1e-4;
        }
        c.embed.bound = 0.1;
        c.embed.learning_rate = 1e-4;
        c.embed.batch_size = 512;
        c.embed.hidden = 2048;
        c
    }

    /// Seeds pushed down into every component.
    pub fn resolved_synth(&self) -> SyntheticSpec {
        SyntheticSpec {
            seed: self.synth_seed.unwrap_or(self.seed),
            ..self.synth.clone()
        }
    }

    pub fn resolved_embed(&self) -> EmbedConfig {
        EmbedConfig {
            seed: self.seed,
            ..self.embed.clone()
        }
    }

    pub fn resolved_gen(&self) -> GenConfig {
        GenConfig {
            seed: self.seed,
            ..self.gen.clone()
        }
    }

    pub fn apply_ablation(&mut self, ablation: Ablation) {
        match ablation {
            Ablation::NoMi => {
                self.gen.disable_mi = true;
                self.embed = self.embed.clone().plain_sje();
            }
            Ablation::NoCenter => self.gen.lambda_r = 0.0,
            Ablation::Minimax => self.gen.mode = AdversarialMode::Minimax,
        }
    }

    /// Sets one key; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let (s, e, g) = (&mut self.synth, &mut self.embed, &mut self.gen);
        match key {
            "run.id" => self.run_id = value.to_string(),
            "seed" => self.seed = parse(key, value)?,
            "run.data" => self.data = parse_path(value),
            "run.model" => self.model = parse_path(value),

            "synth.seed" => self.synth_seed = Some(parse(key, value)?),
            "synth.seen_classes" => s.seen_classes = parse(key, value)?,
            "synth.unseen_classes" => s.unseen_classes = parse(key, value)?,
            "synth.examples_per_class" => s.examples_per_class = parse(key, value)?,
            "synth.signal_dim" => s.signal_dim = parse(key, value)?,
            "synth.redundancy_dim" => s.redundancy_dim = parse(key, value)?,
            "synth.attribute_dim" => s.attribute_dim = parse(key, value)?,
            "synth.background_clusters" => s.background_clusters = parse(key, value)?,
            "synth.noise_scale" => s.noise_scale = parse(key, value)?,
            "synth.background_scale" => s.background_scale = parse(key, value)?,
            "synth.train_fraction" => s.train_fraction = parse(key, value)?,

            "embed.margin" => e.margin = parse(key, value)?,
            "embed.bound" => e.bound = parse(key, value)?,
            "embed.dual_step" => e.dual_step = parse(key, value)?,
            "embed.dual_init" => e.dual_init = parse(key, value)?,
            "embed.learning_rate" => e.learning_rate = parse(key, value)?,
            "embed.epochs" => e.epochs = parse(key, value)?,
            "embed.batch_size" => e.batch_size = parse(key, value)?,
            "embed.hidden" => e.hidden = parse(key, value)?,
            "embed.sample_z" => e.sample_z = parse_bool(key, value)?,
            "embed.samples" => e.samples = parse(key, value)?,

            "gen.lambda_r" => g.lambda_r = parse(key, value)?,
            "gen.lambda_c" => g.lambda_c = parse(key, value)?,
            "gen.bound" => g.bound = parse(key, value)?,
            "gen.dual_step" => g.dual_step = parse(key, value)?,
            "gen.dual_init" => g.dual_init = parse(key, value)?,
            "gen.disable_mi" => g.disable_mi = parse_bool(key, value)?,
            "gen.center_margin" => g.center_margin = parse(key, value)?,
            "gen.n_critic" => g.n_critic = parse(key, value)?,
            "gen.clip" => g.clip = parse(key, value)?,
            "gen.mode" => g.mode = value.parse().map_err(|e| format!("{key}: {e}"))?,
            "gen.lr_generator" => g.lr_generator = parse(key, value)?,
            "gen.lr_mapper" => g.lr_mapper = parse(key, value)?,
            "gen.lr_critic" => g.lr_critic = parse(key, value)?,
            "gen.lr_centers" => g.lr_centers = parse(key, value)?,
            "gen.batch_size" => g.batch_size = parse(key, value)?,
            "gen.z_dim" => g.z_dim = parse(key, value)?,
            "gen.generator_hidden" => g.generator_hidden = parse(key, value)?,
            "gen.mapper_hidden" => g.mapper_hidden = parse(key, value)?,
            "gen.critic_hidden" => g.critic_hidden = parse(key, value)?,
            "gen.noise_dim" => {
                g.noise_dim = if value == "auto" {
                    None
                } else {
                    Some(parse(key, value)?)
                }
            }
            "gen.epochs" => g.epochs = parse(key, value)?,
            "gen.warmup_epochs" => g.warmup_epochs = parse(key, value)?,
            "gen.synth_per_class" => g.synth_per_class = parse(key, value)?,
            "gen.sample_final" => g.sample_final = parse_bool(key, value)?,
            "gen.freeze_mapper" => g.freeze_mapper = parse_bool(key, value)?,
            "gen.pretrain_epochs" => g.classifier.epochs = parse(key, value)?,
            "gen.pretrain_learning_rate" => g.classifier.learning_rate = parse(key, value)?,
            "final.epochs" => g.final_softmax.epochs = parse(key, value)?,
            "final.learning_rate" => g.final_softmax.learning_rate = parse(key, value)?,

            "eval.counts" => {
                self.eval_counts = value
                    .split(',')
                    .map(str::trim)
                    .filter(|v| !v.is_empty())
                    .map(|v| parse(key, v))
                    .collect::<Result<_, _>>()?;
                if self.eval_counts.is_empty() {
                    return Err("eval.counts needs at least one count".into());
                }
            }
            "gradcheck.seeds" => self.gradcheck_seeds = parse(key, value)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (s, e, g) = (self.resolved_synth(), &self.embed, &self.gen);
        let counts: Vec<String> = self.eval_counts.iter().map(|c| c.to_string()).collect();
        vec![
            ("run.id", self.run_id.clone()),
            ("seed", self.seed.to_string()),
            ("run.data", path_text(&self.data)),
            ("run.model", path_text(&self.model)),
            ("synth.seed", s.seed.to_string()),
            ("synth.seen_classes", s.seen_classes.to_string()),
            ("synth.unseen_classes", s.unseen_classes.to_string()),
            ("synth.examples_per_class", s.examples_per_class.to_string()),
            ("synth.signal_dim", s.signal_dim.to_string()),
            ("synth.redundancy_dim", s.redundancy_dim.to_string()),
            ("synth.attribute_dim", s.attribute_dim.to_string()),
            ("synth.background_clusters", s.background_clusters.to_string()),
            ("synth.noise_scale", s.noise_scale.to_string()),
            ("synth.background_scale", s.background_scale.to_string()),
            ("synth.train_fraction", s.train_fraction.to_string()),
            ("embed.margin", e.margin.to_string()),
            ("embed.bound", e.bound.to_string()),
            ("embed.dual_step", e.dual_step.to_string()),
            ("embed.dual_init", e.dual_init.to_string()),
            ("embed.learning_rate", e.learning_rate.to_string()),
            ("embed.epochs", e.epochs.to_string()),
            ("embed.batch_size", e.batch_size.to_string()),
            ("embed.hidden", e.hidden.to_string()),
            ("embed.sample_z", e.sample_z.to_string()),
            ("embed.samples", e.samples.to_string()),
            ("gen.lambda_r", g.lambda_r.to_string()),
            ("gen.lambda_c", g.lambda_c.to_string()),
            ("gen.bound", g.bound.to_string()),
            ("gen.dual_step", g.dual_step.to_string()),
            ("gen.dual_init", g.dual_init.to_string()),
            ("gen.disable_mi", g.disable_mi.to_string()),
            ("gen.center_margin", g.center_margin.to_string()),
            ("gen.n_critic", g.n_critic.to_string()),
            ("gen.clip", g.clip.to_string()),
            ("gen.mode", g.mode.to_string()),
            ("gen.lr_generator", g.lr_generator.to_string()),
            ("gen.lr_mapper", g.lr_mapper.to_string()),
            ("gen.lr_critic", g.lr_critic.to_string()),
            ("gen.lr_centers", g.lr_centers.to_string()),
            ("gen.batch_size", g.batch_size.to_string()),
            ("gen.z_dim", g.z_dim.to_string()),
            ("gen.generator_hidden", g.generator_hidden.to_string()),
            ("gen.mapper_hidden", g.mapper_hidden.to_string()),
            ("gen.critic_hidden", g.critic_hidden.to_string()),
            (
                "gen.noise_dim",
                g.noise_dim.map_or_else(|| "auto".into(), |d| d.to_string()),
            ),
            ("gen.epochs", g.epochs.to_string()),
            ("gen.warmup_epochs", g.warmup_epochs.to_string()),
            ("gen.synth_per_class", g.synth_per_class.to_string()),
            ("gen.sample_final", g.sample_final.to_string()),
            ("gen.freeze_mapper", g.freeze_mapper.to_string()),
            ("gen.pretrain_epochs", g.classifier.epochs.to_string()),
            ("gen.pretrain_learning_rate", g.classifier.learning_rate.to_string()),
            ("final.epochs", g.final_softmax.epochs.to_string()),
            ("final.learning_rate", g.final_softmax.learning_rate.to_string()),
            ("eval.counts", counts.join(",")),
            ("gradcheck.seeds", self.gradcheck_seeds.to_string()),
        ]
    }

    /// The fully resolved configuration as config-file text.
    pub fn manifest(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn merge_text(&mut self, source_name: &str, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| BenchError::Config {
                source_name: source_name.to_string(),
                line: i + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            self.set(key.trim(), value.trim()).map_err(err)?;
        }
        Ok(())
    }

    /// Checks every component configuration without running anything.
    pub fn validate(&self) -> Result<()> {
        self.resolved_synth().validate()?;
        self.resolved_embed().validate()?;
        self.resolved_gen().validate()?;
        if self.eval_counts.contains(&0) {
            return Err(rff_core::Error::Config("eval.counts must be >= 1".into()).into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 11;
        c.gen.bound = f64::INFINITY;
        c.gen.noise_dim = Some(3);
        c.data = Some(PathBuf::from("some/dir"));
        c.eval_counts = vec![1, 7];
        let mut back = RunConfig::default();
        back.merge_text("manifest", &c.manifest()).unwrap();
        // the manifest pins the synthetic seed
        c.synth_seed = Some(11);
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let mut c = RunConfig::default();
        c.merge_text("t", "# header\n\n gen.lambda_c = 0.3 # trailing\nseed=4\n")
            .unwrap();
        assert_eq!(c.gen.lambda_c, 0.3);
        assert_eq!(c.seed, 4);
    }

    #[test]
    fn unknown_key_names_the_line() {
        let err = RunConfig::default()
            .merge_text("c.cfg", "seed = 1\ngen.lamda_r = 0.1\n")
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("c.cfg line 2") && msg.contains("gen.lamda_r"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_values_are_rejected() {
        let mut c = RunConfig::default();
        assert!(c.set("gen.mode", "gan").is_err());
        assert!(c.set("embed.sample_z", "maybe").is_err());
        assert!(c.set("gen.epochs", "-1").is_err());
        assert!(c.set("eval.counts", "").is_err());
    }

    #[test]
    fn no_mi_ablation_only_disables_the_duals() {
        let base = RunConfig::default();
        let mut ablated = base.clone();
        ablated.apply_ablation(Ablation::NoMi);
        let diff: Vec<_> = base
            .entries()
            .into_iter()
            .zip(ablated.entries())
            .filter(|(a, b)| a != b && a.0.starts_with("gen."))
            .map(|(a, _)| a.0)
            .collect();
        assert_eq!(diff, ["gen.disable_mi"]);
    }

    #[test]
    fn paper_scale_restores_published_sizes() {
        let c = RunConfig::paper_scale();
        assert_eq!((c.gen.z_dim, c.gen.generator_hidden, c.gen.batch_size), (1024, 4096, 512));
        assert_eq!(c.gen.bound, 0.1);
        assert_eq!(c.gen.lr_generator, 1e-4);
    }
}
