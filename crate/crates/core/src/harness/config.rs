//! Flat `key = value` run configuration. Blank lines and `#` comments are
//! ignored; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use super::HarnessError;
use crate::datastore::GeneratorConfig;
use crate::model::Variant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativeMode {
    /// Drawn once per example from the run seed.
    Fixed,
    /// Redrawn every epoch.
    PerEpoch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Test,
}

impl FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "validation" | "val" => Ok(EvalSplit::Validation),
            "test" => Ok(EvalSplit::Test),
            _ => Err(format!("unknown split `{s}` (expected validation or test)")),
        }
    }
}

impl EvalSplit {
    pub fn name(self) -> &'static str {
        match self {
            EvalSplit::Validation => "validation",
            EvalSplit::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,

    pub dim: usize,
    pub heads: usize,
    pub depth: usize,
    pub streams: usize,
    pub max_len: usize,
    pub shared_experts: usize,
    pub private_experts: usize,
    pub profile_dim: usize,
    pub embed_std: f64,
    pub variant: Variant,

    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Stops after this many optimizer steps; 0 means no limit.
    pub max_steps: u64,
    /// Stops after this much wall time; 0 means no limit.
    pub time_limit_secs: u64,
    pub negatives: NegativeMode,
    pub task_weights: [f64; 4],
    pub bucket_by_length: bool,
    pub log_every: u64,
    /// Validation metrics every this many steps; 0 disables.
    pub eval_every: u64,
    /// Checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_every: u64,

    pub eval_split: EvalSplit,
    pub circular_mae: bool,
    /// Caps evaluated users; 0 evaluates all.
    pub eval_users: usize,

    pub generator: GeneratorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("runs/default"),
            dim: 96,
            heads: 1,
            depth: 3,
            streams: 2,
            max_len: 120,
            shared_experts: 2,
            private_experts: 1,
            profile_dim: 48,
            embed_std: 0.1,
            variant: Variant::Full,
            batch_size: 64,
            lr: 1e-3,
            epochs: 1,
            max_steps: 0,
            time_limit_secs: 0,
            negatives: NegativeMode::Fixed,
            task_weights: [1.0; 4],
            bucket_by_length: true,
            log_every: 1,
            eval_every: 0,
            checkpoint_every: 0,
            eval_split: EvalSplit::Test,
            circular_mae: false,
            eval_users: 0,
            generator: GeneratorConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| HarnessError::Config(format!("{key} = {v}: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, HarnessError> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(HarnessError::Config(format!("{key} = {v}: expected true or false"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), HarnessError> {
        let g = &mut self.generator;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "dim" => self.dim = parse(key, v)?,
            "heads" => self.heads = parse(key, v)?,
            "depth" => self.depth = parse(key, v)?,
            "streams" => self.streams = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "shared_experts" => self.shared_experts = parse(key, v)?,
            "private_experts" => self.private_experts = parse(key, v)?,
            "profile_dim" => self.profile_dim = parse(key, v)?,
            "embed_std" => self.embed_std = parse(key, v)?,
            "variant" => self.variant = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "max_steps" => self.max_steps = parse(key, v)?,
            "time_limit_secs" => self.time_limit_secs = parse(key, v)?,
            "negatives" => {
                self.negatives = match v {
                    "fixed" => NegativeMode::Fixed,
                    "per_epoch" => NegativeMode::PerEpoch,
                    _ => return Err(HarnessError::Config(format!("negatives = {v}: expected fixed or per_epoch"))),
                }
            }
            "task_weights" => {
                let w: Vec<f64> = v.split(',').map(|x| parse(key, x.trim())).collect::<Result<_, _>>()?;
                self.task_weights = w
                    .try_into()
                    .map_err(|_| HarnessError::Config(format!("task_weights = {v}: expected four values")))?;
            }
            "bucket_by_length" => self.bucket_by_length = parse_bool(key, v)?,
            "log_every" => self.log_every = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "eval_split" => self.eval_split = parse(key, v)?,
            "circular_mae" => self.circular_mae = parse_bool(key, v)?,
            "eval_users" => self.eval_users = parse(key, v)?,
            "gen.users" => g.users = parse(key, v)?,
            "gen.pois" => g.pois = parse(key, v)?,
            "gen.gids" => g.gids = parse(key, v)?,
            "gen.categories" => g.categories = parse(key, v)?,
            "gen.mean_interactions" => g.mean_interactions = parse(key, v)?,
            "gen.p_fav" => g.p_fav = parse(key, v)?,
            "gen.p_mode" => g.p_mode = parse(key, v)?,
            "gen.p_time" => g.p_time = parse(key, v)?,
            "gen.p_via" => g.p_via = parse(key, v)?,
            _ => return Err(HarnessError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        for (name, v) in [
            ("dim", self.dim),
            ("heads", self.heads),
            ("depth", self.depth),
            ("streams", self.streams),
            ("max_len", self.max_len),
            ("private_experts", self.private_experts),
            ("profile_dim", self.profile_dim),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.task_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("task_weights must be finite and non-negative".into());
        }
        self.generator.validate()?;
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let g = &self.generator;
        let neg = match self.negatives {
            NegativeMode::Fixed => "fixed",
            NegativeMode::PerEpoch => "per_epoch",
        };
        let w: Vec<String> = self.task_weights.iter().map(|x| x.to_string()).collect();
        let mut s = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("dim", self.dim.to_string()),
            ("heads", self.heads.to_string()),
            ("depth", self.depth.to_string()),
            ("streams", self.streams.to_string()),
            ("max_len", self.max_len.to_string()),
            ("shared_experts", self.shared_experts.to_string()),
            ("private_experts", self.private_experts.to_string()),
            ("profile_dim", self.profile_dim.to_string()),
            ("embed_std", self.embed_std.to_string()),
            ("variant", self.variant.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("max_steps", self.max_steps.to_string()),
            ("time_limit_secs", self.time_limit_secs.to_string()),
            ("negatives", neg.to_string()),
            ("task_weights", w.join(",")),
            ("bucket_by_length", self.bucket_by_length.to_string()),
            ("log_every", self.log_every.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("eval_split", self.eval_split.name().to_string()),
            ("circular_mae", self.circular_mae.to_string()),
            ("eval_users", self.eval_users.to_string()),
            ("gen.users", g.users.to_string()),
            ("gen.pois", g.pois.to_string()),
            ("gen.gids", g.gids.to_string()),
            ("gen.categories", g.categories.to_string()),
            ("gen.mean_interactions", g.mean_interactions.to_string()),
            ("gen.p_fav", g.p_fav.to_string()),
            ("gen.p_mode", g.p_mode.to_string()),
            ("gen.p_time", g.p_time.to_string()),
            ("gen.p_via", g.p_via.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.dim, c.max_len, c.batch_size, c.depth), (96, 120, 64, 3));
        assert_eq!(c.lr, 1e-3);
        assert_eq!((c.shared_experts, c.private_experts), (2, 1));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::default();
        c.lr = 3e-4;
        c.variant = Variant::NoTsf;
        c.task_weights = [1.0, 0.5, 2.0, 1.0];
        c.negatives = NegativeMode::PerEpoch;
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn comments_and_errors() {
        let c = RunConfig::parse("# comment\n\ndim = 32 # trailing\n").unwrap();
        assert_eq!(c.dim, 32);
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("dim = 0").is_err());
        assert!(RunConfig::parse("variant = no_Foo").is_err());
        assert!(RunConfig::parse("dim 3").is_err());
    }
}
