//! Flat `key = value` training configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use nptraj_core::data::synth::LaneChangeParams;
use nptraj_core::data::SplitMode;
use nptraj_core::model::ModelKind;
use nptraj_core::train_eval::{DataSource, ModelSizes, TrainConfig};

/// Every accepted key with its default and meaning, in documentation order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("kind", "ARNP", "model kind: NP, ANP, ARNP or LSTM_POINT"),
    ("seed", "0", "training seed (overridden by NPTRAJ_SEED)"),
    ("steps", "5000", "optimizer steps"),
    ("batch", "16", "episodes per step"),
    ("lr", "0.001", "Adam learning rate"),
    ("split", "prefix", "context split: prefix or random"),
    ("normalize", "true", "fit a per-feature normalizer on the training data"),
    ("eval_interval", "500", "steps between progress log lines, 0 to disable"),
    ("data", "lanechange", "data source: lanechange, sine or csv"),
    ("data_path", "", "CSV file for data = csv"),
    ("data_seed", "0", "generator seed for synthetic data"),
    ("window", "20", "window length L for trajectory data"),
    ("n_episodes", "200", "synthetic episodes to generate"),
    ("n_points", "20", "points per sine episode"),
    ("duration", "8", "lane-change episode length in seconds"),
    ("lane_width", "3.7", "lane width in meters"),
    ("noise_std", "0.1", "observation noise std in meters"),
    ("lstm_hidden", "64", "LSTM hidden size"),
    ("pair_hidden0", "32", "first pair-encoder hidden width"),
    ("pair_hidden1", "64", "second pair-encoder hidden width"),
    ("repr_dim", "128", "representation width"),
    ("latent_hidden", "128", "latent head hidden width"),
    ("z_dim", "64", "latent dimension"),
    ("att_dim", "128", "attention width"),
    ("decoder_hidden0", "64", "first decoder hidden width"),
    ("decoder_hidden1", "64", "second decoder hidden width"),
    ("model_out", "model.npw", "where to write the trained model"),
    ("trace_out", "trace.csv", "where to write the loss trace"),
];

/// A parsed configuration file: training settings plus output paths.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub model_out: PathBuf,
    pub trace_out: PathBuf,
}

/// Text listing every key and default, for `--help`.
pub fn keys_help() -> String {
    let mut out = String::from("Config keys (key = value, `#` starts a comment):\n");
    for (key, default, what) in KEYS {
        let default = if default.is_empty() { "<none>" } else { default };
        out.push_str(&format!("  {key:<16} {what} [default: {default}]\n"));
    }
    out
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow!("line {line}: invalid value `{value}` for key `{key}`"))
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("line {line}: invalid value `{value}` for key `{key}` (expected true or false)"),
    }
}

/// Parses config text. Later assignments of a key override earlier ones.
pub fn parse(text: &str, seed_override: Option<u64>) -> Result<CliConfig> {
    let mut values: Vec<(String, String, usize)> = KEYS.iter().map(|(k, d, _)| (k.to_string(), d.to_string(), 0)).collect();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or_default().trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| anyhow!("line {line}: expected `key = value`, got `{content}`"))?;
        let (key, value) = (key.trim(), value.trim());
        let slot = values
            .iter_mut()
            .find(|(k, _, _)| k == key)
            .ok_or_else(|| anyhow!("line {line}: unknown key `{key}`"))?;
        slot.1 = value.to_string();
        slot.2 = line;
    }
    let get = |key: &str| -> (&str, usize) {
        let (_, v, line) = values.iter().find(|(k, _, _)| k == key).expect("key is declared in KEYS");
        (v.as_str(), *line)
    };
    macro_rules! num {
        ($key:literal) => {{
            let (v, line) = get($key);
            parse_value($key, v, line)?
        }};
    }

    let (kind, line) = get("kind");
    let kind: ModelKind = kind
        .parse()
        .map_err(|e| anyhow!("line {line}: invalid value for key `kind`: {e}"))?;
    let (split, line) = get("split");
    let split_mode = match split {
        "prefix" => SplitMode::Prefix,
        "random" => SplitMode::RandomSubset,
        other => bail!("line {line}: invalid value `{other}` for key `split` (expected prefix or random)"),
    };
    let (normalize, line) = get("normalize");
    let normalize = parse_bool("normalize", normalize, line)?;
    let window: usize = num!("window");
    let data_seed: u64 = num!("data_seed");
    let n_episodes: usize = num!("n_episodes");
    let (source, line) = get("data");
    let data = match source {
        "lanechange" => DataSource::LaneChange {
            n_episodes,
            params: LaneChangeParams {
                lane_width: num!("lane_width"),
                duration: num!("duration"),
                noise_std: num!("noise_std"),
                window,
            },
            seed: data_seed,
        },
        "sine" => DataSource::Sine {
            n_episodes,
            n_points: num!("n_points"),
            seed: data_seed,
        },
        "csv" => {
            let (path, path_line) = get("data_path");
            if path.is_empty() {
                bail!("line {line}: data = csv needs the key `data_path`");
            }
            if path_line == 0 {
                unreachable!("an empty default cannot be nonempty");
            }
            DataSource::Csv {
                path: PathBuf::from(path),
                window,
            }
        }
        other => bail!("line {line}: invalid value `{other}` for key `data` (expected lanechange, sine or csv)"),
    };
    let seed: u64 = num!("seed");
    let train = TrainConfig {
        kind,
        seed: seed_override.unwrap_or(seed),
        steps: num!("steps"),
        batch: num!("batch"),
        lr: num!("lr"),
        sizes: ModelSizes {
            lstm_hidden: num!("lstm_hidden"),
            pair_hidden: [num!("pair_hidden0"), num!("pair_hidden1")],
            repr_dim: num!("repr_dim"),
            latent_hidden: num!("latent_hidden"),
            z_dim: num!("z_dim"),
            att_dim: num!("att_dim"),
            decoder_hidden: [num!("decoder_hidden0"), num!("decoder_hidden1")],
        },
        split_mode,
        eval_interval: num!("eval_interval"),
        normalize,
        data,
    };
    train.validate().map_err(|e| anyhow!("{e}"))?;
    let (model_out, _) = get("model_out");
    let (trace_out, _) = get("trace_out");
    Ok(CliConfig {
        train,
        model_out: PathBuf::from(model_out),
        trace_out: PathBuf::from(trace_out),
    })
}

/// Reads and parses a config file; `NPTRAJ_SEED` overrides `seed`.
pub fn load(path: &Path) -> Result<CliConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config `{}`", path.display()))?;
    let seed = match std::env::var("NPTRAJ_SEED") {
        Ok(s) => Some(
            s.trim()
                .parse()
                .map_err(|_| anyhow!("NPTRAJ_SEED must be a nonnegative integer, got `{s}`"))?,
        ),
        Err(std::env::VarError::NotPresent) => None,
        Err(e) => bail!("NPTRAJ_SEED: {e}"),
    };
    parse(&text, seed).with_context(|| format!("config `{}`", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_core_defaults() {
        let c = parse("", None).unwrap();
        let d = TrainConfig::default();
        assert_eq!(c.train.kind, d.kind);
        assert_eq!(c.train.steps, d.steps);
        assert_eq!(c.train.batch, d.batch);
        assert_eq!(c.train.lr, d.lr);
        assert_eq!(c.train.sizes, d.sizes);
        assert_eq!(c.train.eval_interval, d.eval_interval);
        assert_eq!(c.train.data, d.data);
        assert_eq!(c.model_out, PathBuf::from("model.npw"));
    }

    #[test]
    fn values_comments_and_overrides() {
        let text = "# comment\nkind = NP  # trailing\n\nsteps=12\ndata = sine\nn_points = 9\nsplit = random\nseed = 4\n";
        let c = parse(text, None).unwrap();
        assert_eq!(c.train.kind, ModelKind::Np);
        assert_eq!(c.train.steps, 12);
        assert_eq!(c.train.split_mode, SplitMode::RandomSubset);
        assert_eq!(c.train.seed, 4);
        assert!(matches!(c.train.data, DataSource::Sine { n_points: 9, .. }));
        assert_eq!(parse(text, Some(9)).unwrap().train.seed, 9);
    }

    #[test]
    fn errors_name_the_key_and_line() {
        let err = parse("steps = 3\nbogus = 1\n", None).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("`bogus`"), "{err}");
        let err = parse("\nsteps = many\n", None).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("`steps`"), "{err}");
        let err = parse("kind = GP\n", None).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("`kind`"), "{err}");
        let err = parse("no equals sign\n", None).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        let err = parse("data = csv\n", None).unwrap_err().to_string();
        assert!(err.contains("data_path"), "{err}");
        assert!(parse("steps = 0\n", None).is_err());
    }

    #[test]
    fn help_lists_every_key() {
        let help = keys_help();
        for (key, _, _) in KEYS {
            assert!(help.contains(key));
        }
    }
}
