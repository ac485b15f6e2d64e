//! Resolved run configuration: defaults overridden by a `key = value` config
//! file, overridden in turn by command-line flags. Every run echoes the
//! resolved values; the echo's hash ties checkpoints to their configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SminError};
use crate::metapath::MetapathKind;
use crate::trainer::{Ablation, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub layers: usize,
    pub k: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda0: f64,
    pub lambda_alpha: f64,
    pub lambda_beta: f64,
    pub lambda_gamma: f64,
    pub neg_per_pos: usize,
    pub seed: u64,
    /// None disables the cap.
    pub degree_cap: Option<usize>,
    pub rating_threshold: Option<f64>,
    pub eval_n: Vec<usize>,
    /// Ablation letters (h, s, g, t, a), flag-only.
    pub ablate: Vec<char>,
    pub drop_metapaths: Vec<MetapathKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d: 64,
            layers: 2,
            k: 2,
            lr: 0.05,
            lr_decay: 0.95,
            batch_size: 2048,
            epochs: 100,
            lambda0: 0.05,
            lambda_alpha: 0.1,
            lambda_beta: 0.1,
            lambda_gamma: 0.1,
            neg_per_pos: 1,
            seed: 42,
            degree_cap: Some(500),
            rating_threshold: None,
            eval_n: vec![5, 10, 15],
            ablate: Vec::new(),
            drop_metapaths: Vec::new(),
        }
    }
}

fn parse_field<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| SminError::Config(format!("bad value '{value}' for key '{key}'")))
}

impl RunConfig {
    /// Applies `key = value` lines from a config file over the defaults.
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let text = fs::read_to_string(path)
            .map_err(|e| SminError::Config(format!("{}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SminError::Config(format!(
                    "{}:{}: expected 'key = value'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "d" => self.d = parse_field(key, value)?,
            "layers" => self.layers = parse_field(key, value)?,
            "k" => self.k = parse_field(key, value)?,
            "lr" => self.lr = parse_field(key, value)?,
            "lr_decay" => self.lr_decay = parse_field(key, value)?,
            "batch_size" => self.batch_size = parse_field(key, value)?,
            "epochs" => self.epochs = parse_field(key, value)?,
            "lambda0" => self.lambda0 = parse_field(key, value)?,
            "lambda_alpha" => self.lambda_alpha = parse_field(key, value)?,
            "lambda_beta" => self.lambda_beta = parse_field(key, value)?,
            "lambda_gamma" => self.lambda_gamma = parse_field(key, value)?,
            "neg_per_pos" => self.neg_per_pos = parse_field(key, value)?,
            "seed" => self.seed = parse_field(key, value)?,
            "degree_cap" => {
                self.degree_cap = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse_field(key, value)?)
                }
            }
            "rating_threshold" => {
                self.rating_threshold = if value.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse_field(key, value)?)
                }
            }
            "eval_n" => {
                self.eval_n = value
                    .split(',')
                    .map(|v| parse_field::<usize>(key, v.trim()))
                    .collect::<Result<Vec<_>>>()?;
            }
            other => {
                return Err(SminError::Config(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn apply_ablations(&mut self, ablate: &[String], drops: &[String]) -> Result<()> {
        for a in ablate {
            let c = match a.as_str() {
                "h" | "s" | "g" | "t" | "a" => a.chars().next().unwrap(),
                other => {
                    return Err(SminError::Config(format!(
                        "unknown ablation '{other}' (expected h, s, g, t or a)"
                    )))
                }
            };
            if !self.ablate.contains(&c) {
                self.ablate.push(c);
            }
        }
        for d in drops {
            let kind: MetapathKind = d.parse()?;
            if !self.drop_metapaths.contains(&kind) {
                self.drop_metapaths.push(kind);
            }
        }
        self.ablate.sort_unstable();
        self.drop_metapaths.sort();
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let ablation = Ablation {
            no_hetero: self.ablate.contains(&'h'),
            no_mi: self.ablate.contains(&'s'),
            no_mi_global: self.ablate.contains(&'g'),
            no_mi_topology: self.ablate.contains(&'t'),
            mean_pool: self.ablate.contains(&'a'),
            dropped_metapaths: self.drop_metapaths.clone(),
        };
        TrainConfig {
            d: self.d,
            layers: self.layers,
            k: self.k,
            lr: self.lr,
            lr_decay: self.lr_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lambda0: self.lambda0,
            lambda_alpha: self.lambda_alpha,
            lambda_beta: self.lambda_beta,
            lambda_gamma: self.lambda_gamma,
            neg_per_pos: self.neg_per_pos,
            seed: self.seed,
            degree_cap: self.degree_cap,
            ablation,
        }
    }

    /// Canonical text of every resolved value; sufficient to reproduce a run.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "d = {}", self.d);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "lr_decay = {}", self.lr_decay);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "lambda0 = {}", self.lambda0);
        let _ = writeln!(s, "lambda_alpha = {}", self.lambda_alpha);
        let _ = writeln!(s, "lambda_beta = {}", self.lambda_beta);
        let _ = writeln!(s, "lambda_gamma = {}", self.lambda_gamma);
        let _ = writeln!(s, "neg_per_pos = {}", self.neg_per_pos);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "degree_cap = {}",
            self.degree_cap.map_or("none".to_string(), |v| v.to_string())
        );
        let _ = writeln!(
            s,
            "rating_threshold = {}",
            self.rating_threshold
                .map_or("none".to_string(), |v| v.to_string())
        );
        let evals: Vec<String> = self.eval_n.iter().map(|n| n.to_string()).collect();
        let _ = writeln!(s, "eval_n = {}", evals.join(","));
        let ablate: String = self.ablate.iter().collect::<String>();
        let _ = writeln!(s, "ablate = {}", if ablate.is_empty() { "-" } else { &ablate });
        let drops: Vec<String> = self.drop_metapaths.iter().map(|k| k.to_string()).collect();
        let _ = writeln!(
            s,
            "drop_metapaths = {}",
            if drops.is_empty() {
                "-".to_string()
            } else {
                drops.join(",")
            }
        );
        s
    }

    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a(self.echo().as_bytes()))
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    #[test]
    fn file_then_flag_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "# comment\nd = 32\nepochs = 7\neval_n = 5, 10").unwrap();
        drop(f);
        let mut cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.d, 32);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.eval_n, vec![5, 10]);
        cfg.set("d", "16").unwrap();
        assert_eq!(cfg.d, 16);
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("bogus", "1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.seed = 43;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn ablations_map_to_train_config() {
        let mut cfg = RunConfig::default();
        cfg.apply_ablations(
            &["s".into(), "a".into()],
            &["UU".into(), "iki".into()],
        )
        .unwrap();
        let tc = cfg.train_config();
        assert!(tc.ablation.no_mi);
        assert!(tc.ablation.mean_pool);
        assert!(!tc.ablation.no_hetero);
        assert_eq!(
            tc.ablation.dropped_metapaths,
            vec![MetapathKind::UU, MetapathKind::IKI]
        );
        assert!(cfg.echo().contains("ablate = as"));
    }
}
