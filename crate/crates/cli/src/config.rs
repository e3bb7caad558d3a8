//! Command-line flags, the flat `key = value` config file, and their merge
//! into a resolved [`RunConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use anoco::baselines::PropagationRule;
use anoco::scoring::ViewWeighting;
use anoco::{Error, Method, PipelineConfig, Result};
use clap::{Parser, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Score,
    Eval,
    Ablate,
    SweepLambda,
    /// Write a seeded synthetic benchmark as feature files.
    Synth,
}

/// Every option is optional so that the config file can fill the gaps.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "anoco", version, about = "Few-shot anomaly scoring on patch-feature files")]
pub struct Args {
    /// Flat `key = value` file; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// anoco, knn_l2, knn_mahalanobis, graph_nonbipartite, graph_bipartite_naive or message_passing.
    #[arg(long)]
    pub method: Option<String>,
    /// One value, or a comma-separated list for sweep-lambda.
    #[arg(long, allow_hyphen_values = true)]
    pub lambda: Option<String>,
    /// Neighbors averaged by the k-NN baselines.
    #[arg(long)]
    pub k: Option<usize>,
    /// Neighbors kept by the top-k graph baselines.
    #[arg(long)]
    pub k_retrieval: Option<usize>,
    /// Query-query edges per patch in the non-bipartite baseline.
    #[arg(long)]
    pub k_intra: Option<usize>,
    /// Message-passing rounds.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Message-passing update: anchored or unanchored.
    #[arg(long)]
    pub propagation: Option<String>,
    #[arg(long)]
    pub shrinkage: Option<f64>,
    /// Fuse `<id>__view<k>` query views using their JSON sidecars.
    #[arg(long)]
    pub tta: bool,
    /// View weighting for --tta: entropy or uniform.
    #[arg(long)]
    pub weighting: Option<String>,
    #[arg(long)]
    pub no_smooth: bool,
    #[arg(long)]
    pub refs: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub masks: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output map size as HxW; defaults to the mask size in eval, else the patch grid.
    #[arg(long, value_parser = parse_size)]
    pub image_size: Option<(usize, usize)>,
    /// Worker threads; 0 means one per core.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write 8-bit PNG previews with a min/max JSON sidecar.
    #[arg(long)]
    pub png: bool,
    /// Min-max normalize each map before pooling pixels in eval.
    #[arg(long)]
    pub normalize_maps: bool,
}

pub fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got '{s}'"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    if h == 0 || w == 0 {
        return Err(format!("image size must be positive, got '{s}'"));
    }
    Ok((h, w))
}

const BOOL_KEYS: [&str; 4] = ["tta", "png", "normalize_maps", "smooth"];

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("{key}: expected a boolean, got '{v}'"))),
    }
}

/// Parse the config file by turning it into flags and reusing the command
/// line parser, so both sources share one set of value checks.
pub fn parse_config_file(path: &Path) -> Result<Args> {
    let text = fs::read_to_string(path).map_err(|e| Error::IoFailure {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut argv = vec!["anoco".to_string()];
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        let key = key.trim().replace('-', "_");
        let value = value.trim();
        if key == "config" {
            return Err(Error::InvalidConfig("config files cannot include other config files".into()));
        }
        if BOOL_KEYS.contains(&key.as_str()) {
            let on = parse_bool(&key, value)?;
            match (key.as_str(), on) {
                ("smooth", false) => argv.push("--no-smooth".into()),
                ("smooth", true) => {}
                (_, true) => argv.push(format!("--{}", key.replace('_', "-"))),
                (_, false) => {}
            }
        } else {
            argv.push(format!("--{}", key.replace('_', "-")));
            argv.push(value.to_string());
        }
    }
    Args::try_parse_from(&argv).map_err(|e| {
        Error::InvalidConfig(format!("{}: {}", path.display(), e.render().to_string().trim()))
    })
}

impl Args {
    /// Fill every unset option from `file`.
    pub fn or(self, file: Args) -> Args {
        Args {
            config: self.config,
            mode: self.mode.or(file.mode),
            method: self.method.or(file.method),
            lambda: self.lambda.or(file.lambda),
            k: self.k.or(file.k),
            k_retrieval: self.k_retrieval.or(file.k_retrieval),
            k_intra: self.k_intra.or(file.k_intra),
            rounds: self.rounds.or(file.rounds),
            propagation: self.propagation.or(file.propagation),
            shrinkage: self.shrinkage.or(file.shrinkage),
            tta: self.tta || file.tta,
            weighting: self.weighting.or(file.weighting),
            no_smooth: self.no_smooth || file.no_smooth,
            refs: self.refs.or(file.refs),
            queries: self.queries.or(file.queries),
            masks: self.masks.or(file.masks),
            labels: self.labels.or(file.labels),
            out: self.out.or(file.out),
            image_size: self.image_size.or(file.image_size),
            jobs: self.jobs.or(file.jobs),
            seed: self.seed.or(file.seed),
            png: self.png || file.png,
            normalize_maps: self.normalize_maps || file.normalize_maps,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub pipeline: PipelineConfig,
    /// Extra values for sweep-lambda; the single value for other modes lives in `pipeline`.
    pub lambdas: Vec<f64>,
    pub smoothing: bool,
    pub tta: bool,
    pub weighting: ViewWeighting,
    pub refs: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out: PathBuf,
    pub image_size: Option<(usize, usize)>,
    pub jobs: usize,
    pub seed: u64,
    pub png: bool,
    pub normalize_maps: bool,
}

fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("bad lambda '{}'", v.trim())))
        })
        .enumerate()
        .map(|(index, v)| {
            let value = v?;
            if value > 0.0 && value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonPositiveLambda { index, value })
            }
        })
        .collect()
}

fn require(path: &Option<PathBuf>, flag: &str, mode: Mode) -> Result<()> {
    match path {
        Some(p) if p.is_dir() || (flag == "labels" && p.is_file()) => Ok(()),
        Some(p) => Err(Error::InvalidConfig(format!("--{flag} {} does not exist", p.display()))),
        None => Err(Error::InvalidConfig(format!("--{flag} is required in {mode:?} mode"))),
    }
}

impl RunConfig {
    pub fn resolve(args: Args) -> Result<RunConfig> {
        let args = match &args.config {
            Some(path) => {
                let file = parse_config_file(path)?;
                args.or(file)
            }
            None => args,
        };
        let mode = args.mode.unwrap_or(Mode::Score);
        let mut pipeline = PipelineConfig::default();
        if let Some(m) = &args.method {
            pipeline.method = m.parse::<Method>()?;
        }
        let lambdas = match &args.lambda {
            Some(s) => parse_lambdas(s)?,
            None => Vec::new(),
        };
        match (mode, lambdas.as_slice()) {
            (Mode::SweepLambda, _) | (_, []) => {}
            (_, [l]) => pipeline.lambda = *l,
            _ => {
                return Err(Error::InvalidConfig(
                    "a lambda list is only accepted in sweep-lambda mode".into(),
                ))
            }
        }
        if let Some(k) = args.k {
            pipeline.k = k;
        }
        if let Some(k) = args.k_retrieval {
            pipeline.k_retrieval = k;
        }
        if let Some(k) = args.k_intra {
            pipeline.k_intra = k;
        }
        if let Some(r) = args.rounds {
            pipeline.rounds = r;
        }
        if let Some(p) = &args.propagation {
            pipeline.propagation = match p.as_str() {
                "anchored" => PropagationRule::Anchored,
                "unanchored" => PropagationRule::Unanchored,
                _ => return Err(Error::InvalidConfig(format!("unknown propagation rule '{p}'"))),
            };
        }
        if let Some(s) = args.shrinkage {
            pipeline.shrinkage = s;
        }
        pipeline.validate()?;
        let weighting = match args.weighting.as_deref() {
            None | Some("entropy") => ViewWeighting::Entropy,
            Some("uniform") => ViewWeighting::Uniform,
            Some(w) => return Err(Error::InvalidConfig(format!("unknown view weighting '{w}'"))),
        };

        match mode {
            Mode::Synth => {}
            Mode::Score => {
                require(&args.refs, "refs", mode)?;
                require(&args.queries, "queries", mode)?;
            }
            Mode::Eval | Mode::Ablate | Mode::SweepLambda => {
                require(&args.refs, "refs", mode)?;
                require(&args.queries, "queries", mode)?;
                if args.labels.is_none() && args.masks.is_none() {
                    return Err(Error::InvalidConfig(format!(
                        "{mode:?} mode needs --labels or --masks"
                    )));
                }
                if args.labels.is_some() {
                    require(&args.labels, "labels", mode)?;
                }
                if args.masks.is_some() {
                    require(&args.masks, "masks", mode)?;
                }
            }
        }
        let out = args
            .out
            .ok_or_else(|| Error::InvalidConfig("--out is required".into()))?;

        Ok(RunConfig {
            mode,
            pipeline,
            lambdas,
            smoothing: !args.no_smooth,
            tta: args.tta,
            weighting,
            refs: args.refs,
            queries: args.queries,
            masks: args.masks,
            labels: args.labels,
            out,
            image_size: args.image_size,
            jobs: args.jobs.unwrap_or(0),
            seed: args.seed.unwrap_or(0),
            png: args.png,
            normalize_maps: args.normalize_maps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_parse() {
        assert_eq!(parse_size("224x320"), Ok((224, 320)));
        assert!(parse_size("224").is_err());
        assert!(parse_size("0x3").is_err());
    }

    #[test]
    fn lambda_lists() {
        assert_eq!(parse_lambdas("1e-24, 0.5").unwrap(), vec![1e-24, 0.5]);
        assert!(matches!(
            parse_lambdas("1,-2"),
            Err(Error::NonPositiveLambda { index: 1, .. })
        ));
        assert!(parse_lambdas("abc").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(
            &cfg,
            "# comment\nmethod = knn_l2\nlambda = 3\nk = 4\nsmooth = false\nout = x\n",
        )
        .unwrap();
        let cli = Args::try_parse_from(["anoco", "--lambda", "7", "--mode", "synth", "--config"])
            .err()
            .map(|_| ());
        assert!(cli.is_some(), "--config needs a value");
        let cli = Args::try_parse_from([
            "anoco",
            "--lambda",
            "7",
            "--mode",
            "synth",
            "--config",
            cfg.to_str().unwrap(),
        ])
        .unwrap();
        let rc = RunConfig::resolve(cli).unwrap();
        assert_eq!(rc.pipeline.method, Method::KnnL2);
        assert_eq!(rc.pipeline.lambda, 7.0);
        assert_eq!(rc.pipeline.k, 4);
        assert!(!rc.smoothing);
        assert_eq!(rc.out, PathBuf::from("x"));
    }

    #[test]
    fn bad_file_lines_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "lambda\n").unwrap();
        assert!(parse_config_file(&cfg).is_err());
        fs::write(&cfg, "unknown_key = 1\n").unwrap();
        assert!(parse_config_file(&cfg).is_err());
        fs::write(&cfg, "tta = maybe\n").unwrap();
        assert!(parse_config_file(&cfg).is_err());
    }

    #[test]
    fn list_lambda_outside_sweep_is_rejected() {
        let args = Args::try_parse_from(["anoco", "--mode", "synth", "--lambda", "1,2", "--out", "o"]).unwrap();
        assert!(RunConfig::resolve(args).is_err());
        let args = Args::try_parse_from(["anoco", "--mode", "synth", "--lambda", "0", "--out", "o"]).unwrap();
        assert!(matches!(RunConfig::resolve(args), Err(Error::NonPositiveLambda { .. })));
    }
}
