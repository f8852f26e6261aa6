use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use hsriqm_core::eval::{self, Corpus, Manifest};
use hsriqm_core::metric::{self, ModelBundle, ScoreReport};
use hsriqm_core::{csc, imgio, synth, train, Config, Error, MidNorm, Result};

#[derive(Parser)]
#[command(name = "hsriqm", version, about = "Full-reference quality metric for synthesized views")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model container from a manifest.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also write the held-out PCC of every cross-validation round.
        #[arg(long)]
        pcc_csv: Option<PathBuf>,
    },
    /// Score one reference/degraded pair.
    Score {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        deg: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Print the full report as JSON instead of the pooled score.
        #[arg(long)]
        json: bool,
        /// Write filtered images, contour maps and the kernel mosaic here.
        #[arg(long)]
        dump_debug: Option<PathBuf>,
    },
    /// Score a manifest and report PCC/SCC/RMSE after logistic mapping.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate every pooling-weight configuration on a simplex grid.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Variance-ratio test: are residuals of A significantly smaller than B's?
    Ftest {
        /// Residuals of the proposed metric (residuals.csv or one value per line).
        #[arg(long)]
        a: PathBuf,
        /// Residuals of the competitor.
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Write the dictionary kernels of a model as a PGM mosaic.
    DumpKernels {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "kernels.pgm")]
        out: PathBuf,
    },
    /// Generate a synthetic corpus with pseudo-DMOS equal to the warp amplitude.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        refs: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// JSON configuration; defaults to the model's own settings when scoring.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cv_rounds: Option<usize>,
    #[arg(long)]
    w_l: Option<f64>,
    #[arg(long)]
    w_m: Option<f64>,
    #[arg(long)]
    w_h: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// `literal` or `mean_power`.
    #[arg(long)]
    mid_norm: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self, base: Option<&Config>) -> Result<Config> {
        let mut cfg = match (&self.config, base) {
            (Some(path), _) => Config::load(path)?,
            (None, Some(b)) => b.clone(),
            (None, None) => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.cv_rounds {
            cfg.cv.rounds = r;
        }
        let w = &mut cfg.weights;
        if let Some(v) = self.w_l {
            w.w_l = v;
        }
        if let Some(v) = self.w_m {
            w.w_m = v;
        }
        if let Some(v) = self.w_h {
            w.w_h = v;
        }
        if let Some(b) = self.beta {
            cfg.token.beta = b;
        }
        if let Some(n) = &self.mid_norm {
            cfg.token.mid_norm = match n.as_str() {
                "literal" => MidNorm::Literal,
                "mean_power" => MidNorm::MeanPower,
                other => return Err(Error::Argument(format!("unknown mid_norm `{other}`"))),
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct ScoreOutput<'a> {
    #[serde(flatten)]
    report: &'a ScoreReport,
    config: &'a Config,
}

fn read_residuals(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| Error::Format(format!("{}: empty residual file", path.display())))?;
    let bad = |l: &str| Error::Format(format!("{}: cannot parse `{l}`", path.display()));
    if first.contains(',') || first.trim().parse::<f64>().is_err() {
        let col = first
            .split(',')
            .position(|h| h.trim() == "residual")
            .ok_or_else(|| Error::Format(format!("{}: no `residual` column", path.display())))?;
        lines
            .map(|l| l.split(',').nth(col).and_then(|v| v.trim().parse().ok()).ok_or_else(|| bad(l)))
            .collect()
    } else {
        std::iter::once(first).chain(lines).map(|l| l.trim().parse().map_err(|_| bad(l))).collect()
    }
}

fn load_model(path: &Path) -> Result<ModelBundle> {
    ModelBundle::load(path).map_err(|e| if e.is_io() { e } else { Error::Model(format!("{}: {e}", path.display())) })
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train { manifest, out, cfg, pcc_csv } => {
            let config = cfg.resolve(None)?;
            let m = Manifest::load(&manifest)?;
            let corpus = Corpus::load(&m);
            if !corpus.skipped.is_empty() {
                return Err(Error::Training(format!("{} manifest rows could not be loaded", corpus.skipped.len())));
            }
            let (bundle, summary) = train::train_bundle(&corpus, &config)?;
            bundle.save(&out)?;
            let mut finite: Vec<f64> = summary.cv_pcc.iter().copied().filter(|v| v.is_finite()).collect();
            finite.sort_by(f64::total_cmp);
            let (lo, hi) = (finite.first().copied().unwrap_or(f64::NAN), finite.last().copied().unwrap_or(f64::NAN));
            println!(
                "trained {} ({} SVR samples); held-out PCC over {} rounds: min {lo:.4}, median {:.4}, max {hi:.4}",
                out.display(),
                summary.svr_samples,
                summary.cv_pcc.len(),
                summary.median_pcc()
            );
            if let Some(path) = pcc_csv {
                let mut text = String::from("round,pcc\n");
                for (i, p) in summary.cv_pcc.iter().enumerate() {
                    text.push_str(&format!("{i},{p}\n"));
                }
                std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
            }
        }
        Command::Score { reference, deg, model, cfg, json, dump_debug } => {
            let bundle = load_model(&model)?;
            let config = cfg.resolve(Some(&bundle.config))?;
            let r = imgio::load_image(&reference)?;
            let d = imgio::load_image(&deg)?;
            let report = metric::score_images(&r, &d, &bundle, &config)?;
            if let Some(dir) = dump_debug {
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for (name, img) in [("ref", &r), ("deg", &d)] {
                    let a = metric::analyze(img, &bundle, &config)?;
                    imgio::save_pgm(&a.filtered, dir.join(format!("filtered_{name}.pgm")))?;
                    let c = &a.contours;
                    imgio::save_mask_pgm(c.width(), c.height(), c.mask(), dir.join(format!("contours_{name}.pgm")))?;
                }
                imgio::save_pgm(&csc::kernel_mosaic(&bundle.dictionary), dir.join("kernels.pgm"))?;
            }
            if json {
                let out = ScoreOutput { report: &report, config: &config };
                println!("{}", serde_json::to_string_pretty(&out).expect("report serializes"));
            } else {
                println!("{:.6}", report.s);
            }
        }
        Command::Evaluate { manifest, model, out_dir, cfg } => {
            let bundle = load_model(&model)?;
            let config = cfg.resolve(Some(&bundle.config))?;
            let m = Manifest::load(&manifest)?;
            let (ev, _) = eval::evaluate(&m, &bundle, &config)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            eval::write_json(out_dir.join("report.json"), &ev.report)?;
            eval::write_residuals_csv(out_dir.join("residuals.csv"), &ev.residuals)?;
            println!(
                "pairs {}  PCC {:.4}  SCC {:.4}  RMSE {:.4}",
                ev.report.pairs, ev.report.pcc, ev.report.scc, ev.report.rmse
            );
        }
        Command::Sweep { manifest, model, step, out, cfg } => {
            let bundle = load_model(&model)?;
            let config = cfg.resolve(Some(&bundle.config))?;
            let m = Manifest::load(&manifest)?;
            let corpus = Corpus::load(&m);
            let scored = eval::score_corpus(&m, &corpus, &bundle, &config)?;
            let rows = eval::weight_sweep(&scored, &bundle, step)?;
            eval::write_sweep_csv(&out, &rows)?;
            if let Some(best) = rows.iter().filter(|r| r.pcc.is_finite()).max_by(|a, b| a.pcc.total_cmp(&b.pcc)) {
                println!(
                    "{} configurations; best PCC {:.4} at w_l={:.2} w_m={:.2} w_h={:.2}",
                    rows.len(),
                    best.pcc,
                    best.w_l,
                    best.w_m,
                    best.w_h
                );
            }
        }
        Command::Ftest { a, b, alpha } => {
            let t = eval::f_test(&read_residuals(&a)?, &read_residuals(&b)?, alpha)?;
            let verdict = if t.significant { "significant" } else { "not significant" };
            println!("{verdict}, F={:.3} (critical {:.3}, df {}/{})", t.f, t.critical, t.df_num, t.df_den);
        }
        Command::DumpKernels { model, out } => {
            let bundle = load_model(&model)?;
            imgio::save_pgm(&csc::kernel_mosaic(&bundle.dictionary), &out)?;
            println!("wrote {} kernels to {}", bundle.dictionary.len(), out.display());
        }
        Command::Synth { out, refs, size, seed } => {
            let path = synth::write_corpus(&out, refs, &synth::DEFAULT_AMPLITUDES, size, seed)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(Error::Argument(format!("thread pool: {e}"))),
        },
        None => run(cli.command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_base_config() {
        let mut base = Config::default();
        base.seed = 9;
        base.token.beta = 2.0;
        let args = ConfigArgs { w_h: Some(0.5), mid_norm: Some("mean_power".into()), ..Default::default() };
        let cfg = args.resolve(Some(&base)).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.token.beta, 2.0);
        assert_eq!(cfg.weights.w_h, 0.5);
        assert_eq!(cfg.token.mid_norm, MidNorm::MeanPower);
        assert_eq!(ConfigArgs::default().resolve(None).unwrap(), Config::default());
    }

    #[test]
    fn bad_overrides_rejected() {
        let args = ConfigArgs { mid_norm: Some("median".into()), ..Default::default() };
        assert!(matches!(args.resolve(None), Err(Error::Argument(_))));
        let args = ConfigArgs { beta: Some(0.0), ..Default::default() };
        assert!(args.resolve(None).is_err());
    }

    #[test]
    fn residual_formats() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("r.csv");
        std::fs::write(&csv, "ref,deg,s,mapped,dmos,residual\na,b,0.1,1,2,-1.5\nc,d,0.2,2,1,0.25\n").unwrap();
        assert_eq!(read_residuals(&csv).unwrap(), vec![-1.5, 0.25]);
        let plain = dir.path().join("r.txt");
        std::fs::write(&plain, "1.0\n\n-2\n").unwrap();
        assert_eq!(read_residuals(&plain).unwrap(), vec![1.0, -2.0]);
        std::fs::write(&plain, "1.0\nx\n").unwrap();
        assert!(matches!(read_residuals(&plain), Err(Error::Format(_))));
        std::fs::write(&csv, "a,b\n1,2\n").unwrap();
        assert!(read_residuals(&csv).is_err());
        assert!(read_residuals(&dir.path().join("none")).unwrap_err().is_io());
    }
}
