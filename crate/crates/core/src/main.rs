use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mvoc::metrics::{forward_backward_occlusion, sequence_warping_error, WarpMetricConfig};
use mvoc::pipeline::{self, CompositionJob, JobInputs, RunConfig};
use mvoc::synthdata::{self, SceneSpec};
use mvoc::tensor::Mask;
use mvoc::{vten, MvocError, Result};

#[derive(Parser)]
#[command(name = "mvoc", version, about = "Multi-object video composition with layered injection and chained guidance")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic scene: video, masks, flows and previews.
    GenData {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the default two-object job and its source scenes.
    GenJob {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// DDIM-invert a video and cache every latent.
    Invert {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a composition job.
    Compose {
        #[arg(long)]
        job: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Print the per-step injection plan and guidance terms first.
        #[arg(long)]
        explain: bool,
    },
    /// Warping error of a video against flows in a directory.
    Eval {
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        flow: PathBuf,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["2", "4"]))]
        interval: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| MvocError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| MvocError::json(path, e))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::GenData { spec, out } => {
            let spec = SceneSpec::load(&spec)?;
            let render = synthdata::render_scene(&spec)?;
            synthdata::write_scene(&out, &spec, &render)?;
            println!("wrote {} frames to {}", spec.frames, out.display());
        }
        Cmd::GenJob { out, seed, frames, size } => {
            let path = pipeline::write_synthetic_job(&out, seed, frames, size)?;
            println!("{}", path.display());
        }
        Cmd::Invert { video, config, out } => {
            let cfg: RunConfig = match config {
                Some(p) => read_json(&p)?,
                None => RunConfig::default(),
            };
            let v = vten::load_tensor(&video)?;
            let r = pipeline::run_invert(&v, &cfg, &out)?;
            println!("cached {} latents (top t={}), reconstruction rel L2 {:.3e}", r.n_steps, r.top_t, r.reconstruction_rel_l2);
        }
        Cmd::Compose { job, out, explain } => {
            let job = CompositionJob::load(&job)?;
            let inputs = JobInputs::load(&job)?;
            let prepared = pipeline::prepare(&job, &inputs)?;
            let weights = pipeline::reorder_weights(&job, &prepared)?;
            if explain {
                print!("{}", prepared.explain(&job.injection, &weights));
            }
            let outcome = prepared.sample(&job.injection, &weights)?;
            pipeline::write_outputs(&out, &job, &prepared, &outcome)?;
            for r in &outcome.metrics.warp {
                println!("warp G={}: {:.6e}", r.interval, r.mean);
            }
            for o in &outcome.metrics.objects {
                match o.psnr {
                    Some(p) => println!("object {} PSNR {:.2} dB", o.id, p),
                    None => println!("object {} PSNR n/a", o.id),
                }
            }
        }
        Cmd::Eval { video, flow, interval, out } => {
            let g: usize = interval.parse().expect("validated by clap");
            let v = vten::load_tensor(&video)?;
            let fl = vten::load_flow(flow.join(format!("flow_g{g}.vten")))?;
            let (mask_p, bw_p) = (flow.join(format!("mask_g{g}.vten")), flow.join(format!("flow_bw_g{g}.vten")));
            let cfg = WarpMetricConfig::new(g);
            let mask = if mask_p.exists() {
                vten::load_mask(&mask_p)?
            } else if bw_p.exists() {
                forward_backward_occlusion(&fl, &vten::load_flow(&bw_p)?, cfg.occlusion_threshold)?
            } else {
                Mask::ones([fl.pairs(), fl.height(), fl.width()])
            };
            let report = sequence_warping_error(&v, &fl, &mask, &cfg)?;
            report.write_csv(&out)?;
            println!("warp G={g}: {:.6e}", report.mean);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = std::env::var("MVOC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // only fails if a global pool already exists, which cannot happen here
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
