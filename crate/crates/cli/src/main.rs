use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use viewfuse::config::Config;
use viewfuse::eval::{
    episodes, evaluate_policy, run_ablation, summarize, Ablation, AblationModels, EpisodeResult, EvalReport,
    ModelSettings, PolicyKind, Split,
};
use viewfuse::model::Model;
use viewfuse::pipeline::dataset::derive_seed;
use viewfuse::pipeline::train::{prepare_all, train_prepared, EpochLog};
use viewfuse::pipeline::{collect_dataset, infer, Dataset, InferOptions, SceneCamera, Variant};
use viewfuse::render::{render, save_depth_png, save_heatmap_png, save_rgb_png};
use viewfuse::scene::Primitive;
use viewfuse::viewspace::enumerate_candidates;

/// Seed streams for the pipeline stages.
const STREAM_DATA: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_EVAL: u64 = 3;

#[derive(Parser)]
#[command(
    name = "viewfuse",
    version,
    about = "Two-view RGB manipulation pipeline on synthetic cabinets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; `{}` selects every default.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for all inputs and outputs of the pipeline.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Collect push and pull interaction datasets.
    GenData(Common),
    /// Train the full model for each primitive.
    Train(Common),
    /// Evaluate the model against the oracle and random policies.
    Eval(Common),
    /// Train the ablation variants and evaluate every ablation on push.
    Ablate(Common),
    /// Write depth and affordance maps before and after fusion.
    Viz {
        #[command(flatten)]
        common: Common,
        /// Number of evaluation episodes to render.
        #[arg(long, default_value_t = 4)]
        episodes: usize,
    },
}

struct Ctx {
    cfg: Config,
    seed: u64,
    out: PathBuf,
}

impl Ctx {
    fn load(c: &Common) -> Result<Self> {
        let text = fs::read_to_string(&c.config).with_context(|| format!("reading {}", c.config.display()))?;
        let mut cfg = Config::from_json(&text).with_context(|| format!("parsing {}", c.config.display()))?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
        Ok(Self {
            seed: cfg.seed,
            cfg,
            out: c.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn read_dataset(&self, p: Primitive) -> Result<Dataset> {
        let path = self.path(&format!("data_{}.jsonl", p.name()));
        let f = File::open(&path).with_context(|| format!("opening {} (run gen-data first)", path.display()))?;
        let intr = self.cfg.camera.intrinsics()?;
        let n = enumerate_candidates(&self.cfg.view_space).len();
        Dataset::read_jsonl(BufReader::new(f), &intr, n).with_context(|| format!("reading {}", path.display()))
    }

    fn read_model(&self, name: &str) -> Result<Model> {
        let path = self.path(name);
        let bytes = fs::read(&path).with_context(|| format!("reading {} (run train first)", path.display()))?;
        let model = Model::from_checkpoint(&bytes).with_context(|| format!("decoding {}", path.display()))?;
        if model.cfg != self.cfg.model {
            bail!("{} was trained with a different model config", path.display());
        }
        Ok(model)
    }

    /// Trains one variant and writes its checkpoint and epoch log.
    fn train_variant(&self, p: Primitive, variant: Variant, stream_index: u64, name: &str) -> Result<Model> {
        let data = self.read_dataset(p)?;
        let prepared = prepare_all(&self.cfg, &data)?;
        let seed = derive_seed(self.seed, STREAM_TRAIN, stream_index);
        let mut log = Vec::new();
        let out = train_prepared(&self.cfg, &prepared, variant, seed, |e: &EpochLog| {
            eprintln!(
                "{name} epoch {:>3} total {:.4} ld1 {:.4} ld2 {:.4} la1 {:.4} grad {:.3}",
                e.epoch, e.total, e.losses.ld1, e.losses.ld2, e.losses.la1, e.grad_norm
            );
            log.push(e.clone());
        })?;
        fs::write(self.path(&format!("{name}.ckpt")), out.model.to_checkpoint()?)?;
        write_jsonl(&self.path(&format!("{name}_log.jsonl")), &log)?;
        Ok(out.model)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn primitive_index(p: Primitive) -> u64 {
    match p {
        Primitive::Push => 0,
        Primitive::Pull => 1,
    }
}

fn gen_data(ctx: &Ctx) -> Result<()> {
    for p in [Primitive::Push, Primitive::Pull] {
        let seed = derive_seed(ctx.seed, STREAM_DATA, primitive_index(p));
        let d = &ctx.cfg.data;
        let data = collect_dataset(&ctx.cfg, &ctx.cfg.scene_seen, p, d.num_pos, d.num_neg, seed)?;
        let path = ctx.path(&format!("data_{}.jsonl", p.name()));
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        data.write_jsonl(&mut w)?;
        w.flush()?;
        eprintln!(
            "{}: {} positives, {} negatives",
            path.display(),
            data.positives(),
            data.negatives()
        );
    }
    Ok(())
}

fn train_all(ctx: &Ctx) -> Result<()> {
    for p in [Primitive::Push, Primitive::Pull] {
        ctx.train_variant(p, Variant::Full, primitive_index(p), &format!("model_{}", p.name()))?;
    }
    Ok(())
}

fn eval_all(ctx: &Ctx) -> Result<()> {
    let eps = episodes(&ctx.cfg, derive_seed(ctx.seed, STREAM_EVAL, 0))?;
    let mut reports = Vec::new();
    for p in [Primitive::Push, Primitive::Pull] {
        let model = ctx.read_model(&format!("model_{}.ckpt", p.name()))?;
        for kind in [PolicyKind::Model, PolicyKind::Oracle, PolicyKind::Random] {
            let results = evaluate_policy(&ctx.cfg, &eps, p, kind, Some(&model), ModelSettings::default())?;
            let r = summarize(p, kind, None, &results)?;
            eprintln!(
                "{} {:?}: short {:.1}% long {:.1}%",
                p.name(),
                kind,
                r.short_term,
                r.long_term
            );
            write_jsonl(
                &ctx.path(&format!("episodes_{}_{}.jsonl", p.name(), policy_name(kind))),
                &results,
            )?;
            if kind == PolicyKind::Model {
                write_trajectories(ctx, p, &results)?;
            }
            reports.push(r);
        }
    }
    write_json(
        &ctx.path("report.json"),
        &EvalReport {
            config: ctx.cfg.clone(),
            seed: ctx.seed,
            reports,
        },
    )
}

/// One JSON-lines file per episode under `trajectories/`.
fn write_trajectories(ctx: &Ctx, p: Primitive, results: &[EpisodeResult]) -> Result<()> {
    let dir = ctx.path("trajectories");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in results {
        let split = match r.split {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        };
        write_jsonl(
            &dir.join(format!("{}_{split}_{:03}.jsonl", p.name(), r.index)),
            &r.trajectory,
        )?;
    }
    Ok(())
}

fn policy_name(k: PolicyKind) -> &'static str {
    match k {
        PolicyKind::Model => "model",
        PolicyKind::Oracle => "oracle",
        PolicyKind::Random => "random",
    }
}

fn ablate(ctx: &Ctx) -> Result<()> {
    let p = Primitive::Push;
    let full = ctx.read_model(&format!("model_{}.ckpt", p.name()))?;
    let wanted: Vec<Ablation> = ctx
        .cfg
        .eval
        .ablations
        .iter()
        .map(|s| Ablation::parse(s))
        .collect::<viewfuse::error::Result<_>>()?;
    let pixel_fusion = if wanted.contains(&Ablation::PixelFusion) {
        Some(ctx.train_variant(p, Variant::PixelFusion, 10, &format!("model_{}_pixel_fusion", p.name()))?)
    } else {
        None
    };
    let no_next_view = if wanted.contains(&Ablation::NoNextView) {
        Some(ctx.train_variant(p, Variant::NoNextView, 11, &format!("model_{}_no_next_view", p.name()))?)
    } else {
        None
    };
    let models = AblationModels {
        full: &full,
        pixel_fusion: pixel_fusion.as_ref(),
        no_next_view: no_next_view.as_ref(),
    };
    let eps = episodes(&ctx.cfg, derive_seed(ctx.seed, STREAM_EVAL, 0))?;
    let results = evaluate_policy(
        &ctx.cfg,
        &eps,
        p,
        PolicyKind::Model,
        Some(&full),
        ModelSettings::default(),
    )?;
    let mut reports = vec![summarize(p, PolicyKind::Model, None, &results)?];
    for a in wanted {
        let r = run_ablation(&ctx.cfg, &eps, p, a, &models)?;
        eprintln!("{}: short {:.1}% long {:.1}%", a.name(), r.short_term, r.long_term);
        reports.push(r);
    }
    write_json(
        &ctx.path("ablation.json"),
        &EvalReport {
            config: ctx.cfg.clone(),
            seed: ctx.seed,
            reports,
        },
    )
}

fn viz(ctx: &Ctx, count: usize) -> Result<()> {
    let model = ctx.read_model("model_push.ckpt")?;
    let intr = ctx.cfg.camera.intrinsics()?;
    let eps = episodes(&ctx.cfg, derive_seed(ctx.seed, STREAM_EVAL, 0))?;
    let dir = ctx.path("viz");
    fs::create_dir_all(&dir)?;
    let (w, h) = (intr.width, intr.height);
    for ep in eps.iter().take(count) {
        let mut camera = SceneCamera {
            scene: &ep.scene,
            intr: intr.clone(),
        };
        let opts = InferOptions::new(ctx.cfg.eval.proposals, ctx.cfg.occl_tol, ep.seed);
        let r = infer(&model, &ctx.cfg.view_space, &intr, &mut camera, None, &ep.pose1, &opts)?;
        let rgb = render(&ep.scene, &ep.pose1, &intr);
        let stem = format!("ep{:03}", ep.index);
        let depth = |values: &[f64]| viewfuse::camera::DepthMap::dense(w, h, values.to_vec());
        save_rgb_png(&rgb.rgb, &dir.join(format!("{stem}_rgb.png")))?;
        save_depth_png(&rgb.gt_depth, &dir.join(format!("{stem}_depth_gt.png")))?;
        save_depth_png(&depth(&r.depth1)?, &dir.join(format!("{stem}_d1.png")))?;
        save_depth_png(&depth(&r.depth)?, &dir.join(format!("{stem}_d2.png")))?;
        save_heatmap_png(&r.afford1, w, h, Some(&rgb.rgb), &dir.join(format!("{stem}_a1.png")))?;
        save_heatmap_png(&r.afford, w, h, Some(&rgb.rgb), &dir.join(format!("{stem}_a2.png")))?;
        for (k, v) in r.views.iter().enumerate() {
            let img = render(&ep.scene, &v.pose, &intr);
            save_rgb_png(&img.rgb, &dir.join(format!("{stem}_view{}.png", k + 2)))?;
        }
    }
    eprintln!("wrote {} episodes to {}", count.min(eps.len()), dir.display());
    Ok(())
}

fn run(cmd: Command) -> Result<()> {
    let started = Instant::now();
    let name = match &cmd {
        Command::GenData(_) => "gen-data",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::Viz { .. } => "viz",
    };
    match cmd {
        Command::GenData(c) => gen_data(&Ctx::load(&c)?)?,
        Command::Train(c) => train_all(&Ctx::load(&c)?)?,
        Command::Eval(c) => eval_all(&Ctx::load(&c)?)?,
        Command::Ablate(c) => ablate(&Ctx::load(&c)?)?,
        Command::Viz { common, episodes } => viz(&Ctx::load(&common)?, episodes)?,
    }
    eprintln!("{name} finished in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
