//! Operator surface: flag parsing, config resolution, and one entry point
//! per pipeline stage. Every invocation records the resolved config and
//! seed in the output directory, so a run can be repeated bit for bit.

use std::path::{Path, PathBuf};

use crate::autoencoder::{
    fd_check_autoencoder, reconstruction_report, train_autoencoder, write_ae_curve_csv,
    write_recon_csv, AeModel,
};
use crate::checkpoint::Checkpoint;
use crate::config::{parse_config, Preset, RunConfig};
use crate::density::{
    train_density, write_curve_csv, write_samples_csv, DensityModel, Split,
};
use crate::engine::{Engine, Taped};
use crate::error::{io_err, write_text, GnfError, Result};
use crate::eval::{evaluate_generated, subsample_matching_sizes, write_eval_csv, EvalRow};
use crate::flow::{flow_forward_taped, FlowConfig, FlowModel};
use crate::generate::{er_baseline, fit_node_prior, train_embedding_flow, GeneratorModel};
use crate::graph::{
    export_graphs, gen_community_small, gen_ego_small, gen_half_moons, gen_mog, gen_mog_ring,
    load_graph_dataset, split, Graph, PointSetDataset,
};
use crate::mp::{fd_check_transform, MaskCsr, MaskMode};
use crate::rng::Rng;
use crate::tensor::{gradient_check, GradCheckReport, Tensor};
use crate::toy::{make_toy_dataset, train_supervised_toy, BackpropMode, ToyTrainConfig};

pub const USAGE: &str = "\
usage: gnf <subcommand> [--config FILE] [--preset ci|desk|full] [--seed N] [--out DIR] [--threads N]

subcommands:
  gen-data        write the graph dataset named by data.name under <out>/data/
  train-density   train a point-set flow on density.dataset, save checkpoint and curves
  train-ae        train the graph auto-encoder on the gen-data output
  train-gnf       train the embedding flow and assemble the graph generator
  generate        sample eval.count graphs from the trained generator
  evaluate        score generated graphs against the test split, with an ER baseline
  gradcheck       finite-difference gradient suites (transform, flow, auto-encoder)
  memstat         stored vs reversible backprop activation footprint on a toy task

The GNF_OUT environment variable overrides the output directory.";

#[derive(Debug, Default)]
pub struct CliArgs {
    pub command: String,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn flag_value(flag: &str, it: &mut std::slice::Iter<'_, String>) -> Result<String> {
    it.next()
        .cloned()
        .ok_or_else(|| GnfError::Config(format!("{flag} needs a value")))
}

pub fn parse_args(argv: &[String]) -> Result<CliArgs> {
    let mut args = CliArgs::default();
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--config" => args.config = Some(PathBuf::from(flag_value("--config", &mut it)?)),
            "--preset" => args.preset = Some(flag_value("--preset", &mut it)?),
            "--seed" => {
                let raw = flag_value("--seed", &mut it)?;
                args.seed = Some(raw.parse().map_err(|_| {
                    GnfError::Config(format!("--seed expects a nonnegative integer, got `{raw}`"))
                })?);
            }
            "--out" => args.out = Some(PathBuf::from(flag_value("--out", &mut it)?)),
            "--threads" => {
                let raw = flag_value("--threads", &mut it)?;
                args.threads = Some(raw.parse().map_err(|_| {
                    GnfError::Config(format!(
                        "--threads expects a positive integer, got `{raw}`"
                    ))
                })?);
            }
            "--help" | "-h" | "help" => {
                args.command = "help".into();
                return Ok(args);
            }
            flag if flag.starts_with('-') => {
                return Err(GnfError::Config(format!("unknown flag `{flag}`")));
            }
            cmd if args.command.is_empty() => args.command = cmd.to_string(),
            extra => {
                return Err(GnfError::Config(format!("unexpected argument `{extra}`")));
            }
        }
    }
    if args.command.is_empty() {
        return Err(GnfError::Config(format!("missing subcommand\n{USAGE}")));
    }
    Ok(args)
}

/// Preset defaults, then the config file, then individual flags, then the
/// GNF_OUT environment variable.
pub fn resolve_config(args: &CliArgs) -> Result<RunConfig> {
    let preset = match &args.preset {
        Some(name) => Preset::from_name(name)?,
        None => Preset::Desk,
    };
    let mut cfg = RunConfig::preset(preset);
    if let Some(path) = &args.config {
        cfg = parse_config(path, cfg)?;
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    if let Some(threads) = args.threads {
        cfg.threads = threads;
    }
    if let Ok(dir) = std::env::var("GNF_OUT") {
        if !dir.is_empty() {
            cfg.out = PathBuf::from(dir);
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Record the resolved config and seed in the output directory.
fn prepare_run_dir(cfg: &RunConfig) -> Result<()> {
    ensure_dir(&cfg.out)?;
    write_text(&cfg.out.join("run.cfg"), &cfg.echo())?;
    write_text(&cfg.out.join("seed.txt"), &format!("{}\n", cfg.seed))
}

pub fn run(argv: &[String]) -> Result<()> {
    let args = parse_args(argv)?;
    if args.command == "help" {
        println!("{USAGE}");
        return Ok(());
    }
    let cfg = resolve_config(&args)?;
    prepare_run_dir(&cfg)?;
    match args.command.as_str() {
        "gen-data" => cmd_gen_data(&cfg),
        "train-density" => cmd_train_density(&cfg),
        "train-ae" => cmd_train_ae(&cfg),
        "train-gnf" => cmd_train_gnf(&cfg),
        "generate" => cmd_generate(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "gradcheck" => cmd_gradcheck(&cfg),
        "memstat" => cmd_memstat(&cfg),
        other => Err(GnfError::Config(format!("unknown subcommand `{other}`\n{USAGE}"))),
    }
}

/// Process entry: one line per failure, class-tagged, exit codes
/// 0 ok / 2 config / 3 numerical / 4 I/O.
pub fn main_entry(argv: &[String]) -> i32 {
    match run(argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            e.exit_code()
        }
    }
}

fn data_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("data").join(&cfg.data_name)
}

fn samples_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.join("samples").join(&cfg.data_name)
}

fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let mut rng = Rng::new(cfg.seed);
    let ds = match cfg.data_name.as_str() {
        "community-small" => split(gen_community_small(cfg.data_count, &mut rng), &mut rng),
        "ego-small" => split(gen_ego_small(None, cfg.data_count, &mut rng)?, &mut rng),
        other => return Err(GnfError::Config(format!("unknown dataset `{other}`"))),
    };
    let dir = data_dir(cfg);
    export_graphs(&dir, &ds)?;
    println!(
        "gen-data: {} graphs ({} train / {} test) -> {}",
        ds.graphs.len(),
        ds.train_idx.len(),
        ds.test_idx.len(),
        dir.display()
    );
    Ok(())
}

fn cmd_train_density(cfg: &RunConfig) -> Result<()> {
    let mut rng = Rng::new(cfg.seed);
    let gen_points = |count: usize, rng: &mut Rng| -> PointSetDataset {
        match cfg.density_dataset.as_str() {
            "mog" => gen_mog(count, rng),
            "mog-ring" => gen_mog_ring(count, rng),
            _ => gen_half_moons(count, rng),
        }
    };
    let train = gen_points(cfg.density_train_examples, &mut rng);
    let test = gen_points(cfg.density_test_examples, &mut rng);
    let mut model = match cfg.density_model.as_str() {
        "gnf" => DensityModel::new_gnf(2, &cfg.flow, &mut rng)?,
        _ => DensityModel::realnvp_baseline(2, &cfg.flow, &mut rng)?,
    };
    let run = train_density(&mut model, &train.examples, &test.examples, &cfg.density_train)?;

    let dir = cfg.out.join("density");
    ensure_dir(&dir)?;
    let tag = format!("{}-{}", cfg.density_dataset, cfg.density_model);
    let ckpt = model.to_checkpoint(cfg.seed, cfg.density_train.steps as u64)?;
    ckpt.save(&dir.join(format!("{tag}.ckpt")))?;
    write_curve_csv(&dir.join(format!("{tag}_curve.csv")), &run.curve)?;
    let points = train.examples.first().map_or(8, Tensor::rows);
    let draws: Vec<Tensor> =
        (0..16).map(|_| model.sample_set(points, &mut rng)).collect::<Result<_>>()?;
    write_samples_csv(&dir.join(format!("{tag}_samples.csv")), &draws)?;
    println!(
        "train-density[{tag}]: per-node nll train {:.4}, test {:.4} after {} steps",
        run.final_train_nll, run.final_test_nll, cfg.density_train.steps
    );
    Ok(())
}

fn cmd_train_ae(cfg: &RunConfig) -> Result<()> {
    let ds = load_graph_dataset(&data_dir(cfg))?;
    let mut rng = Rng::new(cfg.seed);
    let mut model = AeModel::init(cfg.ae.clone(), &mut rng)?;
    let run = train_autoencoder(&mut model, &ds, &cfg.ae_train)?;

    let dir = cfg.out.join("ae");
    ensure_dir(&dir)?;
    model
        .to_checkpoint(cfg.seed, cfg.ae_train.steps as u64)?
        .save(&dir.join("autoencoder.ckpt"))?;
    write_ae_curve_csv(&dir.join("ae_curve.csv"), &run.curve)?;
    let train_rep = reconstruction_report(
        &model,
        &ds.train_graphs(),
        Split::Train,
        cfg.ae_recon_redraws,
        &mut rng,
    )?;
    let test_rep = reconstruction_report(
        &model,
        &ds.test_graphs(),
        Split::Test,
        cfg.ae_recon_redraws,
        &mut rng,
    )?;
    println!(
        "train-ae: bce/node train {:.4} test {:.4}; test incorrect edges {:.1} of {} ({:.2}%)",
        run.final_train_bce,
        run.final_test_bce,
        test_rep.incorrect_edges,
        test_rep.total_edges,
        100.0 * test_rep.incorrect_edges / test_rep.total_edges.max(1) as f64
    );
    write_recon_csv(&dir.join("recon.csv"), &[train_rep, test_rep])?;
    Ok(())
}

fn cmd_train_gnf(cfg: &RunConfig) -> Result<()> {
    let ds = load_graph_dataset(&data_dir(cfg))?;
    let ae_path = cfg.out.join("ae").join("autoencoder.ckpt");
    let ae = AeModel::from_checkpoint(&Checkpoint::load(&ae_path)?)?;
    let mut rng = Rng::new(cfg.seed);
    let mut flow = DensityModel::new_gnf(ae.cfg.embed_dim, &cfg.flow, &mut rng)?;
    let train = ds.train_graphs();
    let test = ds.test_graphs();
    let (run, norm) = train_embedding_flow(&mut flow, &ae, &train, &test, &cfg.genflow)?;
    let prior = fit_node_prior(&train)?;

    let dir = cfg.out.join("genflow");
    let generator = GeneratorModel { ae, flow, norm, prior };
    generator.save(&dir, cfg.seed, cfg.genflow.density.steps as u64)?;
    write_curve_csv(&dir.join("genflow_curve.csv"), &run.curve)?;
    println!(
        "train-gnf: embedding nll train {:.4}, test {:.4} after {} steps",
        run.final_train_nll, run.final_test_nll, cfg.genflow.density.steps
    );
    Ok(())
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let generator = GeneratorModel::load(&cfg.out.join("genflow"))?;
    let name = format!("{}-generated", cfg.data_name);
    let batch = generator.generate_batch(cfg.eval_count, &name, cfg.seed)?;
    let dir = samples_dir(cfg);
    export_graphs(&dir, &batch)?;
    let nodes: usize = batch.graphs.iter().map(Graph::n).sum();
    let edges: usize = batch.graphs.iter().map(Graph::num_edges).sum();
    let count = batch.graphs.len();
    println!(
        "generate: {} graphs (mean {:.1} nodes, {:.1} edges) -> {}",
        count,
        nodes as f64 / count as f64,
        edges as f64 / count as f64,
        dir.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let ds = load_graph_dataset(&data_dir(cfg))?;
    let gen_ds = load_graph_dataset(&samples_dir(cfg))?;
    let test = ds.test_graphs();
    let train = ds.train_graphs();
    let all_gen: Vec<&Graph> = gen_ds.graphs.iter().collect();
    let (model_set, protocol) = if cfg.eval_matched {
        let picks = subsample_matching_sizes(&test, &all_gen)?;
        let chosen: Vec<&Graph> = picks.iter().map(|&i| all_gen[i]).collect();
        (chosen, "matched".to_string())
    } else {
        (all_gen.clone(), all_gen.len().to_string())
    };
    let model_report = evaluate_generated(&test, &model_set, &cfg.sigmas)?;
    let er = er_baseline(&train, model_set.len(), &format!("{}-er", cfg.data_name), cfg.seed)?;
    let er_refs: Vec<&Graph> = er.graphs.iter().collect();
    let er_report = evaluate_generated(&test, &er_refs, &cfg.sigmas)?;

    let rows = vec![
        EvalRow {
            dataset: cfg.data_name.clone(),
            protocol: protocol.clone(),
            seed: cfg.seed,
            report: model_report,
        },
        EvalRow {
            dataset: format!("{}-er", cfg.data_name),
            protocol,
            seed: cfg.seed,
            report: er_report,
        },
    ];
    write_eval_csv(&cfg.out.join("eval.csv"), &rows)?;
    println!(
        "evaluate[{}]: degree {:.5} (er {:.5}), cluster {:.5} (er {:.5}), orbit {:.5} (er {:.5})",
        cfg.data_name,
        model_report.degree_mmd,
        er_report.degree_mmd,
        model_report.cluster_mmd,
        er_report.cluster_mmd,
        model_report.orbit_mmd,
        er_report.orbit_mmd
    );
    Ok(())
}

/// End-to-end loss gradient against central differences on the flow input.
fn fd_check_flow(eps: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = Rng::new(91);
    let mut model = FlowModel::init(
        FlowConfig {
            feature_dim: 4,
            steps: 2,
            heads: 2,
            head_dim: 3,
            msg_hidden: vec![5],
            msg_dim: 4,
            normalize_input: false,
        },
        &mut rng,
    )?;
    // Break the zero-initialized projections so the flow is not an identity.
    for t in model.tensors_mut() {
        let bump = Tensor::randn(t.rows(), t.cols(), 0.2, &mut rng);
        for (v, b) in t.data_mut().iter_mut().zip(bump.data()) {
            *v += *b;
        }
    }
    let h = Tensor::randn(5, 4, 1.0, &mut rng);
    let mask = MaskCsr::for_sets(MaskMode::Full, &[5])?;
    gradient_check(
        move |tape, ids| {
            let taped = flow_forward_taped(tape, &model, ids[0], &mask)?;
            let mut eng = Taped::new(tape);
            let zz = eng.mul(&taped.output, &taped.output)?;
            let sq = eng.sum_all(&zz);
            let half = eng.affine(&sq, 0.5, 0.0);
            let loss = eng.sub(&half, &taped.log_det)?;
            Ok(loss)
        },
        &[h],
        eps,
        tol,
    )
}

fn cmd_gradcheck(_cfg: &RunConfig) -> Result<()> {
    const EPS: f64 = 1e-5;
    const TOL: f64 = 1e-4;
    let suites = [
        ("transform", fd_check_transform(EPS, TOL)?),
        ("flow", fd_check_flow(EPS, TOL)?),
        ("autoencoder", fd_check_autoencoder(EPS, TOL)?),
    ];
    let mut worst = 0.0f64;
    for (name, report) in &suites {
        println!("gradcheck {name}: max rel err {:.3e} ({})", report.max_rel_err, report.worst);
        worst = worst.max(report.max_rel_err);
    }
    println!("gradcheck: max rel err {worst:.3e}, tolerance {TOL:.0e}");
    if suites.iter().all(|(_, r)| r.passed()) {
        Ok(())
    } else {
        Err(GnfError::Numeric(format!(
            "gradient check failed: max rel err {worst:.3e} exceeds {TOL:.0e}"
        )))
    }
}

fn cmd_memstat(cfg: &RunConfig) -> Result<()> {
    let mut rng = Rng::new(cfg.seed);
    let data = make_toy_dataset(3, 6, 4, &mut rng)?;
    println!("memstat: toy regression, 3 graphs of 6 nodes, 3 training steps per depth");
    let mut stored_peaks = Vec::new();
    let mut reversible_peaks = Vec::new();
    for steps in [2usize, 6, 12] {
        let flow_cfg = FlowConfig {
            feature_dim: 4,
            steps,
            heads: 2,
            head_dim: 4,
            msg_hidden: vec![8],
            msg_dim: 6,
            normalize_input: false,
        };
        let train_cfg = |mode| ToyTrainConfig { train_steps: 3, lr: 1e-3, grad_clip: 4.0, mode };
        let mut stored_model = FlowModel::init(flow_cfg.clone(), &mut rng)?;
        let mut rev_model = FlowModel::init(flow_cfg, &mut rng)?;
        let stored = train_supervised_toy(&mut stored_model, &data, &train_cfg(BackpropMode::Stored))?;
        let reversible =
            train_supervised_toy(&mut rev_model, &data, &train_cfg(BackpropMode::Reversible))?;
        println!(
            "memstat T={steps:>2}: stored peak {:>4} activations, reversible peak {:>3}",
            stored.peak_activations, reversible.peak_activations
        );
        stored_peaks.push(stored.peak_activations);
        reversible_peaks.push(reversible.peak_activations);
    }
    let flat = reversible_peaks.windows(2).all(|w| w[0] == w[1]);
    let growth = *stored_peaks.last().unwrap() as f64 / stored_peaks[0] as f64;
    println!(
        "memstat: reversible peak constant across depth: {flat}; stored grows x{growth:.1} from T=2 to T=12"
    );
    Ok(())
}
