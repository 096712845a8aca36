//! Pipeline commands behind the `gancompress` binary. Every command is a
//! pure function of its inputs and writes only under its output directory.

mod config;
pub mod pgm;
mod report;

pub use config::{ArchConfig, FinalFinetune, PretrainSection, RunConfig};
pub use report::{fitness_curves, CompressionReport, FitnessCurve, GeneratorReport};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::coevolution::{coevolve, derive_seed, finetune_config, GanEvaluator, GaConfig};
use crate::data::{generate_task, load_dataset, save_dataset, split, Dataset, Domain, Split};
use crate::error::{Error, Result};
use crate::genome::{extract_compact, flop_count, param_count, Genome};
use crate::models::losses::{cycle_loss, dis_aware_loss, gen_aware_loss};
use crate::models::network::{conv_params, filter_shape};
use crate::models::train::{finetune_pair, pretrain, EpochTrace, PretrainConfig};
use crate::models::{CompactPair, CycleGanBundle, DisMap, Direction, Layer, Network, Reduction};
use crate::tensor::io::load_archive;
use crate::tensor::{AdamConfig, Tensor};

pub const BUNDLE_FILE: &str = "bundle.json";
pub const COMPACT_FILE: &str = "compact.json";
pub const REPORT_FILE: &str = "report.json";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Both domains, split into train / validation / fine-tune parts.
pub struct TaskData {
    pub x: Split,
    pub y: Split,
}

impl TaskData {
    pub fn domain(&self, dir: Direction) -> &Split {
        match dir {
            Direction::G1 => &self.x,
            Direction::G2 => &self.y,
        }
    }
}

pub fn generate_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    generate_task(cfg.task()?, cfg.samples_per_domain, derive_seed(cfg.seed, &[0xDA7A]))
}

pub fn prepare_data(cfg: &RunConfig) -> Result<TaskData> {
    let (x, y) = generate_data(cfg)?;
    let sx = split(&x, cfg.val_fraction, cfg.ga.subset_fraction, derive_seed(cfg.seed, &[0x5, 1]))?;
    let sy = split(&y, cfg.val_fraction, cfg.ga.subset_fraction, derive_seed(cfg.seed, &[0x5, 2]))?;
    Ok(TaskData { x: sx, y: sy })
}

pub struct PretrainOutput {
    pub bundle: CycleGanBundle,
    pub trace: Vec<EpochTrace>,
    pub checkpoint: PathBuf,
}

/// Trains a fresh bundle on the configured task and writes the checkpoint,
/// the per-epoch trace, the generated datasets and a config echo.
pub fn cmd_pretrain(cfg: &RunConfig, out: &Path) -> Result<PretrainOutput> {
    cfg.validate()?;
    ensure_dir(out)?;
    let data = prepare_data(cfg)?;
    let init = CycleGanBundle::init(cfg.arch.generator(), cfg.arch.discriminator(), cfg.ga.lambda, cfg.seed)?;
    let pc = PretrainConfig {
        epochs: cfg.pretrain.epochs,
        adam: cfg.pretrain.adam,
        reduction: cfg.pretrain.reduction,
    };
    let (bundle, trace) = pretrain(
        &init,
        &data.x.full_train(),
        &data.y.full_train(),
        &pc,
        derive_seed(cfg.seed, &[0x7A1]),
    )?;
    let checkpoint = out.join(BUNDLE_FILE);
    bundle.save(&checkpoint)?;
    let mut csv = format!("{}\n", EpochTrace::CSV_HEADER);
    for t in &trace {
        csv.push_str(&t.csv_row());
        csv.push('\n');
    }
    write(&out.join("pretrain_trace.csv"), csv)?;
    let (x, y) = generate_data(cfg)?;
    save_dataset(&out.join("data_x.json"), &x)?;
    save_dataset(&out.join("data_y.json"), &y)?;
    write(&out.join("config.toml"), cfg.to_toml()?)?;
    Ok(PretrainOutput {
        bundle,
        trace,
        checkpoint,
    })
}

fn check_arch(cfg: &RunConfig, bundle: &CycleGanBundle) -> Result<()> {
    let (g, d) = (cfg.arch.generator(), cfg.arch.discriminator());
    if bundle.arch_g() != &g || bundle.arch_d() != &d {
        return Err(Error::ArchMismatch(format!(
            "checkpoint holds '{}'/'{}', config describes '{}'/'{}'",
            bundle.arch_g().name,
            bundle.arch_d().name,
            g.name,
            d.name
        )));
    }
    Ok(())
}

pub struct CompressOutput {
    pub report: CompressionReport,
    pub genomes: [Genome; 2],
    pub compact: CompactPair,
}

/// Runs the search, fine-tunes both elites on the full training split and
/// reports what was saved.
pub fn cmd_compress(cfg: &RunConfig, checkpoint: &Path, out: &Path, jobs: usize) -> Result<CompressOutput> {
    cfg.validate()?;
    let bundle = CycleGanBundle::load(checkpoint)?;
    check_arch(cfg, &bundle)?;
    ensure_dir(out)?;
    let data = prepare_data(cfg)?;
    let ga = GaConfig {
        seed: derive_seed(cfg.seed, &[0x6A, cfg.ga.seed]),
        ..cfg.ga.clone()
    };
    let ev = GanEvaluator::new(
        &bundle,
        [&data.x.finetune.samples, &data.y.finetune.samples],
        [&data.x.val.samples, &data.y.val.samples],
        &ga,
    )?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let result = pool.install(|| coevolve(&ev, &ga))?;

    let tune = crate::models::train::FinetuneConfig {
        adam: AdamConfig {
            lr: cfg.finetune.lr,
            ..AdamConfig::default()
        },
        ..finetune_config(&ga)
    };
    let [n1, n2] = finetune_pair(
        [&result.artifacts[0], &result.artifacts[1]],
        &bundle,
        &data.x.full_train(),
        &data.y.full_train(),
        cfg.finetune.epochs,
        &tune,
        derive_seed(cfg.seed, &[0xF17E]),
    )?;
    let genomes = [result.best[0].genome.clone(), result.best[1].genome.clone()];
    let finals = [&n1, &n2];

    let mut generators = Vec::new();
    for (i, dir) in [Direction::G1, Direction::G2].into_iter().enumerate() {
        let orig = bundle.generator(dir);
        let genome = &genomes[i];
        let spec = bundle.arch_g();
        let params_after = param_count(genome, spec)?;
        if params_after != finals[i].param_count() {
            return Err(Error::contract(format!(
                "compact network holds {} parameters, genome accounting says {params_after}",
                finals[i].param_count()
            )));
        }
        let flops = flop_count(genome, spec, (crate::data::SIDE, crate::data::SIDE))?;
        let val = &data.domain(dir).val.samples;
        let red = ga.reduction;
        let disc = bundle.discriminator(dir);
        generators.push(GeneratorReport {
            generator: format!("{dir:?}"),
            genome_digest: genome.digest(),
            genome_bits: genome.len(),
            genome_kept: genome.count_ones(),
            params_before: orig.param_count(),
            params_after,
            memory_ratio: orig.param_count() as f64 / params_after as f64,
            flops_before: flops.full_macs,
            flops_after: flops.macs,
            flop_ratio: flops.full_macs as f64 / flops.macs as f64,
            val_dis_aware_loss: dis_aware_loss(orig, finals[i], disc, val, red, ga.dis_map)?,
            val_gen_aware_loss: gen_aware_loss(orig, finals[i], val, red)?,
            val_cycle_loss: cycle_loss(finals[i], finals[1 - i], val, red)?,
            original_val_cycle_loss: cycle_loss(orig, bundle.generator(dir.peer()), val, red)?,
            search: result.final_eval[i].clone(),
        });
    }
    let report = CompressionReport {
        task: cfg.task.clone(),
        seed: cfg.seed,
        gamma: ga.gamma,
        lambda: ga.lambda,
        fidelity: ga.fidelity,
        reduction: ga.reduction,
        generators,
        fitness_curves: fitness_curves(&result.history),
    };

    let compact = CompactPair {
        g1: n1,
        g2: n2,
        source_arch: bundle.arch_g().clone(),
        genome_g1: genomes[0].to_text(),
        genome_g2: genomes[1].to_text(),
    };
    compact.save(&out.join(COMPACT_FILE))?;
    write(&out.join("genome_g1.txt"), genomes[0].to_text())?;
    write(&out.join("genome_g2.txt"), genomes[1].to_text())?;
    let mut jsonl = String::new();
    let mut csv = format!("{}\n", crate::coevolution::GenerationRecord::CSV_HEADER);
    for r in &result.history {
        jsonl.push_str(&serde_json::to_string(r)?);
        jsonl.push('\n');
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write(&out.join("run_log.jsonl"), jsonl)?;
    write(&out.join("fitness.csv"), csv)?;
    write(&out.join(REPORT_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    write(&out.join("config.toml"), cfg.to_toml()?)?;
    Ok(CompressOutput {
        report,
        genomes,
        compact,
    })
}

pub fn read_genome(path: &Path) -> Result<Genome> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Genome::from_text(&text).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Slices the masked filters out of both generators of a checkpoint.
pub fn cmd_extract(checkpoint: &Path, genomes: [&Path; 2], out: &Path) -> Result<CompactPair> {
    let bundle = CycleGanBundle::load(checkpoint)?;
    let g1 = read_genome(genomes[0])?;
    let g2 = read_genome(genomes[1])?;
    let pair = CompactPair {
        g1: extract_compact(&bundle.g1, &g1)?,
        g2: extract_compact(&bundle.g2, &g2)?,
        source_arch: bundle.arch_g().clone(),
        genome_g1: g1.to_text(),
        genome_g2: g2.to_text(),
    };
    ensure_dir(out)?;
    pair.save(&out.join(COMPACT_FILE))?;
    Ok(pair)
}

/// Generators of either a full bundle or a compact pair checkpoint.
pub fn load_generators(checkpoint: &Path) -> Result<[Network; 2]> {
    let (meta, _) = load_archive(checkpoint)?;
    if meta.get("arch_g1").is_some() {
        let p = CompactPair::load(checkpoint)?;
        Ok([p.g1, p.g2])
    } else {
        let b = CycleGanBundle::load(checkpoint)?;
        Ok([b.g1, b.g2])
    }
}

/// Writes one min-max normalized graymap per filter of `layer` and an
/// `index.txt` listing them. Channels of a filter are tiled left to right.
pub fn cmd_export_filters(checkpoint: &Path, dir: Direction, layer: usize, out: &Path) -> Result<Vec<PathBuf>> {
    let [g1, g2] = load_generators(checkpoint)?;
    let net = if dir == Direction::G1 { g1 } else { g2 };
    let (conv, transpose, weight) = match net.spec.layers.get(layer) {
        Some(Layer::Conv(c)) => (c.clone(), false, format!("{layer}.weight")),
        Some(Layer::ConvTranspose(c)) => (c.clone(), true, format!("{layer}.weight")),
        Some(Layer::Residual(r)) => (r.conv_a(), false, format!("{layer}.a.weight")),
        _ => {
            return Err(Error::Config(format!(
                "layer {layer} of '{}' has no filters (valid: {:?})",
                net.spec.name,
                conv_params(&net.spec).iter().map(|p| p.weight.clone()).collect::<Vec<_>>()
            )))
        }
    };
    let w = &net.weights[&weight];
    let shape = filter_shape(&conv, transpose);
    let [kh, kw] = conv.kernel;
    let (filters, channels) = (conv.filters, conv.channels);
    ensure_dir(out)?;
    let mut index = String::from("file,filter,min,max\n");
    let mut files = Vec::with_capacity(filters);
    for n in 0..filters {
        let mut px = vec![0.0; channels * kh * kw];
        for c in 0..channels {
            for i in 0..kh {
                for j in 0..kw {
                    let src = if transpose {
                        ((c * shape[1] + n) * kh + i) * kw + j
                    } else {
                        ((n * shape[1] + c) * kh + i) * kw + j
                    };
                    px[i * channels * kw + c * kw + j] = w.data()[src];
                }
            }
        }
        let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let name = format!("filter_{n:03}.pgm");
        write(&out.join(&name), pgm::encode(channels * kw, kh, &pgm::normalize(&px)))?;
        writeln!(index, "{name},{n},{lo:e},{hi:e}").expect("string write");
        files.push(out.join(name));
    }
    write(&out.join("index.txt"), index)?;
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslateSummary {
    pub direction: String,
    pub samples: usize,
    pub cycle_loss: f64,
    /// Against the original generator and discriminator, when supplied.
    pub dis_aware_loss: Option<f64>,
}

/// Translates a dataset with the generator matching its domain.
pub fn cmd_translate(
    checkpoint: &Path,
    dataset: &Path,
    original: Option<&Path>,
    red: Reduction,
    map: DisMap,
    out: &Path,
) -> Result<TranslateSummary> {
    let gens = load_generators(checkpoint)?;
    let ds = load_dataset(dataset)?;
    let (dir, i) = match ds.domain {
        Domain::X => (Direction::G1, 0),
        Domain::Y => (Direction::G2, 1),
    };
    let (gen, peer) = (&gens[i], &gens[1 - i]);
    if ds.samples[0].shape().first() != Some(&gen.spec.in_channels) {
        return Err(Error::Dimension {
            op: "translate",
            lhs: ds.samples[0].shape().to_vec(),
            rhs: vec![gen.spec.in_channels],
        });
    }
    let translated: Vec<Tensor> = ds.samples.iter().map(|x| gen.infer(x)).collect::<Result<_>>()?;
    let dis = match original {
        Some(p) => {
            let b = CycleGanBundle::load(p)?;
            Some(dis_aware_loss(b.generator(dir), gen, b.discriminator(dir), &ds.samples, red, map)?)
        }
        None => None,
    };
    let summary = TranslateSummary {
        direction: format!("{dir:?}"),
        samples: ds.len(),
        cycle_loss: cycle_loss(gen, peer, &ds.samples, red)?,
        dis_aware_loss: dis,
    };
    let images = out.join("images");
    ensure_dir(&images)?;
    for (k, t) in translated.iter().enumerate() {
        let [_, h, w] = t.shape() else {
            return Err(Error::contract("translated sample is not [C,H,W]"));
        };
        let unit: Vec<f64> = t.data()[..h * w].iter().map(|v| (v + 1.0) / 2.0).collect();
        write(&images.join(format!("{k:04}.pgm")), pgm::encode(*w, *h, &unit))?;
    }
    let out_ds = Dataset {
        samples: translated,
        domain: if ds.domain == Domain::X { Domain::Y } else { Domain::X },
        task: ds.task,
        seed: ds.seed,
    };
    save_dataset(&out.join("translated.json"), &out_ds)?;
    write(&out.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
