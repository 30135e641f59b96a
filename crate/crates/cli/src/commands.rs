//! Subcommand implementations. Each one validates its configuration and
//! inputs before creating the output directory or writing anything.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use imac_core::circuits::Fidelity;
use imac_core::config::{RunConfig, CIFAR10_DIR_ENV, MNIST_DIR_ENV};
use imac_core::data::{load_cifar10, load_mnist, synthetic_images, DatasetHandle, DatasetKind, ImageSet};
use imac_core::device::{BiasPoint, DeviceState};
use imac_core::network::{argmax, export_netlist, map_network, read_parameters, write_parameters, ImacNetwork, ImacTopology};
use imac_core::perf::{
    calibrate, energy, estimate_profile, imac_throughput, summary_table, write_energy_csv, write_perf_csv, write_profile_csv,
    CalibrationTargets, CostModel, PerfRow, WorkloadProfile,
};
use imac_core::pipeline::{read_out, write_trace_csv, AdcMode, AdcParams, HeteroPipeline};
use imac_core::rng::{Seeds, Stream};
use imac_core::selftest;
use imac_core::training::{
    lenet5, read_checkpoint, reduced_vgg, train_cnn_two_step, train_mlp, vgg16, write_checkpoint, write_metrics_csv, Checkpoint, CnnSpec,
    TwoStepOptions,
};

use crate::{AdcBits, Cli, CliError, Command, DataArgs, DatasetArg, Model, ParamSource, PerfArgs, PerfModel};

type Result<T> = std::result::Result<T, CliError>;

struct Context {
    config: RunConfig,
    seed: u64,
    out: PathBuf,
}

impl Context {
    fn seeds(&self) -> Seeds {
        Seeds::new(self.seed)
    }

    /// Creates the output directory on first use.
    fn out_file(&self, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    let ctx = Context {
        seed: config.seed,
        config,
        out: cli.out,
    };
    match cli.command {
        Command::Devcheck { bias } => devcheck(&ctx, bias),
        Command::TrainMlp(data) => train_mlp_cmd(&ctx, &data),
        Command::TrainCnn { model, data } => train_cnn_cmd(&ctx, model, &data),
        Command::Infer {
            source,
            fidelity,
            adc_bits,
            index,
            data,
        } => infer(&ctx, &source, fidelity.map(Fidelity::from), adc_bits, index, &data),
        Command::Pipeline {
            checkpoint,
            index,
            evaluate,
            data,
        } => pipeline(&ctx, &checkpoint, index, evaluate, &data),
        Command::Perf(args) => perf(&ctx, &args),
        Command::ExportNetlist { source, output } => export(&ctx, &source, output),
        Command::Selftest { quick } => selftest_cmd(&ctx, quick),
    }
}

fn devcheck(ctx: &Context, bias: f64) -> Result<()> {
    let d = ctx.config.device;
    d.validate()?;
    let at = BiasPoint::new(bias, f64::INFINITY)?;
    let rows = [
        ("mtj_area_um2", d.area_um2(), "um^2"),
        ("r_p_ohm", d.resistance(DeviceState::P, BiasPoint::ZERO)?, "ohm"),
        ("r_ap_0v_ohm", d.resistance(DeviceState::AP, BiasPoint::ZERO)?, "ohm"),
        ("tmr_0v", d.tmr_at_bias(BiasPoint::ZERO)?, "ratio"),
        ("bias_v", bias, "V"),
        ("tmr_at_bias", d.tmr_at_bias(at)?, "ratio"),
        ("r_ap_at_bias_ohm", d.resistance(DeviceState::AP, at)?, "ohm"),
        ("g_p_s", d.conductance(DeviceState::P, at)?, "S"),
        ("g_ap_at_bias_s", d.conductance(DeviceState::AP, at)?, "S"),
        ("delta_g_at_bias_s", d.conductance_swing(at)?, "S"),
    ];
    for (name, value, unit) in rows {
        println!("{name:<20} {value:<24} {unit}");
    }
    Ok(())
}

fn dataset_kind(data: &DataArgs, default: DatasetKind) -> DatasetKind {
    match data.dataset {
        Some(DatasetArg::Mnist) => DatasetKind::Mnist,
        Some(DatasetArg::Cifar10) => DatasetKind::Cifar10,
        Some(DatasetArg::Synthetic) => DatasetKind::Synthetic,
        None => default,
    }
}

/// Loads the requested dataset and applies the split limits. Synthetic
/// images mimic the shape of `like`.
fn load_data(ctx: &Context, data: &DataArgs, default: DatasetKind, like: &CnnSpec) -> Result<DatasetHandle> {
    let kind = dataset_kind(data, default);
    let dir = |configured: Option<PathBuf>, env: &str, name: &str| {
        data.data_dir.clone().or(configured).ok_or_else(|| {
            CliError::Usage(format!("no {name} directory: pass --data-dir, set data.{}_dir or {env}", name.to_lowercase().replace('-', "")))
        })
    };
    let mut handle = match kind {
        DatasetKind::Mnist => load_mnist(&dir(ctx.config.data.mnist_dir(), MNIST_DIR_ENV, "MNIST")?)?,
        DatasetKind::Cifar10 => load_cifar10(&dir(ctx.config.data.cifar10_dir(), CIFAR10_DIR_ENV, "CIFAR-10")?)?,
        DatasetKind::Synthetic => {
            let mut rng = ctx.seeds().stream(Stream::Data);
            let n = data.synthetic_samples;
            let s = like.input;
            let classes = like.classes();
            DatasetHandle {
                kind,
                train: synthetic_images(&mut rng, n, s.channels, s.height, classes),
                test: synthetic_images(&mut rng, n, s.channels, s.height, classes),
            }
        }
    };
    if let Some(n) = data.train_limit {
        handle.train = handle.train.truncated(n);
    }
    if let Some(n) = data.test_limit {
        handle.test = handle.test.truncated(n);
    }
    Ok(handle)
}

fn write_csv_file(path: &Path, write: impl FnOnce(BufWriter<File>) -> imac_core::Result<()>) -> Result<()> {
    write(BufWriter::new(File::create(path)?))?;
    Ok(())
}

fn mlp_like(dims: &[usize]) -> CnnSpec {
    let side = (dims[0] as f64).sqrt() as usize;
    let mut spec = lenet5();
    spec.input = imac_core::training::Shape::new(1, side, side);
    spec.fc = vec![dims[0], *dims.last().expect("validated topology")];
    spec
}

fn train_mlp_cmd(ctx: &Context, data: &DataArgs) -> Result<()> {
    let dims = ctx.config.topology.mlp.clone();
    let handle = load_data(ctx, data, DatasetKind::Mnist, &mlp_like(&dims))?;
    let (train, test) = (handle.train.to_features(), handle.test.to_features());
    let started = Instant::now();
    let report = train_mlp(&train, Some(&test), &dims, &ctx.config.training.mlp, &ctx.seeds())?;
    let elapsed = started.elapsed().as_secs_f64();
    let network = map_network(&report.parameters, &ctx.config.mlp_map_options())?;

    write_csv_file(&ctx.out_file("mlp_metrics.csv")?, |w| write_metrics_csv(w, &report.history))?;
    write_parameters(&ctx.out_file("mlp.params")?, &report.parameters)?;
    let checkpoint = Checkpoint {
        cnn: None,
        teacher: report.teacher.clone(),
        parameters: report.parameters.clone(),
    };
    write_checkpoint(&ctx.out_file("mlp.ckpt")?, &checkpoint)?;

    println!("topology             {dims:?}");
    println!("best_epoch           {}", report.best_epoch);
    println!("test_accuracy        {}", network.evaluate(&test, Fidelity::Ideal)?);
    if ctx.config.circuit.fidelity == Fidelity::Circuit {
        println!("test_accuracy_circuit {}", network.evaluate(&test, Fidelity::Circuit)?);
    }
    println!("train_seconds        {elapsed:.1}");
    Ok(())
}

/// IMAC latency of `network` in whole CPU cycles, at least one.
fn latency_cycles(cost: &CostModel, topology: &ImacTopology) -> u64 {
    let cycles = imac_throughput(topology, cost.imac_layer_latency).cycles_at(cost.cpu_frequency);
    (cycles - 1e-9).ceil().max(1.0) as u64
}

fn train_cnn_cmd(ctx: &Context, model: Model, data: &DataArgs) -> Result<()> {
    let (spec, default) = match model {
        Model::Lenet => (lenet5(), DatasetKind::Mnist),
        Model::ReducedVgg => (reduced_vgg(), DatasetKind::Cifar10),
    };
    let handle = load_data(ctx, data, default, &spec)?;
    let options = TwoStepOptions {
        step1: ctx.config.training.step1.clone(),
        step2: ctx.config.training.step2.clone(),
        cache_dir: ctx.config.data.cache_dir.clone(),
    };
    let started = Instant::now();
    let report = train_cnn_two_step(&spec, &handle.train, &handle.test, &options, &ctx.seeds())?;
    let head = map_network(&report.fc.parameters, &ctx.config.head_map_options())?;
    let latency = latency_cycles(&ctx.config.cost_model, head.topology());
    let pipeline = HeteroPipeline::new(report.step1.cnn.clone(), head, ctx.config.adc_mode(), latency)?;
    let eval = pipeline.evaluate(&handle.test)?;
    let elapsed = started.elapsed().as_secs_f64();

    write_csv_file(&ctx.out_file("step1_metrics.csv")?, |w| write_metrics_csv(w, &report.step1.history))?;
    write_csv_file(&ctx.out_file("step2_metrics.csv")?, |w| write_metrics_csv(w, &report.fc.history))?;
    let checkpoint = Checkpoint {
        cnn: Some(report.step1.cnn.clone()),
        teacher: report.fc.teacher.clone(),
        parameters: report.fc.parameters.clone(),
    };
    write_checkpoint(&ctx.out_file("cnn.ckpt")?, &checkpoint)?;

    println!("full_precision_accuracy {}", report.full_precision_accuracy);
    println!("binarized_accuracy      {}", report.binarized_accuracy);
    println!("pipeline_accuracy       {}", eval.accuracy);
    println!("accuracy_gap            {}", report.full_precision_accuracy - eval.accuracy);
    println!("traces_legal            {}", eval.traces_legal);
    println!("cycles_per_inference    {}", eval.cycles_per_inference);
    println!("feature_cache_hit       {}", report.cache_hit);
    println!("seconds                 {elapsed:.1}");
    Ok(())
}

enum Loaded {
    Mlp(ImacNetwork),
    Cnn(HeteroPipeline),
}

fn adc_mode(ctx: &Context, bits: Option<AdcBits>) -> AdcMode {
    match bits {
        None => ctx.config.adc_mode(),
        Some(AdcBits::Off) => AdcMode::Bypass,
        Some(AdcBits::Bits(b)) => AdcMode::Quantize(AdcParams::for_neuron(&ctx.config.circuit.neuron, b)),
    }
}

fn load_source(ctx: &Context, source: &ParamSource, adc: AdcMode) -> Result<Loaded> {
    adc.validate()?;
    if let Some(path) = &source.params {
        return Ok(Loaded::Mlp(map_network(&read_parameters(path)?, &ctx.config.mlp_map_options())?));
    }
    let path = source.checkpoint.as_ref().expect("clap requires one source");
    let ckpt = read_checkpoint(path)?;
    match ckpt.cnn {
        None => Ok(Loaded::Mlp(map_network(&ckpt.parameters, &ctx.config.mlp_map_options())?)),
        Some(cnn) => {
            let head = map_network(&ckpt.parameters, &ctx.config.head_map_options())?;
            let latency = latency_cycles(&ctx.config.cost_model, head.topology());
            Ok(Loaded::Cnn(HeteroPipeline::new(cnn, head, adc, latency)?))
        }
    }
}

fn infer(ctx: &Context, source: &ParamSource, fidelity: Option<Fidelity>, bits: Option<AdcBits>, index: Option<usize>, data: &DataArgs) -> Result<()> {
    let adc = adc_mode(ctx, bits);
    let fidelity = fidelity.unwrap_or(ctx.config.circuit.fidelity);
    let loaded = load_source(ctx, source, adc)?;
    let like = match &loaded {
        Loaded::Mlp(net) => mlp_like(&[net.input_dim(), net.output_dim()]),
        Loaded::Cnn(p) => p.cnn().spec().clone(),
    };
    let default = if like.input.channels == 3 { DatasetKind::Cifar10 } else { DatasetKind::Mnist };
    let test = load_data(ctx, data, default, &like)?.test;
    let classify = |i: usize| -> Result<(usize, Vec<f64>)> {
        match &loaded {
            Loaded::Mlp(net) => {
                let x: Vec<f64> = test.image(i).iter().map(|&v| f64::from(v)).collect();
                let scores = net.infer_with(&x, fidelity)?.scores;
                let volts = read_out(&net.circuit().neuron, adc, &scores);
                Ok((argmax(&volts), volts))
            }
            Loaded::Cnn(p) => {
                let run = p.run_inference_with(test.image(i), fidelity)?;
                Ok((run.label, run.scores))
            }
        }
    };
    match index {
        Some(i) => {
            if i >= test.len() {
                return Err(CliError::Usage(format!("index {i} is beyond the {}-image test set", test.len())));
            }
            let (label, volts) = classify(i)?;
            println!("index      {i}");
            println!("label      {}", test.label(i));
            println!("predicted  {label}");
            println!("outputs_v  {volts:?}");
        }
        None => {
            let mut correct = 0;
            for i in 0..test.len() {
                if classify(i)?.0 == usize::from(test.label(i)) {
                    correct += 1;
                }
            }
            println!("samples    {}", test.len());
            println!("accuracy   {}", correct as f64 / test.len().max(1) as f64);
        }
    }
    Ok(())
}

fn pipeline(ctx: &Context, checkpoint: &Path, index: usize, evaluate: bool, data: &DataArgs) -> Result<()> {
    let source = ParamSource {
        params: None,
        checkpoint: Some(checkpoint.to_path_buf()),
    };
    let Loaded::Cnn(pipeline) = load_source(ctx, &source, ctx.config.adc_mode())? else {
        return Err(CliError::Usage("the pipeline needs a CNN checkpoint".into()));
    };
    let spec = pipeline.cnn().spec().clone();
    let default = if spec.input.channels == 3 { DatasetKind::Cifar10 } else { DatasetKind::Mnist };
    let test: ImageSet = load_data(ctx, data, default, &spec)?.test;
    if index >= test.len() {
        return Err(CliError::Usage(format!("index {index} is beyond the {}-image test set", test.len())));
    }
    let run = pipeline.run_inference(test.image(index))?;
    let trace_path = ctx.out_file("trace.csv")?;
    write_csv_file(&trace_path, |w| write_trace_csv(w, &run.trace))?;
    println!("label      {}", test.label(index));
    println!("predicted  {}", run.label);
    println!("fills      {}", run.fills);
    println!("cycles     {}", run.trace.last().map_or(0, |e| e.cycle));
    println!("trace      {}", trace_path.display());
    if evaluate {
        let eval = pipeline.evaluate(&test)?;
        println!("accuracy   {}", eval.accuracy);
        println!("legal      {}", eval.traces_legal);
        if !eval.traces_legal {
            return Err(CliError::CheckFailed("a protocol trace was rejected by the grammar".into()));
        }
    }
    Ok(())
}

struct Workload {
    name: &'static str,
    spec: CnnSpec,
    imac_energy: f64,
    targets: CalibrationTargets,
}

/// Reported aggregates used as default calibration targets.
fn workloads() -> [Workload; 2] {
    [
        Workload {
            name: "LeNet-5",
            spec: lenet5(),
            imac_energy: 97e-9,
            targets: CalibrationTargets {
                speedup: 0.112,
                energy_reduction: 0.10,
            },
        },
        Workload {
            name: "VGG",
            spec: vgg16(),
            imac_energy: 512e-9,
            targets: CalibrationTargets {
                speedup: 0.013,
                energy_reduction: 0.065,
            },
        },
    ]
}

fn perf(ctx: &Context, args: &PerfArgs) -> Result<()> {
    let overridden = args.target_speedup.is_some() || args.target_energy.is_some() || args.imac_energy.is_some();
    let model = args.model.unwrap_or(if overridden { PerfModel::Lenet } else { PerfModel::All });
    if overridden && model == PerfModel::All {
        return Err(CliError::Usage("targets apply to one model; pick --model lenet or --model vgg".into()));
    }
    if (args.target_speedup.is_some() || args.target_energy.is_some()) && !args.calibrate {
        return Err(CliError::Usage("targets need --calibrate".into()));
    }
    let selected: Vec<Workload> = workloads()
        .into_iter()
        .filter(|w| match model {
            PerfModel::All => true,
            PerfModel::Lenet => w.name == "LeNet-5",
            PerfModel::Vgg => w.name == "VGG",
        })
        .collect();

    let mut rows = Vec::new();
    let mut outputs: Vec<(String, WorkloadProfile, CostModel)> = Vec::new();
    for w in &selected {
        let cost = ctx.config.cost_model.with_imac_energy(args.imac_energy.unwrap_or(w.imac_energy));
        let mut profile = estimate_profile(w.name, &w.spec, &cost)?;
        if args.calibrate {
            let targets = CalibrationTargets {
                speedup: args.target_speedup.unwrap_or(w.targets.speedup),
                energy_reduction: args.target_energy.unwrap_or(w.targets.energy_reduction),
            };
            let c = calibrate(&profile, &cost, targets)?;
            println!(
                "{:<8} fc_time_fraction {:.4} fc_energy_fraction {:.4} amdahl_fraction {:.4}",
                w.name,
                c.fc_time_fraction,
                c.fc_energy_fraction,
                1.0 - 1.0 / (1.0 + targets.speedup)
            );
            profile = c.profile;
        }
        rows.push(PerfRow::evaluate(&profile, &cost, args.accuracy_diff)?);
        outputs.push((w.name.to_lowercase().replace(['-', ' '], "_"), profile, cost));
    }

    let mlp = ImacTopology::plan(&ctx.config.topology.mlp, ctx.config.budget())?;
    let t = imac_throughput(&mlp, ctx.config.cost_model.imac_layer_latency);

    write_csv_file(&ctx.out_file("perf.csv")?, |w| write_perf_csv(w, &rows))?;
    for (stem, profile, cost) in &outputs {
        let report = energy(profile, cost)?;
        write_csv_file(&ctx.out_file(&format!("energy_{stem}.csv"))?, |w| write_energy_csv(w, &profile.name, &report))?;
        write_csv_file(&ctx.out_file(&format!("profile_{stem}.csv"))?, |w| write_profile_csv(w, profile))?;
    }
    print!("{}", summary_table(&rows));
    println!(
        "IMAC {:?}: latency {:.2} ns, {:.3e} inferences/s, {:.1} cycles at {:.2} GHz",
        ctx.config.topology.mlp,
        t.latency * 1e9,
        t.inferences_per_second,
        t.cycles_at(ctx.config.cost_model.cpu_frequency),
        ctx.config.cost_model.cpu_frequency / 1e9
    );
    Ok(())
}

fn export(ctx: &Context, source: &ParamSource, output: Option<PathBuf>) -> Result<()> {
    let network = match load_source(ctx, source, AdcMode::Bypass)? {
        Loaded::Mlp(net) => net,
        Loaded::Cnn(p) => p.network().clone(),
    };
    let text = export_netlist(&network)?;
    let path = match output {
        Some(p) => p,
        None => ctx.out_file("network.sp")?,
    };
    std::fs::write(&path, text)?;
    println!("subarrays  {}", network.topology().subarrays_used());
    println!("netlist    {}", path.display());
    Ok(())
}

fn selftest_cmd(ctx: &Context, quick: bool) -> Result<()> {
    let seed = ctx.seed;
    let (nets, max_dim, round_trips, sequences) = if quick { (50, 64, 20, 1000) } else { (1000, 512, 100, 10_000) };
    let mut failures = Vec::new();
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name:<22} {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures.push(name.to_string());
        }
    };

    let r = selftest::crossbar_exhaustive(&ctx.config.circuit_config())?;
    report("crossbar-exhaustive", r.max_abs_error <= 1e-12, format!("{} networks, max |err| {:e}", r.networks, r.max_abs_error));
    let r = selftest::crossbar_random(seed, nets, max_dim)?;
    report("crossbar-random", r.max_abs_error <= 1e-12, format!("{} networks up to {max_dim} wide, max |err| {:e}", r.networks, r.max_abs_error));
    let n = selftest::netlist_round_trips(seed, round_trips)?;
    report(
        "netlist-round-trip",
        n.byte_identical == n.topologies && n.inference_identical == n.topologies,
        format!("{}/{} byte-identical, {}/{} same inference", n.byte_identical, n.topologies, n.inference_identical, n.topologies),
    );
    let p = selftest::protocol_suite(seed, sequences, sequences);
    report(
        "protocol",
        p.false_accepts == 0 && p.false_rejects == 0,
        format!("{} legal, {} illegal, {} false rejects, {} false accepts", p.legal, p.illegal, p.false_rejects, p.false_accepts),
    );
    let g = selftest::toy_gradient_check(seed)?;
    report("gradient-check", g.max_relative_error < 1e-4, format!("{} parameters, max rel err {:e}", g.parameters, g.max_relative_error));

    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("failed: {}", failures.join(", "))))
    }
}
