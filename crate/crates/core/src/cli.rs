//! Command dispatch behind the `tinyattn` binary.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::Backbone;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{self, Summary};
use crate::model::{AdapterStack, Model, ParamCounts};
use crate::nn::set_trainable;
use crate::tasks::Rule;
use crate::trainer::{self, Mode, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Pretrain,
    Adapt,
    Finetune,
    Merge,
    Eval,
    CountParams,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Pretrain => "pretrain",
            Command::Adapt => "adapt",
            Command::Finetune => "finetune",
            Command::Merge => "merge",
            Command::Eval => "eval",
            Command::CountParams => "count-params",
        }
    }
}

/// Generator for weights created by a run; separate from the shuffle
/// stream the trainer derives from the same seed.
fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    rng
}

fn require<'a>(path: &'a Option<std::path::PathBuf>, key: &str, command: Command) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("`{}` needs `{key}`", command.name())))
}

/// Runs `command` and returns the text it prints on success.
pub fn run(command: Command, config: &RunConfig) -> Result<String> {
    config.validate()?;
    match command {
        Command::Pretrain => pretrain(config),
        Command::Finetune => finetune(config),
        Command::Adapt => adapt(config),
        Command::Merge => merge(config),
        Command::Eval => eval(config),
        Command::CountParams => Ok(count_params(config)),
    }
}

fn train_and_record(command: Command, mut model: Model<f64>, config: &RunConfig, mode: Mode) -> Result<String> {
    config.check_task_fits(&model.backbone.config)?;
    let train_config = trainer::TrainConfig { mode, ..config.train.clone() };
    let report = trainer::train(&mut model, &config.task, &train_config)?;
    let summary = summary(command, &model, config, &report);
    if let Some(path) = &config.paths.checkpoint_out {
        checkpoint::save(path, &model, config.train.seed, Some(&config.task))?;
    }
    if let Some(path) = &config.paths.metrics_out {
        metrics::write(path, &report, &summary)?;
    }
    Ok(serde_json::to_string(&metrics::Record::Summary(summary)).expect("summary serializes") + "\n")
}

fn summary(command: Command, model: &Model<f64>, config: &RunConfig, report: &TrainReport) -> Summary {
    Summary {
        command: command.name().to_string(),
        task: config.task.rule,
        best_accuracy: report.best_accuracy,
        best_step: report.best_step,
        params: ParamCounts::of(model),
        wall_clock_secs: report.wall_clock_secs,
    }
}

fn pretrain(config: &RunConfig) -> Result<String> {
    if config.task.rule != Rule::PretrainNextset {
        return Err(Error::Config(format!(
            "pretrain runs on `{}`, not `{}`",
            Rule::PretrainNextset,
            config.task.rule
        )));
    }
    let mut rng = init_rng(config.train.seed);
    let backbone = Backbone::init(config.backbone, &mut rng)?;
    let model = Model::new(backbone, config.task.classes(), &mut rng);
    train_and_record(Command::Pretrain, model, config, Mode::FullFinetune)
}

/// Full fine-tuning from `paths.checkpoint_in` (or from scratch without
/// one), with a fresh decoder and no adapters.
fn finetune(config: &RunConfig) -> Result<String> {
    let mut rng = init_rng(config.train.seed);
    let backbone = match &config.paths.checkpoint_in {
        Some(p) => checkpoint::load::<f64>(p)?.0.backbone,
        None => Backbone::init(config.backbone, &mut rng)?,
    };
    let mut model = Model::new(backbone, config.task.classes(), &mut rng);
    set_trainable(&mut model, true);
    train_and_record(Command::Finetune, model, config, Mode::FullFinetune)
}

/// Adapter tuning on the frozen backbone of `paths.checkpoint_in`.
///
/// A checkpoint without adapters gets fresh single-head adapters (expanded
/// to `adapter.heads` heads if more are asked for). A checkpoint with a
/// trained single-head adapter and `adapter.heads > 1` is expanded with
/// `init_from_single`; one whose adapter already has `adapter.heads` heads
/// continues training. Decoders are kept when the checkpoint already had
/// adapters and the class count matches.
fn adapt(config: &RunConfig) -> Result<String> {
    let input = require(&config.paths.checkpoint_in, "paths.checkpoint_in", Command::Adapt)?;
    let (loaded, _) = checkpoint::load::<f64>(input)?;
    let mut rng = init_rng(config.train.seed);
    let settings = &config.adapter;
    let hidden = loaded.backbone.config.hidden;
    let layers = loaded.backbone.config.layers;

    let (stack, decoder) = match loaded.adapters {
        None => {
            let single = AdapterStack::init_single_head(
                layers,
                hidden,
                settings.config(),
                settings.placement,
                settings.output_scale,
                &mut rng,
            );
            let stack = if settings.heads > 1 {
                single.init_from_single(settings.heads, settings.init_eps, &mut rng)?
            } else {
                single
            };
            (stack, None)
        }
        Some(stack) => {
            let have = stack.config().expect("stack has layers");
            if stack.placement != settings.placement {
                return Err(Error::Config(format!(
                    "checkpoint adapters are {:?}, config asks for {:?}",
                    stack.placement, settings.placement
                )));
            }
            if have.head_dim != settings.head_dim || have.with_biases != settings.with_biases {
                return Err(Error::Config(format!("checkpoint adapter shape {have:?} does not match the config")));
            }
            let stack = if have.heads == settings.heads {
                stack
            } else if have.heads == 1 {
                stack.init_from_single(settings.heads, settings.init_eps, &mut rng)?
            } else {
                return Err(Error::Config(format!(
                    "cannot turn a {}-head adapter into {} heads",
                    have.heads, settings.heads
                )));
            };
            let keep = (loaded.decoder.outputs() == config.task.classes()).then_some(loaded.decoder);
            (stack, keep)
        }
    };

    let mut model = Model::new(loaded.backbone, config.task.classes(), &mut rng);
    if let Some(d) = decoder {
        model.decoder = d;
    }
    model.attach_adapters(stack)?;
    train_and_record(Command::Adapt, model, config, Mode::AdapterTune)
}

fn merge(config: &RunConfig) -> Result<String> {
    let input = require(&config.paths.checkpoint_in, "paths.checkpoint_in", Command::Merge)?;
    let output = require(&config.paths.checkpoint_out, "paths.checkpoint_out", Command::Merge)?;
    let (mut model, header) = checkpoint::load::<f64>(input)?;
    let stack = model
        .adapters
        .take()
        .ok_or_else(|| Error::Config(format!("`{}` has no adapters to merge", input.display())))?;
    let heads = stack.config().map_or(0, |c| c.heads);
    model.attach_adapters(stack.merge_heads())?;
    checkpoint::save(output, &model, header.seed, header.task.as_ref())?;
    Ok(format!("merged {heads} heads into 1\n"))
}

fn eval(config: &RunConfig) -> Result<String> {
    let input = require(&config.paths.checkpoint_in, "paths.checkpoint_in", Command::Eval)?;
    let (mut model, _) = checkpoint::load::<f64>(input)?;
    config.check_task_fits(&model.backbone.config)?;
    if model.classes() != config.task.classes() {
        return Err(Error::Config(format!(
            "checkpoint decoder has {} classes, task `{}` has {}",
            model.classes(),
            config.task.rule,
            config.task.classes()
        )));
    }
    if config.adapter.head_average {
        model.adapters = model.adapters.map(|a| a.head_averaged());
    }
    let accuracy = trainer::evaluate(&model, &config.task, config.train.val_size)?;
    Ok(format!("{}\n", serde_json::json!({ "task": config.task.rule, "accuracy": accuracy })))
}

fn count_params(config: &RunConfig) -> String {
    let c = ParamCounts::from_configs(&config.backbone, Some(config.adapter.config()), config.task.classes(), false);
    let mut out = String::new();
    let _ = writeln!(out, "adapter={}", c.adapter);
    let _ = writeln!(out, "decoder={}", c.decoder);
    let _ = writeln!(out, "total={}", c.trainable);
    let _ = writeln!(out, "backbone={}", c.backbone);
    let _ = writeln!(out, "adapter_percent={:.4}", c.adapter_percent);
    out
}
