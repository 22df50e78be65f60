use serde::{Deserialize, Serialize};

use super::report::{Aggregate, EvalReport, ExampleRecord, Outcome};
use super::rouge::{rouge_l, rouge_n};
use super::sampling::{sample_shots, ShotSetting};
use super::task::{Example, Target, Task, TaskKind};
use crate::error::{Error, Result};
use crate::fusion::{
    encode_inputs, encoder_ids, greedy_generate, score_option, select_option_with, FusionMode,
    ScoreNormalization,
};
use crate::model::{Checkpoint, EncoderStates};
use crate::parallel;
use crate::prompt::{
    build_concat_prompt, build_fused_prompts, Demonstration, FewShotInstance, Placement,
    PromptPlan, TargetRenderer,
};
use crate::tokenizer::{decode_ids, encode_text};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 32;

/// Everything besides the checkpoint, task and plan that shapes a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub mode: FusionMode,
    pub k: usize,
    pub seed: u64,
    pub setting: ShotSetting,
    pub limit: Option<usize>,
    /// Worker threads for per-example evaluation (0 = one per core).
    pub workers: usize,
    pub normalization: ScoreNormalization,
    pub max_new_tokens: usize,
    /// Keep only the last `max_positions` tokens of each encoder input.
    pub truncate_left: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            mode: FusionMode::Original,
            k: 0,
            seed: 0,
            setting: ShotSetting::Fixed,
            limit: None,
            workers: 0,
            normalization: ScoreNormalization::Sum,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            truncate_left: false,
        }
    }
}

/// Rejects mode/plan/task combinations before any model call.
pub fn check_compatible(task: &Task, plan: &PromptPlan, settings: &EvalSettings) -> Result<()> {
    plan.validate()?;
    if settings.mode.is_fusion() {
        if plan.placement != Placement::Encoder {
            return Err(Error::Plan(format!(
                "{} fusion needs encoder placement",
                settings.mode
            )));
        }
        if settings.k == 0 {
            return Err(Error::Plan(format!(
                "{} fusion needs k ≥ 1; zero-shot runs use original mode",
                settings.mode
            )));
        }
    }
    if settings.max_new_tokens == 0 && task.kind == TaskKind::Generation {
        return Err(Error::Argument("max_new_tokens must be at least 1".into()));
    }
    let first = task
        .examples
        .first()
        .ok_or_else(|| Error::Argument(format!("task {:?} is empty", task.name)))?;
    plan.check_schema(first.fields.keys())
}

pub fn make_instance(task: &Task, demos: &[usize], example: &Example) -> FewShotInstance {
    let (options, reference) = match &example.target {
        Target::Choice { options, .. } => (Some(options.clone()), None),
        Target::Reference(r) => (None, Some(r.clone())),
    };
    FewShotInstance {
        demonstrations: demos
            .iter()
            .map(|&i| Demonstration {
                fields: task.examples[i].fields.clone(),
                output: task.examples[i].gold_output().to_string(),
            })
            .collect(),
        target_fields: example.fields.clone(),
        options,
        reference,
    }
}

/// Token-level model inputs for one instance under one mode.
#[derive(Clone, Debug)]
pub struct PreparedInputs {
    pub encoder_inputs: Vec<Vec<u32>>,
    pub decoder_prefix: Vec<u32>,
    pub target: TargetRenderer,
}

impl PreparedInputs {
    pub fn encode(&self, ckpt: &Checkpoint) -> Result<Vec<EncoderStates>> {
        encode_inputs(ckpt, &self.encoder_inputs)
    }
}

pub fn prepare_inputs(
    ckpt: &Checkpoint,
    instance: &FewShotInstance,
    plan: &PromptPlan,
    mode: FusionMode,
    truncate_left: bool,
) -> Result<PreparedInputs> {
    let (texts, decoder_prefix, target) = if mode.is_fusion() {
        let fused = build_fused_prompts(instance, plan)?;
        (fused.encoder_texts, String::new(), fused.target)
    } else {
        let p = build_concat_prompt(instance, plan)?;
        (vec![p.encoder_text], p.decoder_prefix, p.target)
    };
    let max = ckpt.config().max_positions;
    let encoder_inputs = texts
        .iter()
        .map(|t| {
            let mut ids = encoder_ids(t);
            if truncate_left && ids.len() > max {
                ids.drain(..ids.len() - max);
            }
            ids
        })
        .collect();
    Ok(PreparedInputs {
        encoder_inputs,
        decoder_prefix: encode_text(&decoder_prefix),
        target,
    })
}

/// Scores every option and returns (chosen index, per-option NLL).
pub fn choose_option(
    ckpt: &Checkpoint,
    mode: FusionMode,
    enc: &[EncoderStates],
    decoder_prefix: &[u32],
    target: &TargetRenderer,
    options: &[String],
    normalization: ScoreNormalization,
) -> Result<(usize, Vec<f64>)> {
    let scores = options
        .iter()
        .enumerate()
        .map(|(i, opt)| {
            let ids = encode_text(&target.render(opt));
            let mut s = score_option(ckpt, mode, enc, decoder_prefix, &ids)?;
            s.option_index = i;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let chosen = select_option_with(&scores, normalization)?;
    Ok((chosen, scores.iter().map(|s| s.total_nll).collect()))
}

/// Greedy continuation after the decoder prefix and the fixed answer lead.
pub fn generate_text(
    ckpt: &Checkpoint,
    mode: FusionMode,
    enc: &[EncoderStates],
    inputs: &PreparedInputs,
    max_new_tokens: usize,
) -> Result<String> {
    let mut prefix = inputs.decoder_prefix.clone();
    prefix.extend(encode_text(&inputs.target.lead()));
    let ids = greedy_generate(ckpt, mode, enc, &prefix, max_new_tokens)?;
    Ok(decode_ids(&ids)?.trim().to_string())
}

fn evaluate_example(
    ckpt: &Checkpoint,
    task: &Task,
    plan: &PromptPlan,
    settings: &EvalSettings,
    index: usize,
    demos: &[usize],
) -> Result<ExampleRecord> {
    let example = &task.examples[index];
    let instance = make_instance(task, demos, example);
    let inputs = prepare_inputs(ckpt, &instance, plan, settings.mode, settings.truncate_left)?;
    let enc = inputs.encode(ckpt)?;
    let outcome = match &example.target {
        Target::Choice {
            options,
            answer_idx,
        } => {
            let (chosen, option_nll) = choose_option(
                ckpt,
                settings.mode,
                &enc,
                &inputs.decoder_prefix,
                &inputs.target,
                options,
                settings.normalization,
            )?;
            Outcome::Choice {
                chosen,
                answer_idx: *answer_idx,
                correct: chosen == *answer_idx,
                option_nll,
            }
        }
        Target::Reference(reference) => {
            let text = generate_text(ckpt, settings.mode, &enc, &inputs, settings.max_new_tokens)?;
            Outcome::Generation {
                rouge1: rouge_n(&text, reference, 1).f1,
                rouge2: rouge_n(&text, reference, 2).f1,
                rouge_l: rouge_l(&text, reference).f1,
                text,
            }
        }
    };
    Ok(ExampleRecord {
        index,
        id: example.id.clone(),
        demonstrations: demos.iter().map(|&i| task.examples[i].id.clone()).collect(),
        outcome,
    })
}

/// Test examples and their demonstrations, in task order.
pub fn plan_examples(task: &Task, settings: &EvalSettings) -> Result<Vec<(usize, Vec<usize>)>> {
    let limit = settings.limit.unwrap_or(usize::MAX);
    match settings.setting {
        ShotSetting::Fixed => {
            let demos = sample_shots(task, settings.k, settings.seed, ShotSetting::Fixed, None)?;
            Ok((0..task.examples.len())
                .filter(|i| !demos.contains(i))
                .take(limit)
                .map(|i| (i, demos.clone()))
                .collect())
        }
        ShotSetting::Nonfixed => (0..task.examples.len())
            .take(limit)
            .map(|i| {
                let demos = sample_shots(
                    task,
                    settings.k,
                    settings.seed,
                    ShotSetting::Nonfixed,
                    Some(i),
                )?;
                Ok((i, demos))
            })
            .collect(),
    }
}

pub(crate) fn base_report(task: &Task, plan: &PromptPlan, settings: &EvalSettings) -> EvalReport {
    EvalReport {
        task: task.name.clone(),
        kind: task.kind,
        mode: settings.mode,
        plan: plan.clone(),
        plan_digest: plan.digest(),
        k: settings.k,
        seed: settings.seed,
        sampling: settings.setting,
        normalization: settings.normalization,
        n_evaluated: 0,
        examples: Vec::new(),
        aggregate: Aggregate::default(),
        permutation: None,
        created_at: None,
    }
}

/// Evaluates the task and returns a report. The report (apart from
/// `created_at`, which is left unset) depends only on the arguments, not
/// on the worker count.
pub fn run_eval(
    ckpt: &Checkpoint,
    task: &Task,
    plan: &PromptPlan,
    settings: &EvalSettings,
) -> Result<EvalReport> {
    check_compatible(task, plan, settings)?;
    let work = plan_examples(task, settings)?;
    let records = parallel::with_workers(settings.workers, || {
        parallel::try_map(&work, |(index, demos)| {
            evaluate_example(ckpt, task, plan, settings, *index, demos)
        })
    })??;

    let mut report = base_report(task, plan, settings);
    report.n_evaluated = records.len();
    report.aggregate = Aggregate::from_records(&records);
    report.examples = records;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub index: usize,
    pub id: String,
    pub text: String,
}

/// Greedy outputs for each test example, regardless of task kind.
pub fn generate_all(
    ckpt: &Checkpoint,
    task: &Task,
    plan: &PromptPlan,
    settings: &EvalSettings,
) -> Result<Vec<Generation>> {
    check_compatible(task, plan, settings)?;
    if settings.max_new_tokens == 0 {
        return Err(Error::Argument("max_new_tokens must be at least 1".into()));
    }
    let work = plan_examples(task, settings)?;
    parallel::with_workers(settings.workers, || {
        parallel::try_map(&work, |(index, demos)| {
            let example = &task.examples[*index];
            let instance = make_instance(task, demos, example);
            let inputs =
                prepare_inputs(ckpt, &instance, plan, settings.mode, settings.truncate_left)?;
            let enc = inputs.encode(ckpt)?;
            Ok(Generation {
                index: *index,
                id: example.id.clone(),
                text: generate_text(ckpt, settings.mode, &enc, &inputs, settings.max_new_tokens)?,
            })
        })
    })?
}
