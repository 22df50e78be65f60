use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::{
    base_report, check_compatible, choose_option, make_instance, prepare_inputs, EvalSettings,
};
use super::report::{
    Aggregate, EvalReport, ExampleRecord, OrderingRecord, Outcome, PermutationStats,
};
use super::sampling::{sample_shots, ShotSetting};
use super::task::{Target, Task, TaskKind};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, EncoderStates};
use crate::parallel;
use crate::prompt::PromptPlan;

/// Largest k for which all k! orderings may be enumerated.
pub const MAX_ALL_ORDERINGS_K: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orderings {
    All,
    /// The identity ordering followed by `m - 1` seeded shuffles.
    Sample(usize),
}

impl fmt::Display for Orderings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Orderings::All => f.write_str("all"),
            Orderings::Sample(m) => write!(f, "sample:{m}"),
        }
    }
}

impl FromStr for Orderings {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(Orderings::All);
        }
        s.strip_prefix("sample:")
            .and_then(|m| m.parse().ok())
            .filter(|&m| m >= 1)
            .map(Orderings::Sample)
            .ok_or_else(|| {
                Error::Argument(format!("orderings must be `all` or `sample:M`, got {s:?}"))
            })
    }
}

fn factorial(k: usize) -> u64 {
    (1..=k as u64).product()
}

/// Demonstration orderings as position lists into the fixed draw.
pub fn enumerate_orderings(k: usize, orderings: Orderings, seed: u64) -> Result<Vec<Vec<usize>>> {
    match orderings {
        Orderings::All => {
            if k > MAX_ALL_ORDERINGS_K {
                return Err(Error::Budget {
                    k,
                    count: factorial(k),
                    limit: factorial(MAX_ALL_ORDERINGS_K),
                });
            }
            Ok((0..k).permutations(k).collect())
        }
        Orderings::Sample(m) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let identity: Vec<usize> = (0..k).collect();
            Ok((0..m)
                .map(|i| {
                    let mut order = identity.clone();
                    if i > 0 {
                        order.shuffle(&mut rng);
                    }
                    order
                })
                .collect())
        }
    }
}

/// Chosen option under every ordering for one test example.
fn chosen_per_ordering(
    ckpt: &Checkpoint,
    task: &Task,
    plan: &PromptPlan,
    settings: &EvalSettings,
    index: usize,
    demos: &[usize],
    orderings: &[Vec<usize>],
) -> Result<Vec<(usize, Vec<f64>)>> {
    let example = &task.examples[index];
    let Target::Choice { options, .. } = &example.target else {
        unreachable!("checked multiple-choice above")
    };
    let mode = settings.mode;
    let score = |enc: &[EncoderStates], inputs: &super::eval::PreparedInputs| {
        choose_option(
            ckpt,
            mode,
            enc,
            &inputs.decoder_prefix,
            &inputs.target,
            options,
            settings.normalization,
        )
    };

    if mode.is_fusion() {
        // each fused input depends on one demonstration only, so encode once
        // and reorder the encoder states
        let instance = make_instance(task, demos, example);
        let inputs = prepare_inputs(ckpt, &instance, plan, mode, settings.truncate_left)?;
        let states = inputs.encode(ckpt)?;
        orderings
            .iter()
            .map(|order| {
                let permuted: Vec<EncoderStates> =
                    order.iter().map(|&p| states[p].clone()).collect();
                score(&permuted, &inputs)
            })
            .collect()
    } else {
        orderings
            .iter()
            .map(|order| {
                let permuted: Vec<usize> = order.iter().map(|&p| demos[p]).collect();
                let instance = make_instance(task, &permuted, example);
                let inputs = prepare_inputs(ckpt, &instance, plan, mode, settings.truncate_left)?;
                let states = inputs.encode(ckpt)?;
                score(&states, &inputs)
            })
            .collect()
    }
}

/// Accuracy under reorderings of one fixed demonstration set.
///
/// The demonstration set is the fixed-setting draw for `settings.seed`; the
/// test examples are the first `n_examples` task examples outside it.
/// `examples` and `aggregate` in the report describe the first ordering
/// (the draw order); `permutation` holds every ordering.
pub fn permutation_study(
    ckpt: &Checkpoint,
    task: &Task,
    plan: &PromptPlan,
    settings: &EvalSettings,
    n_examples: usize,
    orderings: Orderings,
) -> Result<EvalReport> {
    if task.kind != TaskKind::MultipleChoice {
        return Err(Error::Argument(
            "the permutation study measures accuracy and needs a multiple-choice task".into(),
        ));
    }
    check_compatible(task, plan, settings)?;
    let orders = enumerate_orderings(settings.k, orderings, settings.seed)?;
    let demos = sample_shots(task, settings.k, settings.seed, ShotSetting::Fixed, None)?;
    let test: Vec<usize> = (0..task.examples.len())
        .filter(|i| !demos.contains(i))
        .take(n_examples)
        .collect();

    let per_example = parallel::with_workers(settings.workers, || {
        parallel::try_map(&test, |&i| {
            chosen_per_ordering(ckpt, task, plan, settings, i, &demos, &orders)
        })
    })??;

    let answer = |i: usize| match &task.examples[i].target {
        Target::Choice { answer_idx, .. } => *answer_idx,
        Target::Reference(_) => unreachable!(),
    };
    let n = test.len().max(1) as f64;
    let ordering_records: Vec<OrderingRecord> = orders
        .iter()
        .enumerate()
        .map(|(o, order)| {
            let chosen: Vec<usize> = per_example.iter().map(|r| r[o].0).collect();
            let correct = chosen
                .iter()
                .zip(&test)
                .filter(|(&c, &i)| c == answer(i))
                .count();
            OrderingRecord {
                order: order.clone(),
                accuracy: correct as f64 / n,
                chosen,
            }
        })
        .collect();

    let first_order: Vec<String> = orders[0]
        .iter()
        .map(|&p| task.examples[demos[p]].id.clone())
        .collect();
    let records: Vec<ExampleRecord> = test
        .iter()
        .zip(&per_example)
        .map(|(&i, r)| {
            let (chosen, option_nll) = r[0].clone();
            ExampleRecord {
                index: i,
                id: task.examples[i].id.clone(),
                demonstrations: first_order.clone(),
                outcome: Outcome::Choice {
                    chosen,
                    answer_idx: answer(i),
                    correct: chosen == answer(i),
                    option_nll,
                },
            }
        })
        .collect();

    let mut settings = settings.clone();
    settings.setting = ShotSetting::Fixed;
    let mut report = base_report(task, plan, &settings);
    report.n_evaluated = records.len();
    report.aggregate = Aggregate::from_records(&records);
    report.examples = records;
    report.permutation = Some(PermutationStats::from_orderings(ordering_records));
    Ok(report)
}
