#![allow(dead_code)]

pub mod goldens;
pub mod oracle;

use std::path::Path;

use fusicl::harness::{parse_task, Task};
use fusicl::model::{init_toy, Checkpoint, ModelConfig};
use fusicl::prompt::{Placement, PromptPlan, PromptTemplates, Template};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 2+2 layers, d_model = 64, seed 42.
pub fn toy64() -> Checkpoint {
    init_toy(&ModelConfig::toy(64, 4, 2), 42).unwrap()
}

/// 2+2 layers, d_model = 8.
pub fn toy8() -> Checkpoint {
    init_toy(&ModelConfig::toy(8, 2, 2), 42).unwrap()
}

const WORDS: [&str; 12] = [
    "good", "bad", "film", "plot", "fine", "dull", "great", "slow", "fun", "awful", "cast", "score",
];

/// JSONL text for a seeded two-option task.
pub fn synthetic_mc_jsonl(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n {
        let len = rng.random_range(2..5);
        let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        let answer = rng.random_range(0..2);
        out.push_str(&format!(
            "{{\"id\":\"ex{i}\",\"fields\":{{\"text\":\"{}\"}},\"options\":[\"yes\",\"no\"],\"answer_idx\":{answer}}}\n",
            words.join(" ")
        ));
    }
    out
}

pub fn synthetic_gen_jsonl(n: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for i in 0..n {
        let words: Vec<&str> = (0..4).map(|_| *WORDS.choose(&mut rng).unwrap()).collect();
        out.push_str(&format!(
            "{{\"id\":\"g{i}\",\"fields\":{{\"text\":\"{}\"}},\"reference\":\"{}\"}}\n",
            words.join(" "),
            words[..2].join(" ")
        ));
    }
    out
}

pub fn synthetic_task(n: usize, seed: u64) -> Task {
    parse_task(
        "synthetic",
        &synthetic_mc_jsonl(n, seed),
        Path::new("synthetic.jsonl"),
    )
    .unwrap()
}

pub fn synthetic_gen_task(n: usize, seed: u64) -> Task {
    parse_task(
        "synthetic_gen",
        &synthetic_gen_jsonl(n, seed),
        Path::new("synthetic_gen.jsonl"),
    )
    .unwrap()
}

pub fn review_templates() -> PromptTemplates {
    PromptTemplates {
        input_template: Template::parse("Review: {text}\nPositive?").unwrap(),
        target_template: Template::parse(" {answer}").unwrap(),
        separator: "\n\n".into(),
    }
}

pub fn plan(placement: Placement, sentinel: bool, tag: Option<&str>) -> PromptPlan {
    PromptPlan::new(placement, sentinel, tag, &review_templates()).unwrap()
}

pub fn random_text(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let len = rng.random_range(min..=max);
    (0..len)
        .map(|_| *WORDS.choose(rng).unwrap())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Short prompts: "{text}:" with " {answer}" targets.
pub fn compact_plan() -> PromptPlan {
    let templates = PromptTemplates {
        input_template: Template::parse("{text}:").unwrap(),
        target_template: Template::parse(" {answer}").unwrap(),
        separator: "\n".into(),
    };
    PromptPlan::new(Placement::Encoder, false, None, &templates).unwrap()
}
