//! Stored prompt strings and the instance that produces them.

use std::fs;
use std::path::PathBuf;

use fusicl::prompt::{
    build_concat_prompt, build_fused_prompts, Demonstration, FewShotInstance, Placement,
    PromptPlan, PromptTemplates, Template,
};

fn fields(q: &str) -> fusicl::prompt::Fields {
    [("q".to_string(), q.to_string())].into_iter().collect()
}

pub fn arithmetic_instance() -> FewShotInstance {
    FewShotInstance {
        demonstrations: vec![
            Demonstration {
                fields: fields("2+2"),
                output: "4".into(),
            },
            Demonstration {
                fields: fields("1+1"),
                output: "2".into(),
            },
        ],
        target_fields: fields("3+5"),
        options: None,
        reference: Some("8".into()),
    }
}

fn templates() -> PromptTemplates {
    PromptTemplates {
        input_template: Template::parse("Q: {q} A:").unwrap(),
        target_template: Template::parse(" {a}").unwrap(),
        separator: "\n\n".into(),
    }
}

fn read(name: &str) -> String {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "tests", "golden", name]
        .iter()
        .collect();
    fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// (label, produced, stored) for every golden file.
pub fn cases() -> Vec<(String, String, String)> {
    let instance = arithmetic_instance();
    let shapes: [(&str, bool, Option<&str>); 3] = [
        ("vanilla", false, None),
        ("sentinel", true, None),
        ("mode_tag", true, Some("[NLU]")),
    ];
    let mut out = Vec::new();
    for (name, sentinel, tag) in shapes {
        let plan = PromptPlan::new(Placement::Encoder, sentinel, tag, &templates()).unwrap();
        let p = build_concat_prompt(&instance, &plan).unwrap();
        assert!(p.decoder_prefix.is_empty());
        let enc = format!("{name}.encoder.txt");
        let tgt = format!("{name}.target.txt");
        out.push((enc.clone(), p.encoder_text, read(&enc)));
        out.push((tgt.clone(), p.target.render("8"), read(&tgt)));
    }
    let plan = PromptPlan::new(Placement::Encoder, true, Some("[NLU]"), &templates()).unwrap();
    let fused = build_fused_prompts(&instance, &plan).unwrap();
    let name = "fused_mode_tag.encoder1.txt".to_string();
    out.push((name.clone(), fused.encoder_texts[1].clone(), read(&name)));
    out
}
