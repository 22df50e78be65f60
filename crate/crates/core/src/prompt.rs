//! Prompt construction for encoder-decoder in-context learning.
//!
//! A prompt is a set of rendered demonstrations followed by the rendered
//! target input. With encoder placement everything goes to the encoder and
//! the decoder scores only the answer; with decoder placement the target
//! input moves to the decoder prefix. A sentinel token can close the encoder
//! input and open the answer, and a mode tag can open the encoder input.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{self, MODE_TAGS};

pub const DEFAULT_SEPARATOR: &str = "\n\n";

pub fn sentinel_marker() -> String {
    tokenizer::sentinel(0)
}

pub type Fields = BTreeMap<String, String>;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Text(String),
    Field(String),
}

/// A string with `{field}` placeholders. `{{` and `}}` are literal braces.
#[derive(Clone, PartialEq, Eq)]
pub struct Template {
    source: String,
    segments: Vec<Segment>,
}

impl fmt::Debug for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Template({:?})", self.source)
    }
}

impl Template {
    pub fn parse(source: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut text = String::new();
        let mut chars = source.char_indices().peekable();
        while let Some((pos, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    text.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    text.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some((_, '}')) => break,
                            Some((_, '{')) | None => {
                                return Err(Error::TemplateSyntax(format!(
                                    "unclosed placeholder at byte {pos} in {source:?}"
                                )))
                            }
                            Some((_, ch)) => name.push(ch),
                        }
                    }
                    let name = name.trim().to_string();
                    if name.is_empty() {
                        return Err(Error::TemplateSyntax(format!(
                            "empty placeholder at byte {pos} in {source:?}"
                        )));
                    }
                    if !text.is_empty() {
                        segments.push(Segment::Text(std::mem::take(&mut text)));
                    }
                    segments.push(Segment::Field(name));
                }
                '}' => {
                    return Err(Error::TemplateSyntax(format!(
                        "unmatched '}}' at byte {pos} in {source:?}"
                    )))
                }
                c => text.push(c),
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }
        Ok(Self {
            source: source.to_string(),
            segments,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Distinct placeholder names in order of first appearance.
    pub fn fields(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for s in &self.segments {
            if let Segment::Field(f) = s {
                if !out.contains(&f.as_str()) {
                    out.push(f);
                }
            }
        }
        out
    }

    pub fn render(&self, fields: &Fields) -> Result<String> {
        self.render_with(|name| fields.get(name).map(String::as_str))
    }

    fn render_with<'a>(&self, lookup: impl Fn(&str) -> Option<&'a str>) -> Result<String> {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => out.push_str(t),
                Segment::Field(f) => {
                    out.push_str(lookup(f).ok_or_else(|| Error::Template { field: f.clone() })?)
                }
            }
        }
        Ok(out)
    }

    /// Text before the first placeholder.
    fn lead(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => out.push_str(t),
                Segment::Field(_) => break,
            }
        }
        out
    }
}

impl Serialize for Template {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for Template {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Template::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Template file contents: `{input_template, target_template, separator}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub input_template: Template,
    pub target_template: Template,
    #[serde(default = "default_separator")]
    pub separator: String,
}

fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Target input sits at the end of the encoder input.
    #[default]
    Encoder,
    /// Target input becomes the decoder prefix.
    Decoder,
}

/// Every switch that shapes a prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub placement: Placement,
    pub use_sentinel: bool,
    pub mode_tag: Option<String>,
    pub input_template: Template,
    /// Exactly one distinct placeholder, bound to the answer text.
    pub target_template: Template,
    pub separator: String,
}

impl PromptPlan {
    pub fn new(
        placement: Placement,
        use_sentinel: bool,
        mode_tag: Option<&str>,
        templates: &PromptTemplates,
    ) -> Result<Self> {
        let plan = Self {
            placement,
            use_sentinel,
            mode_tag: mode_tag.map(str::to_string),
            input_template: templates.input_template.clone(),
            target_template: templates.target_template.clone(),
            separator: templates.separator.clone(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(tag) = &self.mode_tag {
            if !MODE_TAGS.contains(&tag.as_str()) {
                return Err(Error::Plan(format!(
                    "mode tag {tag:?} is not one of {MODE_TAGS:?}"
                )));
            }
        }
        if self.use_sentinel && self.placement == Placement::Decoder {
            return Err(Error::Plan(
                "a sentinel cannot be used when the target input is on the decoder side".into(),
            ));
        }
        let answer = self.target_template.fields();
        if answer.len() != 1 {
            return Err(Error::Plan(format!(
                "target template {:?} must have exactly one placeholder, found {}",
                self.target_template.source(),
                answer.len()
            )));
        }
        Ok(())
    }

    /// Checks that every input-template field is present in `schema`.
    pub fn check_schema<'a>(&self, schema: impl IntoIterator<Item = &'a String>) -> Result<()> {
        let schema: Vec<&String> = schema.into_iter().collect();
        for f in self.input_template.fields() {
            if !schema.iter().any(|s| s.as_str() == f) {
                return Err(Error::Template {
                    field: f.to_string(),
                });
            }
        }
        Ok(())
    }

    fn answer_field(&self) -> &str {
        self.target_template.fields()[0]
    }

    fn tag_prefix(&self) -> String {
        self.mode_tag
            .as_ref()
            .map(|t| format!("{t} "))
            .unwrap_or_default()
    }

    fn render_demo(&self, demo: &Demonstration) -> Result<String> {
        let input = self.input_template.render(&demo.fields)?;
        let answer = self.answer_field();
        let target = self
            .target_template
            .render_with(|f| (f == answer).then_some(demo.output.as_str()))?;
        Ok(input + &target)
    }

    fn renderer(&self) -> TargetRenderer {
        TargetRenderer {
            sentinel: self.use_sentinel,
            template: self.target_template.clone(),
        }
    }

    /// Digest of everything that affects prompt text.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("plan serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// One worked example: input fields plus the gold answer text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub fields: Fields,
    pub output: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FewShotInstance {
    pub demonstrations: Vec<Demonstration>,
    pub target_fields: Fields,
    pub options: Option<Vec<String>>,
    pub reference: Option<String>,
}

/// Renders candidate answers for the decoder side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetRenderer {
    sentinel: bool,
    template: Template,
}

impl TargetRenderer {
    pub fn render(&self, answer: &str) -> String {
        let body = self
            .template
            .render_with(|_| Some(answer))
            .expect("single-placeholder template always renders");
        self.with_sentinel(body)
    }

    /// The fixed text that precedes the answer; used as a forced prefix when
    /// generating.
    pub fn lead(&self) -> String {
        self.with_sentinel(self.template.lead())
    }

    fn with_sentinel(&self, body: String) -> String {
        if !self.sentinel {
            return body;
        }
        let sep = if body.starts_with(char::is_whitespace) {
            ""
        } else {
            " "
        };
        format!("{}{sep}{body}", sentinel_marker())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConcatPrompt {
    pub encoder_text: String,
    pub decoder_prefix: String,
    pub target: TargetRenderer,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusedPrompts {
    /// One encoder input per demonstration, in demonstration order.
    pub encoder_texts: Vec<String>,
    pub target: TargetRenderer,
}

/// Single-input prompt holding every demonstration.
pub fn build_concat_prompt(instance: &FewShotInstance, plan: &PromptPlan) -> Result<ConcatPrompt> {
    plan.validate()?;
    let demos = instance
        .demonstrations
        .iter()
        .map(|d| plan.render_demo(d))
        .collect::<Result<Vec<_>>>()?;
    let input = plan.input_template.render(&instance.target_fields)?;
    let mut encoder_text = plan.tag_prefix();
    encoder_text.push_str(&demos.join(&plan.separator));
    let decoder_prefix = match plan.placement {
        Placement::Encoder => {
            if !demos.is_empty() {
                encoder_text.push_str(&plan.separator);
            }
            encoder_text.push_str(&input);
            if plan.use_sentinel {
                encoder_text.push_str(&sentinel_marker());
            }
            String::new()
        }
        Placement::Decoder => input,
    };
    Ok(ConcatPrompt {
        encoder_text,
        decoder_prefix,
        target: plan.renderer(),
    })
}

/// One encoder input per demonstration, each paired with the target input.
pub fn build_fused_prompts(instance: &FewShotInstance, plan: &PromptPlan) -> Result<FusedPrompts> {
    plan.validate()?;
    if plan.placement != Placement::Encoder {
        return Err(Error::Plan(
            "fusion needs the target input on the encoder side".into(),
        ));
    }
    if instance.demonstrations.is_empty() {
        return Err(Error::Plan(
            "fusion needs at least one demonstration".into(),
        ));
    }
    let input = plan.input_template.render(&instance.target_fields)?;
    let tail = if plan.use_sentinel {
        format!("{input}{}", sentinel_marker())
    } else {
        input
    };
    let encoder_texts = instance
        .demonstrations
        .iter()
        .map(|d| {
            Ok(format!(
                "{}{}{}{tail}",
                plan.tag_prefix(),
                plan.render_demo(d)?,
                plan.separator
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FusedPrompts {
        encoder_texts,
        target: plan.renderer(),
    })
}
