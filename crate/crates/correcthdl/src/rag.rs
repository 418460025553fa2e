//! Retrieval-augmented syntax repair.
//!
//! When generated HDL fails compilation, the error log is embedded, the most
//! similar rule template in the library is retrieved by cosine similarity,
//! and the retrieved repair rule is injected into the repair prompt. The
//! loop repeats until compilation succeeds or the iteration limit is hit.
//!
//! The default embedder is a hashed character-trigram term-frequency vector:
//! deterministic, offline, and stable across hosts. Texts are lowercased and
//! digits are collapsed to `#` so line numbers in logs do not dominate the
//! similarity. An external embedding endpoint can be plugged in behind the
//! same trait.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{
    complete_with_backoff, extract_fenced_code, render_template, GatewayError, PromptTemplate,
    Provider, ProviderConfig,
};
use crate::toolchain::{CompileOutcome, HdlCompiler};

#[derive(Debug, Error)]
pub enum RagError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("rule library is empty")]
    EmptyLibrary,
    #[error("rule library invalid: {0}")]
    InvalidLibrary(String),
    #[error("gateway failure during repair: {0}")]
    Gateway(#[from] GatewayError),
    #[error("compiler environment failure: {0}")]
    Environment(String),
}

pub const DEFAULT_EMBED_DIM: usize = 1024;
pub const DEFAULT_EMBEDDER_ID: &str = "trigram-tf-1024";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
}

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Text embedder contract: deterministic for a fixed id and input.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RagError>;
}

/// Hashed character-trigram term-frequency embedder.
pub struct TrigramEmbedder {
    dim: usize,
}

impl Default for TrigramEmbedder {
    fn default() -> Self {
        TrigramEmbedder {
            dim: DEFAULT_EMBED_DIM,
        }
    }
}

// FNV-1a: stable across platforms, unlike the std hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Embedder for TrigramEmbedder {
    fn id(&self) -> &str {
        DEFAULT_EMBEDDER_ID
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RagError> {
        if text.is_empty() {
            return Err(RagError::EmptyText);
        }
        let normalized: String = text
            .to_lowercase()
            .chars()
            .map(|c| if c.is_ascii_digit() { '#' } else { c })
            .collect();
        let bytes = normalized.as_bytes();
        let mut values = vec![0.0f64; self.dim];
        if bytes.len() < 3 {
            let idx = (fnv1a(bytes) % self.dim as u64) as usize;
            values[idx] += 1.0;
        } else {
            for window in bytes.windows(3) {
                let idx = (fnv1a(window) % self.dim as u64) as usize;
                values[idx] += 1.0;
            }
        }
        Ok(EmbeddingVector { values })
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RagError> {
    if a.dimension() != b.dimension() {
        return Err(RagError::DimensionMismatch(a.dimension(), b.dimension()));
    }
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return Err(RagError::ZeroVector);
    }
    let dot: f64 = a
        .values
        .iter()
        .zip(b.values.iter())
        .map(|(x, y)| x * y)
        .sum();
    Ok(dot / (na * nb))
}

/// Syntax-error exemplar plus its repair rule, as stored in the library.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RuleTemplate {
    pub rule_id: String,
    pub error_exemplar: String,
    pub repair_rule: String,
    #[serde(default)]
    pub source_note: String,
}

/// Immutable, embedded rule library.
pub struct RuleLibrary {
    templates: Vec<RuleTemplate>,
    embedder_id: String,
    cached: BTreeMap<String, EmbeddingVector>,
}

#[derive(Debug, Clone)]
pub struct RetrievalResult {
    pub rule: RuleTemplate,
    pub similarity: f64,
}

impl RuleLibrary {
    pub fn build(templates: Vec<RuleTemplate>, embedder: &dyn Embedder) -> Result<Self, RagError> {
        let mut cached = BTreeMap::new();
        for t in &templates {
            if t.error_exemplar.is_empty() || t.repair_rule.is_empty() {
                return Err(RagError::InvalidLibrary(format!(
                    "rule {} has an empty exemplar or repair rule",
                    t.rule_id
                )));
            }
            if cached
                .insert(t.rule_id.clone(), embedder.embed(&t.error_exemplar)?)
                .is_some()
            {
                return Err(RagError::InvalidLibrary(format!(
                    "duplicate rule_id {}",
                    t.rule_id
                )));
            }
        }
        Ok(RuleLibrary {
            templates,
            embedder_id: embedder.id().to_string(),
            cached,
        })
    }

    /// Parse the `.ndrules` file format: one JSON record per line.
    pub fn from_ndrules(text: &str, embedder: &dyn Embedder) -> Result<Self, RagError> {
        let mut templates = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: RuleTemplate = serde_json::from_str(line).map_err(|e| {
                RagError::InvalidLibrary(format!("line {}: {e}", i + 1))
            })?;
            templates.push(t);
        }
        RuleLibrary::build(templates, embedder)
    }

    pub fn to_ndrules(&self) -> String {
        let mut out = String::new();
        for t in &self.templates {
            out.push_str(&serde_json::to_string(t).unwrap());
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn templates(&self) -> &[RuleTemplate] {
        &self.templates
    }

    pub fn embedder_id(&self) -> &str {
        &self.embedder_id
    }

    pub fn embedding_of(&self, rule_id: &str) -> Option<&EmbeddingVector> {
        self.cached.get(rule_id)
    }

    /// Scale every cached embedding by a positive factor. Retrieval argmax
    /// must be unaffected (cosine is scale-invariant); exposed for tests.
    pub fn scale_cached_embeddings(&mut self, factor: f64) {
        assert!(factor > 0.0);
        for v in self.cached.values_mut() {
            for x in &mut v.values {
                *x *= factor;
            }
        }
    }
}

/// Argmax retrieval over the library; ties broken by lexicographically
/// smallest rule_id.
pub fn retrieve_rule(
    library: &RuleLibrary,
    error_log: &str,
    embedder: &dyn Embedder,
) -> Result<RetrievalResult, RagError> {
    if library.is_empty() {
        return Err(RagError::EmptyLibrary);
    }
    let query = embedder.embed(error_log)?;
    let mut best: Option<(f64, &RuleTemplate)> = None;
    for t in &library.templates {
        let cached = library
            .cached
            .get(&t.rule_id)
            .ok_or_else(|| RagError::InvalidLibrary(format!("missing embedding for {}", t.rule_id)))?;
        let sim = cosine_similarity(&query, cached)?;
        best = match best {
            None => Some((sim, t)),
            Some((bs, bt)) => {
                if sim > bs || (sim == bs && t.rule_id < bt.rule_id) {
                    Some((sim, t))
                } else {
                    Some((bs, bt))
                }
            }
        };
    }
    let (similarity, rule) = best.unwrap();
    Ok(RetrievalResult {
        rule: rule.clone(),
        similarity,
    })
}

/// Repair prompt used by the syntax loop. Bindings: code, error_log, repair_rule.
pub fn syntax_repair_template() -> PromptTemplate {
    PromptTemplate::new(
        "syntax_repair",
        "The following Verilog module fails to compile.\n\
         \n\
         Current code:\n```verilog\n{code}\n```\n\
         \n\
         Compiler error log:\n{error_log}\n\
         \n\
         A repair rule retrieved from the HDL syntax rule library:\n{repair_rule}\n\
         \n\
         Apply the rule and return the full corrected module between triple backticks \
         with the `verilog` tag.",
        &["code", "error_log", "repair_rule"],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntaxVerdict {
    Pass,
    Exhausted,
}

/// One archived iteration of the repair loop.
#[derive(Debug, Clone)]
pub struct SyntaxAttempt {
    pub attempt_index: u32,
    pub retrieved_rule_id: Option<String>,
    pub retrieved_similarity: Option<f64>,
    pub code: String,
    pub compile_log: String,
    pub passed: bool,
}

#[derive(Debug)]
pub struct SyntaxRepairOutcome {
    pub verdict: SyntaxVerdict,
    pub final_code: String,
    pub attempts: Vec<SyntaxAttempt>,
}

/// Iterate retrieve → prompt → extract → recompile until Pass or `limit`.
///
/// Gateway and extraction failures consume the iteration; a compiler
/// environment failure aborts without consuming attempts.
pub fn repair_syntax_loop(
    initial_code: &str,
    initial_log: &str,
    library: &RuleLibrary,
    embedder: &dyn Embedder,
    provider: &dyn Provider,
    provider_config: &ProviderConfig,
    compiler: &dyn HdlCompiler,
    limit: u32,
) -> Result<SyntaxRepairOutcome, RagError> {
    let template = syntax_repair_template();
    let mut code = initial_code.to_string();
    let mut log = initial_log.to_string();
    let mut attempts = Vec::new();
    for attempt_index in 1..=limit {
        let retrieval = retrieve_rule(library, &log, embedder)?;
        let mut bindings = BTreeMap::new();
        bindings.insert("code".to_string(), code.clone());
        bindings.insert("error_log".to_string(), log.clone());
        bindings.insert("repair_rule".to_string(), retrieval.rule.repair_rule.clone());
        let prompt = render_template(&template, &bindings)?;

        let mut attempt = SyntaxAttempt {
            attempt_index,
            retrieved_rule_id: Some(retrieval.rule.rule_id.clone()),
            retrieved_similarity: Some(retrieval.similarity),
            code: code.clone(),
            compile_log: log.clone(),
            passed: false,
        };

        let new_code = match complete_with_backoff(
            provider_config,
            provider,
            &prompt,
            Duration::from_millis(10),
        )
        .map_err(RagError::from)
        .and_then(|ex| extract_fenced_code(&ex.response, Some("verilog")).map_err(RagError::from))
        {
            Ok(c) => c,
            Err(_) => {
                // A failed gateway round trip or unextractable response
                // consumes the iteration; the old code carries forward.
                attempts.push(attempt);
                continue;
            }
        };

        let result = compiler
            .compile(&new_code)
            .map_err(|e| RagError::Environment(e.to_string()))?;
        code = new_code;
        attempt.code = code.clone();
        match result.outcome {
            CompileOutcome::Pass => {
                attempt.passed = true;
                attempt.compile_log = result.log;
                attempts.push(attempt);
                return Ok(SyntaxRepairOutcome {
                    verdict: SyntaxVerdict::Pass,
                    final_code: code,
                    attempts,
                });
            }
            CompileOutcome::Fail => {
                log = result.log.clone();
                attempt.compile_log = result.log;
                attempts.push(attempt);
            }
        }
    }
    Ok(SyntaxRepairOutcome {
        verdict: SyntaxVerdict::Exhausted,
        final_code: code,
        attempts,
    })
}

/// The starter rule library shipped with the repo.
pub fn starter_library_text() -> &'static str {
    include_str!("../fixtures/rules/library.ndrules")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ScriptEntry, ScriptedMock};
    use crate::toolchain::MockHdlCompiler;

    fn vec2(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector {
            values: values.to_vec(),
        }
    }

    #[test]
    fn embed_is_deterministic() {
        let e = TrigramEmbedder::default();
        let a = e.embed("syntax error near ';'").unwrap();
        let b = e.embed("syntax error near ';'").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn line_numbers_do_not_dominate() {
        let e = TrigramEmbedder::default();
        let a = e.embed("tb.v:12: syntax error near 'endmodule'").unwrap();
        let b = e.embed("tb.v:987: syntax error near 'endmodule'").unwrap();
        let sim = cosine_similarity(&a, &b).unwrap();
        // Pinned regression bound, observed ~0.99 with the default embedder.
        assert!(sim > 0.9, "similarity {sim}");
    }

    #[test]
    fn empty_text_rejected() {
        let e = TrigramEmbedder::default();
        assert!(matches!(e.embed(""), Err(RagError::EmptyText)));
    }

    #[test]
    fn cosine_identity() {
        let a = vec2(&[1.0, 0.0]);
        assert_eq!(cosine_similarity(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn cosine_orthogonal() {
        assert_eq!(
            cosine_similarity(&vec2(&[1.0, 0.0]), &vec2(&[0.0, 1.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn cosine_45_degrees() {
        let sim = cosine_similarity(&vec2(&[1.0, 1.0]), &vec2(&[1.0, 0.0])).unwrap();
        assert!((sim - 0.70710678).abs() < 1e-8, "{sim}");
    }

    #[test]
    fn cosine_dimension_mismatch() {
        assert!(matches!(
            cosine_similarity(&vec2(&[1.0]), &vec2(&[1.0, 0.0])),
            Err(RagError::DimensionMismatch(1, 2))
        ));
    }

    #[test]
    fn cosine_zero_vector_rejected() {
        assert!(matches!(
            cosine_similarity(&vec2(&[0.0, 0.0]), &vec2(&[1.0, 0.0])),
            Err(RagError::ZeroVector)
        ));
    }

    fn tiny_library(embedder: &dyn Embedder) -> RuleLibrary {
        let rules = vec![
            RuleTemplate {
                rule_id: "r01".into(),
                error_exemplar: "syntax error: missing semicolon at end of statement".into(),
                repair_rule: "terminate every statement with ';'".into(),
                source_note: String::new(),
            },
            RuleTemplate {
                rule_id: "r02".into(),
                error_exemplar: "error: unknown module type some_mod".into(),
                repair_rule: "declare or include the referenced module".into(),
                source_note: String::new(),
            },
            RuleTemplate {
                rule_id: "r03".into(),
                error_exemplar: "error: reg q cannot be driven by primitives or continuous assignment".into(),
                repair_rule: "use wire for continuous assignment targets".into(),
                source_note: String::new(),
            },
        ];
        RuleLibrary::build(rules, embedder).unwrap()
    }

    #[test]
    fn self_match_retrieves_with_similarity_one() {
        let e = TrigramEmbedder::default();
        let lib = tiny_library(&e);
        let log = "error: unknown module type some_mod";
        let r = retrieve_rule(&lib, log, &e).unwrap();
        assert_eq!(r.rule.rule_id, "r02");
        assert!((r.similarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tie_broken_by_lexicographic_rule_id() {
        let e = TrigramEmbedder::default();
        let rules = vec![
            RuleTemplate {
                rule_id: "z-rule".into(),
                error_exemplar: "identical exemplar text".into(),
                repair_rule: "fix it".into(),
                source_note: String::new(),
            },
            RuleTemplate {
                rule_id: "a-rule".into(),
                error_exemplar: "identical exemplar text".into(),
                repair_rule: "fix it".into(),
                source_note: String::new(),
            },
        ];
        let lib = RuleLibrary::build(rules, &e).unwrap();
        let r = retrieve_rule(&lib, "identical exemplar text", &e).unwrap();
        assert_eq!(r.rule.rule_id, "a-rule");
    }

    #[test]
    fn paraphrased_log_retrieves_intended_rule_vs_brute_force() {
        let e = TrigramEmbedder::default();
        let lib = tiny_library(&e);
        let held_out = "error: reg out_val cannot be driven by continuous assignment";
        let query = e.embed(held_out).unwrap();
        // brute-force oracle
        let mut best = (f64::NEG_INFINITY, String::new());
        for t in lib.templates() {
            let sim =
                cosine_similarity(&query, lib.embedding_of(&t.rule_id).unwrap()).unwrap();
            if sim > best.0 {
                best = (sim, t.rule_id.clone());
            }
        }
        let r = retrieve_rule(&lib, held_out, &e).unwrap();
        assert_eq!(r.rule.rule_id, best.1);
        assert_eq!(r.rule.rule_id, "r03");
    }

    #[test]
    fn empty_library_is_error() {
        let e = TrigramEmbedder::default();
        let lib = RuleLibrary::build(vec![], &e).unwrap();
        assert!(matches!(
            retrieve_rule(&lib, "anything", &e),
            Err(RagError::EmptyLibrary)
        ));
    }

    #[test]
    fn starter_library_parses_and_has_rules() {
        let e = TrigramEmbedder::default();
        let lib = RuleLibrary::from_ndrules(starter_library_text(), &e).unwrap();
        assert!(lib.len() >= 20, "starter library has {} rules", lib.len());
    }

    #[test]
    fn scaling_cached_embeddings_preserves_argmax() {
        let e = TrigramEmbedder::default();
        let mut lib = tiny_library(&e);
        let log = "syntax error missing semicolon";
        let before = retrieve_rule(&lib, log, &e).unwrap();
        lib.scale_cached_embeddings(37.5);
        let after = retrieve_rule(&lib, log, &e).unwrap();
        assert_eq!(before.rule.rule_id, after.rule.rule_id);
    }

    #[test]
    fn loop_passes_on_first_repair() {
        let e = TrigramEmbedder::default();
        let lib = tiny_library(&e);
        let mock = ScriptedMock::new(vec![ScriptEntry::respond(
            "repair rule",
            "```verilog\nmodule m; endmodule\n```",
        )]);
        let compiler = MockHdlCompiler::pass_all();
        let out = repair_syntax_loop(
            "module m endmodule",
            "syntax error: missing semicolon",
            &lib,
            &e,
            &mock,
            &ProviderConfig::default(),
            &compiler,
            3,
        )
        .unwrap();
        assert_eq!(out.verdict, SyntaxVerdict::Pass);
        assert_eq!(out.attempts.len(), 1);
        assert_eq!(out.attempts[0].retrieved_rule_id.as_deref(), Some("r01"));
    }

    #[test]
    fn loop_exhausts_at_limit_with_archived_attempts() {
        let e = TrigramEmbedder::default();
        let lib = tiny_library(&e);
        let mock = ScriptedMock::new(vec![
            ScriptEntry::respond("", "```verilog\nstill bad\n```"),
            ScriptEntry::respond("", "```verilog\nstill bad\n```"),
            ScriptEntry::respond("", "```verilog\nstill bad\n```"),
        ]);
        let compiler = MockHdlCompiler::fail_all("persistent syntax error");
        let out = repair_syntax_loop(
            "bad",
            "syntax error",
            &lib,
            &e,
            &mock,
            &ProviderConfig::default(),
            &compiler,
            3,
        )
        .unwrap();
        assert_eq!(out.verdict, SyntaxVerdict::Exhausted);
        assert_eq!(out.attempts.len(), 3);
        assert_eq!(mock.calls_made(), 3);
    }
}
