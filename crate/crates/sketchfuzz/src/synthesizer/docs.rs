//! Documentation summarization over a local corpus: select the best-matching
//! file by token overlap, then ask the backend for a per-feature entry list.
//! Offline backends fall back to verbatim truncation of the matched file.

use std::path::Path;

use crate::error::BackendError;
use crate::model::{Feature, FeatureId};
use crate::synthesizer::{CompletionBackend, CompletionRequest, RequestKind, Transcript};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocEntry {
    pub name: String,
    pub description: String,
    pub example: String,
}

/// Per-feature documentation digest attached to synthesis prompts.
#[derive(Debug, Clone, Default)]
pub struct DocSummary {
    pub feature_id: FeatureId,
    pub entries: Vec<DocEntry>,
}

const TRUNCATE_CHARS: usize = 4_000;

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Token-overlap score between the retrieval key and a corpus file's name
/// plus header line.
fn score_file(key: &[String], path: &Path) -> usize {
    let mut doc_tokens: Vec<String> = Vec::new();
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        doc_tokens.extend(tokens(stem));
    }
    if let Ok(text) = std::fs::read_to_string(path) {
        if let Some(first) = text.lines().find(|l| !l.trim().is_empty()) {
            doc_tokens.extend(tokens(first));
        }
    }
    key.iter().filter(|k| doc_tokens.contains(k)).count()
}

/// Step 1 builds a retrieval key from (dbms, level, feature name); step 2
/// picks the corpus file with the best token overlap; step 3 asks the
/// backend for the entry list. An empty or missing corpus yields an empty
/// summary and synthesis proceeds on model knowledge alone.
pub fn summarize_docs(
    corpus_dir: Option<&Path>,
    dbms: &str,
    feature: &Feature,
    backend: &CompletionBackend,
    transcript: &Transcript,
) -> Result<DocSummary, BackendError> {
    let empty = DocSummary { feature_id: feature.id, entries: Vec::new() };
    let Some(dir) = corpus_dir else { return Ok(empty) };

    let mut key = tokens(dbms);
    key.extend(tokens(feature.level.phrase()));
    key.extend(tokens(&feature.name));

    let mut best: Option<(usize, std::path::PathBuf)> = None;
    let entries = match std::fs::read_dir(dir) {
        Ok(e) => e,
        Err(_) => return Ok(empty),
    };
    let mut paths: Vec<std::path::PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "txt").unwrap_or(false))
        .collect();
    paths.sort();
    for path in paths {
        let s = score_file(&key, &path);
        if s > 0 && best.as_ref().map(|(b, _)| s > *b).unwrap_or(true) {
            best = Some((s, path));
        }
    }
    let Some((_, path)) = best else { return Ok(empty) };
    let Ok(document) = std::fs::read_to_string(&path) else { return Ok(empty) };
    let truncated: String = document.chars().take(TRUNCATE_CHARS).collect();

    let prompt = format!(
        "Please summarize the below document of [{dbms}]. List each [{level}] with their \
         description and examples. Respond with CSV rows, columns: name,description,example.\n\n\
         {truncated}",
        level = feature.level.phrase(),
    );
    let request = CompletionRequest {
        kind: RequestKind::DocSummary {
            level: feature.level,
            feature: feature.name.clone(),
        },
        prompt,
    };
    match backend.complete(&request, transcript)? {
        Some(response) => {
            let mut entries = Vec::new();
            for line in response.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with("```") {
                    continue;
                }
                let mut parts = line.splitn(3, ',');
                let name = parts.next().unwrap_or("").trim().to_string();
                if name.is_empty() || name.eq_ignore_ascii_case("name") {
                    continue;
                }
                entries.push(DocEntry {
                    name,
                    description: parts.next().unwrap_or("").trim().to_string(),
                    example: parts.next().unwrap_or("").trim().to_string(),
                });
            }
            Ok(DocSummary { feature_id: feature.id, entries })
        }
        // Offline fallback: the matched document itself, truncated, as one
        // entry.
        None => Ok(DocSummary {
            feature_id: feature.id,
            entries: vec![DocEntry {
                name: feature.name.clone(),
                description: truncated,
                example: String::new(),
            }],
        }),
    }
}
