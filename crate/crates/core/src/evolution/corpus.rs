use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

const DEFAULT_CORPUS: &str = include_str!("../../assets/corpus/default.corpus");

const TASK_DESCRIPTIONS: [(&str, &str); 3] = [
    ("lcb", include_str!("../../assets/datasets/lcb.txt")),
    ("humaneval", include_str!("../../assets/datasets/humaneval.txt")),
    ("mbpp", include_str!("../../assets/datasets/mbpp.txt")),
];

/// Which list of the corpus an id refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Section {
    Mutation,
    HyperMutation,
    ThinkingStyle,
}

impl Section {
    const ALL: [Section; 3] = [Section::Mutation, Section::HyperMutation, Section::ThinkingStyle];

    fn header(self) -> &'static str {
        match self {
            Section::Mutation => "[mutation]",
            Section::HyperMutation => "[hyper-mutation]",
            Section::ThinkingStyle => "[thinking-style]",
        }
    }
}

impl std::fmt::Display for Section {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.header().trim_matches(|c| c == '[' || c == ']'))
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("section [{0}] is missing or empty")]
    EmptySection(Section),
    #[error("{section} id {index} out of range (corpus has {len})")]
    IndexOutOfRange { section: Section, index: usize, len: usize },
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evolutionary prompts plus per-dataset task descriptions. Ids are
/// zero-based positions within each section and never change for a given
/// file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCorpus {
    pub mutation_prompts: Vec<String>,
    pub hyper_mutation_prompts: Vec<String>,
    pub thinking_styles: Vec<String>,
    pub task_descriptions: BTreeMap<String, String>,
}

impl PromptCorpus {
    /// The corpus shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(DEFAULT_CORPUS).expect("bundled corpus is well-formed")
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses the corpus file format: optional `#` comment lines before the
    /// first section, then `[mutation]`, `[hyper-mutation]` and
    /// `[thinking-style]` sections whose entries are separated by `---`
    /// lines. Built-in task descriptions are always included.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut sections: BTreeMap<Section, Vec<String>> = BTreeMap::new();
        let mut current: Option<Section> = None;
        let mut entry = String::new();

        let flush = |section: Option<Section>, entry: &mut String, sections: &mut BTreeMap<Section, Vec<String>>, line: usize| {
            let text = entry.trim().to_string();
            entry.clear();
            match section {
                Some(s) if !text.is_empty() => {
                    sections.entry(s).or_default().push(text);
                    Ok(())
                }
                Some(_) => Err(CorpusError::Format {
                    line,
                    reason: "empty entry".into(),
                }),
                None => Ok(()),
            }
        };

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end();
            if let Some(section) = Section::ALL.into_iter().find(|s| line == s.header()) {
                if current.is_some() {
                    flush(current, &mut entry, &mut sections, line_no)?;
                }
                if sections.contains_key(&section) {
                    return Err(CorpusError::Format {
                        line: line_no,
                        reason: format!("section [{section}] repeated"),
                    });
                }
                current = Some(section);
                continue;
            }
            match current {
                None if line.is_empty() || line.starts_with('#') => {}
                None => {
                    return Err(CorpusError::Format {
                        line: line_no,
                        reason: "content before the first section".into(),
                    })
                }
                Some(_) if line == "---" => flush(current, &mut entry, &mut sections, line_no)?,
                Some(_) => {
                    entry.push_str(line);
                    entry.push('\n');
                }
            }
        }
        flush(current, &mut entry, &mut sections, text.lines().count())?;

        let mut take = |s: Section| {
            sections
                .remove(&s)
                .filter(|v| !v.is_empty())
                .ok_or(CorpusError::EmptySection(s))
        };
        Ok(Self {
            mutation_prompts: take(Section::Mutation)?,
            hyper_mutation_prompts: take(Section::HyperMutation)?,
            thinking_styles: take(Section::ThinkingStyle)?,
            task_descriptions: TASK_DESCRIPTIONS
                .iter()
                .map(|(id, text)| (id.to_string(), text.trim().to_string()))
                .collect(),
        })
    }

    pub fn section(&self, section: Section) -> &[String] {
        match section {
            Section::Mutation => &self.mutation_prompts,
            Section::HyperMutation => &self.hyper_mutation_prompts,
            Section::ThinkingStyle => &self.thinking_styles,
        }
    }

    pub fn get(&self, section: Section, index: usize) -> Result<&str, CorpusError> {
        let list = self.section(section);
        list.get(index).map(String::as_str).ok_or(CorpusError::IndexOutOfRange {
            section,
            index,
            len: list.len(),
        })
    }

    pub fn task_description(&self, dataset_id: &str) -> Result<&str, CorpusError> {
        self.task_descriptions
            .get(dataset_id)
            .map(String::as_str)
            .ok_or_else(|| CorpusError::UnknownDataset(dataset_id.to_string()))
    }
}
