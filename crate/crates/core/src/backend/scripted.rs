use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionBackend, CompletionRequest, Reply};

/// Returns the prompt unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoBackend;

impl CompletionBackend for EchoBackend {
    fn call(&self, request: &CompletionRequest) -> Result<Reply, BackendError> {
        Ok(Reply::text(request.prompt.clone()))
    }
}

type ScriptFn = dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync;

/// Deterministic backend driven by a user-supplied function of the request.
/// A `None` from the function surfaces as [`BackendError::NoScriptedRule`].
pub struct ScriptedBackend {
    script: Box<ScriptFn>,
}

/// One substring rule for [`ScriptedBackend::from_rules`]. A rule matches when
/// the prompt contains every string in `all_of` (and `contains`, if set).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(default)]
    pub contains: Option<String>,
    #[serde(default)]
    pub all_of: Vec<String>,
    pub respond: String,
}

impl ScriptRule {
    pub fn new(contains: impl Into<String>, respond: impl Into<String>) -> Self {
        Self {
            contains: Some(contains.into()),
            all_of: Vec::new(),
            respond: respond.into(),
        }
    }

    fn matches(&self, prompt: &str) -> bool {
        self.contains
            .iter()
            .chain(self.all_of.iter())
            .all(|needle| prompt.contains(needle.as_str()))
    }
}

impl ScriptedBackend {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static,
    {
        Self { script: Box::new(f) }
    }

    /// Total function of the prompt text.
    pub fn from_fn<F>(f: F) -> Self
    where
        F: Fn(&str) -> String + Send + Sync + 'static,
    {
        Self::new(move |req| Some(f(&req.prompt)))
    }

    /// First matching rule wins; `fallback` answers everything else.
    pub fn from_rules(rules: Vec<ScriptRule>, fallback: Option<String>) -> Self {
        Self::new(move |req| {
            rules
                .iter()
                .find(|r| r.matches(&req.prompt))
                .map(|r| r.respond.clone())
                .or_else(|| fallback.clone())
        })
    }
}

impl CompletionBackend for ScriptedBackend {
    fn call(&self, request: &CompletionRequest) -> Result<Reply, BackendError> {
        (self.script)(request).map(Reply::text).ok_or(BackendError::NoScriptedRule)
    }
}
