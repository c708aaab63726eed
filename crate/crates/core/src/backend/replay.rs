use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use super::{read_transcript, BackendError, CompletionBackend, CompletionRequest, Reply, TranscriptRecord};

/// Answers from a recorded transcript, matching on request content.
///
/// Identical requests recorded several times are served in recorded order;
/// once exhausted the last recording keeps being returned. Matching never
/// depends on call order across different requests, so concurrent callers
/// replay correctly.
pub struct ReplayBackend {
    recordings: HashMap<String, Vec<TranscriptRecord>>,
    served: Mutex<HashMap<String, usize>>,
}

impl ReplayBackend {
    pub fn new(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        let mut recordings: HashMap<String, Vec<TranscriptRecord>> = HashMap::new();
        for r in records {
            recordings.entry(r.request.fingerprint()).or_default().push(r);
        }
        for list in recordings.values_mut() {
            list.sort_by_key(|r| r.call_id);
        }
        Self {
            recordings,
            served: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(read_transcript(path)?))
    }
}

impl CompletionBackend for ReplayBackend {
    fn call(&self, request: &CompletionRequest) -> Result<Reply, BackendError> {
        let fingerprint = request.fingerprint();
        let Some(list) = self.recordings.get(&fingerprint) else {
            return Err(BackendError::ReplayMiss { fingerprint });
        };
        let index = {
            let mut served = self.served.lock().expect("replay lock poisoned");
            let n = served.entry(fingerprint).or_insert(0);
            let i = (*n).min(list.len() - 1);
            *n += 1;
            i
        };
        let r = &list[index];
        Ok(Reply {
            text: r.response.text.clone(),
            input_tokens: Some(r.response.input_tokens),
            output_tokens: Some(r.response.output_tokens),
            latency_ms: Some(r.response.latency_ms),
            timestamp: Some(r.timestamp),
            retries: r.retries,
        })
    }
}
