use serde::{Deserialize, Serialize};

use super::LayoutError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Framework {
    /// Carriers are the memory tokens' output embeddings.
    Icae,
    /// Carriers are the memory tokens' cached keys and values.
    X500,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Dpl,
    Epl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Ae,
    Lm,
    Qa,
}

macro_rules! lowercase_enum {
    ($ty:ty { $($variant:ident => $name:literal),* $(,)? }) => {
        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(match self { $(Self::$variant => $name),* })
            }
        }

        impl std::str::FromStr for $ty {
            type Err = LayoutError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($name => Ok(Self::$variant),)*
                    other => Err(LayoutError::InvalidConfig(format!(
                        "unknown {} `{other}`",
                        stringify!($ty).to_ascii_lowercase()
                    ))),
                }
            }
        }
    };
}

lowercase_enum!(Framework { Icae => "icae", X500 => "x500" });
lowercase_enum!(Scheme { Dpl => "dpl", Epl => "epl" });
lowercase_enum!(Task { Ae => "ae", Lm => "lm", Qa => "qa" });

/// Scalar hyperparameters of one compression setup.
///
/// The JSON form uses exactly these nine keys; unknown keys are rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutConfig {
    /// Tokens per chunk (`L`).
    pub chunk_size: usize,
    /// Memory tokens appended to each chunk (`|M|`).
    pub memory_count: usize,
    /// Context length `p`; for QA this is `|C|`.
    pub context_len: usize,
    /// Context plus completion (`|X|`), used by the LM task.
    pub total_len: usize,
    pub question_len: usize,
    pub answer_len: usize,
    pub framework: Framework,
    pub scheme: Scheme,
    pub task: Task,
}

impl LayoutConfig {
    /// Two 510-token chunks with 102 memory tokens each (`r = 5`),
    /// `|X| = 2040`, `|Q| = 50`, `|A| = 5`.
    pub fn canonical(task: Task, framework: Framework, scheme: Scheme) -> Self {
        Self {
            chunk_size: 510,
            memory_count: 102,
            context_len: 1020,
            total_len: 2040,
            question_len: 50,
            answer_len: 5,
            framework,
            scheme,
            task,
        }
    }

    pub fn with_task(self, task: Task) -> Self {
        Self { task, ..self }
    }

    pub fn with_framework(self, framework: Framework) -> Self {
        Self { framework, ..self }
    }

    pub fn with_scheme(self, scheme: Scheme) -> Self {
        Self { scheme, ..self }
    }

    /// Number of chunks `k = ceil(p / L)`.
    pub fn chunk_count(&self) -> usize {
        self.context_len.div_ceil(self.chunk_size.max(1))
    }

    /// Compression ratio `r = L / |M|`.
    pub fn ratio(&self) -> f64 {
        self.chunk_size as f64 / self.memory_count as f64
    }

    /// Actual length of chunk `index` (1-based); the last chunk may be short.
    pub fn chunk_len(&self, index: usize) -> usize {
        let start = (index - 1) * self.chunk_size;
        self.chunk_size.min(self.context_len - start)
    }

    /// Length of the completion `|X| - p` (LM task).
    pub fn completion_len(&self) -> usize {
        self.total_len.saturating_sub(self.context_len)
    }

    pub fn validate(&self) -> Result<(), LayoutError> {
        let bad = |msg: String| Err(LayoutError::InvalidConfig(msg));
        if self.chunk_size == 0 {
            return bad("chunk_size must be positive".into());
        }
        if self.memory_count == 0 {
            return bad("memory_count must be positive".into());
        }
        if self.context_len == 0 {
            return bad("context_len must be positive".into());
        }
        if self.memory_count > self.chunk_size {
            return bad(format!("memory_count {} exceeds chunk_size {}", self.memory_count, self.chunk_size));
        }
        let last = self.chunk_len(self.chunk_count());
        if self.memory_count > last {
            return bad(format!("memory_count {} exceeds final chunk length {last}", self.memory_count));
        }
        match self.task {
            Task::Ae => {}
            Task::Lm if self.total_len <= self.context_len => {
                return bad(format!(
                    "LM task needs total_len > context_len ({} <= {})",
                    self.total_len, self.context_len
                ));
            }
            Task::Lm => {}
            Task::Qa if self.question_len == 0 || self.answer_len == 0 => {
                return bad(format!(
                    "QA task needs question_len >= 1 and answer_len >= 1 (got {}, {})",
                    self.question_len, self.answer_len
                ));
            }
            Task::Qa => {}
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        serde_json::from_str(text).map_err(|e| LayoutError::Serde(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
