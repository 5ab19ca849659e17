use serde::{Deserialize, Serialize};

use super::{LayoutError, PositionId};

/// Role of one token in an encoder, decoder or vision sequence.
///
/// Chunk indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenRole {
    /// Context token `x_i`; also the reconstruction targets of the AE task.
    Context,
    /// Encoder-side memory token `m_j^(i)`.
    Memory {
        chunk: usize,
    },
    /// Decoder-side memory output or cached KV for chunk `i`.
    Carrier {
        chunk: usize,
    },
    AePrompt,
    LmPrompt,
    /// Completion token following the context (LM task).
    Completion,
    Question,
    Answer,
    Vision,
    Voco,
    Text,
}

impl TokenRole {
    pub fn name(&self) -> &'static str {
        match self {
            TokenRole::Context => "context",
            TokenRole::Memory { .. } => "memory",
            TokenRole::Carrier { .. } => "carrier",
            TokenRole::AePrompt => "ae",
            TokenRole::LmPrompt => "lm",
            TokenRole::Completion => "completion",
            TokenRole::Question => "question",
            TokenRole::Answer => "answer",
            TokenRole::Vision => "vision",
            TokenRole::Voco => "voco",
            TokenRole::Text => "text",
        }
    }

    pub fn chunk(&self) -> Option<usize> {
        match *self {
            TokenRole::Memory { chunk } | TokenRole::Carrier { chunk } => Some(chunk),
            _ => None,
        }
    }

    fn from_parts(name: &str, chunk: Option<usize>) -> Result<Self, String> {
        let role = match (name, chunk) {
            ("memory", Some(chunk)) => TokenRole::Memory { chunk },
            ("carrier", Some(chunk)) => TokenRole::Carrier { chunk },
            ("memory" | "carrier", None) => return Err(format!("role `{name}` needs a chunk")),
            (_, Some(_)) => return Err(format!("role `{name}` takes no chunk")),
            ("context", None) => TokenRole::Context,
            ("ae", None) => TokenRole::AePrompt,
            ("lm", None) => TokenRole::LmPrompt,
            ("completion", None) => TokenRole::Completion,
            ("question", None) => TokenRole::Question,
            ("answer", None) => TokenRole::Answer,
            ("vision", None) => TokenRole::Vision,
            ("voco", None) => TokenRole::Voco,
            ("text", None) => TokenRole::Text,
            _ => return Err(format!("unknown role `{name}`")),
        };
        Ok(role)
    }

    pub fn is_prompt(&self) -> bool {
        matches!(self, TokenRole::AePrompt | TokenRole::LmPrompt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "EntryRecord", into = "EntryRecord")]
pub struct LayoutEntry {
    pub role: TokenRole,
    /// Position within the role's segment.
    pub index: usize,
    pub position_id: PositionId,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryRecord {
    role: String,
    chunk: Option<usize>,
    index: usize,
    position_id: PositionId,
}

impl TryFrom<EntryRecord> for LayoutEntry {
    type Error = String;

    fn try_from(rec: EntryRecord) -> Result<Self, Self::Error> {
        Ok(LayoutEntry {
            role: TokenRole::from_parts(&rec.role, rec.chunk)?,
            index: rec.index,
            position_id: rec.position_id,
        })
    }
}

impl From<LayoutEntry> for EntryRecord {
    fn from(e: LayoutEntry) -> Self {
        EntryRecord {
            role: e.role.name().to_string(),
            chunk: e.role.chunk(),
            index: e.index,
            position_id: e.position_id,
        }
    }
}

/// Position IDs assigned to a token sequence, in physical order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PositionLayout {
    pub entries: Vec<LayoutEntry>,
}

impl PositionLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one segment whose IDs come from `ids`, indexed from zero.
    pub fn push_segment(&mut self, role: TokenRole, ids: impl IntoIterator<Item = PositionId>) {
        self.entries.extend(ids.into_iter().enumerate().map(|(index, position_id)| LayoutEntry {
            role,
            index,
            position_id,
        }));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position_ids(&self) -> Vec<PositionId> {
        self.entries.iter().map(|e| e.position_id).collect()
    }

    /// IDs of every entry whose role satisfies `pred`, in physical order.
    pub fn ids_where(&self, pred: impl Fn(&TokenRole) -> bool) -> Vec<PositionId> {
        self.entries.iter().filter(|e| pred(&e.role)).map(|e| e.position_id).collect()
    }

    pub fn count_where(&self, pred: impl Fn(&TokenRole) -> bool) -> usize {
        self.entries.iter().filter(|e| pred(&e.role)).count()
    }

    /// Same layout with every ID moved by `shift`.
    pub fn shifted(&self, shift: PositionId) -> Self {
        Self {
            entries: self.entries.iter().map(|e| LayoutEntry { position_id: e.position_id + shift, ..*e }).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LayoutError> {
        serde_json::from_str(text).map_err(|e| LayoutError::Serde(e.to_string()))
    }

    /// CSV with header `role,chunk,index,position_id`; an empty `chunk`
    /// cell stands for null.
    pub fn to_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        for e in &self.entries {
            wtr.serialize(EntryRecord::from(*e)).expect("in-memory csv write");
        }
        if self.entries.is_empty() {
            wtr.write_record(["role", "chunk", "index", "position_id"]).expect("in-memory csv write");
        }
        String::from_utf8(wtr.into_inner().expect("flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, LayoutError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let entries = rdr
            .deserialize::<EntryRecord>()
            .map(|rec| rec.map_err(|e| e.to_string()).and_then(LayoutEntry::try_from))
            .collect::<Result<_, _>>()
            .map_err(LayoutError::Serde)?;
        Ok(Self { entries })
    }
}
