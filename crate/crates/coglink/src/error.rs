use thiserror::Error;

/// Errors surfaced by the toolkit. Data errors carry enough context
/// (file, row, column name) to be actionable from the command line.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("data error: {0}")]
    Data(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Collector for non-fatal conditions (unknown segments, truncated
/// concepts, ...). Duplicate messages are counted rather than repeated.
#[derive(Debug, Default, Clone)]
pub struct Warnings {
    order: Vec<String>,
    counts: std::collections::HashMap<String, usize>,
}

impl Warnings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, message: impl Into<String>) {
        let message = message.into();
        match self.counts.get_mut(&message) {
            Some(n) => *n += 1,
            None => {
                self.counts.insert(message.clone(), 1);
                self.order.push(message);
            }
        }
    }

    pub fn merge(&mut self, other: Warnings) {
        for msg in other.order {
            let n = other.counts[&msg];
            match self.counts.get_mut(&msg) {
                Some(m) => *m += n,
                None => {
                    self.counts.insert(msg.clone(), n);
                    self.order.push(msg);
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    /// Unique messages with their occurrence counts, in first-seen order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, usize)> {
        self.order.iter().map(|m| (m.as_str(), self.counts[m]))
    }

    pub fn eprint_all(&self, prefix: &str) {
        for (msg, n) in self.iter() {
            if n > 1 {
                eprintln!("{prefix}warning: {msg} ({n} times)");
            } else {
                eprintln!("{prefix}warning: {msg}");
            }
        }
    }
}

impl Error {
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        Error::Checkpoint(msg.into())
    }
}
