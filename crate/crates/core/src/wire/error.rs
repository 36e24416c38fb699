use thiserror::Error;

/// Failures produced while framing or parsing P2P messages.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    /// Not enough bytes buffered yet; `needed` is a lower bound on the total
    /// number of bytes required before another attempt can succeed.
    #[error("incomplete data: need at least {needed} bytes")]
    Incomplete { needed: usize },
    /// The frame does not start with the expected network magic. The stream is
    /// out of sync and the connection should be dropped.
    #[error("bad magic {found:02x?}, expected {expected:02x?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("checksum mismatch for '{command}': header {header:02x?}, computed {computed:02x?}")]
    Checksum {
        command: String,
        header: [u8; 4],
        computed: [u8; 4],
    },
    #[error("payload of {len} bytes exceeds limit of {max}")]
    Oversize { len: usize, max: usize },
    #[error("invalid command name: {0}")]
    InvalidCommand(String),
    #[error("malformed '{command}' payload: {reason}")]
    Malformed { command: String, reason: String },
}

impl WireError {
    pub(crate) fn malformed(command: &str, reason: impl Into<String>) -> Self {
        WireError::Malformed {
            command: command.to_string(),
            reason: reason.into(),
        }
    }

    /// True when the caller should wait for more bytes rather than give up.
    pub fn is_incomplete(&self) -> bool {
        matches!(self, WireError::Incomplete { .. })
    }
}
