use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("public key is not a valid curve point")]
    InvalidPoint,
    #[error("metadata authentication failed")]
    AuthenticationFailure,
    #[error("expected {expected} bytes, got {got}")]
    InvalidLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("peer frame {peer} does not match own frame {own}")]
    FrameMismatch { own: u64, peer: u64 },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// A configuration problem, located by a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { path: path.into(), message: message.into() }
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("message truncated")]
    Truncated,
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("unknown record tag {0}")]
    UnknownTag(u8),
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(usize),
    #[error("trailing bytes after message body")]
    TrailingBytes,
    #[error("malformed field: {0}")]
    Malformed(&'static str),
    #[error("server error: {0}")]
    Remote(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
