use thiserror::Error;

#[derive(Debug, Error)]
pub enum OpeError {
    #[error("invalid MDP: {0}")]
    InvalidMdp(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "support violation at step {step}: target policy puts probability {target_prob} \
         on an action whose logged behavior probability is not positive"
    )]
    SupportViolation { step: usize, target_prob: f64 },
    #[error("size guard exceeded: {0}")]
    SizeGuard(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OpeError>;
