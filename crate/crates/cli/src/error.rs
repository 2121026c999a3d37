use std::fmt;

/// Bad flags, config or inputs, detected before any work starts. Every
/// problem found is listed, not just the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError(pub Vec<String>);

impl ValidationError {
    pub fn single(msg: impl Into<String>) -> Self {
        Self(vec![msg.into()])
    }

    /// `Ok` when `problems` is empty.
    pub fn check(problems: Vec<String>) -> Result<(), Self> {
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Self(problems))
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let [one] = self.0.as_slice() {
            return write!(f, "invalid input: {one}");
        }
        write!(f, "invalid input ({} problems):", self.0.len())?;
        for p in &self.0 {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

/// 2 for validation errors anywhere in the chain, 1 otherwise.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<ValidationError>()) {
        2
    } else {
        1
    }
}
