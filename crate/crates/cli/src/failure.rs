use std::fmt;

/// A command failure with its exit code class.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or configuration; exit code 2.
    Usage { category: String, message: String },
    /// Anything that went wrong while running; exit code 1.
    Runtime { category: String, message: String },
}

impl Failure {
    pub fn usage(e: attnet::Error) -> Self {
        Failure::Usage {
            category: e.category().to_string(),
            message: e.to_string(),
        }
    }

    pub fn usage_msg(category: &str, message: impl Into<String>) -> Self {
        Failure::Usage {
            category: category.to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage { .. } => 2,
            Failure::Runtime { .. } => 1,
        }
    }
}

impl From<attnet::Error> for Failure {
    fn from(e: attnet::Error) -> Self {
        Failure::Runtime {
            category: e.category().to_string(),
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    /// `error[<category>]: <message>` on a single line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (Failure::Usage { category, message } | Failure::Runtime { category, message }) = self;
        let flat: String = message
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        write!(f, "error[{category}]: {flat}")
    }
}

pub type CmdResult<T> = Result<T, Failure>;
