use specbias::Error;

/// A failed invocation with its exit code and a stable machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

pub const USAGE: u8 = 2;
pub const CONFIG: u8 = 3;
pub const MISSING_INPUT: u8 = 4;
pub const DATA: u8 = 5;
pub const INTEGRITY: u8 = 6;

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  usage error (unknown subcommand or flag, bad flag value)
  3  invalid config (unparseable JSON or a parameter outside its domain)
  4  missing or unreadable input, or unwritable output
  5  data error (undefined result such as R^2 of constant targets, non-finite
     values, shape mismatch, diverged training, failed factorization)
  6  integrity failure (corrupt artifact, digest mismatch, non-canonical report)

Errors are printed to stderr as one line of JSON:
  {\"error\":{\"code\":5,\"kind\":\"undefined\",\"message\":\"...\"}}

Environment:
  SPECBIAS_OUT_DIR  default for --out-dir
  SPECBIAS_THREADS  default for --threads";

impl Failure {
    pub fn new(code: u8, kind: &'static str, message: impl Into<String>) -> Self {
        Self { code, kind, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(CONFIG, "invalid_config", message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(MISSING_INPUT, "missing_input", message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, "data", message)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::json!({"error": {"code": self.code, "kind": self.kind, "message": self.message}}).to_string()
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::InvalidParam(_) | Error::ZeroFrequency => (CONFIG, "invalid_config"),
            Error::Json(_) => (CONFIG, "invalid_json"),
            Error::Io { .. } => (MISSING_INPUT, "io"),
            Error::Undefined(_) => (DATA, "undefined"),
            Error::NonFinite(_) => (DATA, "non_finite"),
            Error::Shape(_) => (DATA, "shape"),
            Error::Diverged { .. } => (DATA, "diverged"),
            Error::Factorization(_) => (DATA, "factorization"),
            Error::Csv(_) => (DATA, "csv"),
            Error::Corrupt { .. } => (INTEGRITY, "corrupt"),
        };
        Self::new(code, kind, e.to_string())
    }
}
