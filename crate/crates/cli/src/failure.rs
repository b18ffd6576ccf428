use cgm_bench::BenchError;
use cgm_core::CgmError;

pub const ALL_CELLS_FAILED: u8 = 1;
pub const BAD_ARGS: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn args(message: impl Into<String>) -> Self {
        Self::new(BAD_ARGS, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(DATA, message)
    }
}

impl From<CgmError> for Failure {
    fn from(e: CgmError) -> Self {
        let code = match e {
            CgmError::Numeric(_) | CgmError::NonFinite(_) => NUMERIC,
            _ => DATA,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Core(c) => c.into(),
            BenchError::Config(_) => Failure::args(e.to_string()),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}
