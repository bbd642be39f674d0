use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("D={0} is not squarefree")]
    NotSquarefree(i64),
    #[error("D={0} is not congruent to 1 mod 4")]
    NotOneMod4(i64),
    #[error("D={0} is not a product of two distinct primes congruent to 3 mod 4")]
    NotTwoPrimeProduct(i64),
    #[error("fundamental unit of Q(sqrt {0}) has norm -1")]
    UnitNormNotOne(i64),
    #[error("Q(sqrt {d}) has a non-principal ideal above {p}")]
    ClassNumberNotOne { d: i64, p: i64 },
    #[error("integer overflow in exact arithmetic")]
    Overflow,
    #[error("operation undefined for the zero element")]
    ZeroElement,
    #[error("norm {0} is beyond the enumeration bound")]
    ScanBoundExceeded(u64),
    #[error("malformed eigenvalue table: {0}")]
    MalformedTable(String),
    #[error("eigenvalue for prime {0} is not available")]
    MissingPrime(u64),
    #[error("synthetic model asked for prime {0} beyond its range")]
    SeedModelRangeExceeded(u64),
    #[error("denominator of the local series vanishes")]
    DivergentDenominator,
    #[error("no Bezout pair in the normalized range (a={a}, b={b})")]
    BezoutRangeImpossible { a: i128, b: i128 },
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("input {0} is even")]
    EvenInput(i64),
    #[error("n does not have the admissible decomposition")]
    BadDecomposition,
    #[error("truncation bound too small: {0}")]
    BoundTooSmall(String),
    #[error("truncation insufficient: {0}")]
    TruncationInsufficient(String),
    #[error("smooth weight support violated")]
    WindowViolation,
    #[error("quadrature did not converge: {0}")]
    QuadratureNonconvergent(String),
    #[error("gamma function pole at {0}")]
    PoleInput(String),
    #[error("central value {0} is negative beyond tolerance")]
    NegativeCentralValue(f64),
    #[error("eigenvalue table exhausted at n={0}")]
    TableExhausted(u64),
    #[error("Atkin-Lehner sign is -1, the experiment is vacuous")]
    EtaNegative,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
