//! Floating-point abstraction so every model runs in f32 or f64.

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::Float;
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Element type for all model tensors.
///
/// Implemented for `f32` and `f64` only. Conversions go through `f64`
/// because datasets, metrics, and serialized artifacts are all kept in
/// `f64` regardless of the model precision.
pub trait Scalar:
    Float
    + ScalarOperand
    + LinalgScalar
    + num_traits::NumAssignOps
    + Serialize
    + DeserializeOwned
    + std::fmt::Display
    + std::fmt::Debug
    + Send
    + Sync
    + 'static
{
    const PRECISION: Precision;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::F32;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::F64;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Runtime tag for the scalar type, used to dispatch deserialization and
/// to record the precision a model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl std::fmt::Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Precision::F32 => write!(f, "f32"),
            Precision::F64 => write!(f, "f64"),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = crate::GnanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(crate::GnanError::Config(format!(
                "unknown precision {other:?}, expected \"f32\" or \"f64\""
            ))),
        }
    }
}
