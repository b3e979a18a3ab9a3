//! Scalar width selection.
//!
//! All heavy arithmetic is generic over [`Real`], implemented for `f32` and
//! `f64`. [`Precision`] is the runtime tag that picks one of the two.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use num_traits::{Float, NumAssign};

/// Scalar width of a registration run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl Display for Precision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" | "single" | "float" => Ok(Precision::F32),
            "f64" | "double" => Ok(Precision::F64),
            other => Err(format!("unknown precision '{other}' (expected f32 or f64)")),
        }
    }
}

/// Floating point scalar used by every numeric kernel.
pub trait Real:
    Float + NumAssign + Sum + Send + Sync + Debug + Display + Default + 'static
{
    const PRECISION: Precision;

    /// Lock-free accumulator cell used by the scatter transpose.
    type Atomic: Send + Sync;

    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;

    fn atomic_zero() -> Self::Atomic;
    fn atomic_add(cell: &Self::Atomic, v: Self);
    fn atomic_into(cell: Self::Atomic) -> Self;

    /// Little-endian bytes, as stored in volume payloads.
    fn write_le(self, out: &mut Vec<u8>);
}

impl Real for f64 {
    const PRECISION: Precision = Precision::F64;
    type Atomic = AtomicU64;

    #[inline]
    fn lit(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    fn atomic_zero() -> AtomicU64 {
        AtomicU64::new(0f64.to_bits())
    }

    #[inline]
    fn atomic_add(cell: &AtomicU64, v: f64) {
        let mut cur = cell.load(Ordering::Relaxed);
        loop {
            let next = (f64::from_bits(cur) + v).to_bits();
            match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => return,
                Err(seen) => cur = seen,
            }
        }
    }

    fn atomic_into(cell: AtomicU64) -> f64 {
        f64::from_bits(cell.into_inner())
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Real for f32 {
    const PRECISION: Precision = Precision::F32;
    type Atomic = AtomicU32;

    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn atomic_zero() -> AtomicU32 {
        AtomicU32::new(0f32.to_bits())
    }

    #[inline]
    fn atomic_add(cell: &AtomicU32, v: f32) {
        let mut cur = cell.load(Ordering::Relaxed);
        loop {
            let next = (f32::from_bits(cur) + v).to_bits();
            match cell.compare_exchange_weak(cur, next, Ordering::Relaxed, Ordering::Relaxed) {
                Ok(_) => return,
                Err(seen) => cur = seen,
            }
        }
    }

    fn atomic_into(cell: AtomicU32) -> f32 {
        f32::from_bits(cell.into_inner())
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}
