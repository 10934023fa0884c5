//! The five single-qubit noise channels and their Kraus sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pauli, Complex, ComplexMatrix, ZERO};

/// Completeness tolerance for `sum K†K = I`.
pub const COMPLETENESS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    None,
    BitFlip,
    PhaseFlip,
    Depolarizing,
    PhaseDamping,
    AmplitudeDamping,
}

impl NoiseKind {
    pub const ALL_CHANNELS: [NoiseKind; 5] = [
        NoiseKind::BitFlip,
        NoiseKind::PhaseFlip,
        NoiseKind::Depolarizing,
        NoiseKind::PhaseDamping,
        NoiseKind::AmplitudeDamping,
    ];

    pub fn token(self) -> &'static str {
        match self {
            NoiseKind::None => "none",
            NoiseKind::BitFlip => "bitflip",
            NoiseKind::PhaseFlip => "phaseflip",
            NoiseKind::Depolarizing => "depolarizing",
            NoiseKind::PhaseDamping => "phasedamping",
            NoiseKind::AmplitudeDamping => "amplitudedamping",
        }
    }

    pub fn kraus_count(self) -> usize {
        match self {
            NoiseKind::None => 0,
            NoiseKind::Depolarizing => 4,
            _ => 2,
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim().to_ascii_lowercase().as_str() {
            "none" => NoiseKind::None,
            "bitflip" => NoiseKind::BitFlip,
            "phaseflip" => NoiseKind::PhaseFlip,
            "depolarizing" => NoiseKind::Depolarizing,
            "phasedamping" => NoiseKind::PhaseDamping,
            "amplitudedamping" => NoiseKind::AmplitudeDamping,
            other => return Err(Error::config(format!("unknown noise kind `{other}`"))),
        };
        Ok(kind)
    }
}

/// Where channels are injected. The placement set is fixed: after the
/// encoding block, after every rotation block, after every entangling block,
/// after every pooling block, and right before measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub prob: f64,
}

impl NoiseSpec {
    pub const NONE: NoiseSpec = NoiseSpec {
        kind: NoiseKind::None,
        prob: 0.0,
    };

    pub fn new(kind: NoiseKind, prob: f64) -> Result<Self> {
        check_prob(prob)?;
        Ok(Self { kind, prob })
    }

    pub fn is_noiseless(&self) -> bool {
        self.kind == NoiseKind::None
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::NONE
    }
}

fn check_prob(prob: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&prob) {
        return Err(Error::config(format!("noise probability {prob} outside [0, 1]")));
    }
    Ok(())
}

/// A single-qubit CPTP map given by its Kraus operators, plus the 4x4
/// superoperator acting on row-major vectorized 2x2 blocks.
#[derive(Debug, Clone)]
pub struct KrausChannel {
    kind: NoiseKind,
    prob: f64,
    ops: Vec<ComplexMatrix>,
    superop: [[Complex; 4]; 4],
}

impl KrausChannel {
    pub fn new(kind: NoiseKind, prob: f64) -> Result<Self> {
        check_prob(prob)?;
        let p = prob;
        let id = pauli::i2();
        let ops = match kind {
            NoiseKind::None => {
                return Err(Error::EmptyResult(
                    "noise kind `none` has no Kraus operators; skip the channel".into(),
                ))
            }
            NoiseKind::BitFlip => vec![id.scale_real((1.0 - p).sqrt()), pauli::x().scale_real(p.sqrt())],
            NoiseKind::PhaseFlip => vec![id.scale_real((1.0 - p).sqrt()), pauli::z().scale_real(p.sqrt())],
            NoiseKind::Depolarizing => {
                let w = (p / 3.0).sqrt();
                vec![
                    id.scale_real((1.0 - p).sqrt()),
                    pauli::x().scale_real(w),
                    pauli::y().scale_real(w),
                    pauli::z().scale_real(w),
                ]
            }
            NoiseKind::PhaseDamping => vec![
                ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, (1.0 - p).sqrt()]]),
                ComplexMatrix::from_real_rows(&[[0.0, 0.0], [0.0, p.sqrt()]]),
            ],
            NoiseKind::AmplitudeDamping => vec![
                ComplexMatrix::from_real_rows(&[[1.0, 0.0], [0.0, (1.0 - p).sqrt()]]),
                ComplexMatrix::from_real_rows(&[[0.0, p.sqrt()], [0.0, 0.0]]),
            ],
        };
        let ch = Self::from_ops(kind, prob, ops)?;
        ch.validate_completeness()?;
        Ok(ch)
    }

    /// Wrap an arbitrary set of 2x2 operators without checking completeness.
    pub fn from_ops(kind: NoiseKind, prob: f64, ops: Vec<ComplexMatrix>) -> Result<Self> {
        if ops.is_empty() {
            return Err(Error::EmptyResult("Kraus set is empty".into()));
        }
        if let Some(bad) = ops.iter().find(|k| k.rows() != 2 || k.cols() != 2) {
            return Err(Error::shape(format!(
                "Kraus operators must be 2x2, got {}x{}",
                bad.rows(),
                bad.cols()
            )));
        }
        let superop = superoperator(&ops);
        Ok(Self {
            kind,
            prob,
            ops,
            superop,
        })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn prob(&self) -> f64 {
        self.prob
    }

    pub fn ops(&self) -> &[ComplexMatrix] {
        &self.ops
    }

    pub(crate) fn superop(&self) -> &[[Complex; 4]; 4] {
        &self.superop
    }

    /// Max elementwise deviation of `sum K†K` from the identity.
    pub fn completeness_deviation(&self) -> f64 {
        let mut acc = ComplexMatrix::zeros(2, 2);
        for k in &self.ops {
            acc.add_assign(&k.adjoint().matmul(k).expect("2x2 operators"));
        }
        acc.max_abs_diff(&pauli::i2())
    }

    pub fn validate_completeness(&self) -> Result<()> {
        let deviation = self.completeness_deviation();
        if deviation >= COMPLETENESS_TOL {
            return Err(Error::Validation {
                what: format!("{} channel violates Kraus completeness", self.kind),
                deviation,
            });
        }
        Ok(())
    }
}

/// `S[(a,b),(c,d)] = sum_k K_ac conj(K_bd)`, so that `vec(K B K†) = S vec(B)`.
fn superoperator(ops: &[ComplexMatrix]) -> [[Complex; 4]; 4] {
    let mut s = [[ZERO; 4]; 4];
    for k in ops {
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d in 0..2 {
                        s[2 * a + b][2 * c + d] += k[(a, c)] * k[(b, d)].conj();
                    }
                }
            }
        }
    }
    s
}
