//! Random circuit generation and the invariant checks behind `selftest`.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use serde::Serialize;

use crate::circuit::{
    angle_embed_slots, basic_entangling_layers, instrument_noise, pure_simulate, qcnn_pool_block, simulate,
    strongly_entangling_layers, Block, BlockKind, CircuitIR, Instruction, Readout,
};
use crate::error::Result;
use crate::grad::{finite_diff_grad, param_shift_jacobian};
use crate::linalg::ComplexMatrix;
use crate::noise::{KrausChannel, NoiseKind, NoiseSpec, COMPLETENESS_TOL};
use crate::rng::SplitMix64;
use crate::sim::{Angle, DensityMatrix, GateKind, GateOp, STATE_TOL};

/// The sweep grid `0.0, 0.1, …, 1.0`.
pub fn prob_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// A block of `len` random gates whose angles are fresh slots `0..`.
pub fn random_gate_block(rng: &mut SplitMix64, n_qubits: usize, len: usize) -> Result<CircuitIR> {
    let kinds = [
        GateKind::Rx,
        GateKind::Ry,
        GateKind::Rz,
        GateKind::Rot,
        GateKind::X,
        GateKind::Y,
        GateKind::Z,
        GateKind::H,
        GateKind::Cnot,
        GateKind::Cz,
    ];
    let usable = if n_qubits == 1 { 8 } else { kinds.len() };
    let mut slots = 0;
    let mut ins = Vec::with_capacity(len);
    for _ in 0..len {
        let kind = kinds[rng.below(usable)];
        let a = rng.below(n_qubits);
        let wires = if kind.arity() == 2 {
            vec![a, (a + 1 + rng.below(n_qubits - 1)) % n_qubits]
        } else {
            vec![a]
        };
        let angles = (0..kind.n_angles())
            .map(|_| {
                slots += 1;
                Angle::Slot(slots - 1)
            })
            .collect();
        ins.push(Instruction::Gate(GateOp::new(kind, wires, angles)?));
    }
    let end = ins.len();
    CircuitIR::from_parts(
        n_qubits,
        ins,
        slots,
        vec![Block {
            kind: BlockKind::Rotation(0),
            end,
        }],
    )
}

/// Random stack of templates (encoding, basic/strong entangling layers,
/// random gate blocks, optionally a pooling stage on 4 qubits), without noise.
pub fn random_template_circuit(rng: &mut SplitMix64, n_qubits: usize) -> Result<CircuitIR> {
    let mut c = angle_embed_slots(n_qubits)?;
    for _ in 0..1 + rng.below(3) {
        let seg = match rng.below(3) {
            0 => basic_entangling_layers(n_qubits, 1 + rng.below(2))?,
            1 => strongly_entangling_layers(n_qubits, 1 + rng.below(2))?,
            _ => {
                let len = 4 + rng.below(8);
                random_gate_block(rng, n_qubits, len)?
            }
        };
        c.append(seg)?;
    }
    if n_qubits == 4 && rng.below(3) == 0 {
        c.append(qcnn_pool_block(4, &[(0, 1), (2, 3)])?)?;
    }
    Ok(c)
}

pub fn random_params(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.uniform(0.0, TAU)).collect()
}

/// Any channel kind (or none) with a uniformly drawn strength.
pub fn random_noise(rng: &mut SplitMix64) -> NoiseSpec {
    let kinds = [
        NoiseKind::None,
        NoiseKind::BitFlip,
        NoiseKind::PhaseFlip,
        NoiseKind::Depolarizing,
        NoiseKind::PhaseDamping,
        NoiseKind::AmplitudeDamping,
    ];
    let kind = kinds[rng.below(kinds.len())];
    let prob = if kind == NoiseKind::None { 0.0 } else { rng.next_f64() };
    NoiseSpec { kind, prob }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckResult {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Worst completeness deviation over every kind × grid probability. With
/// `fault`, the first Kraus operator of every channel is scaled by
/// `1 + fault` before checking (used to prove the check can fail).
pub fn channel_completeness(fault: Option<f64>) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for kind in NoiseKind::ALL_CHANNELS {
        for p in prob_grid() {
            let mut ch = KrausChannel::new(kind, p)?;
            if let Some(eps) = fault {
                let mut ops: Vec<ComplexMatrix> = ch.ops().to_vec();
                ops[0] = ops[0].scale_real(1.0 + eps);
                ch = KrausChannel::from_ops(kind, p, ops)?;
            }
            worst = worst.max(ch.completeness_deviation());
        }
    }
    Ok(worst)
}

/// Largest deviation from the closed-form single-qubit expectations.
pub fn channel_expectations() -> Result<f64> {
    let mut worst: f64 = 0.0;
    let zero = DensityMatrix::zero_state(1)?;
    let one = DensityMatrix::basis_state(&[1])?;
    for p in prob_grid() {
        let z = |kind, rho: &DensityMatrix| -> Result<f64> {
            rho.apply_channel(&KrausChannel::new(kind, p)?, 0)?.expect_z(0)
        };
        worst = worst.max((z(NoiseKind::BitFlip, &zero)? - (1.0 - 2.0 * p)).abs());
        worst = worst.max((z(NoiseKind::AmplitudeDamping, &one)? - (2.0 * p - 1.0)).abs());
        worst = worst.max((z(NoiseKind::Depolarizing, &zero)? - (1.0 - 4.0 * p / 3.0)).abs());
        // phase damping keeps populations of an arbitrary state
        let plus = DensityMatrix::from_matrix(ComplexMatrix::from_real_rows(&[vec![0.3, 0.4], vec![0.4, 0.7]]))?;
        let out = plus.apply_channel(&KrausChannel::new(NoiseKind::PhaseDamping, p)?, 0)?;
        for i in 0..2 {
            worst = worst.max((out.matrix()[(i, i)] - plus.matrix()[(i, i)]).norm());
        }
    }
    Ok(worst)
}

/// Worst (trace, Hermiticity, -min eigenvalue) deviations over `count` random
/// noisy circuits.
pub fn density_invariants(count: usize, n_qubits: usize, seed: u64) -> Result<[f64; 3]> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..count {
        let base = random_template_circuit(&mut rng, n_qubits)?;
        let c = instrument_noise(&base, &random_noise(&mut rng))?;
        let (rho, _) = simulate(&c, &random_params(&mut rng, c.n_params()))?;
        worst[0] = worst[0].max((rho.trace() - 1.0).abs());
        worst[1] = worst[1].max(rho.matrix().hermiticity_deviation());
        worst[2] = worst[2].max(-rho.min_eigenvalue()?);
    }
    Ok(worst)
}

/// Largest entry difference between the p=0 density result and the outer
/// product of the pure-state result.
pub fn pure_oracle_gap(count: usize, n_qubits: usize, seed: u64) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let mut c = angle_embed_slots(n_qubits)?;
        let len = 6 + rng.below(10);
        c.append(random_gate_block(&mut rng, n_qubits, len)?)?;
        if rng.below(2) == 0 {
            c.append(strongly_entangling_layers(n_qubits, 1)?)?;
        }
        let kind = NoiseKind::ALL_CHANNELS[rng.below(5)];
        let noisy = instrument_noise(&c, &NoiseSpec::new(kind, 0.0)?)?;
        let params = random_params(&mut rng, c.n_params());
        let (rho, _) = simulate(&noisy, &params)?;
        let psi = DensityMatrix::from_pure(&pure_simulate(&c, &params)?);
        worst = worst.max(rho.matrix().max_abs_diff(psi.matrix()));
    }
    Ok(worst)
}

/// Worst |parameter shift − central difference| over random draws of both
/// entangling templates under each channel kind.
pub fn gradient_gap(draws: usize, probs: &[f64], seed: u64) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut worst: f64 = 0.0;
    for strong in [false, true] {
        let mut c = angle_embed_slots(4)?;
        c.append(if strong {
            strongly_entangling_layers(4, 2)?
        } else {
            basic_entangling_layers(4, 3)?
        })?;
        for kind in NoiseKind::ALL_CHANNELS {
            for &p in probs {
                let noisy = instrument_noise(&c, &NoiseSpec::new(kind, p)?)?;
                for _ in 0..draws {
                    let params = random_params(&mut rng, c.n_params());
                    let slots: Vec<usize> = (0..c.n_params()).collect();
                    let jac = param_shift_jacobian(&noisy, &params, &Readout::ExpectZ, &slots)?;
                    for &s in &slots {
                        let fd = finite_diff_grad(&noisy, &params, &Readout::ExpectZ, s, 1e-5)?;
                        for (a, b) in jac.grads[s].iter().zip(&fd) {
                            worst = worst.max((a - b).abs());
                        }
                    }
                }
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Perturb the Kraus operators fed to the completeness check.
    pub inject_fault: bool,
}

/// Dataset-free invariant suite.
pub fn selftest(opts: SelftestOptions) -> Vec<CheckResult> {
    let fault = opts.inject_fault.then_some(1e-6);
    vec![
        timed("channel completeness", || {
            let dev = channel_completeness(fault)?;
            Ok((dev < COMPLETENESS_TOL, format!("max deviation {dev:.3e}")))
        }),
        timed("channel expectations", || {
            let dev = channel_expectations()?;
            Ok((dev < 1e-12, format!("max deviation {dev:.3e}")))
        }),
        timed("density invariants", || {
            let [tr, herm, neg] = density_invariants(100, 4, 1)?;
            Ok((
                tr < STATE_TOL && herm < STATE_TOL && neg <= STATE_TOL,
                format!("trace {tr:.3e}, hermiticity {herm:.3e}, min eigenvalue {:.3e}", -neg),
            ))
        }),
        timed("pure-state oracle", || {
            let gap = pure_oracle_gap(50, 4, 2)?;
            Ok((gap < 1e-10, format!("max deviation {gap:.3e}")))
        }),
        timed("parameter-shift gradients", || {
            let gap = gradient_gap(1, &[0.0, 0.5, 1.0], 3)?;
            Ok((gap < 1e-5, format!("max |shift - fd| {gap:.3e}")))
        }),
        timed("rotation sanity", || {
            // RY(π/2)|0⟩ has ⟨Z⟩ = 0.
            let c = angle_embed_slots(1)?;
            let (rho, _) = simulate(&c, &[PI / 2.0])?;
            let z = rho.expect_z(0)?;
            Ok((z.abs() < 1e-12, format!("<Z> = {z:.3e}")))
        }),
    ]
}
