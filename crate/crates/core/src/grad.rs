//! Parameter-shift gradients of circuit readouts, and a central finite
//! difference used only as a test oracle.
//!
//! Every shiftable angle in this IR multiplies a Pauli generator, so
//! `(f(θ + π/2) - f(θ - π/2)) / 2` is exact. Channels are parameter-free
//! linear maps and do not break the rule. A slot used by several angles gets
//! the sum of its per-occurrence shifts.

use std::f64::consts::FRAC_PI_2;

use rayon::prelude::*;

use crate::circuit::{resolve_angles, CircuitIR, Instruction, Readout, Runner};
use crate::error::{Error, Result};
use crate::sim::{Angle, GateKind};

/// Readout at the unshifted parameters plus `d readout / d slot` for each
/// requested slot (`grads[k][j]` = derivative of component `j` w.r.t. `slots[k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub value: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy)]
struct Occurrence {
    instruction: usize,
    angle: usize,
}

fn occurrences(c: &CircuitIR, slot: usize) -> Result<Vec<Occurrence>> {
    if slot >= c.n_params() {
        return Err(Error::shape(format!(
            "slot {slot} out of range for {} parameters",
            c.n_params()
        )));
    }
    let mut out = Vec::new();
    for (i, ins) in c.instructions().iter().enumerate() {
        for (k, a) in ins.angles().iter().enumerate() {
            if *a == Angle::Slot(slot) {
                if !ins.is_pauli_generated() {
                    return Err(Error::Unsupported(format!(
                        "slot {slot} feeds a non-Pauli-generated instruction `{ins}`"
                    )));
                }
                out.push(Occurrence {
                    instruction: i,
                    angle: k,
                });
            }
        }
    }
    Ok(out)
}

/// Simulator states keyed by the instruction they precede.
type Snapshots = Vec<(usize, Runner)>;

/// Forward pass keeping the simulator state in front of each instruction in
/// `wanted` (sorted ascending).
fn forward_with_snapshots(
    c: &CircuitIR,
    params: &[f64],
    readout: &Readout,
    wanted: &[usize],
) -> Result<(Vec<f64>, Snapshots)> {
    if params.len() != c.n_params() {
        return Err(Error::shape(format!(
            "circuit expects {} parameters, got {}",
            c.n_params(),
            params.len()
        )));
    }
    let mut runner = Runner::start(c.n_qubits())?;
    let mut snaps = Vec::with_capacity(wanted.len());
    let mut next = wanted.iter().peekable();
    for (i, ins) in c.instructions().iter().enumerate() {
        if next.next_if(|&&w| w == i).is_some() {
            snaps.push((i, runner.clone()));
            while next.next_if(|&&w| w == i).is_some() {}
        }
        runner.step(ins, &resolve_angles(ins, params)?)?;
    }
    Ok((runner.readout(readout)?, snaps))
}

/// Resume from a snapshot taken in front of `occ.instruction`, with that one
/// angle shifted.
fn shifted_suffix(
    c: &CircuitIR,
    params: &[f64],
    readout: &Readout,
    snapshot: &Runner,
    occ: Occurrence,
    shift: f64,
) -> Result<Vec<f64>> {
    let mut runner = snapshot.clone();
    let ins = &c.instructions()[occ.instruction];
    let mut angles = resolve_angles(ins, params)?;
    angles[occ.angle] += shift;
    runner.step(ins, &angles)?;
    for ins in &c.instructions()[occ.instruction + 1..] {
        runner.step(ins, &resolve_angles(ins, params)?)?;
    }
    runner.readout(readout)
}

/// Parameter-shift Jacobian for `slots`. Shifted evaluations run in parallel
/// and are reduced in slot order.
pub fn param_shift_jacobian(c: &CircuitIR, params: &[f64], readout: &Readout, slots: &[usize]) -> Result<Jacobian> {
    let occ: Vec<Vec<Occurrence>> = slots.iter().map(|&s| occurrences(c, s)).collect::<Result<_>>()?;
    let mut wanted: Vec<usize> = occ.iter().flatten().map(|o| o.instruction).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let (value, snaps) = forward_with_snapshots(c, params, readout, &wanted)?;
    let snapshot = |i: usize| -> &Runner {
        let k = snaps
            .binary_search_by_key(&i, |(idx, _)| *idx)
            .expect("snapshot recorded for every occurrence");
        &snaps[k].1
    };

    let grads = occ
        .par_iter()
        .map(|list| -> Result<Vec<f64>> {
            let mut g = vec![0.0; value.len()];
            for &o in list {
                let snap = snapshot(o.instruction);
                let plus = shifted_suffix(c, params, readout, snap, o, FRAC_PI_2)?;
                let minus = shifted_suffix(c, params, readout, snap, o, -FRAC_PI_2)?;
                for (gj, (p, m)) in g.iter_mut().zip(plus.iter().zip(&minus)) {
                    *gj += 0.5 * (p - m);
                }
            }
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Jacobian { value, grads })
}

/// `d readout / d θ_slot` by the two-point shift rule.
pub fn param_shift_grad(c: &CircuitIR, params: &[f64], readout: &Readout, slot: usize) -> Result<Vec<f64>> {
    Ok(param_shift_jacobian(c, params, readout, &[slot])?.grads.remove(0))
}

/// Central difference `(f(θ + h) - f(θ - h)) / 2h`.
pub fn finite_diff_grad(c: &CircuitIR, params: &[f64], readout: &Readout, slot: usize, h: f64) -> Result<Vec<f64>> {
    if h <= 0.0 {
        return Err(Error::config("finite-difference step must be positive"));
    }
    if slot >= params.len() {
        return Err(Error::shape(format!("slot {slot} out of range")));
    }
    let mut p = params.to_vec();
    p[slot] = params[slot] + h;
    let plus = crate::circuit::evaluate(c, &p, readout)?;
    p[slot] = params[slot] - h;
    let minus = crate::circuit::evaluate(c, &p, readout)?;
    Ok(plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * h)).collect())
}

/// Jacobian of the readout with respect to the RY encoding angles.
pub fn grad_wrt_encoding(
    c: &CircuitIR,
    params: &[f64],
    encoding_slots: &[usize],
    readout: &Readout,
) -> Result<Jacobian> {
    for &s in encoding_slots {
        for o in occurrences(c, s)? {
            match &c.instructions()[o.instruction] {
                Instruction::Gate(g) if g.kind == GateKind::Ry => {}
                other => {
                    return Err(Error::Unsupported(format!(
                        "encoding slot {s} is attached to `{other}`, not an RY gate"
                    )))
                }
            }
        }
    }
    param_shift_jacobian(c, params, readout, encoding_slots)
}
