//! n-qubit density-matrix simulation and a statevector oracle.
//!
//! Qubit ordering: wire 0 is the most significant bit of the basis index.
//! Gates and channels are applied in place on the affected index blocks; the
//! `embed_*` functions build the full 2^n x 2^n operator through Kronecker
//! products and serve as the reference path in tests.

use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};
use crate::linalg::{pauli, Complex, ComplexMatrix, ONE, ZERO};
use crate::noise::KrausChannel;
use crate::rng::SplitMix64;

pub const MAX_QUBITS: usize = 8;

/// Tolerance for the trace, Hermiticity and positivity invariants.
pub const STATE_TOL: f64 = 1e-9;

/// Imaginary residue allowed on an expectation value before it counts as corruption.
pub const IMAG_TOL: f64 = 1e-10;

const PROB_DUST: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    Rx,
    Ry,
    Rz,
    /// `RZ(c) RY(b) RZ(a)` with angles `(a, b, c)`.
    Rot,
    X,
    Y,
    Z,
    H,
    Cnot,
    Cz,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Cnot | GateKind::Cz => 2,
            _ => 1,
        }
    }

    pub fn n_angles(self) -> usize {
        match self {
            GateKind::Rx | GateKind::Ry | GateKind::Rz => 1,
            GateKind::Rot => 3,
            _ => 0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::Rx => "RX",
            GateKind::Ry => "RY",
            GateKind::Rz => "RZ",
            GateKind::Rot => "ROT",
            GateKind::X => "X",
            GateKind::Y => "Y",
            GateKind::Z => "Z",
            GateKind::H => "H",
            GateKind::Cnot => "CNOT",
            GateKind::Cz => "CZ",
        }
    }
}

/// Source of a rotation angle: a trainable/bindable parameter slot or a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Angle {
    Slot(usize),
    Const(f64),
}

impl Angle {
    pub fn resolve(self, params: &[f64]) -> Result<f64> {
        match self {
            Angle::Const(v) => Ok(v),
            Angle::Slot(i) => params
                .get(i)
                .copied()
                .ok_or_else(|| Error::shape(format!("parameter slot {i} out of range ({} supplied)", params.len()))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateOp {
    pub kind: GateKind,
    pub wires: Vec<usize>,
    pub angles: Vec<Angle>,
}

impl GateOp {
    pub fn new(kind: GateKind, wires: Vec<usize>, angles: Vec<Angle>) -> Result<Self> {
        if wires.len() != kind.arity() {
            return Err(Error::shape(format!(
                "{} acts on {} wire(s), got {:?}",
                kind.name(),
                kind.arity(),
                wires
            )));
        }
        if angles.len() != kind.n_angles() {
            return Err(Error::shape(format!(
                "{} takes {} angle(s), got {}",
                kind.name(),
                kind.n_angles(),
                angles.len()
            )));
        }
        if wires.len() == 2 && wires[0] == wires[1] {
            return Err(Error::shape(format!("{} wires must be distinct", kind.name())));
        }
        Ok(Self { kind, wires, angles })
    }

    pub fn fixed(kind: GateKind, wires: &[usize]) -> Result<Self> {
        Self::new(kind, wires.to_vec(), Vec::new())
    }

    pub fn rotation(kind: GateKind, wire: usize, angles: &[Angle]) -> Result<Self> {
        Self::new(kind, vec![wire], angles.to_vec())
    }

    pub fn slots(&self) -> impl Iterator<Item = usize> + '_ {
        self.angles.iter().filter_map(|a| match a {
            Angle::Slot(i) => Some(*i),
            Angle::Const(_) => None,
        })
    }

    pub fn matrix(&self, params: &[f64]) -> Result<ComplexMatrix> {
        let values = self
            .angles
            .iter()
            .map(|a| a.resolve(params))
            .collect::<Result<Vec<_>>>()?;
        Ok(gate_matrix(self.kind, &values))
    }
}

pub fn rx(theta: f64) -> ComplexMatrix {
    let (s, c) = (theta / 2.0).sin_cos();
    ComplexMatrix::from_rows(&[
        [Complex::new(c, 0.0), Complex::new(0.0, -s)],
        [Complex::new(0.0, -s), Complex::new(c, 0.0)],
    ])
}

pub fn ry(theta: f64) -> ComplexMatrix {
    let (s, c) = (theta / 2.0).sin_cos();
    ComplexMatrix::from_real_rows(&[[c, -s], [s, c]])
}

pub fn rz(theta: f64) -> ComplexMatrix {
    let half = theta / 2.0;
    ComplexMatrix::diag(&[Complex::from_polar(1.0, -half), Complex::from_polar(1.0, half)])
}

/// `RZ(c) · RY(b) · RZ(a)`.
pub fn rot(a: f64, b: f64, c: f64) -> ComplexMatrix {
    rz(c)
        .matmul(&ry(b))
        .and_then(|m| m.matmul(&rz(a)))
        .expect("2x2 product")
}

pub fn hadamard() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[[FRAC_1_SQRT_2, FRAC_1_SQRT_2], [FRAC_1_SQRT_2, -FRAC_1_SQRT_2]])
}

pub fn cnot() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
    ])
}

pub fn cz() -> ComplexMatrix {
    ComplexMatrix::diag(&[ONE, ONE, ONE, -ONE])
}

pub fn swap() -> ComplexMatrix {
    ComplexMatrix::from_real_rows(&[
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ])
}

pub fn gate_matrix(kind: GateKind, angles: &[f64]) -> ComplexMatrix {
    match kind {
        GateKind::Rx => rx(angles[0]),
        GateKind::Ry => ry(angles[0]),
        GateKind::Rz => rz(angles[0]),
        GateKind::Rot => rot(angles[0], angles[1], angles[2]),
        GateKind::X => pauli::x(),
        GateKind::Y => pauli::y(),
        GateKind::Z => pauli::z(),
        GateKind::H => hadamard(),
        GateKind::Cnot => cnot(),
        GateKind::Cz => cz(),
    }
}

fn check_n(n: usize) -> Result<()> {
    if !(1..=MAX_QUBITS).contains(&n) {
        return Err(Error::config(format!("qubit count {n} outside 1..={MAX_QUBITS}")));
    }
    Ok(())
}

fn check_wires(wires: &[usize], n: usize) -> Result<()> {
    for (i, &w) in wires.iter().enumerate() {
        if w >= n {
            return Err(Error::shape(format!("wire {w} out of range for {n} qubits")));
        }
        if wires[..i].contains(&w) {
            return Err(Error::shape(format!("duplicate wire {w} in {wires:?}")));
        }
    }
    Ok(())
}

#[inline]
fn bit_of(wire: usize, n: usize) -> usize {
    1 << (n - 1 - wire)
}

/// Insert bit `m` at the position of `wire` into an (n-1)-qubit index.
#[inline]
fn insert_bit(idx: usize, wire: usize, n: usize, m: usize) -> usize {
    let low_bits = n - 1 - wire;
    let low = idx & ((1 << low_bits) - 1);
    let high = idx >> low_bits;
    (high << (low_bits + 1)) | (m << low_bits) | low
}

fn to_2x2(u: &ComplexMatrix) -> [[Complex; 2]; 2] {
    [[u[(0, 0)], u[(0, 1)]], [u[(1, 0)], u[(1, 1)]]]
}

fn to_4x4(u: &ComplexMatrix) -> [[Complex; 4]; 4] {
    let mut out = [[ZERO; 4]; 4];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = u[(r, c)];
        }
    }
    out
}

/// `rho <- U rho U†` for a single-qubit `U` on `wire`.
fn conjugate_1q(data: &mut [Complex], dim: usize, bit: usize, u: &[[Complex; 2]; 2]) {
    // left: U rho
    for i0 in (0..dim).filter(|i| i & bit == 0) {
        let i1 = i0 | bit;
        for c in 0..dim {
            let a = data[i0 * dim + c];
            let b = data[i1 * dim + c];
            data[i0 * dim + c] = u[0][0] * a + u[0][1] * b;
            data[i1 * dim + c] = u[1][0] * a + u[1][1] * b;
        }
    }
    // right: (U rho) U†
    let uc = [[u[0][0].conj(), u[0][1].conj()], [u[1][0].conj(), u[1][1].conj()]];
    for r in 0..dim {
        let row = &mut data[r * dim..(r + 1) * dim];
        for j0 in (0..dim).filter(|j| j & bit == 0) {
            let j1 = j0 | bit;
            let a = row[j0];
            let b = row[j1];
            row[j0] = a * uc[0][0] + b * uc[0][1];
            row[j1] = a * uc[1][0] + b * uc[1][1];
        }
    }
}

/// `rho <- U rho U†` for a two-qubit `U` on `(wire_a, wire_b)`, `wire_a` being
/// the more significant qubit of `U`'s own basis.
fn conjugate_2q(data: &mut [Complex], dim: usize, bit_a: usize, bit_b: usize, u: &[[Complex; 4]; 4]) {
    let offsets = [0, bit_b, bit_a, bit_a | bit_b];
    let mask = bit_a | bit_b;
    let mut tmp = [ZERO; 4];
    for base in (0..dim).filter(|i| i & mask == 0) {
        for c in 0..dim {
            for (k, t) in tmp.iter_mut().enumerate() {
                *t = data[(base | offsets[k]) * dim + c];
            }
            for r in 0..4 {
                let mut acc = ZERO;
                for k in 0..4 {
                    acc += u[r][k] * tmp[k];
                }
                data[(base | offsets[r]) * dim + c] = acc;
            }
        }
    }
    for r in 0..dim {
        let row = &mut data[r * dim..(r + 1) * dim];
        for base in (0..dim).filter(|j| j & mask == 0) {
            for (k, t) in tmp.iter_mut().enumerate() {
                *t = row[base | offsets[k]];
            }
            for c in 0..4 {
                let mut acc = ZERO;
                for k in 0..4 {
                    acc += tmp[k] * u[c][k].conj();
                }
                row[base | offsets[c]] = acc;
            }
        }
    }
}

/// Apply a single-qubit superoperator to every 2x2 block selected by `bit`.
fn apply_superop(data: &mut [Complex], dim: usize, bit: usize, s: &[[Complex; 4]; 4]) {
    for i0 in (0..dim).filter(|i| i & bit == 0) {
        let i1 = i0 | bit;
        for j0 in (0..dim).filter(|j| j & bit == 0) {
            let j1 = j0 | bit;
            let idx = [i0 * dim + j0, i0 * dim + j1, i1 * dim + j0, i1 * dim + j1];
            let block = [data[idx[0]], data[idx[1]], data[idx[2]], data[idx[3]]];
            for (row, &target) in s.iter().zip(&idx) {
                data[target] = row[0] * block[0] + row[1] * block[1] + row[2] * block[2] + row[3] * block[3];
            }
        }
    }
}

/// Full-space operator for a single-qubit `u` on `wire`: I ⊗ u ⊗ I.
pub fn embed_1q(u: &ComplexMatrix, wire: usize, n: usize) -> ComplexMatrix {
    let left = ComplexMatrix::identity(1 << wire);
    let right = ComplexMatrix::identity(1 << (n - 1 - wire));
    left.kron(u).kron(&right)
}

fn embed_adjacent_2q(u: &ComplexMatrix, first: usize, n: usize) -> ComplexMatrix {
    let left = ComplexMatrix::identity(1 << first);
    let right = ComplexMatrix::identity(1 << (n - 2 - first));
    left.kron(u).kron(&right)
}

/// Full-space operator for a two-qubit `u` on `(a, b)`, routing non-adjacent
/// wires through a network of adjacent swaps.
pub fn embed_2q(u: &ComplexMatrix, a: usize, b: usize, n: usize) -> ComplexMatrix {
    let dim = 1 << n;
    // P moves wire b next to a, applied right-to-left to the state.
    let mut p = ComplexMatrix::identity(dim);
    let (pos_b, pair_first, local) = if b > a {
        for w in (a + 1..b).rev() {
            p = embed_adjacent_2q(&swap(), w, n).matmul(&p).expect("square");
        }
        (a + 1, a, u.clone())
    } else {
        for w in b..a - 1 {
            p = embed_adjacent_2q(&swap(), w, n).matmul(&p).expect("square");
        }
        let sw = swap();
        let flipped = sw.matmul(u).and_then(|m| m.matmul(&sw)).expect("4x4");
        (a - 1, a - 1, flipped)
    };
    debug_assert!(pos_b.abs_diff(a) == 1);
    let core = embed_adjacent_2q(&local, pair_first, n);
    p.adjoint().matmul(&core).and_then(|m| m.matmul(&p)).expect("square")
}

/// Validated mixed state on up to [`MAX_QUBITS`] qubits.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    n_qubits: usize,
    mat: ComplexMatrix,
}

impl DensityMatrix {
    /// |0…0⟩⟨0…0|.
    pub fn zero_state(n: usize) -> Result<Self> {
        check_n(n)?;
        let dim = 1 << n;
        let mut mat = ComplexMatrix::zeros(dim, dim);
        mat[(0, 0)] = ONE;
        Ok(Self { n_qubits: n, mat })
    }

    /// Maximally mixed state I / 2^n.
    pub fn maximally_mixed(n: usize) -> Result<Self> {
        check_n(n)?;
        let dim = 1 << n;
        Ok(Self {
            n_qubits: n,
            mat: ComplexMatrix::identity(dim).scale_real(1.0 / dim as f64),
        })
    }

    /// |b⟩⟨b| for a computational basis state, wire 0 first.
    pub fn basis_state(bits: &[u8]) -> Result<Self> {
        check_n(bits.len())?;
        let n = bits.len();
        let idx = bits.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
        let dim = 1 << n;
        let mut mat = ComplexMatrix::zeros(dim, dim);
        mat[(idx, idx)] = ONE;
        Ok(Self { n_qubits: n, mat })
    }

    pub fn from_pure(state: &PureState) -> Self {
        let dim = state.amps.len();
        let mut mat = ComplexMatrix::zeros(dim, dim);
        for (i, a) in state.amps.iter().enumerate() {
            for (j, b) in state.amps.iter().enumerate() {
                mat[(i, j)] = a * b.conj();
            }
        }
        Self {
            n_qubits: state.n_qubits,
            mat,
        }
    }

    /// Wrap and validate an explicit matrix.
    pub fn from_matrix(mat: ComplexMatrix) -> Result<Self> {
        if !mat.is_square() || !mat.rows().is_power_of_two() || mat.rows() < 2 {
            return Err(Error::shape(format!(
                "density matrix must be 2^n x 2^n, got {}x{}",
                mat.rows(),
                mat.cols()
            )));
        }
        let n = mat.rows().trailing_zeros() as usize;
        check_n(n)?;
        let rho = Self { n_qubits: n, mat };
        rho.validate()?;
        Ok(rho)
    }

    /// Random full-rank mixed state `A A† / tr(A A†)` with Gaussian `A`.
    pub fn random_mixed(n: usize, rng: &mut SplitMix64) -> Result<Self> {
        check_n(n)?;
        let dim = 1 << n;
        let data = (0..dim * dim)
            .map(|_| Complex::new(rng.normal(), rng.normal()))
            .collect();
        let a = ComplexMatrix::from_vec(dim, dim, data)?;
        let g = a.matmul(&a.adjoint())?;
        let tr = g.trace()?.re;
        Ok(Self {
            n_qubits: n,
            mat: g.scale_real(1.0 / tr),
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> ComplexMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().expect("square").re
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.mat.hermitian_eigenvalues(STATE_TOL)?[0])
    }

    /// Check trace, Hermiticity and positivity within [`STATE_TOL`].
    pub fn validate(&self) -> Result<()> {
        if !self.mat.is_finite() {
            return Err(Error::Numerical("density matrix contains NaN or Inf".into()));
        }
        let tr = self.mat.trace()?;
        let dev = (tr - ONE).norm();
        if dev > STATE_TOL {
            return Err(Error::Validation {
                what: "density matrix trace is not 1".into(),
                deviation: dev,
            });
        }
        let herm = self.mat.hermiticity_deviation();
        if herm > STATE_TOL {
            return Err(Error::Validation {
                what: "density matrix is not Hermitian".into(),
                deviation: herm,
            });
        }
        let min = self.min_eigenvalue()?;
        if min < -STATE_TOL {
            return Err(Error::Validation {
                what: "density matrix is not positive semidefinite".into(),
                deviation: -min,
            });
        }
        Ok(())
    }

    pub fn apply_gate(&self, gate: &GateOp, params: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.apply_gate_mut(gate, params)?;
        Ok(out)
    }

    pub fn apply_gate_mut(&mut self, gate: &GateOp, params: &[f64]) -> Result<()> {
        check_wires(&gate.wires, self.n_qubits)?;
        let u = gate.matrix(params)?;
        self.apply_unitary_mut(&u, &gate.wires)
    }

    /// Conjugate by a 1- or 2-qubit unitary on the given wires.
    pub fn apply_unitary_mut(&mut self, u: &ComplexMatrix, wires: &[usize]) -> Result<()> {
        check_wires(wires, self.n_qubits)?;
        let n = self.n_qubits;
        let dim = self.dim();
        match (wires, u.rows(), u.cols()) {
            ([w], 2, 2) => conjugate_1q(self.mat.data_mut(), dim, bit_of(*w, n), &to_2x2(u)),
            ([a, b], 4, 4) => conjugate_2q(self.mat.data_mut(), dim, bit_of(*a, n), bit_of(*b, n), &to_4x4(u)),
            _ => {
                return Err(Error::shape(format!(
                    "{}x{} operator does not match wires {wires:?}",
                    u.rows(),
                    u.cols()
                )))
            }
        }
        Ok(())
    }

    /// Reference path: build the full operator with Kronecker products.
    pub fn apply_gate_dense(&self, gate: &GateOp, params: &[f64]) -> Result<Self> {
        check_wires(&gate.wires, self.n_qubits)?;
        let u = gate.matrix(params)?;
        let full = match gate.wires.as_slice() {
            [w] => embed_1q(&u, *w, self.n_qubits),
            [a, b] => embed_2q(&u, *a, *b, self.n_qubits),
            _ => unreachable!("arity checked at construction"),
        };
        let mat = full.matmul(&self.mat)?.matmul(&full.adjoint())?;
        Ok(Self {
            n_qubits: self.n_qubits,
            mat,
        })
    }

    pub fn apply_channel(&self, ch: &KrausChannel, wire: usize) -> Result<Self> {
        let mut out = self.clone();
        out.apply_channel_mut(ch, wire)?;
        Ok(out)
    }

    pub fn apply_channel_mut(&mut self, ch: &KrausChannel, wire: usize) -> Result<()> {
        check_wires(&[wire], self.n_qubits)?;
        ch.validate_completeness()?;
        let dim = self.dim();
        apply_superop(self.mat.data_mut(), dim, bit_of(wire, self.n_qubits), ch.superop());
        Ok(())
    }

    /// Channel application for Kraus sets already validated at construction.
    pub(crate) fn apply_channel_trusted(&mut self, ch: &KrausChannel, wire: usize) {
        let dim = self.dim();
        apply_superop(self.mat.data_mut(), dim, bit_of(wire, self.n_qubits), ch.superop());
    }

    /// Reference path: `sum_i E_i rho E_i†` with embedded Kraus operators.
    pub fn apply_channel_dense(&self, ch: &KrausChannel, wire: usize) -> Result<Self> {
        check_wires(&[wire], self.n_qubits)?;
        ch.validate_completeness()?;
        let dim = self.dim();
        let mut acc = ComplexMatrix::zeros(dim, dim);
        for k in ch.ops() {
            let e = embed_1q(k, wire, self.n_qubits);
            acc.add_assign(&e.matmul(&self.mat)?.matmul(&e.adjoint())?);
        }
        Ok(Self {
            n_qubits: self.n_qubits,
            mat: acc,
        })
    }

    /// `Tr(Z_wire rho)`.
    pub fn expect_z(&self, wire: usize) -> Result<f64> {
        check_wires(&[wire], self.n_qubits)?;
        let bit = bit_of(wire, self.n_qubits);
        let mut acc = ZERO;
        for i in 0..self.dim() {
            let v = self.mat[(i, i)];
            if i & bit == 0 {
                acc += v;
            } else {
                acc -= v;
            }
        }
        if acc.im.abs() > IMAG_TOL || !acc.re.is_finite() {
            return Err(Error::Numerical(format!(
                "<Z{wire}> has imaginary residue {:.3e}",
                acc.im
            )));
        }
        Ok(acc.re.clamp(-1.0, 1.0))
    }

    pub fn expect_z_all(&self) -> Result<Vec<f64>> {
        (0..self.n_qubits).map(|w| self.expect_z(w)).collect()
    }

    /// Marginal computational-basis distribution over `wires`, first wire most
    /// significant.
    pub fn joint_probs(&self, wires: &[usize]) -> Result<Vec<f64>> {
        check_wires(wires, self.n_qubits)?;
        if wires.is_empty() {
            return Err(Error::shape("joint_probs needs at least one wire"));
        }
        let n = self.n_qubits;
        let mut probs = vec![0.0; 1 << wires.len()];
        for i in 0..self.dim() {
            let v = self.mat[(i, i)];
            if v.im.abs() > IMAG_TOL {
                return Err(Error::Numerical(format!(
                    "diagonal entry {i} has imaginary part {:.3e}",
                    v.im
                )));
            }
            let key = wires
                .iter()
                .fold(0usize, |acc, &w| (acc << 1) | usize::from(i & bit_of(w, n) != 0));
            probs[key] += v.re;
        }
        for p in probs.iter_mut() {
            if *p < -PROB_DUST || !p.is_finite() {
                return Err(Error::Numerical(format!("negative probability {p:.3e}")));
            }
            *p = p.clamp(0.0, 1.0);
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > STATE_TOL {
            return Err(Error::Validation {
                what: "marginal distribution does not sum to 1".into(),
                deviation: (total - 1.0).abs(),
            });
        }
        Ok(probs)
    }

    /// Trace out `wire`; the remaining wires keep their relative order.
    pub fn partial_trace(&self, wire: usize) -> Result<Self> {
        if self.n_qubits < 2 {
            return Err(Error::shape("cannot trace out the only qubit"));
        }
        check_wires(&[wire], self.n_qubits)?;
        let mut out = self.outcome_block(wire, 0);
        out.add_assign(&self.outcome_block(wire, 1));
        Ok(Self {
            n_qubits: self.n_qubits - 1,
            mat: out,
        })
    }

    /// `(⟨m| ⊗ I) rho (|m⟩ ⊗ I)` on `wire`: the (n-1)-qubit unnormalized block.
    fn outcome_block(&self, wire: usize, m: usize) -> ComplexMatrix {
        let n = self.n_qubits;
        let sub = 1 << (n - 1);
        let mut out = ComplexMatrix::zeros(sub, sub);
        for r in 0..sub {
            let rr = insert_bit(r, wire, n, m);
            for c in 0..sub {
                out[(r, c)] = self.mat[(rr, insert_bit(c, wire, n, m))];
            }
        }
        out
    }

    /// Measure `measured`, apply `v0` or `v1` to `kept` depending on the
    /// outcome, sum both branches and drop the measured qubit.
    pub fn measure_condition(
        &self,
        measured: usize,
        kept: usize,
        v0: &ComplexMatrix,
        v1: &ComplexMatrix,
    ) -> Result<Self> {
        if self.n_qubits < 2 {
            return Err(Error::shape("measure_condition needs at least two qubits"));
        }
        check_wires(&[measured, kept], self.n_qubits)?;
        for (name, v) in [("v0", v0), ("v1", v1)] {
            if v.rows() != 2 || v.cols() != 2 {
                return Err(Error::shape(format!("{name} must be 2x2")));
            }
            let dev = v.unitarity_deviation();
            if dev > STATE_TOL {
                return Err(Error::Validation {
                    what: format!("{name} is not unitary"),
                    deviation: dev,
                });
            }
        }
        let n_out = self.n_qubits - 1;
        let kept_out = if kept > measured { kept - 1 } else { kept };
        let bit = bit_of(kept_out, n_out);
        let dim = 1 << n_out;
        let mut acc = self.outcome_block(measured, 0);
        conjugate_1q(acc.data_mut(), dim, bit, &to_2x2(v0));
        let mut one = self.outcome_block(measured, 1);
        conjugate_1q(one.data_mut(), dim, bit, &to_2x2(v1));
        acc.add_assign(&one);
        Ok(Self {
            n_qubits: n_out,
            mat: acc,
        })
    }

    /// Measure-and-condition where only the outcome-1 branch is rotated.
    pub(crate) fn measure_condition_rot1(&self, measured: usize, kept: usize, v1: &ComplexMatrix) -> Self {
        let n_out = self.n_qubits - 1;
        let kept_out = if kept > measured { kept - 1 } else { kept };
        let mut acc = self.outcome_block(measured, 0);
        let mut one = self.outcome_block(measured, 1);
        conjugate_1q(one.data_mut(), 1 << n_out, bit_of(kept_out, n_out), &to_2x2(v1));
        acc.add_assign(&one);
        Self {
            n_qubits: n_out,
            mat: acc,
        }
    }
}

/// Normalized statevector; the noise-free oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    n_qubits: usize,
    amps: Vec<Complex>,
}

impl PureState {
    pub fn zero_state(n: usize) -> Result<Self> {
        check_n(n)?;
        let mut amps = vec![ZERO; 1 << n];
        amps[0] = ONE;
        Ok(Self { n_qubits: n, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amps(&self) -> &[Complex] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn apply_gate_mut(&mut self, gate: &GateOp, params: &[f64]) -> Result<()> {
        check_wires(&gate.wires, self.n_qubits)?;
        let u = gate.matrix(params)?;
        let n = self.n_qubits;
        match gate.wires.as_slice() {
            [w] => {
                let bit = bit_of(*w, n);
                for i0 in (0..self.amps.len()).filter(|i| i & bit == 0) {
                    let i1 = i0 | bit;
                    let (a, b) = (self.amps[i0], self.amps[i1]);
                    self.amps[i0] = u[(0, 0)] * a + u[(0, 1)] * b;
                    self.amps[i1] = u[(1, 0)] * a + u[(1, 1)] * b;
                }
            }
            [wa, wb] => {
                let (ba, bb) = (bit_of(*wa, n), bit_of(*wb, n));
                let offsets = [0, bb, ba, ba | bb];
                for base in (0..self.amps.len()).filter(|i| i & (ba | bb) == 0) {
                    let v: Vec<Complex> = offsets.iter().map(|&o| self.amps[base | o]).collect();
                    for r in 0..4 {
                        self.amps[base | offsets[r]] = (0..4).map(|k| u[(r, k)] * v[k]).sum();
                    }
                }
            }
            _ => unreachable!("arity checked at construction"),
        }
        Ok(())
    }

    pub fn expect_z(&self, wire: usize) -> Result<f64> {
        check_wires(&[wire], self.n_qubits)?;
        let bit = bit_of(wire, self.n_qubits);
        Ok(self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
            .sum())
    }
}

/// Random single-qubit unitary built from a ROT with uniform angles.
pub fn random_unitary_2x2(rng: &mut SplitMix64) -> ComplexMatrix {
    let tau = std::f64::consts::TAU;
    let phase = Complex::from_polar(1.0, rng.uniform(0.0, tau));
    rot(rng.uniform(0.0, tau), rng.uniform(0.0, tau), rng.uniform(0.0, tau)).scale(phase)
}
