//! Circuit IR, the HQNN circuit templates, noise instrumentation and
//! evaluation.
//!
//! Wires keep their original labels for the whole circuit. A
//! `MeasureCondition` retires its measured wire; later instructions may only
//! touch wires that are still active.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::noise::{KrausChannel, NoiseKind, NoiseSpec};
use crate::sim::{rot, Angle, DensityMatrix, GateKind, GateOp, PureState};

#[derive(Debug, Clone)]
pub enum Instruction {
    Gate(GateOp),
    Channel {
        channel: Arc<KrausChannel>,
        wire: usize,
    },
    /// Project `measured`; on outcome 1 apply `ROT(angles)` to `kept`, on
    /// outcome 0 do nothing; then discard `measured`.
    MeasureCondition {
        measured: usize,
        kept: usize,
        angles: [Angle; 3],
    },
}

impl Instruction {
    pub fn angles(&self) -> &[Angle] {
        match self {
            Instruction::Gate(g) => &g.angles,
            Instruction::MeasureCondition { angles, .. } => angles,
            Instruction::Channel { .. } => &[],
        }
    }

    fn angles_mut(&mut self) -> &mut [Angle] {
        match self {
            Instruction::Gate(g) => &mut g.angles,
            Instruction::MeasureCondition { angles, .. } => angles,
            Instruction::Channel { .. } => &mut [],
        }
    }

    /// Every angle is the coefficient of a Pauli generator `exp(-i θ P / 2)`,
    /// which is what the two-point shift rule needs.
    pub fn is_pauli_generated(&self) -> bool {
        match self {
            Instruction::Gate(g) => matches!(g.kind, GateKind::Rx | GateKind::Ry | GateKind::Rz | GateKind::Rot),
            Instruction::MeasureCondition { .. } => true,
            Instruction::Channel { .. } => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Encoding,
    Rotation(usize),
    Entangling(usize),
    Pooling,
    Readout,
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Encoding => write!(f, "encoding"),
            BlockKind::Rotation(l) => write!(f, "rotation[{l}]"),
            BlockKind::Entangling(l) => write!(f, "entangling[{l}]"),
            BlockKind::Pooling => write!(f, "pooling"),
            BlockKind::Readout => write!(f, "readout"),
        }
    }
}

/// A block covers instructions `[previous end, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub kind: BlockKind,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Readout {
    /// `<Z>` of every active wire, ascending label order.
    ExpectZ,
    /// Joint computational-basis distribution over the listed wire labels.
    JointProbs(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct CircuitIR {
    n_qubits: usize,
    instructions: Vec<Instruction>,
    n_params: usize,
    blocks: Vec<Block>,
}

impl CircuitIR {
    pub fn new(n_qubits: usize) -> Result<Self> {
        if !(1..=crate::sim::MAX_QUBITS).contains(&n_qubits) {
            return Err(Error::config(format!("qubit count {n_qubits} out of range")));
        }
        Ok(Self {
            n_qubits,
            instructions: Vec::new(),
            n_params: 0,
            blocks: Vec::new(),
        })
    }

    /// Assemble a circuit from raw parts; the result is validated.
    pub fn from_parts(
        n_qubits: usize,
        instructions: Vec<Instruction>,
        n_params: usize,
        blocks: Vec<Block>,
    ) -> Result<Self> {
        let c = Self {
            n_params,
            instructions,
            blocks,
            ..Self::new(n_qubits)?
        };
        c.validate()?;
        Ok(c)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn instructions(&self) -> &[Instruction] {
        &self.instructions
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn gate_count(&self) -> usize {
        self.instructions
            .iter()
            .filter(|i| !matches!(i, Instruction::Channel { .. }))
            .count()
    }

    pub fn channel_count(&self) -> usize {
        self.instructions.len() - self.gate_count()
    }

    /// Wires still active after all measurements, ascending.
    pub fn final_wires(&self) -> Vec<usize> {
        let mut active: Vec<usize> = (0..self.n_qubits).collect();
        for ins in &self.instructions {
            if let Instruction::MeasureCondition { measured, .. } = ins {
                active.retain(|w| w != measured);
            }
        }
        active
    }

    fn push_block(&mut self, kind: BlockKind, instructions: Vec<Instruction>) {
        self.instructions.extend(instructions);
        self.blocks.push(Block {
            kind,
            end: self.instructions.len(),
        });
    }

    /// Append `segment`, shifting its parameter slots past ours.
    pub fn append(&mut self, segment: CircuitIR) -> Result<()> {
        if segment.n_qubits != self.n_qubits {
            return Err(Error::shape(format!(
                "cannot append a {}-qubit segment to a {}-qubit circuit",
                segment.n_qubits, self.n_qubits
            )));
        }
        let offset = self.n_params;
        let base = self.instructions.len();
        for mut ins in segment.instructions {
            for a in ins.angles_mut() {
                if let Angle::Slot(i) = a {
                    *i += offset;
                }
            }
            self.instructions.push(ins);
        }
        self.blocks.extend(segment.blocks.into_iter().map(|b| Block {
            kind: b.kind,
            end: b.end + base,
        }));
        self.n_params += segment.n_params;
        self.validate()?;
        Ok(())
    }

    /// Structural checks: wires valid given prior measurements, slots dense,
    /// blocks strictly increasing.
    pub fn validate(&self) -> Result<()> {
        let mut active = vec![true; self.n_qubits];
        let mut used = vec![false; self.n_params];
        let check = |w: usize, active: &[bool]| -> Result<()> {
            if w >= active.len() || !active[w] {
                return Err(Error::shape(format!(
                    "instruction touches inactive or invalid wire {w}"
                )));
            }
            Ok(())
        };
        for ins in &self.instructions {
            match ins {
                Instruction::Gate(g) => {
                    for &w in &g.wires {
                        check(w, &active)?;
                    }
                }
                Instruction::Channel { wire, .. } => check(*wire, &active)?,
                Instruction::MeasureCondition { measured, kept, .. } => {
                    check(*measured, &active)?;
                    check(*kept, &active)?;
                    if measured == kept {
                        return Err(Error::shape("measured and kept wires coincide"));
                    }
                    active[*measured] = false;
                }
            }
            for a in ins.angles() {
                if let Angle::Slot(i) = a {
                    if *i >= self.n_params {
                        return Err(Error::shape(format!("slot {i} beyond n_params {}", self.n_params)));
                    }
                    used[*i] = true;
                }
            }
        }
        if let Some(gap) = used.iter().position(|u| !u) {
            return Err(Error::shape(format!("parameter slot {gap} is never used")));
        }
        let mut prev = 0;
        for b in &self.blocks {
            if b.end <= prev && !(b.end == 0 && prev == 0 && self.instructions.is_empty()) {
                return Err(Error::shape("block markers must be strictly increasing"));
            }
            prev = b.end;
        }
        Ok(())
    }

    fn require_blocks(&self) -> Result<()> {
        if self.instructions.is_empty() {
            return Ok(());
        }
        match self.blocks.last() {
            Some(b) if b.end == self.instructions.len() => Ok(()),
            _ => Err(Error::Validation {
                what: "circuit lacks block boundaries covering every instruction".into(),
                deviation: 0.0,
            }),
        }
    }
}

/// RY(value_i) on wire i with constant angles.
pub fn angle_embed(n_qubits: usize, values: &[f64]) -> Result<CircuitIR> {
    if values.len() != n_qubits {
        return Err(Error::shape(format!(
            "{} encoding values for {n_qubits} qubits",
            values.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::shape(format!("non-finite encoding value {bad}")));
    }
    let mut c = CircuitIR::new(n_qubits)?;
    let ins = values
        .iter()
        .enumerate()
        .map(|(w, &v)| GateOp::rotation(GateKind::Ry, w, &[Angle::Const(v)]).map(Instruction::Gate))
        .collect::<Result<Vec<_>>>()?;
    c.push_block(BlockKind::Encoding, ins);
    Ok(c)
}

/// RY(slot_i) on wire i; the encoding angles become bindable slots `0..n`.
pub fn angle_embed_slots(n_qubits: usize) -> Result<CircuitIR> {
    let mut c = CircuitIR::new(n_qubits)?;
    let ins = (0..n_qubits)
        .map(|w| GateOp::rotation(GateKind::Ry, w, &[Angle::Slot(w)]).map(Instruction::Gate))
        .collect::<Result<Vec<_>>>()?;
    c.n_params = n_qubits;
    c.push_block(BlockKind::Encoding, ins);
    Ok(c)
}

fn cnot(control: usize, target: usize) -> Result<Instruction> {
    GateOp::fixed(GateKind::Cnot, &[control, target]).map(Instruction::Gate)
}

/// Per layer: RY on every wire, then a closed CNOT ring. With two wires the
/// ring degenerates to a single CNOT(0, 1).
pub fn basic_entangling_layers(n_qubits: usize, layers: usize) -> Result<CircuitIR> {
    if n_qubits < 2 {
        return Err(Error::config("entangling layers need at least 2 qubits"));
    }
    if layers == 0 {
        return Err(Error::config("need at least one layer"));
    }
    let mut c = CircuitIR::new(n_qubits)?;
    for l in 0..layers {
        let rots = (0..n_qubits)
            .map(|w| GateOp::rotation(GateKind::Ry, w, &[Angle::Slot(l * n_qubits + w)]).map(Instruction::Gate))
            .collect::<Result<Vec<_>>>()?;
        c.push_block(BlockKind::Rotation(l), rots);
        let ring = if n_qubits == 2 {
            vec![cnot(0, 1)?]
        } else {
            (0..n_qubits)
                .map(|w| cnot(w, (w + 1) % n_qubits))
                .collect::<Result<Vec<_>>>()?
        };
        c.push_block(BlockKind::Entangling(l), ring);
    }
    c.n_params = n_qubits * layers;
    debug_assert_eq!(c.n_params, n_qubits * layers);
    c.validate()?;
    Ok(c)
}

/// CNOT ring offset used by layer `layer` of the strongly entangling template.
pub fn strong_offset(layer: usize, n_qubits: usize) -> usize {
    layer % (n_qubits - 1) + 1
}

/// Per layer: ROT on every wire, then CNOTs `i -> (i + r) mod n` with the
/// layer-dependent range `r`.
pub fn strongly_entangling_layers(n_qubits: usize, layers: usize) -> Result<CircuitIR> {
    if n_qubits < 2 {
        return Err(Error::config("entangling layers need at least 2 qubits"));
    }
    if layers == 0 {
        return Err(Error::config("need at least one layer"));
    }
    let mut c = CircuitIR::new(n_qubits)?;
    for l in 0..layers {
        let rots = (0..n_qubits)
            .map(|w| {
                let base = 3 * (l * n_qubits + w);
                GateOp::rotation(
                    GateKind::Rot,
                    w,
                    &[Angle::Slot(base), Angle::Slot(base + 1), Angle::Slot(base + 2)],
                )
                .map(Instruction::Gate)
            })
            .collect::<Result<Vec<_>>>()?;
        c.push_block(BlockKind::Rotation(l), rots);
        let r = strong_offset(l, n_qubits);
        let ring = (0..n_qubits)
            .map(|w| cnot(w, (w + r) % n_qubits))
            .collect::<Result<Vec<_>>>()?;
        c.push_block(BlockKind::Entangling(l), ring);
    }
    c.n_params = 3 * n_qubits * layers;
    c.validate()?;
    Ok(c)
}

/// One pooling stage over `(kept, measured)` pairs.
pub fn qcnn_pool_block(n_qubits: usize, pairs: &[(usize, usize)]) -> Result<CircuitIR> {
    let mut seen = Vec::new();
    for &(kept, measured) in pairs {
        for w in [kept, measured] {
            if w >= n_qubits {
                return Err(Error::config(format!("pooling wire {w} out of range")));
            }
            if seen.contains(&w) {
                return Err(Error::config(format!("pooling pairs overlap on wire {w}")));
            }
            seen.push(w);
        }
    }
    if pairs.is_empty() {
        return Err(Error::config("pooling needs at least one pair"));
    }
    let mut c = CircuitIR::new(n_qubits)?;
    let ins = pairs
        .iter()
        .enumerate()
        .map(|(i, &(kept, measured))| Instruction::MeasureCondition {
            measured,
            kept,
            angles: [Angle::Slot(3 * i), Angle::Slot(3 * i + 1), Angle::Slot(3 * i + 2)],
        })
        .collect();
    c.n_params = 3 * pairs.len();
    c.push_block(BlockKind::Pooling, ins);
    Ok(c)
}

/// Insert `spec` channels on every active wire after each block boundary and
/// once more right before measurement. Gates, their order and the parameter
/// layout are untouched.
pub fn instrument_noise(c: &CircuitIR, spec: &NoiseSpec) -> Result<CircuitIR> {
    if spec.is_noiseless() {
        return Ok(c.clone());
    }
    c.require_blocks()?;
    let channel = Arc::new(KrausChannel::new(spec.kind, spec.prob)?);
    let mut active: Vec<usize> = (0..c.n_qubits).collect();
    let site = |active: &[usize]| -> Vec<Instruction> {
        active
            .iter()
            .map(|&wire| Instruction::Channel {
                channel: Arc::clone(&channel),
                wire,
            })
            .collect()
    };

    let mut out = CircuitIR::new(c.n_qubits)?;
    out.n_params = c.n_params;
    let mut start = 0;
    for b in &c.blocks {
        let mut ins: Vec<Instruction> = c.instructions[start..b.end].to_vec();
        for i in &ins {
            if let Instruction::MeasureCondition { measured, .. } = i {
                active.retain(|w| w != measured);
            }
        }
        ins.extend(site(&active));
        out.push_block(b.kind, ins);
        start = b.end;
    }
    out.push_block(BlockKind::Readout, site(&active));
    Ok(out)
}

/// Tracks which matrix position each surviving wire label occupies.
#[derive(Debug, Clone)]
pub(crate) struct Runner {
    pub(crate) rho: DensityMatrix,
    pub(crate) positions: Vec<Option<usize>>,
}

impl Runner {
    pub(crate) fn start(n_qubits: usize) -> Result<Self> {
        Ok(Self {
            rho: DensityMatrix::zero_state(n_qubits)?,
            positions: (0..n_qubits).map(Some).collect(),
        })
    }

    fn pos(&self, wire: usize) -> Result<usize> {
        self.positions
            .get(wire)
            .copied()
            .flatten()
            .ok_or_else(|| Error::shape(format!("wire {wire} is no longer active")))
    }

    /// Apply one instruction with its angles already resolved.
    pub(crate) fn step(&mut self, ins: &Instruction, angles: &[f64]) -> Result<()> {
        match ins {
            Instruction::Gate(g) => {
                let u = crate::sim::gate_matrix(g.kind, angles);
                let wires = g.wires.iter().map(|&w| self.pos(w)).collect::<Result<Vec<_>>>()?;
                self.rho.apply_unitary_mut(&u, &wires)
            }
            Instruction::Channel { channel, wire } => {
                let p = self.pos(*wire)?;
                self.rho.apply_channel_trusted(channel, p);
                Ok(())
            }
            Instruction::MeasureCondition { measured, kept, .. } => {
                let (m, k) = (self.pos(*measured)?, self.pos(*kept)?);
                let v1 = rot(angles[0], angles[1], angles[2]);
                self.rho = self.rho.measure_condition_rot1(m, k, &v1);
                self.positions[*measured] = None;
                for p in self.positions.iter_mut().flatten() {
                    if *p > m {
                        *p -= 1;
                    }
                }
                Ok(())
            }
        }
    }

    pub(crate) fn readout(&self, readout: &Readout) -> Result<Vec<f64>> {
        match readout {
            Readout::ExpectZ => self.positions.iter().flatten().map(|&p| self.rho.expect_z(p)).collect(),
            Readout::JointProbs(wires) => {
                let pos = wires.iter().map(|&w| self.pos(w)).collect::<Result<Vec<_>>>()?;
                self.rho.joint_probs(&pos)
            }
        }
    }
}

pub(crate) fn resolve_angles(ins: &Instruction, params: &[f64]) -> Result<Vec<f64>> {
    ins.angles().iter().map(|a| a.resolve(params)).collect()
}

fn check_params(c: &CircuitIR, params: &[f64]) -> Result<()> {
    if params.len() != c.n_params {
        return Err(Error::shape(format!(
            "circuit expects {} parameters, got {}",
            c.n_params,
            params.len()
        )));
    }
    Ok(())
}

/// Final density matrix and the labels of the surviving wires.
pub fn simulate(c: &CircuitIR, params: &[f64]) -> Result<(DensityMatrix, Vec<usize>)> {
    let runner = run(c, params)?;
    Ok((runner.rho, c.final_wires()))
}

pub(crate) fn run(c: &CircuitIR, params: &[f64]) -> Result<Runner> {
    check_params(c, params)?;
    let mut runner = Runner::start(c.n_qubits)?;
    for ins in &c.instructions {
        let angles = resolve_angles(ins, params)?;
        runner.step(ins, &angles)?;
    }
    Ok(runner)
}

/// Density simulation from |0…0⟩ followed by the requested readout.
pub fn evaluate(c: &CircuitIR, params: &[f64], readout: &Readout) -> Result<Vec<f64>> {
    run(c, params)?.readout(readout)
}

/// Statevector simulation of a gate-only circuit.
pub fn pure_simulate(c: &CircuitIR, params: &[f64]) -> Result<PureState> {
    check_params(c, params)?;
    let mut state = PureState::zero_state(c.n_qubits)?;
    for ins in &c.instructions {
        match ins {
            Instruction::Gate(g) => state.apply_gate_mut(g, params)?,
            Instruction::Channel { .. } => {
                return Err(Error::Unsupported("pure-state simulation of a noise channel".into()))
            }
            Instruction::MeasureCondition { .. } => {
                return Err(Error::Unsupported(
                    "pure-state simulation of a mid-circuit measurement".into(),
                ))
            }
        }
    }
    Ok(state)
}

impl fmt::Display for Angle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Angle::Slot(i) => write!(f, "p[{i}]"),
            Angle::Const(v) => write!(f, "{v:.6}"),
        }
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Gate(g) => {
                write!(f, "{}", g.kind.name())?;
                for w in &g.wires {
                    write!(f, " q{w}")?;
                }
                for a in &g.angles {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
            Instruction::Channel { channel, wire } => {
                write!(f, "NOISE {}({:.3}) q{wire}", channel.kind(), channel.prob())
            }
            Instruction::MeasureCondition { measured, kept, angles } => write!(
                f,
                "MEASURE q{measured} IF1 ROT q{kept} {} {} {}",
                angles[0], angles[1], angles[2]
            ),
        }
    }
}

/// One instruction per line; block ends are marked with `# end <block>`.
impl fmt::Display for CircuitIR {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "circuit qubits={} params={}", self.n_qubits, self.n_params)?;
        let mut blocks = self.blocks.iter().peekable();
        for (i, ins) in self.instructions.iter().enumerate() {
            writeln!(f, "{ins}")?;
            while let Some(b) = blocks.next_if(|b| b.end == i + 1) {
                writeln!(f, "# end {}", b.kind)?;
            }
        }
        Ok(())
    }
}

/// Instrumented circuit with a channel count per kind, mostly for reports.
pub fn count_channels(c: &CircuitIR, kind: NoiseKind) -> usize {
    c.instructions
        .iter()
        .filter(|i| matches!(i, Instruction::Channel { channel, .. } if channel.kind() == kind))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn quannn_filter() -> CircuitIR {
        let mut c = angle_embed_slots(4).unwrap();
        c.append(basic_entangling_layers(4, 3).unwrap()).unwrap();
        c
    }

    fn random_params(rng: &mut SplitMix64, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(0.0, TAU)).collect()
    }

    #[test]
    fn angle_embed_examples() {
        let z = evaluate(&angle_embed(4, &[0.0; 4]).unwrap(), &[], &Readout::ExpectZ).unwrap();
        assert_eq!(z, vec![1.0; 4]);
        let z = evaluate(&angle_embed(4, &[PI, 0.0, 0.0, 0.0]).unwrap(), &[], &Readout::ExpectZ).unwrap();
        assert!((z[0] + 1.0).abs() < 1e-15 && z[1..].iter().all(|&v| v == 1.0));
        let z = evaluate(&angle_embed(4, &[FRAC_PI_2; 4]).unwrap(), &[], &Readout::ExpectZ).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-15));
        assert!(matches!(angle_embed(4, &[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn basic_layers_examples() {
        let c = basic_entangling_layers(4, 3).unwrap();
        assert_eq!(c.n_params(), 12);
        let z = evaluate(&c, &[0.0; 12], &Readout::ExpectZ).unwrap();
        assert_eq!(z, vec![1.0; 4]);
        // RY(π) ⊗ I then CNOT(0,1): |00⟩ -> |10⟩ -> |11⟩
        let c = basic_entangling_layers(2, 1).unwrap();
        let z = evaluate(&c, &[PI, 0.0], &Readout::ExpectZ).unwrap();
        assert!((z[0] + 1.0).abs() < 1e-15 && (z[1] + 1.0).abs() < 1e-15);
        assert!(matches!(basic_entangling_layers(1, 3), Err(Error::Config(_))));
    }

    #[test]
    fn strong_layers_examples() {
        let c = strongly_entangling_layers(4, 3).unwrap();
        assert_eq!(c.n_params(), 36);
        let offsets: Vec<usize> = (0..3).map(|l| strong_offset(l, 4)).collect();
        assert_eq!(offsets, vec![1, 2, 3]);
        let z = evaluate(&c, &[0.0; 36], &Readout::ExpectZ).unwrap();
        assert_eq!(z, vec![1.0; 4]);
        assert!(matches!(strongly_entangling_layers(1, 1), Err(Error::Config(_))));

        let c = strongly_entangling_layers(2, 1).unwrap();
        let mut rng = SplitMix64::new(8);
        for _ in 0..10 {
            let p = random_params(&mut rng, 6);
            let dens = evaluate(&c, &p, &Readout::ExpectZ).unwrap();
            let pure = pure_simulate(&c, &p).unwrap();
            for w in 0..2 {
                assert!((dens[w] - pure.expect_z(w).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn pooling_examples() {
        let c = qcnn_pool_block(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(c.n_params(), 6);
        assert_eq!(c.final_wires(), vec![0, 2]);
        assert!(matches!(qcnn_pool_block(4, &[(0, 1), (1, 2)]), Err(Error::Config(_))));
    }

    #[test]
    fn pooling_with_zero_params_traces_out() {
        let mut rng = SplitMix64::new(4);
        let mut prep = angle_embed(4, &random_params(&mut rng, 4)).unwrap();
        prep.append(basic_entangling_layers(4, 1).unwrap()).unwrap();
        let layer_params = random_params(&mut rng, 4);
        let mut full = prep.clone();
        full.append(qcnn_pool_block(4, &[(0, 1), (2, 3)]).unwrap()).unwrap();
        let mut params = layer_params.clone();
        params.extend([0.0; 6]);
        let (pooled, wires) = simulate(&full, &params).unwrap();
        assert_eq!(wires, vec![0, 2]);
        let (before, _) = simulate(&prep, &layer_params).unwrap();
        let traced = before.partial_trace(3).unwrap().partial_trace(1).unwrap();
        assert!(pooled.matrix().approx_eq(traced.matrix(), 1e-14));
    }

    #[test]
    fn pooling_conditions_on_measured_outcome() {
        // |0110⟩: measured wires 1 and 3 read 1 and 0. Kept wire 0 gets
        // ROT(0, π, 0) = RY(π) and flips; kept wire 2 is untouched.
        let mut c = angle_embed(4, &[0.0, PI, PI, 0.0]).unwrap();
        c.append(qcnn_pool_block(4, &[(0, 1), (2, 3)]).unwrap()).unwrap();
        let params = [0.0, PI, 0.0, 0.0, PI, 0.0];
        let probs = evaluate(&c, &params, &Readout::JointProbs(vec![0, 2])).unwrap();
        // kept (q0, q2) = (1, 1)
        assert!((probs[3] - 1.0).abs() < 1e-14, "{probs:?}");
    }

    #[test]
    fn quannn_instrumentation_counts() {
        let c = quannn_filter();
        for kind in NoiseKind::ALL_CHANNELS {
            let noisy = instrument_noise(&c, &NoiseSpec::new(kind, 0.3).unwrap()).unwrap();
            assert_eq!(noisy.channel_count(), 32);
            assert_eq!(count_channels(&noisy, kind), 32);
            assert_eq!(noisy.n_params(), c.n_params());
            assert_eq!(noisy.gate_count(), c.gate_count());
            let gates = |x: &CircuitIR| -> Vec<String> {
                x.instructions()
                    .iter()
                    .filter(|i| !matches!(i, Instruction::Channel { .. }))
                    .map(|i| i.to_string())
                    .collect()
            };
            assert_eq!(gates(&noisy), gates(&c));
            noisy.validate().unwrap();
        }
        let same = instrument_noise(&c, &NoiseSpec::NONE).unwrap();
        assert_eq!(same.to_string(), c.to_string());
    }

    #[test]
    fn instrumenting_qcnn_skips_measured_wires() {
        let mut c = angle_embed_slots(4).unwrap();
        c.append(strongly_entangling_layers(4, 3).unwrap()).unwrap();
        c.append(qcnn_pool_block(4, &[(0, 1), (2, 3)]).unwrap()).unwrap();
        let noisy = instrument_noise(&c, &NoiseSpec::new(NoiseKind::PhaseFlip, 0.2).unwrap()).unwrap();
        // 7 sites on 4 wires, pooling + readout on the 2 survivors
        assert_eq!(noisy.channel_count(), 7 * 4 + 2 * 2);
        noisy.validate().unwrap();
    }

    #[test]
    fn missing_boundaries_rejected() {
        let mut c = quannn_filter();
        c.blocks.clear();
        assert!(matches!(
            instrument_noise(&c, &NoiseSpec::new(NoiseKind::BitFlip, 0.1).unwrap()),
            Err(Error::Validation { .. })
        ));
    }

    #[test]
    fn bitflip_one_equals_explicit_x_insertions() {
        let c = quannn_filter();
        let noisy = instrument_noise(&c, &NoiseSpec::new(NoiseKind::BitFlip, 1.0).unwrap()).unwrap();
        let mut explicit = CircuitIR::new(4).unwrap();
        explicit.n_params = noisy.n_params;
        for ins in &noisy.instructions {
            match ins {
                Instruction::Channel { wire, .. } => explicit
                    .instructions
                    .push(Instruction::Gate(GateOp::fixed(GateKind::X, &[*wire]).unwrap())),
                other => explicit.instructions.push(other.clone()),
            }
        }
        let mut rng = SplitMix64::new(21);
        for _ in 0..5 {
            let p = random_params(&mut rng, 16);
            let a = evaluate(&noisy, &p, &Readout::ExpectZ).unwrap();
            let b = evaluate(&explicit, &p, &Readout::ExpectZ).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn evaluate_examples() {
        let c = CircuitIR::new(4).unwrap();
        assert_eq!(evaluate(&c, &[], &Readout::ExpectZ).unwrap(), vec![1.0; 4]);
        let c = angle_embed(4, &[PI; 4]).unwrap();
        let z = evaluate(&c, &[], &Readout::ExpectZ).unwrap();
        assert!(z.iter().all(|v| (v + 1.0).abs() < 1e-15));
        let f = quannn_filter();
        assert!(matches!(
            evaluate(&f, &[0.0; 3], &Readout::ExpectZ),
            Err(Error::Shape(_))
        ));
        let mut rng = SplitMix64::new(31);
        let p = random_params(&mut rng, 16);
        let zero_noise = instrument_noise(&f, &NoiseSpec::new(NoiseKind::Depolarizing, 0.0).unwrap()).unwrap();
        let dens = evaluate(&zero_noise, &p, &Readout::ExpectZ).unwrap();
        let pure = pure_simulate(&f, &p).unwrap();
        for w in 0..4 {
            assert!((dens[w] - pure.expect_z(w).unwrap()).abs() < 1e-10);
        }
    }

    #[test]
    fn pure_simulate_rejects_noise() {
        let f = quannn_filter();
        let noisy = instrument_noise(&f, &NoiseSpec::new(NoiseKind::BitFlip, 0.1).unwrap()).unwrap();
        assert!(matches!(pure_simulate(&noisy, &[0.0; 16]), Err(Error::Unsupported(_))));
        let pool = qcnn_pool_block(2, &[(0, 1)]).unwrap();
        assert!(matches!(pure_simulate(&pool, &[0.0; 3]), Err(Error::Unsupported(_))));
        let empty = CircuitIR::new(2).unwrap();
        let s = pure_simulate(&empty, &[]).unwrap();
        assert_eq!(s.amps()[0].re, 1.0);
    }

    #[test]
    fn zero_noise_never_changes_readout() {
        let f = quannn_filter();
        let mut rng = SplitMix64::new(2);
        let p = random_params(&mut rng, 16);
        let base = evaluate(&f, &p, &Readout::ExpectZ).unwrap();
        for kind in NoiseKind::ALL_CHANNELS {
            let c = instrument_noise(&f, &NoiseSpec::new(kind, 0.0).unwrap()).unwrap();
            let z = evaluate(&c, &p, &Readout::ExpectZ).unwrap();
            for (a, b) in z.iter().zip(&base) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
