//! Architecture search spaces.
//!
//! Two families are provided:
//!
//! * [`CellSpace`]: a free-topology cell. Node 0 and 1 are the cell inputs
//!   (previous and previous-previous cell output); every intermediate node
//!   sums two edges that read two distinct earlier nodes, each through one
//!   operation. Edges are stored in ascending source order.
//! * [`TabularSpace`]: a fixed topology where only the per-edge operation is
//!   searched. [`TabularSpace::nas_bench_201`] is the complete DAG over four
//!   nodes with five operations, as used by tabular benchmarks.
//!
//! Genomes have a canonical text encoding (see [`Genome`]'s `Display`) used
//! as the architecture key in prediction stores.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input edge of an intermediate node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub op: usize,
}

/// Encoded cell.
///
/// Canonical text forms: a cell genome is `s:o+s:o|s:o+s:o|...` (one
/// `source:op` pair per edge, nodes separated by `|`); a fixed-topology
/// genome is a comma-separated list of operation indices.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Genome {
    Cell(Vec<[Edge; 2]>),
    Fixed(Vec<usize>),
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Genome::Cell(nodes) => {
                for (k, [a, b]) in nodes.iter().enumerate() {
                    if k > 0 {
                        f.write_str("|")?;
                    }
                    write!(f, "{}:{}+{}:{}", a.source, a.op, b.source, b.op)?;
                }
                Ok(())
            }
            Genome::Fixed(ops) => {
                for (k, op) in ops.iter().enumerate() {
                    if k > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{op}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for Genome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |reason: &str| Error::InvalidGenome { genome: s.to_string(), reason: reason.to_string() };
        let num = |t: &str| t.parse::<usize>().map_err(|_| bad("expected an unsigned integer"));
        if s.is_empty() {
            return Err(bad("empty genome"));
        }
        if s.contains(':') {
            let mut nodes = Vec::new();
            for node in s.split('|') {
                let edges: Vec<&str> = node.split('+').collect();
                if edges.len() != 2 {
                    return Err(bad("each node needs exactly two edges"));
                }
                let mut pair = [Edge { source: 0, op: 0 }; 2];
                for (slot, e) in pair.iter_mut().zip(edges) {
                    let (src, op) = e.split_once(':').ok_or_else(|| bad("edge must be source:op"))?;
                    *slot = Edge { source: num(src)?, op: num(op)? };
                }
                nodes.push(pair);
            }
            Ok(Genome::Cell(nodes))
        } else {
            Ok(Genome::Fixed(s.split(',').map(num).collect::<Result<_>>()?))
        }
    }
}

/// A point in a search space.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Architecture {
    pub space_id: String,
    pub genome: Genome,
}

impl Architecture {
    pub fn new(space_id: impl Into<String>, genome: Genome) -> Self {
        Self { space_id: space_id.into(), genome }
    }

    /// Canonical genome text, used as the store key.
    pub fn key(&self) -> String {
        self.genome.to_string()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}]", self.space_id, self.genome)
    }
}

/// Architecture mutations used by regularized evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationKind {
    /// Leave the cell unchanged.
    Identity,
    /// Replace one edge's operation with a different one.
    Op,
    /// Rewire one edge to a different earlier node, keeping its operation.
    HiddenState,
}

/// A set of architectures that can be sampled, validated and mutated.
pub trait SearchSpace: Send + Sync + fmt::Debug {
    /// Identifier that [`space_from_id`] can parse back.
    fn id(&self) -> String;

    /// Uniform sample over genome encodings.
    fn sample_genome(&self, rng: &mut dyn RngCore) -> Genome;

    fn validate(&self, genome: &Genome) -> Result<()>;

    /// Mutations this space supports.
    fn mutation_kinds(&self) -> &'static [MutationKind];

    /// Applies `kind`; `None` when the mutation has no alternative to offer.
    fn apply_mutation(&self, genome: &Genome, kind: MutationKind, rng: &mut dyn RngCore) -> Option<Genome>;

    /// Number of distinct genomes, when it fits in a `u128`.
    fn size(&self) -> Option<u128>;

    /// Every genome, for spaces small enough to enumerate.
    fn enumerate(&self) -> Option<Vec<Genome>> {
        None
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Architecture {
        Architecture::new(self.id(), self.sample_genome(rng))
    }

    /// Checks the genome and that it belongs to this space.
    fn validate_arch(&self, arch: &Architecture) -> Result<()> {
        if arch.space_id != self.id() {
            return Err(Error::InvalidGenome {
                genome: arch.key(),
                reason: format!("belongs to space `{}`, not `{}`", arch.space_id, self.id()),
            });
        }
        self.validate(&arch.genome)
    }
}

/// Applies one mutation drawn uniformly from the space's mutation kinds.
///
/// A kind that cannot change the genome (no alternative op or source) is
/// dropped and the kind is redrawn; identity is the final fallback.
pub fn mutate(space: &dyn SearchSpace, arch: &Architecture, rng: &mut dyn RngCore) -> (Architecture, MutationKind) {
    mutate_with(space, arch, space.mutation_kinds(), rng)
}

/// [`mutate`] restricted to `kinds`.
pub fn mutate_with(
    space: &dyn SearchSpace,
    arch: &Architecture,
    kinds: &[MutationKind],
    rng: &mut dyn RngCore,
) -> (Architecture, MutationKind) {
    let mut remaining: Vec<MutationKind> = kinds.to_vec();
    while !remaining.is_empty() {
        let idx = rng.random_range(0..remaining.len());
        let kind = remaining[idx];
        if kind == MutationKind::Identity {
            return (arch.clone(), kind);
        }
        if let Some(genome) = space.apply_mutation(&arch.genome, kind, rng) {
            return (Architecture::new(arch.space_id.clone(), genome), kind);
        }
        remaining.swap_remove(idx);
    }
    (arch.clone(), MutationKind::Identity)
}

/// Vector-valued operation on a cell edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellOp {
    /// `relu(W x + b)`
    LinearRelu,
    /// `tanh(W x + b)`
    LinearTanh,
    Identity,
    /// `x / 2`
    ScaleHalf,
    /// `W x + b`
    Linear,
}

impl CellOp {
    pub const ALL: [CellOp; 5] =
        [CellOp::LinearRelu, CellOp::LinearTanh, CellOp::Identity, CellOp::ScaleHalf, CellOp::Linear];

    pub fn name(self) -> &'static str {
        match self {
            CellOp::LinearRelu => "linear-relu",
            CellOp::LinearTanh => "linear-tanh",
            CellOp::Identity => "identity",
            CellOp::ScaleHalf => "scale-half",
            CellOp::Linear => "linear",
        }
    }

    /// Whether the op owns a weight matrix and bias.
    pub fn has_params(self) -> bool {
        matches!(self, CellOp::LinearRelu | CellOp::LinearTanh | CellOp::Linear)
    }
}

impl FromStr for CellOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown cell operation `{s}`")))
    }
}

/// Shape of the MLP-cell search space and the macro network built from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellSpaceSpec {
    pub num_intermediate_nodes: usize,
    pub op_set: Vec<CellOp>,
    pub hidden_width: usize,
    pub macro_depth: usize,
}

impl Default for CellSpaceSpec {
    fn default() -> Self {
        Self { num_intermediate_nodes: 4, op_set: CellOp::ALL.to_vec(), hidden_width: 16, macro_depth: 2 }
    }
}

impl CellSpaceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_intermediate_nodes == 0 {
            return Err(Error::Config("cell needs at least one intermediate node".into()));
        }
        if self.op_set.is_empty() {
            return Err(Error::Config("operation set is empty".into()));
        }
        if self.hidden_width == 0 || self.macro_depth == 0 {
            return Err(Error::Config("hidden width and macro depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Free-topology cell space.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSpace {
    spec: CellSpaceSpec,
}

impl CellSpace {
    pub fn new(spec: CellSpaceSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &CellSpaceSpec {
        &self.spec
    }

    fn num_ops(&self) -> usize {
        self.spec.op_set.len()
    }
}

impl SearchSpace for CellSpace {
    fn id(&self) -> String {
        let ops: Vec<&str> = self.spec.op_set.iter().map(|o| o.name()).collect();
        format!(
            "cell:n{}:w{}:d{}:{}",
            self.spec.num_intermediate_nodes,
            self.spec.hidden_width,
            self.spec.macro_depth,
            ops.join(",")
        )
    }

    fn sample_genome(&self, rng: &mut dyn RngCore) -> Genome {
        let ops = self.num_ops();
        let nodes = (0..self.spec.num_intermediate_nodes)
            .map(|k| {
                let a = rng.random_range(0..k + 2);
                let mut b = rng.random_range(0..k + 1);
                if b >= a {
                    b += 1;
                }
                let (lo, hi) = (a.min(b), a.max(b));
                [Edge { source: lo, op: rng.random_range(0..ops) }, Edge { source: hi, op: rng.random_range(0..ops) }]
            })
            .collect();
        Genome::Cell(nodes)
    }

    fn validate(&self, genome: &Genome) -> Result<()> {
        let bad = |reason: String| Error::InvalidGenome { genome: genome.to_string(), reason };
        let Genome::Cell(nodes) = genome else {
            return Err(bad("expected a cell genome".into()));
        };
        if nodes.len() != self.spec.num_intermediate_nodes {
            return Err(bad(format!("{} nodes, expected {}", nodes.len(), self.spec.num_intermediate_nodes)));
        }
        for (k, pair) in nodes.iter().enumerate() {
            for e in pair {
                if e.source >= k + 2 {
                    return Err(bad(format!("node {} reads node {} which does not precede it", k + 2, e.source)));
                }
                if e.op >= self.num_ops() {
                    return Err(bad(format!("operation index {} out of range", e.op)));
                }
            }
            if pair[0].source >= pair[1].source {
                return Err(bad(format!("node {} needs two distinct sources in ascending order", k + 2)));
            }
        }
        Ok(())
    }

    fn mutation_kinds(&self) -> &'static [MutationKind] {
        &[MutationKind::Identity, MutationKind::Op, MutationKind::HiddenState]
    }

    fn apply_mutation(&self, genome: &Genome, kind: MutationKind, rng: &mut dyn RngCore) -> Option<Genome> {
        let Genome::Cell(nodes) = genome else { return None };
        let mut nodes = nodes.clone();
        match kind {
            MutationKind::Identity => {}
            MutationKind::Op => {
                let ops = self.num_ops();
                if ops < 2 {
                    return None;
                }
                let k = rng.random_range(0..nodes.len());
                let e = rng.random_range(0..2);
                let current = nodes[k][e].op;
                let mut op = rng.random_range(0..ops - 1);
                if op >= current {
                    op += 1;
                }
                nodes[k][e].op = op;
            }
            MutationKind::HiddenState => {
                // the first node reads both cell inputs and has nothing to rewire to
                if nodes.len() < 2 {
                    return None;
                }
                let k = rng.random_range(1..nodes.len());
                let e = rng.random_range(0..2);
                let taken = [nodes[k][0].source, nodes[k][1].source];
                let free: Vec<usize> = (0..k + 2).filter(|s| !taken.contains(s)).collect();
                nodes[k][e].source = *free.choose(rng).expect("k >= 1 leaves a free source");
                nodes[k].sort_by_key(|edge| edge.source);
            }
        }
        Some(Genome::Cell(nodes))
    }

    fn size(&self) -> Option<u128> {
        let ops = self.num_ops() as u128;
        (0..self.spec.num_intermediate_nodes).try_fold(1u128, |acc, k| {
            let inputs = k as u128 + 2;
            acc.checked_mul(inputs * (inputs - 1) / 2 * ops * ops)
        })
    }
}

/// Operation names of the NAS-Bench-201 cell, in index order.
pub const NB201_OPS: [&str; 5] = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"];

/// Fixed-topology space: one operation choice per edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TabularSpace {
    kind: TabularKind,
    edge_arities: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum TabularKind {
    Nb201,
    CompleteDag { nodes: usize },
    Plain,
}

impl TabularSpace {
    /// Complete DAG over 4 nodes (6 edges) with 5 operations per edge.
    pub fn nas_bench_201() -> Self {
        Self { kind: TabularKind::Nb201, edge_arities: vec![NB201_OPS.len(); 6] }
    }

    /// Complete DAG over `nodes` nodes with `ops` operations per edge.
    pub fn complete_dag(nodes: usize, ops: usize) -> Result<Self> {
        if nodes < 2 || ops == 0 {
            return Err(Error::Config("complete DAG needs at least 2 nodes and 1 operation".into()));
        }
        Ok(Self { kind: TabularKind::CompleteDag { nodes }, edge_arities: vec![ops; nodes * (nodes - 1) / 2] })
    }

    /// One edge per entry, each with its own number of operations.
    pub fn with_arities(edge_arities: Vec<usize>) -> Result<Self> {
        if edge_arities.is_empty() || edge_arities.contains(&0) {
            return Err(Error::Config("every edge needs at least one operation".into()));
        }
        Ok(Self { kind: TabularKind::Plain, edge_arities })
    }

    pub fn edge_arities(&self) -> &[usize] {
        &self.edge_arities
    }

    /// NAS-Bench-201 architecture string, e.g.
    /// `|nor_conv_3x3~0|+|none~0|skip_connect~1|+|...|`.
    pub fn to_nb201_string(genome: &Genome) -> Result<String> {
        let Genome::Fixed(ops) = genome else {
            return Err(Error::InvalidGenome { genome: genome.to_string(), reason: "not a fixed genome".into() });
        };
        if ops.len() != 6 || ops.iter().any(|&o| o >= NB201_OPS.len()) {
            return Err(Error::InvalidGenome { genome: genome.to_string(), reason: "not a 6-edge, 5-op cell".into() });
        }
        let mut out = String::new();
        let mut e = 0;
        for node in 1..4 {
            if node > 1 {
                out.push('+');
            }
            out.push('|');
            for src in 0..node {
                out.push_str(&format!("{}~{}|", NB201_OPS[ops[e]], src));
                e += 1;
            }
        }
        Ok(out)
    }

    /// Parses a NAS-Bench-201 architecture string.
    pub fn parse_nb201_string(s: &str) -> Result<Genome> {
        let bad = |reason: &str| Error::InvalidGenome { genome: s.to_string(), reason: reason.into() };
        let nodes: Vec<&str> = s.split('+').collect();
        if nodes.len() != 3 {
            return Err(bad("expected three node groups"));
        }
        let mut ops = Vec::with_capacity(6);
        for (i, group) in nodes.iter().enumerate() {
            let edges: Vec<&str> = group.trim_matches('|').split('|').collect();
            if edges.len() != i + 1 {
                return Err(bad("wrong number of edges in node group"));
            }
            for (src, edge) in edges.iter().enumerate() {
                let (name, from) = edge.split_once('~').ok_or_else(|| bad("edge must be op~source"))?;
                if from.parse::<usize>().ok() != Some(src) {
                    return Err(bad("edge sources must be listed in order"));
                }
                let op = NB201_OPS.iter().position(|o| *o == name).ok_or_else(|| bad("unknown operation"))?;
                ops.push(op);
            }
        }
        Ok(Genome::Fixed(ops))
    }
}

impl SearchSpace for TabularSpace {
    fn id(&self) -> String {
        match &self.kind {
            TabularKind::Nb201 => "nb201".to_string(),
            TabularKind::CompleteDag { nodes } => format!("dag:{}x{}", nodes, self.edge_arities[0]),
            TabularKind::Plain => {
                let a: Vec<String> = self.edge_arities.iter().map(usize::to_string).collect();
                format!("tabular:{}", a.join(","))
            }
        }
    }

    fn sample_genome(&self, rng: &mut dyn RngCore) -> Genome {
        Genome::Fixed(self.edge_arities.iter().map(|&a| rng.random_range(0..a)).collect())
    }

    fn validate(&self, genome: &Genome) -> Result<()> {
        let bad = |reason: String| Error::InvalidGenome { genome: genome.to_string(), reason };
        let Genome::Fixed(ops) = genome else {
            return Err(bad("expected a fixed-topology genome".into()));
        };
        if ops.len() != self.edge_arities.len() {
            return Err(bad(format!("{} edges, expected {}", ops.len(), self.edge_arities.len())));
        }
        if let Some((e, _)) = ops.iter().zip(&self.edge_arities).enumerate().find(|(_, (o, a))| o >= a) {
            return Err(bad(format!("operation on edge {e} out of range")));
        }
        Ok(())
    }

    fn mutation_kinds(&self) -> &'static [MutationKind] {
        &[MutationKind::Op]
    }

    fn apply_mutation(&self, genome: &Genome, kind: MutationKind, rng: &mut dyn RngCore) -> Option<Genome> {
        let Genome::Fixed(ops) = genome else { return None };
        match kind {
            MutationKind::Identity => Some(genome.clone()),
            MutationKind::HiddenState => None,
            MutationKind::Op => {
                let mutable: Vec<usize> = (0..ops.len()).filter(|&e| self.edge_arities[e] >= 2).collect();
                let &e = mutable.choose(rng)?;
                let mut ops = ops.clone();
                let mut op = rng.random_range(0..self.edge_arities[e] - 1);
                if op >= ops[e] {
                    op += 1;
                }
                ops[e] = op;
                Some(Genome::Fixed(ops))
            }
        }
    }

    fn size(&self) -> Option<u128> {
        self.edge_arities.iter().try_fold(1u128, |acc, &a| acc.checked_mul(a as u128))
    }

    fn enumerate(&self) -> Option<Vec<Genome>> {
        let total = usize::try_from(self.size()?).ok().filter(|&t| t <= 10_000_000)?;
        let mut out = Vec::with_capacity(total);
        let mut ops = vec![0usize; self.edge_arities.len()];
        for _ in 0..total {
            out.push(Genome::Fixed(ops.clone()));
            // mixed-radix increment, last edge fastest
            for e in (0..ops.len()).rev() {
                ops[e] += 1;
                if ops[e] < self.edge_arities[e] {
                    break;
                }
                ops[e] = 0;
            }
        }
        Some(out)
    }
}

/// Reconstructs a space from its [`SearchSpace::id`].
pub fn space_from_id(id: &str) -> Result<Arc<dyn SearchSpace>> {
    let bad = || Error::Config(format!("unrecognised search space id `{id}`"));
    if id == "nb201" {
        return Ok(Arc::new(TabularSpace::nas_bench_201()));
    }
    if let Some(rest) = id.strip_prefix("dag:") {
        let (n, k) = rest.split_once('x').ok_or_else(bad)?;
        return Ok(Arc::new(TabularSpace::complete_dag(n.parse().map_err(|_| bad())?, k.parse().map_err(|_| bad())?)?));
    }
    if let Some(rest) = id.strip_prefix("tabular:") {
        let arities = rest.split(',').map(|a| a.parse().map_err(|_| bad())).collect::<Result<Vec<usize>>>()?;
        return Ok(Arc::new(TabularSpace::with_arities(arities)?));
    }
    if let Some(rest) = id.strip_prefix("cell:") {
        let parts: Vec<&str> = rest.splitn(4, ':').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let field =
            |p: &str, prefix: char| p.strip_prefix(prefix).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
        let spec = CellSpaceSpec {
            num_intermediate_nodes: field(parts[0], 'n')?,
            hidden_width: field(parts[1], 'w')?,
            macro_depth: field(parts[2], 'd')?,
            op_set: parts[3].split(',').map(str::parse).collect::<Result<_>>()?,
        };
        return Ok(Arc::new(CellSpace::new(spec)?));
    }
    Err(bad())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn nb201_space_has_15625_architectures() {
        let space = TabularSpace::nas_bench_201();
        assert_eq!(space.size(), Some(15_625));
        let all = space.enumerate().unwrap();
        assert_eq!(all.len(), 15_625);
        let distinct: std::collections::HashSet<_> = all.iter().collect();
        assert_eq!(distinct.len(), 15_625);
    }

    #[test]
    fn nb201_string_round_trip() {
        let g = Genome::Fixed(vec![3, 0, 1, 4, 2, 1]);
        let s = TabularSpace::to_nb201_string(&g).unwrap();
        assert_eq!(s, "|nor_conv_3x3~0|+|none~0|skip_connect~1|+|avg_pool_3x3~0|nor_conv_1x1~1|skip_connect~2|");
        assert_eq!(TabularSpace::parse_nb201_string(&s).unwrap(), g);
        assert!(TabularSpace::parse_nb201_string("|conv~0|").is_err());
    }

    #[test]
    fn singleton_cell_space() {
        let space = CellSpace::new(CellSpaceSpec {
            num_intermediate_nodes: 1,
            op_set: vec![CellOp::Identity],
            hidden_width: 2,
            macro_depth: 1,
        })
        .unwrap();
        // one node reading both inputs through the only op
        assert_eq!(space.size(), Some(1));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            space.validate(&space.sample_genome(&mut rng)).unwrap();
        }
    }

    #[test]
    fn genome_text_round_trip() {
        let space = CellSpace::new(CellSpaceSpec::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let g = space.sample_genome(&mut rng);
            let text = g.to_string();
            let back: Genome = text.parse().unwrap();
            assert_eq!(back, g);
            assert_eq!(back.to_string(), text);
        }
        assert!("0:1+1".parse::<Genome>().is_err());
        assert!("".parse::<Genome>().is_err());
    }

    #[test]
    fn validation_rejects_forward_edges() {
        let space = CellSpace::new(CellSpaceSpec::default()).unwrap();
        let mut g = space.sample_genome(&mut ChaCha8Rng::seed_from_u64(3));
        if let Genome::Cell(nodes) = &mut g {
            nodes[0][0].source = 2;
        }
        assert!(space.validate(&g).is_err());
        assert!(space.validate(&Genome::Fixed(vec![0])).is_err());
    }

    #[test]
    fn space_ids_round_trip() {
        let spaces: Vec<Arc<dyn SearchSpace>> = vec![
            Arc::new(TabularSpace::nas_bench_201()),
            Arc::new(TabularSpace::complete_dag(3, 4).unwrap()),
            Arc::new(TabularSpace::with_arities(vec![5, 16]).unwrap()),
            Arc::new(CellSpace::new(CellSpaceSpec::default()).unwrap()),
        ];
        for s in spaces {
            assert_eq!(space_from_id(&s.id()).unwrap().id(), s.id());
        }
        assert!(space_from_id("what").is_err());
    }

    #[test]
    fn tabular_mutation_is_op_only() {
        let space = TabularSpace::nas_bench_201();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let arch = space.sample(&mut rng);
        for _ in 0..200 {
            let (child, kind) = mutate(&space, &arch, &mut rng);
            assert_eq!(kind, MutationKind::Op);
            let (Genome::Fixed(a), Genome::Fixed(b)) = (&arch.genome, &child.genome) else { unreachable!() };
            assert_eq!(a.iter().zip(b).filter(|(x, y)| x != y).count(), 1);
        }
    }

    #[test]
    fn impossible_mutations_fall_back_to_identity() {
        let space = TabularSpace::with_arities(vec![1, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let arch = space.sample(&mut rng);
        let (child, kind) = mutate(&space, &arch, &mut rng);
        assert_eq!(kind, MutationKind::Identity);
        assert_eq!(child, arch);
    }
}
