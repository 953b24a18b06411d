//! Parameter counts, sample complexities and the `K/R` redundancy measure,
//! plus a small text format for auditing bottleneck-style blocks.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ComplexityError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("rank list has {ranks} entries but there are {modes} kernel modes")]
    LengthMismatch { ranks: usize, modes: usize },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: field {field}: {message}")]
    Invalid {
        line: usize,
        field: &'static str,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, ComplexityError>;

fn positive(name: &'static str, v: usize) -> Result<u64> {
    if v == 0 {
        Err(ComplexityError::NonPositive(name))
    } else {
        Ok(v as u64)
    }
}

fn all_positive(name: &'static str, v: &[usize]) -> Result<()> {
    if v.is_empty() {
        return Err(ComplexityError::NonPositive(name));
    }
    v.iter().try_for_each(|&x| positive(name, x).map(|_| ()))
}

fn check_modes(ranks: &[usize], l: &[usize]) -> Result<()> {
    all_positive("R_i", ranks)?;
    all_positive("l_i", l)?;
    if ranks.len() != l.len() {
        return Err(ComplexityError::LengthMismatch {
            ranks: ranks.len(),
            modes: l.len(),
        });
    }
    Ok(())
}

/// `K (P + L)`.
pub fn naive_count_uncompressed(k: usize, p: usize, l: usize) -> Result<u64> {
    Ok(positive("K", k)? * (positive("P", p)? + positive("L", l)?))
}

/// `R ∏R_i + Σ l_i R_i + R K + K P`.
pub fn naive_count_tucker(ranks: &[usize], r: usize, l: &[usize], k: usize, p: usize) -> Result<u64> {
    check_modes(ranks, l)?;
    let (r, k, p) = (positive("R", r)?, positive("K", k)?, positive("P", p)?);
    Ok(tucker_shared(ranks, r, l) + r * k + k * p)
}

/// `R (Σ l_i + K + 1) + K P`.
pub fn naive_count_cp(r: usize, l: &[usize], k: usize, p: usize) -> Result<u64> {
    all_positive("l_i", l)?;
    let (r, k, p) = (positive("R", r)?, positive("K", k)?, positive("P", p)?);
    let sl: u64 = l.iter().map(|&x| x as u64).sum();
    Ok(r * (sl + k + 1) + k * p)
}

/// `K (P + L + 1)` when `K < min(P, L)`, otherwise `P L`.
pub fn sample_complexity_uncompressed(k: usize, p: usize, l: usize) -> Result<u64> {
    let (k, p, l) = (positive("K", k)?, positive("P", p)?, positive("L", l)?);
    Ok(if k < p.min(l) { k * (p + l + 1) } else { p * l })
}

/// `R ∏R_i + Σ l_i R_i + R P`. Does not depend on `K`.
pub fn sample_complexity_tucker(ranks: &[usize], r: usize, l: &[usize], p: usize) -> Result<u64> {
    check_modes(ranks, l)?;
    let (r, p) = (positive("R", r)?, positive("P", p)?);
    Ok(tucker_shared(ranks, r, l) + r * p)
}

/// The Tucker sample complexity with every `R_i = R`: `R^(N+1) + R Σ l_i + R P`.
pub fn sample_complexity_cp(r: usize, l: &[usize], p: usize) -> Result<u64> {
    all_positive("l_i", l)?;
    sample_complexity_tucker(&vec![r; l.len()], r, l, p)
}

fn tucker_shared(ranks: &[usize], r: u64, l: &[usize]) -> u64 {
    let core: u64 = ranks.iter().map(|&x| x as u64).product();
    let factors: u64 = ranks.iter().zip(l).map(|(&a, &b)| (a * b) as u64).sum();
    r * core + factors
}

/// `K / R` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct KrRatio {
    num: u64,
    den: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl KrRatio {
    pub fn new(k: usize, r: usize) -> Result<Self> {
        let (k, r) = (positive("K", k)?, positive("R", r)?);
        let g = gcd(k, r);
        Ok(Self { num: k / g, den: r / g })
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    pub fn denominator(self) -> u64 {
        self.den
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn is_one(self) -> bool {
        self.num == self.den
    }

    pub fn below_one(self) -> bool {
        self.num < self.den
    }
}

impl fmt::Display for KrRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

pub const DEFAULT_KR_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Redundancy {
    NoRedundancy,
    PossibleRedundancy,
    HasRedundancy,
}

impl Redundancy {
    pub fn as_str(self) -> &'static str {
        match self {
            Redundancy::NoRedundancy => "no_redundancy",
            Redundancy::PossibleRedundancy => "possible_redundancy",
            Redundancy::HasRedundancy => "has_redundancy",
        }
    }
}

impl fmt::Display for Redundancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `1` (or below) is no redundancy, `(1, threshold]` possible, above `threshold` has.
/// Ratios below one are not expected; callers may warn via [`KrRatio::below_one`].
pub fn kr_classify(ratio: KrRatio, threshold: f64) -> Redundancy {
    if ratio.num <= ratio.den {
        Redundancy::NoRedundancy
    } else if ratio.value() <= threshold {
        Redundancy::PossibleRedundancy
    } else {
        Redundancy::HasRedundancy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormulaKind {
    Tucker,
    Cp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityReport {
    pub kind: FormulaKind,
    pub naive_uncompressed: u64,
    pub naive_compressed: u64,
    pub sample_uncompressed: u64,
    pub sample_compressed: u64,
    /// `naive_compressed − sample_compressed`; negative only for CP stacks
    /// where `R^(N+1)` dominates.
    pub discrepancy: i64,
    pub kr_ratio: KrRatio,
}

impl ComplexityReport {
    /// Tucker-compressed kernels of shape `l` with spatial ranks `ranks` and
    /// output rank `r`, `k` kernels and pooled size `p`.
    pub fn tucker(ranks: &[usize], r: usize, l: &[usize], k: usize, p: usize) -> Result<Self> {
        let big_l: usize = l.iter().product();
        let naive_compressed = naive_count_tucker(ranks, r, l, k, p)?;
        let sample_compressed = sample_complexity_tucker(ranks, r, l, p)?;
        Ok(Self {
            kind: FormulaKind::Tucker,
            naive_uncompressed: naive_count_uncompressed(k, p, big_l)?,
            naive_compressed,
            sample_uncompressed: sample_complexity_uncompressed(k, p, big_l)?,
            sample_compressed,
            discrepancy: naive_compressed as i64 - sample_compressed as i64,
            kr_ratio: KrRatio::new(k, r)?,
        })
    }

    pub fn cp(r: usize, l: &[usize], k: usize, p: usize) -> Result<Self> {
        let big_l: usize = l.iter().product();
        let naive_compressed = naive_count_cp(r, l, k, p)?;
        let sample_compressed = sample_complexity_cp(r, l, p)?;
        Ok(Self {
            kind: FormulaKind::Cp,
            naive_uncompressed: naive_count_uncompressed(k, p, big_l)?,
            naive_compressed,
            sample_uncompressed: sample_complexity_uncompressed(k, p, big_l)?,
            sample_compressed,
            discrepancy: naive_compressed as i64 - sample_compressed as i64,
            kr_ratio: KrRatio::new(k, r)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    StandardBottleneck,
    Funnel,
    DepthwiseSeparable,
    InvertedResidual,
    GroupedBottleneck,
}

impl BlockKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BlockKind::StandardBottleneck => "bottleneck",
            BlockKind::Funnel => "funnel",
            BlockKind::DepthwiseSeparable => "depthwise_separable",
            BlockKind::InvertedResidual => "inverted_residual",
            BlockKind::GroupedBottleneck => "grouped",
        }
    }
}

impl FromStr for BlockKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "bottleneck" | "standard_bottleneck" => BlockKind::StandardBottleneck,
            "funnel" => BlockKind::Funnel,
            "depthwise_separable" | "depthwise" => BlockKind::DepthwiseSeparable,
            "inverted_residual" => BlockKind::InvertedResidual,
            "grouped" | "grouped_bottleneck" => BlockKind::GroupedBottleneck,
            other => return Err(format!("unknown block kind '{other}'")),
        })
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDesign {
    pub kind: BlockKind,
    /// Input channels `C`.
    pub c: usize,
    /// Bottleneck channels `R`.
    pub r: usize,
    /// Output channels `K`.
    pub k: usize,
    /// Spatial kernel `l1 x l2`.
    pub kernel: (usize, usize),
    /// Groups `g` (grouped bottleneck only).
    pub groups: Option<usize>,
    /// Expansion factor `x` (inverted residual only).
    pub expansion: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decomposition {
    /// Ranks for every mode of the stacked kernel, output mode last.
    Tucker { ranks: Vec<usize> },
    Cp { rank: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStructure {
    pub decomposition: Decomposition,
    /// `(l1, l2, C, K)`.
    pub stack_shape: [usize; 4],
    pub k: usize,
    pub r: usize,
    /// For grouped blocks: `g` core blocks of shape `(l1, l2, r, r)` with `r = R / g`.
    pub core_blocks: Option<(usize, [usize; 4])>,
}

impl BlockDesign {
    /// Checks the field invariants; `line` is only used in error messages.
    pub fn validate(&self, line: usize) -> Result<()> {
        let bad = |field, message: String| Err(ComplexityError::Invalid { line, field, message });
        for (field, v) in [("C", self.c), ("R", self.r), ("K", self.k), ("k", self.kernel.0), ("k", self.kernel.1)] {
            if v == 0 {
                return bad(field, "must be positive".into());
            }
        }
        match self.kind {
            BlockKind::Funnel if self.k != self.r => {
                return bad("K", format!("funnel blocks need K == R, got K={} R={}", self.k, self.r));
            }
            BlockKind::GroupedBottleneck => match self.groups {
                None => return bad("g", "grouped blocks need g=<groups>".into()),
                Some(0) => return bad("g", "must be positive".into()),
                Some(g) if self.r % g != 0 => {
                    return bad("g", format!("{g} does not divide R={}", self.r));
                }
                _ => {}
            },
            BlockKind::InvertedResidual => {
                if let Some(x) = self.expansion {
                    if !(x >= 1.0) {
                        return bad("x", format!("expansion factor must be at least 1, got {x}"));
                    }
                    let xc = x * self.c as f64;
                    if (xc - self.r as f64).abs() > 1e-9 {
                        return bad("x", format!("x*C = {xc} must equal R = {}", self.r));
                    }
                }
            }
            _ => {}
        }
        if self.groups.is_some() && self.kind != BlockKind::GroupedBottleneck {
            return bad("g", format!("not applicable to {} blocks", self.kind));
        }
        if self.expansion.is_some() && self.kind != BlockKind::InvertedResidual {
            return bad("x", format!("not applicable to {} blocks", self.kind));
        }
        Ok(())
    }

    pub fn kr_ratio(&self) -> KrRatio {
        KrRatio::new(self.k, self.r).expect("validated block")
    }

    /// Stacked-kernel decomposition implied by the block layout.
    pub fn structure(&self) -> Result<BlockStructure> {
        self.validate(0)?;
        let (l1, l2) = self.kernel;
        let decomposition = match self.kind {
            BlockKind::StandardBottleneck | BlockKind::Funnel | BlockKind::GroupedBottleneck => {
                Decomposition::Tucker {
                    ranks: vec![l1, l2, self.r, self.r],
                }
            }
            BlockKind::DepthwiseSeparable | BlockKind::InvertedResidual => Decomposition::Cp { rank: self.r },
        };
        let core_blocks = self.groups.map(|g| {
            let r = self.r / g;
            (g, [l1, l2, r, r])
        });
        Ok(BlockStructure {
            decomposition,
            stack_shape: [l1, l2, self.c, self.k],
            k: self.k,
            r: self.r,
            core_blocks,
        })
    }

    /// Complexity of the block treated as a 3-mode kernel stack `(l1, l2, C)`
    /// followed by pooling to `p` positions.
    pub fn report(&self, p: usize) -> Result<ComplexityReport> {
        let s = self.structure()?;
        let l = [self.kernel.0, self.kernel.1, self.c];
        match s.decomposition {
            Decomposition::Tucker { ranks } => ComplexityReport::tucker(&ranks[..3], self.r, &l, self.k, p),
            Decomposition::Cp { rank } => ComplexityReport::cp(rank, &l, self.k, p),
        }
    }
}

impl fmt::Display for BlockDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} C={} R={} K={}", self.kind, self.c, self.r, self.k)?;
        if let Some(g) = self.groups {
            write!(f, " g={g}")?;
        }
        if let Some(x) = self.expansion {
            write!(f, " x={x}")?;
        }
        write!(f, " k={}x{}", self.kernel.0, self.kernel.1)
    }
}

/// Parses one block per non-empty line; `#` starts a comment.
pub fn parse_network_spec(text: &str) -> Result<Vec<BlockDesign>> {
    let mut blocks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        blocks.push(parse_line(body, line)?);
    }
    Ok(blocks)
}

fn parse_line(body: &str, line: usize) -> Result<BlockDesign> {
    let syntax = |message: String| ComplexityError::Syntax { line, message };
    let mut tokens = body.split_whitespace();
    let kind: BlockKind = tokens.next().expect("non-empty line").parse().map_err(syntax)?;
    let (mut c, mut r, mut k, mut g, mut x, mut kernel) = (None, None, None, None, None, None);
    for tok in tokens {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| syntax(format!("expected key=value, got '{tok}'")))?;
        let int = |field: &'static str| {
            value.parse::<usize>().map_err(|_| ComplexityError::Invalid {
                line,
                field,
                message: format!("'{value}' is not a non-negative integer"),
            })
        };
        let (slot_filled, name) = match key {
            "C" => (c.replace(int("C")?).is_some(), "C"),
            "R" => (r.replace(int("R")?).is_some(), "R"),
            "K" => (k.replace(int("K")?).is_some(), "K"),
            "g" => (g.replace(int("g")?).is_some(), "g"),
            "x" => {
                let v = value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ComplexityError::Invalid {
                    line,
                    field: "x",
                    message: format!("'{value}' is not a number"),
                })?;
                (x.replace(v).is_some(), "x")
            }
            "k" => {
                let parsed = value
                    .split_once('x')
                    .and_then(|(h, w)| Some((h.parse::<usize>().ok()?, w.parse::<usize>().ok()?)))
                    .ok_or_else(|| ComplexityError::Invalid {
                        line,
                        field: "k",
                        message: format!("expected <h>x<w>, got '{value}'"),
                    })?;
                (kernel.replace(parsed).is_some(), "k")
            }
            other => return Err(syntax(format!("unknown field '{other}'"))),
        };
        if slot_filled {
            return Err(syntax(format!("field {name} given twice")));
        }
    }
    let missing = |field: &'static str| ComplexityError::Invalid {
        line,
        field,
        message: "missing".into(),
    };
    let block = BlockDesign {
        kind,
        c: c.ok_or_else(|| missing("C"))?,
        r: r.ok_or_else(|| missing("R"))?,
        k: k.ok_or_else(|| missing("K"))?,
        kernel: kernel.ok_or_else(|| missing("k"))?,
        groups: g,
        expansion: x,
    };
    block.validate(line)?;
    Ok(block)
}

pub fn render_network_spec(blocks: &[BlockDesign]) -> String {
    blocks.iter().map(|b| format!("{b}\n")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAuditRow {
    pub block_index: usize,
    pub kind: String,
    #[serde(rename = "C")]
    pub c: usize,
    #[serde(rename = "R")]
    pub r: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub kr_ratio: String,
    pub d_naive: u64,
    #[serde(rename = "d_M")]
    pub d_m: u64,
    pub discrepancy: i64,
    pub classification: Redundancy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkAudit {
    pub rows: Vec<BlockAuditRow>,
    pub total_naive: u64,
    pub total_sample: u64,
    pub total_discrepancy: i64,
}

/// Per-block reports (1-based `block_index`) and totals.
pub fn audit_blocks(blocks: &[BlockDesign], pooled_size: usize, threshold: f64) -> Result<NetworkAudit> {
    let mut rows = Vec::with_capacity(blocks.len());
    for (i, b) in blocks.iter().enumerate() {
        let rep = b.report(pooled_size)?;
        rows.push(BlockAuditRow {
            block_index: i + 1,
            kind: b.kind.to_string(),
            c: b.c,
            r: b.r,
            k: b.k,
            kr_ratio: format!("{:.4}", rep.kr_ratio.value()),
            d_naive: rep.naive_compressed,
            d_m: rep.sample_compressed,
            discrepancy: rep.discrepancy,
            classification: kr_classify(rep.kr_ratio, threshold),
        });
    }
    Ok(NetworkAudit {
        total_naive: rows.iter().map(|r| r.d_naive).sum(),
        total_sample: rows.iter().map(|r| r.d_m).sum(),
        total_discrepancy: rows.iter().map(|r| r.discrepancy).sum(),
        rows,
    })
}

impl NetworkAudit {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.rows.is_empty() {
            w.write_record([
                "block_index",
                "kind",
                "C",
                "R",
                "K",
                "kr_ratio",
                "d_naive",
                "d_M",
                "discrepancy",
                "classification",
            ])
            .expect("in-memory write");
        }
        for row in &self.rows {
            w.serialize(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}
