use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::persistence::TopoStats;

/// Which per-set summary `g` is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GMode {
    /// Statistics of the persistence deaths.
    Ph,
    /// Statistics of the raw point values.
    Noph,
    /// `[ph | noph]`.
    Both,
}

impl GMode {
    pub const ALL: [GMode; 3] = [GMode::Ph, GMode::Noph, GMode::Both];

    pub fn bases(self) -> &'static [Base] {
        match self {
            GMode::Ph => &[Base::Ph],
            GMode::Noph => &[Base::Noph],
            GMode::Both => &[Base::Ph, Base::Noph],
        }
    }

    /// Length of one `g` output.
    pub fn width(self) -> usize {
        self.bases().len() * TopoStats::LEN
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GMode::Ph => "ph",
            GMode::Noph => "noph",
            GMode::Both => "both",
        }
    }
}

impl fmt::Display for GMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ph" => Ok(GMode::Ph),
            "noph" => Ok(GMode::Noph),
            "both" => Ok(GMode::Both),
            other => Err(Error::InvalidInput(format!(
                "unknown g-mode {other:?} (expected ph|noph|both)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Base {
    Ph,
    Noph,
}

impl Base {
    pub fn as_str(self) -> &'static str {
        match self {
            Base::Ph => "ph",
            Base::Noph => "noph",
        }
    }
}

/// Point-set families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Outgoing weights scaled by the source node's mean activation.
    A,
    /// Incoming weights scaled by each source node's mean activation.
    APrime,
    /// Random weight blocks scaled by the source nodes' mean activations.
    ADouble,
    /// Absolute outgoing weights scaled by the source node's deviation.
    I,
    IPrime,
    IDouble,
    /// Covariances between one node and partner nodes.
    C,
    /// Mean activations of a layer.
    HMu,
    /// Activation deviations of a layer.
    HSigma,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::A,
        Family::APrime,
        Family::ADouble,
        Family::I,
        Family::IPrime,
        Family::IDouble,
        Family::C,
        Family::HMu,
        Family::HSigma,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::A => "A",
            Family::APrime => "A1",
            Family::ADouble => "A2",
            Family::I => "I",
            Family::IPrime => "I1",
            Family::IDouble => "I2",
            Family::C => "C",
            Family::HMu => "H_mu",
            Family::HSigma => "H_sigma",
        }
    }

    /// Families indexed by weight matrix rather than activation layer.
    pub fn is_weight_family(self) -> bool {
        matches!(
            self,
            Family::A | Family::APrime | Family::ADouble | Family::I | Family::IPrime | Family::IDouble
        )
    }

    pub fn is_h(self) -> bool {
        matches!(self, Family::HMu | Family::HSigma)
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown point-set family {s:?}")))
    }
}

/// How a component was reduced across the sets of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Mean,
    Std,
    /// Single set, no cross-set reduction.
    Direct,
}

impl Reduction {
    fn as_str(self) -> &'static str {
        match self {
            Reduction::Mean => "mean",
            Reduction::Std => "std",
            Reduction::Direct => "direct",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    /// Weight-matrix index for weight families, activation-layer index otherwise.
    pub layer: usize,
    pub family: Family,
    pub reduction: Reduction,
    pub base: Base,
    /// Index into [`TopoStats::NAMES`].
    pub statistic: usize,
}

/// A contiguous run of components produced by one family at one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub family: Family,
    pub layer: usize,
    pub offset: usize,
    pub len: usize,
}

/// Deterministic schema of a topological feature vector.
///
/// Ordering: the A-type blocks (A, A1, A2) of every weight matrix, then the
/// I-type blocks, then C of every activation layer, then H.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    g_mode: GMode,
    scope: String,
    components: Vec<Component>,
    blocks: Vec<BlockSpec>,
    hash: String,
}

impl FeatureLayout {
    /// Layout of a dense network with the given widths.
    ///
    /// `tag` names the extraction settings that change feature semantics
    /// without changing the component list (for example the covariance
    /// variant); it enters the layout hash.
    pub fn dense(widths: &[usize], g_mode: GMode, tag: &str) -> Self {
        let depth = widths.len().saturating_sub(1);
        let mut plan: Vec<(Family, usize, &'static [Reduction])> = Vec::new();
        const AGG: &[Reduction] = &[Reduction::Mean, Reduction::Std];
        const DIRECT: &[Reduction] = &[Reduction::Direct];
        for fams in [
            [Family::A, Family::APrime, Family::ADouble],
            [Family::I, Family::IPrime, Family::IDouble],
        ] {
            for layer in 0..depth {
                for fam in fams {
                    plan.push((fam, layer, AGG));
                }
            }
        }
        for layer in 1..=depth {
            plan.push((Family::C, layer, AGG));
        }
        for layer in 1..=depth {
            plan.push((Family::HMu, layer, DIRECT));
            plan.push((Family::HSigma, layer, DIRECT));
        }
        let scope = format!(
            "dense widths={} {tag}",
            widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(",")
        );
        Self::from_plan(scope, g_mode, &plan)
    }

    /// Layout of one convolutional block.
    pub fn conv(g_mode: GMode, tag: &str) -> Self {
        const AGG: &[Reduction] = &[Reduction::Mean, Reduction::Std];
        const DIRECT: &[Reduction] = &[Reduction::Direct];
        let plan = [
            (Family::A, 0, AGG),
            (Family::I, 0, AGG),
            (Family::C, 0, AGG),
            (Family::HMu, 0, DIRECT),
            (Family::HSigma, 0, DIRECT),
        ];
        Self::from_plan(format!("conv {tag}"), g_mode, &plan)
    }

    fn from_plan(scope: String, g_mode: GMode, plan: &[(Family, usize, &[Reduction])]) -> Self {
        let mut components = Vec::new();
        let mut blocks = Vec::new();
        for &(family, layer, reductions) in plan {
            let offset = components.len();
            let prefix = if family.is_weight_family() {
                format!("W{layer}")
            } else {
                format!("h{layer}")
            };
            for &reduction in reductions {
                for &base in g_mode.bases() {
                    for (statistic, stat_name) in TopoStats::NAMES.iter().enumerate() {
                        let name = match reduction {
                            Reduction::Direct => {
                                format!("{prefix}.{}.{}.{stat_name}", family.as_str(), base.as_str())
                            }
                            _ => format!(
                                "{prefix}.{}.{}.{}.{stat_name}",
                                family.as_str(),
                                reduction.as_str(),
                                base.as_str()
                            ),
                        };
                        components.push(Component {
                            name,
                            layer,
                            family,
                            reduction,
                            base,
                            statistic,
                        });
                    }
                }
            }
            blocks.push(BlockSpec {
                family,
                layer,
                offset,
                len: components.len() - offset,
            });
        }
        let mut layout = Self {
            g_mode,
            scope,
            components,
            blocks,
            hash: String::new(),
        };
        let digest = Sha256::digest(layout.descriptor().as_bytes());
        layout.hash = hex::encode(&digest[..8]);
        layout
    }

    pub fn g_mode(&self) -> GMode {
        self.g_mode
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// Short hex digest of the descriptor text.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    /// Tab-separated schema text: a two-line header followed by one line per
    /// component (`index name layer family reduction base statistic`).
    pub fn descriptor(&self) -> String {
        let mut out = format!(
            "# nettopo feature layout v1\n# scope: {} | g_mode: {}\nindex\tname\tlayer\tfamily\treduction\tbase\tstatistic\n",
            self.scope, self.g_mode
        );
        for (i, c) in self.components.iter().enumerate() {
            out.push_str(&format!(
                "{i}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                c.name,
                c.layer,
                c.family.as_str(),
                c.reduction.as_str(),
                c.base.as_str(),
                TopoStats::NAMES[c.statistic]
            ));
        }
        out
    }

    /// Parses a descriptor produced by [`FeatureLayout::descriptor`].
    pub fn parse_descriptor(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let bad = |m: &str| Error::Corrupt(format!("layout descriptor: {m}"));
        if lines.next() != Some("# nettopo feature layout v1") {
            return Err(bad("missing version header"));
        }
        let meta = lines.next().ok_or_else(|| bad("missing scope line"))?;
        let meta = meta
            .strip_prefix("# scope: ")
            .ok_or_else(|| bad("malformed scope line"))?;
        let (scope, g) = meta
            .rsplit_once(" | g_mode: ")
            .ok_or_else(|| bad("malformed scope line"))?;
        let g_mode: GMode = g.parse()?;
        lines.next();
        let mut plan: Vec<(Family, usize, Vec<Reduction>)> = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad(&format!("malformed row {line:?}")));
            }
            let layer: usize = f[2].parse().map_err(|_| bad("bad layer"))?;
            let family: Family = f[3].parse()?;
            let reduction = match f[4] {
                "mean" => Reduction::Mean,
                "std" => Reduction::Std,
                "direct" => Reduction::Direct,
                _ => return Err(bad("bad reduction")),
            };
            match plan.last_mut() {
                Some((fam, l, reds)) if *fam == family && *l == layer => {
                    if !reds.contains(&reduction) {
                        reds.push(reduction);
                    }
                }
                _ => plan.push((family, layer, vec![reduction])),
            }
        }
        let plan_ref: Vec<(Family, usize, &[Reduction])> =
            plan.iter().map(|(f, l, r)| (*f, *l, r.as_slice())).collect();
        let layout = Self::from_plan(scope.to_string(), g_mode, &plan_ref);
        if layout.descriptor() != text {
            return Err(bad("content does not reproduce canonically"));
        }
        Ok(layout)
    }

    /// Indices of `self`'s components inside `source`, matched by name.
    pub fn projection_from(&self, source: &FeatureLayout) -> Result<Vec<usize>> {
        if self.scope != source.scope {
            return Err(Error::LayoutMismatch {
                expected: self.scope.clone(),
                found: source.scope.clone(),
            });
        }
        let index: std::collections::HashMap<&str, usize> = source
            .components
            .iter()
            .enumerate()
            .map(|(i, c)| (c.name.as_str(), i))
            .collect();
        self.components
            .iter()
            .map(|c| {
                index
                    .get(c.name.as_str())
                    .copied()
                    .ok_or_else(|| Error::LayoutMismatch {
                        expected: c.name.clone(),
                        found: format!("layout {}", source.hash),
                    })
            })
            .collect()
    }

    /// Per-component mask selecting the given families.
    pub fn family_mask(&self, families: &[Family]) -> Vec<bool> {
        self.components.iter().map(|c| families.contains(&c.family)).collect()
    }
}

/// A topological feature vector tied to its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TopoFeatureVector {
    pub values: Vec<f64>,
    pub layout: Arc<FeatureLayout>,
}

impl TopoFeatureVector {
    pub fn new(values: Vec<f64>, layout: Arc<FeatureLayout>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "{} values for a layout of {} components",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Re-expresses the vector in `target`, which must be a sub-layout
    /// (e.g. the `ph` part of a `both` vector).
    pub fn project(&self, target: &Arc<FeatureLayout>) -> Result<Self> {
        let idx = target.projection_from(&self.layout)?;
        Ok(Self {
            values: idx.iter().map(|&i| self.values[i]).collect(),
            layout: Arc::clone(target),
        })
    }
}
