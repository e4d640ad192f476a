use super::layers::{BatchNorm2d, Conv2d};
use super::{Graph, LayerParams};
use crate::autodiff::Var;
use crate::error::{dim_err, Result};
use crate::rng::Rng;
use crate::tensor::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    /// conv3×3 → bn → relu → conv3×3 → bn
    Basic,
    /// conv1×1 → bn → relu → conv3×3 → bn → relu → conv1×1 → bn
    Bottleneck,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResidualBlockSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    /// Width reduction of the bottleneck's inner 3×3 conv (`out / ratio`).
    pub bottleneck_ratio: usize,
    pub kind: BlockKind,
}

impl ResidualBlockSpec {
    pub fn needs_projection(&self) -> bool {
        self.in_channels != self.out_channels || self.stride != 1
    }

    fn mid_channels(&self) -> usize {
        match self.kind {
            BlockKind::Basic => self.out_channels,
            BlockKind::Bottleneck => (self.out_channels / self.bottleneck_ratio.max(1)).max(1),
        }
    }
}

/// Residual unit `relu(F(x) + shortcut(x))`.
///
/// The shortcut is the identity when shapes agree and a strided 1×1 conv + batch norm
/// otherwise.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub spec: ResidualBlockSpec,
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm2d>,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl ResidualBlock {
    pub fn new(prefix: &str, spec: ResidualBlockSpec) -> Self {
        let (cin, cout, mid, s) = (spec.in_channels, spec.out_channels, spec.mid_channels(), spec.stride);
        let p = |n: &str| format!("{prefix}.{n}");
        let convs = match spec.kind {
            BlockKind::Basic => vec![Conv2d::new(p("conv1"), cin, cout, 3, s, 1), Conv2d::new(p("conv2"), cout, cout, 3, 1, 1)],
            BlockKind::Bottleneck => vec![
                Conv2d::new(p("conv1"), cin, mid, 1, 1, 0),
                Conv2d::new(p("conv2"), mid, mid, 3, s, 1),
                Conv2d::new(p("conv3"), mid, cout, 1, 1, 0),
            ],
        };
        let norms = convs
            .iter()
            .enumerate()
            .map(|(i, c)| BatchNorm2d::new(p(&format!("bn{}", i + 1)), c.out_channels))
            .collect();
        let shortcut = spec
            .needs_projection()
            .then(|| (Conv2d::new(p("shortcut.conv"), cin, cout, 1, s, 0), BatchNorm2d::new(p("shortcut.bn"), cout)));
        ResidualBlock { spec, convs, norms, shortcut }
    }

    pub fn init<S: Scalar>(&self, params: &mut LayerParams<S>, rng: &mut Rng) -> Result<()> {
        for (c, n) in self.convs.iter().zip(&self.norms) {
            c.init(params, rng)?;
            n.init(params)?;
        }
        if let Some((c, n)) = &self.shortcut {
            c.init(params, rng)?;
            n.init(params)?;
        }
        Ok(())
    }

    /// Paths of the residual-branch convolutions (excluding the shortcut).
    pub fn branch_conv_paths(&self) -> Vec<String> {
        self.convs.iter().map(Conv2d::weight_path).collect()
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.spec.in_channels {
            return Err(dim_err!(
                "residual block expects {} input channels, got shape {shape:?}",
                self.spec.in_channels
            ));
        }
        let last = self.convs.len() - 1;
        let mut h = x;
        for (i, (c, n)) in self.convs.iter().zip(&self.norms).enumerate() {
            h = c.forward(g, h)?;
            h = n.forward(g, h)?;
            if i != last {
                h = g.tape_mut().relu(h);
            }
        }
        let skip = match &self.shortcut {
            Some((c, n)) => {
                let s = c.forward(g, x)?;
                n.forward(g, s)?
            }
            None => x,
        };
        let t = g.tape_mut();
        let sum = t.add(h, skip)?;
        Ok(t.relu(sum))
    }
}
