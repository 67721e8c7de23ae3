use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FlameError, Result};
use crate::heatmap::NUM_LANDMARKS;
use crate::nn::pool::pooled_size;

pub const RESOLUTIONS: [usize; 3] = [120, 60, 30];
pub const POSE_FEATURES: usize = 2;
pub const COORD_FEATURES: usize = 2 * NUM_LANDMARKS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum Variant {
    #[serde(rename = "FLAME")]
    Flame,
    /// Aggregation only: no transfer function.
    #[serde(rename = "F_AO")]
    AggregationOnly,
    /// Additive fusion of the final maps, no transfer function.
    #[serde(rename = "F_AF")]
    AdditiveFusion,
    /// RGB stream only.
    #[serde(rename = "F_B")]
    Baseline,
    /// RGB stream plus a fully connected branch on raw landmark coordinates.
    #[serde(rename = "DENSE_FUSION")]
    DenseFusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    Concat,
    Additive,
    None,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Baseline,
        Variant::AdditiveFusion,
        Variant::AggregationOnly,
        Variant::Flame,
        Variant::DenseFusion,
    ];

    /// The four settings of the ablation table, in table order.
    pub const ABLATION: [Variant; 4] = [
        Variant::Baseline,
        Variant::AdditiveFusion,
        Variant::AggregationOnly,
        Variant::Flame,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Flame => "FLAME",
            Variant::AggregationOnly => "F_AO",
            Variant::AdditiveFusion => "F_AF",
            Variant::Baseline => "F_B",
            Variant::DenseFusion => "DENSE_FUSION",
        }
    }

    pub fn uses_heatmap(self) -> bool {
        matches!(
            self,
            Variant::Flame | Variant::AggregationOnly | Variant::AdditiveFusion
        )
    }

    pub fn uses_transfer(self) -> bool {
        self == Variant::Flame
    }

    pub fn uses_coordinates(self) -> bool {
        self == Variant::DenseFusion
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            Variant::Flame | Variant::AggregationOnly => Aggregation::Concat,
            Variant::AdditiveFusion => Aggregation::Additive,
            Variant::Baseline | Variant::DenseFusion => Aggregation::None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Variant {
    type Err = FlameError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.tag() == norm)
            .ok_or_else(|| {
                FlameError::Config(format!(
                    "unknown variant `{s}` (expected FLAME, F_AO, F_AF, F_B or DENSE_FUSION)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    Tiny,
}

impl FromStr for Preset {
    type Err = FlameError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "paper" => Ok(Preset::Paper),
            "tiny" => Ok(Preset::Tiny),
            other => Err(FlameError::Config(format!(
                "unknown preset `{other}` (expected paper or tiny)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Paper => "paper",
            Preset::Tiny => "tiny",
        })
    }
}

/// Variant selection plus every architectural hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub variant: Variant,
    pub preset: Preset,
    pub resolution: usize,
    /// Output channels of the three backbone modules; the stem uses the first.
    pub channels: Vec<usize>,
    pub blocks_per_module: usize,
    pub head_widths: Vec<usize>,
    pub dropout: f64,
    pub heatmap_scale: f64,
    /// Output width of the concat-residual aggregation block.
    pub hybrid_width: usize,
    pub mmtm_z_activation: bool,
    /// Start the excitation heads at zero (transfer function = identity).
    pub mmtm_zero_init: bool,
    /// Start the final linear layer at zero so initial predictions are (0, 0).
    pub zero_output_init: bool,
    /// Width of the first coordinate layer, then the width of each coordinate module.
    pub coord_input_width: usize,
    pub coord_widths: Vec<usize>,
    pub coord_layers_per_module: usize,
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn new(variant: Variant, preset: Preset, resolution: usize) -> Self {
        let (channels, head, coord_in, coord) = match preset {
            Preset::Paper => (
                vec![64, 128, 256],
                vec![512, 512],
                1024,
                vec![1024, 512, 256],
            ),
            Preset::Tiny => (vec![8, 16, 32], vec![64, 64], 64, vec![64, 32, 32]),
        };
        ModelSpec {
            variant,
            preset,
            resolution,
            hybrid_width: *channels.last().expect("three modules"),
            channels,
            blocks_per_module: 2,
            head_widths: head,
            dropout: 0.2,
            heatmap_scale: 1.0,
            mmtm_z_activation: true,
            mmtm_zero_init: false,
            zero_output_init: true,
            coord_input_width: coord_in,
            coord_widths: coord,
            coord_layers_per_module: 4,
            init_seed: 0,
        }
    }

    pub fn paper(variant: Variant) -> Self {
        Self::new(variant, Preset::Paper, 120)
    }

    pub fn tiny(variant: Variant, resolution: usize) -> Self {
        Self::new(variant, Preset::Tiny, resolution)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FlameError::Config(m));
        if !RESOLUTIONS.contains(&self.resolution) {
            return bad(format!(
                "resolution {} not one of {RESOLUTIONS:?}",
                self.resolution
            ));
        }
        if self.channels.len() != 3 || self.channels.contains(&0) {
            return bad(format!(
                "channel plan {:?} must list three positive widths",
                self.channels
            ));
        }
        if self.blocks_per_module == 0 {
            return bad("blocks_per_module must be >= 1".into());
        }
        if self.head_widths.is_empty() || self.head_widths.contains(&0) {
            return bad(format!(
                "head widths {:?} must be positive",
                self.head_widths
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if !(self.heatmap_scale.is_finite() && self.heatmap_scale > 0.0) {
            return bad(format!(
                "heatmap_scale {} must be positive",
                self.heatmap_scale
            ));
        }
        if self.hybrid_width == 0 {
            return bad("hybrid_width must be positive".into());
        }
        if self.variant.uses_coordinates()
            && (self.coord_input_width == 0
                || self.coord_widths.is_empty()
                || self.coord_widths.contains(&0)
                || self.coord_layers_per_module == 0)
        {
            return bad("coordinate branch widths must be positive".into());
        }
        if self.stage_shapes().last().is_none_or(|s| s[0] == 0) {
            return bad(format!(
                "resolution {} too small for the backbone",
                self.resolution
            ));
        }
        Ok(())
    }

    /// `[h, w, c]` after the stem and after each module.
    pub fn stage_shapes(&self) -> Vec<[usize; 3]> {
        stage_shapes(self.resolution, &self.channels)
    }

    pub fn final_map(&self) -> [usize; 3] {
        *self.stage_shapes().last().expect("stages")
    }

    pub fn feature_channels(&self) -> usize {
        match self.variant.aggregation() {
            Aggregation::Concat => self.hybrid_width,
            Aggregation::Additive | Aggregation::None => self.final_map()[2],
        }
    }

    pub fn coord_output_width(&self) -> usize {
        if self.variant.uses_coordinates() {
            *self.coord_widths.last().unwrap_or(&self.coord_input_width)
        } else {
            0
        }
    }

    /// Width of the regression head's input vector.
    pub fn head_input_width(&self) -> usize {
        let [h, w, _] = self.final_map();
        h * w * self.feature_channels() + self.coord_output_width() + POSE_FEATURES
    }
}

/// Shape propagation through stem (3x3 same conv + 2x2 pool) and the three
/// modules (same-padded residual blocks + 2x2 pool).
pub fn stage_shapes(resolution: usize, channels: &[usize]) -> Vec<[usize; 3]> {
    let mut side = pooled_size(resolution);
    let mut out = vec![[side, side, channels[0]]];
    for &c in channels {
        side = pooled_size(side);
        out.push([side, side, c]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_shapes_at_120() {
        let spec = ModelSpec::paper(Variant::Flame);
        assert_eq!(
            spec.stage_shapes(),
            vec![[60, 60, 64], [30, 30, 64], [15, 15, 128], [7, 7, 256]]
        );
        assert_eq!(spec.head_input_width(), 12546);
        assert_eq!(
            ModelSpec::new(Variant::Flame, Preset::Paper, 60).final_map(),
            [3, 3, 256]
        );
        assert_eq!(
            ModelSpec::new(Variant::Flame, Preset::Paper, 30).final_map(),
            [1, 1, 256]
        );
    }

    #[test]
    fn head_widths_per_variant() {
        assert_eq!(
            ModelSpec::paper(Variant::Baseline).head_input_width(),
            12546
        );
        assert_eq!(
            ModelSpec::paper(Variant::DenseFusion).head_input_width(),
            12546 + 256
        );
        assert_eq!(
            ModelSpec::paper(Variant::DenseFusion).coord_output_width(),
            256
        );
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.tag().parse::<Variant>().unwrap(), v);
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.tag()));
        }
        assert_eq!("f-ao".parse::<Variant>().unwrap(), Variant::AggregationOnly);
        assert!("F_X".parse::<Variant>().is_err());
    }

    #[test]
    fn validation() {
        assert!(ModelSpec::paper(Variant::Flame).validate().is_ok());
        let mut s = ModelSpec::tiny(Variant::Flame, 30);
        assert!(s.validate().is_ok());
        s.resolution = 64;
        assert!(s.validate().is_err());
        let mut s = ModelSpec::tiny(Variant::Flame, 60);
        s.dropout = 1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn structural_flags() {
        assert!(!Variant::Baseline.uses_heatmap());
        assert!(Variant::Flame.uses_transfer());
        assert!(!Variant::AggregationOnly.uses_transfer());
        assert_eq!(Variant::AdditiveFusion.aggregation(), Aggregation::Additive);
        assert!(!Variant::DenseFusion.uses_heatmap());
    }
}
