//! Declarative dataset descriptions and the canonical presets.

use serde::{Deserialize, Serialize};

use super::block::BlockSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub blocks: Vec<BlockSpec>,
    pub rotation_seed: Option<u64>,
    /// Pre-rotation coordinates forming the simplest feature `S`.
    pub simple: Vec<usize>,
}

/// Knobs shared by the presets; `Default` gives the standard values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetOptions {
    pub d: usize,
    pub gamma: f64,
    pub width_b: f64,
    pub noise_p: f64,
    pub rotation_seed: Option<u64>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            d: 50,
            gamma: 0.1,
            width_b: 1.0,
            noise_p: 0.1,
            rotation_seed: None,
        }
    }
}

/// Named dataset families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Linear coordinate followed by `d-1` k-slab coordinates.
    Lms(u32),
    /// Noisy linear coordinate followed by `d-1` k-slab coordinates.
    NoisyLms(u32),
    /// One 5-slab coordinate followed by `d-1` 7-slab coordinates.
    Ms57,
    /// `d` independent k-slab coordinates (no distinguished simple feature).
    Ms(u32),
    /// Noisy 5-slab coordinate followed by `d-1` 7-slab coordinates.
    NoisyMs57,
    /// Linear, 3-slab and `d-2` Gaussian coordinates.
    Lsn,
    /// `d/2` narrow-margin 5-slabs followed by `d/2` wider-margin 7-slabs.
    AdvMs57,
}

impl Preset {
    /// Parses names such as `lms-5`, `^lms-7`, `ms-(5,7)`, `ms-5`, `lsn`, `advms-(5,7)`.
    pub fn parse(name: &str) -> Result<Self> {
        let s: String = name
            .to_ascii_lowercase()
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        let k_of = |rest: &str| -> Result<u32> {
            rest.parse::<u32>()
                .map_err(|_| Error::spec(format!("unknown dataset preset `{name}`")))
        };
        match s.as_str() {
            "lsn" => Ok(Preset::Lsn),
            "ms-(5,7)" | "ms-5-7" | "ms-57" | "ms57" => Ok(Preset::Ms57),
            "^ms-(5,7)" | "^ms-57" | "noisy-ms-5-7" => Ok(Preset::NoisyMs57),
            "advms-(5,7)" | "advms-5-7" | "advms-57" | "advms" => Ok(Preset::AdvMs57),
            _ => {
                if let Some(rest) = s.strip_prefix("^lms-").or(s.strip_prefix("noisy-lms-")) {
                    Ok(Preset::NoisyLms(k_of(rest)?))
                } else if let Some(rest) = s.strip_prefix("lms-") {
                    Ok(Preset::Lms(k_of(rest)?))
                } else if let Some(rest) = s.strip_prefix("ms-") {
                    Ok(Preset::Ms(k_of(rest)?))
                } else {
                    Err(Error::spec(format!("unknown dataset preset `{name}`")))
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Preset::Lms(k) => format!("LMS-{k}"),
            Preset::NoisyLms(k) => format!("^LMS-{k}"),
            Preset::Ms57 => "MS-(5,7)".into(),
            Preset::Ms(k) => format!("MS-{k}"),
            Preset::NoisyMs57 => "^MS-(5,7)".into(),
            Preset::Lsn => "LSN".into(),
            Preset::AdvMs57 => "AdvMS-(5,7)".into(),
        }
    }

    pub fn build(&self, opts: &PresetOptions) -> Result<DatasetSpec> {
        let d = opts.d;
        let (g, b, p) = (opts.gamma, opts.width_b, opts.noise_p);
        let min_d = match self {
            Preset::Ms(_) => 1,
            Preset::Lsn => 3,
            _ => 2,
        };
        if d < min_d {
            return Err(Error::spec(format!(
                "{} needs dimension at least {min_d}, got {d}",
                self.label()
            )));
        }
        let rest = |first: BlockSpec, other: BlockSpec| {
            std::iter::once(first)
                .chain(std::iter::repeat_n(other, d - 1))
                .collect::<Vec<_>>()
        };
        let (blocks, simple) = match *self {
            Preset::Lms(k) => (rest(BlockSpec::linear(g, b), BlockSpec::slab(g, b, k)), vec![0]),
            Preset::NoisyLms(k) => (
                rest(BlockSpec::noisy_linear(g, b, p), BlockSpec::slab(g, b, k)),
                vec![0],
            ),
            Preset::Ms57 => (rest(BlockSpec::slab(g, b, 5), BlockSpec::slab(g, b, 7)), vec![0]),
            Preset::NoisyMs57 => (
                rest(BlockSpec::noisy_slab(g, b, 5, p), BlockSpec::slab(g, b, 7)),
                vec![0],
            ),
            Preset::Ms(k) => (vec![BlockSpec::slab(g, b, k); d], vec![0]),
            Preset::Lsn => {
                let mut blocks = vec![BlockSpec::singleton_linear(), BlockSpec::singleton_slab3()];
                blocks.extend(std::iter::repeat_n(BlockSpec::gaussian(), d - 2));
                (blocks, vec![0])
            }
            Preset::AdvMs57 => {
                if d % 2 != 0 {
                    return Err(Error::spec(format!(
                        "AdvMS-(5,7) needs an even dimension, got {d}"
                    )));
                }
                let h = d / 2;
                let mut blocks = vec![BlockSpec::slab(0.05, b, 5); h];
                blocks.extend(std::iter::repeat_n(BlockSpec::slab(0.15, b, 7), h));
                (blocks, (0..h).collect())
            }
        };
        let spec = DatasetSpec {
            name: self.label(),
            blocks,
            rotation_seed: opts.rotation_seed,
            simple,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl DatasetSpec {
    pub fn preset(name: &str, opts: &PresetOptions) -> Result<Self> {
        Preset::parse(name)?.build(opts)
    }

    pub fn dim(&self) -> usize {
        self.blocks.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::spec("dataset needs at least one block"));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            b.validate()
                .map_err(|e| Error::spec(format!("block {i}: {e}")))?;
        }
        if let Some(&i) = self.simple.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::spec(format!(
                "simple coordinate {i} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Copy with the given pre-rotation coordinates dropped.
    pub fn without(&self, coords: &[usize]) -> Result<Self> {
        let blocks: Vec<BlockSpec> = self
            .blocks
            .iter()
            .enumerate()
            .filter(|(i, _)| !coords.contains(i))
            .map(|(_, b)| *b)
            .collect();
        let mut simple = Vec::new();
        for &s in &self.simple {
            if !coords.contains(&s) {
                simple.push(s - coords.iter().filter(|&&c| c < s).count());
            }
        }
        let spec = DatasetSpec {
            name: format!("{} without {:?}", self.name, coords),
            blocks,
            rotation_seed: self.rotation_seed,
            simple,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_rotation(mut self, seed: Option<u64>) -> Self {
        self.rotation_seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::BlockKind;

    #[test]
    fn parses_names() {
        assert_eq!(Preset::parse("lms-5").unwrap(), Preset::Lms(5));
        assert_eq!(Preset::parse("^LMS-7").unwrap(), Preset::NoisyLms(7));
        assert_eq!(Preset::parse("MS-(5,7)").unwrap(), Preset::Ms57);
        assert_eq!(Preset::parse("ms-5").unwrap(), Preset::Ms(5));
        assert_eq!(Preset::parse("AdvMS-(5,7)").unwrap(), Preset::AdvMs57);
        assert_eq!(Preset::parse("ms-57").unwrap(), Preset::Ms57);
        assert_eq!(Preset::parse("^ms-57").unwrap(), Preset::NoisyMs57);
        assert_eq!(Preset::parse("advms-57").unwrap(), Preset::AdvMs57);
        assert!(Preset::parse("mnist").is_err());
        assert!(Preset::parse("lms-x").is_err());
    }

    #[test]
    fn advms_layout() {
        let spec = DatasetSpec::preset(
            "advms-(5,7)",
            &PresetOptions {
                d: 20,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(spec.dim(), 20);
        assert!(spec.blocks[..10]
            .iter()
            .all(|b| b.slabs_k == 5 && b.gamma == 0.05));
        assert!(spec.blocks[10..]
            .iter()
            .all(|b| b.slabs_k == 7 && b.gamma == 0.15));
        assert_eq!(spec.simple, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn lms_layout_and_removal() {
        let spec = DatasetSpec::preset("lms-5", &PresetOptions::default()).unwrap();
        assert_eq!(spec.blocks[0].kind, BlockKind::Linear);
        assert!(spec.blocks[1..].iter().all(|b| b.slabs_k == 5));
        let reduced = spec.without(&[0]).unwrap();
        assert_eq!(reduced.dim(), 49);
        assert!(reduced.simple.is_empty());
        assert!(reduced.blocks.iter().all(|b| b.is_slab()));
    }
}
