use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Decoder-frames × encoder-positions attention weights. Rows are probability
/// distributions: nonnegative, each summing to 1 within 1e-5.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl AlignmentMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(
                "alignment must have at least one row and one column".into(),
            ));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(
                "AlignmentMatrix",
                format!("{} values for {}x{}", data.len(), rows, cols),
            ));
        }
        for t in 0..rows {
            let row = &data[t * cols..(t + 1) * cols];
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "alignment row {t} has negative or non-finite weights"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::InvalidArgument(format!(
                    "alignment row {t} sums to {s}, want 1"
                )));
            }
        }
        Ok(AlignmentMatrix { rows, cols, data })
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }
}

/// Export an alignment as a container holding one array named `align`.
pub fn write_alignment(path: &std::path::Path, align: &AlignmentMatrix) -> Result<()> {
    use crate::nn::{write_container, ArrayData, Container};
    let c = Container {
        arrays: vec![ArrayData {
            name: "align".into(),
            shape: vec![align.rows, align.cols],
            data: align.data.iter().map(|&v| v as f32).collect(),
        }],
        config: None,
    };
    write_container(path, &c)
}

/// Read back what [`write_alignment`] wrote; row-stochasticity is revalidated.
pub fn read_alignment(path: &std::path::Path) -> Result<AlignmentMatrix> {
    let c = crate::nn::read_container(path)?;
    let a = c.array("align")?;
    if a.shape.len() != 2 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!("align array has shape {:?}, want 2-D", a.shape),
        });
    }
    AlignmentMatrix::new(
        a.shape[0],
        a.shape[1],
        a.data.iter().map(|&v| v as f64).collect(),
    )
}

/// Guided-attention settings: `sigma` is the diagonal bandwidth g, `weight`
/// the loss weight λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidedAttentionConfig {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_weight")]
    pub weight: f64,
}

fn default_sigma() -> f64 {
    0.2
}

fn default_weight() -> f64 {
    1.0
}

impl Default for GuidedAttentionConfig {
    fn default() -> Self {
        Self { sigma: default_sigma(), weight: default_weight() }
    }
}

impl GuidedAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::Config(format!(
                "guided attention sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !self.weight.is_finite() || self.weight < 0.0 {
            return Err(Error::Config(format!(
                "guided attention weight must be nonnegative, got {}",
                self.weight
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_row_stochastic() {
        let a = AlignmentMatrix::new(2, 3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.row(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_rows() {
        // wrong element count
        assert!(AlignmentMatrix::new(2, 2, vec![1.0, 0.0, 1.0]).is_err());
        // negative weight
        assert!(AlignmentMatrix::new(1, 2, vec![1.5, -0.5]).is_err());
        // row sum off by more than 1e-5
        assert!(AlignmentMatrix::new(1, 2, vec![0.6, 0.5]).is_err());
        // empty
        assert!(AlignmentMatrix::new(0, 2, vec![]).is_err());
    }

    #[test]
    fn alignment_container_round_trip() {
        let dir = std::env::temp_dir().join(format!("canta-align-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.align");
        let a = AlignmentMatrix::new(2, 2, vec![0.25, 0.75, 1.0, 0.0]).unwrap();
        write_alignment(&path, &a).unwrap();
        let back = read_alignment(&path).unwrap();
        assert_eq!((back.rows, back.cols), (2, 2));
        // values survive the f32 narrowing exactly (all dyadic here)
        assert_eq!(back.data, a.data);
    }

    #[test]
    fn config_validation_and_defaults() {
        let cfg = GuidedAttentionConfig::default();
        assert_eq!((cfg.sigma, cfg.weight), (0.2, 1.0));
        cfg.validate().unwrap();
        assert!(GuidedAttentionConfig { sigma: 0.0, weight: 1.0 }.validate().is_err());
        assert!(GuidedAttentionConfig { sigma: 0.2, weight: -1.0 }.validate().is_err());
        // serde fills missing fields with the defaults
        let parsed: GuidedAttentionConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, cfg);
    }
}
