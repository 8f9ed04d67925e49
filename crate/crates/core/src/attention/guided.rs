//! Guided-attention loss (pushes alignments toward the diagonal) and the
//! diagonality diagnostic used to monitor that push during training.

use crate::error::Result;
use crate::nn::{Graph, Scalar, Value};

use super::types::{AlignmentMatrix, GuidedAttentionConfig};

/// The penalty mask W[t,n] = 1 − exp(−(n/N − t/T)² / (2σ²)), 0-based indices,
/// row-major T×N. Zero on the exact diagonal n/N = t/T, approaching 1 away
/// from it.
pub fn guided_attention_weights(t_dec: usize, n_enc: usize, sigma: f64) -> Vec<f64> {
    let mut w = vec![0.0; t_dec * n_enc];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for t in 0..t_dec {
        let tf = t as f64 / t_dec as f64;
        for n in 0..n_enc {
            let d = n as f64 / n_enc as f64 - tf;
            w[t * n_enc + n] = 1.0 - (-d * d * inv).exp();
        }
    }
    w
}

/// Mean of align ∘ W over all T×N cells (not only attended ones).
pub fn guided_attention_loss(
    align: &AlignmentMatrix,
    cfg: &GuidedAttentionConfig,
) -> Result<f64> {
    cfg.validate()?;
    let w = guided_attention_weights(align.rows, align.cols, cfg.sigma);
    let s: f64 = align.data.iter().zip(&w).map(|(a, b)| a * b).sum();
    Ok(s / (align.rows * align.cols) as f64)
}

/// Differentiable form of [`guided_attention_loss`] over a tape node holding
/// the T×N alignment. The penalty mask enters as a constant.
pub fn guided_attention_loss_node<S: Scalar>(
    g: &mut Graph<'_, S>,
    align: Value,
    cfg: &GuidedAttentionConfig,
) -> Result<Value> {
    cfg.validate()?;
    let (t, n) = g.tape.dims(align);
    let w: Vec<S> = guided_attention_weights(t, n, cfg.sigma)
        .into_iter()
        .map(S::cast_from)
        .collect();
    let wv = g.constant(t, n, w)?;
    let prod = g.tape.mul(align, wv)?;
    Ok(g.tape.mean_all(prod))
}

/// How much attention mass sits near the ideal diagonal: the mean over
/// decoder frames of the maximum weight within a band of half-width
/// max(1, ceil(0.1·N)) around n*(t) = round(t·(N−1)/max(1,T−1)).
pub fn diagonality(align: &AlignmentMatrix) -> f64 {
    let (t_dec, n_enc) = (align.rows, align.cols);
    let band = ((0.1 * n_enc as f64).ceil() as isize).max(1);
    let denom = (t_dec - 1).max(1) as f64;
    let mut acc = 0.0;
    for t in 0..t_dec {
        let ideal = (t as f64 * (n_enc as f64 - 1.0) / denom).round() as isize;
        let lo = (ideal - band).max(0) as usize;
        let hi = ((ideal + band) as usize).min(n_enc - 1);
        let m = align.row(t)[lo..=hi].iter().copied().fold(0.0, f64::max);
        acc += m;
    }
    acc / t_dec as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, ParamStore, Tensor};

    fn identity_align(n: usize) -> AlignmentMatrix {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            d[i * n + i] = 1.0;
        }
        AlignmentMatrix::new(n, n, d).unwrap()
    }

    #[test]
    fn perfect_diagonal_has_zero_loss() {
        // align[t,t] = 1 puts all mass on cells where n/N = t/T, so W = 0
        let loss =
            guided_attention_loss(&identity_align(5), &GuidedAttentionConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn anti_diagonal_two_by_two_matches_formula() {
        // cells (0,1) and (1,0) both sit at |n/N − t/T| = 1/2, so
        // w = 1 − exp(−0.25 / (2·0.04)) = 1 − exp(−3.125), loss = 2w/4
        let a = AlignmentMatrix::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let cfg = GuidedAttentionConfig { sigma: 0.2, weight: 1.0 };
        let loss = guided_attention_loss(&a, &cfg).unwrap();
        let w = 1.0 - (-0.25f64 / 0.08).exp();
        assert!((loss - w / 2.0).abs() < 1e-15);
        assert!((loss - 0.47803).abs() < 1e-5, "loss {loss}");
    }

    #[test]
    fn loss_bounded_for_row_stochastic_alignments() {
        // W ∈ [0,1) and each row carries unit mass, so 0 ≤ loss < 1
        let mut seed = 99u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for (t, n) in [(1, 1), (3, 7), (10, 4)] {
            let mut data = vec![0.0; t * n];
            for r in 0..t {
                let row = &mut data[r * n..(r + 1) * n];
                for v in row.iter_mut() {
                    *v = next() + 1e-3;
                }
                let s: f64 = row.iter().sum();
                for v in row.iter_mut() {
                    *v /= s;
                }
            }
            let a = AlignmentMatrix::new(t, n, data).unwrap();
            let loss = guided_attention_loss(&a, &GuidedAttentionConfig::default()).unwrap();
            assert!((0.0..1.0).contains(&loss), "loss {loss} for {t}x{n}");
        }
    }

    #[test]
    fn node_form_matches_pure_form() {
        let a = AlignmentMatrix::new(2, 3, vec![0.2, 0.3, 0.5, 0.0, 0.9, 0.1]).unwrap();
        let cfg = GuidedAttentionConfig::default();
        let pure = guided_attention_loss(&a, &cfg).unwrap();
        let p = ParamStore::<f64>::new();
        let mut g = Graph::new(&p, 0, false);
        let v = g.constant(2, 3, a.data.clone()).unwrap();
        let node = guided_attention_loss_node(&mut g, v, &cfg).unwrap();
        assert!((g.tape.item(node).unwrap() - pure).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut p = ParamStore::new();
        p.insert(
            "align",
            Tensor::new(vec![3, 5], (0..15).map(|i| 0.1 + 0.05 * i as f64).collect()).unwrap(),
        );
        let cfg = GuidedAttentionConfig::default();
        let rep = finite_diff_check(&p, 1e-5, |g| {
            let a = g.p("align")?;
            guided_attention_loss_node(g, a, &cfg)
        })
        .unwrap();
        assert!(rep.global_max_rel < 1e-7, "{rep:?}");
        // and through a softmax, as it is used in training
        let rep = finite_diff_check(&p, 1e-5, |g| {
            let a = g.p("align")?;
            let sm = g.tape.softmax_rows(a, None)?;
            guided_attention_loss_node(g, sm, &cfg)
        })
        .unwrap();
        assert!(rep.global_max_rel < 1e-4, "{rep:?}");
    }

    #[test]
    fn diagonality_identity_is_one() {
        assert_eq!(diagonality(&identity_align(6)), 1.0);
    }

    #[test]
    fn diagonality_uniform_is_one_over_n() {
        let n = 8;
        let a = AlignmentMatrix::new(3, n, vec![1.0 / n as f64; 3 * n]).unwrap();
        assert!((diagonality(&a) - 1.0 / n as f64).abs() < 1e-15);
    }

    #[test]
    fn diagonality_staircase_hand_case() {
        // T=4, N=8: band = max(1, ceil(0.8)) = 1, n*(t) = round(7t/3)
        //   t=0: n*=0, window [0,1], row max 0.6
        //   t=1: n*=2, window [1,3], row max 0.5
        //   t=2: n*=5, window [4,6], row max 0.5
        //   t=3: n*=7, window [6,7], row max 0.7
        // mean = (0.6 + 0.5 + 0.5 + 0.7)/4 = 0.575
        #[rustfmt::skip]
        let data = vec![
            0.6, 0.3, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.2, 0.5, 0.3, 0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.3, 0.5, 0.2, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.2, 0.7,
        ];
        let a = AlignmentMatrix::new(4, 8, data).unwrap();
        assert!((diagonality(&a) - 0.575).abs() < 1e-15);
    }

    #[test]
    fn diagonality_single_frame() {
        let a = AlignmentMatrix::new(1, 4, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        // T=1: n*(0) = 0, window [0,1], max = 0.4
        assert!((diagonality(&a) - 0.4).abs() < 1e-15);
    }
}
