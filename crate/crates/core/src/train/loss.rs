//! Symmetric contrastive losses over in-batch similarity matrices.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::{dot, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    M2d,
    D2m,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::M2d => "m2d",
            Direction::D2m => "d2m",
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "m2d" => Ok(Direction::M2d),
            "d2m" => Ok(Direction::D2m),
            other => Err(Error::invalid(format!("unknown direction '{other}'"))),
        }
    }
}

/// Query-by-gallery cosine similarities with identifier maps.
#[derive(Debug, Clone)]
pub struct SimilarityMatrix {
    pub values: Mat,
    pub query_ids: Vec<String>,
    pub gallery_ids: Vec<String>,
    pub direction: Direction,
}

/// values[i][j] = dot(queries[i], gallery[j]); unit-norm inputs make these
/// cosine similarities.
pub fn similarity_matrix(
    queries: &[Vec<f64>],
    gallery: &[Vec<f64>],
    query_ids: Vec<String>,
    gallery_ids: Vec<String>,
    direction: Direction,
) -> Result<SimilarityMatrix> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(Error::invalid("similarity matrix needs nonempty sides"));
    }
    let dim = queries[0].len();
    for (label, side) in [("query", queries), ("gallery", gallery)] {
        if let Some(v) = side.iter().find(|v| v.len() != dim) {
            return Err(Error::shape_in(
                format!("{label} embeddings"),
                format!("dim {dim}"),
                format!("dim {}", v.len()),
            ));
        }
    }
    if query_ids.len() != queries.len() || gallery_ids.len() != gallery.len() {
        return Err(Error::invalid("id lists must match embedding counts"));
    }
    let values = Mat::from_fn(queries.len(), gallery.len(), |i, j| {
        dot(&queries[i], &gallery[j])
    });
    Ok(SimilarityMatrix {
        values,
        query_ids,
        gallery_ids,
        direction,
    })
}

/// One directional InfoNCE term with its exact gradients.
#[derive(Debug)]
pub struct InfoNce {
    pub loss: f64,
    /// d loss / d sim, same shape as the input.
    pub d_sim: Mat,
    /// d loss / d lambda (the raw scale, not its log).
    pub d_lambda: f64,
}

/// loss = -(1/B) sum_i log( exp(l*sim_ii) / sum_j exp(l*sim_ij) ), computed
/// with the max-shift trick.
pub fn info_nce(sim: &Mat, lambda: f64) -> Result<InfoNce> {
    let b = sim.rows();
    if b == 0 || sim.cols() != b {
        return Err(Error::shape_in(
            "info_nce",
            "square similarity matrix",
            format!("{}x{}", sim.rows(), sim.cols()),
        ));
    }
    let inv_b = 1.0 / b as f64;
    let mut loss = 0.0;
    let mut d_sim = Mat::zeros(b, b);
    let mut d_lambda = 0.0;
    for i in 0..b {
        let row = sim.row(i);
        let max_logit = row
            .iter()
            .map(|&s| lambda * s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &s in row {
            z += (lambda * s - max_logit).exp();
        }
        let lse = z.ln() + max_logit;
        loss += (lse - lambda * row[i]) * inv_b;

        let mut expected_sim = 0.0;
        for j in 0..b {
            let p = (lambda * row[j] - max_logit).exp() / z;
            let indicator = f64::from(j == i);
            d_sim.set(i, j, lambda * inv_b * (p - indicator));
            expected_sim += p * row[j];
        }
        d_lambda += inv_b * (expected_sim - row[i]);
    }
    Ok(InfoNce {
        loss,
        d_sim,
        d_lambda,
    })
}

/// Both directions over both streams, with gradients mapped back to the
/// given (music-by-dance) orientation.
#[derive(Debug)]
pub struct TotalLoss {
    pub total: f64,
    pub loss_e_m2d: f64,
    pub loss_e_d2m: f64,
    pub loss_g_m2d: f64,
    pub loss_g_d2m: f64,
    pub d_m_e: Mat,
    pub d_m_g: Option<Mat>,
    pub d_lambda: f64,
}

/// total = [L_e(m_e) + beta * L_g(m_g)] + the same computed on the
/// transposed matrices. `m_e` and `m_g` are music-by-dance in-batch
/// matrices with positives on the diagonal.
pub fn total_loss(m_e: &Mat, m_g: Option<&Mat>, lambda: f64, beta: f64) -> Result<TotalLoss> {
    if beta < 0.0 {
        return Err(Error::invalid(format!("beta must be >= 0, got {beta}")));
    }
    if let Some(m_g) = m_g {
        if m_g.shape() != m_e.shape() {
            return Err(Error::shape_in(
                "total_loss",
                format!("{:?}", m_e.shape()),
                format!("{:?}", m_g.shape()),
            ));
        }
    }

    let e_m2d = info_nce(m_e, lambda)?;
    let e_d2m = info_nce(&m_e.transpose(), lambda)?;
    let mut total = e_m2d.loss + e_d2m.loss;
    let d_m_e = e_m2d.d_sim.add(&e_d2m.d_sim.transpose())?;
    let mut d_lambda = e_m2d.d_lambda + e_d2m.d_lambda;

    let mut loss_g_m2d = 0.0;
    let mut loss_g_d2m = 0.0;
    let d_m_g = if let Some(m_g) = m_g {
        let g_m2d = info_nce(m_g, lambda)?;
        let g_d2m = info_nce(&m_g.transpose(), lambda)?;
        loss_g_m2d = g_m2d.loss;
        loss_g_d2m = g_d2m.loss;
        total += beta * (g_m2d.loss + g_d2m.loss);
        d_lambda += beta * (g_m2d.d_lambda + g_d2m.d_lambda);
        Some(
            g_m2d
                .d_sim
                .add(&g_d2m.d_sim.transpose())?
                .scale(beta),
        )
    } else {
        None
    };

    Ok(TotalLoss {
        total,
        loss_e_m2d: e_m2d.loss,
        loss_e_d2m: e_d2m.loss,
        loss_g_m2d,
        loss_g_d2m,
        d_m_e,
        d_m_g,
        d_lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_matrix_gives_ln_b_for_any_scale() {
        for b in [2usize, 8, 32] {
            for lambda in [1.0, 14.3, 100.0] {
                let sim = Mat::from_fn(b, b, |_, _| 0.4242);
                let out = info_nce(&sim, lambda).unwrap();
                assert!(
                    (out.loss - (b as f64).ln()).abs() < 1e-9,
                    "B={b} lambda={lambda}: {}",
                    out.loss
                );
            }
        }
    }

    #[test]
    fn identity_similarity_matches_closed_form() {
        let sim = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = info_nce(&sim, 1.0).unwrap();
        let expected = (1.0 + (-1.0f64).exp()).ln();
        assert!((out.loss - expected).abs() < 1e-12, "{}", out.loss);
        assert!((out.loss - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn saturated_diagonal_drives_loss_to_zero() {
        let sim = Mat::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let out = info_nce(&sim, 40.0).unwrap();
        assert!(out.loss < 1e-9, "{}", out.loss);
    }

    #[test]
    fn non_square_is_rejected() {
        assert!(info_nce(&Mat::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn row_shift_invariance() {
        let base = Mat::from_fn(4, 4, |r, c| ((r * 4 + c) as f64 * 0.7).sin());
        let out1 = info_nce(&base, 3.0).unwrap();
        let mut shifted = base.clone();
        for v in shifted.row_mut(2) {
            *v += 0.93;
        }
        let out2 = info_nce(&shifted, 3.0).unwrap();
        assert!((out1.loss - out2.loss).abs() < 1e-12);
    }

    #[test]
    fn info_nce_gradients_match_central_differences() {
        let sim = Mat::from_fn(3, 3, |r, c| ((r * 3 + c) as f64 * 0.9).sin() * 0.8);
        let lambda = 2.5;
        let out = info_nce(&sim, lambda).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            for j in 0..3 {
                let mut plus = sim.clone();
                plus.set(i, j, sim.get(i, j) + h);
                let mut minus = sim.clone();
                minus.set(i, j, sim.get(i, j) - h);
                let numeric = (info_nce(&plus, lambda).unwrap().loss
                    - info_nce(&minus, lambda).unwrap().loss)
                    / (2.0 * h);
                assert!(
                    (numeric - out.d_sim.get(i, j)).abs() < 1e-8,
                    "entry ({i},{j}): numeric {numeric} analytic {}",
                    out.d_sim.get(i, j)
                );
            }
        }
        let numeric_lambda = (info_nce(&sim, lambda + h).unwrap().loss
            - info_nce(&sim, lambda - h).unwrap().loss)
            / (2.0 * h);
        assert!((numeric_lambda - out.d_lambda).abs() < 1e-8);
    }

    #[test]
    fn total_loss_beta_zero_and_linearity() {
        let m_e = Mat::from_fn(3, 3, |r, c| ((r + 2 * c) as f64 * 0.31).cos());
        let m_g = Mat::from_fn(3, 3, |r, c| ((2 * r + c) as f64 * 0.17).sin());
        let lambda = 5.0;

        let only_e = info_nce(&m_e, lambda).unwrap().loss
            + info_nce(&m_e.transpose(), lambda).unwrap().loss;
        let t0 = total_loss(&m_e, Some(&m_g), lambda, 0.0).unwrap();
        assert!((t0.total - only_e).abs() < 1e-12);

        let t1 = total_loss(&m_e, Some(&m_e), lambda, 1.0).unwrap();
        assert!((t1.total - 2.0 * only_e).abs() < 1e-12);
    }

    #[test]
    fn total_loss_is_modality_symmetric() {
        // Swapping modalities transposes both matrices; the total is equal.
        let m_e = Mat::from_fn(4, 4, |r, c| ((r * 4 + c) as f64 * 0.23).sin());
        let m_g = Mat::from_fn(4, 4, |r, c| ((r * 3 + c) as f64 * 0.41).cos());
        let a = total_loss(&m_e, Some(&m_g), 7.0, 0.4).unwrap();
        let b = total_loss(&m_e.transpose(), Some(&m_g.transpose()), 7.0, 0.4).unwrap();
        assert!((a.total - b.total).abs() < 1e-12);
    }

    #[test]
    fn similarity_matrix_of_orthonormal_basis_is_identity() {
        let basis: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..3).map(|j| f64::from(i == j)).collect())
            .collect();
        let ids: Vec<String> = (0..3).map(|i| format!("v{i}")).collect();
        let m = similarity_matrix(&basis, &basis, ids.clone(), ids, Direction::M2d).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.values.get(i, j), f64::from(i == j));
            }
        }
    }

    #[test]
    fn antiparallel_vectors_give_minus_one() {
        let a = vec![vec![0.6, 0.8]];
        let b = vec![vec![-0.6, -0.8]];
        let m = similarity_matrix(&a, &b, vec!["q".into()], vec!["g".into()], Direction::D2m)
            .unwrap();
        assert!((m.values.get(0, 0) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_unit_vectors_stay_in_bounds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        let mk = |rng: &mut rand_chacha::ChaCha20Rng| -> Vec<Vec<f64>> {
            (0..6)
                .map(|_| {
                    let v: Vec<f64> = (0..16).map(|_| rng.gen::<f64>() - 0.5).collect();
                    let n = crate::mat::norm(&v);
                    v.into_iter().map(|x| x / n).collect()
                })
                .collect()
        };
        let q = mk(&mut rng);
        let g = mk(&mut rng);
        let ids: Vec<String> = (0..6).map(|i| i.to_string()).collect();
        let m = similarity_matrix(&q, &g, ids.clone(), ids, Direction::M2d).unwrap();
        assert!(m
            .values
            .data()
            .iter()
            .all(|&v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(&v)));
    }
}
