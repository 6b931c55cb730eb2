//! Rank-recursive contrastive loss: forward value, analytic gradient with
//! respect to the embeddings, and the plain supervised-contrastive special
//! case (depth 1).
//!
//! For anchor q and rank i with temperature tau_i:
//!
//! ```text
//! l_i = -log  sum_{p in P_i} exp(h(q,p)/tau_i)
//!            ------------------------------------------------------------
//!            sum_{p in U_{j>=i} P_j} exp(h(q,p)/tau_i) + sum_{n in N} exp(h(q,n)/tau_i)
//! ```
//!
//! computed recursively: rank i treats every remaining ranked class as part
//! of the denominator, then P_i drops out before rank i+1. Terms with empty
//! P_i are skipped and counted. The total is the mean over anchors that
//! contribute at least one term.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkernel::{dot, Matrix};
use crate::ranking::{partition_batch, RankingSpec, TemperatureSchedule};

/// Batch of L2-normalized embedding rows. Construction enforces unit norm
/// to 1e-9 so cosine similarity reduces to a dot product.
#[derive(Clone, Debug)]
pub struct EmbeddingMatrix {
    z: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(z: Matrix) -> Result<Self> {
        for i in 0..z.rows() {
            let norm = z.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "embedding row {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(EmbeddingMatrix { z })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.z.rows()
    }

    pub fn dim(&self) -> usize {
        self.z.cols()
    }
}

/// Loss value with per-rank and per-anchor attribution.
///
/// `per_rank` entries are normalized by the number of contributing anchors,
/// so `total == per_rank.iter().sum()`. `per_anchor` holds each anchor's raw
/// (unnormalized) sum of rank terms.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_rank: Vec<f64>,
    pub per_anchor: Vec<f64>,
    #[serde(rename = "skipped")]
    pub skipped_terms: usize,
}

/// Cosine similarity of two unit vectors: dot product clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b).clamp(-1.0, 1.0)
}

/// Pairwise similarity matrix S = Z Z^T.
pub fn similarity_matrix(z: &EmbeddingMatrix) -> Matrix {
    z.matrix()
        .matmul(&z.matrix().transpose())
        .expect("square product")
}

fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var("RANKEDCL_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| {
                std::thread::available_parallelism().map_or(1, |n| n.get())
            });
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool")
    })
}

/// log(sum exp(x/tau)) over the given indices of `sims`, max-shifted.
/// Returns None on an empty index set.
fn lse(sims: &[f64], idx: impl Iterator<Item = usize> + Clone, tau: f64) -> Option<f64> {
    let mut max = f64::NEG_INFINITY;
    let mut any = false;
    for i in idx.clone() {
        any = true;
        max = max.max(sims[i] / tau);
    }
    if !any {
        return None;
    }
    let s: f64 = idx.map(|i| ((sims[i] / tau) - max).exp()).sum();
    Some(max + s.ln())
}

struct AnchorTerms {
    /// l_i per rank; None where P_i was empty.
    per_rank: Vec<Option<f64>>,
    /// dL/dS coefficients for this anchor row (unnormalized).
    coeffs: Vec<f64>,
}

/// One anchor's loss terms and similarity-gradient coefficients.
fn anchor_terms(
    sims_row: &[f64],
    anchor: usize,
    labels: &[String],
    spec: &RankingSpec,
    taus: &[f64],
    want_grad: bool,
) -> Result<AnchorTerms> {
    let part = partition_batch(labels, anchor, spec)?;
    let r = spec.depth();
    let n = labels.len();
    let mut coeffs = vec![0.0; if want_grad { n } else { 0 }];
    let mut per_rank = Vec::with_capacity(r);

    // denominator set at rank i: U_{j>=i} P_j plus N; positives of ranks
    // below i have dropped out and never re-enter
    let mut remaining: Vec<usize> = part
        .positives
        .iter()
        .flatten()
        .copied()
        .chain(part.negatives.iter().copied())
        .collect();

    for i in 0..r {
        let pos = &part.positives[i];
        if pos.is_empty() {
            per_rank.push(None);
            continue;
        }
        let tau = taus[i];
        let num = lse(sims_row, pos.iter().copied(), tau).expect("non-empty P_i");
        let den = lse(sims_row, remaining.iter().copied(), tau).expect("superset of P_i");
        per_rank.push(Some(den - num));

        if want_grad {
            // d l_i / d s_k = (softmax_den(k) - [k in P_i] softmax_num(k)) / tau
            for &k in &remaining {
                coeffs[k] += ((sims_row[k] / tau - den).exp()) / tau;
            }
            for &p in pos {
                coeffs[p] -= ((sims_row[p] / tau - num).exp()) / tau;
            }
        }
        remaining.retain(|k| !pos.contains(k));
    }
    Ok(AnchorTerms { per_rank, coeffs })
}

fn compute(
    z: &Matrix,
    labels: &[String],
    spec: &RankingSpec,
    taus: &TemperatureSchedule,
    want_grad: bool,
) -> Result<(LossBreakdown, Option<Matrix>)> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::Validation(format!("batch size {n} < 2")));
    }
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), n)));
    }
    if taus.len() != spec.depth() {
        return Err(Error::Validation(format!(
            "{} temperatures for ranking depth {}",
            taus.len(),
            spec.depth()
        )));
    }
    let r = spec.depth();
    let sims = z.matmul(&z.transpose())?;

    let rows: Vec<Result<AnchorTerms>> = thread_pool().install(|| {
        (0..n)
            .into_par_iter()
            .map(|q| anchor_terms(sims.row(q), q, labels, spec, taus.taus(), want_grad))
            .collect()
    });

    let mut per_rank = vec![0.0; r];
    let mut per_anchor = vec![0.0; n];
    let mut skipped = 0usize;
    let mut n_effective = 0usize;
    let mut coeff_rows: Vec<Vec<f64>> = Vec::new();
    for (q, row) in rows.into_iter().enumerate() {
        let terms = row?;
        let mut contributed = false;
        for (i, t) in terms.per_rank.iter().enumerate() {
            match t {
                Some(l) => {
                    per_rank[i] += l;
                    per_anchor[q] += l;
                    contributed = true;
                }
                None => skipped += 1,
            }
        }
        if contributed {
            n_effective += 1;
        }
        if want_grad {
            coeff_rows.push(terms.coeffs);
        }
    }
    if n_effective == 0 {
        return Err(Error::Degenerate(
            "no anchor has any positive in any rank".into(),
        ));
    }
    let scale = 1.0 / n_effective as f64;
    for v in per_rank.iter_mut() {
        *v *= scale;
    }
    let total = per_rank.iter().sum();
    let breakdown = LossBreakdown { total, per_rank, per_anchor, skipped_terms: skipped };

    let grad = if want_grad {
        // L = scale * sum coeffs_qk * S_qk with S = Z Z^T, so
        // dL/dZ = scale * (G + G^T) Z
        let mut g = Matrix::zeros(n, n);
        for (q, row) in coeff_rows.iter().enumerate() {
            for (k, &c) in row.iter().enumerate() {
                g.set(q, k, g.get(q, k) + c);
                g.set(k, q, g.get(k, q) + c);
            }
        }
        Some(g.matmul(z)?.scale(scale))
    } else {
        None
    };
    Ok((breakdown, grad))
}

/// Ranked loss on validated unit-norm embeddings.
pub fn ranked_loss(
    z: &EmbeddingMatrix,
    labels: &[String],
    spec: &RankingSpec,
    taus: &TemperatureSchedule,
) -> Result<LossBreakdown> {
    ranked_loss_raw(z.matrix(), labels, spec, taus)
}

/// Ranked loss on a raw matrix, using dot products as similarities without
/// enforcing unit norm. This keeps the loss a smooth function of every
/// entry, which finite-difference checks rely on.
pub fn ranked_loss_raw(
    z: &Matrix,
    labels: &[String],
    spec: &RankingSpec,
    taus: &TemperatureSchedule,
) -> Result<LossBreakdown> {
    compute(z, labels, spec, taus, false).map(|(b, _)| b)
}

/// Analytic dL/dZ.
pub fn ranked_loss_grad(
    z: &EmbeddingMatrix,
    labels: &[String],
    spec: &RankingSpec,
    taus: &TemperatureSchedule,
) -> Result<Matrix> {
    ranked_loss_grad_raw(z.matrix(), labels, spec, taus)
}

/// Analytic dL/dZ on a raw matrix (see [`ranked_loss_raw`]).
pub fn ranked_loss_grad_raw(
    z: &Matrix,
    labels: &[String],
    spec: &RankingSpec,
    taus: &TemperatureSchedule,
) -> Result<Matrix> {
    compute(z, labels, spec, taus, true).map(|(_, g)| g.expect("grad requested"))
}

/// Supervised contrastive loss: the depth-1 special case.
pub fn supcon_loss(z: &EmbeddingMatrix, labels: &[String], tau: f64) -> Result<LossBreakdown> {
    let mut classes: Vec<String> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let spec = RankingSpec::depth_one(classes)?;
    let taus = TemperatureSchedule::new(vec![tau])?;
    ranked_loss(z, labels, &spec, &taus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{finite_diff_grad, max_rel_err, Tape};
    use crate::ranking::{linear_temperature_schedule, parse_ranking};
    use crate::rng::Rng;

    fn strings(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    pub(crate) fn random_unit_rows(rng: &mut Rng, n: usize, d: usize) -> Matrix {
        loop {
            let m = Matrix::new(n, d, (0..n * d).map(|_| rng.normal()).collect()).unwrap();
            if let Ok(z) = m.l2_normalize_rows() {
                return z;
            }
        }
    }

    /// Literal transcription of the loss definition: per anchor, walk ranks
    /// in order, numerator over P_i, denominator over remaining positives
    /// plus negatives, plain exp (no max shift). Independent of `compute`.
    pub(crate) fn naive_ranked_loss(
        z: &Matrix,
        labels: &[String],
        spec: &RankingSpec,
        taus: &[f64],
    ) -> f64 {
        let n = z.rows();
        let mut total = 0.0;
        let mut n_eff = 0usize;
        for q in 0..n {
            let part = partition_batch(labels, q, spec).unwrap();
            let mut contributed = false;
            for i in 0..spec.depth() {
                if part.positives[i].is_empty() {
                    continue;
                }
                let tau = taus[i];
                let num: f64 = part.positives[i]
                    .iter()
                    .map(|&p| (dot(z.row(q), z.row(p)) / tau).exp())
                    .sum();
                let mut den = 0.0;
                for j in i..spec.depth() {
                    for &p in &part.positives[j] {
                        den += (dot(z.row(q), z.row(p)) / tau).exp();
                    }
                }
                for &m in &part.negatives {
                    den += (dot(z.row(q), z.row(m)) / tau).exp();
                }
                total += -(num / den).ln();
                contributed = true;
            }
            if contributed {
                n_eff += 1;
            }
        }
        total / n_eff as f64
    }

    fn three_rank_spec() -> RankingSpec {
        parse_ranking(
            r#"{"classes":["a","b","c","d"],"r":3,
                "ranks":{"a":[["b"],["c"]],"b":[["a"],["d"]],
                         "c":[["d"],["a"]],"d":[["c"],["b"]]}}"#,
        )
        .unwrap()
    }

    fn random_labels(rng: &mut Rng, n: usize) -> Vec<String> {
        let classes = ["a", "b", "c", "d"];
        (0..n).map(|_| classes[rng.range_usize(4)].to_string()).collect()
    }

    #[test]
    fn cosine_similarity_cases() {
        let v = [0.6, 0.8];
        assert_eq!(cosine_similarity(&v, &v), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]), -1.0);
    }

    #[test]
    fn similarity_matrix_cases() {
        let z = EmbeddingMatrix::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let s = similarity_matrix(&z);
        assert!(s.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let z = EmbeddingMatrix::new(Matrix::identity(3)).unwrap();
        assert!(similarity_matrix(&z).max_abs_diff(&Matrix::identity(3)) < 1e-12);

        // random unit rows match a pairwise loop
        let mut rng = Rng::new(5);
        let m = random_unit_rows(&mut rng, 4, 3);
        let z = EmbeddingMatrix::new(m.clone()).unwrap();
        let s = similarity_matrix(&z);
        for i in 0..4 {
            for j in 0..4 {
                let c = cosine_similarity(m.row(i), m.row(j));
                assert!((s.get(i, j) - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_pair_loss_is_zero() {
        let z = EmbeddingMatrix::new(
            Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let labels = strings(&["a", "a"]);
        let b = supcon_loss(&z, &labels, 0.1).unwrap();
        assert!(b.total.abs() < 1e-12, "total {}", b.total);
    }

    #[test]
    fn hand_computed_two_class_batch() {
        // rows [1,0],[1,0],[0,1],[0,1]; labels a,a,b,b; tau 0.1
        // each anchor: l = -log(e^10 / (e^10 + 2 e^0)) = ln(1 + 2 e^-10)
        let z = EmbeddingMatrix::new(
            Matrix::from_rows(&[
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 1.0],
            ])
            .unwrap(),
        )
        .unwrap();
        let labels = strings(&["a", "a", "b", "b"]);
        let expected = (1.0 + 2.0 * (-10.0f64).exp()).ln();
        assert!((expected - 9.08e-5).abs() < 1e-7, "oracle sanity: {expected}");
        let b = supcon_loss(&z, &labels, 0.1).unwrap();
        assert!((b.total - expected).abs() < 1e-14, "{} vs {}", b.total, expected);

        // ranked path with r=1 gives the same value
        let spec = RankingSpec::depth_one(strings(&["a", "b"])).unwrap();
        let taus = TemperatureSchedule::new(vec![0.1]).unwrap();
        let rb = ranked_loss(&z, &labels, &spec, &taus).unwrap();
        assert!((rb.total - expected).abs() < 1e-14);
    }

    #[test]
    fn matches_naive_oracle_on_random_batches() {
        let mut rng = Rng::new(17);
        let spec = three_rank_spec();
        let taus = linear_temperature_schedule(0.1, 0.6, 3).unwrap();
        for _ in 0..50 {
            let z = random_unit_rows(&mut rng, 8, 4);
            let labels = random_labels(&mut rng, 8);
            let got = match ranked_loss_raw(&z, &labels, &spec, &taus) {
                Ok(b) => b,
                Err(Error::Degenerate(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            let want = naive_ranked_loss(&z, &labels, &spec, taus.taus());
            assert!((got.total - want).abs() < 1e-10, "{} vs {}", got.total, want);
            // breakdown consistency
            let rank_sum: f64 = got.per_rank.iter().sum();
            assert!((got.total - rank_sum).abs() < 1e-10);
            assert!(got.total >= -1e-12);
        }
    }

    #[test]
    fn supcon_equals_ranked_depth_one() {
        let mut rng = Rng::new(23);
        for _ in 0..100 {
            let z = random_unit_rows(&mut rng, 6, 4);
            let labels = random_labels(&mut rng, 6);
            let emb = EmbeddingMatrix::new(z).unwrap();
            let sup = supcon_loss(&emb, &labels, 0.2);
            let mut classes = labels.clone();
            classes.sort();
            classes.dedup();
            let spec = RankingSpec::depth_one(classes).unwrap();
            let taus = TemperatureSchedule::new(vec![0.2]).unwrap();
            let ranked = ranked_loss(&emb, &labels, &spec, &taus);
            match (sup, ranked) {
                (Ok(a), Ok(b)) => assert!((a.total - b.total).abs() < 1e-10),
                (Err(Error::Degenerate(_)), Err(Error::Degenerate(_))) => {}
                (a, b) => panic!("mismatch: {a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn grad_matches_finite_differences() {
        let mut rng = Rng::new(31);
        let spec = three_rank_spec();
        let taus = linear_temperature_schedule(0.1, 0.6, 3).unwrap();
        for _ in 0..5 {
            let z = random_unit_rows(&mut rng, 8, 4);
            let labels = random_labels(&mut rng, 8);
            if ranked_loss_raw(&z, &labels, &spec, &taus).is_err() {
                continue;
            }
            let analytic = ranked_loss_grad_raw(&z, &labels, &spec, &taus).unwrap();
            let fd = finite_diff_grad(
                |m| ranked_loss_raw(m, &labels, &spec, &taus).unwrap().total,
                &z,
                1e-5,
            );
            let err = max_rel_err(&analytic, &fd);
            assert!(err < 1e-4, "rel err {err}");
        }
    }

    #[test]
    fn grad_zero_at_pinned_minimum() {
        // all-duplicate batch: ratio pinned at 1, tangent gradient zero
        let z = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let labels = strings(&["a", "a"]);
        let spec = RankingSpec::depth_one(strings(&["a"])).unwrap();
        let taus = TemperatureSchedule::new(vec![0.1]).unwrap();
        let g = ranked_loss_grad_raw(&z, &labels, &spec, &taus).unwrap();
        // project out the radial direction per row
        for i in 0..2 {
            let radial = dot(g.row(i), z.row(i));
            for j in 0..2 {
                let tangent = g.get(i, j) - radial * z.get(i, j);
                assert!(tangent.abs() < 1e-9, "tangent component {tangent}");
            }
        }
    }

    #[test]
    fn grad_orthogonal_through_normalization() {
        // backprop dL/dZ through l2 normalization: the pre-normalization
        // gradient carries no radial component
        let mut rng = Rng::new(41);
        let raw = Matrix::new(6, 4, (0..24).map(|_| rng.normal()).collect()).unwrap();
        let labels = random_labels(&mut rng, 6);
        let spec = three_rank_spec();
        let taus = linear_temperature_schedule(0.1, 0.6, 3).unwrap();

        let mut tape = Tape::new();
        let x = tape.input(raw.clone());
        let z = tape.l2_normalize_rows(x).unwrap();
        let dldz = ranked_loss_grad_raw(tape.value(z), &labels, &spec, &taus).unwrap();
        let grads = tape.backward(z, dldz).unwrap();
        let gx = grads.get(x);
        for i in 0..6 {
            let radial = dot(gx.row(i), raw.row(i));
            let scale = gx.row(i).iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0);
            assert!(radial.abs() / scale < 1e-9, "row {i} radial {radial}");
        }
    }

    #[test]
    fn empty_rank_terms_are_skipped_and_counted() {
        // labels contain no 'c', so rank 3 of anchors labeled 'a' is empty
        let spec = three_rank_spec();
        let taus = linear_temperature_schedule(0.1, 0.6, 3).unwrap();
        let mut rng = Rng::new(7);
        let z = random_unit_rows(&mut rng, 4, 3);
        let labels = strings(&["a", "a", "b", "b"]);
        let b = ranked_loss_raw(&z, &labels, &spec, &taus).unwrap();
        assert!(b.skipped_terms > 0);
        let want = naive_ranked_loss(&z, &labels, &spec, taus.taus());
        assert!((b.total - want).abs() < 1e-10);
    }

    #[test]
    fn all_skipped_is_degenerate() {
        let mut rng = Rng::new(7);
        let z = random_unit_rows(&mut rng, 2, 3);
        // singletons of mutually-unranked classes: no positives anywhere
        let spec = RankingSpec::depth_one(strings(&["a", "b"])).unwrap();
        let taus = TemperatureSchedule::new(vec![0.1]).unwrap();
        let labels = strings(&["a", "b"]);
        match ranked_loss_raw(&z, &labels, &spec, &taus) {
            Err(Error::Degenerate(_)) => {}
            other => panic!("expected degenerate, got {other:?}"),
        }
    }

    #[test]
    fn batch_permutation_invariance() {
        let mut rng = Rng::new(53);
        let spec = three_rank_spec();
        let taus = linear_temperature_schedule(0.1, 0.6, 3).unwrap();
        for seed in 0..20u64 {
            let z = random_unit_rows(&mut rng, 8, 4);
            let labels = random_labels(&mut rng, 8);
            let base = match ranked_loss_raw(&z, &labels, &spec, &taus) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let mut perm: Vec<usize> = (0..8).collect();
            Rng::new(seed).shuffle(&mut perm);
            let zp = Matrix::from_rows(&perm.iter().map(|&i| z.row(i).to_vec()).collect::<Vec<_>>())
                .unwrap();
            let lp: Vec<String> = perm.iter().map(|&i| labels[i].clone()).collect();
            let permuted = ranked_loss_raw(&zp, &lp, &spec, &taus).unwrap();
            assert!((base.total - permuted.total).abs() < 1e-10);
        }
    }

    #[test]
    fn global_rotation_invariance() {
        let mut rng = Rng::new(61);
        let spec = three_rank_spec();
        let taus = linear_temperature_schedule(0.1, 0.6, 3).unwrap();
        // random orthogonal matrix via Gram-Schmidt
        let d = 4;
        let raw = Matrix::new(d, d, (0..d * d).map(|_| rng.normal()).collect()).unwrap();
        let q = gram_schmidt(&raw);
        for _ in 0..10 {
            let z = random_unit_rows(&mut rng, 8, d);
            let labels = random_labels(&mut rng, 8);
            let base = match ranked_loss_raw(&z, &labels, &spec, &taus) {
                Ok(b) => b,
                Err(_) => continue,
            };
            let rotated = z.matmul(&q).unwrap();
            let rot = ranked_loss_raw(&rotated, &labels, &spec, &taus).unwrap();
            assert!((base.total - rot.total).abs() < 1e-9);
        }
    }

    fn gram_schmidt(m: &Matrix) -> Matrix {
        let mut rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
        for i in 0..rows.len() {
            for j in 0..i {
                let proj = dot(&rows[i], &rows[j]);
                let prev = rows[j].clone();
                for (x, p) in rows[i].iter_mut().zip(&prev) {
                    *x -= proj * p;
                }
            }
            let norm = rows[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            for x in rows[i].iter_mut() {
                *x /= norm;
            }
        }
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn moving_positive_closer_decreases_l1() {
        // slerp a P_1 member toward the anchor; that anchor's l_1 must drop
        let mut rng = Rng::new(71);
        let spec = RankingSpec::depth_one(strings(&["a", "b"])).unwrap();
        for _ in 0..10 {
            let z = random_unit_rows(&mut rng, 5, 4);
            let labels = strings(&["a", "a", "b", "b", "b"]);
            let anchor_l1 = |m: &Matrix| -> f64 {
                let part = partition_batch(&labels, 0, &spec).unwrap();
                let num: f64 = part.positives[0]
                    .iter()
                    .map(|&p| (dot(m.row(0), m.row(p)) / 0.2).exp())
                    .sum();
                let den: f64 = (1..5).map(|k| (dot(m.row(0), m.row(k)) / 0.2).exp()).sum();
                -(num / den).ln()
            };
            let before = anchor_l1(&z);
            // slerp row 1 toward row 0
            let a = z.row(0).to_vec();
            let p = z.row(1).to_vec();
            let cos = dot(&a, &p).clamp(-1.0, 1.0);
            if cos > 0.999 {
                continue;
            }
            let theta = cos.acos();
            let t = 0.5;
            let sin = theta.sin();
            let moved: Vec<f64> = a
                .iter()
                .zip(&p)
                .map(|(&av, &pv)| {
                    (((1.0 - t) * theta).sin() * pv + (t * theta).sin() * av) / sin
                })
                .collect();
            let mut z2 = z.clone();
            z2.row_mut(1).copy_from_slice(&moved);
            let after = anchor_l1(&z2);
            assert!(after < before, "l1 {before} -> {after}");
        }
    }

    #[test]
    fn breakdown_serialization_shape() {
        let b = LossBreakdown {
            total: 1.5,
            per_rank: vec![1.0, 0.5],
            per_anchor: vec![1.5, 1.5],
            skipped_terms: 3,
        };
        let json = serde_json::to_string(&b).unwrap();
        assert!(json.contains("\"skipped\":3"), "{json}");
    }
}
