//! Representation analysis and significance testing.

use nalgebra::{DMatrix, Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::rng::{streams, Stream};

/// Principal-component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec<f64>,
    /// Unit-length components, largest variance first. Each is signed so its
    /// largest-magnitude entry is positive.
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// `true` for components whose eigenvalue is numerically zero; their
    /// direction is arbitrary within the null space.
    pub degenerate: Vec<bool>,
    pub projections: Vec<Vec<f64>>,
}

impl PcaResult {
    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((c, x), m)| c * (x - m)).sum())
            .collect()
    }
}

/// Mean-centred projection onto the top `k` eigenvectors of the sample
/// covariance (divisor `n - 1`).
pub fn pca_project<R: AsRef<[f64]>>(rows: &[R], k: usize) -> Result<PcaResult> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    if k == 0 || d == 0 || k > d {
        return Err(Error::Input(format!("cannot take {k} components of {d}-dimensional data")));
    }
    if n <= k {
        return Err(Error::Input(format!("PCA with {k} components needs more than {k} rows, got {n}")));
    }
    if rows.iter().any(|r| r.as_ref().len() != d || r.as_ref().iter().any(|x| !x.is_finite())) {
        return Err(Error::Input("rows must be finite and share one dimension".into()));
    }

    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.as_ref()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for r in rows {
        let c: Vec<f64> = r.as_ref().iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[(i, j)] /= (n - 1) as f64;
            cov[(j, i)] = cov[(i, j)];
        }
    }

    let total: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]].max(0.0);

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    let mut degenerate = Vec::with_capacity(k);
    for &j in &order[..k] {
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        let lambda = eig.eigenvalues[j].max(0.0);
        degenerate.push(lambda <= 1e-12 * top.max(f64::MIN_POSITIVE));
        explained_variance.push(lambda);
        components.push(v);
    }
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    let mut out = PcaResult {
        mean,
        components,
        explained_variance,
        explained_variance_ratio,
        degenerate,
        projections: Vec::new(),
    };
    out.projections = rows.iter().map(|r| out.project(r.as_ref())).collect();
    Ok(out)
}

/// How far apart two domains sit in a 2-D principal-component projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegregationReport {
    /// Mean inter-domain distance over the mean intra-domain distance.
    pub distance_ratio: f64,
    /// Two-fold cross-validated accuracy of a logistic domain classifier.
    pub domain_pred_accuracy: f64,
    pub n_subsample: usize,
    pub n_repeats: usize,
    /// `true` when a domain had fewer rows than the nominal subsample size.
    pub subsample_reduced: bool,
    pub per_repeat_ratio: Vec<f64>,
    pub per_repeat_accuracy: Vec<f64>,
}

pub const SEGREGATION_SUBSAMPLE: usize = 250;
pub const SEGREGATION_REPEATS: usize = 10;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn mean_within(points: &[&Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut m = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            s += dist(points[i], points[j]);
            m += 1;
        }
    }
    s / m as f64
}

/// Segregation between two domains' representations.
///
/// Both domains are projected onto the top two principal components of their
/// union. Each repeat draws `min(250, n_id, n_ood)` rows per domain, computes
/// the distance ratio, and scores a logistic domain classifier (L2 penalty
/// `1 / (2 n) |w|^2` relative to the mean loss) by two-fold cross-validation
/// on a random split of the drawn rows.
pub fn segregation<R: AsRef<[f64]>>(features_id: &[R], features_ood: &[R], seed: u64) -> Result<SegregationReport> {
    if features_id.len() < 2 || features_ood.len() < 2 {
        return Err(Error::Input("segregation needs at least two rows per domain".into()));
    }
    let combined: Vec<&[f64]> = features_id.iter().chain(features_ood).map(AsRef::as_ref).collect();
    let pca = pca_project(&combined, 2)?;
    let (id, ood) = pca.projections.split_at(features_id.len());

    let k = SEGREGATION_SUBSAMPLE.min(id.len()).min(ood.len());
    let mut rng = Stream::new(seed, streams::SEGREGATION);
    let mut ratios = Vec::with_capacity(SEGREGATION_REPEATS);
    let mut accuracies = Vec::with_capacity(SEGREGATION_REPEATS);
    for _ in 0..SEGREGATION_REPEATS {
        let a: Vec<&Vec<f64>> = rng.sample_indices(id.len(), k).into_iter().map(|i| &id[i]).collect();
        let b: Vec<&Vec<f64>> = rng.sample_indices(ood.len(), k).into_iter().map(|i| &ood[i]).collect();
        let inter = a.iter().flat_map(|p| b.iter().map(move |q| dist(p, q))).sum::<f64>() / (k * k) as f64;
        let intra = 0.5 * (mean_within(&a) + mean_within(&b));
        if intra <= 0.0 {
            return Err(Error::Domain("intra-domain distance is zero".into()));
        }
        ratios.push(inter / intra);

        let points: Vec<[f64; 2]> = a.iter().chain(&b).map(|p| [p[0], p[1]]).collect();
        let labels: Vec<u8> = (0..2 * k).map(|i| u8::from(i >= k)).collect();
        let mut order: Vec<usize> = (0..2 * k).collect();
        rng.shuffle(&mut order);
        let (f1, f2) = order.split_at(k);
        let acc1 = holdout_accuracy(&points, &labels, f1, f2);
        let acc2 = holdout_accuracy(&points, &labels, f2, f1);
        accuracies.push(0.5 * (acc1 + acc2));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(SegregationReport {
        distance_ratio: mean(&ratios),
        domain_pred_accuracy: mean(&accuracies),
        n_subsample: k,
        n_repeats: SEGREGATION_REPEATS,
        subsample_reduced: k < SEGREGATION_SUBSAMPLE,
        per_repeat_ratio: ratios,
        per_repeat_accuracy: accuracies,
    })
}

fn holdout_accuracy(x: &[[f64; 2]], y: &[u8], train: &[usize], test: &[usize]) -> f64 {
    let tx: Vec<[f64; 2]> = train.iter().map(|&i| x[i]).collect();
    let ty: Vec<u8> = train.iter().map(|&i| y[i]).collect();
    let theta = newton_logistic(&tx, &ty, 1.0 / tx.len() as f64);
    let correct = test
        .iter()
        .filter(|&&i| {
            let z = theta[0] * x[i][0] + theta[1] * x[i][1] + theta[2];
            u8::from(z >= 0.0) == y[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Newton's method with backtracking for L2-penalised logistic regression
/// (penalty `l2 / 2 * |w|^2` on the weights, bias free).
fn newton_logistic(x: &[[f64; 2]], y: &[u8], l2: f64) -> [f64; 3] {
    let n = x.len() as f64;
    let loss = |t: &Vector3<f64>| {
        let mut s = 0.0;
        for (r, &yi) in x.iter().zip(y) {
            let z = t[0] * r[0] + t[1] * r[1] + t[2];
            let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            s += sp - f64::from(yi) * z;
        }
        s / n + 0.5 * l2 * (t[0] * t[0] + t[1] * t[1])
    };
    let mut t = Vector3::zeros();
    for _ in 0..100 {
        let mut g = Vector3::zeros();
        let mut h = Matrix3::zeros();
        for (r, &yi) in x.iter().zip(y) {
            let v = Vector3::new(r[0], r[1], 1.0);
            let z = t.dot(&v);
            let p = 1.0 / (1.0 + (-z).exp());
            g += v * ((p - f64::from(yi)) / n);
            h += v * v.transpose() * (p * (1.0 - p) / n);
        }
        g[0] += l2 * t[0];
        g[1] += l2 * t[1];
        h[(0, 0)] += l2;
        h[(1, 1)] += l2;
        // Keeps the bias direction invertible when every point is confidently classified.
        h[(2, 2)] += 1e-12;
        let Some(step) = h.lu().solve(&g) else { break };
        let f0 = loss(&t);
        let mut s = 1.0;
        while s > 1e-10 && loss(&(t - step * s)) > f0 - 1e-4 * s * g.dot(&step) {
            s *= 0.5;
        }
        t -= step * s;
        if (step * s).amax() < 1e-12 {
            break;
        }
    }
    [t[0], t[1], t[2]]
}

/// Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    /// Welch-Satterthwaite degrees of freedom.
    pub df: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Both groups have zero variance; `t` and `p` follow the conventions
    /// (equal means: `t = 0, p = 1`; otherwise `t = +-inf, p = 0`).
    pub degenerate: bool,
}

impl WelchResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p < alpha
    }
}

pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Input(format!(
            "t-test needs at least 2 values per group, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::Input("t-test values must be finite".into()));
    }
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (n, m, var / n)
    };
    let (na, mean_a, va) = stats(a);
    let (nb, mean_b, vb) = stats(b);
    let se2 = va + vb;
    if se2 == 0.0 {
        let equal = mean_a == mean_b;
        return Ok(WelchResult {
            t: if equal { 0.0 } else { (mean_a - mean_b).signum() * f64::INFINITY },
            p: if equal { 1.0 } else { 0.0 },
            df: na + nb - 2.0,
            mean_a,
            mean_b,
            degenerate: true,
        });
    }
    let t = (mean_a - mean_b) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult {
        t,
        p,
        df,
        mean_a,
        mean_b,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn line_data_has_one_component() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let pca = pca_project(&rows, 2).unwrap();
        assert!((pca.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(pca.degenerate[1] && !pca.degenerate[0]);
        let s = 5f64.sqrt();
        assert!((pca.components[0][0] - 1.0 / s).abs() < 1e-12);
        assert!((pca.components[0][1] - 2.0 / s).abs() < 1e-12);
    }

    #[test]
    fn isotropic_data_splits_variance_evenly() {
        let mut rng = Stream::new(21, 0);
        let rows: Vec<Vec<f64>> = (0..50_000).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let pca = pca_project(&rows, 2).unwrap();
        for r in &pca.explained_variance_ratio {
            assert!((r - 0.5).abs() < 0.01, "{r}");
        }
    }

    #[test]
    fn components_are_orthonormal_and_sorted() {
        let mut rng = Stream::new(22, 0);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                let z = [rng.normal(), rng.normal(), rng.normal()];
                vec![3.0 * z[0], z[0] + z[1], 0.2 * z[2] - z[1]]
            })
            .collect();
        let pca = pca_project(&rows, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = pca.components[i].iter().zip(&pca.components[j]).map(|(a, b)| a * b).sum();
                assert!((d - f64::from(u8::from(i == j))).abs() < 1e-10);
            }
            let c = &pca.components[i];
            let lead = c.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(lead > 0.0);
        }
        assert!(pca.explained_variance.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projection_is_isometric_on_planar_data() {
        let mut rng = Stream::new(23, 0);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b) = (rng.normal(), rng.normal());
                vec![a + b, a - b, 0.5 * a]
            })
            .collect();
        let pca = pca_project(&rows, 2).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let orig = dist(&rows[i], &rows[j]);
                let proj = dist(&pca.projections[i], &pca.projections[j]);
                assert!((orig - proj).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_rejects_too_few_rows() {
        assert!(pca_project(&[vec![1.0, 2.0], vec![2.0, 1.0]], 2).is_err());
    }

    fn gaussian_cloud(rng: &mut Stream, n: usize, shift: f64) -> Vec<[f64; 2]> {
        (0..n).map(|_| [rng.normal() + shift, rng.normal()]).collect()
    }

    #[test]
    fn exchangeable_domains_are_not_segregated() {
        let mut rng = Stream::new(24, 0);
        let a = gaussian_cloud(&mut rng, 600, 0.0);
        let b = gaussian_cloud(&mut rng, 600, 0.0);
        let r = segregation(&a, &b, 1).unwrap();
        assert!((r.distance_ratio - 1.0).abs() < 0.05, "{}", r.distance_ratio);
        assert!((r.domain_pred_accuracy - 0.5).abs() < 0.06, "{}", r.domain_pred_accuracy);
        assert_eq!((r.n_subsample, r.n_repeats), (250, 10));
        assert!(!r.subsample_reduced);
        assert_eq!(r, segregation(&a, &b, 1).unwrap());
    }

    #[test]
    fn separated_domains_are_segregated() {
        let mut rng = Stream::new(25, 0);
        let a = gaussian_cloud(&mut rng, 300, 0.0);
        let b = gaussian_cloud(&mut rng, 300, 10.0);
        let r = segregation(&a, &b, 2).unwrap();
        assert!(r.distance_ratio > 4.0, "{}", r.distance_ratio);
        assert!(r.domain_pred_accuracy > 0.999);
    }

    #[test]
    fn small_domains_reduce_the_subsample() {
        let mut rng = Stream::new(26, 0);
        let a = gaussian_cloud(&mut rng, 40, 0.0);
        let b = gaussian_cloud(&mut rng, 300, 3.0);
        let r = segregation(&a, &b, 3).unwrap();
        assert_eq!(r.n_subsample, 40);
        assert!(r.subsample_reduced);
        assert!(segregation(&a[..1], &b, 3).is_err());
    }

    #[test]
    fn welch_conventions() {
        let same = welch_t_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));

        let flat = welch_t_test(&[2.0, 2.0], &[2.0, 2.0]).unwrap();
        assert!(flat.degenerate && flat.p == 1.0 && flat.t == 0.0);
        let apart = welch_t_test(&[2.0, 2.0], &[3.0, 3.0]).unwrap();
        assert!(apart.degenerate && apart.p == 0.0 && apart.t == f64::NEG_INFINITY);

        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn welch_matches_reference_values() {
        // scipy.stats.ttest_ind(a, b, equal_var=False)
        let a = [1.0, 2.0, 3.0];
        let b = [11.01, 11.98, 13.02];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.t - (-12.21969960671177)).abs() < 1e-9, "{}", r.t);
        assert!((r.df - 3.999892275345933).abs() < 1e-9, "{}", r.df);
        assert!((r.p - 0.00025753218494089223).abs() < 1e-10, "{}", r.p);

        let a = [0.91, 0.87, 0.95, 0.89, 0.93, 0.90];
        let b = [0.97, 0.99, 0.98, 0.995, 0.985, 0.975];
        let r = welch_t_test(&a, &b).unwrap();
        assert!((r.t - (-6.041713676388958)).abs() < 1e-9, "{}", r.t);
        assert!((r.df - 6.059268600252207).abs() < 1e-9, "{}", r.df);
        assert!((r.p - 0.0008968975045711484).abs() < 1e-10, "{}", r.p);

        let swapped = welch_t_test(&b, &a).unwrap();
        assert_eq!(swapped.t, -r.t);
        assert_eq!(swapped.p, r.p);
    }
}
