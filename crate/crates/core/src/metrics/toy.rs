use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use rand::distr::{weighted::WeightedIndex, Distribution};

use crate::error::{Error, Result};

const NORM_TOL: f64 = 1e-9;

/// Finite joint `p(x, y, z) = p(y, z) · p(x | y, z)` over `x ∈ [0, num_x)`.
///
/// Test-time data keeps the mechanism `p(x | y, z)` and draws `(y, z)` uniformly.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerableToy {
    p_yz: Array2<f64>,
    p_x_given_yz: Array3<f64>,
}

impl EnumerableToy {
    /// `p_yz` is `K×L`, `p_x_given_yz` is `K×L×X`.
    pub fn new(p_yz: Array2<f64>, p_x_given_yz: Array3<f64>) -> Result<Self> {
        let (k, l) = p_yz.dim();
        let (k2, l2, nx) = p_x_given_yz.dim();
        if (k, l) != (k2, l2) || k < 2 || l < 1 || nx == 0 {
            return Err(Error::Config("toy tables have inconsistent shapes".into()));
        }
        if nx * k * l > 1_000_000 {
            return Err(Error::Config("toy too large to enumerate".into()));
        }
        let neg = p_yz.iter().chain(p_x_given_yz.iter()).any(|&p| !(p >= 0.0));
        if neg || (p_yz.sum() - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized {
                index: 0,
                norm: p_yz.sum(),
            });
        }
        for y in 0..k {
            for z in 0..l {
                let s: f64 = (0..nx).map(|x| p_x_given_yz[[y, z, x]]).sum();
                if (s - 1.0).abs() > NORM_TOL {
                    return Err(Error::NotNormalized { index: y * l + z, norm: s });
                }
            }
        }
        Ok(Self { p_yz, p_x_given_yz })
    }

    /// `x = a · |B| + b` with `p(x | y, z) = p(a | y) · p(b | z)`.
    pub fn from_factors(p_yz: Array2<f64>, p_a_given_y: ArrayView2<'_, f64>, p_b_given_z: ArrayView2<'_, f64>) -> Result<Self> {
        let (k, l) = p_yz.dim();
        let (na, nb) = (p_a_given_y.ncols(), p_b_given_z.ncols());
        if p_a_given_y.nrows() != k || p_b_given_z.nrows() != l {
            return Err(Error::Config("factor tables do not match the label grid".into()));
        }
        let mech = Array3::from_shape_fn((k, l, na * nb), |(y, z, x)| {
            p_a_given_y[[y, x / nb]] * p_b_given_z[[z, x % nb]]
        });
        Self::new(p_yz, mech)
    }

    pub fn num_classes(&self) -> usize {
        self.p_yz.nrows()
    }

    pub fn num_bias_values(&self) -> usize {
        self.p_yz.ncols()
    }

    pub fn num_x(&self) -> usize {
        self.p_x_given_yz.dim().2
    }

    pub fn p_yz(&self) -> &Array2<f64> {
        &self.p_yz
    }

    pub fn mechanism(&self, y: usize, z: usize, x: usize) -> f64 {
        self.p_x_given_yz[[y, z, x]]
    }

    /// Training-distribution `p(x)`.
    pub fn p_x(&self, x: usize) -> f64 {
        self.p_yz.indexed_iter().map(|((y, z), &p)| p * self.mechanism(y, z, x)).sum()
    }

    pub fn p_z(&self, z: usize) -> f64 {
        self.p_yz.column(z).sum()
    }

    /// `p(y | z)` as a `K×L` table (columns sum to one).
    pub fn y_given_z(&self) -> Array2<f64> {
        Array2::from_shape_fn(self.p_yz.dim(), |(y, z)| self.p_yz[[y, z]] / self.p_z(z))
    }

    /// Training-distribution `p(z | x)`.
    pub fn z_given_x(&self, z: usize, x: usize) -> f64 {
        let px = self.p_x(x);
        if px == 0.0 {
            return 0.0;
        }
        (0..self.num_classes()).map(|y| self.p_yz[[y, z]] * self.mechanism(y, z, x)).sum::<f64>() / px
    }

    /// Draws `n` training triples `(x, y, z)`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(usize, usize, usize)> {
        let l = self.num_bias_values();
        let cells = WeightedIndex::new(self.p_yz.iter().copied()).expect("valid group table");
        let mechs: Vec<WeightedIndex<f64>> = self
            .p_yz
            .indexed_iter()
            .map(|((y, z), _)| {
                WeightedIndex::new((0..self.num_x()).map(|x| self.mechanism(y, z, x)))
                    .expect("valid mechanism")
            })
            .collect();
        (0..n)
            .map(|_| {
                let c = cells.sample(rng);
                (mechs[c].sample(rng), c / l, c % l)
            })
            .collect()
    }

    /// Logits satisfying `log p(x | y, z) = h(x)_y + c(x, z)` when the mechanism factorizes.
    pub fn analytic_logits(&self, floor: f64) -> Array2<f64> {
        Array2::from_shape_fn((self.num_x(), self.num_classes()), |(x, y)| {
            let p = self.mechanism(y, 0, x);
            if p > 0.0 { p.ln().max(floor) } else { floor }
        })
    }
}

/// Group-balanced accuracy of a per-`x` label table under uniform test groups.
pub fn balanced_accuracy_of_table(toy: &EnumerableToy, table: &[usize]) -> f64 {
    let (k, l) = (toy.num_classes(), toy.num_bias_values());
    let mut total = 0.0;
    for y in 0..k {
        for z in 0..l {
            total += table
                .iter()
                .enumerate()
                .filter(|&(_, &t)| t == y)
                .map(|(x, _)| toy.mechanism(y, z, x))
                .sum::<f64>();
        }
    }
    total / (k * l) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesOracle {
    pub table: Vec<usize>,
    pub balanced: f64,
}

/// Balanced-optimal classifier `x ↦ argmax_y Σ_z p(x | y, z)`.
pub fn oracle_bayes_toy(toy: &EnumerableToy) -> BayesOracle {
    let (k, l) = (toy.num_classes(), toy.num_bias_values());
    let table: Vec<usize> = (0..toy.num_x())
        .map(|x| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for y in 0..k {
                let v: f64 = (0..l).map(|z| toy.mechanism(y, z, x)).sum();
                if v > best_v {
                    best = y;
                    best_v = v;
                }
            }
            best
        })
        .collect();
    let balanced = balanced_accuracy_of_table(toy, &table);
    BayesOracle { table, balanced }
}

/// Multi-label scores `exp(h(x)_y) · p(z|x) p(x) / (Z(z, x) p(z))`, shape `X×K×L`,
/// where `Z(z, x) = Σ_y exp(h(x)_y + log p(y | z))`.
pub fn factorized_scores(toy: &EnumerableToy, h: ArrayView2<'_, f64>) -> Result<Array3<f64>> {
    let (nx, k, l) = (toy.num_x(), toy.num_classes(), toy.num_bias_values());
    if h.dim() != (nx, k) {
        return Err(Error::Dimension {
            context: "toy logits",
            expected: nx * k,
            got: h.len(),
        });
    }
    let cond = toy.y_given_z();
    let mut out = Array3::zeros((nx, k, l));
    for x in 0..nx {
        let shift = h.row(x).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for z in 0..l {
            let part: f64 = (0..k).map(|y| (h[[x, y]] - shift).exp() * cond[[y, z]]).sum();
            let c = toy.z_given_x(z, x) * toy.p_x(x) / (part * toy.p_z(z));
            for y in 0..k {
                out[[x, y, z]] = (h[[x, y]] - shift).exp() * c;
            }
        }
    }
    Ok(out)
}

/// Balanced accuracy of the joint `(y, z)` argmax (row-major, lowest index on ties).
pub fn multilabel_balanced_accuracy(toy: &EnumerableToy, scores: &Array3<f64>) -> f64 {
    let (nx, k, l) = scores.dim();
    let mut total = 0.0;
    for x in 0..nx {
        let mut best = (0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for y in 0..k {
            for z in 0..l {
                if scores[[x, y, z]] > best_v {
                    best_v = scores[[x, y, z]];
                    best = (y, z);
                }
            }
        }
        total += toy.mechanism(best.0, best.1, x);
    }
    total / (k * l) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn swapped() -> EnumerableToy {
        // Two x values; the mechanism swaps across z.
        let p_yz = array![[0.4, 0.1], [0.1, 0.4]];
        let mech = Array3::from_shape_vec(
            (2, 2, 2),
            vec![0.8, 0.2, 0.3, 0.7, 0.1, 0.9, 0.6, 0.4],
        )
        .unwrap();
        EnumerableToy::new(p_yz, mech).unwrap()
    }

    #[test]
    fn oracle_matches_exhaustive_search() {
        let toy = swapped();
        let nx = toy.num_x();
        let mut best = 0.0f64;
        for code in 0..(1usize << nx) {
            let table: Vec<usize> = (0..nx).map(|x| (code >> x) & 1).collect();
            best = best.max(balanced_accuracy_of_table(&toy, &table));
        }
        assert!((oracle_bayes_toy(&toy).balanced - best).abs() < 1e-15);
    }

    #[test]
    fn deterministic_toy_is_solved() {
        let p_yz = array![[0.3, 0.2], [0.1, 0.4]];
        let mech = Array3::from_shape_fn((2, 2, 4), |(y, _, x)| if x / 2 == y { 0.5 } else { 0.0 });
        let toy = EnumerableToy::new(p_yz, mech).unwrap();
        assert_eq!(oracle_bayes_toy(&toy).balanced, 1.0);
    }

    #[test]
    fn rejects_unnormalized() {
        let mech = Array3::from_elem((2, 2, 2), 0.5);
        assert!(EnumerableToy::new(array![[0.5, 0.5], [0.5, 0.5]], mech).is_err());
    }

    #[test]
    fn factor_argmax_agrees_with_logits() {
        let p_yz = array![[0.45, 0.05], [0.05, 0.45]];
        let pa = array![[0.5, 0.3, 0.2], [0.1, 0.3, 0.6]];
        let pb = array![[0.7, 0.2, 0.1], [0.2, 0.2, 0.6]];
        let toy = EnumerableToy::from_factors(p_yz, pa.view(), pb.view()).unwrap();
        let h = toy.analytic_logits(-30.0);
        let s = factorized_scores(&toy, h.view()).unwrap();
        for x in 0..toy.num_x() {
            let joint = s
                .index_axis(ndarray::Axis(0), x)
                .indexed_iter()
                .fold(((0, 0), f64::NEG_INFINITY), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc })
                .0;
            let hy = crate::numgrad::argmax_row(h.row(x));
            assert_eq!(joint.0, hy, "x = {x}");
        }
        // Analytic logits solve the balanced problem exactly.
        let pred: Vec<usize> = (0..toy.num_x()).map(|x| crate::numgrad::argmax_row(h.row(x))).collect();
        let oracle = oracle_bayes_toy(&toy);
        assert!((balanced_accuracy_of_table(&toy, &pred) - oracle.balanced).abs() < 1e-12);
    }
}
