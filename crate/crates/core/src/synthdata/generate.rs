use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::dataset::{Dataset, ImageShape, Provenance, Split};
use super::render::{max_classes, palette, render, RenderStyle};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

pub const GENERATOR_VERSION: u32 = 2;

fn provenance(generator: &str, seed: u64, params: &[(&str, f64)]) -> Provenance {
    Provenance {
        generator: generator.into(),
        version: GENERATOR_VERSION,
        seed,
        params: params
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect::<BTreeMap<_, _>>(),
    }
}

fn render_all<R: Rng>(
    groups: &[(u16, u16)],
    num_colors: usize,
    style: RenderStyle,
    rng: &mut R,
) -> Array2<f32> {
    let shape = ImageShape::canvas();
    let colors = palette(num_colors);
    let mut feats = Array2::zeros((groups.len(), shape.len()));
    for (row, &(y, z)) in feats.rows_mut().into_iter().zip(groups) {
        let mut row = row;
        let buf = row.as_slice_mut().expect("rows of a standard layout array are contiguous");
        render(y as usize, colors[z as usize], style, rng, buf);
    }
    feats
}

fn check_classes(k: usize) -> Result<()> {
    if k < 2 || k > max_classes() {
        return Err(Error::Config(format!(
            "number of classes must be in [2, {}] (got {k})",
            max_classes()
        )));
    }
    Ok(())
}

/// Colored glyph task: `y` uniform, `z = y` with probability `1 − β`,
/// otherwise uniform over the other `K − 1` colors.
pub fn gen_colored_patterns(k: usize, beta: f64, n: usize, style: RenderStyle, seed: u64) -> Result<Dataset> {
    check_classes(k)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0, 1] (got {beta})")));
    }
    if n < k {
        return Err(Error::Config(format!("need at least K = {k} samples (got {n})")));
    }
    style.validate()?;
    let mut rng = substream(seed, Stream::Datagen, "colored");
    let mut groups = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.random_range(0..k);
        let z = if rng.random::<f64>() < beta {
            let other = rng.random_range(0..k - 1);
            if other >= y {
                other + 1
            } else {
                other
            }
        } else {
            y
        };
        groups.push((y as u16, z as u16));
    }
    let features = render_all(&groups, k, style, &mut rng);
    Dataset::from_parts(
        k,
        k,
        Split::Train,
        ImageShape::canvas(),
        provenance(
            "colored_patterns",
            seed,
            &[
                ("k", k as f64),
                ("beta", beta),
                ("n", n as f64),
                ("noise", style.noise),
                ("background", style.background),
            ],
        ),
        features,
        groups.iter().map(|g| g.0).collect(),
        groups.iter().map(|g| g.1).collect(),
    )
}

/// In-distribution `(shape, color)` cells of a systematic split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystematicPattern {
    pub allowed: Vec<Vec<bool>>,
    pub colors_per_shape: usize,
}

impl SystematicPattern {
    /// Circulant pattern (shape `s` allows colors `s, s+1, …, s+C−1 mod L`)
    /// under independent seeded row and column permutations.
    pub fn generate<R: Rng + ?Sized>(k: usize, l: usize, c: usize, rng: &mut R) -> Result<Self> {
        if c > l {
            return Err(Error::Config(format!(
                "colors per shape C = {c} exceeds the number of colors L = {l}"
            )));
        }
        if c < 1 {
            return Err(Error::Config("colors per shape must be at least 1".into()));
        }
        if k != l {
            return Err(Error::Unsupported(format!(
                "doubly-uniform systematic patterns are only defined for K = L (got K={k}, L={l})"
            )));
        }
        let mut rows: Vec<usize> = (0..k).collect();
        let mut cols: Vec<usize> = (0..l).collect();
        rows.shuffle(rng);
        cols.shuffle(rng);
        let mut allowed = vec![vec![false; l]; k];
        for s in 0..k {
            for j in 0..c {
                allowed[rows[s]][cols[(s + j) % l]] = true;
            }
        }
        Ok(Self {
            allowed,
            colors_per_shape: c,
        })
    }

    pub fn num_in_distribution(&self) -> usize {
        self.allowed.iter().flatten().filter(|&&a| a).count()
    }

    pub fn num_out_of_distribution(&self) -> usize {
        self.allowed.iter().flatten().filter(|&&a| !a).count()
    }

    pub fn colors_for(&self, shape: usize) -> Vec<usize> {
        (0..self.allowed[shape].len())
            .filter(|&z| self.allowed[shape][z])
            .collect()
    }

    pub fn is_allowed(&self, y: usize, z: usize) -> bool {
        self.allowed[y][z]
    }
}

/// Train/valid/test parts of a systematic split plus its pattern.
#[derive(Debug, Clone)]
pub struct SystematicSplit {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub pattern: SystematicPattern,
}

/// Systematic attribute-grid task.
///
/// Train and valid draw `y` uniformly and `z` uniformly among the `C` colors
/// allowed for `y`. The test set covers all `K × L` cells in equal shares
/// (remainder spread over randomly chosen cells), in shuffled order.
#[allow(clippy::too_many_arguments)]
pub fn gen_systematic_split(
    k: usize,
    l: usize,
    c: usize,
    n_train: usize,
    n_valid: usize,
    n_test: usize,
    style: RenderStyle,
    seed: u64,
) -> Result<SystematicSplit> {
    check_classes(k)?;
    style.validate()?;
    if c < 2 {
        return Err(Error::Config(format!("need C >= 2 (got {c})")));
    }
    let pattern = SystematicPattern::generate(k, l, c, &mut substream(seed, Stream::Datagen, "pattern"))?;
    let params = |part: f64| {
        vec![
            ("k", k as f64),
            ("l", l as f64),
            ("c", c as f64),
            ("n_train", n_train as f64),
            ("n_valid", n_valid as f64),
            ("n_test", n_test as f64),
            ("noise", style.noise),
            ("background", style.background),
            ("part", part),
        ]
    };
    let make = |split: Split, groups: Vec<(u16, u16)>, rng: &mut crate::rng::Rng, part: f64| {
        let features = render_all(&groups, l, style, rng);
        Dataset::from_parts(
            k,
            l,
            split,
            ImageShape::canvas(),
            provenance("systematic_grid", seed, &params(part)),
            features,
            groups.iter().map(|g| g.0).collect(),
            groups.iter().map(|g| g.1).collect(),
        )
    };

    // Train and valid come from one stream so they are distinct draws.
    let mut dev_rng = substream(seed, Stream::Datagen, "development");
    let allowed: Vec<Vec<usize>> = (0..k).map(|y| pattern.colors_for(y)).collect();
    let draw_dev = |n: usize, rng: &mut crate::rng::Rng| -> Vec<(u16, u16)> {
        (0..n)
            .map(|_| {
                let y = rng.random_range(0..k);
                let z = allowed[y][rng.random_range(0..c)];
                (y as u16, z as u16)
            })
            .collect()
    };
    let train_groups = draw_dev(n_train, &mut dev_rng);
    let train = make(Split::Train, train_groups, &mut dev_rng, 0.0)?;
    let valid_groups = draw_dev(n_valid, &mut dev_rng);
    let valid = make(Split::Valid, valid_groups, &mut dev_rng, 1.0)?;

    let mut test_rng = substream(seed, Stream::Datagen, "test");
    let cells = k * l;
    let mut test_groups: Vec<(u16, u16)> = (0..n_test - n_test % cells)
        .map(|i| ((i % cells / l) as u16, (i % cells % l) as u16))
        .collect();
    let mut extra: Vec<usize> = (0..cells).collect();
    extra.shuffle(&mut test_rng);
    for &cell in extra.iter().take(n_test % cells) {
        test_groups.push(((cell / l) as u16, (cell % l) as u16));
    }
    test_groups.shuffle(&mut test_rng);
    let test = make(Split::Test, test_groups, &mut test_rng, 2.0)?;

    Ok(SystematicSplit {
        train,
        valid,
        test,
        pattern,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::empirical_group_table;

    #[test]
    fn beta_outside_unit_interval_is_rejected() {
        assert!(gen_colored_patterns(10, 1.5, 100, RenderStyle::with_noise(0.1), 0).is_err());
        assert!(gen_colored_patterns(10, -0.1, 100, RenderStyle::with_noise(0.1), 0).is_err());
    }

    #[test]
    fn beta_rule_diagonal_frequency() {
        // p(z = y) = 1 − β; 50k draws give σ ≈ 0.00045.
        let d = gen_colored_patterns(10, 0.01, 50_000, RenderStyle::with_noise(0.0), 11).unwrap();
        let t = empirical_group_table(&d).unwrap();
        let diag: f64 = (0..10).map(|i| t[[i, i]]).sum();
        assert!((diag - 0.99).abs() < 0.005, "diag = {diag}");
    }

    #[test]
    fn unbiased_setting_is_uniform_over_cells() {
        let d = gen_colored_patterns(10, 0.9, 40_000, RenderStyle::with_noise(0.0), 5).unwrap();
        let t = empirical_group_table(&d).unwrap();
        // 400 expected per cell; 3σ on the frequency is 3·sqrt(p(1−p)/n).
        let p = 0.01f64;
        let tol = 3.0 * (p * (1.0 - p) / 40_000.0).sqrt() * 1.5;
        for v in t.iter() {
            assert!((v - p).abs() < tol, "cell frequency {v}");
        }
    }

    #[test]
    fn same_seed_same_data_different_seed_differs() {
        let a = gen_colored_patterns(4, 0.1, 200, RenderStyle::with_noise(0.2), 3).unwrap();
        let b = gen_colored_patterns(4, 0.1, 200, RenderStyle::with_noise(0.2), 3).unwrap();
        let c = gen_colored_patterns(4, 0.1, 200, RenderStyle::with_noise(0.2), 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn pattern_rows_and_columns_sum_to_c() {
        let mut rng = substream(9, Stream::Datagen, "p");
        for c in 2..=6 {
            let p = SystematicPattern::generate(6, 6, c, &mut rng).unwrap();
            for y in 0..6 {
                assert_eq!(p.allowed[y].iter().filter(|&&a| a).count(), c);
                assert_eq!((0..6).filter(|&r| p.allowed[r][y]).count(), c);
            }
        }
    }

    #[test]
    fn c4_grid_cell_counts() {
        let s = gen_systematic_split(6, 6, 4, 100, 50, 360, RenderStyle::with_noise(0.1), 1).unwrap();
        assert_eq!(s.pattern.num_in_distribution(), 24);
        assert_eq!(s.pattern.num_out_of_distribution(), 12);
    }

    #[test]
    fn full_c_has_no_ood_cells() {
        let s = gen_systematic_split(6, 6, 6, 100, 50, 360, RenderStyle::with_noise(0.1), 1).unwrap();
        assert_eq!(s.pattern.num_out_of_distribution(), 0);
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(
            gen_systematic_split(6, 6, 7, 10, 10, 10, RenderStyle::with_noise(0.1), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gen_systematic_split(4, 6, 3, 10, 10, 10, RenderStyle::with_noise(0.1), 0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn development_frequencies_follow_the_pattern() {
        let s = gen_systematic_split(6, 6, 3, 30_000, 100, 360, RenderStyle::with_noise(0.0), 21).unwrap();
        let t = empirical_group_table(&s.train).unwrap();
        for y in 0..6 {
            let row: f64 = t.row(y).sum();
            for z in 0..6 {
                let cond = t[[y, z]] / row;
                if s.pattern.is_allowed(y, z) {
                    assert!((cond - 1.0 / 3.0).abs() < 0.02, "p(z|y) = {cond}");
                } else {
                    assert_eq!(t[[y, z]], 0.0);
                }
            }
        }
        for v in empirical_group_table(&s.valid).unwrap().indexed_iter() {
            if !s.pattern.is_allowed(v.0 .0, v.0 .1) {
                assert_eq!(*v.1, 0.0);
            }
        }
    }

    #[test]
    fn test_split_covers_every_cell_and_train_valid_are_disjoint() {
        let s = gen_systematic_split(6, 6, 3, 500, 200, 360, RenderStyle::with_noise(0.1), 2).unwrap();
        let t = empirical_group_table(&s.test).unwrap();
        assert!(t.iter().all(|&v| v > 0.0));
        let train_rows: std::collections::HashSet<Vec<u32>> = s
            .train
            .features
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        for r in s.valid.features.rows() {
            let key: Vec<u32> = r.iter().map(|v| v.to_bits()).collect();
            assert!(!train_rows.contains(&key));
        }
    }
}
