use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specbias::geometry::{centroids_of, cluster_distances, pca2d};
use specbias::{LabelKind, LabelSet};

struct Points {
    x: Array2<f64>,
    subjects: Vec<String>,
    tasks: Vec<String>,
}

impl Points {
    fn labels(&self) -> (LabelSet, LabelSet) {
        (LabelSet::from_names(&self.subjects, LabelKind::Subject), LabelSet::from_names(&self.tasks, LabelKind::Task))
    }

    fn distances(&self) -> (f64, f64) {
        let (s, t) = self.labels();
        let g = cluster_distances(&centroids_of(self.x.view(), &s, &t).unwrap()).unwrap();
        (g.d_cs, g.d_ct)
    }

    fn mapped(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Points {
        let rows: Vec<f64> = self.x.rows().into_iter().flat_map(|r| f(r.as_slice().unwrap())).collect();
        Points {
            x: Array2::from_shape_vec(self.x.dim(), rows).unwrap(),
            subjects: self.subjects.clone(),
            tasks: self.tasks.clone(),
        }
    }
}

fn square(subject2_y: f64) -> Points {
    let x = Array2::from_shape_vec((4, 2), vec![0.0, 0.0, 1.0, 0.0, 0.0, subject2_y, 1.0, subject2_y]).unwrap();
    Points {
        x,
        subjects: ["s1", "s1", "s2", "s2"].map(String::from).to_vec(),
        tasks: ["t1", "t2", "t1", "t2"].map(String::from).to_vec(),
    }
}

/// Direct double loop over ordered pairs of cell centroids.
fn brute_force(p: &Points) -> (f64, f64) {
    let mut cells: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for (i, row) in p.x.rows().into_iter().enumerate() {
        let e = cells.entry((p.subjects[i].clone(), p.tasks[i].clone())).or_insert((vec![0.0; row.len()], 0));
        e.0.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        e.1 += 1;
    }
    let cent: BTreeMap<(String, String), Vec<f64>> =
        cells.into_iter().map(|(k, (s, n))| (k, s.into_iter().map(|v| v / n as f64).collect())).collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let side = |by_subject: bool| {
        let mut groups: BTreeMap<&str, Vec<&Vec<f64>>> = BTreeMap::new();
        for ((s, t), c) in &cent {
            groups.entry(if by_subject { s } else { t }).or_default().push(c);
        }
        let vals: Vec<f64> = groups
            .values()
            .filter(|g| g.len() >= 2)
            .map(|g| {
                let mut sum = 0.0;
                for a in g.iter() {
                    for b in g.iter() {
                        sum += dist(a, b);
                    }
                }
                sum / (g.len() * (g.len() - 1)) as f64
            })
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    (side(true), side(false))
}

fn random_points(seed: u64, n_s: usize, n_t: usize, dim: usize) -> Points {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (mut rows, mut subjects, mut tasks) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..n_s {
        for t in 0..n_t {
            // Drop roughly one cell in six, except along the diagonal so every
            // subject and task keeps at least one cell.
            if s != t % n_s && r.random_range(0..6) == 0 {
                continue;
            }
            for _ in 0..r.random_range(1..4) {
                rows.extend((0..dim).map(|_| r.random_range(-5.0..5.0)));
                subjects.push(format!("s{s}"));
                tasks.push(format!("t{t}"));
            }
        }
    }
    let n = subjects.len();
    Points { x: Array2::from_shape_vec((n, dim), rows).unwrap(), subjects, tasks }
}

fn random_rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.0..1.0)).qr().q()
}

#[test]
fn unit_square_layout() {
    let (cs, ct) = square(1.0).distances();
    assert!((cs - 1.0).abs() < 1e-12 && (ct - 1.0).abs() < 1e-12);
}

#[test]
fn moving_one_subject_only_changes_the_task_distance() {
    let (cs, ct) = square(10.0).distances();
    assert!((cs - 1.0).abs() < 1e-12);
    assert!((ct - 10.0).abs() < 1e-12);
}

#[test]
fn identical_centroids_have_zero_distance() {
    let (cs, ct) = square(1.0).mapped(|_| vec![2.0, -1.0]).distances();
    assert_eq!((cs, ct), (0.0, 0.0));
}

#[test]
fn pca_captures_the_top_two_eigenvalues() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let scales: Vec<f64> = (0..10).map(|j| 1.0 + j as f64).collect();
    let x = Array2::from_shape_fn((100, 10), |(_, j)| r.random_range(-1.0..1.0) * scales[j]);
    let coords = pca2d(x.view()).unwrap();
    let projected: f64 = coords
        .columns()
        .into_iter()
        .map(|c| {
            let m = c.mean().unwrap();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 99.0
        })
        .sum();
    // Oracle via the singular values of the centred data.
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap();
    let xc = DMatrix::from_fn(100, 10, |i, j| x[[i, j]] - mean[j]);
    let mut sv: Vec<f64> = xc.singular_values().iter().map(|s| s * s / 99.0).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    assert!((projected - sv[0] - sv[1]).abs() < 1e-8, "{projected} vs {}", sv[0] + sv[1]);
}

#[test]
fn pca_of_centred_2d_data_is_an_isometry() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut x = Array2::from_shape_fn((30, 2), |(_, j)| r.random_range(-1.0..1.0) * if j == 0 { 3.0 } else { 1.0 });
    let m = x.mean_axis(ndarray::Axis(0)).unwrap();
    x -= &m;
    let c = pca2d(x.view()).unwrap();
    let gram_x = x.dot(&x.t());
    let gram_c = c.dot(&c.t());
    assert!(gram_x.iter().zip(gram_c.iter()).all(|(a, b)| (a - b).abs() < 1e-9));
}

#[test]
fn pca_of_rank_one_data_has_a_flat_second_axis() {
    let dir = [0.3, -1.2, 0.5, 2.0];
    let x = Array2::from_shape_fn((20, 4), |(i, j)| (i as f64 - 7.0) * dir[j] + 1.0);
    let c = pca2d(x.view()).unwrap();
    assert!(c.column(1).iter().all(|v| v.abs() < 1e-8));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_brute_force(seed in any::<u64>(), n_s in 2usize..=5, n_t in 2usize..=5, dim in 1usize..5) {
        let p = random_points(seed, n_s, n_t, dim);
        let (cs, ct) = p.distances();
        let (bs, bt) = brute_force(&p);
        prop_assert!((cs - bs).abs() < 1e-12 && (ct - bt).abs() < 1e-12);
    }

    #[test]
    fn rigid_motions_and_scaling(seed in any::<u64>(), a in 0.1f64..10.0) {
        let dim = 3;
        let p = random_points(seed, 4, 3, dim);
        let (cs, ct) = p.distances();
        let q = random_rotation(dim, seed ^ 1);
        let shift = [1.5, -20.0, 3.0];
        let moved = p.mapped(|v| {
            let w = &q * nalgebra::DVector::from_column_slice(v);
            w.iter().zip(&shift).map(|(x, s)| x + s).collect()
        });
        let (ms, mt) = moved.distances();
        prop_assert!((ms - cs).abs() < 1e-9 && (mt - ct).abs() < 1e-9);
        let (ss, st) = p.mapped(|v| v.iter().map(|x| a * x).collect()).distances();
        prop_assert!((ss - a * cs).abs() < 1e-9 * a.max(1.0) && (st - a * ct).abs() < 1e-9 * a.max(1.0));
    }
}
