use proptest::prelude::*;
use subelliptic::grid::{read_hfield, write_hfield, GridSpec};
use subelliptic::heisenberg::{volume_density, HeisenbergModel};
use subelliptic::stencil::{FiniteDifference, Lattice};
use subelliptic::target::{fd as oracles, TargetGeometry};

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, 2 * n + 1)
}

fn chart_point(nu: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.5..1.5f64, nu)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn h_inner(target: &TargetGeometry, y: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let h = target.metric(y).unwrap();
    let nu = u.len();
    let mut s = 0.0;
    for j in 0..nu {
        for k in 0..nu {
            s += h[(j, k)] * u[j] * v[k];
        }
    }
    s
}

/// Lie bracket of two frame fields by central differences of their
/// coefficients (exact for the affine coefficients of the model).
fn bracket(model: &HeisenbergModel, a: usize, b: usize, p: &[f64]) -> Vec<f64> {
    let m = model.dim();
    let step = 1e-3;
    let xa = model.frame_vector(a, p).unwrap();
    let xb = model.frame_vector(b, p).unwrap();
    let directional = |along: &[f64], field: usize| -> Vec<f64> {
        let shift = |s: f64| -> Vec<f64> {
            let q: Vec<f64> = p.iter().zip(along).map(|(c, d)| c + s * d).collect();
            model.frame_vector(field, &q).unwrap()
        };
        let (fwd, bwd) = (shift(step), shift(-step));
        (0..m).map(|i| (fwd[i] - bwd[i]) / (2.0 * step)).collect()
    };
    let (db, da) = (directional(&xa, b), directional(&xb, a));
    (0..m).map(|i| db[i] - da[i]).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frame_is_orthonormal_and_horizontal(n in 1usize..4, seed in point(3)) {
        let model = HeisenbergModel::new(n).unwrap();
        let p = &seed[..2 * n + 1];
        let g = model.webster_metric(p);
        let frame: Vec<Vec<f64>> = (0..2 * n).map(|a| model.frame_vector(a, p).unwrap()).collect();
        for a in 0..2 * n {
            prop_assert!(model.theta(p, &frame[a]).abs() < 1e-12);
            for b in 0..2 * n {
                let gab: f64 = (0..2 * n + 1).flat_map(|i| (0..2 * n + 1).map(move |j| (i, j)))
                    .map(|(i, j)| g[(i, j)] * frame[a][i] * frame[b][j]).sum();
                let levi = model.levi_form(p, &frame[a], &frame[b]).unwrap();
                let expect = if a == b { 1.0 } else { 0.0 };
                prop_assert!((gab - expect).abs() < 1e-10, "webster {a},{b}: {gab}");
                prop_assert!((levi - expect).abs() < 1e-10, "levi {a},{b}: {levi}");
            }
        }
    }

    #[test]
    fn reeb_field_axioms(n in 1usize..4, seed in point(3), v in point(3)) {
        let model = HeisenbergModel::new(n).unwrap();
        let (p, v) = (&seed[..2 * n + 1], &v[..2 * n + 1]);
        let t = model.reeb();
        prop_assert!((model.theta(p, &t) - 1.0).abs() < 1e-14);
        prop_assert!(model.dtheta(&t, v).abs() < 1e-14);
    }

    #[test]
    fn complex_structure_squares_to_minus_one(n in 1usize..4, seed in point(3), c in prop::collection::vec(-3.0..3.0f64, 6)) {
        let model = HeisenbergModel::new(n).unwrap();
        let p = &seed[..2 * n + 1];
        let mut u = vec![0.0; 2 * n + 1];
        for a in 0..2 * n {
            let x = model.frame_vector(a, p).unwrap();
            u.iter_mut().zip(&x).for_each(|(s, xi)| *s += c[a] * xi);
        }
        let ju = model.complex_structure(p, &u).unwrap();
        let jju = model.complex_structure(p, &ju).unwrap();
        for (a, b) in jju.iter().zip(&u) {
            prop_assert!((a + b).abs() < 1e-10);
        }
        prop_assert!(model.levi_form(p, &u, &u).unwrap() >= -1e-12);
    }

    #[test]
    fn frame_brackets_close_on_reeb(n in 1usize..4, seed in point(3)) {
        let model = HeisenbergModel::new(n).unwrap();
        let p = &seed[..2 * n + 1];
        let t = model.reeb();
        for a in 0..2 * n {
            for b in 0..2 * n {
                let br = bracket(&model, a, b, p);
                let xa = model.frame_vector(a, p).unwrap();
                let xb = model.frame_vector(b, p).unwrap();
                // dθ(X, Y) = −θ([X, Y]) for horizontal X, Y.
                let cartan = model.dtheta(&xa, &xb) + model.theta(p, &br);
                prop_assert!(cartan.abs() < 1e-9, "{a},{b}: {cartan}");
                let vertical = br.iter().zip(&t).all(|(c, tc)| (c - model.theta(p, &br) * tc).abs() < 1e-9);
                prop_assert!(vertical);
            }
        }
    }

    #[test]
    fn volume_density_matches_webster_determinant(n in 1usize..5, seed in point(4)) {
        let model = HeisenbergModel::new(n).unwrap();
        let p = &seed[..2 * n + 1];
        let det = model.webster_metric(p).determinant();
        let factorial: f64 = (1..=n).map(|k| k as f64).product();
        let oracle = factorial * det.sqrt();
        let cn = volume_density(n).unwrap();
        prop_assert!((oracle - cn).abs() < 1e-8 * cn);
    }

    #[test]
    fn sphere_metric_is_parallel(nu in 2usize..4, y in chart_point(3)) {
        let target = TargetGeometry::round_sphere(nu).unwrap();
        let y = &y[..nu];
        let gam = target.christoffel(y).unwrap();
        let step = 1e-5;
        for i in 0..nu {
            let mut fwd = y.to_vec();
            let mut bwd = y.to_vec();
            fwd[i] += step;
            bwd[i] -= step;
            let (hf, hb) = (target.metric(&fwd).unwrap(), target.metric(&bwd).unwrap());
            let h = target.metric(y).unwrap();
            for j in 0..nu {
                for k in 0..nu {
                    let dh = (hf[(j, k)] - hb[(j, k)]) / (2.0 * step);
                    let contraction: f64 = (0..nu)
                        .map(|l| gam[(l * nu + i) * nu + j] * h[(l, k)] + gam[(l * nu + i) * nu + k] * h[(j, l)])
                        .sum();
                    prop_assert!((dh - contraction).abs() < 1e-7, "∇h at {i}{j}{k}: {}", dh - contraction);
                    prop_assert_eq!(gam[(i * nu + j) * nu + k], gam[(i * nu + k) * nu + j]);
                }
            }
        }
    }

    #[test]
    fn sphere_curvature_symmetries(
        nu in 2usize..4,
        y in chart_point(3),
        vecs in prop::collection::vec(-1.0..1.0f64, 12),
    ) {
        let target = TargetGeometry::round_sphere(nu).unwrap();
        let y = &y[..nu];
        let (u, v, w, z) = (&vecs[0..nu], &vecs[3..3 + nu], &vecs[6..6 + nu], &vecs[9..9 + nu]);
        let r = |a: &[f64], b: &[f64], c: &[f64]| target.curvature(y, a, b, c).unwrap();
        let scale = 1.0 + h_inner(&target, y, u, u) * h_inner(&target, y, v, v);
        let bianchi: Vec<f64> = (0..nu).map(|m| r(u, v, w)[m] + r(v, w, u)[m] + r(w, u, v)[m]).collect();
        prop_assert!(dot(&bianchi, &bianchi).sqrt() < 1e-12 * scale * 16.0);
        let skew: Vec<f64> = (0..nu).map(|m| r(u, v, w)[m] + r(v, u, w)[m]).collect();
        prop_assert!(dot(&skew, &skew).sqrt() < 1e-12 * scale * 16.0);
        let lhs = h_inner(&target, y, &r(u, v, w), z);
        let rhs = h_inner(&target, y, &r(w, z, u), v);
        prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn christoffels_match_difference_oracle(nu in 2usize..4, y in chart_point(3)) {
        let target = TargetGeometry::round_sphere(nu).unwrap();
        let y = &y[..nu];
        let analytic = target.christoffel(y).unwrap();
        let fd = oracles::christoffel_fd(&target, y, 1e-4);
        for (a, b) in analytic.iter().zip(&fd) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn stencil_is_exact_on_low_degree_polynomials(
        order in prop::sample::select(vec![2usize, 4, 6]),
        coeffs in prop::collection::vec(-1.0..1.0f64, 7),
    ) {
        let points = 15;
        let lattice = Lattice::new(vec![points], vec![-1.0], vec![2.0 / (points - 1) as f64], vec![false]);
        let fd = FiniteDifference::new(lattice.clone(), order).unwrap();
        let degree = order;
        let poly = |x: f64| coeffs[..=degree].iter().rev().fold(0.0, |acc, c| acc * x + c);
        let dpoly = |x: f64| (1..=degree).map(|k| k as f64 * coeffs[k] * x.powi(k as i32 - 1)).sum::<f64>();
        let f: Vec<f64> = (0..points).map(|i| poly(lattice.coordinate(i, 0))).collect();
        let d = fd.d1(&f, 0);
        for (i, di) in d.iter().enumerate() {
            prop_assert!((di - dpoly(lattice.coordinate(i, 0))).abs() < 1e-9, "index {i}");
        }
    }

    #[test]
    fn hfield_round_trip_is_exact(values in prop::collection::vec(-1e6..1e6f64, 2 * 729)) {
        let grid = GridSpec::uniform(1, 9, 1.5).unwrap();
        let comps = vec![values[..729].to_vec(), values[729..].to_vec()];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.hfield");
        write_hfield(&path, &grid, &comps).unwrap();
        let (back, read) = read_hfield(&path).unwrap();
        prop_assert_eq!(back, grid);
        prop_assert_eq!(read, comps);
    }
}
