//! Case-file fixtures: parse the four bundled systems, check cardinality,
//! admittance symmetry, and the 5-bus admittance against an independently
//! coded complex-arithmetic reference.

use ccacopf::grid::{build_admittance, parse_case, NetworkCase};

fn load(name: &str) -> NetworkCase<f64> {
    let path = format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    parse_case(&text).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn bundled_cases_have_expected_dimensions() {
    for (name, buses, gens, branches) in [
        ("case5.m", 5, 5, 6),
        ("case9.m", 9, 3, 9),
        ("case57.m", 57, 7, 80),
        ("case118.m", 118, 54, 186),
    ] {
        let case = load(name);
        assert_eq!(case.n_buses(), buses, "{name} buses");
        assert_eq!(case.generators.len(), gens, "{name} generators");
        assert_eq!(case.branches.len(), branches, "{name} branches");
    }
}

#[test]
fn admittance_is_symmetric_for_all_cases() {
    for name in ["case5.m", "case9.m", "case57.m", "case118.m"] {
        let case = load(name);
        let y = build_admittance(&case).unwrap();
        let n = y.n();
        for i in 0..n {
            for j in 0..i {
                assert_eq!(y.g[(i, j)], y.g[(j, i)], "{name} g[{i},{j}]");
                assert_eq!(y.b[(i, j)], y.b[(j, i)], "{name} b[{i},{j}]");
            }
        }
    }
}

/// Minimal complex arithmetic so the reference stays independent of the
/// production admittance builder.
#[derive(Clone, Copy)]
struct C {
    re: f64,
    im: f64,
}

impl C {
    fn inv(self) -> C {
        let d = self.re * self.re + self.im * self.im;
        C { re: self.re / d, im: -self.im / d }
    }
}

#[test]
fn five_bus_admittance_matches_reference() {
    let case = load("case5.m");
    let y = build_admittance(&case).unwrap();

    let n = case.n_buses();
    let mut g_ref = vec![vec![0.0; n]; n];
    let mut b_ref = vec![vec![0.0; n]; n];
    for br in &case.branches {
        let ys = C { re: br.r, im: br.x }.inv();
        let (i, j) = (br.from, br.to);
        g_ref[i][i] += ys.re;
        g_ref[j][j] += ys.re;
        b_ref[i][i] += ys.im + br.b_sh / 2.0;
        b_ref[j][j] += ys.im + br.b_sh / 2.0;
        g_ref[i][j] -= ys.re;
        g_ref[j][i] -= ys.re;
        b_ref[i][j] -= ys.im;
        b_ref[j][i] -= ys.im;
    }
    for i in 0..n {
        for j in 0..n {
            assert!((y.g[(i, j)] - g_ref[i][j]).abs() <= 1e-10, "g[{i},{j}]");
            assert!((y.b[(i, j)] - b_ref[i][j]).abs() <= 1e-10, "b[{i},{j}]");
        }
    }

    // Spot values frozen from the reference computation.
    assert!((y.g[(0, 0)] - 22.250685688535).abs() < 1e-9);
    assert!((y.b[(0, 0)] - -222.484376885351).abs() < 1e-9);
    assert!((y.b[(0, 4)] - 154.702970297030).abs() < 1e-9);
    assert!((y.g[(3, 3)] - 9.924238037839).abs() < 1e-9);
}

#[test]
fn case_fingerprints_are_stable_across_reparses() {
    let a = load("case9.m");
    let b = load("case9.m");
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_eq!(a, b);
}
