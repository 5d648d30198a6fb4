#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use ovi_prior::{EmbeddingMatrix, EmbeddingVector, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            x
        })
        .collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> EmbeddingVector {
    EmbeddingVector::new(gaussian(rng, n)).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::new(rows, dim, gaussian(rng, rows * dim), None).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Central difference of `f` at `x` along `dir`.
pub fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

/// Relative error of `analytic` against central differences.
///
/// Every coordinate is probed when `x` is short. Long inputs are probed along
/// `directions` random unit vectors plus the same number of random
/// coordinates, each error taken relative to `‖analytic‖`.
pub fn fd_relative_error(
    f: &dyn Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    rng: &mut ChaCha8Rng,
    directions: usize,
) -> f64 {
    let h = 1e-6;
    let n = x.len();
    if n <= 64 {
        let mut e = vec![0.0; n];
        let mut diff = 0.0;
        let mut fd_sq = 0.0;
        for i in 0..n {
            e[i] = 1.0;
            let fd = central_difference(f, x, &e, h);
            e[i] = 0.0;
            diff += (fd - analytic[i]).powi(2);
            fd_sq += fd * fd;
        }
        return diff.sqrt() / norm(analytic).max(fd_sq.sqrt()).max(f64::MIN_POSITIVE);
    }
    let scale = norm(analytic).max(f64::MIN_POSITIVE);
    let mut worst: f64 = 0.0;
    for _ in 0..directions {
        let mut u = gaussian(rng, n);
        let un = norm(&u);
        u.iter_mut().for_each(|v| *v /= un);
        worst = worst.max((dot(analytic, &u) - central_difference(f, x, &u, h)).abs() / scale);
        let i = (rand::Rng::random::<u64>(rng) % n as u64) as usize;
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        worst = worst.max((analytic[i] - central_difference(f, x, &e, h)).abs() / scale);
    }
    worst
}

/// `AAᵀ + εI` with standard-normal `A`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize, eps: f64) -> Matrix {
    let a = gaussian(rng, d * d);
    let mut s = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let v: f64 = (0..d).map(|k| a[i * d + k] * a[j * d + k]).sum();
            s.set(i, j, v + if i == j { eps } else { 0.0 });
        }
    }
    s
}

/// Residual of `v` after orthogonal projection onto `span(basis)`,
/// relative to `‖v‖`.
pub fn span_residual(basis: &[&[f64]], v: &[f64]) -> f64 {
    let mut q: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut w = b.to_vec();
        for _ in 0..2 {
            for qi in &q {
                let c = dot(&w, qi);
                w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n = norm(&w);
        if n > 1e-12 * norm(b) {
            w.iter_mut().for_each(|x| *x /= n);
            q.push(w);
        }
    }
    let mut r = v.to_vec();
    for _ in 0..2 {
        for qi in &q {
            let c = dot(&r, qi);
            r.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
        }
    }
    norm(&r) / norm(v)
}

pub fn ovi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovi"))
        .args(args)
        .output()
        .expect("spawn ovi")
}

pub fn ovi_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ovi"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ovi")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

/// Column `name` of a CSV with a header row, empty fields as `None`.
pub fn csv_column(text: &str, name: &str) -> Vec<Option<f64>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header
        .iter()
        .position(|h| *h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    lines
        .map(|l| {
            let f = l.split(',').nth(idx).unwrap();
            if f.is_empty() {
                None
            } else {
                Some(f.parse().unwrap())
            }
        })
        .collect()
}
