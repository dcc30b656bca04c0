//! The four-channel benchmark system used by the shipped scenarios, tests and benches.
//!
//! Arc lists for the two neighbor graphs are fixtures: graph "a" is the
//! bidirectional ring 1-2-3-4-1 (strongly connected, and still strongly
//! connected after any single vertex is removed), graph "b" is the directed
//! cycle 1→2→3→4→1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::DiGraph;
use crate::matrix::{Mat, Vector};
use crate::plant::LtiPlant;

pub fn four_channel_a() -> Mat {
    Mat::from_row_slice(
        4,
        4,
        &[
            -0.1, 0.4, 0.0, 0.0, //
            -0.1, -0.1, 0.0, 0.0, //
            0.0, 0.0, -0.2, 0.2, //
            0.0, 0.0, -2.0, 0.1,
        ],
    )
}

/// `C_i` is the i-th unit row.
pub fn four_channel_outputs() -> Vec<Mat> {
    (0..4)
        .map(|i| {
            let mut c = Mat::zeros(1, 4);
            c[(0, i)] = 1.0;
            c
        })
        .collect()
}

pub fn four_channel_x0() -> Vector {
    Vector::from_vec(vec![3.0, 2.0, 4.0, 1.0])
}

pub fn four_channel_plant() -> LtiPlant {
    LtiPlant::new(four_channel_a(), four_channel_outputs(), four_channel_x0(), None)
        .expect("reference plant is jointly observable")
}

/// Hand-picked `L_i` for agent `i` (0-based).
pub fn reference_l(i: usize) -> Mat {
    let rows: [[f64; 8]; 4] = [
        [0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0],
    ];
    Mat::from_row_slice(2, 4, &rows[i])
}

/// Hand-tuned local observer gains matching [`reference_l`]; they give local rate 2.
pub fn reference_gain(i: usize) -> Mat {
    let k = [[13.7, 4.8], [54.7, 4.8], [30.6, 4.9], [2.32, 4.9]];
    Mat::from_column_slice(2, 1, &[-k[i][0], -k[i][1]])
}

pub fn reference_w0() -> Vec<Vector> {
    vec![Vector::from_vec(vec![5.0, 5.0]); 4]
}

pub fn reference_xhat0() -> Vec<Vector> {
    vec![
        Vector::from_element(4, 5.0),
        Vector::from_element(4, 5.0),
        Vector::from_element(4, 4.0),
        Vector::from_element(4, 4.0),
    ]
}

/// Bidirectional ring 1-2-3-4-1.
pub fn graph_a() -> DiGraph {
    DiGraph::from_arcs(4, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (3, 0), (0, 3)])
        .expect("valid arcs")
}

/// Directed cycle 1→2→3→4→1.
pub fn graph_b() -> DiGraph {
    DiGraph::from_arcs(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).expect("valid arcs")
}

/// Bidirectional path 1-2-3-4 plus chord 1-3; symmetric and strongly connected.
pub fn graph_c() -> DiGraph {
    DiGraph::from_arcs(4, &[(0, 1), (1, 0), (1, 2), (2, 1), (2, 3), (3, 2), (0, 2), (2, 0)])
        .expect("valid arcs")
}

/// Random jointly observable plant with `m` scalar channels and `n ≤ 12` states.
///
/// `A = U D Uᵀ` with `U` orthogonal and `D` block diagonal (1x1 and rotating
/// 2x2 blocks). Each channel sees a random nonempty set of blocks and together
/// they see all of them, so the unobservable spaces are usually nontrivial.
pub fn random_modal_plant(seed: u64, m: usize, n: usize) -> LtiPlant {
    assert!(m >= 1 && (1..=12).contains(&n));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    let mut at = 0;
    while at < n {
        let size = if n - at >= 2 && rng.gen_bool(0.6) { 2 } else { 1 };
        blocks.push((at, size));
        at += size;
    }
    let mut d = Mat::zeros(n, n);
    for &(o, size) in &blocks {
        let a = rng.gen_range(-0.6..0.2);
        if size == 1 {
            d[(o, o)] = a;
        } else {
            let b = rng.gen_range(0.3..1.5);
            d[(o, o)] = a;
            d[(o + 1, o + 1)] = a;
            d[(o, o + 1)] = b;
            d[(o + 1, o)] = -b;
        }
    }
    let u = Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let a = &u * d * u.transpose();

    let mut seen = vec![vec![false; blocks.len()]; m];
    for row in seen.iter_mut() {
        for v in row.iter_mut() {
            *v = rng.gen_bool(0.4);
        }
        if !row.iter().any(|&v| v) {
            let k = rng.gen_range(0..row.len());
            row[k] = true;
        }
    }
    for b in 0..blocks.len() {
        if !seen.iter().any(|row| row[b]) {
            let i = rng.gen_range(0..m);
            seen[i][b] = true;
        }
    }
    let channels = seen
        .iter()
        .map(|row| {
            let mut w = Mat::zeros(1, n);
            for (b, &(o, size)) in blocks.iter().enumerate() {
                if row[b] {
                    for k in o..o + size {
                        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                        w[(0, k)] = sign * rng.gen_range(0.5..1.5);
                    }
                }
            }
            w * u.transpose()
        })
        .collect();
    let x0 = Vector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    LtiPlant::new(a, channels, x0, None).expect("every block is seen by some channel")
}
