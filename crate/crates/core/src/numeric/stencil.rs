//! Finite-difference weights on arbitrary node sets.

/// Fornberg's recursion: weights for derivatives `0..=max_order` at `z`
/// using function values at `nodes`. `result[k][j]` multiplies `f(nodes[j])`
/// in the approximation of the `k`-th derivative.
pub fn fornberg(z: f64, nodes: &[f64], max_order: usize) -> Vec<Vec<f64>> {
    let n = nodes.len();
    let mut c = vec![vec![0.0; n]; max_order + 1];
    if n == 0 {
        return c;
    }
    let mut c1 = 1.0;
    let mut c4 = nodes[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = nodes[i] - z;
        for j in 0..i {
            let c3 = nodes[i] - nodes[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Half-width of a centered stencil that differentiates `deriv` times with
/// accuracy `order` (even).
pub fn centered_half_width(deriv: usize, order: usize) -> usize {
    deriv.div_ceil(2) - 1 + order / 2
}

/// Node window (start index, length) for the `deriv`-th derivative at node
/// `i` of a line of `n` nodes: centered when it fits, otherwise the
/// `deriv + order` nodes nearest the boundary (one-sided or biased).
pub fn window(i: usize, n: usize, deriv: usize, order: usize) -> (usize, usize) {
    let s = centered_half_width(deriv, order);
    if i >= s && i + s < n {
        return (i - s, 2 * s + 1);
    }
    let len = (deriv + order).min(n);
    if i < s {
        (0, len)
    } else {
        (n - len, len)
    }
}

/// Weights for the `deriv`-th derivative at node `i` of a uniform line with
/// spacing `dx`. Returns (start index, weights).
pub fn uniform_weights(i: usize, n: usize, dx: f64, deriv: usize, order: usize) -> (usize, Vec<f64>) {
    let (start, len) = window(i, n, deriv, order);
    let nodes: Vec<f64> = (start..start + len).map(|j| j as f64 - i as f64).collect();
    let w = fornberg(0.0, &nodes, deriv);
    let scale = dx.powi(deriv as i32);
    (start, w[deriv].iter().map(|v| v / scale).collect())
}
