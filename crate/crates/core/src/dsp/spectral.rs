use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;

use super::ComplexSpectrogram;

/// `log(1 + |S|²)` elementwise, in nats.
pub fn log_power(spec: &ComplexSpectrogram) -> Array2<f64> {
    spec.bins.mapv(|c| c.norm_sqr().ln_1p())
}

/// Pulls a real cotangent on `log_power` back to a complex cotangent
/// `dL/dRe + i·dL/dIm` on the spectrogram.
pub fn log_power_vjp(spec: &ComplexSpectrogram, cotangent: &Array2<f64>) -> Array2<Complex64> {
    let mut out = Array2::<Complex64>::zeros(spec.bins.dim());
    Zip::from(&mut out)
        .and(&spec.bins)
        .and(cotangent)
        .for_each(|o, &s, &c| *o = s * (2.0 * c / (1.0 + s.norm_sqr())));
    out
}

/// Directional derivative of `log_power` along a complex perturbation.
pub fn log_power_jvp(spec: &ComplexSpectrogram, tangent: &Array2<Complex64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(spec.bins.dim());
    Zip::from(&mut out)
        .and(&spec.bins)
        .and(tangent)
        .for_each(|o, &s, &d| *o = 2.0 * (s.re * d.re + s.im * d.im) / (1.0 + s.norm_sqr()));
    out
}

/// 2×2 average pooling with ceiling output shape; edge blocks average over
/// the cells they actually cover.
pub fn avg_pool2(x: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let (pr, pc) = (rows.div_ceil(2), cols.div_ceil(2));
    Array2::from_shape_fn((pr, pc), |(i, j)| {
        let r_end = (2 * i + 2).min(rows);
        let c_end = (2 * j + 2).min(cols);
        let mut sum = 0.0;
        for r in 2 * i..r_end {
            for c in 2 * j..c_end {
                sum += x[[r, c]];
            }
        }
        sum / ((r_end - 2 * i) * (c_end - 2 * j)) as f64
    })
}

pub fn avg_pool2_vjp(input_shape: (usize, usize), cotangent: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = input_shape;
    Array2::from_shape_fn(input_shape, |(r, c)| {
        let (i, j) = (r / 2, c / 2);
        let nr = (2 * i + 2).min(rows) - 2 * i;
        let nc = (2 * j + 2).min(cols) - 2 * j;
        cotangent[[i, j]] / (nr * nc) as f64
    })
}

/// `levels` resolutions; level 0 is `x` itself, each further level is a 2×2
/// average pool of the previous.
pub fn pyramid(x: &Array2<f64>, levels: usize) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(levels);
    if levels == 0 {
        return out;
    }
    out.push(x.clone());
    for l in 1..levels {
        let next = avg_pool2(&out[l - 1]);
        out.push(next);
    }
    out
}

/// Sums the per-level cotangents back onto the full-resolution input.
pub fn pyramid_vjp(input_shape: (usize, usize), cotangents: &[Array2<f64>]) -> Array2<f64> {
    let mut shapes = Vec::with_capacity(cotangents.len());
    let mut shape = input_shape;
    for _ in cotangents {
        shapes.push(shape);
        shape = (shape.0.div_ceil(2), shape.1.div_ceil(2));
    }
    let mut acc: Option<Array2<f64>> = None;
    for (l, cot) in cotangents.iter().enumerate().rev() {
        let mut g = cot.clone();
        if let Some(deeper) = acc.take() {
            g += &avg_pool2_vjp(shapes[l], &deeper);
        }
        acc = Some(g);
    }
    acc.unwrap_or_else(|| Array2::zeros(input_shape))
}

/// Forward differences of a spectrogram image along time (columns) and
/// frequency (rows). The trailing row/column of each direction is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub d_time: Array2<f64>,
    pub d_freq: Array2<f64>,
    pub magnitude: Array2<f64>,
}

impl GradientField {
    pub fn frobenius(&self) -> f64 {
        self.magnitude.iter().map(|m| m * m).sum::<f64>().sqrt()
    }
}

pub fn grad_field(x: &Array2<f64>) -> GradientField {
    let (rows, cols) = x.dim();
    let d_time = Array2::from_shape_fn((rows, cols), |(f, t)| {
        if t + 1 < cols {
            x[[f, t + 1]] - x[[f, t]]
        } else {
            0.0
        }
    });
    let d_freq = Array2::from_shape_fn((rows, cols), |(f, t)| {
        if f + 1 < rows {
            x[[f + 1, t]] - x[[f, t]]
        } else {
            0.0
        }
    });
    let mut magnitude = Array2::zeros((rows, cols));
    Zip::from(&mut magnitude)
        .and(&d_time)
        .and(&d_freq)
        .for_each(|m, &a, &b| *m = (a * a + b * b).sqrt());
    GradientField {
        d_time,
        d_freq,
        magnitude,
    }
}

/// Adjoint of the forward-difference operators.
fn difference_adjoint(cot_time: &Array2<f64>, cot_freq: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = cot_time.dim();
    let mut g = Array2::zeros((rows, cols));
    for f in 0..rows {
        for t in 0..cols {
            if t + 1 < cols {
                let c = cot_time[[f, t]];
                g[[f, t + 1]] += c;
                g[[f, t]] -= c;
            }
            if f + 1 < rows {
                let c = cot_freq[[f, t]];
                g[[f + 1, t]] += c;
                g[[f, t]] -= c;
            }
        }
    }
    g
}

/// Pulls a cotangent on `field.magnitude` back to the input image.
/// Cells with zero magnitude pass no gradient.
pub fn grad_field_vjp(field: &GradientField, cot_magnitude: &Array2<f64>) -> Array2<f64> {
    let shape = field.magnitude.dim();
    let mut ct = Array2::zeros(shape);
    let mut cf = Array2::zeros(shape);
    Zip::from(&mut ct)
        .and(&mut cf)
        .and(&field.d_time)
        .and(&field.d_freq)
        .and(&field.magnitude)
        .and(cot_magnitude)
        .for_each(|ct, cf, &a, &b, &m, &c| {
            if m > 0.0 {
                *ct = c * a / m;
                *cf = c * b / m;
            }
        });
    difference_adjoint(&ct, &cf)
}

/// Directional derivative of `field.magnitude` along an input perturbation.
pub fn grad_field_jvp(field: &GradientField, tangent: &Array2<f64>) -> Array2<f64> {
    let dir = grad_field(tangent);
    let mut out = Array2::zeros(field.magnitude.dim());
    Zip::from(&mut out)
        .and(&field.d_time)
        .and(&field.d_freq)
        .and(&field.magnitude)
        .and(&dir.d_time)
        .and(&dir.d_freq)
        .for_each(|o, &a, &b, &m, &da, &db| {
            if m > 0.0 {
                *o = (a * da + b * db) / m;
            }
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use ndarray::array;

    #[test]
    fn log_power_zero_and_unit() {
        let cfg = StftConfig::default();
        let bins = array![
            [Complex64::new(0.0, 0.0)],
            [Complex64::new((std::f64::consts::E - 1.0).sqrt(), 0.0)]
        ];
        let spec = ComplexSpectrogram { bins, config: cfg };
        let lp = log_power(&spec);
        assert_eq!(lp[[0, 0]], 0.0);
        assert!((lp[[1, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pool_of_2x2_is_mean() {
        let x = array![[0.0, 2.0], [4.0, 6.0]];
        let levels = pyramid(&x, 2);
        assert_eq!(levels[1], array![[3.0]]);
    }

    #[test]
    fn constant_pyramid_stays_constant() {
        let x = Array2::from_elem((7, 5), 2.5);
        for level in pyramid(&x, 3) {
            assert!(level.iter().all(|&v| (v - 2.5).abs() < 1e-15));
        }
    }

    #[test]
    fn pyramid_level_shapes_halve_with_ceiling() {
        let x = Array2::zeros((129, 127));
        let shapes: Vec<_> = pyramid(&x, 3).iter().map(|l| l.dim()).collect();
        assert_eq!(shapes, vec![(129, 127), (65, 64), (33, 32)]);
    }

    #[test]
    fn edge_blocks_average_available_cells() {
        let x = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let p = avg_pool2(&x);
        assert_eq!(p, array![[3.0, 4.5], [7.5, 9.0]]);
    }

    #[test]
    fn constant_has_zero_gradient_field() {
        let x = Array2::from_elem((4, 6), -1.25);
        assert!(grad_field(&x).magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn ramp_interior_magnitude_is_slope() {
        let c = -0.75;
        let x = Array2::from_shape_fn((5, 8), |(_, t)| c * t as f64);
        let g = grad_field(&x);
        for f in 0..5 {
            for t in 0..7 {
                assert!((g.magnitude[[f, t]] - c.abs()).abs() < 1e-15);
            }
            assert_eq!(g.magnitude[[f, 7]], 0.0);
        }
    }

    #[test]
    fn single_column_has_no_time_difference() {
        let x = array![[1.0], [3.0]];
        let g = grad_field(&x);
        assert_eq!(g.d_time, array![[0.0], [0.0]]);
        assert_eq!(g.d_freq, array![[2.0], [0.0]]);
    }
}
