//! Quadrature primitives: adaptive Gauss-Kronrod refinement and fixed
//! composite Gauss-Legendre panels.
//!
//! The adaptive routine bisects intervals until the Kronrod error estimate
//! meets a relative tolerance, with a hard cap on integrand evaluations.

use crate::error::KernelError;

/// 7-point Gauss / 15-point Kronrod abscissae on [-1, 1] (positive half).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];

const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One G7-K15 panel for a vector-valued integrand.
///
/// Returns the Kronrod estimate and an error estimate per component.
fn gk15_vec<F>(f: &F, a: f64, b: f64, dim: usize, evals: &mut usize) -> (Vec<f64>, f64)
where
    F: Fn(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut fval = vec![0.0; dim];

    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(center, &mut fval);
    *evals += 1;
    for d in 0..dim {
        kronrod[d] += WGK[7] * fval[d];
        gauss[d] += WG[3] * fval[d];
    }

    for (j, &x) in XGK.iter().enumerate().take(7) {
        let dx = half * x;
        for &node in &[center - dx, center + dx] {
            f(node, &mut fval);
            *evals += 1;
            for d in 0..dim {
                kronrod[d] += WGK[j] * fval[d];
            }
            if j % 2 == 1 {
                for d in 0..dim {
                    gauss[d] += WG[j / 2] * fval[d];
                }
            }
        }
    }

    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for d in 0..dim {
        kronrod[d] *= half;
        gauss[d] *= half;
        err = err.max((kronrod[d] - gauss[d]).abs());
        scale = scale.max(kronrod[d].abs());
    }
    // Standard QUADPACK-style rescaling keeps the estimate honest when the
    // Gauss and Kronrod rules agree by accident.
    if scale > 0.0 && err > 0.0 {
        let r = (200.0 * err / scale).powf(1.5);
        if r < 1.0 {
            err = scale * r;
        }
    }
    (kronrod, err)
}

/// Adaptive Gauss-Kronrod integration of a vector-valued integrand over [a, b].
///
/// Bisects the worst interval until every component satisfies the relative
/// tolerance (against the accumulated integral magnitude) or the evaluation
/// cap is hit.
pub fn adaptive_gk_vec<F>(
    f: &F,
    a: f64,
    b: f64,
    dim: usize,
    rel_tol: f64,
    max_evals: usize,
) -> Result<Vec<f64>, KernelError>
where
    F: Fn(f64, &mut [f64]),
{
    if b <= a {
        return Ok(vec![0.0; dim]);
    }
    let mut evals = 0usize;
    let (val, err) = gk15_vec(f, a, b, dim, &mut evals);

    // Each entry: (error, a, b, value).
    let mut segments: Vec<(f64, f64, f64, Vec<f64>)> = vec![(err, a, b, val)];

    loop {
        let total_err: f64 = segments.iter().map(|s| s.0).sum();
        let mut total_mag: f64 = 0.0;
        for d in 0..dim {
            let s: f64 = segments.iter().map(|seg| seg.3[d]).sum();
            total_mag = total_mag.max(s.abs());
        }
        let tol = rel_tol * total_mag.max(1e-300);
        if total_err <= tol || total_err <= 1e-305 {
            break;
        }
        if evals >= max_evals {
            return Err(KernelError::QuadratureFailure(format!(
                "error {total_err:.3e} above tolerance {tol:.3e} after {evals} evaluations"
            )));
        }
        // Split the interval with the largest error estimate.
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.total_cmp(&y.1 .0))
            .map(|(i, _)| i)
            .unwrap();
        let (_, sa, sb, _) = segments.swap_remove(worst);
        let mid = 0.5 * (sa + sb);
        if mid <= sa || mid >= sb {
            return Err(KernelError::QuadratureFailure(
                "interval too small to bisect".into(),
            ));
        }
        let (v1, e1) = gk15_vec(f, sa, mid, dim, &mut evals);
        let (v2, e2) = gk15_vec(f, mid, sb, dim, &mut evals);
        segments.push((e1, sa, mid, v1));
        segments.push((e2, mid, sb, v2));
    }

    let mut out = vec![0.0; dim];
    for seg in &segments {
        for d in 0..dim {
            out[d] += seg.3[d];
        }
    }
    Ok(out)
}

/// Scalar convenience wrapper around [`adaptive_gk_vec`].
pub fn adaptive_gk<F>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_evals: usize,
) -> Result<f64, KernelError>
where
    F: Fn(f64) -> f64,
{
    let wrapped = |x: f64, out: &mut [f64]| out[0] = f(x);
    Ok(adaptive_gk_vec(&wrapped, a, b, 1, rel_tol, max_evals)?[0])
}

/// 16-point Gauss-Legendre abscissae on [-1, 1] (positive half).
pub const GL16_X: [f64; 8] = [
    0.09501250983763744,
    0.2816035507792589,
    0.45801677765722737,
    0.6178762444026438,
    0.755404408355003,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];

pub const GL16_W: [f64; 8] = [
    0.1894506104550685,
    0.18260341504492358,
    0.16915651939500254,
    0.14959598881657674,
    0.12462897125553388,
    0.09515851168249279,
    0.062253523938647894,
    0.027152459411754096,
];

/// Fixed composite 16-point Gauss-Legendre rule with panels of width at
/// most `max_panel`. Exact to machine precision for the smooth exponential
/// integrands used by the affine kernel.
pub fn gl16_composite<F>(f: F, a: f64, b: f64, max_panel: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return 0.0;
    }
    let n_panels = ((b - a) / max_panel).ceil().max(1.0) as usize;
    let h = (b - a) / n_panels as f64;
    let mut total = 0.0;
    for p in 0..n_panels {
        let pa = a + p as f64 * h;
        let center = pa + 0.5 * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for j in 0..8 {
            let dx = half * GL16_X[j];
            acc += GL16_W[j] * (f(center - dx) + f(center + dx));
        }
        total += acc * half;
    }
    total
}

/// Gauss-Legendre nodes and weights for one panel [a, b], appended to `out`.
pub fn gl16_nodes(a: f64, b: f64, out: &mut Vec<(f64, f64)>) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    for j in 0..8 {
        let dx = half * GL16_X[j];
        out.push((center - dx, GL16_W[j] * half));
        out.push((center + dx, GL16_W[j] * half));
    }
}
